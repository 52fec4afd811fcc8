use rand::Rng;

use crate::{ConvSpec, Graph, ParamId, ParamStore, Var};

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), vec![fan_out, fan_in], bound, rng);
        let bias = store.add_uniform(format!("{name}.bias"), vec![fan_out], bound, rng);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Re-binds a layer to parameters already present in `store`.
    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let weight = store.find(&format!("{name}.weight"))?;
        let bias = store.find(&format!("{name}.bias"))?;
        let s = store.get(weight).shape();
        Some(Self {
            weight,
            bias,
            fan_in: s[1],
            fan_out: s[0],
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// 2-D convolution layer over `[B, C, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 2],
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel[0] * kernel[1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add_uniform(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel[0], kernel[1]],
            bound,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), vec![out_ch], bound, rng);
        Self { weight, bias, spec }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.spec)
    }
}
