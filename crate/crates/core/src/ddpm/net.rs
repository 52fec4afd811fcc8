use diffservo_nn::{Conv2d, ConvSpec, Graph, Linear, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Network shape, fixed at construction and stored with checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffuserArch {
    pub latent_dim: usize,
    /// Number of trajectory columns, `N + 1`.
    pub columns: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub inverse_hidden: usize,
}

const TIME_FEATURES: usize = 32;
pub(crate) const ACTION_DIM: usize = 3;

#[derive(Debug, Clone)]
struct Block {
    conv_a: Conv2d,
    cond: Linear,
    conv_b: Conv2d,
}

/// Temporal convolutional noise predictor plus the inverse-dynamics MLP.
#[derive(Debug, Clone)]
pub struct DiffuserNet {
    arch: DiffuserArch,
    store: ParamStore,
    time1: Linear,
    time2: Linear,
    ret1: Linear,
    ret2: Linear,
    null_embedding: ParamId,
    conv_in: Conv2d,
    blocks: Vec<Block>,
    conv_out: Conv2d,
    inv1: Linear,
    inv2: Linear,
    inv_out: Linear,
}

/// Sinusoidal features of the diffusion step.
pub(crate) fn time_features(t: usize) -> [f64; TIME_FEATURES] {
    let half = TIME_FEATURES / 2;
    let mut out = [0.0; TIME_FEATURES];
    for i in 0..half {
        let freq = (-(1000f64).ln() * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[2 * i] = s;
        out[2 * i + 1] = c;
    }
    out
}

impl DiffuserNet {
    pub fn new(arch: DiffuserArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let mut s = ParamStore::new();
        let (d, c, e, k) = (arch.latent_dim, arch.channels, arch.embed_dim, arch.kernel);
        let time1 = Linear::new(&mut s, "time.fc1", TIME_FEATURES, e, r);
        let time2 = Linear::new(&mut s, "time.fc2", e, e, r);
        let ret1 = Linear::new(&mut s, "ret.fc1", 1, e, r);
        let ret2 = Linear::new(&mut s, "ret.fc2", e, e, r);
        let null_embedding = s.add_uniform("ret.null", vec![e], 1.0, r);
        let conv_in = Conv2d::new(&mut s, "conv_in", d, c, [1, k], ConvSpec::temporal(k, 1), r);
        let blocks = arch
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &dil)| Block {
                conv_a: Conv2d::new(&mut s, &format!("block{i}.a"), c, c, [1, k], ConvSpec::temporal(k, dil), r),
                cond: Linear::new(&mut s, &format!("block{i}.cond"), e, c, r),
                conv_b: Conv2d::new(&mut s, &format!("block{i}.b"), c, c, [1, k], ConvSpec::temporal(k, dil), r),
            })
            .collect();
        let conv_out = Conv2d::new(&mut s, "conv_out", c, d, [1, 3], ConvSpec::temporal(3, 1), r);
        let h = arch.inverse_hidden;
        let inv1 = Linear::new(&mut s, "inv.fc1", 3 * d, h, r);
        let inv2 = Linear::new(&mut s, "inv.fc2", h, h, r);
        let inv_out = Linear::new(&mut s, "inv.out", h, ACTION_DIM, r);
        Self {
            arch,
            store: s,
            time1,
            time2,
            ret1,
            ret2,
            null_embedding,
            conv_in,
            blocks,
            conv_out,
            inv1,
            inv2,
            inv_out,
        }
    }

    pub fn arch(&self) -> &DiffuserArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameters of the inverse-dynamics head.
    pub fn inverse_param_ids(&self) -> Vec<ParamId> {
        [self.inv1, self.inv2, self.inv_out]
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Parameters of the noise predictor.
    pub fn denoiser_param_ids(&self) -> Vec<ParamId> {
        let inv = self.inverse_param_ids();
        self.store.ids().filter(|id| !inv.contains(id)).collect()
    }

    /// Noise prediction for `x [B, d, 1, L]`. `cond[i] = None` selects the
    /// learned null embedding for row `i`.
    pub fn eps_graph(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        x: Var,
        t: &[usize],
        cond: &[Option<f64>],
    ) -> Var {
        let b = t.len();
        assert_eq!(cond.len(), b);
        let tf = g.constant(Tensor::new(
            vec![b, TIME_FEATURES],
            t.iter().flat_map(|&ti| time_features(ti)).collect(),
        ));
        let te = self.time1.forward(g, s, tf);
        let te = g.silu(te);
        let te = self.time2.forward(g, s, te);

        let rv = g.constant(Tensor::new(
            vec![b, 1],
            cond.iter().map(|c| c.unwrap_or(0.0)).collect(),
        ));
        let re = self.ret1.forward(g, s, rv);
        let re = g.silu(re);
        let re = self.ret2.forward(g, s, re);
        let null = g.param(s, self.null_embedding);
        let dropped: Vec<bool> = cond.iter().map(Option::is_none).collect();
        let re = g.select_rows(re, null, &dropped);

        let emb = g.add(te, re);
        let emb = g.silu(emb);

        let mut h = self.conv_in.forward(g, s, x);
        for blk in &self.blocks {
            let a = g.silu(h);
            let a = blk.conv_a.forward(g, s, a);
            let e = blk.cond.forward(g, s, emb);
            let a = g.add_channel_bias(a, e);
            let a = g.silu(a);
            let a = blk.conv_b.forward(g, s, a);
            h = g.add(h, a);
        }
        let h = g.silu(h);
        self.conv_out.forward(g, s, h)
    }

    /// Action prediction from `[z_k, z_k1, z_k1 - z_k]` rows, `[M, 3d]`.
    pub fn inverse_graph(&self, g: &mut Graph, s: &ParamStore, pairs: Var) -> Var {
        let h = self.inv1.forward(g, s, pairs);
        let h = g.silu(h);
        let h = self.inv2.forward(g, s, h);
        let h = g.silu(h);
        self.inv_out.forward(g, s, h)
    }

    /// Batched noise prediction without gradients; `x` is `[B, d, L]` flat.
    pub fn predict_noise(&self, x: &[f64], t: &[usize], cond: &[Option<f64>]) -> Vec<f64> {
        let b = t.len();
        let mut g = Graph::no_grad();
        let xv = g.constant(Tensor::new(
            vec![b, self.arch.latent_dim, 1, self.arch.columns],
            x.to_vec(),
        ));
        let out = self.eps_graph(&mut g, &self.store, xv, t, cond);
        g.take(out).into_data()
    }

    /// Raw (unclamped) inverse-dynamics outputs for flat `[M, 3d]` rows.
    pub fn predict_actions(&self, pairs: &[f64]) -> Vec<f64> {
        let w = 3 * self.arch.latent_dim;
        let mut g = Graph::no_grad();
        let p = g.constant(Tensor::new(vec![pairs.len() / w, w], pairs.to_vec()));
        let out = self.inverse_graph(&mut g, &self.store, p);
        g.take(out).into_data()
    }
}

/// Appends the inverse-dynamics input row for a pair of latents.
pub(crate) fn push_pair(out: &mut Vec<f64>, zk: &[f64], zk1: &[f64]) {
    out.extend_from_slice(zk);
    out.extend_from_slice(zk1);
    out.extend(zk1.iter().zip(zk).map(|(b, a)| b - a));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> DiffuserArch {
        DiffuserArch {
            latent_dim: 3,
            columns: 8,
            channels: 6,
            embed_dim: 8,
            kernel: 3,
            dilations: vec![1, 2],
            inverse_hidden: 8,
        }
    }

    #[test]
    fn output_shapes() {
        let net = DiffuserNet::new(arch(), 1);
        let eps = net.predict_noise(&vec![0.1; 2 * 3 * 8], &[1, 5], &[Some(0.2), None]);
        assert_eq!(eps.len(), 2 * 3 * 8);
        assert_eq!(net.predict_actions(&vec![0.0; 4 * 9]).len(), 12);
    }

    #[test]
    fn rows_are_independent() {
        let net = DiffuserNet::new(arch(), 2);
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let both = net.predict_noise(&x, &[3, 7], &[Some(0.5), None]);
        let second = net.predict_noise(&x[24..], &[7], &[None]);
        for (a, b) in both[24..].iter().zip(&second) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_partition_is_complete() {
        let net = DiffuserNet::new(arch(), 3);
        let n = net.inverse_param_ids().len() + net.denoiser_param_ids().len();
        assert_eq!(n, net.params().len());
    }
}
