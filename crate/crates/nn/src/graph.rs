//! Define-by-run reverse-mode autodiff over dense tensors.
//!
//! Every op evaluates eagerly and, when recording, stores a closure that maps
//! the output gradient to gradients of its inputs. `Graph::backward` walks the
//! tape in reverse and collects gradients for parameter leaves.

use crate::gemm::{gemm, MatRef};
use crate::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct BackwardArgs<'a> {
    grad: &'a Tensor,
    out: &'a Tensor,
    inputs: Vec<&'a Tensor>,
    wants: Vec<bool>,
}

type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Geometry of a 2-D convolution; 1-D convolutions use height 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride, stride],
            padding: [padding, padding],
            dilation: [1, 1],
        }
    }

    /// Length-preserving temporal convolution of odd `kernel` with `dilation`.
    pub fn temporal(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: [1, 1],
            padding: [0, dilation * (kernel - 1) / 2],
            dilation: [1, dilation],
        }
    }

    fn out_dim(&self, axis: usize, input: usize, kernel: usize) -> usize {
        let span = self.dilation[axis] * (kernel - 1) + 1;
        let padded = input + 2 * self.padding[axis];
        assert!(padded >= span, "convolution kernel larger than padded input");
        (padded - span) / self.stride[axis] + 1
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_row, col_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.positions();
        let ncols = self.batch * p;
        let [sh, sw] = self.spec.stride;
        let [ph, pw] = self.spec.padding;
        let [dh, dw] = self.spec.dilation;
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let row_off = row * ncols;
                    for b in 0..self.batch {
                        let in_base = (b * self.channels + c) * self.height * self.width;
                        for oy in 0..self.out_h {
                            let iy = (oy * sh + ki * dh) as isize - ph as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let in_row = in_base + iy as usize * self.width;
                            let col_base = row_off + b * p + oy * self.out_w;
                            for ox in 0..self.out_w {
                                let ix = (ox * sw + kj * dw) as isize - pw as isize;
                                if ix < 0 || ix >= self.width as isize {
                                    continue;
                                }
                                f(row, col_base + ox, in_row + ix as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.patch() * self.batch * self.positions()];
        self.for_each_tap(|_, ci, xi| cols[ci] = x[xi]);
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.batch * self.channels * self.height * self.width];
        self.for_each_tap(|_, ci, xi| x[xi] += cols[ci]);
        x
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A graph for inference only: nothing is retained for backward.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            parents: Vec::new(),
            backward: None,
            param: Some(id),
            requires_grad: self.record,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take(mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    fn push<F>(&mut self, value: Tensor, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = self.record && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let (parents, backward) = if requires_grad {
            (
                parents.iter().map(|p| p.0).collect(),
                Some(Box::new(backward) as BackwardFn),
            )
        } else {
            (Vec::new(), None)
        };
        self.nodes.push(Node {
            value,
            parents,
            backward,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert!(self.record, "backward on a no_grad graph");
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), 1.0));
        let max_param = self
            .nodes
            .iter()
            .filter_map(|n| n.param.map(|p| p.0 + 1))
            .max()
            .unwrap_or(0);
        let mut out = Gradients::with_len(max_param);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(pid) = node.param {
                out.accumulate(pid, g);
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            let args = BackwardArgs {
                grad: &g,
                out: &node.value,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                wants: node
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = bw(&args);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        out
    }

    // ---- dense ---------------------------------------------------------

    /// `x [B, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(xs.len(), 2, "linear expects a 2-D input, got {xs:?}");
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        assert_eq!(ws[1], fan_in, "linear weight {ws:?} vs input {xs:?}");
        let mut y = vec![0.0; batch * fan_out];
        gemm(
            1.0,
            MatRef::row_major(self.value(x).data(), batch, fan_in),
            MatRef::row_major(self.value(w).data(), fan_out, fan_in).t(),
            0.0,
            &mut y,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), fan_out);
            for row in y.chunks_mut(fan_out) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let out = Tensor::new(vec![batch, fan_out], y);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, &parents, move |a| {
            let dy = MatRef::row_major(a.grad.data(), batch, fan_out);
            let mut res = Vec::with_capacity(3);
            res.push(a.wants[0].then(|| {
                let mut dx = vec![0.0; batch * fan_in];
                gemm(
                    1.0,
                    dy,
                    MatRef::row_major(a.inputs[1].data(), fan_out, fan_in),
                    0.0,
                    &mut dx,
                );
                Tensor::new(vec![batch, fan_in], dx)
            }));
            res.push(a.wants[1].then(|| {
                let mut dw = vec![0.0; fan_out * fan_in];
                gemm(
                    1.0,
                    dy.t(),
                    MatRef::row_major(a.inputs[0].data(), batch, fan_in),
                    0.0,
                    &mut dw,
                );
                Tensor::new(vec![fan_out, fan_in], dw)
            }));
            if a.inputs.len() == 3 {
                res.push(a.wants[2].then(|| {
                    let mut db = vec![0.0; fan_out];
                    for row in a.grad.data().chunks(fan_out) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    Tensor::new(vec![fan_out], db)
                }));
            }
            res
        })
    }

    /// 2-D convolution, `x [B, C, H, W]`, `w [O, C, kh, kw]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert_eq!(xs.len(), 4, "conv2d expects [B, C, H, W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [O, C, kh, kw]");
        assert_eq!(ws[1], xs[1], "conv2d channel mismatch: {ws:?} vs {xs:?}");
        let geom = ConvGeom {
            batch: xs[0],
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            out_h: spec.out_dim(0, xs[2], ws[2]),
            out_w: spec.out_dim(1, xs[3], ws[3]),
            spec,
        };
        let out_ch = ws[0];
        let (k, p, n) = (geom.patch(), geom.positions(), geom.batch * geom.positions());
        let cols = geom.im2col(self.value(x).data());
        let mut y = vec![0.0; out_ch * n];
        gemm(
            1.0,
            MatRef::row_major(self.value(w).data(), out_ch, k),
            MatRef::row_major(&cols, k, n),
            0.0,
            &mut y,
        );
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![0.0; n * out_ch];
        for o in 0..out_ch {
            let bv = bias.as_ref().map_or(0.0, |bb| bb[o]);
            for bi in 0..geom.batch {
                let src = &y[o * n + bi * p..o * n + (bi + 1) * p];
                let dst = &mut out[(bi * out_ch + o) * p..(bi * out_ch + o + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
        let out = Tensor::new(vec![geom.batch, out_ch, geom.out_h, geom.out_w], out);
        let mut parents = vec![x, w];
        parents.extend(b);
        let keep_cols = self.record;
        let cols = if keep_cols { cols } else { Vec::new() };
        self.push(out, &parents, move |a| {
            let g = a.grad.data();
            let mut dy = vec![0.0; out_ch * n];
            for o in 0..out_ch {
                for bi in 0..geom.batch {
                    let src = &g[(bi * out_ch + o) * p..(bi * out_ch + o + 1) * p];
                    dy[o * n + bi * p..o * n + (bi + 1) * p].copy_from_slice(src);
                }
            }
            let dy_m = MatRef::row_major(&dy, out_ch, n);
            let mut res = Vec::with_capacity(3);
            res.push(a.wants[0].then(|| {
                let mut dcols = vec![0.0; k * n];
                gemm(
                    1.0,
                    MatRef::row_major(a.inputs[1].data(), out_ch, k).t(),
                    dy_m,
                    0.0,
                    &mut dcols,
                );
                Tensor::new(a.inputs[0].shape().to_vec(), geom.col2im(&dcols))
            }));
            res.push(a.wants[1].then(|| {
                let mut dw = vec![0.0; out_ch * k];
                gemm(1.0, dy_m, MatRef::row_major(&cols, k, n).t(), 0.0, &mut dw);
                Tensor::new(a.inputs[1].shape().to_vec(), dw)
            }));
            if a.inputs.len() == 3 {
                res.push(a.wants[2].then(|| {
                    let db = dy.chunks(n).map(|row| row.iter().sum()).collect();
                    Tensor::new(vec![out_ch], db)
                }));
            }
            res
        })
    }

    /// Nearest-neighbour 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4);
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; bc * 4 * h * w];
        for plane in 0..bc {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(plane * 2 * h + i) * 2 * w + j] = xd[(plane * h + i / 2) * w + j / 2];
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], 2 * h, 2 * w], out);
        self.push(out, &[x], move |a| {
            let g = a.grad.data();
            let mut dx = vec![0.0; bc * h * w];
            for plane in 0..bc {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        dx[(plane * h + i / 2) * w + j / 2] += g[(plane * 2 * h + i) * 2 * w + j];
                    }
                }
            }
            vec![Some(Tensor::new(a.inputs[0].shape().to_vec(), dx))]
        })
    }

    // ---- elementwise ---------------------------------------------------

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(out, &[x], move |a| {
            let d = a
                .inputs[0]
                .data()
                .iter()
                .zip(a.out.data())
                .zip(a.grad.data())
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(a.grad.shape().to_vec(), d))]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * s).collect());
        self.push(out, &[x], move |a| {
            let d = a.grad.data().iter().map(|g| g * s).collect();
            vec![Some(Tensor::new(a.grad.shape().to_vec(), d))]
        })
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v + s).collect());
        self.push(out, &[x], |a| vec![Some(a.grad.clone())])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        );
        self.push(out, &[a, b], move |args| {
            let (x, y, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let shape = args.grad.shape().to_vec();
            let mk = |d: fn(f64, f64, f64) -> f64| {
                let v = x.iter().zip(y).zip(g).map(|((&x, &y), &g)| d(x, y, g)).collect();
                Tensor::new(shape.clone(), v)
            };
            vec![args.wants[0].then(|| mk(da)), args.wants[1].then(|| mk(db))]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    /// Adds `e [B, C]` to every spatial position of `x [B, C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, e: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let es = self.shape(e).to_vec();
        assert_eq!(es, xs[..2].to_vec(), "channel bias {es:?} vs input {xs:?}");
        let spatial: usize = xs[2..].iter().product();
        let ev = self.value(e).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (plane, chunk) in out.chunks_mut(spatial).enumerate() {
            for v in chunk {
                *v += ev[plane];
            }
        }
        let out = Tensor::new(xs, out);
        self.push(out, &[x, e], move |a| {
            let de = a.wants[1].then(|| {
                let d = a.grad.data().chunks(spatial).map(|c| c.iter().sum()).collect();
                Tensor::new(es.clone(), d)
            });
            vec![a.wants[0].then(|| a.grad.clone()), de]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.push(out, &[x], |a| {
            vec![Some(a.grad.clone().reshape(a.inputs[0].shape().to_vec()))]
        })
    }

    /// Concatenates 2-D tensors `[B, n_i]` along the feature axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let batch = self.shape(xs[0])[0];
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert!(s.len() == 2 && s[0] == batch, "concat_cols shape {s:?}");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; batch * total];
        let mut off = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let d = self.value(v).data();
            for r in 0..batch {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::new(vec![batch, total], out);
        self.push(out, xs, move |a| {
            let g = a.grad.data();
            let mut off = 0;
            let mut res = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                res.push(a.wants[i].then(|| {
                    let mut d = vec![0.0; batch * w];
                    for r in 0..batch {
                        d[r * w..(r + 1) * w].copy_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    Tensor::new(vec![batch, w], d)
                }));
                off += w;
            }
            res
        })
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 2 && start < end && end <= s[1], "slice_cols {start}..{end} of {s:?}");
        let (batch, width, w) = (s[0], s[1], end - start);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(batch * w);
        for r in 0..batch {
            out.extend_from_slice(&d[r * width + start..r * width + end]);
        }
        let out = Tensor::new(vec![batch, w], out);
        self.push(out, &[x], move |a| {
            let mut dx = vec![0.0; batch * width];
            let g = a.grad.data();
            for r in 0..batch {
                dx[r * width + start..r * width + end].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            vec![Some(Tensor::new(vec![batch, width], dx))]
        })
    }

    /// Row `i` of the result is `fallback` when `use_fallback[i]`, else row
    /// `i` of `x`. `x` is `[B, F]`, `fallback` is `[F]`.
    pub fn select_rows(&mut self, x: Var, fallback: Var, use_fallback: &[bool]) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2);
        let (batch, width) = (s[0], s[1]);
        assert_eq!(use_fallback.len(), batch);
        assert_eq!(self.shape(fallback), &[width]);
        let mask = use_fallback.to_vec();
        let (xd, fd) = (self.value(x).data(), self.value(fallback).data());
        let mut out = Vec::with_capacity(batch * width);
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.extend_from_slice(fd);
            } else {
                out.extend_from_slice(&xd[r * width..(r + 1) * width]);
            }
        }
        let out = Tensor::new(s, out);
        self.push(out, &[x, fallback], move |a| {
            let g = a.grad.data();
            let mut dx = vec![0.0; batch * width];
            let mut df = vec![0.0; width];
            for (r, &m) in mask.iter().enumerate() {
                let row = &g[r * width..(r + 1) * width];
                if m {
                    for (d, v) in df.iter_mut().zip(row) {
                        *d += v;
                    }
                } else {
                    dx[r * width..(r + 1) * width].copy_from_slice(row);
                }
            }
            vec![
                Some(Tensor::new(vec![batch, width], dx)),
                Some(Tensor::new(vec![width], df)),
            ]
        })
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, &[x], |a| {
            let g = a.grad.item();
            vec![Some(Tensor::full(a.inputs[0].shape().to_vec(), g))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}
