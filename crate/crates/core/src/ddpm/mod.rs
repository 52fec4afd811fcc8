//! Return-conditioned diffusion over latent trajectories with a jointly
//! trained inverse-dynamics head.

mod net;
mod schedule;
mod train;

use std::path::Path;

use diffservo_nn::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use net::{DiffuserArch, DiffuserNet};
pub use schedule::{
    combine_guidance, denoise_step, denoise_step_with_sigma, forward_sample, reverse_mean, reverse_mean_clipped,
    DiffusionSchedule,
};
pub use train::{
    encode_dataset, inverse_holdout_mse, train_diffuser, train_diffuser_encoded, DdpmConfig,
    DdpmLogEntry, DdpmTrainingLog, EncodedDataset, WindowSample,
};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::cmvae::LatentVector;
use crate::datagen::ReturnNormalizer;
use crate::world::Action;
use crate::{Error, Result};
use net::{push_pair, ACTION_DIM};

const CHECKPOINT_KIND: &str = "ddpm";

/// Sequence of `N + 1` latent columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub columns: Vec<LatentVector>,
}

impl LatentTrajectory {
    pub fn new(columns: Vec<LatentVector>) -> Self {
        Self { columns }
    }

    pub fn horizon(&self) -> usize {
        self.columns.len().saturating_sub(1)
    }

    pub fn latent_dim(&self) -> usize {
        self.columns.first().map_or(0, |c| c.dim())
    }

    /// Channel-major `[d, N + 1]` layout used by the denoiser.
    pub fn to_channel_major(&self) -> Vec<f64> {
        let (d, l) = (self.latent_dim(), self.columns.len());
        let mut out = vec![0.0; d * l];
        for (k, col) in self.columns.iter().enumerate() {
            for (i, v) in col.0.iter().enumerate() {
                out[i * l + k] = *v;
            }
        }
        out
    }

    pub fn from_channel_major(data: &[f64], latent_dim: usize) -> Self {
        let l = data.len() / latent_dim;
        Self::new(
            (0..l)
                .map(|k| LatentVector((0..latent_dim).map(|i| data[i * l + k]).collect()))
                .collect(),
        )
    }

    /// Largest latent distance between consecutive columns.
    pub fn max_column_jump(&self) -> f64 {
        self.columns
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().all(|c| c.0.iter().all(|v| v.is_finite()))
    }
}

/// Normalized return in `[-1, 1]`, or the null token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReturnCondition {
    Value(f64),
    Absent,
}

impl ReturnCondition {
    pub fn new(value: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("return condition {value} outside [-1, 1]")));
        }
        Ok(Self::Value(value))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(v),
            Self::Absent => None,
        }
    }
}

/// Per-dimension affine map between raw latents and the diffuser's
/// standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Trained diffusion stack: network, schedule, guidance settings and the
/// normalizations fitted on the training windows.
#[derive(Debug, Clone)]
pub struct Diffuser {
    pub net: DiffuserNet,
    pub schedule: DiffusionSchedule,
    pub omega: f64,
    pub cond_dropout: f64,
    pub scaler: LatentScaler,
    /// Affine map from raw window returns to `[-1, 1]`.
    pub returns: ReturnNormalizer,
    pub discount: f64,
    /// Action limits `(max_speed, max_yaw_rate)` applied by inverse dynamics.
    pub action_limits: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct DiffuserMeta {
    arch: DiffuserArch,
    schedule: DiffusionSchedule,
    omega: f64,
    cond_dropout: f64,
    scaler: LatentScaler,
    returns: ReturnNormalizer,
    discount: f64,
    action_limits: (f64, f64),
    config_fingerprint: String,
}

impl Diffuser {
    pub fn latent_dim(&self) -> usize {
        self.net.arch().latent_dim
    }

    pub fn horizon(&self) -> usize {
        self.net.arch().columns - 1
    }

    /// Batched classifier-free noise estimate. `x` holds `B` standardized
    /// trajectories in channel-major layout; every row shares step `t`, and
    /// row `i` uses return `conds[i]` and guidance weight `omegas[i]`.
    pub fn guided_noise_batch(&self, x: &[f64], conds: &[f64], omegas: &[f64], t: usize) -> Vec<f64> {
        let b = conds.len();
        assert_eq!(omegas.len(), b);
        let mut both = Vec::with_capacity(2 * x.len());
        both.extend_from_slice(x);
        both.extend_from_slice(x);
        let mut c: Vec<Option<f64>> = conds.iter().map(|&r| Some(r)).collect();
        c.extend(std::iter::repeat(None).take(b));
        let eps = self.net.predict_noise(&both, &vec![t; 2 * b], &c);
        let (cond, uncond) = eps.split_at(x.len());
        let per = x.len() / b.max(1);
        (0..b)
            .flat_map(|i| {
                let r = i * per..(i + 1) * per;
                combine_guidance(&uncond[r.clone()], &cond[r], omegas[i])
            })
            .collect()
    }

    /// Noise estimate for one standardized trajectory at the stored guidance
    /// weight.
    pub fn guided_noise(&self, x: &[f64], r: ReturnCondition, t: usize) -> Result<Vec<f64>> {
        self.guided_noise_with(x, r, t, self.omega)
    }

    pub fn guided_noise_with(&self, x: &[f64], r: ReturnCondition, t: usize, omega: f64) -> Result<Vec<f64>> {
        self.schedule.check_step(t)?;
        let value = r
            .value()
            .ok_or_else(|| Error::Config("guidance requires a return condition".into()))?;
        Ok(self.guided_noise_batch(x, &[value], &[omega], t))
    }

    /// Action moving `z_k` to `z_k1`, clamped to the action limits.
    pub fn inverse_dynamics(&self, z_k: &LatentVector, z_k1: &LatentVector) -> Result<Action> {
        Ok(self.inverse_dynamics_batch(&[(z_k, z_k1)])?.remove(0))
    }

    pub fn inverse_dynamics_batch(&self, pairs: &[(&LatentVector, &LatentVector)]) -> Result<Vec<Action>> {
        let d = self.latent_dim();
        let mut rows = Vec::with_capacity(pairs.len() * 3 * d);
        for (a, b) in pairs {
            for z in [a, b] {
                if z.dim() != d {
                    return Err(Error::Shape {
                        what: "latent dimension",
                        expected: d,
                        found: z.dim(),
                    });
                }
            }
            push_pair(&mut rows, &self.scaler.standardize(&a.0), &self.scaler.standardize(&b.0));
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let (vmax, wmax) = self.action_limits;
        Ok(self
            .net
            .predict_actions(&rows)
            .chunks(ACTION_DIM)
            .map(|a| {
                Action::new(
                    a[0].clamp(-vmax, vmax),
                    a[1].clamp(-vmax, vmax),
                    a[2].clamp(-wmax, wmax),
                )
            })
            .collect())
    }

    pub fn save(&self, path: &Path, config_fingerprint: String) -> Result<()> {
        let meta = DiffuserMeta {
            arch: self.net.arch().clone(),
            schedule: self.schedule.clone(),
            omega: self.omega,
            cond_dropout: self.cond_dropout,
            scaler: self.scaler.clone(),
            returns: self.returns,
            discount: self.discount,
            action_limits: self.action_limits,
            config_fingerprint,
        };
        write_checkpoint(path, CHECKPOINT_KIND, &meta, self.net.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, store): (DiffuserMeta, ParamStore) = read_checkpoint(path, CHECKPOINT_KIND)?;
        let mut net = DiffuserNet::new(meta.arch, 0);
        net.params_mut().load_values(&store).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(Self {
            net,
            schedule: meta.schedule,
            omega: meta.omega,
            cond_dropout: meta.cond_dropout,
            scaler: meta.scaler,
            returns: meta.returns,
            discount: meta.discount,
            action_limits: meta.action_limits,
        })
    }
}

/// A minibatch of standardized training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub size: usize,
    /// `[B, d, N + 1]` channel-major trajectories.
    pub x0: Vec<f64>,
    /// Normalized window returns.
    pub returns: Vec<f64>,
    /// `[B, N, 3]` actions between consecutive columns.
    pub actions: Vec<f64>,
}

/// Per-batch randomness of the joint objective.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRandomness {
    pub t: Vec<usize>,
    pub noise: Vec<f64>,
    /// `true` drops the return condition for that row.
    pub drop: Vec<bool>,
}

impl JointRandomness {
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        batch: usize,
        elems_per_row: usize,
        steps: usize,
        dropout: f64,
    ) -> Self {
        let bern = Bernoulli::new(dropout.clamp(0.0, 1.0)).expect("probability in [0, 1]");
        let t = (0..batch).map(|_| rng.gen_range(1..=steps)).collect();
        let drop = (0..batch).map(|_| bern.sample(rng)).collect();
        let noise = (0..batch * elems_per_row)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self { t, noise, drop }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointLoss {
    pub total: f64,
    pub diffusion: f64,
    pub inverse: f64,
}

/// Builds the joint objective on `g`. Both terms are elementwise mean
/// squared errors; the total is their unweighted sum. The endpoint columns
/// are given to the network clean and excluded from the diffusion term.
pub fn joint_loss_graph(
    net: &DiffuserNet,
    schedule: &DiffusionSchedule,
    g: &mut Graph,
    store: &ParamStore,
    batch: &TrajectoryBatch,
    rnd: &JointRandomness,
) -> (Var, JointLoss) {
    let conds: Vec<Option<f64>> = batch
        .returns
        .iter()
        .zip(&rnd.drop)
        .map(|(&r, &d)| if d { None } else { Some(r) })
        .collect();
    let diffusion = diffusion_term(net, schedule, g, store, batch, &rnd.t, &rnd.noise, &conds);
    let inverse = inverse_term(net, g, store, batch);
    let total = g.add(diffusion, inverse);
    let parts = JointLoss {
        total: g.value(total).item(),
        diffusion: g.value(diffusion).item(),
        inverse: g.value(inverse).item(),
    };
    (total, parts)
}

/// Joint loss value without gradients.
pub fn joint_training_loss(
    net: &DiffuserNet,
    schedule: &DiffusionSchedule,
    batch: &TrajectoryBatch,
    rnd: &JointRandomness,
) -> JointLoss {
    let mut g = Graph::no_grad();
    joint_loss_graph(net, schedule, &mut g, net.params(), batch, rnd).1
}

/// The plain unconditional noise-prediction objective on a batch.
pub fn unconditional_loss(
    net: &DiffuserNet,
    schedule: &DiffusionSchedule,
    batch: &TrajectoryBatch,
    t: &[usize],
    noise: &[f64],
) -> f64 {
    let mut g = Graph::no_grad();
    let conds = vec![None; batch.size];
    let v = diffusion_term(net, schedule, &mut g, net.params(), batch, t, noise, &conds);
    g.value(v).item()
}

#[allow(clippy::too_many_arguments)]
fn diffusion_term(
    net: &DiffuserNet,
    schedule: &DiffusionSchedule,
    g: &mut Graph,
    store: &ParamStore,
    batch: &TrajectoryBatch,
    t: &[usize],
    noise: &[f64],
    conds: &[Option<f64>],
) -> Var {
    let arch = net.arch();
    let per = arch.latent_dim * arch.columns;
    assert_eq!(batch.x0.len(), batch.size * per);
    assert_eq!(noise.len(), batch.x0.len());
    let l = arch.columns;
    let mut xt = Vec::with_capacity(batch.x0.len());
    for (i, &ti) in t.iter().enumerate() {
        let r = i * per..(i + 1) * per;
        let mut row = schedule::marginal(schedule.alpha_bar(ti), &batch.x0[r.clone()], &noise[r.clone()]);
        pin_endpoints(&mut row, &batch.x0[r], l);
        xt.extend(row);
    }
    let mask: Vec<f64> = (0..batch.x0.len())
        .map(|k| if is_endpoint(k % per, l) { 0.0 } else { 1.0 })
        .collect();
    let free = mask.iter().sum::<f64>();
    let shape = vec![batch.size, arch.latent_dim, 1, l];
    let x = g.constant(Tensor::new(shape.clone(), xt));
    let eps = g.constant(Tensor::new(shape.clone(), noise.to_vec()));
    let mask = g.constant(Tensor::new(shape, mask));
    let pred = net.eps_graph(g, store, x, t, conds);
    let diff = g.sub(pred, eps);
    let sq = g.square(diff);
    let sq = g.mul(sq, mask);
    let total = g.sum(sq);
    g.scale(total, 1.0 / free)
}

/// Whether offset `k` of a channel-major `[d, l]` row is a first or last column.
fn is_endpoint(k: usize, l: usize) -> bool {
    let c = k % l;
    c == 0 || c == l - 1
}

/// Copies the first and last columns of `clean` into `row`. The sampler pins
/// the known endpoints the same way, so the network always sees them clean.
pub(crate) fn pin_endpoints(row: &mut [f64], clean: &[f64], l: usize) {
    for k in 0..row.len() {
        if is_endpoint(k, l) {
            row[k] = clean[k];
        }
    }
}

fn inverse_term(net: &DiffuserNet, g: &mut Graph, store: &ParamStore, batch: &TrajectoryBatch) -> Var {
    let arch = net.arch();
    let (d, l) = (arch.latent_dim, arch.columns);
    let n = l - 1;
    let mut rows = Vec::with_capacity(batch.size * n * 3 * d);
    let mut zk = vec![0.0; d];
    let mut zk1 = vec![0.0; d];
    for b in 0..batch.size {
        let traj = &batch.x0[b * d * l..(b + 1) * d * l];
        for k in 0..n {
            for i in 0..d {
                zk[i] = traj[i * l + k];
                zk1[i] = traj[i * l + k + 1];
            }
            push_pair(&mut rows, &zk, &zk1);
        }
    }
    let pairs = g.constant(Tensor::new(vec![batch.size * n, 3 * d], rows));
    let target = g.constant(Tensor::new(vec![batch.size * n, ACTION_DIM], batch.actions.clone()));
    let pred = net.inverse_graph(g, store, pairs);
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    g.mean(sq)
}
