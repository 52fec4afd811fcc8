use diffservo_nn::{Adam, AdamConfig, Graph, ParamStore};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::{DiffuserArch, DiffuserNet, ACTION_DIM};
use super::schedule::DiffusionSchedule;
use super::{joint_loss_graph, Diffuser, JointLoss, JointRandomness, LatentScaler, TrajectoryBatch};
use crate::cmvae::{holdout_split, sample_latent, Cmvae, LatentVector};
use crate::datagen::{window_starts, Dataset, ReturnNormalizer, Window};
use crate::world::WorldConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmConfig {
    pub diffusion_steps: usize,
    /// Planning horizon `N`; trajectories have `N + 1` columns.
    pub horizon: usize,
    pub omega: f64,
    pub cond_dropout: f64,
    pub channels: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub inverse_hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_final_fraction: f64,
    pub grad_clip: f64,
    /// Weight averaging decay; 0 disables it.
    pub ema_decay: f64,
    pub window_stride: usize,
    pub holdout_fraction: f64,
    /// Encode windows with sampled latents instead of encoder means.
    pub sample_latents: bool,
    pub log_every: usize,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            diffusion_steps: 100,
            horizon: 31,
            omega: 1.2,
            cond_dropout: 0.25,
            channels: 48,
            embed_dim: 64,
            kernel: 5,
            dilations: vec![1, 2, 4],
            inverse_hidden: 128,
            steps: 20000,
            batch_size: 32,
            lr: 1e-3,
            lr_final_fraction: 0.05,
            grad_clip: 1.0,
            ema_decay: 0.995,
            window_stride: 2,
            holdout_fraction: 0.1,
            sample_latents: false,
            log_every: 200,
        }
    }
}

impl DdpmConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.diffusion_steps < 1 || self.horizon < 1 {
            return Err("diffusion_steps and horizon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return Err("cond_dropout must be in [0, 1)".into());
        }
        if self.omega < 0.0 {
            return Err("omega must be non-negative".into());
        }
        if self.kernel % 2 == 0 {
            return Err("kernel must be odd".into());
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err("batch_size and steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err("ema_decay must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn arch(&self, latent_dim: usize) -> DiffuserArch {
        DiffuserArch {
            latent_dim,
            columns: self.horizon + 1,
            channels: self.channels,
            embed_dim: self.embed_dim,
            kernel: self.kernel,
            dilations: self.dilations.clone(),
            inverse_hidden: self.inverse_hidden,
        }
    }
}

/// Every frame of a dataset encoded to a latent, plus the train/held-out split.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub latents: Vec<Vec<LatentVector>>,
    /// Records `[0, split)` are used for training.
    pub split: usize,
}

/// Encodes every frame with the encoder mean, or a reparameterized sample
/// when `sample_latents` is set.
pub fn encode_dataset(
    dataset: &Dataset,
    cmvae: &Cmvae,
    holdout_fraction: f64,
    sample_latents: bool,
    seed: u64,
) -> Result<EncodedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cmvae.latent_dim();
    let mut latents = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let dists = rec
            .images
            .chunks(128)
            .map(|c| cmvae.encode_batch(c))
            .collect::<Result<Vec<_>>>()?;
        let zs = dists
            .into_iter()
            .flatten()
            .map(|dist| {
                if sample_latents {
                    let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    sample_latent(&dist, &noise)
                } else {
                    dist.mean_latent()
                }
            })
            .collect();
        latents.push(zs);
    }
    Ok(EncodedDataset {
        latents,
        split: holdout_split(dataset.records.len(), holdout_fraction),
    })
}

/// One window drawn from the encoded corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub window: Window,
    pub raw_return: f64,
}

pub(crate) fn training_windows(
    dataset: &Dataset,
    records: std::ops::Range<usize>,
    horizon: usize,
    stride: usize,
) -> Vec<WindowSample> {
    records
        .flat_map(|r| {
            let rec = &dataset.records[r];
            window_starts(rec.len(), stride).map(move |start| {
                let window = Window {
                    record: r,
                    start,
                    frames: horizon + 1,
                };
                WindowSample {
                    window,
                    raw_return: window.discounted_return(rec, dataset.discount),
                }
            })
        })
        .collect()
}

fn fit_scaler(encoded: &EncodedDataset, dim: usize) -> LatentScaler {
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for z in encoded.latents[..encoded.split].iter().flatten() {
        n += 1.0;
        for i in 0..dim {
            let delta = z.0[i] - mean[i];
            mean[i] += delta / n;
            m2[i] += delta * (z.0[i] - mean[i]);
        }
    }
    let std = m2.iter().map(|v| (v / n.max(1.0)).sqrt().max(1e-6)).collect();
    LatentScaler { mean, std }
}

pub(crate) fn build_batch(
    dataset: &Dataset,
    encoded: &EncodedDataset,
    scaler: &LatentScaler,
    returns: &ReturnNormalizer,
    samples: &[&WindowSample],
) -> TrajectoryBatch {
    let columns = samples[0].window.frames;
    let d = scaler.mean.len();
    let mut x0 = Vec::with_capacity(samples.len() * d * columns);
    let mut actions = Vec::with_capacity(samples.len() * (columns - 1) * ACTION_DIM);
    let mut rets = Vec::with_capacity(samples.len());
    for s in samples {
        let rec = &dataset.records[s.window.record];
        let zs = &encoded.latents[s.window.record];
        let cols: Vec<Vec<f64>> = (0..columns)
            .map(|k| scaler.standardize(&zs[s.window.frame(rec, k)].0))
            .collect();
        for i in 0..d {
            x0.extend(cols.iter().map(|c| c[i]));
        }
        for k in 0..columns - 1 {
            actions.extend(s.window.action(rec, k).to_array());
        }
        rets.push(returns.normalize(s.raw_return).clamp(-1.0, 1.0));
    }
    TrajectoryBatch {
        size: samples.len(),
        x0,
        returns: rets,
        actions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpmLogEntry {
    pub step: usize,
    pub loss: JointLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpmTrainingLog {
    pub curve: Vec<DdpmLogEntry>,
    pub windows: usize,
    pub dropped_conditions: usize,
    pub total_conditions: usize,
}

fn lr_at(cfg: &DdpmConfig, step: usize) -> f64 {
    let progress = step as f64 / cfg.steps.max(1) as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    cfg.lr * (cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * cosine)
}

fn ema_update(ema: &mut ParamStore, current: &ParamStore, decay: f64) {
    let ids: Vec<_> = current.ids().collect();
    for id in ids {
        let src = current.get(id).data();
        for (e, v) in ema.get_mut(id).data_mut().iter_mut().zip(src) {
            *e = decay * *e + (1.0 - decay) * v;
        }
    }
}

/// Encodes the dataset with `cmvae` and trains the joint objective.
pub fn train_diffuser(
    dataset: &Dataset,
    cmvae: &Cmvae,
    world: &WorldConfig,
    cfg: &DdpmConfig,
    seed: u64,
) -> Result<(Diffuser, DdpmTrainingLog)> {
    let encoded = encode_dataset(dataset, cmvae, cfg.holdout_fraction, cfg.sample_latents, seed)?;
    train_diffuser_encoded(dataset, &encoded, world, cfg, seed)
}

/// Trains on pre-encoded latents; deterministic given `seed`.
pub fn train_diffuser_encoded(
    dataset: &Dataset,
    encoded: &EncodedDataset,
    world: &WorldConfig,
    cfg: &DdpmConfig,
    seed: u64,
) -> Result<(Diffuser, DdpmTrainingLog)> {
    cfg.validate().map_err(Error::Config)?;
    let dim = encoded
        .latents
        .first()
        .and_then(|l| l.first())
        .map(|z| z.dim())
        .ok_or_else(|| Error::Config("empty encoded dataset".into()))?;
    let windows = training_windows(dataset, 0..encoded.split, cfg.horizon, cfg.window_stride);
    let returns = ReturnNormalizer::fit(windows.iter().map(|w| w.raw_return))?;
    let scaler = fit_scaler(encoded, dim);
    let schedule = DiffusionSchedule::cosine(cfg.diffusion_steps)?;
    let mut net = DiffuserNet::new(cfg.arch(dim), seed);
    let mut ema = (cfg.ema_decay > 0.0).then(|| net.params().clone());
    let mut opt = Adam::new(net.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff_u64);
    let per_row = dim * (cfg.horizon + 1);

    let mut log = DdpmTrainingLog {
        curve: Vec::new(),
        windows: windows.len(),
        dropped_conditions: 0,
        total_conditions: 0,
    };
    let mut acc = JointLoss::default();
    let mut acc_n = 0usize;
    for step in 0..cfg.steps {
        let picks: Vec<&WindowSample> = (0..cfg.batch_size)
            .map(|_| &windows[rng.gen_range(0..windows.len())])
            .collect();
        let batch = build_batch(dataset, encoded, &scaler, &returns, &picks);
        let rnd = JointRandomness::draw(&mut rng, batch.size, per_row, cfg.diffusion_steps, cfg.cond_dropout);
        log.dropped_conditions += rnd.drop.iter().filter(|&&d| d).count();
        log.total_conditions += rnd.drop.len();

        let mut g = Graph::new();
        let (total, parts) = joint_loss_graph(&net, &schedule, &mut g, net.params(), &batch, &rnd);
        if !parts.total.is_finite() {
            return Err(Error::TrainingDiverged {
                stage: "ddpm",
                step,
                detail: format!("loss {parts:?}"),
            });
        }
        let mut grads = g.backward(total);
        drop(g);
        grads.clip_global_norm(cfg.grad_clip);
        opt.step(net.params_mut(), &grads, lr_at(cfg, step));
        if let Some(e) = ema.as_mut() {
            ema_update(e, net.params(), cfg.ema_decay);
        }

        acc.total += parts.total;
        acc.diffusion += parts.diffusion;
        acc.inverse += parts.inverse;
        acc_n += 1;
        if acc_n == cfg.log_every.max(1) || step + 1 == cfg.steps {
            let n = acc_n as f64;
            let loss = JointLoss {
                total: acc.total / n,
                diffusion: acc.diffusion / n,
                inverse: acc.inverse / n,
            };
            info!(
                "ddpm step {}: total {:.4} diffusion {:.4} inverse {:.4}",
                step + 1,
                loss.total,
                loss.diffusion,
                loss.inverse
            );
            log.curve.push(DdpmLogEntry { step: step + 1, loss });
            acc = JointLoss::default();
            acc_n = 0;
        }
    }
    if let Some(e) = ema {
        net.params_mut()
            .load_values(&e)
            .map_err(|e| Error::Other(e.to_string()))?;
    }
    let diffuser = Diffuser {
        net,
        schedule,
        omega: cfg.omega,
        cond_dropout: cfg.cond_dropout,
        scaler,
        returns,
        discount: dataset.discount,
        action_limits: (world.max_linear_speed, world.max_yaw_rate),
    };
    Ok((diffuser, log))
}

/// Held-out inverse-dynamics MSE over real transitions (mean over action
/// components), together with the per-component action variance of the
/// whole dataset averaged over components.
pub fn inverse_holdout_mse(
    diffuser: &Diffuser,
    dataset: &Dataset,
    encoded: &EncodedDataset,
) -> Result<(f64, f64)> {
    let mut se = 0.0;
    let mut n = 0usize;
    for r in encoded.split..dataset.records.len() {
        let rec = &dataset.records[r];
        let zs = &encoded.latents[r];
        let pairs: Vec<_> = (0..rec.len()).map(|k| (&zs[k], &zs[k + 1])).collect();
        let pred = diffuser.inverse_dynamics_batch(&pairs)?;
        for (p, a) in pred.iter().zip(&rec.actions) {
            for (x, y) in p.to_array().iter().zip(a.to_array()) {
                se += (x - y) * (x - y);
            }
            n += ACTION_DIM;
        }
    }
    let all: Vec<[f64; 3]> = dataset
        .records
        .iter()
        .flat_map(|r| r.actions.iter().map(|a| a.to_array()))
        .collect();
    let m = all.len() as f64;
    let mut var = 0.0;
    for i in 0..ACTION_DIM {
        let mean = all.iter().map(|a| a[i]).sum::<f64>() / m;
        var += all.iter().map(|a| (a[i] - mean).powi(2)).sum::<f64>() / m;
    }
    Ok((se / n.max(1) as f64, var / ACTION_DIM as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints() {
        let cfg = DdpmConfig::default();
        assert!((lr_at(&cfg, 0) - cfg.lr).abs() < 1e-15);
        assert!((lr_at(&cfg, cfg.steps) - cfg.lr * cfg.lr_final_fraction).abs() < 1e-15);
    }

    #[test]
    fn scaler_matches_two_pass_moments() {
        let latents = vec![vec![
            LatentVector(vec![1.0, 10.0]),
            LatentVector(vec![3.0, 10.0]),
            LatentVector(vec![5.0, 10.0]),
        ]];
        let enc = EncodedDataset { latents, split: 1 };
        let s = fit_scaler(&enc, 2);
        assert!((s.mean[0] - 3.0).abs() < 1e-12);
        assert!((s.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.std[1], 1e-6);
    }
}
