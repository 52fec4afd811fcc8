//! Inpainting-constrained, return-conditioned trajectory sampling and the
//! constant-velocity return estimate used to pick the condition.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmvae::{Cmvae, LatentVector};
use crate::datagen::Dataset;
use crate::ddpm::{reverse_mean_clipped, Diffuser, LatentTrajectory, ReturnCondition};
use crate::world::{Action, FeaturePose, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub z_start: LatentVector,
    pub z_goal: LatentVector,
    pub return_condition: ReturnCondition,
    pub omega: f64,
    pub seed: u64,
}

/// Bound on the implied clean sample in standardized latent units.
pub const X0_CLIP: f64 = 5.0;

/// Observer called after every reverse step with the standardized batch
/// (channel-major, endpoints already overwritten).
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// Runs the guided reverse chain from Gaussian noise, overwriting the first
/// and last columns with the requested endpoints after every step.
pub fn inpaint_sample(request: &PlanRequest, diffuser: &Diffuser) -> Result<LatentTrajectory> {
    Ok(inpaint_sample_batch(std::slice::from_ref(request), diffuser, None)?.remove(0))
}

pub fn inpaint_sample_batch(
    requests: &[PlanRequest],
    diffuser: &Diffuser,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Vec<LatentTrajectory>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let d = diffuser.latent_dim();
    let l = diffuser.horizon() + 1;
    let per = d * l;
    let mut conds = Vec::with_capacity(requests.len());
    let mut omegas = Vec::with_capacity(requests.len());
    let mut anchors = Vec::with_capacity(requests.len());
    for req in requests {
        for z in [&req.z_start, &req.z_goal] {
            if z.dim() != d {
                return Err(Error::Shape {
                    what: "latent dimension",
                    expected: d,
                    found: z.dim(),
                });
            }
        }
        conds.push(
            req.return_condition
                .value()
                .ok_or_else(|| Error::Config("inpainting requires a return condition".into()))?,
        );
        omegas.push(req.omega);
        anchors.push((
            diffuser.scaler.standardize(&req.z_start.0),
            diffuser.scaler.standardize(&req.z_goal.0),
        ));
    }
    let mut rngs: Vec<ChaCha8Rng> = requests
        .iter()
        .map(|r| ChaCha8Rng::seed_from_u64(r.seed))
        .collect();
    let mut x: Vec<f64> = rngs
        .iter_mut()
        .flat_map(|rng| {
            (0..per)
                .map(|_| StandardNormal.sample(rng))
                .collect::<Vec<f64>>()
        })
        .collect();
    let overwrite = |x: &mut [f64]| {
        for (b, (s, g)) in anchors.iter().enumerate() {
            let row = &mut x[b * per..(b + 1) * per];
            for i in 0..d {
                row[i * l] = s[i];
                row[i * l + l - 1] = g[i];
            }
        }
    };
    overwrite(&mut x);
    for t in (1..=diffuser.schedule.steps()).rev() {
        let eps = diffuser.guided_noise_batch(&x, &conds, &omegas, t);
        let mut next = Vec::with_capacity(x.len());
        for (b, rng) in rngs.iter_mut().enumerate() {
            let r = b * per..(b + 1) * per;
            let noise: Vec<f64> = (0..per).map(|_| StandardNormal.sample(rng)).collect();
            let mut mean = reverse_mean_clipped(&diffuser.schedule, &x[r.clone()], t, &eps[r], X0_CLIP)?;
            if t > 1 {
                let sigma = diffuser.schedule.posterior_variance(t).sqrt();
                for (m, n) in mean.iter_mut().zip(&noise) {
                    *m += sigma * n;
                }
            }
            next.extend(mean);
        }
        x = next;
        overwrite(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDiverged { step: t });
        }
        if let Some(obs) = observer.as_mut() {
            obs(t, &x);
        }
    }
    Ok(requests
        .iter()
        .enumerate()
        .map(|(b, req)| {
            let std = LatentTrajectory::from_channel_major(&x[b * per..(b + 1) * per], d);
            let mut columns: Vec<LatentVector> = std
                .columns
                .iter()
                .map(|c| LatentVector(diffuser.scaler.destandardize(&c.0)))
                .collect();
            columns[0] = req.z_start.clone();
            columns[l - 1] = req.z_goal.clone();
            LatentTrajectory::new(columns)
        })
        .collect())
}

/// Discounted sum of minus distances along a straight slide of the relative
/// target vector from `r0` to `rn` in `n` equal steps.
pub fn estimate_return_cartesian(r0: [f64; 3], rn: [f64; 3], v: f64, discount: f64, n: usize) -> Result<f64> {
    if !(v > 0.0) || n < 1 {
        return Err(Error::Config(format!("return estimate needs v > 0 and N >= 1 (v = {v}, N = {n})")));
    }
    let norm = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let d = [r0[0] - rn[0], r0[1] - rn[1], r0[2] - rn[2]];
    let dist = norm(d);
    if dist == 0.0 {
        let weights: f64 = (0..=n).map(|k| discount.powi(k as i32)).sum();
        return Ok(-norm(rn) * weights);
    }
    let unit = [d[0] / dist, d[1] / dist, d[2] / dist];
    let dt = dist / v / n as f64;
    let mut total = 0.0;
    let mut weight = 1.0;
    for k in 0..=n {
        let along = dist - v * k as f64 * dt;
        let p = [
            along * unit[0] + rn[0],
            along * unit[1] + rn[1],
            along * unit[2] + rn[2],
        ];
        total -= weight * norm(p);
        weight *= discount;
    }
    Ok(total)
}

/// Constant-velocity return estimate between two feature poses. Both relative
/// target vectors are taken in the target-facing frame so that their
/// difference is the camera displacement.
pub fn estimate_return(
    fp_start: &FeaturePose,
    fp_goal: &FeaturePose,
    v: f64,
    discount: f64,
    n: usize,
) -> Result<f64> {
    estimate_return_cartesian(
        fp_start.target_frame_offset(),
        fp_goal.target_frame_offset(),
        v,
        discount,
        n,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityMode {
    Average,
    Regression,
}

/// Speed model `v = a * d_lin + b * d_yaw + c`, or a constant average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub mode: VelocityMode,
    pub v_avg: f64,
    pub coefficients: [f64; 3],
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityModel {
    pub fn predict(&self, d_lin: f64, d_yaw: f64) -> f64 {
        let v = match self.mode {
            VelocityMode::Average => self.v_avg,
            VelocityMode::Regression => {
                let [a, b, c] = self.coefficients;
                a * d_lin + b * d_yaw + c
            }
        };
        if v.is_finite() {
            v.clamp(self.v_min, self.v_max)
        } else {
            self.v_min
        }
    }

    pub fn predict_between(&self, start: &FeaturePose, goal: &FeaturePose) -> f64 {
        self.predict(start.position_distance(goal), start.yaw_error(goal))
    }
}

/// One episode summary for velocity fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub d_lin: f64,
    pub d_yaw: f64,
    pub speed: f64,
}

/// Least-squares plane through the samples; rank-deficient designs fall back
/// to the average speed.
pub fn fit_velocity_samples(
    samples: &[SpeedSample],
    mode: VelocityMode,
    v_min: f64,
    v_max: f64,
) -> Result<VelocityModel> {
    if samples.is_empty() {
        return Err(Error::Config("no episodes to fit a velocity model".into()));
    }
    if !(0.0 < v_min && v_min < v_max) {
        return Err(Error::Config(format!("velocity clamp ({v_min}, {v_max}) is invalid")));
    }
    let v_avg = samples.iter().map(|s| s.speed).sum::<f64>() / samples.len() as f64;
    let average = VelocityModel {
        mode: VelocityMode::Average,
        v_avg,
        coefficients: [0.0, 0.0, v_avg],
        v_min,
        v_max,
    };
    if mode == VelocityMode::Average {
        return Ok(average);
    }
    let a = DMatrix::from_fn(samples.len(), 3, |i, j| match j {
        0 => samples[i].d_lin,
        1 => samples[i].d_yaw,
        _ => 1.0,
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.speed));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if samples.len() < 3 || !(smin > 1e-10 * smax.max(1e-300)) {
        warn!("velocity regression is rank-deficient; falling back to the average speed");
        return Ok(average);
    }
    let coef = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::Other(format!("least squares: {e}")))?;
    Ok(VelocityModel {
        mode: VelocityMode::Regression,
        v_avg,
        coefficients: [coef[0], coef[1], coef[2]],
        v_min,
        v_max,
    })
}

/// Fits the velocity model on episode speeds against the first-to-last
/// decoded feature distances.
pub fn fit_velocity_model(
    dataset: &Dataset,
    cmvae: &Cmvae,
    dt: f64,
    mode: VelocityMode,
    v_min: f64,
    v_max: f64,
) -> Result<VelocityModel> {
    let mut samples = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let Some(speed) = rec.mean_speed(dt) else {
            continue;
        };
        let ends = [&rec.images[0], &rec.images[rec.len()]];
        let zs = cmvae.encode_means(&ends, 2)?;
        let fps = cmvae.latent_features(&zs)?;
        samples.push(SpeedSample {
            d_lin: fps[0].position_distance(&fps[1]),
            d_yaw: fps[0].yaw_error(&fps[1]),
            speed,
        });
    }
    fit_velocity_samples(&samples, mode, v_min, v_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub velocity_mode: VelocityMode,
    pub v_min: f64,
    pub v_max: f64,
    /// Guidance weight; `None` uses the weight stored with the diffuser.
    pub omega: Option<f64>,
    /// Fixed normalized return; `None` uses the constant-velocity estimate.
    pub return_override: Option<f64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            velocity_mode: VelocityMode::Regression,
            v_min: 0.05,
            v_max: 1.0,
            omega: None,
            return_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub start_feature: FeaturePose,
    pub goal_feature: FeaturePose,
    pub velocity: f64,
    pub raw_return: f64,
    pub normalized_return: f64,
    /// The estimate fell outside `[-1, 1]` before clamping.
    pub return_out_of_range: bool,
    pub condition: f64,
    pub column_features: Vec<FeaturePose>,
    /// Decoded camera distance from each column to the goal view.
    pub column_distances: Vec<f64>,
    pub column_yaw_errors: Vec<f64>,
}

impl PlanDiagnostics {
    pub fn mean_distance(&self) -> f64 {
        self.column_distances.iter().sum::<f64>() / self.column_distances.len() as f64
    }

    /// Largest change of the decoded distance to the goal between
    /// consecutive columns.
    pub fn max_distance_jump(&self) -> f64 {
        self.column_distances
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    /// Decoded distance of the last free column (the final one is pinned).
    pub fn terminal_distance(&self) -> f64 {
        let n = self.column_distances.len();
        self.column_distances[n.saturating_sub(2)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub trajectory: LatentTrajectory,
    pub actions: Vec<Action>,
    pub diagnostics: PlanDiagnostics,
}

/// Immutable view of the trained components used for planning.
#[derive(Debug, Clone, Copy)]
pub struct Planner<'a> {
    pub cmvae: &'a Cmvae,
    pub diffuser: &'a Diffuser,
    pub velocity: &'a VelocityModel,
    pub config: &'a PlannerConfig,
}

/// Start/goal context shared by every plan between the same endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub z_start: LatentVector,
    pub z_goal: LatentVector,
    pub start_feature: FeaturePose,
    pub goal_feature: FeaturePose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnEstimate {
    pub velocity: f64,
    pub raw: f64,
    pub normalized: f64,
    pub out_of_range: bool,
}

impl<'a> Planner<'a> {
    pub fn omega(&self) -> f64 {
        self.config.omega.unwrap_or(self.diffuser.omega)
    }

    pub fn encode(&self, image: &Image) -> Result<(LatentVector, FeaturePose)> {
        let z = self.cmvae.encode(image)?.mean_latent();
        let fp = self.cmvae.latent_feature(&z)?;
        Ok((z, fp))
    }

    pub fn endpoints(&self, current: &Image, target: &Image) -> Result<Endpoints> {
        let (z_start, start_feature) = self.encode(current)?;
        let (z_goal, goal_feature) = self.encode(target)?;
        Ok(Endpoints {
            z_start,
            z_goal,
            start_feature,
            goal_feature,
        })
    }

    /// Raw constant-velocity estimate mapped through the stored return
    /// normalization and clamped to `[-1, 1]`.
    pub fn estimate(&self, ends: &Endpoints) -> Result<ReturnEstimate> {
        let v = self.velocity.predict_between(&ends.start_feature, &ends.goal_feature);
        let raw = estimate_return(
            &ends.start_feature,
            &ends.goal_feature,
            v,
            self.diffuser.discount,
            self.diffuser.horizon(),
        )?;
        let n = self.diffuser.returns.normalize(raw);
        Ok(ReturnEstimate {
            velocity: v,
            raw,
            normalized: n.clamp(-1.0, 1.0),
            out_of_range: !(-1.0..=1.0).contains(&n),
        })
    }

    /// Samples one plan per seed at a common return condition.
    pub fn plan_batch(&self, ends: &Endpoints, condition: Option<f64>, seeds: &[u64]) -> Result<Vec<Plan>> {
        let est = self.estimate(ends)?;
        let cond = condition
            .or(self.config.return_override)
            .unwrap_or(est.normalized);
        let rc = ReturnCondition::new(cond)?;
        let requests: Vec<PlanRequest> = seeds
            .iter()
            .map(|&seed| PlanRequest {
                z_start: ends.z_start.clone(),
                z_goal: ends.z_goal.clone(),
                return_condition: rc,
                omega: self.omega(),
                seed,
            })
            .collect();
        let trajs = inpaint_sample_batch(&requests, self.diffuser, None)?;
        trajs
            .into_iter()
            .map(|trajectory| {
                let column_features = self.cmvae.latent_features(&trajectory.columns)?;
                let pairs: Vec<_> = trajectory.columns.windows(2).map(|w| (&w[0], &w[1])).collect();
                let actions = self.diffuser.inverse_dynamics_batch(&pairs)?;
                let column_distances = column_features
                    .iter()
                    .map(|f| f.position_distance(&ends.goal_feature))
                    .collect();
                let column_yaw_errors = column_features
                    .iter()
                    .map(|f| f.yaw_error(&ends.goal_feature))
                    .collect();
                Ok(Plan {
                    trajectory,
                    actions,
                    diagnostics: PlanDiagnostics {
                        start_feature: ends.start_feature,
                        goal_feature: ends.goal_feature,
                        velocity: est.velocity,
                        raw_return: est.raw,
                        normalized_return: est.normalized,
                        return_out_of_range: est.out_of_range,
                        condition: cond,
                        column_features,
                        column_distances,
                        column_yaw_errors,
                    },
                })
            })
            .collect()
    }

    /// Plans from the current view to the target view.
    pub fn plan(&self, current: &Image, target: &Image, seed: u64) -> Result<Plan> {
        let ends = self.endpoints(current, target)?;
        Ok(self.plan_batch(&ends, None, &[seed])?.remove(0))
    }
}
