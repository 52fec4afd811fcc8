//! Cross-modal VAE: a convolutional image encoder into a Gaussian latent, an
//! image decoder over the full latent, and a feature-pose decoder that reads
//! only the first four latent coordinates.

use std::path::Path;

use diffservo_nn::{Adam, AdamConfig, Conv2d, ConvSpec, Graph, Linear, ParamStore, Tensor, Var};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, read_checkpoint, write_checkpoint};
use crate::datagen::Dataset;
use crate::world::{wrap_angle, FeaturePose, Image};
use crate::{Error, Result};

/// Latent coordinates reserved for the feature-pose modality.
pub const FEATURE_SLICE: usize = 4;
/// Feature decoder output: `r`, then `(sin, cos)` of theta, phi, gamma.
const FEATURE_OUT: usize = 7;
const CHECKPOINT_KIND: &str = "cmvae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmvaeConfig {
    pub latent_dim: usize,
    /// Channels of the three stride-2 encoder convolutions.
    pub channels: [usize; 3],
    pub hidden: usize,
    pub feature_hidden: usize,
    pub w_image: f64,
    pub w_feature: f64,
    pub w_kl: f64,
    /// Linear KL warm-up length in epochs (0 disables it).
    pub kl_warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Upper bound on training frames drawn from the dataset.
    pub max_train_frames: usize,
    /// Trailing fraction of episodes kept out of training for evaluation.
    pub holdout_fraction: f64,
    pub grad_clip: f64,
}

impl Default for CmvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            channels: [8, 16, 32],
            hidden: 128,
            feature_hidden: 64,
            w_image: 1.0,
            w_feature: 1.0,
            w_kl: 0.1,
            kl_warmup_epochs: 0,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            max_train_frames: 20_000,
            holdout_fraction: 0.1,
            grad_clip: 10.0,
        }
    }
}

impl CmvaeConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.latent_dim <= FEATURE_SLICE {
            return Err(format!("latent_dim must exceed {FEATURE_SLICE}"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err("holdout_fraction must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Architecture facts a checkpoint must agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvaeArch {
    pub image_height: usize,
    pub image_width: usize,
    pub latent_dim: usize,
    pub channels: [usize; 3],
    pub hidden: usize,
    pub feature_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn feature_slice(&self) -> &[f64] {
        &self.0[..FEATURE_SLICE]
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentDistribution {
    pub fn mean_latent(&self) -> LatentVector {
        LatentVector(self.mean.clone())
    }
}

/// Reparameterized draw `mean + exp(log_var / 2) * noise`.
pub fn sample_latent(dist: &LatentDistribution, noise: &[f64]) -> LatentVector {
    assert_eq!(noise.len(), dist.mean.len(), "noise dimension");
    LatentVector(
        dist.mean
            .iter()
            .zip(&dist.log_var)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect(),
    )
}

/// Closed-form `KL(N(mean, exp(log_var)) || N(0, I))` of one diagonal Gaussian.
pub fn kl_to_standard_normal(mean: &[f64], log_var: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// Regression target for the feature decoder.
pub fn feature_target(fp: &FeaturePose) -> [f64; FEATURE_OUT] {
    let (st, ct) = fp.theta.sin_cos();
    let (sp, cp) = fp.phi.sin_cos();
    let (sg, cg) = fp.gamma.sin_cos();
    [fp.r, st, ct, sp, cp, sg, cg]
}

fn feature_from_output(o: &[f64]) -> FeaturePose {
    let angle = |s: f64, c: f64| {
        let a = s.atan2(c);
        if a <= -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let phi = o[3].atan2(o[4].abs().max(1e-12));
    FeaturePose {
        r: o[0].max(f64::MIN_POSITIVE),
        theta: wrap_angle(angle(o[1], o[2])),
        phi: phi.clamp(-half_pi + 1e-12, half_pi - 1e-12),
        gamma: wrap_angle(angle(o[5], o[6])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CmvaeLoss {
    pub total: f64,
    pub image_rec: f64,
    pub feature_rec: f64,
    pub kl: f64,
}

/// A batch of paired modalities in network layout.
pub struct CmvaeBatch {
    pub size: usize,
    /// Planar images, `[B, 3, H, W]` flattened.
    pub images: Vec<f64>,
    /// Feature targets, `[B, 7]` flattened.
    pub features: Vec<f64>,
}

impl CmvaeBatch {
    pub fn new(images: &[&Image], poses: &[FeaturePose]) -> Self {
        assert_eq!(images.len(), poses.len());
        Self {
            size: images.len(),
            images: images.iter().flat_map(|im| im.to_planar()).collect(),
            features: poses.iter().flat_map(|p| feature_target(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    enc: [Conv2d; 3],
    enc_fc: Linear,
    enc_out: Linear,
    dec_fc1: Linear,
    dec_fc2: Linear,
    dec_conv: [Conv2d; 3],
    feat1: Linear,
    feat2: Linear,
    feat_out: Linear,
}

#[derive(Debug, Clone)]
pub struct Cmvae {
    arch: CmvaeArch,
    store: ParamStore,
    layers: Layers,
}

#[derive(Serialize, Deserialize)]
struct CmvaeMeta {
    arch: CmvaeArch,
    config: CmvaeConfig,
    config_fingerprint: String,
}

impl Cmvae {
    pub fn new(arch: CmvaeArch, seed: u64) -> Result<Self> {
        if arch.image_height % 8 != 0 || arch.image_width % 8 != 0 {
            return Err(Error::Config("image dimensions must be multiples of 8".into()));
        }
        if arch.latent_dim <= FEATURE_SLICE {
            return Err(Error::Config(format!("latent_dim must exceed {FEATURE_SLICE}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let [c1, c2, c3] = arch.channels;
        let flat = c3 * (arch.image_height / 8) * (arch.image_width / 8);
        let down = ConvSpec::new(2, 1);
        let same = ConvSpec::new(1, 1);
        let r = &mut rng;
        let layers = Layers {
            enc: [
                Conv2d::new(&mut s, "enc.conv0", 3, c1, [4, 4], down, r),
                Conv2d::new(&mut s, "enc.conv1", c1, c2, [4, 4], down, r),
                Conv2d::new(&mut s, "enc.conv2", c2, c3, [4, 4], down, r),
            ],
            enc_fc: Linear::new(&mut s, "enc.fc", flat, arch.hidden, r),
            enc_out: Linear::new(&mut s, "enc.out", arch.hidden, 2 * arch.latent_dim, r),
            dec_fc1: Linear::new(&mut s, "dec.fc1", arch.latent_dim, arch.hidden, r),
            dec_fc2: Linear::new(&mut s, "dec.fc2", arch.hidden, flat, r),
            dec_conv: [
                Conv2d::new(&mut s, "dec.conv0", c3, c2, [3, 3], same, r),
                Conv2d::new(&mut s, "dec.conv1", c2, c1, [3, 3], same, r),
                Conv2d::new(&mut s, "dec.conv2", c1, 3, [3, 3], same, r),
            ],
            feat1: Linear::new(&mut s, "feat.fc1", FEATURE_SLICE, arch.feature_hidden, r),
            feat2: Linear::new(&mut s, "feat.fc2", arch.feature_hidden, arch.feature_hidden, r),
            feat_out: Linear::new(&mut s, "feat.out", arch.feature_hidden, FEATURE_OUT, r),
        };
        Ok(Self {
            arch,
            store: s,
            layers,
        })
    }

    pub fn arch(&self) -> &CmvaeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    // ---- graph builders ------------------------------------------------

    /// `x [B, 3, H, W]` to `(mean, log_var)`, each `[B, d_z]`.
    fn encode_graph(&self, g: &mut Graph, s: &ParamStore, x: Var) -> (Var, Var) {
        let l = &self.layers;
        let mut h = x;
        for conv in &l.enc {
            h = conv.forward(g, s, h);
            h = g.relu(h);
        }
        let b = g.shape(h)[0];
        let flat: usize = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, vec![b, flat]);
        let h = l.enc_fc.forward(g, s, h);
        let h = g.relu(h);
        let out = l.enc_out.forward(g, s, h);
        let d = self.arch.latent_dim;
        (g.slice_cols(out, 0, d), g.slice_cols(out, d, 2 * d))
    }

    fn decode_image_graph(&self, g: &mut Graph, s: &ParamStore, z: Var) -> Var {
        let l = &self.layers;
        let b = g.shape(z)[0];
        let h = l.dec_fc1.forward(g, s, z);
        let h = g.relu(h);
        let h = l.dec_fc2.forward(g, s, h);
        let h = g.relu(h);
        let c3 = self.arch.channels[2];
        let mut h = g.reshape(
            h,
            vec![b, c3, self.arch.image_height / 8, self.arch.image_width / 8],
        );
        for (i, conv) in l.dec_conv.iter().enumerate() {
            h = g.upsample2x(h);
            h = conv.forward(g, s, h);
            if i < 2 {
                h = g.relu(h);
            }
        }
        g.sigmoid(h)
    }

    /// `z_feature [B, 4]` to the 7-wide feature regression output.
    fn decode_feature_graph(&self, g: &mut Graph, s: &ParamStore, zf: Var) -> Var {
        let l = &self.layers;
        let h = l.feat1.forward(g, s, zf);
        let h = g.silu(h);
        let h = l.feat2.forward(g, s, h);
        let h = g.silu(h);
        let o = l.feat_out.forward(g, s, h);
        let r = g.slice_cols(o, 0, 1);
        let r = g.softplus(r);
        let ang = g.slice_cols(o, 1, FEATURE_OUT);
        let ang = g.tanh(ang);
        g.concat_cols(&[r, ang])
    }

    fn image_tensor(&self, n: usize, planar: Vec<f64>) -> Tensor {
        Tensor::new(vec![n, 3, self.arch.image_height, self.arch.image_width], planar)
    }

    fn check_image(&self, im: &Image) -> Result<()> {
        if im.height() != self.arch.image_height || im.width() != self.arch.image_width {
            return Err(Error::Shape {
                what: "image pixels",
                expected: self.arch.image_height * self.arch.image_width,
                found: im.height() * im.width(),
            });
        }
        Ok(())
    }

    // ---- inference -----------------------------------------------------

    pub fn encode(&self, image: &Image) -> Result<LatentDistribution> {
        Ok(self.encode_batch(std::slice::from_ref(image))?.remove(0))
    }

    pub fn encode_batch(&self, images: &[Image]) -> Result<Vec<LatentDistribution>> {
        for im in images {
            self.check_image(im)?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let planar = images.iter().flat_map(|im| im.to_planar()).collect();
        let mut g = Graph::no_grad();
        let x = g.constant(self.image_tensor(images.len(), planar));
        let (m, lv) = self.encode_graph(&mut g, &self.store, x);
        let d = self.arch.latent_dim;
        let (m, lv) = (g.value(m).data(), g.value(lv).data());
        Ok((0..images.len())
            .map(|i| LatentDistribution {
                mean: m[i * d..(i + 1) * d].to_vec(),
                log_var: lv[i * d..(i + 1) * d].to_vec(),
            })
            .collect())
    }

    /// Encoder means of many images, in chunks of `chunk`.
    pub fn encode_means(&self, images: &[&Image], chunk: usize) -> Result<Vec<LatentVector>> {
        let mut out = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            let owned: Vec<Image> = part.iter().map(|&im| im.clone()).collect();
            out.extend(self.encode_batch(&owned)?.into_iter().map(|d| d.mean_latent()));
        }
        Ok(out)
    }

    pub fn decode_image(&self, z: &LatentVector) -> Result<Image> {
        Ok(self.decode_images(std::slice::from_ref(z))?.remove(0))
    }

    pub fn decode_images(&self, zs: &[LatentVector]) -> Result<Vec<Image>> {
        let d = self.arch.latent_dim;
        for z in zs {
            if z.dim() != d {
                return Err(Error::Shape {
                    what: "latent dimension",
                    expected: d,
                    found: z.dim(),
                });
            }
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::no_grad();
        let zt = g.constant(Tensor::new(
            vec![zs.len(), d],
            zs.iter().flat_map(|z| z.0.iter().copied()).collect(),
        ));
        let y = self.decode_image_graph(&mut g, &self.store, zt);
        let (h, w) = (self.arch.image_height, self.arch.image_width);
        let per = 3 * h * w;
        Ok(g.value(y)
            .data()
            .chunks(per)
            .map(|c| Image::from_planar(h, w, c))
            .collect())
    }

    /// Decodes `(r, theta, phi, gamma)` from the four-dimensional feature slice.
    pub fn decode_feature(&self, z_feature: &[f64]) -> Result<FeaturePose> {
        Ok(self.decode_features(&[z_feature])?.remove(0))
    }

    pub fn decode_features(&self, z_features: &[&[f64]]) -> Result<Vec<FeaturePose>> {
        for z in z_features {
            if z.len() != FEATURE_SLICE {
                return Err(Error::Shape {
                    what: "feature latent dimension",
                    expected: FEATURE_SLICE,
                    found: z.len(),
                });
            }
        }
        if z_features.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::no_grad();
        let zt = g.constant(Tensor::new(
            vec![z_features.len(), FEATURE_SLICE],
            z_features.iter().flat_map(|z| z.iter().copied()).collect(),
        ));
        let o = self.decode_feature_graph(&mut g, &self.store, zt);
        Ok(g.value(o).data().chunks(FEATURE_OUT).map(feature_from_output).collect())
    }

    /// Feature pose decoded from a full latent (its first four coordinates).
    pub fn latent_feature(&self, z: &LatentVector) -> Result<FeaturePose> {
        self.decode_feature(z.feature_slice())
    }

    pub fn latent_features(&self, zs: &[LatentVector]) -> Result<Vec<FeaturePose>> {
        let slices: Vec<&[f64]> = zs.iter().map(|z| z.feature_slice()).collect();
        self.decode_features(&slices)
    }

    // ---- training ------------------------------------------------------

    /// Builds the loss on `g` and returns the scalar total plus the parts.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &CmvaeBatch,
        noise: &[f64],
        weights: [f64; 3],
    ) -> (Var, CmvaeLoss) {
        let b = batch.size;
        let d = self.arch.latent_dim;
        assert_eq!(noise.len(), b * d, "noise must be [B, d_z]");
        let x = g.constant(self.image_tensor(b, batch.images.clone()));
        let (mean, log_var) = self.encode_graph(g, store, x);

        // reparameterization
        let half = g.scale(log_var, 0.5);
        let std = g.exp(half);
        let eps = g.constant(Tensor::new(vec![b, d], noise.to_vec()));
        let spread = g.mul(std, eps);
        let z = g.add(mean, spread);

        let recon = self.decode_image_graph(g, store, z);
        let diff = g.sub(recon, x);
        let sq = g.square(diff);
        let img_sum = g.sum(sq);
        let image_rec = g.scale(img_sum, 1.0 / b as f64);

        let zf = g.slice_cols(z, 0, FEATURE_SLICE);
        let fo = self.decode_feature_graph(g, store, zf);
        let ft = g.constant(Tensor::new(vec![b, FEATURE_OUT], batch.features.clone()));
        let fd = g.sub(fo, ft);
        let fsq = g.square(fd);
        let f_sum = g.sum(fsq);
        let feature_rec = g.scale(f_sum, 1.0 / b as f64);

        let m2 = g.square(mean);
        let var = g.exp(log_var);
        let t = g.add(m2, var);
        let t = g.sub(t, log_var);
        let t = g.add_scalar(t, -1.0);
        let kl_sum = g.sum(t);
        let kl = g.scale(kl_sum, 0.5 / b as f64);

        let [wi, wf, wk] = weights;
        let a = g.scale(image_rec, wi);
        let f = g.scale(feature_rec, wf);
        let k = g.scale(kl, wk);
        let af = g.add(a, f);
        let total = g.add(af, k);
        let parts = CmvaeLoss {
            total: g.value(total).item(),
            image_rec: g.value(image_rec).item(),
            feature_rec: g.value(feature_rec).item(),
            kl: g.value(kl).item(),
        };
        (total, parts)
    }

    /// Loss of a batch without building gradients.
    pub fn loss(&self, batch: &CmvaeBatch, noise: &[f64], weights: [f64; 3]) -> CmvaeLoss {
        let mut g = Graph::no_grad();
        self.loss_graph(&mut g, &self.store, batch, noise, weights).1
    }

    // ---- persistence ---------------------------------------------------

    pub fn save(&self, path: &Path, config: &CmvaeConfig) -> Result<()> {
        let meta = CmvaeMeta {
            arch: self.arch.clone(),
            config: config.clone(),
            config_fingerprint: fingerprint(config),
        };
        write_checkpoint(path, CHECKPOINT_KIND, &meta, &self.store)
    }

    /// Loads weights and the training config recorded with them.
    pub fn load(path: &Path) -> Result<(Self, CmvaeConfig)> {
        let (meta, store): (CmvaeMeta, ParamStore) = read_checkpoint(path, CHECKPOINT_KIND)?;
        let mut model = Cmvae::new(meta.arch, 0)?;
        model.store.load_values(&store).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok((model, meta.config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvaeEpochLog {
    pub epoch: usize,
    pub train: CmvaeLoss,
    pub kl_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvaeTrainingLog {
    pub epochs: Vec<CmvaeEpochLog>,
    pub train_frames: usize,
    pub holdout_records: usize,
}

/// Episodes `[0, split)` train; `[split, len)` are held out.
pub fn holdout_split(num_records: usize, holdout_fraction: f64) -> usize {
    let held = ((num_records as f64) * holdout_fraction).round() as usize;
    num_records - held.min(num_records.saturating_sub(1))
}

/// Trains a CM-VAE on the training split of `dataset`. Seeded and
/// reproducible; aborts if the loss becomes non-finite.
pub fn train_cmvae(dataset: &Dataset, cfg: &CmvaeConfig, seed: u64) -> Result<(Cmvae, CmvaeTrainingLog)> {
    cfg.validate().map_err(Error::Config)?;
    let (h, w) = dataset
        .image_dims()
        .ok_or_else(|| Error::Config("empty dataset".into()))?;
    let arch = CmvaeArch {
        image_height: h,
        image_width: w,
        latent_dim: cfg.latent_dim,
        channels: cfg.channels,
        hidden: cfg.hidden,
        feature_hidden: cfg.feature_hidden,
    };
    let mut model = Cmvae::new(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a3);

    let split = holdout_split(dataset.records.len(), cfg.holdout_fraction);
    let mut frames: Vec<(usize, usize)> = dataset.records[..split]
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| (0..r.images.len()).map(move |k| (ri, k)))
        .collect();
    frames.shuffle(&mut rng);
    frames.truncate(cfg.max_train_frames);
    if frames.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }

    let mut opt = Adam::new(model.params(), AdamConfig::default());
    let d = cfg.latent_dim;
    let mut log = CmvaeTrainingLog {
        epochs: Vec::new(),
        train_frames: frames.len(),
        holdout_records: dataset.records.len() - split,
    };
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let kl_weight = if cfg.kl_warmup_epochs > 0 {
            cfg.w_kl * ((epoch + 1) as f64 / cfg.kl_warmup_epochs as f64).min(1.0)
        } else {
            cfg.w_kl
        };
        let weights = [cfg.w_image, cfg.w_feature, kl_weight];
        frames.shuffle(&mut rng);
        let mut acc = CmvaeLoss::default();
        let mut seen = 0usize;
        for chunk in frames.chunks(cfg.batch_size) {
            let imgs: Vec<&Image> = chunk
                .iter()
                .map(|&(r, k)| &dataset.records[r].images[k])
                .collect();
            let fps: Vec<FeaturePose> = chunk
                .iter()
                .map(|&(r, k)| dataset.records[r].feature_poses[k])
                .collect();
            let batch = CmvaeBatch::new(&imgs, &fps);
            let noise: Vec<f64> = (0..chunk.len() * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = Graph::new();
            let (total, parts) = model.loss_graph(&mut g, model.params(), &batch, &noise, weights);
            if !parts.total.is_finite() || !parts.kl.is_finite() {
                return Err(Error::TrainingDiverged {
                    stage: "cmvae",
                    step,
                    detail: format!("epoch {epoch}: loss {parts:?}"),
                });
            }
            let mut grads = g.backward(total);
            drop(g);
            grads.clip_global_norm(cfg.grad_clip);
            opt.step(model.params_mut(), &grads, cfg.lr);
            step += 1;
            let n = chunk.len() as f64;
            acc.total += parts.total * n;
            acc.image_rec += parts.image_rec * n;
            acc.feature_rec += parts.feature_rec * n;
            acc.kl += parts.kl * n;
            seen += chunk.len();
        }
        let n = seen as f64;
        let train = CmvaeLoss {
            total: acc.total / n,
            image_rec: acc.image_rec / n,
            feature_rec: acc.feature_rec / n,
            kl: acc.kl / n,
        };
        info!(
            "cmvae epoch {}: total {:.4} image {:.4} feature {:.4} kl {:.4}",
            epoch + 1,
            train.total,
            train.image_rec,
            train.feature_rec,
            train.kl
        );
        log.epochs.push(CmvaeEpochLog {
            epoch: epoch + 1,
            train,
            kl_weight,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_standard_normal(&[0.0; 3], &[0.0; 3]), 0.0);
        assert_eq!(kl_to_standard_normal(&[1.0], &[0.0]), 0.5);
    }

    #[test]
    fn sample_latent_examples() {
        let d = LatentDistribution {
            mean: vec![0.3, -1.0],
            log_var: vec![0.0, 0.7],
        };
        assert_eq!(sample_latent(&d, &[0.0, 0.0]).0, d.mean);
        let z = sample_latent(
            &LatentDistribution {
                mean: vec![0.3, -1.0],
                log_var: vec![0.0, 0.0],
            },
            &[1.0, 0.0],
        );
        assert_eq!(z.0, vec![1.3, -1.0]);
    }

    #[test]
    fn feature_output_respects_ranges() {
        let fp = feature_from_output(&[0.7, -0.0, -1.0, 0.2, -0.9, 0.0, 1.0]);
        assert!(fp.r > 0.0);
        assert!(fp.theta > -std::f64::consts::PI && fp.theta <= std::f64::consts::PI);
        assert!(fp.phi.abs() < std::f64::consts::FRAC_PI_2);
        assert_eq!(fp.gamma, 0.0);
    }

    #[test]
    fn holdout_split_keeps_a_training_record() {
        assert_eq!(holdout_split(100, 0.1), 90);
        assert_eq!(holdout_split(1, 0.5), 1);
        assert_eq!(holdout_split(10, 0.0), 10);
    }
}
