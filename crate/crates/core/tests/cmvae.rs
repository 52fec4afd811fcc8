mod common;

use diffservo::cmvae::{
    kl_to_standard_normal, sample_latent, Cmvae, CmvaeArch, CmvaeBatch, CmvaeConfig, LatentDistribution,
    LatentVector, FEATURE_SLICE,
};
use diffservo::world::{FeaturePose, Image};
use diffservo_nn::gradcheck::check_gradients;
use diffservo_nn::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::kl_numeric_1d;

fn small_arch() -> CmvaeArch {
    CmvaeArch {
        image_height: 8,
        image_width: 8,
        latent_dim: 6,
        channels: [2, 3, 3],
        hidden: 8,
        feature_hidden: 6,
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let planar: Vec<f64> = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
    Image::from_planar(h, w, &planar)
}

fn random_pose(rng: &mut ChaCha8Rng) -> FeaturePose {
    FeaturePose {
        r: rng.gen_range(0.5..4.0),
        theta: rng.gen_range(-3.0..3.0),
        phi: rng.gen_range(-0.4..0.4),
        gamma: rng.gen_range(-3.0..3.0),
    }
}

#[test]
fn kl_of_unit_shifted_gaussian_is_one_half() {
    assert_eq!(kl_to_standard_normal(&[1.0], &[0.0]), 0.5);
    assert!((kl_numeric_1d(1.0, 1.0) - 0.5).abs() < 1e-6);
}

proptest! {
    #[test]
    fn kl_matches_numerical_integration(
        params in prop::collection::vec((-2.0f64..2.0, -1.5f64..1.0), 1..4)
    ) {
        let mean: Vec<f64> = params.iter().map(|p| p.0).collect();
        let log_var: Vec<f64> = params.iter().map(|p| p.1).collect();
        let numeric: f64 = params.iter().map(|&(m, lv)| kl_numeric_1d(m, (0.5 * lv).exp())).sum();
        prop_assert!((kl_to_standard_normal(&mean, &log_var) - numeric).abs() < 1e-6);
    }

    #[test]
    fn kl_is_nonnegative(mean in prop::collection::vec(-5.0f64..5.0, 4), log_var in prop::collection::vec(-4.0f64..4.0, 4)) {
        prop_assert!(kl_to_standard_normal(&mean, &log_var) >= 0.0);
    }
}

#[test]
fn reparameterized_draws_have_the_encoded_moments() {
    let dist = LatentDistribution {
        mean: vec![0.5, -1.0],
        log_var: vec![0.0, (0.25f64).ln()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let draws: Vec<LatentVector> = (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            sample_latent(&dist, &e)
        })
        .collect();
    for i in 0..2 {
        let m = draws.iter().map(|z| z.0[i]).sum::<f64>() / n as f64;
        let v = draws.iter().map(|z| (z.0[i] - m).powi(2)).sum::<f64>() / n as f64;
        let var = dist.log_var[i].exp();
        assert!((m - dist.mean[i]).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt());
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let vae = Cmvae::new(small_arch(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let images: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 8, 8)).collect();
    let poses: Vec<FeaturePose> = (0..3).map(|_| random_pose(&mut rng)).collect();
    let refs: Vec<&Image> = images.iter().collect();
    let batch = CmvaeBatch::new(&refs, &poses);
    let noise: Vec<f64> = (0..3 * 6).map(|_| StandardNormal.sample(&mut rng)).collect();
    let weights = [1.0, 2.0, 0.5];
    let mut g = Graph::new();
    let (total, _) = vae.loss_graph(&mut g, vae.params(), &batch, &noise, weights);
    let grads = g.backward(total);
    let mut store = vae.params().clone();
    let ids: Vec<_> = store.ids().collect();
    let entries = check_gradients(&mut store, &ids, &grads, 3, 1e-5, &mut rng, |p| {
        let mut g = Graph::no_grad();
        vae.loss_graph(&mut g, p, &batch, &noise, weights).1.total
    });
    assert!(!entries.is_empty());
    for e in entries.iter().filter(|e| e.analytic.abs().max(e.numeric.abs()) > 1e-7) {
        assert!(e.rel_error <= 1e-3, "{e:?}");
    }
}

#[test]
fn feature_decoding_reads_only_the_feature_slice() {
    let vae = Cmvae::new(small_arch(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = vae.latent_feature(&LatentVector(z.clone())).unwrap();
        let direct = vae.decode_feature(&z[..FEATURE_SLICE]).unwrap();
        for v in &mut z[FEATURE_SLICE..] {
            *v = 100.0 * rng.gen::<f64>();
        }
        let b = vae.latent_feature(&LatentVector(z)).unwrap();
        for (x, y) in [(a.r, b.r), (a.theta, b.theta), (a.phi, b.phi), (a.gamma, b.gamma)] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a, direct);
    }
}

#[test]
fn encoding_is_shape_checked_and_deterministic() {
    let vae = Cmvae::new(small_arch(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng, 8, 8);
    assert_eq!(vae.encode(&img).unwrap(), vae.encode(&img).unwrap());
    assert!(vae.encode(&random_image(&mut rng, 16, 8)).is_err());
    assert!(vae.decode_image(&LatentVector(vec![0.0; 5])).is_err());
    let out = vae.decode_image(&LatentVector(vec![0.0; 6])).unwrap();
    assert_eq!(out.to_planar().len(), 3 * 8 * 8);
}

#[test]
fn checkpoint_round_trip() {
    let vae = Cmvae::new(small_arch(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.ckpt");
    let cfg = CmvaeConfig::default();
    vae.save(&path, &cfg).unwrap();
    let (back, back_cfg) = Cmvae::load(&path).unwrap();
    assert_eq!(back_cfg, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = random_image(&mut rng, 8, 8);
    assert_eq!(vae.encode(&img).unwrap(), back.encode(&img).unwrap());
}
