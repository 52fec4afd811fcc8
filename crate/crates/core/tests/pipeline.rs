use std::path::Path;

use diffservo::harness::{run_pipeline, EvalConfig, ExperimentConfig, Fixture, PoseSpec, StageName};

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.world.image_width = 16;
    cfg.world.image_height = 8;
    cfg.dataset.episodes = 10;
    cfg.dataset.max_steps = 30;
    cfg.cmvae.channels = [2, 2, 2];
    cfg.cmvae.hidden = 8;
    cfg.cmvae.feature_hidden = 8;
    cfg.cmvae.latent_dim = 6;
    cfg.cmvae.epochs = 1;
    cfg.cmvae.holdout_fraction = 0.2;
    cfg.ddpm.diffusion_steps = 5;
    cfg.ddpm.horizon = 7;
    cfg.ddpm.channels = 4;
    cfg.ddpm.embed_dim = 4;
    cfg.ddpm.kernel = 3;
    cfg.ddpm.dilations = vec![1];
    cfg.ddpm.inverse_hidden = 4;
    cfg.ddpm.steps = 5;
    cfg.ddpm.batch_size = 4;
    cfg.ddpm.holdout_fraction = 0.2;
    cfg.controller.max_replans = 2;
    cfg.sweep.resolution = 1.0;
    cfg.sweep.level_plans = 1;
    cfg.sweep.ordering_plans = 2;
    cfg.eval = EvalConfig {
        invisible_episodes: 2,
        visible_episodes: 1,
        open_loop_samples: 2,
        fixtures: vec![Fixture {
            name: "f".into(),
            start: PoseSpec { x: 1.0, y: 1.0, psi: 0.0 },
        }],
    };
    cfg
}

#[test]
fn stages_are_cached_and_invalidated_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());

    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(first.ran, StageName::ALL.to_vec());
    assert!(first.skipped.is_empty());
    for s in StageName::ALL {
        assert!(dir.path().join(s.artifact()).exists(), "{s:?}");
    }
    assert!(dir.path().join("metrics.csv").exists());
    assert!(first.metrics.iter().any(|m| m.metric.starts_with("eval.")));

    let second = run_pipeline(&cfg).unwrap();
    assert!(second.ran.is_empty(), "{:?}", second.ran);
    assert_eq!(second.skipped, StageName::ALL.to_vec());
    assert_eq!(second.manifest, first.manifest);

    std::fs::remove_file(dir.path().join("cmvae.ckpt")).unwrap();
    let third = run_pipeline(&cfg).unwrap();
    assert_eq!(third.skipped, vec![StageName::GenData]);
    assert_eq!(third.ran, StageName::ALL[1..].to_vec());

    let mut changed = cfg.clone();
    changed.ddpm.omega = 2.0;
    let fourth = run_pipeline(&changed).unwrap();
    assert_eq!(
        fourth.ran,
        vec![StageName::TrainDdpm, StageName::Sweep, StageName::Eval]
    );
}

#[test]
fn corrupted_artifact_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.eval.invisible_episodes = 1;
    cfg.eval.visible_episodes = 0;
    run_pipeline(&cfg).unwrap();
    std::fs::write(dir.path().join("velocity.json"), b"{}").unwrap();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(
        again.ran,
        vec![StageName::FitVelocity, StageName::Sweep, StageName::Eval]
    );
}
