use diffservo::datagen::{
    discounted_return, episode_seed, expert_rollout, generate_dataset, read_dataset,
    write_dataset, DatasetConfig,
};
use diffservo::world::{World, WorldConfig};
use diffservo::Error;

fn small_cfg() -> DatasetConfig {
    DatasetConfig {
        episodes: 12,
        max_steps: 100,
        ..DatasetConfig::default()
    }
}

#[test]
fn rollout_is_deterministic_per_seed() {
    let world = World::new(WorldConfig::default());
    let cfg = small_cfg();
    let a = expert_rollout(&world, &cfg, 42);
    let b = expert_rollout(&world, &cfg, 42);
    assert_eq!(a, b);
    let c = expert_rollout(&world, &cfg, 43);
    assert_ne!(a.poses, c.poses);
}

#[test]
fn invisible_start_ends_with_target_in_view() {
    let world = World::new(WorldConfig::default());
    let cfg = DatasetConfig {
        invisible_fraction: 1.0,
        ..small_cfg()
    };
    let mut arrived = 0;
    for i in 0..20 {
        let rec = expert_rollout(&world, &cfg, episode_seed(9, i));
        assert_eq!(rec.images[0].target_pixel_count(), 0);
        if rec.arrived {
            arrived += 1;
            assert!(rec.images.last().unwrap().target_pixel_count() > 0);
            let goal = world.target_view_pose();
            assert!(rec.poses.last().unwrap().distance_to(&goal) < cfg.arrival_distance);
        }
    }
    assert!(arrived >= 18, "only {arrived}/20 expert episodes arrived");
}

#[test]
fn records_are_internally_consistent() {
    let world = World::new(WorldConfig::default());
    let cfg = small_cfg();
    let ds = generate_dataset(&world, &cfg, 1, 12).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &ds.records {
        r.check_consistency().unwrap();
        for (k, p) in r.poses.iter().enumerate() {
            assert_eq!(r.rewards[k], world.reward(p));
            assert_eq!(r.images[k], world.render(p));
        }
        assert_eq!(r.raw_return, discounted_return(&r.rewards, ds.discount));
        assert!(ds.return_min <= r.raw_return && r.raw_return <= ds.return_max);
        lo = lo.min(r.norm_return);
        hi = hi.max(r.norm_return);
    }
    assert_eq!((lo, hi), (-1.0, 1.0));
}

#[test]
fn invisible_fraction_within_binomial_band() {
    let world = World::new(WorldConfig::default());
    let cfg = DatasetConfig {
        max_steps: 1,
        ..DatasetConfig::default()
    };
    let n = 400;
    let ds = generate_dataset(&world, &cfg, 77, n).unwrap();
    let invisible = ds
        .records
        .iter()
        .filter(|r| r.images[0].target_pixel_count() == 0)
        .count() as f64;
    let p = cfg.invisible_fraction;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((invisible - n as f64 * p).abs() <= 3.0 * sigma, "{invisible} of {n}");
}

#[test]
fn file_round_trip_and_corruption() {
    let world = World::new(WorldConfig::default());
    let ds = generate_dataset(&world, &small_cfg(), 3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);

    let bytes = std::fs::read(&path).unwrap();

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x5a;
    std::fs::write(&path, &corrupt).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::DatasetChecksum)));

    let mut version = bytes.clone();
    version[4] = 99;
    std::fs::write(&path, &version).unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(Error::DatasetVersion { found: 99, .. })
    ));

    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::DatasetTruncated { .. })));
}
