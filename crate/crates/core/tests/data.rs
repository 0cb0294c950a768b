use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treat_core::data::{
    add_gaussian_noise, generate_dataset, irregular_subsample, read_dataset, write_dataset, DataError, Dataset,
    DatasetConfig, Split,
};
use treat_core::dynamics::{StateVector, Trajectory};
use treat_core::physics::SystemKind;

fn small(kind: SystemKind, n_agents: usize, seed: u64) -> DatasetConfig {
    let mut cfg = DatasetConfig::desk_scale(kind, n_agents);
    cfg.n_train = 6;
    cfg.n_test = 3;
    cfg.seed = seed;
    cfg
}

#[test]
fn file_round_trip_is_exact() {
    let ds = generate_dataset(&small(SystemKind::SimpleSpring, 3, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_dataset(&path, &ds).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), again);
}

#[test]
fn generation_is_seeded_and_thread_independent() {
    let cfg = small(SystemKind::SimpleSpring, 5, 11);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| generate_dataset(&cfg)).unwrap();
    let b = three.install(|| generate_dataset(&cfg)).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&small(SystemKind::SimpleSpring, 5, 12)).unwrap();
    assert_ne!(a.records[0].states, c.records[0].states);
}

#[test]
fn every_kind_generates() {
    for kind in SystemKind::ALL {
        let mut cfg = small(kind, 3, 0);
        cfg.n_train = 2;
        cfg.n_test = 1;
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[0].times.len(), cfg.n_points());
        assert_eq!(ds.split(Split::Test).count(), 1);
    }
}

#[test]
fn samples_are_normalized_windows() {
    let ds = generate_dataset(&small(SystemKind::SimpleSpring, 3, 2)).unwrap();
    let r = &ds.records[1];
    let s = r.to_sample(30, 20).unwrap();
    assert_eq!(s.times, r.times[30..50].to_vec());
    for (k, t) in s.targets.iter().enumerate() {
        for (a, b) in t.iter().zip(&r.states[30 + k]) {
            assert_eq!(*a, b / ds.header.scale);
        }
    }
    for (agent, obs) in s.obs.agents.iter().enumerate() {
        assert!((20..=26).contains(&obs.len()));
        assert!(obs.windows(2).all(|w| w[0].time < w[1].time));
        assert!(obs.iter().all(|o| o.time < s.times[0]));
        assert_eq!(obs.len(), r.observed[agent].len());
    }
    let all = ds.samples(Split::Train, 60).unwrap();
    assert_eq!(all.len(), 6);
    assert!(matches!(ds.samples(Split::Train, 62), Err(DataError::Sample { .. })));
}

#[test]
fn normalized_features_lie_in_unit_interval() {
    let ds = generate_dataset(&small(SystemKind::ForcedSpring, 2, 3)).unwrap();
    let mut peak: f64 = 0.0;
    for r in &ds.records {
        for s in &r.states {
            for v in s {
                peak = peak.max((v / ds.header.scale).abs());
            }
        }
    }
    assert_eq!(peak, 1.0);
}

#[test]
fn observation_positions_are_uniform() {
    // Every position of the window should be chosen equally often.
    let (window, min, max) = (30, 20, 26);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = vec![0usize; window];
    let mut counts = vec![0usize; max - min + 1];
    let draws = 4000;
    for _ in 0..draws {
        for idx in irregular_subsample(1, window, min, max, &mut rng).unwrap() {
            counts[idx.len() - min] += 1;
            for i in idx {
                hits[i] += 1;
            }
        }
    }
    let total: usize = hits.iter().sum();
    let expected = total as f64 / window as f64;
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
    // 29 degrees of freedom, p = 0.001
    assert!(chi2 < 58.3, "positions chi2 {chi2}");
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 6 degrees of freedom, p = 0.001
    assert!(chi2 < 22.46, "counts chi2 {chi2}");
}

#[test]
fn noise_has_requested_moments() {
    let n = 20_000;
    let traj = Trajectory {
        times: (0..n).map(|i| i as f64).collect(),
        states: (0..n).map(|_| StateVector::from_qp(1, &[1.0], &[-2.0]).unwrap()).collect(),
    };
    let sigma = 0.05;
    let noisy = add_gaussian_noise(&traj, sigma, &mut ChaCha8Rng::seed_from_u64(7));
    let deltas: Vec<f64> = noisy
        .states
        .iter()
        .zip(&traj.states)
        .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect::<Vec<_>>())
        .collect();
    let m = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / m;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / m;
    assert!(mean.abs() < 4.0 * sigma / m.sqrt(), "mean {mean}");
    assert!((var.sqrt() / sigma - 1.0).abs() < 0.02, "std {}", var.sqrt());
    assert_eq!(noisy.times, traj.times);
}

fn text_of(ds: &Dataset) -> String {
    let mut out = Vec::new();
    ds.write_to(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn malformed_files_name_the_line() {
    let ds = generate_dataset(&small(SystemKind::SimpleSpring, 1, 0)).unwrap();
    let text = text_of(&ds);
    let lines: Vec<&str> = text.lines().collect();

    let truncated = lines[..4].join("\n");
    assert!(matches!(Dataset::parse(&truncated), Err(DataError::Malformed { .. })));

    let mut bad = lines.clone();
    bad[2] = "{not json";
    match Dataset::parse(&bad.join("\n")) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }

    let header = lines[0].replacen("\"schema_version\":1", "\"schema_version\":7", 1);
    assert!(matches!(
        Dataset::parse(&[header.as_str()].into_iter().chain(lines[1..].iter().copied()).collect::<Vec<_>>().join("\n")),
        Err(DataError::Version { found: 7, .. })
    ));

    let mut swapped = ds.clone();
    swapped.records[1].times.swap(3, 4);
    match Dataset::parse(&text_of(&swapped)) {
        Err(DataError::NonMonotone { line, index }) => assert_eq!((line, index), (3, 4)),
        other => panic!("{other:?}"),
    }

    let mut nan = ds.clone();
    nan.records[0].states[5][0] = f64::NAN;
    assert!(Dataset::parse(&text_of(&nan)).is_err());

    let mut outside = ds.clone();
    outside.records[0].observed[0].push(40);
    assert!(Dataset::parse(&text_of(&outside)).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(SystemKind::SimpleSpring, 2, 0);
    cfg.raw_steps = 9001;
    assert!(matches!(generate_dataset(&cfg), Err(DataError::Config(_))));
    let mut cfg = small(SystemKind::SimpleSpring, 2, 0);
    cfg.obs_max = 31;
    assert!(generate_dataset(&cfg).is_err());
    let mut cfg = small(SystemKind::SimpleSpring, 2, 0);
    cfg.dt = -1.0;
    assert!(generate_dataset(&cfg).is_err());
}

proptest! {
    #[test]
    fn subsample_indices_are_sorted_distinct_and_in_range(
        seed in any::<u64>(), window in 1usize..40, agents in 1usize..5, lo in 1usize..40, width in 0usize..10,
    ) {
        let min = lo.min(window);
        let max = (min + width).min(window);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = irregular_subsample(agents, window, min, max, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), agents);
        for a in idx {
            prop_assert!((min..=max).contains(&a.len()));
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(a.iter().all(|&i| i < window));
        }
    }
}
