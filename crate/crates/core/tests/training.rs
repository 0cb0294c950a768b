use treat_autodiff::Tensor;
use treat_core::data::{generate_dataset, Dataset, DatasetConfig, Split};
use treat_core::model::Model;
use treat_core::physics::SystemKind;
use treat_core::training::{
    batch_gradients, evaluate, loss, train, train_on_samples, LossVariant, TrainError, TrainingConfig,
};

fn dataset(seed: u64) -> Dataset {
    let mut cfg = DatasetConfig::desk_scale(SystemKind::SimpleSpring, 1);
    cfg.n_train = 12;
    cfg.n_test = 4;
    cfg.seed = seed;
    generate_dataset(&cfg).unwrap()
}

fn config(alpha: f64, variant: LossVariant) -> TrainingConfig {
    let mut c = TrainingConfig::new(alpha, variant);
    c.epochs = 4;
    c.batch_size = 4;
    c.predict_len = 6;
    c.lr = 5e-3;
    c.model.enc_dim = 4;
    c.model.aug_dim = 4;
    c.model.enc_hidden = 8;
    c.model.ode_hidden = 8;
    c
}

fn bits(m: &Model) -> Vec<u64> {
    m.params.tensors.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn training_is_reproducible() {
    let ds = dataset(1);
    let cfg = config(0.5, LossVariant::Treat);
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(bits(&a.model), bits(&b.model));
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
}

#[test]
fn loss_goes_down() {
    let ds = dataset(2);
    let mut cfg = config(0.0, LossVariant::None);
    cfg.epochs = 12;
    cfg.patience = None;
    let out = train(&ds, &cfg).unwrap();
    let e = &out.report.epochs;
    assert_eq!(e.len(), 12);
    assert!(e[11].l_pred < 0.5 * e[0].l_pred, "{} -> {}", e[0].l_pred, e[11].l_pred);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let ds = dataset(3);
    let mut cfg = config(0.1, LossVariant::Treat);
    cfg.epochs = 8;
    cfg.patience = Some(1);
    cfg.lr = 0.5;
    let out = train(&ds, &cfg).unwrap();
    let best = out
        .report
        .epochs
        .iter()
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
        .unwrap();
    assert_eq!(best.epoch, out.report.best_epoch);
    if out.report.stopped_early {
        assert!(out.report.epochs.len() < 8);
    }
}

#[test]
fn zero_alpha_matches_reconstruction_only() {
    let ds = dataset(4);
    let samples = ds.samples(Split::Train, 6).unwrap();
    let refs: Vec<_> = samples.iter().take(3).collect();
    let cfg = config(0.0, LossVariant::Treat).resolved_model(4);
    let model = Model::new(cfg, 7).unwrap();
    let (t1, p1, _, g1) = batch_gradients(&model, &refs, LossVariant::Treat, 0.0).unwrap();
    let (t2, p2, r2, g2) = batch_gradients(&model, &refs, LossVariant::None, 0.0).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(p1, p2);
    assert!(r2 >= 0.0);
    for (a, b) in g1.iter().zip(&g2) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }
}

#[test]
fn parallel_batches_match_serial_ones() {
    let ds = dataset(5);
    let mut cfg = config(0.5, LossVariant::Treat);
    cfg.epochs = 2;
    let serial = train(&ds, &cfg).unwrap();
    cfg.parallel = true;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let parallel = pool.install(|| train(&ds, &cfg)).unwrap();
    for (a, b) in serial.model.params.tensors.iter().zip(&parallel.model.params.tensors) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    let ds = dataset(6);
    let bad = [
        config(0.5, LossVariant::None),
        config(-1.0, LossVariant::Treat),
        TrainingConfig {
            lr: 0.0,
            ..config(0.5, LossVariant::Treat)
        },
        TrainingConfig {
            val_fraction: 1.0,
            ..config(0.5, LossVariant::Treat)
        },
        TrainingConfig {
            predict_len: 1,
            ..config(0.5, LossVariant::Treat)
        },
    ];
    for c in bad {
        assert!(matches!(train(&ds, &c), Err(TrainError::Config(_))), "{c:?}");
    }
    assert!(matches!(train_on_samples(&[], &config(0.5, LossVariant::Treat)), Err(TrainError::Config(_))));
}

#[test]
fn variants_parse_and_display() {
    for v in LossVariant::ALL {
        assert_eq!(v.to_string().parse::<LossVariant>().unwrap(), v);
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
    }
    assert!("trs".parse::<LossVariant>().is_err());
}

#[test]
fn training_config_rejects_unknown_fields() {
    let good = serde_json::to_value(config(0.5, LossVariant::Rev2)).unwrap();
    let back: TrainingConfig = serde_json::from_value(good.clone()).unwrap();
    assert_eq!(back, config(0.5, LossVariant::Rev2));
    let mut bad = good;
    bad["learning_rate"] = serde_json::json!(0.1);
    assert!(serde_json::from_value::<TrainingConfig>(bad).is_err());
}

#[test]
fn evaluation_metrics_follow_their_definitions() {
    let ds = dataset(7);
    let out = train(&ds, &config(0.5, LossVariant::Treat)).unwrap();
    let test = ds.samples(Split::Test, 12).unwrap();
    let r = evaluate(&out.model, &test, 6, &[4, 8, 12]).unwrap();
    assert_eq!((r.n_trajectories, r.skipped), (4, 0));
    assert_eq!(r.per_trajectory_mse.len(), 4);
    assert!((r.mse_e2 - 100.0 * r.mse).abs() < 1e-15);
    let mean = r.per_trajectory_mse.iter().sum::<f64>() / 4.0;
    assert!((r.mse - mean).abs() < 1e-15);
    // l_pred sums squared error over the horizon, mse averages it
    assert!((r.l_pred - r.mse * 6.0 * 4.0).abs() < 1e-12 * r.l_pred.max(1.0));
    assert_eq!(r.buckets.iter().map(|b| b.len).collect::<Vec<_>>(), vec![4, 8, 12]);
    assert!(r.max_error_gt_rev > 0.0 && r.l_reverse >= 0.0);
    assert!(matches!(evaluate(&out.model, &test, 6, &[13]), Err(TrainError::Config(_))));
}

#[test]
fn loss_helpers_agree_on_reversal_pairing() {
    let a = [Tensor::scalar(1.0), Tensor::scalar(2.0)];
    let b = [Tensor::scalar(2.0), Tensor::scalar(1.0)];
    assert_eq!(loss::reversal(&a, &b).unwrap(), 0.0);
    assert_eq!(loss::reversal_from_initial(&a, &b).unwrap(), 2.0);
    assert_eq!(loss::combined(1.0, 2.0, 0.5), 2.0);
}
