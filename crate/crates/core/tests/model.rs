use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treat_autodiff::{grad_check, Tape, Tensor};
use treat_core::data::{Observation, ObservationSet, Sample};
use treat_core::graph::InteractionGraph;
use treat_core::model::{load_checkpoint, save_checkpoint, Batch, Bound, Checkpoint, Direction, EncoderKind, Model, ModelConfig, ModelError};
use treat_core::training::{batch_objective, LossVariant};

fn toy_sample(seed: u64, graph: InteractionGraph, feat: usize, n_pred: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n();
    let agents = (0..n)
        .map(|_| {
            let k = rng.random_range(2..=5);
            let mut times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
            while times.len() > k {
                let drop = rng.random_range(0..times.len());
                times.remove(drop);
            }
            times
                .into_iter()
                .map(|time| Observation {
                    time,
                    features: (0..feat).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect()
        })
        .collect();
    Sample {
        n_agents: n,
        feat_dim: feat,
        graph,
        obs: ObservationSet { agents },
        times: (0..n_pred).map(|i| 1.0 + i as f64 * 0.1).collect(),
        targets: (0..n_pred)
            .map(|_| (0..n * feat).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    }
}

fn toy_config(feat: usize, width: usize) -> ModelConfig {
    let mut c = ModelConfig::new(feat, feat);
    c.enc_dim = width / 2;
    c.aug_dim = width / 2;
    c.enc_hidden = width;
    c.ode_hidden = width;
    c
}

fn decoded_rollout(model: &Model, sample: &Sample) -> Vec<Tensor> {
    let batch = Batch::new(&[sample], &model.config).unwrap();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let z0 = model.encode(&mut tape, &p, &batch).unwrap();
    let r = model.rollout(&mut tape, &p, &batch, z0, batch.n_steps, batch.dt, Direction::Forward).unwrap();
    model
        .decode_all(&mut tape, &p, &r)
        .unwrap()
        .into_iter()
        .map(|v| tape.value(v).clone())
        .collect()
}

fn permute(sample: &Sample, perm: &[usize]) -> Sample {
    let n = sample.n_agents;
    let f = sample.feat_dim;
    let mut agents = vec![Vec::new(); n];
    for (i, a) in sample.obs.agents.iter().enumerate() {
        agents[perm[i]] = a.clone();
    }
    let targets = sample
        .targets
        .iter()
        .map(|t| {
            let mut out = vec![0.0; n * f];
            for i in 0..n {
                out[perm[i] * f..(perm[i] + 1) * f].copy_from_slice(&t[i * f..(i + 1) * f]);
            }
            out
        })
        .collect();
    Sample {
        graph: sample.graph.permuted(perm).unwrap(),
        obs: ObservationSet { agents },
        targets,
        ..sample.clone()
    }
}

#[test]
fn agent_relabeling_permutes_predictions() {
    let graph = InteractionGraph::new(4, [(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
    let sample = toy_sample(3, graph, 3, 6);
    let perm = [2, 0, 3, 1];
    let moved = permute(&sample, &perm);
    for encoder in [EncoderKind::Temporal, EncoderKind::SpatioTemporal] {
        let mut cfg = toy_config(3, 8);
        cfg.encoder = encoder;
        let model = Model::new(cfg, 5).unwrap();
        let a = decoded_rollout(&model, &sample);
        let b = decoded_rollout(&model, &moved);
        for (ya, yb) in a.iter().zip(&b) {
            for i in 0..4 {
                for c in 0..3 {
                    let d = (ya.data()[i * 3 + c] - yb.data()[perm[i] * 3 + c]).abs();
                    assert!(d < 1e-12, "{encoder:?}: agent {i} differs by {d}");
                }
            }
        }
    }
}

#[test]
fn coupling_matters() {
    let sample = toy_sample(1, InteractionGraph::complete(3), 2, 5);
    let lonely = Sample {
        graph: InteractionGraph::empty(3),
        ..sample.clone()
    };
    let model = Model::new(toy_config(2, 8), 2).unwrap();
    let a = decoded_rollout(&model, &sample);
    let b = decoded_rollout(&model, &lonely);
    assert_eq!(a[0], b[0]);
    assert_ne!(a[4], b[4]);
}

#[test]
fn batching_matches_single_samples() {
    let cfg = toy_config(2, 8);
    let model = Model::new(cfg, 9).unwrap();
    let s1 = toy_sample(1, InteractionGraph::complete(3), 2, 5);
    let s2 = toy_sample(2, InteractionGraph::new(2, [(0, 1)]).unwrap(), 2, 5);
    let objective = |samples: &[&Sample]| {
        let batch = Batch::new(samples, &model.config).unwrap();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let l = batch_objective(&model, &mut tape, &p, &batch, LossVariant::Treat, 0.5).unwrap();
        tape.value(l.objective).data()[0]
    };
    let joint = objective(&[&s1, &s2]);
    let split = (objective(&[&s1]) + objective(&[&s2])) / 2.0;
    assert!((joint - split).abs() < 1e-12 * split.abs().max(1.0));
}

fn silence_vector_field(model: &mut Model) {
    for name in ["ode.node2.weight", "ode.node2.bias"] {
        let t = model.params.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_field_gives_constant_rollouts_and_zero_reversal_loss() {
    let mut model = Model::new(toy_config(2, 8), 4).unwrap();
    silence_vector_field(&mut model);
    let sample = toy_sample(6, InteractionGraph::complete(2), 2, 7);
    let batch = Batch::new(&[&sample], &model.config).unwrap();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let z0 = model.encode(&mut tape, &p, &batch).unwrap();
    let fwd = model.rollout(&mut tape, &p, &batch, z0, 6, batch.dt, Direction::Forward).unwrap();
    let z0v = tape.value(z0).clone();
    for &z in &fwd.latents {
        assert_eq!(tape.value(z), &z0v);
    }
    for variant in [LossVariant::Treat, LossVariant::Rev2] {
        let l = batch_objective(&model, &mut tape, &p, &batch, variant, 1.0).unwrap();
        assert_eq!(l.l_reverse, 0.0, "{variant}");
    }
}

#[test]
fn reverse_rollout_pairs_with_forward_rollout() {
    // Reverse index K - k approximates forward index k, and the agreement
    // improves at fourth order as the integration step shrinks.
    let sample = toy_sample(8, InteractionGraph::complete(3), 2, 9);
    let mut errors = Vec::new();
    for substeps in [1, 2, 4] {
        let mut cfg = toy_config(2, 8);
        cfg.substeps = substeps;
        let mut model = Model::new(cfg, 12).unwrap();
        model.params.get_mut("ode.node2.weight").unwrap().data_mut().iter_mut().for_each(|v| *v *= 40.0);
        let batch = Batch::new(&[&sample], &model.config).unwrap();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let z0 = model.encode(&mut tape, &p, &batch).unwrap();
        let fwd = model.rollout(&mut tape, &p, &batch, z0, 8, batch.dt, Direction::Forward).unwrap();
        let rev = model.rollout(&mut tape, &p, &batch, fwd.latents[8], 8, batch.dt, Direction::Reverse).unwrap();
        let worst = (0..=8)
            .map(|k| {
                let a = tape.value(fwd.latents[k]).data();
                let b = tape.value(rev.latents[8 - k]).data();
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        errors.push(worst);
    }
    assert!(errors[0] > 1e-12, "field too weak to test: {errors:?}");
    for w in errors.windows(2) {
        assert!(w[0] / w[1] > 12.0, "{errors:?}");
    }
}

#[test]
fn substep_refinement_converges_at_fourth_order() {
    let sample = toy_sample(10, InteractionGraph::complete(2), 2, 6);
    let end = |substeps: usize| {
        let mut cfg = toy_config(2, 8);
        cfg.substeps = substeps;
        let mut model = Model::new(cfg, 13).unwrap();
        model.params.get_mut("ode.node2.weight").unwrap().data_mut().iter_mut().for_each(|v| *v *= 40.0);
        decoded_rollout(&model, &sample).pop().unwrap()
    };
    let reference = end(64);
    let err = |s: usize| {
        let e = end(s);
        e.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e4) = (err(1), err(2), err(4));
    assert!(e1 / e2 > 12.0 && e2 / e4 > 12.0, "{e1} {e2} {e4}");
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut cfg = toy_config(3, 8);
    cfg.dec_hidden = Some(6);
    cfg.encoder = EncoderKind::SpatioTemporal;
    let model = Model::new(cfg, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.names, model.params.names);
    for (a, b) in back.params.tensors.iter().zip(&model.params.tensors) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let sample = toy_sample(2, InteractionGraph::complete(2), 3, 4);
    assert_eq!(decoded_rollout(&model, &sample), decoded_rollout(&back, &sample));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let model = Model::new(toy_config(2, 8), 0).unwrap();
    let text = Checkpoint::from_model(&model).to_json();
    assert!(Checkpoint::parse(&text).unwrap().into_model().is_ok());
    let versioned = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(matches!(Checkpoint::parse(&versioned), Err(ModelError::Checkpoint(_))));
    let extra = text.replacen('{', "{\"surprise\": 1,", 1);
    assert!(Checkpoint::parse(&extra).is_err());
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["params"][0]["shape"] = serde_json::json!([1, 1]);
    let reshaped = Checkpoint::parse(&value.to_string()).unwrap();
    assert!(matches!(reshaped.into_model(), Err(ModelError::Mismatch(_))));
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["params"][1]["data"] = serde_json::json!("AAAA");
    assert!(Checkpoint::parse(&value.to_string()).unwrap().into_model().is_err());
}

#[test]
fn combined_loss_gradients_match_finite_differences() {
    let sample = toy_sample(31, InteractionGraph::complete(2), 2, 5);
    for variant in [LossVariant::Treat, LossVariant::GtRev, LossVariant::Rev2] {
        let model = Model::new(toy_config(2, 8), 17).unwrap();
        let batch = Batch::new(&[&sample], &model.config).unwrap();
        let report = grad_check(
            |tape, vars| {
                let p = Bound { vars: vars.to_vec() };
                let l = batch_objective(&model, tape, &p, &batch, variant, 0.7).map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                Ok(l.objective)
            },
            &model.params.tensors,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{variant}: max relative error {}", report.max_rel_error());
    }
}

#[test]
fn a_model_reproduces_its_own_rollouts() {
    let teacher = Model::new(toy_config(2, 8), 40).unwrap();
    let mut sample = toy_sample(41, InteractionGraph::complete(3), 2, 6);
    sample.targets = decoded_rollout(&teacher, &sample).into_iter().map(|t| t.data().to_vec()).collect();
    let batch = Batch::new(&[&sample], &teacher.config).unwrap();
    let mut tape = Tape::new();
    let p = teacher.bind(&mut tape, false);
    let l = batch_objective(&teacher, &mut tape, &p, &batch, LossVariant::None, 0.0).unwrap();
    assert_eq!(l.l_pred, 0.0);
    assert!(l.l_reverse < 1e-12);
}
