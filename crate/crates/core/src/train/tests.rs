use super::*;
use crate::config::LayerConfig;
use rand::{Rng, SeedableRng};

/// Three classes of 6x6 images, each lighting up its own band of rows.
fn toy_set(n: usize, seed: u64) -> ImageSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let c: u8 = rng.random_range(0..3);
        for r in 0..6 {
            for _ in 0..6 {
                let on = r / 2 == c as usize;
                let v = if on {
                    rng.random_range(120..=255)
                } else {
                    rng.random_range(0..90)
                };
                pixels.push(if rng.random_bool(0.4) && !on { 0 } else { v });
            }
        }
        labels.push(c);
    }
    ImageSet::new(6, 6, pixels, labels).unwrap()
}

fn toy_data() -> DatasetBundle {
    DatasetBundle {
        train: toy_set(300, 1),
        test: toy_set(150, 2),
        digests: Default::default(),
    }
}

fn toy_config(store: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.network.inputs = 36;
    c.network.layers = vec![
        LayerConfig {
            outputs: 8,
            activation: "sigmoid".into(),
            store: store.into(),
        },
        LayerConfig {
            outputs: 3,
            activation: "sigmoid".into(),
            store: store.into(),
        },
    ];
    c.array.read_subset = vec![37, 0];
    c.trainer.epochs = 3;
    c
}

#[test]
fn exact_and_crossbar_learn() {
    let data = toy_data();
    for store in ["exact", "crossbar"] {
        let out = train_mca(&toy_config(store), &data).unwrap();
        let acc = out.log.max_test_acc();
        assert!(acc > 0.9, "{store}: {acc}");
        assert_eq!(out.log.epochs.len(), 3);
        assert_eq!(
            out.log.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }
}

#[test]
fn reruns_are_bit_identical() {
    let data = toy_data();
    let cfg = toy_config("crossbar");
    let a = train_mca(&cfg, &data).unwrap();
    let b = train_mca(&cfg, &data).unwrap();
    assert_eq!(a.log, b.log);
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    let meta = CheckpointMeta {
        t_end: a.log.t_end,
        loss: "mse".into(),
        config_digest: a.log.config_digest.clone(),
    };
    write_network(&mut wa, &a.net, &meta).unwrap();
    write_network(&mut wb, &b.net, &meta).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn seed_changes_the_run() {
    let data = toy_data();
    let mut cfg = toy_config("crossbar");
    let a = train_mca(&cfg, &data).unwrap();
    cfg.seed = 2;
    let b = train_mca(&cfg, &data).unwrap();
    assert_ne!(a.log.epochs, b.log.epochs);
}

#[test]
fn checkpoint_round_trip() {
    let data = toy_data();
    let mut out = train_mca(&toy_config("crossbar"), &data).unwrap();
    let meta = CheckpointMeta {
        t_end: out.log.t_end,
        loss: "mse".into(),
        config_digest: out.log.config_digest.clone(),
    };
    let mut buf = Vec::new();
    write_network(&mut buf, &out.net, &meta).unwrap();
    let (mut back, meta2) = read_network(buf.as_slice()).unwrap();
    assert_eq!(meta2, meta);
    let t = out.log.t_end + 10.0;
    for l in 0..2 {
        let w1 = out.net.layers[l].store.weights(t, ReadMode::Snapshot).unwrap();
        let w2 = back.layers[l].store.weights(t, ReadMode::Snapshot).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(
            out.net.layers[l].store.accumulator(),
            back.layers[l].store.accumulator()
        );
    }
}

#[test]
fn mixed_stores_round_trip() {
    let data = toy_data();
    let mut cfg = toy_config("crossbar");
    cfg.network.layers[1].store = "exact".into();
    cfg.trainer.epochs = 1;
    let out = train_mca(&cfg, &data).unwrap();
    let meta = CheckpointMeta {
        t_end: out.log.t_end,
        loss: "mse".into(),
        config_digest: out.log.config_digest.clone(),
    };
    let mut buf = Vec::new();
    write_network(&mut buf, &out.net, &meta).unwrap();
    let (back, _) = read_network(buf.as_slice()).unwrap();
    assert_eq!(back.layers[1].store.name(), "exact");
    let a = evaluate_inference_over_time(&out.net, None, &data.test, &[meta.t_end]).unwrap();
    let b = evaluate_inference_over_time(&back, None, &data.test, &[meta.t_end]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn drift_evaluation_contract() {
    let data = toy_data();
    let out = train_mca(&toy_config("crossbar"), &data).unwrap();
    let t_end = out.log.t_end;
    let pts =
        evaluate_inference_over_time(&out.net, Some(&data.train), &data.test, &[t_end, t_end + 86_400.0]).unwrap();
    assert_eq!(pts[0].test_acc, out.log.final_test_acc());
    assert_eq!(pts[0].train_acc, out.log.epochs.last().unwrap().train_acc);
    let before = last_programmed(&out.net) - 1.0;
    assert!(matches!(
        evaluate_inference_over_time(&out.net, None, &data.test, &[before]),
        Err(McaError::Contract(_))
    ));
    assert!(evaluate_inference_over_time(&out.net, None, &data.test, &[t_end + 2.0, t_end + 1.0]).is_err());
}

#[test]
fn early_stop_and_limits() {
    let data = toy_data();
    let mut cfg = toy_config("exact");
    cfg.trainer.stop_at_test_acc = 0.5;
    cfg.trainer.train_limit = 100;
    cfg.trainer.test_limit = 50;
    cfg.trainer.eval_train = false;
    let out = train_mca(&cfg, &data).unwrap();
    assert_eq!(out.log.epochs.len(), 1);
    assert_eq!((out.log.train_examples, out.log.test_examples), (100, 50));
    assert_eq!(out.log.epochs[0].train_acc, None);
    assert!((out.log.t_end - 100.0 * cfg.trainer.dt_example).abs() < 1e-9);
}

#[test]
fn momentum_and_batches_train() {
    let data = toy_data();
    let mut cfg = toy_config("exact");
    cfg.optimizer.momentum = 0.5;
    cfg.optimizer.eta = 0.2;
    assert!(train_mca(&cfg, &data).unwrap().log.max_test_acc() > 0.9);
    let mut cfg = toy_config("crossbar");
    cfg.optimizer.batch_size = 4;
    cfg.optimizer.flush = "batch".into();
    cfg.optimizer.eta = 1.0;
    let out = train_mca(&cfg, &data).unwrap();
    assert!(out.log.max_test_acc() > 0.8, "{}", out.log.max_test_acc());
}

#[test]
fn low_precision_updates_are_sparse() {
    let data = toy_data();
    let mut cfg = toy_config("crossbar");
    cfg.trainer.epochs = 1;
    let full = train_mca(&cfg, &data).unwrap();
    cfg.optimizer.update_bits = 3;
    let low = train_mca(&cfg, &data).unwrap();
    let (f, l) = (&full.log.epochs[0], &low.log.epochs[0]);
    assert!(l.update_nnz_per_example < f.update_nnz_per_example);
    assert_eq!(l.counters.chi_writes as f64, l.update_nnz_per_example * 300.0);
}

#[test]
fn reference_variant_trains() {
    let data = toy_data();
    let cfg = toy_config("crossbar").reference_variant();
    let out = train_mca(&cfg, &data).unwrap();
    assert!(out.log.max_test_acc() > 0.8, "{}", out.log.max_test_acc());
    let clips: Vec<f64> = out.log.epochs.iter().map(|e| e.weight_clip).collect();
    assert_eq!(clips, vec![0.7, 0.85, 1.0]);
}

#[test]
fn converter_sweep_applies() {
    let data = toy_data();
    let out = train_mca(&toy_config("exact"), &data).unwrap();
    let mut net = out.net.clone();
    set_converters(&mut net, Some(2), Some(2)).unwrap();
    assert_eq!(net.layers[0].store.converters(), (Some(2), Some(2)));
    assert!(set_converters(&mut net, Some(1), None).is_err());
    let exact = accuracy_on(&out.net, &data.test).unwrap();
    assert_eq!(exact, out.log.final_test_acc());
}
