use chrono::{NaiveDate, TimeDelta};
use msgwtcn::data::{synth_generate, Dataset, NormMode, Normalizer, SpeedSeries, SynthParams, Topology};
use msgwtcn::graph::Graph;
use msgwtcn::model::{new_model, Model, ModelConfig};
use msgwtcn::topology::grid_graph;
use msgwtcn::training::{evaluate, train, train_with, TrainConfig, TrainHistory};
use msgwtcn::Error;

fn small_cfg() -> ModelConfig {
    ModelConfig { num_layers: 2, hidden_channels: 4, scales: vec![0.85, 3.85], ..Default::default() }
}

fn fixture() -> (Graph, Dataset) {
    let (g, s) = synth_generate(&Topology::Grid { width: 3, height: 3 }, 600, 11, &SynthParams::default()).unwrap();
    let d = Dataset::prepare(&s, 12, 1, [0.7, 0.1, 0.2], NormMode::PerNode).unwrap();
    (g, d)
}

fn run(g: &Graph, d: &Dataset, cfg: &TrainConfig) -> (Model, TrainHistory) {
    let mut m = new_model(small_cfg(), g.clone(), 4).unwrap();
    let h = train(&mut m, d, cfg).unwrap();
    (m, h)
}

fn quick() -> TrainConfig {
    TrainConfig { max_epochs: 3, batch_size: 32, seed: 9, ..Default::default() }
}

#[test]
fn zero_epochs_reports_initial_model() {
    let (g, d) = fixture();
    let fresh = new_model(small_cfg(), g.clone(), 4).unwrap();
    let (m, h) = run(&g, &d, &TrainConfig { max_epochs: 0, ..Default::default() });
    assert_eq!(h.records.len(), 1);
    assert_eq!(h.best_epoch, 0);
    let same = m.params().iter().zip(fresh.params()).all(|(a, b)| a.value == b.value);
    assert!(same);
    assert_eq!(h.initial().val, evaluate(&fresh, &d.val, &d.normalizer).unwrap());
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (g, d) = fixture();
    let (m1, h1) = run(&g, &d, &quick());
    let (m2, h2) = run(&g, &d, &quick());
    let bits = |h: &TrainHistory| -> Vec<u64> { h.records.iter().flat_map(|r| [r.train_loss.to_bits(), r.val.mae.to_bits()]).collect() };
    assert_eq!(bits(&h1), bits(&h2));
    assert!(m1.params().iter().zip(m2.params()).all(|(a, b)| a.value == b.value));
    let (_, h3) = run(&g, &d, &TrainConfig { seed: 10, ..quick() });
    assert_ne!(bits(&h1), bits(&h3));
}

#[test]
fn best_checkpoint_reproduces_logged_validation_mae() {
    let (g, d) = fixture();
    let (m, h) = run(&g, &d, &quick());
    let best = h.records.iter().map(|r| r.val.mae).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best().val.mae, best);
    let again = evaluate(&m, &d.val, &d.normalizer).unwrap();
    assert_eq!(again.mae.to_bits(), h.best().val.mae.to_bits());
    for set in [&d.train, &d.val, &d.test] {
        let e = evaluate(&m, set, &d.normalizer).unwrap();
        assert!(e.mae <= e.rmse_denorm + 1e-12);
    }
}

#[test]
fn huge_clip_threshold_changes_nothing() {
    let (g, d) = fixture();
    let (m1, h1) = run(&g, &d, &quick());
    let (m2, h2) = run(&g, &d, &TrainConfig { gradient_clip_norm: Some(1e300), ..quick() });
    assert_eq!(h1.records, h2.records);
    assert!(m1.params().iter().zip(m2.params()).all(|(a, b)| a.value == b.value));
}

#[test]
fn evaluation_between_runs_leaves_training_unchanged() {
    let (g, d) = fixture();
    let mut a = new_model(small_cfg(), g.clone(), 4).unwrap();
    let mut b = a.clone();
    for _ in 0..3 {
        evaluate(&b, &d.test, &d.normalizer).unwrap();
        evaluate(&b, &d.train, &d.normalizer).unwrap();
    }
    let cfg = TrainConfig { max_epochs: 1, ..quick() };
    let ha = train(&mut a, &d, &cfg).unwrap();
    let hb = train(&mut b, &d, &cfg).unwrap();
    assert_eq!(ha.records[1].train_loss.to_bits(), hb.records[1].train_loss.to_bits());
}

#[test]
fn early_stopping_and_callback() {
    let (g, d) = fixture();
    let mut m = new_model(small_cfg(), g, 4).unwrap();
    let mut seen = Vec::new();
    let cfg = TrainConfig { max_epochs: 40, early_stop_patience: 1, learning_rate: 0.05, ..quick() };
    let h = train_with(&mut m, &d, &cfg, |r| {
        seen.push(r.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, (0..h.records.len()).collect::<Vec<_>>());
    assert!(h.stopped_early, "{h:?}");
    assert_eq!(h.records.len() - 1, h.best_epoch + 1);
}

#[test]
fn empty_or_invalid_inputs_are_rejected() {
    let (g, mut d) = fixture();
    let mut m = new_model(small_cfg(), g, 4).unwrap();
    assert!(matches!(train(&mut m, &d, &TrainConfig { early_stop_patience: 0, ..quick() }), Err(Error::Config(_))));
    d.val = d.val.gather(&[]);
    assert!(matches!(train(&mut m, &d, &quick()), Err(Error::EmptyDataset)));
    assert!(matches!(evaluate(&m, &d.val, &d.normalizer), Err(Error::EmptyDataset)));
}

#[test]
fn constant_signal_is_learned() {
    let g = grid_graph(2, 2);
    let ids = g.node_ids().to_vec();
    let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let stamps = |n: usize| (0..n).map(|i| t0 + TimeDelta::minutes(5 * i as i64)).collect::<Vec<_>>();
    let constant = SpeedSeries::new(stamps(4000), ids.clone(), vec![50.0; 4000 * 4]).unwrap();
    let range: Vec<f64> = (0..2).flat_map(|i| vec![100.0 * i as f64; 4]).collect();
    let bounds = SpeedSeries::new(stamps(2), ids, range).unwrap();
    let norm = Normalizer::fit(&bounds, 0..2, NormMode::PerNode).unwrap();
    let d = Dataset::with_normalizer(&constant, 12, 1, [0.7, 0.1, 0.2], norm).unwrap();
    assert!(d.train.targets.data().iter().all(|&v| v == 0.5));
    let mut m = new_model(small_cfg(), g, 2).unwrap();
    let h = train(&mut m, &d, &TrainConfig { max_epochs: 20, early_stop_patience: 20, ..Default::default() }).unwrap();
    let last = h.records.last().unwrap().train_loss;
    assert!(last < 1e-6, "final train loss {last:e}");
}
