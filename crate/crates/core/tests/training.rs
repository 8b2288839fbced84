mod common;

use spikecl::data::eval_batch;
use spikecl::losses::{LossConfig, LossFamily};
use spikecl::snn::{EncoderConfig, LifParams};
use spikecl::train::checkpoint::Checkpoint;
use spikecl::train::metrics::read_metrics_csv;
use spikecl::train::{fit_with_data, FitOptions, OptimConfig, Trainer};

fn trainer(family: LossFamily, ds: &spikecl::data::Dataset) -> Trainer {
    let optim = OptimConfig {
        seed: 9,
        ..OptimConfig::default()
    };
    Trainer::initialise(
        &EncoderConfig::tiny_sew(),
        &LifParams::default(),
        &ds.step_shape(),
        ds.class_count,
        LossConfig::new(family),
        optim,
        3,
    )
    .unwrap()
}

#[test]
fn resume_from_checkpoint_continues_identically() {
    let ds = common::synthetic(3, 8, false, 4);
    let batches: Vec<Vec<usize>> = vec![(0..8).collect(), (8..16).collect(), (16..24).collect()];
    let run_batch = |t: &mut Trainer, idx: &[usize]| {
        let inputs = eval_batch(&ds, idx, 3).unwrap();
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
        let views = vec![inputs; t.loss.family.views()];
        t.train_batch(&views, &labels, 0.05).unwrap()
    };
    for family in [LossFamily::Bl, LossFamily::Stcl] {
        let mut straight = trainer(family, &ds);
        for b in &batches {
            run_batch(&mut straight, b);
        }

        let mut first = trainer(family, &ds);
        run_batch(&mut first, &batches[0]);
        let bytes = first.checkpoint().to_bytes();
        drop(first);
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = Trainer::from_checkpoint(&ck, LossConfig::new(family), straight.optim.clone()).unwrap();
        assert_eq!(resumed.step, 1);
        for b in &batches[1..] {
            run_batch(&mut resumed, b);
        }
        assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
    }
}

#[test]
fn zero_lambda_tcl_tracks_baseline_bitwise() {
    let train = common::synthetic(3, 16, false, 1);
    let eval = common::synthetic(3, 8, false, 2);
    let dir = tempfile::tempdir().unwrap();
    let bl = fit_with_data(&common::run_config("BL", "", 2, 5), &train, &eval, &dir.path().join("bl"), &FitOptions::default()).unwrap();
    let tcl = fit_with_data(
        &common::run_config("TCL", r#", "lambda": 0.0"#, 2, 5),
        &train,
        &eval,
        &dir.path().join("tcl"),
        &FitOptions::default(),
    )
    .unwrap();
    let a = Checkpoint::load(&bl.last).unwrap();
    let b = Checkpoint::load(&tcl.last).unwrap();
    for p in &a.params {
        let q = b.params.iter().find(|q| q.name == p.name).unwrap();
        assert_eq!(p.value, q.value, "{}", p.name);
    }
    for (x, y) in bl.history.iter().zip(&tcl.history) {
        assert_eq!(x.ce_loss.to_bits(), y.ce_loss.to_bits());
        assert_eq!(x.total_loss.to_bits(), y.total_loss.to_bits());
        assert!(y.cl_loss > 0.0);
    }
}

#[test]
fn logged_total_recomposes() {
    let train = common::synthetic(3, 16, false, 1);
    let eval = common::synthetic(3, 8, false, 2);
    let dir = tempfile::tempdir().unwrap();
    let run = common::run_config("TCL", r#", "lambda": 0.3"#, 2, 1);
    let s = fit_with_data(&run, &train, &eval, dir.path(), &FitOptions::default()).unwrap();
    for r in &s.history {
        // epoch means of per-batch identities
        assert!((r.total_loss - (r.ce_loss + 0.3 * r.cl_loss)).abs() < 1e-12);
    }
    let csv = read_metrics_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(csv.len(), 2);
    assert!(dir.path().join("best.ck").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn five_epochs_reduce_training_loss() {
    let train = common::synthetic(3, 16, false, 1);
    let eval = common::synthetic(3, 8, false, 2);
    let dir = tempfile::tempdir().unwrap();
    let s = fit_with_data(&common::run_config("BL", "", 5, 42), &train, &eval, dir.path(), &FitOptions::default()).unwrap();
    let first = s.history.first().unwrap().total_loss;
    let last = s.history.last().unwrap().total_loss;
    assert!(last < first, "{first} -> {last}");
    // regression pin; a change here means training numerics moved
    assert!((first - 1.093_574_746_640_402).abs() < 1e-9, "{first}");
    assert!((last - 0.919_773_199_100_464).abs() < 1e-9, "{last}");
}

#[test]
fn non_finite_loss_is_reported_with_context() {
    let train = common::synthetic(3, 16, false, 1);
    let eval = common::synthetic(3, 8, false, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut run = common::run_config("BL", "", 3, 1);
    run.optim.lr = 1e200;
    run.optim.lr_schedule = spikecl::train::LrSchedule::Constant;
    match fit_with_data(&run, &train, &eval, dir.path(), &FitOptions::default()) {
        Err(spikecl::Error::Numerical(m)) => assert!(m.contains("epoch"), "{m}"),
        Err(spikecl::Error::NonFinite { .. }) => {}
        other => panic!("expected a numerical failure, got {:?}", other.map(|s| s.history.len())),
    }
}
