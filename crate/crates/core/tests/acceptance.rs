//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on any failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikecl::data::{generate_synthetic, Dataset, SyntheticSpec};
use spikecl::eval::{profile_firing, sweep_inference};
use spikecl::losses::{bl_value, loss_temporal_contrastive, tet_value, EmbeddingBank};
use spikecl::oracle::{oracle_firing_rate, LOSS_ABS_TOL};
use spikecl::train::checkpoint::Checkpoint;
use spikecl::train::{fit_with_data, FitOptions, RunConfig};
use spikecl::verify::{contrastive_oracle_sweep, gradcheck_suite, lif_oracle_sweep};
use spikecl::Tensor;

const SEEDS: [u64; 3] = [1, 2, 3];

// Inference-latency experiment (event data, BL vs TCL).
const LAT_EPOCHS: usize = 40;
const LAT_PER_CLASS: usize = 200;
const LAT_LAMBDA: f64 = 0.05;
const LAT_TAU: f64 = 0.07;
const LAT_LR: f64 = 0.1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Result<Outcome, String>;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(r.iter().map(|x| x / n));
    }
    out
}

fn oracle_equivalence() -> Result<Outcome, String> {
    let start = Instant::now();
    let (n, worst) = contrastive_oracle_sweep(2024, 200).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        n >= 200 && worst <= LOSS_ABS_TOL && secs < 30.0,
        format!("{n} banks, max abs error {worst:.2e}, {secs:.2}s"),
    ))
}

fn symmetric_closed_forms() -> Result<Outcome, String> {
    let mut worst: f64 = 0.0;
    for b in [2usize, 3] {
        for t in [2usize, 3] {
            let z = Tensor::new(vec![1, t, b, 2], [0.6, 0.8].repeat(t * b)).unwrap();
            let bt = (b * t) as f64;
            let unsup = loss_temporal_contrastive(&EmbeddingBank::new(z.clone(), (0..b).collect()).unwrap(), 0.07, false)
                .map_err(|e| e.to_string())?;
            let sup = loss_temporal_contrastive(&EmbeddingBank::new(z, vec![0; b]).unwrap(), 0.07, true)
                .map_err(|e| e.to_string())?;
            worst = worst
                .max((unsup - (b * (t - 1)) as f64 * (bt - 1.0).ln()).abs())
                .max((sup - (bt - 1.0) * (bt - 1.0).ln()).abs());
        }
    }
    Ok(outcome(worst <= 1e-9, format!("max abs error {worst:.2e}")))
}

fn label_degeneracy() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (v, t, b, d) = (1 + k % 2, rng.gen_range(2..4), rng.gen_range(1..5), rng.gen_range(2..7));
        let z = Tensor::new(vec![v, t, b, d], unit_rows(&mut rng, v * t * b, d)).unwrap();
        let bank = EmbeddingBank::new(z, (0..b).collect()).unwrap();
        let tau = [0.05, 0.07, 0.5, 5.0][k % 4];
        let sup = loss_temporal_contrastive(&bank, tau, true).map_err(|e| e.to_string())?;
        let unsup = loss_temporal_contrastive(&bank, tau, false).map_err(|e| e.to_string())?;
        worst = worst.max((sup - unsup).abs());
    }
    Ok(outcome(worst <= 1e-12, format!("50 banks, max abs difference {worst:.2e}")))
}

fn gradient_audit() -> Result<Outcome, String> {
    let checks = gradcheck_suite(2024);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let worst = checks
        .iter()
        .filter(|c| c.name.starts_with("grad/") && !c.name.contains("heaviside"))
        .map(|c| c.error)
        .fold(0.0, f64::max);
    Ok(outcome(
        failed.is_empty(),
        format!(
            "{}/{} checks, worst relative error {worst:.2e}{}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" ")) }
        ),
    ))
}

fn lif_conformance() -> Result<Outcome, String> {
    let mismatches = lif_oracle_sweep(2024, 100).map_err(|e| e.to_string())?;
    Ok(outcome(mismatches == 0, format!("{mismatches} of 100 sequences differ")))
}

fn small_synthetic(temporal: bool, per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes: 3,
        samples_per_class: per_class,
        image_side: 8,
        temporal,
        seed,
        event_steps: 4,
        channels: 3,
        noise: 0.1,
    })
    .unwrap()
}

fn small_run(family: &str, lambda: &str, epochs: usize) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{"loss": {{"family": "{family}"{lambda}}},
            "optim": {{"epochs": {epochs}, "batch_size": 16, "seed": 42}},
            "time_steps": 3,
            "data": {{"train": {{"path": "unused"}}, "eval": {{"path": "unused"}}}}}}"#
    ))
    .unwrap()
}

fn degeneracy_chain() -> Result<Outcome, String> {
    let train = small_synthetic(false, 20, 1);
    let eval = small_synthetic(false, 8, 2);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = FitOptions::default();
    let bl = fit_with_data(&small_run("BL", "", 5), &train, &eval, &dir.path().join("bl"), &opts)
        .map_err(|e| e.to_string())?;
    let tcl = fit_with_data(&small_run("TCL", r#", "lambda": 0.0"#, 5), &train, &eval, &dir.path().join("tcl"), &opts)
        .map_err(|e| e.to_string())?;
    let a = Checkpoint::load(&bl.last).map_err(|e| e.to_string())?;
    let b = Checkpoint::load(&tcl.last).map_err(|e| e.to_string())?;
    let params_equal = a.params.iter().all(|p| b.params.iter().any(|q| q.name == p.name && q.value == p.value));
    let losses_equal = bl
        .history
        .iter()
        .zip(&tcl.history)
        .all(|(x, y)| x.total_loss.to_bits() == y.total_loss.to_bits() && x.eval_acc == y.eval_acc);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tet_gap: f64 = 0.0;
    for _ in 0..20 {
        let (t, bsz, c) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(2..7));
        let step: Vec<f64> = (0..bsz * c).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let logits = Tensor::new(vec![t, bsz, c], step.repeat(t)).unwrap();
        let labels: Vec<usize> = (0..bsz).map(|_| rng.gen_range(0..c)).collect();
        let bl = bl_value(&logits, &labels).map_err(|e| e.to_string())?;
        let tet = tet_value(&logits, &labels).map_err(|e| e.to_string())?;
        tet_gap = tet_gap.max((bl - tet).abs());
    }
    Ok(outcome(
        params_equal && losses_equal && tet_gap <= 1e-12,
        format!(
            "lambda=0 TCL vs BL over 5 epochs: parameters {}, losses {}; TET vs BL max gap {tet_gap:.2e}",
            if params_equal { "bit-identical" } else { "DIFFER" },
            if losses_equal { "bit-identical" } else { "DIFFER" }
        ),
    ))
}

fn event_data(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes: 4,
        samples_per_class: per_class,
        image_side: 8,
        temporal: true,
        seed,
        event_steps: 4,
        channels: 3,
        noise: 0.1,
    })
    .unwrap()
}

fn latency_trend() -> Result<Outcome, String> {
    let start = Instant::now();
    let train = event_data(LAT_PER_CLASS, 11);
    let eval = event_data(100, 12);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut acc1 = [Vec::new(), Vec::new()];
    let mut drop = [Vec::new(), Vec::new()];
    for (k, family) in ["BL", "TCL"].iter().enumerate() {
        for seed in SEEDS {
            let run = RunConfig::from_json(&format!(
                r#"{{"loss": {{"family": "{family}", "lambda": {LAT_LAMBDA}, "tau": {LAT_TAU}}},
                    "optim": {{"epochs": {LAT_EPOCHS}, "batch_size": 32, "seed": {seed}, "lr": {LAT_LR}}},
                    "time_steps": 4,
                    "augment": {{"preset": "none"}},
                    "data": {{"train": {{"path": "unused"}}, "eval": {{"path": "unused"}}}}}}"#
            ))
            .map_err(|e| e.to_string())?;
            let out = dir.path().join(format!("{family}-{seed}"));
            let s = fit_with_data(&run, &train, &eval, &out, &FitOptions::default()).map_err(|e| e.to_string())?;
            let net = Checkpoint::load(&s.last).and_then(|c| c.network()).map_err(|e| e.to_string())?;
            let sweep = sweep_inference(&net, &eval, 4).map_err(|e| e.to_string())?;
            let (a1, a4) = (sweep.accuracy_at(1).unwrap(), sweep.accuracy_at(4).unwrap());
            acc1[k].push(a1);
            drop[k].push(a4 - a1);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (drop_bl, drop_tcl) = (median(drop[0].clone()), median(drop[1].clone()));
    let (a1_bl, a1_tcl) = (median(acc1[0].clone()), median(acc1[1].clone()));
    Ok(outcome(
        drop_tcl < drop_bl && a1_tcl >= a1_bl + 2.0 && secs <= 1800.0,
        format!(
            "median acc(T'=4)-acc(T'=1): BL {drop_bl:.2} vs TCL {drop_tcl:.2}; median acc(T'=1): BL {a1_bl:.2} vs TCL {a1_tcl:.2} \
             (BL T'=1 {:?}, TCL T'=1 {:?}); {secs:.0}s",
            acc1[0], acc1[1]
        ),
    ))
}

// Augmentation experiment (static data, full policy, BL / TCL / STCL).
const AUG_EPOCHS: usize = 30;
const AUG_T: usize = 4;
const AUG_LAMBDA_TCL: f64 = 0.004;
const AUG_LAMBDA_STCL: f64 = 0.02;
const AUG_CLASSES: usize = 10;
const AUG_PER_CLASS: usize = 30;
const AUG_NOISE: f64 = 0.3;

fn static_data(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes: AUG_CLASSES,
        samples_per_class: per_class,
        image_side: 12,
        temporal: false,
        seed,
        event_steps: 4,
        channels: 3,
        noise: AUG_NOISE,
    })
    .unwrap()
}

fn augmentation_trend() -> Result<Outcome, String> {
    let start = Instant::now();
    let train = static_data(AUG_PER_CLASS, 21);
    let eval = static_data(50, 22);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for (family, lambda) in [("BL", 0.0), ("TCL", AUG_LAMBDA_TCL), ("STCL", AUG_LAMBDA_STCL)] {
        let mut accs = Vec::new();
        for seed in SEEDS {
            let run = RunConfig::from_json(&format!(
                r#"{{"loss": {{"family": "{family}", "lambda": {lambda}}},
                    "optim": {{"epochs": {AUG_EPOCHS}, "batch_size": 32, "seed": {seed}}},
                    "time_steps": {AUG_T},
                    "augment": {{"preset": "full"}},
                    "data": {{"train": {{"path": "unused"}}, "eval": {{"path": "unused"}}}}}}"#
            ))
            .map_err(|e| e.to_string())?;
            let out = dir.path().join(format!("{family}-{seed}"));
            let s = fit_with_data(&run, &train, &eval, &out, &FitOptions::default()).map_err(|e| e.to_string())?;
            accs.push(s.history.last().map(|r| r.eval_acc).unwrap_or(0.0));
        }
        finals.push((family, median(accs.clone()), accs));
    }
    let (bl, tcl, stcl) = (finals[0].1, finals[1].1, finals[2].1);
    // a tie (within 0.5 points) is tolerated for one adjacent pair only
    let ge = |a: f64, b: f64| a >= b;
    let tie = |a: f64, b: f64| a < b && b - a <= 0.5;
    let ordered = (ge(stcl, tcl) || tie(stcl, tcl)) && (ge(tcl, bl) || tie(tcl, bl));
    let ties = usize::from(tie(stcl, tcl)) + usize::from(tie(tcl, bl));
    let passed = ordered && ties <= 1 && stcl >= bl;
    let secs = start.elapsed().as_secs_f64();
    let detail = finals
        .iter()
        .map(|(f, m, a)| format!("{f} {m:.2} {a:?}"))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(outcome(passed, format!("median final accuracy: {detail}; {secs:.0}s")))
}

fn firing_accounting() -> Result<Outcome, String> {
    // a briefly trained network, so that every block actually fires
    let ds = small_synthetic(true, 30, 9);
    let run = RunConfig::from_json(
        r#"{"loss": {"family": "BL"},
            "optim": {"epochs": 3, "batch_size": 16, "seed": 3},
            "time_steps": 4,
            "data": {"train": {"path": "unused"}, "eval": {"path": "unused"}}}"#,
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("run");
    let s = fit_with_data(&run, &ds, &ds, &out, &FitOptions::default()).map_err(|e| e.to_string())?;
    let net = Checkpoint::load(&s.last)
        .and_then(|ck| ck.network())
        .map_err(|e| e.to_string())?;
    let mut stored: Vec<Vec<f64>> = Vec::new();
    let mut sink = |spikes: &[Tensor]| {
        stored.resize(spikes.len(), Vec::new());
        for (b, s) in spikes.iter().enumerate() {
            stored[b].extend_from_slice(s.data());
        }
    };
    let report = profile_firing(&net, &ds, 4, Some(&mut sink)).map_err(|e| e.to_string())?;
    let recount: Vec<f64> = stored.iter().map(|s| oracle_firing_rate(s)).collect();
    let worst = report
        .rates
        .iter()
        .zip(&recount)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    let blocks = net.num_blocks();
    let shape_ok = lines.len() == 2
        && lines[0].split(',').count() == blocks + 1
        && lines[0].ends_with(",accuracy")
        && lines[1].split(',').count() == blocks + 1;
    Ok(outcome(
        worst <= 1e-12 && shape_ok && recount.len() == blocks && recount.iter().all(|&r| r > 0.0),
        format!("rates {:?}, max recount difference {worst:.2e}, header {}", report.rates, lines[0]),
    ))
}

fn reproducibility() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"loss": {"family": "STCL", "lambda": 0.5},
            "optim": {"epochs": 2, "batch_size": 16, "seed": 8},
            "time_steps": 3,
            "augment": {"preset": "full"},
            "data": {"train": {"synthetic": {"classes": 3, "samples_per_class": 16, "image_side": 8, "temporal": false, "seed": 1}},
                     "eval": {"synthetic": {"classes": 3, "samples_per_class": 8, "image_side": 8, "temporal": false, "seed": 2}}}}"#,
    )
    .map_err(|e| e.to_string())?;
    let train = |out: &str| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_spikecl"))
            .args(["train", "--config", "cfg.json", "--out", out, "--deterministic"])
            .current_dir(d)
            .env("RUST_LOG", "warn")
            .status()
            .map_err(|e| e.to_string())?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("train exited with {status}"))
        }
    };
    train("a")?;
    train("b")?;
    let same = |f: &str| -> Result<bool, String> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
        Ok(read(&d.join("a").join(f))? == read(&d.join("b").join(f))?)
    };
    let files = ["last.ck", "best.ck", "metrics.csv", "metrics.jsonl"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| !same(f).unwrap_or(false))
        .collect();
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "checkpoints and metrics byte-identical across two runs".to_string()
        } else {
            format!("differing files: {differing:?}")
        },
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("symmetric closed forms", symmetric_closed_forms),
        ("label degeneracy", label_degeneracy),
        ("gradient audit", gradient_audit),
        ("LIF conformance", lif_conformance),
        ("degeneracy chain", degeneracy_chain),
        ("inference latency trend", latency_trend),
        ("augmentation trend", augmentation_trend),
        ("firing-rate accounting", firing_accounting),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if !o.passed {
            failures += 1;
        }
        println!("{} criterion {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
