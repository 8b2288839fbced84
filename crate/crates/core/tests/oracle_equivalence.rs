mod common;

use spikecl::losses::{loss_temporal_contrastive, EmbeddingBank};
use spikecl::oracle::{oracle_ce, oracle_contrastive, oracle_lif, LOSS_ABS_TOL};
use spikecl::verify::{conv_block_oracle_check, contrastive_oracle_sweep, lif_oracle_sweep};
use spikecl::Tensor;

#[test]
fn oracle_contrastive_symmetric_cases() {
    let row = vec![0.6, 0.8];
    let z = vec![vec![row.clone(); 2]; 2];
    let unsup = oracle_contrastive(&z, &[0, 1], 1, 0.07, false);
    let sup = oracle_contrastive(&z, &[0, 0], 1, 0.07, true);
    assert!((unsup - 2.0 * 3f64.ln()).abs() < 1e-12);
    assert!((sup - 3.0 * 3f64.ln()).abs() < 1e-12);
}

#[test]
fn oracle_lif_examples() {
    let (_, spk, _) = oracle_lif(&[0.6, 0.6, 0.6], 0.5, 1.0);
    assert_eq!(spk, vec![0.0, 0.0, 1.0]);
    let (pre, spk, mem) = oracle_lif(&[0.0; 4], 0.5, 1.0);
    assert!(pre.iter().chain(&spk).chain(&mem).all(|&v| v == 0.0));
    let (pre, spk, _) = oracle_lif(&[2.0; 4], 0.5, 1.0);
    assert_eq!(pre, vec![2.0; 4]);
    assert_eq!(spk, vec![1.0; 4]);
}

#[test]
fn oracle_ce_examples() {
    assert!((oracle_ce(&[0.3; 5], 2) - 5f64.ln()).abs() < 1e-12);
    assert!((oracle_ce(&[1.0, 0.0], 0) - 0.313_261_687_518_222_8).abs() < 1e-12);
    assert!(oracle_ce(&[1e6, 0.0, 0.0], 0) < 1e-6);
}

#[test]
fn engine_contrastive_matches_oracle() {
    let (n, worst) = contrastive_oracle_sweep(7, 240).unwrap();
    assert!(n >= 240);
    assert!(worst <= LOSS_ABS_TOL, "worst {worst:e}");
}

#[test]
fn engine_stcl_bank_matches_oracle() {
    // two views, B=2, T=2, labels [0,1], tau 0.07
    let z = Tensor::new(
        vec![2, 2, 2, 2],
        vec![
            1.0, 0.0, 0.0, 1.0, 0.6, 0.8, -0.8, 0.6, //
            0.8, 0.6, 0.0, -1.0, -0.6, 0.8, 1.0, 0.0,
        ],
    )
    .unwrap();
    let bank = EmbeddingBank::new(z.clone(), vec![0, 1]).unwrap();
    let row = |v: usize, t: usize, b: usize| z.data()[((v * 2 + t) * 2 + b) * 2..][..2].to_vec();
    let nested: Vec<Vec<Vec<f64>>> = (0..2)
        .flat_map(|v| (0..2).map(move |b| (v, b)))
        .map(|(v, b)| (0..2).map(|t| row(v, t, b)).collect())
        .collect();
    for sup in [true, false] {
        let engine = loss_temporal_contrastive(&bank, 0.07, sup).unwrap();
        let oracle = oracle_contrastive(&nested, &[0, 1], 2, 0.07, sup);
        assert!((engine - oracle).abs() < LOSS_ABS_TOL);
    }
}

#[test]
fn lif_traces_are_bit_identical() {
    assert_eq!(lif_oracle_sweep(3, 100).unwrap(), 0);
}

#[test]
fn conv_block_forward_matches_oracle() {
    for seed in 0..3 {
        let e = conv_block_oracle_check(seed).unwrap();
        assert!(e <= 1e-12, "seed {seed}: {e:e}");
    }
}
