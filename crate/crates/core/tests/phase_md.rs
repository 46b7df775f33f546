use std::sync::Arc;

use midbf_core::geometry::{recovery_path, PointSet, RecoveryPath};
use midbf_core::kernels::{make_accessor, KernelKind, Scenario};
use midbf_core::phase_md::*;
use midbf_core::wrapped::{wrap, DensePhase, FnPhase, PhaseAccessor};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain(n: usize) -> RecoveryPath {
    RecoveryPath { root: 0, rows: (1..n).map(|i| [i - 1, i]).collect() }
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> PointSet {
    PointSet::new(dim, (0..dim * n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn circ(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    d.min(1.0 - d)
}

#[test]
fn constant_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = recovery_path(&random_points(&mut rng, 2, 30)).unwrap();
    let r = recover_vector_md(&[0.3; 30], TAU_MD, &p).unwrap();
    assert!(r.v.iter().all(|&x| x == 0.3));
    assert_eq!(r.d, vec![p.root]);
}

#[test]
fn chain_unwraps_across_one() {
    let r = recover_vector_md(&[0.9, 0.1, 0.3], TAU_MD, &chain(3)).unwrap();
    let want = [0.9, 1.1, 1.3];
    assert!(r.v.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-14), "{:?}", r.v);
    assert_eq!(r.d, vec![0]);
}

#[test]
fn chain_jump_is_flagged() {
    // Third node jumps by one half.
    let u = [0.1, 0.12, 0.62, 0.64, 0.66];
    let r = recover_vector_md(&u, TAU_MD, &chain(5)).unwrap();
    assert_eq!(r.d, vec![0, 2]);
}

#[test]
fn vector_shape_and_range_errors() {
    assert!(recover_vector_md(&[0.1, 0.2], TAU_MD, &chain(3)).is_err());
    assert!(recover_vector_md(&[0.1, 1.2, 0.3], TAU_MD, &chain(3)).is_err());
}

#[test]
fn threshold_escalation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x1 = random_points(&mut rng, 2, 200);
    let x2 = random_points(&mut rng, 2, 200);
    let (p1, p2) = (recovery_path(&x1).unwrap(), recovery_path(&x2).unwrap());
    let rows = [0, 50, 120];
    let cols = [3, 77];

    let smooth = FnPhase { m: 200, n: 200, f: |i: usize, j: usize| 0.3 * x1.point(i)[0] * x2.point(j)[1] };
    let c = escalate_tau(&smooth, &rows, &cols, &p1, &p2, DEFAULT_DISCONTINUITY_CAP).unwrap();
    assert_eq!(c.tau, TAU_MD);
    assert_eq!(c.escalations, 0);

    // Three leaves of the row path carry a jump of one half.
    let leaves: Vec<usize> = p1.rows.iter().map(|r| r[1]).filter(|&e| p1.rows.iter().all(|r| r[0] != e)).collect();
    let jumps = [leaves[5], leaves[20], leaves[40]];
    let jumpy = FnPhase {
        m: 200,
        n: 200,
        f: |i: usize, j: usize| 0.2 * x1.point(i)[1] + 0.1 * x2.point(j)[0] + if jumps.contains(&i) { 0.5 } else { 0.0 },
    };
    let c = escalate_tau(&jumpy, &rows, &cols, &p1, &p2, 10).unwrap();
    assert_eq!(c.tau, TAU_MD);
    assert_eq!(c.row_discontinuities + c.col_discontinuities, 3);

    let noise: Vec<f64> = (0..200 * 200).map(|_| rng.gen()).collect();
    let noisy = FnPhase { m: 200, n: 200, f: |i: usize, j: usize| noise[i * 200 + j] };
    let c = escalate_tau(&noisy, &rows, &cols, &p1, &p2, 0).unwrap();
    assert!(c.tau <= TAU_MAX + 1e-15);
    assert!(c.escalations <= 10);
}

#[test]
fn jump_splits_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x1 = random_points(&mut rng, 2, 120);
    let x2 = random_points(&mut rng, 2, 90);
    let phase = FnPhase { m: 120, n: 90, f: |i: usize, j: usize| {
        let (x, y) = (x1.point(i), x2.point(j));
        0.1 * (x[0] + y[1]) + if x[0] > 0.5 { 0.5 } else { 0.0 }
    } };
    let rec = recover_matrix_md(&phase, &[0, 7, 33], &[1, 2, 50], &x1, &x2, TAU_MD).unwrap();
    let part = &rec.partition;
    assert!(rec.row_discontinuities() >= 1);
    assert_eq!(rec.col_discontinuities(), 0);
    let mut seen = vec![0; 120];
    for p in &part.row_paths {
        for v in p.nodes() {
            seen[v] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    for (s, rows) in part.rows_per_block.iter().enumerate() {
        assert!(rows.iter().all(|&i| part.row_block_of(i) == s));
    }
    assert!(intersections_agree(&rec));
}

fn intersections_agree(rec: &RecoveredPhaseMD) -> bool {
    rec.rows.iter().all(|(i, row)| rec.cols.iter().all(|(j, col)| row[*j].to_bits() == col[*i].to_bits()))
}

fn max_path_step(a: &DMatrix<f64>, p1: &RecoveryPath, p2: &RecoveryPath) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for &[b, e] in &p1.rows {
            worst = worst.max((a[(e, j)] - a[(b, j)]).abs());
        }
    }
    for i in 0..a.nrows() {
        for &[b, e] in &p2.rows {
            worst = worst.max((a[(i, e)] - a[(i, b)]).abs());
        }
    }
    worst
}

#[test]
fn path_step_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut checked = 0;
    while checked < 100 {
        let dim = rng.gen_range(2..=3);
        let (m, n) = (rng.gen_range(20..150), rng.gen_range(20..150));
        let x1 = random_points(&mut rng, dim, m);
        let x2 = random_points(&mut rng, dim, n);
        let (p1, p2) = (recovery_path(&x1).unwrap(), recovery_path(&x2).unwrap());
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let a = DMatrix::from_fn(m, n, |i, j| {
            let (x, y) = (x1.point(i), x2.point(j));
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            c[0] * dot + c[1] * x[0] * x[0] + c[2] * (y[1] * 2.0).sin()
        });
        if max_path_step(&a, &p1, &p2) >= TAU_MD {
            continue;
        }
        let rows = midbf_core::linalg::rand_perm(&mut rng, m, 8);
        let cols = midbf_core::linalg::rand_perm(&mut rng, n, 8);
        let rec = recover_matrix_md_with_paths(&DensePhase::new(a.clone()), &rows, &cols, &p1, &p2, TAU_MD).unwrap();
        assert_eq!(rec.row_discontinuities() + rec.col_discontinuities(), 0);
        assert!(intersections_agree(&rec), "matrix {checked}: row/column values differ");
        let shift = (rec.rows[0].1[0] - a[(rec.rows[0].0, 0)]).round();
        for (i, row) in &rec.rows {
            assert!(row.iter().enumerate().all(|(j, x)| (x - a[(*i, j)] - shift).abs() < 1e-9));
        }
        checked += 1;
    }
}

#[test]
fn recovered_rows_are_mod_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x1 = random_points(&mut rng, 3, 300);
    let x2 = random_points(&mut rng, 3, 300);
    let phase = FnPhase { m: 300, n: 300, f: |i: usize, j: usize| {
        let (x, y) = (x1.point(i), x2.point(j));
        4.0 * x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() + if y[2] > 0.7 { 0.5 } else { 0.0 }
    } };
    let rec = recover_matrix_md(&phase, &[0, 10, 20, 30], &[5, 15, 25], &x1, &x2, TAU_MD).unwrap();
    for (i, row) in &rec.rows {
        let u = phase.row(*i);
        assert!(row.iter().zip(&u).all(|(a, b)| circ(*a, *b) <= 1e-12));
    }
    for (j, col) in &rec.cols {
        let u = phase.col(*j);
        assert!(col.iter().zip(&u).all(|(a, b)| circ(*a, *b) <= 1e-12));
    }
}

#[test]
fn discontinuity_count_monotone_in_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x1 = random_points(&mut rng, 3, 512);
    let x2 = random_points(&mut rng, 3, 512);
    let (p1, p2) = (recovery_path(&x1).unwrap(), recovery_path(&x2).unwrap());
    let phase = FnPhase { m: 512, n: 512, f: |i: usize, j: usize| 1.7 * x1.point(i).iter().zip(x2.point(j)).map(|(p, q)| p * q).sum::<f64>() };
    let mut last = usize::MAX;
    for k in 0..=20 {
        let tau = 0.05 + 0.02 * k as f64;
        let (dr, dc) = detect_breaks(&phase, &[0], &[0], &p1, &p2, tau).unwrap();
        let count = dr.len() + dc.len() - 2;
        assert!(count <= last, "tau {tau}: {count} > {last}");
        last = count;
    }
}

#[test]
fn flat_kernel_gives_zero_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_points(&mut rng, 2, 200);
    let o = random_points(&mut rng, 2, 200);
    let acc = make_accessor(KernelKind::Custom(Arc::new(|_: &[f64], _: &[f64]| 0.0)), x.clone(), o.clone(), Scenario::Matvec).unwrap();
    let cfg = PhaseConfig { rank: 2, q_oversample: 2, tau: TauRule::Fixed(TAU_MD) };
    let f = low_rank_phase_factorization(&acc, &x, &o, &cfg, &mut rng).unwrap();
    let mut worst = 0.0f64;
    for i in 0..200 {
        for j in 0..200 {
            worst = worst.max(circ(f.phase.phase(i, j), 0.0));
        }
    }
    assert!(worst <= 1e-14, "{worst:e}");
}

#[test]
fn factorization_rejects_bad_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_points(&mut rng, 2, 10);
    let acc = make_accessor(KernelKind::Nufft, x.clone(), x.clone(), Scenario::Matvec).unwrap();
    let cfg = PhaseConfig { rank: 11, ..PhaseConfig::default() };
    assert!(low_rank_phase_factorization(&acc, &x, &x, &cfg, &mut rng).is_err());
}

#[test]
fn nufft_phase_is_recovered_at_rank_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_points(&mut rng, 3, 1000);
    let o = random_points(&mut rng, 3, 1000);
    let acc = make_accessor(KernelKind::Nufft, x.clone(), o.clone(), Scenario::Matvec).unwrap();
    let cfg = PhaseConfig { rank: 4, q_oversample: 2, tau: TauRule::Fixed(TAU_MD) };
    let f = low_rank_phase_factorization(&acc, &x, &o, &cfg, &mut rng).unwrap();
    assert_eq!(f.row_discontinuities + f.col_discontinuities, 0);
    let mut worst = 0.0f64;
    for i in (0..1000).step_by(7) {
        for j in (0..1000).step_by(11) {
            let exact: f64 = x.point(i).iter().zip(o.point(j)).map(|(p, q)| p * q).sum();
            worst = worst.max(circ(f.phase.phase(i, j), exact));
        }
    }
    assert!(worst <= 1e-10, "{worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_recovery_is_mod_consistent(seed in any::<u64>(), n in 1usize..80, tau in 0.05f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 2, n);
        let p = recovery_path(&pts).unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let r = recover_vector_md(&u, tau, &p).unwrap();
        prop_assert!(r.v.iter().zip(&u).all(|(a, b)| circ(*a, *b) <= 1e-12));
        prop_assert_eq!(r.d[0], p.root);
        // Unflagged steps stay below the threshold.
        for &[b, e] in &p.rows {
            if !r.d.contains(&e) {
                prop_assert!((r.v[e] - r.v[b]).abs() < tau);
            }
        }
    }
}
