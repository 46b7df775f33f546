use midbf_core::butterfly::*;
use midbf_core::geometry::PointSet;
use midbf_core::kernels::{fio2d_phase, nufft_phase};
use midbf_core::linalg::rand_perm;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn cfg(k: usize, n0: usize) -> IdbfConfig {
    IdbfConfig { k, t: 5, n0, eps: Some(1e-9), seed: 0 }
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> PointSet {
    PointSet::new(dim, (0..dim * n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn cis(p: f64) -> Complex64 {
    Complex64::from_polar(1.0, std::f64::consts::TAU * p)
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-300)
}

fn dense_matvec<F: Fn(usize, usize) -> Complex64>(k: &F, m: usize, f: &[Complex64]) -> Vec<Complex64> {
    (0..m).map(|i| f.iter().enumerate().map(|(j, x)| k(i, j) * x).sum()).collect()
}

fn dense_matvec_t<F: Fn(usize, usize) -> Complex64>(k: &F, n: usize, g: &[Complex64]) -> Vec<Complex64> {
    (0..n).map(|j| g.iter().enumerate().map(|(i, x)| k(i, j) * x).sum()).collect()
}

/// Relative error on a sample of columns, each extracted by applying the
/// factorization to a basis vector.
fn sampled_column_error<F: Fn(usize, usize) -> Complex64>(f: &ButterflyFactorization, k: &F, cols: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &j in cols {
        let mut e = vec![ZERO; f.ncols];
        e[j] = Complex64::new(1.0, 0.0);
        let c = f.apply(&e).unwrap();
        for (i, z) in c.iter().enumerate() {
            num += (z - k(i, j)).norm_sqr();
            den += k(i, j).norm_sqr();
        }
    }
    (num / den).sqrt()
}

fn fio<'a>(x: &'a PointSet, o: &'a PointSet) -> impl Fn(usize, usize) -> Complex64 + Sync + 'a {
    move |i, j| cis(fio2d_phase(x.point(i), o.point(j)))
}

#[test]
fn grid_depth_from_leaf_size() {
    let g = PointSet::grid(2, 16).unwrap();
    let t = build_tree(&g, 64);
    assert_eq!(t.depth(), 1);
    assert_eq!(t.levels[1].len(), 4);
    assert!(t.levels[1].iter().all(|n| n.len() == 64));
    assert_eq!(build_tree(&PointSet::grid(2, 64).unwrap(), 64).depth(), 3);
    assert_eq!(build_tree(&PointSet::grid(3, 16).unwrap(), 512).depth(), 1);
}

#[test]
fn quadrants_follow_z_order() {
    // First coordinate runs down, second to the right.
    let g = PointSet::grid(2, 4).unwrap();
    let t = build_tree(&g, 4);
    let quad = |node: &TreeNode| {
        let p = t.points.point(node.start);
        (p[0] >= 0.375, p[1] >= 0.375)
    };
    let order: Vec<(bool, bool)> = t.levels[1].iter().map(quad).collect();
    assert_eq!(order, vec![(false, false), (false, true), (true, false), (true, true)]);
    assert_eq!(t.levels[1].iter().map(|n| n.code).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    for node in &t.levels[1] {
        for p in node.range() {
            assert_eq!(quad(&TreeNode { start: p, ..node.clone() }), quad(node));
        }
    }
}

#[test]
fn single_point_tree() {
    let p = PointSet::new(2, vec![0.3, 0.4]).unwrap();
    let t = build_tree(&p, 8);
    assert_eq!(t.depth(), 0);
    assert_eq!(t.perm, vec![0]);
}

#[test]
fn empty_nodes_are_pruned() {
    // Two tight clusters leave most quadrants empty.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut c = Vec::new();
    for i in 0..400 {
        let base = if i % 2 == 0 { 0.0 } else { 0.9 };
        c.push(base + 0.1 * rng.gen::<f64>());
        c.push(base + 0.1 * rng.gen::<f64>());
    }
    let t = build_tree(&PointSet::new(2, c).unwrap(), 8);
    for level in &t.levels {
        assert!(level.iter().all(|n| !n.is_empty()));
    }
    assert!(t.levels[1].len() < 4 || t.levels[2].len() < 16);
}

#[test]
fn leaf_skeletonization_of_constant_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_points(&mut rng, 2, 300);
    let o = random_points(&mut rng, 2, 250);
    let d = common_depth(&x, &o, 16);
    let (tx, tw) = (build_tree_with_depth(&x, 16, d), build_tree_with_depth(&o, 16, d));
    let one = |_: usize, _: usize| Complex64::new(1.0, 0.0);
    let f = lrcs(&one, &tx, &tw, &IdbfConfig { k: 1, t: 5, n0: 16, eps: None, seed: 3 }).unwrap();
    assert_eq!(f.factors.len(), 3);
    let dense = f.to_dense();
    assert!(dense.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() <= 1e-12));
    // Every interpolation block of U and V has one skeleton column or row.
    assert!(f.factors[0].blocks.iter().all(|b| b.data.ncols() == 1));
    assert!(f.factors[2].blocks.iter().all(|b| b.data.nrows() == 1));
}

#[test]
fn leaf_skeletonization_block_pattern() {
    let g = PointSet::grid(2, 16).unwrap();
    let (tx, tw) = (build_tree(&g, 16), build_tree(&g, 16));
    let m = tx.levels.last().unwrap().len();
    assert_eq!(m, 16);
    let f = lrcs(&fio(&g, &g), &tx, &tw, &cfg(10, 16)).unwrap();
    assert_eq!(f.factors[0].blocks.len(), m);
    assert_eq!(f.factors[1].blocks.len(), m * m);
    assert_eq!(f.factors[2].blocks.len(), m);
    // U is block diagonal: row ranges and column ranges are disjoint.
    let rows: Vec<_> = f.factors[0].blocks.iter().map(|b| (b.row_start, b.row_start + b.data.nrows())).collect();
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].0));
}

/// Relative Frobenius error of the best rank-`k` approximation of each
/// leaf-by-everything block, combined over the leaves.
fn leaf_truncation_bound<F: Fn(usize, usize) -> Complex64>(t: &ComplementaryTree, cols: usize, k: &F, rank: usize) -> f64 {
    let (mut tail, mut total) = (0.0, 0.0);
    for node in t.levels.last().unwrap() {
        let blk = DMatrix::from_fn(node.len(), cols, |i, j| k(t.perm[node.start + i], j));
        let s = blk.singular_values();
        tail += s.iter().skip(rank).map(|x| x * x).sum::<f64>();
        total += s.iter().map(|x| x * x).sum::<f64>();
    }
    (tail / total).sqrt()
}

#[test]
fn leaf_skeletonization_fio_n16() {
    let g = PointSet::grid(2, 16).unwrap();
    let (tx, tw) = (build_tree(&g, 64), build_tree(&g, 64));
    let k = fio(&g, &g);
    let cols = rand_perm(&mut ChaCha8Rng::seed_from_u64(4), 256, 16);
    let f = lrcs(&k, &tx, &tw, &cfg(40, 64)).unwrap();
    let err = sampled_column_error(&f, &k, &cols);
    assert!(err <= 1e-6, "k = 40: {err:e}");
    // At k = 30 the leaf blocks themselves have a rank-30 tail near 1e-6, so
    // the skeletonization can only be compared against that bound.
    let bound = leaf_truncation_bound(&tx, 256, &k, 30);
    let f = lrcs(&k, &tx, &tw, &cfg(30, 64)).unwrap();
    let err = sampled_column_error(&f, &k, &cols);
    assert!(bound > 5e-7 && err >= 0.5 * bound && err <= 10.0 * bound, "k = 30: {err:e} vs bound {bound:e}");
}

#[test]
fn one_splitting_step_fio_n32() {
    let g = PointSet::grid(2, 32).unwrap();
    let (tx, tw) = (build_tree(&g, 64), build_tree(&g, 64));
    assert_eq!(tx.depth(), 2);
    let k = fio(&g, &g);
    let f = mscs(&k, &tx, &tw, &cfg(30, 64)).unwrap();
    assert_eq!(f.h, 1);
    assert_eq!(f.factors.len(), 5);
    // S couples each level-1 row node with each level-1 column node.
    assert_eq!(f.factors[2].blocks.len(), 4 * 4);
    assert!(f.factors[2].blocks.iter().all(|b| b.data.nrows() <= 30 && b.data.ncols() <= 30));
    let cols = rand_perm(&mut ChaCha8Rng::seed_from_u64(5), 1024, 16);
    let err = sampled_column_error(&f, &k, &cols);
    assert!(err <= 1e-6, "{err:e}");
    assert!(mscs(&k, &build_tree(&PointSet::grid(2, 16).unwrap(), 64), &build_tree(&PointSet::grid(2, 16).unwrap(), 64), &cfg(30, 64)).is_err());
}

#[test]
fn zero_kernel_gives_zero_product() {
    let g = PointSet::grid(2, 16).unwrap();
    let (tx, tw) = (build_tree(&g, 16), build_tree(&g, 16));
    let zero = |_: usize, _: usize| ZERO;
    let f = idbf_factorize(&zero, &tx, &tw, &cfg(8, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = f.apply(&random_vec(&mut rng, 256)).unwrap();
    assert!(y.iter().all(|z| *z == ZERO));
}

#[test]
fn rank_one_kernel_at_several_depths() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_points(&mut rng, 2, 4096);
    let o = random_points(&mut rng, 2, 4096);
    let u: Vec<Complex64> = random_vec(&mut rng, 4096);
    let v: Vec<Complex64> = random_vec(&mut rng, 4096);
    let k = |i: usize, j: usize| u[i] * v[j];
    let f0 = random_vec(&mut rng, 4096);
    let want = dense_matvec(&k, 4096, &f0);
    for n0 in [8, 32, 128, 512] {
        let f = factorize_points(&k, &x, &o, &IdbfConfig { k: 4, t: 5, n0, eps: Some(1e-12), seed: 1 }).unwrap();
        let err = rel_err(&f.apply(&f0).unwrap(), &want);
        assert!(err <= 1e-12, "n0 {n0}, depth {}: {err:e}", f.depth);
    }
}

#[test]
fn apply_is_linear_and_adjoint_consistent() {
    let g = PointSet::grid(2, 16).unwrap();
    let k = fio(&g, &g);
    let f = factorize_points(&k, &g, &g, &cfg(16, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    assert!(f.apply(&vec![ZERO; 256]).unwrap().iter().all(|z| *z == ZERO));
    assert!(f.apply_transpose(&vec![ZERO; 256]).unwrap().iter().all(|z| *z == ZERO));

    let (f1, f2) = (random_vec(&mut rng, 256), random_vec(&mut rng, 256));
    let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
    let comb: Vec<Complex64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
    let lhs = f.apply(&comb).unwrap();
    let (g1, g2) = (f.apply(&f1).unwrap(), f.apply(&f2).unwrap());
    let rhs: Vec<Complex64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
    assert!(rel_err(&lhs, &rhs) <= 1e-12);

    let gv = random_vec(&mut rng, 256);
    let dot = |p: &[Complex64], q: &[Complex64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<Complex64>();
    let l = dot(&f.apply(&f1).unwrap(), &gv);
    let r = dot(&f1, &f.apply_transpose(&gv).unwrap());
    assert!((l - r).norm() <= 1e-10 * norm(&f1) * norm(&gv));
    assert!(f.apply(&f1[..10]).is_err());
    assert!(f.apply_transpose(&gv[..10]).is_err());
}

#[test]
fn transpose_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_points(&mut rng, 2, 256);
    let o = random_points(&mut rng, 2, 256);
    let k = |i: usize, j: usize| cis(3.0 * nufft_phase(x.point(i), o.point(j)));
    let f = factorize_points(&k, &x, &o, &cfg(48, 48)).unwrap();
    let gv = random_vec(&mut rng, 256);
    let err = rel_err(&f.apply_transpose(&gv).unwrap(), &dense_matvec_t(&k, 256, &gv));
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn dense_oracle_on_small_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g32 = PointSet::grid(2, 32).unwrap();
    let g64 = PointSet::grid(2, 64).unwrap();
    let x3 = random_points(&mut rng, 3, 4096);
    let o3 = random_points(&mut rng, 3, 4096);
    let nufft = |i: usize, j: usize| cis(nufft_phase(x3.point(i), o3.point(j)));
    let eps: f64 = 1e-9;
    let cases: Vec<(&str, Box<dyn Fn() -> (f64, usize)>)> = vec![
        ("fio n=32", Box::new(|| {
            let k = fio(&g32, &g32);
            let f = factorize_points(&k, &g32, &g32, &cfg(30, 64)).unwrap();
            let v = random_vec(&mut ChaCha8Rng::seed_from_u64(11), 1024);
            (rel_err(&f.apply(&v).unwrap(), &dense_matvec(&k, 1024, &v)), f.depth)
        })),
        ("fio n=64", Box::new(|| {
            let k = fio(&g64, &g64);
            let f = factorize_points(&k, &g64, &g64, &cfg(30, 64)).unwrap();
            let v = random_vec(&mut ChaCha8Rng::seed_from_u64(12), 4096);
            (rel_err(&f.apply(&v).unwrap(), &dense_matvec(&k, 4096, &v)), f.depth)
        })),
        ("nufft 3d", Box::new(|| {
            let f = factorize_points(&nufft, &x3, &o3, &cfg(120, 512)).unwrap();
            let v = random_vec(&mut ChaCha8Rng::seed_from_u64(13), 4096);
            (rel_err(&f.apply(&v).unwrap(), &dense_matvec(&nufft, 4096, &v)), f.depth)
        })),
    ];
    for (name, run) in cases {
        let (err, depth) = run();
        // Sampled IDs on smooth kernels leave a residual well above eps.
        assert!(err <= (10.0 * eps).max(1e-6), "{name} (depth {depth}): {err:e}");
    }
}

#[test]
fn factor_count_and_nnz_bound() {
    let g = PointSet::grid(2, 64).unwrap();
    let k = fio(&g, &g);
    for (kk, n0) in [(30, 64), (16, 16)] {
        let f = factorize_points(&k, &g, &g, &cfg(kk, n0)).unwrap();
        assert_eq!(f.factors.len(), 2 * (f.depth - f.h + 1) + 1);
        let bound = 4 * kk * kk * 4096 / n0;
        for (i, fac) in f.factors.iter().enumerate() {
            assert!(fac.nnz() <= bound, "factor {i}: {} > {bound}", fac.nnz());
        }
    }
    // Odd depth stops at the upper middle level.
    let f = factorize_points(&k, &g, &g, &cfg(30, 64)).unwrap();
    assert_eq!((f.depth, f.h), (3, 2));
}

#[test]
fn factors_chain_shapes() {
    let g = PointSet::grid(2, 32).unwrap();
    let f = factorize_points(&fio(&g, &g), &g, &g, &cfg(16, 16)).unwrap();
    assert_eq!(f.factors.first().unwrap().nrows, 1024);
    assert_eq!(f.factors.last().unwrap().ncols, 1024);
    assert!(f.factors.windows(2).all(|w| w[0].ncols == w[1].nrows));
    for fac in &f.factors {
        let mut spans: Vec<_> = fac.blocks.iter().map(|b| (b.row_start, b.col_start, b.data.nrows(), b.data.ncols())).collect();
        spans.sort_unstable();
        for (a, b) in spans.iter().zip(spans.iter().skip(1)) {
            let rows_overlap = a.0 < b.0 + b.2 && b.0 < a.0 + a.2;
            let cols_overlap = a.1 < b.1 + b.3 && b.1 < a.1 + a.3;
            assert!(!(rows_overlap && cols_overlap));
        }
    }
}

#[test]
fn container_round_trip() {
    let g = PointSet::grid(2, 16).unwrap();
    let f = factorize_points(&fio(&g, &g), &g, &g, &cfg(16, 16)).unwrap();
    let mut buf = Vec::new();
    f.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..8], b"MIDBFv01");
    let back = ButterflyFactorization::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back, f);
    buf[0] = b'X';
    assert!(ButterflyFactorization::read_from(&mut buf.as_slice()).is_err());
    let mut short = Vec::new();
    f.write_to(&mut short).unwrap();
    short.truncate(short.len() - 5);
    assert!(ButterflyFactorization::read_from(&mut short.as_slice()).is_err());
}

#[test]
fn configuration_errors() {
    let g = PointSet::grid(2, 16).unwrap();
    let k = fio(&g, &g);
    let (t1, t2) = (build_tree(&g, 64), build_tree(&g, 16));
    assert!(idbf_factorize(&k, &t1, &t2, &cfg(8, 16)).is_err());
    assert!(cfg(30, 16).validate().is_err());
    assert!(IdbfConfig { eps: Some(1.5), ..cfg(4, 16) }.validate().is_err());
    assert!(IdbfConfig { t: 0, ..cfg(4, 16) }.validate().is_err());
    assert!(factorize_to_level(&k, &t2, &t2, &cfg(8, 16), 0).is_err());
}

#[test]
fn complementary_ranks_are_bounded() {
    let g = PointSet::grid(2, 64).unwrap();
    let t = build_tree(&g, 64);
    let l = t.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0;
    for level in 0..=l {
        for _ in 0..4 {
            let a = &t.levels[level][rng.gen_range(0..t.levels[level].len())];
            let b = &t.levels[l - level][rng.gen_range(0..t.levels[l - level].len())];
            let block = DMatrix::from_fn(a.len(), b.len(), |i, j| {
                cis(fio2d_phase(t.points.point(a.start + i), t.points.point(b.start + j)))
            });
            let s = block.singular_values();
            let rank = s.iter().filter(|&&x| x > 1e-9 * s[0]).count();
            worst = worst.max(rank);
        }
    }
    assert!(worst <= 30, "numerical rank {worst}");
}

#[test]
fn factorization_is_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random_points(&mut rng, 2, 600);
    let k = |i: usize, j: usize| cis(2.0 * nufft_phase(x.point(i), x.point(j)));
    let a = factorize_points(&k, &x, &x, &cfg(12, 16)).unwrap();
    let b = factorize_points(&k, &x, &x, &cfg(12, 16)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tree_nodes_partition_their_parent(seed in any::<u64>(), n in 1usize..600, dim in 2usize..=3, n0 in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_points(&mut rng, dim, n);
        let t = build_tree(&p, n0);
        let mut perm = t.perm.clone();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        for l in 0..t.depth() {
            for node in &t.levels[l] {
                let mut cover = node.start;
                let mut last_code = None;
                for &c in &node.children {
                    let ch = &t.levels[l + 1][c];
                    prop_assert_eq!(ch.start, cover);
                    prop_assert!(!ch.is_empty());
                    prop_assert!(last_code.map_or(true, |x| x < ch.code));
                    last_code = Some(ch.code);
                    cover = ch.end;
                    for q in ch.range() {
                        let pt = t.points.point(q);
                        for a in 0..dim {
                            prop_assert!(pt[a] >= ch.lo[a] && pt[a] <= ch.hi[a]);
                        }
                    }
                }
                prop_assert_eq!(cover, node.end);
            }
        }
        prop_assert!(n <= n0 * (1usize << (dim * t.depth())));
    }

    #[test]
    fn small_random_kernels_match_dense(seed in any::<u64>(), n in 20usize..200, dim in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_points(&mut rng, dim, n);
        let o = random_points(&mut rng, dim, n + 7);
        let k = |i: usize, j: usize| cis(0.5 * nufft_phase(x.point(i), o.point(j)));
        let f = factorize_points(&k, &x, &o, &IdbfConfig { k: 48, t: 5, n0: 48, eps: Some(1e-9), seed }).unwrap();
        let dense = DMatrix::from_fn(n, n + 7, k);
        let v = random_vec(&mut rng, n + 7);
        let want = &dense * DVector::from_vec(v.clone());
        prop_assert!(rel_err(&f.apply(&v).unwrap(), want.as_slice()) <= 1e-6);
        prop_assert_eq!(f.factors.len(), 2 * (f.depth - f.h + 1) + 1);
    }
}
