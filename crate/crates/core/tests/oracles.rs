//! Solvers checked against dense nalgebra computations.

mod common;

use common::*;
use nalgebra::DMatrix;

use fastwalk_core::adaptive::{select_m, AdaptivePolicy};
use fastwalk_core::aggregate::{build_aggregation, coarsen_basis, propagate, Aggregation, Coarsening};
use fastwalk_core::fast::{lattice_laplacian, precompute, solve_fast, SpectralBasis};
use fastwalk_core::graph::{build_graph, partition_blocks, LaplacianMode, Neighborhood, SeedPartition};
use fastwalk_core::image::{hard_labels, Image, ProbabilityField};
use fastwalk_core::linalg::{cg_solve, smallest_eigs, Shifted};
use fastwalk_core::metrics::dice;
use fastwalk_core::phantom::{make_phantom, PhantomKind};
use fastwalk_core::refresh::{ncut_value, refresh};
use fastwalk_core::registration::{register, DisplacementGrid, NoClock, RegisterOptions};
use fastwalk_core::rw::{solve_basic_with, BasicOptions, LabelProblem};
use fastwalk_core::fast::SpectralPack;
use rand::Rng;

const TIGHT: BasicOptions = BasicOptions { tol: 1e-12, max_iter: None };

#[test]
fn basic_matches_dense_on_two_region_8x8() {
    let (img, _) = two_region(8);
    let seeds = [(8 * 3 + 1, 0), (8 * 4 + 6, 1)];
    let lap = lattice_laplacian(&img, 50.0).unwrap();
    let prob = LabelProblem::from_seeds(&[8, 8], 2, &seeds).unwrap();
    let u = solve_basic_with(&lap, &prob, &TIGHT).unwrap();
    let want = dense_rw(&img, 50.0, 2, &seeds, None, 0.0);
    assert!(max_abs_diff(u.values(), &want) <= 1e-6);
}

#[test]
fn cg_on_path_block_matches_dense() {
    let img = Image::new(&[3, 1], vec![0.5; 3]).unwrap();
    let lap = build_graph(&img, 1.0, Neighborhood::Four).unwrap().laplacian(LaplacianMode::Unnormalized).unwrap();
    let seeds = SeedPartition::new(3, &[(0, 0), (2, 1)]).unwrap();
    let blocks = partition_blocks(&lap, &seeds).unwrap();
    // rhs = -B^T u_s for label 0 (seed 0 carries 1)
    let rhs = vec![-blocks.b.row(0).1[0]];
    let op = Shifted { matrix: &blocks.l_n, shift: 0.0 };
    let x = cg_solve(&op, &rhs, 1, 1e-12, 10).unwrap();
    let dense = DMatrix::from_row_slice(1, 1, &[blocks.l_n.get(0, 0)]).lu().solve(&DMatrix::from_row_slice(1, 1, &rhs)).unwrap();
    assert!((x[0] - dense[(0, 0)]).abs() < 1e-12);
    assert!((x[0] - 0.5).abs() < 1e-12);
}

/// Image, seeds, K, optional priors and gamma.
type RandomProblem = (Image, Vec<(usize, usize)>, usize, Option<Vec<f64>>, f64);

fn random_problem(seed: u64) -> RandomProblem {
    let mut r = rng(seed);
    let dims = [r.random_range(3..=8usize), r.random_range(2..=8usize)];
    let img = random_image(&dims, seed);
    let n = img.len();
    let k = r.random_range(2..=3usize);
    let gamma = if seed % 2 == 0 { 0.0 } else { 0.5 };
    let mut seeds: Vec<(usize, usize)> = Vec::new();
    for l in 0..k {
        loop {
            let x = r.random_range(0..n);
            if !seeds.iter().any(|s| s.0 == x) {
                seeds.push((x, l));
                break;
            }
        }
    }
    let priors = (gamma > 0.0).then(|| {
        let mut p = Vec::with_capacity(n * k);
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            p.extend(row.iter().map(|v| v / s));
        }
        p
    });
    (img, seeds, k, priors, gamma)
}

#[test]
fn full_basis_fast_equals_basic_equals_dense() {
    for seed in 0..24 {
        let (img, seeds, k, priors, gamma) = random_problem(seed);
        let n = img.len();
        let beta = 10.0;
        let pack = precompute(&img, beta, n, 1e-10).unwrap();
        let lap = lattice_laplacian(&img, beta).unwrap();
        let field = priors.as_ref().map(|p| ProbabilityField::new(img.dims(), k, p.clone()).unwrap());
        let part = SeedPartition::new(n, &seeds).unwrap();
        let prob = LabelProblem::new(img.dims(), k, part, field, gamma).unwrap();
        let fast = solve_fast(&pack, &lap, &prob, n).unwrap();
        let basic = solve_basic_with(&lap, &prob, &TIGHT).unwrap();
        let dense = dense_rw(&img, beta, k, &seeds, priors.as_deref(), gamma);
        assert!(fast.max_abs_diff(&basic) <= 1e-6, "seed {seed}: fast vs basic {}", fast.max_abs_diff(&basic));
        assert!(max_abs_diff(basic.values(), &dense) <= 1e-6, "seed {seed}: basic vs dense");
    }
}

#[test]
fn three_path_eigenpairs_match_dense() {
    let img = Image::new(&[3, 1], vec![0.5; 3]).unwrap();
    let lap = lattice_laplacian(&img, 1.0).unwrap();
    let eig = smallest_eigs(lap.matrix(), 3, 1e-10).unwrap();
    let (want, _) = sorted_eigen(&dense_normalized(&dense_weights(&img, 1.0)));
    for (a, b) in eig.values().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
    // m = 1 gives the null vector along d_sqrt
    let one = smallest_eigs(lap.matrix(), 1, 1e-10).unwrap();
    let ds = lap.d_sqrt().unwrap();
    let nrm = ds.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos: f64 = one.column(0).iter().zip(ds).map(|(q, d)| q * d / nrm).sum();
    assert!(one.values()[0].abs() < 1e-10 && (cos.abs() - 1.0).abs() < 1e-10);
}

#[test]
fn random_lattice_eigenpairs_match_dense() {
    for seed in 0..6u64 {
        let mut r = rng(100 + seed);
        let dims = [r.random_range(4..=10usize), r.random_range(4..=10usize)];
        let img = random_image(&dims, seed);
        let n = img.len();
        let lap = lattice_laplacian(&img, 5.0).unwrap();
        let (want, vecs) = sorted_eigen(&dense_normalized(&dense_weights(&img, 5.0)));
        let m = if n <= 64 { n } else { 12 };
        let eig = smallest_eigs(lap.matrix(), m, 1e-10).unwrap();
        for (a, b) in eig.values().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
        if m < n {
            let got = DMatrix::from_column_slice(n, m, eig.vectors());
            let angle = max_principal_angle(&got, &vecs.columns(0, m).into_owned());
            assert!(angle <= 1e-4, "seed {seed}: angle {angle}");
        }
    }
}

#[test]
fn refresh_never_undershoots_the_spectrum() {
    let img = random_image(&[7, 6], 9);
    let pack = precompute(&img, 50.0, 20, 1e-10).unwrap();
    for beta in [10.0, 100.0] {
        let r = refresh(&pack, &img, beta).unwrap();
        let (want, _) = sorted_eigen(&dense_normalized(&dense_weights(&img, beta)));
        let lo = r.lambda_hat().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lo >= want[0] - 1e-8);
        assert!(r.lambda_hat().iter().all(|&l| (-1e-8..=2.0 + 1e-8).contains(&l)));
    }
}

#[test]
fn ncut_of_three_path_vector() {
    let img = Image::new(&[3, 1], vec![0.5; 3]).unwrap();
    let lap = lattice_laplacian(&img, 1.0).unwrap();
    let q = [1.0 / 2f64.sqrt(), 0.0, -1.0 / 2f64.sqrt()];
    let dense = dense_normalized(&dense_weights(&img, 1.0));
    let v = nalgebra::DVector::from_column_slice(&q);
    let want = (v.transpose() * &dense * &v)[(0, 0)];
    assert!((ncut_value(&lap, &q).unwrap() - want).abs() < 1e-12);
    assert!((want - 1.0).abs() < 1e-12);
}

#[test]
fn refreshed_pack_segments_as_well_as_direct_eigs() {
    let ph = make_phantom(PhantomKind::Blobs2d, &[16, 16], 3, 0.02).unwrap();
    let seeds: Vec<(usize, usize)> = (0..ph.k)
        .map(|l| (ph.labels.labels().iter().position(|&v| v as usize == l).unwrap(), l))
        .collect();
    let prob = LabelProblem::from_seeds(&[16, 16], ph.k, &seeds).unwrap();
    let base = precompute(&ph.image, 50.0, 64, 1e-8).unwrap();
    let direct = precompute(&ph.image, 100.0, 64, 1e-8).unwrap();
    let lap = lattice_laplacian(&ph.image, 100.0).unwrap();
    let refreshed = refresh(&base, &ph.image, 100.0).unwrap();
    let score = |u: &ProbabilityField| dice(&hard_labels(u), &ph.labels, ph.k).unwrap().mean;
    let a = score(&solve_fast(&refreshed, &lap, &prob, 64).unwrap());
    let b = score(&solve_fast(&direct, &lap, &prob, 64).unwrap());
    assert!(a >= b - 0.05, "refreshed {a} vs direct {b}");
}

/// 4-connected components of equal prior rows.
fn prior_components(p: &ProbabilityField, dims: [usize; 2]) -> Vec<usize> {
    let n = dims[0] * dims[1];
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(x) = stack.pop() {
            let (cx, cy) = (x % dims[0], x / dims[0]);
            let mut nb = Vec::new();
            if cx > 0 { nb.push(x - 1) }
            if cx + 1 < dims[0] { nb.push(x + 1) }
            if cy > 0 { nb.push(x - dims[0]) }
            if cy + 1 < dims[1] { nb.push(x + dims[0]) }
            for y in nb {
                if comp[y] == usize::MAX && p.row(y) == p.row(x) {
                    comp[y] = next;
                    stack.push(y);
                }
            }
        }
        next += 1;
    }
    comp
}

#[test]
fn two_region_priors_aggregate_into_their_components() {
    let (_, labels) = two_region(16);
    let values: Vec<f64> = labels.iter().flat_map(|&l| if l == 0 { [0.9, 0.1] } else { [0.2, 0.8] }).collect();
    let p = ProbabilityField::new(&[16, 16], 2, values).unwrap();
    let agg = build_aggregation(&p, 1000, 1e-3).unwrap();
    let want = prior_components(&p, [16, 16]);
    assert_eq!(agg.n_bar(), 2);
    let got = agg.assignment().unwrap();
    for x in 0..256 {
        for y in 0..256 {
            assert_eq!(got[x] == got[y], want[x] == want[y]);
        }
    }
}

#[test]
fn identity_aggregation_reproduces_the_fast_solve() {
    let img = random_image(&[6, 5], 4);
    let pack = precompute(&img, 20.0, 12, 1e-10).unwrap();
    let lat = build_graph(&img, 20.0, Neighborhood::Four).unwrap();
    let lap = lattice_laplacian(&img, 20.0).unwrap();
    let prob = LabelProblem::from_seeds(&[6, 5], 2, &[(0, 0), (29, 1)]).unwrap();
    let agg = Aggregation::identity(&[6, 5]).unwrap();
    let coarse = coarsen_basis(&pack, &agg, lat.graph(), Coarsening::Naive).unwrap();
    let agg_lap = agg.laplacian(lat.graph()).unwrap();
    let agg_prob = agg.aggregate_problem(&prob).unwrap();
    let u_bar = solve_fast(&coarse, &agg_lap, &agg_prob, 12).unwrap();
    let u = propagate(&u_bar, &agg).unwrap();
    let want = solve_fast(&pack, &lap, &prob, 12).unwrap();
    assert!(u.max_abs_diff(&want) <= 1e-6);
}

#[test]
fn adaptive_size_is_accurate_on_aligned_two_region_seeds() {
    let (img, _) = two_region(16);
    let pack = precompute(&img, 50.0, 64, 1e-8).unwrap();
    let lap = lattice_laplacian(&img, 50.0).unwrap();
    let seeds: Vec<(usize, usize)> = (2..14).flat_map(|y| [(y * 16 + 3, 0), (y * 16 + 12, 1)]).collect();
    let prob = LabelProblem::from_seeds(&[16, 16], 2, &seeds).unwrap();
    let sel = select_m(&pack, &lap, &prob, &AdaptivePolicy::default()).unwrap();
    let fast = solve_fast(&pack, &lap, &prob, sel.m_use).unwrap();
    let basic = solve_basic_with(&lap, &prob, &TIGHT).unwrap();
    assert!(fast.max_abs_diff(&basic) <= 0.1, "m_use {} diff {}", sel.m_use, fast.max_abs_diff(&basic));
}

#[test]
fn full_basis_registration_equals_basic() {
    let ph = make_phantom(PhantomKind::ShiftedPair, &[8, 8], 2, 0.01).unwrap();
    let (moving, _) = ph.moving.clone().unwrap();
    let grid = DisplacementGrid::new(&[3, 3], 1).unwrap();
    let opts = RegisterOptions { basic: TIGHT, ..RegisterOptions::default() };
    let pack: SpectralPack = precompute(&ph.image, opts.beta, 64, 1e-11).unwrap();
    let basic = register::<SpectralPack>(&ph.image, &moving, None, &grid, &opts, &NoClock).unwrap();
    let fast = register(&ph.image, &moving, Some(&pack), &grid, &opts, &NoClock).unwrap();
    let worst = basic
        .displacement
        .data()
        .iter()
        .zip(fast.displacement.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4, "{worst}");
    assert_eq!(pack.basis().m(), 64);
    assert_eq!(SpectralBasis::m(&pack), 64);
}
