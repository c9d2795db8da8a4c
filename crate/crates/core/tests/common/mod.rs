#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fastwalk_core::image::Image;

/// Face-adjacent lattice weights, assembled from coordinates.
pub fn dense_weights(image: &Image, beta: f64) -> DMatrix<f64> {
    let dims = image.dims();
    let n = image.len();
    let strides: Vec<usize> = dims.iter().scan(1, |acc, &d| {
        let s = *acc;
        *acc *= d;
        Some(s)
    }).collect();
    let j = image.data();
    let mut w = DMatrix::zeros(n, n);
    for x in 0..n {
        for (a, &stride) in strides.iter().enumerate() {
            let c = (x / stride) % dims[a];
            if c + 1 < dims[a] {
                let y = x + stride;
                let v = (-beta * (j[x] - j[y]).abs()).exp().max(1e-8);
                w[(x, y)] = v;
                w[(y, x)] = v;
            }
        }
    }
    w
}

pub fn degrees(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(w.nrows(), w.row_iter().map(|r| r.sum()))
}

pub fn dense_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&degrees(w)) - w
}

pub fn dense_normalized(w: &DMatrix<f64>) -> DMatrix<f64> {
    let d = degrees(w);
    let inv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
    &inv * dense_laplacian(w) * &inv
}

/// Random walker on the normalized Laplacian by dense LU. Returns `N x K`.
pub fn dense_rw(
    image: &Image,
    beta: f64,
    k: usize,
    seeds: &[(usize, usize)],
    priors: Option<&[f64]>,
    gamma: f64,
) -> DMatrix<f64> {
    let n = image.len();
    let w = dense_weights(image, beta);
    let ds = degrees(&w).map(f64::sqrt);
    let lhat = dense_normalized(&w);
    let seeded: Vec<usize> = seeds.iter().map(|s| s.0).collect();
    let free: Vec<usize> = (0..n).filter(|x| !seeded.contains(x)).collect();
    let nn = free.len();
    let mut a = DMatrix::zeros(nn, nn);
    for (i, &x) in free.iter().enumerate() {
        for (j, &y) in free.iter().enumerate() {
            a[(i, j)] = lhat[(x, y)];
        }
        a[(i, i)] += gamma;
    }
    let mut rhs = DMatrix::zeros(nn, k);
    for (i, &x) in free.iter().enumerate() {
        for l in 0..k {
            let mut v = 0.0;
            if let Some(p) = priors {
                v += gamma * ds[x] * p[x * k + l];
            }
            for &(sx, sl) in seeds {
                if sl == l {
                    v -= lhat[(x, sx)] * ds[sx];
                }
            }
            rhs[(i, l)] = v;
        }
    }
    let sol = a.lu().solve(&rhs).expect("nonsingular system");
    let mut u = DMatrix::zeros(n, k);
    for &(sx, sl) in seeds {
        u[(sx, sl)] = 1.0;
    }
    for (i, &x) in free.iter().enumerate() {
        for l in 0..k {
            u[(x, l)] = sol[(i, l)] / ds[x];
        }
    }
    u
}

pub fn max_abs_diff(field: &[f64], dense: &DMatrix<f64>) -> f64 {
    let k = dense.ncols();
    field
        .iter()
        .enumerate()
        .map(|(i, v)| (v - dense[(i / k, i % k)]).abs())
        .fold(0.0, f64::max)
}

/// Ascending eigenpairs.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// Largest principal angle between the column spans of two orthonormal bases.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let sv = m.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    smallest.acos()
}

pub fn random_image(dims: &[usize], seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    Image::new(dims, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Piecewise constant image with smooth noise-free regions: a left and a
/// right half with one small bump.
pub fn two_region(side: usize) -> (Image, Vec<u16>) {
    let n = side * side;
    let mut data = vec![0.2; n];
    let mut labels = vec![0u16; n];
    for y in 0..side {
        for x in side / 2..side {
            data[y * side + x] = 0.8;
            labels[y * side + x] = 1;
        }
    }
    (Image::new(&[side, side], data).unwrap(), labels)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
