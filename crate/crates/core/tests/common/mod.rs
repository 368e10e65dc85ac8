//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is plain loops over `Vec<Vec<f64>>`
//! with textbook algorithms (Gauss-Jordan elimination, explicit densities)
//! and shares no code path with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vpem::gmm::{BlockLayout, GmmParams};
use vpem::linalg::{Matrix, SymMatrix};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Inverse and log-determinant by Gauss-Jordan with partial pivoting.
pub fn inverse_logdet(a: &Dense) -> (Dense, f64) {
    let n = a.len();
    let mut m: Dense = a.to_vec();
    let mut inv: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 0.0, "singular matrix in oracle");
        logdet += p.abs().ln();
        for j in 0..n {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                for j in 0..n {
                    m[i][j] -= f * m[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    (inv, logdet)
}

/// `vᵀ A⁻¹ v` by solving `A y = v` with Gaussian elimination.
pub fn quad_form(a: &Dense, v: &[f64]) -> f64 {
    let n = a.len();
    let mut aug: Dense = (0..n)
        .map(|i| {
            let mut r = a[i].clone();
            r.push(v[i]);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        for i in col + 1..n {
            let f = aug[i][col] / aug[col][col];
            for j in col..=n {
                aug[i][j] -= f * aug[col][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = aug[i][n];
        for j in i + 1..n {
            s -= aug[i][j] * y[j];
        }
        y[i] = s / aug[i][i];
    }
    v.iter().zip(&y).map(|(a, b)| a * b).sum()
}

pub fn log_density(x: &[f64], mu: &[f64], cov: &Dense) -> f64 {
    let (inv, logdet) = inverse_logdet(cov);
    let d = x.len();
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += (x[i] - mu[i]) * inv[i][j] * (x[j] - mu[j]);
        }
    }
    -0.5 * (d as f64 * (2.0 * PI).ln() + logdet + q)
}

/// Responsibilities and total log-likelihood from explicit densities.
pub fn e_step(x: &Dense, weights: &[f64], means: &Dense, covs: &[Dense]) -> (Dense, f64) {
    let k = weights.len();
    let mut gamma = Vec::new();
    let mut ll = 0.0;
    for row in x {
        let logp: Vec<f64> = (0..k)
            .map(|c| weights[c].ln() + log_density(row, &means[c], &covs[c]))
            .collect();
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logp.iter().map(|l| (l - max).exp()).sum();
        gamma.push(logp.iter().map(|l| (l - max).exp() / s).collect());
        ll += max + s.ln();
    }
    (gamma, ll)
}

/// Weighted moments per block, covariances biased with a ridge of
/// `reg_scale × mean diagonal`. Returns weights, means and the full
/// block-diagonal covariance of each component.
pub fn m_step(
    x: &Dense,
    gamma: &Dense,
    blocks: &[std::ops::Range<usize>],
    reg_scale: f64,
) -> (Vec<f64>, Dense, Vec<Dense>) {
    let (m, d, k) = (x.len(), x[0].len(), gamma[0].len());
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut covs = vec![vec![vec![0.0; d]; d]; k];
    for c in 0..k {
        let nk: f64 = (0..m).map(|i| gamma[i][c]).sum();
        weights[c] = nk / m as f64;
        for j in 0..d {
            means[c][j] = (0..m).map(|i| gamma[i][c] * x[i][j]).sum::<f64>() / nk;
        }
        for r in blocks {
            for a in r.clone() {
                for b in r.clone() {
                    covs[c][a][b] = (0..m)
                        .map(|i| gamma[i][c] * (x[i][a] - means[c][a]) * (x[i][b] - means[c][b]))
                        .sum::<f64>()
                        / nk;
                }
            }
            let eps = reg_scale * r.clone().map(|a| covs[c][a][a]).sum::<f64>() / r.len() as f64;
            for a in r.clone() {
                covs[c][a][a] += eps;
            }
        }
    }
    (weights, means, covs)
}

/// Best accuracy over all label permutations, counting matches example by
/// example (Heap's algorithm).
pub fn accuracy(pred: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let score = |p: &[usize]| pred.iter().zip(labels).filter(|(&a, &b)| p[a] == b).count();
    let mut best = score(&perm);
    let mut c = vec![0; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(score(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best as f64 / pred.len() as f64
}

pub fn random_spd(r: &mut impl Rng, n: usize) -> Dense {
    let a: Dense = (0..n)
        .map(|_| (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|p| a[i][p] * a[j][p]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn random_layout(r: &mut impl Rng, d: usize) -> BlockLayout {
    let mut sizes = Vec::new();
    let mut left = d;
    while left > 0 {
        let s = r.random_range(1..=left);
        sizes.push(s);
        left -= s;
    }
    BlockLayout::from_sizes(&sizes).unwrap()
}

/// Random block-diagonal model plus its dense covariances for the oracle.
pub fn random_model(r: &mut impl Rng, k: usize, layout: &BlockLayout) -> (GmmParams, Vec<Dense>) {
    let d = layout.d();
    let mut w: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.1).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let means = Matrix::from_rows(
        &(0..k)
            .map(|_| (0..d).map(|_| r.random::<f64>() * 6.0 - 3.0).collect())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut blocks = Vec::new();
    let mut dense = Vec::new();
    for _ in 0..k {
        let mut full = vec![vec![0.0; d]; d];
        let mut per = Vec::new();
        for rg in layout.blocks() {
            let b = random_spd(r, rg.len());
            for (i, a) in rg.clone().enumerate() {
                for (j, c) in rg.clone().enumerate() {
                    full[a][c] = b[i][j];
                }
            }
            per.push(SymMatrix::from_rows(&b).unwrap());
        }
        blocks.push(per);
        dense.push(full);
    }
    (GmmParams::new(layout.clone(), w, means, blocks).unwrap(), dense)
}

pub fn random_data(r: &mut impl Rng, m: usize, d: usize) -> Dense {
    (0..m)
        .map(|_| (0..d).map(|_| r.random::<f64>() * 8.0 - 4.0).collect())
        .collect()
}

pub fn to_matrix(x: &Dense) -> Matrix {
    Matrix::from_rows(x).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
