//! Block-local EM arithmetic.
//!
//! These kernels only ever see one contiguous feature block (an agent's or a
//! hub's columns), the responsibilities, and the block's slice of the
//! parameters. The centralized fit, the federated clients and the
//! decentralized roots all call the same functions in the same order, which
//! is what makes their traces agree bit for bit.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, regularize, CholeskyFactor, Matrix, SymMatrix};

/// `−(d/2)·log(2π)`.
pub fn log_norm_const(d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln()
}

/// Writes `Q_mk = log|Σ_k| + ‖x_m − μ_k‖²_{Σ_k⁻¹}` restricted to the block
/// `cols`, for each `m` in `rows` and every `k`, into `out` (row-major
/// `rows.len() × K`).
pub fn q_terms(
    x: &Matrix,
    cols: Range<usize>,
    rows: &[usize],
    means: &[&[f64]],
    factors: &[CholeskyFactor],
    out: &mut [f64],
) {
    let k = means.len();
    let db = cols.len();
    debug_assert_eq!(out.len(), rows.len() * k);
    let mut diff = vec![0.0; db];
    let mut scratch = vec![0.0; db];
    for (i, &m) in rows.iter().enumerate() {
        let xm = &x.row(m)[cols.clone()];
        for c in 0..k {
            for ((d, &xv), &mv) in diff.iter_mut().zip(xm).zip(means[c]) {
                *d = xv - mv;
            }
            let f = &factors[c];
            out[i * k + c] = f.log_det() + f.quad_form_with(&diff, &mut scratch);
        }
    }
}

/// Turns one row of summed Q-terms into responsibilities:
/// `log γ̃_k = log π_k − ½·Q_k`, normalized by log-sum-exp. Returns the
/// log-sum-exp, i.e. the example's log-likelihood minus `log_norm_const(d)`.
pub fn normalize_row(q_sum: &[f64], log_weights: &[f64], gamma: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for ((g, &q), &lw) in gamma.iter_mut().zip(q_sum).zip(log_weights) {
        *g = lw - 0.5 * q;
        if *g > max {
            max = *g;
        }
    }
    if max == f64::NEG_INFINITY {
        // every component has zero weight or infinite distance
        let u = 1.0 / gamma.len() as f64;
        gamma.iter_mut().for_each(|g| *g = u);
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for g in gamma.iter_mut() {
        *g = (*g - max).exp();
        total += *g;
    }
    for g in gamma.iter_mut() {
        *g /= total;
    }
    max + total.ln()
}

pub fn log_weights(weights: &[f64]) -> Vec<f64> {
    weights.iter().map(|w| w.ln()).collect()
}

/// `Σ_m γ_mk` per component.
pub fn component_mass(gamma: &Matrix) -> Vec<f64> {
    let mut mass = vec![0.0; gamma.cols()];
    for row in gamma.iter_rows() {
        for (s, &g) in mass.iter_mut().zip(row) {
            *s += g;
        }
    }
    mass
}

pub fn weights_from_mass(mass: &[f64], m: usize) -> Vec<f64> {
    mass.iter().map(|&s| s / m as f64).collect()
}

/// Mean and biased, regularized covariance of each component over the block.
pub fn block_moments(
    x: &Matrix,
    cols: Range<usize>,
    gamma: &Matrix,
    mass: &[f64],
    reg_scale: f64,
) -> Result<(Vec<Vec<f64>>, Vec<SymMatrix>)> {
    let db = cols.len();
    let k = mass.len();
    let mut means = vec![vec![0.0; db]; k];
    for (row, g) in x.iter_rows().zip(gamma.iter_rows()) {
        let xb = &row[cols.clone()];
        for c in 0..k {
            for (mu, &xv) in means[c].iter_mut().zip(xb) {
                *mu += g[c] * xv;
            }
        }
    }
    for (mu, &s) in means.iter_mut().zip(mass) {
        mu.iter_mut().for_each(|v| *v /= s);
    }

    let mut scatter = vec![vec![0.0; db * db]; k];
    let mut diff = vec![0.0; db];
    for (row, g) in x.iter_rows().zip(gamma.iter_rows()) {
        let xb = &row[cols.clone()];
        for c in 0..k {
            for ((d, &xv), &mv) in diff.iter_mut().zip(xb).zip(&means[c]) {
                *d = xv - mv;
            }
            let acc = &mut scatter[c];
            for i in 0..db {
                let gi = g[c] * diff[i];
                for j in 0..=i {
                    acc[i * db + j] += gi * diff[j];
                }
            }
        }
    }
    let covs = scatter
        .iter()
        .zip(mass)
        .enumerate()
        .map(|(c, (acc, &s))| {
            let raw = SymMatrix::from_lower_fn(db, |i, j| acc[i * db + j] / s);
            finish_covariance(&raw, reg_scale).map_err(|e| Error::NumericalFailure(format!("component {c}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((means, covs))
}

/// Adds the relative ridge and checks positive definiteness.
pub fn finish_covariance(raw: &SymMatrix, reg_scale: f64) -> Result<SymMatrix> {
    let eps = reg_scale * raw.mean_diagonal().max(0.0);
    let cov = regularize(raw, eps);
    cholesky(&cov)?;
    Ok(cov)
}

/// Unweighted biased covariance of the block over all examples.
pub fn global_block_covariance(x: &Matrix, cols: Range<usize>, reg_scale: f64) -> Result<SymMatrix> {
    let m = x.rows();
    let gamma = Matrix::from_vec(m, 1, vec![1.0; m])?;
    let (_, mut covs) = block_moments(x, cols, &gamma, &[m as f64], reg_scale)?;
    Ok(covs.remove(0))
}

pub fn global_block_mean(x: &Matrix, cols: Range<usize>) -> Vec<f64> {
    let mut mean = vec![0.0; cols.len()];
    for row in x.iter_rows() {
        for (mu, &v) in mean.iter_mut().zip(&row[cols.clone()]) {
            *mu += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= x.rows() as f64);
    mean
}

/// Components whose mass fell below the emptiness threshold.
pub fn empty_components(mass: &[f64], m: usize) -> Vec<usize> {
    let thr = super::empty_mass_threshold(m);
    mass.iter()
        .enumerate()
        .filter(|(_, &s)| !(s >= thr))
        .map(|(k, _)| k)
        .collect()
}

/// Index of the example with the lowest log-likelihood.
pub fn worst_fit_example(ll_terms: &[f64]) -> usize {
    let mut best = 0;
    for (m, &v) in ll_terms.iter().enumerate() {
        if v < ll_terms[best] {
            best = m;
        }
    }
    best
}

/// Gives every component in `empty` a weight of `1/M` and renormalizes.
pub fn reseed_weights(weights: &mut [f64], empty: &[usize], m: usize) {
    for &k in empty {
        weights[k] = 1.0 / m as f64;
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
}

/// Running sufficient statistics of one feature block, for incremental EM.
///
/// Second moments are accumulated about a fixed shift (the block's global
/// mean) to keep the `E[xxᵀ] − μμᵀ` subtraction well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    shift: Vec<f64>,
    mass: Vec<f64>,
    first: Matrix,
    second: Vec<Vec<f64>>,
}

impl BlockStats {
    pub fn new(k: usize, x: &Matrix, cols: Range<usize>) -> Self {
        let db = cols.len();
        BlockStats {
            shift: global_block_mean(x, cols),
            mass: vec![0.0; k],
            first: Matrix::zeros(k, db),
            second: vec![vec![0.0; db * db]; k],
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Adds (`sign = 1`) or removes (`sign = -1`) example `xb`'s contribution
    /// with responsibilities `g`.
    pub fn accumulate(&mut self, xb: &[f64], g: &[f64], sign: f64) {
        let db = self.shift.len();
        let centered: Vec<f64> = xb.iter().zip(&self.shift).map(|(a, s)| a - s).collect();
        for (c, &gc) in g.iter().enumerate() {
            let w = sign * gc;
            self.mass[c] += w;
            for (f, &v) in self.first.row_mut(c).iter_mut().zip(&centered) {
                *f += w * v;
            }
            let acc = &mut self.second[c];
            for i in 0..db {
                let wi = w * centered[i];
                for j in 0..=i {
                    acc[i * db + j] += wi * centered[j];
                }
            }
        }
    }

    pub fn accumulate_rows(&mut self, x: &Matrix, cols: Range<usize>, gamma: &Matrix, rows: &[usize], sign: f64) {
        for &m in rows {
            self.accumulate(&x.row(m)[cols.clone()], gamma.row(m), sign);
        }
    }

    /// Means and regularized covariances implied by the statistics.
    pub fn moments(&self, reg_scale: f64) -> Result<(Vec<Vec<f64>>, Vec<SymMatrix>)> {
        let db = self.shift.len();
        let mut means = Vec::with_capacity(self.mass.len());
        let mut covs = Vec::with_capacity(self.mass.len());
        for (c, &s) in self.mass.iter().enumerate() {
            let centered: Vec<f64> = self.first.row(c).iter().map(|v| v / s).collect();
            let acc = &self.second[c];
            let raw = SymMatrix::from_lower_fn(db, |i, j| acc[i * db + j] / s - centered[i] * centered[j]);
            covs.push(
                finish_covariance(&raw, reg_scale)
                    .map_err(|e| Error::NumericalFailure(format!("component {c}: {e}")))?,
            );
            means.push(centered.iter().zip(&self.shift).map(|(v, s)| v + s).collect());
        }
        Ok((means, covs))
    }

    /// Largest deviation from another set of statistics, relative to the
    /// magnitude of each statistic (mass, first and second moments).
    pub fn max_relative_difference(&self, other: &BlockStats) -> f64 {
        fn rel(a: &[f64], b: &[f64]) -> f64 {
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
        }
        let mut worst = rel(&self.mass, &other.mass);
        worst = worst.max(rel(self.first.as_slice(), other.first.as_slice()));
        for (a, b) in self.second.iter().zip(&other.second) {
            worst = worst.max(rel(a, b));
        }
        worst
    }
}
