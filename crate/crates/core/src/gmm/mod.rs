//! Gaussian mixture parameters and the EM arithmetic shared by every engine.
//!
//! Covariances are block-diagonal over a [`BlockLayout`]; a single block is
//! the ordinary dense model. The centralized fit lives in [`em`], the
//! per-block kernels reused by the federated and decentralized engines in
//! [`local`].

pub mod em;
pub mod init;
pub mod local;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, CholeskyFactor, Matrix, SymMatrix};

pub use em::{e_step, fit_centralized, log_gaussian, log_likelihood, m_step, m_step_with, CentralizedFit, EStep};
pub use init::{init_params, InitSpec, InitStrategy, Initialization};

/// Contiguous, disjoint, covering blocks of feature indices `[0, d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    d: usize,
    blocks: Vec<Range<usize>>,
}

impl BlockLayout {
    pub fn new(d: usize, blocks: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for r in &blocks {
            if r.start != next || r.end <= r.start {
                return Err(Error::invalid(
                    "layout",
                    format!("block {r:?} breaks contiguity at {next}"),
                ));
            }
            next = r.end;
        }
        if next != d {
            return Err(Error::invalid(
                "layout",
                format!("blocks cover [0, {next}) but d = {d}"),
            ));
        }
        Ok(BlockLayout { d, blocks })
    }

    pub fn dense(d: usize) -> Self {
        BlockLayout { d, blocks: vec![0..d] }
    }

    /// Consecutive blocks of the given sizes; zero sizes are skipped.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut lo = 0;
        for &s in sizes.iter().filter(|&&s| s > 0) {
            blocks.push(lo..lo + s);
            lo += s;
        }
        BlockLayout::new(lo, blocks)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_dense(&self) -> bool {
        self.blocks.len() == 1
    }

    /// Number of covariance entries the layout leaves free, `Σ_b d_b²`.
    pub fn free_entries(&self) -> usize {
        self.blocks.iter().map(|r| r.len() * r.len()).sum()
    }

    pub fn block_of(&self, feature: usize) -> Option<usize> {
        self.blocks.iter().position(|r| r.contains(&feature))
    }
}

/// Mixture weights, means and block-diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    layout: BlockLayout,
    weights: Vec<f64>,
    means: Matrix,
    covariances: Vec<Vec<SymMatrix>>,
}

/// Simplex tolerance on the mixture weights.
pub const SIMPLEX_TOL: f64 = 1e-12;

impl GmmParams {
    pub fn new(
        layout: BlockLayout,
        weights: Vec<f64>,
        means: Matrix,
        covariances: Vec<Vec<SymMatrix>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("k", "need at least one component"));
        }
        if means.rows() != k || covariances.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: means.rows().min(covariances.len()),
            });
        }
        if means.cols() != layout.d() {
            return Err(Error::DimensionMismatch {
                expected: layout.d(),
                found: means.cols(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL * k as f64 {
            return Err(Error::invalid("weights", "not on the probability simplex"));
        }
        for blocks in &covariances {
            if blocks.len() != layout.num_blocks() {
                return Err(Error::DimensionMismatch {
                    expected: layout.num_blocks(),
                    found: blocks.len(),
                });
            }
            for (cov, r) in blocks.iter().zip(layout.blocks()) {
                if cov.dim() != r.len() {
                    return Err(Error::DimensionMismatch {
                        expected: r.len(),
                        found: cov.dim(),
                    });
                }
            }
        }
        Ok(GmmParams {
            layout,
            weights,
            means,
            covariances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.layout.d()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.means.row(k)
    }

    pub fn covariance_blocks(&self, k: usize) -> &[SymMatrix] {
        &self.covariances[k]
    }

    /// Cholesky factors indexed `[k][block]`.
    pub fn factorize(&self) -> Result<Vec<Vec<CholeskyFactor>>> {
        self.covariances
            .iter()
            .enumerate()
            .map(|(k, blocks)| {
                blocks
                    .iter()
                    .enumerate()
                    .map(|(b, c)| {
                        cholesky(c).map_err(|e| Error::NumericalFailure(format!("component {k}, block {b}: {e}")))
                    })
                    .collect()
            })
            .collect()
    }

    /// Full `d × d` covariance of component `k` with zeros off the blocks.
    pub fn dense_covariance(&self, k: usize) -> SymMatrix {
        let mut out = SymMatrix::zeros(self.d());
        for (cov, r) in self.covariances[k].iter().zip(self.layout.blocks()) {
            for i in 0..r.len() {
                for j in 0..=i {
                    out.set(r.start + i, r.start + j, cov.get(i, j));
                }
            }
        }
        out
    }

    /// Re-expresses the model in original feature order as a dense-layout
    /// model. `order[p]` is the original index of the feature at position `p`.
    pub fn to_original(&self, order: &[usize]) -> GmmParams {
        let d = self.d();
        let mut means = Matrix::zeros(self.k(), d);
        let mut covs = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let dense = self.dense_covariance(k);
            let mut out = SymMatrix::zeros(d);
            for p in 0..d {
                means[(k, order[p])] = self.means[(k, p)];
                for q in 0..=p {
                    out.set(order[p], order[q], dense.get(p, q));
                }
            }
            covs.push(vec![out]);
        }
        GmmParams {
            layout: BlockLayout::dense(d),
            weights: self.weights.clone(),
            means,
            covariances: covs,
        }
    }

    /// Restricts a model given in original feature order to `layout` over
    /// the permuted features `order`, dropping every off-block entry.
    pub fn restrict(&self, order: &[usize], layout: &BlockLayout) -> Result<GmmParams> {
        if order.len() != self.d() || layout.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: order.len(),
            });
        }
        let mut means = Matrix::zeros(self.k(), self.d());
        let mut covs = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let dense = self.dense_covariance(k);
            for (p, &o) in order.iter().enumerate() {
                means[(k, p)] = self.means[(k, o)];
            }
            covs.push(
                layout
                    .blocks()
                    .iter()
                    .map(|r| dense.submatrix(&order[r.clone()]))
                    .collect(),
            );
        }
        GmmParams::new(layout.clone(), self.weights.clone(), means, covs)
    }
}

/// Row-stochastic `M × K` soft assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: Matrix,
}

impl Responsibilities {
    pub fn new(gamma: Matrix) -> Result<Self> {
        for (m, row) in gamma.iter_rows().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&g| !(g >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::NumericalFailure(format!(
                    "responsibility row {m} is not a distribution"
                )));
            }
        }
        Ok(Responsibilities { gamma })
    }

    pub(crate) fn from_matrix_unchecked(gamma: Matrix) -> Self {
        Responsibilities { gamma }
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut gamma = Matrix::zeros(labels.len(), k);
        for (m, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::invalid("labels", format!("label {l} >= K = {k}")));
            }
            gamma[(m, l)] = 1.0;
        }
        Ok(Responsibilities { gamma })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.gamma
    }

    pub fn into_matrix(self) -> Matrix {
        self.gamma
    }

    pub fn row(&self, m: usize) -> &[f64] {
        self.gamma.row(m)
    }

    pub fn len(&self) -> usize {
        self.gamma.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.rows() == 0
    }

    pub fn k(&self) -> usize {
        self.gamma.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LlPlateau,
    MaxIters,
}

/// Per-iteration log-likelihood of a fit; `ll[t]` is evaluated at `θᵗ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub ll: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.ll.len()
    }

    pub fn final_ll(&self) -> f64 {
        self.ll.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Largest decrease between consecutive iterations (0 if monotone).
    pub fn max_decrease(&self) -> f64 {
        self.ll.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// LL-increment stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSpec {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iters: usize,
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec {
            tol_abs: 1e-6,
            tol_rel: 1e-8,
            max_iters: 200,
        }
    }
}

impl StopSpec {
    pub fn plateaued(&self, previous: f64, current: f64) -> bool {
        current - previous < self.tol_abs + self.tol_rel * current.abs()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_abs >= 0.0 && self.tol_rel >= 0.0) {
            return Err(Error::invalid("stop", "tolerances must be nonnegative"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Knobs of the M-step shared by all engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Ridge added to each block as a multiple of its mean diagonal.
    pub reg_scale: f64,
    /// Re-initialize a vanishing component from the worst-fit example
    /// instead of failing.
    pub reseed_empty: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            reg_scale: 1e-6,
            reseed_empty: false,
        }
    }
}

/// Components with mass below this are reported as empty.
pub fn empty_mass_threshold(m: usize) -> f64 {
    10.0 * f64::EPSILON * m as f64
}
