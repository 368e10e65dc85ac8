//! Centralized EM, dense or block-constrained.

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, Matrix};

use super::init::Initialization;
use super::local::{self, log_norm_const};
use super::{BlockLayout, EmOptions, FitTrace, GmmParams, Responsibilities, StopReason, StopSpec};

/// Log-density of `x` under a block-diagonal Gaussian.
pub fn log_gaussian(x: &[f64], mu: &[f64], factors: &[CholeskyFactor], layout: &BlockLayout) -> Result<f64> {
    if x.len() != layout.d() || mu.len() != layout.d() {
        return Err(Error::DimensionMismatch {
            expected: layout.d(),
            found: x.len().min(mu.len()),
        });
    }
    if factors.len() != layout.num_blocks() {
        return Err(Error::DimensionMismatch {
            expected: layout.num_blocks(),
            found: factors.len(),
        });
    }
    let mut q = 0.0;
    for (f, r) in factors.iter().zip(layout.blocks()) {
        let diff: Vec<f64> = x[r.clone()].iter().zip(&mu[r.clone()]).map(|(a, b)| a - b).collect();
        q += f.log_det() + f.quad_form(&diff)?;
    }
    Ok(log_norm_const(layout.d()) - 0.5 * q)
}

#[derive(Debug, Clone)]
pub struct EStep {
    pub responsibilities: Responsibilities,
    pub ll: f64,
    /// Per-example log-likelihood.
    pub ll_terms: Vec<f64>,
}

fn check_data(data: &Matrix, theta: &GmmParams) -> Result<()> {
    if data.cols() != theta.d() {
        return Err(Error::DimensionMismatch {
            expected: theta.d(),
            found: data.cols(),
        });
    }
    Ok(())
}

pub fn e_step(data: &Matrix, theta: &GmmParams) -> Result<EStep> {
    check_data(data, theta)?;
    let factors = theta.factorize()?;
    let (m, k) = (data.rows(), theta.k());
    let rows: Vec<usize> = (0..m).collect();

    let mut q_sum = vec![0.0; m * k];
    let mut q_block = vec![0.0; m * k];
    for (b, r) in theta.layout().blocks().iter().enumerate() {
        let means: Vec<&[f64]> = (0..k).map(|c| &theta.mean(c)[r.clone()]).collect();
        let fs: Vec<CholeskyFactor> = factors.iter().map(|fk| fk[b].clone()).collect();
        local::q_terms(data, r.clone(), &rows, &means, &fs, &mut q_block);
        for (s, q) in q_sum.iter_mut().zip(&q_block) {
            *s += q;
        }
    }
    Ok(finish_e_step(&q_sum, theta.weights(), theta.d(), m))
}

/// Shared tail of every E-step: summed Q-terms to responsibilities and LL.
pub(crate) fn finish_e_step(q_sum: &[f64], weights: &[f64], d: usize, m: usize) -> EStep {
    let k = weights.len();
    let log_w = local::log_weights(weights);
    let c = log_norm_const(d);
    let mut gamma = Matrix::zeros(m, k);
    let mut ll_terms = Vec::with_capacity(m);
    let mut ll = 0.0;
    for i in 0..m {
        let lse = local::normalize_row(&q_sum[i * k..(i + 1) * k], &log_w, gamma.row_mut(i));
        let t = lse + c;
        ll += t;
        ll_terms.push(t);
    }
    EStep {
        responsibilities: Responsibilities::from_matrix_unchecked(gamma),
        ll,
        ll_terms,
    }
}

/// Log-likelihood of the data under `theta`.
pub fn log_likelihood(data: &Matrix, theta: &GmmParams) -> Result<f64> {
    Ok(e_step(data, theta)?.ll)
}

pub fn m_step(data: &Matrix, gamma: &Responsibilities, layout: &BlockLayout) -> Result<GmmParams> {
    m_step_with(data, gamma, layout, &EmOptions::default(), None)
}

/// M-step with explicit options. `ll_terms` (from the preceding E-step)
/// is needed only when `opts.reseed_empty` is set.
pub fn m_step_with(
    data: &Matrix,
    gamma: &Responsibilities,
    layout: &BlockLayout,
    opts: &EmOptions,
    ll_terms: Option<&[f64]>,
) -> Result<GmmParams> {
    if data.cols() != layout.d() {
        return Err(Error::DimensionMismatch {
            expected: layout.d(),
            found: data.cols(),
        });
    }
    if gamma.len() != data.rows() {
        return Err(Error::DimensionMismatch {
            expected: data.rows(),
            found: gamma.len(),
        });
    }
    let (m, k) = (data.rows(), gamma.k());
    let g = gamma.matrix();
    let mass = local::component_mass(g);
    let empty = local::empty_components(&mass, m);
    let reseed = match (empty.first(), opts.reseed_empty, ll_terms) {
        (None, _, _) => None,
        (Some(_), true, Some(terms)) => Some(local::worst_fit_example(terms)),
        (Some(&c), _, _) => {
            return Err(Error::EmptyComponent {
                component: c,
                mass: mass[c],
            })
        }
    };

    let mut weights = local::weights_from_mass(&mass, m);
    let mut means = Matrix::zeros(k, layout.d());
    let mut covs = vec![Vec::with_capacity(layout.num_blocks()); k];
    // empty components get a placeholder mass so the block moments stay finite
    let safe_mass: Vec<f64> = mass
        .iter()
        .enumerate()
        .map(|(c, &s)| if empty.contains(&c) { 1.0 } else { s })
        .collect();
    for r in layout.blocks() {
        let (mu, cov) = local::block_moments(data, r.clone(), g, &safe_mass, opts.reg_scale)?;
        for c in 0..k {
            means.row_mut(c)[r.clone()].copy_from_slice(&mu[c]);
        }
        for (c, s) in cov.into_iter().enumerate() {
            covs[c].push(s);
        }
    }
    if let Some(worst) = reseed {
        let global: Vec<_> = layout
            .blocks()
            .iter()
            .map(|r| local::global_block_covariance(data, r.clone(), opts.reg_scale))
            .collect::<Result<_>>()?;
        for &c in &empty {
            means.row_mut(c).copy_from_slice(data.row(worst));
            covs[c] = global.clone();
        }
        local::reseed_weights(&mut weights, &empty, m);
    }
    GmmParams::new(layout.clone(), weights, means, covs)
}

#[derive(Debug, Clone)]
pub struct CentralizedFit {
    pub params: GmmParams,
    pub responsibilities: Responsibilities,
    pub trace: FitTrace,
}

/// EM until the LL increment falls under `stop` or `stop.max_iters`
/// E-steps have run. The returned parameters are the ones the last
/// recorded LL was evaluated at.
pub fn fit_centralized(
    data: &Matrix,
    k: usize,
    layout: &BlockLayout,
    init: &Initialization,
    stop: &StopSpec,
    opts: &EmOptions,
) -> Result<CentralizedFit> {
    stop.validate()?;
    let mut theta = init.resolve(data, k, layout, &[])?;
    let mut ll = Vec::new();
    loop {
        let es = e_step(data, &theta)?;
        let done = ll.last().map(|&prev| stop.plateaued(prev, es.ll));
        ll.push(es.ll);
        let stop_reason = match done {
            Some(true) => Some(StopReason::LlPlateau),
            _ if ll.len() >= stop.max_iters => Some(StopReason::MaxIters),
            _ => None,
        };
        if let Some(reason) = stop_reason {
            return Ok(CentralizedFit {
                params: theta,
                responsibilities: es.responsibilities,
                trace: FitTrace {
                    ll,
                    converged: reason == StopReason::LlPlateau,
                    stop_reason: reason,
                },
            });
        }
        theta = m_step_with(data, &es.responsibilities, layout, opts, Some(&es.ll_terms))?;
    }
}
