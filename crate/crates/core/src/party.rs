//! State held by one computing party (a federated client or a hub root):
//! its feature block of the data, its slice of the parameters, and its own
//! copy of the weights and responsibilities.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::gmm::em::finish_e_step;
use crate::gmm::local::{self, BlockStats};
use crate::gmm::{BlockLayout, EmOptions, GmmParams, Responsibilities, StopReason, StopSpec};
use crate::linalg::{cholesky, CholeskyFactor, Matrix, SymMatrix};

#[derive(Debug, Clone)]
pub(crate) struct Party {
    pub cols: Range<usize>,
    pub data: Matrix,
    pub means: Matrix,
    pub covs: Vec<SymMatrix>,
    factors: Vec<CholeskyFactor>,
    pub weights: Vec<f64>,
    pub gamma: Matrix,
    pub ll_terms: Vec<f64>,
    stats: Option<BlockStats>,
}

impl Party {
    /// `block` is the index of `cols` in `theta`'s layout, `None` for a
    /// party without features.
    pub fn new(x: &Matrix, cols: Range<usize>, theta: &GmmParams, block: Option<usize>) -> Result<Self> {
        let k = theta.k();
        let idx: Vec<usize> = cols.clone().collect();
        let mut means = Matrix::zeros(k, cols.len());
        for c in 0..k {
            means.row_mut(c).copy_from_slice(&theta.mean(c)[cols.clone()]);
        }
        let covs = match block {
            Some(b) => (0..k).map(|c| theta.covariance_blocks(c)[b].clone()).collect(),
            None => vec![SymMatrix::zeros(0); k],
        };
        let mut p = Party {
            data: x.select_columns(&idx),
            cols,
            means,
            covs,
            factors: Vec::new(),
            weights: theta.weights().to_vec(),
            gamma: Matrix::zeros(x.rows(), k),
            ll_terms: vec![0.0; x.rows()],
            stats: None,
        };
        p.refactor()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn m(&self) -> usize {
        self.data.rows()
    }

    fn refactor(&mut self) -> Result<()> {
        self.factors = self
            .covs
            .iter()
            .enumerate()
            .map(|(c, s)| cholesky(s).map_err(|e| Error::NumericalFailure(format!("component {c}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Block Q-terms for `rows`, row-major `rows.len() × K`; all zeros for a
    /// featureless party.
    pub fn q_terms(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; rows.len() * self.k()];
        if self.dim() > 0 {
            let means: Vec<&[f64]> = (0..self.k()).map(|c| self.means.row(c)).collect();
            local::q_terms(&self.data, 0..self.dim(), rows, &means, &self.factors, &mut out);
        }
        out
    }

    /// Full E-step from the summed Q-terms of every example. Returns the LL.
    pub fn absorb_all(&mut self, q_sum: &[f64], d: usize) -> f64 {
        let es = finish_e_step(q_sum, &self.weights, d, self.m());
        self.gamma = es.responsibilities.into_matrix();
        self.ll_terms = es.ll_terms;
        es.ll
    }

    /// Batch E-step: refreshes `rows` and swaps their contribution in the
    /// running statistics. Returns the running LL over all examples.
    pub fn absorb_rows(&mut self, rows: &[usize], q_sum: &[f64], d: usize) -> f64 {
        let k = self.k();
        let es = finish_e_step(q_sum, &self.weights, d, rows.len());
        let fresh = es.responsibilities.matrix();
        for (i, &m) in rows.iter().enumerate() {
            if let Some(stats) = self.stats.as_mut() {
                let xb = self.data.row(m);
                stats.accumulate(xb, self.gamma.row(m), -1.0);
                stats.accumulate(xb, fresh.row(i), 1.0);
            }
            self.gamma
                .row_mut(m)
                .copy_from_slice(&fresh.as_slice()[i * k..(i + 1) * k]);
            self.ll_terms[m] = es.ll_terms[i];
        }
        self.ll_terms.iter().sum()
    }

    /// Starts incremental EM from the current responsibilities.
    pub fn start_incremental(&mut self) {
        let mut stats = BlockStats::new(self.k(), &self.data, 0..self.dim());
        let rows: Vec<usize> = (0..self.m()).collect();
        stats.accumulate_rows(&self.data, 0..self.dim(), &self.gamma, &rows, 1.0);
        self.stats = Some(stats);
    }

    pub fn stats(&self) -> Option<&BlockStats> {
        self.stats.as_ref()
    }

    /// M-step on this party's block, from the running statistics when
    /// incremental EM is active and from the full responsibilities otherwise.
    pub fn m_step(&mut self, opts: &EmOptions) -> Result<()> {
        match &self.stats {
            Some(stats) => self.m_step_from_stats(stats.clone(), opts),
            None => self.m_step_full(opts),
        }
    }

    fn m_step_full(&mut self, opts: &EmOptions) -> Result<()> {
        let (m, k) = (self.m(), self.k());
        let mass = local::component_mass(&self.gamma);
        let empty = local::empty_components(&mass, m);
        if let Some(&c) = empty.first() {
            if !opts.reseed_empty {
                return Err(Error::EmptyComponent {
                    component: c,
                    mass: mass[c],
                });
            }
        }
        let mut weights = local::weights_from_mass(&mass, m);
        let safe_mass: Vec<f64> = mass
            .iter()
            .enumerate()
            .map(|(c, &s)| if empty.contains(&c) { 1.0 } else { s })
            .collect();
        let db = self.dim();
        if db > 0 {
            let (mu, cov) = local::block_moments(&self.data, 0..db, &self.gamma, &safe_mass, opts.reg_scale)?;
            for c in 0..k {
                self.means.row_mut(c).copy_from_slice(&mu[c]);
            }
            self.covs = cov;
        }
        if !empty.is_empty() {
            let worst = local::worst_fit_example(&self.ll_terms);
            if db > 0 {
                let global = local::global_block_covariance(&self.data, 0..db, opts.reg_scale)?;
                for &c in &empty {
                    let row = self.data.row(worst).to_vec();
                    self.means.row_mut(c).copy_from_slice(&row);
                    self.covs[c] = global.clone();
                }
            }
            local::reseed_weights(&mut weights, &empty, m);
        }
        self.weights = weights;
        self.refactor()
    }

    fn m_step_from_stats(&mut self, stats: BlockStats, opts: &EmOptions) -> Result<()> {
        let m = self.m();
        let mass = stats.mass();
        if let Some(&c) = local::empty_components(mass, m).first() {
            return Err(Error::EmptyComponent {
                component: c,
                mass: mass[c],
            });
        }
        let weights = local::weights_from_mass(mass, m);
        if self.dim() > 0 {
            let (mu, cov) = stats.moments(opts.reg_scale)?;
            for (c, row) in mu.iter().enumerate() {
                self.means.row_mut(c).copy_from_slice(row);
            }
            self.covs = cov;
        }
        // rounding in the running sums can leave the weights a hair off the simplex
        let total: f64 = weights.iter().sum();
        self.weights = weights.iter().map(|w| w / total).collect();
        self.refactor()
    }

    pub fn responsibilities(&self) -> Responsibilities {
        Responsibilities::from_matrix_unchecked(self.gamma.clone())
    }
}

/// Stitches the parties' blocks into one parameter set over `layout`, which
/// lists the nonempty parties' column ranges in order.
pub(crate) fn assemble(parties: &[&Party], layout: &BlockLayout, weights: Vec<f64>) -> Result<GmmParams> {
    let k = weights.len();
    let mut means = Matrix::zeros(k, layout.d());
    let mut covs = vec![Vec::with_capacity(layout.num_blocks()); k];
    for p in parties.iter().filter(|p| p.dim() > 0) {
        for c in 0..k {
            means.row_mut(c)[p.cols.clone()].copy_from_slice(p.means.row(c));
            covs[c].push(p.covs[c].clone());
        }
    }
    GmmParams::new(layout.clone(), weights, means, covs)
}

/// Stopping bookkeeping shared by the distributed engines. Every party
/// tracks its own LL; the fit stops once all of them plateau. Under
/// incremental EM the comparison is made between consecutive epoch ends.
#[derive(Debug, Clone)]
pub(crate) struct Progress {
    stop: StopSpec,
    previous: Option<Vec<f64>>,
    iterations: usize,
}

impl Progress {
    pub fn new(stop: StopSpec) -> Self {
        Progress {
            stop,
            previous: None,
            iterations: 0,
        }
    }

    /// Records one iteration's per-party LLs; `checkpoint` marks the
    /// iterations at which the plateau test may fire.
    pub fn record(&mut self, lls: &[f64], checkpoint: bool) -> Option<StopReason> {
        self.iterations += 1;
        if checkpoint {
            let done = self
                .previous
                .as_ref()
                .is_some_and(|prev| prev.iter().zip(lls).all(|(&p, &c)| self.stop.plateaued(p, c)));
            self.previous = Some(lls.to_vec());
            if done {
                return Some(StopReason::LlPlateau);
            }
        }
        (self.iterations >= self.stop.max_iters).then_some(StopReason::MaxIters)
    }
}
