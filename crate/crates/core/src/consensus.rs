//! Synchronous averaging consensus `z ← W z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::topology::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMode {
    #[default]
    Iterative,
    /// Every agent receives the true average (rounds are ignored).
    ExactOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub rounds: usize,
    pub mode: ConsensusMode,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            rounds: 100,
            mode: ConsensusMode::Iterative,
        }
    }
}

impl ConsensusConfig {
    pub fn exact() -> Self {
        ConsensusConfig {
            rounds: 0,
            mode: ConsensusMode::ExactOracle,
        }
    }

    pub fn iterative(rounds: usize) -> Self {
        ConsensusConfig {
            rounds,
            mode: ConsensusMode::Iterative,
        }
    }

    /// Mixing rounds actually performed per invocation.
    pub fn effective_rounds(&self) -> usize {
        match self.mode {
            ConsensusMode::Iterative => self.rounds,
            ConsensusMode::ExactOracle => 0,
        }
    }
}

pub fn run_consensus(w: &WeightMatrix, z0: &[f64], cfg: &ConsensusConfig) -> Result<Vec<f64>> {
    let z = Matrix::from_vec(z0.len(), 1, z0.to_vec())?;
    Ok(run_consensus_batch(w, &z, cfg)?.as_slice().to_vec())
}

/// Runs consensus on every column of `z0` (agents × columns) at once, so
/// that all columns share each pass over the graph.
pub fn run_consensus_batch(w: &WeightMatrix, z0: &Matrix, cfg: &ConsensusConfig) -> Result<Matrix> {
    let n = w.n();
    if z0.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z0.rows(),
        });
    }
    let c = z0.cols();
    match cfg.mode {
        ConsensusMode::ExactOracle => {
            let mut mean = vec![0.0; c];
            for row in z0.iter_rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut out = Matrix::zeros(n, c);
            for u in 0..n {
                out.row_mut(u).copy_from_slice(&mean);
            }
            Ok(out)
        }
        ConsensusMode::Iterative => {
            let mut cur = z0.clone();
            let mut next = Matrix::zeros(n, c);
            for _ in 0..cfg.rounds {
                for u in 0..n {
                    let out = next.row_mut(u);
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for &(v, wv) in w.nonzeros(u) {
                        for (o, x) in out.iter_mut().zip(cur.row(v)) {
                            *o += wv * x;
                        }
                    }
                }
                std::mem::swap(&mut cur, &mut next);
            }
            Ok(cur)
        }
    }
}

/// `max_u |z[u] − mean(z0)|`.
pub fn consensus_error(z: &[f64], z0: &[f64]) -> f64 {
    let mean = z0.iter().sum::<f64>() / z0.len() as f64;
    z.iter().fold(0.0, |m, v| f64::max(m, (v - mean).abs()))
}
