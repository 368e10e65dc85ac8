use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Stream};

use super::local;
use super::{em, BlockLayout, EmOptions, GmmParams, Responsibilities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    RandomResponsibility,
    #[default]
    KmeansppMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InitSpec {
    pub strategy: InitStrategy,
    pub seed: u64,
}

/// Where `θ⁰` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    Spec(InitSpec),
    /// Explicit parameters in original feature order; restricted to the
    /// fit's layout (off-block entries dropped).
    Given(GmmParams),
}

impl From<InitSpec> for Initialization {
    fn from(s: InitSpec) -> Self {
        Initialization::Spec(s)
    }
}

impl Initialization {
    /// `θ⁰` for `data` laid out as `layout`. `order[p]` is the original index
    /// of column `p` of `data`; an empty slice means the identity.
    pub fn resolve(&self, data: &Matrix, k: usize, layout: &BlockLayout, order: &[usize]) -> Result<GmmParams> {
        match self {
            Initialization::Spec(s) => init_params(data, k, layout, s.seed, s.strategy),
            Initialization::Given(p) => {
                if p.k() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        found: p.k(),
                    });
                }
                let identity: Vec<usize>;
                let order = if order.is_empty() {
                    identity = (0..layout.d()).collect();
                    &identity
                } else {
                    order
                };
                let original = p.to_original(&(0..p.d()).collect::<Vec<_>>());
                let restricted = original.restrict(order, layout)?;
                restricted.factorize()?;
                Ok(restricted)
            }
        }
    }
}

fn distinct_rows(data: &Matrix) -> usize {
    let mut keys: Vec<Vec<u64>> = data
        .iter_rows()
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: indices of `k` examples chosen by D² sampling.
pub(crate) fn kmeanspp_indices(data: &Matrix, k: usize, rng: &mut rng::Rng) -> Result<Vec<usize>> {
    let m = data.rows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|r| squared_distance(r, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateData(format!(
                "only {} distinct examples for K = {k}",
                chosen.len()
            )));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if w > 0.0 && acc > target {
                pick = Some(i);
                break;
            }
        }
        // rounding can leave `target` above the running sum; take the last candidate
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap());
        chosen.push(pick);
        for (i, r) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, data.row(pick)));
        }
    }
    Ok(chosen)
}

/// `θ⁰` with uniform weights. Deterministic per seed.
pub fn init_params(
    data: &Matrix,
    k: usize,
    layout: &BlockLayout,
    seed: u64,
    strategy: InitStrategy,
) -> Result<GmmParams> {
    let m = data.rows();
    if k == 0 {
        return Err(Error::invalid("k", "need at least one component"));
    }
    if data.cols() != layout.d() {
        return Err(Error::DimensionMismatch {
            expected: layout.d(),
            found: data.cols(),
        });
    }
    if m < k || distinct_rows(data) < k {
        return Err(Error::DegenerateData(format!("fewer than K = {k} distinct examples")));
    }
    let opts = EmOptions::default();
    let global_covs = || -> Result<Vec<_>> {
        layout
            .blocks()
            .iter()
            .map(|r| local::global_block_covariance(data, r.clone(), opts.reg_scale))
            .collect()
    };
    let uniform = vec![1.0 / k as f64; k];

    if k == 1 {
        let mean = local::global_block_mean(data, 0..data.cols());
        return GmmParams::new(
            layout.clone(),
            vec![1.0],
            Matrix::from_vec(1, data.cols(), mean)?,
            vec![global_covs()?],
        );
    }

    let mut rng = rng::stream(seed, Stream::Init);
    match strategy {
        InitStrategy::KmeansppMeans => {
            let idx = kmeanspp_indices(data, k, &mut rng)?;
            let means = data.select_rows(&idx);
            let covs = global_covs()?;
            GmmParams::new(layout.clone(), uniform, means, vec![covs; k])
        }
        InitStrategy::RandomResponsibility => {
            let mut gamma = Matrix::zeros(m, k);
            for i in 0..m {
                let row = gamma.row_mut(i);
                let mut s = 0.0;
                for g in row.iter_mut() {
                    // exponential draws give a uniform Dirichlet row
                    *g = -(1.0 - rng.random::<f64>()).ln();
                    s += *g;
                }
                row.iter_mut().for_each(|g| *g /= s);
            }
            let theta = em::m_step(data, &Responsibilities::from_matrix_unchecked(gamma), layout)?;
            let covs = (0..k).map(|c| theta.covariance_blocks(c).to_vec()).collect();
            GmmParams::new(layout.clone(), uniform, theta.means().clone(), covs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Matrix {
        Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![2.0, -1.0],
            vec![5.0, 5.0],
            vec![-3.0, 0.5],
            vec![1.5, 2.5],
        ])
        .unwrap()
    }

    #[test]
    fn single_component_is_global_moments() {
        let x = toy();
        for strategy in [InitStrategy::KmeansppMeans, InitStrategy::RandomResponsibility] {
            let p = init_params(&x, 1, &BlockLayout::dense(2), 3, strategy).unwrap();
            assert_eq!(p.weights(), &[1.0]);
            assert!((p.mean(0)[0] - 1.1).abs() < 1e-12);
            assert!((p.mean(0)[1] - 1.6).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let x = toy();
        let l = BlockLayout::new(2, vec![0..1, 1..2]).unwrap();
        for strategy in [InitStrategy::KmeansppMeans, InitStrategy::RandomResponsibility] {
            let a = init_params(&x, 2, &l, 11, strategy).unwrap();
            let b = init_params(&x, 2, &l, 11, strategy).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.weights(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn k_equals_m_picks_every_point_once() {
        let x = toy();
        for seed in 0..20 {
            let p = init_params(&x, 5, &BlockLayout::dense(2), seed, InitStrategy::KmeansppMeans).unwrap();
            let mut rows: Vec<Vec<f64>> = p.means().to_rows();
            let mut data = x.to_rows();
            rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
            data.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(rows, data);
        }
    }

    #[test]
    fn too_few_distinct_examples() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            init_params(&x, 2, &BlockLayout::dense(1), 0, InitStrategy::KmeansppMeans),
            Err(Error::DegenerateData(_))
        ));
    }
}
