//! Datasets, synthetic ground truth, CSV I/O and feature-to-agent maps.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{BlockLayout, GmmParams};
use crate::linalg::{cholesky, Matrix, SymMatrix};
use crate::rng::{self, Stream};

/// `M` examples of dimension `d`, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::DimensionMismatch {
                    expected: x.rows(),
                    found: l.len(),
                });
            }
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite value in data".into()));
        }
        Ok(Dataset { x, labels })
    }

    pub fn m(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Columns reordered so that new column `p` is old column `order[p]`.
    pub fn permute_features(&self, order: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(order),
            labels: self.labels.clone(),
        }
    }
}

/// Draws `m` labeled examples from `theta`.
pub fn sample_gmm(theta: &GmmParams, m: usize, seed: u64) -> Result<Dataset> {
    let d = theta.d();
    let factors = (0..theta.k())
        .map(|k| cholesky(&theta.dense_covariance(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(seed, Stream::Sampling);
    let mut x = Matrix::zeros(m, d);
    let mut labels = Vec::with_capacity(m);
    let mut z = vec![0.0; d];
    for i in 0..m {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = theta.k() - 1;
        for (k, &w) in theta.weights().iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                comp = k;
                break;
            }
        }
        // guard against the tail of the CDF landing on a zero-weight component
        while theta.weights()[comp] == 0.0 && comp > 0 {
            comp -= 1;
        }
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let f = &factors[comp];
        let mu = theta.mean(comp);
        let row = x.row_mut(i);
        for r in 0..d {
            let mut s = mu[r];
            for c in 0..=r {
                s += f.lower(r, c) * z[c];
            }
            row[r] = s;
        }
        labels.push(comp);
    }
    Dataset::new(x, Some(labels))
}

const SEPARATION_ATTEMPTS: usize = 1000;

/// Random dense ground truth: Dirichlet(1) weights, `Σ_k = A_k A_kᵀ + I`
/// with standard normal `A_k`, and means uniform in a box, rejected until
/// every pair is at least `separation` mean component radii apart. The
/// radius of a component is `sqrt(tr Σ_k / d)`.
pub fn random_gmm(k: usize, d: usize, seed: u64, separation: f64) -> Result<GmmParams> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("k/d", "K and d must be at least 1"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::invalid(
            "separation",
            format!("{separation} is not a finite nonnegative number"),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Truth);
    let mut weights: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut covs = Vec::with_capacity(k);
    for _ in 0..k {
        let a: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
        covs.push(SymMatrix::from_lower_fn(d, |i, j| {
            let dot: f64 = (0..d).map(|p| a[i * d + p] * a[j * d + p]).sum();
            dot + if i == j { 1.0 } else { 0.0 }
        }));
    }
    let radius = covs.iter().map(|c| (c.trace() / d as f64).sqrt()).sum::<f64>() / k as f64;
    let min_dist = separation * radius;
    let side = if separation > 0.0 {
        2.0 * min_dist * (k as f64).powf(1.0 / d as f64)
    } else {
        radius
    };

    let mut means = Matrix::zeros(k, d);
    let mut placed = false;
    for _ in 0..SEPARATION_ATTEMPTS {
        for v in means.as_mut_slice() {
            *v = (rng.random::<f64>() - 0.5) * side;
        }
        let ok = (0..k).all(|i| {
            (0..i).all(|j| {
                let dist2: f64 = means
                    .row(i)
                    .iter()
                    .zip(means.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist2.sqrt() >= min_dist
            })
        });
        if ok {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::SeparationInfeasible {
            separation,
            attempts: SEPARATION_ATTEMPTS,
        });
    }
    GmmParams::new(
        BlockLayout::dense(d),
        weights,
        means,
        covs.into_iter().map(|c| vec![c]).collect(),
    )
}

/// Which CSV column, if any, holds integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "last" {
            LabelColumn::Last
        } else if let Ok(i) = s.parse() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(s.to_string())
        })
    }
}

pub fn load_csv(path: &Path, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

/// Parses a rectangular numeric CSV. A first row that does not parse as
/// numbers is taken as the header. Rows and columns in errors are 1-based.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header: Option<Vec<String>> = None;
    let mut width = None;
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut label_idx: Option<usize> = None;
    let mut rows = 0;

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: line + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if line == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(rec.iter().map(str::to_string).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::RaggedRows {
                row: line + 1,
                expected: w,
                found: rec.len(),
            });
        }
        if label_idx.is_none() {
            label_idx = match label_column {
                None => None,
                Some(LabelColumn::Last) => Some(w - 1),
                Some(LabelColumn::Index(i)) if *i < w => Some(*i),
                Some(LabelColumn::Index(i)) => {
                    return Err(Error::invalid(
                        "label_column",
                        format!("index {i} but rows have {w} fields"),
                    ))
                }
                Some(LabelColumn::Name(n)) => {
                    let pos = header.as_ref().and_then(|h| h.iter().position(|c| c == n));
                    Some(pos.ok_or_else(|| Error::invalid("label_column", format!("no column named `{n}`")))?)
                }
            };
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line + 1,
                column: col + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line + 1,
                    column: col + 1,
                    message: "missing or non-finite value".into(),
                });
            }
            if Some(col) == label_idx {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        row: line + 1,
                        column: col + 1,
                        message: format!("label `{field}` is not a nonnegative integer"),
                    });
                }
                raw_labels.push(v as usize);
            } else {
                values.push(v);
            }
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0) - usize::from(label_idx.is_some());
    let x = Matrix::from_vec(rows, cols, values)?;
    Dataset::new(x, label_idx.map(|_| raw_labels))
}

/// Writes `x0,…,x{d-1}[,label]` with a header row. Floats use 17
/// significant digits so that reading back is exact.
pub fn write_csv<W: Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format {
        what: "csv",
        message: e.to_string(),
    };
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(to_err)?;
    for (m, row) in ds.x.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[m].to_string());
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format {
        what: "csv",
        message: e.to_string(),
    })
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-feature affine map applied by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Zero mean, unit population variance per feature.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let (m, d) = (ds.m(), ds.d());
    let mut mean = vec![0.0; d];
    for row in ds.x.iter_rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut var = vec![0.0; d];
    for row in ds.x.iter_rows() {
        for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let mut scale = Vec::with_capacity(d);
    for (j, v) in var.iter().enumerate() {
        let sd = (v / m as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance { feature: j });
        }
        scale.push(sd);
    }
    let mut x = ds.x.clone();
    for i in 0..m {
        for ((v, mu), s) in x.row_mut(i).iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - mu) / s;
        }
    }
    Ok((
        Dataset {
            x,
            labels: ds.labels.clone(),
        },
        Standardization { mean, scale },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignmentScheme {
    /// Contiguous blocks of `⌈d/N⌉` then `⌊d/N⌋` features, agents in id
    /// order. Requires `N ≤ d`.
    Even,
    /// Like `Even` over a seeded random agent order; when `N > d`, `d`
    /// random agents own one feature each and the rest own none.
    Scattered,
    /// Explicit owner of every feature.
    ByList(Vec<usize>),
}

/// Which agent observes each feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAssignment {
    agent_of_feature: Vec<usize>,
    agents: usize,
}

impl FeatureAssignment {
    pub fn new(agent_of_feature: Vec<usize>, agents: usize) -> Result<Self> {
        if agent_of_feature.is_empty() {
            return Err(Error::InvalidAssignment("no features".into()));
        }
        if let Some(&a) = agent_of_feature.iter().find(|&&a| a >= agents) {
            return Err(Error::InvalidAssignment(format!("agent {a} >= N = {agents}")));
        }
        Ok(FeatureAssignment {
            agent_of_feature,
            agents,
        })
    }

    pub fn d(&self) -> usize {
        self.agent_of_feature.len()
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn agent_of_feature(&self) -> &[usize] {
        &self.agent_of_feature
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![0; self.agents];
        for &a in &self.agent_of_feature {
            d[a] += 1;
        }
        d
    }

    /// Original feature indices observed by `agent`, ascending.
    pub fn features_of(&self, agent: usize) -> Vec<usize> {
        (0..self.d()).filter(|&f| self.agent_of_feature[f] == agent).collect()
    }

    /// Lays features out group by group: each group is an ordered list of
    /// agents whose features form one covariance block.
    pub fn arrange(&self, groups: &[Vec<usize>]) -> Result<FeatureArrangement> {
        let mut seen = vec![false; self.agents];
        let mut order = Vec::with_capacity(self.d());
        let mut ranges = Vec::with_capacity(groups.len());
        for g in groups {
            let lo = order.len();
            for &a in g {
                if a >= self.agents || seen[a] {
                    return Err(Error::InvalidAssignment(format!("agent {a} repeated or out of range")));
                }
                seen[a] = true;
                order.extend(self.features_of(a));
            }
            ranges.push(lo..order.len());
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidAssignment("groups do not cover every agent".into()));
        }
        let sizes: Vec<usize> = ranges.iter().map(Range::len).collect();
        Ok(FeatureArrangement {
            order,
            layout: BlockLayout::from_sizes(&sizes)?,
            group_ranges: ranges,
        })
    }

    /// One block per agent, agents in id order.
    pub fn per_agent(&self) -> FeatureArrangement {
        let groups: Vec<Vec<usize>> = (0..self.agents).map(|a| vec![a]).collect();
        self.arrange(&groups).expect("singleton groups always cover")
    }
}

/// A feature permutation plus the block layout it induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureArrangement {
    /// `order[p]` is the original index of the feature at position `p`.
    pub order: Vec<usize>,
    /// Blocks of the nonempty groups.
    pub layout: BlockLayout,
    /// Range of each group in the permuted order; empty for featureless
    /// groups.
    pub group_ranges: Vec<Range<usize>>,
}

pub fn assign_features(d: usize, agents: usize, scheme: &AssignmentScheme, seed: u64) -> Result<FeatureAssignment> {
    if agents == 0 {
        return Err(Error::InvalidAssignment("need at least one agent".into()));
    }
    let contiguous = |ids: &[usize]| -> Vec<usize> {
        let n = ids.len();
        let (base, extra) = (d / n, d % n);
        let mut owner = Vec::with_capacity(d);
        for (i, &a) in ids.iter().enumerate() {
            let size = base + usize::from(i < extra);
            owner.extend(std::iter::repeat_n(a, size));
        }
        owner
    };
    match scheme {
        AssignmentScheme::Even => {
            if agents > d {
                return Err(Error::InvalidAssignment(format!(
                    "even split needs N <= d (N = {agents}, d = {d})"
                )));
            }
            let ids: Vec<usize> = (0..agents).collect();
            FeatureAssignment::new(contiguous(&ids), agents)
        }
        AssignmentScheme::Scattered => {
            let mut rng = rng::stream(seed, Stream::Assignment);
            let mut ids: Vec<usize> = (0..agents).collect();
            for i in (1..agents).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            ids.truncate(agents.min(d));
            FeatureAssignment::new(contiguous(&ids), agents)
        }
        AssignmentScheme::ByList(list) => {
            if list.len() != d {
                return Err(Error::InvalidAssignment(format!(
                    "list covers {} features, d = {d}",
                    list.len()
                )));
            }
            FeatureAssignment::new(list.clone(), agents)
        }
    }
}

/// On-disk form of a fitted or ground-truth model, in original feature
/// order. `blocks[b]` lists the original features of covariance block `b`
/// and `sigma[k][b]` is that block of component `k`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDocument {
    pub k: usize,
    pub d: usize,
    pub blocks: Vec<Vec<usize>>,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
}

impl ThetaDocument {
    /// `params` is laid out over the permuted features `order`.
    pub fn from_params(params: &GmmParams, order: &[usize]) -> Self {
        let d = params.d();
        let blocks: Vec<Vec<usize>> = params
            .layout()
            .blocks()
            .iter()
            .map(|r| order[r.clone()].to_vec())
            .collect();
        let mut mu = vec![vec![0.0; d]; params.k()];
        for (k, row) in mu.iter_mut().enumerate() {
            for (p, &o) in order.iter().enumerate() {
                row[o] = params.mean(k)[p];
            }
        }
        let sigma = (0..params.k())
            .map(|k| {
                params
                    .covariance_blocks(k)
                    .iter()
                    .map(|c| c.as_slice().to_vec())
                    .collect()
            })
            .collect();
        ThetaDocument {
            k: params.k(),
            d,
            blocks,
            pi: params.weights().to_vec(),
            mu,
            sigma,
        }
    }

    /// Back to parameters over the permuted order given by concatenating
    /// `blocks`; returns that order alongside.
    pub fn to_params(&self) -> Result<(GmmParams, Vec<usize>)> {
        let order: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        let mut check = order.clone();
        check.sort_unstable();
        if check != (0..self.d).collect::<Vec<_>>() {
            return Err(Error::Format {
                what: "theta document",
                message: "blocks do not partition the features".into(),
            });
        }
        let sizes: Vec<usize> = self.blocks.iter().map(Vec::len).collect();
        let layout = BlockLayout::from_sizes(&sizes)?;
        let mut means = Matrix::zeros(self.k, self.d);
        if self.mu.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: self.mu.len(),
            });
        }
        for (k, row) in self.mu.iter().enumerate() {
            if row.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    found: row.len(),
                });
            }
            for (p, &o) in order.iter().enumerate() {
                means[(k, p)] = row[o];
            }
        }
        let covs = self
            .sigma
            .iter()
            .map(|blocks| {
                blocks
                    .iter()
                    .zip(&sizes)
                    .map(|(v, &s)| SymMatrix::from_row_major(s, v.clone()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((GmmParams::new(layout, self.pi.clone(), means, covs)?, order))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("theta document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format {
            what: "theta document",
            message: e.to_string(),
        })
    }
}
