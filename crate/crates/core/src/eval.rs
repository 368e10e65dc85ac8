//! Clustering accuracy, a k-means baseline, and trace utilities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gmm::init::kmeanspp_indices;
use crate::gmm::Responsibilities;
use crate::linalg::Matrix;
use crate::rng::{self, Stream};

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_assign(gamma: &Responsibilities) -> Vec<usize> {
    gamma
        .matrix()
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (k, &g) in row.iter().enumerate() {
                if g > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    /// `permutation[cluster]` is the label the cluster is matched to.
    pub permutation: Vec<usize>,
    /// `confusion[cluster][label]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl AccuracyReport {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("cluster");
        for l in 0..k {
            s.push_str(&format!(",label{l}"));
        }
        s.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            s.push_str(&c.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(pred: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: pred.len(),
        });
    }
    let mut c = vec![vec![0; k]; k];
    for (&p, &l) in pred.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(Error::invalid("labels", format!("value {} outside 0..{k}", p.max(l))));
        }
        c[p][l] += 1;
    }
    Ok(c)
}

/// Best bijection by enumerating all `K!` permutations in lexicographic
/// order; the first maximizer wins.
pub fn assignment_exhaustive(score: &[Vec<usize>]) -> (Vec<usize>, usize) {
    fn go(
        score: &[Vec<usize>],
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        acc: usize,
        best: &mut (Vec<usize>, usize),
    ) {
        if row == score.len() {
            if acc > best.1 || best.0.is_empty() {
                *best = (cur.clone(), acc);
            }
            return;
        }
        for col in 0..score.len() {
            if !used[col] {
                used[col] = true;
                cur.push(col);
                go(score, row + 1, used, cur, acc + score[row][col], best);
                cur.pop();
                used[col] = false;
            }
        }
    }
    let mut best = (Vec::new(), 0);
    go(score, 0, &mut vec![false; score.len()], &mut Vec::new(), 0, &mut best);
    best
}

/// Best bijection by the Hungarian method, `O(K³)`.
pub fn assignment_hungarian(score: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = score.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    let max = score.iter().flatten().copied().max().unwrap_or(0) as i64;
    // minimize max − score, 1-based potentials as in the classic formulation
    let cost = |i: usize, j: usize| max - score[i - 1][j - 1] as i64;
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; n + 1]);
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| score[i][perm[i]]).sum();
    (perm, total)
}

/// Largest `K` for which the exhaustive search is used.
pub const EXHAUSTIVE_MAX_K: usize = 8;

/// Fraction of examples matched under the best cluster-to-label bijection.
pub fn clustering_accuracy(pred: &[usize], labels: &[usize], k: usize) -> Result<AccuracyReport> {
    let confusion = confusion_matrix(pred, labels, k)?;
    let (permutation, correct) = if k <= EXHAUSTIVE_MAX_K {
        assignment_exhaustive(&confusion)
    } else {
        assignment_hungarian(&confusion)
    };
    Ok(AccuracyReport {
        accuracy: if pred.is_empty() {
            1.0
        } else {
            correct as f64 / pred.len() as f64
        },
        correct,
        permutation,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

const LLOYD_CAP: usize = 500;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter_rows().enumerate() {
        let d = sq(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(x: &Matrix, mut centers: Matrix) -> KMeansResult {
    let (m, k, d) = (x.rows(), centers.rows(), x.cols());
    let mut assign = vec![usize::MAX; m];
    let mut history = Vec::new();
    for _ in 0..LLOYD_CAP {
        let mut changed = false;
        let mut dist = vec![0.0; m];
        for i in 0..m {
            let (c, dd) = nearest(x.row(i), &centers);
            dist[i] = dd;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        history.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; m];
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            } else {
                // empty cluster: move it onto the point farthest from its center
                let far = (0..m)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                taken[far] = true;
                centers.row_mut(c).copy_from_slice(x.row(far));
                dist[far] = 0.0;
            }
        }
    }
    let inertia = *history.last().unwrap();
    KMeansResult {
        assignments: assign,
        centers,
        inertia,
        history,
    }
}

/// k-means++ seeding then Lloyd iterations; the lowest inertia over
/// `restarts` independent seedings is returned.
pub fn kmeans_baseline(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || restarts == 0 {
        return Err(Error::invalid("k/restarts", "must be at least 1"));
    }
    if x.rows() < k {
        return Err(Error::DegenerateData(format!("{} examples for K = {k}", x.rows())));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = rng::substream(seed, Stream::KMeans, r as u64);
        let idx = kmeanspp_indices(x, k, &mut rng)?;
        let run = lloyd(x, x.select_rows(&idx));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Per-iteration mean over runs of different lengths, each run padded
/// with its last value.
pub fn mean_trajectory(runs: &[Vec<f64>]) -> Vec<f64> {
    let len = runs.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| !r.is_empty())
                .map(|r| r[t.min(r.len() - 1)])
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_assign_rules() {
        let g = Responsibilities::new(Matrix::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap())
            .unwrap();
        assert_eq!(hard_assign(&g), vec![0, 0, 1]);
    }

    #[test]
    fn accuracy_examples() {
        let labels = vec![0, 1, 1, 0, 1];
        let r = clustering_accuracy(&labels, &labels, 2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.permutation, vec![0, 1]);
        let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        let r = clustering_accuracy(&flipped, &labels, 2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.permutation, vec![1, 0]);
        assert!(matches!(
            clustering_accuracy(&[0], &[0, 1], 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hungarian_agrees_on_a_known_case() {
        let s = vec![vec![7, 1, 3], vec![2, 8, 2], vec![9, 4, 6]];
        let (p, t) = assignment_hungarian(&s);
        assert_eq!(t, assignment_exhaustive(&s).1);
        assert_eq!(t, (0..3).map(|i| s[i][p[i]]).sum::<usize>());
    }

    #[test]
    fn kmeans_k_equals_m() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 5.0], vec![-2.0, 3.0]]).unwrap();
        let r = kmeans_baseline(&x, 3, 0, 2).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn trajectory_padding() {
        let runs = vec![vec![1.0, 2.0, 3.0], vec![5.0]];
        assert_eq!(mean_trajectory(&runs), vec![3.0, 3.5, 4.0]);
        assert_eq!(mean_trajectory(&runs[..1]), runs[0]);
    }
}
