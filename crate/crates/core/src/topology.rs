//! Communication graphs and consensus weight matrices.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng as _;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid("edges", format!("edge {u}-{v} outside 0..{n}")));
            }
            if u == v {
                return Err(Error::invalid("edges", format!("self-loop at {u}")));
            }
            if adj[u].contains(&v) {
                return Err(Error::invalid("edges", format!("duplicate edge {u}-{v}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        Ok(Graph { n, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.num_edges() as f64 / self.n as f64
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::with_capacity(self.num_edges());
        for (u, nb) in self.adj.iter().enumerate() {
            e.extend(nb.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        e
    }

    /// Hop distances from `src` over the vertices with `alive[v]` set (all
    /// vertices when `alive` is `None`); unreachable entries are `None`.
    pub fn bfs(&self, src: usize, alive: Option<&[bool]>) -> Vec<Option<usize>> {
        let ok = |v: usize| alive.is_none_or(|a| a[v]);
        let mut dist = vec![None; self.n];
        if !ok(src) {
            return dist;
        }
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adj[u] {
                if ok(v) && dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.bfs(0, None).iter().all(Option::is_some)
    }

    pub fn require_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::NotConnected)
        }
    }

    /// Edge-list text: a header `n <count>` followed by one `u v` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for (u, v) in self.edges() {
            writeln!(s, "{u} {v}").unwrap();
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            what: "edge list",
            message,
        };
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let n = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("n ")
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| fmt(format!("expected `n <count>` header, got `{l}`")))?,
            None => return Err(fmt("empty file".into())),
        };
        let mut edges = Vec::new();
        for (i, l) in lines {
            let mut it = l.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => return Err(fmt(format!("line {}: expected `u v`, got `{l}`", i + 1))),
            }
        }
        Graph::new(n, &edges)
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need at least 2 agents, got {n}")));
    }
    Ok(())
}

pub fn gen_cycle(n: usize) -> Result<Graph> {
    check_n(n)?;
    if n == 2 {
        return Graph::new(2, &[(0, 1)]);
    }
    let edges: Vec<_> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    Graph::new(n, &edges)
}

/// Node 0 is the center.
pub fn gen_star(n: usize) -> Result<Graph> {
    check_n(n)?;
    let edges: Vec<_> = (1..n).map(|u| (0, u)).collect();
    Graph::new(n, &edges)
}

pub fn gen_complete(n: usize) -> Result<Graph> {
    check_n(n)?;
    let mut edges = Vec::new();
    for u in 0..n {
        edges.extend((u + 1..n).map(|v| (u, v)));
    }
    Graph::new(n, &edges)
}

fn unit_square_points(n: usize, rng: &mut rng::Rng) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
}

fn within(points: &[(f64, f64)], radius: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..points.len() {
        for v in u + 1..points.len() {
            let (dx, dy) = (points[u].0 - points[v].0, points[u].1 - points[v].1);
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// A random geometric graph and the radius it was finally built with.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    pub graph: Graph,
    pub radius: f64,
}

/// `n` uniform points in the unit square, joined when within `radius`; the
/// radius grows by 10% until the graph is connected.
pub fn gen_random_geometric(n: usize, radius: f64, seed: u64) -> Result<GeometricGraph> {
    check_n(n)?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid("radius", format!("{radius} is not positive")));
    }
    let points = unit_square_points(n, &mut rng::stream(seed, Stream::Graph));
    let mut r = radius;
    loop {
        let graph = Graph::new(n, &within(&points, r))?;
        if graph.is_connected() {
            return Ok(GeometricGraph { graph, radius: r });
        }
        r *= 1.1;
    }
}

/// Connected random geometric graph with mean degree within 5% of
/// `mean_degree`. The radius is chosen on the sorted pairwise distances
/// (exact bisection over the finitely many distinct graphs); point sets
/// that cannot hit the target while connected are redrawn.
pub fn gen_geometric_with_degree(n: usize, mean_degree: f64, seed: u64) -> Result<GeometricGraph> {
    check_n(n)?;
    let max = (n - 1) as f64;
    if !(mean_degree >= 2.0 * (n - 1) as f64 / n as f64) || mean_degree > max {
        return Err(Error::invalid(
            "mean_degree",
            format!("{mean_degree} cannot be reached by a connected graph on {n} nodes"),
        ));
    }
    let target_edges = (mean_degree * n as f64 / 2.0).round() as usize;
    for attempt in 0..1000u64 {
        let points = unit_square_points(n, &mut rng::substream(seed, Stream::Graph, attempt));
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
        for u in 0..n {
            for v in u + 1..n {
                let (dx, dy) = (points[u].0 - points[v].0, points[u].1 - points[v].1);
                pairs.push(((dx * dx + dy * dy).sqrt(), u, v));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let radius = pairs[target_edges - 1].0;
        let edges: Vec<_> = pairs.iter().take_while(|p| p.0 <= radius).map(|p| (p.1, p.2)).collect();
        let graph = Graph::new(n, &edges)?;
        let achieved = graph.mean_degree();
        if graph.is_connected() && (achieved - mean_degree).abs() <= 0.05 * mean_degree {
            return Ok(GeometricGraph { graph, radius });
        }
    }
    Err(Error::invalid(
        "mean_degree",
        format!("no connected geometric graph with mean degree {mean_degree} found"),
    ))
}

/// Barabási–Albert preferential attachment from an `m_attach`-clique: every
/// new node links to `m_attach` distinct existing nodes drawn with
/// probability proportional to degree.
pub fn gen_scale_free(n: usize, m_attach: usize, seed: u64) -> Result<Graph> {
    check_n(n)?;
    if m_attach == 0 || m_attach >= n {
        return Err(Error::invalid(
            "m_attach",
            format!("need 1 <= m_attach < n, got {m_attach}"),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Graph);
    let mut edges = Vec::new();
    for u in 0..m_attach {
        edges.extend((u + 1..m_attach).map(|v| (u, v)));
    }
    // one entry per edge endpoint, so uniform draws are degree-proportional
    let mut endpoints: Vec<usize> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for new in m_attach..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m_attach);
        while targets.len() < m_attach {
            let t = if endpoints.is_empty() {
                // the single-node seed clique has no edges yet
                rng.random_range(0..new)
            } else {
                endpoints[rng.random_range(0..endpoints.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    Graph::new(n, &edges)
}

/// Symmetric, doubly stochastic mixing matrix supported on the graph.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    n: usize,
    dense: Vec<f64>,
    /// Per row: `(column, weight)` for the nonzero entries, self included,
    /// in increasing column order.
    sparse: Vec<Vec<(usize, f64)>>,
    lambda2: f64,
}

impl WeightMatrix {
    fn from_dense(n: usize, dense: Vec<f64>) -> Result<Self> {
        let sparse = (0..n)
            .map(|u| {
                (0..n)
                    .filter(|&v| dense[u * n + v] != 0.0)
                    .map(|v| (v, dense[u * n + v]))
                    .collect()
            })
            .collect();
        let mut w = WeightMatrix {
            n,
            dense,
            sparse,
            lambda2: f64::NAN,
        };
        w.lambda2 = estimate_lambda2(&w)?;
        Ok(w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.dense[u * self.n + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.dense[u * self.n..(u + 1) * self.n]
    }

    pub fn nonzeros(&self, u: usize) -> &[(usize, f64)] {
        &self.sparse[u]
    }

    /// Second-largest eigenvalue magnitude, estimated at construction.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.sparse
            .iter()
            .map(|row| row.iter().map(|&(v, w)| w * z[v]).sum())
            .collect()
    }
}

pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    g.require_connected()?;
    let n = g.n();
    let mut dense = vec![0.0; n * n];
    for u in 0..n {
        let mut off = 0.0;
        for &v in g.neighbors(u) {
            let w = 1.0 / (1 + g.degree(u).max(g.degree(v))) as f64;
            dense[u * n + v] = w;
            off += w;
        }
        dense[u * n + u] = 1.0 - off;
    }
    WeightMatrix::from_dense(n, dense)
}

fn laplacian_apply(g: &Graph, z: &[f64]) -> Vec<f64> {
    (0..g.n())
        .map(|u| g.degree(u) as f64 * z[u] - g.neighbors(u).iter().map(|&v| z[v]).sum::<f64>())
        .collect()
}

const POWER_CAP: usize = 200_000;
const POWER_RESIDUAL: f64 = 1e-13;

fn start_vector(n: usize) -> Vec<f64> {
    let mut rng = rng::Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate_ones(&mut v);
    normalize(&mut v);
    v
}

fn deflate_ones(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of a symmetric PSD operator restricted to `1⊥`, by
/// power iteration; stops once the eigen-residual is below tolerance.
fn top_eigenvalue_psd(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> Result<f64> {
    let mut v = start_vector(n);
    if v.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    for _ in 0..POWER_CAP {
        let mut av = apply(&v);
        deflate_ones(&mut av);
        let rho = dot(&v, &av);
        let residual = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - rho * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_RESIDUAL * rho.abs().max(1.0) {
            return Ok(rho.max(0.0));
        }
        if normalize(&mut av) == 0.0 {
            return Ok(0.0);
        }
        v = av;
    }
    Err(Error::ConvergenceFailure { iterations: POWER_CAP })
}

/// `max |λ|` over the eigenvalues of `w` other than the consensus
/// eigenvalue 1, via power iteration on `(W − 11ᵀ/n)²`.
pub fn estimate_lambda2(w: &WeightMatrix) -> Result<f64> {
    let rho = top_eigenvalue_psd(w.n, |v| {
        let mut wv = w.apply(v);
        deflate_ones(&mut wv);
        let mut w2v = w.apply(&wv);
        deflate_ones(&mut w2v);
        w2v
    })?;
    Ok(rho.sqrt())
}

/// Largest Laplacian eigenvalue.
pub fn laplacian_lambda_max(g: &Graph) -> Result<f64> {
    // the Laplacian annihilates 1, so restricting to 1⊥ loses nothing
    top_eigenvalue_psd(g.n(), |v| laplacian_apply(g, v))
}

/// `W = I − αL`, valid for `0 < α < 2/λ_max(L)`.
pub fn laplacian_weights(g: &Graph, alpha: f64) -> Result<WeightMatrix> {
    g.require_connected()?;
    let upper = 2.0 / laplacian_lambda_max(g)?;
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::AlphaOutOfRange { alpha, upper });
    }
    let n = g.n();
    let mut dense = vec![0.0; n * n];
    for u in 0..n {
        for &v in g.neighbors(u) {
            dense[u * n + v] = alpha;
        }
        dense[u * n + u] = 1.0 - alpha * g.degree(u) as f64;
    }
    WeightMatrix::from_dense(n, dense)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_and_star() {
        let c = gen_cycle(5).unwrap();
        assert_eq!(c.edges(), vec![(0, 1), (0, 4), (1, 2), (2, 3), (3, 4)]);
        assert!((0..5).all(|u| c.degree(u) == 2));
        let s = gen_star(4).unwrap();
        assert_eq!(s.degree(0), 3);
        assert!((1..4).all(|u| s.degree(u) == 1));
        assert!(gen_cycle(1).is_err());
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::new(3, &[(0, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 3)]).is_err());
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
        assert!(matches!(metropolis_weights(&g), Err(Error::NotConnected)));
    }

    #[test]
    fn metropolis_examples() {
        let w = metropolis_weights(&Graph::new(2, &[(0, 1)]).unwrap()).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.5]);
        assert!(w.lambda2().abs() < 1e-6);

        let w = metropolis_weights(&Graph::new(3, &[(0, 1), (1, 2)]).unwrap()).unwrap();
        assert!((w.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.get(1, 2) - 1.0 / 3.0).abs() < 1e-15);
        let diag = [w.get(0, 0), w.get(1, 1), w.get(2, 2)];
        for (a, b) in diag.iter().zip([2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(w.get(0, 2), 0.0);
        assert!((w.lambda2() - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_averaging_has_zero_lambda2() {
        let w = metropolis_weights(&gen_complete(6).unwrap()).unwrap();
        assert!(w.lambda2() < 1e-6);
    }

    #[test]
    fn laplacian_examples() {
        let two = Graph::new(2, &[(0, 1)]).unwrap();
        let w = laplacian_weights(&two, 0.5).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.5]);
        let w = laplacian_weights(&gen_cycle(4).unwrap(), 0.25).unwrap();
        assert_eq!(w.get(0, 0), 0.5);
        assert_eq!(w.get(0, 1), 0.25);
        assert_eq!(w.get(0, 2), 0.0);
        let tiny = laplacian_weights(&two, 1e-9).unwrap();
        assert!((tiny.get(0, 0) - 1.0).abs() < 1e-8);
        // admissible under (0, λ_max) = (0, 2) but not under (0, 2/λ_max) = (0, 1)
        assert!(matches!(
            laplacian_weights(&two, 1.5),
            Err(Error::AlphaOutOfRange { .. })
        ));
        assert!(laplacian_weights(&two, 0.0).is_err());
    }

    #[test]
    fn geometric_generators() {
        let g = gen_random_geometric(30, 0.05, 3).unwrap();
        assert!(g.graph.is_connected());
        assert!(g.radius >= 0.05);
        let again = gen_random_geometric(30, 0.05, 3).unwrap();
        assert_eq!(g.graph, again.graph);

        for target in [4.0, 9.7, 31.0] {
            let n = if target > 5.0 { 100 } else { 10 };
            let g = gen_geometric_with_degree(n, target, 1).unwrap();
            assert!(g.graph.is_connected());
            assert!(
                (g.graph.mean_degree() - target).abs() <= 0.05 * target,
                "{}",
                g.graph.mean_degree()
            );
        }
    }

    #[test]
    fn scale_free_shape() {
        let g = gen_scale_free(10, 2, 5).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.num_edges(), 1 + 8 * 2);
        assert_eq!(g, gen_scale_free(10, 2, 5).unwrap());
        let tree = gen_scale_free(12, 1, 0).unwrap();
        assert_eq!(tree.num_edges(), 11);
        assert!(tree.is_connected());
        assert!(gen_scale_free(3, 3, 0).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = gen_scale_free(8, 2, 1).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("n 8\n"));
        assert_eq!(Graph::from_edge_list(&text).unwrap(), g);
        assert!(Graph::from_edge_list("n 3\n0 1 2\n").is_err());
        assert!(Graph::from_edge_list("0 1\n").is_err());
    }
}
