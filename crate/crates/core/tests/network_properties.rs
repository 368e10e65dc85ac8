mod common;

use proptest::prelude::*;
use rand::Rng;

use vpem::consensus::{run_consensus, run_consensus_batch, ConsensusConfig};
use vpem::hubs::{cluster_hubs, TieBreak};
use vpem::linalg::Matrix;
use vpem::topology::{
    gen_geometric_with_degree, gen_scale_free, laplacian_lambda_max, laplacian_weights, metropolis_weights, Graph,
};

/// Connected graph from a seed: a random spanning tree plus extra edges.
fn random_connected(seed: u64, n: usize, extra: usize) -> Graph {
    let mut r = common::rng(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((r.random_range(0..v), v));
    }
    for _ in 0..extra {
        let (u, v) = (r.random_range(0..n), r.random_range(0..n));
        let e = (u.min(v), u.max(v));
        if u != v && !edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == e) {
            edges.push(e);
        }
    }
    Graph::new(n, &edges).unwrap()
}

fn deviation(z: &[f64], mean: f64) -> f64 {
    z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_is_symmetric_doubly_stochastic(seed in any::<u64>(), n in 2usize..25, extra in 0usize..30) {
        let g = random_connected(seed, n, extra);
        let w = metropolis_weights(&g).unwrap();
        for u in 0..n {
            prop_assert!((w.row(u).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for v in 0..n {
                prop_assert_eq!(w.get(u, v), w.get(v, u));
                prop_assert!(w.get(u, v) >= 0.0);
                if u != v && !g.has_edge(u, v) {
                    prop_assert_eq!(w.get(u, v), 0.0);
                }
            }
        }
        prop_assert!(w.lambda2() < 1.0);
    }

    #[test]
    fn laplacian_weights_inside_the_interval(seed in any::<u64>(), n in 2usize..15, frac in 0.05f64..0.95) {
        let g = random_connected(seed, n, n);
        let alpha = frac * 2.0 / laplacian_lambda_max(&g).unwrap();
        let w = laplacian_weights(&g, alpha).unwrap();
        prop_assert!(w.lambda2() < 1.0);
        for u in 0..n {
            prop_assert!((w.row(u).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn consensus_conserves_the_sum_and_contracts(seed in any::<u64>(), n in 2usize..20, s in 1usize..40) {
        let g = random_connected(seed, n, n / 2);
        let w = metropolis_weights(&g).unwrap();
        let mut r = common::rng(seed ^ 1);
        let z0: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
        let total: f64 = z0.iter().sum();
        let mean = total / n as f64;
        let mut z = z0.clone();
        for _ in 0..s {
            z = w.apply(&z);
            prop_assert!((z.iter().sum::<f64>() - total).abs() <= 1e-9 * total.abs().max(1.0));
        }
        let bound = w.lambda2().powi(s as i32) * deviation(&z0, mean) * (1.0 + 1e-6);
        prop_assert!(deviation(&z, mean) <= bound + 1e-12, "{} > {}", deviation(&z, mean), bound);
    }

    #[test]
    fn hubs_partition_the_agents_within_h_hops(seed in any::<u64>(), n in 1usize..30, h in 0usize..4, lowest in any::<bool>()) {
        let g = random_connected(seed, n, n / 3);
        let ties = if lowest { TieBreak::LowestId } else { TieBreak::Random { seed } };
        let p = cluster_hubs(&g, h, ties).unwrap();
        let mut seen = vec![0; n];
        for hub in &p.hubs {
            prop_assert!(hub.members.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(hub.members.contains(&hub.root));
            let dist = g.bfs(hub.root, None);
            for (&a, &depth) in hub.members.iter().zip(&hub.depth) {
                seen[a] += 1;
                prop_assert!(depth <= h);
                prop_assert!(dist[a].unwrap() <= depth);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let again = cluster_hubs(&g, h, ties).unwrap();
        prop_assert_eq!(p, again);
    }
}

#[test]
fn many_rounds_reach_the_exact_average() {
    let graphs = [
        gen_geometric_with_degree(10, 4.0, 2).unwrap().graph,
        gen_scale_free(12, 2, 4).unwrap(),
        random_connected(9, 15, 10),
    ];
    let mut r = common::rng(11);
    for g in &graphs {
        let w = metropolis_weights(g).unwrap();
        let z0: Vec<f64> = (0..g.n()).map(|_| r.random::<f64>()).collect();
        let it = run_consensus(&w, &z0, &ConsensusConfig::iterative(500)).unwrap();
        let ex = run_consensus(&w, &z0, &ConsensusConfig::exact()).unwrap();
        assert!(common::max_abs_diff(&it, &ex) <= 1e-8, "λ̂₂ = {}", w.lambda2());
    }
}

#[test]
fn batched_consensus_matches_column_by_column() {
    let g = random_connected(5, 12, 6);
    let w = metropolis_weights(&g).unwrap();
    let mut r = common::rng(6);
    let z0 = Matrix::from_rows(
        &(0..12)
            .map(|_| (0..7).map(|_| r.random::<f64>()).collect())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let cfg = ConsensusConfig::iterative(17);
    let all = run_consensus_batch(&w, &z0, &cfg).unwrap();
    for c in 0..7 {
        let col: Vec<f64> = (0..12).map(|u| z0[(u, c)]).collect();
        let one = run_consensus(&w, &col, &cfg).unwrap();
        for u in 0..12 {
            assert_eq!(one[u].to_bits(), all[(u, c)].to_bits());
        }
    }
}

#[test]
fn larger_h_never_increases_the_hub_count_on_a_path() {
    let n = 20;
    let g = Graph::new(n, &(1..n).map(|v| (v - 1, v)).collect::<Vec<_>>()).unwrap();
    let counts: Vec<usize> = (0..5)
        .map(|h| cluster_hubs(&g, h, TieBreak::LowestId).unwrap().hubs.len())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert_eq!(counts[0], n);
}
