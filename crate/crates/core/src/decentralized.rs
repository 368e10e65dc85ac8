//! Fully decentralized EM over an arbitrary connected graph.
//!
//! Agents are grouped into hubs; each hub's root holds the features of all
//! its members and the parameters of that block. Per (example, component)
//! sums of block Q-terms are obtained by averaging consensus over the whole
//! graph, so every root ends up with its own, slightly different, estimate
//! of the responsibilities, weights and log-likelihood.

use serde::Serialize;

use crate::batch::{BatchSchedule, BatchSpec};
use crate::consensus::{run_consensus_batch, ConsensusConfig};
use crate::data::{FeatureArrangement, FeatureAssignment};
use crate::error::{Error, Result};
use crate::gmm::{EmOptions, FitTrace, GmmParams, Initialization, Responsibilities, StopReason, StopSpec};
use crate::hubs::{assign_feature_blocks, cluster_hubs, HubPartition, TieBreak};
use crate::linalg::{Matrix, SymMatrix};
use crate::party::{assemble, Party, Progress};
use crate::topology::{laplacian_weights, metropolis_weights, Graph, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub enum WeightScheme {
    #[default]
    Metropolis,
    Laplacian {
        alpha: f64,
    },
}

impl WeightScheme {
    pub fn build(&self, g: &Graph) -> Result<WeightMatrix> {
        match *self {
            WeightScheme::Metropolis => metropolis_weights(g),
            WeightScheme::Laplacian { alpha } => laplacian_weights(g, alpha),
        }
    }
}

/// Communication in one E-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DecStepComm {
    /// Scalar averages computed (one per example and component).
    pub consensus_invocations: usize,
    pub rounds_per_invocation: usize,
    /// Consensus traffic (every agent sends its state to every neighbor each
    /// round) plus root-to-leaf Q-term relays, counted in scalar-hops.
    pub scalars_on_wire: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DecCommStats {
    /// Feature values moved from leaves to roots before the fit, in
    /// scalar-hops.
    pub leaf_root_transfers: usize,
    pub setup: DecStepComm,
    pub e_steps: Vec<DecStepComm>,
    /// Always zero: M-steps and the stopping test are local.
    pub m_step_scalars: usize,
}

/// View of one hub root's local state.
pub struct RootState<'a> {
    pub hub: usize,
    pub root_agent: usize,
    pub member_agents: &'a [usize],
    party: &'a Party,
}

impl RootState<'_> {
    pub fn feature_range(&self) -> std::ops::Range<usize> {
        self.party.cols.clone()
    }

    pub fn hub_data(&self) -> &Matrix {
        &self.party.data
    }

    pub fn weights(&self) -> &[f64] {
        &self.party.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.party.means
    }

    pub fn covariances(&self) -> &[SymMatrix] {
        &self.party.covs
    }

    pub fn gamma(&self) -> &Matrix {
        &self.party.gamma
    }
}

/// The simulated network: graph, mixing weights, hubs and root states.
pub struct Network {
    w: WeightMatrix,
    partition: HubPartition,
    arrangement: FeatureArrangement,
    hub_of: Vec<usize>,
    roots: Vec<Party>,
    consensus: ConsensusConfig,
    d: usize,
    edges: usize,
    relay_hops: usize,
}

impl Network {
    /// `x` is in arranged order; `theta0` over `arrangement.layout`.
    pub fn new(
        x: &Matrix,
        g: &Graph,
        w: WeightMatrix,
        partition: HubPartition,
        arrangement: FeatureArrangement,
        theta0: &GmmParams,
        consensus: ConsensusConfig,
    ) -> Result<Self> {
        if w.n() != g.n() || partition.n != g.n() || arrangement.group_ranges.len() != partition.hubs.len() {
            return Err(Error::PartitionMismatch(
                "graph, weights and hub partition disagree on the agents".into(),
            ));
        }
        if x.cols() != arrangement.layout.d() || theta0.layout() != &arrangement.layout {
            return Err(Error::PartitionMismatch(
                "data, arrangement and initial parameters disagree on the layout".into(),
            ));
        }
        let mut block = 0;
        let mut roots = Vec::with_capacity(partition.hubs.len());
        for (r, hub) in arrangement.group_ranges.iter().zip(&partition.hubs) {
            let b = (!r.is_empty()).then(|| {
                block += 1;
                block - 1
            });
            roots.push(Party::new(x, r.clone(), theta0, b).map_err(|e| e.at_agent(hub.root))?);
        }
        let relay_hops = partition.hubs.iter().flat_map(|h| h.leaves()).map(|(_, d)| d).sum();
        Ok(Network {
            hub_of: partition.hub_of(),
            w,
            arrangement,
            roots,
            consensus,
            d: x.cols(),
            edges: g.num_edges(),
            relay_hops,
            partition,
        })
    }

    pub fn partition(&self) -> &HubPartition {
        &self.partition
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.w
    }

    pub fn num_roots(&self) -> usize {
        self.roots.len()
    }

    pub fn root(&self, b: usize) -> RootState<'_> {
        let hub = &self.partition.hubs[b];
        RootState {
            hub: b,
            root_agent: hub.root,
            member_agents: &hub.members,
            party: &self.roots[b],
        }
    }

    /// Initial consensus states: agent `a` of hub `b` holds
    /// `N·Q^b/|H_b|`, so the network average is `Σ_b Q^b`.
    pub fn initial_states(&self, q: &[Vec<f64>]) -> Matrix {
        let n = self.w.n();
        let c = q[0].len();
        let mut z = Matrix::zeros(n, c);
        for a in 0..n {
            let b = self.hub_of[a];
            let size = self.partition.hubs[b].len() as f64;
            for (out, &v) in z.row_mut(a).iter_mut().zip(&q[b]) {
                *out = n as f64 * v / size;
            }
        }
        z
    }

    /// One E-step over `rows` (all examples when `None`); returns each
    /// root's LL estimate.
    pub fn e_step(&mut self, rows: Option<&[usize]>) -> Result<(Vec<f64>, DecStepComm)> {
        let m = self.roots[0].m();
        let all: Vec<usize>;
        let rows_v = match rows {
            Some(r) => r,
            None => {
                all = (0..m).collect();
                &all
            }
        };
        let q: Vec<Vec<f64>> = self.roots.iter().map(|p| p.q_terms(rows_v)).collect();
        let z = run_consensus_batch(&self.w, &self.initial_states(&q), &self.consensus)?;
        let mut lls = Vec::with_capacity(self.roots.len());
        for (b, party) in self.roots.iter_mut().enumerate() {
            let est = z.row(self.partition.hubs[b].root);
            lls.push(match rows {
                None => party.absorb_all(est, self.d),
                Some(r) => party.absorb_rows(r, est, self.d),
            });
        }
        let columns = q[0].len();
        let rounds = self.consensus.effective_rounds();
        Ok((
            lls,
            DecStepComm {
                consensus_invocations: columns,
                rounds_per_invocation: rounds,
                scalars_on_wire: rounds * 2 * self.edges * columns + self.relay_hops * columns,
            },
        ))
    }

    pub fn start_incremental(&mut self) {
        self.roots.iter_mut().for_each(Party::start_incremental);
    }

    pub fn m_step(&mut self, opts: &EmOptions) -> Result<()> {
        for (b, p) in self.roots.iter_mut().enumerate() {
            p.m_step(opts).map_err(|e| e.at_agent(self.partition.hubs[b].root))?;
        }
        Ok(())
    }

    /// Hub blocks stitched together, with the roots' weights averaged. The
    /// average is for reporting only; roots never exchange weights.
    pub fn params(&self) -> Result<GmmParams> {
        let k = self.roots[0].k();
        let mut pi = vec![0.0; k];
        for p in &self.roots {
            for (a, w) in pi.iter_mut().zip(&p.weights) {
                *a += w;
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|a| *a /= total);
        let parties: Vec<&Party> = self.roots.iter().collect();
        assemble(&parties, &self.arrangement.layout, pi)
    }

    /// Largest absolute difference between any two roots' responsibilities.
    pub fn gamma_disagreement(&self) -> f64 {
        let first = self.roots[0].gamma.as_slice();
        self.roots[1..]
            .iter()
            .flat_map(|p| p.gamma.as_slice().iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecentralizedConfig {
    pub h: usize,
    pub ties: TieBreak,
    pub weights: WeightScheme,
    pub consensus: ConsensusConfig,
    pub stop: StopSpec,
    pub opts: EmOptions,
    pub batch: BatchSpec,
}

impl Default for DecentralizedConfig {
    fn default() -> Self {
        DecentralizedConfig {
            h: 0,
            ties: TieBreak::Random { seed: 0 },
            weights: WeightScheme::Metropolis,
            consensus: ConsensusConfig::default(),
            stop: StopSpec::default(),
            opts: EmOptions::default(),
            batch: BatchSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RootSummary {
    pub hub: usize,
    pub root_agent: usize,
    pub weights: Vec<f64>,
    pub responsibilities: Responsibilities,
    pub ll: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecentralizedFit {
    /// Assembled parameters over `arrangement.layout`.
    pub params: GmmParams,
    pub partition: HubPartition,
    pub arrangement: FeatureArrangement,
    pub lambda2: f64,
    pub roots: Vec<RootSummary>,
    /// `ll` holds the mean of the roots' estimates.
    pub trace: FitTrace,
    /// Max minus min of the roots' LL estimates, per iteration.
    pub ll_disagreement: Vec<f64>,
    pub comm: DecCommStats,
}

/// Clusters the graph into hubs, moves the features to the roots, and runs
/// decentralized EM. `x` is in original feature order.
pub fn fit_decentralized(
    x: &Matrix,
    g: &Graph,
    assignment: &FeatureAssignment,
    k: usize,
    init: &Initialization,
    cfg: &DecentralizedConfig,
) -> Result<DecentralizedFit> {
    cfg.stop.validate()?;
    if assignment.agents() != g.n() {
        return Err(Error::PartitionMismatch(format!(
            "assignment has {} agents, graph has {}",
            assignment.agents(),
            g.n()
        )));
    }
    if assignment.d() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: assignment.d(),
        });
    }
    g.require_connected()?;
    let partition = cluster_hubs(g, cfg.h, cfg.ties)?;
    let arrangement = assign_feature_blocks(&partition, assignment)?;
    let dims = assignment.dims();
    let leaf_root_transfers = partition
        .hubs
        .iter()
        .flat_map(|h| h.leaves())
        .map(|(a, depth)| depth * dims[a] * x.rows())
        .sum();
    let w = cfg.weights.build(g)?;
    let lambda2 = w.lambda2();

    let m = x.rows();
    let b = cfg.batch.resolve(m)?;
    let xp = x.select_columns(&arrangement.order);
    let theta0 = init.resolve(&xp, k, &arrangement.layout, &arrangement.order)?;
    let mut net = Network::new(&xp, g, w, partition, arrangement, &theta0, cfg.consensus)?;

    let mut comm = DecCommStats {
        leaf_root_transfers,
        ..Default::default()
    };
    let mut schedule = if b < m {
        let (_, c) = net.e_step(None)?;
        comm.setup = c;
        net.start_incremental();
        net.m_step(&cfg.opts)?;
        Some(BatchSchedule::new(m, b, cfg.batch.seed)?)
    } else {
        None
    };

    let mut progress = Progress::new(cfg.stop);
    let mut per_root: Vec<Vec<f64>> = vec![Vec::new(); net.num_roots()];
    let mut mean_ll = Vec::new();
    let mut disagreement = Vec::new();
    let reason = loop {
        let (lls, checkpoint, c) = match schedule.as_mut() {
            None => {
                let (v, c) = net.e_step(None)?;
                (v, true, c)
            }
            Some(s) => {
                let (rows, epoch_end) = s.next_batch();
                let (v, c) = net.e_step(Some(&rows))?;
                (v, epoch_end, c)
            }
        };
        comm.e_steps.push(c);
        for (trace, &v) in per_root.iter_mut().zip(&lls) {
            trace.push(v);
        }
        mean_ll.push(lls.iter().sum::<f64>() / lls.len() as f64);
        let (lo, hi) = lls.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        disagreement.push(hi - lo);
        if let Some(reason) = progress.record(&lls, checkpoint) {
            break reason;
        }
        net.m_step(&cfg.opts)?;
    };

    let roots = (0..net.num_roots())
        .map(|b| {
            let r = net.root(b);
            RootSummary {
                hub: b,
                root_agent: r.root_agent,
                weights: r.weights().to_vec(),
                responsibilities: net.roots[b].responsibilities(),
                ll: std::mem::take(&mut per_root[b]),
            }
        })
        .collect();
    Ok(DecentralizedFit {
        params: net.params()?,
        partition: net.partition.clone(),
        arrangement: net.arrangement.clone(),
        lambda2,
        roots,
        trace: FitTrace {
            ll: mean_ll,
            converged: reason == StopReason::LlPlateau,
            stop_reason: reason,
        },
        ll_disagreement: disagreement,
        comm,
    })
}
