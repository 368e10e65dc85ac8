//! Greedy h-hop hub clustering.
//!
//! Repeatedly picks the residual vertex whose h-hop ball (measured in the
//! graph with previous hubs removed) is largest, and extracts that ball as
//! a hub rooted at the vertex. Each hub becomes one covariance block.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::data::{FeatureArrangement, FeatureAssignment};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::topology::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Uniform draw among the tied candidates.
    Random {
        seed: u64,
    },
    LowestId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hub {
    pub root: usize,
    /// Ascending agent ids; this is the order in which their features are
    /// laid out inside the hub's block.
    pub members: Vec<usize>,
    /// Hop distance from the root to each member in the residual graph at
    /// extraction time, aligned with `members`.
    pub depth: Vec<usize>,
}

impl Hub {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.members
            .iter()
            .zip(&self.depth)
            .filter(move |(&a, _)| a != self.root)
            .map(|(&a, &d)| (a, d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HubPartition {
    pub h: usize,
    pub n: usize,
    pub hubs: Vec<Hub>,
}

impl HubPartition {
    /// Hub index of every agent.
    pub fn hub_of(&self) -> Vec<usize> {
        let mut of = vec![usize::MAX; self.n];
        for (b, hub) in self.hubs.iter().enumerate() {
            for &a in &hub.members {
                of[a] = b;
            }
        }
        of
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.hubs.iter().map(|h| h.members.clone()).collect()
    }

    /// One line per hub: `hub <b> root <r> members <a,b,c> range <lo>..<hi>`.
    pub fn to_table(&self, arrangement: &FeatureArrangement) -> String {
        let mut s = String::new();
        for (b, (hub, r)) in self.hubs.iter().zip(&arrangement.group_ranges).enumerate() {
            let members: Vec<String> = hub.members.iter().map(usize::to_string).collect();
            writeln!(
                s,
                "hub {b} root {} members {} range {}..{}",
                hub.root,
                members.join(","),
                r.start,
                r.end
            )
            .unwrap();
        }
        s
    }
}

fn ball(g: &Graph, src: usize, h: usize, alive: &[bool]) -> Vec<(usize, usize)> {
    g.bfs(src, Some(alive))
        .into_iter()
        .enumerate()
        .filter_map(|(v, d)| d.filter(|&d| d <= h).map(|d| (v, d)))
        .collect()
}

pub fn cluster_hubs(g: &Graph, h: usize, ties: TieBreak) -> Result<HubPartition> {
    g.require_connected()?;
    let n = g.n();
    let mut alive = vec![true; n];
    let mut remaining = n;
    let mut hubs = Vec::new();
    let mut rng = match ties {
        TieBreak::Random { seed } => Some(rng::stream(seed, Stream::TieBreak)),
        TieBreak::LowestId => None,
    };
    while remaining > 0 {
        let (root, members) = if h == 0 {
            let v = alive.iter().position(|&a| a).unwrap();
            (v, vec![(v, 0)])
        } else {
            let mut best: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
            for v in (0..n).filter(|&v| alive[v]) {
                let b = ball(g, v, h, &alive);
                match best.first().map(|x| x.1.len()) {
                    Some(len) if b.len() < len => {}
                    Some(len) if b.len() == len => best.push((v, b)),
                    _ => best = vec![(v, b)],
                }
            }
            let pick = match rng.as_mut() {
                Some(r) if best.len() > 1 => r.random_range(0..best.len()),
                _ => 0,
            };
            best.swap_remove(pick)
        };
        for &(v, _) in &members {
            alive[v] = false;
        }
        remaining -= members.len();
        let (members, depth) = members.into_iter().unzip();
        hubs.push(Hub { root, members, depth });
    }
    Ok(HubPartition { h, n, hubs })
}

/// Lays out the features hub by hub, members in hub order.
pub fn assign_feature_blocks(p: &HubPartition, assignment: &FeatureAssignment) -> Result<FeatureArrangement> {
    if assignment.agents() != p.n {
        return Err(Error::DimensionMismatch {
            expected: p.n,
            found: assignment.agents(),
        });
    }
    assignment.arrange(&p.groups())
}
