//! The `fit` command: one configuration, any of the three modes.

use anyhow::{Context, Result};
use serde_json::json;

use vpem::batch::BatchSpec;
use vpem::data::{
    assign_features, format_float, load_csv, random_gmm, sample_gmm, standardize, AssignmentScheme, Dataset,
    FeatureArrangement, FeatureAssignment, LabelColumn, ThetaDocument,
};
use vpem::decentralized::{fit_decentralized, DecentralizedConfig, WeightScheme};
use vpem::fl::{fit_fl, FlConfig};
use vpem::gmm::{fit_centralized, BlockLayout, GmmParams, InitSpec, Initialization, Responsibilities, StopReason};
use vpem::hubs::TieBreak;

use crate::config::{DataSource, ExperimentConfig, Mode, Scheme};
use crate::output::{to_jsonl, OutDir, TraceRecord};
use crate::specs::{build_graph, parse_weights};

/// Result of one fit, independent of the mode.
struct Outcome {
    /// Parameters over the arranged layout.
    params: GmmParams,
    /// `order[p]` is the original feature index of arranged column `p`.
    order: Vec<usize>,
    responsibilities: Responsibilities,
    records: Vec<TraceRecord>,
    stop_reason: StopReason,
    extra: serde_json::Value,
}

impl Outcome {
    fn final_ll(&self) -> f64 {
        self.records.last().map_or(f64::NEG_INFINITY, |r| r.ll)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = match &cfg.data {
        DataSource::Csv(path) => {
            let label: Option<LabelColumn> = cfg.label_column.as_deref().map(|s| s.parse().unwrap());
            load_csv(path, label.as_ref()).with_context(|| format!("loading {}", path.display()))?
        }
        DataSource::Synthetic(s) => {
            let truth = random_gmm(s.k, s.d, cfg.seed, s.separation)?;
            sample_gmm(&truth, s.m, cfg.seed)?
        }
    };
    if cfg.standardize {
        Ok(standardize(&ds)?.0)
    } else {
        Ok(ds)
    }
}

fn scheme(s: Scheme) -> AssignmentScheme {
    match s {
        Scheme::Even => AssignmentScheme::Even,
        Scheme::Scattered => AssignmentScheme::Scattered,
    }
}

fn load_assignment(cfg: &ExperimentConfig, d: usize, agents: usize) -> Result<FeatureAssignment> {
    match &cfg.assignment {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let a: FeatureAssignment =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let a = FeatureAssignment::new(a.agent_of_feature().to_vec(), a.agents())?;
            if a.d() != d || a.agents() != agents {
                anyhow::bail!(
                    "assignment {} covers {} features over {} agents, the run has {d} features over {agents} agents",
                    path.display(),
                    a.d(),
                    a.agents()
                );
            }
            Ok(a)
        }
        None => Ok(assign_features(d, agents, &scheme(cfg.scheme), cfg.seed)?),
    }
}

fn assignment_agents(cfg: &ExperimentConfig) -> Result<Option<usize>> {
    if let Some(n) = cfg.agents {
        return Ok(Some(n));
    }
    match &cfg.assignment {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let a: FeatureAssignment = serde_json::from_str(&text)?;
            Ok(Some(a.agents()))
        }
        None => Ok(None),
    }
}

fn fl_records(fit: &vpem::fl::FlFit) -> Vec<TraceRecord> {
    let mut prev = None;
    fit.trace
        .ll
        .iter()
        .enumerate()
        .map(|(t, &ll)| {
            let mut r = TraceRecord::new("fl", t, ll, prev);
            r.comm_up_scalars = Some(fit.comm.e_steps[t].up);
            r.comm_down_scalars = Some(fit.comm.e_steps[t].down);
            prev = Some(ll);
            r
        })
        .collect()
}

fn run_once(cfg: &ExperimentConfig, ds: &Dataset, init: &Initialization) -> Result<Outcome> {
    let d = ds.d();
    let batch = match cfg.batch {
        Some(b) => BatchSpec::of(b, cfg.seed),
        None => BatchSpec::full(),
    };
    match cfg.mode {
        Mode::Centralized => {
            let arrangement = match assignment_agents(cfg)? {
                Some(n) => load_assignment(cfg, d, n)?.per_agent(),
                None => FeatureArrangement {
                    order: (0..d).collect(),
                    layout: BlockLayout::dense(d),
                    group_ranges: vec![0..d],
                },
            };
            if batch.size.is_some() {
                anyhow::bail!("--batch applies to modes fl and decentralized");
            }
            let xp = ds.x.select_columns(&arrangement.order);
            let fit = fit_centralized(&xp, cfg.k, &arrangement.layout, init, &cfg.stop, &cfg.opts)?;
            let mut prev = None;
            let records = fit
                .trace
                .ll
                .iter()
                .enumerate()
                .map(|(t, &ll)| {
                    let r = TraceRecord::new("centralized", t, ll, prev);
                    prev = Some(ll);
                    r
                })
                .collect();
            Ok(Outcome {
                params: fit.params,
                order: arrangement.order,
                responsibilities: fit.responsibilities,
                records,
                stop_reason: fit.trace.stop_reason,
                extra: json!({ "blocks": arrangement.layout.num_blocks() }),
            })
        }
        Mode::Fl => {
            let n = assignment_agents(cfg)?.expect("validated");
            let arrangement = load_assignment(cfg, d, n)?.per_agent();
            let fl_cfg = FlConfig {
                stop: cfg.stop,
                opts: cfg.opts,
                batch,
            };
            let fit = fit_fl(&ds.x, &arrangement, cfg.k, init, &fl_cfg)?;
            let records = fl_records(&fit);
            let up: usize = fit.comm.e_steps.iter().map(|c| c.up).sum::<usize>() + fit.comm.setup.up;
            let down: usize = fit.comm.e_steps.iter().map(|c| c.down).sum::<usize>() + fit.comm.setup.down;
            Ok(Outcome {
                params: fit.params,
                order: fit.arrangement.order,
                responsibilities: fit.responsibilities,
                records,
                stop_reason: fit.trace.stop_reason,
                extra: json!({ "clients": n, "comm_up_scalars": up, "comm_down_scalars": down }),
            })
        }
        Mode::Decentralized => {
            let g = build_graph(cfg.graph.as_deref().expect("validated"), cfg.seed)?;
            let assignment = load_assignment(cfg, d, g.n())?;
            let dec_cfg = DecentralizedConfig {
                h: cfg.hops,
                ties: if cfg.deterministic_ties {
                    TieBreak::LowestId
                } else {
                    TieBreak::Random { seed: cfg.seed }
                },
                weights: match &cfg.weights {
                    Some(w) => parse_weights(w)?,
                    None => WeightScheme::Metropolis,
                },
                consensus: cfg.consensus,
                stop: cfg.stop,
                opts: cfg.opts,
                batch,
            };
            let fit = fit_decentralized(&ds.x, &g, &assignment, cfg.k, init, &dec_cfg)?;
            let mut prev = None;
            let records = fit
                .trace
                .ll
                .iter()
                .enumerate()
                .map(|(t, &ll)| {
                    let mut r = TraceRecord::new("decentralized", t, ll, prev);
                    let c = &fit.comm.e_steps[t];
                    r.ll_max_disagreement = Some(fit.ll_disagreement[t]);
                    r.consensus_invocations = Some(c.consensus_invocations);
                    r.consensus_rounds = Some(c.rounds_per_invocation);
                    r.scalars_on_wire = Some(c.scalars_on_wire);
                    prev = Some(ll);
                    r
                })
                .collect();
            let hubs: Vec<_> = fit
                .partition
                .hubs
                .iter()
                .map(|h| json!({ "root": h.root, "members": h.members, "depth": h.depth }))
                .collect();
            Ok(Outcome {
                params: fit.params,
                order: fit.arrangement.order.clone(),
                responsibilities: fit.roots[0].responsibilities.clone(),
                records,
                stop_reason: fit.trace.stop_reason,
                extra: json!({
                    "agents": g.n(),
                    "edges": g.num_edges(),
                    "lambda2": fit.lambda2,
                    "hops": cfg.hops,
                    "hubs": hubs,
                    "hub_table": fit.partition.to_table(&fit.arrangement),
                    "leaf_root_transfers": fit.comm.leaf_root_transfers,
                    "scalars_on_wire": fit.comm.setup.scalars_on_wire
                        + fit.comm.e_steps.iter().map(|c| c.scalars_on_wire).sum::<usize>(),
                }),
            })
        }
    }
}

fn responsibilities_csv(gamma: &Responsibilities) -> String {
    let k = gamma.k();
    let mut s = (0..k).map(|c| format!("gamma{c}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in gamma.matrix().iter_rows() {
        s.push_str(&row.iter().map(|&v| format_float(v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Runs the fit, writes its outputs and returns the stop reason.
pub fn run(cfg: &ExperimentConfig) -> Result<StopReason> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let mut best: Option<(usize, Outcome)> = None;
    let mut last_err = None;
    for r in 0..cfg.restarts {
        let init = Initialization::Spec(InitSpec {
            strategy: cfg.init,
            seed: cfg.seed.wrapping_add(r as u64),
        });
        match run_once(cfg, &ds, &init) {
            Ok(o) => {
                if best.as_ref().is_none_or(|(_, b)| o.final_ll() > b.final_ll()) {
                    best = Some((r, o));
                }
            }
            // a single restart may collapse a component; only fail if all do
            Err(e) if cfg.restarts > 1 => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let (restart, out) = match best {
        Some(b) => b,
        None => {
            return Err(last_err
                .expect("at least one restart ran")
                .context("every restart failed"))
        }
    };

    let dir = OutDir::new(cfg.out_dir.clone());
    dir.write("trace.jsonl", to_jsonl(&out.records)?)?;
    dir.write(
        "theta.json",
        ThetaDocument::from_params(&out.params, &out.order).to_json() + "\n",
    )?;
    dir.write("responsibilities.csv", responsibilities_csv(&out.responsibilities))?;
    let mut details = out.extra.clone();
    let table = details.as_object_mut().and_then(|o| o.remove("hub_table"));
    let summary = json!({
        "mode": cfg.mode.name(),
        "m": ds.m(),
        "d": ds.d(),
        "k": cfg.k,
        "seed": cfg.seed,
        "restart": restart,
        "iterations": out.records.len(),
        "final_ll": out.final_ll(),
        "converged": out.stop_reason == StopReason::LlPlateau,
        "stop_reason": out.stop_reason,
        "details": details,
    });
    dir.write_json("summary.json", &summary)?;
    if let Some(serde_json::Value::String(table)) = table {
        dir.write("hubs.txt", table)?;
    }
    println!(
        "{} fit: {} iterations, final ll {:.6}, {}",
        cfg.mode.name(),
        out.records.len(),
        out.final_ll(),
        match out.stop_reason {
            StopReason::LlPlateau => "converged",
            StopReason::MaxIters => "stopped at max_iters",
        }
    );
    Ok(out.stop_reason)
}
