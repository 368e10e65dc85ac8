//! The `generate`, `partition`, `cluster-graph`, `eval` and `trajectories`
//! commands.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use vpem::data::{
    assign_features, load_csv, random_gmm, read_csv, sample_gmm, standardize, write_csv, LabelColumn, ThetaDocument,
};
use vpem::eval::{clustering_accuracy, hard_assign, kmeans_baseline, mean_trajectory};
use vpem::gmm::Responsibilities;
use vpem::hubs::{assign_feature_blocks, cluster_hubs, TieBreak};

use crate::config::{Scheme, SyntheticSpec};
use crate::output::{read_jsonl, write_atomic, OutDir};
use crate::specs::{build_graph, parse_weights};

pub fn generate(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<()> {
    let truth = random_gmm(spec.k, spec.d, seed, spec.separation)?;
    let ds = sample_gmm(&truth, spec.m, seed)?;
    let dir = OutDir::new(out.to_path_buf());
    let mut csv = Vec::new();
    write_csv(&mut csv, &ds)?;
    dir.write("data.csv", csv)?;
    let labels: String = ds.labels.as_ref().unwrap().iter().map(|l| format!("{l}\n")).collect();
    dir.write("labels.csv", format!("label\n{labels}"))?;
    let identity: Vec<usize> = (0..spec.d).collect();
    dir.write(
        "truth.json",
        ThetaDocument::from_params(&truth, &identity).to_json() + "\n",
    )?;
    println!(
        "generated M = {}, d = {}, K = {} in {}",
        spec.m,
        spec.d,
        spec.k,
        out.display()
    );
    Ok(())
}

fn scheme(s: Scheme) -> vpem::data::AssignmentScheme {
    match s {
        Scheme::Even => vpem::data::AssignmentScheme::Even,
        Scheme::Scattered => vpem::data::AssignmentScheme::Scattered,
    }
}

pub fn partition(d: usize, agents: usize, s: Scheme, seed: u64, out: &Path) -> Result<()> {
    let a = assign_features(d, agents, &scheme(s), seed)?;
    OutDir::new(out.to_path_buf()).write_json("assignment.json", &a)?;
    for n in 0..agents {
        let f = a.features_of(n);
        println!(
            "agent {n}: {}",
            f.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        );
    }
    Ok(())
}

pub struct ClusterGraphArgs<'a> {
    pub graph: &'a str,
    pub hops: usize,
    pub deterministic_ties: bool,
    pub weights: Option<&'a str>,
    pub d: Option<usize>,
    pub scheme: Scheme,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn cluster_graph(a: &ClusterGraphArgs) -> Result<()> {
    let g = build_graph(a.graph, a.seed)?;
    let w = parse_weights(a.weights.unwrap_or("metropolis"))?.build(&g)?;
    let ties = if a.deterministic_ties {
        TieBreak::LowestId
    } else {
        TieBreak::Random { seed: a.seed }
    };
    let p = cluster_hubs(&g, a.hops, ties)?;
    let d = a.d.unwrap_or(g.n());
    let assignment = assign_features(d, g.n(), &scheme(a.scheme), a.seed)?;
    let arrangement = assign_feature_blocks(&p, &assignment)?;
    let dir = OutDir::new(a.out.to_path_buf());
    dir.write("graph.txt", g.to_edge_list())?;
    let table = p.to_table(&arrangement);
    dir.write("hubs.txt", &table)?;
    let hubs: Vec<_> = p
        .hubs
        .iter()
        .map(|h| json!({ "root": h.root, "members": h.members, "depth": h.depth }))
        .collect();
    dir.write_json(
        "hubs.json",
        &json!({ "h": a.hops, "agents": g.n(), "edges": g.num_edges(), "lambda2": w.lambda2(), "hubs": hubs }),
    )?;
    println!("{} agents, {} edges, lambda2 {:.6}", g.n(), g.num_edges(), w.lambda2());
    print!("{table}");
    Ok(())
}

pub struct EvalArgs<'a> {
    pub fit_dir: &'a Path,
    pub data: &'a Path,
    pub label_column: &'a str,
    pub standardize: bool,
    pub baseline: bool,
    pub restarts: usize,
    pub seed: u64,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let gamma_path = a.fit_dir.join("responsibilities.csv");
    let file = File::open(&gamma_path).with_context(|| format!("opening {}", gamma_path.display()))?;
    let gamma =
        Responsibilities::new(read_csv(file, None)?.x).with_context(|| format!("reading {}", gamma_path.display()))?;
    let label: LabelColumn = a.label_column.parse().unwrap();
    let ds = load_csv(a.data, Some(&label)).with_context(|| format!("loading {}", a.data.display()))?;
    let labels = ds.labels.clone().context("the data file has no label column")?;
    if labels.len() != gamma.len() {
        bail!(
            "{} has {} rows, {} has {} labels",
            gamma_path.display(),
            gamma.len(),
            a.data.display(),
            labels.len()
        );
    }
    let k = gamma.k();
    let fit = clustering_accuracy(&hard_assign(&gamma), &labels, k)?;
    println!("fit accuracy {:.4} ({}/{})", fit.accuracy, fit.correct, labels.len());
    let mut report = json!({ "fit": fit });
    if a.baseline {
        let x = if a.standardize { standardize(&ds)?.0.x } else { ds.x };
        let km = kmeans_baseline(&x, k, a.seed, a.restarts)?;
        let r = clustering_accuracy(&km.assignments, &labels, k)?;
        println!("k-means accuracy {:.4} ({}/{})", r.accuracy, r.correct, labels.len());
        report["kmeans"] = serde_json::to_value(&r)?;
    }
    let dir = OutDir::new(a.fit_dir.to_path_buf());
    dir.write_json("accuracy.json", &report)?;
    dir.write("confusion.csv", fit.confusion_csv())?;
    Ok(())
}

/// Merges trace files into `iteration,run0,…,mean`. Runs that stopped
/// early are padded with their last value.
pub fn trajectories(files: &[PathBuf], out: &Path, force: bool) -> Result<()> {
    if files.is_empty() {
        bail!("no trace files given");
    }
    let mut runs = Vec::new();
    let mut mode: Option<(String, &Path)> = None;
    for f in files {
        let recs = read_jsonl(f)?;
        if recs.is_empty() {
            bail!("{} has no records", f.display());
        }
        match &mode {
            Some((m, first)) if *m != recs[0].mode && !force => bail!(
                "incompatible traces: {} is mode {m}, {} is mode {} (use --force to merge anyway)",
                first.display(),
                f.display(),
                recs[0].mode
            ),
            None => mode = Some((recs[0].mode.clone(), f)),
            _ => {}
        }
        runs.push(recs.iter().map(|r| r.ll).collect::<Vec<f64>>());
    }
    let mean = mean_trajectory(&runs);
    let mut s = String::from("iteration");
    for i in 0..runs.len() {
        s.push_str(&format!(",run{i}"));
    }
    s.push_str(",mean\n");
    for (t, m) in mean.iter().enumerate() {
        s.push_str(&t.to_string());
        for r in &runs {
            s.push_str(&format!(",{}", vpem::data::format_float(r[t.min(r.len() - 1)])));
        }
        s.push_str(&format!(",{}\n", vpem::data::format_float(*m)));
    }
    write_atomic(out, s.as_bytes())?;
    println!("{} runs, {} iterations -> {}", runs.len(), mean.len(), out.display());
    Ok(())
}
