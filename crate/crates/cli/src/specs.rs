//! Parsers for the textual graph and weight specifications.

use std::path::Path;

use anyhow::{bail, Context, Result};

use vpem::decentralized::WeightScheme;
use vpem::topology::{
    gen_complete, gen_cycle, gen_geometric_with_degree, gen_random_geometric, gen_scale_free, gen_star, Graph,
};

pub const GRAPH_FORMS: &str =
    "cycle:N, star:N, complete:N, geometric:N:RADIUS, geometric-degree:N:DEGREE, scale-free:N:M, file:PATH";

/// Builds the graph named by `spec`; random families use `seed`.
pub fn build_graph(spec: &str, seed: u64) -> Result<Graph> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    if kind == "file" {
        let text = std::fs::read_to_string(Path::new(rest)).with_context(|| format!("reading graph file {rest}"))?;
        return Graph::from_edge_list(&text).with_context(|| format!("parsing graph file {rest}"));
    }
    let args: Vec<&str> = rest.split(':').filter(|s| !s.is_empty()).collect();
    let n = |i: usize| -> Result<usize> {
        args.get(i)
            .with_context(|| format!("graph `{spec}` is missing an argument (forms: {GRAPH_FORMS})"))?
            .parse::<usize>()
            .with_context(|| format!("graph `{spec}`: bad integer"))
    };
    let real = |i: usize| -> Result<f64> {
        args.get(i)
            .with_context(|| format!("graph `{spec}` is missing an argument (forms: {GRAPH_FORMS})"))?
            .parse::<f64>()
            .with_context(|| format!("graph `{spec}`: bad number"))
    };
    let expect = |count: usize| -> Result<()> {
        if args.len() != count {
            bail!("graph `{spec}` takes {count} argument(s) (forms: {GRAPH_FORMS})");
        }
        Ok(())
    };
    let g = match kind {
        "cycle" => {
            expect(1)?;
            gen_cycle(n(0)?)?
        }
        "star" => {
            expect(1)?;
            gen_star(n(0)?)?
        }
        "complete" => {
            expect(1)?;
            gen_complete(n(0)?)?
        }
        "geometric" => {
            expect(2)?;
            gen_random_geometric(n(0)?, real(1)?, seed)?.graph
        }
        "geometric-degree" => {
            expect(2)?;
            gen_geometric_with_degree(n(0)?, real(1)?, seed)?.graph
        }
        "scale-free" => {
            expect(2)?;
            gen_scale_free(n(0)?, n(1)?, seed)?
        }
        _ => bail!("unknown graph `{spec}` (forms: {GRAPH_FORMS})"),
    };
    Ok(g)
}

/// `metropolis` or `laplacian:ALPHA`.
pub fn parse_weights(spec: &str) -> Result<WeightScheme> {
    match spec.split_once(':') {
        None if spec == "metropolis" => Ok(WeightScheme::Metropolis),
        Some(("laplacian", a)) => Ok(WeightScheme::Laplacian {
            alpha: a.parse().with_context(|| format!("weights `{spec}`: bad alpha"))?,
        }),
        _ => bail!("unknown weights `{spec}` (metropolis or laplacian:ALPHA)"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_forms() {
        assert_eq!(build_graph("cycle:5", 0).unwrap().num_edges(), 5);
        assert_eq!(build_graph("star:4", 0).unwrap().degree(0), 3);
        assert_eq!(build_graph("scale-free:10:2", 3).unwrap().num_edges(), 17);
        assert!(build_graph("geometric-degree:10:4", 1).unwrap().is_connected());
        assert!(build_graph("cycle", 0).is_err());
        assert!(build_graph("cycle:5:1", 0).is_err());
        assert!(build_graph("torus:4", 0).is_err());
    }

    #[test]
    fn weight_forms() {
        assert_eq!(parse_weights("metropolis").unwrap(), WeightScheme::Metropolis);
        assert_eq!(
            parse_weights("laplacian:0.25").unwrap(),
            WeightScheme::Laplacian { alpha: 0.25 }
        );
        assert!(parse_weights("laplacian").is_err());
    }
}
