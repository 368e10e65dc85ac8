use std::path::Path;
use std::process::{Command, Output};

fn vpem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpem"))
        .args(args)
        .output()
        .expect("run vpem")
}

fn ok(args: &[&str]) -> Output {
    let out = vpem(args);
    assert!(
        out.status.success(),
        "vpem {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ll_column(trace: &Path) -> Vec<f64> {
    std::fs::read_to_string(trace)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["ll"]
                .as_f64()
                .unwrap()
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generated(dir: &Path) -> std::path::PathBuf {
    let g = dir.join("gen");
    ok(&[
        "generate",
        "--k",
        "2",
        "--d",
        "6",
        "--m",
        "300",
        "--seed",
        "7",
        "--out-dir",
        s(&g),
    ]);
    g.join("data.csv")
}

#[test]
fn generate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let out = ok(&[
            "generate",
            "--k",
            "3",
            "--d",
            "10",
            "--m",
            "1000",
            "--seed",
            "7",
            "--out-dir",
            s(d),
        ]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("M = 1000, d = 10, K = 3"));
    }
    for f in ["data.csv", "labels.csv", "truth.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn bad_separation_names_the_parameter() {
    let t = tempfile::tempdir().unwrap();
    let out = vpem(&[
        "generate",
        "--k",
        "2",
        "--d",
        "2",
        "--m",
        "10",
        "--separation",
        "-1",
        "--out-dir",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("separation"));
}

#[test]
fn centralized_fit_converges_with_monotone_trace() {
    let t = tempfile::tempdir().unwrap();
    let data = generated(t.path());
    let out = t.path().join("c");
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--label-column",
        "last",
        "--k",
        "2",
        "--out-dir",
        s(&out),
    ]);
    let ll = ll_column(&out.join("trace.jsonl"));
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    for f in ["theta.json", "responsibilities.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn fl_matches_block_constrained_centralized() {
    let t = tempfile::tempdir().unwrap();
    let data = generated(t.path());
    let (fl, c) = (t.path().join("fl"), t.path().join("c"));
    let common = [
        "--data",
        s(&data),
        "--label-column",
        "last",
        "--k",
        "2",
        "--agents",
        "3",
        "--seed",
        "4",
    ];
    ok(&[&["fit", "--mode", "fl", "--out-dir", s(&fl)], &common[..]].concat());
    ok(&[&["fit", "--mode", "centralized", "--out-dir", s(&c)], &common[..]].concat());
    assert_eq!(ll_column(&fl.join("trace.jsonl")), ll_column(&c.join("trace.jsonl")));
}

#[test]
fn exact_decentralized_matches_fl_on_singleton_hubs() {
    let t = tempfile::tempdir().unwrap();
    let data = generated(t.path());
    let (fl, dec) = (t.path().join("fl"), t.path().join("dec"));
    let common = ["--data", s(&data), "--label-column", "last", "--k", "2"];
    ok(&[
        &["fit", "--mode", "fl", "--agents", "6", "--out-dir", s(&fl)],
        &common[..],
    ]
    .concat());
    ok(&[
        &[
            "fit",
            "--mode",
            "decentralized",
            "--graph",
            "cycle:6",
            "--hops",
            "0",
            "--consensus-exact",
        ],
        &common[..],
        &["--out-dir", s(&dec)],
    ]
    .concat());
    let (a, b) = (ll_column(&fl.join("trace.jsonl")), ll_column(&dec.join("trace.jsonl")));
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
}

#[test]
fn max_iters_exits_two_and_errors_exit_one() {
    let t = tempfile::tempdir().unwrap();
    let data = generated(t.path());
    let out = vpem(&[
        "fit",
        "--data",
        s(&data),
        "--label-column",
        "last",
        "--k",
        "2",
        "--max-iters",
        "2",
        "--out-dir",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = vpem(&["fit", "--mode", "decentralized", "--data", s(&data), "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--graph"));
    let out = vpem(&["fit", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let t = tempfile::tempdir().unwrap();
    generated(t.path());
    let cfg = t.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "mode = \"decentralized\"\ndata = \"gen/data.csv\"\nlabel_column = \"last\"\nk = 2\n\
         graph = \"cycle:3\"\nhops = 1\ndeterministic_ties = true\nout_dir = \"run\"\n\
         [consensus]\nrounds = 5\n[stop]\nmax_iters = 50\n",
    )
    .unwrap();
    let code = vpem(&["fit", "--config", s(&cfg)]).status.code();
    assert!(matches!(code, Some(0) | Some(2)));
    let first = std::fs::read_to_string(t.path().join("run/trace.jsonl")).unwrap();
    assert!(first.contains("\"consensus_rounds\":5"));
    let code = vpem(&["fit", "--config", s(&cfg), "--consensus-rounds", "7"])
        .status
        .code();
    assert!(matches!(code, Some(0) | Some(2)));
    let second = std::fs::read_to_string(t.path().join("run/trace.jsonl")).unwrap();
    assert!(second.contains("\"consensus_rounds\":7"));
    assert!(t.path().join("run/hubs.txt").exists());

    std::fs::write(&cfg, "mode = \"fl\"\nunknown_key = 1\n").unwrap();
    assert_eq!(vpem(&["fit", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn eval_of_perfect_responsibilities() {
    let t = tempfile::tempdir().unwrap();
    let data = generated(t.path());
    let labels: Vec<usize> = std::fs::read_to_string(t.path().join("gen/labels.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.parse().unwrap())
        .collect();
    let fit = t.path().join("fit");
    std::fs::create_dir_all(&fit).unwrap();
    let mut csv = String::from("gamma0,gamma1\n");
    for l in &labels {
        csv.push_str(if *l == 0 { "0,1\n" } else { "1,0\n" });
    }
    std::fs::write(fit.join("responsibilities.csv"), csv).unwrap();
    let out = ok(&["eval", "--fit-dir", s(&fit), "--data", s(&data), "--baseline"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fit accuracy 1.0000"), "{stdout}");
    assert!(stdout.contains("k-means accuracy"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit.join("accuracy.json")).unwrap()).unwrap();
    assert_eq!(report["fit"]["permutation"], serde_json::json!([1, 0]));
    assert!(report.get("kmeans").is_some());
}

#[test]
fn trajectories_pad_and_refuse_mixed_modes() {
    let t = tempfile::tempdir().unwrap();
    let write = |name: &str, mode: &str, lls: &[f64]| {
        let p = t.path().join(name);
        let body: String = lls
            .iter()
            .enumerate()
            .map(|(i, ll)| format!("{{\"mode\":\"{mode}\",\"iteration\":{i},\"ll\":{ll}}}\n"))
            .collect();
        std::fs::write(&p, body).unwrap();
        p
    };
    let a = write("a.jsonl", "fl", &[1.0, 2.0, 3.0]);
    let b = write("b.jsonl", "fl", &[5.0]);
    let c = write("c.jsonl", "centralized", &[0.0]);
    let out = t.path().join("m.csv");
    ok(&["trajectories", s(&a), s(&b), "--out", s(&out)]);
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[3]).collect::<Vec<_>>(), vec![3.0, 3.5, 4.0]);
    ok(&["trajectories", s(&a), "--out", s(&out)]);

    let mixed = vpem(&["trajectories", s(&a), s(&c), "--out", s(&out)]);
    assert_eq!(mixed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("incompatible traces"));
    ok(&["trajectories", s(&a), s(&c), "--out", s(&out), "--force"]);
}

#[test]
fn cluster_graph_writes_hub_table() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&[
        "cluster-graph",
        "--graph",
        "cycle:5",
        "--hops",
        "1",
        "--deterministic-ties",
        "--out-dir",
        s(t.path()),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("hub 0 root 0 members 0,1,4"), "{stdout}");
    let g = std::fs::read_to_string(t.path().join("graph.txt")).unwrap();
    assert!(g.starts_with("n 5"));
    ok(&["partition", "--d", "8", "--agents", "5", "--out-dir", s(t.path())]);
    assert!(t.path().join("assignment.json").exists());
}
