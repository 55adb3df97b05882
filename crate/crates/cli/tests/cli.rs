use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jetsmc::io::JetRecord;
use jetsmc::topology::tree_log_likelihood;
use tempfile::TempDir;

fn jetsmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jetsmc"))
        .args(args)
        .env_remove("JETSMC_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = jetsmc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "seed = 11\n\n[dataset]\nn_jets = 6\nmin_leaves = 3\nmax_leaves = 7\n\n[fit]\nsteps = 4\nK = 4\n",
    )
    .unwrap();
    path
}

fn dataset(dir: &Path) -> PathBuf {
    let cfg = small_config(dir);
    let path = dir.join("jets.jsonl");
    ok(&["generate", "--config", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    path
}

fn rows(csv_text: &str) -> Vec<Vec<String>> {
    csv_text
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn generate_is_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let a = dataset(dir.path());
    let text = std::fs::read_to_string(&a).unwrap();
    let again = ok(&["generate", "--config", small_config(dir.path()).to_str().unwrap()]);
    assert_eq!(text, again);
    let other = ok(&["generate", "--config", small_config(dir.path()).to_str().unwrap(), "--seed", "12"]);
    assert_ne!(text, other);

    let records: Vec<JetRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 6);
    for rec in &records {
        assert!((3..=7).contains(&rec.leaves.len()));
        let truth = rec.truth().unwrap();
        let ll = tree_log_likelihood(&truth, &rec.params().unwrap());
        assert!((ll - rec.truth_loglik).abs() < 1e-9, "{ll} vs {}", rec.truth_loglik);
    }
}

#[test]
fn infer_header_and_columns() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let out = ok(&["infer", data.to_str().unwrap(), "--method", "ncsmc", "--K", "16"]);
    let table = rows(&out);
    assert_eq!(table[0].join(","), "jet_id,method,K,M,b,log_Z_hat,best_loglik,wall_ms,seed");
    assert_eq!(table.len(), 7);
    for row in &table[1..] {
        assert_eq!(row[1], "ncsmc");
        assert_eq!(row[2], "16");
        assert_eq!(row[3], "1");
        assert!(row[4].is_empty());
        let log_z: f64 = row[5].parse().unwrap();
        let best: f64 = row[6].parse().unwrap();
        assert!(log_z.is_finite() && best.is_finite());
    }
}

#[test]
fn infer_is_independent_of_worker_count() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let strip_time = |s: String| -> Vec<Vec<String>> {
        rows(&s).into_iter().map(|mut r| {
            r.remove(7);
            r
        }).collect()
    };
    for method in ["csmc", "ncsmc"] {
        let one = ok(&["infer", data.to_str().unwrap(), "--method", method, "--K", "32", "--jobs", "1"]);
        let many = ok(&["infer", data.to_str().unwrap(), "--method", method, "--K", "32", "--jobs", "4"]);
        assert_eq!(strip_time(one), strip_time(many), "{method}");
    }
}

#[test]
fn beam_width_one_matches_greedy() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let greedy = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "greedy"]));
    let beam = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "beam", "--beam", "1"]));
    for (g, b) in greedy[1..].iter().zip(&beam[1..]) {
        assert_eq!(g[6], b[6]);
        assert_eq!(b[4], "1");
    }
}

#[test]
fn exact_methods_agree() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let trellis = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "trellis-marginal"]));
    let brute = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "brute"]));
    let map = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "trellis-map"]));
    let beam = rows(&ok(&["infer", data.to_str().unwrap(), "--method", "beam", "--beam", "50"]));
    for i in 1..trellis.len() {
        let t: f64 = trellis[i][5].parse().unwrap();
        let b: f64 = brute[i][5].parse().unwrap();
        assert!((t - b).abs() <= 1e-9 * t.abs().max(1.0));
        let m: f64 = map[i][6].parse().unwrap();
        let bs: f64 = beam[i][6].parse().unwrap();
        assert!(m >= bs - 1e-9 && t >= m);
    }
}

#[test]
fn fit_writes_trace_and_params() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let cfg = small_config(dir.path());
    let trace = dir.path().join("trace.csv");
    ok(&["fit", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", trace.to_str().unwrap()]);
    let table = rows(&std::fs::read_to_string(&trace).unwrap());
    assert_eq!(table[0].join(","), "step,objective,lambda1,grad_norm,wall_ms");
    assert_eq!(table.len(), 5);
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.params.json")).unwrap()).unwrap();
    assert_eq!(params["params"]["mode"], "point");
    assert!(params["lambda_estimate"][0].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_header_and_size_limit() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "[bench]\nseeds = 1\nK = 8\nbeam = 4\ntrellis_max_n = 5\n").unwrap();
    let out = ok(&["bench", "--config", cfg.to_str().unwrap(), "--ns", "4,6"]);
    let table = rows(&out);
    assert_eq!(table[0].join(","), "method,N,K_or_b,median_ms");
    assert!(table.iter().any(|r| r[0] == "trellis-marginal" && r[1] == "4"));
    assert!(!table.iter().any(|r| r[0] == "trellis-marginal" && r[1] == "6"));
    assert!(table.iter().any(|r| r[0] == "csmc" && r[1] == "6" && r[2] == "8"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let data = data.to_str().unwrap();

    assert_eq!(jetsmc(&["infer", data, "--M", "2"]).status.code(), Some(2));
    assert_eq!(jetsmc(&["infer", data, "--K", "0"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[infer]\nnot_a_key = 3\n").unwrap();
    assert_eq!(jetsmc(&["infer", data, "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(jetsmc(&["infer", "/nonexistent/jets.jsonl"]).status.code(), Some(1));

    let big = dir.path().join("big.toml");
    std::fs::write(&big, "[dataset]\nn_jets = 2\nmin_leaves = 11\nmax_leaves = 13\n").unwrap();
    let big_data = dir.path().join("big.jsonl");
    ok(&["generate", "--config", big.to_str().unwrap(), "--out", big_data.to_str().unwrap()]);
    let out = jetsmc(&["infer", big_data.to_str().unwrap(), "--method", "brute"]);
    assert_eq!(out.status.code(), Some(3));
    let table = rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(table.len(), 3, "failed jets still get rows");
    assert!(table[1][5].is_empty());
}
