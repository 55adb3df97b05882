use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use jetsmc::exact::{brute_force_log_marginal, trellis_log_map, trellis_log_marginal, MAX_BRUTE_FORCE_LEAVES};
use jetsmc::io::JetRecord;
use jetsmc::rng::{derive_key, domain};
use jetsmc::search::{beam_search, greedy_cluster};
use jetsmc::sim::generate_dataset;
use jetsmc::variational::{fit as fit_rates, ElboConfig, FitConfig};
use jetsmc::{run_smc, Algorithm, FourVector, GinkgoParams, ObservedJet, SmcConfig, VariationalParams};

use crate::config::{Config, FitMode, InferSection, Method, SmcName};

pub const INFER_HEADER: [&str; 9] = ["jet_id", "method", "K", "M", "b", "log_Z_hat", "best_loglik", "wall_ms", "seed"];
pub const BENCH_HEADER: [&str; 4] = ["method", "N", "K_or_b", "median_ms"];

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_dataset(path: &Path) -> Result<Vec<JetRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JetRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed jet record", path.display(), line_no + 1))?;
        records.push(record);
    }
    Ok(records)
}

pub fn generate(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let jets = generate_dataset(&cfg.dataset.to_config(cfg.seed))?;
    let mut w = sink(out)?;
    for (i, jet) in jets.iter().enumerate() {
        serde_json::to_writer(&mut w, &JetRecord::from_generated(format!("jet{i:05}"), jet))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Result of one method on one jet. Missing values print as empty fields.
#[derive(Debug, Default, Clone, Copy)]
struct Estimate {
    log_z: Option<f64>,
    best: Option<f64>,
}

fn run_method(
    method: Method,
    leaves: &[FourVector],
    params: &GinkgoParams,
    infer: &InferSection,
    seed: u64,
) -> jetsmc::Result<Estimate> {
    let smc = |algorithm| {
        let config = SmcConfig::new(infer.k, seed).proposal(infer.proposal.into());
        run_smc(leaves, params, &config, algorithm).map(|r| Estimate {
            log_z: Some(r.log_z),
            best: Some(r.best_log_lik),
        })
    };
    match method {
        Method::Greedy => greedy_cluster(leaves, params).map(|(_, l)| Estimate { log_z: None, best: Some(l) }),
        Method::Beam => beam_search(leaves, params, infer.beam).map(|(_, l)| Estimate { log_z: None, best: Some(l) }),
        Method::Csmc => smc(Algorithm::Csmc(infer.proposal.into())),
        Method::Ncsmc => smc(Algorithm::Ncsmc),
        Method::TrellisMap => trellis_log_map(leaves, params).map(|(_, l)| Estimate { log_z: None, best: Some(l) }),
        Method::TrellisMarginal => trellis_log_marginal(leaves, params).map(|z| Estimate { log_z: Some(z), best: None }),
        Method::Brute => brute_force_log_marginal(leaves, params).map(|z| Estimate { log_z: Some(z), best: None }),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// Run the configured method on every jet. A jet that fails still gets a
/// row with empty estimates; the first failure decides the exit status.
pub fn infer(cfg: &Config, dataset: &Path, out: Option<&Path>) -> Result<()> {
    let records = read_dataset(dataset)?;
    let infer = &cfg.infer;
    let rows: Vec<(String, Estimate, f64, u64, Option<jetsmc::Error>)> = records
        .par_iter()
        .enumerate()
        .map(|(j, rec)| {
            let seed = derive_key(cfg.seed, &[domain::RUN, j as u64]);
            let start = Instant::now();
            let result = rec.params().and_then(|p| run_method(infer.method, &rec.leaves, &p, infer, seed));
            let ms = start.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok(est) => (rec.jet_id.clone(), est, ms, seed, None),
                Err(e) => (rec.jet_id.clone(), Estimate::default(), ms, seed, Some(e)),
            }
        })
        .collect();

    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(INFER_HEADER)?;
    let mut first_error = None;
    for (jet_id, est, ms, seed, err) in rows {
        let (k, b) = match infer.method {
            Method::Csmc | Method::Ncsmc => (infer.k.to_string(), String::new()),
            Method::Beam => (String::new(), infer.beam.to_string()),
            _ => (String::new(), String::new()),
        };
        w.write_record([
            jet_id.as_str(),
            infer.method.name(),
            &k,
            &infer.m.to_string(),
            &b,
            &fmt_opt(est.log_z),
            &fmt_opt(est.best),
            &format!("{ms:.3}"),
            &seed.to_string(),
        ])?;
        if let Some(e) = err {
            eprintln!("jet {jet_id}: {e}");
            first_error.get_or_insert(e);
        }
    }
    w.flush()?;
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    params: &'a VariationalParams,
    lambda_estimate: Vec<f64>,
    steps: usize,
    final_objective: Option<f64>,
}

/// Fit the rates. The trace goes to `out` as CSV and the fitted parameters
/// to `out` with extension `.params.json`; without `out` only the
/// parameters are printed.
pub fn fit(cfg: &Config, dataset: &Path, out: Option<&Path>) -> Result<()> {
    let jets: Vec<ObservedJet> = read_dataset(dataset)?.iter().map(JetRecord::observed).collect();
    let f = &cfg.fit;
    let init = match f.mode {
        FitMode::Point => VariationalParams::point(f.lambda_init.clone()),
        FitMode::PseudoMarginal => {
            VariationalParams::pseudo_marginal(f.mu_init.clone(), f.log_sigma_init.clone(), f.mu0, f.sigma0)
        }
    };
    let algorithm = match f.algorithm {
        SmcName::Csmc => Algorithm::Csmc(Default::default()),
        SmcName::Ncsmc => Algorithm::Ncsmc,
    };
    let elbo = ElboConfig {
        particles: f.k,
        algorithm,
        seed: cfg.seed,
        parallel: true,
    };
    let mut fit_cfg = FitConfig::new(f.steps, f.learning_rate, elbo);
    fit_cfg.clip = f.clip;
    fit_cfg.common_random_numbers = f.common_random_numbers;
    fit_cfg.average_tail = f.average_tail;
    let (vp, trace) = fit_rates(&jets, &init, &fit_cfg)?;

    let summary = FitSummary {
        params: &vp,
        lambda_estimate: vp.lambda_estimate(),
        steps: trace.records.len(),
        final_objective: trace.records.last().map(|r| r.objective),
    };
    let Some(out) = out else {
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    };
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    let mut header = vec!["step".to_string(), "objective".to_string()];
    header.extend(trace.names.iter().cloned());
    header.extend(["grad_norm".to_string(), "wall_ms".to_string()]);
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.step.to_string(), r.objective.to_string()];
        row.extend(r.params.iter().map(f64::to_string));
        row.extend([r.grad_norm.to_string(), format!("{:.3}", r.wall_ms)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    let params_path = out.with_extension("params.json");
    std::fs::write(&params_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", params_path.display()))?;
    Ok(())
}

/// Root mass that puts the typical leaf count near `n`, with an energy
/// that keeps the root well boosted.
pub fn bench_root(n: usize, t_cut: f64) -> (f64, f64) {
    let t_root = t_cut * 100.0 * (n as f64 / 9.0).powf(2.7);
    (t_root, (4.0 * t_root.sqrt()).max(400.0))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median wall time of each method on jets with exactly `N` leaves. Exact
/// methods are skipped above their size limits.
pub fn bench(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let b = &cfg.bench;
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(BENCH_HEADER)?;
    for &n in &b.ns {
        let mut ds = cfg.dataset.to_config(derive_key(cfg.seed, &[n as u64]));
        (ds.t_root, ds.energy) = bench_root(n, ds.t_cut);
        ds.n_jets = b.seeds;
        ds.min_leaves = n;
        ds.max_leaves = n;
        ds.max_attempts = ds.max_attempts.max(100_000);
        let jets = generate_dataset(&ds).with_context(|| format!("generating jets with {n} leaves"))?;
        let infer = InferSection {
            k: b.k,
            beam: b.beam,
            ..cfg.infer.clone()
        };
        for &method in &b.methods {
            let too_big = match method {
                Method::TrellisMap | Method::TrellisMarginal => n > b.trellis_max_n,
                Method::Brute => n > MAX_BRUTE_FORCE_LEAVES.min(b.trellis_max_n),
                _ => false,
            };
            if too_big {
                continue;
            }
            let mut times = Vec::with_capacity(jets.len());
            for (s, jet) in jets.iter().enumerate() {
                let seed = derive_key(cfg.seed, &[domain::RUN, n as u64, s as u64]);
                let start = Instant::now();
                run_method(method, &jet.leaves, &jet.params, &infer, seed)
                    .with_context(|| format!("{} on N = {n}", method.name()))?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let k_or_b = match method {
                Method::Csmc | Method::Ncsmc => b.k.to_string(),
                Method::Beam => b.beam.to_string(),
                _ => String::new(),
            };
            w.write_record([method.name(), &n.to_string(), &k_or_b, &format!("{:.4}", median(times))])?;
        }
        w.flush()?;
    }
    Ok(())
}
