//! Learning the decay rates from a set of jets.
//!
//! Two objectives are supported, both estimated by running SMC on every jet:
//!
//! * point estimate: maximize `mean_j log Ẑ_j(λ̂)`, a lower bound (in
//!   expectation) on the mean log marginal likelihood;
//! * pseudo-marginal: each particle draws its own `λ` from a log-normal
//!   proposal `q_ψ` and is reweighted by `p(λ)/q_ψ(λ)` at its first step, so
//!   `Ẑ` estimates `∫ p(X | λ) p(λ) dλ` and its log bounds the evidence.
//!
//! Gradients are taken with the resampling indices and merge choices held
//! fixed, and with the proposal noise reparameterized.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::GinkgoParams;
use crate::rng::{derive_key, domain, stream};
use crate::sim::GeneratedJet;
use crate::smc::{run_engine, Algorithm, Extras, SmcConfig};

/// The observed part of a jet: its leaves and the known shower settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedJet {
    pub leaves: Vec<FourVector>,
    pub t_cut: f64,
    pub root: FourVector,
}

impl From<&GeneratedJet> for ObservedJet {
    fn from(jet: &GeneratedJet) -> Self {
        Self {
            leaves: jet.leaves.clone(),
            t_cut: jet.params.t_cut,
            root: jet.params.root,
        }
    }
}

impl ObservedJet {
    fn params(&self, lambdas: &[f64]) -> Result<GinkgoParams> {
        GinkgoParams::new(lambdas.to_vec(), self.t_cut, self.root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Point,
    PseudoMarginal,
}

/// Parameters being learned.
///
/// In point mode only `lambda_hat` is active. In pseudo-marginal mode the
/// proposal is `log λ_d ~ N(mu_tilde[d], exp(log_sigma_tilde[d])²)` and the
/// prior is `log λ_d ~ N(mu0, sigma0²)` for every `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mode: Mode,
    pub lambda_hat: Vec<f64>,
    pub mu_tilde: Vec<f64>,
    pub log_sigma_tilde: Vec<f64>,
    pub mu0: f64,
    pub sigma0: f64,
}

impl VariationalParams {
    pub fn point(lambda_hat: Vec<f64>) -> Self {
        Self {
            mode: Mode::Point,
            lambda_hat,
            mu_tilde: Vec::new(),
            log_sigma_tilde: Vec::new(),
            mu0: 0.0,
            sigma0: 1.0,
        }
    }

    pub fn pseudo_marginal(mu_tilde: Vec<f64>, log_sigma_tilde: Vec<f64>, mu0: f64, sigma0: f64) -> Self {
        Self {
            mode: Mode::PseudoMarginal,
            lambda_hat: Vec::new(),
            mu_tilde,
            log_sigma_tilde,
            mu0,
            sigma0,
        }
    }

    /// Number of rates (1, or 2 for a heavy resonance).
    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Point => self.lambda_hat.len(),
            Mode::PseudoMarginal => self.mu_tilde.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(1..=2).contains(&d) {
            return Err(Error::Config(format!("expected 1 or 2 rates, got {d}")));
        }
        match self.mode {
            Mode::Point => {
                if self.lambda_hat.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::Config("lambda_hat must be positive".into()));
                }
            }
            Mode::PseudoMarginal => {
                if self.log_sigma_tilde.len() != d {
                    return Err(Error::Config("mu_tilde and log_sigma_tilde differ in length".into()));
                }
                let all = self.mu_tilde.iter().chain(&self.log_sigma_tilde);
                if all.clone().any(|x| !x.is_finite()) {
                    return Err(Error::Config("proposal parameters must be finite".into()));
                }
                if !(self.sigma0 > 0.0 && self.sigma0.is_finite() && self.mu0.is_finite()) {
                    return Err(Error::Config("prior needs finite mu0 and positive sigma0".into()));
                }
            }
        }
        Ok(())
    }

    /// Active parameters: `λ̂`, or `μ̃` followed by `log σ̃`.
    pub fn active(&self) -> Vec<f64> {
        match self.mode {
            Mode::Point => self.lambda_hat.clone(),
            Mode::PseudoMarginal => self.mu_tilde.iter().chain(&self.log_sigma_tilde).copied().collect(),
        }
    }

    /// Replace the active parameters, in the order of [`Self::active`].
    pub fn with_active(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        let d = self.dim();
        match self.mode {
            Mode::Point => out.lambda_hat = values[..d].to_vec(),
            Mode::PseudoMarginal => {
                out.mu_tilde = values[..d].to_vec();
                out.log_sigma_tilde = values[d..2 * d].to_vec();
            }
        }
        out
    }

    /// Names of the active parameters, for trace headers.
    pub fn active_names(&self) -> Vec<String> {
        let d = self.dim();
        match self.mode {
            Mode::Point => (1..=d).map(|i| format!("lambda{i}")).collect(),
            Mode::PseudoMarginal => (1..=d)
                .map(|i| format!("mu{i}"))
                .chain((1..=d).map(|i| format!("log_sigma{i}")))
                .collect(),
        }
    }

    /// Point estimate of the rates: `λ̂`, or `exp(μ̃)` (the proposal median).
    pub fn lambda_estimate(&self) -> Vec<f64> {
        match self.mode {
            Mode::Point => self.lambda_hat.clone(),
            Mode::PseudoMarginal => self.mu_tilde.iter().map(|m| m.exp()).collect(),
        }
    }
}

/// How the objective is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElboConfig {
    pub particles: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Process jets on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

/// Per-particle rate draws for one jet in pseudo-marginal mode.
struct Draws {
    eps: Vec<Vec<f64>>,
    lambdas: Vec<Vec<f64>>,
    log_ratio: Vec<f64>,
}

fn draw_rates(vp: &VariationalParams, k: usize, seed: u64) -> Draws {
    let d = vp.dim();
    let mut eps = Vec::with_capacity(k);
    let mut lambdas = Vec::with_capacity(k);
    let mut log_ratio = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = stream(seed, &[domain::LAMBDA, i as u64]);
        let e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut ratio = 0.0;
        let mut lam = Vec::with_capacity(d);
        for (dd, &ed) in e.iter().enumerate() {
            let log_sigma = vp.log_sigma_tilde[dd];
            let log_l = vp.mu_tilde[dd] + log_sigma.exp() * ed;
            let z0 = (log_l - vp.mu0) / vp.sigma0;
            // log N(log λ; μ0, σ0²) − log N(log λ; μ̃, σ̃²); the Jacobians cancel.
            ratio += log_sigma - vp.sigma0.ln() - 0.5 * z0 * z0 + 0.5 * ed * ed;
            lam.push(log_l.exp());
        }
        eps.push(e);
        lambdas.push(lam);
        log_ratio.push(ratio);
    }
    Draws {
        eps,
        lambdas,
        log_ratio,
    }
}

/// `log Ẑ` for one jet and, if requested, its gradient in the active parameters.
fn jet_objective(
    jet: &ObservedJet,
    vp: &VariationalParams,
    cfg: &ElboConfig,
    seed: u64,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let smc = SmcConfig::new(cfg.particles, seed);
    let d = vp.dim();
    match vp.mode {
        Mode::Point => {
            let params = jet.params(&vp.lambda_hat)?;
            let extras = Extras {
                track_grad: with_grad,
                ..Extras::default()
            };
            let (run, grad) = run_engine(&jet.leaves, &params, &smc, cfg.algorithm, &extras)?;
            let g = grad
                .map(|g| (0..d).map(|i| g.dlog_lambda[0][i] / vp.lambda_hat[i]).collect())
                .unwrap_or_default();
            Ok((run.log_z, g))
        }
        Mode::PseudoMarginal => {
            let draws = draw_rates(vp, cfg.particles, seed);
            let params = jet.params(&draws.lambdas[0])?;
            let extras = Extras {
                lambdas: draws.lambdas,
                rank1_log_ratio: draws.log_ratio,
                track_grad: with_grad,
            };
            let (run, grad) = run_engine(&jet.leaves, &params, &smc, cfg.algorithm, &extras)?;
            let Some(grad) = grad else {
                return Ok((run.log_z, Vec::new()));
            };
            let mut g = vec![0.0; 2 * d];
            for (k, eps) in draws.eps.iter().enumerate() {
                let share = grad.rank1_share[k];
                for i in 0..d {
                    let sigma = vp.log_sigma_tilde[i].exp();
                    let log_l = vp.mu_tilde[i] + sigma * eps[i];
                    let dprior = -(log_l - vp.mu0) / (vp.sigma0 * vp.sigma0);
                    let through = grad.dlog_lambda[k][i];
                    g[i] += through + share * dprior;
                    g[d + i] += through * sigma * eps[i] + share * (dprior * sigma * eps[i] + 1.0);
                }
            }
            Ok((run.log_z, g))
        }
    }
}

fn objective(
    jets: &[ObservedJet],
    vp: &VariationalParams,
    cfg: &ElboConfig,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    vp.validate()?;
    if jets.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let one = |(j, jet): (usize, &ObservedJet)| {
        jet_objective(jet, vp, cfg, derive_key(cfg.seed, &[domain::RUN, j as u64]), with_grad)
    };
    let per_jet: Vec<(f64, Vec<f64>)> = if cfg.parallel {
        jets.par_iter().enumerate().map(one).collect::<Result<_>>()?
    } else {
        jets.iter().enumerate().map(one).collect::<Result<_>>()?
    };
    let n = jets.len() as f64;
    let value = per_jet.iter().map(|(v, _)| v).sum::<f64>() / n;
    let mut grad = vec![0.0; if with_grad { vp.active().len() } else { 0 }];
    for (_, g) in &per_jet {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((value, grad))
}

/// Mean over jets of `log Ẑ` at the given parameters.
pub fn elbo_estimate(jets: &[ObservedJet], vp: &VariationalParams, cfg: &ElboConfig) -> Result<f64> {
    objective(jets, vp, cfg, false).map(|r| r.0)
}

/// [`elbo_estimate`] and its gradient in the active parameters
/// (`∂/∂λ̂`, or `∂/∂μ̃` followed by `∂/∂ log σ̃`).
pub fn grad_elbo(jets: &[ObservedJet], vp: &VariationalParams, cfg: &ElboConfig) -> Result<(f64, Vec<f64>)> {
    objective(jets, vp, cfg, true)
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Gradient norm cap applied before each step.
    pub clip: f64,
    pub elbo: ElboConfig,
    /// Reuse the same random numbers at every step instead of fresh ones.
    pub common_random_numbers: bool,
    /// Return the average of the iterates over this trailing fraction of the
    /// steps instead of the last iterate (0 disables averaging).
    pub average_tail: f64,
}

impl FitConfig {
    pub fn new(steps: usize, learning_rate: f64, elbo: ElboConfig) -> Self {
        Self {
            steps,
            learning_rate,
            clip: 10.0,
            elbo,
            common_random_numbers: false,
            average_tail: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    pub objective: f64,
    /// Active parameters before the step, as in [`VariationalParams::active`].
    pub params: Vec<f64>,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub names: Vec<String>,
    pub records: Vec<FitRecord>,
}

/// Stochastic gradient ascent on the objective.
///
/// Point mode steps in `log λ̂` so the rates stay positive; pseudo-marginal
/// mode steps in `(μ̃, log σ̃)` directly.
pub fn fit(
    jets: &[ObservedJet],
    init: &VariationalParams,
    cfg: &FitConfig,
) -> Result<(VariationalParams, FitTrace)> {
    init.validate()?;
    if !(cfg.learning_rate > 0.0 && cfg.clip > 0.0) {
        return Err(Error::Config("learning rate and clip must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.average_tail) {
        return Err(Error::Config("average_tail must lie in [0, 1]".into()));
    }
    let start = Instant::now();
    let mut vp = init.clone();
    let mut trace = FitTrace {
        names: vp.active_names(),
        records: Vec::with_capacity(cfg.steps),
    };
    let tail_from = cfg.steps - ((cfg.steps as f64 * cfg.average_tail).round() as usize).min(cfg.steps);
    let mut tail_sum = vec![0.0; vp.active().len()];
    let mut tail_count = 0usize;

    for step in 0..cfg.steps {
        let seed = if cfg.common_random_numbers {
            cfg.elbo.seed
        } else {
            derive_key(cfg.elbo.seed, &[domain::STEP, step as u64])
        };
        let ecfg = ElboConfig { seed, ..cfg.elbo };
        let (value, grad) = grad_elbo(jets, &vp, &ecfg)?;
        let active = vp.active();
        // Coordinates actually stepped: log λ̂ in point mode.
        let (mut coords, mut g): (Vec<f64>, Vec<f64>) = match vp.mode {
            Mode::Point => (
                active.iter().map(|l| l.ln()).collect(),
                grad.iter().zip(&active).map(|(g, l)| g * l).collect(),
            ),
            Mode::PseudoMarginal => (active.clone(), grad),
        };
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !value.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite { step });
        }
        trace.records.push(FitRecord {
            step,
            objective: value,
            params: active,
            grad_norm: norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if norm > cfg.clip {
            g.iter_mut().for_each(|x| *x *= cfg.clip / norm);
        }
        for (c, gi) in coords.iter_mut().zip(&g) {
            *c += cfg.learning_rate * gi;
        }
        let next = match vp.mode {
            Mode::Point => coords.iter().map(|c| c.exp()).collect::<Vec<_>>(),
            Mode::PseudoMarginal => coords,
        };
        vp = vp.with_active(&next);
        if step >= tail_from {
            tail_sum.iter_mut().zip(&next).for_each(|(s, x)| *s += x);
            tail_count += 1;
        }
    }
    if tail_count > 0 && cfg.average_tail > 0.0 {
        let mean: Vec<f64> = tail_sum.iter().map(|s| s / tail_count as f64).collect();
        vp = vp.with_active(&mean);
    }
    Ok((vp, trace))
}
