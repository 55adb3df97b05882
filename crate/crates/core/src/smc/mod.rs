//! Combinatorial sequential Monte Carlo over jet splitting histories.
//!
//! A particle is a forest over the observed leaves. Each rank merges two of
//! its trees, so after `N − 1` ranks every surviving particle holds a
//! complete tree. Weights are accumulated into an unbiased estimate of the
//! marginal likelihood `Z = Σ_τ p(X | τ, λ)`.

mod csmc;
mod forest;
mod ncsmc;

use rand::Rng;
use rayon::prelude::*;

pub use csmc::{csmc_propose, csmc_weight, Proposal};
pub use forest::{Arena, PartialState, TreeNode};
pub use ncsmc::{ncsmc_potentials, Potential};

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::{validate_merge_mass, GinkgoParams, SplitKernel};
use crate::math::{log_mean_exp, softmax};
use crate::rng::{domain, stream};
use crate::topology::{tree_log_likelihood, Topology};

/// Draw `log_weights.len()` ancestor indices i.i.d. with probabilities
/// `softmax(log_weights)`.
pub fn multinomial_resample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::TotalDeath {
            rank: 0,
            particles: log_weights.len(),
        });
    }
    let mut cumulative = Vec::with_capacity(log_weights.len());
    let mut total = 0.0;
    for &w in log_weights {
        total += (w - max).exp();
        cumulative.push(total);
    }
    let last = log_weights.len() - 1;
    Ok((0..log_weights.len())
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect())
}

/// `log ν(s)`: the log number of forests one merge away from `s` going
/// backwards, i.e. of its trees with at least two leaves. Zero for the
/// all-singleton forest.
pub fn overcounting_log_nu(state: &PartialState) -> f64 {
    match state.n_nonsingleton() {
        0 => 0.0,
        n => (n as f64).ln(),
    }
}

/// Split kernels for one rate vector: the root split and all others.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RateKernels {
    root: SplitKernel,
    inner: SplitKernel,
    root_index: usize,
    inner_index: usize,
}

impl RateKernels {
    pub(crate) fn new(lambdas: &[f64], t_cut: f64) -> Self {
        let inner_index = usize::from(lambdas.len() == 2);
        Self {
            root: SplitKernel::new(lambdas[0], t_cut),
            inner: SplitKernel::new(lambdas[inner_index], t_cut),
            root_index: 0,
            inner_index,
        }
    }

    /// Kernel and rate index for a merge in a forest of `m` trees.
    #[inline]
    pub(crate) fn for_forest(&self, m: usize) -> (&SplitKernel, usize) {
        if m == 2 {
            (&self.root, self.root_index)
        } else {
            (&self.inner, self.inner_index)
        }
    }
}

/// Merged vector, its squared mass and the split term of merging the trees
/// at positions `i` and `j` (`−∞` if the merge is invalid).
#[inline]
pub(crate) fn eval_merge(
    state: &PartialState,
    arena: &Arena,
    i: usize,
    j: usize,
    kernels: &RateKernels,
    t_cut: f64,
) -> (FourVector, f64, f64) {
    let (a, b) = (arena.get(state.roots[i]), arena.get(state.roots[j]));
    let v = a.vector + b.vector;
    let t = v.squared_mass();
    if !validate_merge_mass(a.t, b.t, t, t_cut).is_ok() {
        return (v, t, f64::NEG_INFINITY);
    }
    let term = kernels.for_forest(state.n_trees()).0.log_split(a.t, b.t, t);
    (v, t, term)
}

pub(crate) fn build_node(
    state: &PartialState,
    arena: &Arena,
    i: usize,
    j: usize,
    kernels: &RateKernels,
    t_cut: f64,
) -> (TreeNode, f64) {
    let (vector, t, term) = eval_merge(state, arena, i, j, kernels, t_cut);
    let (a, b) = (state.roots[i], state.roots[j]);
    let (na, nb) = (arena.get(a), arena.get(b));
    let node = TreeNode {
        vector,
        t,
        log_lik: na.log_lik + nb.log_lik + term,
        n_leaves: na.n_leaves + nb.n_leaves,
        children: Some((a, b)),
    };
    (node, term)
}

/// Result of extending one particle by one rank.
pub(crate) struct StepOut {
    pub state: PartialState,
    pub node: TreeNode,
    pub log_w: f64,
    /// `∂ log w / ∂ log λ_d` for the particle's rate vector.
    pub dlogw: [f64; 2],
}

impl StepOut {
    /// A particle with no valid extension: merge the first two trees anyway
    /// so the rank bookkeeping holds, with zero weight.
    pub(crate) fn dead(prev: &PartialState, arena: &Arena, kernels: &RateKernels, t_cut: f64, new_id: u32) -> Self {
        let (node, _) = build_node(prev, arena, 0, 1, kernels, t_cut);
        let mut state = prev.merged(0, 1, new_id, f64::NEG_INFINITY, arena);
        state.log_pi = f64::NEG_INFINITY;
        Self {
            state,
            node: TreeNode {
                log_lik: f64::NEG_INFINITY,
                ..node
            },
            log_w: f64::NEG_INFINITY,
            dlogw: [0.0; 2],
        }
    }
}

/// Which SMC variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Csmc(Proposal),
    Ncsmc,
}

/// Settings shared by both samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmcConfig {
    /// Number of particles `K`.
    pub particles: usize,
    pub seed: u64,
    /// Proposal used by CSMC; ignored by NCSMC.
    pub proposal: Proposal,
    /// Extend particles on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl SmcConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            proposal: Proposal::default(),
            parallel: false,
        }
    }

    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn proposal(mut self, proposal: Proposal) -> Self {
        self.proposal = proposal;
        self
    }
}

/// Final particles with the full weight and ancestry history.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub particles: Vec<PartialState>,
    pub arena: Arena,
    /// `log_weights[r − 1][k]` is `w_r^k`.
    pub log_weights: Vec<Vec<f64>>,
    /// `ancestors[r − 1][k]` is the rank `r − 1` parent of particle `k` at rank `r`.
    pub ancestors: Vec<Vec<usize>>,
    /// Running `log Ẑ` after each rank.
    pub log_z_path: Vec<f64>,
}

/// Output of [`run_csmc`] and [`run_ncsmc`].
#[derive(Debug, Clone)]
pub struct SmcRun {
    pub system: ParticleSystem,
    pub log_z: f64,
    /// Highest-likelihood complete tree among the final particles.
    pub best: Topology,
    pub best_log_lik: f64,
}

/// Extra inputs used by the variational module.
#[derive(Debug, Clone, Default)]
pub(crate) struct Extras {
    /// One rate vector per initial particle; particle `k` and its
    /// descendants use `lambdas[k]`. Empty means `params.lambdas` for all.
    pub lambdas: Vec<Vec<f64>>,
    /// Added to the rank-1 weight of particle `k`.
    pub rank1_log_ratio: Vec<f64>,
    pub track_grad: bool,
}

/// Gradient of `log Ẑ` with resampling and merge choices held fixed.
#[derive(Debug, Clone)]
pub(crate) struct SmcGrad {
    /// `∂ log Ẑ / ∂ log λ_d` attributed to each rate vector.
    pub dlog_lambda: Vec<[f64; 2]>,
    /// `softmax(w_1)`, the coefficient of each rank-1 additive term.
    pub rank1_share: Vec<f64>,
}

/// Everything one rank event produces.
struct Rank {
    w: Vec<f64>,
    parents: Vec<usize>,
    /// Rate-vector id and `∂ log w / ∂ log λ` behind each weight.
    dlogw: Vec<(usize, [f64; 2])>,
    states: Vec<PartialState>,
    nodes: Vec<TreeNode>,
}

impl Rank {
    fn with_capacity(k: usize, w: Vec<f64>, parents: Vec<usize>) -> Self {
        Self {
            w,
            parents,
            dlogw: Vec::with_capacity(k),
            states: Vec::with_capacity(k),
            nodes: Vec::with_capacity(k),
        }
    }
}

pub(crate) fn run_engine(
    leaves: &[FourVector],
    params: &GinkgoParams,
    config: &SmcConfig,
    algorithm: Algorithm,
    extras: &Extras,
) -> Result<(SmcRun, Option<SmcGrad>)> {
    params.validate()?;
    let k = config.particles;
    let n = leaves.len();
    if k == 0 {
        return Err(Error::Config("need at least one particle".into()));
    }
    if n == 0 {
        return Err(Error::Domain("no leaves to cluster".into()));
    }
    let per_particle = !extras.lambdas.is_empty();
    if per_particle && extras.lambdas.len() != k {
        return Err(Error::Config("one rate vector per particle required".into()));
    }
    if !extras.rank1_log_ratio.is_empty() && extras.rank1_log_ratio.len() != k {
        return Err(Error::Config("one rank-1 term per particle required".into()));
    }
    let kernels: Vec<RateKernels> = if per_particle {
        extras.lambdas.iter().map(|l| RateKernels::new(l, params.t_cut)).collect()
    } else {
        vec![RateKernels::new(&params.lambdas, params.t_cut)]
    };

    let mut arena = Arena::new(leaves);
    let mut particles: Vec<PartialState> = (0..k)
        .map(|i| PartialState {
            lambda_id: if per_particle { i as u32 } else { 0 },
            ..PartialState::initial(n)
        })
        .collect();
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    let mut ancestors = Vec::with_capacity(n.saturating_sub(1));
    let mut log_z_path = Vec::with_capacity(n.saturating_sub(1));
    let mut log_z = 0.0;
    let mut grad = extras.track_grad.then(|| SmcGrad {
        dlog_lambda: vec![[0.0; 2]; kernels.len()],
        rank1_share: vec![0.0; k],
    });
    let t_cut = params.t_cut;

    let rank1_extra = |r: usize, w: &mut [f64]| {
        if r == 1 && !extras.rank1_log_ratio.is_empty() {
            w.iter_mut().zip(&extras.rank1_log_ratio).for_each(|(x, e)| *x += e);
        }
    };

    for r in 1..n {
        let base = arena.len() as u32;
        let rank = match algorithm {
            Algorithm::Csmc(proposal) => {
                // Resample on the previous rank's weights, then propose.
                let parents: Vec<usize> = match log_weights.last() {
                    None => (0..k).collect(),
                    Some(w) => multinomial_resample(w, &mut stream(config.seed, &[domain::RESAMPLE, r as u64]))?,
                };
                let extend = |i: usize| -> StepOut {
                    let prev = &particles[parents[i]];
                    let mut rng = stream(config.seed, &[domain::PROPOSE, i as u64, r as u64]);
                    let kern = &kernels[prev.lambda_id()];
                    csmc::step(prev, &arena, kern, t_cut, proposal, &mut rng, base + i as u32, extras.track_grad)
                };
                let steps: Vec<StepOut> = if config.parallel {
                    (0..k).into_par_iter().map(extend).collect()
                } else {
                    (0..k).map(extend).collect()
                };
                let mut w: Vec<f64> = steps.iter().map(|s| s.log_w).collect();
                rank1_extra(r, &mut w);
                if w.iter().all(|x| *x == f64::NEG_INFINITY) {
                    return Err(Error::TotalDeath { rank: r, particles: k });
                }
                let mut out = Rank::with_capacity(k, w, parents);
                for s in steps {
                    out.dlogw.push((s.state.lambda_id(), s.dlogw));
                    out.nodes.push(s.node);
                    out.states.push(s.state);
                }
                out
            }
            Algorithm::Ncsmc => {
                // Resample on the previous rank's weights; each copy then
                // weighs its forest by the look-ahead potentials and picks
                // one extension in proportion to them.
                let parents: Vec<usize> = match log_weights.last() {
                    None => (0..k).collect(),
                    Some(w) => multinomial_resample(w, &mut stream(config.seed, &[domain::RESAMPLE, r as u64]))?,
                };
                let extend = |i: usize| {
                    let prev = &particles[parents[i]];
                    let kern = &kernels[prev.lambda_id()];
                    let weighed = ncsmc::weigh(prev, &arena, kern, t_cut, extras.track_grad);
                    let new_id = base + i as u32;
                    let (state, node) = if weighed.log_w == f64::NEG_INFINITY {
                        let dead = StepOut::dead(prev, &arena, kern, t_cut, new_id);
                        (dead.state, dead.node)
                    } else {
                        let mut rng = stream(config.seed, &[domain::PROPOSE, i as u64, r as u64]);
                        ncsmc::select(prev, &arena, kern, t_cut, &weighed, &mut rng, new_id)
                    };
                    (weighed.log_w, (prev.lambda_id(), weighed.dlogw), state, node)
                };
                let steps: Vec<_> = if config.parallel {
                    (0..k).into_par_iter().map(extend).collect()
                } else {
                    (0..k).map(extend).collect()
                };
                let mut w: Vec<f64> = steps.iter().map(|s| s.0).collect();
                rank1_extra(r, &mut w);
                if w.iter().all(|x| *x == f64::NEG_INFINITY) {
                    return Err(Error::TotalDeath { rank: r, particles: k });
                }
                let mut out = Rank::with_capacity(k, w, parents);
                for (_, d, state, node) in steps {
                    out.dlogw.push(d);
                    out.nodes.push(node);
                    out.states.push(state);
                }
                out
            }
        };
        if let Some(g) = grad.as_mut() {
            let share = softmax(&rank.w);
            for (&(id, d), &p) in rank.dlogw.iter().zip(&share) {
                if p > 0.0 {
                    let acc = &mut g.dlog_lambda[id];
                    acc[0] += p * d[0];
                    acc[1] += p * d[1];
                }
            }
            if r == 1 {
                g.rank1_share = share;
            }
        }
        log_z += log_mean_exp(&rank.w);
        log_z_path.push(log_z);
        arena.extend(rank.nodes);
        particles = rank.states;
        log_weights.push(rank.w);
        ancestors.push(rank.parents);
    }

    let (best, best_log_lik) = best_particle(&particles, &arena, params, extras)?;
    let run = SmcRun {
        system: ParticleSystem {
            particles,
            arena,
            log_weights,
            ancestors,
            log_z_path,
        },
        log_z,
        best,
        best_log_lik,
    };
    Ok((run, grad))
}

fn best_particle(
    particles: &[PartialState],
    arena: &Arena,
    params: &GinkgoParams,
    extras: &Extras,
) -> Result<(Topology, f64)> {
    let best = particles
        .iter()
        .filter(|p| p.log_pi().is_finite() && p.is_complete())
        .max_by(|a, b| a.log_pi().total_cmp(&b.log_pi()));
    let Some(best) = best else {
        return Err(Error::TotalDeath {
            rank: arena.n_leaves().saturating_sub(1),
            particles: particles.len(),
        });
    };
    let topo = arena.topology(best.roots()[0])?;
    let scored = if extras.lambdas.is_empty() {
        tree_log_likelihood(&topo, params)
    } else {
        tree_log_likelihood(&topo, &params.with_lambdas(&extras.lambdas[best.lambda_id()]))
    };
    Ok((topo, scored))
}

/// Combinatorial SMC with `config.particles` particles.
pub fn run_csmc(leaves: &[FourVector], params: &GinkgoParams, config: &SmcConfig) -> Result<SmcRun> {
    run_engine(leaves, params, config, Algorithm::Csmc(config.proposal), &Extras::default()).map(|r| r.0)
}

/// Nested CSMC with `config.particles` particles.
pub fn run_ncsmc(leaves: &[FourVector], params: &GinkgoParams, config: &SmcConfig) -> Result<SmcRun> {
    run_engine(leaves, params, config, Algorithm::Ncsmc, &Extras::default()).map(|r| r.0)
}

/// Dispatch on `algorithm`.
pub fn run_smc(
    leaves: &[FourVector],
    params: &GinkgoParams,
    config: &SmcConfig,
    algorithm: Algorithm,
) -> Result<SmcRun> {
    run_engine(leaves, params, config, algorithm, &Extras::default()).map(|r| r.0)
}
