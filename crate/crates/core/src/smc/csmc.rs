//! Combinatorial SMC: one sampled merge per particle per rank.

use rand::Rng;

use super::forest::{Arena, PartialState};
use super::{eval_merge, overcounting_log_nu, RateKernels, StepOut};
use crate::error::{Error, Result};
use crate::likelihood::GinkgoParams;

/// How a CSMC particle picks the pair to merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proposal {
    /// Uniform over all `C(m,2)` pairs; invalid merges get zero weight.
    /// Constant cost per step.
    #[default]
    AllPairs,
    /// Uniform over the pairs passing the validity check. Costs `O(m²)`
    /// per step but never proposes a zero-likelihood merge.
    ValidPairs,
}

pub(crate) struct Proposed {
    pub state: PartialState,
    pub node: super::forest::TreeNode,
    pub log_q: f64,
    pub pair: (usize, usize),
}

fn choose_pair<R: Rng + ?Sized>(
    state: &PartialState,
    arena: &Arena,
    kernels: &RateKernels,
    t_cut: f64,
    proposal: Proposal,
    rng: &mut R,
) -> Option<((usize, usize), f64)> {
    let m = state.n_trees();
    match proposal {
        Proposal::AllPairs => {
            let i = rng.random_range(0..m);
            let mut j = rng.random_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            let pairs = (m * (m - 1) / 2) as f64;
            Some(((i.min(j), i.max(j)), -pairs.ln()))
        }
        Proposal::ValidPairs => {
            let valid = |i, j| eval_merge(state, arena, i, j, kernels, t_cut).2.is_finite();
            let count = (0..m)
                .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                .filter(|&(i, j)| valid(i, j))
                .count();
            if count == 0 {
                return None;
            }
            let pick = rng.random_range(0..count);
            let pair = (0..m)
                .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                .filter(|&(i, j)| valid(i, j))
                .nth(pick)
                .expect("pick is below the valid count");
            Some((pair, -(count as f64).ln()))
        }
    }
}

pub(crate) fn propose<R: Rng + ?Sized>(
    state: &PartialState,
    arena: &Arena,
    kernels: &RateKernels,
    t_cut: f64,
    proposal: Proposal,
    rng: &mut R,
    new_id: u32,
) -> Option<Proposed> {
    let ((i, j), log_q) = choose_pair(state, arena, kernels, t_cut, proposal, rng)?;
    let (node, term) = super::build_node(state, arena, i, j, kernels, t_cut);
    Some(Proposed {
        state: state.merged(i, j, new_id, term, arena),
        node,
        log_q,
        pair: (i, j),
    })
}

/// Extend `state` by one merge drawn from `proposal`, appending the new
/// tree to `arena`. Returns the new state and the log proposal probability.
///
/// Fails with [`Error::DeadEnd`] when the proposal has no valid pair.
pub fn csmc_propose<R: Rng + ?Sized>(
    state: &PartialState,
    arena: &mut Arena,
    params: &GinkgoParams,
    proposal: Proposal,
    rng: &mut R,
) -> Result<(PartialState, f64)> {
    let m = state.n_trees();
    if m < 2 {
        return Err(Error::Domain("cannot extend a complete tree".into()));
    }
    let kernels = RateKernels::new(&params.lambdas, params.t_cut);
    let new_id = arena.len() as u32;
    let p = propose(state, arena, &kernels, params.t_cut, proposal, rng, new_id)
        .ok_or(Error::DeadEnd { trees: m })?;
    arena.push(p.node);
    Ok((p.state, p.log_q))
}

/// Incremental importance weight of a CSMC step.
pub fn csmc_weight(prev: &PartialState, new: &PartialState, log_q: f64) -> f64 {
    let gain = new.log_pi() - prev.log_pi();
    if gain == f64::NEG_INFINITY || gain.is_nan() {
        return f64::NEG_INFINITY;
    }
    gain - overcounting_log_nu(new) - log_q
}

pub(crate) fn step<R: Rng + ?Sized>(
    prev: &PartialState,
    arena: &Arena,
    kernels: &RateKernels,
    t_cut: f64,
    proposal: Proposal,
    rng: &mut R,
    new_id: u32,
    track_grad: bool,
) -> StepOut {
    let Some(p) = propose(prev, arena, kernels, t_cut, proposal, rng, new_id) else {
        return StepOut::dead(prev, arena, kernels, t_cut, new_id);
    };
    let log_w = csmc_weight(prev, &p.state, p.log_q);
    let mut dlogw = [0.0; 2];
    if track_grad && log_w.is_finite() {
        let (a, b) = p.pair;
        let (kernel, idx) = kernels.for_forest(prev.n_trees());
        let (ta, tb) = (arena.get(prev.roots[a]).t, arena.get(prev.roots[b]).t);
        let (_, g) = kernel.log_split_with_grad(ta, tb, p.node.t);
        dlogw[idx] = g * kernel.lambda();
    }
    StepOut {
        state: p.state,
        node: p.node,
        log_w,
        dlogw,
    }
}
