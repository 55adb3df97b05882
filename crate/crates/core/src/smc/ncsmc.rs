//! Nested CSMC: every particle looks ahead at all one-step extensions of
//! its forest and samples one in proportion to its potential.

use rand::Rng;

use super::forest::{pair_from_index, Arena, PartialState, TreeNode};
use super::{build_node, eval_merge, RateKernels};
use crate::likelihood::GinkgoParams;
use crate::math::LogSumExp;

/// One candidate extension of a forest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    /// Positions of the merged trees in the forest, `left < right`.
    pub left: usize,
    pub right: usize,
    pub log_potential: f64,
}

#[inline]
fn nonsingleton_after(state: &PartialState, arena: &Arena, i: usize, j: usize) -> u32 {
    let lost = u32::from(!arena.get(state.roots[i]).is_leaf())
        + u32::from(!arena.get(state.roots[j]).is_leaf());
    state.n_nonsingleton - lost + 1
}

/// Fill `out` with the log potentials of all pairs in lexicographic order.
fn fill_potentials(
    state: &PartialState,
    arena: &Arena,
    kernels: &RateKernels,
    t_cut: f64,
    out: &mut Vec<f64>,
) -> f64 {
    let m = state.n_trees();
    out.clear();
    out.reserve(m * (m - 1) / 2);
    let mut lse = LogSumExp::new();
    for i in 0..m {
        for j in i + 1..m {
            let (_, _, term) = eval_merge(state, arena, i, j, kernels, t_cut);
            let g = if term == f64::NEG_INFINITY {
                term
            } else {
                term - f64::from(nonsingleton_after(state, arena, i, j)).ln()
            };
            lse.add(g);
            out.push(g);
        }
    }
    lse.value()
}

/// Log potentials of every one-step extension of `state`: the CSMC weight
/// of that merge with `q = 1`. Invalid merges get `−∞`.
pub fn ncsmc_potentials(state: &PartialState, arena: &Arena, params: &GinkgoParams) -> Vec<Potential> {
    let m = state.n_trees();
    if m < 2 {
        return Vec::new();
    }
    let kernels = RateKernels::new(&params.lambdas, params.t_cut);
    let mut buf = Vec::new();
    fill_potentials(state, arena, &kernels, params.t_cut, &mut buf);
    buf.iter()
        .enumerate()
        .map(|(p, &g)| {
            let (left, right) = pair_from_index(p, m);
            Potential {
                left,
                right,
                log_potential: g,
            }
        })
        .collect()
}

/// Potentials of one particle's forest and the resulting weight.
pub(crate) struct Weighed {
    pub log_potentials: Vec<f64>,
    /// `log Σ exp(potential)`.
    pub log_w: f64,
    /// `∂ log w / ∂ log λ_d` for the particle's rate vector.
    pub dlogw: [f64; 2],
}

pub(crate) fn weigh(prev: &PartialState, arena: &Arena, kernels: &RateKernels, t_cut: f64, track_grad: bool) -> Weighed {
    let m = prev.n_trees();
    let mut buf = Vec::new();
    let log_w = fill_potentials(prev, arena, kernels, t_cut, &mut buf);
    let mut dlogw = [0.0; 2];
    if track_grad && log_w.is_finite() {
        let (kernel, idx) = kernels.for_forest(m);
        let mut d = 0.0;
        let mut p = 0;
        for a in 0..m {
            for b in a + 1..m {
                let g = buf[p];
                p += 1;
                if g == f64::NEG_INFINITY {
                    continue;
                }
                let (x, y) = (arena.get(prev.roots[a]), arena.get(prev.roots[b]));
                let t = (x.vector + y.vector).squared_mass();
                let (_, gl) = kernel.log_split_with_grad(x.t, y.t, t);
                d += (g - log_w).exp() * gl;
            }
        }
        dlogw[idx] = d * kernel.lambda();
    }
    Weighed {
        log_potentials: buf,
        log_w,
        dlogw,
    }
}

/// Extend `prev` by one merge drawn in proportion to its potentials.
/// `weighed` must come from [`weigh`] on the same forest and have a finite
/// weight.
pub(crate) fn select<R: Rng + ?Sized>(
    prev: &PartialState,
    arena: &Arena,
    kernels: &RateKernels,
    t_cut: f64,
    weighed: &Weighed,
    rng: &mut R,
    new_id: u32,
) -> (PartialState, TreeNode) {
    let m = prev.n_trees();
    let log_w = weighed.log_w;
    let u: f64 = rng.random();
    let target = u * weighed.log_potentials.iter().map(|g| (g - log_w).exp()).sum::<f64>();
    let mut acc = 0.0;
    let mut pick = None;
    for (p, &g) in weighed.log_potentials.iter().enumerate() {
        if g == f64::NEG_INFINITY {
            continue;
        }
        acc += (g - log_w).exp();
        pick = Some(p);
        if acc > target {
            break;
        }
    }
    let (i, j) = pair_from_index(pick.expect("at least one finite potential"), m);
    let (node, term) = build_node(prev, arena, i, j, kernels, t_cut);
    (prev.merged(i, j, new_id, term, arena), node)
}
