//! Exact computations for small jets: topology enumeration, brute-force
//! marginal likelihood, and the subset trellis for the marginal and the MAP.
//!
//! All of these treat every topology as equally likely a priori, so the
//! marginal is the plain sum of tree likelihoods.

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::{node_split_log_likelihood, GinkgoParams};
use crate::math::LogSumExp;
use crate::topology::{tree_log_likelihood, Topology};

pub const MAX_COUNT_LEAVES: usize = 20;
pub const MAX_ENUMERATE_LEAVES: usize = 12;
pub const MAX_BRUTE_FORCE_LEAVES: usize = 10;
pub const MAX_TRELLIS_LEAVES: usize = 25;

/// Number of rooted binary topologies over `n` labelled leaves, `(2n−3)!!`.
pub fn count_topologies(n: usize) -> Result<u128> {
    if n == 0 {
        return Err(Error::Domain("at least one leaf is required".into()));
    }
    if n > MAX_COUNT_LEAVES {
        return Err(Error::Overflow(format!(
            "(2n-3)!! is only reported for n <= {MAX_COUNT_LEAVES}, got n = {n}"
        )));
    }
    Ok((1..n).map(|k| (2 * k - 1) as u128).product())
}

fn guard(method: &'static str, limit: usize, n: usize) -> Result<()> {
    if n > limit {
        return Err(Error::SizeGuard { method, limit, n });
    }
    if n == 0 {
        return Err(Error::Domain(format!("{method} needs at least one leaf")));
    }
    Ok(())
}

/// Every rooted binary topology over `leaves`, each exactly once.
///
/// Leaf `k` is inserted above one of the `2k − 1` nodes of the tree built
/// from leaves `0..k`; the insertion choices form a mixed-radix counter.
pub struct TopologyIter<'a> {
    leaves: &'a [FourVector],
    choices: Vec<usize>,
    done: bool,
}

impl TopologyIter<'_> {
    fn decode(&self) -> Topology {
        let n = self.leaves.len();
        let mut parent: Vec<Option<usize>> = vec![None; 2 * n - 1];
        for k in 1..n {
            let c = self.choices[k];
            let x = if c < k { c } else { n + (c - k) };
            let u = n + k - 1;
            parent[u] = parent[x];
            parent[x] = Some(u);
            parent[k] = Some(u);
        }
        Topology::from_parents(self.leaves, &parent).expect("insertion yields a binary tree")
    }
}

impl Iterator for TopologyIter<'_> {
    type Item = Topology;

    fn next(&mut self) -> Option<Topology> {
        if self.done {
            return None;
        }
        let out = self.decode();
        let n = self.leaves.len();
        let mut k = 1;
        loop {
            if k >= n {
                self.done = true;
                break;
            }
            self.choices[k] += 1;
            if self.choices[k] < 2 * k - 1 {
                break;
            }
            self.choices[k] = 0;
            k += 1;
        }
        Some(out)
    }
}

/// Lazily enumerate all topologies over at most 12 leaves.
pub fn enumerate_topologies(leaves: &[FourVector]) -> Result<TopologyIter<'_>> {
    guard("enumerate_topologies", MAX_ENUMERATE_LEAVES, leaves.len())?;
    Ok(TopologyIter {
        leaves,
        choices: vec![0; leaves.len()],
        done: false,
    })
}

/// `log Σ_τ P(X | τ, λ)` by explicit enumeration (at most 10 leaves).
pub fn brute_force_log_marginal(leaves: &[FourVector], params: &GinkgoParams) -> Result<f64> {
    guard("brute_force_log_marginal", MAX_BRUTE_FORCE_LEAVES, leaves.len())?;
    let mut acc = LogSumExp::new();
    for topo in enumerate_topologies(leaves)? {
        acc.add(tree_log_likelihood(&topo, params));
    }
    Ok(acc.value())
}

/// Highest-likelihood topology by explicit enumeration; ties keep the first.
pub fn brute_force_map(leaves: &[FourVector], params: &GinkgoParams) -> Result<(Topology, f64)> {
    guard("brute_force_map", MAX_BRUTE_FORCE_LEAVES, leaves.len())?;
    let mut best: Option<(Topology, f64)> = None;
    for topo in enumerate_topologies(leaves)? {
        let ll = tree_log_likelihood(&topo, params);
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((topo, ll));
        }
    }
    Ok(best.expect("at least one topology"))
}

/// A subset of leaves keyed by bitmask, with its summed four-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSet {
    pub mask: u32,
    pub vector: FourVector,
    pub t: f64,
}

impl LeafSet {
    pub fn new(mask: u32, leaves: &[FourVector]) -> Self {
        let vector = (0..leaves.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| leaves[i])
            .sum::<FourVector>();
        Self {
            mask,
            vector,
            t: vector.squared_mass(),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }
}

/// Squared mass of every subset, indexed by mask.
fn subset_masses(leaves: &[FourVector]) -> Vec<f64> {
    let n = leaves.len();
    let mut vectors = vec![FourVector::ZERO; 1 << n];
    let mut t = vec![0.0; 1 << n];
    for mask in 1usize..(1 << n) {
        let low = mask.trailing_zeros() as usize;
        vectors[mask] = vectors[mask & (mask - 1)] + leaves[low];
        t[mask] = vectors[mask].squared_mass();
    }
    t
}

/// Calls `f(left, right)` for each unordered split of `set` into two
/// non-empty parts, with the lowest member always in `left`.
#[inline]
fn for_each_split(set: usize, mut f: impl FnMut(usize, usize)) {
    let low = set & set.wrapping_neg();
    let rest = set ^ low;
    let mut sub = rest;
    loop {
        // `sub` runs over the submasks of `rest`; left = low | sub.
        if sub != rest {
            let left = low | sub;
            f(left, set ^ left);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
}

/// Exact `log Σ_τ P(X | τ, λ)` by dynamic programming over leaf subsets.
///
/// `O(3^N)` time, `O(2^N)` memory; at most 25 leaves.
pub fn trellis_log_marginal(leaves: &[FourVector], params: &GinkgoParams) -> Result<f64> {
    let n = leaves.len();
    guard("trellis_log_marginal", MAX_TRELLIS_LEAVES, n)?;
    let full = (1usize << n) - 1;
    let t = subset_masses(leaves);
    let mut z = vec![f64::NEG_INFINITY; 1 << n];
    for set in 1..=full {
        if set.count_ones() == 1 {
            z[set] = 0.0;
            continue;
        }
        let t_set = t[set];
        if !(t_set > params.t_cut) {
            continue;
        }
        let lambda = params.lambda_for(set == full);
        let mut acc = LogSumExp::new();
        for_each_split(set, |l, r| {
            let zl = z[l];
            let zr = z[r];
            if zl == f64::NEG_INFINITY || zr == f64::NEG_INFINITY {
                return;
            }
            acc.add(node_split_log_likelihood(t[l], t[r], lambda, params.t_cut, t_set) + zl + zr);
        });
        z[set] = acc.value();
    }
    Ok(z[full])
}

/// Exact maximum-likelihood topology by the same recursion with `max`.
pub fn trellis_log_map(leaves: &[FourVector], params: &GinkgoParams) -> Result<(Topology, f64)> {
    let n = leaves.len();
    guard("trellis_log_map", MAX_TRELLIS_LEAVES, n)?;
    let full = (1usize << n) - 1;
    let t = subset_masses(leaves);
    let mut best = vec![f64::NEG_INFINITY; 1 << n];
    let mut arg = vec![0u32; 1 << n];
    for set in 1..=full {
        if set.count_ones() == 1 {
            best[set] = 0.0;
            continue;
        }
        let t_set = t[set];
        if !(t_set > params.t_cut) {
            continue;
        }
        let lambda = params.lambda_for(set == full);
        let mut top = f64::NEG_INFINITY;
        let mut top_left = 0usize;
        for_each_split(set, |l, r| {
            let bl = best[l];
            let br = best[r];
            if bl == f64::NEG_INFINITY || br == f64::NEG_INFINITY {
                return;
            }
            let v = node_split_log_likelihood(t[l], t[r], lambda, params.t_cut, t_set) + bl + br;
            if v > top {
                top = v;
                top_left = l;
            }
        });
        best[set] = top;
        arg[set] = top_left as u32;
    }
    if n > 1 && best[full] == f64::NEG_INFINITY {
        // Any topology has zero likelihood; report the first one.
        let merges: Vec<(usize, usize)> = (1..n).map(|k| (if k == 1 { 0 } else { n + k - 2 }, k)).collect();
        return Ok((Topology::from_merges(leaves, &merges)?, f64::NEG_INFINITY));
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    fn build(set: usize, n: usize, arg: &[u32], merges: &mut Vec<(usize, usize)>) -> usize {
        if set.count_ones() == 1 {
            return set.trailing_zeros() as usize;
        }
        let l = arg[set] as usize;
        let a = build(l, n, arg, merges);
        let b = build(set ^ l, n, arg, merges);
        merges.push((a, b));
        n + merges.len() - 1
    }
    build(full, n, &arg, &mut merges);
    Ok((Topology::from_merges(leaves, &merges)?, best[full]))
}
