//! Greedy agglomerative clustering and beam search over merge sequences.
//!
//! Both baselines score a partial clustering by the running sum of the
//! split terms of the merges performed so far, and only ever perform
//! merges that pass the physical validity check.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::{node_split_log_likelihood, validate_merge_mass, GinkgoParams};
use crate::topology::{tree_log_likelihood, Topology};

#[derive(Debug, Clone, Copy)]
struct SearchTree {
    vector: FourVector,
    t: f64,
    /// Topology node id of this tree's root.
    node: usize,
    /// Order-independent structural hash of the subtree.
    hash: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn combine(a: u64, b: u64) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    mix(mix(lo ^ 0x9E37_79B9_7F4A_7C15).wrapping_add(hi))
}

/// A forest with trees kept in order of their smallest leaf.
#[derive(Debug, Clone)]
struct SearchState {
    trees: Vec<SearchTree>,
    merges: Vec<(usize, usize)>,
    score: f64,
}

impl SearchState {
    fn initial(leaves: &[FourVector]) -> Self {
        let trees = leaves
            .iter()
            .enumerate()
            .map(|(i, v)| SearchTree {
                vector: *v,
                t: v.squared_mass(),
                node: i,
                hash: mix(i as u64 + 1),
            })
            .collect();
        Self {
            trees,
            merges: Vec::new(),
            score: 0.0,
        }
    }

    /// Split term of merging trees `i < j`, `None` if the merge is invalid.
    #[inline]
    fn merge_term(&self, i: usize, j: usize, params: &GinkgoParams) -> Option<f64> {
        let (a, b) = (&self.trees[i], &self.trees[j]);
        let t = (a.vector + b.vector).squared_mass();
        if !validate_merge_mass(a.t, b.t, t, params.t_cut).is_ok() {
            return None;
        }
        let lambda = params.lambda_for(self.trees.len() == 2);
        let term = node_split_log_likelihood(a.t, b.t, lambda, params.t_cut, t);
        term.is_finite().then_some(term)
    }

    fn merged(&self, i: usize, j: usize, term: f64, n_leaves: usize) -> Self {
        let (a, b) = (self.trees[i], self.trees[j]);
        let vector = a.vector + b.vector;
        let mut trees = self.trees.clone();
        trees[i] = SearchTree {
            vector,
            t: vector.squared_mass(),
            node: n_leaves + self.merges.len(),
            hash: combine(a.hash, b.hash),
        };
        trees.remove(j);
        let mut merges = self.merges.clone();
        merges.push((a.node, b.node));
        Self {
            trees,
            merges,
            score: self.score + term,
        }
    }

    /// Forest key after merging `i < j`, without building the state.
    fn key_after(&self, i: usize, j: usize) -> Vec<u64> {
        self.trees
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(k, tr)| {
                if k == i {
                    combine(tr.hash, self.trees[j].hash)
                } else {
                    tr.hash
                }
            })
            .collect()
    }

    fn finish(self, leaves: &[FourVector], params: &GinkgoParams) -> Result<(Topology, f64)> {
        let topo = Topology::from_merges(leaves, &self.merges)?;
        let ll = tree_log_likelihood(&topo, params);
        Ok((topo, ll))
    }
}

fn check_leaves(leaves: &[FourVector]) -> Result<()> {
    if leaves.is_empty() {
        return Err(Error::Domain("clustering needs at least one leaf".into()));
    }
    Ok(())
}

/// Repeatedly merge the valid pair with the highest split term; ties go
/// to the lexicographically smallest pair of tree positions.
pub fn greedy_cluster(leaves: &[FourVector], params: &GinkgoParams) -> Result<(Topology, f64)> {
    check_leaves(leaves)?;
    let n = leaves.len();
    let mut state = SearchState::initial(leaves);
    while state.trees.len() > 1 {
        let m = state.trees.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            for j in i + 1..m {
                if let Some(term) = state.merge_term(i, j, params) {
                    if best.is_none_or(|(b, _, _)| term > b) {
                        best = Some((term, i, j));
                    }
                }
            }
        }
        let (term, i, j) = best.ok_or(Error::DeadEnd { trees: m })?;
        state = state.merged(i, j, term, n);
    }
    state.finish(leaves, params)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    term: f64,
    beam: usize,
    i: usize,
    j: usize,
}

/// Beam search over merge sequences keeping the `beam_width` best distinct
/// forests per level.
pub fn beam_search(
    leaves: &[FourVector],
    params: &GinkgoParams,
    beam_width: usize,
) -> Result<(Topology, f64)> {
    check_leaves(leaves)?;
    if beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let n = leaves.len();
    let mut beam = vec![SearchState::initial(leaves)];
    for _level in 1..n {
        let m = beam[0].trees.len();
        let mut candidates = Vec::new();
        for (b, state) in beam.iter().enumerate() {
            for i in 0..m {
                for j in i + 1..m {
                    if let Some(term) = state.merge_term(i, j, params) {
                        candidates.push(Candidate {
                            score: state.score + term,
                            term,
                            beam: b,
                            i,
                            j,
                        });
                    }
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::DeadEnd { trees: m });
        }
        // Stable: equal scores keep generation order (beam, i, j).
        candidates.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then_with(|| y.term.total_cmp(&x.term))
        });
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(beam_width.min(candidates.len()));
        let mut next = Vec::with_capacity(beam_width.min(candidates.len()));
        for c in candidates {
            if next.len() == beam_width {
                break;
            }
            let parent = &beam[c.beam];
            if seen.insert(parent.key_after(c.i, c.j)) {
                next.push(parent.merged(c.i, c.j, c.term, n));
            }
        }
        beam = next;
    }
    beam.into_iter()
        .next()
        .expect("beam is never empty after a successful level")
        .finish(leaves, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::trellis_log_map;
    use crate::sim::{generate_jet, root_along_z};

    fn params() -> GinkgoParams {
        GinkgoParams::new(vec![1.5], 1.0, root_along_z(16.0, 100.0).unwrap()).unwrap()
    }

    #[test]
    fn two_leaves_forced() {
        let p = params();
        let jet = (0..100).map(|s| generate_jet(&p, s)).find(|j| j.n_leaves() == 2).unwrap();
        let (topo, ll) = greedy_cluster(&jet.leaves, &p).unwrap();
        assert_eq!(topo.parent_table(), vec![2, 2, -1]);
        assert_eq!(ll, jet.truth_loglik);
        let (_, bl) = beam_search(&jet.leaves, &p, 5).unwrap();
        assert_eq!(bl, ll);
    }

    #[test]
    fn single_leaf() {
        let p = params();
        let leaves = [FourVector::at_rest(0.5)];
        assert_eq!(greedy_cluster(&leaves, &p).unwrap().1, 0.0);
        assert_eq!(beam_search(&leaves, &p, 3).unwrap().1, 0.0);
    }

    #[test]
    fn greedy_takes_dominant_pair_first() {
        let p = params();
        for seed in 0..60 {
            let jet = generate_jet(&p, seed);
            if jet.n_leaves() != 3 {
                continue;
            }
            let state = SearchState::initial(&jet.leaves);
            let terms: Vec<_> = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(i, j)| state.merge_term(i, j, &p).unwrap_or(f64::NEG_INFINITY))
                .collect();
            let best = (0..3).max_by(|&a, &b| terms[a].total_cmp(&terms[b])).unwrap();
            let (topo, _) = greedy_cluster(&jet.leaves, &p).unwrap();
            let [a, b] = topo.children(3).unwrap();
            let expected = [(0, 1), (0, 2), (1, 2)][best];
            assert_eq!((a.min(b), a.max(b)), expected);
        }
    }

    #[test]
    fn beam_of_one_is_greedy_and_wide_beam_is_exact() {
        let p = params();
        let mut checked = 0;
        for seed in 0..40 {
            let jet = generate_jet(&p, seed);
            if !(3..=7).contains(&jet.n_leaves()) {
                continue;
            }
            let g = greedy_cluster(&jet.leaves, &p);
            let b1 = beam_search(&jet.leaves, &p, 1);
            match (g, b1) {
                (Ok(g), Ok(b)) => {
                    assert_eq!(g.0, b.0);
                    assert_eq!(g.1.to_bits(), b.1.to_bits());
                }
                (Err(e1), Err(e2)) => assert_eq!(e1, e2),
                (g, b) => panic!("greedy {g:?} vs beam {b:?}"),
            }
            let (_, wide) = beam_search(&jet.leaves, &p, 10_000).unwrap();
            let (_, exact) = trellis_log_map(&jet.leaves, &p).unwrap();
            assert!((wide - exact).abs() < 1e-9);
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn dead_end_reported() {
        let leaves = vec![FourVector::at_rest(0.1); 3];
        let p = params();
        assert!(matches!(greedy_cluster(&leaves, &p), Err(Error::DeadEnd { trees: 3 })));
        assert!(matches!(beam_search(&leaves, &p, 4), Err(Error::DeadEnd { trees: 3 })));
    }

    #[test]
    fn zero_width_rejected() {
        assert!(beam_search(&[FourVector::at_rest(1.0)], &params(), 0).is_err());
    }
}
