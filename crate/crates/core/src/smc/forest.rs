//! Partial states: forests of immutable trees stored in a shared arena.
//!
//! A tree, once built, never changes, so particles that share history
//! share nodes. A particle only owns the list of its current roots.

use crate::error::Result;
use crate::kinematics::FourVector;
use crate::topology::Topology;

/// One tree of a forest, identified by the id of its root in the [`Arena`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub vector: FourVector,
    /// Squared mass of `vector`.
    pub t: f64,
    /// Log-likelihood of the subtree rooted here (0 for a leaf).
    pub log_lik: f64,
    pub n_leaves: u32,
    pub children: Option<(u32, u32)>,
}

impl TreeNode {
    pub fn leaf(vector: FourVector) -> Self {
        Self {
            vector,
            t: vector.squared_mass(),
            log_lik: 0.0,
            n_leaves: 1,
            children: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Append-only store of tree nodes; ids `0..N` are the leaves.
#[derive(Debug, Clone)]
pub struct Arena {
    nodes: Vec<TreeNode>,
    leaves: Vec<FourVector>,
}

impl Arena {
    pub fn new(leaves: &[FourVector]) -> Self {
        Self {
            nodes: leaves.iter().map(|v| TreeNode::leaf(*v)).collect(),
            leaves: leaves.to_vec(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn get(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn push(&mut self, node: TreeNode) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    pub(crate) fn extend(&mut self, nodes: impl IntoIterator<Item = TreeNode>) {
        self.nodes.extend(nodes);
    }

    /// Sorted leaf indices under `id`.
    pub fn leaf_set(&self, id: u32) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            match self.get(x).children {
                None => out.push(x as usize),
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Full topology of a complete tree rooted at `root`.
    pub fn topology(&self, root: u32) -> Result<Topology> {
        let n = self.n_leaves();
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        let mut ids = std::collections::HashMap::new();
        let mut stack = vec![(root, false)];
        while let Some((x, expanded)) = stack.pop() {
            match self.get(x).children {
                None => {
                    ids.insert(x, x as usize);
                }
                Some((a, b)) if !expanded => {
                    stack.push((x, true));
                    stack.push((b, false));
                    stack.push((a, false));
                }
                Some((a, b)) => {
                    ids.insert(x, n + merges.len());
                    merges.push((ids[&a], ids[&b]));
                }
            }
        }
        Topology::from_merges(&self.leaves, &merges)
    }
}

/// A particle's forest. Cheap to clone: only root ids are copied.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialState {
    pub(crate) roots: Vec<u32>,
    pub(crate) log_pi: f64,
    pub(crate) n_nonsingleton: u32,
    /// Which rate vector this particle's history was scored under.
    pub(crate) lambda_id: u32,
}

impl PartialState {
    /// The all-singleton forest.
    pub fn initial(n_leaves: usize) -> Self {
        Self {
            roots: (0..n_leaves as u32).collect(),
            log_pi: 0.0,
            n_nonsingleton: 0,
            lambda_id: 0,
        }
    }

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    pub fn n_trees(&self) -> usize {
        self.roots.len()
    }

    /// Number of merges performed so far.
    pub fn rank(&self, n_leaves: usize) -> usize {
        n_leaves - self.roots.len()
    }

    /// Cached forest log-likelihood: the sum over member trees.
    pub fn log_pi(&self) -> f64 {
        self.log_pi
    }

    /// Trees with at least two leaves.
    pub fn n_nonsingleton(&self) -> usize {
        self.n_nonsingleton as usize
    }

    pub fn lambda_id(&self) -> usize {
        self.lambda_id as usize
    }

    pub fn is_complete(&self) -> bool {
        self.roots.len() == 1
    }

    pub fn trees<'a>(&'a self, arena: &'a Arena) -> impl Iterator<Item = &'a TreeNode> + 'a {
        self.roots.iter().map(move |&id| arena.get(id))
    }

    /// Forest after replacing trees at positions `i` and `j` by `new_id`.
    pub(crate) fn merged(&self, i: usize, j: usize, new_id: u32, term: f64, arena: &Arena) -> Self {
        let (a, b) = (self.roots[i], self.roots[j]);
        let lost = u32::from(!arena.get(a).is_leaf()) + u32::from(!arena.get(b).is_leaf());
        let mut roots = self.roots.clone();
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        roots[lo] = new_id;
        roots.swap_remove(hi);
        Self {
            roots,
            log_pi: self.log_pi + term,
            n_nonsingleton: self.n_nonsingleton - lost + 1,
            lambda_id: self.lambda_id,
        }
    }
}

/// Unordered pair index `p` of `0..C(m,2)` in lexicographic order.
#[inline]
pub(crate) fn pair_from_index(mut p: usize, m: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= m - 1 - i {
        p -= m - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}
