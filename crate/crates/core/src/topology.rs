//! Rooted binary trees over observed leaves and their likelihood.

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::{node_split_log_likelihood, node_split_with_grad, GinkgoParams};

/// Rooted binary tree over `N` leaves stored as a parent-pointer table.
///
/// Leaves occupy ids `0..N`, internal nodes `N..2N−1`. Internal node
/// vectors are always the componentwise sum of their children.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_leaves: usize,
    parent: Vec<Option<usize>>,
    children: Vec<[usize; 2]>,
    node_vectors: Vec<FourVector>,
    root: usize,
}

impl Topology {
    /// Build from a parent table, recomputing internal vectors from the leaves.
    pub fn from_parents(leaves: &[FourVector], parent: &[Option<usize>]) -> Result<Self> {
        let n = leaves.len();
        if n == 0 {
            return Err(Error::Structure("a tree needs at least one leaf".into()));
        }
        let size = 2 * n - 1;
        if parent.len() != size {
            return Err(Error::Structure(format!(
                "parent table for {n} leaves must have {size} entries, got {}",
                parent.len()
            )));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); size];
        let mut root = None;
        for (id, p) in parent.iter().enumerate() {
            match *p {
                None => {
                    if root.replace(id).is_some() {
                        return Err(Error::Structure("more than one root".into()));
                    }
                }
                Some(p) if p >= size => {
                    return Err(Error::Structure(format!("node {id} has out-of-range parent {p}")))
                }
                Some(p) if p < n => {
                    return Err(Error::Structure(format!("leaf {p} cannot be a parent")))
                }
                Some(p) => children[p].push(id),
            }
        }
        let root = root.ok_or_else(|| Error::Structure("no root".into()))?;
        if n > 1 && root < n {
            return Err(Error::Structure("a leaf is the root of a multi-leaf tree".into()));
        }
        for id in n..size {
            if children[id].len() != 2 {
                return Err(Error::Structure(format!(
                    "internal node {id} has {} children",
                    children[id].len()
                )));
            }
        }
        let kids: Vec<[usize; 2]> = (n..size).map(|id| [children[id][0], children[id][1]]).collect();

        // Post-order from the root; also proves the table is connected and acyclic.
        let mut vectors = vec![FourVector::ZERO; size];
        vectors[..n].copy_from_slice(leaves);
        let mut visited = 0usize;
        let mut stack = vec![(root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if id < n {
                visited += 1;
                continue;
            }
            let [a, b] = kids[id - n];
            if expanded {
                vectors[id] = vectors[a] + vectors[b];
                visited += 1;
            } else {
                if visited > size || stack.len() > size {
                    return Err(Error::Structure("parent table contains a cycle".into()));
                }
                stack.push((id, true));
                stack.push((a, false));
                stack.push((b, false));
            }
        }
        if visited != size {
            return Err(Error::Structure("parent table is not a single connected tree".into()));
        }
        Ok(Self {
            n_leaves: n,
            parent: parent.to_vec(),
            children: kids,
            node_vectors: vectors,
            root,
        })
    }

    /// Build from a merge sequence: merge `k` joins two current roots and
    /// creates node `N + k`.
    pub fn from_merges(leaves: &[FourVector], merges: &[(usize, usize)]) -> Result<Self> {
        let n = leaves.len();
        if n == 0 {
            return Err(Error::Structure("a tree needs at least one leaf".into()));
        }
        if merges.len() != n - 1 {
            return Err(Error::Structure(format!(
                "{n} leaves need {} merges, got {}",
                n - 1,
                merges.len()
            )));
        }
        let size = 2 * n - 1;
        let mut parent = vec![None; size];
        for (k, &(a, b)) in merges.iter().enumerate() {
            let id = n + k;
            for c in [a, b] {
                if c >= id || parent[c].is_some() || a == b {
                    return Err(Error::Structure(format!(
                        "merge {k} uses unavailable node {c}"
                    )));
                }
                parent[c] = Some(id);
            }
        }
        Self::from_parents(leaves, &parent)
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_nodes(&self) -> usize {
        self.node_vectors.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Parent table with `−1` marking the root.
    pub fn parent_table(&self) -> Vec<i64> {
        self.parent
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect()
    }

    pub fn children(&self, id: usize) -> Option<[usize; 2]> {
        (id >= self.n_leaves).then(|| self.children[id - self.n_leaves])
    }

    pub fn vector(&self, id: usize) -> &FourVector {
        &self.node_vectors[id]
    }

    pub fn node_vectors(&self) -> &[FourVector] {
        &self.node_vectors
    }

    pub fn leaves(&self) -> &[FourVector] {
        &self.node_vectors[..self.n_leaves]
    }

    pub fn internal_nodes(&self) -> std::ops::Range<usize> {
        self.n_leaves..self.node_vectors.len()
    }

    /// Leaf sets of every internal node, sorted. Equal for two topologies
    /// iff they describe the same unordered hierarchy.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let n = self.n_leaves;
        let mut sets: Vec<Vec<usize>> = (0..self.n_nodes())
            .map(|id| if id < n { vec![id] } else { Vec::new() })
            .collect();
        for id in self.post_order() {
            if let Some([a, b]) = self.children(id) {
                let mut s = sets[a].clone();
                s.extend_from_slice(&sets[b]);
                s.sort_unstable();
                sets[id] = s;
            }
        }
        let mut out: Vec<Vec<usize>> = sets.into_iter().skip(n).collect();
        out.sort();
        out
    }

    /// Node ids with every child before its parent.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.n_nodes());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            match self.children(id) {
                Some([a, b]) if !expanded => {
                    stack.push((id, true));
                    stack.push((a, false));
                    stack.push((b, false));
                }
                _ => order.push(id),
            }
        }
        order
    }
}

/// Per-λ-component derivative of a log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl std::ops::Deref for GradVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Log-likelihood of the split at internal node `id`.
pub fn node_log_likelihood(topology: &Topology, id: usize, params: &GinkgoParams) -> f64 {
    let [a, b] = topology
        .children(id)
        .expect("node_log_likelihood called on a leaf");
    let lambda = params.lambda_for(id == topology.root());
    node_split_log_likelihood(
        topology.vector(a).squared_mass(),
        topology.vector(b).squared_mass(),
        lambda,
        params.t_cut,
        topology.vector(id).squared_mass(),
    )
}

/// Log-likelihood of a full splitting history: the sum of the split terms
/// of every internal node. A single leaf scores 0.
pub fn tree_log_likelihood(topology: &Topology, params: &GinkgoParams) -> f64 {
    topology
        .internal_nodes()
        .map(|id| node_log_likelihood(topology, id, params))
        .sum()
}

/// Analytic gradient of [`tree_log_likelihood`] with respect to the rates.
pub fn grad_lambda_tree_log_likelihood(
    topology: &Topology,
    params: &GinkgoParams,
) -> Result<GradVector> {
    let mut grad = GradVector::zeros(params.lambdas.len());
    for id in topology.internal_nodes() {
        let [a, b] = topology.children(id).unwrap();
        let is_root = id == topology.root();
        let (value, g) = node_split_with_grad(
            topology.vector(a).squared_mass(),
            topology.vector(b).squared_mass(),
            params.lambda_for(is_root),
            params.t_cut,
            topology.vector(id).squared_mass(),
        );
        if value == f64::NEG_INFINITY {
            return Err(Error::Domain(format!(
                "likelihood is zero at node {id}; gradient undefined"
            )));
        }
        grad.0[params.lambda_index(is_root)] += g;
    }
    Ok(grad)
}
