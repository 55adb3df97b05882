//! Toy parton shower: recursive binary splitting of the initial particle
//! until every branch falls below the cutoff mass.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{lorentz_boost, sample_unit_sphere, two_body_decay, FourVector};
use crate::likelihood::GinkgoParams;
use crate::rng::{derive_key, domain, stream};
use crate::topology::{tree_log_likelihood, Topology};

/// A simulated jet: the observed leaves plus the full generative history.
#[derive(Debug, Clone)]
pub struct GeneratedJet {
    pub truth: Topology,
    pub leaves: Vec<FourVector>,
    pub params: GinkgoParams,
    pub seed: u64,
    pub truth_loglik: f64,
}

impl GeneratedJet {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }
}

/// Inverse-CDF draw from the exponential truncated to `[0, t_parent]`.
#[inline]
fn sample_truncated_exp<R: Rng + ?Sized>(rng: &mut R, lambda: f64, t_parent: f64) -> f64 {
    let u: f64 = rng.random();
    let t = -(t_parent / lambda) * (u * (-lambda).exp_m1()).ln_1p();
    t.clamp(0.0, t_parent)
}

/// Draw the children's squared masses: the left child against `t_parent`,
/// then the right child against `(√t_P − √t_L)²`.
pub fn sample_child_masses<R: Rng + ?Sized>(t_parent: f64, lambda: f64, rng: &mut R) -> (f64, f64) {
    let t_l = sample_truncated_exp(rng, lambda, t_parent);
    let d = t_parent.sqrt() - t_l.sqrt();
    let t_r = sample_truncated_exp(rng, lambda, d * d);
    (t_l, t_r)
}

struct ShowerNode {
    vector: FourVector,
    children: Option<(usize, usize)>,
}

fn shower(
    params: &GinkgoParams,
    seed: u64,
    nodes: &mut Vec<ShowerNode>,
    vector: FourVector,
    t: f64,
    key: u64,
    is_root: bool,
) -> usize {
    let id = nodes.len();
    nodes.push(ShowerNode {
        vector,
        children: None,
    });
    if t > params.t_cut {
        let mut rng = stream(seed, &[domain::JET, key]);
        let lambda = params.lambda_for(is_root);
        let (t_l, t_r) = sample_child_masses(t, lambda, &mut rng);
        let direction = sample_unit_sphere(&mut rng);
        let (rest_l, rest_r) =
            two_body_decay(t, t_l, t_r, direction).expect("sampled children fit inside the parent");
        let lab_l = lorentz_boost(&rest_l, &vector).expect("splitting parent is timelike");
        let lab_r = lorentz_boost(&rest_r, &vector).expect("splitting parent is timelike");
        let left = shower(params, seed, nodes, lab_l, t_l, derive_key(key, &[0]), false);
        let right = shower(params, seed, nodes, lab_r, t_r, derive_key(key, &[1]), false);
        nodes[id].children = Some((left, right));
    }
    id
}

/// Run the shower from `params.root`. Deterministic in `(params, seed)`.
pub fn generate_jet(params: &GinkgoParams, seed: u64) -> GeneratedJet {
    let mut nodes = Vec::new();
    let root = params.root;
    shower(params, seed, &mut nodes, root, root.squared_mass(), 1, true);

    // Leaves numbered left to right, internal nodes in post-order after them.
    let n_leaves = nodes.iter().filter(|n| n.children.is_none()).count();
    let mut new_id = vec![usize::MAX; nodes.len()];
    let mut leaves = Vec::with_capacity(n_leaves);
    let mut next_internal = n_leaves;
    let mut stack = vec![(0usize, false)];
    while let Some((id, expanded)) = stack.pop() {
        match nodes[id].children {
            None => {
                new_id[id] = leaves.len();
                leaves.push(nodes[id].vector);
            }
            Some((l, r)) if !expanded => {
                stack.push((id, true));
                stack.push((r, false));
                stack.push((l, false));
            }
            Some(_) => {
                new_id[id] = next_internal;
                next_internal += 1;
            }
        }
    }
    let mut parent = vec![None; nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        if let Some((l, r)) = node.children {
            parent[new_id[l]] = Some(new_id[id]);
            parent[new_id[r]] = Some(new_id[id]);
        }
    }
    let truth = Topology::from_parents(&leaves, &parent).expect("shower produces a binary tree");
    let truth_loglik = tree_log_likelihood(&truth, params);
    GeneratedJet {
        truth,
        leaves,
        params: params.clone(),
        seed,
        truth_loglik,
    }
}

/// Root four-vector `(√s, 0, 0, √(s − t_root))` of squared mass `t_root`
/// and energy `energy`.
pub fn root_along_z(t_root: f64, energy: f64) -> Result<FourVector> {
    let s = energy * energy;
    if !(t_root > 0.0) || t_root > s {
        return Err(Error::Config(format!(
            "root needs 0 < t_root <= E², got t_root = {t_root}, E = {energy}"
        )));
    }
    Ok(FourVector::new(energy, 0.0, 0.0, (s - t_root).sqrt()))
}

/// Settings for a batch of simulated jets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub lambdas: Vec<f64>,
    pub t_cut: f64,
    pub t_root: f64,
    pub energy: f64,
    pub n_jets: usize,
    pub seed: u64,
    /// Keep only jets with at least this many leaves.
    #[serde(default = "default_min_leaves")]
    pub min_leaves: usize,
    /// Keep only jets with at most this many leaves.
    #[serde(default = "default_max_leaves")]
    pub max_leaves: usize,
    /// Rejection attempts allowed per jet before giving up.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_min_leaves() -> usize {
    1
}
fn default_max_leaves() -> usize {
    usize::MAX
}
fn default_max_attempts() -> usize {
    10_000
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1.5],
            t_cut: 1.0,
            t_root: 100.0,
            energy: 400.0,
            n_jets: 100,
            seed: 0,
            min_leaves: default_min_leaves(),
            max_leaves: default_max_leaves(),
            max_attempts: default_max_attempts(),
        }
    }
}

impl DatasetConfig {
    pub fn params(&self) -> Result<GinkgoParams> {
        GinkgoParams::new(self.lambdas.clone(), self.t_cut, root_along_z(self.t_root, self.energy)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.min_leaves > self.max_leaves {
            return Err(Error::Config(format!(
                "min_leaves {} exceeds max_leaves {}",
                self.min_leaves, self.max_leaves
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Simulate `config.n_jets` jets whose leaf counts fall inside the
/// configured range. Jet `i` is re-drawn with derived seeds until it fits.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<GeneratedJet>> {
    config.validate()?;
    let params = config.params()?;
    (0..config.n_jets)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..config.max_attempts {
                let seed = derive_key(config.seed, &[domain::DATASET, i as u64, attempt as u64]);
                let jet = generate_jet(&params, seed);
                if (config.min_leaves..=config.max_leaves).contains(&jet.n_leaves()) {
                    return Ok(jet);
                }
            }
            Err(Error::Config(format!(
                "no jet with {}..={} leaves after {} attempts",
                config.min_leaves, config.max_leaves, config.max_attempts
            )))
        })
        .collect()
}
