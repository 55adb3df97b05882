//! Serializable record of a simulated jet, one per JSONL line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::FourVector;
use crate::likelihood::GinkgoParams;
use crate::sim::GeneratedJet;
use crate::topology::Topology;
use crate::variational::ObservedJet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetRecord {
    pub jet_id: String,
    pub lambda_gen: Vec<f64>,
    pub t_cut: f64,
    pub root: FourVector,
    pub leaves: Vec<FourVector>,
    /// Parent of every node of the generating tree, `-1` for the root.
    pub truth_parent: Vec<i64>,
    pub truth_loglik: f64,
    pub seed: u64,
}

impl JetRecord {
    pub fn from_generated(jet_id: impl Into<String>, jet: &GeneratedJet) -> Self {
        Self {
            jet_id: jet_id.into(),
            lambda_gen: jet.params.lambdas.clone(),
            t_cut: jet.params.t_cut,
            root: jet.params.root,
            leaves: jet.leaves.clone(),
            truth_parent: jet.truth.parent_table(),
            truth_loglik: jet.truth_loglik,
            seed: jet.seed,
        }
    }

    /// Parameters the jet was generated with.
    pub fn params(&self) -> Result<GinkgoParams> {
        GinkgoParams::new(self.lambda_gen.clone(), self.t_cut, self.root)
    }

    pub fn observed(&self) -> ObservedJet {
        ObservedJet {
            leaves: self.leaves.clone(),
            t_cut: self.t_cut,
            root: self.root,
        }
    }

    pub fn truth(&self) -> Result<Topology> {
        let size = self.truth_parent.len();
        let parent = self
            .truth_parent
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 && (p as usize) < size => Ok(Some(p as usize)),
                p => Err(Error::Structure(format!("parent id {p} out of range"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Topology::from_parents(&self.leaves, &parent)
    }
}
