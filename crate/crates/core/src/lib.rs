//! Ginkgo toy parton shower, exact and heuristic clustering, and
//! combinatorial sequential Monte Carlo for jet splitting histories.

pub mod error;
pub mod exact;
pub mod io;
pub mod kinematics;
pub mod likelihood;
pub mod math;
pub mod rng;
pub mod search;
pub mod smc;
pub mod sim;
pub mod topology;
pub mod variational;

pub use error::{Error, Result};
pub use kinematics::FourVector;
pub use likelihood::GinkgoParams;
pub use topology::Topology;
pub use smc::{run_csmc, run_ncsmc, run_smc, Algorithm, Proposal, SmcConfig, SmcRun};
pub use variational::{ObservedJet, VariationalParams};
