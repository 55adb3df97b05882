//! Declarative run configuration loaded from TOML. Command-line flags
//! override individual fields after loading.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use jetsmc::sim::DatasetConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub infer: InferSection,
    pub fit: FitSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub lambdas: Vec<f64>,
    pub t_cut: f64,
    pub t_root: f64,
    pub energy: f64,
    pub n_jets: usize,
    pub min_leaves: usize,
    pub max_leaves: usize,
    pub max_attempts: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            lambdas: d.lambdas,
            t_cut: d.t_cut,
            t_root: d.t_root,
            energy: d.energy,
            n_jets: d.n_jets,
            min_leaves: d.min_leaves,
            max_leaves: d.max_leaves,
            max_attempts: d.max_attempts,
        }
    }
}

impl DatasetSection {
    pub fn to_config(&self, seed: u64) -> DatasetConfig {
        DatasetConfig {
            lambdas: self.lambdas.clone(),
            t_cut: self.t_cut,
            t_root: self.t_root,
            energy: self.energy,
            n_jets: self.n_jets,
            seed,
            min_leaves: self.min_leaves,
            max_leaves: self.max_leaves,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Greedy,
    Beam,
    Csmc,
    Ncsmc,
    TrellisMap,
    TrellisMarginal,
    Brute,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Beam => "beam",
            Method::Csmc => "csmc",
            Method::Ncsmc => "ncsmc",
            Method::TrellisMap => "trellis-map",
            Method::TrellisMarginal => "trellis-marginal",
            Method::Brute => "brute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalName {
    AllPairs,
    Valid,
}

impl From<ProposalName> for jetsmc::Proposal {
    fn from(p: ProposalName) -> Self {
        match p {
            ProposalName::AllPairs => jetsmc::Proposal::AllPairs,
            ProposalName::Valid => jetsmc::Proposal::ValidPairs,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub method: Method,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub beam: usize,
    pub proposal: ProposalName,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            method: Method::Ncsmc,
            k: 256,
            m: 1,
            beam: 10,
            proposal: ProposalName::AllPairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    Point,
    PseudoMarginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SmcName {
    Csmc,
    Ncsmc,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub mode: FitMode,
    pub algorithm: SmcName,
    #[serde(rename = "K")]
    pub k: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub common_random_numbers: bool,
    pub average_tail: f64,
    /// Starting rates in point mode.
    pub lambda_init: Vec<f64>,
    /// Starting proposal in pseudo-marginal mode.
    pub mu_init: Vec<f64>,
    pub log_sigma_init: Vec<f64>,
    pub mu0: f64,
    pub sigma0: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            mode: FitMode::Point,
            algorithm: SmcName::Ncsmc,
            k: 16,
            steps: 100,
            learning_rate: 0.05,
            clip: 10.0,
            common_random_numbers: false,
            average_tail: 0.0,
            lambda_init: vec![1.0],
            mu_init: vec![0.0],
            log_sigma_init: vec![-1.0],
            mu0: 0.0,
            sigma0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub ns: Vec<usize>,
    pub seeds: usize,
    pub methods: Vec<Method>,
    #[serde(rename = "K")]
    pub k: usize,
    pub beam: usize,
    pub trellis_max_n: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            ns: vec![4, 8, 16, 32, 64],
            seeds: 3,
            methods: vec![Method::Greedy, Method::Beam, Method::Csmc, Method::Ncsmc, Method::TrellisMarginal],
            k: 64,
            beam: 64,
            trellis_max_n: 14,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.infer.m != 1 {
            bail!(ConfigError(format!("M must be 1, got {}", self.infer.m)));
        }
        if self.infer.k == 0 || self.fit.k == 0 || self.bench.k == 0 {
            bail!(ConfigError("K must be positive".into()));
        }
        if self.infer.beam == 0 || self.bench.beam == 0 {
            bail!(ConfigError("beam width must be positive".into()));
        }
        if self.bench.seeds == 0 {
            bail!(ConfigError("bench needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Invalid configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}
