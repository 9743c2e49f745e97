//! TOML experiment/table configuration, config hashing, run manifests.

use crate::error::{Error, Result};
use crate::geometry::{BilliardTable, Disk, DEFAULT_MAX_CELL_TRAVERSAL};
use crate::observables::{Cell, NormalizationSeq, ObservableSpec};
use crate::rw_oracle::StepDistribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiskConfig {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub dim: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cell_traversal: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_search_height: Option<i64>,
    pub disks: Vec<DiskConfig>,
}

impl TableConfig {
    pub fn build(&self) -> Result<BilliardTable> {
        BilliardTable::new(
            self.dim,
            self.disks
                .iter()
                .map(|d| Disk { center: [d.cx, d.cy], radius: d.r })
                .collect(),
            self.max_cell_traversal.unwrap_or(DEFAULT_MAX_CELL_TRAVERSAL),
            self.horizon_search_height.unwrap_or(5),
        )
    }

    pub fn canonical(dim: u8) -> Self {
        Self {
            dim,
            max_cell_traversal: None,
            horizon_search_height: None,
            disks: vec![DiskConfig { cx: 0.5, cy: 0.5, r: 0.4 }],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub cell: Vec<i64>,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepConfig {
    Lazy1d,
    Lazy2d,
    Srw1d,
    Deterministic1d,
    Stable { alpha: f64, cutoff: i64 },
    Custom { dim: u8, atoms: Vec<AtomConfig> },
}

fn cell_from_vec(v: &[i64]) -> Result<Cell> {
    match v.len() {
        1 => Ok([v[0], 0]),
        2 => Ok([v[0], v[1]]),
        _ => Err(Error::InvalidConfig(format!(
            "cell must have 1 or 2 components, got {v:?}"
        ))),
    }
}

impl StepConfig {
    pub fn build(&self) -> Result<StepDistribution> {
        match self {
            StepConfig::Lazy1d => Ok(StepDistribution::lazy1d()),
            StepConfig::Lazy2d => Ok(StepDistribution::lazy2d()),
            StepConfig::Srw1d => Ok(StepDistribution::srw1d()),
            StepConfig::Deterministic1d => Ok(StepDistribution::deterministic1d()),
            StepConfig::Stable { alpha, cutoff } => {
                Ok(crate::rw_oracle::stable_step_builder(*alpha, *cutoff)?.0)
            }
            StepConfig::Custom { dim, atoms } => {
                let mut parsed = Vec::with_capacity(atoms.len());
                for a in atoms {
                    parsed.push((cell_from_vec(&a.cell)?, a.p));
                }
                StepDistribution::new(*dim, parsed)
            }
        }
    }

    /// Parses the CLI shorthand: `lazy1d`, `lazy2d`, `srw1d`,
    /// `deterministic1d`, or `stable:ALPHA:CUTOFF`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lazy1d" => Ok(StepConfig::Lazy1d),
            "lazy2d" => Ok(StepConfig::Lazy2d),
            "srw1d" => Ok(StepConfig::Srw1d),
            "deterministic1d" => Ok(StepConfig::Deterministic1d),
            other => {
                if let Some(rest) = other.strip_prefix("stable:") {
                    let parts: Vec<&str> = rest.split(':').collect();
                    if parts.len() == 2 {
                        let alpha: f64 = parts[0]
                            .parse()
                            .map_err(|_| Error::InvalidConfig(format!("bad alpha in {other}")))?;
                        let cutoff: i64 = parts[1]
                            .parse()
                            .map_err(|_| Error::InvalidConfig(format!("bad cutoff in {other}")))?;
                        return Ok(StepConfig::Stable { alpha, cutoff });
                    }
                }
                Err(Error::InvalidConfig(format!(
                    "unknown step '{other}' (expected lazy1d, lazy2d, srw1d, deterministic1d, \
                     or stable:ALPHA:CUTOFF)"
                )))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Billiard { table: TableConfig },
    Walk { step: StepConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BetaEntry {
    pub cell: Vec<i64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    /// Reported against the (1+|ℓ|)^η summability condition; η defaults to
    /// (α − d + ε)/2 with ε = 0.25.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub beta: Vec<BetaEntry>,
}

impl ObservableConfig {
    pub fn build(&self, dim: u8) -> Result<ObservableSpec> {
        let mut entries = Vec::with_capacity(self.beta.len());
        for b in &self.beta {
            entries.push((cell_from_vec(&b.cell)?, b.value));
        }
        ObservableSpec::new(dim, entries)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_fine_scale: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_max: f64,
    pub checkpoint_times: Vec<f64>,
    #[serde(default)]
    pub watched_cells: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trajectories: u64,
    pub n_max: u64,
    pub checkpoints: Vec<u64>,
    pub system: SystemConfig,
    pub normalization: NormalizationSeq,
    pub observable: ObservableConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable_g: Option<ObservableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_dp: Option<DpConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("checkpoints must be strictly increasing".into()));
        }
        if self.checkpoints.last().is_some_and(|&c| c > self.n_max) {
            return Err(Error::InvalidConfig("checkpoints exceed n_max".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> u8 {
        match &self.system {
            SystemConfig::Billiard { table } => table.dim,
            SystemConfig::Walk { step } => match step {
                StepConfig::Lazy2d => 2,
                StepConfig::Custom { dim, .. } => *dim,
                _ => 1,
            },
        }
    }
}

pub fn parse_table(text: &str) -> Result<TableConfig> {
    toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Hex SHA-256 of the raw config text.
pub fn config_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a run bit-exactly.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        Self {
            tool: "lorentz".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.to_owned(),
            config_hash: config_hash(config_text),
            seed,
        }
    }
}
