//! JSON run configuration merged under command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermoforge::boundary::BoundarySpec;
use thermoforge::data::CaseConfig;
use thermoforge::fdm::SolverConfig;
use thermoforge::loss::LossConfig;
use thermoforge::net::{NetworkConfig, PredictionHead};
use thermoforge::trainer::TrainConfig;
use thermoforge::{Error, Result};

/// Every field is optional; flags given on the command line win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name (`case1`, `case2`, `desk`) or path to a case JSON file.
    pub case: Option<String>,
    /// Cells per side.
    pub grid: Option<usize>,
    pub boundary: Option<BoundarySpec>,
    pub network: Option<NetworkConfig>,
    pub head: Option<PredictionHead>,
    pub training: Option<TrainConfig>,
    /// Replaces `training.loss` when both are present.
    pub loss: Option<LossConfig>,
    pub solver: Option<SolverConfig>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn training(&self) -> TrainConfig {
        let mut t = self.training.unwrap_or_default();
        if let Some(loss) = self.loss {
            t.loss = loss;
        }
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }
}

/// Resolves a preset name or case file, then applies grid and boundary
/// overrides.
pub fn resolve_case(name: &str, grid: Option<usize>, boundary: Option<BoundarySpec>) -> Result<CaseConfig> {
    let mut case = match name {
        "case1" | "case2" | "desk" => CaseConfig::preset(name, grid)?,
        path => {
            let c = CaseConfig::load(Path::new(path))?;
            match grid {
                Some(cells) => c.with_cells(cells)?,
                None => c,
            }
        }
    };
    if let Some(b) = boundary {
        case.boundary = b;
        case.validate()?;
    }
    Ok(case)
}

/// Default (train, val, test) sizes: the full split for case1 and case2,
/// a small one for the desk case and custom files.
pub fn default_counts(case: &CaseConfig) -> (usize, usize, usize) {
    match case.name.as_str() {
        "case1" | "case2" => (9000, 1000, 1000),
        _ => (500, 50, 50),
    }
}

pub fn parse_counts(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("counts {s:?}: {e}")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config(format!("counts {s:?} must be train,val,test"))),
    }
}
