//! Run configuration: one TOML document, a table per module.
//!
//! ```toml
//! command = "study"
//! seed = 7
//!
//! [disorder]
//! coupler_std = 0.05
//!
//! [study]
//! gate = "cphase"
//! instances = 100
//! ```
//!
//! Every key is optional and unknown keys are rejected. Serialising a
//! resolved config gives the echo written next to each result, and parsing
//! the echo gives the same config back.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderModel;
use crate::error::{Error, Result};
use crate::experiments::{Aggregation, Composition, IpeaConfig, WalkConfig};
use crate::mesh::MeshTopology;
use crate::tuner::{StudyGate, TuneOptions};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "QPP_OUTPUT_DIR";
/// Used when neither the config nor the environment names a directory.
pub const FALLBACK_OUTPUT_DIR: &str = "qpp-results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateGate,
    OptimizeGate,
    #[default]
    Study,
    Ipea,
    Qrw,
    SampleFab,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateGate => "simulate-gate",
            Command::OptimizeGate => "optimize-gate",
            Command::Study => "study",
            Command::Ipea => "ipea",
            Command::Qrw => "qrw",
            Command::SampleFab => "sample-fab",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    /// Falls back to `$QPP_OUTPUT_DIR`, then `qpp-results`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub disorder: DisorderModel,
    pub tuner: TuneOptions,
    pub gate: GateConfig,
    pub study: StudyConfig,
    pub ipea: IpeaSection,
    pub qrw: WalkConfig,
    pub sample_fab: SampleFabConfig,
}

/// Single-chip runs (`simulate-gate`, `optimize-gate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub gate: StudyGate,
    /// Conditional phase, used when `gate = "cphase"`.
    pub phase: f64,
    /// Chip index under the master seed.
    pub instance: u64,
    /// Use a perfect chip instead of sampling one.
    pub ideal: bool,
    /// Host chip; defaults to the gate's own footprint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gate: StudyGate::Cnot,
            phase: PI,
            instance: 0,
            ideal: false,
            topology: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_modes: usize,
    pub n_layers: usize,
}

impl TopologyConfig {
    pub fn topology(&self) -> Result<MeshTopology> {
        MeshTopology::new(self.n_modes, self.n_layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub gate: StudyGate,
    pub instances: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            gate: StudyGate::Cnot,
            instances: 200,
        }
    }
}

/// `[ipea]`: the per-run settings plus the ensemble size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpeaSection {
    pub lambda: f64,
    pub n_bits: usize,
    pub optimize: bool,
    pub aggregation: Aggregation,
    pub composition: Composition,
    pub shots: u64,
    pub instances: usize,
    /// Run once on a perfect chip instead of an ensemble.
    pub ideal: bool,
}

impl Default for IpeaSection {
    fn default() -> Self {
        let c = IpeaConfig::default();
        IpeaSection {
            lambda: c.lambda,
            n_bits: c.n_bits,
            optimize: c.optimize,
            aggregation: c.aggregation,
            composition: c.composition,
            shots: c.shots,
            instances: 200,
            ideal: false,
        }
    }
}

impl IpeaSection {
    pub fn to_config(&self, tune: TuneOptions) -> IpeaConfig {
        IpeaConfig {
            lambda: self.lambda,
            n_bits: self.n_bits,
            optimize: self.optimize,
            aggregation: self.aggregation,
            composition: self.composition,
            shots: self.shots,
            tune,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleFabConfig {
    pub samples: usize,
}

impl Default for SampleFabConfig {
    fn default() -> Self {
        SampleFabConfig { samples: 100_000 }
    }
}

impl RunConfig {
    /// Validate everything the chosen command reads.
    pub fn validate(&self) -> Result<()> {
        self.disorder.validate()?;
        match self.command {
            Command::SimulateGate | Command::OptimizeGate => {
                self.tuner.validate()?;
                if !self.gate.phase.is_finite() {
                    return Err(Error::param("phase", "must be finite"));
                }
                if let Some(t) = self.gate.topology {
                    t.topology()?;
                }
            }
            Command::Study => {
                self.tuner.validate()?;
                if self.study.instances == 0 {
                    return Err(Error::param("instances", "must be at least 1"));
                }
            }
            Command::Ipea => {
                self.ipea.to_config(self.tuner).validate()?;
                if self.ipea.instances == 0 {
                    return Err(Error::param("instances", "must be at least 1"));
                }
            }
            Command::Qrw => self.walk_config().validate()?,
            Command::SampleFab => {
                if self.sample_fab.samples < 2 {
                    return Err(Error::param("samples", "must be at least 2"));
                }
            }
        }
        Ok(())
    }

    /// `[qrw]` with the shared disorder model filled in.
    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            model: self.disorder,
            ..self.qrw
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Parse without validating, for callers that apply overrides first.
pub fn parse_config_unchecked(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_unchecked(&text)
}
