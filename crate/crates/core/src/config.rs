//! Run configuration: one TOML file with sections mirroring the module types.
//! Every field has a default, so a file listing only the sweep velocities is
//! a complete configuration.

use crate::error::{Error, Result};
use crate::experiments::{FringeConfig, LeakageConfig, Setup, SweepConfig};
use crate::geometry::{GridSpec, TubeSpec};
use crate::potentials::{BackgroundSpec, PulseShape};
use crate::propagators::SolverParams;
use crate::states::EnvelopeSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub shape: PulseShape,
    /// Flux phase `Φ`; the amplitude is calibrated to it.
    pub target_phi: f64,
    pub taper_outer: Option<f64>,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            shape: PulseShape::QuarticBump,
            target_phi: FRAC_PI_2,
            taper_outer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleConfig {
    pub velocity: f64,
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self { velocity: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write a field snapshot at every n-th probe; 0 disables snapshots.
    pub snapshot_cadence: usize,
    /// Keep wall-clock data out of the manifest.
    pub deterministic: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            snapshot_cadence: 1,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mass: f64,
    pub geometry: TubeSpec,
    pub grid: GridSpec,
    pub pulse: PulseSection,
    pub background: BackgroundSpec,
    pub envelope: EnvelopeSpec,
    pub solver: SolverParams,
    pub sweep: SweepConfig,
    pub single: SingleConfig,
    pub fringe: FringeConfig,
    pub leakage: LeakageConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            geometry: TubeSpec::default(),
            grid: GridSpec::default(),
            pulse: PulseSection::default(),
            background: BackgroundSpec::disabled(),
            envelope: EnvelopeSpec::default(),
            solver: SolverParams::default(),
            sweep: SweepConfig::default(),
            single: SingleConfig::default(),
            fringe: FringeConfig::default(),
            leakage: LeakageConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn setup(&self) -> Setup {
        Setup {
            tube: self.geometry,
            grid: self.grid,
            mass: self.mass,
            pulse_shape: self.pulse.shape,
            target_phi: self.pulse.target_phi,
            taper_outer: self.pulse.taper_outer,
            background: self.background,
            envelope: self.envelope,
            solver: self.solver,
        }
    }

    /// Cross-field checks. Each failure names the violated inequality.
    pub fn validate(&self) -> Result<()> {
        let setup = self.setup();
        setup.validate()?;
        self.sweep.validate()?;
        let v_max = self
            .sweep
            .v_max()
            .max(self.single.velocity)
            .max(self.fringe.velocity);
        setup
            .at_tier(self.sweep.resolution_tier)
            .grid
            .check_resolution(self.mass, v_max)?;
        if !(self.single.velocity > 1.0) {
            return Err(Error::strict("1 < v", 1.0, self.single.velocity));
        }
        if !(self.fringe.velocity > 1.0) {
            return Err(Error::strict("1 < v", 1.0, self.fringe.velocity));
        }
        if !(self.leakage.time > 0.0) {
            return Err(Error::strict("0 < t", 0.0, self.leakage.time));
        }
        Ok(())
    }

    /// Full configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
