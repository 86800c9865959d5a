//! Run configuration. JSON, every field optional, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bnn::{Backend, LayerSpec};
use crate::error::{Error, Result};
use crate::metrics::{EnergyConfig, GeometrySpec, RatioOrientation, TimingConfig, Workload};
use crate::mtj::{Interpolation, ResistanceModel, SwitchingProfile};
use crate::neuron::{BankConfig, RedundancyConfig};
use crate::pixel::{SubtractorConfig, TransferCurve};
use crate::toy::SweepConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    /// Switching-profile CSV; the built-in profile when absent.
    pub profile_path: Option<PathBuf>,
    pub interpolation: Interpolation,
    /// P-to-AP probability of the built-in reset pulse.
    pub reset_probability: f64,
    pub resistance: ResistanceModel,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            profile_path: None,
            interpolation: Interpolation::Bilinear,
            reset_probability: 0.97,
            resistance: ResistanceModel::default(),
        }
    }
}

impl DeviceConfig {
    pub fn profile(&self) -> Result<SwitchingProfile> {
        match &self.profile_path {
            Some(p) => SwitchingProfile::load_csv(p, self.interpolation),
            None => Ok(SwitchingProfile::builtin(self.reset_probability)?.with_interpolation(self.interpolation)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub device: DeviceConfig,
    pub curve: TransferCurve,
    pub subtractor: SubtractorConfig,
    pub bank: BankConfig,
    pub layer: LayerSpec,
    /// `PIPW` file with `conv1` and its batch norm; the built-in reference
    /// layer when absent.
    pub weights_path: Option<PathBuf>,
    pub backend: Backend,
    pub geometry: GeometrySpec,
    pub ratio_orientation: RatioOrientation,
    pub energy: EnergyConfig,
    pub timing: TimingConfig,
    pub workload: Workload,
    pub redundancy: RedundancyConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            device: DeviceConfig::default(),
            curve: TransferCurve::default(),
            subtractor: SubtractorConfig::default(),
            bank: BankConfig::default(),
            layer: LayerSpec::default(),
            weights_path: None,
            backend: Backend::HardwareStochastic,
            geometry: GeometrySpec::default(),
            ratio_orientation: RatioOrientation::InputOverOutput,
            energy: EnergyConfig::default(),
            timing: TimingConfig::default(),
            workload: Workload::default(),
            redundancy: RedundancyConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl SimConfig {
    /// Every violation, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(0.0..=1.0).contains(&self.device.reset_probability) {
            errors.push(format!(
                "device.reset_probability must be in [0, 1] (got {})",
                self.device.reset_probability
            ));
        }
        self.device.resistance.validate(&mut errors);
        if let Err(e) = self.curve.validate() {
            errors.push(format!("curve: {e}"));
        }
        self.subtractor.validate(&mut errors);
        self.bank.validate(&mut errors);
        self.layer.validate(&mut errors);
        self.geometry.validate(&mut errors);
        self.energy.validate(&mut errors);
        self.timing.validate(&mut errors);
        if !(0.0..=1.0).contains(&self.workload.sparsity) {
            errors.push(format!(
                "workload.sparsity must be in [0, 1] (got {})",
                self.workload.sparsity
            ));
        }
        self.redundancy.validate(&mut errors);
        self.sweep.validate(&mut errors);
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Resolves relative file references against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.device.profile_path, &mut self.weights_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn parse_config(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates, and resolves relative paths against the file's
/// directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

pub fn save_config(path: impl AsRef<Path>, cfg: &SimConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cfg.to_json()?).map_err(|e| Error::io(path, e))
}
