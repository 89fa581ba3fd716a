//! Run configuration. Every field has a default, so a config file only needs
//! the keys it changes; the fully resolved config is written next to every
//! run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{noise_scaling, NoiseScalingCurve};
use crate::error::{Error, Result};
use crate::features::{FeatureLibrary, KernelGrid};
use crate::sde_sim::{make_double_well, make_multiplicative, make_ou, SdeSpec, SimConfig};
use crate::sparse_regress::{log_grid, LassoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Ou { theta: f64, sigma0: f64 },
    DoubleWell { sigma0: f64 },
    Multiplicative,
    Custom { name: String, drift_coeffs: Vec<f64>, diff_coeffs: Vec<f64> },
}

impl SystemConfig {
    pub fn spec(&self) -> Result<SdeSpec> {
        match self {
            SystemConfig::Ou { theta, sigma0 } => make_ou(*theta, *sigma0),
            SystemConfig::DoubleWell { sigma0 } => make_double_well(*sigma0),
            SystemConfig::Multiplicative => Ok(make_multiplicative()),
            SystemConfig::Custom { name, drift_coeffs, diff_coeffs } => {
                SdeSpec::new(name.clone(), drift_coeffs.clone(), diff_coeffs.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub lo: f64,
    pub hi: f64,
    pub n_centers: usize,
    pub bandwidth: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { lo: -2.5, hi: 2.5, n_centers: 50, bandwidth: 0.22 }
    }
}

impl KernelConfig {
    pub fn grid(&self) -> Result<KernelGrid> {
        KernelGrid::uniform(self.lo, self.hi, self.n_centers, self.bandwidth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub density_lo: f64,
    pub density_hi: f64,
    pub density_points: usize,
    /// Length of the single-trajectory ACF simulations.
    pub acf_steps: usize,
    /// Largest ACF lag, in time units.
    pub acf_max_lag_time: f64,
    pub acf_seed: u64,
    /// Reseeded true-vs-true pairs used to calibrate the ACF gap.
    pub acf_scatter_pairs: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            density_lo: -3.0,
            density_hi: 3.0,
            density_points: 401,
            acf_steps: 200_000,
            acf_max_lag_time: 2.0,
            acf_seed: 9001,
            acf_scatter_pairs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub system: SystemConfig,
    pub sim: SimConfig,
    pub kernels: KernelConfig,
    pub library: FeatureLibrary,
    pub regression: LassoConfig,
    pub diagnostics: DiagnosticsConfig,
    pub bias_correction: bool,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::ou()
    }
}

impl PipelineConfig {
    pub fn ou() -> Self {
        Self {
            system: SystemConfig::Ou { theta: 1.0, sigma0: 0.7 },
            sim: SimConfig { master_seed: 42, ..SimConfig::default() },
            kernels: KernelConfig::default(),
            library: FeatureLibrary::default(),
            regression: LassoConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            bias_correction: true,
            output_dir: PathBuf::from("out/ou"),
        }
    }

    pub fn double_well() -> Self {
        Self {
            system: SystemConfig::DoubleWell { sigma0: 0.5 },
            sim: SimConfig { master_seed: 123, ..SimConfig::default() },
            output_dir: PathBuf::from("out/double_well"),
            ..Self::ou()
        }
    }

    pub fn multiplicative() -> Self {
        Self {
            system: SystemConfig::Multiplicative,
            sim: SimConfig { master_seed: 7, ..SimConfig::default() },
            kernels: KernelConfig { lo: -2.8, hi: 2.8, n_centers: 50, bandwidth: 0.27 },
            regression: LassoConfig { stlsq_threshold_rel: 0.30, ..LassoConfig::default() },
            diagnostics: DiagnosticsConfig { density_lo: -4.0, density_hi: 4.0, ..DiagnosticsConfig::default() },
            output_dir: PathBuf::from("out/multiplicative"),
            ..Self::ou()
        }
    }

    /// The three benchmark presets by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ou" => Some(Self::ou()),
            "double_well" => Some(Self::double_well()),
            "multiplicative" => Some(Self::multiplicative()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved config as `config.toml` into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.system.spec()?;
        self.sim.validate()?;
        self.kernels.grid()?;
        self.regression.validate()?;
        let d = &self.diagnostics;
        if !(d.density_lo < d.density_hi) || d.density_points < 2 {
            return Err(Error::InvalidParameter("density grid is degenerate".into()));
        }
        if d.acf_steps < 2 || !(d.acf_max_lag_time > 0.0) {
            return Err(Error::InvalidParameter("ACF settings must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<SdeSpec> {
        let spec = self.system.spec()?;
        if spec.n_terms() > self.library.len() {
            return Err(Error::InvalidParameter(format!(
                "system has {} terms but the library only {}",
                spec.n_terms(),
                self.library.len()
            )));
        }
        Ok(spec)
    }
}

/// Inputs of the analytic noise-scaling curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScalingConfig {
    pub horizon: f64,
    pub bandwidth: f64,
    pub snr: Vec<f64>,
    /// Ascending time steps.
    pub dt_grid: Vec<f64>,
    pub signal_std: f64,
}

impl Default for NoiseScalingConfig {
    fn default() -> Self {
        let mut dt_grid = log_grid(-4.0, -1.0, 31);
        dt_grid.reverse();
        Self { horizon: 100.0, bandwidth: 0.22, snr: vec![5.0, 10.0, 20.0], dt_grid, signal_std: 1.0 }
    }
}

impl NoiseScalingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn curve(&self) -> Result<NoiseScalingCurve> {
        noise_scaling(self.horizon, self.bandwidth, &self.snr, &self.dt_grid, self.signal_std)
    }
}
