//! Experiment configuration: structured text (TOML) schema, defaults, and
//! array resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    coprime_array, custom_array, nested_array, uniform_array, ArrayConfig, ArrayKind,
};
use crate::model::rayleigh_resolution;

/// Propagation speed used to turn a center frequency into a wavelength.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// What an experiment run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Two-scatterer RMSE versus scatterer spacing.
    SpacingSweep,
    /// Two-scatterer RMSE versus SNR at a fixed spacing.
    SnrSweep,
    /// Multi-pixel scene reconstruction with point-cloud outputs.
    PointcloudScene,
    /// One pixel, full profiles per array.
    SinglePixel,
}

/// Acquisition parameters shared by all arrays in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub center_frequency_hz: f64,
    pub slant_range_m: f64,
    pub unit_spacing_m: f64,
    /// Aperture (in units of `d`) defining the reference resolution
    /// `rho_s`; the shared design aperture of the run's layouts.
    #[serde(default = "default_reference_aperture")]
    pub reference_aperture_units: u32,
}

fn default_reference_aperture() -> u32 {
    9
}

impl GeometryConfig {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_frequency_hz
    }

    /// Reference elevation resolution from the configured aperture.
    pub fn rho_s(&self) -> Result<f64> {
        rayleigh_resolution(
            self.wavelength_m(),
            self.slant_range_m,
            self.reference_aperture_units as f64 * self.unit_spacing_m,
        )
    }
}

/// Reconstruction grid parameters in units of `rho_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cell size as a fraction of `rho_s`.
    pub spacing_rho: f64,
    /// Half extent as a multiple of `rho_s`.
    pub extent_rho: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            spacing_rho: 0.05,
            extent_rho: 3.0,
        }
    }
}

impl GridConfig {
    pub fn half_count(&self) -> usize {
        (self.extent_rho / self.spacing_rho).round() as usize
    }
}

/// Which inversion route an array uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMethod {
    CoarrayOmp,
    DirectL1,
}

/// One baseline layout under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub name: String,
    pub kind: ArrayKind,
    /// Channel budget; required for uniform, optional for coprime (a pair is
    /// searched for).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<i64>>,
    /// Default: direct l1 for uniform layouts, co-array OMP otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ReconstructionMethod>,
}

impl ArraySpec {
    /// Instantiate the layout, reporting unsatisfiable requests as config
    /// errors.
    pub fn resolve(&self, unit_spacing_m: f64) -> Result<ArrayConfig> {
        let cfg = |r: crate::error::Result<ArrayConfig>| {
            r.map_err(|e| Error::ConfigError(format!("array '{}': {e}", self.name)))
        };
        match self.kind {
            ArrayKind::Uniform => {
                let n = self.elements.ok_or_else(|| {
                    Error::ConfigError(format!("array '{}': uniform needs `elements`", self.name))
                })?;
                cfg(uniform_array(n, unit_spacing_m))
            }
            ArrayKind::Coprime => match (self.m1, self.m2) {
                (Some(m1), Some(m2)) => cfg(coprime_array(m1, m2, unit_spacing_m)),
                _ => {
                    let n = self.elements.ok_or_else(|| {
                        Error::ConfigError(format!(
                            "array '{}': coprime needs `m1`/`m2` or `elements`",
                            self.name
                        ))
                    })?;
                    let (m1, m2) = search_coprime_pair(n).ok_or_else(|| {
                        Error::ConfigError(format!(
                            "array '{}': no coprime pair m1 + m2 - 1 = {n} exists \
                             (subarray sizes >= 2 with gcd 1)",
                            self.name
                        ))
                    })?;
                    cfg(coprime_array(m1, m2, unit_spacing_m))
                }
            },
            ArrayKind::Nested => {
                let (m1, m2) = match (self.m1, self.m2) {
                    (Some(m1), Some(m2)) => (m1, m2),
                    _ => {
                        return Err(Error::ConfigError(format!(
                            "array '{}': nested needs `m1` and `m2`",
                            self.name
                        )))
                    }
                };
                cfg(nested_array(m1, m2, unit_spacing_m))
            }
            ArrayKind::Custom => {
                let positions = self.positions.clone().ok_or_else(|| {
                    Error::ConfigError(format!("array '{}': custom needs `positions`", self.name))
                })?;
                cfg(custom_array(positions, unit_spacing_m))
            }
        }
    }

    pub fn method(&self) -> ReconstructionMethod {
        self.method.unwrap_or(match self.kind {
            ArrayKind::Uniform => ReconstructionMethod::DirectL1,
            _ => ReconstructionMethod::CoarrayOmp,
        })
    }
}

/// Best coprime split for a channel budget `n = m1 + m2 - 1`, preferring the
/// largest physical aperture and then the smaller `m1`.
fn search_coprime_pair(elements: u32) -> Option<(u32, u32)> {
    let total = elements + 1;
    let mut best: Option<(u32, u32, i64)> = None;
    for m1 in 2..total.saturating_sub(1) {
        let m2 = total - m1;
        if m2 < 2 {
            continue;
        }
        if num_gcd(m1, m2) != 1 {
            continue;
        }
        let aperture = (((m1 - 1) * m2).max((m2 - 1) * m1)) as i64;
        let better = match best {
            None => true,
            Some((bm1, _, ba)) => aperture > ba || (aperture == ba && m1 < bm1),
        };
        if better {
            best = Some((m1, m2, aperture));
        }
    }
    best.map(|(m1, m2, _)| (m1, m2))
}

fn num_gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Sweep axes and fixed operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Scatterer spacings (units of `rho_s`) for spacing sweeps.
    pub spacing_rho: Vec<f64>,
    /// SNR points (dB) for SNR sweeps.
    pub snr_db: Vec<f64>,
    /// Spacing used by SNR sweeps, scenes, and single-pixel runs.
    pub fixed_spacing_rho: f64,
    /// SNR used by spacing sweeps, scenes, and single-pixel runs.
    pub fixed_snr_db: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            spacing_rho: (1..=10).map(|i| i as f64 / 10.0).collect(),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            fixed_spacing_rho: 0.8,
            fixed_snr_db: 20.0,
        }
    }
}

/// Covariance estimation path for co-array methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariancePipeline {
    /// Plain window average.
    Plain,
    /// Adaptive window selection, M-estimation, outlier screening.
    Adaptive,
}

/// Solver and estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub pipeline: CovariancePipeline,
    /// Signal atoms requested from OMP; defaults to the per-pixel truth
    /// count in simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<usize>,
    /// Weight co-array rows by `multiplicity^exponent` before OMP; 0 keeps
    /// the plain average, 0.5 is full inverse-variance whitening.
    pub lag_weight_exponent: f64,
    /// Relative residual stop for OMP when the model order is unknown.
    pub residual_tol: f64,
    /// l1 weight as a fraction of the kill threshold `2||Phi^H y||_inf`.
    pub l1_alpha_scale: f64,
    pub l1_max_iter: usize,
    pub l1_tol: f64,
    /// M-estimator degrees of freedom.
    pub nu: f64,
    /// M-estimator relative Frobenius stopping threshold.
    pub epsilon: f64,
    pub m_estimator_max_iter: usize,
    /// Log-density gap below the median at which snapshots are dropped.
    pub tau_log: f64,
    /// Relative diagonal loading where an inversion is required.
    pub loading_rel: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pipeline: CovariancePipeline::Plain,
            sparsity: None,
            lag_weight_exponent: 0.4,
            residual_tol: 0.05,
            l1_alpha_scale: 0.1,
            l1_max_iter: 2000,
            l1_tol: 1e-5,
            nu: 3.0,
            epsilon: 1e-6,
            m_estimator_max_iter: 100,
            tau_log: std::f64::consts::LN_10,
            loading_rel: 1e-3,
        }
    }
}

/// Scene block for point-cloud runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub rows: u32,
    pub cols: u32,
    pub pixel_spacing_m: f64,
    /// Load the scene from a file instead of the facade template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Cylinder radius for the density/dispersion report.
    pub sd_cyl_radius_m: f64,
    /// Inlier band half-width for the density/dispersion report.
    pub sd_inlier_dist_m: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rows: 40,
            cols: 40,
            pixel_spacing_m: 1.0,
            file: None,
            sd_cyl_radius_m: 8.0,
            sd_inlier_dist_m: 1.0,
        }
    }
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Spatial estimation window side length (odd).
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub arrays: Vec<ArraySpec>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scene: SceneConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    100
}

fn default_window() -> usize {
    11
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("serialize config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::ConfigError("trials must be at least 1".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::ConfigError(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.arrays.is_empty() {
            return Err(Error::ConfigError("at least one array is required".into()));
        }
        let mut names: Vec<&str> = self.arrays.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.arrays.len() {
            return Err(Error::ConfigError("array names must be unique".into()));
        }
        for spec in &self.arrays {
            spec.resolve(self.geometry.unit_spacing_m)?;
        }
        let check_axis = |name: &str, values: &[f64]| -> Result<()> {
            if values.is_empty() {
                return Err(Error::ConfigError(format!("sweep axis {name} is empty")));
            }
            if values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::ConfigError(format!(
                    "sweep axis {name} must be strictly increasing"
                )));
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::SpacingSweep => check_axis("spacing_rho", &self.sweep.spacing_rho)?,
            ExperimentKind::SnrSweep => check_axis("snr_db", &self.sweep.snr_db)?,
            ExperimentKind::PointcloudScene => {
                if self.scene.rows == 0 || self.scene.cols == 0 {
                    return Err(Error::ConfigError("scene grid must be non-empty".into()));
                }
            }
            ExperimentKind::SinglePixel => {}
        }
        if !(self.grid.spacing_rho > 0.0) || !(self.grid.extent_rho > self.grid.spacing_rho) {
            return Err(Error::ConfigError(
                "grid needs spacing_rho > 0 and extent_rho > spacing_rho".into(),
            ));
        }
        self.geometry.rho_s()?;
        Ok(())
    }

    /// The standard four-array lineup used by the reference experiments.
    pub fn standard_arrays() -> Vec<ArraySpec> {
        vec![
            ArraySpec {
                name: "uniform-10".into(),
                kind: ArrayKind::Uniform,
                elements: Some(10),
                m1: None,
                m2: None,
                positions: None,
                method: None,
            },
            ArraySpec {
                name: "coprime-3-4".into(),
                kind: ArrayKind::Coprime,
                elements: None,
                m1: Some(3),
                m2: Some(4),
                positions: None,
                method: None,
            },
            ArraySpec {
                name: "nested-4-2".into(),
                kind: ArrayKind::Nested,
                elements: None,
                m1: Some(4),
                m2: Some(2),
                positions: None,
                method: None,
            },
            ArraySpec {
                name: "nested-3-3".into(),
                kind: ArrayKind::Nested,
                elements: None,
                m1: Some(3),
                m2: Some(3),
                positions: None,
                method: None,
            },
        ]
    }

    /// A ready-to-run configuration with the reference geometry (Ku-band,
    /// 1220 m slant range, 8 cm unit spacing) and the standard arrays.
    pub fn reference(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: default_seed(),
            trials: default_trials(),
            window: default_window(),
            output_dir: default_output_dir(),
            geometry: GeometryConfig {
                center_frequency_hz: 14.25e9,
                slant_range_m: 1220.0,
                unit_spacing_m: 0.08,
                reference_aperture_units: 9,
            },
            grid: GridConfig::default(),
            arrays: Self::standard_arrays(),
            sweep: SweepConfig::default(),
            solver: SolverConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}
