//! Experiment outputs: CSV sweeps, XYZ clouds, metric summaries, and the run
//! manifest with per-file checksums.
//!
//! All floating-point values are written in scientific notation with 9
//! significant digits, so byte-identical configuration and seed reproduce
//! byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::metrics::{CloudPoint, RmseReport, SdReport};
use crate::model::ElevationGrid;
use crate::recover::ScattererEstimate;

/// Format a float with 9 significant digits (scientific notation).
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// A point cloud with per-point power.
pub type PowerCloud = Vec<(CloudPoint, f64)>;

/// RMSE curves over a sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecords {
    /// CSV column name of the axis: `spacing_rho` or `snr_db`.
    pub axis_name: String,
    pub points: Vec<f64>,
    pub array_names: Vec<String>,
    /// Indexed `[point][array]`.
    pub rmse: Vec<Vec<RmseReport>>,
}

impl SweepRecords {
    /// RMSE curve of one array along the sweep axis.
    pub fn series(&self, array: &str) -> Option<Vec<RmseReport>> {
        let idx = self.array_names.iter().position(|n| n == array)?;
        Some(self.rmse.iter().map(|row| row[idx]).collect())
    }
}

/// Scene reconstruction results: clouds plus summary metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecords {
    pub array_names: Vec<String>,
    pub rmse: Vec<RmseReport>,
    pub truth_cloud: PowerCloud,
    pub estimate_clouds: Vec<PowerCloud>,
    /// Density/dispersion of the truth cloud, when computable.
    pub sd_truth: Option<SdReport>,
    /// Density/dispersion per estimated cloud, when computable.
    pub sd_estimates: Vec<Option<SdReport>>,
    pub sd_center: CloudPoint,
}

/// Full profiles for a single pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecords {
    pub array_names: Vec<String>,
    pub grid: ElevationGrid,
    pub profiles: Vec<Vec<f64>>,
    pub noise_power: Vec<f64>,
    pub peaks: Vec<Vec<ScattererEstimate>>,
}

/// Everything an experiment produced, by kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentRecords {
    Sweep(SweepRecords),
    Scene(SceneRecords),
    Profiles(ProfileRecords),
}

fn refuse_empty(condition: bool, what: &str) -> Result<()> {
    if condition {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("refusing to emit empty records: {what}"),
        )))
    } else {
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Write a sweep CSV: axis column, then `<array>_rmse_h,<array>_rmse_a` per
/// array.
fn write_sweep_csv(records: &SweepRecords, out_dir: &Path) -> Result<PathBuf> {
    let filename = match records.axis_name.as_str() {
        "spacing_rho" => "rmse_vs_spacing.csv",
        "snr_db" => "rmse_vs_snr.csv",
        other => return Err(Error::InternalError(format!("unknown sweep axis {other}"))),
    };
    let mut text = String::new();
    text.push_str(&records.axis_name);
    for name in &records.array_names {
        text.push_str(&format!(",{name}_rmse_h,{name}_rmse_a"));
    }
    text.push('\n');
    for (point, row) in records.points.iter().zip(&records.rmse) {
        text.push_str(&fmt_sig9(*point));
        for report in row {
            text.push(',');
            text.push_str(&fmt_sig9(report.rmse_h));
            text.push(',');
            text.push_str(&fmt_sig9(report.rmse_a));
        }
        text.push('\n');
    }
    let path = out_dir.join(filename);
    write_file(&path, &text)?;
    Ok(path)
}

/// Write an XYZ-with-power cloud: `x y z power`, space separated.
fn write_xyz(cloud: &PowerCloud, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (p, power) in cloud {
        text.push_str(&fmt_sig9(p.x));
        text.push(' ');
        text.push_str(&fmt_sig9(p.y));
        text.push(' ');
        text.push_str(&fmt_sig9(p.z));
        text.push(' ');
        text.push_str(&fmt_sig9(*power));
        text.push('\n');
    }
    write_file(path, &text)
}

#[derive(Debug, Serialize)]
struct MetricsSummary<'a> {
    array: Vec<ArraySummary<'a>>,
}

#[derive(Debug, Serialize)]
struct ArraySummary<'a> {
    name: &'a str,
    rmse_h: f64,
    rmse_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_de: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_di: Option<f64>,
}

fn write_scene_outputs(records: &SceneRecords, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let truth_path = out_dir.join("truth.xyz");
    write_xyz(&records.truth_cloud, &truth_path)?;
    paths.push(truth_path);
    for (name, cloud) in records.array_names.iter().zip(&records.estimate_clouds) {
        let path = out_dir.join(format!("estimate_{name}.xyz"));
        write_xyz(cloud, &path)?;
        paths.push(path);
    }
    let summary = MetricsSummary {
        array: records
            .array_names
            .iter()
            .enumerate()
            .map(|(i, name)| ArraySummary {
                name,
                rmse_h: records.rmse[i].rmse_h,
                rmse_a: records.rmse[i].rmse_a,
                s_de: records.sd_estimates[i].map(|r| r.s_de),
                s_di: records.sd_estimates[i].map(|r| r.s_di),
            })
            .collect(),
    };
    let text = toml::to_string(&summary)
        .map_err(|e| Error::Parse(format!("serialize metrics summary: {e}")))?;
    let path = out_dir.join("metrics_summary.toml");
    write_file(&path, &text)?;
    paths.push(path);
    Ok(paths)
}

fn write_profiles(records: &ProfileRecords, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (i, name) in records.array_names.iter().enumerate() {
        let mut text = String::from("elevation_m,value\n");
        for (s, v) in records.grid.samples_m.iter().zip(&records.profiles[i]) {
            text.push_str(&fmt_sig9(*s));
            text.push(',');
            text.push_str(&fmt_sig9(*v));
            text.push('\n');
        }
        let path = out_dir.join(format!("profile_{name}.csv"));
        write_file(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Write every output file for a set of records into `out_dir`.
pub fn emit_outputs(records: &ExperimentRecords, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    match records {
        ExperimentRecords::Sweep(sweep) => {
            refuse_empty(
                sweep.points.is_empty() || sweep.array_names.is_empty(),
                "sweep has no points or no arrays",
            )?;
            Ok(vec![write_sweep_csv(sweep, out_dir)?])
        }
        ExperimentRecords::Scene(scene) => {
            refuse_empty(scene.truth_cloud.is_empty(), "scene truth cloud is empty")?;
            refuse_empty(scene.array_names.is_empty(), "scene has no arrays")?;
            write_scene_outputs(scene, out_dir)
        }
        ExperimentRecords::Profiles(profiles) => {
            refuse_empty(profiles.array_names.is_empty(), "no profiles")?;
            write_profiles(profiles, out_dir)
        }
    }
}

/// Checksum entry for one output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputChecksum {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub duration_seconds: f64,
    pub outputs: Vec<OutputChecksum>,
    pub config: ExperimentConfig,
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Build checksums for the given files, with paths relative to `out_dir`.
pub fn checksum_outputs(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<OutputChecksum>> {
    paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            Ok(OutputChecksum {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_hex(p)?,
            })
        })
        .collect()
}

/// Write `manifest.json` into the output directory.
pub fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Parse(format!("serialize manifest: {e}")))?;
    write_file(&path, &text)?;
    Ok(path)
}
