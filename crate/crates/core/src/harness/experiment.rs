//! Experiment execution: array resolution, per-trial pipelines, Monte Carlo
//! sweeps, scene reconstruction, and deterministic seeding.
//!
//! Trials are independent and run in parallel; per-trial seeds are derived
//! from the master seed and the trial coordinates, and results are reduced
//! in index order, so outputs are identical for any worker count.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::covariance::{
    adaptive_pipeline, sample_covariance, vectorize_and_select, AdaptiveParams,
    CovarianceEstimate, PixelField,
};
use crate::error::{Error, Result};
use crate::geometry::{difference_coarray, ArrayConfig, CoArray};
use crate::harness::config::{
    CovariancePipeline, ExperimentConfig, ExperimentKind, ReconstructionMethod, SolverConfig,
};
use crate::harness::files::load_scene;
use crate::harness::output::{
    checksum_outputs, emit_outputs, write_manifest, ExperimentRecords, PowerCloud,
    ProfileRecords, RunManifest, SceneRecords, SweepRecords,
};
use crate::metrics::{rmse_report, sd_report, CloudPoint, SdReport, TrialRecord};
use crate::model::{
    build_steering_matrix, coarray_manifold, CoArrayManifold, ElevationGrid, ImagingGeometry,
    SteeringMatrix,
};
use crate::recover::{
    default_l1_alpha, extract_peaks, solve_coarray_omp, solve_direct_l1, whiten_by_multiplicity,
    OmpStop, ReconstructionResult, ScattererEstimate, SolverKind,
};
use crate::simulate::{
    derive_seed, facade_scene, simulate_snapshots, AmplitudeMode, Scatterer, SceneGeometry,
    SceneSpec, SnapshotStack,
};

/// An array spec instantiated against the run geometry, with its forward
/// operators prebuilt.
pub struct ResolvedArray {
    pub name: String,
    pub array: ArrayConfig,
    pub method: ReconstructionMethod,
    pub geometry: ImagingGeometry,
    pub phi: SteeringMatrix,
    pub coarray: CoArray,
    pub manifold: CoArrayManifold,
}

/// Instantiate every configured array against a shared grid.
pub fn resolve_arrays(
    config: &ExperimentConfig,
    grid: &ElevationGrid,
) -> Result<Vec<ResolvedArray>> {
    config
        .arrays
        .iter()
        .map(|spec| {
            let array = spec.resolve(config.geometry.unit_spacing_m)?;
            let geometry = ImagingGeometry::new(
                config.geometry.wavelength_m(),
                config.geometry.slant_range_m,
                array.baselines_m(),
            )?;
            let phi = build_steering_matrix(&geometry, grid);
            let coarray = difference_coarray(&array);
            let manifold = coarray_manifold(&phi, &coarray)?;
            Ok(ResolvedArray {
                name: spec.name.clone(),
                method: spec.method(),
                array,
                geometry,
                phi,
                coarray,
                manifold,
            })
        })
        .collect()
}

/// Estimate the covariance of a window stack with the configured pipeline.
fn estimate_covariance(
    stack: &SnapshotStack,
    window: usize,
    solver: &SolverConfig,
) -> Result<CovarianceEstimate> {
    match solver.pipeline {
        CovariancePipeline::Plain => sample_covariance(stack, 0.0),
        CovariancePipeline::Adaptive => {
            let field = PixelField::from_stack(stack, window, window)?;
            let center = (window / 2, window / 2);
            let params = AdaptiveParams {
                nu: solver.nu,
                epsilon: solver.epsilon,
                max_iter: solver.m_estimator_max_iter,
                tau_log: solver.tau_log,
                loading_rel: solver.loading_rel,
            };
            adaptive_pipeline(&field, center, window, &params).map(|(c, _)| c)
        }
    }
}

fn empty_direct_result(grid_len: usize) -> ReconstructionResult {
    ReconstructionResult {
        profile: vec![0.0; grid_len],
        noise_power: 0.0,
        support: Vec::new(),
        residual_norm: 0.0,
        solver: SolverKind::DirectL1,
        converged: true,
    }
}

/// Run one pixel through the array's reconstruction route.
fn reconstruct_pixel(
    resolved: &ResolvedArray,
    config: &ExperimentConfig,
    grid: &ElevationGrid,
    scatterers: &[Scatterer],
    snr_db: f64,
    seed: u64,
) -> Result<ReconstructionResult> {
    let solver = &config.solver;
    match resolved.method {
        ReconstructionMethod::CoarrayOmp => {
            let n = config.window * config.window;
            let stack = simulate_snapshots(
                &resolved.geometry,
                scatterers,
                n,
                snr_db,
                seed,
                AmplitudeMode::Stochastic,
            )?;
            let cov = estimate_covariance(&stack, config.window, solver)?;
            let zbar = vectorize_and_select(&cov, &resolved.coarray)?;
            let sparsity = solver.sparsity.unwrap_or(scatterers.len()).min(grid.len());
            if solver.lag_weight_exponent > 0.0 {
                let (manifold, z) = whiten_by_multiplicity(
                    &resolved.manifold,
                    &resolved.coarray,
                    &zbar,
                    solver.lag_weight_exponent,
                )?;
                solve_coarray_omp(&z, &manifold, OmpStop::Sparsity(sparsity))
            } else {
                solve_coarray_omp(&zbar, &resolved.manifold, OmpStop::Sparsity(sparsity))
            }
        }
        ReconstructionMethod::DirectL1 => {
            let stack = simulate_snapshots(
                &resolved.geometry,
                scatterers,
                1,
                snr_db,
                seed,
                AmplitudeMode::Stochastic,
            )?;
            let y: DVector<crate::C64> = stack.snapshot(0);
            let alpha = default_l1_alpha(&y, &resolved.phi, solver.l1_alpha_scale);
            if alpha <= 0.0 {
                return Ok(empty_direct_result(grid.len()));
            }
            solve_direct_l1(&y, &resolved.phi, alpha, solver.l1_max_iter, solver.l1_tol)
        }
    }
}

/// Enforce fixed-K extraction: cycle existing peaks (strongest ordering is
/// already resolved) or fall back to a zero-power peak at the grid center.
fn pad_to_k(mut peaks: Vec<ScattererEstimate>, k: usize, grid: &ElevationGrid) -> Vec<ScattererEstimate> {
    if peaks.is_empty() {
        let center = grid.samples_m[grid.len() / 2];
        return vec![
            ScattererEstimate {
                elevation_m: center,
                power: 0.0,
            };
            k
        ];
    }
    let mut idx = 0;
    while peaks.len() < k {
        let repeat = peaks[idx % peaks.len()];
        peaks.push(repeat);
        idx += 1;
    }
    peaks.truncate(k);
    peaks
}

fn truth_estimates(scatterers: &[Scatterer]) -> Vec<ScattererEstimate> {
    scatterers
        .iter()
        .map(|s| ScattererEstimate {
            elevation_m: s.elevation_m,
            power: s.power,
        })
        .collect()
}

/// One two-scatterer Monte Carlo trial at a given spacing and SNR.
fn two_scatterer_trial(
    resolved: &ResolvedArray,
    config: &ExperimentConfig,
    grid: &ElevationGrid,
    spacing_m: f64,
    snr_db: f64,
    seed: u64,
) -> Result<TrialRecord> {
    let half = spacing_m / 2.0;
    let scatterers = [Scatterer::new(-half, 1.0)?, Scatterer::new(half, 1.0)?];
    let result = reconstruct_pixel(resolved, config, grid, &scatterers, snr_db, seed)?;
    let peaks = extract_peaks(&result, grid, scatterers.len())?;
    Ok(TrialRecord {
        truth: truth_estimates(&scatterers),
        estimate: pad_to_k(peaks.peaks, scatterers.len(), grid),
        seed,
    })
}

fn run_sweep(
    config: &ExperimentConfig,
    grid: &ElevationGrid,
    arrays: &[ResolvedArray],
    rho_s: f64,
) -> Result<SweepRecords> {
    let spacing_axis = matches!(config.kind, ExperimentKind::SpacingSweep);
    let points: Vec<f64> = if spacing_axis {
        config.sweep.spacing_rho.clone()
    } else {
        config.sweep.snr_db.clone()
    };

    let mut rmse = Vec::with_capacity(points.len());
    for (point_idx, &point) in points.iter().enumerate() {
        let (spacing_m, snr_db) = if spacing_axis {
            (point * rho_s, config.sweep.fixed_snr_db)
        } else {
            (config.sweep.fixed_spacing_rho * rho_s, point)
        };
        let mut row = Vec::with_capacity(arrays.len());
        for resolved in arrays {
            let trials: Result<Vec<TrialRecord>> = (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = derive_seed(
                        config.seed,
                        &[
                            b"trial",
                            resolved.name.as_bytes(),
                            &(point_idx as u64).to_le_bytes(),
                            &(trial as u64).to_le_bytes(),
                        ],
                    );
                    two_scatterer_trial(resolved, config, grid, spacing_m, snr_db, seed)
                })
                .collect();
            row.push(rmse_report(&trials?)?);
        }
        rmse.push(row);
    }
    Ok(SweepRecords {
        axis_name: if spacing_axis {
            "spacing_rho".into()
        } else {
            "snr_db".into()
        },
        points,
        array_names: arrays.iter().map(|a| a.name.clone()).collect(),
        rmse,
    })
}

fn scene_for(config: &ExperimentConfig, rho_s: f64) -> Result<SceneSpec> {
    if let Some(path) = &config.scene.file {
        return load_scene(path);
    }
    facade_scene(
        config.scene.rows,
        config.scene.cols,
        rho_s,
        SceneGeometry {
            wavelength_m: config.geometry.wavelength_m(),
            slant_range_m: config.geometry.slant_range_m,
            unit_spacing_m: config.geometry.unit_spacing_m,
        },
        config.scene.pixel_spacing_m,
    )
}

fn cloud_centroid_xy(cloud: &PowerCloud) -> CloudPoint {
    let n = cloud.len().max(1) as f64;
    let (sx, sy) = cloud
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (p, _)| (sx + p.x, sy + p.y));
    CloudPoint::new(sx / n, sy / n, 0.0)
}

fn sd_for(cloud: &PowerCloud, center: &CloudPoint, config: &ExperimentConfig) -> Option<SdReport> {
    let points: Vec<CloudPoint> = cloud.iter().map(|(p, _)| *p).collect();
    sd_report(
        &points,
        center,
        config.scene.sd_cyl_radius_m,
        config.scene.sd_inlier_dist_m,
    )
    .ok()
}

fn run_scene(
    config: &ExperimentConfig,
    grid: &ElevationGrid,
    arrays: &[ResolvedArray],
    rho_s: f64,
) -> Result<SceneRecords> {
    let scene = scene_for(config, rho_s)?;
    let delta = scene.pixel_spacing_m;
    let pixels: Vec<(&(u32, u32), &Vec<Scatterer>)> = scene
        .pixels
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .collect();
    if pixels.is_empty() {
        return Err(Error::ConfigError("scene has no scatterers".into()));
    }

    let truth_cloud: PowerCloud = pixels
        .iter()
        .flat_map(|(&(row, col), scatterers)| {
            scatterers.iter().map(move |s| {
                (
                    CloudPoint::new(row as f64 * delta, col as f64 * delta, s.elevation_m),
                    s.power,
                )
            })
        })
        .collect();

    let snr_db = config.sweep.fixed_snr_db;
    let mut rmse = Vec::with_capacity(arrays.len());
    let mut estimate_clouds = Vec::with_capacity(arrays.len());
    for resolved in arrays {
        let per_pixel: Result<Vec<(TrialRecord, PowerCloud)>> = pixels
            .par_iter()
            .map(|(&(row, col), scatterers)| {
                let seed = derive_seed(
                    config.seed,
                    &[
                        b"scene",
                        resolved.name.as_bytes(),
                        &row.to_le_bytes(),
                        &col.to_le_bytes(),
                    ],
                );
                let result =
                    reconstruct_pixel(resolved, config, grid, scatterers, snr_db, seed)?;
                let peaks = extract_peaks(&result, grid, scatterers.len())?;
                let estimate = pad_to_k(peaks.peaks, scatterers.len(), grid);
                let cloud: PowerCloud = estimate
                    .iter()
                    .map(|e| {
                        (
                            CloudPoint::new(row as f64 * delta, col as f64 * delta, e.elevation_m),
                            e.power,
                        )
                    })
                    .collect();
                Ok((
                    TrialRecord {
                        truth: truth_estimates(scatterers),
                        estimate,
                        seed,
                    },
                    cloud,
                ))
            })
            .collect();
        let per_pixel = per_pixel?;
        let trials: Vec<TrialRecord> = per_pixel.iter().map(|(t, _)| t.clone()).collect();
        rmse.push(rmse_report(&trials)?);
        estimate_clouds.push(per_pixel.into_iter().flat_map(|(_, c)| c).collect());
    }

    let sd_center = cloud_centroid_xy(&truth_cloud);
    let sd_truth = sd_for(&truth_cloud, &sd_center, config);
    let sd_estimates = estimate_clouds
        .iter()
        .map(|c| sd_for(c, &sd_center, config))
        .collect();
    Ok(SceneRecords {
        array_names: arrays.iter().map(|a| a.name.clone()).collect(),
        rmse,
        truth_cloud,
        estimate_clouds,
        sd_truth,
        sd_estimates,
        sd_center,
    })
}

fn run_single_pixel(
    config: &ExperimentConfig,
    grid: &ElevationGrid,
    arrays: &[ResolvedArray],
    rho_s: f64,
) -> Result<ProfileRecords> {
    let spacing_m = config.sweep.fixed_spacing_rho * rho_s;
    let half = spacing_m / 2.0;
    let scatterers = [Scatterer::new(-half, 1.0)?, Scatterer::new(half, 1.0)?];
    let mut profiles = Vec::with_capacity(arrays.len());
    let mut noise_power = Vec::with_capacity(arrays.len());
    let mut peaks = Vec::with_capacity(arrays.len());
    for resolved in arrays {
        let seed = derive_seed(config.seed, &[b"single", resolved.name.as_bytes()]);
        let result = reconstruct_pixel(
            resolved,
            config,
            grid,
            &scatterers,
            config.sweep.fixed_snr_db,
            seed,
        )?;
        let extraction = extract_peaks(&result, grid, scatterers.len())?;
        profiles.push(result.profile);
        noise_power.push(result.noise_power);
        peaks.push(extraction.peaks);
    }
    Ok(ProfileRecords {
        array_names: arrays.iter().map(|a| a.name.clone()).collect(),
        grid: grid.clone(),
        profiles,
        noise_power,
        peaks,
    })
}

/// A finished run: records in memory plus the manifest written to disk.
pub struct RunOutput {
    pub manifest: RunManifest,
    pub records: ExperimentRecords,
}

/// Run an experiment end to end: validate, simulate, reconstruct, score,
/// write outputs, and record the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let rho_s = config.geometry.rho_s()?;
    log::info!(
        "reference elevation resolution: {rho_s:.4} m (aperture {} x {} m)",
        config.geometry.reference_aperture_units,
        config.geometry.unit_spacing_m
    );
    let grid = ElevationGrid::symmetric(
        0.0,
        config.grid.spacing_rho * rho_s,
        config.grid.half_count(),
    )?;
    let arrays = resolve_arrays(config, &grid)?;

    let records = match config.kind {
        ExperimentKind::SpacingSweep | ExperimentKind::SnrSweep => {
            ExperimentRecords::Sweep(run_sweep(config, &grid, &arrays, rho_s)?)
        }
        ExperimentKind::PointcloudScene => {
            ExperimentRecords::Scene(run_scene(config, &grid, &arrays, rho_s)?)
        }
        ExperimentKind::SinglePixel => {
            ExperimentRecords::Profiles(run_single_pixel(config, &grid, &arrays, rho_s)?)
        }
    };

    let paths = emit_outputs(&records, &config.output_dir)?;
    let outputs = checksum_outputs(&paths, &config.output_dir)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs,
        config: config.clone(),
    };
    write_manifest(&manifest, &config.output_dir)?;
    Ok(RunOutput { manifest, records })
}
