//! Subcommand implementations.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use tomosar_core::covariance::{
    adaptive_pipeline, sample_covariance, vectorize_and_select, AdaptiveParams, PixelField,
};
use tomosar_core::geometry::{
    coprime_array, custom_array, difference_coarray, nested_array, uniform_array, ArrayConfig,
};
use tomosar_core::harness::{
    self, fmt_sig9, CovariancePipeline, ExperimentConfig, ExperimentKind, ExperimentRecords,
    ReconstructionMethod,
};
use tomosar_core::harness::experiment::{resolve_arrays, run_experiment, ResolvedArray};
use tomosar_core::metrics::{sd_report, CloudPoint};
use tomosar_core::model::ElevationGrid;
use tomosar_core::recover::{
    default_l1_alpha, extract_peaks, solve_coarray_omp, solve_direct_l1, whiten_by_multiplicity,
    OmpStop, ReconstructionResult,
};
use tomosar_core::simulate::{simulate_scene, simulate_snapshots, AmplitudeMode, Scatterer};
use tomosar_core::ArrayKind;

#[derive(Subcommand)]
pub enum ArrayCommand {
    /// Print positions, co-array lags, holes, DoF, and aperture.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct InspectArgs {
    /// Layout family: uniform, coprime, nested, or custom.
    #[arg(long)]
    kind: String,
    /// Element count (uniform).
    #[arg(long)]
    elements: Option<u32>,
    /// Subarray-1 size (coprime/nested).
    #[arg(long)]
    m1: Option<u32>,
    /// Subarray-2 size (coprime/nested).
    #[arg(long)]
    m2: Option<u32>,
    /// Comma-separated positions in units of d (custom).
    #[arg(long)]
    positions: Option<String>,
    /// Unit spacing d in meters.
    #[arg(long, default_value_t = 0.08)]
    spacing: f64,
    /// Also write the lag table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn build_array(args: &InspectArgs) -> Result<ArrayConfig> {
    let array = match args.kind.as_str() {
        "uniform" => uniform_array(
            args.elements.context("uniform needs --elements")?,
            args.spacing,
        )?,
        "coprime" => coprime_array(
            args.m1.context("coprime needs --m1")?,
            args.m2.context("coprime needs --m2")?,
            args.spacing,
        )?,
        "nested" => nested_array(
            args.m1.context("nested needs --m1")?,
            args.m2.context("nested needs --m2")?,
            args.spacing,
        )?,
        "custom" => {
            let text = args.positions.as_ref().context("custom needs --positions")?;
            let positions: Vec<i64> = text
                .split(',')
                .map(|s| s.trim().parse::<i64>().context("bad position"))
                .collect::<Result<_>>()?;
            custom_array(positions, args.spacing)?
        }
        other => bail!("unknown array kind '{other}'"),
    };
    Ok(array)
}

pub fn run_array(cmd: ArrayCommand) -> Result<()> {
    let ArrayCommand::Inspect(args) = cmd;
    let array = build_array(&args)?;
    let coarray = difference_coarray(&array);

    let join = |v: &[i64]| {
        v.iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("kind:              {}", array.kind);
    if array.kind == ArrayKind::Coprime || array.kind == ArrayKind::Nested {
        println!("subarrays:         m1 = {}, m2 = {}", array.m1, array.m2);
    }
    println!("unit spacing:      {} m", array.unit_spacing_m);
    println!("elements:          {}", array.element_count());
    println!("positions (d):     {}", join(&array.positions));
    println!("unit-shifted (d):  {}", join(&array.positions_unit_shifted()));
    println!("aperture:          {} d", array.aperture_units());
    println!("co-array dof:      {}", coarray.dof);
    println!("co-array span:     {} d", coarray.aperture_units);
    println!("lags (d):          {}", join(&coarray.lags));
    if coarray.holes.is_empty() {
        println!("holes:             none (hole-free)");
    } else {
        println!("holes:             {}", join(&coarray.holes));
    }

    if let Some(path) = args.csv {
        let min = *coarray.lags.first().unwrap();
        let max = *coarray.lags.last().unwrap();
        let mut text = String::from("lag,multiplicity,is_hole\n");
        for lag in min..=max {
            let mult = coarray.multiplicity.get(&lag).copied().unwrap_or(0);
            let hole = mult == 0;
            text.push_str(&format!("{lag},{mult},{hole}\n"));
        }
        std::fs::write(&path, text)?;
        println!("lag table written to {}", path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output snapshot container path.
    #[arg(long)]
    out: PathBuf,
    /// Array name from the config (default: first).
    #[arg(long)]
    array: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn pick_array<'a>(arrays: &'a [ResolvedArray], name: &Option<String>) -> Result<&'a ResolvedArray> {
    match name {
        None => arrays.first().context("config lists no arrays"),
        Some(n) => arrays
            .iter()
            .find(|a| &a.name == n)
            .with_context(|| format!("array '{n}' not found in config")),
    }
}

fn grid_for(config: &ExperimentConfig) -> Result<ElevationGrid> {
    let rho = config.geometry.rho_s()?;
    Ok(ElevationGrid::symmetric(
        0.0,
        config.grid.spacing_rho * rho,
        config.grid.half_count(),
    )?)
}

pub fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let grid = grid_for(&config)?;
    let arrays = resolve_arrays(&config, &grid)?;
    let resolved = pick_array(&arrays, &args.array)?;
    let rho = config.geometry.rho_s()?;

    let stacks = if config.kind == ExperimentKind::PointcloudScene {
        let scene = match &config.scene.file {
            Some(path) => harness::load_scene(path)?,
            None => tomosar_core::simulate::facade_scene(
                config.scene.rows,
                config.scene.cols,
                rho,
                tomosar_core::simulate::SceneGeometry {
                    wavelength_m: config.geometry.wavelength_m(),
                    slant_range_m: config.geometry.slant_range_m,
                    unit_spacing_m: config.geometry.unit_spacing_m,
                },
                config.scene.pixel_spacing_m,
            )?,
        };
        simulate_scene(
            &resolved.geometry,
            &scene,
            config.window,
            config.sweep.fixed_snr_db,
            config.seed,
        )?
    } else {
        let spacing = config.sweep.fixed_spacing_rho * rho;
        let scatterers = [
            Scatterer::new(-spacing / 2.0, 1.0)?,
            Scatterer::new(spacing / 2.0, 1.0)?,
        ];
        let stack = simulate_snapshots(
            &resolved.geometry,
            &scatterers,
            config.window * config.window,
            config.sweep.fixed_snr_db,
            config.seed,
            AmplitudeMode::Stochastic,
        )?;
        vec![((0, 0), stack)]
    };

    harness::write_snapshot_container(&args.out, &stacks)?;
    println!(
        "wrote {} snapshot stack(s) for array '{}' to {}",
        stacks.len(),
        resolved.name,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Snapshot container produced by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Array name from the config (default: first).
    #[arg(long)]
    array: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Request exactly this many signal atoms instead of the residual stop.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Dump the co-array manifold as CSV (columns: row_lag,col,re,im).
    #[arg(long)]
    dump_manifold: Option<PathBuf>,
    /// Dump per-pixel covariance matrices as CSV (pixel_row,pixel_col,i,j,re,im).
    #[arg(long)]
    dump_covariance: Option<PathBuf>,
}

fn reconstruct_stack(
    resolved: &ResolvedArray,
    config: &ExperimentConfig,
    stack: &tomosar_core::simulate::SnapshotStack,
    sparsity: Option<usize>,
    covariance_dump: &mut Option<String>,
    pixel: (u32, u32),
) -> Result<ReconstructionResult> {
    let solver = &config.solver;
    match resolved.method {
        ReconstructionMethod::CoarrayOmp => {
            let cov = match solver.pipeline {
                CovariancePipeline::Plain => sample_covariance(stack, 0.0)?,
                CovariancePipeline::Adaptive => {
                    let field = PixelField::from_stack(stack, config.window, config.window)?;
                    let params = AdaptiveParams {
                        nu: solver.nu,
                        epsilon: solver.epsilon,
                        max_iter: solver.m_estimator_max_iter,
                        tau_log: solver.tau_log,
                        loading_rel: solver.loading_rel,
                    };
                    adaptive_pipeline(
                        &field,
                        (config.window / 2, config.window / 2),
                        config.window,
                        &params,
                    )?
                    .0
                }
            };
            if let Some(buf) = covariance_dump {
                for i in 0..cov.dim() {
                    for j in 0..cov.dim() {
                        let v = cov.matrix[(i, j)];
                        buf.push_str(&format!(
                            "{},{},{i},{j},{},{}\n",
                            pixel.0,
                            pixel.1,
                            fmt_sig9(v.re),
                            fmt_sig9(v.im)
                        ));
                    }
                }
            }
            let zbar = vectorize_and_select(&cov, &resolved.coarray)?;
            let stop = match sparsity {
                Some(k) => OmpStop::Sparsity(k),
                None => OmpStop::ResidualTol(solver.residual_tol),
            };
            if solver.lag_weight_exponent > 0.0 {
                let (manifold, z) = whiten_by_multiplicity(
                    &resolved.manifold,
                    &resolved.coarray,
                    &zbar,
                    solver.lag_weight_exponent,
                )?;
                Ok(solve_coarray_omp(&z, &manifold, stop)?)
            } else {
                Ok(solve_coarray_omp(&zbar, &resolved.manifold, stop)?)
            }
        }
        ReconstructionMethod::DirectL1 => {
            let y = stack.snapshot(0);
            let alpha = default_l1_alpha(&y, &resolved.phi, solver.l1_alpha_scale);
            Ok(solve_direct_l1(
                &y,
                &resolved.phi,
                alpha.max(1e-12),
                solver.l1_max_iter,
                solver.l1_tol,
            )?)
        }
    }
}

pub fn run_reconstruct(args: ReconstructArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let grid = grid_for(&config)?;
    let arrays = resolve_arrays(&config, &grid)?;
    let resolved = pick_array(&arrays, &args.array)?;
    let stacks = harness::read_snapshot_container(&args.input)?;
    if stacks.is_empty() {
        bail!("container holds no snapshot stacks");
    }
    std::fs::create_dir_all(&args.out)?;

    if let Some(path) = &args.dump_manifold {
        let mut text = String::from("row_lag,col,re,im\n");
        for (row, &lag) in resolved.manifold.lags.iter().enumerate() {
            for col in 0..resolved.manifold.entries.ncols() {
                let v = resolved.manifold.entries[(row, col)];
                let label = if col == resolved.manifold.noise_column() {
                    "noise".to_string()
                } else {
                    col.to_string()
                };
                text.push_str(&format!(
                    "{lag},{label},{},{}\n",
                    fmt_sig9(v.re),
                    fmt_sig9(v.im)
                ));
            }
        }
        std::fs::write(path, text)?;
    }

    let mut covariance_dump = args
        .dump_covariance
        .as_ref()
        .map(|_| String::from("pixel_row,pixel_col,i,j,re,im\n"));

    let spacing = config.scene.pixel_spacing_m;
    let mut cloud = String::new();
    let few = stacks.len() <= 4;
    for ((row, col), stack) in &stacks {
        let result = reconstruct_stack(
            resolved,
            &config,
            stack,
            args.sparsity,
            &mut covariance_dump,
            (*row, *col),
        )?;
        let extraction = extract_peaks(&result, &grid, grid.len())?;
        for peak in &extraction.peaks {
            cloud.push_str(&format!(
                "{} {} {} {}\n",
                fmt_sig9(*row as f64 * spacing),
                fmt_sig9(*col as f64 * spacing),
                fmt_sig9(peak.elevation_m),
                fmt_sig9(peak.power)
            ));
        }
        if few {
            let mut text = String::from("elevation_m,value\n");
            for (s, v) in grid.samples_m.iter().zip(&result.profile) {
                text.push_str(&format!("{},{}\n", fmt_sig9(*s), fmt_sig9(*v)));
            }
            let path = args
                .out
                .join(format!("profile_{}_{row}_{col}.csv", resolved.name));
            std::fs::write(path, text)?;
        }
    }
    let cloud_path = args.out.join(format!("reconstruct_{}.xyz", resolved.name));
    std::fs::write(&cloud_path, cloud)?;
    if let (Some(path), Some(buf)) = (&args.dump_covariance, covariance_dump) {
        std::fs::write(path, buf)?;
    }
    println!(
        "reconstructed {} stack(s) with array '{}'; cloud at {}",
        stacks.len(),
        resolved.name,
        cloud_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        config.kind = kind;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(threads) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .ok();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
pub enum SweepCommand {
    /// RMSE versus scatterer spacing.
    Spacing(RunArgs),
    /// RMSE versus SNR at fixed spacing.
    Snr(RunArgs),
}

#[derive(Subcommand)]
pub enum SceneCommand {
    /// Simulate and reconstruct a multi-pixel scene.
    Run(RunArgs),
}

fn print_run_summary(records: &ExperimentRecords) {
    match records {
        ExperimentRecords::Sweep(sweep) => {
            print!("{:>12}", sweep.axis_name);
            for name in &sweep.array_names {
                print!("  {name:>22}");
            }
            println!();
            for (point, row) in sweep.points.iter().zip(&sweep.rmse) {
                print!("{point:>12.4}");
                for report in row {
                    print!("  {:>10.4}/{:<11.4}", report.rmse_h, report.rmse_a);
                }
                println!();
            }
            println!("(cells are rmse_h/rmse_a)");
        }
        ExperimentRecords::Scene(scene) => {
            println!(
                "{:>14} {:>10} {:>10} {:>10} {:>10}",
                "array", "rmse_h", "rmse_a", "s_de", "s_di"
            );
            for (i, name) in scene.array_names.iter().enumerate() {
                let (sde, sdi) = scene.sd_estimates[i]
                    .map(|r| (format!("{:.4}", r.s_de), format!("{:.4}", r.s_di)))
                    .unwrap_or(("-".into(), "-".into()));
                println!(
                    "{name:>14} {:>10.4} {:>10.4} {sde:>10} {sdi:>10}",
                    scene.rmse[i].rmse_h, scene.rmse[i].rmse_a
                );
            }
        }
        ExperimentRecords::Profiles(p) => {
            for (i, name) in p.array_names.iter().enumerate() {
                println!(
                    "array {name}: {} peaks, noise power {:.6}",
                    p.peaks[i].len(),
                    p.noise_power[i]
                );
            }
        }
    }
}

fn execute(config: &ExperimentConfig) -> Result<()> {
    let output = run_experiment(config)?;
    print_run_summary(&output.records);
    println!(
        "outputs in {} ({} file(s), manifest.json)",
        config.output_dir.display(),
        output.manifest.outputs.len()
    );
    Ok(())
}

pub fn run_sweep(cmd: SweepCommand) -> Result<()> {
    let config = match &cmd {
        SweepCommand::Spacing(args) => args.load(ExperimentKind::SpacingSweep)?,
        SweepCommand::Snr(args) => args.load(ExperimentKind::SnrSweep)?,
    };
    execute(&config)
}

pub fn run_scene(cmd: SceneCommand) -> Result<()> {
    let SceneCommand::Run(args) = cmd;
    let config = args.load(ExperimentKind::PointcloudScene)?;
    execute(&config)
}

#[derive(Subcommand)]
pub enum MetricsCommand {
    /// Scatterer density and dispersion around the robust principal axis.
    Sd(SdArgs),
}

#[derive(Args)]
pub struct SdArgs {
    /// Point cloud file (`x y z [power]` per line).
    #[arg(long)]
    cloud: PathBuf,
    /// Cylinder center as `x,y,z`.
    #[arg(long)]
    center: String,
    /// Cylinder radius in meters.
    #[arg(long)]
    radius: f64,
    /// Inlier band half-width in meters.
    #[arg(long)]
    inlier_dist: f64,
}

pub fn run_metrics(cmd: MetricsCommand) -> Result<()> {
    let MetricsCommand::Sd(args) = cmd;
    let cloud = harness::read_xyz(&args.cloud)?;
    let points: Vec<CloudPoint> = cloud.iter().map(|(p, _)| *p).collect();
    let fields: Vec<f64> = args
        .center
        .split(',')
        .map(|s| s.trim().parse::<f64>().context("bad center coordinate"))
        .collect::<Result<_>>()?;
    if fields.len() != 3 {
        bail!("--center needs exactly x,y,z");
    }
    let center = CloudPoint::new(fields[0], fields[1], fields[2]);
    let report = sd_report(&points, &center, args.radius, args.inlier_dist)?;
    println!("points in cloud:   {}", points.len());
    println!("inliers:           {}", report.inlier_count);
    println!("density  s_de:     {:.6} per m^2", report.s_de);
    println!("dispersion s_di:   {:.6} m", report.s_di);
    Ok(())
}

#[derive(Subcommand)]
pub enum ConfigCommand {
    /// Write a reference configuration for the given experiment kind.
    Init(InitArgs),
}

#[derive(Args)]
pub struct InitArgs {
    /// spacing_sweep, snr_sweep, pointcloud_scene, or single_pixel.
    #[arg(long, default_value = "spacing_sweep")]
    kind: String,
    /// Destination path.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_config(cmd: ConfigCommand) -> Result<()> {
    let ConfigCommand::Init(args) = cmd;
    let kind = match args.kind.as_str() {
        "spacing_sweep" => ExperimentKind::SpacingSweep,
        "snr_sweep" => ExperimentKind::SnrSweep,
        "pointcloud_scene" => ExperimentKind::PointcloudScene,
        "single_pixel" => ExperimentKind::SinglePixel,
        other => bail!("unknown experiment kind '{other}'"),
    };
    let config = ExperimentConfig::reference(kind);
    config.save(&args.out)?;
    println!("reference config written to {}", args.out.display());
    Ok(())
}
