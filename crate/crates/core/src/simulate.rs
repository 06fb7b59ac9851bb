//! Synthetic multi-channel snapshot generation under the
//! uncorrelated-scatterer model.
//!
//! Each snapshot is `y = sum_k a_k * phi(s_k) + n` with scatterer amplitudes
//! `a_k` drawn i.i.d. circular complex Gaussian of variance `p_k` (stochastic
//! mode), so the population covariance is exactly
//! `Phi diag(p) Phi^H + sigma^2 I`. Noise power is set from the configured
//! SNR as total signal power over per-channel noise variance. Everything is
//! seeded: identical inputs and seed give bit-identical snapshots, and
//! per-pixel seeds are derived so scene generation order never matters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ImagingGeometry;
use crate::C64;

/// A point target at a given elevation with average power `p = |gamma|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub elevation_m: f64,
    pub power: f64,
}

impl Scatterer {
    pub fn new(elevation_m: f64, power: f64) -> Result<Self> {
        if !(power >= 0.0) || !power.is_finite() {
            return Err(Error::invalid(format!(
                "scatterer power must be non-negative, got {power}"
            )));
        }
        if !elevation_m.is_finite() {
            return Err(Error::invalid("scatterer elevation must be finite"));
        }
        Ok(Self { elevation_m, power })
    }
}

/// Scene-level acquisition parameters shared by every pixel. Baselines come
/// from the array under test, so they are not part of the scene itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub wavelength_m: f64,
    pub slant_range_m: f64,
    pub unit_spacing_m: f64,
}

/// A multi-pixel scene: per-pixel scatterer lists on a (range, azimuth) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: SceneGeometry,
    pub rows: u32,
    pub cols: u32,
    /// Ground-plane spacing between adjacent pixels, used when exporting
    /// point clouds.
    pub pixel_spacing_m: f64,
    pub pixels: BTreeMap<(u32, u32), Vec<Scatterer>>,
}

impl SceneSpec {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    /// Total number of scatterers across all pixels.
    pub fn scatterer_count(&self) -> usize {
        self.pixels.values().map(|v| v.len()).sum()
    }
}

/// How scatterer amplitudes are drawn per snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeMode {
    /// i.i.d. circular complex Gaussian with variance `p_k` per snapshot.
    Stochastic,
    /// Fixed real amplitude `sqrt(p_k)` in every snapshot (unit tests).
    Deterministic,
}

/// A stack of independent snapshot realizations for one pixel neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStack {
    /// `n_snapshots x channels`; each row is one realization.
    pub snapshots: DMatrix<C64>,
    pub snr_db: f64,
    pub seed: u64,
}

impl SnapshotStack {
    pub fn n_snapshots(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.snapshots.ncols()
    }

    /// Snapshot `i` as a column vector.
    pub fn snapshot(&self, i: usize) -> DVector<C64> {
        self.snapshots.row(i).transpose()
    }
}

/// Derive a child seed from a master seed and a list of tag byte strings.
///
/// The derivation is a SHA-256 digest over the length-prefixed tags, so it is
/// stable across platforms and insensitive to generation order.
pub fn derive_seed(master: u64, tags: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for tag in tags {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn noise_variance(total_power: f64, snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR must not be NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("SNR of -inf implies infinite noise power"));
    }
    Ok(total_power * 10f64.powf(-snr_db / 10.0))
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// Generate `n_snapshots` independent realizations of one pixel.
pub fn simulate_snapshots(
    geometry: &ImagingGeometry,
    scatterers: &[Scatterer],
    n_snapshots: usize,
    snr_db: f64,
    seed: u64,
    amplitude_mode: AmplitudeMode,
) -> Result<SnapshotStack> {
    if n_snapshots == 0 {
        return Err(Error::invalid("need at least one snapshot"));
    }
    for s in scatterers {
        if !(s.power >= 0.0) {
            return Err(Error::invalid("scatterer power must be non-negative"));
        }
    }
    let total_power: f64 = scatterers.iter().map(|s| s.power).sum();
    let sigma2 = noise_variance(total_power, snr_db)?;

    let m = geometry.channel_count();
    let steering: Vec<DVector<C64>> = scatterers
        .iter()
        .map(|s| geometry.steering_vector(s.elevation_m))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut snapshots = DMatrix::<C64>::zeros(n_snapshots, m);
    for row in 0..n_snapshots {
        for (k, s) in scatterers.iter().enumerate() {
            let amp = match amplitude_mode {
                AmplitudeMode::Stochastic => complex_gaussian(&mut rng, s.power),
                AmplitudeMode::Deterministic => C64::new(s.power.sqrt(), 0.0),
            };
            for ch in 0..m {
                snapshots[(row, ch)] += amp * steering[k][ch];
            }
        }
        if sigma2 > 0.0 {
            for ch in 0..m {
                snapshots[(row, ch)] += complex_gaussian(&mut rng, sigma2);
            }
        }
    }
    Ok(SnapshotStack {
        snapshots,
        snr_db,
        seed,
    })
}

/// Generate per-pixel snapshot stacks for a whole scene.
///
/// Every pixel receives `window^2` independent snapshots of its own scatterer
/// configuration (the homogeneous-neighborhood idealization). Pixel seeds are
/// derived from `(seed, row, col)`, so results do not depend on iteration or
/// scheduling order.
pub fn simulate_scene(
    geometry: &ImagingGeometry,
    scene: &SceneSpec,
    window: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<((u32, u32), SnapshotStack)>> {
    if scene.pixels.is_empty() {
        return Err(Error::invalid("scene contains no pixels"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "window size must be a positive odd integer, got {window}"
        )));
    }
    let n_snapshots = window * window;
    if n_snapshots < geometry.channel_count() {
        log::warn!(
            "window^2 = {n_snapshots} is below the channel count {}; covariance estimates will be rank deficient",
            geometry.channel_count()
        );
    }
    scene
        .pixels
        .iter()
        .map(|(&(row, col), scatterers)| {
            let pixel_seed = derive_seed(
                seed,
                &[b"pixel", &row.to_le_bytes(), &col.to_le_bytes()],
            );
            simulate_snapshots(
                geometry,
                scatterers,
                n_snapshots,
                snr_db,
                pixel_seed,
                AmplitudeMode::Stochastic,
            )
            .map(|stack| ((row, col), stack))
        })
        .collect()
}

/// Building-facade scene template on a `rows x cols` grid.
///
/// A central building block sits on a flat ground plane. Front-of-building
/// pixels contain the classic layover pair (ground at 0 plus a facade point
/// whose height ramps up with range), the back of the block is roof-only,
/// and everything else is bare ground. Heights are expressed in units of the
/// elevation resolution `rho_m` so the same template stresses any geometry.
pub fn facade_scene(
    rows: u32,
    cols: u32,
    rho_m: f64,
    geometry: SceneGeometry,
    pixel_spacing_m: f64,
) -> Result<SceneSpec> {
    if rows < 5 || cols < 5 {
        return Err(Error::invalid("facade scene needs at least a 5x5 grid"));
    }
    if !(rho_m > 0.0) {
        return Err(Error::invalid("resolution must be positive"));
    }
    let r0 = rows / 5;
    let r1 = rows - rows / 5;
    let c0 = cols / 5;
    let c1 = cols - cols / 5;
    let facade_rows = (r1 - r0) * 2 / 3;
    let min_h = 0.55 * rho_m;
    let max_h = 1.05 * rho_m;

    let mut pixels = BTreeMap::new();
    for row in 0..rows {
        for col in 0..cols {
            let in_block = row >= r0 && row < r1 && col >= c0 && col < c1;
            let scatterers = if in_block && row < r0 + facade_rows {
                // Layover: ground plus a facade point climbing with range.
                let t = (row - r0) as f64 / (facade_rows.max(1) as f64 - 1.0).max(1.0);
                let h = min_h + t * (max_h - min_h);
                vec![Scatterer::new(0.0, 1.0)?, Scatterer::new(h, 1.0)?]
            } else if in_block {
                vec![Scatterer::new(max_h, 1.0)?]
            } else {
                vec![Scatterer::new(0.0, 1.0)?]
            };
            pixels.insert((row, col), scatterers);
        }
    }
    Ok(SceneSpec {
        geometry,
        rows,
        cols,
        pixel_spacing_m,
        pixels,
    })
}
