//! TomoSAR forward model: steering matrices and co-array manifolds.
//!
//! An elevation profile `gamma` on a grid `s_1..s_L` maps to the M-channel
//! measurement `y = Phi * gamma + noise`, where `Phi(m, l) =
//! exp(j * 4*pi * b_m * s_l / (lambda * r))`. The Khatri-Rao expansion of
//! `Phi` lifts the model to the covariance domain, where rows correspond to
//! baseline differences instead of baselines; deduplicating rows by lag
//! yields the co-array manifold used by the covariance-domain solver.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::CoArray;
use crate::C64;

/// Acquisition geometry: wavelength, slant range, and baseline positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingGeometry {
    pub wavelength_m: f64,
    pub slant_range_m: f64,
    /// Baseline positions in meters, sorted ascending.
    pub baselines_m: Vec<f64>,
}

impl ImagingGeometry {
    pub fn new(wavelength_m: f64, slant_range_m: f64, baselines_m: Vec<f64>) -> Result<Self> {
        if !(wavelength_m > 0.0) || !(slant_range_m > 0.0) {
            return Err(Error::invalid(format!(
                "wavelength and slant range must be positive, got ({wavelength_m}, {slant_range_m})"
            )));
        }
        if baselines_m.is_empty() {
            return Err(Error::invalid("geometry needs at least one baseline"));
        }
        if baselines_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("baselines must be strictly increasing"));
        }
        Ok(Self {
            wavelength_m,
            slant_range_m,
            baselines_m,
        })
    }

    /// Number of channels.
    pub fn channel_count(&self) -> usize {
        self.baselines_m.len()
    }

    /// Phase accrued by baseline `b_m` for a scatterer at elevation `s`.
    #[inline]
    pub fn phase(&self, baseline_m: f64, elevation_m: f64) -> f64 {
        4.0 * PI * baseline_m * elevation_m / (self.wavelength_m * self.slant_range_m)
    }

    /// Steering vector for a single (possibly off-grid) elevation.
    pub fn steering_vector(&self, elevation_m: f64) -> DVector<C64> {
        DVector::from_iterator(
            self.baselines_m.len(),
            self.baselines_m
                .iter()
                .map(|&b| C64::from_polar(1.0, self.phase(b, elevation_m))),
        )
    }
}

/// Uniformly spaced elevation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub samples_m: Vec<f64>,
    pub spacing_m: f64,
}

impl ElevationGrid {
    /// Build from explicit samples, checking uniform spacing.
    pub fn new(samples_m: Vec<f64>) -> Result<Self> {
        if samples_m.len() < 2 {
            return Err(Error::invalid("elevation grid needs at least 2 samples"));
        }
        let spacing = samples_m[1] - samples_m[0];
        if !(spacing > 0.0) {
            return Err(Error::invalid("grid samples must be strictly increasing"));
        }
        for w in samples_m.windows(2) {
            let step = w[1] - w[0];
            if (step - spacing).abs() > 1e-12 * spacing.abs() {
                return Err(Error::invalid(format!(
                    "grid spacing not uniform: {step} vs {spacing}"
                )));
            }
        }
        Ok(Self {
            samples_m,
            spacing_m: spacing,
        })
    }

    /// Symmetric grid of `2 * half_count + 1` samples around `center_m`.
    pub fn symmetric(center_m: f64, spacing_m: f64, half_count: usize) -> Result<Self> {
        if !(spacing_m > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        if half_count == 0 {
            return Err(Error::invalid("grid needs half_count >= 1"));
        }
        let n = 2 * half_count + 1;
        let samples = (0..n)
            .map(|k| center_m + (k as f64 - half_count as f64) * spacing_m)
            .collect();
        Ok(Self {
            samples_m: samples,
            spacing_m,
        })
    }

    /// Default reconstruction grid for a scene: spacing `rho/20`, extent
    /// `+/- 3*rho` around the scene center.
    pub fn default_for_resolution(rho_m: f64, center_m: f64) -> Result<Self> {
        Self::symmetric(center_m, rho_m / 20.0, 60)
    }

    pub fn len(&self) -> usize {
        self.samples_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_m.is_empty()
    }

    /// Index of the grid cell nearest to an elevation.
    pub fn nearest_index(&self, elevation_m: f64) -> usize {
        let rel = (elevation_m - self.samples_m[0]) / self.spacing_m;
        let idx = rel.round() as i64;
        idx.clamp(0, self.samples_m.len() as i64 - 1) as usize
    }
}

/// Classical elevation resolution `lambda * r / (2 * aperture)`.
pub fn rayleigh_resolution(wavelength_m: f64, slant_range_m: f64, aperture_m: f64) -> Result<f64> {
    for (name, v) in [
        ("wavelength", wavelength_m),
        ("slant range", slant_range_m),
        ("aperture", aperture_m),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(wavelength_m * slant_range_m / (2.0 * aperture_m))
}

/// The M x L observation matrix mapping grid reflectivities to channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    pub entries: DMatrix<C64>,
    pub geometry: ImagingGeometry,
    pub grid: ElevationGrid,
}

impl SteeringMatrix {
    pub fn channel_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.entries.ncols()
    }
}

/// Build the steering matrix for a geometry/grid pair.
pub fn build_steering_matrix(geometry: &ImagingGeometry, grid: &ElevationGrid) -> SteeringMatrix {
    let m = geometry.channel_count();
    let l = grid.len();
    let entries = DMatrix::from_fn(m, l, |row, col| {
        C64::from_polar(1.0, geometry.phase(geometry.baselines_m[row], grid.samples_m[col]))
    });
    SteeringMatrix {
        entries,
        geometry: geometry.clone(),
        grid: grid.clone(),
    }
}

/// Khatri-Rao expansion of the steering matrix: column `l` becomes
/// `conj(phi_l) (x) phi_l`, an `M^2`-vector whose entry at `n*M + m` carries
/// the phase of the baseline difference `b_m - b_n`. This equals
/// `vec(phi_l * phi_l^H)` under column stacking.
pub fn khatri_rao_manifold(phi: &SteeringMatrix) -> DMatrix<C64> {
    let m = phi.channel_count();
    let l = phi.grid_len();
    DMatrix::from_fn(m * m, l, |row, col| {
        let outer = row / m; // index into the conjugated copy
        let inner = row % m;
        phi.entries[(outer, col)].conj() * phi.entries[(inner, col)]
    })
}

/// Co-array manifold: one row per distinct lag (sorted ascending), `L`
/// signal columns plus a trailing noise-atom column that is 1 on the lag-0
/// row and 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CoArrayManifold {
    /// `dof x (L + 1)` matrix; the last column is the noise atom.
    pub entries: DMatrix<C64>,
    /// Row index -> lag in units of `d`.
    pub lags: Vec<i64>,
    pub grid: ElevationGrid,
    pub unit_spacing_m: f64,
}

impl CoArrayManifold {
    /// Number of signal (grid) columns, excluding the noise atom.
    pub fn signal_count(&self) -> usize {
        self.entries.ncols() - 1
    }

    /// Column index of the noise atom.
    pub fn noise_column(&self) -> usize {
        self.entries.ncols() - 1
    }

    /// Row index of the zero lag.
    pub fn zero_lag_row(&self) -> usize {
        self.lags
            .binary_search(&0)
            .expect("co-array always contains lag 0")
    }
}

/// Build the co-array manifold from a steering matrix and the matching
/// difference co-array. Rows of the `M^2`-row Khatri-Rao manifold that share
/// a lag are identical, so the deduplicated row is written directly from the
/// lag phase.
pub fn coarray_manifold(phi: &SteeringMatrix, coarray: &CoArray) -> Result<CoArrayManifold> {
    let m = phi.channel_count();
    if coarray.source_positions.len() != m {
        return Err(Error::invalid(format!(
            "co-array derived from {} elements but steering matrix has {m} channels",
            coarray.source_positions.len()
        )));
    }
    let d = coarray.unit_spacing_m;
    for (i, (&pos, &b)) in coarray
        .source_positions
        .iter()
        .zip(&phi.geometry.baselines_m)
        .enumerate()
    {
        let expected = pos as f64 * d;
        if (b - expected).abs() > 1e-9 * d.max(1.0) {
            return Err(Error::invalid(format!(
                "baseline {i} is {b} m but co-array position {pos} implies {expected} m"
            )));
        }
    }

    let l = phi.grid_len();
    let dof = coarray.dof;
    let zero_row = coarray
        .lags
        .binary_search(&0)
        .expect("co-array always contains lag 0");
    let geom = &phi.geometry;
    let entries = DMatrix::from_fn(dof, l + 1, |row, col| {
        if col == l {
            if row == zero_row {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        } else {
            let lag_m = coarray.lags[row] as f64 * d;
            C64::from_polar(1.0, geom.phase(lag_m, phi.grid.samples_m[col]))
        }
    });
    Ok(CoArrayManifold {
        entries,
        lags: coarray.lags.clone(),
        grid: phi.grid.clone(),
        unit_spacing_m: d,
    })
}
