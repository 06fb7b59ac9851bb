//! Shared fixtures for the pipeline benchmarks.

use tomosar_core::geometry::{difference_coarray, nested_array, ArrayConfig, CoArray};
use tomosar_core::model::{
    build_steering_matrix, coarray_manifold, CoArrayManifold, ElevationGrid, ImagingGeometry,
    SteeringMatrix,
};
use tomosar_core::simulate::{simulate_snapshots, AmplitudeMode, Scatterer, SnapshotStack};

/// Reference Ku-band geometry over the nested(4,2) layout with the default
/// 121-cell grid, plus one simulated 11x11-window snapshot stack.
pub struct Fixture {
    pub array: ArrayConfig,
    pub geometry: ImagingGeometry,
    pub grid: ElevationGrid,
    pub phi: SteeringMatrix,
    pub coarray: CoArray,
    pub manifold: CoArrayManifold,
    pub stack: SnapshotStack,
    pub rho: f64,
}

impl Fixture {
    pub fn new() -> Self {
        let array = nested_array(4, 2, 0.08).unwrap();
        let wavelength = 299_792_458.0 / 14.25e9;
        let rho = wavelength * 1220.0 / (2.0 * 9.0 * 0.08);
        let geometry = ImagingGeometry::new(wavelength, 1220.0, array.baselines_m()).unwrap();
        let grid = ElevationGrid::symmetric(0.0, 0.05 * rho, 60).unwrap();
        let phi = build_steering_matrix(&geometry, &grid);
        let coarray = difference_coarray(&array);
        let manifold = coarray_manifold(&phi, &coarray).unwrap();
        let scatterers = [
            Scatterer::new(-0.4 * rho, 1.0).unwrap(),
            Scatterer::new(0.4 * rho, 1.0).unwrap(),
        ];
        let stack = simulate_snapshots(
            &geometry,
            &scatterers,
            121,
            20.0,
            42,
            AmplitudeMode::Stochastic,
        )
        .unwrap();
        Self {
            array,
            geometry,
            grid,
            phi,
            coarray,
            manifold,
            stack,
            rho,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
