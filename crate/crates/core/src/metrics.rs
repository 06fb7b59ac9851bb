//! Quantitative evaluation: Monte Carlo RMSE of position and amplitude, and
//! point-cloud density/dispersion metrics around a robustly fitted
//! principal axis.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::recover::ScattererEstimate;

/// Truth and estimate lists for one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub truth: Vec<ScattererEstimate>,
    pub estimate: Vec<ScattererEstimate>,
    pub seed: u64,
}

/// Aggregated root-mean-square errors over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseReport {
    /// Position error in elevation units.
    pub rmse_h: f64,
    /// Amplitude (power) error.
    pub rmse_a: f64,
}

/// Largest per-trial cardinality the exhaustive assignment accepts.
const MAX_ASSIGNMENT_SIZE: usize = 5;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    fn heap(n: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(idx.clone());
            return;
        }
        for i in 0..n {
            heap(n - 1, idx, out);
            if n % 2 == 0 {
                idx.swap(i, n - 1);
            } else {
                idx.swap(0, n - 1);
            }
        }
    }
    heap(k, &mut idx, &mut out);
    out
}

/// RMSE of positions and amplitudes with per-trial optimal pairing.
///
/// Within each trial, estimates are matched to truths by the one-to-one
/// assignment minimizing the summed squared elevation error (exhaustive over
/// permutations, which is why trials are capped at 5 scatterers).
pub fn rmse_report(trials: &[TrialRecord]) -> Result<RmseReport> {
    if trials.is_empty() {
        return Err(Error::invalid("need at least one trial"));
    }
    let mut sq_h = 0.0;
    let mut sq_a = 0.0;
    let mut pairs = 0usize;
    for (t, trial) in trials.iter().enumerate() {
        let k = trial.truth.len();
        if k == 0 {
            return Err(Error::invalid(format!("trial {t} has no truth scatterers")));
        }
        if trial.estimate.len() != k {
            return Err(Error::invalid(format!(
                "trial {t}: {} estimates vs {k} truths",
                trial.estimate.len()
            )));
        }
        if k > MAX_ASSIGNMENT_SIZE {
            return Err(Error::invalid(format!(
                "trial {t} has {k} scatterers; exhaustive assignment handles at most {MAX_ASSIGNMENT_SIZE}"
            )));
        }
        let mut best: Option<(f64, &Vec<usize>)> = None;
        let perms = permutations(k);
        for perm in &perms {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let d = trial.estimate[j].elevation_m - trial.truth[i].elevation_m;
                    d * d
                })
                .sum();
            if best.map_or(true, |(c, _)| cost < c) {
                best = Some((cost, perm));
            }
        }
        let (cost_h, perm) = best.expect("at least one permutation");
        sq_h += cost_h;
        for (i, &j) in perm.iter().enumerate() {
            let da = trial.estimate[j].power - trial.truth[i].power;
            sq_a += da * da;
        }
        pairs += k;
    }
    Ok(RmseReport {
        rmse_h: (sq_h / pairs as f64).sqrt(),
        rmse_a: (sq_a / pairs as f64).sqrt(),
    })
}

/// A 3-D point in the common range/azimuth/elevation frame (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CloudPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// A line in space: a point on the line plus a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalAxis {
    pub point: CloudPoint,
    pub direction: Vector3<f64>,
}

impl PrincipalAxis {
    /// Orthogonal distance from a point to the axis.
    pub fn distance(&self, p: &CloudPoint) -> f64 {
        let v = p.vec() - self.point.vec();
        (v - self.direction * v.dot(&self.direction)).norm()
    }
}

/// Huber tuning constant on the normalized residual.
const HUBER_DELTA: f64 = 1.345;
/// Consistency factor turning a median absolute distance into a scale.
const MAD_SCALE: f64 = 1.4826;

fn weighted_direction(points: &[CloudPoint], weights: &[f64]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for (p, &w) in points.iter().zip(weights) {
        centroid += p.vec() * w;
    }
    centroid /= wsum;
    let mut cov = Matrix3::zeros();
    for (p, &w) in points.iter().zip(weights) {
        let v = p.vec() - centroid;
        cov += v * v.transpose() * w;
    }
    cov /= wsum;
    let eig = cov.symmetric_eigen();
    let mut best = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    if eig.eigenvalues[best] <= 0.0 {
        return None; // zero spread
    }
    let dir = eig.eigenvectors.column(best).into_owned();
    Some((centroid, dir.normalize()))
}

fn orient_up(mut dir: Vector3<f64>) -> Vector3<f64> {
    if dir.z < 0.0 || (dir.z == 0.0 && (dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0))) {
        dir = -dir;
    }
    dir
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust total-least-squares line fit by iteratively reweighted PCA.
///
/// Starts from the ordinary principal component and reweights points with a
/// Huber weight of their orthogonal distance (scale = 1.4826 x median
/// absolute distance). Zero-spread input degenerates to a +z axis through
/// the common point.
pub fn robust_principal_axis(points: &[CloudPoint], max_iter: usize) -> Result<PrincipalAxis> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "axis fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let uniform = vec![1.0; points.len()];
    let Some((mut centroid, mut dir)) = weighted_direction(points, &uniform) else {
        // Degenerate input: all points coincide. +z by convention.
        return Ok(PrincipalAxis {
            point: points[0],
            direction: Vector3::new(0.0, 0.0, 1.0),
        });
    };

    for _ in 0..max_iter {
        let axis = PrincipalAxis {
            point: CloudPoint::new(centroid.x, centroid.y, centroid.z),
            direction: dir,
        };
        let distances: Vec<f64> = points.iter().map(|p| axis.distance(p)).collect();
        let mut sorted = distances.clone();
        let scale = MAD_SCALE * median(&mut sorted);
        if scale <= 1e-300 {
            break; // all points already on the line
        }
        let weights: Vec<f64> = distances
            .iter()
            .map(|&d| {
                let u = d / scale;
                if u <= HUBER_DELTA {
                    1.0
                } else {
                    HUBER_DELTA / u
                }
            })
            .collect();
        let Some((new_centroid, new_dir)) = weighted_direction(points, &weights) else {
            break;
        };
        let converged = 1.0 - new_dir.dot(&dir).abs() < 1e-14;
        centroid = new_centroid;
        dir = if new_dir.dot(&dir) < 0.0 { -new_dir } else { new_dir };
        if converged {
            break;
        }
    }

    Ok(PrincipalAxis {
        point: CloudPoint::new(centroid.x, centroid.y, centroid.z),
        direction: orient_up(dir),
    })
}

/// Scatterer density and dispersion of a cloud neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdReport {
    /// Inlier count per facade area (1/m^2).
    pub s_de: f64,
    /// Mean orthogonal distance of inliers to the principal axis (m).
    pub s_di: f64,
    /// Number of inliers used.
    pub inlier_count: usize,
}

/// Density/dispersion metrics inside a vertical cylinder of radius
/// `cyl_radius` about `center`. The facade area is the inlier z-extent times
/// the inlier band width `2 * inlier_dist`.
pub fn sd_report(
    cloud: &[CloudPoint],
    center: &CloudPoint,
    cyl_radius: f64,
    inlier_dist: f64,
) -> Result<SdReport> {
    if !(cyl_radius > 0.0) || !(inlier_dist > 0.0) {
        return Err(Error::invalid("cylinder radius and inlier distance must be positive"));
    }
    let neighborhood: Vec<CloudPoint> = cloud
        .iter()
        .filter(|p| {
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            dx * dx + dy * dy <= cyl_radius * cyl_radius
        })
        .copied()
        .collect();
    if neighborhood.is_empty() {
        return Err(Error::EmptyNeighborhood(
            "no cloud points inside the cylinder".into(),
        ));
    }
    let axis = robust_principal_axis(&neighborhood, 100)?;
    let inliers: Vec<(f64, f64)> = neighborhood
        .iter()
        .filter_map(|p| {
            let d = axis.distance(p);
            (d < inlier_dist).then_some((d, p.z))
        })
        .collect();
    if inliers.is_empty() {
        return Err(Error::EmptyNeighborhood(
            "no points within the inlier band of the principal axis".into(),
        ));
    }
    let zmin = inliers.iter().map(|&(_, z)| z).fold(f64::INFINITY, f64::min);
    let zmax = inliers.iter().map(|&(_, z)| z).fold(f64::NEG_INFINITY, f64::max);
    let area = (zmax - zmin) * 2.0 * inlier_dist;
    let count = inliers.len();
    let mean_dist = inliers.iter().map(|&(d, _)| d).sum::<f64>() / count as f64;
    Ok(SdReport {
        s_de: count as f64 / area,
        s_di: mean_dist,
        inlier_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn est(elevation_m: f64, power: f64) -> ScattererEstimate {
        ScattererEstimate { elevation_m, power }
    }

    #[test]
    fn rmse_zero_for_perfect_estimates() {
        let trials = vec![TrialRecord {
            truth: vec![est(1.0, 1.0), est(5.0, 0.5)],
            estimate: vec![est(1.0, 1.0), est(5.0, 0.5)],
            seed: 0,
        }];
        let report = rmse_report(&trials).unwrap();
        assert_eq!(report.rmse_h, 0.0);
        assert_eq!(report.rmse_a, 0.0);
    }

    #[test]
    fn rmse_single_pair_is_absolute_error() {
        let trials = vec![TrialRecord {
            truth: vec![est(2.0, 1.0)],
            estimate: vec![est(2.0 - 0.75, 1.0)],
            seed: 0,
        }];
        let report = rmse_report(&trials).unwrap();
        assert_relative_eq!(report.rmse_h, 0.75, epsilon = 1e-12);
        assert_eq!(report.rmse_a, 0.0);
    }

    #[test]
    fn rmse_assignment_uncrosses_labels() {
        let trials = vec![TrialRecord {
            truth: vec![est(0.0, 1.0), est(10.0, 2.0)],
            estimate: vec![est(10.0, 2.0), est(0.0, 1.0)],
            seed: 0,
        }];
        let report = rmse_report(&trials).unwrap();
        assert_eq!(report.rmse_h, 0.0);
        assert_eq!(report.rmse_a, 0.0);
    }

    #[test]
    fn rmse_invariant_to_scatterer_ordering() {
        let base = TrialRecord {
            truth: vec![est(0.0, 1.0), est(4.0, 1.0), est(9.0, 1.0)],
            estimate: vec![est(0.5, 0.9), est(4.5, 1.1), est(8.0, 1.2)],
            seed: 0,
        };
        let mut shuffled = base.clone();
        shuffled.estimate.rotate_left(1);
        shuffled.truth.rotate_left(2);
        let a = rmse_report(std::slice::from_ref(&base)).unwrap();
        let b = rmse_report(std::slice::from_ref(&shuffled)).unwrap();
        assert_relative_eq!(a.rmse_h, b.rmse_h, epsilon = 1e-12);
        assert_relative_eq!(a.rmse_a, b.rmse_a, epsilon = 1e-12);
    }

    #[test]
    fn rmse_rejects_mismatched_cardinality_and_oversized_trials() {
        let bad = vec![TrialRecord {
            truth: vec![est(0.0, 1.0)],
            estimate: vec![],
            seed: 0,
        }];
        assert!(rmse_report(&bad).is_err());
        let too_big = vec![TrialRecord {
            truth: (0..6).map(|i| est(i as f64, 1.0)).collect(),
            estimate: (0..6).map(|i| est(i as f64, 1.0)).collect(),
            seed: 0,
        }];
        assert!(rmse_report(&too_big).is_err());
        assert!(rmse_report(&[]).is_err());
    }

    fn vertical_line(n: usize, height: f64) -> Vec<CloudPoint> {
        (0..n)
            .map(|i| CloudPoint::new(3.0, -2.0, i as f64 * height / (n as f64 - 1.0)))
            .collect()
    }

    #[test]
    fn axis_exact_on_vertical_line() {
        let points = vertical_line(12, 3.0);
        let axis = robust_principal_axis(&points, 50).unwrap();
        assert_relative_eq!(axis.direction.z, 1.0, epsilon = 1e-12);
        for p in &points {
            assert!(axis.distance(p) < 1e-12);
        }
    }

    #[test]
    fn axis_resists_far_outlier_better_than_plain_pca() {
        let mut points = vertical_line(20, 10.0);
        points.push(CloudPoint::new(7.0, -2.0, 9.0));

        let robust = robust_principal_axis(&points, 100).unwrap();
        let robust_angle = robust.direction.z.clamp(-1.0, 1.0).acos().to_degrees();
        assert!(robust_angle < 1.0, "robust axis tilted {robust_angle} deg");

        // Plain PCA oracle for comparison.
        let uniform = vec![1.0; points.len()];
        let (_, pca_dir) = weighted_direction(&points, &uniform).unwrap();
        let pca_angle = pca_dir.z.abs().clamp(0.0, 1.0).acos().to_degrees();
        assert!(
            pca_angle > 2.0 * robust_angle,
            "plain PCA ({pca_angle} deg) should tilt measurably more than IRLS ({robust_angle} deg)"
        );
    }

    #[test]
    fn axis_matches_pca_without_outliers() {
        let points: Vec<CloudPoint> = (0..30)
            .map(|i| {
                let t = i as f64 / 29.0;
                CloudPoint::new(0.3 * t, 0.1 * t, 5.0 * t)
            })
            .collect();
        let robust = robust_principal_axis(&points, 100).unwrap();
        let uniform = vec![1.0; points.len()];
        let (_, pca_dir) = weighted_direction(&points, &uniform).unwrap();
        let angle = robust.direction.dot(&pca_dir).abs().clamp(0.0, 1.0).acos();
        assert!(angle < 1e-6, "angle to PCA {angle} rad");
    }

    #[test]
    fn axis_rotation_equivariance() {
        let points: Vec<CloudPoint> = (0..25)
            .map(|i| {
                let t = i as f64;
                CloudPoint::new(0.05 * (t * 0.7).sin(), 0.05 * (t * 1.3).cos(), t * 0.4)
            })
            .collect();
        let axis = robust_principal_axis(&points, 100).unwrap();

        let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), 0.2);
        let rotated: Vec<CloudPoint> = points
            .iter()
            .map(|p| {
                let v = rot * p.vec();
                CloudPoint::new(v.x, v.y, v.z)
            })
            .collect();
        let axis_rot = robust_principal_axis(&rotated, 100).unwrap();
        let expected = rot * axis.direction;
        assert!((axis_rot.direction - expected).norm() < 1e-9);
    }

    #[test]
    fn axis_degenerate_inputs() {
        assert!(robust_principal_axis(&vertical_line(2, 1.0), 10).is_err());
        let coincident = vec![CloudPoint::new(1.0, 2.0, 3.0); 5];
        let axis = robust_principal_axis(&coincident, 10).unwrap();
        assert_eq!(axis.direction, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn sd_report_hand_computed_segment() {
        // 12 points on a 3 m vertical segment, band half-width 0.5 m:
        // s_di = 0 and s_de = 12 / (3 * 1.0) = 4 per m^2.
        let points = vertical_line(12, 3.0);
        let center = CloudPoint::new(3.0, -2.0, 0.0);
        let report = sd_report(&points, &center, 2.0, 0.5).unwrap();
        assert_relative_eq!(report.s_di, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.s_de, 4.0, epsilon = 1e-9);
        assert_eq!(report.inlier_count, 12);
    }

    #[test]
    fn sd_report_excludes_points_beyond_band() {
        let mut points = vertical_line(12, 3.0);
        points.push(CloudPoint::new(3.0 + 2.0, -2.0, 1.0));
        points.push(CloudPoint::new(3.0 - 2.0, -2.0, 2.0));
        let center = CloudPoint::new(3.0, -2.0, 0.0);
        let report = sd_report(&points, &center, 3.0, 0.5).unwrap();
        assert_eq!(report.inlier_count, 12);
        assert_relative_eq!(report.s_di, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn sd_report_mean_distance_of_alternating_offsets() {
        // Paired +/-0.1 m offsets at five heights: the fit stays exactly
        // vertical, so every distance is 0.1 and so is the mean.
        let points: Vec<CloudPoint> = (0..10)
            .map(|i| {
                let offset = if i % 2 == 0 { 0.1 } else { -0.1 };
                CloudPoint::new(offset, 0.0, (i / 2) as f64)
            })
            .collect();
        let center = CloudPoint::new(0.0, 0.0, 0.0);
        let report = sd_report(&points, &center, 1.0, 0.5).unwrap();
        assert_relative_eq!(report.s_di, 0.1, epsilon = 1e-9);
        assert_eq!(report.inlier_count, 10);
    }

    #[test]
    fn sd_report_translation_invariant() {
        let points = vertical_line(12, 3.0);
        let center = CloudPoint::new(3.0, -2.0, 0.0);
        let base = sd_report(&points, &center, 2.0, 0.5).unwrap();
        let shift = (100.0, -40.0, 7.0);
        let moved: Vec<CloudPoint> = points
            .iter()
            .map(|p| CloudPoint::new(p.x + shift.0, p.y + shift.1, p.z + shift.2))
            .collect();
        let center2 = CloudPoint::new(center.x + shift.0, center.y + shift.1, center.z + shift.2);
        let shifted = sd_report(&moved, &center2, 2.0, 0.5).unwrap();
        assert_relative_eq!(base.s_de, shifted.s_de, epsilon = 1e-9);
        assert_relative_eq!(base.s_di, shifted.s_di, epsilon = 1e-9);
    }

    #[test]
    fn sd_report_empty_neighborhood_errors() {
        let points = vertical_line(12, 3.0);
        let far = CloudPoint::new(100.0, 100.0, 0.0);
        assert!(matches!(
            sd_report(&points, &far, 1.0, 0.5),
            Err(Error::EmptyNeighborhood(_))
        ));
    }
}
