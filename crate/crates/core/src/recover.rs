//! Sparse inversion of the elevation profile.
//!
//! Two routes are provided. The covariance-domain route runs greedy OMP over
//! the co-array manifold with the noise atom pinned in the support and a
//! non-negative least-squares refit each iteration, recovering grid powers
//! and the noise level jointly. The direct route solves the l1-regularized
//! problem `min ||y - Phi g||^2 + alpha * ||g||_1` on a single measurement
//! vector by monotone proximal-gradient iteration with complex soft
//! thresholding and backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoArray;
use crate::linalg::nnls_complex;
use crate::model::{CoArrayManifold, ElevationGrid, SteeringMatrix};
use crate::C64;

/// Which inversion route produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    CoarrayOmp,
    DirectL1,
}

/// A recovered elevation profile plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Non-negative profile per grid cell: power for the co-array route,
    /// magnitude for the direct route.
    pub profile: Vec<f64>,
    /// Estimated noise power (co-array route; 0 for the direct route).
    pub noise_power: f64,
    /// Grid indices selected by the solver.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    pub solver: SolverKind,
    /// False when an iterative solver hit its iteration cap first.
    pub converged: bool,
}

/// Stopping rule for the greedy co-array solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmpStop {
    /// Select exactly this many signal atoms (known model order).
    Sparsity(usize),
    /// Stop once `residual / ||zbar||` falls below this value.
    ResidualTol(f64),
}

struct OmpTrace {
    result: ReconstructionResult,
    #[cfg_attr(not(test), allow(dead_code))]
    residual_history: Vec<f64>,
}

fn solve_coarray_omp_traced(
    zbar: &DVector<C64>,
    manifold: &CoArrayManifold,
    stop: OmpStop,
) -> Result<OmpTrace> {
    let dof = manifold.entries.nrows();
    if zbar.len() != dof {
        return Err(Error::invalid(format!(
            "measurement has {} entries but manifold has {dof} rows",
            zbar.len()
        )));
    }
    let l = manifold.signal_count();
    match stop {
        OmpStop::Sparsity(k) => {
            if k == 0 || k > l {
                return Err(Error::invalid(format!(
                    "sparsity must be in 1..={l}, got {k}"
                )));
            }
        }
        OmpStop::ResidualTol(t) => {
            if !(t > 0.0) {
                return Err(Error::invalid("residual tolerance must be positive"));
            }
        }
    }

    let column_norms: Vec<f64> = (0..l).map(|j| manifold.entries.column(j).norm()).collect();
    if column_norms.iter().any(|&n| n <= 0.0) {
        return Err(Error::InternalError(
            "co-array manifold contains a zero column".into(),
        ));
    }

    let zbar_norm = zbar.norm();
    let mut profile = vec![0.0; l];
    if zbar_norm == 0.0 {
        return Ok(OmpTrace {
            result: ReconstructionResult {
                profile,
                noise_power: 0.0,
                support: Vec::new(),
                residual_norm: 0.0,
                solver: SolverKind::CoarrayOmp,
                converged: true,
            },
            residual_history: vec![0.0],
        });
    }

    let noise_col = manifold.noise_column();
    let mut support: Vec<usize> = Vec::new();

    // Refit [p_support; sigma^2] >= 0 on the current support (noise atom
    // always included) and return the new residual.
    let refit = |support: &[usize]| -> Result<(DVector<f64>, DVector<C64>)> {
        let cols: Vec<usize> = support.iter().copied().chain([noise_col]).collect();
        let sub = manifold.entries.select_columns(cols.iter());
        let x = nnls_complex(&sub, zbar)?;
        let mut residual = zbar.clone();
        for (idx, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                residual -= sub.column(idx) * C64::new(xv, 0.0);
            }
        }
        Ok((x, residual))
    };

    let (mut coeffs, mut residual) = refit(&support)?;
    let mut residual_history = vec![residual.norm()];

    loop {
        let done = match stop {
            OmpStop::Sparsity(k) => support.len() >= k,
            OmpStop::ResidualTol(t) => residual.norm() / zbar_norm < t,
        };
        if done || support.len() == l {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..l {
            if support.contains(&j) {
                continue;
            }
            let corr = manifold.entries.column(j).dotc(&residual).norm() / column_norms[j];
            if best.map_or(true, |(_, c)| corr > c) {
                best = Some((j, corr));
            }
        }
        let Some((atom, corr)) = best else { break };
        if corr <= 1e-14 * zbar_norm {
            break; // residual carries no correlated energy
        }
        support.push(atom);
        let (c, r) = refit(&support)?;
        coeffs = c;
        residual = r;
        residual_history.push(residual.norm());
    }

    for (idx, &atom) in support.iter().enumerate() {
        profile[atom] = coeffs[idx];
    }
    let noise_power = coeffs[support.len()];
    let residual_norm = residual.norm();
    let converged = match stop {
        OmpStop::Sparsity(_) => true,
        OmpStop::ResidualTol(t) => residual_norm / zbar_norm < t,
    };
    Ok(OmpTrace {
        result: ReconstructionResult {
            profile,
            noise_power,
            support,
            residual_norm,
            solver: SolverKind::CoarrayOmp,
            converged,
        },
        residual_history,
    })
}

/// Greedy OMP on the co-array manifold with NNLS refits.
pub fn solve_coarray_omp(
    zbar: &DVector<C64>,
    manifold: &CoArrayManifold,
    stop: OmpStop,
) -> Result<ReconstructionResult> {
    solve_coarray_omp_traced(zbar, manifold, stop).map(|t| t.result)
}

/// Scale each lag row of the system by `multiplicity(lag)^exponent`.
///
/// The averaged measurement at lag `g` has estimation variance proportional
/// to `1 / multiplicity(g)`, so exponent 0.5 is inverse-standard-deviation
/// whitening — algebraically the system one gets by keeping the duplicated
/// rows of the raw vectorized covariance. Entries of one sample covariance
/// are mutually correlated, which makes full whitening overconfident;
/// tempered exponents below 0.5 trade between that and the unweighted
/// average. Either way, low-multiplicity outer lags stop dominating atom
/// selection, which is what lets a hole-free co-array show its resolution
/// advantage.
pub fn whiten_by_multiplicity(
    manifold: &CoArrayManifold,
    coarray: &CoArray,
    zbar: &DVector<C64>,
    exponent: f64,
) -> Result<(CoArrayManifold, DVector<C64>)> {
    if zbar.len() != manifold.entries.nrows() || manifold.lags != coarray.lags {
        return Err(Error::invalid(
            "manifold, co-array, and measurement must describe the same lag set",
        ));
    }
    if !(exponent >= 0.0) || !exponent.is_finite() {
        return Err(Error::invalid("weight exponent must be non-negative"));
    }
    let mut weighted = manifold.clone();
    let mut z = zbar.clone();
    for (row, lag) in manifold.lags.iter().enumerate() {
        let mult = *coarray
            .multiplicity
            .get(lag)
            .ok_or_else(|| Error::invalid("lag missing from co-array multiplicities"))?;
        let w = C64::new((mult as f64).powf(exponent), 0.0);
        for col in 0..weighted.entries.ncols() {
            weighted.entries[(row, col)] *= w;
        }
        z[row] *= w;
    }
    Ok((weighted, z))
}

fn soft_threshold(v: &DVector<C64>, tau: f64) -> DVector<C64> {
    DVector::from_iterator(
        v.len(),
        v.iter().map(|&z| {
            let mag = z.norm();
            if mag <= tau {
                C64::new(0.0, 0.0)
            } else {
                z * ((mag - tau) / mag)
            }
        }),
    )
}

/// Largest eigenvalue of `Phi^H Phi` by power iteration.
fn spectral_bound(phi: &DMatrix<C64>) -> f64 {
    let l = phi.ncols();
    let mut v = DVector::from_element(l, C64::new(1.0, 0.0));
    v /= C64::new(v.norm(), 0.0);
    let mut lambda = 0.0;
    for _ in 0..30 {
        let w = phi.adjoint() * (phi * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / C64::new(norm, 0.0);
    }
    lambda
}

struct L1Trace {
    result: ReconstructionResult,
    #[cfg_attr(not(test), allow(dead_code))]
    objective_history: Vec<f64>,
}

fn solve_direct_l1_traced(
    y: &DVector<C64>,
    phi: &SteeringMatrix,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<L1Trace> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "regularization weight must be positive, got {alpha}"
        )));
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::invalid("need max_iter >= 1 and tol > 0"));
    }
    if y.len() != phi.channel_count() {
        return Err(Error::invalid(format!(
            "measurement has {} channels but the model has {}",
            y.len(),
            phi.channel_count()
        )));
    }
    let a = &phi.entries;
    let l = a.ncols();

    let objective = |g: &DVector<C64>, residual: &DVector<C64>| -> f64 {
        residual.norm_squared() + alpha * g.iter().map(|z| z.norm()).sum::<f64>()
    };

    let lambda_max = spectral_bound(a).max(1e-300);
    let mut step = 1.0 / (2.0 * lambda_max);

    let mut x = DVector::<C64>::zeros(l);
    let mut x_res = y.clone(); // residual y - A x
    let mut fx = objective(&x, &x_res);
    let mut momentum = x.clone();
    let mut theta = 1.0f64;

    let mut history = vec![fx];
    let mut converged = false;

    // One backtracked proximal step from `point`; returns the candidate, its
    // residual, smooth value, and the accepted step size.
    let prox_step = |point: &DVector<C64>, step0: f64| -> (DVector<C64>, DVector<C64>, f64) {
        let point_res = y - a * point;
        let smooth_at_point = point_res.norm_squared();
        let grad = -(a.adjoint() * &point_res) * C64::new(2.0, 0.0);
        let mut t = step0;
        loop {
            let cand = soft_threshold(&(point - &grad * C64::new(t, 0.0)), t * alpha);
            let cand_res = y - a * &cand;
            let smooth_cand = cand_res.norm_squared();
            let diff = &cand - point;
            let lin: f64 = diff
                .iter()
                .zip(grad.iter())
                .map(|(d, g)| (g.conj() * d).re)
                .sum();
            let quad = diff.norm_squared() / (2.0 * t);
            if smooth_cand <= smooth_at_point + lin + quad + 1e-12 * smooth_at_point.abs() {
                return (cand, cand_res, t);
            }
            t *= 0.5;
            if t < 1e-18 / lambda_max {
                return (cand, cand_res, t);
            }
        }
    };

    for _ in 0..max_iter {
        // Accelerated candidate from the momentum point; fall back to a plain
        // step from x whenever it fails to decrease the objective, which
        // keeps the objective monotone.
        let (cand, cand_res, t_used) = prox_step(&momentum, step * 2.0);
        let f_cand = objective(&cand, &cand_res);
        let (next, next_res, f_next) = if f_cand <= fx {
            (cand, cand_res, f_cand)
        } else {
            let (fallback, fb_res, t_fb) = prox_step(&x, step);
            let f_fb = objective(&fallback, &fb_res);
            step = t_fb;
            (fallback, fb_res, f_fb.min(fx))
        };
        step = step.max(t_used).min(1.0 / lambda_max);

        let delta = (&next - &x).norm();
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        momentum = &next + (&next - &x) * C64::new((theta - 1.0) / theta_next, 0.0);
        theta = theta_next;

        let base = x.norm().max(1e-30);
        x = next;
        x_res = next_res;
        fx = f_next;
        history.push(fx);
        if delta / base < tol {
            converged = true;
            break;
        }
    }

    let profile: Vec<f64> = x.iter().map(|z| z.norm()).collect();
    let support: Vec<usize> = profile
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(L1Trace {
        result: ReconstructionResult {
            profile,
            noise_power: 0.0,
            support,
            residual_norm: x_res.norm(),
            solver: SolverKind::DirectL1,
            converged,
        },
        objective_history: history,
    })
}

/// l1-regularized direct inversion by monotone proximal-gradient iteration.
pub fn solve_direct_l1(
    y: &DVector<C64>,
    phi: &SteeringMatrix,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<ReconstructionResult> {
    solve_direct_l1_traced(y, phi, alpha, max_iter, tol).map(|t| t.result)
}

/// Default regularization weight for the direct route: a fixed fraction of
/// the kill threshold `2 ||Phi^H y||_inf`.
pub fn default_l1_alpha(y: &DVector<C64>, phi: &SteeringMatrix, scale: f64) -> f64 {
    let corr = phi.entries.adjoint() * y;
    let peak = corr.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    scale * 2.0 * peak
}

/// A recovered point target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererEstimate {
    pub elevation_m: f64,
    pub power: f64,
}

/// Result of cluster-based peak extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakExtraction {
    /// Up to `k` clusters, sorted by elevation ascending.
    pub peaks: Vec<ScattererEstimate>,
    /// True when fewer than `k` clusters existed.
    pub shortfall: bool,
}

/// Merge adjacent nonzero profile cells into clusters (power-weighted
/// centroid, summed power) and keep the `k` strongest.
pub fn extract_peaks(
    result: &ReconstructionResult,
    grid: &ElevationGrid,
    k: usize,
) -> Result<PeakExtraction> {
    if k == 0 {
        return Err(Error::invalid("peak count must be at least 1"));
    }
    if result.profile.len() != grid.len() {
        return Err(Error::invalid(format!(
            "profile has {} cells but the grid has {}",
            result.profile.len(),
            grid.len()
        )));
    }
    let mut clusters: Vec<ScattererEstimate> = Vec::new();
    let mut idx = 0;
    while idx < result.profile.len() {
        if result.profile[idx] <= 0.0 {
            idx += 1;
            continue;
        }
        let mut power = 0.0;
        let mut weighted = 0.0;
        while idx < result.profile.len() && result.profile[idx] > 0.0 {
            power += result.profile[idx];
            weighted += result.profile[idx] * grid.samples_m[idx];
            idx += 1;
        }
        clusters.push(ScattererEstimate {
            elevation_m: weighted / power,
            power,
        });
    }
    clusters.sort_by(|a, b| {
        b.power
            .partial_cmp(&a.power)
            .unwrap()
            .then_with(|| a.elevation_m.partial_cmp(&b.elevation_m).unwrap())
    });
    let shortfall = clusters.len() < k;
    clusters.truncate(k);
    clusters.sort_by(|a, b| a.elevation_m.partial_cmp(&b.elevation_m).unwrap());
    Ok(PeakExtraction {
        peaks: clusters,
        shortfall,
    })
}
