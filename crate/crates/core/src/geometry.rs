//! Baseline array layouts and their difference co-arrays.
//!
//! Arrays are described by integer element positions in units of a common
//! spacing `d` (meters). The difference co-array of a layout is the multiset
//! of pairwise position differences; its distinct lags bound how many
//! covariance-domain degrees of freedom the layout offers. Nested layouts
//! produce hole-free co-arrays, coprime layouts do not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Family a baseline layout belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Uniform,
    Coprime,
    Nested,
    Custom,
}

impl std::fmt::Display for ArrayKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArrayKind::Uniform => "uniform",
            ArrayKind::Coprime => "coprime",
            ArrayKind::Nested => "nested",
            ArrayKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// A physical baseline layout: integer element positions in units of `d`.
///
/// `m1`/`m2` record the subarray split for coprime and nested layouts and are
/// zero for uniform/custom layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub kind: ArrayKind,
    pub m1: u32,
    pub m2: u32,
    /// The unit spacing `d` in meters.
    pub unit_spacing_m: f64,
    /// Element positions in units of `d`, strictly increasing.
    pub positions: Vec<i64>,
}

impl ArrayConfig {
    /// Number of physical elements.
    pub fn element_count(&self) -> usize {
        self.positions.len()
    }

    /// Element positions in meters (`positions * d`), sorted ascending.
    pub fn baselines_m(&self) -> Vec<f64> {
        self.positions
            .iter()
            .map(|&p| p as f64 * self.unit_spacing_m)
            .collect()
    }

    /// Physical aperture in units of `d` (max position minus min position).
    pub fn aperture_units(&self) -> i64 {
        match (self.positions.first(), self.positions.last()) {
            (Some(&lo), Some(&hi)) => hi - lo,
            _ => 0,
        }
    }

    /// Positions shifted so the smallest element sits at `1*d`.
    ///
    /// Co-arrays are invariant under a common shift, so generators stay
    /// literal to their defining formulas; this helper exists only for
    /// presentation of the canonical tables.
    pub fn positions_unit_shifted(&self) -> Vec<i64> {
        let shift = match self.positions.first() {
            Some(&lo) => 1 - lo,
            None => 0,
        };
        self.positions.iter().map(|&p| p + shift).collect()
    }

    fn validate_positions(positions: &[i64]) -> Result<()> {
        if positions.is_empty() {
            return Err(Error::invalid("array must contain at least one element"));
        }
        if positions[0] < 0 {
            return Err(Error::invalid("element positions must be non-negative"));
        }
        for w in positions.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "element positions must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    fn validate_spacing(unit_spacing_m: f64) -> Result<()> {
        if !(unit_spacing_m > 0.0) || !unit_spacing_m.is_finite() {
            return Err(Error::invalid(format!(
                "unit spacing must be positive and finite, got {unit_spacing_m}"
            )));
        }
        Ok(())
    }
}

/// Greatest common divisor of two positive integers.
fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Uniform linear array with elements at `{0, 1, ..., element_count - 1}`.
pub fn uniform_array(element_count: u32, unit_spacing_m: f64) -> Result<ArrayConfig> {
    ArrayConfig::validate_spacing(unit_spacing_m)?;
    if element_count < 2 {
        return Err(Error::invalid(format!(
            "uniform array needs at least 2 elements, got {element_count}"
        )));
    }
    Ok(ArrayConfig {
        kind: ArrayKind::Uniform,
        m1: 0,
        m2: 0,
        unit_spacing_m,
        positions: (0..element_count as i64).collect(),
    })
}

/// Coprime array: `{m*m2 : 0 <= m <= m1-1} ∪ {n*m1 : 0 <= n <= m2-1}`.
///
/// The union shares position 0, so the element count is `m1 + m2 - 1`.
pub fn coprime_array(m1: u32, m2: u32, unit_spacing_m: f64) -> Result<ArrayConfig> {
    ArrayConfig::validate_spacing(unit_spacing_m)?;
    if m1 < 2 || m2 < 2 {
        return Err(Error::invalid(format!(
            "coprime array needs m1, m2 >= 2, got ({m1}, {m2})"
        )));
    }
    let g = gcd(m1, m2);
    if g != 1 {
        return Err(Error::invalid(format!(
            "coprime array needs gcd(m1, m2) = 1, got gcd({m1}, {m2}) = {g}"
        )));
    }
    let mut positions: Vec<i64> = (0..m1 as i64)
        .map(|m| m * m2 as i64)
        .chain((0..m2 as i64).map(|n| n * m1 as i64))
        .collect();
    positions.sort_unstable();
    positions.dedup();
    debug_assert_eq!(positions.len(), (m1 + m2 - 1) as usize);
    Ok(ArrayConfig {
        kind: ArrayKind::Coprime,
        m1,
        m2,
        unit_spacing_m,
        positions,
    })
}

/// Two-level nested array: a dense subarray `{1, ..., m1}` followed by a
/// sparse subarray `{n*(m1+1) : 1 <= n <= m2}`.
pub fn nested_array(m1: u32, m2: u32, unit_spacing_m: f64) -> Result<ArrayConfig> {
    ArrayConfig::validate_spacing(unit_spacing_m)?;
    if m1 < 1 || m2 < 1 {
        return Err(Error::invalid(format!(
            "nested array needs m1, m2 >= 1, got ({m1}, {m2})"
        )));
    }
    let pitch = m1 as i64 + 1;
    let mut positions: Vec<i64> = (1..=m1 as i64)
        .chain((1..=m2 as i64).map(|n| n * pitch))
        .collect();
    positions.sort_unstable();
    positions.dedup();
    debug_assert_eq!(positions.len(), (m1 + m2) as usize);
    Ok(ArrayConfig {
        kind: ArrayKind::Nested,
        m1,
        m2,
        unit_spacing_m,
        positions,
    })
}

/// Arbitrary layout given explicitly. Only sortedness and uniqueness are
/// checked; this covers field layouts no closed-form generator produces.
pub fn custom_array(positions: Vec<i64>, unit_spacing_m: f64) -> Result<ArrayConfig> {
    ArrayConfig::validate_spacing(unit_spacing_m)?;
    ArrayConfig::validate_positions(&positions)?;
    Ok(ArrayConfig {
        kind: ArrayKind::Custom,
        m1: 0,
        m2: 0,
        unit_spacing_m,
        positions,
    })
}

/// The difference co-array of a layout: every signed lag `p_i - p_j` over
/// ordered element pairs, with multiplicities, holes, and span statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CoArray {
    /// Distinct signed lags in units of `d`, sorted ascending.
    pub lags: Vec<i64>,
    /// lag -> number of ordered element pairs producing it.
    pub multiplicity: BTreeMap<i64, usize>,
    /// Integer lags strictly inside (min lag, max lag) that no pair produces.
    pub holes: Vec<i64>,
    /// Number of distinct lags.
    pub dof: usize,
    /// Co-array span: max lag minus min lag.
    pub aperture_units: i64,
    /// Element positions the co-array was derived from.
    pub source_positions: Vec<i64>,
    /// Unit spacing of the source layout in meters.
    pub unit_spacing_m: f64,
}

impl CoArray {
    /// True when every integer lag inside the span is present.
    pub fn is_hole_free(&self) -> bool {
        self.holes.is_empty()
    }

    /// Index of a lag within the sorted lag list.
    pub fn lag_index(&self, lag: i64) -> Option<usize> {
        self.lags.binary_search(&lag).ok()
    }
}

/// Compute the difference co-array of a layout by brute force over all
/// ordered element pairs.
pub fn difference_coarray(config: &ArrayConfig) -> CoArray {
    let mut multiplicity: BTreeMap<i64, usize> = BTreeMap::new();
    for &pi in &config.positions {
        for &pj in &config.positions {
            *multiplicity.entry(pi - pj).or_insert(0) += 1;
        }
    }
    let lags: Vec<i64> = multiplicity.keys().copied().collect();
    let (min_lag, max_lag) = (lags[0], lags[lags.len() - 1]);
    let holes: Vec<i64> = ((min_lag + 1)..max_lag)
        .filter(|g| !multiplicity.contains_key(g))
        .collect();
    CoArray {
        dof: lags.len(),
        aperture_units: max_lag - min_lag,
        lags,
        multiplicity,
        holes,
        source_positions: config.positions.clone(),
        unit_spacing_m: config.unit_spacing_m,
    }
}
