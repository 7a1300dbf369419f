//! State demographics, districting plans and feasibility.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::electoral::DistrictComposition;
use crate::error::{Error, Result};
use crate::group::{GroupId, PerGroup};

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDemographics {
    pub shares: PerGroup<f64>,
    pub k: usize,
    /// N / K; every district has this population.
    pub district_size: f64,
}

impl StateDemographics {
    pub fn new(shares: PerGroup<f64>, k: usize) -> Result<Self> {
        Self::with_district_size(shares, k, 1.0)
    }

    pub fn with_district_size(shares: PerGroup<f64>, k: usize, district_size: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("K", "need at least one district"));
        }
        if shares.iter().any(|(_, s)| !(0.0..=1.0).contains(s)) {
            return Err(Error::param("shares", "each share must lie in [0,1]"));
        }
        let sum = shares.sum();
        if (sum - 1.0).abs() > FEAS_TOL {
            return Err(Error::param("shares", format!("shares sum to {sum}, not 1")));
        }
        if !(district_size.is_finite() && district_size > 0.0) {
            return Err(Error::param("district_size", "must be positive"));
        }
        Ok(StateDemographics {
            shares,
            k,
            district_size,
        })
    }

    pub fn uniform_plan(&self) -> DistrictingPlan {
        DistrictingPlan {
            rows: vec![self.shares; self.k],
            district_size: self.district_size,
        }
    }
}

/// K rows of group shares; counts are shares × district size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictingPlan {
    pub rows: Vec<PerGroup<f64>>,
    pub district_size: f64,
}

impl DistrictingPlan {
    pub fn new(rows: Vec<PerGroup<f64>>, district_size: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidPlan("plan has no districts".into()));
        }
        if rows.iter().any(|r| r.iter().any(|(_, v)| !v.is_finite())) {
            return Err(Error::InvalidPlan("non-finite entry".into()));
        }
        if !(district_size > 0.0) {
            return Err(Error::InvalidPlan("district size must be positive".into()));
        }
        Ok(DistrictingPlan { rows, district_size })
    }

    pub fn from_arrays(rows: &[[f64; 3]], district_size: f64) -> Result<Self> {
        DistrictingPlan::new(rows.iter().map(|r| PerGroup::from_array(*r)).collect(), district_size)
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn district(&self, k: usize) -> Result<DistrictComposition> {
        let row = self
            .rows
            .get(k)
            .ok_or_else(|| Error::InvalidPlan(format!("no district {k}")))?;
        DistrictComposition::new(row.map(|_, s| s.max(0.0) * self.district_size))
    }

    pub fn districts(&self) -> Result<Vec<DistrictComposition>> {
        (0..self.k()).map(|k| self.district(k)).collect()
    }

    pub fn minority_counts(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.minority * self.district_size).collect()
    }

    pub fn column_means(&self) -> PerGroup<f64> {
        let k = self.k() as f64;
        PerGroup::from_fn(|g| self.rows.iter().map(|r| r[g]).sum::<f64>() / k)
    }

    /// Max absolute difference between entries of two plans of equal shape.
    pub fn distance(&self, other: &DistrictingPlan) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| GroupId::ALL.map(|g| (a[g] - b[g]).abs()))
            .fold(0.0, f64::max)
    }

    /// Number of districts whose three shares all exceed `floor`.
    pub fn interior_count(&self, floor: f64) -> usize {
        self.rows
            .iter()
            .filter(|r| r.iter().all(|(_, v)| *v > floor))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanViolation {
    DistrictCount { expected: usize, found: usize },
    NegativeShare { district: usize, group: GroupId, value: f64 },
    RowSum { district: usize, sum: f64 },
    ColumnMean { group: GroupId, mean: f64, expected: f64 },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::DistrictCount { expected, found } => {
                write!(f, "expected {expected} districts, found {found}")
            }
            PlanViolation::NegativeShare { district, group, value } => {
                write!(f, "district {district}: {group} share {value} is negative")
            }
            PlanViolation::RowSum { district, sum } => {
                write!(f, "district {district}: shares sum to {sum}, not 1")
            }
            PlanViolation::ColumnMean { group, mean, expected } => {
                write!(f, "group {group}: district mean {mean} differs from state share {expected}")
            }
        }
    }
}

pub fn validate_plan(plan: &DistrictingPlan, demo: &StateDemographics) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    if plan.k() != demo.k {
        out.push(PlanViolation::DistrictCount {
            expected: demo.k,
            found: plan.k(),
        });
    }
    for (k, row) in plan.rows.iter().enumerate() {
        for (g, v) in row.iter() {
            if *v < -FEAS_TOL {
                out.push(PlanViolation::NegativeShare {
                    district: k,
                    group: g,
                    value: *v,
                });
            }
        }
        let sum = row.sum();
        if (sum - 1.0).abs() > FEAS_TOL {
            out.push(PlanViolation::RowSum { district: k, sum });
        }
    }
    if plan.k() > 0 {
        let means = plan.column_means();
        for g in GroupId::ALL {
            if (means[g] - demo.shares[g]).abs() > FEAS_TOL {
                out.push(PlanViolation::ColumnMean {
                    group: g,
                    mean: means[g],
                    expected: demo.shares[g],
                });
            }
        }
    }
    out
}

pub fn is_feasible(plan: &DistrictingPlan, demo: &StateDemographics) -> bool {
    validate_plan(plan, demo).is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            max_iterations: 20_000,
            tolerance: 1e-12,
        }
    }
}

pub fn project_to_feasible(matrix: &[[f64; 3]], demo: &StateDemographics) -> Result<DistrictingPlan> {
    project_with(matrix, demo, ProjectionConfig::default())
}

/// Dykstra's alternating projection onto {row sums 1} ∩ {column means S}
/// (jointly, they are one affine set) and the nonnegative orthant, followed
/// by a few proportional-fitting sweeps to remove the last residual.
pub fn project_with(
    matrix: &[[f64; 3]],
    demo: &StateDemographics,
    config: ProjectionConfig,
) -> Result<DistrictingPlan> {
    if matrix.len() != demo.k {
        return Err(Error::InvalidPlan(format!(
            "matrix has {} rows, demographics expect {}",
            matrix.len(),
            demo.k
        )));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPlan("non-finite entry".into()));
    }
    let target = demo.shares.to_array();
    let mut x: Vec<[f64; 3]> = matrix.to_vec();
    let mut corr = vec![[0.0; 3]; x.len()];
    let mut converged = false;
    for _ in 0..config.max_iterations {
        project_affine(&mut x, &target);
        let mut moved: f64 = 0.0;
        for (row, c) in x.iter_mut().zip(corr.iter_mut()) {
            for j in 0..3 {
                let y = row[j] + c[j];
                let p = y.max(0.0);
                c[j] = y - p;
                moved = moved.max((p - row[j]).abs());
                row[j] = p;
            }
        }
        if moved < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "feasibility projection",
            iterations: config.max_iterations,
            detail: String::new(),
        });
    }
    // nonnegative now and affine residual tiny; rescaling keeps zeros at zero
    for _ in 0..50 {
        if affine_residual(&x, &target) < 1e-15 {
            break;
        }
        for row in x.iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        let k = x.len() as f64;
        for j in 0..3 {
            let col: f64 = x.iter().map(|r| r[j]).sum();
            if col > 0.0 {
                let f = k * target[j] / col;
                x.iter_mut().for_each(|r| r[j] *= f);
            }
        }
    }
    let plan = DistrictingPlan::from_arrays(&x, demo.district_size)?;
    let violations = validate_plan(&plan, demo);
    if !violations.is_empty() {
        return Err(Error::NonConvergence {
            what: "feasibility projection",
            iterations: config.max_iterations,
            detail: format!(": {}", violations[0]),
        });
    }
    Ok(plan)
}

// Euclidean projection onto {X 1 = 1, 1ᵀX = K S}.
fn project_affine(x: &mut [[f64; 3]], target: &[f64; 3]) {
    let k = x.len() as f64;
    let r: Vec<f64> = x.iter().map(|row| row.iter().sum::<f64>() - 1.0).collect();
    let total_r: f64 = r.iter().sum();
    let c: Vec<f64> = (0..3)
        .map(|j| x.iter().map(|row| row[j]).sum::<f64>() - k * target[j])
        .collect();
    for (row, rk) in x.iter_mut().zip(&r) {
        for j in 0..3 {
            row[j] -= rk / 3.0 + (c[j] - total_r / 3.0) / k;
        }
    }
}

fn affine_residual(x: &[[f64; 3]], target: &[f64; 3]) -> f64 {
    let k = x.len() as f64;
    let rows = x
        .iter()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let cols = (0..3)
        .map(|j| (x.iter().map(|r| r[j]).sum::<f64>() / k - target[j]).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}
