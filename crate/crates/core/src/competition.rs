//! Fixed-matchup distributive analysis: the minority-share surface, its
//! derivatives, path curvature, swap improvement and channel welfare.

use serde::{Deserialize, Serialize};

use crate::electoral::{crra, DistrictComposition, GroupPowerVector};
use crate::error::{Error, Result};
use crate::group::{GroupId, PerGroup};
use crate::plan::DistrictingPlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub s: f64,
    pub t: f64,
    pub total: f64,
}

impl SurfacePoint {
    pub fn new(s: f64, t: f64, total: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
            return Err(Error::param("surface point", format!("s={s}, t={t} outside [0,1]")));
        }
        if !(total > 0.0) {
            return Err(Error::param("total", "must be positive"));
        }
        Ok(SurfacePoint { s, t, total })
    }

    pub fn from_district(d: &DistrictComposition) -> Self {
        let s = d.count(GroupId::Minority) / d.total();
        let non = d.count(GroupId::Nonminority) + d.count(GroupId::Republican);
        let t = if non > 0.0 {
            d.count(GroupId::Nonminority) / non
        } else {
            0.5
        };
        SurfacePoint { s, t, total: d.total() }
    }

    pub fn composition(&self) -> Result<DistrictComposition> {
        DistrictComposition::from_surface(self.s, self.t, self.total)
    }
}

/// Π_k = Σ_i π_i N_{i,k}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistrictPower {
    pub value: f64,
}

impl DistrictPower {
    pub fn of(powers: &GroupPowerVector, district: &DistrictComposition) -> Result<Self> {
        let value = powers.power.dot(district.counts());
        if !(value > 0.0) {
            return Err(Error::ZeroPower);
        }
        Ok(DistrictPower { value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureClass {
    Concave,
    Convex,
    Indeterminate,
}

/// f = π_mD N_mD / Π_k, the minority budget share.
pub fn minority_share(powers: &GroupPowerVector, district: &DistrictComposition) -> Result<f64> {
    let pi = DistrictPower::of(powers, district)?.value;
    Ok(powers.power.minority * district.count(GroupId::Minority) / pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareGradient {
    pub d_pi: PerGroup<f64>,
    /// ∂f/∂N_mD holding N_nD and N_k fixed (R absorbs the change).
    pub d_n_md: f64,
    /// ∂f/∂N_nD holding N_mD and N_k fixed.
    pub d_n_nd: f64,
}

pub fn share_gradient(powers: &GroupPowerVector, district: &DistrictComposition) -> Result<ShareGradient> {
    let pi = DistrictPower::of(powers, district)?.value;
    let p = &powers.power;
    let n = district.counts();
    let pi2 = pi * pi;
    let d_pi = PerGroup::new(
        n.minority * (p.nonminority * n.nonminority + p.republican * n.republican) / pi2,
        -p.minority * n.minority * n.nonminority / pi2,
        -p.minority * n.minority * n.republican / pi2,
    );
    let a = (p.nonminority - p.republican) * n.nonminority + p.republican * district.total();
    Ok(ShareGradient {
        d_pi,
        d_n_md: p.minority * a / pi2,
        d_n_nd: -p.minority * n.minority * (p.nonminority - p.republican) / pi2,
    })
}

/// Hessian of f over (N_mD, N_nD) with N_k fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareHessian {
    pub md_md: f64,
    pub md_nd: f64,
    pub nd_nd: f64,
}

impl ShareHessian {
    pub fn determinant(&self) -> f64 {
        self.md_md * self.nd_nd - self.md_nd * self.md_nd
    }
}

pub fn share_hessian(powers: &GroupPowerVector, district: &DistrictComposition) -> Result<ShareHessian> {
    let pi = DistrictPower::of(powers, district)?.value;
    let p = &powers.power;
    let n = district.counts();
    let pi3 = pi * pi * pi;
    let dn = p.nonminority - p.republican;
    let a = dn * n.nonminority + p.republican * district.total();
    Ok(ShareHessian {
        md_md: -2.0 * p.minority * (p.minority - p.republican) * a / pi3,
        md_nd: p.minority * dn * (pi - 2.0 * a) / pi3,
        nd_nd: 2.0 * p.minority * n.minority * dn * dn / pi3,
    })
}

/// Closed form of det(H): −π_mD²(π_nD−π_R)²/Π_k⁴, never positive.
pub fn share_hessian_determinant(powers: &GroupPowerVector, district: &DistrictComposition) -> Result<f64> {
    let pi = DistrictPower::of(powers, district)?.value;
    let p = &powers.power;
    let dn = p.nonminority - p.republican;
    Ok(-(p.minority * dn).powi(2) / pi.powi(4))
}

/// g″(s) along the ray of fixed nonminority mix t.
pub fn path_curvature(powers: &GroupPowerVector, p: &SurfacePoint) -> f64 {
    let pw = &powers.power;
    let c = p.t * pw.nonminority + (1.0 - p.t) * pw.republican;
    let d = pw.minority * p.s + c * (1.0 - p.s);
    -2.0 * pw.minority * c * (pw.minority - c) / (d * d * d)
}

/// Minority share along the same ray, g(s).
pub fn path_share(powers: &GroupPowerVector, p: &SurfacePoint) -> f64 {
    let pw = &powers.power;
    let c = p.t * pw.nonminority + (1.0 - p.t) * pw.republican;
    pw.minority * p.s / (pw.minority * p.s + c * (1.0 - p.s))
}

pub fn classify_curvature(powers: &GroupPowerVector) -> CurvatureClass {
    let p = &powers.power;
    if p.minority > p.nonminority && p.minority > p.republican {
        CurvatureClass::Concave
    } else if p.minority < p.nonminority && p.minority < p.republican {
        CurvatureClass::Convex
    } else {
        CurvatureClass::Indeterminate
    }
}

/// Σ_k T_mD,k.
pub fn linear_welfare(plan: &DistrictingPlan, powers: &GroupPowerVector) -> Result<f64> {
    let mut total = 0.0;
    for d in plan.districts()? {
        total += minority_share(powers, &d)?;
    }
    Ok(total)
}

/// Σ_k N_mD,k u_mD(b_mD,k) with b = π_mD/Π_k.
pub fn crra_welfare(plan: &DistrictingPlan, powers: &GroupPowerVector, kappa: f64, epsilon: f64) -> Result<f64> {
    let mut total = 0.0;
    for d in plan.districts()? {
        let n = d.count(GroupId::Minority);
        if n == 0.0 {
            continue;
        }
        let b = powers.power.minority / DistrictPower::of(powers, &d)?.value;
        total += n * crra(kappa, epsilon, b)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitionWelfare {
    pub crra: f64,
    /// Σ_k T_mD,k, the quantity tabulated for the benchmark state.
    pub linear: f64,
}

pub fn competition_welfare(
    plan: &DistrictingPlan,
    powers: &GroupPowerVector,
    profile: &crate::electoral::GroupProfile,
) -> Result<CompetitionWelfare> {
    Ok(CompetitionWelfare {
        crra: crra_welfare(plan, powers, profile.kappa, profile.epsilon)?,
        linear: linear_welfare(plan, powers)?,
    })
}

/// R(𝐃) = max_k N_mD,k − min_k N_mD,k.
pub fn concentration_range(plan: &DistrictingPlan) -> f64 {
    let m = plan.minority_counts();
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapConfig {
    pub step: f64,
    pub min_step: f64,
    pub min_gain: f64,
    pub max_swaps: usize,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig {
            step: 0.05,
            min_step: 1e-6,
            min_gain: 1e-12,
            max_swaps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub plan: DistrictingPlan,
    pub objective_before: f64,
    pub objective_after: f64,
    pub swaps: usize,
    /// π_nD = π_R: the swap objective is flat and the plan is returned as is.
    pub degenerate: bool,
}

/// Pairwise nonminority swaps that raise Σ_k T_mD,k.
///
/// For a pair (k, l), district k hands `step` of the stronger nonminority
/// group to l and receives the same mass of the weaker group. To first order
/// the gain is δ π_mD (π_H − π_L)(N_mD,k/Π_k² − N_mD,l/Π_l²); candidates are
/// ranked by the exact change in the objective.
pub fn swap_improve(plan: &DistrictingPlan, powers: &GroupPowerVector, config: SwapConfig) -> Result<SwapOutcome> {
    if plan.rows.iter().any(|r| r.iter().any(|(_, v)| *v < -1e-9)) {
        return Err(Error::InvalidPlan("negative share".into()));
    }
    let before = linear_welfare(plan, powers)?;
    let p = &powers.power;
    if p.nonminority == p.republican || plan.k() < 2 {
        return Ok(SwapOutcome {
            plan: plan.clone(),
            objective_before: before,
            objective_after: before,
            swaps: 0,
            degenerate: p.nonminority == p.republican,
        });
    }
    let (strong, weak) = if p.nonminority > p.republican {
        (GroupId::Nonminority, GroupId::Republican)
    } else {
        (GroupId::Republican, GroupId::Nonminority)
    };
    let size = plan.district_size;
    let share = |row: &PerGroup<f64>| -> f64 {
        let pi = p.dot(row) * size;
        if pi > 0.0 {
            p.minority * row.minority * size / pi
        } else {
            0.0
        }
    };
    let mut rows = plan.rows.clone();
    let mut values: Vec<f64> = rows.iter().map(share).collect();
    let mut step = config.step;
    let mut swaps = 0;
    while step >= config.min_step && swaps < config.max_swaps {
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for k in 0..rows.len() {
            for l in 0..rows.len() {
                if k == l || (rows[k].minority - rows[l].minority).abs() <= 1e-12 {
                    continue;
                }
                let delta = step.min(rows[k][strong]).min(rows[l][weak]);
                if delta <= 0.0 {
                    continue;
                }
                let mut rk = rows[k];
                let mut rl = rows[l];
                rk[strong] -= delta;
                rk[weak] += delta;
                rl[strong] += delta;
                rl[weak] -= delta;
                let gain = share(&rk) + share(&rl) - values[k] - values[l];
                if gain >= config.min_gain && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, k, l, delta));
                }
            }
        }
        match best {
            Some((_, k, l, delta)) => {
                rows[k][strong] -= delta;
                rows[k][weak] += delta;
                rows[l][strong] += delta;
                rows[l][weak] -= delta;
                for r in [k, l] {
                    for g in GroupId::ALL {
                        if rows[r][g].abs() < 1e-15 {
                            rows[r][g] = 0.0;
                        }
                    }
                }
                values[k] = share(&rows[k]);
                values[l] = share(&rows[l]);
                swaps += 1;
            }
            None => step *= 0.5,
        }
    }
    let out = DistrictingPlan::new(rows, size)?;
    let after = linear_welfare(&out, powers)?;
    Ok(SwapOutcome {
        plan: out,
        objective_before: before,
        objective_after: after,
        swaps,
        degenerate: false,
    })
}
