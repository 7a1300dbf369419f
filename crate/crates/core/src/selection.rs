//! Candidate selection: nomination and election probabilities, their
//! derivatives, expected ideological payoff and β thresholds.

use serde::{Deserialize, Serialize};

use crate::electoral::{stage_win_probabilities, DistrictComposition};
use crate::error::{Error, Result};
use crate::group::{GroupId, PerGroup, PrimaryRule};
use crate::plan::DistrictingPlan;

/// Aggregate supports Φ_i^e(μ_i^e) for stages 1 (primary, mD over nD),
/// 2 (mD over R) and 3 (nD over R).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportLevels {
    pub stage1: PerGroup<f64>,
    pub stage2: PerGroup<f64>,
    pub stage3: PerGroup<f64>,
}

impl SupportLevels {
    /// `phi[e-1]` holds stage e in (mD, nD, R) order.
    pub fn new(phi: [[f64; 3]; 3]) -> Result<Self> {
        let s = SupportLevels {
            stage1: PerGroup::from_array(phi[0]),
            stage2: PerGroup::from_array(phi[1]),
            stage3: PerGroup::from_array(phi[2]),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for e in 1..=3 {
            for (g, v) in self.stage(e).iter() {
                if !(*v > 0.0 && *v < 1.0) {
                    return Err(Error::param(
                        "support",
                        format!("stage {e} support of {g} is {v}, outside (0,1)"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn stage(&self, e: usize) -> &PerGroup<f64> {
        match e {
            1 => &self.stage1,
            2 => &self.stage2,
            3 => &self.stage3,
            _ => panic!("stage index {e} out of range"),
        }
    }

    /// Departures from the usual ordering of supports. These are reported,
    /// not rejected; every formula stays well defined.
    pub fn ordering_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in [1, 2] {
            let p = self.stage(e);
            if !(p.minority > p.nonminority && p.nonminority > p.republican) {
                out.push(format!("stage {e}: expected Φ_mD > Φ_nD > Φ_R"));
            }
        }
        let p = self.stage(3);
        if !(p.minority > p.republican) {
            out.push("stage 3: expected Φ_mD > Φ_R".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdeologyWeights {
    /// Minority payoff when the nonminority Democrat wins (mD winner = 1, R = 0).
    pub beta: f64,
}

impl IdeologyWeights {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::param("beta", format!("{beta} outside [0,1]")));
        }
        Ok(IdeologyWeights { beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinProbabilities {
    pub psi1: f64,
    pub psi2: f64,
    pub psi_total: f64,
}

pub fn minority_win_prob(
    support: &SupportLevels,
    district: &DistrictComposition,
    rule: PrimaryRule,
) -> Result<WinProbabilities> {
    let sp = stage_win_probabilities(support, rule, district)?;
    Ok(WinProbabilities {
        psi1: sp.psi1_md,
        psi2: sp.psi2_md,
        psi_total: sp.psi_md,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDerivative {
    /// Primary-stage term ∂Ψ¹·Ψ².
    pub primary: f64,
    /// General-stage term Ψ¹·∂Ψ².
    pub general: f64,
    pub total: f64,
}

impl SplitDerivative {
    fn new(primary: f64, general: f64) -> Self {
        SplitDerivative {
            primary,
            general,
            total: primary + general,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionDerivatives {
    /// Adding minority voters (district grows).
    pub d_n_md: SplitDerivative,
    /// Adding nonminority Democrats (district grows).
    pub d_n_nd: SplitDerivative,
    /// Replacing Republicans by nonminority Democrats, N_k and N_mD fixed.
    pub substitution: SplitDerivative,
}

pub fn selection_derivatives(
    support: &SupportLevels,
    district: &DistrictComposition,
    rule: PrimaryRule,
) -> Result<SelectionDerivatives> {
    let wp = minority_win_prob(support, district, rule)?;
    let n = district.counts();
    let nk = district.total();
    let (a, b, c) = (support.stage1.minority, support.stage1.nonminority, support.stage1.republican);
    let (a2, b2, c2) = (support.stage2.minority, support.stage2.nonminority, support.stage2.republican);

    let (p1_md, p1_nd, p1_sub) = match rule {
        PrimaryRule::Closed => {
            let m = n.minority + n.nonminority;
            let m2 = m * m;
            ((a - b) * n.nonminority / m2, (b - a) * n.minority / m2, (b - a) * n.minority / m2)
        }
        PrimaryRule::Open => {
            let n2 = nk * nk;
            (
                ((a - b) * n.nonminority + (a - c) * n.republican) / n2,
                ((b - a) * n.minority + (b - c) * n.republican) / n2,
                (b - c) / nk,
            )
        }
    };
    let n2 = nk * nk;
    let g_md = ((a2 - b2) * n.nonminority + (a2 - c2) * n.republican) / n2;
    let g_nd = ((b2 - a2) * n.minority + (b2 - c2) * n.republican) / n2;
    let g_sub = (b2 - c2) / nk;
    Ok(SelectionDerivatives {
        d_n_md: SplitDerivative::new(p1_md * wp.psi2, wp.psi1 * g_md),
        d_n_nd: SplitDerivative::new(p1_nd * wp.psi2, wp.psi1 * g_nd),
        substitution: SplitDerivative::new(p1_sub * wp.psi2, wp.psi1 * g_sub),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConvexity {
    /// −1, 0 or +1.
    pub second_derivative_sign: i8,
    pub condition_value: f64,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn mix(p: &PerGroup<f64>, t: f64) -> f64 {
    t * p.nonminority + (1.0 - t) * p.republican
}

/// Curvature of Ψ_mD in s along a ray of fixed t. Under the closed rule
/// the sign does not depend on s.
pub fn selection_convexity(support: &SupportLevels, t: f64, rule: PrimaryRule) -> Result<SelectionConvexity> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::param("t", format!("{t} must be interior")));
    }
    let s1 = &support.stage1;
    let s2 = &support.stage2;
    let (cond, prefactor) = match rule {
        PrimaryRule::Closed => (
            (s2.minority - s2.nonminority) * t - (1.0 - t) * s2.republican,
            s1.minority - s1.nonminority,
        ),
        PrimaryRule::Open => (
            (s1.minority - mix(s1, t)) * (s2.minority - mix(s2, t)),
            1.0,
        ),
    };
    Ok(SelectionConvexity {
        second_derivative_sign: sign(cond) * sign(prefactor),
        condition_value: cond,
    })
}

/// Ψ_mD(s) at (s, t), shares only.
pub fn win_prob_on_ray(support: &SupportLevels, s: f64, t: f64, rule: PrimaryRule) -> f64 {
    let (psi1, _) = primary_on_ray(support, s, t, rule);
    psi1 * general_on_ray(&support.stage2, s, t)
}

/// ∂²Ψ_mD/∂s² along the ray.
pub fn win_prob_second_derivative(support: &SupportLevels, s: f64, t: f64, rule: PrimaryRule) -> f64 {
    let s1 = &support.stage1;
    let s2 = &support.stage2;
    match rule {
        PrimaryRule::Closed => {
            let d = t + (1.0 - t) * s;
            let cond = (s2.minority - s2.nonminority) * t - (1.0 - t) * s2.republican;
            2.0 * t * (s1.minority - s1.nonminority) / (d * d * d) * cond
        }
        PrimaryRule::Open => 2.0 * (s1.minority - mix(s1, t)) * (s2.minority - mix(s2, t)),
    }
}

// (Ψ¹, ∂Ψ¹/∂s) along the ray
fn primary_on_ray(support: &SupportLevels, s: f64, t: f64, rule: PrimaryRule) -> (f64, f64) {
    let p = &support.stage1;
    match rule {
        PrimaryRule::Closed => {
            let d = t + (1.0 - t) * s;
            let v = ((p.minority - p.nonminority * t) * s + p.nonminority * t) / d;
            let dv = t * (p.minority - p.nonminority) / (d * d);
            (v, dv)
        }
        PrimaryRule::Open => (
            p.minority * s + (1.0 - s) * mix(p, t),
            p.minority - mix(p, t),
        ),
    }
}

fn general_on_ray(p: &PerGroup<f64>, s: f64, t: f64) -> f64 {
    p.minority * s + (1.0 - s) * mix(p, t)
}

/// E[μ_mD | k] = Ψ_mD + β Ψ_nD.
pub fn expected_ideology(
    support: &SupportLevels,
    district: &DistrictComposition,
    rule: PrimaryRule,
    weights: IdeologyWeights,
) -> Result<f64> {
    let sp = stage_win_probabilities(support, rule, district)?;
    Ok(sp.psi_md + weights.beta * sp.psi_nd)
}

/// ∂²E[μ|k]/∂N_mD² with N_nD and N_k fixed (Republicans absorb the change).
pub fn expected_ideology_curvature(
    support: &SupportLevels,
    district: &DistrictComposition,
    rule: PrimaryRule,
    weights: IdeologyWeights,
) -> Result<f64> {
    let parts = curvature_parts(support, district, rule)?;
    Ok(parts.prefactor * (parts.numerator - weights.beta * parts.denominator))
}

// E'' = prefactor · (numerator − β · denominator)
struct CurvatureParts {
    prefactor: f64,
    numerator: f64,
    denominator: f64,
}

fn curvature_parts(support: &SupportLevels, district: &DistrictComposition, rule: PrimaryRule) -> Result<CurvatureParts> {
    let n = district.counts();
    let nk = district.total();
    let (s1, s2, s3) = (&support.stage1, &support.stage2, &support.stage3);
    Ok(match rule {
        PrimaryRule::Closed => {
            let m = n.minority + n.nonminority;
            if !(m > 0.0) {
                return Err(Error::EmptyElectorate);
            }
            CurvatureParts {
                prefactor: 2.0 * (s1.minority - s1.nonminority) * n.nonminority / (nk * m * m * m),
                numerator: (s2.minority - s2.nonminority) * n.nonminority - s2.republican * nk,
                denominator: (s3.minority - s3.nonminority) * n.nonminority - s3.republican * nk,
            }
        }
        PrimaryRule::Open => CurvatureParts {
            prefactor: 2.0 * (s1.minority - s1.republican) / (nk * nk),
            numerator: s2.minority - s2.republican,
            denominator: s3.minority - s3.republican,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRegime {
    ClosedPosDenominator,
    ClosedNegDenominator,
    Open,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaThreshold {
    /// NaN when the regime is degenerate.
    pub value: f64,
    pub regime: ThresholdRegime,
    pub denominator: f64,
    numerator: f64,
    prefactor_sign: i8,
}

impl BetaThreshold {
    /// Whether E[μ|k] is strictly convex in N_mD at this β. `None` when the
    /// curvature vanishes identically in β.
    pub fn is_convex(&self, beta: f64) -> Option<bool> {
        let core = self.numerator - beta * self.denominator;
        match (self.prefactor_sign, sign(core)) {
            (0, _) | (_, 0) => None,
            (p, c) => Some(p * c > 0),
        }
    }
}

const DEGENERATE_DENOM: f64 = 1e-12;

pub fn beta_threshold(support: &SupportLevels, district: &DistrictComposition, rule: PrimaryRule) -> Result<BetaThreshold> {
    let parts = curvature_parts(support, district, rule)?;
    let degenerate = parts.denominator.abs() < DEGENERATE_DENOM;
    let regime = match (rule, degenerate) {
        (_, true) => ThresholdRegime::Degenerate,
        (PrimaryRule::Open, false) => ThresholdRegime::Open,
        (PrimaryRule::Closed, false) if parts.denominator > 0.0 => ThresholdRegime::ClosedPosDenominator,
        (PrimaryRule::Closed, false) => ThresholdRegime::ClosedNegDenominator,
    };
    Ok(BetaThreshold {
        value: if degenerate { f64::NAN } else { parts.numerator / parts.denominator },
        regime,
        denominator: parts.denominator,
        numerator: parts.numerator,
        prefactor_sign: sign(parts.prefactor),
    })
}

/// W^s = Σ_k N_mD,k E[μ|k].
pub fn selection_welfare(
    plan: &DistrictingPlan,
    support: &SupportLevels,
    rule: PrimaryRule,
    weights: IdeologyWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for d in plan.districts()? {
        let n = d.count(GroupId::Minority);
        if n == 0.0 {
            continue;
        }
        total += n * expected_ideology(support, &d, rule, weights)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support() -> SupportLevels {
        SupportLevels::new([[0.8, 0.4, 0.2], [0.9, 0.5, 0.1], [0.7, 0.6, 0.2]]).unwrap()
    }

    fn d(a: f64, b: f64, c: f64) -> DistrictComposition {
        DistrictComposition::new(PerGroup::new(a, b, c)).unwrap()
    }

    #[test]
    fn pure_minority_district() {
        let s = support();
        let w = minority_win_prob(&s, &d(1.0, 0.0, 0.0), PrimaryRule::Closed).unwrap();
        assert_eq!(w.psi1, 0.8);
        assert_eq!(w.psi2, 0.9);
    }

    #[test]
    fn symmetric_open_rule() {
        let s = SupportLevels::new([[0.3; 3]; 3]).unwrap();
        let w = minority_win_prob(&s, &d(0.2, 0.5, 0.3), PrimaryRule::Open).unwrap();
        assert!((w.psi_total - 0.09).abs() < 1e-15);
    }

    #[test]
    fn convexity_examples() {
        let s = support();
        let c = selection_convexity(&s, 0.999, PrimaryRule::Closed).unwrap();
        assert_eq!(c.second_derivative_sign, 1);
        assert_eq!(selection_convexity(&s, 0.3, PrimaryRule::Open).unwrap().second_derivative_sign, 1);
        let s2 = SupportLevels::new([[0.8, 0.4, 0.2], [0.6, 0.5, 0.4], [0.7, 0.6, 0.2]]).unwrap();
        let c = selection_convexity(&s2, 0.5, PrimaryRule::Closed).unwrap();
        assert!((c.condition_value - (0.05 - 0.2)).abs() < 1e-15);
        assert_eq!(c.second_derivative_sign, -1);
    }

    #[test]
    fn substitution_without_general_gap() {
        let s = SupportLevels::new([[0.8, 0.4, 0.2], [0.9, 0.3, 0.3], [0.7, 0.6, 0.2]]).unwrap();
        let der = selection_derivatives(&s, &d(0.3, 0.3, 0.4), PrimaryRule::Closed).unwrap();
        assert_eq!(der.substitution.general, 0.0);
        assert!(der.substitution.total < 0.0);
    }

    #[test]
    fn ideology_collapses() {
        let s = support();
        let dist = d(0.3, 0.3, 0.4);
        let e0 = expected_ideology(&s, &dist, PrimaryRule::Closed, IdeologyWeights::new(0.0).unwrap()).unwrap();
        let w = minority_win_prob(&s, &dist, PrimaryRule::Closed).unwrap();
        assert_eq!(e0, w.psi_total);
        let same = SupportLevels::new([[0.8, 0.4, 0.2], [0.9, 0.5, 0.1], [0.9, 0.5, 0.1]]).unwrap();
        let e1 = expected_ideology(&same, &dist, PrimaryRule::Open, IdeologyWeights::new(1.0).unwrap()).unwrap();
        let g = 0.9 * 0.3 + 0.5 * 0.3 + 0.1 * 0.4;
        assert!((e1 - g).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let s = SupportLevels::new([[0.8, 0.4, 0.2], [0.9, 0.5, 0.1], [0.7, 0.6, 0.2]]).unwrap();
        let th = beta_threshold(&s, &d(0.2, 0.5, 0.3), PrimaryRule::Closed).unwrap();
        assert!((th.value + 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(th.regime, ThresholdRegime::ClosedNegDenominator);
        for beta in [0.0, 0.5, 1.0] {
            assert_eq!(th.is_convex(beta), Some(true));
        }
        let same = SupportLevels::new([[0.8, 0.4, 0.2], [0.7, 0.5, 0.3], [0.7, 0.5, 0.3]]).unwrap();
        let th = beta_threshold(&same, &d(0.2, 0.5, 0.3), PrimaryRule::Open).unwrap();
        assert!((th.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_threshold() {
        // (0.6 - 0.2)·0.5 − 0.2·1 = 0
        let s = SupportLevels::new([[0.8, 0.4, 0.2], [0.9, 0.5, 0.1], [0.6, 0.2, 0.2]]).unwrap();
        let th = beta_threshold(&s, &d(0.2, 0.5, 0.3), PrimaryRule::Closed).unwrap();
        assert_eq!(th.regime, ThresholdRegime::Degenerate);
        assert!(th.value.is_nan());
    }

    #[test]
    fn welfare_examples() {
        let s = support();
        let w = IdeologyWeights::new(0.0).unwrap();
        let none = DistrictingPlan::from_arrays(&[[0.0, 0.5, 0.5]; 2], 1.0).unwrap();
        assert_eq!(selection_welfare(&none, &s, PrimaryRule::Closed, w).unwrap(), 0.0);
        let one = DistrictingPlan::from_arrays(&[[0.5, 0.3, 0.2], [0.0, 0.5, 0.5]], 1.0).unwrap();
        let e = expected_ideology(&s, &one.district(0).unwrap(), PrimaryRule::Closed, w).unwrap();
        assert!((selection_welfare(&one, &s, PrimaryRule::Closed, w).unwrap() - 0.5 * e).abs() < 1e-15);
    }
}
