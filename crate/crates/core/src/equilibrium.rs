//! Matchup-resolved welfare, the curvature decomposition W_ss = C + I, the
//! interaction term and safe/tipping classification.
//!
//! Curvature is district-local: district k moves along its ray of fixed
//! nonminority mix t_k, and W is differentiated in s_k through
//! N_k·w(s_k). A reservoir district absorbs the opposite transfer so the
//! perturbed plan stays feasible; its own welfare change is not folded into
//! district k's report.

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityDistribution;
use crate::electoral::{check_epsilon, crra, group_power, validate_profiles, GroupPowerVector, GroupProfile, MatchupContext};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::group::{GroupId, MatchupKey, PerGroup, PrimaryRule};
use crate::numdiff;
use crate::plan::DistrictingPlan;
use crate::selection::{IdeologyWeights, SupportLevels};

/// How general-election environments respond to district composition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchupMode {
    /// Two discrete matchups weighted by the primary outcome.
    #[default]
    ExpectationWeighted,
    /// Offsets interpolate between matchups: μ̄_i = Ψ¹μ_i² + (1−Ψ¹)μ_i³, with
    /// general-stage Φ, φ and π evaluated at μ̄_i.
    Smoothed,
    /// Distributive weights and powers held at constants; selection still
    /// responds to composition.
    Frozen { primary_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitives {
    pub profiles: PerGroup<GroupProfile>,
    /// Contexts for stages 1, 2, 3.
    pub matchups: [MatchupContext; 3],
}

impl Primitives {
    pub fn validate(&self) -> Result<()> {
        validate_profiles(&self.profiles, &MatchupKey::ALL)?;
        for (i, m) in self.matchups.iter().enumerate() {
            if m.key.stage() != i + 1 {
                return Err(Error::param("matchups", format!("entry {i} has key {}", m.key)));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.profiles.minority.epsilon
    }

    fn dist(&self, g: GroupId, stage: usize) -> &AffinityDistribution {
        let key = MatchupKey::from_stage(stage).expect("stage in 1..=3");
        &self.profiles[g].affinity[&key]
    }

    /// Φ_i^e(μ_i^e) for every stage.
    pub fn support(&self) -> Result<SupportLevels> {
        let phi = |stage: usize| {
            let ctx = &self.matchups[stage - 1];
            GroupId::ALL.map(|g| self.dist(g, stage).cdf(ctx.mu[g]))
        };
        SupportLevels::new([phi(1), phi(2), phi(3)])
    }

    pub fn powers(&self) -> Result<[GroupPowerVector; 3]> {
        Ok([
            group_power(&self.profiles, &self.matchups[0])?,
            group_power(&self.profiles, &self.matchups[1])?,
            group_power(&self.profiles, &self.matchups[2])?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupResolvedScenario {
    pub primitives: Option<Primitives>,
    pub support: SupportLevels,
    /// π^e for stages 1, 2, 3.
    pub powers: [GroupPowerVector; 3],
    /// Weight on minority consumption utility in welfare; zero shuts the
    /// distributive channel without touching the powers.
    pub minority_kappa: f64,
    /// Scale on the descriptive payoff E[μ|k]; zero shuts the selection channel.
    #[serde(default = "unit")]
    pub descriptive_weight: f64,
    pub epsilon: f64,
    pub weights: IdeologyWeights,
    pub rule: PrimaryRule,
    pub mode: MatchupMode,
}

const BRIDGE_TOL: f64 = 1e-9;

fn unit() -> f64 {
    1.0
}

impl MatchupResolvedScenario {
    pub fn from_primitives(
        primitives: Primitives,
        weights: IdeologyWeights,
        rule: PrimaryRule,
        mode: MatchupMode,
    ) -> Result<Self> {
        primitives.validate()?;
        let support = primitives.support()?;
        let powers = primitives.powers()?;
        let s = MatchupResolvedScenario {
            support,
            powers,
            minority_kappa: primitives.profiles.minority.kappa,
            descriptive_weight: 1.0,
            epsilon: primitives.epsilon(),
            primitives: Some(primitives),
            weights,
            rule,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_reduced_form(
        support: SupportLevels,
        powers: [GroupPowerVector; 3],
        minority_kappa: f64,
        epsilon: f64,
        weights: IdeologyWeights,
        rule: PrimaryRule,
        mode: MatchupMode,
    ) -> Result<Self> {
        let s = MatchupResolvedScenario {
            primitives: None,
            support,
            powers,
            minority_kappa,
            descriptive_weight: 1.0,
            epsilon,
            weights,
            rule,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        self.support.validate()?;
        if !(self.minority_kappa.is_finite() && self.minority_kappa >= 0.0) {
            return Err(Error::param("minority_kappa", "must be nonnegative"));
        }
        if !(self.descriptive_weight.is_finite() && self.descriptive_weight >= 0.0) {
            return Err(Error::param("descriptive_weight", "must be nonnegative"));
        }
        for (i, p) in self.powers.iter().enumerate() {
            if p.context.stage() != i + 1 {
                return Err(Error::param("powers", format!("entry {i} has context {}", p.context)));
            }
        }
        match (self.mode, &self.primitives) {
            (MatchupMode::Smoothed, None) => {
                return Err(Error::param("matchup_mode", "smoothed mode needs primitives"));
            }
            (MatchupMode::Frozen { primary_weight }, _) if !(0.0..=1.0).contains(&primary_weight) => {
                return Err(Error::param("primary_weight", "must lie in [0,1]"));
            }
            _ => {}
        }
        if let Some(p) = &self.primitives {
            self.check_reduced_form(&p.support()?, &p.powers()?)?;
        }
        Ok(())
    }

    /// Errors unless the given reduced forms match this scenario within 1e-9.
    pub fn check_reduced_form(&self, support: &SupportLevels, powers: &[GroupPowerVector; 3]) -> Result<()> {
        for e in 1..=3 {
            for g in GroupId::ALL {
                let (a, b) = (self.support.stage(e)[g], support.stage(e)[g]);
                if (a - b).abs() > BRIDGE_TOL {
                    return Err(Error::param("support", format!("stage {e} {g}: {a} vs {b}")));
                }
                let (a, b) = (self.powers[e - 1].power[g], powers[e - 1].power[g]);
                if (a - b).abs() > BRIDGE_TOL * a.abs().max(1.0) {
                    return Err(Error::param("powers", format!("stage {e} {g}: {a} vs {b}")));
                }
            }
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: MatchupMode) -> Result<Self> {
        self.mode = mode;
        self.validate()?;
        Ok(self)
    }

    pub fn with_minority_kappa(mut self, kappa: f64) -> Result<Self> {
        self.minority_kappa = kappa;
        self.validate()?;
        Ok(self)
    }

    pub fn with_descriptive_weight(mut self, weight: f64) -> Result<Self> {
        self.descriptive_weight = weight;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.weights = IdeologyWeights::new(beta)?;
        Ok(self)
    }
}

/// Electoral environment of one district at minority share s on its ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    /// Weight of the mD–R general election in distributive welfare.
    pub omega: f64,
    pub pi2: PerGroup<f64>,
    pub pi3: PerGroup<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareParts {
    pub selection: f64,
    pub distributive: f64,
}

impl WelfareParts {
    pub fn total(&self) -> f64 {
        self.selection + self.distributive
    }
}

fn ray_shares(s: f64, t: f64) -> PerGroup<f64> {
    PerGroup::new(s, (1.0 - s) * t, (1.0 - s) * (1.0 - t))
}

fn primary_prob(support: &PerGroup<f64>, x: &PerGroup<f64>, rule: PrimaryRule) -> Result<f64> {
    match rule {
        PrimaryRule::Closed => {
            let m = x.minority + x.nonminority;
            if !(m > 0.0) {
                return Err(Error::EmptyElectorate);
            }
            Ok((support.minority * x.minority + support.nonminority * x.nonminority) / m)
        }
        PrimaryRule::Open => Ok(support.dot(x) / x.sum()),
    }
}

/// (ω, ω′, ω″) of the primary probability along the ray.
fn primary_on_ray(support: &PerGroup<f64>, s: f64, t: f64, rule: PrimaryRule) -> (f64, f64, f64) {
    let (a, b, c) = (support.minority, support.nonminority, support.republican);
    match rule {
        PrimaryRule::Closed => {
            let d = t + (1.0 - t) * s;
            let v = ((a - b * t) * s + b * t) / d;
            let d1 = t * (a - b) / (d * d);
            let d2 = -2.0 * t * (a - b) * (1.0 - t) / (d * d * d);
            (v, d1, d2)
        }
        PrimaryRule::Open => {
            let m = t * b + (1.0 - t) * c;
            (a * s + (1.0 - s) * m, a - m, 0.0)
        }
    }
}

impl MatchupResolvedScenario {
    fn prims(&self) -> &Primitives {
        self.primitives.as_ref().expect("validated: smoothed mode has primitives")
    }

    /// Expected offsets μ̄_i given the primary probability.
    pub fn mean_offsets(&self, psi1: f64) -> Option<PerGroup<f64>> {
        let p = self.primitives.as_ref()?;
        let (m2, m3) = (&p.matchups[1].mu, &p.matchups[2].mu);
        Some(PerGroup::from_fn(|g| psi1 * m2[g] + (1.0 - psi1) * m3[g]))
    }

    pub fn local_state(&self, shares: &PerGroup<f64>) -> Result<LocalState> {
        let psi1 = primary_prob(&self.support.stage1, shares, self.rule)?;
        let n = shares.sum();
        match self.mode {
            MatchupMode::ExpectationWeighted | MatchupMode::Frozen { .. } => {
                let omega = match self.mode {
                    MatchupMode::Frozen { primary_weight } => primary_weight,
                    _ => psi1,
                };
                Ok(LocalState {
                    psi1,
                    psi2: self.support.stage2.dot(shares) / n,
                    psi3: self.support.stage3.dot(shares) / n,
                    omega,
                    pi2: self.powers[1].power,
                    pi3: self.powers[2].power,
                })
            }
            MatchupMode::Smoothed => {
                let prims = self.prims();
                let mu = self.mean_offsets(psi1).expect("primitives present");
                let mut out = LocalState {
                    psi1,
                    psi2: 0.0,
                    psi3: 0.0,
                    omega: psi1,
                    pi2: PerGroup::default(),
                    pi3: PerGroup::default(),
                };
                for g in GroupId::ALL {
                    let prof = &prims.profiles[g];
                    for stage in [2, 3] {
                        let d = prims.dist(g, stage);
                        let phi = d.pdf(mu[g]);
                        if !(phi > 0.0) {
                            return Err(Error::ZeroDensity {
                                group: g,
                                key: MatchupKey::from_stage(stage).unwrap(),
                                at: mu[g],
                            });
                        }
                        let pi = (prof.kappa * phi).powf(1.0 / prof.epsilon);
                        let cdf = d.cdf(mu[g]) * shares[g] / n;
                        if stage == 2 {
                            out.pi2[g] = pi;
                            out.psi2 += cdf;
                        } else {
                            out.pi3[g] = pi;
                            out.psi3 += cdf;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Minority distributive welfare of a district with counts `counts`
    /// given distributive weight ω and powers.
    fn distributive(&self, counts: &PerGroup<f64>, omega: f64, pi2: &PerGroup<f64>, pi3: &PerGroup<f64>) -> Result<f64> {
        let n_md = counts.minority;
        if n_md == 0.0 || self.minority_kappa == 0.0 {
            return Ok(0.0);
        }
        let b2 = pi2.minority / pi2.dot(counts);
        let b3 = pi3.minority / pi3.dot(counts);
        let u2 = crra(self.minority_kappa, self.epsilon, b2)?;
        let u3 = crra(self.minority_kappa, self.epsilon, b3)?;
        Ok(n_md * (omega * u2 + (1.0 - omega) * u3))
    }

    pub fn district_parts(&self, counts: &PerGroup<f64>) -> Result<WelfareParts> {
        let n = counts.sum();
        if !(n > 0.0) {
            return Err(Error::param("counts", "district is empty"));
        }
        if counts.minority == 0.0 {
            return Ok(WelfareParts {
                selection: 0.0,
                distributive: 0.0,
            });
        }
        let shares = counts.map(|_, c| c / n);
        let st = self.local_state(&shares)?;
        let psi_md = st.psi1 * st.psi2;
        let psi_nd = (1.0 - st.psi1) * st.psi3;
        Ok(WelfareParts {
            selection: self.descriptive_weight * counts.minority * (psi_md + self.weights.beta * psi_nd),
            distributive: self.distributive(counts, st.omega, &st.pi2, &st.pi3)?,
        })
    }

    pub fn ray_parts(&self, s: f64, t: f64, total: f64) -> Result<WelfareParts> {
        self.district_parts(&ray_shares(s, t).map(|_, v| v * total))
    }
}

pub fn welfare_parts(scenario: &MatchupResolvedScenario, plan: &DistrictingPlan) -> Result<WelfareParts> {
    let mut acc = WelfareParts {
        selection: 0.0,
        distributive: 0.0,
    };
    for d in plan.districts()? {
        let p = scenario.district_parts(d.counts())?;
        acc.selection += p.selection;
        acc.distributive += p.distributive;
    }
    Ok(acc)
}

/// Minority welfare of a plan with matchups resolved per district.
pub fn total_welfare(scenario: &MatchupResolvedScenario, plan: &DistrictingPlan) -> Result<f64> {
    Ok(welfare_parts(scenario, plan)?.total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistrictClass {
    Safe,
    Tipping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// I shares the sign of C.
    Reinforcing,
    /// I opposes C but is smaller.
    Attenuating,
    /// I opposes C and flips the sign of total curvature.
    Overturning,
    Negligible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    AlignedConvex,
    AlignedConcave,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TippingThresholds {
    pub psi_slope: f64,
    pub mu_slope: f64,
    pub density_slope: f64,
}

impl Default for TippingThresholds {
    fn default() -> Self {
        TippingThresholds {
            psi_slope: 0.5,
            mu_slope: 0.1,
            density_slope: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureConfig {
    /// Central-difference step in share units.
    pub h: f64,
    pub min_h: f64,
    /// District that absorbs the opposite transfer; `None` picks the next index.
    pub reservoir: Option<usize>,
    /// |I| at or below this multiple of max(1, |C|) counts as negligible.
    pub negligible: f64,
    pub thresholds: TippingThresholds,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        CurvatureConfig {
            h: 1e-4,
            min_h: 1e-6,
            reservoir: None,
            negligible: 1e-8,
            thresholds: TippingThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEntry {
    pub district: usize,
    pub s: f64,
    pub t: f64,
    pub h: f64,
    pub w: f64,
    pub w_ss: f64,
    /// W^s_ss.
    pub selection_ss: f64,
    /// W^{c,0}_ss: distributive curvature with weights and powers frozen.
    pub competition_ss: f64,
    pub c: f64,
    /// Analytic interaction term.
    pub i: f64,
    /// W_ss − (C + I); W_ss and C are numerical, so this checks the decomposition.
    pub residual: f64,
    pub classification: DistrictClass,
    pub feedback: Feedback,
    pub alignment: Alignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub entries: Vec<CurvatureEntry>,
    pub matchup_mode: MatchupMode,
    pub freeze_convention: String,
    pub thresholds: TippingThresholds,
}

pub const FREEZE_CONVENTION: &str =
    "W^{c,0}_ss freezes both the distributive matchup weights and all group powers at the base point";

fn ray_of(plan: &DistrictingPlan, k: usize) -> Result<(f64, f64)> {
    let row = plan
        .rows
        .get(k)
        .ok_or_else(|| Error::InvalidPlan(format!("no district {k}")))?;
    let s = row.minority;
    let non = row.nonminority + row.republican;
    let t = if non > 0.0 { row.nonminority / non } else { 0.5 };
    Ok((s, t))
}

fn reservoir_of(plan: &DistrictingPlan, k: usize, config: &CurvatureConfig) -> Result<usize> {
    if plan.k() < 2 {
        return Err(Error::InvalidPlan("a reservoir district is needed to perturb s_k".into()));
    }
    let l = config.reservoir.unwrap_or((k + 1) % plan.k());
    if l == k || l >= plan.k() {
        return Err(Error::InvalidPlan(format!("reservoir {l} is not a distinct district")));
    }
    Ok(l)
}

/// Range of s_k reachable by pairwise transfers with the reservoir, holding t_k.
pub fn feasible_share_range(plan: &DistrictingPlan, k: usize, config: &CurvatureConfig) -> Result<(f64, f64)> {
    let l = reservoir_of(plan, k, config)?;
    let (s, t) = ray_of(plan, k)?;
    let res = &plan.rows[l];
    let up = res.minority.max(0.0).min(1.0 - s);
    let mut down = s;
    if t > 0.0 {
        down = down.min(res.nonminority / t);
    }
    if t < 1.0 {
        down = down.min(res.republican / (1.0 - t));
    }
    Ok((s - down.max(0.0), s + up))
}

/// Decomposition of district k's welfare curvature W_ss = C + I.
pub fn welfare_curvature(
    scenario: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    k: usize,
    config: &CurvatureConfig,
) -> Result<CurvatureEntry> {
    let (s, t) = ray_of(plan, k)?;
    let (lo, hi) = feasible_share_range(plan, k, config)?;
    let mut h = config.h;
    while s - h < lo - 1e-15 || s + h > hi + 1e-15 {
        h *= 0.5;
        if h < config.min_h {
            return Err(Error::InfeasiblePerturbation { s, min_step: config.min_h });
        }
    }
    let mut e = curvature_at(scenario, s, t, plan.district_size, h, config)?;
    e.district = k;
    Ok(e)
}

/// Decomposition at an arbitrary point on a ray, ignoring plan feasibility.
pub fn curvature_at(
    scenario: &MatchupResolvedScenario,
    s: f64,
    t: f64,
    total: f64,
    h: f64,
    config: &CurvatureConfig,
) -> Result<CurvatureEntry> {
    if !(s - h >= 0.0 && s + h <= 1.0) {
        return Err(Error::InfeasiblePerturbation { s, min_step: h });
    }
    let base = scenario.local_state(&ray_shares(s, t))?;
    let eval = |x: f64| -> Result<[f64; 3]> {
        let counts = ray_shares(x, t).map(|_, v| v * total);
        let parts = scenario.district_parts(&counts)?;
        let frozen = scenario.distributive(&counts, base.omega, &base.pi2, &base.pi3)?;
        Ok([parts.total(), parts.selection, frozen])
    };
    let mid = eval(s)?;
    // Richardson-extrapolated central second differences
    let second = |step: f64| -> Result<[f64; 3]> {
        let (lo, hi) = (eval(s - step)?, eval(s + step)?);
        Ok([0, 1, 2].map(|j| (hi[j] - 2.0 * mid[j] + lo[j]) / (step * step)))
    };
    let (coarse, fine) = (second(h)?, second(h / 2.0)?);
    let [w_ss, selection_ss, competition_ss] = [0, 1, 2].map(|j| (4.0 * fine[j] - coarse[j]) / 3.0);
    let c = selection_ss + competition_ss;
    let i = interaction_at(scenario, s, t, total)?.total;
    let classification = classify_point(scenario, s, t, h, &config.thresholds)?;
    Ok(CurvatureEntry {
        district: 0,
        s,
        t,
        h,
        w: mid[0],
        w_ss,
        selection_ss,
        competition_ss,
        c,
        i,
        residual: w_ss - (c + i),
        classification,
        feedback: feedback_of(c, i, config.negligible),
        alignment: alignment_of(selection_ss, competition_ss),
    })
}

pub fn feedback_of(c: f64, i: f64, negligible: f64) -> Feedback {
    if i.abs() <= negligible * c.abs().max(1.0) {
        Feedback::Negligible
    } else if c == 0.0 || i.signum() == c.signum() {
        Feedback::Reinforcing
    } else if i.abs() > c.abs() {
        Feedback::Overturning
    } else {
        Feedback::Attenuating
    }
}

pub fn alignment_of(selection_ss: f64, competition_ss: f64) -> Alignment {
    if selection_ss > 0.0 && competition_ss > 0.0 {
        Alignment::AlignedConvex
    } else if selection_ss < 0.0 && competition_ss < 0.0 {
        Alignment::AlignedConcave
    } else {
        Alignment::Divergent
    }
}

pub fn curvature_report(
    scenario: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    config: &CurvatureConfig,
) -> Result<CurvatureReport> {
    let entries = (0..plan.k())
        .map(|k| welfare_curvature(scenario, plan, k, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureReport {
        entries,
        matchup_mode: scenario.mode,
        freeze_convention: FREEZE_CONVENTION.into(),
        thresholds: config.thresholds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerms {
    pub reweighting: f64,
    pub pivotality: f64,
    pub total: f64,
}

/// Analytic interaction term at district k's current share.
pub fn interaction_formula(scenario: &MatchupResolvedScenario, plan: &DistrictingPlan, k: usize) -> Result<InteractionTerms> {
    let (s, t) = ray_of(plan, k)?;
    interaction_at(scenario, s, t, plan.district_size)
}

/// Analytic interaction term on a ray. Expectation-weighted mode has no
/// pivotality component (powers are matchup constants); frozen mode has
/// neither.
pub fn interaction_at(scenario: &MatchupResolvedScenario, s: f64, t: f64, total: f64) -> Result<InteractionTerms> {
    let zero = InteractionTerms {
        reweighting: 0.0,
        pivotality: 0.0,
        total: 0.0,
    };
    if matches!(scenario.mode, MatchupMode::Frozen { .. }) || scenario.minority_kappa == 0.0 || s == 0.0 {
        return Ok(zero);
    }
    let (w, w1, w2) = primary_on_ray(&scenario.support.stage1, s, t, scenario.rule);
    let state = scenario.local_state(&ray_shares(s, t))?;
    // power paths per environment: (π, π′, π″)
    let (dpi, d2pi) = match scenario.mode {
        MatchupMode::Smoothed => power_derivatives(scenario, w, w1, w2)?,
        _ => ([PerGroup::default(); 2], [PerGroup::default(); 2]),
    };
    let envs = [(w, w1, w2, state.pi2, dpi[0], d2pi[0]), (1.0 - w, -w1, -w2, state.pi3, dpi[1], d2pi[1])];
    let q = 1.0 - scenario.epsilon;
    let kappa = scenario.minority_kappa;
    let x = ray_shares(s, t);
    let dx = PerGroup::new(1.0, -t, -(1.0 - t));
    let mut reweighting = 0.0;
    let mut pivotality = 0.0;
    for (om, om1, om2, pi, pi1, pi2) in envs {
        let d = pi.dot(&x);
        let ds = pi.dot(&dx);
        let b = pi.minority / (d * total);
        let bq = b.powf(q);
        let u = bq / q;
        let l_s = -ds / d;
        let l_ss = ds * ds / (d * d);
        let l_p = PerGroup::from_fn(|g| if g == GroupId::Minority { 1.0 / pi.minority } else { 0.0 } - x[g] / d);
        let l_sp = PerGroup::from_fn(|g| -dx[g] / d + x[g] * ds / (d * d));
        let u_s = bq * l_s;
        let _u_ss = bq * (q * l_s * l_s + l_ss);
        let u_p = l_p.map(|_, v| bq * v);
        let u_sp = PerGroup::from_fn(|g| bq * (q * l_s * l_p[g] + l_sp[g]));
        let u_pp = |i: GroupId, j: GroupId| {
            let own = if i == j && i == GroupId::Minority { -1.0 / (pi.minority * pi.minority) } else { 0.0 };
            bq * (q * l_p[i] * l_p[j] + own + x[i] * x[j] / (d * d))
        };
        let g0 = kappa * s * u;
        let g_s = kappa * (u + s * u_s);
        let g_p = u_p.map(|_, v| kappa * s * v);
        let g_sp = PerGroup::from_fn(|g| kappa * (u_p[g] + s * u_sp[g]));
        let mut quad = 0.0;
        for i in GroupId::ALL {
            for j in GroupId::ALL {
                quad += pi1[i] * kappa * s * u_pp(i, j) * pi1[j];
            }
        }
        reweighting += om2 * g0 + 2.0 * om1 * g_s;
        pivotality += 2.0 * om1 * g_p.dot(&pi1) + om * (2.0 * g_sp.dot(&pi1) + quad + g_p.dot(&pi2));
    }
    let (reweighting, pivotality) = (reweighting * total, pivotality * total);
    Ok(InteractionTerms {
        reweighting,
        pivotality,
        total: reweighting + pivotality,
    })
}

// π′ and π″ in s for the two general environments under smoothing
/// Derivatives for the two general matchups.
type PowerPair = [PerGroup<f64>; 2];

fn power_derivatives(
    scenario: &MatchupResolvedScenario,
    w: f64,
    w1: f64,
    w2: f64,
) -> Result<(PowerPair, PowerPair)> {
    let prims = scenario.prims();
    let mu = scenario.mean_offsets(w).expect("primitives present");
    let (m2, m3) = (&prims.matchups[1].mu, &prims.matchups[2].mu);
    let mut first = [PerGroup::default(); 2];
    let mut second = [PerGroup::default(); 2];
    for g in GroupId::ALL {
        let gap = m2[g] - m3[g];
        let (mu1, mu2) = (w1 * gap, w2 * gap);
        let prof = &prims.profiles[g];
        for (idx, stage) in [2usize, 3].into_iter().enumerate() {
            let d = prims.dist(g, stage);
            let phi = d.pdf(mu[g]);
            if !(phi > 0.0) {
                return Err(Error::ZeroDensity {
                    group: g,
                    key: MatchupKey::from_stage(stage).unwrap(),
                    at: mu[g],
                });
            }
            let r1 = d.pdf_derivative(mu[g]) / phi;
            let r2 = d.pdf_second_derivative(mu[g]) / phi;
            let pi = (prof.kappa * phi).powf(1.0 / prof.epsilon);
            let ln1 = r1 * mu1 / prof.epsilon;
            let ln2 = ((r2 - r1 * r1) * mu1 * mu1 + r1 * mu2) / prof.epsilon;
            first[idx][g] = pi * ln1;
            second[idx][g] = pi * (ln1 * ln1 + ln2);
        }
    }
    Ok((first, second))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMetrics {
    /// |∂Ψ¹/∂s|.
    pub psi_slope: f64,
    /// max_i |∂μ̄_i/∂s|.
    pub mu_slope: f64,
    /// max_i |∂ ln φ_i(μ̄_i)/∂s|; zero unless offsets are smoothed.
    pub density_slope: f64,
}

/// Feedback derivative magnitudes at s on a ray.
pub fn feedback_metrics(scenario: &MatchupResolvedScenario, s: f64, t: f64) -> Result<FeedbackMetrics> {
    if matches!(scenario.mode, MatchupMode::Frozen { .. }) {
        return Ok(FeedbackMetrics {
            psi_slope: 0.0,
            mu_slope: 0.0,
            density_slope: 0.0,
        });
    }
    let dh = 1e-6;
    let (a, b) = ((s - dh).max(0.0), (s + dh).min(1.0));
    let omega = |x: f64| primary_prob(&scenario.support.stage1, &ray_shares(x, t), scenario.rule);
    let (wa, wb) = (omega(a)?, omega(b)?);
    let psi_slope = ((wb - wa) / (b - a)).abs();
    let (mu_slope, density_slope) = match &scenario.primitives {
        None => (0.0, 0.0),
        Some(p) => {
            let (ma, mb) = (scenario.mean_offsets(wa).unwrap(), scenario.mean_offsets(wb).unwrap());
            let mu_slope = GroupId::ALL
                .iter()
                .map(|g| ((mb[*g] - ma[*g]) / (b - a)).abs())
                .fold(0.0, f64::max);
            let mut el: f64 = 0.0;
            if scenario.mode == MatchupMode::Smoothed {
                let mu = scenario.mean_offsets(omega(s)?).unwrap();
                for g in GroupId::ALL {
                    let slope = ((mb[g] - ma[g]) / (b - a)).abs();
                    for stage in [2, 3] {
                        let d = p.dist(g, stage);
                        let phi = d.pdf(mu[g]);
                        if phi > 0.0 {
                            el = el.max((d.pdf_derivative(mu[g]) / phi).abs() * slope);
                        }
                    }
                }
            }
            (mu_slope, el)
        }
    };
    Ok(FeedbackMetrics {
        psi_slope,
        mu_slope,
        density_slope,
    })
}

fn classify_point(scenario: &MatchupResolvedScenario, s: f64, t: f64, h: f64, th: &TippingThresholds) -> Result<DistrictClass> {
    const PROBES: usize = 5;
    for j in 0..PROBES {
        let x = (s - h + 2.0 * h * j as f64 / (PROBES - 1) as f64).clamp(0.0, 1.0);
        let m = feedback_metrics(scenario, x, t)?;
        if m.psi_slope >= th.psi_slope || m.mu_slope >= th.mu_slope || m.density_slope >= th.density_slope {
            return Ok(DistrictClass::Tipping);
        }
    }
    Ok(DistrictClass::Safe)
}

/// Safe iff all feedback derivatives stay below their cutoffs on [s_k−h, s_k+h].
pub fn classify_district(
    scenario: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    k: usize,
    thresholds: &TippingThresholds,
    h: f64,
) -> Result<DistrictClass> {
    let (s, t) = ray_of(plan, k)?;
    classify_point(scenario, s, t, h, thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TippingInterval {
    pub lower: f64,
    pub upper: f64,
    pub peak_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub s: f64,
    pub w: f64,
    pub w_ss: f64,
    pub c: f64,
    pub i: f64,
    pub residual: f64,
    pub psi1: f64,
    pub class: DistrictClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingReport {
    /// Run of tipping-classified sweep points around the Ψ¹ = 1/2 crossing;
    /// `None` in frozen mode, without a crossing, or if the crossing is safe.
    pub interval: Option<TippingInterval>,
    pub crossing: Option<f64>,
    pub max_abs_interaction: f64,
    pub samples: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub resolution: f64,
    pub curvature: CurvatureConfig,
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            resolution: 0.01,
            curvature: CurvatureConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Curvature decomposition along district k's feasible share range.
pub fn curvature_sweep(
    scenario: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    k: usize,
    config: &SweepConfig,
) -> Result<Vec<SweepPoint>> {
    if !(config.resolution > 0.0 && config.resolution < 0.5) {
        return Err(Error::param("resolution", "must lie in (0, 0.5)"));
    }
    let (_, t) = ray_of(plan, k)?;
    let (lo, hi) = feasible_share_range(plan, k, &config.curvature)?;
    let h = config.curvature.h;
    let n = (1.0 / config.resolution).round() as usize;
    let grid: Vec<f64> = (1..n)
        .map(|i| i as f64 / n as f64)
        .filter(|s| *s - h >= lo.max(0.0) - 1e-12 && *s + h <= hi.min(1.0) + 1e-12)
        .collect();
    let size = plan.district_size;
    let cc = config.curvature;
    config
        .execution
        .map(&grid, |s| {
            let e = curvature_at(scenario, *s, t, size, h, &cc)?;
            let psi1 = primary_prob(&scenario.support.stage1, &ray_shares(*s, t), scenario.rule)?;
            Ok(SweepPoint {
                s: *s,
                w: e.w,
                w_ss: e.w_ss,
                c: e.c,
                i: e.i,
                residual: e.residual,
                psi1,
                class: e.classification,
            })
        })
        .into_iter()
        .collect()
}

/// Tipping interval of district k: the connected run of sweep points
/// classified as tipping that contains the Ψ¹ = 1/2 crossing.
pub fn tipping_region(
    scenario: &MatchupResolvedScenario,
    plan_template: &DistrictingPlan,
    k: usize,
    config: &SweepConfig,
) -> Result<TippingReport> {
    let samples = curvature_sweep(scenario, plan_template, k, config)?;
    let crossing = samples.windows(2).find_map(|w| {
        let (a, b) = (w[0].psi1 - 0.5, w[1].psi1 - 0.5);
        if a == 0.0 {
            Some(w[0].s)
        } else if a * b < 0.0 || b == 0.0 {
            Some(w[0].s + (w[1].s - w[0].s) * a / (a - b))
        } else {
            None
        }
    });
    let max_i = samples.iter().map(|p| p.i.abs()).fold(0.0, f64::max);
    let mut report = TippingReport {
        interval: None,
        crossing,
        max_abs_interaction: max_i,
        samples,
    };
    let Some(x) = crossing else {
        return Ok(report);
    };
    if matches!(scenario.mode, MatchupMode::Frozen { .. }) {
        return Ok(report);
    }
    let s = &report.samples;
    let anchor = s
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.s - x).abs().total_cmp(&(b.1.s - x).abs()))
        .map(|(j, _)| j)
        .expect("crossing implies samples");
    if s[anchor].class != DistrictClass::Tipping {
        return Ok(report);
    }
    let (mut lo, mut hi) = (anchor, anchor);
    while lo > 0 && s[lo - 1].class == DistrictClass::Tipping {
        lo -= 1;
    }
    while hi + 1 < s.len() && s[hi + 1].class == DistrictClass::Tipping {
        hi += 1;
    }
    let peak = |it: &mut dyn Iterator<Item = &SweepPoint>| it.map(|p| p.i.abs()).fold(0.0, f64::max);
    let inside = peak(&mut s[lo..=hi].iter());
    let outside = peak(&mut s[..lo].iter().chain(s[hi + 1..].iter()));
    report.interval = Some(TippingInterval {
        lower: s[lo].s,
        upper: s[hi].s,
        peak_ratio: if outside > 0.0 { inside / outside } else { f64::INFINITY },
    });
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRegime {
    GlobalConvex,
    GlobalConcave,
    Nonmonotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistrictEvidence {
    pub district: usize,
    pub positive: usize,
    pub negative: usize,
    /// C changes sign along the sweep.
    pub benchmark_driven: bool,
    /// sign(C + I) ≠ sign(C) somewhere along the sweep.
    pub feedback_driven: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub regime: AllocationRegime,
    pub evidence: Vec<DistrictEvidence>,
}

fn strict_sign(x: f64, tol: f64) -> i8 {
    if x > tol {
        1
    } else if x < -tol {
        -1
    } else {
        0
    }
}

pub fn allocation_report(
    scenario: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    config: &SweepConfig,
) -> Result<AllocationReport> {
    const TOL: f64 = 1e-9;
    let mut evidence = Vec::new();
    let (mut pos, mut neg) = (0, 0);
    for k in 0..plan.k() {
        let sweep = curvature_sweep(scenario, plan, k, config)?;
        let signs_c: Vec<i8> = sweep.iter().map(|p| strict_sign(p.c, TOL)).filter(|v| *v != 0).collect();
        let ev = DistrictEvidence {
            district: k,
            positive: sweep.iter().filter(|p| strict_sign(p.w_ss, TOL) > 0).count(),
            negative: sweep.iter().filter(|p| strict_sign(p.w_ss, TOL) < 0).count(),
            benchmark_driven: signs_c.windows(2).any(|w| w[0] != w[1]),
            feedback_driven: sweep.iter().any(|p| {
                let c = strict_sign(p.c, TOL);
                let w = strict_sign(p.c + p.i, TOL);
                c != 0 && w != 0 && c != w
            }),
        };
        pos += ev.positive;
        neg += ev.negative;
        evidence.push(ev);
    }
    let regime = match (pos > 0, neg > 0) {
        (true, false) => AllocationRegime::GlobalConvex,
        (false, true) => AllocationRegime::GlobalConcave,
        _ => AllocationRegime::Nonmonotonic,
    };
    Ok(AllocationReport { regime, evidence })
}

/// Second difference of an arbitrary welfare path, exposed for cross-module checks.
pub fn ray_second_difference(f: impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
    numdiff::second(f, s, h)
}
