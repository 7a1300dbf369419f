//! Voter and candidate model: utilities, group power, equilibrium platforms,
//! vote shares and stagewise win probabilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityDistribution;
use crate::error::{Error, Result};
use crate::group::{Electorate, GroupId, MatchupKey, PerGroup, PrimaryRule};
use crate::selection::SupportLevels;

/// Per-capita budget of every district.
pub const DISTRICT_BUDGET: f64 = 1.0;

const EPS_ONE_GUARD: f64 = 1e-9;

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
    }
    if (epsilon - 1.0).abs() <= EPS_ONE_GUARD {
        return Err(Error::UnitEpsilon);
    }
    Ok(())
}

/// CRRA utility κ b^{1−ε}/(1−ε).
pub fn crra(kappa: f64, epsilon: f64, b: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if !(b >= 0.0) {
        return Err(Error::param("b", format!("{b} must be nonnegative")));
    }
    if b == 0.0 {
        if epsilon > 1.0 {
            return Err(Error::UtilityDomain { epsilon });
        }
        return Ok(0.0);
    }
    Ok(kappa * b.powf(1.0 - epsilon) / (1.0 - epsilon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub kappa: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub affinity: BTreeMap<MatchupKey, AffinityDistribution>,
}

impl GroupProfile {
    pub fn new(kappa: f64, epsilon: f64) -> Result<Self> {
        let p = GroupProfile {
            kappa,
            epsilon,
            affinity: BTreeMap::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_affinity(mut self, key: MatchupKey, dist: AffinityDistribution) -> Self {
        self.affinity.insert(key, dist);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::param("kappa", format!("{} must be positive", self.kappa)));
        }
        check_epsilon(self.epsilon)?;
        for d in self.affinity.values() {
            d.validate()?;
        }
        Ok(())
    }

    pub fn affinity_for(&self, group: GroupId, key: MatchupKey) -> Result<&AffinityDistribution> {
        self.affinity
            .get(&key)
            .ok_or(Error::MissingAffinity { group, key })
    }
}

/// Checks the shared-ε requirement and that every group covers `keys`.
pub fn validate_profiles(profiles: &PerGroup<GroupProfile>, keys: &[MatchupKey]) -> Result<()> {
    let eps = profiles.minority.epsilon;
    for (g, p) in profiles.iter() {
        p.validate()?;
        if (p.epsilon - eps).abs() > 1e-12 {
            return Err(Error::param(
                "epsilon",
                format!("group {g} has epsilon {} but mD has {eps}; it must be shared", p.epsilon),
            ));
        }
        for k in keys {
            p.affinity_for(g, *k)?;
        }
    }
    Ok(())
}

/// Consumption utility u_i(b).
pub fn consumption_utility(profile: &GroupProfile, b: f64) -> Result<f64> {
    crra(profile.kappa, profile.epsilon, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupContext {
    pub key: MatchupKey,
    /// Ideological offset μ_i^e of candidate 1 over candidate 2.
    pub mu: PerGroup<f64>,
    #[serde(default)]
    pub primary_rule: PrimaryRule,
}

impl MatchupContext {
    pub fn new(key: MatchupKey, mu: PerGroup<f64>) -> Result<Self> {
        if mu.iter().any(|(_, m)| !m.is_finite()) {
            return Err(Error::param("mu", "offsets must be finite"));
        }
        Ok(MatchupContext {
            key,
            mu,
            primary_rule: PrimaryRule::Closed,
        })
    }

    pub fn with_rule(mut self, rule: PrimaryRule) -> Self {
        self.primary_rule = rule;
        self
    }

    /// Groups voting in this matchup.
    pub fn electorate(&self) -> Electorate {
        if self.key.is_primary() {
            self.primary_rule.electorate()
        } else {
            Electorate::FULL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistrictComposition {
    counts: PerGroup<f64>,
    total: f64,
}

impl DistrictComposition {
    pub fn new(counts: PerGroup<f64>) -> Result<Self> {
        for (g, c) in counts.iter() {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(Error::param("counts", format!("{g} count {c} must be nonnegative")));
            }
        }
        let total = counts.sum();
        if !(total > 0.0) {
            return Err(Error::param("counts", "district is empty"));
        }
        Ok(DistrictComposition { counts, total })
    }

    /// Builds a district of size `total` with the given group shares.
    pub fn from_shares(shares: PerGroup<f64>, total: f64) -> Result<Self> {
        if !(total > 0.0) {
            return Err(Error::param("total", format!("{total} must be positive")));
        }
        let sum = shares.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param("shares", format!("shares sum to {sum}, not 1")));
        }
        DistrictComposition::new(shares.map(|_, s| s * total))
    }

    /// Composition at (s, t): shares (s, (1−s)t, (1−s)(1−t)).
    pub fn from_surface(s: f64, t: f64, total: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
            return Err(Error::param("surface point", format!("s={s}, t={t} must lie in [0,1]")));
        }
        DistrictComposition::new(PerGroup::new(
            s * total,
            (1.0 - s) * t * total,
            (1.0 - s) * (1.0 - t) * total,
        ))
    }

    pub fn counts(&self) -> &PerGroup<f64> {
        &self.counts
    }

    pub fn count(&self, g: GroupId) -> f64 {
        self.counts[g]
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn shares(&self) -> PerGroup<f64> {
        self.counts.map(|_, c| c / self.total)
    }

    pub fn electorate_size(&self, electorate: Electorate) -> f64 {
        electorate.groups().map(|g| self.counts[g]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformAllocation {
    pub per_capita: PerGroup<f64>,
    pub shares: PerGroup<f64>,
    pub budget: f64,
}

impl PlatformAllocation {
    /// Platform from budget shares T_i; per-capita b_i = T_i B / N_i.
    pub fn from_shares(shares: PerGroup<f64>, district: &DistrictComposition) -> Result<Self> {
        let mut per_capita = PerGroup::default();
        for g in GroupId::ALL {
            let n = district.count(g);
            if n > 0.0 {
                per_capita[g] = shares[g] * DISTRICT_BUDGET / n;
            } else if shares[g] != 0.0 {
                return Err(Error::param("shares", format!("group {g} is absent but receives a share")));
            }
        }
        Ok(PlatformAllocation {
            per_capita,
            shares,
            budget: DISTRICT_BUDGET,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPowerVector {
    pub power: PerGroup<f64>,
    pub context: MatchupKey,
}

impl GroupPowerVector {
    pub fn new(power: PerGroup<f64>, context: MatchupKey) -> Result<Self> {
        for (g, p) in power.iter() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::param("power", format!("{g} power {p} must be positive")));
            }
        }
        Ok(GroupPowerVector { power, context })
    }

    /// Reduced-form powers for the mD–R general election.
    pub fn general(md: f64, nd: f64, r: f64) -> Result<Self> {
        GroupPowerVector::new(PerGroup::new(md, nd, r), MatchupKey::GeneralMinorityRepublican)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        GroupPowerVector::new(self.power.map(|_, p| p * c), self.context)
    }
}

/// π_i^e = (κ_i φ_i(μ_i^e))^{1/ε}.
pub fn group_power(profiles: &PerGroup<GroupProfile>, ctx: &MatchupContext) -> Result<GroupPowerVector> {
    let mut power = PerGroup::default();
    for g in GroupId::ALL {
        let p = &profiles[g];
        check_epsilon(p.epsilon)?;
        let dist = p.affinity_for(g, ctx.key)?;
        let at = ctx.mu[g];
        let phi = dist.pdf(at);
        if !(phi > 0.0) {
            return Err(Error::ZeroDensity {
                group: g,
                key: ctx.key,
                at,
            });
        }
        power[g] = (p.kappa * phi).powf(1.0 / p.epsilon);
    }
    GroupPowerVector::new(power, ctx.key)
}

/// Equilibrium platform b_i = π_i / Σ_{ℓ∈E} π_ℓ N_ℓ, common to both candidates.
pub fn equilibrium_platforms(
    powers: &GroupPowerVector,
    district: &DistrictComposition,
    electorate: Electorate,
) -> Result<PlatformAllocation> {
    if electorate.is_empty() || district.electorate_size(electorate) <= 0.0 {
        return Err(Error::EmptyElectorate);
    }
    let denom: f64 = electorate
        .groups()
        .map(|g| powers.power[g] * district.count(g))
        .sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroPower);
    }
    let per_capita = PerGroup::from_fn(|g| {
        if electorate.contains(g) && district.count(g) > 0.0 {
            DISTRICT_BUDGET * powers.power[g] / denom
        } else {
            0.0
        }
    });
    let shares = PerGroup::from_fn(|g| per_capita[g] * district.count(g) / DISTRICT_BUDGET);
    Ok(PlatformAllocation {
        per_capita,
        shares,
        budget: DISTRICT_BUDGET,
    })
}

/// Same as [`equilibrium_platforms`] but taking the electorate from the context.
pub fn platforms_for(
    ctx: &MatchupContext,
    powers: &GroupPowerVector,
    district: &DistrictComposition,
) -> Result<PlatformAllocation> {
    equilibrium_platforms(powers, district, ctx.electorate())
}

fn utility_gap(profile: &GroupProfile, b1: f64, b2: f64) -> Result<f64> {
    if b1 == b2 {
        return Ok(0.0);
    }
    Ok(consumption_utility(profile, b1)? - consumption_utility(profile, b2)?)
}

/// Candidate 1's vote share v_1 = Σ N_i Φ_i(x_i) / N over the electorate.
pub fn vote_share(
    ctx: &MatchupContext,
    profiles: &PerGroup<GroupProfile>,
    district: &DistrictComposition,
    platforms: (&PlatformAllocation, &PlatformAllocation),
    electorate: Electorate,
) -> Result<f64> {
    let n = district.electorate_size(electorate);
    if !(n > 0.0) {
        return Err(Error::EmptyElectorate);
    }
    let mut v = 0.0;
    for g in electorate.groups() {
        let count = district.count(g);
        if count == 0.0 {
            continue;
        }
        let p = &profiles[g];
        let dist = p.affinity_for(g, ctx.key)?;
        let x = ctx.mu[g] + utility_gap(p, platforms.0.per_capita[g], platforms.1.per_capita[g])?;
        v += count * dist.cdf(x);
    }
    Ok(v / n)
}

/// Linear contest success function Ψ(v) = v.
pub fn win_probability(v: f64) -> Result<f64> {
    const TOL: f64 = 1e-9;
    if !(-TOL..=1.0 + TOL).contains(&v) {
        return Err(Error::ProbabilityDomain(v));
    }
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageProbabilities {
    /// mD candidate wins the primary.
    pub psi1_md: f64,
    /// mD candidate beats R in the general election.
    pub psi2_md: f64,
    /// nD candidate beats R in the general election.
    pub psi3_nd: f64,
    pub psi_md: f64,
    pub psi_nd: f64,
    pub psi_r: f64,
}

fn stage_average(phi: &PerGroup<f64>, district: &DistrictComposition, electorate: Electorate) -> Result<f64> {
    let n = district.electorate_size(electorate);
    if !(n > 0.0) {
        return Err(Error::EmptyElectorate);
    }
    let v: f64 = electorate.groups().map(|g| phi[g] * district.count(g)).sum();
    win_probability(v / n)
}

pub fn stage_win_probabilities(
    support: &SupportLevels,
    rule: PrimaryRule,
    district: &DistrictComposition,
) -> Result<StageProbabilities> {
    let psi1 = stage_average(support.stage(1), district, rule.electorate())?;
    let psi2 = stage_average(support.stage(2), district, Electorate::FULL)?;
    let psi3 = stage_average(support.stage(3), district, Electorate::FULL)?;
    let psi_md = psi1 * psi2;
    let psi_nd = (1.0 - psi1) * psi3;
    Ok(StageProbabilities {
        psi1_md: psi1,
        psi2_md: psi2,
        psi3_nd: psi3,
        psi_md,
        psi_nd,
        psi_r: 1.0 - psi_md - psi_nd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid_step: f64,
    pub max_iterations: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid_step: 0.01,
            max_iterations: 200,
        }
    }
}

/// Discrete best-response iteration over the platform simplex grid.
///
/// Both candidates best-respond simultaneously to the other's previous
/// platform until neither moves. Intended as a test oracle for
/// [`equilibrium_platforms`]; cost grows like (1/step)^(|E|-1) per response.
pub fn best_response_oracle(
    ctx: &MatchupContext,
    profiles: &PerGroup<GroupProfile>,
    district: &DistrictComposition,
    electorate: Electorate,
    config: OracleConfig,
) -> Result<PlatformAllocation> {
    if !(config.grid_step > 0.0 && config.grid_step <= 0.1) {
        return Err(Error::param("grid_step", format!("{} not in (0, 0.1]", config.grid_step)));
    }
    let active: Vec<GroupId> = electorate.groups().filter(|g| district.count(*g) > 0.0).collect();
    if !(2..=3).contains(&electorate.len()) {
        return Err(Error::param("electorate", "oracle supports 2 or 3 groups"));
    }
    if active.is_empty() {
        return Err(Error::EmptyElectorate);
    }
    let n = (1.0 / config.grid_step).round() as usize;
    let grid = simplex_grid(active.len(), n);
    let to_platform = |pt: &[usize]| -> Result<PlatformAllocation> {
        let mut shares = PerGroup::default();
        for (g, c) in active.iter().zip(pt) {
            shares[*g] = *c as f64 / n as f64;
        }
        PlatformAllocation::from_shares(shares, district)
    };
    let platforms: Vec<PlatformAllocation> = grid.iter().map(|pt| to_platform(pt)).collect::<Result<_>>()?;

    // candidate 1 maximizes v_1, candidate 2 minimizes it
    let best = |other: usize, first: bool| -> Result<usize> {
        let mut best_i = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, own) in platforms.iter().enumerate() {
            let v = if first {
                vote_share(ctx, profiles, district, (own, &platforms[other]), electorate)?
            } else {
                1.0 - vote_share(ctx, profiles, district, (&platforms[other], own), electorate)?
            };
            if v > best_v {
                best_v = v;
                best_i = i;
            }
        }
        Ok(best_i)
    };

    // start from population-proportional shares
    let n_e = district.electorate_size(electorate);
    let start_target: Vec<f64> = active.iter().map(|g| district.count(*g) / n_e).collect();
    let start = nearest_grid_point(&grid, &start_target, n);
    let mut state = (start, start);
    let mut seen = vec![state];
    for _ in 0..config.max_iterations {
        let next = (best(state.1, true)?, best(state.0, false)?);
        if next == state {
            return Ok(platforms[state.0]);
        }
        if let Some(pos) = seen.iter().position(|s| *s == next) {
            return Err(Error::NonConvergence {
                what: "best-response iteration",
                iterations: seen.len(),
                detail: format!(" (cycle of length {})", seen.len() - pos),
            });
        }
        seen.push(next);
        state = next;
    }
    Err(Error::NonConvergence {
        what: "best-response iteration",
        iterations: config.max_iterations,
        detail: String::new(),
    })
}

// Integer compositions of n into `parts` nonnegative parts.
fn simplex_grid(parts: usize, n: usize) -> Vec<Vec<usize>> {
    match parts {
        1 => vec![vec![n]],
        2 => (0..=n).map(|i| vec![i, n - i]).collect(),
        _ => {
            let mut out = Vec::new();
            for i in 0..=n {
                for j in 0..=(n - i) {
                    out.push(vec![i, j, n - i - j]);
                }
            }
            out
        }
    }
}

fn nearest_grid_point(grid: &[Vec<usize>], target: &[f64], n: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, pt) in grid.iter().enumerate() {
        let d: f64 = pt
            .iter()
            .zip(target)
            .map(|(c, t)| (*c as f64 / n as f64 - t).powi(2))
            .sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
