//! Runtime self-checks: closed-form derivatives against finite differences,
//! analytic platforms against best-response iteration, and the curvature
//! decomposition identity.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityDistribution;
use crate::competition::{minority_share, path_curvature, path_share, share_gradient, share_hessian, SurfacePoint};
use crate::electoral::{
    best_response_oracle, equilibrium_platforms, group_power, DistrictComposition, GroupPowerVector, GroupProfile,
    MatchupContext, OracleConfig,
};
use crate::equilibrium::{
    curvature_sweep, MatchupMode, MatchupResolvedScenario, Primitives, SweepConfig,
};
use crate::error::Result;
use crate::exec::Execution;
use crate::group::{GroupId, MatchupKey, PerGroup, PrimaryRule};
use crate::numdiff::{first_extrapolated, mixed_extrapolated, rel_err, second_extrapolated};
use crate::plan::DistrictingPlan;
use crate::selection::{
    expected_ideology, expected_ideology_curvature, minority_win_prob, selection_derivatives, win_prob_on_ray,
    win_prob_second_derivative, IdeologyWeights, SupportLevels,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    FiniteDifference,
    OracleEquivalence,
    Decomposition,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::FiniteDifference, Suite::OracleEquivalence, Suite::Decomposition];

    pub fn label(self) -> &'static str {
        match self {
            Suite::FiniteDifference => "finite_difference",
            Suite::OracleEquivalence => "oracle_equivalence",
            Suite::Decomposition => "decomposition",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.label() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Random interior points per derivative formula.
    pub points: usize,
    pub fd_tolerance: f64,
    pub oracle_districts: usize,
    pub oracle_grid: f64,
    pub decomposition_tolerance: f64,
    /// Test hook: replaces this suite's tolerance with a negative number so
    /// every check fails.
    pub corrupt: Option<Suite>,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            seed: 7,
            points: 100,
            fd_tolerance: 1e-5,
            oracle_districts: 20,
            oracle_grid: 0.005,
            decomposition_tolerance: 1e-6,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Up to ten failing checks.
    pub examples: Vec<String>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestSummary {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

struct Tally {
    tolerance: f64,
    checks: usize,
    failures: usize,
    max_error: f64,
    examples: Vec<String>,
}

impl Tally {
    fn new(tolerance: f64) -> Self {
        Tally {
            tolerance,
            checks: 0,
            failures: 0,
            max_error: 0.0,
            examples: Vec::new(),
        }
    }

    fn check(&mut self, what: &str, error: f64) {
        self.checks += 1;
        if error.is_nan() || error > self.tolerance {
            self.failures += 1;
            if self.examples.len() < 10 {
                self.examples.push(format!("{what}: error {error:e}"));
            }
        }
        if error.is_nan() {
            self.max_error = f64::NAN;
        } else {
            self.max_error = self.max_error.max(error);
        }
    }

    fn fail(&mut self, what: &str, e: impl std::fmt::Display) {
        self.checks += 1;
        self.failures += 1;
        if self.examples.len() < 10 {
            self.examples.push(format!("{what}: {e}"));
        }
    }

    fn report(self, suite: Suite, start: Instant) -> SuiteReport {
        SuiteReport {
            suite,
            passed: self.failures == 0,
            checks: self.checks,
            failures: self.failures,
            max_error: self.max_error,
            tolerance: self.tolerance,
            examples: self.examples,
            elapsed_ms: start.elapsed().as_millis(),
        }
    }
}

fn tolerance(config: &SelftestConfig, suite: Suite, base: f64) -> f64 {
    if config.corrupt == Some(suite) {
        -1.0
    } else {
        base
    }
}

fn random_counts(rng: &mut ChaCha8Rng) -> PerGroup<f64> {
    let total = rng.gen_range(0.5..2.0);
    let raw = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
    let sum: f64 = raw.iter().sum();
    PerGroup::from_array(raw.map(|v| total * v / sum))
}

fn random_support(rng: &mut ChaCha8Rng) -> SupportLevels {
    let mut phi = [[0.0; 3]; 3];
    for row in &mut phi {
        for v in row.iter_mut() {
            *v = rng.gen_range(0.05..0.95);
        }
    }
    SupportLevels::new(phi).expect("interior supports")
}

fn random_powers(rng: &mut ChaCha8Rng) -> GroupPowerVector {
    GroupPowerVector::general(rng.gen_range(0.5..10.0), rng.gen_range(0.5..10.0), rng.gen_range(0.5..10.0))
        .expect("positive powers")
}

fn comp(c: PerGroup<f64>) -> DistrictComposition {
    DistrictComposition::new(c).expect("positive counts")
}

// Relative error with an absolute floor tied to the local magnitude.
fn err(fd: f64, exact: f64, scale: f64) -> f64 {
    rel_err(fd, exact, 1e-3 * scale.max(1e-12))
}

fn fd_suite(config: &SelftestConfig) -> SuiteReport {
    let start = Instant::now();
    let mut t = Tally::new(tolerance(config, Suite::FiniteDifference, config.fd_tolerance));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for p in 0..config.points {
        let counts = random_counts(&mut rng);
        let powers = random_powers(&mut rng);
        let support = random_support(&mut rng);
        let h = 1e-3 * counts.sum();
        let nk = counts.sum();
        if let Err(e) = fd_point(&mut t, p, counts, nk, h, &powers, &support, &mut rng) {
            t.fail(&format!("point {p}"), e);
        }
    }
    t.report(Suite::FiniteDifference, start)
}

#[allow(clippy::too_many_arguments)]
fn fd_point(
    t: &mut Tally,
    p: usize,
    counts: PerGroup<f64>,
    nk: f64,
    h: f64,
    powers: &GroupPowerVector,
    support: &SupportLevels,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d = comp(counts);
    // budget share f with Republicans absorbing changes
    let f = |dm: f64, dn: f64| {
        let c = PerGroup::new(counts.minority + dm, counts.nonminority + dn, counts.republican - dm - dn);
        minority_share(powers, &comp(c)).unwrap()
    };
    let g = share_gradient(powers, &d)?;
    let fd_m = first_extrapolated(|x| f(x, 0.0), 0.0, h);
    let fd_n = first_extrapolated(|x| f(0.0, x), 0.0, h);
    let scale = g.d_n_md.abs().max(g.d_n_nd.abs());
    t.check(&format!("share gradient mD #{p}"), err(fd_m, g.d_n_md, scale));
    t.check(&format!("share gradient nD #{p}"), err(fd_n, g.d_n_nd, scale));
    for grp in GroupId::ALL {
        let fp = |x: f64| {
            let mut pw = powers.power;
            pw[grp] += x;
            minority_share(&GroupPowerVector::new(pw, powers.context).unwrap(), &d).unwrap()
        };
        let fd = first_extrapolated(fp, 0.0, 1e-3);
        let scale = g.d_pi.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        t.check(&format!("share gradient pi_{grp} #{p}"), err(fd, g.d_pi[grp], scale));
    }
    let hs = share_hessian(powers, &d)?;
    let scale = hs.md_md.abs().max(hs.md_nd.abs()).max(hs.nd_nd.abs());
    t.check(&format!("share hessian mD,mD #{p}"), err(second_extrapolated(|x| f(x, 0.0), 0.0, h), hs.md_md, scale));
    t.check(&format!("share hessian nD,nD #{p}"), err(second_extrapolated(|x| f(0.0, x), 0.0, h), hs.nd_nd, scale));
    t.check(&format!("share hessian mD,nD #{p}"), err(mixed_extrapolated(f, 0.0, 0.0, h), hs.md_nd, scale));

    let s = rng.gen_range(0.05..0.95);
    let tt = rng.gen_range(0.05..0.95);
    let exact = path_curvature(powers, &SurfacePoint::new(s, tt, 1.0)?);
    let fd = second_extrapolated(|x| path_share(powers, &SurfacePoint { s: x, t: tt, total: 1.0 }), s, 1e-3);
    t.check(&format!("path curvature #{p}"), err(fd, exact, exact.abs()));

    for rule in [PrimaryRule::Closed, PrimaryRule::Open] {
        let sd = selection_derivatives(support, &d, rule)?;
        let psi = |c: PerGroup<f64>| minority_win_prob(support, &comp(c), rule).unwrap().psi_total;
        let add = |grp: GroupId, x: f64| {
            let mut c = counts;
            c[grp] += x;
            c
        };
        let fd_md = first_extrapolated(|x| psi(add(GroupId::Minority, x)), 0.0, h);
        let fd_nd = first_extrapolated(|x| psi(add(GroupId::Nonminority, x)), 0.0, h);
        let fd_sub = first_extrapolated(
            |x| psi(PerGroup::new(counts.minority, counts.nonminority + x, counts.republican - x)),
            0.0,
            h,
        );
        let scale = sd.d_n_md.total.abs().max(sd.d_n_nd.total.abs()).max(sd.substitution.total.abs());
        t.check(&format!("selection dN_mD {rule:?} #{p}"), err(fd_md, sd.d_n_md.total, scale));
        t.check(&format!("selection dN_nD {rule:?} #{p}"), err(fd_nd, sd.d_n_nd.total, scale));
        t.check(&format!("selection substitution {rule:?} #{p}"), err(fd_sub, sd.substitution.total, scale));

        let exact = win_prob_second_derivative(support, s, tt, rule);
        let fd = second_extrapolated(|x| win_prob_on_ray(support, x, tt, rule), s, 1e-3);
        t.check(&format!("win probability curvature {rule:?} #{p}"), err(fd, exact, exact.abs()));

        let weights = IdeologyWeights::new(rng.gen_range(0.0..1.0))?;
        let exact = expected_ideology_curvature(support, &d, rule, weights)?;
        let e = |x: f64| {
            let c = PerGroup::new(counts.minority + x, counts.nonminority, counts.republican - x);
            expected_ideology(support, &comp(c), rule, weights).unwrap()
        };
        let fd = second_extrapolated(e, 0.0, h);
        t.check(&format!("expected ideology curvature {rule:?} #{p}"), err(fd, exact, exact.abs() / nk));
    }
    Ok(())
}

fn oracle_suite(config: &SelftestConfig) -> SuiteReport {
    let start = Instant::now();
    let tol = tolerance(config, Suite::OracleEquivalence, config.oracle_grid);
    let mut t = Tally::new(tol);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let cases: Vec<_> = (0..config.oracle_districts)
        .map(|i| {
            let key = if i % 2 == 0 {
                MatchupKey::PrimaryMinorityNonminority
            } else {
                MatchupKey::GeneralMinorityRepublican
            };
            let scale = rng.gen_range(4.0..8.0);
            let mut profiles = PerGroup::from_fn(|_| GroupProfile::new(1.0, 2.0).unwrap());
            let mut mu = PerGroup::default();
            for g in GroupId::ALL {
                let kappa = rng.gen_range(0.5..3.0);
                let loc = rng.gen_range(-0.5..0.5);
                profiles[g] = GroupProfile::new(kappa, 0.5)
                    .unwrap()
                    .with_affinity(key, AffinityDistribution::logistic(loc, scale).unwrap());
                // near the density mode both candidates' best responses
                // contract, so simultaneous iteration settles
                mu[g] = loc + scale * rng.gen_range(-0.05..0.05);
            }
            (MatchupContext::new(key, mu).unwrap(), profiles, random_counts(&mut rng))
        })
        .collect();
    let grid = config.oracle_grid;
    let results = Execution::Parallel.map(&cases, |(ctx, profiles, counts)| -> Result<f64> {
        let d = comp(*counts);
        let electorate = ctx.electorate();
        let powers = group_power(profiles, ctx)?;
        let exact = equilibrium_platforms(&powers, &d, electorate)?;
        let oracle = best_response_oracle(
            ctx,
            profiles,
            &d,
            electorate,
            OracleConfig {
                grid_step: grid,
                ..Default::default()
            },
        )?;
        Ok(GroupId::ALL
            .iter()
            .map(|g| (exact.shares[*g] - oracle.shares[*g]).abs())
            .fold(0.0, f64::max))
    });
    for (i, r) in results.into_iter().enumerate() {
        let label = format!("district {i} ({})", if i % 2 == 0 { "2-group" } else { "3-group" });
        match r {
            Ok(e) => t.check(&label, e),
            Err(e) => t.fail(&label, e),
        }
    }
    t.report(Suite::OracleEquivalence, start)
}

/// Logistic primitives for the decomposition checks. `steep` selects a
/// polarized primary; otherwise supports barely differ and both general
/// matchups are nearly alike.
pub fn reference_primitives(steep: bool) -> Primitives {
    let mut profiles = PerGroup::from_fn(|_| GroupProfile::new(1.0, 2.0).unwrap());
    for g in GroupId::ALL {
        for key in MatchupKey::ALL {
            profiles[g] = profiles[g]
                .clone()
                .with_affinity(key, AffinityDistribution::logistic(0.0, 0.1).unwrap());
        }
    }
    let ctx = |key, mu: [f64; 3]| MatchupContext::new(key, PerGroup::from_array(mu)).unwrap();
    let (mu1, mu3) = if steep {
        ([0.2, -0.2, 0.0], [-0.05, 0.1, -0.1])
    } else {
        ([0.02, 0.0199, 0.0], [0.14, 0.06, -0.19])
    };
    Primitives {
        profiles,
        matchups: [
            ctx(MatchupKey::PrimaryMinorityNonminority, mu1),
            ctx(MatchupKey::GeneralMinorityRepublican, [0.15, 0.05, -0.2]),
            ctx(MatchupKey::GeneralNonminorityRepublican, mu3),
        ],
    }
}

/// Frozen-matchup interaction terms must stay below this.
pub const FROZEN_I: f64 = 1e-8;

fn decomposition_suite(config: &SelftestConfig) -> SuiteReport {
    let start = Instant::now();
    let tol = tolerance(config, Suite::Decomposition, config.decomposition_tolerance);
    let mut t = Tally::new(tol);
    let plans = [
        DistrictingPlan::from_arrays(&[[0.3, 0.014, 0.686], [0.3, 0.35, 0.35]], 1.0),
        DistrictingPlan::from_arrays(&[[0.3, 0.35, 0.35], [0.3, 0.35, 0.35]], 1.0),
    ];
    let modes = [
        MatchupMode::ExpectationWeighted,
        MatchupMode::Smoothed,
        MatchupMode::Frozen { primary_weight: 0.6 },
    ];
    for steep in [true, false] {
        for rule in [PrimaryRule::Closed, PrimaryRule::Open] {
            for mode in modes {
                let sc = MatchupResolvedScenario::from_primitives(
                    reference_primitives(steep),
                    IdeologyWeights::new(0.5).unwrap(),
                    rule,
                    mode,
                );
                let sc = match sc {
                    Ok(s) => s,
                    Err(e) => {
                        t.fail("scenario", e);
                        continue;
                    }
                };
                for plan in &plans {
                    let plan = plan.as_ref().expect("fixed plan");
                    let label = format!("steep={steep} {rule:?} {mode:?}");
                    match curvature_sweep(&sc, plan, 0, &SweepConfig::default()) {
                        Ok(points) => {
                            for p in points {
                                t.check(&format!("{label} s={:.2}", p.s), p.residual.abs() / p.w_ss.abs().max(1.0));
                                if matches!(mode, MatchupMode::Frozen { .. }) {
                                    let excess = if p.i.abs() < FROZEN_I { 0.0 } else { p.i.abs() };
                                    t.check(&format!("{label} frozen I s={:.2}", p.s), excess);
                                }
                            }
                        }
                        Err(e) => t.fail(&label, e),
                    }
                }
            }
        }
    }
    t.report(Suite::Decomposition, start)
}

pub fn run_suite(suite: Suite, config: &SelftestConfig) -> SuiteReport {
    match suite {
        Suite::FiniteDifference => fd_suite(config),
        Suite::OracleEquivalence => oracle_suite(config),
        Suite::Decomposition => decomposition_suite(config),
    }
}

pub fn run(config: &SelftestConfig) -> SelftestSummary {
    let suites: Vec<SuiteReport> = Suite::ALL.iter().map(|s| run_suite(*s, config)).collect();
    SelftestSummary {
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SelftestConfig {
        SelftestConfig {
            points: 10,
            oracle_districts: 2,
            oracle_grid: 0.02,
            ..Default::default()
        }
    }

    #[test]
    fn clean_run_passes() {
        let s = run(&small());
        assert!(s.passed, "{s:#?}");
    }

    #[test]
    fn corrupted_suite_is_named() {
        let cfg = SelftestConfig {
            corrupt: Some(Suite::Decomposition),
            ..small()
        };
        let r = run_suite(Suite::Decomposition, &cfg);
        assert!(!r.passed);
        assert_eq!(r.suite.label(), "decomposition");
    }
}
