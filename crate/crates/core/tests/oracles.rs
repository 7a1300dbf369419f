//! Reference values and independent recomputations. Numbers marked as
//! published come from the benchmark table; the rest are recomputed here by
//! a different path than the library uses.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use districting::competition::{
    concentration_range, crra_welfare, linear_welfare, minority_share, share_gradient, share_hessian, swap_improve,
    SwapConfig,
};
use districting::electoral::{
    best_response_oracle, consumption_utility, equilibrium_platforms, group_power, stage_win_probabilities,
    vote_share, DistrictComposition, GroupPowerVector, GroupProfile, MatchupContext, OracleConfig, PlatformAllocation,
};
use districting::equilibrium::{
    allocation_report, tipping_region, total_welfare, welfare_curvature, AllocationRegime, CurvatureConfig,
    MatchupMode, MatchupResolvedScenario, Primitives, SweepConfig,
};
use districting::numdiff::{first_extrapolated, second_extrapolated};
use districting::optimizer::{grid_oracle, optimize, Objective, OptConfig};
use districting::plan::{project_to_feasible, validate_plan, DistrictingPlan, PlanViolation, StateDemographics};
use districting::selection::{expected_ideology, selection_welfare, IdeologyWeights, SupportLevels};
use districting::selftest::reference_primitives;
use districting::{AffinityDistribution, Electorate, Execution, GroupId, MatchupKey, PerGroup, PrimaryRule};

const BASELINE_SHARES: PerGroup<f64> = PerGroup::new(0.25, 0.40, 0.35);

fn general(md: f64, nd: f64, r: f64) -> GroupPowerVector {
    GroupPowerVector::general(md, nd, r).unwrap()
}

fn district(md: f64, nd: f64, r: f64) -> DistrictComposition {
    DistrictComposition::new(PerGroup::new(md, nd, r)).unwrap()
}

fn baseline_demo() -> StateDemographics {
    StateDemographics::new(BASELINE_SHARES, 3).unwrap()
}

/// Profiles with logistic(0, scale) affinities everywhere and powers at
/// μ = 0 proportional to `ratio`. Platforms depend only on power ratios, and
/// best-response iteration settles only while utility gaps stay small
/// against the affinity scale, so absolute powers are kept well below one.
fn profiles_with_ratio(ratio: [f64; 3], scale: f64, epsilon: f64) -> PerGroup<GroupProfile> {
    PerGroup::from_fn(|g| {
        let mut p = GroupProfile::new(ratio[g.index()].powf(epsilon), epsilon).unwrap();
        for key in MatchupKey::ALL {
            p = p.with_affinity(key, AffinityDistribution::logistic(0.0, scale).unwrap());
        }
        p
    })
}

// ------------------------------------------------------------ electoral core

#[test]
fn utility_matches_simpson_integral_of_marginal() {
    let (kappa, eps) = (2.0, 3.0);
    let p = GroupProfile::new(kappa, eps).unwrap();
    let (a, b) = (0.5, 1.0);
    let n = 2000;
    let h = (b - a) / n as f64;
    let f = |x: f64| kappa * x.powf(-eps);
    let mut integral = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        integral += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    integral *= h / 3.0;
    let diff = consumption_utility(&p, b).unwrap() - consumption_utility(&p, a).unwrap();
    assert_relative_eq!(diff, integral, max_relative = 1e-10);
}

#[test]
fn power_near_unit_exponent() {
    let prof = GroupProfile::new(4.0, 1.0001)
        .unwrap()
        .with_affinity(MatchupKey::GeneralMinorityRepublican, AffinityDistribution::logistic(0.0, 1.0).unwrap());
    let profiles = PerGroup::from_fn(|_| prof.clone());
    let ctx = MatchupContext::new(MatchupKey::GeneralMinorityRepublican, PerGroup::new(0.0, 0.0, 0.0)).unwrap();
    let pw = group_power(&profiles, &ctx).unwrap();
    for g in GroupId::ALL {
        assert!((pw.power[g] - 1.0).abs() < 1e-3);
    }
}

#[test]
fn published_uniform_district_shares() {
    let alloc = equilibrium_platforms(&general(3.0, 3.0, 3.0), &district(0.25, 0.40, 0.35), Electorate::FULL).unwrap();
    for (g, want) in [(GroupId::Minority, 0.25), (GroupId::Nonminority, 0.40), (GroupId::Republican, 0.35)] {
        assert_relative_eq!(alloc.shares[g], want, epsilon = 1e-12);
    }
    let alloc = equilibrium_platforms(&general(5.0, 3.0, 3.0), &district(0.25, 0.39, 0.36), Electorate::FULL).unwrap();
    assert_relative_eq!(alloc.shares.minority, 1.25 / 3.5, epsilon = 1e-12);
    assert!((alloc.shares.minority - 0.357).abs() < 5e-4);
}

#[test]
fn vote_share_matches_monte_carlo() {
    let eps = 0.5;
    let mut profiles = PerGroup::from_fn(|_| GroupProfile::new(1.0, eps).unwrap());
    let dists = [
        AffinityDistribution::logistic(0.1, 0.3).unwrap(),
        AffinityDistribution::logistic(-0.2, 0.5).unwrap(),
        AffinityDistribution::logistic(0.0, 1.0).unwrap(),
    ];
    for g in GroupId::ALL {
        profiles[g] = profiles[g]
            .clone()
            .with_affinity(MatchupKey::PrimaryMinorityNonminority, dists[g.index()].clone());
    }
    let ctx = MatchupContext::new(MatchupKey::PrimaryMinorityNonminority, PerGroup::new(0.05, -0.1, 0.0))
        .unwrap()
        .with_rule(PrimaryRule::Closed);
    let d = district(0.3, 0.5, 0.2);
    let p1 = PlatformAllocation::from_shares(PerGroup::new(0.55, 0.45, 0.0), &d).unwrap();
    let p2 = PlatformAllocation::from_shares(PerGroup::new(0.35, 0.65, 0.0), &d).unwrap();
    let v = vote_share(&ctx, &profiles, &d, (&p1, &p2), Electorate::DEMOCRATIC).unwrap();

    // Voter θ supports candidate 1 iff θ ≤ μ + u(b1) − u(b2).
    let cutoff = |g: GroupId| {
        let u = |b: f64| b.powf(1.0 - eps) / (1.0 - eps);
        ctx.mu[g] + u(p1.per_capita[g]) - u(p2.per_capita[g])
    };
    let (loc, scale) = ([0.1, -0.2], [0.3, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let weight_md = 0.3 / 0.8;
    let mut votes = 0usize;
    for _ in 0..n {
        let g = if rng.gen::<f64>() < weight_md { 0 } else { 1 };
        let u: f64 = rng.gen_range(1e-12..1.0);
        let theta = loc[g] + scale[g] * (u / (1.0 - u)).ln();
        let group = if g == 0 { GroupId::Minority } else { GroupId::Nonminority };
        if theta <= cutoff(group) {
            votes += 1;
        }
    }
    let freq = votes as f64 / n as f64;
    let se = (v * (1.0 - v) / n as f64).sqrt();
    assert!((freq - v).abs() < 3.0 * se, "mc {freq} vs {v} (se {se})");
}

#[test]
fn stage_probabilities_match_outcome_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let phi: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.05..0.95)));
        let support = SupportLevels::new(phi).unwrap();
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..1.0));
        let d = district(x[0], x[1], x[2]);
        let rule = if case % 2 == 0 { PrimaryRule::Closed } else { PrimaryRule::Open };
        let sp = stage_win_probabilities(&support, rule, &d).unwrap();

        let avg = |row: [f64; 3], groups: &[usize]| {
            let num: f64 = groups.iter().map(|&g| row[g] * x[g]).sum();
            let den: f64 = groups.iter().map(|&g| x[g]).sum();
            num / den
        };
        let primary = match rule {
            PrimaryRule::Closed => avg(phi[0], &[0, 1]),
            PrimaryRule::Open => avg(phi[0], &[0, 1, 2]),
        };
        let (g2, g3) = (avg(phi[1], &[0, 1, 2]), avg(phi[2], &[0, 1, 2]));
        // Leaves: (primary winner, general winner).
        let leaves = [
            (primary * g2, "mD"),
            (primary * (1.0 - g2), "R"),
            ((1.0 - primary) * g3, "nD"),
            ((1.0 - primary) * (1.0 - g3), "R"),
        ];
        let total = |who: &str| leaves.iter().filter(|l| l.1 == who).map(|l| l.0).sum::<f64>();
        assert_relative_eq!(sp.psi_md, total("mD"), epsilon = 1e-12);
        assert_relative_eq!(sp.psi_nd, total("nD"), epsilon = 1e-12);
        assert_relative_eq!(sp.psi_r, total("R"), epsilon = 1e-12);
        assert_relative_eq!(sp.psi_md + sp.psi_nd + sp.psi_r, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn best_response_oracle_on_uniform_district() {
    let profiles = profiles_with_ratio([3.0, 3.0, 3.0], 6.0, 0.5);
    let ctx = MatchupContext::new(MatchupKey::GeneralMinorityRepublican, PerGroup::new(0.0, 0.0, 0.0)).unwrap();
    let d = district(0.25, 0.40, 0.35);
    let pw = group_power(&profiles, &ctx).unwrap();
    assert_relative_eq!(pw.power.minority / pw.power.republican, 1.0, epsilon = 1e-12);
    let exact = equilibrium_platforms(&general(3.0, 3.0, 3.0), &d, Electorate::FULL).unwrap();
    let oracle = best_response_oracle(&ctx, &profiles, &d, Electorate::FULL, OracleConfig::default()).unwrap();
    for g in GroupId::ALL {
        assert!((oracle.shares[g] - exact.shares[g]).abs() <= 0.01 + 1e-12, "{g}: {oracle:?} vs {exact:?}");
    }
}

#[test]
fn best_response_oracle_asymmetric_pair() {
    let profiles = profiles_with_ratio([2.0, 1.0, 1.0], 6.0, 0.5);
    let ctx = MatchupContext::new(MatchupKey::PrimaryMinorityNonminority, PerGroup::new(0.0, 0.0, 0.0))
        .unwrap()
        .with_rule(PrimaryRule::Closed);
    let d = district(0.5, 0.5, 0.0);
    let cfg = OracleConfig {
        grid_step: 0.005,
        ..OracleConfig::default()
    };
    let oracle = best_response_oracle(&ctx, &profiles, &d, Electorate::DEMOCRATIC, cfg).unwrap();
    let closed_form = 2.0 * 0.5 / (2.0 * 0.5 + 0.5);
    assert!((oracle.shares.minority - closed_form).abs() <= 0.005 + 1e-12, "{oracle:?}");
}

// ------------------------------------------------------- competition channel

#[test]
fn gradient_matches_extrapolated_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..10.0));
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
        let pw = general(p[0], p[1], p[2]);
        let d = district(x[0], x[1], x[2]);
        let g = share_gradient(&pw, &d).unwrap();
        let f = |pi: [f64; 3], n: [f64; 3]| minority_share(&general(pi[0], pi[1], pi[2]), &district(n[0], n[1], n[2])).unwrap();
        let h = 1e-6;
        let checks = [
            (g.d_pi.minority, first_extrapolated(|v| f([v, p[1], p[2]], x), p[0], h)),
            (g.d_pi.nonminority, first_extrapolated(|v| f([p[0], v, p[2]], x), p[1], h)),
            (g.d_pi.republican, first_extrapolated(|v| f([p[0], p[1], v], x), p[2], h)),
            (g.d_n_md, first_extrapolated(|v| f(p, [v, x[1], x[2] + x[0] - v]), x[0], h)),
            (g.d_n_nd, first_extrapolated(|v| f(p, [x[0], v, x[2] + x[1] - v]), x[1], h)),
        ];
        for (exact, fd) in checks {
            assert!((exact - fd).abs() <= 1e-6 * exact.abs().max(1e-3), "{exact} vs {fd}");
        }
    }
}

#[test]
fn convex_powers_have_positive_own_curvature_at_centroid() {
    let h = share_hessian(&general(2.0, 5.0, 10.0), &district(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)).unwrap();
    assert!(h.md_md > 0.0);
    let fd = second_extrapolated(
        |v| minority_share(&general(2.0, 5.0, 10.0), &district(v, 1.0 / 3.0, 2.0 / 3.0 - v)).unwrap(),
        1.0 / 3.0,
        1e-4,
    );
    assert_relative_eq!(h.md_md, fd, max_relative = 1e-5);
}

#[test]
fn published_district_shares() {
    assert_relative_eq!(minority_share(&general(1.0, 3.0, 1.0), &district(0.75, 0.0, 0.25)).unwrap(), 0.75, epsilon = 1e-12);
    assert!((minority_share(&general(5.0, 3.0, 3.0), &district(0.25, 0.39, 0.36)).unwrap() - 0.357).abs() < 5e-4);
}

#[test]
fn welfare_of_uniform_plan() {
    let plan = baseline_demo().uniform_plan();
    let pw = general(3.0, 3.0, 3.0);
    assert_relative_eq!(linear_welfare(&plan, &pw).unwrap(), 0.75, epsilon = 1e-12);
    // u = κ b^{1/2}/(1/2) = 2√b with b = π_mD/Π_k.
    let mut expected = 0.0;
    for row in &plan.rows {
        let big_pi = 3.0 * (row.minority + row.nonminority + row.republican);
        expected += row.minority * 2.0 * (3.0 / big_pi).sqrt();
    }
    assert_relative_eq!(crra_welfare(&plan, &pw, 1.0, 0.5).unwrap(), expected, max_relative = 1e-12);
}

#[test]
fn published_concentration_of_optima() {
    let demo = baseline_demo();
    let cfg = OptConfig::default();
    for (pi_md, want) in [(1.0, 0.75), (5.0, 0.15)] {
        let r = optimize(&demo, &Objective::LinearDistributive { powers: general(pi_md, 3.0, 1.0) }, &cfg).unwrap();
        assert!((concentration_range(&r.plan) - want).abs() < 0.05, "{pi_md}: {}", concentration_range(&r.plan));
    }
}

#[test]
fn swap_strictly_improves_two_interior_districts() {
    // π_R > π_nD; both districts have Π = 2 but different minority mass.
    let pw = general(2.0, 1.0, 3.0);
    let plan = DistrictingPlan::from_arrays(&[[0.5, 0.25, 0.25], [0.2, 0.4, 0.4]], 1.0).unwrap();
    let big_pi: Vec<f64> = plan.rows.iter().map(|r| pw.power.dot(r)).collect();
    assert_relative_eq!(big_pi[0], 2.0);
    assert_relative_eq!(big_pi[1], 2.0);
    let before: f64 = plan.rows.iter().map(|r| 2.0 * r.minority / pw.power.dot(r)).sum();
    let out = swap_improve(
        &plan,
        &pw,
        SwapConfig {
            max_swaps: 1,
            ..SwapConfig::default()
        },
    )
    .unwrap();
    let after: f64 = out.plan.rows.iter().map(|r| 2.0 * r.minority / pw.power.dot(r)).sum();
    assert_relative_eq!(out.objective_before, before, epsilon = 1e-12);
    assert!(after > before, "{before} -> {after}");
}

// --------------------------------------------------------- selection channel

#[test]
fn expected_ideology_matches_outcome_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..50 {
        let phi: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.05..0.95)));
        let support = SupportLevels::new(phi).unwrap();
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..1.0));
        let beta = rng.gen_range(0.0..1.0);
        let rule = if case % 2 == 0 { PrimaryRule::Closed } else { PrimaryRule::Open };
        let d = district(x[0], x[1], x[2]);
        let sp = stage_win_probabilities(&support, rule, &d).unwrap();
        // Payoff to mD voters by winner: own type 1, nD β, R 0.
        let enumerated = sp.psi_md * 1.0 + sp.psi_nd * beta + sp.psi_r * 0.0;
        let e = expected_ideology(&support, &d, rule, IdeologyWeights::new(beta).unwrap()).unwrap();
        assert_relative_eq!(e, enumerated, epsilon = 1e-12);
    }
}

#[test]
fn concentration_transfer_raises_selection_welfare_in_convex_regime() {
    // Open rule with β below the threshold is convex in N_mD.
    let support = SupportLevels::new([[0.8, 0.4, 0.2], [0.7, 0.5, 0.3], [0.4, 0.6, 0.3]]).unwrap();
    let weights = IdeologyWeights::new(0.0).unwrap();
    let plan = DistrictingPlan::from_arrays(&[[0.4, 0.3, 0.3], [0.2, 0.3, 0.5]], 1.0).unwrap();
    let moved = DistrictingPlan::from_arrays(&[[0.41, 0.3, 0.29], [0.19, 0.3, 0.51]], 1.0).unwrap();
    let before = selection_welfare(&plan, &support, PrimaryRule::Open, weights).unwrap();
    let after = selection_welfare(&moved, &support, PrimaryRule::Open, weights).unwrap();
    assert!(after >= before, "{before} -> {after}");
}

// ------------------------------------------------------ general equilibrium

#[test]
fn total_welfare_matches_four_leaf_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..20 {
        let phi: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.05..0.95)));
        let support = SupportLevels::new(phi).unwrap();
        let pw: [GroupPowerVector; 3] = std::array::from_fn(|e| {
            GroupPowerVector::new(
                PerGroup::from_fn(|_| rng.gen_range(0.5..5.0)),
                MatchupKey::from_stage(e + 1).unwrap(),
            )
            .unwrap()
        });
        let (kappa, eps, beta) = (rng.gen_range(0.1..2.0), 0.5, rng.gen_range(0.0..1.0));
        let rule = if case % 2 == 0 { PrimaryRule::Closed } else { PrimaryRule::Open };
        let sc = MatchupResolvedScenario::from_reduced_form(
            support,
            pw,
            kappa,
            eps,
            IdeologyWeights::new(beta).unwrap(),
            rule,
            MatchupMode::ExpectationWeighted,
        )
        .unwrap();
        let a: f64 = rng.gen_range(0.1..0.5);
        let b: f64 = rng.gen_range(0.1..0.4);
        let plan = DistrictingPlan::from_arrays(&[[a, b, 1.0 - a - b], [0.6 - a, 0.5 - b, 0.9 - (1.0 - a - b)]], 1.0).unwrap();

        let mut expected = 0.0;
        for row in &plan.rows {
            let x = row.to_array();
            let avg = |p: [f64; 3], groups: &[usize]| {
                groups.iter().map(|&g| p[g] * x[g]).sum::<f64>() / groups.iter().map(|&g| x[g]).sum::<f64>()
            };
            let psi1 = match rule {
                PrimaryRule::Closed => avg(phi[0], &[0, 1]),
                PrimaryRule::Open => avg(phi[0], &[0, 1, 2]),
            };
            let (psi2, psi3) = (avg(phi[1], &[0, 1, 2]), avg(phi[2], &[0, 1, 2]));
            let u = |p: &GroupPowerVector| {
                let b = p.power.minority / p.power.dot(row);
                kappa * b.powf(1.0 - eps) / (1.0 - eps)
            };
            let (u2, u3) = (u(&pw[1]), u(&pw[2]));
            let leaves = [
                (psi1 * psi2, 1.0 + u2),
                (psi1 * (1.0 - psi2), u2),
                ((1.0 - psi1) * psi3, beta + u3),
                ((1.0 - psi1) * (1.0 - psi3), u3),
            ];
            expected += x[0] * leaves.iter().map(|(p, v)| p * v).sum::<f64>();
        }
        assert_relative_eq!(total_welfare(&sc, &plan).unwrap(), expected, max_relative = 1e-12);
    }
}

fn smoothed(prims: Primitives, beta: f64) -> MatchupResolvedScenario {
    MatchupResolvedScenario::from_primitives(prims, IdeologyWeights::new(beta).unwrap(), PrimaryRule::Closed, MatchupMode::Smoothed)
        .unwrap()
}

fn tipping_plan() -> DistrictingPlan {
    DistrictingPlan::from_arrays(&[[0.3, 0.014, 0.686], [0.3, 0.35, 0.35]], 1.0).unwrap()
}

#[test]
fn overturning_exists_in_steep_scenario() {
    let sc = smoothed(reference_primitives(true), 0.75);
    let cfg = SweepConfig::default();
    let tr = tipping_region(&sc, &tipping_plan(), 0, &cfg).unwrap();
    let over = tr
        .samples
        .iter()
        .find(|p| p.c.signum() != (p.c + p.i).signum() && p.i.abs() > p.c.abs() && p.c.abs() > 1e-6);
    assert!(over.is_some(), "no overturning sample");
}

#[test]
fn smaller_scale_gives_narrower_interval_in_standardized_offsets() {
    // Offsets scale with the logistic scale so supports stay fixed; only the
    // sensitivity of μ̄ to s changes.
    let interval = |scale: f64| {
        let mut prims = reference_primitives(true);
        for g in GroupId::ALL {
            for key in MatchupKey::ALL {
                prims.profiles[g] = prims.profiles[g]
                    .clone()
                    .with_affinity(key, AffinityDistribution::logistic(0.0, scale).unwrap());
            }
        }
        for m in prims.matchups.iter_mut() {
            m.mu = m.mu.map(|_, v| v * scale / 0.1);
        }
        let sc = smoothed(prims, 0.75);
        let cfg = SweepConfig {
            resolution: 0.005,
            ..SweepConfig::default()
        };
        tipping_region(&sc, &tipping_plan(), 0, &cfg).unwrap().interval.expect("interval")
    };
    let (narrow, wide) = (interval(0.08), interval(0.15));
    assert!(narrow.lower <= 0.0197 && 0.0197 <= narrow.upper);
    assert!(narrow.upper - narrow.lower < wide.upper - wide.lower, "{narrow:?} vs {wide:?}");
}

#[test]
fn divergence_construction_is_nonmonotonic_and_benchmark_driven() {
    // Weak minority power, β above the open-rule threshold (0.125) and
    // frozen matchups: selection curvature and competition curvature pull
    // in opposite directions and C changes sign along the sweep.
    let support = SupportLevels::new([[0.9, 0.2, 0.1], [0.5, 0.45, 0.4], [0.9, 0.5, 0.1]]).unwrap();
    let pw = MatchupKey::ALL.map(|k| GroupPowerVector::new(PerGroup::new(0.2, 4.0, 6.0), k).unwrap());
    let sc = MatchupResolvedScenario::from_reduced_form(
        support,
        pw,
        0.03,
        0.5,
        IdeologyWeights::new(1.0).unwrap(),
        PrimaryRule::Open,
        MatchupMode::Frozen { primary_weight: 0.5 },
    )
    .unwrap();
    let plan = DistrictingPlan::from_arrays(&[[0.3, 0.35, 0.35], [0.3, 0.35, 0.35]], 1.0).unwrap();
    let report = allocation_report(&sc, &plan, &SweepConfig::default()).unwrap();
    assert_eq!(report.regime, AllocationRegime::Nonmonotonic, "{report:?}");
    assert!(report.evidence.iter().any(|e| e.benchmark_driven));
    assert!(report.evidence.iter().all(|e| !e.feedback_driven));
}

#[test]
fn curvature_at_two_steps_agrees() {
    let sc = smoothed(reference_primitives(true), 0.75);
    let plan = DistrictingPlan::from_arrays(&[[0.5, 0.2, 0.3], [0.1, 0.164, 0.736]], 1.0).unwrap();
    let at = |h: f64| {
        welfare_curvature(&sc, &plan, 0, &CurvatureConfig { h, ..CurvatureConfig::default() })
            .unwrap()
            .w_ss
    };
    let (a, b) = (at(1e-3), at(5e-4));
    assert!((a - b).abs() <= 0.01 * b.abs(), "{a} vs {b}");
}

// ------------------------------------------------------------ plan optimizer

#[test]
fn stated_matrix_is_reported_against_stated_shares() {
    let demo = StateDemographics::new(PerGroup::new(0.36, 0.26, 0.38), 5).unwrap();
    let plan = DistrictingPlan::from_arrays(
        &[
            [0.19, 0.60, 0.21],
            [0.33, 0.05, 0.62],
            [0.45, 0.10, 0.45],
            [0.14, 0.43, 0.42],
            [0.65, 0.13, 0.22],
        ],
        1.0,
    )
    .unwrap();
    let v = validate_plan(&plan, &demo);
    let row_sums: Vec<usize> = v
        .iter()
        .filter_map(|x| match x {
            PlanViolation::RowSum { district, .. } => Some(*district),
            _ => None,
        })
        .collect();
    assert_eq!(row_sums, vec![3]);
    let means = plan.column_means();
    assert_relative_eq!(means.minority, 0.352, epsilon = 1e-12);
    assert_relative_eq!(means.nonminority, 0.262, epsilon = 1e-12);
    assert_relative_eq!(means.republican, 0.384, epsilon = 1e-12);
    assert_eq!(v.iter().filter(|x| matches!(x, PlanViolation::ColumnMean { .. })).count(), 3);
}

#[test]
fn projection_of_small_perturbation_stays_close() {
    let demo = baseline_demo();
    let noise = [[1e-3, -1e-3, 0.0], [-1e-3, 0.0, 1e-3], [0.0, 1e-3, -1e-3]];
    let m: Vec<[f64; 3]> = (0..3)
        .map(|k| std::array::from_fn(|j| BASELINE_SHARES.to_array()[j] + noise[k][j] / 3f64.sqrt()))
        .collect();
    let plan = project_to_feasible(&m, &demo).unwrap();
    assert!(validate_plan(&plan, &demo).is_empty());
    let dist: f64 = plan
        .rows
        .iter()
        .zip(&m)
        .map(|(r, x)| r.to_array().iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    assert!(dist < 1e-2);
}

#[test]
fn published_spread_row() {
    let r = optimize(&baseline_demo(), &Objective::LinearDistributive { powers: general(5.0, 3.0, 3.0) }, &OptConfig::default()).unwrap();
    assert!((r.objective - 1.071).abs() < 0.01);
    assert!(concentration_range(&r.plan) < 0.01);
    for row in &r.plan.rows {
        assert!((row.minority - 0.25).abs() < 0.01);
    }
}

#[test]
fn two_district_grid_never_beats_optimizer() {
    let demo = StateDemographics::new(BASELINE_SHARES, 2).unwrap();
    let obj = Objective::LinearDistributive { powers: general(1.0, 3.0, 1.0) };
    let grid = grid_oracle(&demo, &obj, 0.05, Execution::Sequential).unwrap();
    let opt = optimize(&demo, &obj, &OptConfig::default()).unwrap();
    assert!(grid.objective <= opt.objective + 1e-9);
}
