//! Multistart local search over feasible districting plans, a brute-force
//! grid oracle for small K, and parameter sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::competition::{concentration_range, minority_share, swap_improve, SwapConfig};
use crate::electoral::{check_epsilon, crra, DistrictComposition, GroupPowerVector};
use crate::equilibrium::{MatchupResolvedScenario, Primitives};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::group::{GroupId, PerGroup, PrimaryRule};
use crate::plan::{project_to_feasible, validate_plan, DistrictingPlan, StateDemographics};
use crate::selection::{expected_ideology, IdeologyWeights, SupportLevels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    LinearDistributive,
    CrraDistributive,
    Selection,
    Total,
}

/// Minority welfare objectives. All are sums of per-district terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Σ_k T_mD,k.
    LinearDistributive { powers: GroupPowerVector },
    /// Σ_k N_mD,k u(b_mD,k).
    CrraDistributive {
        powers: GroupPowerVector,
        kappa: f64,
        epsilon: f64,
    },
    /// Σ_k N_mD,k E[μ|k].
    Selection {
        support: SupportLevels,
        rule: PrimaryRule,
        weights: IdeologyWeights,
    },
    /// Selection plus distributive welfare with matchups resolved per district.
    Total(Box<MatchupResolvedScenario>),
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::LinearDistributive { .. } => ObjectiveKind::LinearDistributive,
            Objective::CrraDistributive { .. } => ObjectiveKind::CrraDistributive,
            Objective::Selection { .. } => ObjectiveKind::Selection,
            Objective::Total(_) => ObjectiveKind::Total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::CrraDistributive { kappa, epsilon, .. } => {
                check_epsilon(*epsilon)?;
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(Error::param("kappa", "must be positive"));
                }
                Ok(())
            }
            Objective::Selection { support, .. } => support.validate(),
            Objective::Total(s) => s.validate(),
            Objective::LinearDistributive { .. } => Ok(()),
        }
    }

    /// Contribution of one district with the given shares.
    pub fn district_value(&self, shares: &PerGroup<f64>, size: f64) -> Result<f64> {
        if shares.minority <= 0.0 {
            return Ok(0.0);
        }
        let d = DistrictComposition::from_shares(*shares, size)?;
        match self {
            Objective::LinearDistributive { powers } => minority_share(powers, &d),
            Objective::CrraDistributive { powers, kappa, epsilon } => {
                let b = powers.power.minority / powers.power.dot(d.counts());
                Ok(d.count(GroupId::Minority) * crra(*kappa, *epsilon, b)?)
            }
            Objective::Selection { support, rule, weights } => {
                Ok(d.count(GroupId::Minority) * expected_ideology(support, &d, *rule, *weights)?)
            }
            Objective::Total(s) => Ok(s.district_parts(d.counts())?.total()),
        }
    }

    pub fn evaluate(&self, plan: &DistrictingPlan) -> Result<f64> {
        let mut total = 0.0;
        for row in &plan.rows {
            total += self.district_value(row, plan.district_size)?;
        }
        Ok(total)
    }

    fn linear_powers(&self) -> Option<&GroupPowerVector> {
        match self {
            Objective::LinearDistributive { powers } => Some(powers),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub restarts: usize,
    pub seed: u64,
    pub initial_step: f64,
    pub min_step: f64,
    pub shrink: f64,
    /// Cap on accepted moves per restart.
    pub max_moves: usize,
    pub execution: Execution,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            restarts: 64,
            seed: 0,
            initial_step: 0.05,
            min_step: 1e-4,
            shrink: 0.5,
            max_moves: 200_000,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub plan: DistrictingPlan,
    pub objective: f64,
    pub objective_kind: ObjectiveKind,
    pub restarts_used: usize,
    /// Running maximum of the objective over restarts in index order.
    pub best_history: Vec<f64>,
    pub best_restart: usize,
    /// Distinct plans (distance > 0.05) within 1e-6 of the best objective.
    pub alternatives: Vec<DistrictingPlan>,
}

impl OptResult {
    pub fn average(&self) -> f64 {
        self.objective / self.plan.k() as f64
    }

    /// R(D): spread of minority shares across districts.
    pub fn concentration(&self) -> f64 {
        concentration_range(&self.plan)
    }
}

// (gain, a, b, new row a, new row b, value a, value b)
type Candidate = (f64, usize, usize, PerGroup<f64>, PerGroup<f64>, f64, f64);

const NEAR_TIE: f64 = 1e-6;
const DISTINCT: f64 = 0.05;

fn with_plan(e: Error, plan: &DistrictingPlan) -> Error {
    let rows: Vec<[f64; 3]> = plan.rows.iter().map(|r| r.to_array()).collect();
    Error::Objective(format!("{e} at plan {rows:?}"))
}

fn random_start(demo: &StateDemographics, seed: u64) -> Result<DistrictingPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix: Vec<[f64; 3]> = (0..demo.k)
        .map(|_| {
            let mut row = [0.0; 3];
            for v in &mut row {
                let u: f64 = rng.gen_range(1e-12..1.0);
                *v = (-u.ln()).powi(2);
            }
            let s: f64 = row.iter().sum();
            row.map(|v| v / s)
        })
        .collect();
    project_to_feasible(&matrix, demo)
}

/// Pairwise two-group transfers: district k sends δ of group g to l and
/// receives δ of group h, so row sums and column totals are unchanged.
fn local_search(plan: &mut DistrictingPlan, objective: &Objective, config: &OptConfig) -> Result<f64> {
    let k = plan.k();
    let size = plan.district_size;
    let mut values = plan
        .rows
        .iter()
        .map(|r| objective.district_value(r, size))
        .collect::<Result<Vec<_>>>()?;
    let mut step = config.initial_step;
    let mut moves = 0;
    while step >= config.min_step && moves < config.max_moves {
        let current: f64 = values.iter().sum();
        let tol = 1e-13 * current.abs().max(1.0);
        let mut best: Option<Candidate> = None;
        for a in 0..k {
            for b in (a + 1)..k {
                for g in GroupId::ALL {
                    for h in GroupId::ALL {
                        if g == h {
                            continue;
                        }
                        let delta = step.min(plan.rows[a][g]).min(plan.rows[b][h]);
                        if delta <= 0.0 {
                            continue;
                        }
                        let mut ra = plan.rows[a];
                        let mut rb = plan.rows[b];
                        ra[g] -= delta;
                        rb[g] += delta;
                        rb[h] -= delta;
                        ra[h] += delta;
                        let va = objective.district_value(&ra, size)?;
                        let vb = objective.district_value(&rb, size)?;
                        let gain = va + vb - values[a] - values[b];
                        if gain > tol && best.as_ref().is_none_or(|x| gain > x.0) {
                            best = Some((gain, a, b, ra, rb, va, vb));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, a, b, ra, rb, va, vb)) => {
                plan.rows[a] = ra;
                plan.rows[b] = rb;
                values[a] = va;
                values[b] = vb;
                moves += 1;
            }
            None => step *= config.shrink,
        }
    }
    objective.evaluate(plan)
}

fn run_restart(
    demo: &StateDemographics,
    objective: &Objective,
    config: &OptConfig,
    index: usize,
) -> Result<(DistrictingPlan, f64)> {
    let mut plan = if index == 0 {
        demo.uniform_plan()
    } else {
        random_start(demo, config.seed.wrapping_add(index as u64))?
    };
    let mut value = local_search(&mut plan, objective, config).map_err(|e| with_plan(e, &plan))?;
    if let Some(powers) = objective.linear_powers() {
        let polished = swap_improve(&plan, powers, SwapConfig::default())?;
        let v = objective.evaluate(&polished.plan)?;
        if v > value && validate_plan(&polished.plan, demo).is_empty() {
            plan = polished.plan;
            value = v;
        }
    }
    Ok((plan, value))
}

fn check_demo(demo: &StateDemographics) -> Result<()> {
    StateDemographics::with_district_size(demo.shares, demo.k, demo.district_size).map(|_| ())
}

/// Best plan over `config.restarts` local searches. Restart 0 starts at the
/// uniform plan; restart i > 0 starts from a projected random matrix seeded
/// with seed + i. Ties go to the lowest restart index.
pub fn optimize(demo: &StateDemographics, objective: &Objective, config: &OptConfig) -> Result<OptResult> {
    check_demo(demo)?;
    objective.validate()?;
    if demo.k == 1 {
        let plan = demo.uniform_plan();
        let value = objective.evaluate(&plan).map_err(|e| with_plan(e, &plan))?;
        return Ok(OptResult {
            plan,
            objective: value,
            objective_kind: objective.kind(),
            restarts_used: 1,
            best_history: vec![value],
            best_restart: 0,
            alternatives: Vec::new(),
        });
    }
    let restarts = config.restarts.max(1);
    let runs = config
        .execution
        .map_range(restarts, |i| run_restart(demo, objective, config, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    let mut history = Vec::with_capacity(restarts);
    for (i, (_, v)) in runs.iter().enumerate() {
        if *v > runs[best].1 {
            best = i;
        }
        history.push(runs[best].1);
    }
    let plan = runs[best].0.clone();
    let mut alternatives: Vec<DistrictingPlan> = Vec::new();
    for (p, v) in &runs {
        if *v >= runs[best].1 - NEAR_TIE
            && p.distance(&plan) > DISTINCT
            && alternatives.iter().all(|q| q.distance(p) > DISTINCT)
        {
            alternatives.push(p.clone());
        }
    }
    let objective_value = objective.evaluate(&plan)?;
    Ok(OptResult {
        plan,
        objective: objective_value,
        objective_kind: objective.kind(),
        restarts_used: restarts,
        best_history: history,
        best_restart: best,
        alternatives,
    })
}

/// Exhaustive search with K−1 districts on the share grid and the last
/// district as the residual.
pub fn grid_oracle(
    demo: &StateDemographics,
    objective: &Objective,
    resolution: f64,
    execution: Execution,
) -> Result<OptResult> {
    check_demo(demo)?;
    objective.validate()?;
    if demo.k > 3 {
        return Err(Error::param("K", "grid oracle supports K ≤ 3"));
    }
    if !(0.05 - 1e-12..=1.0).contains(&resolution) {
        return Err(Error::param("resolution", "must lie in [0.05, 1]"));
    }
    let n = (1.0 / resolution).round() as usize;
    if ((n as f64) * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::param("resolution", "must divide 1"));
    }
    let mut cells = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
            cells.push(PerGroup::new(a, b, (1.0 - a - b).max(0.0)));
        }
    }
    let k = demo.k;
    let free = k - 1;
    let total = cells.len().pow(free as u32);
    let target = demo.shares.map(|_, s| s * k as f64);
    let eval = |idx: usize| -> Result<Option<(DistrictingPlan, f64)>> {
        let mut rows = Vec::with_capacity(k);
        let mut rem = idx;
        for _ in 0..free {
            rows.push(cells[rem % cells.len()]);
            rem /= cells.len();
        }
        let mut residual = target;
        for r in &rows {
            for g in GroupId::ALL {
                residual[g] -= r[g];
            }
        }
        if residual.iter().any(|(_, v)| *v < -1e-9) {
            return Ok(None);
        }
        rows.push(residual.map(|_, v| v.max(0.0)));
        let plan = DistrictingPlan {
            rows,
            district_size: demo.district_size,
        };
        let v = objective.evaluate(&plan).map_err(|e| with_plan(e, &plan))?;
        Ok(Some((plan, v)))
    };
    let found = execution.map_range(total, eval);
    let mut best: Option<(DistrictingPlan, f64)> = None;
    for r in found {
        if let Some((p, v)) = r? {
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((p, v));
            }
        }
    }
    let (plan, value) = best.ok_or_else(|| Error::InvalidPlan("no feasible residual on the grid".into()))?;
    Ok(OptResult {
        plan,
        objective: value,
        objective_kind: objective.kind(),
        restarts_used: 1,
        best_history: vec![value],
        best_restart: 0,
        alternatives: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[serde(rename = "pi_mD")]
    PiMinority,
    Beta,
    Epsilon,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::PiMinority => "pi_mD",
            SweepAxis::Beta => "beta",
            SweepAxis::Epsilon => "epsilon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub result: std::result::Result<OptResult, String>,
}

fn rebuild(prims: &Primitives, s: &MatchupResolvedScenario) -> Result<MatchupResolvedScenario> {
    let mut out = MatchupResolvedScenario::from_primitives(prims.clone(), s.weights, s.rule, s.mode)?;
    out.minority_kappa = s.minority_kappa;
    Ok(out)
}

/// Objective with one parameter replaced.
pub fn with_parameter(objective: &Objective, axis: SweepAxis, value: f64) -> Result<Objective> {
    let mismatch = || Error::param("axis", format!("{} does not apply to a {:?} objective", axis.label(), objective.kind()));
    let out = match (objective.clone(), axis) {
        (Objective::LinearDistributive { mut powers }, SweepAxis::PiMinority) => {
            powers.power.minority = value;
            Objective::LinearDistributive {
                powers: GroupPowerVector::new(powers.power, powers.context)?,
            }
        }
        (Objective::CrraDistributive { mut powers, kappa, epsilon }, SweepAxis::PiMinority) => {
            powers.power.minority = value;
            Objective::CrraDistributive {
                powers: GroupPowerVector::new(powers.power, powers.context)?,
                kappa,
                epsilon,
            }
        }
        (Objective::CrraDistributive { powers, kappa, .. }, SweepAxis::Epsilon) => Objective::CrraDistributive {
            powers,
            kappa,
            epsilon: value,
        },
        (Objective::Selection { support, rule, .. }, SweepAxis::Beta) => Objective::Selection {
            support,
            rule,
            weights: IdeologyWeights::new(value)?,
        },
        (Objective::Total(s), SweepAxis::Beta) => Objective::Total(Box::new(s.with_beta(value)?)),
        (Objective::Total(s), SweepAxis::Epsilon) => {
            let mut s = *s;
            match s.primitives.clone() {
                Some(mut p) => {
                    for g in GroupId::ALL {
                        p.profiles[g].epsilon = value;
                    }
                    s = rebuild(&p, &s)?;
                }
                None => {
                    s.epsilon = value;
                    s.validate()?;
                }
            }
            Objective::Total(Box::new(s))
        }
        (Objective::Total(s), SweepAxis::PiMinority) => {
            if s.primitives.is_some() {
                return Err(Error::param("axis", "pi_mD sweeps need a reduced-form scenario"));
            }
            let mut s = *s;
            for p in s.powers.iter_mut().skip(1) {
                p.power.minority = value;
                *p = GroupPowerVector::new(p.power, p.context)?;
            }
            s.validate()?;
            Objective::Total(Box::new(s))
        }
        _ => return Err(mismatch()),
    };
    out.validate()?;
    Ok(out)
}

/// One optimization per value with a shared seed. Row failures are
/// recorded and the sweep continues.
pub fn sweep(
    demo: &StateDemographics,
    objective: &Objective,
    axis: SweepAxis,
    values: &[f64],
    config: &OptConfig,
) -> Result<Vec<SweepRow>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("values", "must be finite"));
    }
    if values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("values", "must be sorted ascending"));
    }
    Ok(values
        .iter()
        .map(|v| SweepRow {
            value: *v,
            result: with_parameter(objective, axis, *v)
                .and_then(|o| optimize(demo, &o, config))
                .map_err(|e| e.to_string()),
        })
        .collect())
}
