//! Subcommand implementations. Each returns a [`Bundle`]; nothing here
//! touches the filesystem except scenario and plan loading.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use districting::competition::{classify_curvature, path_curvature, path_share, SurfacePoint};
use districting::electoral::{equilibrium_platforms, DistrictComposition, GroupPowerVector};
use districting::equilibrium::{curvature_report, tipping_region, MatchupResolvedScenario, TippingInterval};
use districting::optimizer::{grid_oracle, optimize, sweep, Objective, OptResult};
use districting::plan::{validate_plan, DistrictingPlan};
use districting::selection::{beta_threshold, expected_ideology, minority_win_prob};
use districting::selftest::{self, SelftestConfig, Suite};
use districting::{Electorate, GroupId, MatchupKey, PerGroup};

use crate::error::{CliError, CliResult, Location};
use crate::output::{num, Bundle, RunMeta, Table};
use crate::scenario::{load_plan_csv, Scenario};

/// Options shared by the scenario-driven subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub grid_res: Option<f64>,
    pub plan: Option<PathBuf>,
}

/// Districts with every share above this count as interior.
pub const INTERIOR_FLOOR: f64 = 0.01;

fn meta(sc: &Scenario, command: &str, seed: Option<u64>) -> RunMeta {
    RunMeta::new(command, Some(sc.name()), seed, sc.file.metadata.notes.clone())
}

// ---------------------------------------------------------------- platforms

#[derive(Debug, Serialize)]
struct PlatformRow {
    matchup: String,
    group: GroupId,
    b: f64,
    t: f64,
}

pub fn platforms(sc: &Scenario) -> CliResult<Bundle> {
    let sect = sc
        .file
        .platforms
        .as_ref()
        .ok_or_else(|| sc.invalid("platforms", None, "section is required for this command"))?;
    let total = sect.total.unwrap_or(1.0);
    let district = DistrictComposition::from_shares(sect.shares, total).map_err(sc.model_err("platforms", Some("shares")))?;
    let matchups: Vec<(String, GroupPowerVector, Electorate)> = match &sect.powers {
        Some(p) => vec![(
            "general".into(),
            GroupPowerVector::new(*p, MatchupKey::GeneralMinorityRepublican)
                .map_err(sc.model_err("platforms", Some("powers")))?,
            Electorate::FULL,
        )],
        None => {
            let m = sc.model()?;
            MatchupKey::ALL
                .into_iter()
                .zip(m.powers)
                .map(|(key, pw)| {
                    let e = if key.is_primary() { m.rule.electorate() } else { Electorate::FULL };
                    (key.label().to_string(), pw, e)
                })
                .collect()
        }
    };
    let mut rows = Vec::new();
    for (label, pw, electorate) in &matchups {
        let alloc = equilibrium_platforms(pw, &district, *electorate).map_err(sc.model_err("platforms", None))?;
        for g in GroupId::ALL {
            rows.push(PlatformRow {
                matchup: label.clone(),
                group: g,
                b: alloc.per_capita[g],
                t: alloc.shares[g],
            });
        }
    }
    let mut bundle = Bundle::new(&meta(sc, "platforms", None))?;
    let mut table = Table::new(["matchup", "group", "b", "T"]);
    let mut summary = String::from("matchup          group  b            T\n");
    for r in &rows {
        table.push(vec![r.matchup.clone(), r.group.label().into(), num(r.b), num(r.t)]);
        let _ = writeln!(summary, "{:<16} {:<6} {:<12.6} {:.6}", r.matchup, r.group.label(), r.b, r.t);
    }
    bundle.add_csv("platforms.csv", table)?;
    bundle.json = json!({ "district": sect.shares, "total": total, "platforms": rows });
    bundle.summary = summary;
    Ok(bundle)
}

// ----------------------------------------------------------------- optimize

#[derive(Debug, Serialize)]
struct OptimizeCase {
    powers: Option<PerGroup<f64>>,
    result: OptResult,
    average: f64,
    concentration: f64,
    interior_districts: usize,
    grid_oracle: Option<f64>,
}

fn objective_powers(obj: &Objective) -> Option<PerGroup<f64>> {
    match obj {
        Objective::LinearDistributive { powers } | Objective::CrraDistributive { powers, .. } => Some(powers.power),
        _ => None,
    }
}

fn plan_columns(k: usize) -> Vec<String> {
    (1..=k)
        .flat_map(|d| GroupId::ALL.map(|g| format!("d{d}_{}", g.label())))
        .collect()
}

fn plan_cells(plan: &DistrictingPlan) -> Vec<String> {
    plan.rows.iter().flat_map(|r| r.to_array().map(num)).collect()
}

pub fn optimize_cmd(sc: &Scenario, opts: &RunOptions) -> CliResult<Bundle> {
    let demo = sc.demographics()?;
    let objectives = sc.objectives()?;
    let cfg = sc.opt_config(opts.seed, opts.restarts);
    let mut cases = Vec::new();
    for obj in &objectives {
        let result = optimize(&demo, obj, &cfg).map_err(sc.model_err("objective", None))?;
        let oracle = match opts.grid_res {
            Some(res) => Some(
                grid_oracle(&demo, obj, res, cfg.execution)
                    .map_err(sc.model_err("objective", None))?
                    .objective,
            ),
            None => None,
        };
        cases.push(OptimizeCase {
            powers: objective_powers(obj),
            average: result.average(),
            concentration: result.concentration(),
            interior_districts: result.plan.interior_count(INTERIOR_FLOOR),
            grid_oracle: oracle,
            result,
        });
    }
    let mut header: Vec<String> = vec!["pi_mD".into(), "pi_nD".into(), "pi_R".into()];
    header.extend(plan_columns(demo.k));
    header.extend(["total", "average", "R"].map(String::from));
    if opts.grid_res.is_some() {
        header.push("grid_oracle".into());
    }
    let mut table = Table::new(header);
    let mut summary = format!(
        "{} case(s), K = {}, {} restarts, seed {}\n  pi (mD, nD, R)      total    average  R\n",
        cases.len(),
        demo.k,
        cfg.restarts,
        cfg.seed
    );
    for c in &cases {
        let mut row: Vec<String> = match c.powers {
            Some(p) => p.to_array().map(num).to_vec(),
            None => vec![String::new(); 3],
        };
        row.extend(plan_cells(&c.result.plan));
        row.extend([num(c.result.objective), num(c.average), num(c.concentration)]);
        if let Some(o) = c.grid_oracle {
            row.push(num(o));
        }
        table.push(row);
        let pi = c
            .powers
            .map(|p| format!("({}, {}, {})", p.minority, p.nonminority, p.republican))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            summary,
            "  {pi:<18}  {:.3}    {:.3}    {:.3}",
            c.result.objective, c.average, c.concentration
        );
    }
    let mut bundle = Bundle::new(&meta(sc, "optimize", Some(cfg.seed)))?;
    bundle.add_csv("table.csv", table)?;
    let results = json!({ "config": cfg, "cases": cases });
    bundle.add_json("results.json", &results)?;
    bundle.json = results;
    bundle.summary = summary;
    Ok(bundle)
}

// -------------------------------------------------------------------- sweep

pub fn sweep_cmd(sc: &Scenario, opts: &RunOptions) -> CliResult<Bundle> {
    let sect = sc
        .file
        .sweep
        .as_ref()
        .ok_or_else(|| sc.invalid("sweep", None, "section is required for this command"))?;
    let demo = sc.demographics()?;
    let mut objectives = sc.objectives()?;
    if objectives.len() != 1 {
        return Err(sc.invalid("objective", Some("cases"), "a sweep needs a single objective, not a case list"));
    }
    let obj = objectives.remove(0);
    let cfg = sc.opt_config(opts.seed, opts.restarts);
    let rows = sweep(&demo, &obj, sect.axis, &sect.values, &cfg).map_err(sc.model_err("sweep", Some("values")))?;
    let mut header: Vec<String> = vec![sect.axis.label().into(), "status".into()];
    header.extend(["total", "average", "R", "interior_districts"].map(String::from));
    header.extend(plan_columns(demo.k));
    let mut table = Table::new(header);
    let mut summary = format!("sweep over {} ({} values)\n", sect.axis.label(), rows.len());
    for r in &rows {
        let mut row = vec![num(r.value)];
        match &r.result {
            Ok(res) => {
                row.push("ok".into());
                row.extend([
                    num(res.objective),
                    num(res.average()),
                    num(res.concentration()),
                    res.plan.interior_count(INTERIOR_FLOOR).to_string(),
                ]);
                row.extend(plan_cells(&res.plan));
                let _ = writeln!(
                    summary,
                    "  {} = {:<8} total {:.3}  R {:.3}",
                    sect.axis.label(),
                    r.value,
                    res.objective,
                    res.concentration()
                );
            }
            Err(e) => {
                row.push(format!("error: {e}"));
                row.extend(std::iter::repeat_n(String::new(), 4 + 3 * demo.k));
                let _ = writeln!(summary, "  {} = {:<8} error: {e}", sect.axis.label(), r.value);
            }
        }
        table.push(row);
    }
    let mut bundle = Bundle::new(&meta(sc, "sweep", Some(cfg.seed)))?;
    bundle.add_csv("sweep.csv", table)?;
    let results = json!({ "axis": sect.axis, "config": cfg, "rows": rows });
    bundle.add_json("sweep.json", &results)?;
    bundle.json = results;
    bundle.summary = summary;
    Ok(bundle)
}

// ---------------------------------------------------------------- curvature

#[derive(Debug, Serialize)]
struct TippingSummary {
    district: usize,
    interval: Option<TippingInterval>,
    crossing: Option<f64>,
    max_abs_interaction: f64,
    max_residual: f64,
}

fn curvature_plan(sc: &Scenario, opts: &RunOptions) -> CliResult<Option<DistrictingPlan>> {
    let size = sc.file.demographics.as_ref().and_then(|d| d.district_size).unwrap_or(1.0);
    let (plan, at) = match &opts.plan {
        Some(p) => (
            load_plan_csv(p, size)?,
            Location {
                file: p.clone(),
                line: None,
                section: "plan".into(),
            },
        ),
        None if sc.file.plan.is_some() => (sc.plan()?, sc.at("plan", Some("rows"))),
        None => return Ok(None),
    };
    if sc.file.demographics.is_some() {
        let demo = sc.demographics()?;
        let violations = validate_plan(&plan, &demo);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(CliError::Invalid {
                at,
                constraint: format!("plan is infeasible for the demographics: {}", list.join("; ")),
            });
        }
    }
    Ok(Some(plan))
}

fn model_curvature(
    sc: &Scenario,
    model: &MatchupResolvedScenario,
    plan: &DistrictingPlan,
    opts: &RunOptions,
    bundle: &mut Bundle,
    summary: &mut String,
) -> CliResult<serde_json::Value> {
    let cfg = sc.sweep_config(opts.grid_res);
    let sect = sc.file.curvature.clone().unwrap_or_default();
    let districts = sect.districts.unwrap_or_else(|| (0..plan.k()).collect());
    if let Some(&bad) = districts.iter().find(|&&d| d >= plan.k()) {
        return Err(sc.invalid("curvature", Some("districts"), format!("district {bad} does not exist in a {}-district plan", plan.k())));
    }
    let err = || sc.model_err("curvature", None);
    let mut report = curvature_report(model, plan, &cfg.curvature).map_err(err())?;
    report.entries.retain(|e| districts.contains(&e.district));

    let mut sweep_t = Table::new(["district", "s", "W", "W_ss", "C", "I", "residual", "psi1", "class"]);
    let mut sel_t = Table::new(["district", "s", "psi_mD", "expected_ideology"]);
    let mut beta_t = Table::new(["district", "s", "t", "beta_threshold", "regime", "denominator"]);
    let mut tipping = Vec::new();
    let _ = writeln!(summary, "matchup mode {:?}, rule {:?}", model.mode, model.rule);
    for &k in &districts {
        let tr = tipping_region(model, plan, k, &cfg).map_err(err())?;
        let row = plan.rows[k];
        let non = row.nonminority + row.republican;
        let t = if non > 0.0 { row.nonminority / non } else { 0.5 };
        let mut max_res: f64 = 0.0;
        for p in &tr.samples {
            max_res = max_res.max(p.residual.abs());
            sweep_t.push(vec![
                k.to_string(),
                num(p.s),
                num(p.w),
                num(p.w_ss),
                num(p.c),
                num(p.i),
                num(p.residual),
                num(p.psi1),
                format!("{:?}", p.class).to_lowercase(),
            ]);
            let d = DistrictComposition::from_surface(p.s, t, plan.district_size).map_err(err())?;
            let psi = minority_win_prob(&model.support, &d, model.rule).map_err(err())?;
            let ei = expected_ideology(&model.support, &d, model.rule, model.weights).map_err(err())?;
            sel_t.push(vec![k.to_string(), num(p.s), num(psi.psi_total), num(ei)]);
        }
        let d = DistrictComposition::from_shares(row, plan.district_size).map_err(err())?;
        let bt = beta_threshold(&model.support, &d, model.rule).map_err(err())?;
        beta_t.push(vec![
            k.to_string(),
            num(row.minority),
            num(t),
            num(bt.value),
            serde_json::to_value(bt.regime)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            num(bt.denominator),
        ]);
        let _ = match tr.interval {
            Some(iv) => writeln!(
                summary,
                "  district {k}: tipping on [{:.3}, {:.3}], peak ratio {:.1}, max |I| {:.3e}",
                iv.lower, iv.upper, iv.peak_ratio, tr.max_abs_interaction
            ),
            None => writeln!(summary, "  district {k}: no tipping interval, max |I| {:.3e}", tr.max_abs_interaction),
        };
        tipping.push(TippingSummary {
            district: k,
            interval: tr.interval,
            crossing: tr.crossing,
            max_abs_interaction: tr.max_abs_interaction,
            max_residual: max_res,
        });
    }
    for e in &report.entries {
        let _ = writeln!(
            summary,
            "  district {} at s = {:.3}: W_ss {:.4e} = C {:.4e} + I {:.4e} ({:?}, {:?})",
            e.district, e.s, e.w_ss, e.c, e.i, e.classification, e.feedback
        );
    }
    bundle.add_csv("curvature_sweep.csv", sweep_t)?;
    bundle.add_csv("selection_curve.csv", sel_t)?;
    bundle.add_csv("beta_thresholds.csv", beta_t)?;
    let out = json!({
        "freeze_convention": report.freeze_convention.clone(),
        "sweep_resolution": cfg.resolution,
        "report": report,
        "tipping": tipping,
    });
    bundle.add_json("curvature.json", &out)?;
    Ok(out)
}

fn surface(sc: &Scenario, bundle: &mut Bundle, summary: &mut String) -> CliResult<serde_json::Value> {
    let sect = sc.file.surface.as_ref().expect("caller checked");
    let powers = GroupPowerVector::new(sect.powers, MatchupKey::GeneralMinorityRepublican)
        .map_err(sc.model_err("surface", Some("powers")))?;
    let res = sect.resolution.unwrap_or(0.02);
    let n = (1.0 / res).round();
    if !(res > 0.0 && res <= 0.5) || ((n * res) - 1.0).abs() > 1e-9 {
        return Err(sc.invalid("surface", Some("resolution"), "resolution must divide 1 and lie in (0, 0.5]"));
    }
    let n = n as usize;
    let mut table = Table::new(["a", "b", "c", "f", "g2"]);
    let (mut pos, mut neg) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let s = (i as f64 + 0.5) / n as f64;
            let t = (j as f64 + 0.5) / n as f64;
            let p = SurfacePoint::new(s, t, 1.0).map_err(sc.model_err("surface", None))?;
            let g2 = path_curvature(&powers, &p);
            if g2 > 0.0 {
                pos += 1;
            } else if g2 < 0.0 {
                neg += 1;
            }
            let b = (1.0 - s) * t;
            let c = 1.0 - s - b;
            table.push(vec![num(s), num(b), num(c), num(path_share(&powers, &p)), num(g2)]);
        }
    }
    let class = classify_curvature(&powers);
    let _ = writeln!(
        summary,
        "surface {n}x{n} for pi = ({}, {}, {}): {pos} convex, {neg} concave samples ({class:?})",
        sect.powers.minority, sect.powers.nonminority, sect.powers.republican
    );
    bundle.add_csv("surface.csv", table)?;
    Ok(json!({ "grid": n, "positive": pos, "negative": neg, "class": class }))
}

pub fn curvature_cmd(sc: &Scenario, opts: &RunOptions) -> CliResult<Bundle> {
    let plan = curvature_plan(sc, opts)?;
    let has_model = sc.file.model.is_some();
    if sc.file.surface.is_none() && !(has_model && plan.is_some()) {
        return Err(sc.invalid(
            "curvature",
            None,
            "needs a [model] with a plan (--plan or [plan]) or a [surface] section",
        ));
    }
    let mut bundle = Bundle::new(&meta(sc, "curvature", None))?;
    let mut summary = String::new();
    let mut out = serde_json::Map::new();
    if let (true, Some(plan)) = (has_model, plan.as_ref()) {
        let model = sc.model()?;
        out.insert("curvature".into(), model_curvature(sc, &model, plan, opts, &mut bundle, &mut summary)?);
    }
    if sc.file.surface.is_some() {
        out.insert("surface".into(), surface(sc, &mut bundle, &mut summary)?);
    }
    bundle.json = serde_json::Value::Object(out);
    bundle.summary = summary;
    Ok(bundle)
}

// ----------------------------------------------------------------- selftest

pub fn selftest_cmd(seed: Option<u64>, grid_res: Option<f64>, inject: Option<&str>) -> CliResult<Bundle> {
    let corrupt = match inject {
        Some(name) => Some(Suite::parse(name).ok_or_else(|| {
            let known: Vec<&str> = Suite::ALL.iter().map(|s| s.label()).collect();
            CliError::Failed(format!("unknown suite `{name}` (known: {})", known.join(", ")))
        })?),
        None => None,
    };
    let base = SelftestConfig::default();
    let cfg = SelftestConfig {
        seed: seed.unwrap_or(base.seed),
        oracle_grid: grid_res.unwrap_or(base.oracle_grid),
        corrupt,
        ..base
    };
    let summary = selftest::run(&cfg);
    let mut bundle = Bundle::new(&RunMeta::new("selftest", None, Some(cfg.seed), Vec::new()))?;
    let mut text = String::new();
    for s in &summary.suites {
        let _ = writeln!(
            text,
            "{:<20} {}  {} checks, {} failures, max error {:.3e} (tol {:.1e}), {} ms",
            s.suite.label(),
            if s.passed { "PASS" } else { "FAIL" },
            s.checks,
            s.failures,
            s.max_error,
            s.tolerance,
            s.elapsed_ms
        );
        for ex in &s.examples {
            let _ = writeln!(text, "    {ex}");
        }
    }
    let failing: Vec<&str> = summary.suites.iter().filter(|s| !s.passed).map(|s| s.suite.label()).collect();
    if !failing.is_empty() {
        bundle.failure = Some(format!("selftest failed: {}", failing.join(", ")));
    }
    bundle.json = serde_json::to_value(&summary).map_err(|e| CliError::Failed(e.to_string()))?;
    bundle.add_json("selftest.json", &summary)?;
    bundle.summary = text;
    Ok(bundle)
}
