use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use districting::selftest::SelftestSummary;
use districting_cli::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_districting"))
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn assert_reproducible(args: &[&str]) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", d.path().to_str().unwrap()]);
        let o = run(&full);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 1);
    assert_eq!(fa, fb, "outputs differ for {args:?}");
}

#[test]
fn optimize_outputs_are_byte_identical() {
    let sc = bundled("table1.scenario");
    assert_reproducible(&["optimize", "--scenario", sc.to_str().unwrap(), "--seed", "3", "--restarts", "8"]);
}

#[test]
fn sweep_and_curvature_outputs_are_byte_identical() {
    let sweep = bundled("table1_sweep.scenario");
    assert_reproducible(&["sweep", "--scenario", sweep.to_str().unwrap(), "--restarts", "8"]);
    let demo = bundled("tipping_demo.scenario");
    assert_reproducible(&["curvature", "--scenario", demo.to_str().unwrap(), "--grid-res", "0.05"]);
}

#[test]
fn optimize_csv_has_fifteen_rows_matching_json() {
    let out = tempfile::tempdir().unwrap();
    let sc = bundled("table1.scenario");
    let o = run(&["optimize", "--scenario", sc.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.path().join("table.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let total_col = header.iter().position(|h| h == "total").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 15);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("results.json")).unwrap()).unwrap();
    for (row, case) in rows.iter().zip(json["cases"].as_array().unwrap()) {
        let csv_total: f64 = row[total_col].parse().unwrap();
        let json_total = case["result"]["objective"].as_f64().unwrap();
        assert_eq!(csv_total, json_total);
    }
}

#[test]
fn k_equal_one_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "k1.scenario",
        "[demographics]\nshares = { mD = 0.25, nD = 0.40, R = 0.35 }\nK = 1\n\n[objective]\nkind = \"linear_distributive\"\npowers = { mD = 1.0, nD = 2.0, R = 3.0 }\n",
    );
    let out = dir.path().join("out");
    let o = run(&["optimize", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1.0,2.0,3.0,0.25,0.4,0.35,"));
}

#[test]
fn uniform_district_platform_matches_population_shares() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "p.scenario",
        "[platforms]\nshares = { mD = 0.25, nD = 0.40, R = 0.35 }\npowers = { mD = 3.0, nD = 3.0, R = 3.0 }\n",
    );
    let out = dir.path().join("out");
    let o = run(&["platforms", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("platforms.csv")).unwrap();
    let t: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    for (got, want) in t.iter().zip([0.25, 0.40, 0.35]) {
        assert!((got - want).abs() < 1e-12, "{t:?}");
    }
}

#[test]
fn zero_minority_district_gets_no_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "p.scenario",
        "[platforms]\nshares = { mD = 0.0, nD = 0.5, R = 0.5 }\npowers = { mD = 3.0, nD = 1.0, R = 2.0 }\n",
    );
    let o = run(&["platforms", "--scenario", sc.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["platforms"][0]["group"], "mD");
    assert_eq!(v["platforms"][0]["t"].as_f64(), Some(0.0));
}

fn twin_scenarios(dir: &Path) -> (PathBuf, PathBuf) {
    let text = fs::read_to_string(bundled("tipping_demo.scenario"))
        .unwrap()
        .replace("matchup_mode = \"smoothed\"", "matchup_mode = \"expectation_weighted\"");
    let prim = write(dir, "prim.scenario", &format!("{text}\n[platforms]\nshares = {{ mD = 0.3, nD = 0.2, R = 0.5 }}\n"));
    let sc = Scenario::load(&prim).unwrap();
    let m = sc.model().unwrap();
    let stage = |v: [f64; 3]| format!("{{ mD = {:?}, nD = {:?}, R = {:?} }}", v[0], v[1], v[2]);
    let keys = ["primary_mD_nD", "general_mD_R", "general_nD_R"];
    let mut rf = format!("[reduced_form]\nepsilon = {:?}\n\n[reduced_form.powers]\n", m.epsilon);
    for (k, p) in keys.iter().zip(m.powers) {
        rf += &format!("{k} = {}\n", stage(p.power.to_array()));
    }
    rf += "\n[reduced_form.support]\n";
    for (e, k) in keys.iter().enumerate() {
        rf += &format!("{k} = {}\n", stage(m.support.stage(e + 1).to_array()));
    }
    let start = text.find("[primitives]").unwrap();
    let end = text.find("[plan]").unwrap();
    let twin = format!(
        "{}{rf}\n{}\n[platforms]\nshares = {{ mD = 0.3, nD = 0.2, R = 0.5 }}\n",
        text[..start].replace("mode = \"primitives\"", "mode = \"reduced_form\""),
        &text[end..]
    );
    (prim, write(dir, "twin.scenario", &twin))
}

#[test]
fn primitives_and_reduced_form_twin_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (prim, twin) = twin_scenarios(dir.path());
    for (cmd, file) in [("platforms", "platforms.csv"), ("curvature", "curvature_sweep.csv")] {
        let mut outputs = Vec::new();
        for (i, sc) in [&prim, &twin].iter().enumerate() {
            let out = dir.path().join(format!("{cmd}{i}"));
            let mut args = vec![cmd, "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()];
            if cmd == "curvature" {
                args.extend(["--grid-res", "0.05"]);
            }
            let o = run(&args);
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
            outputs.push(fs::read(out.join(file)).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{cmd} differs between twins");
    }
}

#[test]
fn unknown_field_names_file_line_and_section() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "bad.scenario",
        "[demographics]\nshares = { mD = 0.25, nD = 0.40, R = 0.35 }\nK = 3\nfoo = 1\n",
    );
    let o = run(&["optimize", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("bad.scenario:4: [demographics]"), "{e}");
    assert!(e.contains("unknown field `foo`"), "{e}");
}

#[test]
fn invalid_shares_name_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "bad.scenario",
        "[metadata]\nname = \"x\"\n\n[demographics]\nshares = { mD = 0.25, nD = 0.40, R = 0.45 }\nK = 3\n",
    );
    let o = run(&["optimize", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("bad.scenario:5: [demographics]") && e.contains("sum to 1.1"), "{e}");
}

#[test]
fn both_model_sections_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("tipping_demo.scenario")).unwrap();
    let sc = write(
        dir.path(),
        "both.scenario",
        &format!("{text}\n[reduced_form]\nepsilon = 2.0\npowers = {{ primary_mD_nD = {{ mD = 1.0, nD = 1.0, R = 1.0 }}, general_mD_R = {{ mD = 1.0, nD = 1.0, R = 1.0 }}, general_nD_R = {{ mD = 1.0, nD = 1.0, R = 1.0 }} }}\nsupport = {{ primary_mD_nD = {{ mD = 0.5, nD = 0.5, R = 0.5 }}, general_mD_R = {{ mD = 0.5, nD = 0.5, R = 0.5 }}, general_nD_R = {{ mD = 0.5, nD = 0.5, R = 0.5 }} }}\n"),
    );
    let o = run(&["curvature", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("[model]") && e.contains("exactly one of reduced_form or primitives"), "{e}");
}

#[test]
fn missing_file_is_a_validation_failure() {
    let o = run(&["optimize", "--scenario", "/nonexistent/x.scenario"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/x.scenario"));
}

#[test]
fn infeasible_plan_file_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.csv", "mD,nD,R\n0.3,0.014,0.686\n0.3,0.35,0.30\n");
    let sc = bundled("tipping_demo.scenario");
    let o = run(&["curvature", "--scenario", sc.to_str().unwrap(), "--plan", plan.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("plan.csv") && e.contains("[plan]"), "{e}");
    assert!(e.contains("district 1: shares sum to 0.95"), "{e}");
    assert!(e.contains("group R: district mean"), "{e}");
}

#[test]
fn malformed_plan_row_is_line_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.csv", "mD,nD,R\n0.3,0.014,0.686\n0.3,abc,0.35\n");
    let sc = bundled("tipping_demo.scenario");
    let o = run(&["curvature", "--scenario", sc.to_str().unwrap(), "--plan", plan.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("plan.csv:3: [plan]") && e.contains("`abc` is not a number"), "{e}");
}

#[test]
fn stated_matrix_reports_its_discrepancies() {
    let sc = Scenario::load(&bundled("appendixB.scenario")).unwrap();
    assert_eq!(sc.file.metadata.notes.len(), 3);
    let o = run(&["curvature", "--scenario", bundled("appendixB.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("district 3: shares sum to 0.99"), "{e}");
    assert!(e.contains("group mD: district mean 0.352"), "{e}");
}

#[test]
fn surface_rows_lie_on_the_simplex_and_have_uniform_sign() {
    for (name, positive) in [("figure3a.scenario", false), ("figure3b.scenario", true)] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["curvature", "--scenario", bundled(name).to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut rdr = csv::Reader::from_path(dir.path().join("surface.csv")).unwrap();
        let mut n = 0;
        for r in rdr.records() {
            let v: Vec<f64> = r.unwrap().iter().map(|x| x.parse().unwrap()).collect();
            assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-9);
            assert_eq!(v[4] > 0.0, positive);
            n += 1;
        }
        assert_eq!(n, 2500);
    }
}

#[test]
fn frozen_mode_interaction_column_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("tipping_demo.scenario"))
        .unwrap()
        .replace("matchup_mode = \"smoothed\"", "matchup_mode = \"frozen\"\nprimary_weight = 0.4");
    let sc = write(dir.path(), "frozen.scenario", &text);
    let out = dir.path().join("out");
    let o = run(&["curvature", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("curvature_sweep.csv")).unwrap();
    for r in rdr.records() {
        let i: f64 = r.unwrap()[5].parse().unwrap();
        assert!(i.abs() < 1e-8);
    }
}

#[test]
fn tipping_demo_reports_interval_in_json() {
    let o = run(&["curvature", "--scenario", bundled("tipping_demo.scenario").to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ratio = v["curvature"]["tipping"][0]["interval"]["peak_ratio"].as_f64().unwrap();
    assert!(ratio > 10.0, "{ratio}");
    assert!(v["curvature"]["freeze_convention"].as_str().unwrap().contains("freezes"));
}

#[test]
fn selftest_passes_and_emits_parseable_json() {
    let o = run(&["selftest", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: SelftestSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s.passed);
    assert_eq!(s.suites.len(), 3);
    let back: SelftestSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn injected_failure_names_the_suite_and_exits_nonzero() {
    let o = run(&["selftest", "--inject-failure", "decomposition"]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("decomposition") && l.contains("FAIL")), "{text}");
    assert!(stderr(&o).contains("selftest failed: decomposition"));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // The reservoir holds no minority voters, so s_0 cannot be perturbed upward.
    let plan = write(dir.path(), "plan.csv", "0.6,0.2,0.2
0.0,0.164,0.836
");
    let sc = bundled("tipping_demo.scenario");
    let o = run(&["curvature", "--scenario", sc.to_str().unwrap(), "--plan", plan.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
