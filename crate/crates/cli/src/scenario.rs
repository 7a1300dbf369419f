//! Scenario files: TOML documents describing demographics, the electoral
//! model (reduced form or primitives), an objective and run settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use districting::affinity::AffinityDistribution;
use districting::electoral::{GroupPowerVector, GroupProfile, MatchupContext};
use districting::equilibrium::{
    CurvatureConfig, MatchupMode, MatchupResolvedScenario, Primitives, SweepConfig, TippingThresholds,
};
use districting::optimizer::{Objective, ObjectiveKind, OptConfig, SweepAxis};
use districting::plan::{DistrictingPlan, StateDemographics};
use districting::selection::{IdeologyWeights, SupportLevels};
use districting::{Execution, GroupId, MatchupKey, PerGroup, PrimaryRule};

use crate::error::{CliError, CliResult, Location};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicsSection {
    pub shares: PerGroup<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub district_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    ReducedForm,
    Primitives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchupModeName {
    ExpectationWeighted,
    Smoothed,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mode: ModelMode,
    #[serde(default)]
    pub primary_rule: PrimaryRule,
    #[serde(default = "default_matchup_mode")]
    pub matchup_mode: MatchupModeName,
    /// Distributive weight of the mD–R matchup under frozen mode.
    pub primary_weight: Option<f64>,
    pub beta: f64,
    pub minority_kappa: Option<f64>,
    pub descriptive_weight: Option<f64>,
}

fn default_matchup_mode() -> MatchupModeName {
    MatchupModeName::ExpectationWeighted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages<T> {
    #[serde(rename = "primary_mD_nD")]
    pub primary: T,
    #[serde(rename = "general_mD_R")]
    pub general_minority: T,
    #[serde(rename = "general_nD_R")]
    pub general_nonminority: T,
}

impl<T> Stages<T> {
    pub fn get(&self, key: MatchupKey) -> &T {
        match key {
            MatchupKey::PrimaryMinorityNonminority => &self.primary,
            MatchupKey::GeneralMinorityRepublican => &self.general_minority,
            MatchupKey::GeneralNonminorityRepublican => &self.general_nonminority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedFormSection {
    pub epsilon: f64,
    pub powers: Stages<PerGroup<f64>>,
    pub support: Stages<PerGroup<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitivesSection {
    pub epsilon: f64,
    pub kappa: PerGroup<f64>,
    pub mu: Stages<PerGroup<f64>>,
    /// Keys: `default`, a group label (`mD`), or `group.matchup`
    /// (`mD.general_mD_R`); more specific keys win.
    pub affinity: BTreeMap<String, AffinityDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    /// Powers for distributive objectives; defaults to the model's mD–R matchup.
    pub powers: Option<PerGroup<f64>>,
    /// Several (π_mD, π_nD, π_R) rows, one optimization each.
    pub cases: Option<Vec<[f64; 3]>>,
    pub kappa: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub execution: Option<Execution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub rows: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSection {
    /// Districts to report; all when absent.
    pub districts: Option<Vec<usize>>,
    pub reservoir: Option<usize>,
    pub h: Option<f64>,
    pub resolution: Option<f64>,
    pub thresholds: Option<TippingThresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    pub powers: PerGroup<f64>,
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformsSection {
    pub shares: PerGroup<f64>,
    pub total: Option<f64>,
    /// Powers of a single general matchup; otherwise the model's three matchups.
    pub powers: Option<PerGroup<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Default output directory, relative to the scenario file.
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub metadata: Metadata,
    pub demographics: Option<DemographicsSection>,
    pub model: Option<ModelSection>,
    pub reduced_form: Option<ReducedFormSection>,
    pub primitives: Option<PrimitivesSection>,
    pub objective: Option<ObjectiveSection>,
    pub optimizer: Option<OptimizerSection>,
    pub sweep: Option<SweepSection>,
    pub plan: Option<PlanSection>,
    pub curvature: Option<CurvatureSection>,
    pub surface: Option<SurfaceSection>,
    pub platforms: Option<PlatformsSection>,
    pub output: Option<OutputSection>,
}

/// A parsed scenario together with its source for error locations.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: PathBuf,
    pub source: String,
    pub file: ScenarioFile,
}

/// 1-based line of `key` inside `[section]`, or of the section header.
pub fn locate(source: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let nested = format!("[{section}.");
    let mut in_section = false;
    let mut header_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header || line.starts_with(&nested);
            if in_section && header_line.is_none() {
                header_line = Some(i + 1);
                if key.is_none() {
                    return header_line;
                }
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim().trim_matches('"');
                if name == k {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(path, source)
    }

    pub fn parse(path: &Path, source: String) -> CliResult<Self> {
        let file: ScenarioFile = toml::from_str(&source).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(&source, s.start));
            let section = e
                .span()
                .and_then(|s| {
                    source[..s.start.min(source.len())]
                        .lines()
                        .rev()
                        .map(str::trim)
                        .find(|l| l.starts_with('['))
                        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string())
                })
                .unwrap_or_else(|| "document".into());
            CliError::Invalid {
                at: Location {
                    file: path.to_path_buf(),
                    line,
                    section,
                },
                constraint: e.message().to_string(),
            }
        })?;
        let s = Scenario {
            path: path.to_path_buf(),
            source,
            file,
        };
        s.check()?;
        Ok(s)
    }

    pub fn name(&self) -> String {
        self.file.metadata.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    pub fn at(&self, section: &str, key: Option<&str>) -> Location {
        Location {
            file: self.path.clone(),
            line: locate(&self.source, section, key),
            section: section.to_string(),
        }
    }

    pub fn invalid(&self, section: &str, key: Option<&str>, constraint: impl Into<String>) -> CliError {
        CliError::Invalid {
            at: self.at(section, key),
            constraint: constraint.into(),
        }
    }

    pub fn model_err(&self, section: &str, key: Option<&str>) -> impl Fn(districting::Error) -> CliError + '_ {
        let at = self.at(section, key);
        move |source| CliError::Model { at: at.clone(), source }
    }

    fn check(&self) -> CliResult<()> {
        if let Some(m) = &self.file.model {
            let (rf, pr) = (self.file.reduced_form.is_some(), self.file.primitives.is_some());
            if rf && pr {
                return Err(self.invalid("model", Some("mode"), "exactly one of reduced_form or primitives may be given"));
            }
            match m.mode {
                ModelMode::ReducedForm if !rf => {
                    return Err(self.invalid("model", Some("mode"), "mode = \"reduced_form\" needs a [reduced_form] section"))
                }
                ModelMode::Primitives if !pr => {
                    return Err(self.invalid("model", Some("mode"), "mode = \"primitives\" needs a [primitives] section"))
                }
                _ => {}
            }
        } else if self.file.reduced_form.is_some() || self.file.primitives.is_some() {
            return Err(self.invalid("model", None, "a [model] section is required with reduced_form or primitives"));
        }
        if let Some(p) = &self.file.primitives {
            for (key, dist) in &p.affinity {
                parse_affinity_key(key).ok_or_else(|| {
                    self.invalid("primitives.affinity", Some(key), format!("unknown affinity key `{key}`"))
                })?;
                dist.validate().map_err(self.model_err("primitives.affinity", Some(key)))?;
            }
        }
        if self.file.demographics.is_some() {
            self.demographics()?;
        }
        if self.file.model.is_some() {
            self.model()?;
        }
        if self.file.plan.is_some() {
            self.plan()?;
        }
        Ok(())
    }

    pub fn demographics(&self) -> CliResult<StateDemographics> {
        let d = self
            .file
            .demographics
            .as_ref()
            .ok_or_else(|| self.invalid("demographics", None, "section is required for this command"))?;
        let key = if d.k == 0 { "K" } else { "shares" };
        StateDemographics::with_district_size(d.shares, d.k, d.district_size.unwrap_or(1.0))
            .map_err(self.model_err("demographics", Some(key)))
    }

    pub fn plan(&self) -> CliResult<DistrictingPlan> {
        let p = self
            .file
            .plan
            .as_ref()
            .ok_or_else(|| self.invalid("plan", None, "section is required for this command"))?;
        let size = self.file.demographics.as_ref().and_then(|d| d.district_size).unwrap_or(1.0);
        plan_from_rows(&p.rows, size).map_err(|c| self.invalid("plan", Some("rows"), c))
    }

    pub fn model(&self) -> CliResult<MatchupResolvedScenario> {
        let m = self
            .file
            .model
            .as_ref()
            .ok_or_else(|| self.invalid("model", None, "section is required for this command"))?;
        let weights = IdeologyWeights::new(m.beta).map_err(self.model_err("model", Some("beta")))?;
        let mode = match m.matchup_mode {
            MatchupModeName::ExpectationWeighted => MatchupMode::ExpectationWeighted,
            MatchupModeName::Smoothed => MatchupMode::Smoothed,
            MatchupModeName::Frozen => MatchupMode::Frozen {
                primary_weight: m
                    .primary_weight
                    .ok_or_else(|| self.invalid("model", Some("matchup_mode"), "frozen mode needs primary_weight"))?,
            },
        };
        let mut sc = match m.mode {
            ModelMode::ReducedForm => {
                let rf = self.file.reduced_form.as_ref().expect("checked");
                let support = SupportLevels::new(MatchupKey::ALL.map(|k| rf.support.get(k).to_array()))
                    .map_err(self.model_err("reduced_form", Some("support")))?;
                let powers = MatchupKey::ALL
                    .map(|k| GroupPowerVector::new(*rf.powers.get(k), k).map_err(self.model_err("reduced_form", Some("powers"))));
                let [p1, p2, p3] = powers;
                MatchupResolvedScenario::from_reduced_form(
                    support,
                    [p1?, p2?, p3?],
                    m.minority_kappa.unwrap_or(1.0),
                    rf.epsilon,
                    weights,
                    m.primary_rule,
                    mode,
                )
                .map_err(self.model_err("model", Some("matchup_mode")))?
            }
            ModelMode::Primitives => {
                let prims = self.primitives(m.primary_rule)?;
                MatchupResolvedScenario::from_primitives(prims, weights, m.primary_rule, mode)
                    .map_err(self.model_err("primitives", None))?
            }
        };
        if let Some(k) = m.minority_kappa {
            sc = sc.with_minority_kappa(k).map_err(self.model_err("model", Some("minority_kappa")))?;
        }
        if let Some(w) = m.descriptive_weight {
            sc = sc
                .with_descriptive_weight(w)
                .map_err(self.model_err("model", Some("descriptive_weight")))?;
        }
        Ok(sc)
    }

    fn primitives(&self, rule: PrimaryRule) -> CliResult<Primitives> {
        let p = self.file.primitives.as_ref().expect("checked");
        let mut profiles = Vec::new();
        for g in GroupId::ALL {
            let mut prof = GroupProfile::new(p.kappa[g], p.epsilon).map_err(self.model_err("primitives", Some("kappa")))?;
            for key in MatchupKey::ALL {
                let dist = resolve_affinity(&p.affinity, g, key).ok_or_else(|| {
                    self.invalid(
                        "primitives.affinity",
                        None,
                        format!("no affinity distribution for group {g} in matchup {key}"),
                    )
                })?;
                prof = prof.with_affinity(key, dist.clone());
            }
            profiles.push(prof);
        }
        let [md, nd, r]: [GroupProfile; 3] = profiles.try_into().expect("three groups");
        let ctx = |key: MatchupKey| {
            MatchupContext::new(key, *p.mu.get(key))
                .map(|c| c.with_rule(rule))
                .map_err(self.model_err("primitives.mu", None))
        };
        Ok(Primitives {
            profiles: PerGroup::new(md, nd, r),
            matchups: [
                ctx(MatchupKey::PrimaryMinorityNonminority)?,
                ctx(MatchupKey::GeneralMinorityRepublican)?,
                ctx(MatchupKey::GeneralNonminorityRepublican)?,
            ],
        })
    }

    /// One objective per case (Table-1 style rows) or a single objective.
    pub fn objectives(&self) -> CliResult<Vec<Objective>> {
        let o = self
            .file
            .objective
            .as_ref()
            .ok_or_else(|| self.invalid("objective", None, "section is required for this command"))?;
        let general = |powers: PerGroup<f64>, key: &str| {
            GroupPowerVector::new(powers, MatchupKey::GeneralMinorityRepublican)
                .map_err(self.model_err("objective", Some(key)))
        };
        let powers: Vec<GroupPowerVector> = match (&o.cases, &o.powers) {
            (Some(_), Some(_)) => return Err(self.invalid("objective", Some("cases"), "give either cases or powers, not both")),
            (Some(cases), None) => cases
                .iter()
                .map(|c| general(PerGroup::from_array(*c), "cases"))
                .collect::<CliResult<_>>()?,
            (None, Some(p)) => vec![general(*p, "powers")?],
            (None, None) => match self.file.model {
                Some(_) => vec![self.model()?.powers[1]],
                None => Vec::new(),
            },
        };
        let need_powers = || {
            if powers.is_empty() {
                Err(self.invalid("objective", Some("powers"), "distributive objectives need powers, cases or a model"))
            } else {
                Ok(())
            }
        };
        let out = match o.kind {
            ObjectiveKind::LinearDistributive => {
                need_powers()?;
                powers.into_iter().map(|p| Objective::LinearDistributive { powers: p }).collect()
            }
            ObjectiveKind::CrraDistributive => {
                need_powers()?;
                let model = self.file.model.as_ref().map(|_| self.model()).transpose()?;
                let kappa = o
                    .kappa
                    .or(model.as_ref().map(|m| m.minority_kappa))
                    .ok_or_else(|| self.invalid("objective", Some("kappa"), "crra_distributive needs kappa"))?;
                let epsilon = o
                    .epsilon
                    .or(model.as_ref().map(|m| m.epsilon))
                    .ok_or_else(|| self.invalid("objective", Some("epsilon"), "crra_distributive needs epsilon"))?;
                powers
                    .into_iter()
                    .map(|p| Objective::CrraDistributive { powers: p, kappa, epsilon })
                    .collect()
            }
            ObjectiveKind::Selection => {
                let m = self.model()?;
                vec![Objective::Selection {
                    support: m.support,
                    rule: m.rule,
                    weights: m.weights,
                }]
            }
            ObjectiveKind::Total => vec![Objective::Total(Box::new(self.model()?))],
        };
        for obj in &out {
            obj.validate().map_err(self.model_err("objective", Some("kind")))?;
        }
        Ok(out)
    }

    pub fn opt_config(&self, seed: Option<u64>, restarts: Option<usize>) -> OptConfig {
        let sect = self.file.optimizer.clone().unwrap_or_default();
        let base = OptConfig::default();
        OptConfig {
            restarts: restarts.or(sect.restarts).unwrap_or(base.restarts),
            seed: seed.or(sect.seed).unwrap_or(base.seed),
            initial_step: sect.initial_step.unwrap_or(base.initial_step),
            min_step: sect.min_step.unwrap_or(base.min_step),
            execution: sect.execution.unwrap_or(base.execution),
            ..base
        }
    }

    pub fn sweep_config(&self, grid_res: Option<f64>) -> SweepConfig {
        let sect = self.file.curvature.clone().unwrap_or_default();
        let base = SweepConfig::default();
        SweepConfig {
            resolution: grid_res.or(sect.resolution).unwrap_or(base.resolution),
            curvature: CurvatureConfig {
                h: sect.h.unwrap_or(base.curvature.h),
                reservoir: sect.reservoir,
                thresholds: sect.thresholds.unwrap_or_default(),
                ..base.curvature
            },
            ..base
        }
    }
}

fn parse_affinity_key(key: &str) -> Option<(Option<GroupId>, Option<MatchupKey>)> {
    let group = |s: &str| GroupId::ALL.into_iter().find(|g| g.label() == s);
    let matchup = |s: &str| MatchupKey::ALL.into_iter().find(|k| k.label() == s);
    if key == "default" {
        return Some((None, None));
    }
    match key.split_once('.') {
        None => group(key).map(|g| (Some(g), None)),
        Some((g, k)) => Some((Some(group(g)?), Some(matchup(k)?))),
    }
}

fn resolve_affinity(
    map: &BTreeMap<String, AffinityDistribution>,
    g: GroupId,
    key: MatchupKey,
) -> Option<&AffinityDistribution> {
    map.get(&format!("{}.{}", g.label(), key.label()))
        .or_else(|| map.get(g.label()))
        .or_else(|| map.get("default"))
}

/// Builds a plan from rows, reporting the first malformed row.
pub fn plan_from_rows(rows: &[[f64; 3]], size: f64) -> Result<DistrictingPlan, String> {
    if rows.is_empty() {
        return Err("plan has no rows".into());
    }
    for (i, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("row {} has a negative or non-finite share", i + 1));
        }
    }
    DistrictingPlan::from_arrays(rows, size).map_err(|e| e.to_string())
}

/// Reads a plan CSV with columns mD, nD, R (header optional).
pub fn load_plan_csv(path: &Path, size: f64) -> CliResult<DistrictingPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    let at = |line: usize| Location {
        file: path.to_path_buf(),
        line: Some(line),
        section: "plan".into(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Invalid {
            at: at(e.position().map_or(0, |p| p.line() as usize)),
            constraint: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rows.is_empty() && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(CliError::Invalid {
                at: at(line),
                constraint: format!("expected 3 columns (mD, nD, R), found {}", rec.len()),
            });
        }
        let mut row = [0.0; 3];
        for (j, f) in rec.iter().enumerate() {
            row[j] = f.parse().map_err(|_| CliError::Invalid {
                at: at(line),
                constraint: format!("`{f}` is not a number"),
            })?;
        }
        rows.push(row);
    }
    plan_from_rows(&rows, size).map_err(|c| CliError::Invalid {
        at: Location {
            file: path.to_path_buf(),
            line: None,
            section: "plan".into(),
        },
        constraint: c,
    })
}

pub fn resolve_output_dir(scenario: &Scenario, flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| {
        let dir = scenario.file.output.as_ref()?.dir.as_ref()?;
        Some(scenario.path.parent().unwrap_or(Path::new(".")).join(dir))
    })
}
