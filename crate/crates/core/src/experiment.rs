//! JSON-configured experiments that write a manifest, a result file and
//! plot-ready CSV tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::birth_death::{
    build_chain, exact_asymptotic_variance, gap_exact, gap_lower_bound, peskun_dominates,
    SigmaFunction,
};
use crate::diffusion::{
    batch_means_variance, choose_dt, langevin_spec, simulate_reflected, tempering_limit_spec,
    VarianceEstimate,
};
use crate::error::{Error, Result};
use crate::ladder_opt::{self, OptimalRule};
use crate::stats::derive_seed;
use crate::target::{
    check_regularity, evaluator, Domain, LogTable, TargetDensity, TemperedFamily, DEFAULT_GRID_N,
};
use crate::tempering::{
    acceptance_asymptotic, build_ladder, metric_esjd, run_st_chain_with, thermodynamic_positions,
    trace_rows, trace_stats, EllRule, GSampler, Ladder,
};
use crate::validation;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_DESCRIBE: &str = env!("TEMPERCORE_GIT_DESCRIBE");

/// Stated in every output file.
pub const VARIANCE_CONVENTION: &str =
    "v = sum over all integer lags of Cov(f(Z_0), f(Z_k)); scaled = 2 v / (m^2 S); diffusion V = integral of Cov(f(X_0), f(X_t)) dt over the real line";

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ladder,
    RunSt,
    RunDiffusion,
    CompareSigma,
    Bounds,
    Validate,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Ladder => "ladder",
            ExperimentKind::RunSt => "run-st",
            ExperimentKind::RunDiffusion => "run-diffusion",
            ExperimentKind::CompareSigma => "compare-sigma",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.into())).ok()
    }
}

/// A tempered family by name or from a `(x, log_f)` CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyDecl {
    Named(String),
    Table(TableFamily),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFamily {
    pub table: PathBuf,
    pub support: Domain,
    #[serde(default)]
    pub grid_n: Option<usize>,
}

/// Spacing rule for a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDecl {
    #[default]
    Optimal,
    Acceptance(f64),
    Constant(f64),
}

/// A target density by name or table, on an explicit domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDecl {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub table: Option<PathBuf>,
    pub domain: Domain,
    /// Overrides the log-Lipschitz constant implied by the density.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub c: f64,
    pub amp: f64,
    pub w: f64,
    #[serde(default)]
    pub phase: f64,
}

/// σ(x) as a constant or `c + amp·cos(w x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaDecl {
    Constant(f64),
    Cosine(Harmonic),
}

impl SigmaDecl {
    fn range(&self) -> (f64, f64) {
        match *self {
            SigmaDecl::Constant(c) => (c, c),
            SigmaDecl::Cosine(h) => (h.c - h.amp.abs(), h.c + h.amp.abs()),
        }
    }

    fn build(&self, k_lo: f64, k_hi: f64) -> Result<SigmaFunction> {
        match *self {
            SigmaDecl::Constant(c) => SigmaFunction::constant_in(c, k_lo, k_hi),
            SigmaDecl::Cosine(Harmonic { c, amp, w, phase }) => SigmaFunction::new(
                evaluator(move |x| c + amp * (w * x + phase).cos()),
                evaluator(move |x| -amp * w * (w * x + phase).sin()),
                k_lo,
                k_hi,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalName {
    X,
    X2,
    Sin,
    IndicatorPositive,
}

impl FunctionalName {
    pub const ALL: [FunctionalName; 4] = [
        FunctionalName::X,
        FunctionalName::X2,
        FunctionalName::Sin,
        FunctionalName::IndicatorPositive,
    ];

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FunctionalName::X => x,
            FunctionalName::X2 => x * x,
            FunctionalName::Sin => x.sin(),
            FunctionalName::IndicatorPositive => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FunctionalName::X => "x",
            FunctionalName::X2 => "x2",
            FunctionalName::Sin => "sin",
            FunctionalName::IndicatorPositive => "indicator_positive",
        }
    }
}

fn default_speed_points() -> usize {
    71
}
fn default_replicates() -> usize {
    1
}
fn default_thin() -> usize {
    1
}
fn default_batches() -> usize {
    50
}
fn default_path_thin() -> usize {
    100
}
fn default_functionals() -> Vec<FunctionalName> {
    FunctionalName::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub family: FamilyDecl,
    pub d: usize,
    pub chi: f64,
    #[serde(default)]
    pub rule: RuleDecl,
    /// Grid size of the β-vs-speed table.
    #[serde(default = "default_speed_points")]
    pub speed_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub family: FamilyDecl,
    pub d: usize,
    pub chi: f64,
    #[serde(default)]
    pub rule: RuleDecl,
    pub n_steps: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub g_sampler: GSampler,
    /// Keep every n-th step in trace.csv; 0 skips the trace.
    #[serde(default = "default_thin")]
    pub trace_thin: usize,
    /// Constant-acceptance ladders to sweep instead of `rule`.
    #[serde(default)]
    pub acceptance_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionModel {
    Langevin {
        target: TargetDecl,
        sigma: SigmaDecl,
    },
    Tempering {
        family: FamilyDecl,
        chi: f64,
        #[serde(default)]
        rule: RuleDecl,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDiffusionConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: DiffusionModel,
    /// Start point; the domain midpoint when absent.
    #[serde(default)]
    pub x0: Option<f64>,
    /// Step size; chosen by coupled halving when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    #[serde(default = "default_functional")]
    pub functional: FunctionalName,
    #[serde(default = "default_path_thin")]
    pub path_thin: usize,
}

fn default_functional() -> FunctionalName {
    FunctionalName::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSigmaConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub target: TargetDecl,
    pub sigma1: SigmaDecl,
    pub sigma2: SigmaDecl,
    pub m_list: Vec<usize>,
    #[serde(default = "default_functionals")]
    pub functionals: Vec<FunctionalName>,
    #[serde(default)]
    pub truncation_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub target: TargetDecl,
    pub sigma: SigmaDecl,
    pub m_list: Vec<usize>,
    #[serde(default)]
    pub truncation_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    Ladder(LadderConfig),
    RunSt(RunStConfig),
    RunDiffusion(RunDiffusionConfig),
    CompareSigma(CompareSigmaConfig),
    Bounds(BoundsConfig),
    Validate(ValidateConfig),
}

#[derive(Deserialize)]
struct KindProbe {
    kind: Option<Value>,
}

fn schema_error(text: &str, err: serde_json::Error) -> Error {
    let _ = text;
    Error::Configuration(format!(
        "line {}, column {}: {err}",
        err.line(),
        err.column()
    ))
}

/// 1-based line of the first occurrence of `"key"`, or 1.
fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map_or(1, |k| k + 1)
}

fn range_error(text: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Configuration(format!("line {}: `{key}` {msg}", line_of(text, key)))
}

fn parse_as<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| schema_error(text, e))
}

impl ExperimentConfig {
    /// Parse and range-check a configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        let probe: KindProbe = parse_as(text)?;
        let kind = match probe.kind {
            Some(Value::String(s)) => ExperimentKind::parse(&s).ok_or_else(|| {
                range_error(
                    text,
                    "kind",
                    format!("`{s}` is not one of ladder, run-st, run-diffusion, compare-sigma, bounds, validate"),
                )
            })?,
            Some(_) => return Err(range_error(text, "kind", "must be a string")),
            None => return Err(Error::Configuration("line 1: missing field `kind`".into())),
        };
        let cfg = match kind {
            ExperimentKind::Ladder => ExperimentConfig::Ladder(parse_as(text)?),
            ExperimentKind::RunSt => ExperimentConfig::RunSt(parse_as(text)?),
            ExperimentKind::RunDiffusion => ExperimentConfig::RunDiffusion(parse_as(text)?),
            ExperimentKind::CompareSigma => ExperimentConfig::CompareSigma(parse_as(text)?),
            ExperimentKind::Bounds => ExperimentConfig::Bounds(parse_as(text)?),
            ExperimentKind::Validate => ExperimentConfig::Validate(parse_as(text)?),
        };
        cfg.check_ranges(text)?;
        Ok(cfg)
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::Ladder(_) => ExperimentKind::Ladder,
            ExperimentConfig::RunSt(_) => ExperimentKind::RunSt,
            ExperimentConfig::RunDiffusion(_) => ExperimentKind::RunDiffusion,
            ExperimentConfig::CompareSigma(_) => ExperimentKind::CompareSigma,
            ExperimentConfig::Bounds(_) => ExperimentKind::Bounds,
            ExperimentConfig::Validate(_) => ExperimentKind::Validate,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            ExperimentConfig::Ladder(c) => c.seed,
            ExperimentConfig::RunSt(c) => c.seed,
            ExperimentConfig::RunDiffusion(c) => c.seed,
            ExperimentConfig::CompareSigma(c) => c.seed,
            ExperimentConfig::Bounds(c) => c.seed,
            ExperimentConfig::Validate(c) => c.seed,
        }
    }

    pub fn output_dir(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::Ladder(c) => c.output_dir.as_deref(),
            ExperimentConfig::RunSt(c) => c.output_dir.as_deref(),
            ExperimentConfig::RunDiffusion(c) => c.output_dir.as_deref(),
            ExperimentConfig::CompareSigma(c) => c.output_dir.as_deref(),
            ExperimentConfig::Bounds(c) => c.output_dir.as_deref(),
            ExperimentConfig::Validate(c) => c.output_dir.as_deref(),
        }
    }

    fn check_ranges(&self, text: &str) -> Result<()> {
        let chi_ok = |chi: f64| chi > 0.0 && chi < 1.0;
        let rule_ok = |r: &RuleDecl| match *r {
            RuleDecl::Optimal => Ok(()),
            RuleDecl::Acceptance(a) if a > 0.0 && a < 1.0 => Ok(()),
            RuleDecl::Constant(c) if c > 0.0 && c.is_finite() => Ok(()),
            _ => Err(range_error(
                text,
                "rule",
                "acceptance must lie in (0, 1) and constants must be positive",
            )),
        };
        let m_ok = |m: &[usize]| {
            if m.is_empty() || m.iter().any(|&m| m < 2) {
                Err(range_error(
                    text,
                    "m_list",
                    "must be a nonempty list of integers >= 2",
                ))
            } else {
                Ok(())
            }
        };
        match self {
            ExperimentConfig::Ladder(c) => {
                if c.d == 0 {
                    return Err(range_error(text, "d", "must be >= 1"));
                }
                if !chi_ok(c.chi) {
                    return Err(range_error(text, "chi", "must lie in (0, 1)"));
                }
                if c.speed_points < 2 {
                    return Err(range_error(text, "speed_points", "must be >= 2"));
                }
                rule_ok(&c.rule)
            }
            ExperimentConfig::RunSt(c) => {
                if c.d == 0 {
                    return Err(range_error(text, "d", "must be >= 1"));
                }
                if !chi_ok(c.chi) {
                    return Err(range_error(text, "chi", "must lie in (0, 1)"));
                }
                if c.n_steps < crate::tempering::MIN_TRACE_LEN {
                    return Err(range_error(text, "n_steps", "must be >= 1000"));
                }
                if c.replicates == 0 {
                    return Err(range_error(text, "replicates", "must be >= 1"));
                }
                if let Some(grid) = &c.acceptance_grid {
                    if grid.is_empty() || grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                        return Err(range_error(
                            text,
                            "acceptance_grid",
                            "entries must lie in (0, 1)",
                        ));
                    }
                }
                rule_ok(&c.rule)
            }
            ExperimentConfig::RunDiffusion(c) => {
                if !(c.t_end > 0.0 && c.t_end.is_finite()) {
                    return Err(range_error(text, "t_end", "must be positive"));
                }
                if let Some(dt) = c.dt {
                    if !(dt > 0.0 && dt <= c.t_end) {
                        return Err(range_error(text, "dt", "must lie in (0, t_end]"));
                    }
                }
                if c.n_batches < crate::stats::MIN_BATCHES {
                    return Err(range_error(text, "n_batches", "must be >= 10"));
                }
                if let DiffusionModel::Tempering { chi, rule, .. } = &c.model {
                    if !chi_ok(*chi) {
                        return Err(range_error(text, "chi", "must lie in (0, 1)"));
                    }
                    rule_ok(rule)?;
                }
                Ok(())
            }
            ExperimentConfig::CompareSigma(c) => {
                m_ok(&c.m_list)?;
                if c.functionals.is_empty() {
                    return Err(range_error(text, "functionals", "must not be empty"));
                }
                Ok(())
            }
            ExperimentConfig::Bounds(c) => m_ok(&c.m_list),
            ExperimentConfig::Validate(_) => Ok(()),
        }
    }
}

fn build_family(decl: &FamilyDecl) -> Result<TemperedFamily> {
    match decl {
        FamilyDecl::Named(name) => TemperedFamily::named(name),
        FamilyDecl::Table(t) => TemperedFamily::from_table(
            LogTable::from_path(&t.table)?,
            t.support,
            t.grid_n.unwrap_or(DEFAULT_GRID_N),
        ),
    }
}

fn build_target(decl: &TargetDecl) -> Result<TargetDensity> {
    let pi = match (&decl.name, &decl.table) {
        (Some(name), None) => match (name.as_str(), decl.domain) {
            ("gaussian", Domain::Bounded { a, b }) => TargetDensity::standard_normal(a, b)?,
            ("gaussian", Domain::RealLine { .. }) => {
                let l = decl.lipschitz.ok_or_else(|| {
                    Error::Configuration(
                        "a gaussian target on the real line needs an explicit `lipschitz`".into(),
                    )
                })?;
                TargetDensity::new(
                    "gaussian",
                    evaluator(|x| -0.5 * x * x),
                    evaluator(|x| -x),
                    l,
                    decl.domain,
                )?
            }
            ("uniform", Domain::Bounded { a, b }) => TargetDensity::uniform(a, b)?,
            ("uniform", _) => {
                return Err(Error::Configuration(
                    "a uniform target needs a bounded domain".into(),
                ))
            }
            ("laplace", d) => TargetDensity::laplace(1.0, d)?,
            (other, _) => return Err(Error::Configuration(format!("unknown target `{other}`"))),
        },
        (None, Some(path)) => TargetDensity::from_table(LogTable::from_path(path)?, decl.domain)?,
        _ => {
            return Err(Error::Configuration(
                "target needs exactly one of `name` or `table`".into(),
            ))
        }
    };
    match decl.lipschitz {
        Some(l) => TargetDensity::new(
            pi.name.clone(),
            pi.log_pi.clone(),
            pi.dlog_pi.clone(),
            l,
            pi.domain,
        ),
        None => Ok(pi),
    }
}

fn build_rule(
    rule: &RuleDecl,
    family: &TemperedFamily,
    chi: f64,
) -> Result<(EllRule, Option<f64>)> {
    match *rule {
        RuleDecl::Optimal => {
            let r = OptimalRule::compute()?;
            Ok((r.ell_rule(family, chi)?, Some(r.acc_star)))
        }
        RuleDecl::Acceptance(a) => Ok((ladder_opt::ell_for_acceptance(family, a, chi)?, Some(a))),
        RuleDecl::Constant(c) => Ok((EllRule::constant(c), None)),
    }
}

fn make_ladder(
    family: &TemperedFamily,
    rule: &RuleDecl,
    d: usize,
    chi: f64,
) -> Result<(Ladder, EllRule)> {
    let (ell, acc) = build_rule(rule, family, chi)?;
    let mut ladder = build_ladder(&ell, d, chi)?;
    ladder.acc_target = acc;
    Ok((ladder, ell))
}

/// A CSV table with named columns.
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

/// What an experiment produced before anything is written.
pub struct ExperimentOutput {
    pub result: Value,
    pub tables: Vec<Table>,
    /// `Some(false)` when a validation criterion failed.
    pub passed: Option<bool>,
    /// Non-deterministic extras for the manifest.
    pub manifest_extra: Value,
}

fn run_ladder(c: &LadderConfig) -> Result<ExperimentOutput> {
    let family = build_family(&c.family)?;
    let (ladder, ell) = make_ladder(&family, &c.rule, c.d, c.chi)?;
    let mut rungs = Table::new(
        "ladder",
        &["index", "beta", "ell", "first_order_acceptance"],
    );
    let mut predicted = Vec::new();
    for (i, &b) in ladder.betas.iter().enumerate() {
        let l = ell.at(b);
        let a = acceptance_asymptotic(&family, b, l)?;
        predicted.push(a);
        rungs.push(row![i, b, l, a]);
    }
    let mut speed = Table::new(
        "speed",
        &["beta", "I", "ell", "speed", "first_order_acceptance"],
    );
    for k in 0..c.speed_points {
        let b = c.chi + (1.0 - c.chi) * k as f64 / (c.speed_points - 1) as f64;
        let l = ell.at(b);
        let i = family.moments(b)?.i;
        speed.push(row![
            b,
            i,
            l,
            ladder_opt::speed(&family, b, l)?,
            acceptance_asymptotic(&family, b, l)?
        ]);
    }
    Ok(ExperimentOutput {
        result: json!({ "ladder": ladder, "first_order_acceptance": predicted }),
        tables: vec![rungs, speed],
        passed: None,
        manifest_extra: Value::Null,
    })
}

fn run_st(c: &RunStConfig, seed: u64) -> Result<ExperimentOutput> {
    let family = build_family(&c.family)?;
    if let Some(grid) = &c.acceptance_grid {
        let rows = grid
            .par_iter()
            .enumerate()
            .map(|(k, &a)| {
                let (ladder, _) = make_ladder(&family, &RuleDecl::Acceptance(a), c.d, c.chi)?;
                let pos = thermodynamic_positions(&family, &ladder)?;
                let reps = (0..c.replicates)
                    .map(|r| {
                        let trace = run_st_chain_with(
                            &family,
                            &ladder,
                            c.n_steps,
                            derive_seed(seed, (k * 1000 + r) as u64),
                            c.g_sampler,
                        )?;
                        let st = trace_stats(&trace, &ladder, |b| b)?;
                        Ok((st.acc_rate, st.esjd, metric_esjd(&trace, &pos), st.var_f))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = reps.len() as f64;
                let avg = |f: fn(&(f64, f64, f64, f64)) -> f64| reps.iter().map(f).sum::<f64>() / n;
                Ok(json!({
                    "target": a,
                    "rungs": ladder.n_rungs(),
                    "acc_rate": avg(|r| r.0),
                    "esjd": avg(|r| r.1),
                    "metric_esjd": avg(|r| r.2),
                    "var_beta": avg(|r| r.3),
                }))
            })
            .collect::<Result<Vec<Value>>>()?;
        let mut sweep = Table::new(
            "sweep",
            &[
                "target_acceptance",
                "rungs",
                "acc_rate",
                "esjd",
                "metric_esjd",
                "var_beta",
            ],
        );
        for r in &rows {
            sweep.push(row![
                r["target"],
                r["rungs"],
                r["acc_rate"],
                r["esjd"],
                r["metric_esjd"],
                r["var_beta"]
            ]);
        }
        return Ok(ExperimentOutput {
            result: json!({ "d": c.d, "chi": c.chi, "n_steps": c.n_steps, "replicates": c.replicates, "sweep": rows }),
            tables: vec![sweep],
            passed: None,
            manifest_extra: Value::Null,
        });
    }

    let (ladder, _) = make_ladder(&family, &c.rule, c.d, c.chi)?;
    let results = (0..c.replicates)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, r as u64);
            let trace = run_st_chain_with(&family, &ladder, c.n_steps, s, c.g_sampler)?;
            let st = trace_stats(&trace, &ladder, |b| b)?;
            Ok((s, trace, st))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tables = Vec::new();
    if c.trace_thin > 0 {
        let mut t = Table::new("trace", &["step", "index", "beta", "accepted"]);
        for (step, i, b, a) in trace_rows(&results[0].1, &ladder)
            .into_iter()
            .step_by(c.trace_thin)
        {
            t.push(row![step, i, b, a]);
        }
        tables.push(t);
    }
    let mut occ = Table::new("occupancy", &["replicate", "index", "beta", "occupancy"]);
    for (r, (_, _, st)) in results.iter().enumerate() {
        for (i, (o, b)) in st.occupancy.iter().zip(&ladder.betas).enumerate() {
            occ.push(row![r, i, b, o]);
        }
    }
    tables.push(occ);
    let stats: Vec<Value> = results
        .iter()
        .map(|(s, trace, st)| {
            json!({
                "seed": s,
                "proposals": trace.proposals,
                "accepts": trace.accepts,
                "stats": st,
                "rungs": trace.rungs,
            })
        })
        .collect();
    Ok(ExperimentOutput {
        result: json!({ "ladder": ladder, "g_sampler": c.g_sampler, "n_steps": c.n_steps, "replicates": stats }),
        tables,
        passed: None,
        manifest_extra: Value::Null,
    })
}

fn run_diffusion(c: &RunDiffusionConfig, seed: u64) -> Result<ExperimentOutput> {
    let spec = match &c.model {
        DiffusionModel::Langevin { target, sigma } => {
            let pi = build_target(target)?;
            let (lo, hi) = sigma.range();
            langevin_spec(&pi, &sigma.build(lo, hi)?)?
        }
        DiffusionModel::Tempering { family, chi, rule } => {
            let fam = build_family(family)?;
            let (ell, _) = build_rule(rule, &fam, *chi)?;
            tempering_limit_spec(&fam, &ell.eval, *chi)?
        }
    };
    let x0 = c.x0.unwrap_or(0.5 * (spec.a + spec.b));
    let f = c.functional;
    let dt = match c.dt {
        Some(dt) => dt,
        None => choose_dt(
            &spec,
            |x| f.eval(x),
            x0,
            c.t_end,
            c.n_batches,
            derive_seed(seed, 1),
            6,
        )?,
    };
    let path = simulate_reflected(&spec, x0, dt, c.t_end, seed)?;
    let bm = batch_means_variance(&path.values, |x| f.eval(x), c.n_batches, dt)?;
    let estimate = VarianceEstimate {
        estimate: bm.estimate,
        se: bm.se,
        dt,
        n_steps: path.n_steps,
        seed,
    };
    let mut t = Table::new("path", &["t", "x"]);
    for (time, x) in path.rows(c.path_thin) {
        t.push(row![time, x]);
    }
    Ok(ExperimentOutput {
        result: json!({ "functional": f.label(), "domain": [spec.a, spec.b], "x0": x0, "variance": estimate }),
        tables: vec![t],
        passed: None,
        manifest_extra: Value::Null,
    })
}

fn run_compare(c: &CompareSigmaConfig) -> Result<ExperimentOutput> {
    let pi = build_target(&c.target)?;
    let (l1, h1) = c.sigma1.range();
    let (l2, h2) = c.sigma2.range();
    let (k_lo, k_hi) = (l1.min(l2), h1.max(h2));
    let s1 = c.sigma1.build(k_lo, k_hi)?;
    let s2 = c.sigma2.build(k_lo, k_hi)?;
    let mut table = Table::new(
        "compare",
        &["m", "f", "v1", "v2", "scaled1", "scaled2", "dominates"],
    );
    let mut rows = Vec::new();
    let mut ordered = true;
    for &m in &c.m_list {
        let c1 = build_chain(&pi, &s1, m, &pi.domain, c.truncation_q)?;
        let c2 = build_chain(&pi, &s2, m, &pi.domain, c.truncation_q)?;
        let dom = peskun_dominates(&c1, &c2)?;
        for f in &c.functionals {
            let r1 = exact_asymptotic_variance(&c1, |x| f.eval(x))?;
            let r2 = exact_asymptotic_variance(&c2, |x| f.eval(x))?;
            ordered &= !dom || r1.v <= r2.v + 1e-10;
            table.push(row![m, f.label(), r1.v, r2.v, r1.scaled, r2.scaled, dom]);
            rows.push(
                json!({ "m": m, "f": f.label(), "sigma1": r1, "sigma2": r2, "dominates": dom }),
            );
        }
    }
    Ok(ExperimentOutput {
        result: json!({ "k_lo": k_lo, "k_hi": k_hi, "rows": rows, "ordering_holds": ordered }),
        tables: vec![table],
        passed: None,
        manifest_extra: Value::Null,
    })
}

fn run_bounds(c: &BoundsConfig) -> Result<ExperimentOutput> {
    let pi = build_target(&c.target)?;
    let (lo, hi) = c.sigma.range();
    let sigma = c.sigma.build(lo, hi)?;
    let reg = check_regularity(&pi, &c.m_list)?;
    let tail_rate = match pi.domain {
        Domain::RealLine { tail_rate, .. } => Some(tail_rate),
        Domain::Bounded { .. } => None,
    };
    let mut table = Table::new(
        "bounds",
        &[
            "m",
            "states",
            "s_norm",
            "gap_exact",
            "gap_lower_bound",
            "gap_times_m2",
        ],
    );
    let mut rows = Vec::new();
    for &m in &c.m_list {
        let chain = build_chain(&pi, &sigma, m, &pi.domain, c.truncation_q)?;
        let g = gap_exact(&chain)?;
        let b = gap_lower_bound(
            pi.lipschitz,
            tail_rate,
            reg.big_q,
            sigma.k_lo,
            m,
            pi.domain.kind(),
        )?;
        table.push(row![m, chain.len(), chain.s_norm, g, b, g * (m * m) as f64]);
        rows.push(json!({ "m": m, "states": chain.len(), "s_norm": chain.s_norm, "gap_exact": g, "gap_lower_bound": b, "truncated_mass": chain.truncated_mass }));
    }
    Ok(ExperimentOutput {
        result: json!({ "regularity": reg, "lipschitz": pi.lipschitz, "rows": rows }),
        tables: vec![table],
        passed: None,
        manifest_extra: Value::Null,
    })
}

fn run_validate(seed: u64) -> Result<ExperimentOutput> {
    let (report, runtimes) = validation::run_suite(seed);
    let mut table = Table::new("criteria", &["id", "name", "passed", "summary"]);
    for c in &report.criteria {
        table.push(row![c.id, c.name, c.passed, c.summary]);
    }
    Ok(ExperimentOutput {
        passed: Some(report.all_passed()),
        result: serde_json::to_value(&report)?,
        tables: vec![table],
        manifest_extra: json!({
            "runtimes": runtimes,
            "runtime_ok": runtimes.iter().all(|r| r.within_limit()),
        }),
    })
}

/// Execute an experiment without writing files.
pub fn execute(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutput> {
    match cfg {
        ExperimentConfig::Ladder(c) => run_ladder(c),
        ExperimentConfig::RunSt(c) => run_st(c, seed),
        ExperimentConfig::RunDiffusion(c) => run_diffusion(c, seed),
        ExperimentConfig::CompareSigma(c) => run_compare(c),
        ExperimentConfig::Bounds(c) => run_bounds(c),
        ExperimentConfig::Validate(_) => run_validate(seed),
    }
}

/// Overrides supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Where the files went and whether validation passed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub passed: Option<bool>,
}

/// Seed precedence: explicit option, then config, then `TEMPERCORE_SEED`.
pub fn resolve_seed(cli: Option<u64>, cfg: &ExperimentConfig) -> Result<u64> {
    if let Some(s) = cli.or(cfg.seed()) {
        return Ok(s);
    }
    match std::env::var("TEMPERCORE_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Configuration(format!("TEMPERCORE_SEED `{v}` is not an unsigned integer"))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn file_header() -> String {
    format!("# tempercore {VERSION} ({GIT_DESCRIBE}); variance convention: {VARIANCE_CONVENTION}\n")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_table(dir: &Path, table: &Table) -> Result<()> {
    let path = dir.join(format!("{}.csv", table.name));
    let mut buf = file_header().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_file(&path, &buf)
}

/// The deterministic result document for an output.
pub fn result_document(kind: ExperimentKind, seed: u64, output: &ExperimentOutput) -> Value {
    json!({
        "tool": "tempercore",
        "version": VERSION,
        "git_describe": GIT_DESCRIBE,
        "kind": kind.as_str(),
        "seed": seed,
        "variance_convention": VARIANCE_CONVENTION,
        "result": output.result,
    })
}

/// Parse `text`, run the experiment and write manifest.json, result.json and CSV tables.
pub fn run_experiment(text: &str, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = ExperimentConfig::from_json(text)?;
    let echo: Value = serde_json::from_str(text)?;
    let seed = resolve_seed(opts.seed, &cfg)?;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("tempercore-out").join(cfg.kind().as_str()));
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let output = execute(&cfg, seed)?;
    let elapsed = clock.elapsed().as_secs_f64();

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let result = result_document(cfg.kind(), seed, &output);
    let mut bytes = serde_json::to_vec_pretty(&result)?;
    bytes.push(b'\n');
    write_file(&out_dir.join("result.json"), &bytes)?;
    for t in &output.tables {
        write_table(&out_dir, t)?;
    }
    let manifest = json!({
        "tool": "tempercore",
        "version": VERSION,
        "git_describe": GIT_DESCRIBE,
        "kind": cfg.kind().as_str(),
        "seed": seed,
        "variance_convention": VARIANCE_CONVENTION,
        "config": echo,
        "started_unix": started,
        "elapsed_seconds": elapsed,
        "files": std::iter::once("result.json".to_string())
            .chain(output.tables.iter().map(|t| format!("{}.csv", t.name)))
            .collect::<Vec<_>>(),
        "extra": output.manifest_extra,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_file(&out_dir.join("manifest.json"), &bytes)?;
    Ok(RunOutcome {
        out_dir,
        seed,
        passed: output.passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = "{\n  \"kind\": \"ladder\",\n  \"family\": \"gaussian\",\n  \"d\": 100,\n  \"chi\": 0.3,\n  \"bogus\": 1\n}";
        let err = ExperimentConfig::from_json(text).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn range_errors_point_at_the_key() {
        let text = "{\n  \"kind\": \"ladder\",\n  \"family\": \"gaussian\",\n  \"d\": 100,\n  \"chi\": 1.5\n}";
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        assert!(err.to_string().contains("line 5"), "{err}");
        let text = "{ \"kind\": \"sideways\" }";
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn ladder_experiment_result() {
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "ladder", "family": "gaussian", "d": 100, "chi": 0.3}"#,
        )
        .unwrap();
        let out = execute(&cfg, 1).unwrap();
        let betas = out.result["ladder"]["betas"].as_array().unwrap();
        assert_eq!(betas.len(), 3);
        assert_eq!(out.tables[0].rows.len(), 3);
        assert_eq!(out.tables[1].rows.len(), 71);
    }

    #[test]
    fn compare_sigma_rows_are_ordered() {
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "compare-sigma",
                "target": {"name": "gaussian", "domain": {"bounded": {"a": -3, "b": 3}}},
                "sigma1": {"constant": 1.0}, "sigma2": {"cosine": {"c": 0.6, "amp": 0.3, "w": 1.0}},
                "m_list": [8, 16]}"#,
        )
        .unwrap();
        let out = execute(&cfg, 1).unwrap();
        assert_eq!(out.result["ordering_holds"], true);
        for r in &out.tables[0].rows {
            let v1: f64 = r[2].parse().unwrap();
            let v2: f64 = r[3].parse().unwrap();
            assert!(v1 <= v2);
        }
    }

    #[test]
    fn seed_precedence() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "validate", "seed": 5}"#).unwrap();
        assert_eq!(resolve_seed(Some(9), &cfg).unwrap(), 9);
        assert_eq!(resolve_seed(None, &cfg).unwrap(), 5);
    }
}
