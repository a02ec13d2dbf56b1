//! Config-driven runner: parses a JSON run description, dispatches to the
//! core computations and writes CSV/JSON artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lfbp_core::asymcheck::{self, SuiteOptions, SuiteReport};
use lfbp_core::cfrac::{self, CfCoeffs, FluctuationSeq, TailOptions};
use lfbp_core::env::{self, B2Options, B2Report, Continuation, EnvFamily, EnvLimits, Fixture, Params, Tau, VariationReport};
use lfbp_core::extinct::{self, ConstantsReport, CurveRow};
use lfbp_core::mcsim::{self, SimRow};
use serde::{Deserialize, Serialize};

pub mod config;

pub use config::{parse_config, parse_config_str, Command, Format, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(#[from] lfbp_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) | CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// `τ` as a JSON number when finite, `"inf"`/`"-inf"` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauValue {
    Finite(f64),
    Infinite(InfSign),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfSign {
    #[serde(rename = "inf")]
    Positive,
    #[serde(rename = "-inf")]
    Negative,
}

impl From<Tau> for TauValue {
    fn from(t: Tau) -> Self {
        match t {
            Tau::Finite(v) => TauValue::Finite(v),
            Tau::Infinite { positive: true } => TauValue::Infinite(InfSign::Positive),
            Tau::Infinite { positive: false } => TauValue::Infinite(InfSign::Negative),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub env: String,
    pub b1_partial_sum: f64,
    pub b1_total: Option<f64>,
    pub b1_indicative: bool,
    pub b2_class: String,
    pub tau: Option<TauValue>,
    pub limits: EnvLimits,
    pub variation: VariationReport,
    pub b2: B2Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSummary {
    pub nmax: usize,
    pub g1_last: f64,
    pub g2_last: f64,
    pub max_g2_dev: f64,
    pub g_limit: Option<f64>,
    pub h_limit: Option<f64>,
    pub f_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub env: String,
    pub constants: ConstantsReport,
    /// Absent when the limits are excluded (`bd = aθ` or `|ϱ₁| ≥ 1`).
    pub g: Option<GSummary>,
    pub g_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfracReport {
    pub env: String,
    pub kmax: usize,
    pub product_ratio_asymptotic: Option<f64>,
    pub entry_ratio_asymptotic: Option<f64>,
    pub fluctuations: Option<FluctuationSeq>,
    pub fluctuations_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub env: String,
    pub violations: usize,
    pub suite: SuiteReport,
}

/// One value in an emitted table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v:.16e}"),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Int(v) => s.serialize_u64(*v),
            Cell::Float(v) if v.is_finite() => s.serialize_f64(*v),
            Cell::Float(_) => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let obj = self
                    .header
                    .iter()
                    .zip(r)
                    .map(|(h, c)| (h.clone(), serde_json::to_value(c).unwrap_or_default()))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

struct Writer<'a> {
    out: &'a Path,
    format: Format,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn file(&mut self, rel: &str, contents: &str) -> CliResult<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
        s.push('\n');
        self.file(rel, &s)
    }

    /// `stem` without extension; the format decides which files appear.
    fn table(&mut self, stem: &str, t: &Table) -> CliResult<()> {
        if matches!(self.format, Format::Csv | Format::Both) {
            self.file(&format!("{stem}.csv"), &t.to_csv())?;
        }
        if matches!(self.format, Format::Json | Format::Both) {
            self.json(&format!("{stem}.json"), &t.to_json())?;
        }
        Ok(())
    }
}

pub fn conditions(cfg: &RunConfig) -> CliResult<ConditionsReport> {
    let env = &cfg.env;
    let variation = env::variation_report(env, cfg.nmax)?;
    let opts = B2Options {
        eq_tol: cfg.tolerances.b2_eq,
        ..B2Options::default()
    };
    let b2 = env::classify_b2(env, &opts)?;
    let limits = env::limits(env)?;
    Ok(ConditionsReport {
        env: cfg.env_label.clone(),
        b1_partial_sum: variation.partial_sum,
        b1_total: variation.total,
        b1_indicative: variation.indicative,
        b2_class: b2.class.label().to_string(),
        tau: b2.tau.map(TauValue::from),
        limits,
        variation,
        b2,
    })
}

pub fn curve_table(rows: &[CurveRow]) -> Table {
    let mut t = Table::new(&CurveRow::HEADER);
    for r in rows {
        let mut row = vec![Cell::Int(r.n as u64)];
        row.extend(r.values().into_iter().map(Cell::Float));
        t.rows.push(row);
    }
    t
}

/// Survival curve on the configured horizons; fails when the parameters do
/// not define a probability law (negative pmf).
pub fn curve(cfg: &RunConfig) -> CliResult<Vec<CurveRow>> {
    Ok(extinct::extinction_curve(&cfg.env, &cfg.horizons)?.rows)
}

/// Constants and `G` limits, evaluated even where the curve is inconsistent.
pub fn exact(cfg: &RunConfig) -> CliResult<ExactReport> {
    let env = &cfg.env;
    let constants = extinct::estimate_constants(env, &extinct::doubling_grid(cfg.nmax))?;
    let (g, g_skipped) = match extinct::g_sequences(env, cfg.nmax.max(2)) {
        Ok(s) => (
            Some(GSummary {
                nmax: cfg.nmax.max(2),
                g1_last: *s.g1.last().unwrap(),
                g2_last: *s.g2.last().unwrap(),
                max_g2_dev: s.max_g2_dev,
                g_limit: s.g_limit,
                h_limit: s.h_limit,
                f_limit: s.f_limit,
            }),
            None,
        ),
        Err(e @ (lfbp_core::Error::ExcludedParameters(_) | lfbp_core::Error::Precondition(_))) => {
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(ExactReport {
        env: cfg.env_label.clone(),
        constants,
        g,
        g_skipped,
    })
}

pub fn cfrac_tables(cfg: &RunConfig) -> CliResult<(Table, Option<Table>, CfracReport)> {
    let env = &cfg.env;
    let opts = TailOptions {
        tol: cfg.tolerances.tail,
        ..TailOptions::default()
    };
    let pr = CfCoeffs::product_ratio(env);
    let er = CfCoeffs::entry_ratio(env);
    let tp = cfrac::tails(&pr, cfg.kmax, &opts)?;
    let te = cfrac::tails(&er, cfg.kmax, &opts)?;
    let mut t = Table::new(&[
        "k",
        "xi_product_ratio",
        "n_used_product_ratio",
        "xi_entry_ratio",
        "n_used_entry_ratio",
        "critical_tail",
        "approximant_kk",
    ]);
    for (a, b) in tp.iter().zip(&te) {
        t.rows.push(vec![
            Cell::Int(a.k as u64),
            Cell::Float(a.value),
            Cell::Int(a.n_used as u64),
            Cell::Float(b.value),
            Cell::Int(b.n_used as u64),
            // h_k starts at k = 2
            Cell::Float(if a.k < 2 { f64::NAN } else { cfrac::critical_tail(&er, a.k)? }),
            Cell::Float(cfrac::approximant(&pr, a.k, a.k)?),
        ]);
    }
    let (fluctuations, skipped) = match cfrac::fluctuations(env, cfg.kmax.max(10)) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let ft = fluctuations.as_ref().map(|f| {
        let mut t = Table::new(&["k", "eps_f", "eps_xi", "delta_f", "delta_xi"]);
        let at = |v: &[(usize, f64)], k: usize| {
            Cell::Float(v.iter().find(|p| p.0 == k).map_or(f64::NAN, |p| p.1))
        };
        for &(k, e) in &f.eps_f {
            t.rows.push(vec![
                Cell::Int(k as u64),
                Cell::Float(e),
                at(&f.eps_xi, k),
                at(&f.delta_f, k),
                at(&f.delta_xi, k),
            ]);
        }
        t
    });
    let report = CfracReport {
        env: cfg.env_label.clone(),
        kmax: cfg.kmax,
        product_ratio_asymptotic: tp.first().and_then(|t| t.asymptotic),
        entry_ratio_asymptotic: te.first().and_then(|t| t.asymptotic),
        fluctuations,
        fluctuations_skipped: skipped,
    };
    Ok((t, ft, report))
}

pub fn verify(cfg: &RunConfig) -> VerifyReport {
    let opts = SuiteOptions {
        nmax: cfg.nmax,
        k: 1,
        kmax: cfg.kmax,
        rfm_span: cfg.rfm_span,
    };
    let suite = asymcheck::run_suite(&cfg.env, &opts);
    VerifyReport {
        env: cfg.env_label.clone(),
        violations: suite.violations(),
        suite,
    }
}

pub fn simulation_table(rows: &[SimRow]) -> Table {
    let mut t = Table::new(&SimRow::HEADER);
    for r in rows {
        t.rows.push(vec![
            Cell::Int(r.horizon as u64),
            Cell::Int(r.start_type as u64),
            Cell::Int(r.survivors),
            Cell::Int(r.replicates),
            Cell::Float(r.p_hat),
            Cell::Float(r.ci_low),
            Cell::Float(r.ci_high),
            Cell::Int(r.seed),
        ]);
    }
    t
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Vec<SimRow>> {
    let mut rows = Vec::new();
    for &ty in &cfg.start_types {
        rows.extend(mcsim::run(&cfg.env, ty, &cfg.horizons, cfg.replicates, cfg.seed)?.rows());
    }
    Ok(rows)
}

/// Runs the configured command and returns the files written.
pub fn dispatch(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let mut w = Writer {
        out: &cfg.out,
        format: cfg.format,
        written: Vec::new(),
    };
    let c = cfg.command;
    let mut failures = Vec::new();
    if matches!(c, Command::Conditions | Command::All) {
        w.json("conditions.json", &conditions(cfg)?)?;
    }
    if matches!(c, Command::Exact | Command::All) {
        w.json("constants.json", &exact(cfg)?)?;
        w.table("curve", &curve_table(&curve(cfg)?))?;
    }
    if matches!(c, Command::Cfrac | Command::All) {
        let (tails, fl, report) = cfrac_tables(cfg)?;
        w.table("diagnostics/cf_tails", &tails)?;
        if let Some(fl) = fl {
            w.table("diagnostics/fluctuations", &fl)?;
        }
        w.json("diagnostics/cfrac.json", &report)?;
    }
    if matches!(c, Command::Verify | Command::All) {
        let report = verify(cfg);
        for d in report.suite.entries.iter().filter_map(|e| e.diagnostic()) {
            let mut t = Table::new(&["n", "value"]);
            t.rows = d
                .sequence
                .iter()
                .map(|&(n, v)| vec![Cell::Int(n as u64), Cell::Float(v)])
                .collect();
            w.table(&format!("diagnostics/{}", d.name), &t)?;
        }
        w.json("diagnostics/summary.json", &report)?;
        if report.violations > 0 {
            failures.push(format!("{} flagged invariant violations", report.violations));
        }
    }
    if matches!(c, Command::Simulate | Command::All) {
        w.table("simulation", &simulation_table(&simulate(cfg)?))?;
    }
    if !failures.is_empty() {
        return Err(CliError::Verification(failures.join("; ")));
    }
    Ok(w.written)
}

pub(crate) fn build_env(ec: &config::EnvConfig) -> std::result::Result<(EnvFamily, String), String> {
    let quad = |key: &str, v: Option<[f64; 4]>| v.map(Params::from_array).ok_or(format!("env.{key}: required"));
    if let Some(name) = &ec.fixture {
        let extra = [
            ("kind", ec.kind.is_some()),
            ("base", ec.base.is_some()),
            ("delta", ec.delta.is_some()),
            ("rate", ec.rate.is_some()),
            ("exponent", ec.exponent.is_some()),
            ("rows", ec.rows.is_some()),
            ("continuation", ec.continuation.is_some()),
        ];
        if let Some((key, _)) = extra.iter().find(|e| e.1) {
            return Err(format!("env.{key}: cannot be combined with env.fixture"));
        }
        let f = Fixture::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = Fixture::ALL.iter().map(|f| f.name()).collect();
            format!("env.fixture: unknown fixture {name:?}, expected one of {names:?}")
        })?;
        return Ok((f.build(), f.name().to_string()));
    }
    let kind = ec.kind.as_deref().ok_or("env: one of env.fixture or env.kind is required")?;
    let base = quad("base", ec.base)?;
    let allowed: &[&str] = match kind {
        "constant" => &[],
        "geometric" => &["delta", "rate"],
        "power" => &["delta", "exponent"],
        "table" => &["rows", "continuation"],
        other => return Err(format!("env.kind: unknown kind {other:?}")),
    };
    for (key, present) in [
        ("delta", ec.delta.is_some()),
        ("rate", ec.rate.is_some()),
        ("exponent", ec.exponent.is_some()),
        ("rows", ec.rows.is_some()),
        ("continuation", ec.continuation.is_some()),
    ] {
        if present && !allowed.contains(&key) {
            return Err(format!("env.{key}: not used by kind {kind:?}"));
        }
    }
    let built = match kind {
        "constant" => EnvFamily::constant(base),
        "geometric" => EnvFamily::geometric(base, quad("delta", ec.delta)?, ec.rate.ok_or("env.rate: required")?),
        "power" => EnvFamily::power(base, quad("delta", ec.delta)?, ec.exponent.ok_or("env.exponent: required")?),
        _ => {
            let rows = ec.rows.as_ref().ok_or("env.rows: required")?;
            EnvFamily::table(
                base,
                rows.iter().copied().map(Params::from_array).collect(),
                ec.continuation.unwrap_or(Continuation::Base),
            )
        }
    };
    let env = built.map_err(|e| match e {
        lfbp_core::Error::InvalidParams { k: 0, reason } => format!("env.base: {reason}"),
        e => format!("env: {e}"),
    })?;
    Ok((env, kind.to_string()))
}
