//! Environment families: the generation-indexed quadruples `(a_k, b_k, d_k, θ_k)`
//! of the mean matrices `M_k = [[a_k, b_k], [d_k, θ_k]]`, together with their
//! limits, the variation and ratio-difference conditions, and the degeneracy test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series;

/// Generations checked when a parametric family is constructed.
pub const VALIDATION_HORIZON: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub theta: f64,
}

impl Params {
    pub const fn new(a: f64, b: f64, d: f64, theta: f64) -> Self {
        Params { a, b, d, theta }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Params::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.d, self.theta]
    }

    /// `bd - aθ`, the sign that drives most of the case distinctions.
    pub fn det_gap(&self) -> f64 {
        self.b * self.d - self.a * self.theta
    }

    fn check(&self, k: usize) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidParams {
                k,
                reason: reason.to_string(),
            })
        };
        if !self.to_array().iter().all(|x| x.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.b <= 0.0 {
            return bad("b must be positive");
        }
        if self.d <= 0.0 {
            return bad("d must be positive");
        }
        if self.a < 0.0 {
            return bad("a must be nonnegative");
        }
        if self.theta < 0.0 {
            return bad("theta must be nonnegative");
        }
        if self.a + self.theta <= 0.0 {
            return bad("a + theta must be positive");
        }
        Ok(())
    }

    fn add_scaled(self, delta: Params, s: f64) -> Params {
        Params::new(
            self.a + delta.a * s,
            self.b + delta.b * s,
            self.d + delta.d * s,
            self.theta + delta.theta * s,
        )
    }

    fn l1_distance(&self, other: &Params) -> f64 {
        (self.a - other.a).abs()
            + (self.b - other.b).abs()
            + (self.d - other.d).abs()
            + (self.theta - other.theta).abs()
    }

    fn l1_norm(&self) -> f64 {
        self.a.abs() + self.b.abs() + self.d.abs() + self.theta.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// Generations past the table repeat the base quadruple.
    Base,
    /// Generations past the table are undefined.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Constant,
    /// `base + delta * rate^k`
    Geometric { delta: Params, rate: f64 },
    /// `base + delta * k^(-exponent)`
    Power { delta: Params, exponent: f64 },
    Table {
        rows: Vec<Params>,
        continuation: Continuation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Constant,
    Geometric,
    Power,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFamily {
    base: Params,
    rule: Rule,
}

impl EnvFamily {
    /// Builds a family and checks the positivity pattern for every generation
    /// in `1..=VALIDATION_HORIZON` (every table row for table families).
    pub fn new(base: Params, rule: Rule) -> Result<Self> {
        base.check(0)?;
        match &rule {
            Rule::Constant => {}
            Rule::Geometric { delta, rate } => {
                if !(rate.is_finite() && *rate > 0.0 && *rate < 1.0) {
                    return Err(Error::InvalidFamily(format!(
                        "geometric rate must lie in (0,1), got {rate}"
                    )));
                }
                if !delta.to_array().iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidFamily("delta must be finite".into()));
                }
            }
            Rule::Power { delta, exponent } => {
                if !(exponent.is_finite() && *exponent > 1.0) {
                    return Err(Error::InvalidFamily(format!(
                        "power exponent must exceed 1, got {exponent}"
                    )));
                }
                if !delta.to_array().iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidFamily("delta must be finite".into()));
                }
            }
            Rule::Table { rows, .. } => {
                if rows.is_empty() {
                    return Err(Error::InvalidFamily("table has no rows".into()));
                }
            }
        }
        let env = EnvFamily { base, rule };
        env.check_sequence()?;
        Ok(env)
    }

    pub fn constant(base: Params) -> Result<Self> {
        Self::new(base, Rule::Constant)
    }

    pub fn geometric(base: Params, delta: Params, rate: f64) -> Result<Self> {
        Self::new(base, Rule::Geometric { delta, rate })
    }

    pub fn power(base: Params, delta: Params, exponent: f64) -> Result<Self> {
        Self::new(base, Rule::Power { delta, exponent })
    }

    pub fn table(base: Params, rows: Vec<Params>, continuation: Continuation) -> Result<Self> {
        Self::new(base, Rule::Table { rows, continuation })
    }

    pub fn fixture(f: Fixture) -> Self {
        f.build()
    }

    pub fn base(&self) -> Params {
        self.base
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn kind(&self) -> Kind {
        match self.rule {
            Rule::Constant => Kind::Constant,
            Rule::Geometric { .. } => Kind::Geometric,
            Rule::Power { .. } => Kind::Power,
            Rule::Table { .. } => Kind::Table,
        }
    }

    /// Last generation with parameters, if the sequence is finite.
    pub fn defined_up_to(&self) -> Option<usize> {
        match &self.rule {
            Rule::Table {
                rows,
                continuation: Continuation::None,
            } => Some(rows.len()),
            _ => None,
        }
    }

    pub fn params_at(&self, k: usize) -> Result<Params> {
        if k == 0 {
            return Err(Error::ZeroGeneration);
        }
        Ok(match &self.rule {
            Rule::Constant => self.base,
            Rule::Geometric { delta, rate } => self.base.add_scaled(*delta, rate.powi(k as i32)),
            Rule::Power { delta, exponent } => {
                self.base.add_scaled(*delta, (k as f64).powf(-exponent))
            }
            Rule::Table { rows, continuation } => match rows.get(k - 1) {
                Some(p) => *p,
                None => match continuation {
                    Continuation::Base => self.base,
                    Continuation::None => {
                        return Err(Error::SequenceUndefined { k, len: rows.len() })
                    }
                },
            },
        })
    }

    /// `(ã_k, b̃_k, d̃_k)`; uses generation `k + 1` for `ã_k`.
    pub fn transformed_at(&self, k: usize) -> Result<Transformed> {
        let p = self.params_at(k)?;
        let q = self.params_at(k + 1)?;
        Ok(Transformed::from_pair(&p, &q))
    }

    /// Entries of `A_k` in the limit.
    pub fn transformed_limit(&self) -> Transformed {
        Transformed::from_pair(&self.base, &self.base)
    }

    fn check_sequence(&self) -> Result<()> {
        let horizon = match &self.rule {
            Rule::Constant => 1,
            Rule::Table { rows, .. } => rows.len() + 1,
            _ => VALIDATION_HORIZON,
        };
        let mut prev = self.params_at(1)?;
        prev.check(1)?;
        for k in 2..=horizon {
            let cur = match self.params_at(k) {
                Ok(p) => p,
                Err(Error::SequenceUndefined { .. }) => break,
                Err(e) => return Err(e),
            };
            cur.check(k)?;
            // entries (1,2) and (2,1) of M_{k-1} M_k
            if prev.a <= 0.0 && cur.theta <= 0.0 {
                return Err(Error::InvalidParams {
                    k: k - 1,
                    reason: "entry (1,2) of the two-step mean matrix vanishes".into(),
                });
            }
            if cur.a <= 0.0 && prev.theta <= 0.0 {
                return Err(Error::InvalidParams {
                    k: k - 1,
                    reason: "entry (2,1) of the two-step mean matrix vanishes".into(),
                });
            }
            prev = cur;
        }
        Ok(())
    }
}

/// `ã_k = a_k + b_kθ_{k+1}/b_{k+1}`, `b̃_k = b_k`, `d̃_k = d_k − a_kθ_k/b_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transformed {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Transformed {
    pub fn from_pair(p: &Params, next: &Params) -> Self {
        Transformed {
            a: p.a + p.b * next.theta / next.b,
            b: p.b,
            d: p.d - p.a * p.theta / p.b,
        }
    }

    /// Discriminant of `A_k`: `ã² + 4b̃d̃`.
    pub fn disc(&self) -> f64 {
        self.a * self.a + 4.0 * self.b * self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fixture {
    #[serde(rename = "E_star")]
    EStar,
    #[serde(rename = "E_minus")]
    EMinus,
    #[serde(rename = "E_tri_up")]
    ETriUp,
    #[serde(rename = "E_tri_down")]
    ETriDown,
    #[serde(rename = "E_deg")]
    EDeg,
}

impl Fixture {
    pub const ALL: [Fixture; 5] = [
        Fixture::EStar,
        Fixture::EMinus,
        Fixture::ETriUp,
        Fixture::ETriDown,
        Fixture::EDeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::EStar => "E_star",
            Fixture::EMinus => "E_minus",
            Fixture::ETriUp => "E_tri_up",
            Fixture::ETriDown => "E_tri_down",
            Fixture::EDeg => "E_deg",
        }
    }

    pub fn from_name(name: &str) -> Option<Fixture> {
        Fixture::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn build(self) -> EnvFamily {
        let star = Params::new(0.2, 0.3, 0.4, 0.1);
        let minus = Params::new(0.4, 0.2, 0.1, 0.3);
        let bump = Params::new(0.05, 0.0, 0.0, 0.0);
        let env = match self {
            Fixture::EStar => EnvFamily::constant(star),
            Fixture::EMinus => EnvFamily::constant(minus),
            Fixture::ETriUp => EnvFamily::geometric(star, bump, 0.5),
            Fixture::ETriDown => EnvFamily::geometric(minus, bump, 0.5),
            Fixture::EDeg => EnvFamily::constant(Params::new(0.1, 0.3, 2.0, 1.3)),
        };
        env.expect("built-in fixtures are valid")
    }
}

impl std::fmt::Display for Fixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `Σ_{k=2}^{K} |Δa_k| + |Δb_k| + |Δd_k| + |Δθ_k|`.
pub fn variation_partial_sum(env: &EnvFamily, kk: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut prev = env.params_at(1)?;
    for k in 2..=kk {
        let cur = env.params_at(k)?;
        sum += cur.l1_distance(&prev);
        prev = cur;
    }
    Ok(sum)
}

/// Exact remaining variation past generation `K` for parametric kinds
/// (the perturbations are monotone, so the tail telescopes).
pub fn variation_tail(env: &EnvFamily, kk: usize) -> Option<f64> {
    let kk = kk.max(1);
    match env.rule() {
        Rule::Constant => Some(0.0),
        Rule::Geometric { delta, rate } => Some(delta.l1_norm() * rate.powi(kk as i32)),
        Rule::Power { delta, exponent } => Some(delta.l1_norm() * (kk as f64).powf(-exponent)),
        Rule::Table { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub horizon: usize,
    pub partial_sum: f64,
    /// Partial sum plus the analytic tail; absent for table families.
    pub total: Option<f64>,
    pub tail: Option<f64>,
    /// Table families can only be checked over a finite window.
    pub indicative: bool,
}

pub fn variation_report(env: &EnvFamily, kk: usize) -> Result<VariationReport> {
    let kk = match env.defined_up_to() {
        Some(len) => kk.min(len),
        None => kk,
    };
    let partial_sum = variation_partial_sum(env, kk)?;
    let tail = variation_tail(env, kk);
    Ok(VariationReport {
        horizon: kk,
        partial_sum,
        total: tail.map(|t| partial_sum + t),
        tail,
        indicative: env.kind() == Kind::Table,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum B2Class {
    B2a,
    B2b,
    B2c,
    #[serde(rename = "none")]
    NoneHolds,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl B2Class {
    pub fn label(self) -> &'static str {
        match self {
            B2Class::B2a => "B2a",
            B2Class::B2b => "B2b",
            B2Class::B2c => "B2c",
            B2Class::NoneHolds => "none",
            B2Class::Inconclusive => "inconclusive",
        }
    }
}

/// Limit of the difference quotient; JSON has no infinity, hence the tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Tau {
    Finite(f64),
    Infinite { positive: bool },
}

impl Tau {
    pub fn as_f64(self) -> f64 {
        match self {
            Tau::Finite(v) => v,
            Tau::Infinite { positive: true } => f64::INFINITY,
            Tau::Infinite { positive: false } => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct B2Options {
    /// `K`: last generation whose ratios enter the differences.
    pub horizon: usize,
    pub eq_tol: f64,
    /// `k_0`.
    pub burn_in: usize,
    /// Relative plateau width accepted for the τ estimate.
    pub quotient_tol: f64,
    /// Relative plateau width accepted for the existence of ratio limits.
    pub ratio_tol: f64,
    pub window: usize,
    /// Minimum distance between τ and the excluded roots.
    pub separation_tol: f64,
}

impl Default for B2Options {
    fn default() -> Self {
        B2Options {
            horizon: 200,
            eq_tol: 1e-12,
            burn_in: 1,
            quotient_tol: 1e-6,
            ratio_tol: 1e-3,
            window: 5,
            separation_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Report {
    pub class: B2Class,
    pub tau: Option<Tau>,
    pub excluded_roots: [f64; 2],
    pub tau_admissible: Option<bool>,
    /// Estimated limit of successive ã-ratio difference ratios.
    pub a_ratio_limit: Option<f64>,
    /// Estimated limit of successive d̃-ratio difference ratios.
    pub d_ratio_limit: Option<f64>,
    /// Last `k` whose differences exceed `eq_tol`.
    pub resolvable_until: Option<usize>,
    pub diagnostics: Vec<String>,
}

/// Roots `(−(a+θ) ± √((a+θ)² + 4(bd−aθ)))/(2b)` that τ must avoid.
pub fn excluded_roots(p: &Params) -> [f64; 2] {
    let s = p.a + p.theta;
    let r = (s * s + 4.0 * p.det_gap()).max(0.0).sqrt();
    [(-s + r) / (2.0 * p.b), (-s - r) / (2.0 * p.b)]
}

pub fn classify_b2(env: &EnvFamily, opts: &B2Options) -> Result<B2Report> {
    let k0 = opts.burn_in.max(1);
    let kmax = match env.defined_up_to() {
        Some(len) => opts.horizon.min(len.saturating_sub(1)),
        None => opts.horizon,
    };
    let roots = excluded_roots(&env.base());
    let mut report = B2Report {
        class: B2Class::NoneHolds,
        tau: None,
        excluded_roots: roots,
        tau_admissible: None,
        a_ratio_limit: None,
        d_ratio_limit: None,
        resolvable_until: None,
        diagnostics: Vec::new(),
    };
    if kmax < k0 + 2 {
        report.class = B2Class::Inconclusive;
        report
            .diagnostics
            .push(format!("horizon {kmax} too short after burn-in {k0}"));
        return Ok(report);
    }
    let mut ra = Vec::with_capacity(kmax - k0 + 1);
    let mut rd = Vec::with_capacity(kmax - k0 + 1);
    for k in k0..=kmax {
        let t = env.transformed_at(k)?;
        ra.push(t.a / t.b);
        rd.push(t.d / t.b);
    }
    let da: Vec<f64> = ra.windows(2).map(|w| w[1] - w[0]).collect();
    let dd: Vec<f64> = rd.windows(2).map(|w| w[1] - w[0]).collect();
    let tol = opts.eq_tol;
    let big = |x: &f64| x.abs() > tol;
    // leading run of resolvable differences
    let prefix = |v: &[f64]| v.iter().position(|x| !big(x)).unwrap_or(v.len());

    let a_const = da.iter().all(|x| !big(x));
    let d_const = dd.iter().all(|x| !big(x));
    if a_const && d_const {
        return Ok(report);
    }

    let ratio_limit = |v: &[f64]| -> Option<f64> {
        let r: Vec<f64> = v.windows(2).map(|w| w[1] / w[0]).collect();
        let (est, spread) = series::plateau(&r, opts.window)?;
        (spread <= opts.ratio_tol * est.abs().max(1.0)).then_some(est)
    };
    let need = opts.window + 1;
    let short = |report: &mut B2Report, len: usize| {
        report.class = B2Class::Inconclusive;
        report.diagnostics.push(format!(
            "only {len} resolvable differences after k={k0}; need {need}"
        ));
    };

    if a_const {
        let run = prefix(&dd);
        report.resolvable_until = Some(k0 + run);
        if run < need {
            short(&mut report, run);
            return Ok(report);
        }
        report.class = B2Class::B2a;
        report.tau = Some(Tau::Infinite {
            positive: dd[run - 1] > 0.0,
        });
        report.d_ratio_limit = ratio_limit(&dd[..run]);
        if report.d_ratio_limit.is_none() {
            report.class = B2Class::Inconclusive;
            report
                .diagnostics
                .push("d-ratio difference quotients do not stabilize".into());
        }
        return Ok(report);
    }
    if d_const {
        let run = prefix(&da);
        report.resolvable_until = Some(k0 + run);
        if run < need {
            short(&mut report, run);
            return Ok(report);
        }
        report.class = B2Class::B2b;
        report.a_ratio_limit = ratio_limit(&da[..run]);
        if report.a_ratio_limit.is_none() {
            report.class = B2Class::Inconclusive;
            report
                .diagnostics
                .push("a-ratio difference quotients do not stabilize".into());
        }
        return Ok(report);
    }

    // both vary: quotients over the jointly resolvable prefix
    let run = prefix(&da).min(prefix(&dd));
    report.resolvable_until = Some(k0 + run);
    if run < need {
        short(&mut report, run);
        return Ok(report);
    }
    let q: Vec<f64> = (0..run).map(|i| dd[i] / da[i]).collect();
    if let Some((est, spread)) = series::plateau(&q, opts.window) {
        if spread <= opts.quotient_tol * est.abs().max(1.0) {
            report.class = B2Class::B2c;
            report.tau = Some(Tau::Finite(est));
            report.tau_admissible = Some(
                roots
                    .iter()
                    .all(|r| (est - r).abs() > opts.separation_tol * r.abs().max(1.0)),
            );
            report.a_ratio_limit = ratio_limit(&da[..run]);
            if report.a_ratio_limit.is_none() {
                report.class = B2Class::Inconclusive;
                report
                    .diagnostics
                    .push("a-ratio difference quotients do not stabilize".into());
            }
            return Ok(report);
        }
    }
    let tail = &q[run - opts.window..];
    let diverging = tail.windows(2).all(|w| w[1].abs() > w[0].abs() * (1.0 + 1e-6))
        && tail.iter().all(|x| x.signum() == tail[0].signum());
    if diverging {
        report.class = B2Class::B2c;
        report.tau = Some(Tau::Infinite {
            positive: tail[0] > 0.0,
        });
        report.tau_admissible = Some(true);
        report.d_ratio_limit = ratio_limit(&dd[..prefix(&dd)]);
        if report.d_ratio_limit.is_none() {
            report.class = B2Class::Inconclusive;
            report
                .diagnostics
                .push("d-ratio difference quotients do not stabilize".into());
        }
        return Ok(report);
    }
    report.class = B2Class::Inconclusive;
    report
        .diagnostics
        .push("difference quotients neither stabilize nor diverge".into());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLimits {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub theta: f64,
    pub rho: f64,
    pub rho1: f64,
    pub tau: Option<Tau>,
    pub b2_class: B2Class,
    pub degenerate: bool,
}

/// Roots of `x² − (a+θ)x − (bd−aθ)`, larger first.
pub fn limit_eigenvalues(p: &Params) -> Result<(f64, f64)> {
    let s = p.a + p.theta;
    let disc = s * s + 4.0 * p.det_gap();
    if disc < 0.0 {
        return Err(Error::ComplexLimit(disc));
    }
    let rho = 0.5 * (s + disc.sqrt());
    // product of the roots is −(bd−aθ); avoids cancellation in s − √disc
    let rho1 = if rho != 0.0 { -p.det_gap() / rho } else { 0.0 };
    Ok((rho, rho1))
}

pub fn limits(env: &EnvFamily) -> Result<EnvLimits> {
    let p = env.base();
    let (rho, rho1) = limit_eigenvalues(&p)?;
    let b2 = classify_b2(env, &B2Options::default())?;
    let degenerate = match degeneracy_flag(env, 1e-10) {
        Ok(r) => r.degenerate,
        // θ = b: the closed-form G equals 1/(1−ϱ₁) ≠ 0
        Err(Error::DegeneracyUndefined) => false,
        Err(e) => return Err(e),
    };
    Ok(EnvLimits {
        a: p.a,
        b: p.b,
        d: p.d,
        theta: p.theta,
        rho,
        rho1,
        tau: b2.tau,
        b2_class: b2.class,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub degenerate: bool,
    /// `½(a+b+1 − √((a+b+1)² + 4(bd−aθ)/(θ−b)))`, when real.
    pub candidate: Option<f64>,
    pub rho1: f64,
    /// When `bd > aθ`: whether `θ = b + 1` within tolerance.
    pub shortcut: Option<bool>,
    pub diagnostic: Option<String>,
}

pub fn degeneracy_flag(env: &EnvFamily, tol: f64) -> Result<DegeneracyReport> {
    let p = env.base();
    let (_, rho1) = limit_eigenvalues(&p)?;
    let gap = p.theta - p.b;
    if gap.abs() <= f64::EPSILON * p.theta.abs().max(p.b.abs()) {
        return Err(Error::DegeneracyUndefined);
    }
    let shortcut = (p.det_gap() > 0.0).then(|| (p.theta - p.b - 1.0).abs() <= tol);
    let s = p.a + p.b + 1.0;
    let rad = s * s + 4.0 * p.det_gap() / gap;
    if rad < 0.0 {
        return Ok(DegeneracyReport {
            degenerate: false,
            candidate: None,
            rho1,
            shortcut,
            diagnostic: Some(format!("negative radicand {rad}")),
        });
    }
    let candidate = 0.5 * (s - rad.sqrt());
    Ok(DegeneracyReport {
        degenerate: (rho1 - candidate).abs() <= tol,
        candidate: Some(candidate),
        rho1,
        shortcut,
        diagnostic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn params_follow_the_rule() {
        let up = Fixture::ETriUp.build();
        assert_relative_eq!(up.params_at(1).unwrap().a, 0.225, epsilon = 1e-16);
        assert_relative_eq!(up.params_at(2).unwrap().a, 0.2125, epsilon = 1e-16);
        assert_eq!(up.params_at(1).unwrap().b, 0.3);
        let star = Fixture::EStar.build();
        assert_eq!(star.params_at(7).unwrap(), Params::new(0.2, 0.3, 0.4, 0.1));
        assert_eq!(star.params_at(0), Err(Error::ZeroGeneration));
    }

    #[test]
    fn table_continuation() {
        let base = Params::new(0.2, 0.3, 0.4, 0.1);
        let rows = vec![Params::new(0.5, 0.3, 0.4, 0.1), Params::new(0.3, 0.3, 0.4, 0.2)];
        let t = EnvFamily::table(base, rows.clone(), Continuation::Base).unwrap();
        assert_eq!(t.params_at(2).unwrap(), rows[1]);
        assert_eq!(t.params_at(3).unwrap(), base);
        let t = EnvFamily::table(base, rows, Continuation::None).unwrap();
        assert_eq!(
            t.params_at(3),
            Err(Error::SequenceUndefined { k: 3, len: 2 })
        );
    }

    #[test]
    fn construction_rejects_bad_params() {
        let err = EnvFamily::constant(Params::new(0.2, 0.0, 0.4, 0.1)).unwrap_err();
        assert!(err.to_string().contains("b must be positive"), "{err}");
        // perturbation drives d negative at k = 1 only
        let err = EnvFamily::geometric(
            Params::new(0.2, 0.3, 0.4, 0.1),
            Params::new(0.0, 0.0, -1.0, 0.0),
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParams { k: 1, .. }), "{err:?}");
        // a_k = θ_{k+1} = 0 kills the (1,2) entry of M_k M_{k+1}
        let rows = vec![Params::new(0.0, 0.3, 0.4, 0.2), Params::new(0.3, 0.3, 0.4, 0.0)];
        assert!(EnvFamily::table(Params::new(0.2, 0.3, 0.4, 0.1), rows, Continuation::Base).is_err());
        assert!(EnvFamily::geometric(Params::new(0.2, 0.3, 0.4, 0.1), Params::new(0.0, 0.0, 0.0, 0.0), 1.0).is_err());
        assert!(EnvFamily::power(Params::new(0.2, 0.3, 0.4, 0.1), Params::new(0.0, 0.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn variation_sums() {
        let star = Fixture::EStar.build();
        assert_eq!(variation_partial_sum(&star, 100).unwrap(), 0.0);
        let up = Fixture::ETriUp.build();
        assert_relative_eq!(variation_partial_sum(&up, 3).unwrap(), 0.01875, max_relative = 1e-14);
        let r = variation_report(&up, 60).unwrap();
        assert_relative_eq!(r.total.unwrap(), 0.025, max_relative = 1e-12);
        assert!(!r.indicative);
    }

    #[test]
    fn limit_roots() {
        let (r, r1) = limit_eigenvalues(&Fixture::EStar.build().base()).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r1, -0.2, epsilon = 1e-15);
        let (r, r1) = limit_eigenvalues(&Fixture::EMinus.build().base()).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r1, 0.2, epsilon = 1e-15);
        let (r, r1) = limit_eigenvalues(&Params::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!((r, r1), (2.0, 0.0));
    }

    #[test]
    fn b2_on_fixtures() {
        let o = B2Options::default();
        for f in [Fixture::EStar, Fixture::EMinus, Fixture::EDeg] {
            let r = classify_b2(&f.build(), &o).unwrap();
            assert_eq!(r.class, B2Class::NoneHolds, "{f}");
            assert_eq!(r.tau, None);
        }
        let r = classify_b2(&Fixture::ETriUp.build(), &o).unwrap();
        assert_eq!(r.class, B2Class::B2c);
        assert_relative_eq!(r.tau.unwrap().as_f64(), -1.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(r.excluded_roots[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(r.excluded_roots[1], -5.0 / 3.0, epsilon = 1e-14);
        assert_eq!(r.tau_admissible, Some(true));
        assert_relative_eq!(r.a_ratio_limit.unwrap(), 0.5, epsilon = 1e-6);
        let r = classify_b2(&Fixture::ETriDown.build(), &o).unwrap();
        assert_eq!(r.class, B2Class::B2c);
        assert_relative_eq!(r.tau.unwrap().as_f64(), -1.5, epsilon = 1e-8);
        assert_relative_eq!(r.excluded_roots[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(r.excluded_roots[1], -2.5, epsilon = 1e-14);
    }

    #[test]
    fn b2a_and_b2b() {
        // only d varies: ã-ratios constant, d̃-ratios not
        let base = Params::new(0.2, 0.3, 0.4, 0.1);
        let env = EnvFamily::geometric(base, Params::new(0.0, 0.0, 0.1, 0.0), 0.5).unwrap();
        let r = classify_b2(&env, &B2Options::default()).unwrap();
        assert_eq!(r.class, B2Class::B2a);
        assert!(matches!(r.tau, Some(Tau::Infinite { .. })));
        assert_relative_eq!(r.d_ratio_limit.unwrap(), 0.5, epsilon = 1e-6);
        // a and θ move so that d̃ = d − aθ/b stays fixed while ã varies:
        // table with a_k θ_k constant
        let rows: Vec<Params> = (1..=80)
            .map(|k| {
                let a = 0.2 * (1.0 + 0.5f64.powi(k));
                Params::new(a, 0.3, 0.4, 0.02 / a)
            })
            .collect();
        let env = EnvFamily::table(Params::new(0.2, 0.3, 0.4, 0.1), rows, Continuation::None).unwrap();
        let r = classify_b2(&env, &B2Options { horizon: 79, ..Default::default() }).unwrap();
        assert_eq!(r.class, B2Class::B2b, "{r:?}");
    }

    #[test]
    fn degeneracy() {
        let r = degeneracy_flag(&Fixture::EStar.build(), 1e-10).unwrap();
        assert!(!r.degenerate);
        assert_relative_eq!(r.candidate.unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(r.shortcut, Some(false));
        let r = degeneracy_flag(&Fixture::EDeg.build(), 1e-10).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.shortcut, Some(true));
        let r = degeneracy_flag(&Fixture::ETriDown.build(), 1e-10).unwrap();
        assert!(!r.degenerate);
        assert!(r.diagnostic.unwrap().contains("negative radicand"));
        let eq = EnvFamily::constant(Params::new(0.2, 0.3, 0.4, 0.3)).unwrap();
        assert_eq!(degeneracy_flag(&eq, 1e-10), Err(Error::DegeneracyUndefined));
        assert!(!limits(&eq).unwrap().degenerate);
    }

    #[test]
    fn limits_report() {
        let l = limits(&Fixture::EDeg.build()).unwrap();
        assert!(l.degenerate);
        assert!(l.rho > 1.0);
        let l = limits(&Fixture::ETriUp.build()).unwrap();
        assert_eq!(l.b2_class, B2Class::B2c);
    }
}
