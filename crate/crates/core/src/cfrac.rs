//! Continued fractions `β_k/(α_k + β_{k+1}/(α_{k+1} + ⋯))` with signed
//! coefficients: approximants, tails, critical tails, Euler–Minding
//! recurrences and their links to the products of the `A_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvFamily;
use crate::error::{Error, Result};
use crate::matprod::{self, ScaledMat};
use crate::series::{self, binary_exponent, ldexp};

/// Denominators below this magnitude count as poles.
pub const SINGULAR: f64 = 1e-280;

/// Where the coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// `β_k = 1/(b̃_k d̃_{k+1})`, `α_k = ã_k β_k`; approximants are
    /// `y_{k+1,n}/y_{k,n}` with `y_{k,n} = e₁A_k⋯A_ne₁ᵗ`.
    ProductRatio,
    /// `α_k = ã_k/b̃_k`, `β_k = d̃_k/b̃_k`; approximants are
    /// `A_{k,m}(21)/A_{k,m}(11)`.
    EntryRatio,
    /// `α_j = ã_j/d̃_j`, `β_j = b̃_j/d̃_j`, read in descending order.
    Descending,
    Custom,
}

#[derive(Debug, Clone)]
pub enum CfCoeffs<'a> {
    Env {
        env: &'a EnvFamily,
        provenance: Provenance,
    },
    Constant {
        alpha: f64,
        beta: f64,
    },
    /// `alpha[k-1]`, `beta[k-1]` for `k = 1..=len`.
    Table {
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
}

impl<'a> CfCoeffs<'a> {
    pub fn from_env(env: &'a EnvFamily, provenance: Provenance) -> Self {
        assert!(provenance != Provenance::Custom, "custom coefficients need values");
        CfCoeffs::Env { env, provenance }
    }

    pub fn product_ratio(env: &'a EnvFamily) -> Self {
        Self::from_env(env, Provenance::ProductRatio)
    }

    pub fn entry_ratio(env: &'a EnvFamily) -> Self {
        Self::from_env(env, Provenance::EntryRatio)
    }

    pub fn descending(env: &'a EnvFamily) -> Self {
        Self::from_env(env, Provenance::Descending)
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            CfCoeffs::Env { provenance, .. } => *provenance,
            _ => Provenance::Custom,
        }
    }

    /// `(α_k, β_k)`.
    pub fn at(&self, k: usize) -> Result<(f64, f64)> {
        if k == 0 {
            return Err(Error::ZeroGeneration);
        }
        match self {
            CfCoeffs::Constant { alpha, beta } => Ok((*alpha, *beta)),
            CfCoeffs::Table { alpha, beta } => match (alpha.get(k - 1), beta.get(k - 1)) {
                (Some(a), Some(b)) => Ok((*a, *b)),
                _ => Err(Error::SequenceUndefined {
                    k,
                    len: alpha.len().min(beta.len()),
                }),
            },
            CfCoeffs::Env { env, provenance } => {
                let t = env.transformed_at(k)?;
                Ok(match provenance {
                    Provenance::ProductRatio => {
                        let beta = 1.0 / (t.b * env.transformed_at(k + 1)?.d);
                        (t.a * beta, beta)
                    }
                    Provenance::EntryRatio => (t.a / t.b, t.d / t.b),
                    Provenance::Descending => (t.a / t.d, t.b / t.d),
                    Provenance::Custom => unreachable!(),
                })
            }
        }
    }

    /// `(α, β)` as `k → ∞`, where the family defines one.
    pub fn limit(&self) -> Option<(f64, f64)> {
        match self {
            CfCoeffs::Constant { alpha, beta } => Some((*alpha, *beta)),
            CfCoeffs::Table { .. } => None,
            CfCoeffs::Env { env, provenance } => {
                let t = env.transformed_limit();
                Some(match provenance {
                    Provenance::ProductRatio => {
                        let beta = 1.0 / (t.b * t.d);
                        (t.a * beta, beta)
                    }
                    Provenance::EntryRatio => (t.a / t.b, t.d / t.b),
                    Provenance::Descending => (t.a / t.d, t.b / t.d),
                    Provenance::Custom => unreachable!(),
                })
            }
        }
    }
}

fn checked_div(num: f64, den: f64, j: usize) -> Result<f64> {
    if den.abs() < SINGULAR || !den.is_finite() {
        return Err(Error::Singular(j));
    }
    Ok(num / den)
}

/// `ξ_{k,n}` by backward evaluation.
pub fn approximant(c: &CfCoeffs, k: usize, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidRange { k, n });
    }
    let (an, bn) = c.at(n)?;
    let mut t = checked_div(bn, an, n)?;
    for j in (k..n).rev() {
        let (a, b) = c.at(j)?;
        t = checked_div(b, a + t, j)?;
    }
    Ok(t)
}

/// `ξ_{k,n}` for every `k = 1..=n` from a single backward pass
/// (element `k − 1` holds `ξ_{k,n}`).
pub fn approximants_to(c: &CfCoeffs, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut out = vec![0.0; n];
    let (an, bn) = c.at(n)?;
    let mut t = checked_div(bn, an, n)?;
    out[n - 1] = t;
    for j in (1..n).rev() {
        let (a, b) = c.at(j)?;
        t = checked_div(b, a + t, j)?;
        out[j - 1] = t;
    }
    Ok(out)
}

/// Stable form of `(α/2)(√(1 + 4β/α²) − 1)`.
pub fn tail_limit(alpha: f64, beta: f64) -> Option<f64> {
    if alpha == 0.0 {
        return None;
    }
    let x = 4.0 * beta / (alpha * alpha);
    if x < -1.0 {
        return None;
    }
    Some(2.0 * beta / (alpha * ((1.0 + x).sqrt() + 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailOptions {
    pub tol: f64,
    /// Consecutive differences that must stay below `tol`.
    pub window: usize,
    /// Maximum number of terms.
    pub nmax: usize,
}

impl Default for TailOptions {
    fn default() -> Self {
        TailOptions {
            tol: 1e-13,
            window: 5,
            nmax: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub k: usize,
    pub value: f64,
    /// Last index of the approximant returned.
    pub n_used: usize,
    /// Closed-form limit of the tails from the limiting coefficients.
    pub asymptotic: Option<f64>,
}

/// Forward three-term recurrence for `C_{k,j}`, `D_{k,j}` with a shared
/// power-of-two scale.
struct Recurrence {
    c_prev: f64,
    c: f64,
    d_prev: f64,
    d: f64,
    exp2: i64,
}

impl Recurrence {
    fn start() -> Self {
        // C_{k,k−2} = 1, C_{k,k−1} = 0, D_{k,k−2} = 0, D_{k,k−1} = 1
        Recurrence {
            c_prev: 1.0,
            c: 0.0,
            d_prev: 0.0,
            d: 1.0,
            exp2: 0,
        }
    }

    fn step(&mut self, alpha: f64, beta: f64) {
        let c = alpha * self.c + beta * self.c_prev;
        let d = alpha * self.d + beta * self.d_prev;
        self.c_prev = self.c;
        self.d_prev = self.d;
        self.c = c;
        self.d = d;
        let m = c.abs().max(d.abs());
        if m > 0.0 && m.is_finite() && !(2f64.powi(-400)..=2f64.powi(400)).contains(&m) {
            let e = binary_exponent(m);
            self.c = ldexp(self.c, -e);
            self.d = ldexp(self.d, -e);
            self.c_prev = ldexp(self.c_prev, -e);
            self.d_prev = ldexp(self.d_prev, -e);
            self.exp2 += e as i64;
        }
    }

    /// `ln |D|` including the scale.
    fn ln_d(&self) -> f64 {
        self.d.abs().ln() + self.exp2 as f64 * std::f64::consts::LN_2
    }
}

pub fn tail(c: &CfCoeffs, k: usize, opts: &TailOptions) -> Result<Tail> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    let asymptotic = c.limit().and_then(|(a, b)| tail_limit(a, b));
    let mut rec = Recurrence::start();
    let mut recent: Vec<f64> = Vec::with_capacity(opts.window + 1);
    let last = k.saturating_add(opts.nmax.max(1) - 1);
    for j in k..=last {
        let (a, b) = c.at(j)?;
        rec.step(a, b);
        if rec.d.abs() < SINGULAR {
            recent.clear();
            continue;
        }
        recent.push(rec.c / rec.d);
        if recent.len() > opts.window + 1 {
            recent.remove(0);
        }
        if recent.len() == opts.window + 1 {
            let lo = recent.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= opts.tol {
                let value = approximant(c, k, j)?;
                if (value - recent[opts.window]).abs() <= 10.0 * opts.tol.max(value.abs() * 1e-15) {
                    return Ok(Tail {
                        k,
                        value,
                        n_used: j,
                        asymptotic,
                    });
                }
            }
        }
    }
    Err(Error::TailNotConverged {
        k,
        nmax: opts.nmax,
    })
}

/// Tails `ξ_1, …, ξ_kmax`, evaluated concurrently.
pub fn tails(c: &CfCoeffs, kmax: usize, opts: &TailOptions) -> Result<Vec<Tail>> {
    (1..=kmax)
        .into_par_iter()
        .map(|k| tail(c, k, opts))
        .collect()
}

/// `h_k = β_k/(α_{k−1} + β_{k−1}/(α_{k−2} + ⋯ + β_2/α_1))`.
pub fn critical_tail(c: &CfCoeffs, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidRange { k, n: k });
    }
    let (a1, _) = c.at(1)?;
    let (_, b2) = c.at(2)?;
    let mut t = checked_div(b2, a1, 1)?;
    for j in 3..=k {
        let (a, _) = c.at(j - 1)?;
        let (_, b) = c.at(j)?;
        t = checked_div(b, a + t, j - 1)?;
    }
    Ok(t)
}

/// `h_{m,k} = 1/(α_m + β_m/(α_{m−1} + ⋯ + β_{k+1}/α_k))`; with entry-ratio
/// coefficients this is `A_{k,m}(12)/A_{k,m}(11)`.
pub fn reversed_ratio(c: &CfCoeffs, k: usize, m: usize) -> Result<f64> {
    if k == 0 || m < k {
        return Err(Error::InvalidRange { k, n: m });
    }
    let (ak, _) = c.at(k)?;
    if m == k {
        return checked_div(1.0, ak, k);
    }
    let (_, b) = c.at(k + 1)?;
    let mut t = checked_div(b, ak, k)?;
    for j in k + 2..=m {
        let (a, _) = c.at(j - 1)?;
        let (_, b) = c.at(j)?;
        t = checked_div(b, a + t, j - 1)?;
    }
    let (am, _) = c.at(m)?;
    checked_div(1.0, am + t, m)
}

/// `β_k/(α_k + β_{k−1}/(α_{k−1} + ⋯ + β_1/α_1))`; with descending
/// coefficients this is the top-row ratio `f_k`.
pub fn descending_value(c: &CfCoeffs, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    let (a, b) = c.at(1)?;
    let mut t = checked_div(b, a, 1)?;
    for j in 2..=k {
        let (a, b) = c.at(j)?;
        t = checked_div(b, a + t, j)?;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerMinding {
    pub k: usize,
    pub n: usize,
    /// `C_{k,n} = c · e^{log_scale}`, likewise `D`.
    pub c: f64,
    pub d: f64,
    pub log_scale: f64,
    /// `ξ_{k,j+1} − ξ_{k,j}` for `j = k..n−1`.
    pub increments: Vec<f64>,
}

impl EulerMinding {
    /// `C/D`, undefined for the empty recurrence `n = k − 1`.
    pub fn value(&self) -> Option<f64> {
        (self.n >= self.k).then(|| self.c / self.d)
    }
}

pub fn euler_minding(c: &CfCoeffs, k: usize, n: usize) -> Result<EulerMinding> {
    if k == 0 || n + 1 < k {
        return Err(Error::InvalidRange { k, n });
    }
    let mut rec = Recurrence::start();
    let mut increments = Vec::with_capacity(n.saturating_sub(k));
    // ln |Π_{i=k}^{j} β_i| and sign of Π(−β_i)
    let mut ln_beta = 0.0;
    let mut sign_beta = 1.0;
    let mut prev_ln_d = 0.0;
    let mut prev_sign_d = 1.0;
    for j in k..=n {
        let (a, b) = c.at(j)?;
        rec.step(a, b);
        ln_beta += b.abs().ln();
        sign_beta *= -b.signum();
        if rec.d.abs() < SINGULAR {
            return Err(Error::Singular(j));
        }
        let ln_d = rec.ln_d();
        let sign_d = rec.d.signum();
        if j > k {
            // ξ_{k,j} − ξ_{k,j−1} = −Π_{i=k}^{j}(−β_i) / (D_{k,j} D_{k,j−1})
            let mag = (ln_beta - ln_d - prev_ln_d).exp();
            let inc = if b == 0.0 || ln_beta == f64::NEG_INFINITY {
                0.0
            } else {
                -sign_beta * sign_d * prev_sign_d * mag
            };
            increments.push(inc);
        }
        prev_ln_d = ln_d;
        prev_sign_d = sign_d;
    }
    Ok(EulerMinding {
        k,
        n,
        c: rec.c,
        d: rec.d,
        log_scale: rec.exp2 as f64 * std::f64::consts::LN_2,
        increments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub k: usize,
    pub n: usize,
    /// `y_{k+1,n}/y_{k,n}` with `y_{k,n} = e₁A_k⋯A_ne₁ᵗ`.
    pub xi_matrix: f64,
    pub xi_cf: f64,
    pub residual: f64,
}

fn y_ratio(next: &ScaledMat, cur: &ScaledMat) -> f64 {
    let a = next.entry_log(1, 1);
    let b = cur.entry_log(1, 1);
    (a.sign * b.sign) as f64 * (a.ln_abs - b.ln_abs).exp()
}

pub fn matrix_bridge(env: &EnvFamily, k: usize, n: usize) -> Result<Bridge> {
    if k == 0 || n < k {
        return Err(Error::InvalidRange { k, n });
    }
    let mut p = ScaledMat::identity_at(n + 1);
    for i in (k + 1..=n).rev() {
        p.push_left(&matprod::transformed_matrix(env, i)?)?;
    }
    let next = p;
    p.push_left(&matprod::transformed_matrix(env, k)?)?;
    let xi_matrix = y_ratio(&next, &p);
    let xi_cf = approximant(&CfCoeffs::product_ratio(env), k, n)?;
    Ok(Bridge {
        k,
        n,
        xi_matrix,
        xi_cf,
        residual: (xi_matrix - xi_cf).abs(),
    })
}

/// The bridge for every `k = 1..=n` at fixed `n` (one backward pass each way).
pub fn bridge_column(env: &EnvFamily, n: usize) -> Result<Vec<Bridge>> {
    let xi = approximants_to(&CfCoeffs::product_ratio(env), n)?;
    let mut out = vec![
        Bridge {
            k: 0,
            n,
            xi_matrix: 0.0,
            xi_cf: 0.0,
            residual: 0.0
        };
        n
    ];
    let mut p = ScaledMat::identity_at(n + 1);
    for k in (1..=n).rev() {
        let next = p;
        p.push_left(&matprod::transformed_matrix(env, k)?)?;
        let xm = y_ratio(&next, &p);
        out[k - 1] = Bridge {
            k,
            n,
            xi_matrix: xm,
            xi_cf: xi[k - 1],
            residual: (xm - xi[k - 1]).abs(),
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FVariant {
    /// `e₁A_1⋯A_je₂ᵗ / e₁A_1⋯A_je₁ᵗ`, `f₁ = b̃₁/ã₁`.
    TopRow,
    /// `e₂A_1⋯A_je₂ᵗ / e₂A_1⋯A_je₁ᵗ`, `f₁ = 0`.
    BottomRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FRecursion {
    pub variant: FVariant,
    /// `f_1..f_n`.
    pub values: Vec<f64>,
    /// The same ratios read off the scaled products.
    pub matrix_ratios: Vec<f64>,
    pub max_rel_dev: f64,
}

/// `f_j = b̃_j/(ã_j + d̃_j f_{j−1})`.
pub fn f_recursion(env: &EnvFamily, n: usize, variant: FVariant) -> Result<FRecursion> {
    if n == 0 {
        return Err(Error::InvalidRange { k: 1, n });
    }
    let row = match variant {
        FVariant::TopRow => 1,
        FVariant::BottomRow => 2,
    };
    let mut values = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    let mut p = ScaledMat::identity_at(1);
    let mut max_rel_dev: f64 = 0.0;
    for j in 1..=n {
        let t = env.transformed_at(j)?;
        let f = if j == 1 {
            match variant {
                FVariant::TopRow => checked_div(t.b, t.a, 1)?,
                FVariant::BottomRow => 0.0,
            }
        } else {
            checked_div(t.b, t.a + t.d * values[j - 2], j)?
        };
        p.push_right(&matprod::transformed_matrix(env, j)?)?;
        let num = p.mat().entry(row, 2);
        let den = p.mat().entry(row, 1);
        let r = checked_div(num, den, j)?;
        let dev = if f == r { 0.0 } else { (f - r).abs() / r.abs().max(f.abs()) };
        max_rel_dev = max_rel_dev.max(dev);
        values.push(f);
        ratios.push(r);
    }
    Ok(FRecursion {
        variant,
        values,
        matrix_ratios: ratios,
        max_rel_dev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    DeltaXi,
    DeltaF,
    EpsXi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QEstimate {
    Estimated { q: f64, source: QSource, spread: f64 },
    /// Every usable ratio involved values below `1e-300`.
    Underflow,
    /// The fluctuation sequences are at rounding level (constant environment).
    BelowFloor,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsBranch {
    /// `ε^f` ratios approach `q̂`.
    Q,
    /// `ε^f` ratios approach `(aθ − bd)/ϱ²`.
    Alternative,
    /// Both limits coincide and the ratios approach them.
    Both,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSeq {
    /// `(k, ε^f_k)`, `k = 1..=K`.
    pub eps_f: Vec<(usize, f64)>,
    /// `(k, ε^ξ_k)`, `k = 1..=K`.
    pub eps_xi: Vec<(usize, f64)>,
    /// `(k, δ^f_k)`, `k = 2..=K`.
    pub delta_f: Vec<(usize, f64)>,
    /// `(k, δ^ξ_k)`, `k = 1..=K`.
    pub delta_xi: Vec<(usize, f64)>,
    pub q_hat: QEstimate,
    /// Corroborating estimate from ε^ξ ratios.
    pub q_eps_xi: Option<f64>,
    pub eps_f_ratio: Option<f64>,
    /// `(aθ − bd)/ϱ²`.
    pub alternative_ratio: f64,
    pub eps_f_branch: EpsBranch,
}

const FLOOR: f64 = 1e3 * f64::EPSILON;

/// Ratio limit of `v[k+1]/v[k]` over the leading run where `|v| > floor·scale`.
fn ratio_estimate(v: &[f64], scale: &[f64], window: usize) -> RatioOutcome {
    let run = v
        .iter()
        .zip(scale)
        .position(|(x, s)| x.abs().partial_cmp(&(FLOOR * s)) != Some(std::cmp::Ordering::Greater))
        .unwrap_or(v.len());
    if run == 0 {
        return RatioOutcome::BelowFloor;
    }
    let usable: Vec<f64> = v[..run].to_vec();
    if usable.iter().all(|x| x.abs() < 1e-300) {
        return RatioOutcome::Underflow;
    }
    let r: Vec<f64> = usable
        .windows(2)
        .filter(|w| w[0].abs() >= 1e-300)
        .map(|w| w[1] / w[0])
        .collect();
    if r.len() < window + 2 {
        return RatioOutcome::Short;
    }
    let acc: Vec<f64> = r
        .windows(3)
        .filter_map(|w| series::aitken(w[0], w[1], w[2]))
        .collect();
    let pick = |xs: &[f64]| series::plateau(xs, window);
    let best = match (pick(&acc), pick(&r)) {
        (Some(a), Some(b)) => Some(if a.1 <= b.1 { a } else { b }),
        (a, b) => a.or(b),
    };
    match best {
        Some((q, spread)) if spread <= 1e-3 * q.abs().max(1e-3) => RatioOutcome::Ok(q, spread),
        _ => RatioOutcome::Unstable,
    }
}

enum RatioOutcome {
    Ok(f64, f64),
    BelowFloor,
    Underflow,
    Short,
    Unstable,
}

pub fn fluctuations(env: &EnvFamily, kk: usize) -> Result<FluctuationSeq> {
    if kk < 10 {
        return Err(Error::InvalidRange { k: 10, n: kk });
    }
    let rho: Vec<f64> = (1..=kk + 1)
        .map(|k| matprod::transformed_radius(env, k).map(|s| s.rho))
        .collect::<Result<_>>()?;
    let tr: Vec<_> = (1..=kk + 1)
        .map(|k| env.transformed_at(k))
        .collect::<Result<_>>()?;
    let xi_coeffs = CfCoeffs::product_ratio(env);
    let xi_tails = tails(&xi_coeffs, kk, &TailOptions::default())?;
    let f = f_recursion(env, kk, FVariant::TopRow)?.values;

    let mut eps_f = Vec::with_capacity(kk);
    let mut eps_xi = Vec::with_capacity(kk);
    let mut delta_f = Vec::with_capacity(kk);
    let mut delta_xi = Vec::with_capacity(kk);
    let (mut sc_eps_f, mut sc_eps_xi, mut sc_df, mut sc_dxi) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 1..=kk {
        let (t, t1) = (&tr[k - 1], &tr[k]);
        let (r, r1) = (rho[k - 1], rho[k]);
        let lim_f = t1.b / r1;
        eps_f.push((k, f[k - 1] - lim_f));
        sc_eps_f.push(f[k - 1].abs() + lim_f.abs());
        eps_xi.push((k, xi_tails[k - 1].value - 1.0 / r));
        // tails carry an absolute tolerance of 1e-13
        sc_eps_xi.push((xi_tails[k - 1].value.abs() + 1.0 / r).max(1e-13 / FLOOR * 10.0));
        let (alpha, beta) = xi_coeffs.at(k)?;
        delta_xi.push((k, beta - (alpha + 1.0 / r1) / r));
        sc_dxi.push(beta.abs() + alpha.abs() / r + 1.0 / (r * r1));
        if k >= 2 {
            let left = t.b / t.d;
            let right = (t1.b / r1) * (t.a / t.d + t.b / r);
            delta_f.push((k, left - right));
            sc_df.push(left.abs() + right.abs());
        }
    }
    let vals = |s: &[(usize, f64)]| s.iter().map(|p| p.1).collect::<Vec<_>>();
    let window = 5;

    let primary = ratio_estimate(&vals(&delta_xi), &sc_dxi, window);
    let q_eps = ratio_estimate(&vals(&eps_xi), &sc_eps_xi, window);
    let q_eps_xi = match q_eps {
        RatioOutcome::Ok(q, _) => Some(q),
        _ => None,
    };
    let q_hat = match primary {
        RatioOutcome::Ok(q, spread) => QEstimate::Estimated {
            q,
            source: QSource::DeltaXi,
            spread,
        },
        RatioOutcome::Underflow => QEstimate::Underflow,
        other => match ratio_estimate(&vals(&delta_f), &sc_df, window) {
            RatioOutcome::Ok(q, spread) => QEstimate::Estimated {
                q,
                source: QSource::DeltaF,
                spread,
            },
            _ => match q_eps {
                RatioOutcome::Ok(q, spread) => QEstimate::Estimated {
                    q,
                    source: QSource::EpsXi,
                    spread,
                },
                _ => match other {
                    RatioOutcome::BelowFloor => QEstimate::BelowFloor,
                    _ => QEstimate::Unstable,
                },
            },
        },
    };

    let p = env.base();
    let (rho_lim, _) = crate::env::limit_eigenvalues(&p)?;
    let alternative_ratio = -p.det_gap() / (rho_lim * rho_lim);
    let eps_f_ratio = match ratio_estimate(&vals(&eps_f), &sc_eps_f, window) {
        RatioOutcome::Ok(q, _) => Some(q),
        _ => None,
    };
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-2 * y.abs().max(1e-2);
    let eps_f_branch = match (eps_f_ratio, q_hat) {
        (Some(r), QEstimate::Estimated { q, .. }) => match (close(r, q), close(r, alternative_ratio)) {
            (true, true) => EpsBranch::Both,
            (true, false) => EpsBranch::Q,
            (false, true) => EpsBranch::Alternative,
            _ => EpsBranch::Undetermined,
        },
        (Some(r), _) if close(r, alternative_ratio) => EpsBranch::Alternative,
        _ => EpsBranch::Undetermined,
    };
    Ok(FluctuationSeq {
        eps_f,
        eps_xi,
        delta_f,
        delta_xi,
        q_hat,
        q_eps_xi,
        eps_f_ratio,
        alternative_ratio,
        eps_f_branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Fixture, Params};
    use crate::matprod::Which;
    use approx::assert_relative_eq;

    #[test]
    fn coefficient_limits() {
        let star = Fixture::EStar.build();
        let (a, b) = CfCoeffs::product_ratio(&star).at(3).unwrap();
        assert_relative_eq!(a, 3.0, epsilon = 1e-14);
        assert_relative_eq!(b, 10.0, epsilon = 1e-13);
        let (a, b) = CfCoeffs::product_ratio(&Fixture::EMinus.build()).limit().unwrap();
        assert_relative_eq!(a, -7.0, epsilon = 1e-13);
        assert_relative_eq!(b, -10.0, epsilon = 1e-13);
        let (a, b) = CfCoeffs::entry_ratio(&star).limit().unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-15);
        assert_relative_eq!(b, 10.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn approximant_cases() {
        let star = Fixture::EStar.build();
        let c = CfCoeffs::product_ratio(&star);
        assert_relative_eq!(approximant(&c, 4, 4).unwrap(), 10.0 / 3.0, epsilon = 1e-13);
        let one_two = CfCoeffs::Constant { alpha: 1.0, beta: 2.0 };
        assert_relative_eq!(approximant(&one_two, 1, 20).unwrap(), 1.0, epsilon = 1e-5);
        let minus = Fixture::EMinus.build();
        let c = CfCoeffs::product_ratio(&minus);
        assert_relative_eq!(approximant(&c, 2, 2).unwrap(), 10.0 / 7.0, epsilon = 1e-13);
        assert!(matches!(approximant(&c, 3, 2), Err(Error::InvalidRange { .. })));
        // pole: 1/(−1 + 1/1)
        let pole = CfCoeffs::Table {
            alpha: vec![-1.0, 1.0],
            beta: vec![1.0, 1.0],
        };
        assert_eq!(approximant(&pole, 1, 2), Err(Error::Singular(1)));
        assert!(matches!(approximant(&pole, 1, 3), Err(Error::SequenceUndefined { .. })));
    }

    #[test]
    fn tails_and_limits() {
        for (f, expect) in [(Fixture::EStar, 2.0), (Fixture::EMinus, 2.0)] {
            let env = f.build();
            let t = tail(&CfCoeffs::product_ratio(&env), 3, &TailOptions::default()).unwrap();
            assert_relative_eq!(t.value, expect, epsilon = 1e-12);
            assert_relative_eq!(t.asymptotic.unwrap(), expect, epsilon = 1e-12);
        }
        let env = Fixture::EStar.build();
        let t = tail(&CfCoeffs::entry_ratio(&env), 5, &TailOptions::default()).unwrap();
        assert_relative_eq!(t.value, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(tail_limit(0.0, 1.0), None);
        assert_eq!(tail_limit(1.0, -1.0), None);
        let osc = CfCoeffs::Constant { alpha: 1.0, beta: -1.0 };
        let r = tail(&osc, 1, &TailOptions { nmax: 200, ..Default::default() });
        assert!(matches!(r, Err(Error::TailNotConverged { .. }) | Err(Error::Singular(_))), "{r:?}");
    }

    #[test]
    fn critical_and_reversed() {
        let env = Fixture::EStar.build();
        let c = CfCoeffs::entry_ratio(&env);
        assert_relative_eq!(critical_tail(&c, 2).unwrap(), 10.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(critical_tail(&c, 80).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        let one_two = CfCoeffs::Constant { alpha: 1.0, beta: 2.0 };
        assert_eq!(critical_tail(&one_two, 2).unwrap(), 2.0);
        assert!(critical_tail(&one_two, 1).is_err());
        assert_relative_eq!(reversed_ratio(&c, 1, 80).unwrap(), 0.6, epsilon = 1e-12);
        let up = Fixture::ETriUp.build();
        let c = CfCoeffs::entry_ratio(&up);
        for (k, m) in [(1, 1), (1, 7), (3, 30)] {
            let p = matprod::scaled_product(&up, k, m, Which::Transformed).unwrap();
            let r = p.mat().m12 / p.mat().m11;
            assert_relative_eq!(reversed_ratio(&c, k, m).unwrap(), r, max_relative = 1e-13);
            let q = p.mat().m21 / p.mat().m11;
            assert_relative_eq!(approximant(&c, k, m).unwrap(), q, max_relative = 1e-13);
        }
    }

    #[test]
    fn descending_matches_top_row_recursion() {
        let env = Fixture::ETriDown.build();
        let f = f_recursion(&env, 12, FVariant::TopRow).unwrap();
        let c = CfCoeffs::descending(&env);
        for k in 1..=12 {
            assert_relative_eq!(descending_value(&c, k).unwrap(), f.values[k - 1], max_relative = 1e-13);
        }
    }

    #[test]
    fn euler_minding_basics() {
        let env = Fixture::EStar.build();
        let c = CfCoeffs::product_ratio(&env);
        let em = euler_minding(&c, 1, 1).unwrap();
        assert_relative_eq!(em.c, 10.0, epsilon = 1e-13);
        assert_relative_eq!(em.d, 3.0, epsilon = 1e-14);
        assert!(em.increments.is_empty());
        let empty = euler_minding(&c, 3, 2).unwrap();
        assert_eq!(empty.value(), None);
        assert!(empty.increments.is_empty());
        let minus = Fixture::EMinus.build();
        let em = euler_minding(&CfCoeffs::product_ratio(&minus), 1, 30).unwrap();
        assert_eq!(em.increments.len(), 29);
        assert!(em.increments.iter().all(|x| *x > 0.0));
        // long runs rescale without overflow
        let em = euler_minding(&c, 1, 5000).unwrap();
        assert_relative_eq!(em.value().unwrap(), 2.0, epsilon = 1e-12);
        let singular = CfCoeffs::Table { alpha: vec![0.0], beta: vec![1.0] };
        assert_eq!(euler_minding(&singular, 1, 1), Err(Error::Singular(1)));
    }

    #[test]
    fn bridge_examples() {
        let env = Fixture::EStar.build();
        let b = matrix_bridge(&env, 5, 5).unwrap();
        assert_relative_eq!(b.xi_matrix, 10.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(b.xi_cf, 10.0 / 3.0, epsilon = 1e-13);
        for f in [Fixture::EStar, Fixture::EMinus] {
            let env = f.build();
            let b = matrix_bridge(&env, 1, 40).unwrap();
            assert!(b.residual <= 1e-12 * b.xi_cf.abs());
        }
        let col = bridge_column(&Fixture::EMinus.build(), 40).unwrap();
        for b in &col {
            // the gap to 2 falls below rounding well before n = 40
            assert!(b.xi_cf > 0.0 && b.xi_cf < 2.0 + 1e-12, "{b:?}");
            assert!(b.residual <= 1e-12 * b.xi_cf.abs(), "{b:?}");
        }
    }

    #[test]
    fn f_variants() {
        let env = Fixture::EStar.build();
        let top = f_recursion(&env, 1, FVariant::TopRow).unwrap();
        assert_relative_eq!(top.values[0], 1.0, epsilon = 1e-15);
        let bot = f_recursion(&env, 200, FVariant::BottomRow).unwrap();
        assert_eq!(bot.values[0], 0.0);
        assert_relative_eq!(*bot.values.last().unwrap(), 0.6, epsilon = 1e-12);
        assert!(bot.max_rel_dev < 1e-12);
        let top = f_recursion(&Fixture::ETriDown.build(), 200, FVariant::TopRow).unwrap();
        assert!(top.max_rel_dev < 1e-12);
    }

    #[test]
    fn fluctuation_examples() {
        let star = fluctuations(&Fixture::EStar.build(), 40).unwrap();
        assert!(star.eps_xi.iter().all(|(_, e)| e.abs() <= 1e-12));
        // f_k starts from b̃₁/ã₁ = 1, so ε^f decays geometrically rather than vanishing
        assert!(star.eps_f[39].1.abs() <= 1e-12);
        assert_relative_eq!(star.alternative_ratio, -0.4, epsilon = 1e-14);
        assert!(star.delta_xi.iter().all(|(_, d)| d.abs() <= 1e-12));
        assert_eq!(star.q_hat, QEstimate::BelowFloor);
        assert_eq!(star.eps_f_branch, EpsBranch::Alternative);
        let up = fluctuations(&Fixture::ETriUp.build(), 60).unwrap();
        match up.q_hat {
            QEstimate::Estimated { q, source, .. } => {
                assert_eq!(source, QSource::DeltaXi);
                assert_relative_eq!(q, 0.5, epsilon = 1e-4);
            }
            other => panic!("{other:?}"),
        }
        assert!(fluctuations(&Fixture::EStar.build(), 9).is_err());
    }

    #[test]
    fn power_family_fluctuations_keep_q_within_unit_disc() {
        let env = EnvFamily::power(
            Params::new(0.2, 0.3, 0.4, 0.1),
            Params::new(0.05, 0.0, 0.0, 0.0),
            2.0,
        )
        .unwrap();
        let fl = fluctuations(&env, 200).unwrap();
        if let QEstimate::Estimated { q, .. } = fl.q_hat {
            assert!(q.abs() <= 1.0 + 1e-3, "{q}");
        }
    }
}
