//! Exact law of the extinction time `ν`: survival probabilities by a
//! backward pgf recursion and by matrix products, point probabilities,
//! the sequences `G_{n,i}`, `H_n`, `S_n`, and estimators for the
//! constants in the asymptotics of `P(ν > n)` and `P(ν = n)`.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfrac::{self, FVariant};
use crate::env::{self, EnvFamily};
use crate::error::{Error, Result};
use crate::matprod::{self, Mat2, Which};
use crate::series::{self, binary_exponent, ldexp, LogSum, Stabilized};

/// Slack allowed for negative differences of survival probabilities.
pub const PMF_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMethod {
    Backward,
    /// Products of the mean matrices `M_k`.
    Matrix,
    /// Products of the conjugated matrices `A_k`.
    Transformed,
}

/// `P(ν > n | Z₀ = e_i)` for both starting types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalVector {
    pub n: usize,
    pub s1: f64,
    pub s2: f64,
    pub ln_s1: f64,
    pub ln_s2: f64,
    pub method: SurvivalMethod,
}

impl SurvivalVector {
    fn from_ln(n: usize, ln: [f64; 2], method: SurvivalMethod) -> Self {
        SurvivalVector {
            n,
            s1: ln[0].exp(),
            s2: ln[1].exp(),
            ln_s1: ln[0],
            ln_s2: ln[1],
            method,
        }
    }

    pub fn ln(&self, ty: usize) -> f64 {
        if ty == 1 {
            self.ln_s1
        } else {
            self.ln_s2
        }
    }
}

const TINY: f64 = 1.4916681462400413e-154; // 2^-512

/// `u_{n+1} = (1,1)`, `u_k = M_k u_{k+1} / (1 + γ_k u_{k+1})`.
///
/// The vector is kept as `2^E û`; the rescaling only kicks in once the
/// entries fall below `2^-512`, before that this is the plain recursion.
pub fn survival_backward(env: &EnvFamily, n: usize) -> Result<SurvivalVector> {
    let mut u = [1.0f64, 1.0];
    let mut e: i32 = 0;
    for k in (1..=n).rev() {
        let p = env.params_at(k)?;
        let mu = [p.a * u[0] + p.b * u[1], p.d * u[0] + p.theta * u[1]];
        let den = 1.0 + ldexp(p.a * u[0] + p.b * u[1], e);
        u = [mu[0] / den, mu[1] / den];
        let m = u[0].max(u[1]);
        if m < TINY && m > 0.0 {
            let s = binary_exponent(m);
            u = [ldexp(u[0], -s), ldexp(u[1], -s)];
            e += s;
        }
    }
    let shift = e as f64 * LN_2;
    Ok(SurvivalVector::from_ln(
        n,
        [u[0].ln() + shift, u[1].ln() + shift],
        SurvivalMethod::Backward,
    ))
}

/// A vector and a positive running sum, each carried as mantissa times a
/// power of two.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    v: f64,
    e: i64,
}

impl Scaled {
    fn new(v: f64) -> Self {
        let mut s = Scaled { v, e: 0 };
        s.norm();
        s
    }

    fn norm(&mut self) {
        if self.v != 0.0 && self.v.is_finite() {
            let b = binary_exponent(self.v);
            self.v = ldexp(self.v, -b);
            self.e += b as i64;
        }
    }

    fn add(&mut self, x: f64, xe: i64) {
        let shift = (xe - self.e).clamp(-2000, 2000) as i32;
        if self.v == 0.0 {
            *self = Scaled::new(x);
            self.e += xe;
            return;
        }
        self.v += ldexp(x, shift);
        self.norm();
    }

    fn ln(&self) -> f64 {
        self.v.abs().ln() + self.e as f64 * LN_2
    }
}

/// Backward accumulation of `h_k = F_k⋯F_n t` and `Σ_{k=1}^{n+1} e₁h_k`.
struct Backward {
    head: [f64; 2],
    head_e: i64,
    sum: Scaled,
}

impl Backward {
    fn run(env: &EnvFamily, n: usize, which: Which, terminal: [f64; 2]) -> Result<Self> {
        let mut acc = Backward {
            head: terminal,
            head_e: 0,
            sum: Scaled::new(terminal[0]),
        };
        for k in (1..=n).rev() {
            let m = matprod::factor(env, k, which)?;
            acc.head = m.apply(acc.head);
            let mx = acc.head[0].abs().max(acc.head[1].abs());
            if !(mx.is_finite() && mx > 0.0) {
                return Err(Error::ScalingFailure(k));
            }
            let b = binary_exponent(mx);
            acc.head = [ldexp(acc.head[0], -b), ldexp(acc.head[1], -b)];
            acc.head_e += b as i64;
            acc.sum.add(acc.head[0], acc.head_e);
        }
        Ok(acc)
    }

    /// `ln |r·h_1| − ln Σ`.
    fn ln_ratio(&self, r: [f64; 2]) -> f64 {
        let x = r[0] * self.head[0] + r[1] * self.head[1];
        x.ln() + self.head_e as f64 * LN_2 - self.sum.ln()
    }
}

/// `P(ν > n | e_i) = e_iM_1⋯M_n𝟙 / Σ_{k=1}^{n+1} e₁M_k⋯M_n𝟙`.
pub fn survival_matrix(env: &EnvFamily, n: usize) -> Result<SurvivalVector> {
    let acc = Backward::run(env, n, Which::Mean, [1.0, 1.0])?;
    Ok(SurvivalVector::from_ln(
        n,
        [acc.ln_ratio([1.0, 0.0]), acc.ln_ratio([0.0, 1.0])],
        SurvivalMethod::Matrix,
    ))
}

fn lambda(env: &EnvFamily, k: usize) -> Result<f64> {
    let p = env.params_at(k)?;
    Ok(1.0 - p.theta / p.b)
}

/// `D_n = Σ_{k=1}^{n+1} e₁A_k⋯A_n(1, λ_{n+1})ᵗ`, in logs.
fn ln_d(env: &EnvFamily, n: usize) -> Result<f64> {
    let acc = Backward::run(env, n, Which::Transformed, [1.0, lambda(env, n + 1)?])?;
    Ok(acc.sum.ln())
}

/// Same probabilities from `A_1⋯A_n(1, λ_{n+1})ᵗ`; type 2 starts from the
/// row `e₂Λ₁ = (θ₁/b₁, 1)`.
pub fn survival_transformed(env: &EnvFamily, n: usize) -> Result<SurvivalVector> {
    let acc = Backward::run(env, n, Which::Transformed, [1.0, lambda(env, n + 1)?])?;
    let p1 = env.params_at(1)?;
    Ok(SurvivalVector::from_ln(
        n,
        [acc.ln_ratio([1.0, 0.0]), acc.ln_ratio([p1.theta / p1.b, 1.0])],
        SurvivalMethod::Transformed,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub n: usize,
    pub p1: f64,
    pub p2: f64,
    pub ln_p1: f64,
    pub ln_p2: f64,
    /// `P(ν = n | e₂)` from the `G_{n−1,i}` product form.
    pub p2_product: f64,
}

fn difference(prev: f64, cur: f64, n: usize, ty: usize) -> Result<(f64, f64)> {
    let lin = prev.exp() - cur.exp();
    if lin < -PMF_SLACK {
        return Err(Error::InconsistentCurve { n, ty, value: lin });
    }
    let ln = if cur < prev {
        prev + (-(cur - prev).exp_m1()).ln()
    } else {
        f64::NEG_INFINITY
    };
    Ok((ln.exp().max(lin.min(0.0)), ln))
}

fn pmf_from(prev: &SurvivalVector, cur: &SurvivalVector) -> Result<[(f64, f64); 2]> {
    Ok([
        difference(prev.ln_s1, cur.ln_s1, cur.n, 1)?,
        difference(prev.ln_s2, cur.ln_s2, cur.n, 2)?,
    ])
}

/// `P(ν = n | e_i)` by differencing the backward recursion.
pub fn extinction_pmf(env: &EnvFamily, n: usize) -> Result<Pmf> {
    if n == 0 {
        return Err(Error::InvalidRange { k: 1, n });
    }
    let [(p1, ln_p1), (p2, ln_p2)] =
        pmf_from(&survival_backward(env, n - 1)?, &survival_backward(env, n)?)?;
    Ok(Pmf {
        n,
        p1,
        p2,
        ln_p1,
        ln_p2,
        p2_product: pmf_product_form(env, n)?,
    })
}

/// `[(θ₁/b₁)N₁ + N₂] / (D_n D_{n−1})`, where `N_i = G_{n−1,i}·e_iA_1⋯A_{n−1}e₁ᵗ`.
pub fn pmf_product_form(env: &EnvFamily, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidRange { k: 1, n });
    }
    let m = n - 1;
    let mut fwd = GForward::new();
    for j in 1..=m {
        fwd.push(env, j)?;
    }
    let [n1, n2] = fwd.numerators(env, m)?;
    let p1 = env.params_at(1)?;
    let num = p1.theta / p1.b * n1 + n2;
    let ln = num.abs().ln() + fwd.logscale - ln_d(env, n)? - ln_d(env, m)?;
    Ok(num.signum() * ln.exp())
}

/// `c_n = b̃_nλ_nλ_{n+1} + ã_nλ_n − d̃_n`.
fn c_coef(env: &EnvFamily, n: usize) -> Result<f64> {
    let t = env.transformed_at(n)?;
    let (l, l1) = (lambda(env, n)?, lambda(env, n + 1)?);
    Ok(t.b * l * l1 + t.a * l - t.d)
}

/// Running `P_m = A_1⋯A_m = e^{logscale}·p` together with
/// `Δ^{(i)}_m = Σ_{k=1}^{m+1} det[e_iP_m; e₁A_k⋯A_m]` in the same units.
struct GForward {
    p: Mat2,
    logscale: f64,
    delta: [f64; 2],
}

impl GForward {
    fn new() -> Self {
        GForward {
            p: Mat2::IDENTITY,
            logscale: 0.0,
            delta: [0.0, -1.0],
        }
    }

    fn push(&mut self, env: &EnvFamily, j: usize) -> Result<()> {
        let a = matprod::transformed_matrix(env, j)?;
        let det = a.det();
        let raw = self.p * a;
        let s = raw.max_abs();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::ScalingFailure(j));
        }
        for (i, d) in self.delta.iter_mut().enumerate() {
            *d = (det * *d - raw.entry(i + 1, 2)) / s;
        }
        self.p = raw.scale(1.0 / s);
        self.logscale += s.ln();
        Ok(())
    }

    /// Scaled `N_i = e_iP_m w_{m+1} − c_{m+1}Δ^{(i)}_m`.
    fn numerators(&self, env: &EnvFamily, m: usize) -> Result<[f64; 2]> {
        let w = [1.0, lambda(env, m + 1)?];
        let c = c_coef(env, m + 1)?;
        let pw = self.p.apply(w);
        Ok([pw[0] - c * self.delta[0], pw[1] - c * self.delta[1]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSeq {
    /// `G_{n,1}`, `G_{n,2}` for `n = 1..=nmax` from the product form.
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    /// `G_{n,2} = 1 + c_{n+1}H_n + (c_{n+1} + λ_{n+1})f_n`.
    pub g2_recursive: Vec<f64>,
    /// `H_n` by the recursion; `f_n` is the bottom-row ratio.
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub max_g2_dev: f64,
    pub g_limit: Option<f64>,
    pub h_limit: Option<f64>,
    pub f_limit: Option<f64>,
    /// `(n, θ₁/b₁ + e₂A_1⋯A_ne₁ᵗ / e₁A_1⋯A_ne₁ᵗ)` on a doubling grid.
    pub l_sequence: Vec<(usize, f64)>,
    pub l_estimate: Stabilized,
}

/// Closed-form limits `(G, H, f)` from the limit quadruple.
pub fn g_limits(p: &env::Params) -> Result<(f64, f64, f64)> {
    let gap = p.det_gap();
    if gap == 0.0 {
        return Err(Error::ExcludedParameters("bd = aθ".into()));
    }
    let (_, r1) = env::limit_eigenvalues(p)?;
    let bt = p.b - p.theta;
    let g = (bt * r1 * r1 - bt * (p.a + p.b + 1.0) * r1 + gap) / (gap * (1.0 - r1));
    let h = -p.b * r1 * r1 / (gap * (1.0 - r1));
    let f = -p.b * r1 / gap;
    Ok((g, h, f))
}

pub fn g_sequences(env: &EnvFamily, nmax: usize) -> Result<GSeq> {
    if nmax < 2 {
        return Err(Error::InvalidRange { k: 2, n: nmax });
    }
    let base = env.base();
    let (g_lim, h_lim, f_lim) = g_limits(&base)?;
    let (_, r1) = env::limit_eigenvalues(&base)?;
    let (g_limit, h_limit, f_limit) = if r1.abs() < 1.0 {
        (Some(g_lim), Some(h_lim), Some(f_lim))
    } else {
        (None, None, None)
    };

    let f = cfrac::f_recursion(env, nmax, FVariant::BottomRow)?.values;
    let t1 = env.transformed_at(1)?;
    let mut h = Vec::with_capacity(nmax);
    h.push(-t1.b);
    for n in 2..=nmax {
        let t = env.transformed_at(n)?;
        h.push(-t.d * f[n - 1] * (f[n - 2] + h[n - 2]));
    }

    let p1 = env.params_at(1)?;
    let mut fwd = GForward::new();
    let (mut g1, mut g2, mut g2r) = (Vec::new(), Vec::new(), Vec::new());
    let mut l_sequence = Vec::new();
    let mut max_g2_dev: f64 = 0.0;
    for n in 1..=nmax {
        fwd.push(env, n)?;
        let [n1, n2] = fwd.numerators(env, n)?;
        let (d1, d2) = (fwd.p.m11, fwd.p.m21);
        if d1 == 0.0 {
            return Err(Error::Singular(n));
        }
        if d2 == 0.0 {
            return Err(Error::Singular(n));
        }
        g1.push(n1 / d1);
        g2.push(n2 / d2);
        let c = c_coef(env, n + 1)?;
        let rec = 1.0 + c * h[n - 1] + (c + lambda(env, n + 1)?) * f[n - 1];
        max_g2_dev = max_g2_dev.max((rec - n2 / d2).abs());
        g2r.push(rec);
        if n.is_power_of_two() || n == nmax {
            l_sequence.push((n, p1.theta / p1.b + d2 / d1));
        }
    }
    let l_estimate = series::stabilize(&l_sequence, 1e-3);
    Ok(GSeq {
        g1,
        g2,
        g2_recursive: g2r,
        h,
        f,
        max_g2_dev,
        g_limit,
        h_limit,
        f_limit,
        l_sequence,
        l_estimate,
    })
}

/// `H_n` from the explicit alternating sum (quadratic cost; oracle use).
pub fn h_closed_sum(env: &EnvFamily, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroGeneration);
    }
    let f = cfrac::f_recursion(env, n, FVariant::BottomRow)?.values;
    let df: Vec<f64> = (1..=n)
        .map(|j| env.transformed_at(j).map(|t| t.d * f[j - 1]))
        .collect::<Result<_>>()?;
    let tail = |from: usize| df[from - 1..n].iter().product::<f64>();
    let sgn = |e: usize| if e.is_multiple_of(2) { 1.0 } else { -1.0 };
    let b1 = env.transformed_at(1)?.b;
    let mut h = sgn(n) * b1 * if n >= 2 { tail(2) } else { 1.0 };
    for k in 1..n {
        h += sgn(n - k) * f[k - 1] * tail(k + 1);
    }
    Ok(h)
}

/// `G_{m,1}`, `G_{m,2}` straight from the defining differences of products
/// in plain doubles. Only meant for small `m`.
pub fn g_pair_literal(env: &EnvFamily, m: usize) -> Result<(f64, f64)> {
    let a: Vec<Mat2> = (1..=m + 1)
        .map(|k| matprod::transformed_matrix(env, k))
        .collect::<Result<_>>()?;
    let prod = |k: usize, j: usize| (k..=j).fold(Mat2::IDENTITY, |acc, i| acc * a[i - 1]);
    let w = |j: usize| lambda(env, j).map(|l| [1.0, l]);
    let d = |j: usize| -> Result<f64> {
        let wj = w(j + 1)?;
        Ok((1..=j + 1).map(|k| prod(k, j).apply(wj)[0]).sum())
    };
    let (dm, dm1) = (d(m)?, d(m + 1)?);
    let (pm, pm1) = (prod(1, m), prod(1, m + 1));
    let (vm, vm1) = (pm.apply(w(m + 1)?), pm1.apply(w(m + 2)?));
    let n1 = vm[0] * dm1 - vm1[0] * dm;
    let n2 = vm[1] * dm1 - vm1[1] * dm;
    Ok((n1 / pm.m11, n2 / pm.m21))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSeq {
    /// `(n, S_n)` for `n = 0..=nmax`, from `S_n = 1 + ϱ(A_n)S_{n−1}`.
    pub s: Vec<(usize, f64)>,
    pub ln_s: Vec<f64>,
    /// Largest relative gap between the recurrence and the defining ratio
    /// `Σ_{k=1}^{n+1}Π_{i<k}ϱ(A_i)^{−1} / Π_{i≤n}ϱ(A_i)^{−1}`.
    pub recurrence_dev: f64,
    /// `(n, D_n/S_n)` and `(n, S_{n−1}/S_n)` on a doubling grid.
    pub phi1: Vec<(usize, f64)>,
    pub phi2: Vec<(usize, f64)>,
    pub phi1_hat: Stabilized,
    pub phi2_hat: Stabilized,
}

pub fn s_sequence(env: &EnvFamily, nmax: usize) -> Result<SSeq> {
    if nmax < 2 {
        return Err(Error::InvalidRange { k: 2, n: nmax });
    }
    let mut ln_s = vec![0.0];
    let mut prefix = 0.0; // −Σ_{i<k} ln ϱ_i
    let mut num = LogSum::default();
    num.add_ln(0.0);
    let mut recurrence_dev: f64 = 0.0;
    for n in 1..=nmax {
        let lr = matprod::transformed_radius(env, n)?.rho.ln();
        let next = series::log_add_exp(0.0, lr + ln_s[n - 1]);
        prefix -= lr;
        num.add_ln(prefix);
        let direct = num.ln() - prefix;
        recurrence_dev = recurrence_dev.max((next - direct).exp_m1().abs());
        ln_s.push(next);
    }
    let mut phi1 = Vec::new();
    let mut phi2 = Vec::new();
    let mut n = 2;
    loop {
        phi1.push((n, (ln_d(env, n)? - ln_s[n]).exp()));
        phi2.push((n, (ln_s[n - 1] - ln_s[n]).exp()));
        if n == nmax {
            break;
        }
        n = (2 * n).min(nmax);
    }
    Ok(SSeq {
        s: ln_s.iter().enumerate().map(|(n, l)| (n, l.exp())).collect(),
        ln_s,
        recurrence_dev,
        phi1_hat: series::stabilize(&phi1, 1e-3),
        phi2_hat: series::stabilize(&phi2, 1e-3),
        phi1,
        phi2,
    })
}

/// One row of the extinction curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub surv1: f64,
    pub surv2: f64,
    pub pmf1: f64,
    pub pmf2: f64,
    /// `Σ_{k=1}^{n+1} Π_{i<k} ϱ(M_i)^{−1}`.
    pub sum_inv_rho_prod: f64,
    /// `Π_{i≤n} ϱ(M_i)^{−1}`.
    pub inv_rho_prod: f64,
    pub kappa1_hat: f64,
    pub kappa2_hat: f64,
    pub varkappa1_hat: f64,
    pub varkappa2_hat: f64,
}

impl CurveRow {
    pub const HEADER: [&'static str; 11] = [
        "n",
        "surv1",
        "surv2",
        "pmf1",
        "pmf2",
        "sum_inv_rho_prod",
        "inv_rho_prod",
        "kappa1_hat",
        "kappa2_hat",
        "varkappa1_hat",
        "varkappa2_hat",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.surv1,
            self.surv2,
            self.pmf1,
            self.pmf2,
            self.sum_inv_rho_prod,
            self.inv_rho_prod,
            self.kappa1_hat,
            self.kappa2_hat,
            self.varkappa1_hat,
            self.varkappa2_hat,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionCurve {
    pub rows: Vec<CurveRow>,
}

/// `ln Σ_{k=1}^{n+1}Π_{i<k}ϱ(M_i)^{−1}` and `ln Π_{i≤n}ϱ(M_i)^{−1}`.
fn ln_radius_sums(env: &EnvFamily, n: usize) -> Result<(f64, f64)> {
    // mantissa/exponent products keep the error at a few ulps per factor,
    // where summed logarithms would lose digits in proportion to n
    let mut prod = Scaled::new(1.0);
    let mut sum = Scaled::new(1.0);
    for i in 1..=n {
        prod.v /= matprod::mean_radius(env, i)?.rho;
        prod.norm();
        sum.add(prod.v, prod.e);
    }
    Ok((sum.ln(), prod.ln()))
}

/// Signed `s(n−1) − s(n)` as `(sign, ln |·|)`, without the consistency check.
fn signed_difference(prev: f64, cur: f64) -> (f64, f64) {
    if cur == prev {
        (0.0, f64::NEG_INFINITY)
    } else if cur < prev {
        (1.0, prev + (-(cur - prev).exp_m1()).ln())
    } else {
        (-1.0, cur + (-(prev - cur).exp_m1()).ln())
    }
}

fn curve_row(env: &EnvFamily, n: usize, strict: bool) -> Result<CurveRow> {
    let cur = survival_backward(env, n)?;
    let diffs = if n == 0 {
        [(0.0, f64::NEG_INFINITY); 2]
    } else {
        let prev = survival_backward(env, n - 1)?;
        if strict {
            pmf_from(&prev, &cur)?;
        }
        [
            signed_difference(prev.ln_s1, cur.ln_s1),
            signed_difference(prev.ln_s2, cur.ln_s2),
        ]
    };
    let (ls, lp) = ln_radius_sums(env, n)?;
    let pmf = |(sg, l): (f64, f64)| sg * l.exp();
    let vk = |(sg, l): (f64, f64)| sg * (l + 2.0 * ls - lp).exp();
    Ok(CurveRow {
        n,
        surv1: cur.s1,
        surv2: cur.s2,
        pmf1: pmf(diffs[0]),
        pmf2: pmf(diffs[1]),
        sum_inv_rho_prod: ls.exp(),
        inv_rho_prod: lp.exp(),
        kappa1_hat: (cur.ln_s1 + ls).exp(),
        kappa2_hat: (cur.ln_s2 + ls).exp(),
        varkappa1_hat: vk(diffs[0]),
        varkappa2_hat: vk(diffs[1]),
    })
}

fn rows(env: &EnvFamily, grid: &[usize], strict: bool) -> Result<Vec<CurveRow>> {
    grid.par_iter().map(|&n| curve_row(env, n, strict)).collect()
}

/// Rows for each horizon in `grid`, computed independently in parallel.
///
/// Fails with [`Error::InconsistentCurve`] when a difference of survival
/// values is negative beyond [`PMF_SLACK`].
pub fn extinction_curve(env: &EnvFamily, grid: &[usize]) -> Result<ExtinctionCurve> {
    Ok(ExtinctionCurve {
        rows: rows(env, grid, true)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    /// `ϰ̂(2n)/ϰ̂(n) < 0.9` over three successive doublings.
    Vanishing,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub sequence: Vec<(usize, f64)>,
    pub estimate: Stabilized,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub kappa: [ConstantEstimate; 2],
    pub varkappa: [ConstantEstimate; 2],
    /// `ϰ̂_i` at `n = 2, 4, 8, 16`.
    pub trend: [Vec<(usize, f64)>; 2],
    /// First horizon where a survival difference is negative beyond the
    /// slack; the parameters then do not define a probability law and the
    /// estimates are formula values only.
    pub inconsistent_at: Option<usize>,
}

fn vanishing(trend: &[(usize, f64)]) -> bool {
    trend.windows(2).all(|w| {
        let (x, y) = (w[0].1, w[1].1);
        (x == 0.0 && y == 0.0) || (x != 0.0 && (y / x).abs() < 0.9)
    })
}

pub fn estimate_constants(env: &EnvFamily, grid: &[usize]) -> Result<ConstantsReport> {
    estimate_constants_with(env, grid, 1e-3)
}

pub fn estimate_constants_with(
    env: &EnvFamily,
    grid: &[usize],
    threshold: f64,
) -> Result<ConstantsReport> {
    let p = env.base();
    if p.det_gap() == 0.0 {
        return Err(Error::ExcludedParameters("bd = aθ".into()));
    }
    let (_, r1) = env::limit_eigenvalues(&p)?;
    if r1.abs() >= 1.0 {
        return Err(Error::Precondition(format!("|ϱ₁| = {} is not below 1", r1.abs())));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.first() == Some(&0) {
        return Err(Error::InvalidRange {
            k: grid.first().copied().unwrap_or(0),
            n: grid.last().copied().unwrap_or(0),
        });
    }
    let curve = rows(env, grid, false)?;
    let trend_rows = rows(env, &[2, 4, 8, 16], false)?;
    let inconsistent_at = curve
        .iter()
        .chain(&trend_rows)
        .filter(|r| r.pmf1 < -PMF_SLACK || r.pmf2 < -PMF_SLACK)
        .map(|r| r.n)
        .min();
    let pick = |rows: &[CurveRow], f: fn(&CurveRow) -> f64| -> Vec<(usize, f64)> {
        rows.iter().map(|r| (r.n, f(r))).collect()
    };
    let trend = [
        pick(&trend_rows, |r| r.varkappa1_hat),
        pick(&trend_rows, |r| r.varkappa2_hat),
    ];
    let make = |seq: Vec<(usize, f64)>, trend: Option<&[(usize, f64)]>| {
        let estimate = series::stabilize(&seq, threshold);
        let verdict = if trend.is_some_and(vanishing) {
            Verdict::Vanishing
        } else if estimate.stabilized {
            Verdict::Converged
        } else {
            Verdict::Inconclusive
        };
        ConstantEstimate {
            sequence: seq,
            estimate,
            verdict,
        }
    };
    Ok(ConstantsReport {
        kappa: [
            make(pick(&curve, |r| r.kappa1_hat), None),
            make(pick(&curve, |r| r.kappa2_hat), None),
        ],
        varkappa: [
            make(pick(&curve, |r| r.varkappa1_hat), Some(&trend[0])),
            make(pick(&curve, |r| r.varkappa2_hat), Some(&trend[1])),
        ],
        trend,
        inconsistent_at,
    })
}

/// Horizons `1, 2, 4, …` up to and including `nmax`.
pub fn doubling_grid(nmax: usize) -> Vec<usize> {
    let mut g = Vec::new();
    let mut n = 1;
    while n < nmax {
        g.push(n);
        n *= 2;
    }
    if nmax > 0 {
        g.push(nmax);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Continuation, Fixture, Params};
    use approx::assert_relative_eq;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn star_closed_forms() {
        let env = Fixture::EStar.build();
        let s0 = survival_backward(&env, 0).unwrap();
        assert_eq!((s0.s1, s0.s2), (1.0, 1.0));
        for n in 1..=30 {
            let s = survival_backward(&env, n).unwrap();
            let c = 2f64.powi(n as i32 + 1) - 1.0;
            assert!((s.s1 * c - 1.0).abs() < 1e-12 && (s.s2 * c - 1.0).abs() < 1e-12);
        }
        let m = survival_matrix(&env, 10).unwrap();
        assert_relative_eq!(m.s2, 1.0 / 2047.0, max_relative = 1e-13);
        let p = extinction_pmf(&env, 3).unwrap();
        assert_relative_eq!(p.p2, 8.0 / 105.0, max_relative = 1e-13);
        assert_relative_eq!(p.p2_product, 8.0 / 105.0, max_relative = 1e-12);
        let p = extinction_pmf(&env, 1).unwrap();
        assert_relative_eq!(p.p1, 2.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn small_horizon_values() {
        for (f, s) in [
            (Fixture::EMinus, (0.375, 0.25)),
            (Fixture::ETriUp, (0.3443, 0.3279)),
            (Fixture::ETriDown, (0.3846, 0.2462)),
        ] {
            let v = survival_backward(&f.build(), 1).unwrap();
            assert!((v.s1 - s.0).abs() < 1e-4 && (v.s2 - s.1).abs() < 1e-4, "{f} {v:?}");
        }
    }

    #[test]
    fn methods_agree_on_fixtures() {
        for f in Fixture::ALL {
            let env = f.build();
            for n in [1, 2, 5, 17, 100, 300] {
                let b = survival_backward(&env, n).unwrap();
                let m = survival_matrix(&env, n).unwrap();
                let t = survival_transformed(&env, n).unwrap();
                for ty in [1, 2] {
                    assert!((b.ln(ty) - m.ln(ty)).abs() < 1e-9, "{f} n={n}");
                    assert!((m.ln(ty) - t.ln(ty)).abs() < 1e-10, "{f} n={n}");
                }
            }
        }
    }

    #[test]
    fn deep_horizon_stays_in_log_range() {
        let env = Fixture::EStar.build();
        let b = survival_backward(&env, 3000).unwrap();
        let m = survival_matrix(&env, 3000).unwrap();
        assert_relative_eq!(b.ln_s1, -3001.0 * LN_2, max_relative = 1e-12);
        assert_relative_eq!(m.ln_s2, -3001.0 * LN_2, max_relative = 1e-12);
        assert_eq!(b.s1, 0.0);
        let p = extinction_pmf(&env, 3000).unwrap();
        assert_relative_eq!(p.ln_p1, -3001.0 * LN_2, max_relative = 1e-12);
    }

    #[test]
    fn pmf_product_form_matches_differencing() {
        for f in [Fixture::ETriUp, Fixture::ETriDown, Fixture::EMinus] {
            let env = f.build();
            for n in [1, 2, 3, 10, 40] {
                let p = extinction_pmf(&env, n).unwrap();
                assert!(rel(p.p2_product, p.p2) < 1e-9, "{f} n={n}: {p:?}");
            }
        }
    }

    #[test]
    fn g_sequence_limits_and_coherence() {
        let env = Fixture::EStar.build();
        let g = g_sequences(&env, 200).unwrap();
        assert_relative_eq!(g.g_limit.unwrap(), 1.4, epsilon = 1e-14);
        assert_relative_eq!(g.h_limit.unwrap(), -0.1, epsilon = 1e-14);
        assert_relative_eq!(g.f_limit.unwrap(), 0.6, epsilon = 1e-14);
        assert!((g.g1[199] - 1.4).abs() < 1e-6 && (g.g2[199] - 1.4).abs() < 1e-6);
        assert!((g.h[199] + 0.1).abs() < 1e-6);
        for f in [Fixture::ETriUp, Fixture::ETriDown, Fixture::EMinus] {
            let env = f.build();
            let g = g_sequences(&env, 200).unwrap();
            assert!(g.max_g2_dev < 1e-10, "{f}: {}", g.max_g2_dev);
            let lim = g.g_limit.unwrap();
            assert!((g.g1[199] - lim).abs() < 1e-6, "{f}");
            assert!((g.g2[199] - lim).abs() < 1e-6, "{f}");
            assert!((g.h[199] - g.h_limit.unwrap()).abs() < 1e-6, "{f}");
        }
        let deg = g_sequences(&Fixture::EDeg.build(), 200).unwrap();
        assert!(deg.g_limit.unwrap().abs() < 1e-10);
    }

    #[test]
    fn g_product_form_matches_literal_differences() {
        for f in [Fixture::ETriUp, Fixture::ETriDown, Fixture::EMinus, Fixture::EDeg] {
            let env = f.build();
            let g = g_sequences(&env, 12).unwrap();
            for m in 1..=12 {
                let (l1, l2) = g_pair_literal(&env, m).unwrap();
                assert!((g.g1[m - 1] - l1).abs() < 1e-9 * l1.abs().max(1.0), "{f} m={m}");
                assert!((g.g2[m - 1] - l2).abs() < 1e-9 * l2.abs().max(1.0), "{f} m={m}");
            }
        }
    }

    #[test]
    fn h_recursion_matches_sum() {
        for f in Fixture::ALL {
            let env = f.build();
            let g = g_sequences(&env, 60).unwrap();
            for n in 1..=60 {
                let c = h_closed_sum(&env, n).unwrap();
                assert!((c - g.h[n - 1]).abs() <= 1e-12 * c.abs().max(1.0), "{f} n={n}");
            }
        }
    }

    #[test]
    fn excluded_parameters() {
        let p = Params::new(0.2, 0.3, 0.2, 0.3);
        let env = EnvFamily::constant(p).unwrap();
        assert!(matches!(g_sequences(&env, 10), Err(Error::ExcludedParameters(_))));
        assert!(matches!(estimate_constants(&env, &[1, 2]), Err(Error::ExcludedParameters(_))));
    }

    #[test]
    fn s_sequence_cases() {
        let s = s_sequence(&Fixture::EStar.build(), 64).unwrap();
        for (n, v) in &s.s {
            let expect = (2f64.powi(*n as i32 + 1) - 1.0) / 2f64.powi(*n as i32);
            assert_relative_eq!(*v, expect, max_relative = 1e-13);
        }
        assert!(s.recurrence_dev < 1e-12);
        assert!(s.phi2_hat.stabilized);
        assert_relative_eq!(s.phi2_hat.last, 1.0, epsilon = 1e-12);
        assert!(s.phi1_hat.stabilized);

        // A = [[1, 0.5], [0, 0]]: ϱ = 1
        let p = Params::new(0.5, 0.5, 0.5, 0.5);
        let rows = vec![p; 40];
        let env = EnvFamily::table(p, rows, Continuation::Base).unwrap();
        let s = s_sequence(&env, 30).unwrap();
        for (n, v) in &s.s {
            assert_relative_eq!(*v, *n as f64 + 1.0, max_relative = 1e-12);
        }
        assert!((s.phi2.last().unwrap().1 - 30.0 / 31.0).abs() < 1e-12);
    }

    #[test]
    fn constants_on_fixtures() {
        let env = Fixture::EStar.build();
        let grid = doubling_grid(1024);
        let r = estimate_constants(&env, &grid).unwrap();
        for (n, k) in &r.kappa[0].sequence {
            assert!((k - 1.0).abs() < 1e-12, "n={n}");
        }
        for (n, v) in &r.varkappa[1].sequence {
            let t = 2f64.powi(*n as i32);
            assert!(rel(*v, 2.0 + 1.0 / (t - 1.0)) < 1e-9, "n={n}");
        }
        assert_eq!(r.varkappa[0].verdict, Verdict::Converged);

        let r = estimate_constants(&Fixture::ETriUp.build(), &grid).unwrap();
        assert_eq!(r.kappa[0].verdict, Verdict::Converged);
        assert!((r.varkappa[0].estimate.last - 2.035).abs() < 1e-3);
        assert!((r.kappa[1].estimate.last - 0.9763).abs() < 1e-3);

        let deg_env = Fixture::EDeg.build();
        assert!(matches!(
            extinction_pmf(&deg_env, 1),
            Err(Error::InconsistentCurve { n: 1, ty: 2, .. })
        ));
        let deg = estimate_constants(&deg_env, &grid[1..]).unwrap();
        assert_eq!(deg.inconsistent_at, Some(2));
        assert_eq!(deg.varkappa[0].verdict, Verdict::Vanishing);
        assert_eq!(deg.varkappa[1].verdict, Verdict::Vanishing);
    }

    #[test]
    fn curve_is_monotone_and_proper() {
        for f in Fixture::ALL {
            let grid: Vec<usize> = (0..=80).collect();
            if f == Fixture::EDeg {
                // not a probability law: the one-step "survival" for type 2 is 3.3/1.4
                assert!(extinction_curve(&f.build(), &grid).is_err());
                continue;
            }
            let c = extinction_curve(&f.build(), &grid).unwrap();
            let mut total = [0.0, 0.0];
            for w in c.rows.windows(2) {
                assert!(w[1].surv1 <= w[0].surv1 && w[1].surv2 <= w[0].surv2);
                assert!(w[1].pmf1 >= -PMF_SLACK && w[1].pmf2 >= -PMF_SLACK);
                total[0] += w[1].pmf1;
                total[1] += w[1].pmf2;
            }
            assert!(total[0] <= 1.0 + 1e-12 && total[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn grid_helper() {
        assert_eq!(doubling_grid(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(doubling_grid(8), vec![1, 2, 4, 8]);
    }
}
