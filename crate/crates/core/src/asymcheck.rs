//! Numerical checks of the limit statements for products of the `A_k`,
//! their continued-fraction counterparts and the auxiliary bounds.
//!
//! Every check produces a [`LimitDiagnostic`]: an index/value sequence, a
//! stabilized limit estimate, and a list of violations (empty when the
//! statement holds numerically).

use serde::{Deserialize, Serialize};

use crate::cfrac::{self, CfCoeffs, TailOptions};
use crate::env::{self, EnvFamily};
use crate::error::{Error, Result};
use crate::matprod::{self, ScaledMat, Which};
use crate::series::{self, binary_exponent, ldexp, LogSum};

/// Relative change over the last doubling below which a sequence counts as
/// stabilized.
pub const STABLE: f64 = 1e-3;
/// "Bounded away from zero" threshold.
pub const NONZERO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lower: f64,
    pub upper: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDiagnostic {
    pub name: String,
    pub sequence: Vec<(usize, f64)>,
    pub limit_estimate: f64,
    pub aitken: Option<f64>,
    pub variation: f64,
    pub stabilized: bool,
    pub bound_check: Option<BoundCheck>,
    /// Closed-form value the limit should match, when one is known.
    pub reference: Option<f64>,
    pub violations: Vec<String>,
}

impl LimitDiagnostic {
    pub fn from_sequence(name: impl Into<String>, sequence: Vec<(usize, f64)>) -> Self {
        let s = series::stabilize(&sequence, STABLE);
        LimitDiagnostic {
            name: name.into(),
            sequence,
            limit_estimate: s.last,
            aitken: s.aitken,
            variation: s.variation,
            stabilized: s.stabilized,
            bound_check: None,
            reference: None,
            violations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn require_nonzero(&mut self) {
        if self.stabilized && self.limit_estimate.abs() <= NONZERO {
            self.violations
                .push(format!("limit {:e} not bounded away from 0", self.limit_estimate));
        }
    }

    fn with_reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }
}

/// Horizons `1..=32`, then 16 geometrically spaced points per doubling, up
/// to and including `nmax`.
pub fn grid(nmax: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (1..=nmax.min(32)).collect();
    let mut x = 32.0f64;
    let step = 2f64.powf(1.0 / 16.0);
    loop {
        x *= step;
        let n = x.round() as usize;
        if n >= nmax {
            break;
        }
        if g.last().is_none_or(|&l| n > l) {
            g.push(n);
        }
    }
    if g.last() != Some(&nmax) && nmax > 0 {
        g.push(nmax);
    }
    g
}

fn ln_rho(env: &EnvFamily, k: usize, which: Which) -> Result<f64> {
    let sp = match which {
        Which::Mean => matprod::mean_radius(env, k)?,
        Which::Transformed => matprod::transformed_radius(env, k)?,
    };
    Ok(sp.rho.ln())
}

/// `m ↦ e_iA_k⋯A_me_jᵗ / ϱ(A_k)⋯ϱ(A_m)` for `m = k..=nmax`.
fn entry_over_radii(env: &EnvFamily, k: usize, i: usize, j: usize, nmax: usize) -> Result<Vec<(usize, f64)>> {
    let mut p = ScaledMat::identity_at(k);
    let mut ln_prod = 0.0;
    let mut out = Vec::with_capacity(nmax + 1 - k.min(nmax));
    for m in k..=nmax {
        p.push_right(&matprod::transformed_matrix(env, m)?)?;
        ln_prod += ln_rho(env, m, Which::Transformed)?;
        let e = p.entry_log(i, j);
        out.push((m, e.sign as f64 * (e.ln_abs - ln_prod).exp()));
    }
    Ok(out)
}

/// Limit of `e_iA_k⋯A_me_jᵗ / Π_{l=k}^m ϱ(A_l)`, required to be nonzero.
pub fn mpr_constant(env: &EnvFamily, k: usize, i: usize, j: usize, nmax: usize) -> Result<LimitDiagnostic> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    if !(1..=2).contains(&i) || !(1..=2).contains(&j) || nmax < k {
        return Err(Error::InvalidRange { k, n: nmax });
    }
    let seq = entry_over_radii(env, k, i, j, nmax)?;
    let mut d = LimitDiagnostic::from_sequence(format!("mpr_k{k}_i{i}_j{j}"), seq);
    d.require_nonzero();
    Ok(d)
}

fn ensure_gap(env: &EnvFamily) -> Result<()> {
    if env.base().det_gap() == 0.0 {
        return Err(Error::ExcludedParameters("bd = aθ".into()));
    }
    Ok(())
}

/// `ln Σ_{k=1}^{n+1} e₁A_k⋯A_ne₁ᵗ`, accumulated from `k = n + 1` down.
fn ln_top_left_sum(env: &EnvFamily, n: usize) -> Result<f64> {
    let mut v = [1.0f64, 0.0];
    let mut e: i64 = 0;
    let mut sum = LogSum::default();
    sum.add_ln(0.0);
    for k in (1..=n).rev() {
        v = matprod::transformed_matrix(env, k)?.apply(v);
        let mx = v[0].abs().max(v[1].abs());
        if !(mx.is_finite() && mx > 0.0) {
            return Err(Error::ScalingFailure(k));
        }
        let b = binary_exponent(mx);
        v = [ldexp(v[0], -b), ldexp(v[1], -b)];
        e += b as i64;
        if v[0] <= 0.0 {
            return Err(Error::Precondition(format!(
                "e₁A_{k}⋯A_{n}e₁ᵗ is not positive"
            )));
        }
        sum.add_ln(v[0].ln() + e as f64 * std::f64::consts::LN_2);
    }
    Ok(sum.ln())
}

/// `n ↦ Σ_{k=1}^{n+1} e₁A_k⋯A_ne₁ᵗ / Σ_{k=1}^{n+1} ϱ(A_k)⋯ϱ(A_n)`.
pub fn thm_s_ratio(env: &EnvFamily, nmax: usize) -> Result<LimitDiagnostic> {
    ensure_gap(env)?;
    let lr: Vec<f64> = (1..=nmax)
        .map(|k| ln_rho(env, k, Which::Transformed))
        .collect::<Result<_>>()?;
    let mut seq = Vec::new();
    for n in grid(nmax) {
        let num = ln_top_left_sum(env, n)?;
        let mut den = LogSum::default();
        let mut run = 0.0;
        den.add_ln(0.0);
        for k in (1..=n).rev() {
            run += lr[k - 1];
            den.add_ln(run);
        }
        seq.push((n, (num - den.ln()).exp()));
    }
    let mut d = LimitDiagnostic::from_sequence("thm_s", seq);
    d.require_nonzero();
    Ok(d)
}

/// Signed log-sum of `±e^{x}` terms.
#[derive(Default)]
struct SignedLn {
    ln_abs: f64,
    sign: f64,
}

impl SignedLn {
    fn one() -> Self {
        SignedLn { ln_abs: 0.0, sign: 1.0 }
    }

    fn mul(&mut self, x: f64) {
        self.ln_abs += x.abs().ln();
        self.sign *= x.signum();
    }
}

/// Sum of terms given as `(sign, ln |·|)`.
fn signed_sum(terms: &[(f64, f64)]) -> (f64, f64) {
    let hi = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return (0.0, f64::NEG_INFINITY);
    }
    let s: f64 = terms.iter().map(|(sg, l)| sg * (l - hi).exp()).sum();
    (s.signum(), s.abs().ln() + hi)
}

/// The three ratios between approximant products and their limits:
/// `Πξ_{k,n}·Πϱ(A_k)`, `Πξ_{k,n}/Πξ_k` and
/// `Σ_k Π_{j<k}ξ_{j,n} / Σ_k Π_{j<k}ξ_j`.
pub fn xias_ratios(env: &EnvFamily, nmax: usize) -> Result<[LimitDiagnostic; 3]> {
    ensure_gap(env)?;
    let c = CfCoeffs::product_ratio(env);
    let tails: Vec<f64> = cfrac::tails(&c, nmax, &TailOptions::default())?
        .into_iter()
        .map(|t| t.value)
        .collect();
    let lr: Vec<f64> = (1..=nmax)
        .map(|k| ln_rho(env, k, Which::Transformed))
        .collect::<Result<_>>()?;
    let (mut s1, mut s2, mut s3) = (Vec::new(), Vec::new(), Vec::new());
    for n in grid(nmax) {
        let xi = cfrac::approximants_to(&c, n)?;
        let mut px = SignedLn::one();
        let mut pt = SignedLn::one();
        let mut terms_x = vec![(1.0, 0.0)];
        let mut terms_t = vec![(1.0, 0.0)];
        for k in 1..=n {
            px.mul(xi[k - 1]);
            pt.mul(tails[k - 1]);
            terms_x.push((px.sign, px.ln_abs));
            terms_t.push((pt.sign, pt.ln_abs));
        }
        let ln_r: f64 = lr[..n].iter().sum();
        s1.push((n, px.sign * (px.ln_abs + ln_r).exp()));
        s2.push((n, px.sign * pt.sign * (px.ln_abs - pt.ln_abs).exp()));
        let (sx, lx) = signed_sum(&terms_x);
        let (st, lt) = signed_sum(&terms_t);
        s3.push((n, sx * st * (lx - lt).exp()));
    }
    let mut out = [
        LimitDiagnostic::from_sequence("xias_r1", s1),
        LimitDiagnostic::from_sequence("xias_r2", s2),
        LimitDiagnostic::from_sequence("xias_r3", s3),
    ];
    for d in &mut out {
        d.require_nonzero();
    }
    // below 1 whenever the approximants increase towards their tails
    let r2 = &mut out[1];
    let (lo, hi) = r2
        .sequence
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    r2.bound_check = Some(BoundCheck {
        lower: lo,
        upper: hi,
        violated: lo <= 0.0,
    });
    if lo <= 0.0 {
        r2.violations.push(format!("ratio reaches {lo:e}"));
    }
    Ok(out)
}

/// `x_{k,m} = e₁A_k⋯A_me₁ᵗ/Πϱ(A)` must stay in a compact subset of
/// `(0, ∞)`; also returns `Πϱ(A)/Πϱ(M)` and the ratio of the sums of
/// inverse radius products, with their limits `𝒞̂_k`, `ℬ̂_k`.
pub fn lwb_bma_bounds(env: &EnvFamily, k: usize, nmax: usize) -> Result<[LimitDiagnostic; 3]> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    if nmax < k {
        return Err(Error::InvalidRange { k, n: nmax });
    }
    let x = entry_over_radii(env, k, 1, 1, nmax)?;
    let mut lwb = LimitDiagnostic::from_sequence(format!("lwb_k{k}"), x);
    let (lo, hi) = lwb
        .sequence
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let violated = !(lo > 0.0 && hi.is_finite());
    lwb.bound_check = Some(BoundCheck {
        lower: lo,
        upper: hi,
        violated,
    });
    if violated {
        lwb.violations.push(format!("x_(k,m) range [{lo:e}, {hi:e}]"));
    }

    let (mut c_seq, mut b_seq) = (Vec::new(), Vec::new());
    let (mut la, mut lm) = (0.0, 0.0);
    let (mut sa, mut sm) = (LogSum::default(), LogSum::default());
    sa.add_ln(0.0);
    sm.add_ln(0.0);
    for n in k..=nmax {
        la += ln_rho(env, n, Which::Transformed)?;
        lm += ln_rho(env, n, Which::Mean)?;
        sa.add_ln(-la);
        sm.add_ln(-lm);
        c_seq.push((n, (la - lm).exp()));
        b_seq.push((n, (sa.ln() - sm.ln()).exp()));
    }
    let mut c = LimitDiagnostic::from_sequence(format!("bma_c_k{k}"), c_seq);
    let mut b = LimitDiagnostic::from_sequence(format!("bma_b_k{k}"), b_seq);
    c.require_nonzero();
    b.require_nonzero();
    Ok([lwb, c, b])
}

/// `v_n = (ϱ(M_n) − θ_n, d_n)`, right Perron vector of `M_n`.
fn perron_vector(env: &EnvFamily, n: usize) -> Result<[f64; 2]> {
    let p = env.params_at(n)?;
    let r = matprod::mean_radius(env, n)?.rho;
    Ok([r - p.theta, p.d])
}

/// `ϱ(M_k⋯M_m)/Πϱ(M_i)` for `m' = k..=m`, each checked against the
/// Collatz–Wielandt bounds
/// `ζ_{k,m'} = Π_{j=k}^{m'−1}(v_{j+1}/v_j)_min · (v_k/v_{m'})_min` and
/// `γ_{k,m'}` (same with max).
pub fn rfm_bound(env: &EnvFamily, k: usize, m: usize) -> Result<LimitDiagnostic> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    if m < k {
        return Err(Error::InvalidRange { k, n: m });
    }
    let slack = 1e-12;
    let vk = perron_vector(env, k)?;
    let mut prev = vk;
    let (mut ln_zeta, mut ln_gamma) = (0.0, 0.0);
    let mut p = ScaledMat::identity_at(k);
    let mut ln_prod = 0.0;
    let mut seq = Vec::new();
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut violations = Vec::new();
    for j in k..=m {
        let vj = perron_vector(env, j)?;
        if j > k {
            let r = [vj[0] / prev[0], vj[1] / prev[1]];
            ln_zeta += r[0].min(r[1]).ln();
            ln_gamma += r[0].max(r[1]).ln();
        }
        prev = vj;
        p.push_right(&matprod::mean_matrix(env, j)?)?;
        ln_prod += ln_rho(env, j, Which::Mean)?;
        let (lr, _) = matprod::product_spectral_radius(&p);
        let ratio = (lr - ln_prod).exp();
        let end = [vk[0] / vj[0], vk[1] / vj[1]];
        lo = (ln_zeta + end[0].min(end[1]).ln()).exp();
        hi = (ln_gamma + end[0].max(end[1]).ln()).exp();
        if ratio < lo * (1.0 - slack) || ratio > hi * (1.0 + slack) {
            violations.push(format!("m={j}: {ratio:e} outside [{lo:e}, {hi:e}]"));
        }
        seq.push((j, ratio));
    }
    let mut d = LimitDiagnostic::from_sequence(format!("rfm_k{k}"), seq);
    d.bound_check = Some(BoundCheck {
        lower: lo,
        upper: hi,
        violated: !violations.is_empty(),
    });
    d.violations = violations;
    Ok(d)
}

/// `1 + bϱ^{−1}ξ_k` with `ξ_k` the entry-ratio tail.
pub fn ral_limit(env: &EnvFamily, k: usize) -> Result<f64> {
    let p = env.base();
    let (rho, _) = env::limit_eigenvalues(&p)?;
    let xi = cfrac::tail(&CfCoeffs::entry_ratio(env), k, &TailOptions::default())?.value;
    Ok(1.0 + p.b / rho * xi)
}

/// `φ_k = L/(L + bϱ^{−1}(θ_k/b_k − θ/b))`, `L = 1 + bϱ^{−1}ξ_k`.
pub fn ff_limit(env: &EnvFamily, k: usize) -> Result<f64> {
    let p = env.base();
    let (rho, _) = env::limit_eigenvalues(&p)?;
    let pk = env.params_at(k)?;
    let l = ral_limit(env, k)?;
    Ok(l / (l + p.b / rho * (pk.theta / pk.b - p.theta / p.b)))
}

/// `ϱ(A_k⋯A_m)/e₁A_k⋯A_me₁ᵗ → 1 + bϱ^{−1}ξ_k` and
/// `ϱ(A_k⋯A_m)/ϱ(M_k⋯M_m) → φ_k`.
pub fn ral_ff_limits(env: &EnvFamily, k: usize, nmax: usize) -> Result<[LimitDiagnostic; 2]> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    if nmax < k {
        return Err(Error::InvalidRange { k, n: nmax });
    }
    let ral_ref = ral_limit(env, k)?;
    if ral_ref <= 0.0 {
        return Err(Error::Precondition(format!(
            "1 + bϱ⁻¹ξ_{k} = {ral_ref} is not positive"
        )));
    }
    let ff_ref = ff_limit(env, k)?;
    let mut pa = ScaledMat::identity_at(k);
    let mut pm = ScaledMat::identity_at(k);
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for m in k..=nmax {
        pa.push_right(&matprod::transformed_matrix(env, m)?)?;
        pm.push_right(&matprod::mean_matrix(env, m)?)?;
        let (ra, _) = matprod::product_spectral_radius(&pa);
        let (rm, _) = matprod::product_spectral_radius(&pm);
        let e = pa.entry_log(1, 1);
        s1.push((m, e.sign as f64 * (ra - e.ln_abs).exp()));
        s2.push((m, (ra - rm).exp()));
    }
    let mut ral = LimitDiagnostic::from_sequence(format!("ral_k{k}"), s1).with_reference(ral_ref);
    let mut ff = LimitDiagnostic::from_sequence(format!("ff_k{k}"), s2).with_reference(ff_ref);
    for d in [&mut ral, &mut ff] {
        d.require_nonzero();
        let r = d.reference.unwrap();
        if d.stabilized && (d.limit_estimate - r).abs() > 1e-6 * r.abs().max(1.0) {
            d.violations
                .push(format!("limit {:e} differs from {:e}", d.limit_estimate, r));
        }
    }
    Ok([ral, ff])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiDxrReport {
    /// `n ↦ max_k (ξ_k − ξ_{k,n})/(ξ_{k+1} − ξ_{k+1,n})` over `burn_in ≤ k < n`.
    pub diagnostic: LimitDiagnostic,
    /// Pairs `(k, n)` with `ξ_{k,n+1} ≤ ξ_{k,n}`.
    pub monotonicity_violations: usize,
    /// Pairs `(k, n)` with `ξ_{k,n} ≥ ξ_k` beyond rounding.
    pub bound_violations: usize,
    pub r_hat: f64,
    /// `−ξ/(α + ξ)` from the limit coefficients.
    pub r_analytic: f64,
    pub burn_in: usize,
    /// `(n, ξ_{n,n}, ξ_n)`.
    pub diagonal: Vec<(usize, f64, f64)>,
}

/// First `k` with `1 + bϱ^{−1}ξ̂_k > 0.1` (entry-ratio tail) and
/// `ξ_k − ξ_{k,k} > 0` (product-ratio coefficients).
pub fn burn_in(env: &EnvFamily, kmax: usize) -> Result<usize> {
    let c = CfCoeffs::product_ratio(env);
    for k in 1..=kmax {
        let gap = cfrac::tail(&c, k, &TailOptions::default())?.value - cfrac::approximant(&c, k, k)?;
        if ral_limit(env, k)? > 0.1 && gap > 0.0 {
            return Ok(k);
        }
    }
    Err(Error::Precondition(format!("no burn-in index up to {kmax}")))
}

/// Monotonicity of the approximants, the bound `ξ_{k,n} < ξ_k`, and the
/// geometric contraction of the gaps, for environments with `d̃_k < 0`.
pub fn mi_dxr_report(env: &EnvFamily, kmax: usize, nmax: usize) -> Result<MiDxrReport> {
    if kmax == 0 || nmax < kmax {
        return Err(Error::InvalidRange { k: kmax, n: nmax });
    }
    let precondition = || Error::Precondition("d̃<0 fails".into());
    if env.transformed_limit().d >= 0.0 {
        return Err(precondition());
    }
    for k in 1..=nmax + 1 {
        if env.transformed_at(k)?.d >= 0.0 {
            return Err(precondition());
        }
    }
    let c = CfCoeffs::product_ratio(env);
    let opts = TailOptions::default();
    let burn = burn_in(env, kmax)?;
    // the gaps are suffix sums of Euler–Minding increments run well past nmax
    let horizon = nmax + 200;
    let rows: Vec<_> = (1..=kmax + 1)
        .map(|k| cfrac::euler_minding(&c, k, horizon))
        .collect::<Result<_>>()?;
    let tails: Vec<f64> = cfrac::tails(&c, nmax, &opts)?.into_iter().map(|t| t.value).collect();

    let mut mono = 0;
    let mut bound = 0;
    // gaps[k-1][n-k] = ξ_k − ξ_{k,n}
    let mut gaps: Vec<Vec<f64>> = Vec::with_capacity(kmax + 1);
    for (idx, em) in rows.iter().enumerate() {
        let k = idx + 1;
        if k <= kmax {
            mono += em.increments[..nmax - k].iter().filter(|x| **x <= 0.0).count();
        }
        let mut g = vec![0.0; horizon - k + 1];
        for j in (0..em.increments.len()).rev() {
            g[j] = g[j + 1] + em.increments[j];
        }
        g.truncate(nmax + 1 - k.min(nmax));
        gaps.push(g);
    }
    for n in 1..=nmax {
        let xi = cfrac::approximants_to(&c, n)?;
        for k in 1..=kmax.min(n) {
            let t = tails[k - 1];
            if xi[k - 1] >= t + 1e-12 * t.abs().max(1.0) {
                bound += 1;
            }
        }
    }
    let mut seq = Vec::new();
    let mut r_hat = f64::NEG_INFINITY;
    for n in burn + 1..=nmax {
        let mut best = f64::NEG_INFINITY;
        for k in burn..=kmax.min(n - 1) {
            let (g0, g1) = (gaps[k - 1][n - k], gaps[k][n - k - 1]);
            if g0 > 0.0 && g1 > 0.0 {
                best = best.max(g0 / g1);
            }
        }
        if best.is_finite() {
            seq.push((n, best));
            r_hat = r_hat.max(best);
        }
    }
    let (alpha, _) = c.limit().ok_or_else(precondition)?;
    let xi_lim = c
        .limit()
        .and_then(|(a, b)| cfrac::tail_limit(a, b))
        .ok_or_else(precondition)?;
    let r_analytic = -xi_lim / (alpha + xi_lim);
    let diagonal = (1..=nmax.min(tails.len()))
        .map(|n| cfrac::approximant(&c, n, n).map(|x| (n, x, tails[n - 1])))
        .collect::<Result<_>>()?;

    let mut d = LimitDiagnostic::from_sequence("mi_dxr", seq).with_reference(r_analytic);
    d.bound_check = Some(BoundCheck {
        lower: 0.0,
        upper: 1.0,
        violated: r_hat >= 1.0,
    });
    if mono > 0 {
        d.violations.push(format!("{mono} non-increasing approximant steps"));
    }
    if bound > 0 {
        d.violations.push(format!("{bound} approximants above their tail"));
    }
    if r_hat >= 1.0 {
        d.violations.push(format!("gap ratio {r_hat:e} not below 1"));
    }
    Ok(MiDxrReport {
        diagnostic: d,
        monotonicity_violations: mono,
        bound_violations: bound,
        r_hat,
        r_analytic,
        burn_in: burn,
        diagonal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub nmax: usize,
    pub k: usize,
    /// Largest `k` for the approximant tables.
    pub kmax: usize,
    /// Largest `m − k` for the eigenvector bounds.
    pub rfm_span: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            nmax: 1000,
            k: 1,
            kmax: 50,
            rfm_span: 200,
        }
    }
}

/// Outcome of one check: a diagnostic, or the reason it could not run
/// (precondition not met, excluded parameters, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SuiteEntry {
    Ran { diagnostic: LimitDiagnostic },
    Skipped { name: String, reason: String },
}

impl SuiteEntry {
    pub fn name(&self) -> &str {
        match self {
            SuiteEntry::Ran { diagnostic } => &diagnostic.name,
            SuiteEntry::Skipped { name, .. } => name,
        }
    }

    pub fn diagnostic(&self) -> Option<&LimitDiagnostic> {
        match self {
            SuiteEntry::Ran { diagnostic } => Some(diagnostic),
            SuiteEntry::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub fluctuations: Option<cfrac::FluctuationSeq>,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| e.diagnostic())
            .map(|d| d.violations.len())
            .sum()
    }

    pub fn get(&self, name: &str) -> Option<&LimitDiagnostic> {
        self.entries.iter().find(|e| e.name() == name).and_then(|e| e.diagnostic())
    }
}

fn entries(name: &str, r: Result<Vec<LimitDiagnostic>>) -> Vec<SuiteEntry> {
    match r {
        Ok(ds) => ds.into_iter().map(|diagnostic| SuiteEntry::Ran { diagnostic }).collect(),
        Err(e) => vec![SuiteEntry::Skipped {
            name: name.to_string(),
            reason: e.to_string(),
        }],
    }
}

/// Runs every check concurrently; the order of the entries is fixed.
pub fn run_suite(env: &EnvFamily, opts: &SuiteOptions) -> SuiteReport {
    type Job<'a> = (&'static str, Box<dyn Fn() -> Result<Vec<LimitDiagnostic>> + Send + Sync + 'a>);
    let (n, k) = (opts.nmax, opts.k);
    let jobs: Vec<Job> = vec![
        ("mpr", Box::new(move || {
            [(1, 1), (1, 2), (2, 1), (2, 2)]
                .into_iter()
                .map(|(i, j)| mpr_constant(env, k, i, j, n))
                .collect()
        })),
        ("thm_s", Box::new(move || thm_s_ratio(env, n).map(|d| vec![d]))),
        ("xias", Box::new(move || xias_ratios(env, n).map(Vec::from))),
        ("lwb_bma", Box::new(move || lwb_bma_bounds(env, k, n).map(Vec::from))),
        ("rfm", Box::new(move || {
            let m = (k + opts.rfm_span).min(n.max(k));
            rfm_bound(env, k, m).map(|d| vec![d])
        })),
        ("ral_ff", Box::new(move || ral_ff_limits(env, k, n).map(Vec::from))),
        ("mi_dxr", Box::new(move || {
            let nn = n.min(200);
            mi_dxr_report(env, opts.kmax.min(nn), nn).map(|r| vec![r.diagnostic])
        })),
    ];
    use rayon::prelude::*;
    let (entries, fluct): (Vec<Vec<SuiteEntry>>, _) = rayon::join(
        || jobs.par_iter().map(|(name, f)| entries(name, f())).collect(),
        || cfrac::fluctuations(env, n.clamp(10, 400)).ok(),
    );
    SuiteReport {
        entries: entries.into_iter().flatten().collect(),
        fluctuations: fluct,
    }
}
