//! 2×2 algebra for the mean matrices `M_k`, the transformed matrices `A_k`
//! and the conjugators `Λ_k`, plus log-scaled products over index ranges.

use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::env::EnvFamily;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2 { m11, m12, m21, m22 }
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.m11, self.m12, self.m21, self.m22]
    }

    /// 1-based entry, like `e_i · m · e_jᵗ`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (1, 1) => self.m11,
            (1, 2) => self.m12,
            (2, 1) => self.m21,
            (2, 2) => self.m22,
            _ => panic!("entry ({i},{j}) out of range"),
        }
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        [self.entry(i, 1), self.entry(i, 2)]
    }

    pub fn scale(&self, c: f64) -> Mat2 {
        Mat2::new(self.m11 * c, self.m12 * c, self.m21 * c, self.m22 * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|x| x.is_finite())
    }

    /// `m · v`
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m11 * v[0] + self.m12 * v[1],
            self.m21 * v[0] + self.m22 * v[1],
        ]
    }

    /// `r · m` for a row vector `r`
    pub fn apply_left(&self, r: [f64; 2]) -> [f64; 2] {
        [
            r[0] * self.m11 + r[1] * self.m21,
            r[0] * self.m12 + r[1] * self.m22,
        ]
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m11 * o.m11 + self.m12 * o.m21,
            self.m11 * o.m12 + self.m12 * o.m22,
            self.m21 * o.m11 + self.m22 * o.m21,
            self.m21 * o.m12 + self.m22 * o.m22,
        )
    }
}

pub fn mean_matrix(env: &EnvFamily, k: usize) -> Result<Mat2> {
    let p = env.params_at(k)?;
    Ok(Mat2::new(p.a, p.b, p.d, p.theta))
}

pub fn transformed_matrix(env: &EnvFamily, k: usize) -> Result<Mat2> {
    let t = env.transformed_at(k)?;
    Ok(Mat2::new(t.a, t.b, t.d, 0.0))
}

/// `Λ_k = [[1, 0], [θ_k/b_k, 1]]`
pub fn conjugator(env: &EnvFamily, k: usize) -> Result<Mat2> {
    let p = env.params_at(k)?;
    Ok(Mat2::new(1.0, 0.0, p.theta / p.b, 1.0))
}

pub fn conjugator_inverse(env: &EnvFamily, k: usize) -> Result<Mat2> {
    let p = env.params_at(k)?;
    Ok(Mat2::new(1.0, 0.0, -p.theta / p.b, 1.0))
}

/// `max |A_k − Λ_k⁻¹ M_k Λ_{k+1}|`
pub fn conjugation_residual(env: &EnvFamily, k: usize) -> Result<f64> {
    let conj = conjugator_inverse(env, k)? * mean_matrix(env, k)? * conjugator(env, k + 1)?;
    Ok(transformed_matrix(env, k)?.max_abs_diff(&conj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPair {
    pub rho: f64,
    pub disc: f64,
    pub complex_pair: bool,
}

pub fn spectral_radius(m: &Mat2) -> SpectralPair {
    let tr = m.trace();
    let det = m.det();
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        // max(|tr + √disc|, |tr − √disc|) = |tr| + √disc
        SpectralPair {
            rho: 0.5 * (tr.abs() + disc.sqrt()),
            disc,
            complex_pair: false,
        }
    } else {
        assert!(det > 0.0, "complex eigenvalue pair with det {det} <= 0");
        SpectralPair {
            rho: det.sqrt(),
            disc,
            complex_pair: true,
        }
    }
}

/// `ϱ(A_k)`; the complex-pair modulus `√det A_k` when `Δ_k < 0`.
pub fn transformed_radius(env: &EnvFamily, k: usize) -> Result<SpectralPair> {
    Ok(spectral_radius(&transformed_matrix(env, k)?))
}

pub fn mean_radius(env: &EnvFamily, k: usize) -> Result<SpectralPair> {
    Ok(spectral_radius(&mean_matrix(env, k)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Which {
    #[serde(rename = "M")]
    Mean,
    #[serde(rename = "A")]
    Transformed,
}

pub fn factor(env: &EnvFamily, k: usize, which: Which) -> Result<Mat2> {
    match which {
        Which::Mean => mean_matrix(env, k),
        Which::Transformed => transformed_matrix(env, k),
    }
}

/// Log magnitude and sign of a real; `sign == 0` for zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryLog {
    pub ln_abs: f64,
    pub sign: i8,
}

impl EntryLog {
    pub fn of(x: f64, logscale: f64) -> Self {
        EntryLog {
            ln_abs: x.abs().ln() + logscale,
            sign: if x > 0.0 {
                1
            } else if x < 0.0 {
                -1
            } else {
                0
            },
        }
    }

    pub fn value(&self) -> f64 {
        self.sign as f64 * self.ln_abs.exp()
    }
}

/// `exp(logscale) · mat` with `max |mat| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledMat {
    mat: Mat2,
    logscale: f64,
    span: (usize, usize),
}

impl ScaledMat {
    /// Empty product starting at `k`: span `(k, k − 1)`.
    pub fn identity_at(k: usize) -> Self {
        ScaledMat {
            mat: Mat2::IDENTITY,
            logscale: 0.0,
            span: (k, k.saturating_sub(1)),
        }
    }

    pub fn mat(&self) -> &Mat2 {
        &self.mat
    }

    pub fn logscale(&self) -> f64 {
        self.logscale
    }

    pub fn span(&self) -> (usize, usize) {
        self.span
    }

    pub fn is_empty(&self) -> bool {
        self.span.1 < self.span.0
    }

    /// Appends the next factor on the right.
    pub fn push_right(&mut self, m: &Mat2) -> Result<()> {
        let next = self.span.1 + 1;
        let raw = self.mat * *m;
        self.mat = raw;
        self.span.1 = next;
        self.renormalize(next)
    }

    /// Prepends a factor on the left (span start moves down by one).
    pub fn push_left(&mut self, m: &Mat2) -> Result<()> {
        let prev = self.span.0.checked_sub(1).ok_or(Error::ZeroGeneration)?;
        self.mat = *m * self.mat;
        self.span.0 = prev;
        self.renormalize(prev)
    }

    fn renormalize(&mut self, idx: usize) -> Result<()> {
        let s = self.mat.max_abs();
        if !(s.is_finite() && s > 0.0) || !self.mat.is_finite() {
            return Err(Error::ScalingFailure(idx));
        }
        // x / x is exactly 1, so the extreme entry lands on ±1
        let m = self.mat;
        self.mat = Mat2::new(m.m11 / s, m.m12 / s, m.m21 / s, m.m22 / s);
        self.logscale += s.ln();
        Ok(())
    }

    pub fn entry_log(&self, i: usize, j: usize) -> EntryLog {
        EntryLog::of(self.mat.entry(i, j), self.logscale)
    }

    pub fn recompose(&self) -> Mat2 {
        self.mat.scale(self.logscale.exp())
    }

    /// `ln |r · P · c|` and its sign.
    pub fn bilinear(&self, r: [f64; 2], c: [f64; 2]) -> EntryLog {
        let v = self.mat.apply(c);
        EntryLog::of(r[0] * v[0] + r[1] * v[1], self.logscale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Double,
    /// Double-double mantissas with exact power-of-two rescaling.
    Compensated,
}

/// `Π_{i=k}^{n}` of the chosen factors, accumulated left to right.
pub fn scaled_product(env: &EnvFamily, k: usize, n: usize, which: Which) -> Result<ScaledMat> {
    scaled_product_with(env, k, n, which, Precision::Double)
}

pub fn scaled_product_with(
    env: &EnvFamily,
    k: usize,
    n: usize,
    which: Which,
    precision: Precision,
) -> Result<ScaledMat> {
    if k == 0 {
        return Err(Error::ZeroGeneration);
    }
    if k > n + 1 {
        return Err(Error::InvalidRange { k, n });
    }
    match precision {
        Precision::Double => {
            let mut p = ScaledMat::identity_at(k);
            for i in k..=n {
                p.push_right(&factor(env, i, which)?)?;
            }
            Ok(p)
        }
        Precision::Compensated => {
            let mut p = dd::Product::identity();
            for i in k..=n {
                p.push_right(&factor(env, i, which)?, i)?;
            }
            p.finish(k, n)
        }
    }
}

/// Product of an arbitrary factor sequence (used for custom matrices).
pub fn product_of<I>(factors: I, precision: Precision) -> Result<ScaledMat>
where
    I: IntoIterator<Item = Mat2>,
{
    match precision {
        Precision::Double => {
            let mut p = ScaledMat::identity_at(1);
            for m in factors {
                p.push_right(&m)?;
            }
            Ok(p)
        }
        Precision::Compensated => {
            let mut p = dd::Product::identity();
            let mut n = 0;
            for m in factors {
                n += 1;
                p.push_right(&m, n)?;
            }
            p.finish(1, n)
        }
    }
}

/// `ln ϱ(P)` from the scaled entries, and whether the eigenvalues are a
/// complex pair. `−∞` for a nilpotent product.
pub fn product_spectral_radius(p: &ScaledMat) -> (f64, bool) {
    let sp = spectral_radius(p.mat());
    (sp.rho.ln() + p.logscale(), sp.complex_pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub k: usize,
    pub n: usize,
    /// Row-major entries of `A_k⋯A_n`.
    pub entries: [EntryLog; 4],
    pub top_row_positive: bool,
    /// Sign the bottom row takes once `d̃` has its limiting sign.
    pub limit_bottom_sign: i8,
    /// Whether `d̃_k` already carries the limiting sign.
    pub bottom_applicable: bool,
    pub bottom_row_ok: bool,
    /// `e₁A_k⋯A_ne₁ᵗ` against `e₁M_k⋯M_n(1, θ_{n+1}/b_{n+1})ᵗ`, relative.
    pub bridge_residual: f64,
    pub violations: Vec<String>,
}

pub fn entry_and_sign_report(env: &EnvFamily, k: usize, n: usize) -> Result<SignReport> {
    if k == 0 || n <= k {
        return Err(Error::InvalidRange { k, n });
    }
    let p = scaled_product(env, k, n, Which::Transformed)?;
    let entries = [
        p.entry_log(1, 1),
        p.entry_log(1, 2),
        p.entry_log(2, 1),
        p.entry_log(2, 2),
    ];
    let mut violations = Vec::new();
    let top_row_positive = entries[0].sign > 0 && entries[1].sign > 0;
    if !top_row_positive {
        violations.push(format!("top row of A_{k}..A_{n} not positive"));
    }
    let gap = env.base().det_gap();
    let limit_bottom_sign: i8 = if gap > 0.0 {
        1
    } else if gap < 0.0 {
        -1
    } else {
        0
    };
    let dk = env.transformed_at(k)?.d;
    let bottom_applicable = limit_bottom_sign != 0 && dk.signum() as i8 == limit_bottom_sign;
    let bottom_row_ok = !bottom_applicable
        || (entries[2].sign == limit_bottom_sign && entries[3].sign == limit_bottom_sign);
    if !bottom_row_ok {
        violations.push(format!(
            "bottom row of A_{k}..A_{n} does not have sign {limit_bottom_sign}"
        ));
    }
    let bridge_residual = apm_bridge_residual(env, k, n)?;
    if bridge_residual > 1e-10 {
        violations.push(format!("A/M bridge residual {bridge_residual:e}"));
    }
    Ok(SignReport {
        k,
        n,
        entries,
        top_row_positive,
        limit_bottom_sign,
        bottom_applicable,
        bottom_row_ok,
        bridge_residual,
        violations,
    })
}

/// Relative gap between the two evaluations of `e₁A_k⋯A_ne₁ᵗ`.
pub fn apm_bridge_residual(env: &EnvFamily, k: usize, n: usize) -> Result<f64> {
    let pa = scaled_product(env, k, n, Which::Transformed)?;
    let pm = scaled_product(env, k, n, Which::Mean)?;
    let next = env.params_at(n + 1)?;
    let a = pa.entry_log(1, 1);
    let m = pm.bilinear([1.0, 0.0], [1.0, next.theta / next.b]);
    if a.sign != m.sign {
        return Ok(f64::INFINITY);
    }
    Ok((a.ln_abs - m.ln_abs).exp_m1().abs())
}

mod dd {
    //! Double-double arithmetic for 2×2 products.

    use super::{Mat2, ScaledMat};
    use crate::error::{Error, Result};
    use crate::series::{binary_exponent, ldexp};

    #[derive(Debug, Clone, Copy, Default)]
    pub(super) struct Dd {
        hi: f64,
        lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd {
            hi: s,
            lo: b - (s - a),
        }
    }

    impl Dd {
        fn from(x: f64) -> Dd {
            Dd { hi: x, lo: 0.0 }
        }

        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            quick_two_sum(s, e + self.lo + o.lo)
        }

        fn mul(self, o: Dd) -> Dd {
            let p = self.hi * o.hi;
            let e = self.hi.mul_add(o.hi, -p);
            quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
        }

        fn ldexp(self, e: i32) -> Dd {
            Dd {
                hi: ldexp(self.hi, e),
                lo: ldexp(self.lo, e),
            }
        }

        fn to_f64(self) -> f64 {
            self.hi + self.lo
        }
    }

    /// Mantissa matrix times `2^exp2`.
    pub(super) struct Product {
        m: [Dd; 4],
        exp2: i64,
    }

    impl Product {
        pub(super) fn identity() -> Self {
            Product {
                m: [Dd::from(1.0), Dd::default(), Dd::default(), Dd::from(1.0)],
                exp2: 0,
            }
        }

        pub(super) fn push_right(&mut self, f: &Mat2, idx: usize) -> Result<()> {
            let [a, b, c, d] = self.m;
            let [e, g, h, i] = f.entries().map(Dd::from);
            self.m = [
                a.mul(e).add(b.mul(h)),
                a.mul(g).add(b.mul(i)),
                c.mul(e).add(d.mul(h)),
                c.mul(g).add(d.mul(i)),
            ];
            let s = self.m.iter().fold(0.0f64, |m, x| m.max(x.hi.abs()));
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::ScalingFailure(idx));
            }
            let e = binary_exponent(s);
            for x in self.m.iter_mut() {
                *x = x.ldexp(-e);
            }
            self.exp2 += e as i64;
            Ok(())
        }

        pub(super) fn finish(self, k: usize, n: usize) -> Result<ScaledMat> {
            let raw = Mat2::new(
                self.m[0].to_f64(),
                self.m[1].to_f64(),
                self.m[2].to_f64(),
                self.m[3].to_f64(),
            );
            let mut out = ScaledMat::identity_at(k);
            out.mat = raw;
            out.span = (k, n);
            out.logscale = self.exp2 as f64 * std::f64::consts::LN_2;
            out.renormalize(n)?;
            Ok(out)
        }
    }
}
