//! Small helpers for sequences: plateau detection, Aitken extrapolation,
//! stabilization over a doubling window and log-domain sums.

use serde::{Deserialize, Serialize};

/// Finds the window of `width` consecutive values with the smallest spread.
/// Returns `(mean of that window, max − min)`.
pub fn plateau(values: &[f64], width: usize) -> Option<(f64, f64)> {
    let width = width.max(1);
    if values.len() < width || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for w in values.windows(width) {
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = hi - lo;
        if best.is_none_or(|(_, s)| spread < s) {
            best = Some((w.iter().sum::<f64>() / width as f64, spread));
        }
    }
    best
}

/// Aitken Δ² extrapolation of three consecutive terms.
pub fn aitken(x0: f64, x1: f64, x2: f64) -> Option<f64> {
    let denom = x2 - 2.0 * x1 + x0;
    let lim = x2 - (x2 - x1) * (x2 - x1) / denom;
    (denom != 0.0 && lim.is_finite()).then_some(lim)
}

/// `max_{m ∈ [n/2, n]} |x_m − x_n| / |x_n|` over an index-sorted sequence.
pub fn doubling_variation(seq: &[(usize, f64)]) -> f64 {
    let Some(&(n, last)) = seq.last() else {
        return f64::INFINITY;
    };
    let scale = last.abs();
    let mut worst: f64 = 0.0;
    for &(m, x) in seq.iter().rev() {
        if 2 * m < n {
            break;
        }
        let dev = (x - last).abs();
        worst = worst.max(if scale > 0.0 { dev / scale } else { dev });
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

/// Stabilization verdict for a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilized {
    pub last: f64,
    pub aitken: Option<f64>,
    pub variation: f64,
    pub stabilized: bool,
}

pub fn stabilize(seq: &[(usize, f64)], threshold: f64) -> Stabilized {
    let last = seq.last().map_or(f64::NAN, |p| p.1);
    let aitken = match seq.len() {
        l if l >= 3 => aitken(seq[l - 3].1, seq[l - 2].1, seq[l - 1].1),
        _ => None,
    };
    let variation = doubling_variation(seq);
    Stabilized {
        last,
        aitken,
        variation,
        stabilized: last.is_finite() && variation < threshold,
    }
}

/// `ln(e^x + e^y)`.
pub fn log_add_exp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// Running `ln Σ e^{x_i}` for nonnegative terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSum(f64);

impl Default for LogSum {
    fn default() -> Self {
        LogSum(f64::NEG_INFINITY)
    }
}

impl LogSum {
    pub fn add_ln(&mut self, x: f64) {
        self.0 = log_add_exp(self.0, x);
    }

    pub fn ln(&self) -> f64 {
        self.0
    }
}

/// Exponent `e` with `2^e ≤ |x| < 2^(e+1)` for normal nonzero `x`.
pub(crate) fn binary_exponent(x: f64) -> i32 {
    let bits = x.abs().to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        // subnormal: fall back on the logarithm
        x.abs().log2().floor() as i32
    } else {
        raw - 1023
    }
}

/// `x · 2^e`, exact unless the result leaves the normal range.
pub(crate) fn ldexp(x: f64, e: i32) -> f64 {
    if (-1000..=1000).contains(&e) {
        x * 2f64.powi(e)
    } else {
        let half = e / 2;
        x * 2f64.powi(half) * 2f64.powi(e - half)
    }
}
