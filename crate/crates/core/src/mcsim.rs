//! Monte Carlo simulation of the two-type process.
//!
//! A type-`i` parent at generation `k` has offspring pgf
//! `1 − m_i(1 − s)/(1 + g(1 − s))` with `m_i` row `i` of `M_k` and `g` its
//! first row. Expanding in powers of `s` gives the sampling scheme: the
//! total `N` is zero with probability `q0`, otherwise `1 + Geometric`; the
//! split `J` of `N` into type-1 children follows the normalized weights
//! `w(N, ·)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvFamily;
use crate::error::{Error, Result};

/// Negative weights down to this level are rounding.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Relative error allowed on the composition mass.
pub const MASS_TOL: f64 = 1e-10;
/// Largest single offspring count and largest population per replicate.
pub const EXPLOSION_GUARD: u64 = 1_000_000;
/// Normal quantile for the reported intervals.
pub const Z: f64 = 1.96;

/// Offspring law of one parent type at one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeLaw {
    /// Mean offspring vector (row of `M_k`).
    pub m: [f64; 2],
    /// First row of `M_k`.
    pub g: [f64; 2],
    pub q0: f64,
    pub p: f64,
}

impl TypeLaw {
    fn new(m: [f64; 2], g: [f64; 2]) -> Self {
        let (sm, sg) = (m[0] + m[1], g[0] + g[1]);
        TypeLaw {
            m,
            g,
            q0: 1.0 - sm / (1.0 + sg),
            p: sg / (1.0 + sg),
        }
    }

    /// `w(n, j)` for `j = 0..=n` divided by `|m||g|^{n−1}`, i.e. the
    /// conditional law of `J` given `N = n` (when the law is valid).
    pub fn composition(&self, n: usize, lf: &mut LnFactorial) -> Vec<f64> {
        let (sm, sg) = (self.m[0] + self.m[1], self.g[0] + self.g[1]);
        let pi = [self.g[0] / sg, self.g[1] / sg];
        let lp = [pi[0].ln(), pi[1].ln()];
        let binom = |lf: &mut LnFactorial, n: usize, j: isize| -> f64 {
            if j < 0 || j as usize > n {
                return 0.0;
            }
            let j = j as usize;
            let pow = |e: usize, l: f64| if e == 0 { 0.0 } else { e as f64 * l };
            (lf.ln_choose(n, j) + pow(j, lp[0]) + pow(n - j, lp[1])).exp()
        };
        let c = (1.0 + sg) / sm;
        (0..=n as isize)
            .map(|j| {
                c * (self.m[0] * binom(lf, n - 1, j - 1) + self.m[1] * binom(lf, n - 1, j))
                    - sg * binom(lf, n, j)
            })
            .collect()
    }

    /// `(1 + |g|)m_{ij}/g_j ≥ |m_i|` for both `j`: nonnegative weights for all `n`.
    pub fn endpoint_certificate(&self) -> bool {
        let (sm, sg) = (self.m[0] + self.m[1], self.g[0] + self.g[1]);
        (0..2).all(|j| self.g[j] == 0.0 || (1.0 + sg) * self.m[j] / self.g[j] >= sm)
    }
}

/// `ln n!` table, extended on demand.
#[derive(Debug, Clone, Default)]
pub struct LnFactorial(Vec<f64>);

impl LnFactorial {
    pub fn ln_fact(&mut self, n: usize) -> f64 {
        if self.0.is_empty() {
            self.0.push(0.0);
        }
        while self.0.len() <= n {
            let k = self.0.len();
            let last = self.0[k - 1];
            self.0.push(last + (k as f64).ln());
        }
        self.0[n]
    }

    pub fn ln_choose(&mut self, n: usize, j: usize) -> f64 {
        self.ln_fact(n) - self.ln_fact(j) - self.ln_fact(n - j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    pub k: usize,
    pub types: [TypeLaw; 2],
}

impl OffspringLaw {
    pub fn new(env: &EnvFamily, k: usize) -> Result<Self> {
        let p = env.params_at(k)?;
        let g = [p.a, p.b];
        Ok(OffspringLaw {
            k,
            types: [TypeLaw::new([p.a, p.b], g), TypeLaw::new([p.d, p.theta], g)],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeValidation {
    pub ty: usize,
    pub q0: f64,
    pub p: f64,
    /// Smallest normalized weight over `n ≤ n_check` and where it occurs.
    pub min_weight: f64,
    pub min_at: (usize, usize),
    /// Largest relative error of `Σ_j w(n, j)` against `|m||g|^{n−1}`.
    pub mass_error: f64,
    pub endpoint_certificate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgfValidation {
    pub k: usize,
    pub n_check: usize,
    pub types: [TypeValidation; 2],
}

/// Expands the pgf to `n_check` and checks that it defines a probability law.
pub fn validate_pgf(env: &EnvFamily, k: usize, n_check: usize) -> Result<PgfValidation> {
    if n_check == 0 {
        return Err(Error::InvalidRange { k, n: n_check });
    }
    let law = OffspringLaw::new(env, k)?;
    let mut lf = LnFactorial::default();
    let mut out = Vec::with_capacity(2);
    for (idx, t) in law.types.iter().enumerate() {
        let ty = idx + 1;
        let invalid = |reason: String| Error::InvalidLaw { ty, k, reason };
        if !(0.0..=1.0).contains(&t.q0) {
            return Err(invalid(format!("P(N = 0) = {} outside [0, 1]", t.q0)));
        }
        let mut min_weight = f64::INFINITY;
        let mut min_at = (1, 0);
        let mut mass_error: f64 = 0.0;
        for n in 1..=n_check {
            let w = t.composition(n, &mut lf);
            for (j, x) in w.iter().enumerate() {
                if *x < min_weight {
                    min_weight = *x;
                    min_at = (n, j);
                }
            }
            mass_error = mass_error.max((w.iter().sum::<f64>() - 1.0).abs());
        }
        if mass_error > MASS_TOL {
            return Err(invalid(format!("composition mass error {mass_error:e}")));
        }
        if min_weight < -WEIGHT_TOL {
            return Err(invalid(format!(
                "weight w({}, {}) = {min_weight:e} is negative",
                min_at.0, min_at.1
            )));
        }
        out.push(TypeValidation {
            ty,
            q0: t.q0,
            p: t.p,
            min_weight,
            min_at,
            mass_error,
            endpoint_certificate: t.endpoint_certificate(),
        });
    }
    Ok(PgfValidation {
        k,
        n_check,
        types: [out[0], out[1]],
    })
}

/// Draws offspring for one generation's law, caching the composition CDFs.
#[derive(Debug, Clone)]
pub struct Sampler {
    law: OffspringLaw,
    geom: [Option<Geometric>; 2],
    cdf: [Vec<Vec<f64>>; 2],
    lf: LnFactorial,
}

impl Sampler {
    pub fn new(law: OffspringLaw) -> Result<Self> {
        let geom = [0, 1].map(|i| {
            let t = &law.types[i];
            (t.q0 < 1.0).then(|| Geometric::new(1.0 - t.p).ok()).flatten()
        });
        Ok(Sampler {
            law,
            geom,
            cdf: [Vec::new(), Vec::new()],
            lf: LnFactorial::default(),
        })
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    fn cdf(&mut self, ty: usize, n: usize) -> &[f64] {
        let table = &mut self.cdf[ty];
        while table.len() <= n {
            let m = table.len();
            let mut acc = 0.0;
            let row = if m == 0 {
                vec![1.0]
            } else {
                self.law.types[ty]
                    .composition(m, &mut self.lf)
                    .into_iter()
                    .map(|w| {
                        acc += w.max(0.0);
                        acc
                    })
                    .collect()
            };
            table.push(row);
        }
        &table[n]
    }

    /// `(j1, j2)` for a parent of type `ty ∈ {1, 2}`.
    pub fn sample<R: Rng + ?Sized>(&mut self, ty: usize, rng: &mut R) -> Result<(u64, u64)> {
        let i = ty - 1;
        let t = self.law.types[i];
        if rng.random::<f64>() < t.q0 {
            return Ok((0, 0));
        }
        let n = match &self.geom[i] {
            Some(g) => 1 + g.sample(rng),
            None => 1,
        };
        if n > EXPLOSION_GUARD {
            return Err(Error::Explosion(n));
        }
        let cdf = self.cdf(i, n as usize);
        let u = rng.random::<f64>() * cdf[cdf.len() - 1];
        let j = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1) as u64;
        Ok((j, n - j))
    }
}

/// One draw with a fresh sampler.
pub fn sample_offspring<R: Rng + ?Sized>(law: &OffspringLaw, ty: usize, rng: &mut R) -> Result<(u64, u64)> {
    Sampler::new(*law)?.sample(ty, rng)
}

/// Stream for replicate `r` started from type `ty`.
pub fn replicate_rng(master_seed: u64, ty: usize, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((ty as u64) << 48) | r);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub master_seed: u64,
    pub replicates: u64,
    pub start_type: usize,
    pub horizons: Vec<usize>,
    /// Replicates with `Z_n ≠ 0` at each horizon.
    pub survivors: Vec<u64>,
    /// Replicates stopped by the population guard (counted as surviving).
    pub guarded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub horizon: usize,
    pub start_type: usize,
    pub survivors: u64,
    pub replicates: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl SimRow {
    pub const HEADER: [&'static str; 8] = [
        "horizon",
        "start_type",
        "survivors",
        "replicates",
        "p_hat",
        "ci_low",
        "ci_high",
        "seed",
    ];
}

impl SimResult {
    pub fn rows(&self) -> Vec<SimRow> {
        self.horizons
            .iter()
            .zip(&self.survivors)
            .map(|(&horizon, &s)| {
                let p = s as f64 / self.replicates as f64;
                let half = Z * standard_error(p, self.replicates);
                SimRow {
                    horizon,
                    start_type: self.start_type,
                    survivors: s,
                    replicates: self.replicates,
                    p_hat: p,
                    ci_low: (p - half).max(0.0),
                    ci_high: (p + half).min(1.0),
                    seed: self.master_seed,
                }
            })
            .collect()
    }
}

pub fn standard_error(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Last generation reached with a nonzero population (capped at `hmax`),
/// or `None` when the guard stopped the replicate.
fn simulate_one(samplers: &mut [Sampler], ty: usize, hmax: usize, rng: &mut ChaCha8Rng) -> Result<Option<usize>> {
    let mut z = if ty == 1 { [1u64, 0] } else { [0, 1] };
    for k in 1..=hmax {
        let s = &mut samplers[k - 1];
        let mut next = [0u64; 2];
        for (parent, &count) in z.iter().enumerate() {
            for _ in 0..count {
                let (j1, j2) = s.sample(parent + 1, rng)?;
                next[0] += j1;
                next[1] += j2;
            }
        }
        z = next;
        if z == [0, 0] {
            return Ok(Some(k - 1));
        }
        if z[0] + z[1] > EXPLOSION_GUARD {
            return Ok(None);
        }
    }
    Ok(Some(hmax))
}

/// Simulates `replicates` independent processes from `Z₀ = e_ty`.
pub fn run(
    env: &EnvFamily,
    start_type: usize,
    horizons: &[usize],
    replicates: u64,
    master_seed: u64,
) -> Result<SimResult> {
    if !(1..=2).contains(&start_type) {
        return Err(Error::InvalidRange { k: start_type, n: 2 });
    }
    if replicates == 0 || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidRange {
            k: replicates as usize,
            n: horizons.len(),
        });
    }
    let hmax = horizons.last().copied().unwrap_or(0);
    let samplers: Vec<Sampler> = (1..=hmax)
        .map(|k| {
            validate_pgf(env, k, 50)?;
            Sampler::new(OffspringLaw::new(env, k)?)
        })
        .collect::<Result<_>>()?;
    let nh = horizons.len();
    let (counts, guarded) = (0..replicates)
        .into_par_iter()
        .map_init(
            || samplers.clone(),
            |local, r| -> Result<(Vec<u64>, u64)> {
                let mut rng = replicate_rng(master_seed, start_type, r);
                let reached = simulate_one(local, start_type, hmax, &mut rng)?;
                let row = horizons
                    .iter()
                    .map(|&h| u64::from(reached.is_none_or(|last| last >= h)))
                    .collect();
                Ok((row, u64::from(reached.is_none())))
            },
        )
        .try_reduce(
            || (vec![0; nh], 0),
            |(mut a, ga), (b, gb)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok((a, ga + gb))
            },
        )?;
    Ok(SimResult {
        master_seed,
        replicates,
        start_type,
        horizons: horizons.to_vec(),
        survivors: counts,
        guarded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub k: usize,
    pub ty: usize,
    pub samples: u64,
    pub mean: [f64; 2],
    pub standard_error: [f64; 2],
    pub expected: [f64; 2],
    /// Empirical `P(N = n)` for `n = 1..=10` against `(1−q0)(1−p)p^{n−1}`.
    pub total_pmf: Vec<(usize, f64, f64, f64)>,
}

/// Sums, sums of squares, histogram of `N ≤ 10` and draw count.
type Chunk = ([f64; 2], [f64; 2], [u64; 11], u64);

/// Offspring moments and the law of the total from `samples` draws.
pub fn moment_check(env: &EnvFamily, k: usize, ty: usize, samples: u64, seed: u64) -> Result<MomentCheck> {
    let law = OffspringLaw::new(env, k)?;
    validate_pgf(env, k, 50)?;
    let chunks = 64u64;
    let per = samples.div_ceil(chunks);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Chunk> {
            let mut s = Sampler::new(law)?;
            let mut rng = replicate_rng(seed, ty, (1 << 40) | c);
            let (mut sum, mut sq, mut hist) = ([0.0; 2], [0.0; 2], [0u64; 11]);
            let count = per.min(samples.saturating_sub(c * per));
            for _ in 0..count {
                let (j1, j2) = s.sample(ty, &mut rng)?;
                for (i, x) in [j1 as f64, j2 as f64].into_iter().enumerate() {
                    sum[i] += x;
                    sq[i] += x * x;
                }
                let n = (j1 + j2) as usize;
                if n <= 10 {
                    hist[n] += 1;
                }
            }
            Ok((sum, sq, hist, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut sum, mut sq, mut hist, mut total) = ([0.0; 2], [0.0; 2], [0u64; 11], 0u64);
    for (s, q, h, c) in parts {
        for i in 0..2 {
            sum[i] += s[i];
            sq[i] += q[i];
        }
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        total += c;
    }
    let nf = total as f64;
    let mean = [sum[0] / nf, sum[1] / nf];
    let se = [0, 1].map(|i| ((sq[i] / nf - mean[i] * mean[i]).max(0.0) / nf).sqrt());
    let t = law.types[ty - 1];
    let total_pmf = (1..=10)
        .map(|n| {
            let p = hist[n] as f64 / nf;
            let exact = (1.0 - t.q0) * (1.0 - t.p) * t.p.powi(n as i32 - 1);
            (n, p, exact, standard_error(exact, total))
        })
        .collect();
    Ok(MomentCheck {
        k,
        ty,
        samples: total,
        mean,
        standard_error: se,
        expected: t.m,
        total_pmf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Fixture, Params};
    use approx::assert_relative_eq;

    #[test]
    fn star_law() {
        let env = Fixture::EStar.build();
        let law = OffspringLaw::new(&env, 1).unwrap();
        assert_relative_eq!(law.types[0].q0, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(law.types[0].p, 1.0 / 3.0, epsilon = 1e-15);
        let mut lf = LnFactorial::default();
        let w = law.types[1].composition(1, &mut lf);
        assert!(w[0].abs() < 1e-15);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-14);
        // first row equal to g: binomial composition
        let w = law.types[0].composition(6, &mut lf);
        for (j, x) in w.iter().enumerate() {
            let b = lf.ln_choose(6, j).exp() * 0.4f64.powi(j as i32) * 0.6f64.powi(6 - j as i32);
            assert_relative_eq!(*x, b, epsilon = 1e-13);
        }
        let mut rng = replicate_rng(1, 2, 0);
        let mut s = Sampler::new(law).unwrap();
        for _ in 0..2000 {
            let (j1, j2) = s.sample(2, &mut rng).unwrap();
            if j1 + j2 == 1 {
                assert_eq!((j1, j2), (1, 0));
            }
        }
    }

    #[test]
    fn validation_cases() {
        let v = validate_pgf(&Fixture::EStar.build(), 1, 50).unwrap();
        assert!(v.types.iter().all(|t| t.mass_error < 1e-10 && t.endpoint_certificate));
        let bad = EnvFamily::constant(Params::new(0.5, 0.5, 0.01, 1.5)).unwrap();
        let e = validate_pgf(&bad, 1, 50).unwrap_err();
        assert!(matches!(e, Error::InvalidLaw { ty: 2, k: 1, .. }), "{e}");
        assert!(run(&bad, 1, &[1], 10, 0).is_err());
        assert!(validate_pgf(&Fixture::EStar.build(), 1, 0).is_err());
    }

    #[test]
    fn replay_and_zero_horizon() {
        let env = Fixture::EStar.build();
        let a = run(&env, 1, &[0, 1, 2], 5000, 42).unwrap();
        let b = run(&env, 1, &[0, 1, 2], 5000, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.survivors[0], 5000);
        assert!(a.survivors.windows(2).all(|w| w[1] <= w[0]));
        let law = OffspringLaw::new(&env, 1).unwrap();
        let x = sample_offspring(&law, 1, &mut replicate_rng(3, 1, 9)).unwrap();
        let y = sample_offspring(&law, 1, &mut replicate_rng(3, 1, 9)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn survival_near_exact() {
        let env = Fixture::EStar.build();
        let r = run(&env, 2, &[1, 3], 200_000, 7).unwrap();
        for row in r.rows() {
            let exact = 1.0 / (2f64.powi(row.horizon as i32 + 1) - 1.0);
            let se = standard_error(exact, row.replicates);
            assert!((row.p_hat - exact).abs() < 4.0 * se, "{row:?}");
        }
    }

    #[test]
    fn moments_match_rows() {
        let env = Fixture::ETriUp.build();
        for ty in [1, 2] {
            let m = moment_check(&env, 5, ty, 200_000, 11).unwrap();
            for i in 0..2 {
                assert!((m.mean[i] - m.expected[i]).abs() < 4.0 * m.standard_error[i], "{m:?}");
            }
            for (_, p, exact, se) in &m.total_pmf {
                assert!((p - exact).abs() < 4.0 * se.max(1e-6));
            }
        }
    }
}
