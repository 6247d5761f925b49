//! Pólya-Gamma draws.
//!
//! `PG(1, z)` uses Devroye's alternating-series rejection sampler with the
//! truncation point 0.64; `PG(b, z)` for integer `b` sums `b` such draws. The
//! approximate mode replaces `PG(b, z)` by a moment-matched transform of a
//! single `PG(1, z)` draw.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;

const TRUNC: f64 = 0.64;

/// `log Φ(x)` for the standard normal CDF.
fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// `n`-th coefficient of the alternating series for the `J*(1, 0)` density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let m = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * m * m / x).exp()
    } else {
        0.0
    }
}

/// Probability that the proposal comes from the exponential piece.
fn mass_texpon(z: f64) -> f64 {
    let t = TRUNC;
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let qdivp = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse-Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    let z = z.abs();
    if z < 1.0 / t {
        // mean above the truncation point: draw from the truncated
        // Lévy-type proposal and accept with the exponential tilt
        loop {
            let (mut e1, mut e2): (f64, f64) = (rng.sample(Exp1), rng.sample(Exp1));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let y = 1.0 + e1 * t;
            let x = t / (y * y);
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let n: f64 = rng.sample(StandardNormal);
        let y = n * n;
        let mu_y = mu * y;
        let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x < t {
            return x;
        }
    }
}

/// One exact `PG(1, z)` draw.
pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let z = 0.5 * z.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = mass_texpon(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + rng.sample::<f64, _>(Exp1) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Exact `PG(b, z)` as a sum of `b` independent `PG(1, z)` draws.
pub fn sample_pg<R: Rng + ?Sized>(b: u64, z: f64, rng: &mut R) -> f64 {
    (0..b).map(|_| sample_pg1(z, rng)).sum()
}

/// `E[PG(b, z)] = b tanh(z/2) / (2z)`, with limit `b/4` at zero.
pub fn pg_mean(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-4 {
        // Taylor: tanh(z/2)/(2z) = 1/4 - z²/48 + ...
        return b * (0.25 - z * z / 48.0);
    }
    b * (0.5 * z).tanh() / (2.0 * z)
}

/// `Var[PG(b, z)] = b (sinh z - z) / (4 z³ cosh²(z/2))`, with limit `b/24`.
pub fn pg_variance(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-3 {
        // Taylor: 1/24 - z²/120 + ...
        return b * (1.0 / 24.0 - z * z / 120.0);
    }
    if z > 700.0 {
        // sinh z / cosh²(z/2) → 2 for large z
        return b * (2.0 - 4.0 * z * (-z).exp()) / (4.0 * z * z * z);
    }
    let c = (0.5 * z).cosh();
    b * (z.sinh() - z) / (4.0 * z * z * z * c * c)
}

/// Approximate `PG(b, z)` from one `PG(1, z)` draw, matching the first two
/// moments; clamped at zero.
pub fn sample_pg_approx<R: Rng + ?Sized>(b: u64, z: f64, rng: &mut R) -> f64 {
    if b == 0 {
        return 0.0;
    }
    let lambda = sample_pg1(z, rng);
    let b = b as f64;
    let omega = b.sqrt() * (lambda - pg_mean(1.0, z)) + pg_mean(b, z);
    omega.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_formula_limits() {
        assert_eq!(pg_mean(1.0, 0.0), 0.25);
        assert!((pg_mean(100.0, 1e-6) - 25.0).abs() < 1e-9);
        assert!((pg_mean(1.0, 2e-4) - pg_mean(1.0, 9.9e-5)).abs() < 1e-8);
        assert!((pg_variance(1.0, 1.1e-3) - pg_variance(1.0, 0.9e-3)).abs() < 1e-7);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        for &z in &[0.0, 1.0, 3.0, 10.0] {
            let draws: Vec<f64> = (0..n).map(|_| sample_pg1(z, &mut rng)).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (pg_variance(1.0, z) / n as f64).sqrt();
            assert!((m - pg_mean(1.0, z)).abs() < 4.0 * se, "z={z}: mean {m}");
            assert!(
                (v / pg_variance(1.0, z) - 1.0).abs() < 0.05,
                "z={z}: var {v}"
            );
        }
    }

    #[test]
    fn approximate_draws_are_nonnegative_with_matching_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let m = (0..n)
            .map(|_| sample_pg_approx(50, 2.0, &mut rng))
            .inspect(|w| assert!(*w >= 0.0))
            .sum::<f64>()
            / n as f64;
        assert!((m - pg_mean(50.0, 2.0)).abs() < 0.05);
        assert_eq!(sample_pg_approx(0, 1.0, &mut rng), 0.0);
    }
}
