//! Truncated normal draws by inverse CDF, switching to exact rejection
//! samplers deep in the tails where the CDF underflows.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

/// Standardised bound beyond which tail rejection replaces inversion.
const TAIL: f64 = 8.0;

fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn upper_tail_inv(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Draws from `N(0, 1)` restricted to `[a, b]` with `a ≥ TAIL`.
fn tail_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a < 2.0 / a {
        // uniform proposal; acceptance ≥ e^-2 on such a short interval
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>().ln() < 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    // translated-exponential proposal with the optimal rate
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a + rng.sample::<f64, _>(Exp1) / lambda;
        if z > b {
            continue;
        }
        let d = z - lambda;
        if rng.random::<f64>().ln() < -0.5 * d * d {
            return z;
        }
    }
}

/// Standard normal restricted to `[a, b]`.
fn standard<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if a >= TAIL {
        return tail_draw(a, b, rng);
    }
    if b <= -TAIL {
        return -tail_draw(-b, -a, rng);
    }
    // work on the side of zero where the tail probabilities keep precision
    if a > 0.0 {
        let (qa, qb) = (upper_tail(a), upper_tail(b));
        let u = qb + (qa - qb) * rng.random::<f64>();
        upper_tail_inv(u).clamp(a, b)
    } else if b < 0.0 {
        let (qa, qb) = (upper_tail(-a), upper_tail(-b));
        let u = qa + (qb - qa) * rng.random::<f64>();
        (-upper_tail_inv(u)).clamp(a, b)
    } else {
        let (pa, pb) = (1.0 - upper_tail(a), 1.0 - upper_tail(b));
        let u = pa + (pb - pa) * rng.random::<f64>();
        // the CDF at u ≤ 1/2 is the mirrored upper tail
        let z = if u < 0.5 {
            -upper_tail_inv(u)
        } else {
            upper_tail_inv(1.0 - u)
        };
        z.clamp(a, b)
    }
}

/// Draws from `N(mean, var)` truncated to `(lower, upper)`. Returns `None`
/// when the interval is empty or the prior is improper on an unbounded side.
pub fn truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Option<f64> {
    if !(lower < upper) {
        return None;
    }
    if !var.is_finite() {
        // flat prior: uniform on a bounded interval, otherwise undefined
        if lower.is_finite() && upper.is_finite() {
            return Some(lower + (upper - lower) * rng.random::<f64>());
        }
        return None;
    }
    let sd = var.sqrt();
    let z = standard((lower - mean) / sd, (upper - mean) / sd, rng);
    let x = mean + sd * z;
    Some(x.clamp(lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_of(a: f64, b: f64, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| truncated_normal(0.0, 1.0, a, b, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn exact_mean(a: f64, b: f64) -> f64 {
        let mass = upper_tail(a) - upper_tail(b);
        (phi(a) - phi(b)) / mass
    }

    #[test]
    fn draws_stay_inside_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(a, b) in &[
            (-1.0, 0.5),
            (2.0, 3.0),
            (-3.0, -2.5),
            (9.0, 9.01),
            (12.0, f64::INFINITY),
            (f64::NEG_INFINITY, -20.0),
        ] {
            for _ in 0..200 {
                let x = truncated_normal(0.0, 1.0, a, b, &mut rng).unwrap();
                assert!(x >= a && x <= b, "{x} outside [{a}, {b}]");
            }
        }
    }

    #[test]
    fn means_match_closed_form() {
        for (i, &(a, b)) in [
            (-1.0, 0.5),
            (1.5, 2.5),
            (-0.3, f64::INFINITY),
            (-4.0, -3.0),
            (8.5, f64::INFINITY),
        ]
        .iter()
        .enumerate()
        {
            let m = mean_of(a, b, 100_000, i as u64);
            assert!(
                (m - exact_mean(a, b)).abs() < 0.01,
                "[{a}, {b}]: {m} vs {}",
                exact_mean(a, b)
            );
        }
    }

    #[test]
    fn empty_interval_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_none());
        assert!(truncated_normal(0.0, f64::INFINITY, 0.0, f64::INFINITY, &mut rng).is_none());
        let x = truncated_normal(0.0, f64::INFINITY, 0.0, 2.0, &mut rng).unwrap();
        assert!((0.0..=2.0).contains(&x));
    }
}
