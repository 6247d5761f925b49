//! Gradient-based Metropolis–Hastings kernels: MALA and leapfrog HMC with a
//! unit mass matrix. One leapfrog step of size `σ` proposes exactly the MALA
//! move with variance `σ²`.

use rand::Rng;
use rand_distr::StandardNormal;

/// Energy change beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable unnormalised log density.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns `log π(x)` and writes `∇ log π(x)` into `grad`.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// What happened to one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub accepted: bool,
    pub divergent: bool,
    /// The proposal (or its gradient) was not finite.
    pub non_finite: bool,
    pub log_accept_ratio: f64,
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// `log q(to | from)` for the Langevin proposal `N(from + σ²/2 ∇, σ² I)`,
/// up to a constant shared by both directions.
pub fn mala_log_q(to: &[f64], from: &[f64], grad_from: &[f64], sigma2: f64) -> f64 {
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - 0.5 * sigma2 * g;
            r * r
        })
        .sum();
    -ss / (2.0 * sigma2)
}

/// Explicit Metropolis–Hastings log ratio for a Langevin move.
pub fn mala_log_accept_ratio(
    x: &[f64],
    logp_x: f64,
    grad_x: &[f64],
    y: &[f64],
    logp_y: f64,
    grad_y: &[f64],
    sigma2: f64,
) -> f64 {
    logp_y - logp_x + mala_log_q(x, y, grad_y, sigma2) - mala_log_q(y, x, grad_x, sigma2)
}

/// One MALA update of `x` in place.
pub fn mala_step<T: LogDensity, R: Rng + ?Sized>(
    target: &mut T,
    x: &mut [f64],
    sigma2: f64,
    rng: &mut R,
) -> StepOutcome {
    let n = target.dim();
    let mut grad = vec![0.0; n];
    let logp = target.eval(x, &mut grad);
    if !logp.is_finite() || !all_finite(&grad) {
        return StepOutcome {
            non_finite: true,
            ..Default::default()
        };
    }
    let sigma = sigma2.sqrt();
    let y: Vec<f64> = x
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| xi + 0.5 * sigma2 * gi + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut grad_y = vec![0.0; n];
    let logp_y = target.eval(&y, &mut grad_y);
    if !logp_y.is_finite() || !all_finite(&grad_y) {
        return StepOutcome {
            non_finite: true,
            ..Default::default()
        };
    }
    let log_ratio = mala_log_accept_ratio(x, logp, &grad, &y, logp_y, &grad_y, sigma2);
    let accepted = rng.random::<f64>().ln() < log_ratio;
    if accepted {
        x.copy_from_slice(&y);
    }
    StepOutcome {
        accepted,
        log_accept_ratio: log_ratio,
        ..Default::default()
    }
}

/// Runs `steps` leapfrog steps of size `eps` from `(x, p)` with `grad` the
/// gradient at `x`. Updates all three in place and returns `log π` at the end
/// point.
pub fn leapfrog<T: LogDensity>(
    target: &mut T,
    x: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    steps: usize,
) -> f64 {
    let mut logp = f64::NAN;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
        for (xi, pi) in x.iter_mut().zip(p.iter()) {
            *xi += eps * pi;
        }
        logp = target.eval(x, grad);
        if !logp.is_finite() || !all_finite(grad) {
            return f64::NAN;
        }
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
    }
    logp
}

/// One HMC update of `x` in place with step size `sqrt(sigma2)` and `steps`
/// leapfrog steps.
pub fn hmc_step<T: LogDensity, R: Rng + ?Sized>(
    target: &mut T,
    x: &mut [f64],
    sigma2: f64,
    steps: usize,
    rng: &mut R,
) -> StepOutcome {
    let n = target.dim();
    let mut grad = vec![0.0; n];
    let logp = target.eval(x, &mut grad);
    if !logp.is_finite() || !all_finite(&grad) {
        return StepOutcome {
            non_finite: true,
            ..Default::default()
        };
    }
    let mut p: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let kinetic0: f64 = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let mut y = x.to_vec();
    let logp_y = leapfrog(
        target,
        &mut y,
        &mut p,
        &mut grad,
        sigma2.sqrt(),
        steps.max(1),
    );
    if !logp_y.is_finite() {
        return StepOutcome {
            non_finite: true,
            divergent: true,
            ..Default::default()
        };
    }
    let kinetic1: f64 = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    // H = -log π + kinetic; acceptance is exp(-ΔH)
    let delta_h = (kinetic1 - logp_y) - (kinetic0 - logp);
    if delta_h.abs() > DIVERGENCE_THRESHOLD {
        return StepOutcome {
            divergent: true,
            log_accept_ratio: -delta_h,
            ..Default::default()
        };
    }
    let accepted = rng.random::<f64>().ln() < -delta_h;
    if accepted {
        x.copy_from_slice(&y);
    }
    StepOutcome {
        accepted,
        log_accept_ratio: -delta_h,
        ..Default::default()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent Gaussian with per-coordinate means and variances.
    pub(crate) struct Gaussian {
        pub mean: Vec<f64>,
        pub var: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let r = x[i] - self.mean[i];
                lp -= 0.5 * r * r / self.var[i];
                grad[i] = -r / self.var[i];
            }
            lp
        }
    }

    #[test]
    fn tiny_steps_are_almost_always_accepted() {
        let mut target = Gaussian {
            mean: vec![0.5, -1.0, 2.0],
            var: vec![1.0, 0.3, 2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.1, 0.2, 0.3];
        for _ in 0..100 {
            let out = mala_step(&mut target, &mut x, 1e-12, &mut rng);
            assert!(out.log_accept_ratio.min(0.0).exp() >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn one_leapfrog_step_is_the_langevin_proposal() {
        let mut target = Gaussian {
            mean: vec![0.3, -0.7],
            var: vec![0.5, 2.0],
        };
        let sigma2: f64 = 0.2;
        let x = vec![1.0, 1.5];
        let mut g0 = vec![0.0; 2];
        target.eval(&x, &mut g0);
        let p0 = vec![0.4, -1.3];
        let (mut y, mut p, mut g) = (x.clone(), p0.clone(), g0.clone());
        leapfrog(&mut target, &mut y, &mut p, &mut g, sigma2.sqrt(), 1);
        for i in 0..2 {
            let expected = x[i] + 0.5 * sigma2 * g0[i] + sigma2.sqrt() * p0[i];
            assert!((y[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn hastings_ratio_agrees_with_energy_difference() {
        let mut target = Gaussian {
            mean: vec![0.3, -0.7, 1.1],
            var: vec![0.5, 2.0, 0.1],
        };
        let sigma2: f64 = 0.05;
        let x = vec![1.0, 1.5, 0.9];
        let mut gx = vec![0.0; 3];
        let lx = target.eval(&x, &mut gx);
        let p0 = vec![0.4, -1.3, 0.2];
        let (mut y, mut p, mut gy) = (x.clone(), p0.clone(), gx.clone());
        let ly = leapfrog(&mut target, &mut y, &mut p, &mut gy, sigma2.sqrt(), 1);
        let explicit = mala_log_accept_ratio(&x, lx, &gx, &y, ly, &gy, sigma2);
        let k0: f64 = p0.iter().map(|v| 0.5 * v * v).sum();
        let k1: f64 = p.iter().map(|v| 0.5 * v * v).sum();
        let energy = -((k1 - ly) - (k0 - lx));
        assert!((explicit - energy).abs() < 1e-10);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mut target = Gaussian {
            mean: vec![0.3, -0.7],
            var: vec![0.5, 2.0],
        };
        let x = vec![1.0, 1.5];
        let mut g = vec![0.0; 2];
        target.eval(&x, &mut g);
        let (mut y, mut p) = (x.clone(), vec![0.4, -1.3]);
        leapfrog(&mut target, &mut y, &mut p, &mut g, 0.1, 7);
        p.iter_mut().for_each(|v| *v = -*v);
        leapfrog(&mut target, &mut y, &mut p, &mut g, 0.1, 7);
        for i in 0..2 {
            assert!((y[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_is_nearly_conserved_for_small_steps() {
        let mut target = Gaussian {
            mean: vec![0.0; 4],
            var: vec![1.0, 0.5, 2.0, 1.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.5, -0.2, 1.0, 0.3];
        for _ in 0..50 {
            let out = hmc_step(&mut target, &mut x, 1e-6, 5, &mut rng);
            assert!(out.log_accept_ratio.abs() < 1e-4);
        }
    }
}
