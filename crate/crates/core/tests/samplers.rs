//! Stationarity and bookkeeping checks for the samplers.

use disc_core::evaluate::matched_senses;
use disc_core::model::{Dims, Hyperparams, LatentState, ModelSpec, Moments, WordParams};
use disc_core::samplers::gradient::{hmc_step, mala_step, LogDensity};
use disc_core::samplers::{
    aux_uniform_update, polya_gamma_update, run_chain, ChainConfig, Init, SamplerKind,
};
use disc_core::simulate::{simulate_observations, simulate_prior_with_start, SimConfig, SimOutput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUCCESSES: u64 = 7;
const TRIALS: u64 = 20;

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// `N(0, 1)` prior times a binomial-logistic likelihood.
fn log_target(y: f64) -> f64 {
    let (s, f) = (SUCCESSES as f64, (TRIALS - SUCCESSES) as f64);
    -0.5 * y * y + s * sigmoid(y).ln() + f * (1.0 - sigmoid(y)).ln()
}

struct Logistic1d;

impl LogDensity for Logistic1d {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = -x[0] + SUCCESSES as f64 - TRIALS as f64 * sigmoid(x[0]);
        log_target(x[0])
    }
}

/// Target CDF by trapezoidal quadrature on a fine grid.
fn target_cdf() -> impl Fn(f64) -> f64 {
    let (lo, hi, n) = (-10.0, 10.0, 40_001);
    let h = (hi - lo) / (n - 1) as f64;
    let dens: Vec<f64> = (0..n)
        .map(|i| log_target(lo + h * i as f64).exp())
        .collect();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
    }
    let total = cum[n - 1];
    move |y: f64| {
        let pos = ((y - lo) / h).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        ((1.0 - w) * cum[i] + w * cum[i + 1]) / total
    }
}

/// One-sample Kolmogorov–Smirnov p-value (asymptotic distribution).
fn ks_p_value(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = cdf(y);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|j| 2.0 * (-1f64).powi(j - 1) * (-2.0 * (j * j) as f64 * lambda * lambda).exp())
        .sum();
    p.clamp(0.0, 1.0)
}

/// Thinned draws of `x[0] - x[1]` from a two-category logistic column whose
/// second component is pinned near zero by its prior.
fn column_draws(
    mut update: impl FnMut(&mut [f64], &[u64], &[Moments], &mut ChaCha8Rng),
    seed: u64,
) -> Vec<f64> {
    let counts = [SUCCESSES, TRIALS - SUCCESSES];
    let priors = [
        Moments {
            mean: 0.0,
            var: 1.0,
        },
        Moments {
            mean: 0.0,
            var: 1e-10,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = [0.0, 0.0];
    let mut out = Vec::new();
    for i in 0..60_000 {
        update(&mut x, &counts, &priors, &mut rng);
        if i >= 1000 && i % 25 == 0 {
            out.push(x[0] - x[1]);
        }
    }
    out
}

#[test]
fn auxiliary_updates_leave_the_target_invariant() {
    let cdf = target_cdf();
    let cases: [(&str, Vec<f64>); 3] = [
        (
            "aux-uniform",
            column_draws(
                |x, c, p, r| {
                    aux_uniform_update(x, c, p, r);
                },
                1,
            ),
        ),
        (
            "pg",
            column_draws(
                |x, c, p, r| {
                    polya_gamma_update(x, c, p, false, r);
                },
                2,
            ),
        ),
        (
            "pg-approx",
            column_draws(
                |x, c, p, r| {
                    polya_gamma_update(x, c, p, true, r);
                },
                3,
            ),
        ),
    ];
    for (name, mut draws) in cases {
        let p = ks_p_value(&mut draws, &cdf);
        assert!(p > 0.01, "{name}: KS p = {p}");
    }
}

#[test]
fn gradient_kernels_leave_the_target_invariant() {
    let cdf = target_cdf();
    for (name, seed) in [("mala", 4u64), ("hmc", 5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = [0.0];
        let mut draws = Vec::new();
        for i in 0..60_000 {
            if name == "mala" {
                mala_step(&mut Logistic1d, &mut x, 0.3, &mut rng);
            } else {
                hmc_step(&mut Logistic1d, &mut x, 0.1, 5, &mut rng);
            }
            if i >= 1000 && i % 25 == 0 {
                draws.push(x[0]);
            }
        }
        let p = ks_p_value(&mut draws, &cdf);
        assert!(p > 0.01, "{name}: KS p = {p}");
    }
}

fn tiny_disc() -> (ModelSpec, SimOutput) {
    let spec = ModelSpec::new(
        Dims {
            k: 2,
            v: 20,
            t: 3,
            g: 1,
        },
        Hyperparams::disc_default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let state = simulate_prior_with_start(&spec, 1.0, &mut rng);
    let sim =
        simulate_observations(&state, &SimConfig::new(spec.clone(), 30, 21), &mut rng).unwrap();
    (spec, sim)
}

fn config(
    spec: &ModelSpec,
    sampler: SamplerKind,
    iterations: usize,
    burn_in: usize,
) -> ChainConfig {
    let mut cfg = ChainConfig::for_family(spec.family(), sampler);
    cfg.iterations = iterations;
    cfg.burn_in = burn_in;
    cfg.seed = 8;
    cfg
}

#[test]
fn chains_are_reproducible() {
    let (spec, sim) = tiny_disc();
    for sampler in SamplerKind::ALL {
        let cfg = config(&spec, sampler, 120, 60);
        let a = run_chain(&sim.corpus, &spec, &cfg, &Init::Prior).unwrap();
        let b = run_chain(&sim.corpus, &spec, &cfg, &Init::Prior).unwrap();
        assert_eq!(a.draws, b.draws, "{}", sampler.name());
        assert_eq!(a.blocks, b.blocks, "{}", sampler.name());
    }
}

#[test]
fn tuning_is_frozen_after_burn_in() {
    let (spec, sim) = tiny_disc();
    for sampler in [
        SamplerKind::Mala,
        SamplerKind::Hmc,
        SamplerKind::MixedMalaHmc,
    ] {
        let short = run_chain(
            &sim.corpus,
            &spec,
            &config(&spec, sampler, 301, 300),
            &Init::Prior,
        )
        .unwrap();
        let long = run_chain(
            &sim.corpus,
            &spec,
            &config(&spec, sampler, 800, 300),
            &Init::Prior,
        )
        .unwrap();
        for (a, b) in short.blocks.iter().zip(&long.blocks) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.sigma2, b.sigma2, "{} {}", sampler.name(), a.name);
        }
    }
}

#[test]
fn thinning_sets_the_number_of_stored_draws() {
    let (spec, sim) = tiny_disc();
    let mut cfg = config(&spec, SamplerKind::AuxUniform, 300, 100);
    cfg.thin = 7;
    let out = run_chain(&sim.corpus, &spec, &cfg, &Init::Prior).unwrap();
    assert_eq!(out.n_draws(), 200 / 7);
    assert_eq!(out.n_draws(), cfg.n_draws());
    assert_eq!(
        out.draws.ncols(),
        LatentState::zeros(&spec).values().count()
    );
}

fn swap_senses(state: &LatentState) -> LatentState {
    let mut out = state.clone();
    out.phi.invert_axis(ndarray::Axis(2));
    if let WordParams::Disc { chi, .. } = &mut out.words {
        chi.invert_axis(ndarray::Axis(0));
    }
    out
}

#[test]
fn relabelled_start_permutes_the_posterior() {
    let (spec, sim) = tiny_disc();
    let cfg = config(&spec, SamplerKind::MixedMalaHmc, 4000, 2000);
    let a = run_chain(
        &sim.corpus,
        &spec,
        &cfg,
        &Init::State(sim.true_state.clone()),
    )
    .unwrap();
    let b = run_chain(
        &sim.corpus,
        &spec,
        &cfg,
        &Init::State(swap_senses(&sim.true_state)),
    )
    .unwrap();
    assert_eq!(matched_senses(&a, &b).unwrap(), vec![1, 0]);
    let (pa, pb) = (a.posterior_means(), b.posterior_means());
    for t in 0..3 {
        for k in 0..2 {
            let gap = (pa.phi[[t, 0, k]] - pb.phi[[t, 0, 1 - k]]).abs();
            assert!(gap < 0.05, "t={t} k={k} gap {gap}");
        }
    }
}

#[test]
fn simulated_snippets_are_exchangeable_within_a_period() {
    let spec = ModelSpec::new(
        Dims {
            k: 3,
            v: 15,
            t: 2,
            g: 1,
        },
        Hyperparams::disc_default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let state = simulate_prior_with_start(&spec, 1.0, &mut rng);
    let sim =
        simulate_observations(&state, &SimConfig::new(spec.clone(), 8000, 31), &mut rng).unwrap();
    for t in 0..2 {
        let block: Vec<_> = sim.corpus.snippets.iter().filter(|s| s.time == t).collect();
        let (first, second) = block.split_at(block.len() / 2);
        let n = first.len() as f64;
        for k in 0..3 {
            let share = |half: &[&disc_core::corpus::Snippet]| {
                half.iter().filter(|s| sim.truth.labels[&s.id] == k).count() as f64 / n
            };
            let (a, b) = (share(first), share(second));
            let p = 0.5 * (a + b);
            let se = (2.0 * p * (1.0 - p) / n).sqrt();
            assert!((a - b).abs() <= 4.0 * se + 1e-12, "t={t} k={k}: {a} vs {b}");
        }
        let mean_len = |half: &[&disc_core::corpus::Snippet]| {
            half.iter().map(|s| s.words.len()).sum::<usize>() as f64 / n
        };
        assert!((mean_len(first) - mean_len(second)).abs() < 0.15);
    }
}
