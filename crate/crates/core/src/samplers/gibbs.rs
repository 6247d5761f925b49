//! Updates for the joint samplers that condition on sense labels: the label
//! draw itself, auxiliary-uniform and Pólya-Gamma updates of logistic-normal
//! columns, the additive-effect variant used for DiSC word parameters, and the
//! conjugate draw of the GASC prevalence variance.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::polya_gamma::{sample_pg, sample_pg_approx};
use super::truncnorm::truncated_normal;
use crate::corpus::{PreparedCorpus, Snippet};
use crate::likelihood::sense_posterior;
use crate::math::log_logistic;
use crate::model::{Moments, ProbabilityArrays};

/// Which auxiliary-variable scheme updates a logistic-normal component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxMethod {
    Uniform,
    PolyaGamma,
    PolyaGammaApprox,
}

/// Draws one categorical index from unnormalised log weights.
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(a: &[f64], rng: &mut R) -> usize {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = a.iter().map(|v| (v - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, v) in a.iter().enumerate() {
        u -= (v - m).exp();
        if u <= 0.0 {
            return i;
        }
    }
    a.len() - 1
}

/// Draws every snippet's sense label from its sense posterior.
pub fn gibbs_z<R: Rng + ?Sized>(
    snippets: &[Snippet],
    probs: &ProbabilityArrays,
    rng: &mut R,
) -> Vec<usize> {
    snippets
        .iter()
        .map(|s| {
            let log_post: Vec<f64> = sense_posterior(s, probs).iter().map(|p| p.ln()).collect();
            sample_log_categorical(&log_post, rng)
        })
        .collect()
}

/// Label draw from cached `log φ̃` and per-snippet sense log-likelihoods.
pub(crate) fn gibbs_z_cached<R: Rng + ?Sized>(
    prepared: &PreparedCorpus,
    log_phi: &Array3<f64>,
    ell: &Array2<f64>,
    rng: &mut R,
) -> Vec<usize> {
    let k = ell.ncols();
    let mut a = vec![0.0; k];
    (0..prepared.len())
        .map(|d| {
            let (t, g) = (prepared.time[d], prepared.genre[d]);
            for j in 0..k {
                a[j] = log_phi[[t, g, j]] + ell[[d, j]];
            }
            sample_log_categorical(&a, rng)
        })
        .collect()
}

/// `log(1 - exp(a))` for `a < 0`.
fn log1m_exp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// `logit(exp(lu))`.
fn logit_of_log(lu: f64) -> f64 {
    lu - log1m_exp(lu)
}

/// Bounds on `η` implied by the extreme auxiliary uniforms of a binomial-logistic
/// factor with `successes` out of `total` at the current `η`. The largest of
/// `n` uniforms on `(0, p)` is `p U^{1/n}`.
fn aux_bounds<R: Rng + ?Sized>(eta: f64, successes: u64, total: u64, rng: &mut R) -> (f64, f64) {
    let failures = total - successes;
    let lower = if successes == 0 {
        f64::NEG_INFINITY
    } else {
        let u: f64 = rng.random::<f64>();
        logit_of_log(log_logistic(eta) + u.ln() / successes as f64)
    };
    let upper = if failures == 0 {
        f64::INFINITY
    } else {
        let u: f64 = rng.random::<f64>();
        -logit_of_log(log_logistic(-eta) + u.ln() / failures as f64)
    };
    (lower, upper)
}

/// New value of one logistic-normal component `x` with log-normaliser
/// `log_c` of the other components, `successes` of `total` observations, and
/// conditional prior `prior`. `None` marks a degenerate update (value kept).
fn update_component<R: Rng + ?Sized>(
    x: f64,
    log_c: f64,
    successes: u64,
    total: u64,
    prior: Moments,
    method: AuxMethod,
    rng: &mut R,
) -> Option<f64> {
    if log_c == f64::NEG_INFINITY {
        // a lone category: the likelihood is constant
        return prior
            .var
            .is_finite()
            .then(|| prior.mean + prior.var.sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    let eta = x - log_c;
    match method {
        AuxMethod::Uniform => {
            let (lo, hi) = aux_bounds(eta, successes, total, rng);
            truncated_normal(prior.mean, prior.var, lo + log_c, hi + log_c, rng)
        }
        AuxMethod::PolyaGamma | AuxMethod::PolyaGammaApprox => {
            let omega = if total == 0 {
                0.0
            } else if method == AuxMethod::PolyaGamma {
                sample_pg(total, eta, rng)
            } else {
                sample_pg_approx(total, eta, rng)
            };
            let precision = prior.precision() + omega;
            if !(precision > 0.0) || !precision.is_finite() {
                return None;
            }
            let var = 1.0 / precision;
            let kappa = successes as f64 - 0.5 * total as f64;
            let mean = var * (prior.mean * prior.precision() + kappa + omega * log_c);
            Some(mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// Running `Σ_j exp(x_j - shift)` over a column, for `O(1)` leave-one-out
/// normalisers. Recomputed exactly when one term dominates the sum.
struct ColumnSum {
    shift: f64,
    terms: Vec<f64>,
    total: f64,
}

impl ColumnSum {
    fn new(x: &[f64]) -> Self {
        let shift = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<f64> = x.iter().map(|v| (v - shift).exp()).collect();
        let total = terms.iter().sum();
        ColumnSum {
            shift,
            terms,
            total,
        }
    }

    /// `log Σ_{j≠i} exp(x_j)`.
    fn log_others(&self, i: usize) -> f64 {
        let ti = self.terms[i];
        let rest = if ti > 0.5 * self.total {
            self.terms
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, t)| t)
                .sum()
        } else {
            self.total - ti
        };
        if rest > 0.0 {
            rest.ln() + self.shift
        } else {
            f64::NEG_INFINITY
        }
    }

    fn set(&mut self, i: usize, value: f64, column: &[f64]) {
        if value - self.shift > 600.0 {
            *self = ColumnSum::new(column);
            return;
        }
        let t = (value - self.shift).exp();
        self.total += t - self.terms[i];
        self.terms[i] = t;
    }
}

/// Updates every component of a logistic-normal column in turn.
/// `counts[j]` is the number of observations in category `j`; `priors[j]` is
/// the full-conditional prior of component `j`. Returns the number of
/// degenerate (kept) updates.
pub fn update_logistic_column<R: Rng + ?Sized>(
    x: &mut [f64],
    counts: &[u64],
    priors: &[Moments],
    method: AuxMethod,
    rng: &mut R,
) -> usize {
    let total: u64 = counts.iter().sum();
    let mut sums = ColumnSum::new(x);
    let mut degenerate = 0;
    for i in 0..x.len() {
        let log_c = sums.log_others(i);
        match update_component(x[i], log_c, counts[i], total, priors[i], method, rng) {
            Some(v) if v.is_finite() => {
                x[i] = v;
                sums.set(i, v, x);
            }
            _ => degenerate += 1,
        }
    }
    degenerate
}

/// Auxiliary-uniform update of one column.
pub fn aux_uniform_update<R: Rng + ?Sized>(
    x: &mut [f64],
    counts: &[u64],
    priors: &[Moments],
    rng: &mut R,
) -> usize {
    update_logistic_column(x, counts, priors, AuxMethod::Uniform, rng)
}

/// Pólya-Gamma update of one column, exact or moment-matched.
pub fn polya_gamma_update<R: Rng + ?Sized>(
    x: &mut [f64],
    counts: &[u64],
    priors: &[Moments],
    approximate: bool,
    rng: &mut R,
) -> usize {
    let method = if approximate {
        AuxMethod::PolyaGammaApprox
    } else {
        AuxMethod::PolyaGamma
    };
    update_logistic_column(x, counts, priors, method, rng)
}

/// One binomial-logistic factor acting on an additive effect `x`: the factor's
/// linear predictor is `x + offset - log_c`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Factor {
    pub offset: f64,
    pub log_c: f64,
    pub successes: u64,
    pub total: u64,
}

/// Auxiliary-uniform update of an additive effect shared by several factors;
/// the region is the intersection of the per-factor regions.
pub(crate) fn update_additive<R: Rng + ?Sized>(
    x: f64,
    factors: &[Factor],
    prior: Moments,
    rng: &mut R,
) -> Option<f64> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for f in factors {
        if f.total == 0 {
            continue;
        }
        let shift = f.log_c - f.offset;
        let (l, h) = aux_bounds(x - shift, f.successes, f.total, rng);
        lo = lo.max(l + shift);
        hi = hi.min(h + shift);
    }
    truncated_normal(prior.mean, prior.var, lo, hi, rng)
}

/// Running leave-one-out normalisers of every `(t, k)` row of `ψ = χ + θ`.
pub(crate) struct RowSums {
    sums: Vec<ColumnSum>,
    k: usize,
}

impl RowSums {
    pub fn new(psi: &Array3<f64>) -> Self {
        let (t, k, _) = psi.dim();
        let mut sums = Vec::with_capacity(t * k);
        for ti in 0..t {
            for ki in 0..k {
                let row = psi.slice(ndarray::s![ti, ki, ..]);
                sums.push(ColumnSum::new(row.as_slice().expect("standard layout")));
            }
        }
        RowSums { sums, k }
    }

    pub fn log_others(&self, t: usize, k: usize, v: usize) -> f64 {
        self.sums[t * self.k + k].log_others(v)
    }

    pub fn set(&mut self, t: usize, k: usize, v: usize, value: f64, row: &[f64]) {
        self.sums[t * self.k + k].set(v, value, row);
    }
}

/// Conjugate draw of the GASC prevalence variance given `φ` `(T, G, K)`:
/// increments have variance `2κ`, so the full conditional is
/// `InvGamma(a + KG(T-1)/2, b + Σ Δ² / 4)`.
pub fn sample_kappa_phi_gasc<R: Rng + ?Sized>(
    phi: &Array3<f64>,
    a: f64,
    b: f64,
    rng: &mut R,
) -> f64 {
    let (shape, rate) = kappa_phi_posterior(phi, a, b);
    let gamma = Gamma::new(shape, 1.0 / rate).expect("positive shape and rate");
    1.0 / gamma.sample(rng)
}

/// Shape and rate of the full conditional of `κ_φ`.
pub fn kappa_phi_posterior(phi: &Array3<f64>, a: f64, b: f64) -> (f64, f64) {
    let (t, g, k) = phi.dim();
    let mut ss = 0.0;
    for ti in 1..t {
        for gi in 0..g {
            for ki in 0..k {
                let d = phi[[ti, gi, ki]] - phi[[ti - 1, gi, ki]];
                ss += d * d;
            }
        }
    }
    let increments = (k * g * t.saturating_sub(1)) as f64;
    (a + 0.5 * increments, b + 0.25 * ss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SnippetCorpus;
    use crate::math::logistic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Posterior mean of `logistic(x)` for `x ~ N(0, 1)` and `s` of `n`
    /// successes, by quadrature on a fine grid.
    fn quadrature_mean(s: u64, n: u64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-3;
        let mut x = -10.0;
        while x <= 10.0 {
            let p = logistic(x);
            let w = (-0.5 * x * x).exp() * p.powi(s as i32) * (1.0 - p).powi((n - s) as i32);
            num += w * p;
            den += w;
            x += h;
        }
        num / den
    }

    #[test]
    fn single_category_column_with_no_data_is_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let priors = [Moments {
            mean: 1.5,
            var: 0.25,
        }];
        let n = 20_000;
        let mut total = 0.0;
        for _ in 0..n {
            let mut x = [0.0];
            assert_eq!(aux_uniform_update(&mut x, &[0], &priors, &mut rng), 0);
            total += x[0];
        }
        assert!((total / n as f64 - 1.5).abs() < 0.02);
    }

    #[test]
    fn binomial_logistic_posterior_matches_quadrature() {
        let (s, n) = (7u64, 20u64);
        let exact = quadrature_mean(s, n);
        for (i, method) in [AuxMethod::Uniform, AuxMethod::PolyaGamma]
            .into_iter()
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
            let mut x = 0.0;
            let prior = Moments {
                mean: 0.0,
                var: 1.0,
            };
            let mut acc = 0.0;
            let iters = 40_000;
            for it in 0..iters + 1000 {
                if let Some(v) = update_component(x, 0.0, s, n, prior, method, &mut rng) {
                    x = v;
                }
                if it >= 1000 {
                    acc += logistic(x);
                }
            }
            let mean = acc / iters as f64;
            assert!((mean - exact).abs() < 0.01, "{method:?}: {mean} vs {exact}");
        }
    }

    #[test]
    fn all_successes_leave_upper_bound_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (lo, hi) = aux_bounds(0.3, 10, 10, &mut rng);
            assert_eq!(hi, f64::INFINITY);
            assert!(lo < 0.3);
        }
        let (lo, hi) = aux_bounds(0.3, 0, 0, &mut rng);
        assert_eq!((lo, hi), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn lower_bound_is_transformed_max_of_uniforms() {
        // max of N uniforms on (0, p) equals p * Beta(N, 1); check its mean
        let (eta, n) = (0.4f64, 5u64);
        let p = logistic(eta);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 50_000;
        let mean_u: f64 = (0..reps)
            .map(|_| logistic(aux_bounds(eta, n, n, &mut rng).0))
            .sum::<f64>()
            / reps as f64;
        assert!((mean_u - p * n as f64 / (n as f64 + 1.0)).abs() < 0.003);
    }

    #[test]
    fn kappa_posterior_parameters() {
        let phi = Array3::zeros((4, 2, 3));
        assert_eq!(kappa_phi_posterior(&phi, 7.0, 3.0), (7.0 + 9.0, 3.0));
        let single = Array3::zeros((1, 2, 3));
        assert_eq!(kappa_phi_posterior(&single, 7.0, 3.0), (7.0, 3.0));
        let mut phi = Array3::zeros((2, 1, 1));
        phi[[1, 0, 0]] = 2.0;
        assert_eq!(kappa_phi_posterior(&phi, 7.0, 3.0), (7.5, 4.0));
    }

    #[test]
    fn kappa_draw_matches_one_dimensional_quadrature() {
        // one increment Δ = 1.2: posterior ∝ InvGamma(κ; a, b) N(Δ; 0, 2κ)
        let (a, b, delta) = (7.0, 3.0, 1.2f64);
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-4;
        let mut k: f64 = h;
        while k < 20.0 {
            let lw = crate::model::inv_gamma_log_pdf(k, a, b)
                - 0.5 * (4.0 * std::f64::consts::PI * k).ln()
                - delta * delta / (4.0 * k);
            num += k * lw.exp();
            den += lw.exp();
            k += h;
        }
        let exact = num / den;
        let mut phi = Array3::zeros((2, 1, 1));
        phi[[1, 0, 0]] = delta;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mc = (0..n)
            .map(|_| sample_kappa_phi_gasc(&phi, a, b, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mc / exact - 1.0).abs() < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn degenerate_prevalence_fixes_labels() {
        let corpus = SnippetCorpus::new(
            (0..20)
                .map(|i| Snippet {
                    id: format!("s{i}"),
                    time: 0,
                    genre: 0,
                    words: vec![0, 1],
                })
                .collect(),
            2,
            1,
            1,
        )
        .unwrap();
        let probs = ProbabilityArrays {
            phi: Array3::from_shape_vec((1, 1, 2), vec![1.0, 1e-300]).unwrap(),
            psi: Array3::from_elem((1, 2, 2), 0.5),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gibbs_z(&corpus.snippets, &probs, &mut rng)
            .iter()
            .all(|&z| z == 0));
    }

    #[test]
    fn label_frequencies_match_sense_posterior() {
        let s = Snippet {
            id: "a".into(),
            time: 0,
            genre: 0,
            words: vec![0, 1, 0],
        };
        let probs = ProbabilityArrays {
            phi: Array3::from_shape_vec((1, 1, 2), vec![0.4, 0.6]).unwrap(),
            psi: Array3::from_shape_vec((1, 2, 3), vec![0.5, 0.3, 0.2, 0.3, 0.3, 0.4]).unwrap(),
        };
        let post = sense_posterior(&s, &probs);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| gibbs_z(std::slice::from_ref(&s), &probs, &mut rng)[0] == 1)
            .count();
        let p = post[1];
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - p).abs() < 3.0 * se);
    }
}
