//! Snippet likelihoods, the marginal likelihood summed over sense labels, the
//! per-snippet sense posterior and analytic gradients of the log marginal
//! likelihood with respect to each parameter block.
//!
//! Everything is evaluated in log space; products of word probabilities are
//! never formed directly.

use ndarray::{s, Array2, Array3};

use crate::corpus::{count_tables, Bag, PreparedCorpus, Snippet, SnippetCorpus};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, pairwise_sum};
use crate::model::{
    derive_probability_arrays, log_prior, LatentState, ModelSpec, ProbabilityArrays,
};

/// `Σ_i log ψ̃[τ, k, w_i]`; zero for an empty snippet.
pub fn snippet_log_likelihood_given_sense(snippet: &Snippet, k: usize, psi: &Array3<f64>) -> f64 {
    snippet
        .words
        .iter()
        .map(|&w| psi[[snippet.time, k, w as usize]].ln())
        .sum()
}

fn check_dims(corpus: &SnippetCorpus, probs: &ProbabilityArrays) -> Result<()> {
    let d = probs.dims();
    if d.v != corpus.v || d.t != corpus.t || d.g != corpus.g {
        return Err(Error::Dimension(format!(
            "probability arrays are V={} T={} G={}, corpus is V={} T={} G={}",
            d.v, d.t, d.g, corpus.v, corpus.t, corpus.g
        )));
    }
    Ok(())
}

fn snippet_sense_log_weights(snippet: &Snippet, probs: &ProbabilityArrays) -> Vec<f64> {
    let k = probs.phi.dim().2;
    (0..k)
        .map(|ki| {
            probs.phi[[snippet.time, snippet.genre, ki]].ln()
                + snippet_log_likelihood_given_sense(snippet, ki, &probs.psi)
        })
        .collect()
}

/// `Σ_d log Σ_k φ̃[τ_d, γ_d, k] Π_i ψ̃[τ_d, k, w_di]`.
pub fn log_marginal_likelihood(corpus: &SnippetCorpus, probs: &ProbabilityArrays) -> Result<f64> {
    check_dims(corpus, probs)?;
    let terms: Vec<f64> = corpus
        .snippets
        .iter()
        .map(|s| log_sum_exp(&snippet_sense_log_weights(s, probs)))
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Posterior probability of each sense for one snippet given the parameters.
pub fn sense_posterior(snippet: &Snippet, probs: &ProbabilityArrays) -> Vec<f64> {
    let a = snippet_sense_log_weights(snippet, probs);
    let lse = log_sum_exp(&a);
    a.iter().map(|x| (x - lse).exp()).collect()
}

/// Unnormalised log joint posterior of parameters and sense labels, evaluated
/// through the count tables.
pub fn log_joint_posterior(
    corpus: &SnippetCorpus,
    state: &LatentState,
    labels: &[Option<usize>],
    spec: &ModelSpec,
) -> Result<f64> {
    let probs = derive_probability_arrays(state, spec)?;
    check_dims(corpus, &probs)?;
    let counts = count_tables(corpus, labels, spec.dims.k)?;
    let mut total = log_prior(state, spec)?;
    for (&n, &p) in counts.n_z.iter().zip(probs.phi.iter()) {
        if n > 0 {
            total += n as f64 * p.ln();
        }
    }
    for (&n, &p) in counts.n_wz.iter().zip(probs.psi.iter()) {
        if n > 0 {
            total += n as f64 * p.ln();
        }
    }
    Ok(total)
}

/// Per-snippet sense log-likelihoods `ℓ[d, k] = Σ_i log ψ̃[τ_d, k, w_di]`.
pub(crate) fn sense_log_likelihoods(
    prepared: &PreparedCorpus,
    log_psi: &Array3<f64>,
) -> Array2<f64> {
    let k = log_psi.dim().1;
    let mut ell = Array2::zeros((prepared.len(), k));
    for (d, bag) in prepared.bags.iter().enumerate() {
        let t = prepared.time[d];
        for ki in 0..k {
            ell[[d, ki]] = bag.dot(
                log_psi
                    .slice(s![t, ki, ..])
                    .as_slice()
                    .expect("standard layout"),
            );
        }
    }
    ell
}

/// Responsibilities `r[d, k]` (the sense posterior of each snippet) together
/// with the quantities every gradient shares. Computed once per state.
#[derive(Debug, Clone)]
pub struct LikelihoodTerms<'a> {
    prepared: &'a PreparedCorpus,
    phi: Array3<f64>,
    psi: Array3<f64>,
    /// `(D, K)` responsibilities.
    pub resp: Array2<f64>,
    /// Per-snippet log marginal likelihood.
    pub snippet_log_lik: Vec<f64>,
}

impl<'a> LikelihoodTerms<'a> {
    pub fn new(prepared: &'a PreparedCorpus, probs: &ProbabilityArrays) -> Result<Self> {
        let d = probs.dims();
        if d.v != prepared.v || d.t != prepared.t || d.g != prepared.g {
            return Err(Error::Dimension(
                "probability arrays do not match the corpus".into(),
            ));
        }
        let log_phi = probs.phi.mapv(f64::ln);
        let log_psi = probs.psi.mapv(f64::ln);
        let ell = sense_log_likelihoods(prepared, &log_psi);
        let (resp, snippet_log_lik) = responsibilities(prepared, &log_phi, &ell);
        Ok(LikelihoodTerms {
            prepared,
            phi: probs.phi.clone(),
            psi: probs.psi.clone(),
            resp,
            snippet_log_lik,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        pairwise_sum(&self.snippet_log_lik)
    }

    /// Gradient with respect to `φ[t, g, ..]` of the log likelihood of the
    /// snippets in block `(t, g)`: `Σ_d r[d, j] - φ̃_j N_{g,t}`.
    pub fn grad_phi(&self, t: usize, g: usize) -> Vec<f64> {
        let k = self.phi.dim().2;
        let block = self.prepared.block(t, g);
        let mut grad = vec![0.0; k];
        for &d in block {
            for (gj, r) in grad.iter_mut().zip(self.resp.row(d)) {
                *gj += r;
            }
        }
        let n = block.len() as f64;
        for (j, gj) in grad.iter_mut().enumerate() {
            *gj -= self.phi[[t, g, j]] * n;
        }
        grad
    }

    /// Gradient with respect to `ψ[t, k, ..]`:
    /// `Σ_{d: τ_d = t} r[d, k] (c_dj - L_d ψ̃_j)`.
    pub fn grad_psi(&self, t: usize, k: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.prepared.v];
        let mut mass = 0.0;
        for &d in self.prepared.at_time(t) {
            let r = self.resp[[d, k]];
            let bag = &self.prepared.bags[d];
            scatter(&mut grad, bag, r);
            mass += r * bag.len as f64;
        }
        for (gj, &p) in grad.iter_mut().zip(self.psi.slice(s![t, k, ..])) {
            *gj -= mass * p;
        }
        grad
    }

    /// Gradient with respect to `θ[t, ..]`: `Σ_k ∂/∂ψ[t, k, ..]`, simplified
    /// to `Σ_d (c_dj - L_d Σ_k r[d, k] ψ̃[t, k, j])`.
    pub fn grad_theta(&self, t: usize) -> Vec<f64> {
        let k = self.phi.dim().2;
        let mut grad = vec![0.0; self.prepared.v];
        let mut mass = vec![0.0; k];
        for &d in self.prepared.at_time(t) {
            let bag = &self.prepared.bags[d];
            scatter(&mut grad, bag, 1.0);
            for (m, r) in mass.iter_mut().zip(self.resp.row(d)) {
                *m += r * bag.len as f64;
            }
        }
        for (ki, m) in mass.iter().enumerate() {
            for (gj, &p) in grad.iter_mut().zip(self.psi.slice(s![t, ki, ..])) {
                *gj -= m * p;
            }
        }
        grad
    }

    /// Gradient with respect to `χ[k, ..]`: `Σ_t ∂/∂ψ[t, k, ..]`.
    pub fn grad_chi(&self, k: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.prepared.v];
        for t in 0..self.prepared.t {
            for (a, b) in grad.iter_mut().zip(self.grad_psi(t, k)) {
                *a += b;
            }
        }
        grad
    }
}

fn scatter(grad: &mut [f64], bag: &Bag, weight: f64) {
    for (&w, &c) in bag.words.iter().zip(&bag.counts) {
        grad[w as usize] += weight * c as f64;
    }
}

/// Responsibilities and per-snippet log marginals from `log φ̃` and `ℓ`.
pub(crate) fn responsibilities(
    prepared: &PreparedCorpus,
    log_phi: &Array3<f64>,
    ell: &Array2<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let k = ell.ncols();
    let mut resp = Array2::zeros((prepared.len(), k));
    let mut lls = Vec::with_capacity(prepared.len());
    let mut a = vec![0.0; k];
    for d in 0..prepared.len() {
        let (t, g) = (prepared.time[d], prepared.genre[d]);
        for ki in 0..k {
            a[ki] = log_phi[[t, g, ki]] + ell[[d, ki]];
        }
        let lse = log_sum_exp(&a);
        for ki in 0..k {
            resp[[d, ki]] = (a[ki] - lse).exp();
        }
        lls.push(lse);
    }
    (resp, lls)
}

/// Convenience wrappers computing the shared terms for a single gradient.
pub fn grad_phi(
    corpus: &SnippetCorpus,
    probs: &ProbabilityArrays,
    t: usize,
    g: usize,
) -> Result<Vec<f64>> {
    let prepared = PreparedCorpus::new(corpus);
    Ok(LikelihoodTerms::new(&prepared, probs)?.grad_phi(t, g))
}

pub fn grad_psi(
    corpus: &SnippetCorpus,
    probs: &ProbabilityArrays,
    t: usize,
    k: usize,
) -> Result<Vec<f64>> {
    let prepared = PreparedCorpus::new(corpus);
    Ok(LikelihoodTerms::new(&prepared, probs)?.grad_psi(t, k))
}

pub fn grad_theta(corpus: &SnippetCorpus, probs: &ProbabilityArrays, t: usize) -> Result<Vec<f64>> {
    let prepared = PreparedCorpus::new(corpus);
    Ok(LikelihoodTerms::new(&prepared, probs)?.grad_theta(t))
}

pub fn grad_chi(corpus: &SnippetCorpus, probs: &ProbabilityArrays, k: usize) -> Result<Vec<f64>> {
    let prepared = PreparedCorpus::new(corpus);
    Ok(LikelihoodTerms::new(&prepared, probs)?.grad_chi(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, Hyperparams};

    fn snip(id: &str, time: usize, genre: usize, words: &[u32]) -> Snippet {
        Snippet {
            id: id.into(),
            time,
            genre,
            words: words.to_vec(),
        }
    }

    fn probs_from(phi: Vec<f64>, psi: Vec<f64>, dims: Dims) -> ProbabilityArrays {
        ProbabilityArrays {
            phi: Array3::from_shape_vec((dims.t, dims.g, dims.k), phi).unwrap(),
            psi: Array3::from_shape_vec((dims.t, dims.k, dims.v), psi).unwrap(),
        }
    }

    #[test]
    fn empty_snippet_has_zero_log_likelihood_and_prior_posterior() {
        let dims = Dims {
            k: 2,
            v: 3,
            t: 1,
            g: 1,
        };
        let probs = probs_from(vec![0.3, 0.7], vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1], dims);
        let s = snip("a", 0, 0, &[]);
        assert_eq!(snippet_log_likelihood_given_sense(&s, 1, &probs.psi), 0.0);
        assert_eq!(sense_posterior(&s, &probs), vec![0.3, 0.7]);
    }

    #[test]
    fn single_word_likelihood() {
        let dims = Dims {
            k: 2,
            v: 4,
            t: 1,
            g: 1,
        };
        let probs = probs_from(vec![0.5, 0.5], vec![0.25; 8], dims);
        let s = snip("a", 0, 0, &[3]);
        assert_eq!(
            snippet_log_likelihood_given_sense(&s, 0, &probs.psi),
            0.25f64.ln()
        );
    }

    #[test]
    fn identical_senses_collapse_the_mixture() {
        let dims = Dims {
            k: 2,
            v: 3,
            t: 1,
            g: 1,
        };
        let col = [0.2, 0.3, 0.5];
        let probs = probs_from(vec![0.5, 0.5], [col, col].concat(), dims);
        let corpus = SnippetCorpus::new(vec![snip("a", 0, 0, &[0, 2, 2])], 3, 1, 1).unwrap();
        let ll = log_marginal_likelihood(&corpus, &probs).unwrap();
        assert!((ll - (0.2f64.ln() + 2.0 * 0.5f64.ln())).abs() < 1e-14);
        let post = sense_posterior(&corpus.snippets[0], &probs);
        assert!((post[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_word_posterior_matches_hand_arithmetic() {
        let dims = Dims {
            k: 2,
            v: 3,
            t: 1,
            g: 1,
        };
        let probs = probs_from(vec![0.4, 0.6], vec![0.5, 0.3, 0.2, 0.1, 0.2, 0.7], dims);
        let s = snip("a", 0, 0, &[0, 1, 0]);
        // sense 1: 0.4 * 0.5 * 0.3 * 0.5 = 0.03 ; sense 2: 0.6 * 0.1 * 0.2 * 0.1 = 0.0012
        let post = sense_posterior(&s, &probs);
        assert!((post[0] - 0.03 / 0.0312).abs() < 1e-14);
        assert!((post[1] - 0.0012 / 0.0312).abs() < 1e-14);
    }

    #[test]
    fn joint_posterior_count_form_matches_product_form() {
        let spec = ModelSpec::new(
            Dims {
                k: 2,
                v: 3,
                t: 2,
                g: 1,
            },
            Hyperparams::disc_default(),
        )
        .unwrap();
        let mut state = LatentState::zeros(&spec);
        state.phi[[1, 0, 0]] = 0.7;
        if let crate::model::WordParams::Disc { theta, chi } = &mut state.words {
            theta[[0, 1]] = -0.4;
            chi[[1, 2]] = 1.1;
        }
        let corpus = SnippetCorpus::new(
            vec![
                snip("a", 0, 0, &[0, 2]),
                snip("b", 1, 0, &[1, 1, 2]),
                snip("c", 1, 0, &[]),
            ],
            3,
            2,
            1,
        )
        .unwrap();
        let labels = [Some(1), Some(0), Some(1)];
        let probs = derive_probability_arrays(&state, &spec).unwrap();
        let mut product = log_prior(&state, &spec).unwrap();
        for (s, z) in corpus.snippets.iter().zip(labels) {
            let z = z.unwrap();
            product += probs.phi[[s.time, s.genre, z]].ln()
                + snippet_log_likelihood_given_sense(s, z, &probs.psi);
        }
        let count = log_joint_posterior(&corpus, &state, &labels, &spec).unwrap();
        assert!((count - product).abs() < 1e-12);
        assert!(log_joint_posterior(&corpus, &state, &[Some(0), None, Some(1)], &spec).is_err());
    }

    #[test]
    fn empty_slices_give_zero_gradients() {
        let spec = ModelSpec::new(
            Dims {
                k: 2,
                v: 3,
                t: 2,
                g: 2,
            },
            Hyperparams::disc_default(),
        )
        .unwrap();
        let corpus = SnippetCorpus::new(vec![snip("a", 0, 0, &[0, 2])], 3, 2, 2).unwrap();
        let probs = derive_probability_arrays(&LatentState::zeros(&spec), &spec).unwrap();
        assert_eq!(grad_phi(&corpus, &probs, 1, 1).unwrap(), vec![0.0; 2]);
        assert_eq!(grad_psi(&corpus, &probs, 1, 0).unwrap(), vec![0.0; 3]);
        let empty = SnippetCorpus::new(vec![], 3, 2, 2).unwrap();
        assert_eq!(grad_chi(&empty, &probs, 0).unwrap(), vec![0.0; 3]);
    }
}
