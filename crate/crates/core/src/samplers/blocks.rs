//! Conditional log posteriors of single parameter blocks with the sense labels
//! summed out, and the cache of log-probabilities and per-snippet sense
//! log-likelihoods that keeps each block evaluation local.

use ndarray::{s, Array2, Array3};

use super::gradient::LogDensity;
use crate::corpus::{Bag, PreparedCorpus};
use crate::likelihood::sense_log_likelihoods;
use crate::math::{log_softmax_into, log_sum_exp};
use crate::model::{log_probability_arrays, LatentState};

/// `log φ̃`, `log ψ̃` and `ℓ[d, k]` for the current state.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub log_phi: Array3<f64>,
    pub log_psi: Array3<f64>,
    pub ell: Array2<f64>,
}

impl Cache {
    pub fn new(prepared: &PreparedCorpus, state: &LatentState) -> Self {
        let (log_phi, log_psi) = log_probability_arrays(state);
        let ell = sense_log_likelihoods(prepared, &log_psi);
        Cache {
            log_phi,
            log_psi,
            ell,
        }
    }

    pub fn set_phi(&mut self, t: usize, g: usize, x: &[f64]) {
        let mut col = self.log_phi.slice_mut(s![t, g, ..]);
        log_softmax_into(x, col.as_slice_mut().expect("standard layout"));
    }

    /// Recomputes `log ψ̃[t, k, ..]` and `ℓ[·, k]` for snippets at `t`.
    pub fn refresh_cell(
        &mut self,
        prepared: &PreparedCorpus,
        state: &LatentState,
        t: usize,
        k: usize,
    ) {
        let mut buf = vec![0.0; prepared.v];
        state.psi_column_into(t, k, &mut buf);
        let mut col = self.log_psi.slice_mut(s![t, k, ..]);
        let col = col.as_slice_mut().expect("standard layout");
        log_softmax_into(&buf, col);
        for &d in prepared.at_time(t) {
            self.ell[[d, k]] = prepared.bags[d].dot(col);
        }
    }

    pub fn refresh_time(&mut self, prepared: &PreparedCorpus, state: &LatentState, t: usize) {
        for k in 0..self.log_psi.dim().1 {
            self.refresh_cell(prepared, state, t, k);
        }
    }

    pub fn refresh_words(&mut self, prepared: &PreparedCorpus, state: &LatentState) {
        for t in 0..prepared.t {
            self.refresh_time(prepared, state, t);
        }
    }

    /// Log marginal likelihood of the whole corpus.
    pub fn log_likelihood(&self, prepared: &PreparedCorpus) -> f64 {
        let k = self.ell.ncols();
        let mut a = vec![0.0; k];
        let mut total = 0.0;
        for d in 0..prepared.len() {
            let (t, g) = (prepared.time[d], prepared.genre[d]);
            for j in 0..k {
                a[j] = self.log_phi[[t, g, j]] + self.ell[[d, j]];
            }
            total += log_sum_exp(&a);
        }
        total
    }
}

/// Independent Gaussian prior terms; an infinite variance means flat.
fn prior_terms(x: &[f64], means: &[f64], var: f64, grad: &mut [f64]) -> f64 {
    if !var.is_finite() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return 0.0;
    }
    let mut lp = 0.0;
    for ((g, &xi), &m) in grad.iter_mut().zip(x).zip(means) {
        let r = xi - m;
        lp -= 0.5 * r * r / var;
        *g = -r / var;
    }
    lp
}

/// Normalises `a` in place to responsibilities and returns its log-sum-exp.
fn normalise(a: &mut [f64]) -> f64 {
    let lse = log_sum_exp(a);
    a.iter_mut().for_each(|v| *v = (*v - lse).exp());
    lse
}

fn scatter(grad: &mut [f64], bag: &Bag, weight: f64) {
    for (&w, &c) in bag.words.iter().zip(&bag.counts) {
        grad[w as usize] += weight * c as f64;
    }
}

/// `φ[t, g, ..]` given everything else.
pub(crate) struct PhiTarget<'a> {
    pub ell: &'a Array2<f64>,
    pub block: &'a [usize],
    pub prior_mean: Vec<f64>,
    pub prior_var: f64,
    log_soft: Vec<f64>,
    a: Vec<f64>,
}

impl<'a> PhiTarget<'a> {
    pub fn new(
        ell: &'a Array2<f64>,
        block: &'a [usize],
        prior_mean: Vec<f64>,
        prior_var: f64,
    ) -> Self {
        let k = prior_mean.len();
        PhiTarget {
            ell,
            block,
            prior_mean,
            prior_var,
            log_soft: vec![0.0; k],
            a: vec![0.0; k],
        }
    }
}

impl LogDensity for PhiTarget<'_> {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = prior_terms(x, &self.prior_mean, self.prior_var, grad);
        log_softmax_into(x, &mut self.log_soft);
        for &d in self.block {
            for (j, a) in self.a.iter_mut().enumerate() {
                *a = self.log_soft[j] + self.ell[[d, j]];
            }
            lp += normalise(&mut self.a);
            for (g, r) in grad.iter_mut().zip(&self.a) {
                *g += r;
            }
        }
        let n = self.block.len() as f64;
        for (g, l) in grad.iter_mut().zip(&self.log_soft) {
            *g -= n * l.exp();
        }
        lp
    }
}

/// `θ[t, ..]` given everything else (DiSC).
pub(crate) struct ThetaTarget<'a> {
    pub prepared: &'a PreparedCorpus,
    pub t: usize,
    pub chi: &'a Array2<f64>,
    pub log_phi: &'a Array3<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_var: f64,
    logits: Vec<f64>,
    log_psi: Array2<f64>,
    mass: Vec<f64>,
    a: Vec<f64>,
}

impl<'a> ThetaTarget<'a> {
    pub fn new(
        prepared: &'a PreparedCorpus,
        t: usize,
        chi: &'a Array2<f64>,
        log_phi: &'a Array3<f64>,
        prior_mean: Vec<f64>,
        prior_var: f64,
    ) -> Self {
        let (k, v) = chi.dim();
        ThetaTarget {
            prepared,
            t,
            chi,
            log_phi,
            prior_mean,
            prior_var,
            logits: vec![0.0; v],
            log_psi: Array2::zeros((k, v)),
            mass: vec![0.0; k],
            a: vec![0.0; k],
        }
    }
}

impl LogDensity for ThetaTarget<'_> {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = prior_terms(x, &self.prior_mean, self.prior_var, grad);
        let k = self.chi.nrows();
        for ki in 0..k {
            for ((l, &c), &xi) in self.logits.iter_mut().zip(self.chi.row(ki)).zip(x) {
                *l = c + xi;
            }
            let mut row = self.log_psi.row_mut(ki);
            log_softmax_into(&self.logits, row.as_slice_mut().expect("standard layout"));
        }
        self.mass.iter_mut().for_each(|m| *m = 0.0);
        for &d in self.prepared.at_time(self.t) {
            let bag = &self.prepared.bags[d];
            let g = self.prepared.genre[d];
            for ki in 0..k {
                self.a[ki] = self.log_phi[[self.t, g, ki]]
                    + bag.dot(self.log_psi.row(ki).as_slice().expect("standard layout"));
            }
            lp += normalise(&mut self.a);
            for (m, r) in self.mass.iter_mut().zip(&self.a) {
                *m += r * bag.len as f64;
            }
            scatter(grad, bag, 1.0);
        }
        for ki in 0..k {
            let m = self.mass[ki];
            for (g, l) in grad.iter_mut().zip(self.log_psi.row(ki)) {
                *g -= m * l.exp();
            }
        }
        lp
    }
}

/// All of `χ` jointly, flattened sense-major (DiSC).
pub(crate) struct ChiTarget<'a> {
    pub prepared: &'a PreparedCorpus,
    pub theta: &'a Array2<f64>,
    pub log_phi: &'a Array3<f64>,
    pub k: usize,
    pub prior_var: f64,
    logits: Vec<f64>,
    log_psi: Array3<f64>,
    mass: Array2<f64>,
    a: Vec<f64>,
}

impl<'a> ChiTarget<'a> {
    pub fn new(
        prepared: &'a PreparedCorpus,
        theta: &'a Array2<f64>,
        log_phi: &'a Array3<f64>,
        k: usize,
        prior_var: f64,
    ) -> Self {
        let (t, v) = theta.dim();
        ChiTarget {
            prepared,
            theta,
            log_phi,
            k,
            prior_var,
            logits: vec![0.0; v],
            log_psi: Array3::zeros((t, k, v)),
            mass: Array2::zeros((t, k)),
            a: vec![0.0; k],
        }
    }
}

impl LogDensity for ChiTarget<'_> {
    fn dim(&self) -> usize {
        self.k * self.prepared.v
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.prepared.v;
        let mut lp = 0.0;
        for (g, &xi) in grad.iter_mut().zip(x) {
            lp -= 0.5 * xi * xi / self.prior_var;
            *g = -xi / self.prior_var;
        }
        for t in 0..self.prepared.t {
            for ki in 0..self.k {
                let xk = &x[ki * v..(ki + 1) * v];
                for ((l, &c), &th) in self.logits.iter_mut().zip(xk).zip(self.theta.row(t)) {
                    *l = c + th;
                }
                let mut row = self.log_psi.slice_mut(s![t, ki, ..]);
                log_softmax_into(&self.logits, row.as_slice_mut().expect("standard layout"));
            }
        }
        self.mass.fill(0.0);
        for d in 0..self.prepared.len() {
            let bag = &self.prepared.bags[d];
            let (t, g) = (self.prepared.time[d], self.prepared.genre[d]);
            for ki in 0..self.k {
                let row = self.log_psi.slice(s![t, ki, ..]);
                self.a[ki] =
                    self.log_phi[[t, g, ki]] + bag.dot(row.as_slice().expect("standard layout"));
            }
            lp += normalise(&mut self.a);
            for ki in 0..self.k {
                let r = self.a[ki];
                self.mass[[t, ki]] += r * bag.len as f64;
                scatter(&mut grad[ki * v..(ki + 1) * v], bag, r);
            }
        }
        for t in 0..self.prepared.t {
            for ki in 0..self.k {
                let m = self.mass[[t, ki]];
                if m == 0.0 {
                    continue;
                }
                let gk = &mut grad[ki * v..(ki + 1) * v];
                for (g, l) in gk.iter_mut().zip(self.log_psi.slice(s![t, ki, ..])) {
                    *g -= m * l.exp();
                }
            }
        }
        lp
    }
}

/// `ψ[t, k, ..]` given everything else (GASC).
pub(crate) struct PsiTarget<'a> {
    pub prepared: &'a PreparedCorpus,
    pub t: usize,
    pub k: usize,
    pub log_phi: &'a Array3<f64>,
    pub ell: &'a Array2<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_var: f64,
    log_psi: Vec<f64>,
    a: Vec<f64>,
}

impl<'a> PsiTarget<'a> {
    pub fn new(
        prepared: &'a PreparedCorpus,
        t: usize,
        k: usize,
        log_phi: &'a Array3<f64>,
        ell: &'a Array2<f64>,
        prior_mean: Vec<f64>,
        prior_var: f64,
    ) -> Self {
        let n_senses = ell.ncols();
        PsiTarget {
            prepared,
            t,
            k,
            log_phi,
            ell,
            prior_mean,
            prior_var,
            log_psi: vec![0.0; prepared.v],
            a: vec![0.0; n_senses],
        }
    }
}

impl LogDensity for PsiTarget<'_> {
    fn dim(&self) -> usize {
        self.prepared.v
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = prior_terms(x, &self.prior_mean, self.prior_var, grad);
        log_softmax_into(x, &mut self.log_psi);
        let mut mass = 0.0;
        for &d in self.prepared.at_time(self.t) {
            let bag = &self.prepared.bags[d];
            let g = self.prepared.genre[d];
            for (j, a) in self.a.iter_mut().enumerate() {
                let ell = if j == self.k {
                    bag.dot(&self.log_psi)
                } else {
                    self.ell[[d, j]]
                };
                *a = self.log_phi[[self.t, g, j]] + ell;
            }
            lp += normalise(&mut self.a);
            let r = self.a[self.k];
            mass += r * bag.len as f64;
            scatter(grad, bag, r);
        }
        for (g, l) in grad.iter_mut().zip(&self.log_psi) {
            *g -= mass * l.exp();
        }
        lp
    }
}
