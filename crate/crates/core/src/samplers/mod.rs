//! MCMC for DiSC and GASC.
//!
//! Marginal samplers (MALA, HMC and the mixed schedule) sum the sense labels
//! out and update one parameter block at a time with gradient-based
//! Metropolis–Hastings moves. Joint samplers (auxiliary uniform, Pólya-Gamma)
//! alternate a label draw with conditionally conjugate-style updates of every
//! component.

pub mod adapt;
pub(crate) mod blocks;
pub mod gibbs;
pub mod gradient;
pub mod polya_gamma;
pub mod truncnorm;

use std::fmt;
use std::time::Instant;

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PreparedCorpus, SnippetCorpus};
use crate::error::{Error, Result};
use crate::model::{
    conditional_prior_moments, derive_probability_arrays, log_prior, ArPrior, Dims, Family,
    Hyperparams, LatentState, ModelSpec, Moments, ProbabilityArrays, WordParams,
};
use adapt::{AdaptState, HMC_TARGET, MALA_TARGET};
use blocks::{Cache, ChiTarget, PhiTarget, PsiTarget, ThetaTarget};
use gibbs::{
    gibbs_z_cached, sample_kappa_phi_gasc, update_additive, update_logistic_column, AuxMethod,
    Factor, RowSums,
};
use gradient::{hmc_step, mala_step, LogDensity};

pub use gibbs::{aux_uniform_update, gibbs_z, polya_gamma_update};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    AuxUniform,
    PolyaGamma,
    PolyaGammaApprox,
    Mala,
    Hmc,
    MixedMalaHmc,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::AuxUniform,
        SamplerKind::PolyaGamma,
        SamplerKind::PolyaGammaApprox,
        SamplerKind::Mala,
        SamplerKind::Hmc,
        SamplerKind::MixedMalaHmc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::AuxUniform => "aux-uniform",
            SamplerKind::PolyaGamma => "pg",
            SamplerKind::PolyaGammaApprox => "pg-approx",
            SamplerKind::Mala => "mala",
            SamplerKind::Hmc => "hmc",
            SamplerKind::MixedMalaHmc => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler '{s}' (expected one of aux-uniform, pg, pg-approx, mala, hmc, mixed)")))
    }

    /// Whether the sampler draws sense labels explicitly.
    pub fn is_joint(self) -> bool {
        matches!(
            self,
            SamplerKind::AuxUniform | SamplerKind::PolyaGamma | SamplerKind::PolyaGammaApprox
        )
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Random choice between a one-step and a multi-step leapfrog proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSchedule {
    /// Probability of the multi-step proposal.
    pub p_long: f64,
    pub phi_long: usize,
    pub word_long: usize,
}

impl Default for MixedSchedule {
    fn default() -> Self {
        MixedSchedule {
            p_long: 0.5,
            phi_long: 2,
            word_long: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Leapfrog steps for plain HMC.
    pub leapfrog_steps: usize,
    pub mixed: MixedSchedule,
    pub seed: u64,
    /// RNG stream; distinct chains from one seed use distinct streams.
    pub stream: u64,
    /// GASC: iterations between `κ_φ` updates.
    pub kappa_update_period: usize,
}

impl ChainConfig {
    /// 10k iterations with 5k burn-in for DiSC, 20k with 10k for GASC.
    pub fn for_family(family: Family, sampler: SamplerKind) -> Self {
        let (iterations, burn_in) = match family {
            Family::Disc => (10_000, 5_000),
            Family::Gasc => (20_000, 10_000),
        };
        ChainConfig {
            sampler,
            iterations,
            burn_in,
            thin: 1,
            leapfrog_steps: 5,
            mixed: MixedSchedule::default(),
            seed: 0,
            stream: 0,
            kappa_update_period: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.leapfrog_steps == 0 || self.kappa_update_period == 0 {
            return Err(Error::InvalidArgument(
                "thin, leapfrog steps and kappa update period must be positive".into(),
            ));
        }
        if self.mixed.phi_long == 0
            || self.mixed.word_long == 0
            || !(0.0..=1.0).contains(&self.mixed.p_long)
        {
            return Err(Error::InvalidArgument(
                "mixed schedule needs positive step counts and p_long in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn n_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Tuning and acceptance summary of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub leapfrog_steps: usize,
    pub sigma2: f64,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    /// Acceptance rate of every completed window, burn-in included.
    pub windows: Vec<f64>,
    pub divergences: u64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub spec: ModelSpec,
    pub config: ChainConfig,
    /// One row per stored draw in [`LatentState::values`] order.
    pub draws: Array2<f64>,
    pub blocks: Vec<BlockReport>,
    /// Proposals rejected because the target or its gradient was not finite.
    pub non_finite: u64,
    /// Auxiliary-variable updates that found an empty region and kept the value.
    pub degenerate_updates: u64,
    pub burn_in_seconds: f64,
    pub sampling_seconds: f64,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn state(&self, i: usize) -> LatentState {
        LatentState::from_values(
            &self.spec,
            self.draws.row(i).as_slice().expect("standard layout"),
        )
        .expect("row length fixed by spec")
    }

    pub fn probabilities(&self, i: usize) -> ProbabilityArrays {
        derive_probability_arrays(&self.state(i), &self.spec).expect("stored states are valid")
    }

    /// Trace of `φ̃[t, g, k]` across stored draws.
    pub fn phi_tilde_traces(&self) -> Array2<f64> {
        let Dims { k, t, g, .. } = self.spec.dims;
        let n_phi = t * g * k;
        let mut out = Array2::zeros((self.n_draws(), n_phi));
        for (i, row) in self.draws.rows().into_iter().enumerate() {
            for col in 0..t * g {
                let x = row.slice(s![col * k..(col + 1) * k]).to_vec();
                let p = crate::model::softmax(&x).expect("finite draws");
                for (j, pj) in p.into_iter().enumerate() {
                    out[[i, col * k + j]] = pj;
                }
            }
        }
        out
    }

    /// Posterior mean of `φ̃` `(T, G, K)` and `ψ̃` `(T, K, V)` over stored draws.
    pub fn posterior_means(&self) -> ProbabilityArrays {
        let Dims { k, v, t, g } = self.spec.dims;
        let mut phi = Array3::zeros((t, g, k));
        let mut psi = Array3::zeros((t, k, v));
        for i in 0..self.n_draws() {
            let p = self.probabilities(i);
            phi += &p.phi;
            psi += &p.psi;
        }
        let n = self.n_draws().max(1) as f64;
        ProbabilityArrays {
            phi: phi / n,
            psi: psi / n,
        }
    }
}

/// Starting point of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// A draw from the prior; improper GASC starts use `N(0, 1)`.
    Prior,
    State(LatentState),
    /// Log smoothed frequencies from a full labelling.
    Labels(Vec<usize>),
}

/// State built from smoothed count tables of a labelled corpus. For DiSC the
/// log word frequencies are split into a sense mean and a time remainder.
pub fn warm_start(
    corpus: &SnippetCorpus,
    labels: &[usize],
    spec: &ModelSpec,
) -> Result<LatentState> {
    let Dims { k, v, t, .. } = spec.dims;
    let aligned: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    let counts = crate::corpus::count_tables(corpus, &aligned, k)?;
    let mut state = LatentState::zeros(spec);
    state.phi = counts.n_z.mapv(|n| (n as f64 + 0.5).ln());
    let log_freq = counts.n_wz.mapv(|n| (n as f64 + 0.5).ln());
    match &mut state.words {
        WordParams::Gasc { psi, .. } => *psi = log_freq,
        WordParams::Disc { theta, chi } => {
            for ki in 0..k {
                for vi in 0..v {
                    chi[[ki, vi]] = (0..t).map(|ti| log_freq[[ti, ki, vi]]).sum::<f64>() / t as f64;
                }
            }
            for ti in 0..t {
                for vi in 0..v {
                    theta[[ti, vi]] = (0..k)
                        .map(|ki| log_freq[[ti, ki, vi]] - chi[[ki, vi]])
                        .sum::<f64>()
                        / k as f64;
                }
            }
        }
    }
    Ok(state)
}

/// Adaptive kernels of one block: one for plain MALA or HMC, two (short and
/// long) for the mixed schedule.
#[derive(Debug, Clone)]
struct Tuner {
    name: String,
    kernels: Vec<(usize, AdaptState)>,
}

impl Tuner {
    fn new(name: String, sampler: SamplerKind, long: usize, hmc_steps: usize, sigma2: f64) -> Self {
        let kernels = match sampler {
            SamplerKind::Hmc => vec![(hmc_steps, AdaptState::new(sigma2, HMC_TARGET))],
            SamplerKind::MixedMalaHmc => vec![
                (1, AdaptState::new(sigma2, MALA_TARGET)),
                (long, AdaptState::new(sigma2 / long as f64, HMC_TARGET)),
            ],
            _ => vec![(1, AdaptState::new(sigma2, MALA_TARGET))],
        };
        Tuner { name, kernels }
    }

    fn freeze(&mut self) {
        for (_, a) in &mut self.kernels {
            a.freeze();
            a.reset_counts();
        }
    }

    fn reports(&self) -> impl Iterator<Item = BlockReport> + '_ {
        self.kernels.iter().map(|(steps, a)| BlockReport {
            name: self.name.clone(),
            leapfrog_steps: *steps,
            sigma2: a.sigma2(),
            acceptance: a.acceptance_rate(),
            windows: a.history.clone(),
            divergences: a.divergences,
        })
    }
}

/// One proposal for `x` under `target`; returns whether it was accepted and
/// whether it was non-finite.
fn propose<T: LogDensity, R: Rng + ?Sized>(
    tuner: &mut Tuner,
    target: &mut T,
    x: &mut [f64],
    p_long: f64,
    rng: &mut R,
) -> (bool, bool) {
    let idx = if tuner.kernels.len() > 1 && rng.random::<f64>() < p_long {
        1
    } else {
        0
    };
    let (steps, adapt) = &mut tuner.kernels[idx];
    let outcome = if *steps == 1 {
        mala_step(target, x, adapt.sigma2(), rng)
    } else {
        hmc_step(target, x, adapt.sigma2(), *steps, rng)
    };
    if outcome.divergent {
        adapt.divergences += 1;
    }
    adapt.adapt_scale(outcome.accepted);
    (outcome.accepted, outcome.non_finite)
}

/// Rough starting scale: prior-sized steps shrunk by the data per component.
fn initial_sigma2(dim: usize, observations: usize) -> f64 {
    let per_component = observations as f64 / dim.max(1) as f64;
    (dim.max(1) as f64).powf(-1.0 / 3.0) / (1.0 + per_component)
}

/// Label-conditional count tables from the prepared corpus.
fn label_counts(prepared: &PreparedCorpus, z: &[usize], k: usize) -> (Array3<u64>, Array3<u64>) {
    let mut n_z = Array3::zeros((prepared.t, prepared.g, k));
    let mut n_wz = Array3::zeros((prepared.t, k, prepared.v));
    for (d, &zd) in z.iter().enumerate() {
        let t = prepared.time[d];
        n_z[[t, prepared.genre[d], zd]] += 1;
        let bag = &prepared.bags[d];
        for (&w, &c) in bag.words.iter().zip(&bag.counts) {
            n_wz[[t, zd, w as usize]] += c as u64;
        }
    }
    (n_z, n_wz)
}

struct Chain<'a> {
    prepared: &'a PreparedCorpus,
    spec: &'a ModelSpec,
    config: &'a ChainConfig,
    state: LatentState,
    cache: Cache,
    rng: ChaCha8Rng,
    phi_tuners: Vec<Tuner>,
    word_tuners: Vec<Tuner>,
    non_finite: u64,
    degenerate: u64,
}

impl<'a> Chain<'a> {
    fn new(
        prepared: &'a PreparedCorpus,
        spec: &'a ModelSpec,
        config: &'a ChainConfig,
        state: LatentState,
        rng: ChaCha8Rng,
    ) -> Self {
        let Dims { k, v, t, g } = spec.dims;
        let sampler = config.sampler;
        let long = config.mixed;
        let mut phi_tuners = Vec::new();
        for ti in 0..t {
            for gi in 0..g {
                let n = prepared.block(ti, gi).len();
                phi_tuners.push(Tuner::new(
                    format!("phi[t={},g={}]", ti + 1, gi + 1),
                    sampler,
                    long.phi_long,
                    config.leapfrog_steps,
                    initial_sigma2(k, n),
                ));
            }
        }
        let tokens_at = |ti: usize| {
            prepared
                .at_time(ti)
                .iter()
                .map(|&d| prepared.bags[d].len as usize)
                .sum::<usize>()
        };
        let mut word_tuners = Vec::new();
        match spec.family() {
            Family::Disc => {
                for ti in 0..t {
                    word_tuners.push(Tuner::new(
                        format!("theta[t={}]", ti + 1),
                        sampler,
                        long.word_long,
                        config.leapfrog_steps,
                        initial_sigma2(v, tokens_at(ti)),
                    ));
                }
                let total: usize = (0..t).map(tokens_at).sum();
                word_tuners.push(Tuner::new(
                    "chi".into(),
                    sampler,
                    long.word_long,
                    config.leapfrog_steps,
                    initial_sigma2(k * v, total),
                ));
            }
            Family::Gasc => {
                for ti in 0..t {
                    for ki in 0..k {
                        word_tuners.push(Tuner::new(
                            format!("psi[t={},k={}]", ti + 1, ki + 1),
                            sampler,
                            long.word_long,
                            config.leapfrog_steps,
                            initial_sigma2(v, tokens_at(ti) / k),
                        ));
                    }
                }
            }
        }
        let cache = Cache::new(prepared, &state);
        Chain {
            prepared,
            spec,
            config,
            state,
            cache,
            rng,
            phi_tuners,
            word_tuners,
            non_finite: 0,
            degenerate: 0,
        }
    }

    fn iterate(&mut self, iteration: usize) -> Result<()> {
        if self.config.sampler.is_joint() {
            let method = match self.config.sampler {
                SamplerKind::AuxUniform => AuxMethod::Uniform,
                SamplerKind::PolyaGamma => AuxMethod::PolyaGamma,
                _ => AuxMethod::PolyaGammaApprox,
            };
            self.joint_sweep(method)?;
        } else {
            self.update_phi_marginal()?;
            match self.spec.family() {
                Family::Disc => {
                    self.update_theta_marginal()?;
                    self.update_chi_marginal();
                }
                Family::Gasc => self.update_psi_marginal()?,
            }
        }
        if let Hyperparams::Gasc { a, b, .. } = self.spec.hyper {
            if iteration % self.config.kappa_update_period == 0 {
                let kappa = sample_kappa_phi_gasc(&self.state.phi, a, b, &mut self.rng);
                if let WordParams::Gasc { kappa_phi, .. } = &mut self.state.words {
                    *kappa_phi = kappa;
                }
            }
        }
        Ok(())
    }

    fn update_phi_marginal(&mut self) -> Result<()> {
        let Dims { t, g, .. } = self.spec.dims;
        let prior = self.spec.phi_prior(&self.state);
        let p_long = self.config.mixed.p_long;
        for ti in 0..t {
            for gi in 0..g {
                let (means, var) =
                    conditional_prior_moments(&prior, self.state.phi.slice(s![.., gi, ..]), ti)?;
                let mut x = self.state.phi.slice(s![ti, gi, ..]).to_vec();
                let mut target =
                    PhiTarget::new(&self.cache.ell, self.prepared.block(ti, gi), means, var);
                let (accepted, bad) = propose(
                    &mut self.phi_tuners[ti * g + gi],
                    &mut target,
                    &mut x,
                    p_long,
                    &mut self.rng,
                );
                self.non_finite += bad as u64;
                if accepted {
                    self.state
                        .phi
                        .slice_mut(s![ti, gi, ..])
                        .assign(&ndarray::ArrayView1::from(&x));
                    self.cache.set_phi(ti, gi, &x);
                }
            }
        }
        Ok(())
    }

    fn update_theta_marginal(&mut self) -> Result<()> {
        let Hyperparams::Disc {
            kappa_theta,
            alpha_theta,
            ..
        } = self.spec.hyper
        else {
            unreachable!("theta exists only for DiSC")
        };
        let prior = ArPrior::Stationary {
            alpha: alpha_theta,
            kappa: kappa_theta,
        };
        let p_long = self.config.mixed.p_long;
        for ti in 0..self.spec.dims.t {
            let (accepted, x) = {
                let WordParams::Disc { theta, chi } = &self.state.words else {
                    unreachable!()
                };
                let (means, var) = conditional_prior_moments(&prior, theta.view(), ti)?;
                let mut x = theta.row(ti).to_vec();
                let mut target =
                    ThetaTarget::new(self.prepared, ti, chi, &self.cache.log_phi, means, var);
                let (accepted, bad) = propose(
                    &mut self.word_tuners[ti],
                    &mut target,
                    &mut x,
                    p_long,
                    &mut self.rng,
                );
                self.non_finite += bad as u64;
                (accepted, x)
            };
            if accepted {
                if let WordParams::Disc { theta, .. } = &mut self.state.words {
                    theta.row_mut(ti).assign(&ndarray::ArrayView1::from(&x));
                }
                self.cache.refresh_time(self.prepared, &self.state, ti);
            }
        }
        Ok(())
    }

    fn update_chi_marginal(&mut self) {
        let Hyperparams::Disc { kappa_chi, .. } = self.spec.hyper else {
            unreachable!("chi exists only for DiSC")
        };
        let p_long = self.config.mixed.p_long;
        let (accepted, x) = {
            let WordParams::Disc { theta, chi } = &self.state.words else {
                unreachable!()
            };
            let mut x = chi.as_standard_layout().iter().copied().collect::<Vec<_>>();
            let mut target = ChiTarget::new(
                self.prepared,
                theta,
                &self.cache.log_phi,
                self.spec.dims.k,
                kappa_chi,
            );
            let tuner = self.word_tuners.last_mut().expect("chi tuner");
            let (accepted, bad) = propose(tuner, &mut target, &mut x, p_long, &mut self.rng);
            self.non_finite += bad as u64;
            (accepted, x)
        };
        if accepted {
            if let WordParams::Disc { chi, .. } = &mut self.state.words {
                let shape = chi.dim();
                *chi = Array2::from_shape_vec(shape, x).expect("shape preserved");
            }
            self.cache.refresh_words(self.prepared, &self.state);
        }
    }

    fn update_psi_marginal(&mut self) -> Result<()> {
        let Hyperparams::Gasc { kappa_psi, .. } = self.spec.hyper else {
            unreachable!("psi is stored only for GASC")
        };
        let prior = ArPrior::RandomWalk { kappa: kappa_psi };
        let Dims { k, t, .. } = self.spec.dims;
        let p_long = self.config.mixed.p_long;
        for ti in 0..t {
            for ki in 0..k {
                let (accepted, x) = {
                    let WordParams::Gasc { psi, .. } = &self.state.words else {
                        unreachable!()
                    };
                    let (means, var) =
                        conditional_prior_moments(&prior, psi.slice(s![.., ki, ..]), ti)?;
                    let mut x = psi.slice(s![ti, ki, ..]).to_vec();
                    let mut target = PsiTarget::new(
                        self.prepared,
                        ti,
                        ki,
                        &self.cache.log_phi,
                        &self.cache.ell,
                        means,
                        var,
                    );
                    let (accepted, bad) = propose(
                        &mut self.word_tuners[ti * k + ki],
                        &mut target,
                        &mut x,
                        p_long,
                        &mut self.rng,
                    );
                    self.non_finite += bad as u64;
                    (accepted, x)
                };
                if accepted {
                    if let WordParams::Gasc { psi, .. } = &mut self.state.words {
                        psi.slice_mut(s![ti, ki, ..])
                            .assign(&ndarray::ArrayView1::from(&x));
                    }
                    self.cache.refresh_cell(self.prepared, &self.state, ti, ki);
                }
            }
        }
        Ok(())
    }

    fn joint_sweep(&mut self, method: AuxMethod) -> Result<()> {
        let Dims { k, v, t, g } = self.spec.dims;
        let z = gibbs_z_cached(
            self.prepared,
            &self.cache.log_phi,
            &self.cache.ell,
            &mut self.rng,
        );
        let (n_z, n_wz) = label_counts(self.prepared, &z, k);

        let phi_prior = self.spec.phi_prior(&self.state);
        for ti in 0..t {
            for gi in 0..g {
                let priors: Vec<Moments> = (0..k)
                    .map(|ki| phi_prior.conditional_at(self.state.phi.slice(s![.., gi, ki]), ti))
                    .collect();
                let counts: Vec<u64> = n_z.slice(s![ti, gi, ..]).to_vec();
                let mut x = self.state.phi.slice(s![ti, gi, ..]).to_vec();
                self.degenerate +=
                    update_logistic_column(&mut x, &counts, &priors, method, &mut self.rng) as u64;
                self.state
                    .phi
                    .slice_mut(s![ti, gi, ..])
                    .assign(&ndarray::ArrayView1::from(&x));
            }
        }

        match (self.spec.hyper, &mut self.state.words) {
            (Hyperparams::Gasc { kappa_psi, .. }, WordParams::Gasc { psi, .. }) => {
                let prior = ArPrior::RandomWalk { kappa: kappa_psi };
                for ti in 0..t {
                    for ki in 0..k {
                        let priors: Vec<Moments> = (0..v)
                            .map(|vi| prior.conditional_at(psi.slice(s![.., ki, vi]), ti))
                            .collect();
                        let counts: Vec<u64> = n_wz.slice(s![ti, ki, ..]).to_vec();
                        let mut x = psi.slice(s![ti, ki, ..]).to_vec();
                        self.degenerate +=
                            update_logistic_column(&mut x, &counts, &priors, method, &mut self.rng)
                                as u64;
                        psi.slice_mut(s![ti, ki, ..])
                            .assign(&ndarray::ArrayView1::from(&x));
                    }
                }
            }
            (
                Hyperparams::Disc {
                    kappa_theta,
                    kappa_chi,
                    alpha_theta,
                    ..
                },
                WordParams::Disc { theta, chi },
            ) => {
                // Additive word effects: the auxiliary-uniform region from every
                // sense (for θ) or every period (for χ), whatever the method.
                let theta_prior = ArPrior::Stationary {
                    alpha: alpha_theta,
                    kappa: kappa_theta,
                };
                let mut psi = Array3::from_shape_fn((t, k, v), |(ti, ki, vi)| {
                    chi[[ki, vi]] + theta[[ti, vi]]
                });
                let mut sums = RowSums::new(&psi);
                let tokens: Array2<u64> =
                    Array2::from_shape_fn((t, k), |(ti, ki)| n_wz.slice(s![ti, ki, ..]).sum());
                let mut factors = Vec::with_capacity(k.max(t));
                for ti in 0..t {
                    for vi in 0..v {
                        factors.clear();
                        for ki in 0..k {
                            factors.push(Factor {
                                offset: chi[[ki, vi]],
                                log_c: sums.log_others(ti, ki, vi),
                                successes: n_wz[[ti, ki, vi]],
                                total: tokens[[ti, ki]],
                            });
                        }
                        let prior = theta_prior.conditional_at(theta.column(vi), ti);
                        match update_additive(theta[[ti, vi]], &factors, prior, &mut self.rng) {
                            Some(x) if x.is_finite() => {
                                theta[[ti, vi]] = x;
                                for ki in 0..k {
                                    psi[[ti, ki, vi]] = chi[[ki, vi]] + x;
                                    let row = psi.slice(s![ti, ki, ..]);
                                    sums.set(
                                        ti,
                                        ki,
                                        vi,
                                        chi[[ki, vi]] + x,
                                        row.as_slice().expect("standard layout"),
                                    );
                                }
                            }
                            _ => self.degenerate += 1,
                        }
                    }
                }
                let chi_prior = Moments {
                    mean: 0.0,
                    var: kappa_chi,
                };
                for ki in 0..k {
                    for vi in 0..v {
                        factors.clear();
                        for ti in 0..t {
                            factors.push(Factor {
                                offset: theta[[ti, vi]],
                                log_c: sums.log_others(ti, ki, vi),
                                successes: n_wz[[ti, ki, vi]],
                                total: tokens[[ti, ki]],
                            });
                        }
                        match update_additive(chi[[ki, vi]], &factors, chi_prior, &mut self.rng) {
                            Some(x) if x.is_finite() => {
                                chi[[ki, vi]] = x;
                                for ti in 0..t {
                                    psi[[ti, ki, vi]] = x + theta[[ti, vi]];
                                    let row = psi.slice(s![ti, ki, ..]);
                                    sums.set(
                                        ti,
                                        ki,
                                        vi,
                                        x + theta[[ti, vi]],
                                        row.as_slice().expect("standard layout"),
                                    );
                                }
                            }
                            _ => self.degenerate += 1,
                        }
                    }
                }
            }
            _ => unreachable!("state family checked at chain start"),
        }
        self.cache = Cache::new(self.prepared, &self.state);
        Ok(())
    }

    fn freeze(&mut self) {
        self.phi_tuners
            .iter_mut()
            .chain(self.word_tuners.iter_mut())
            .for_each(Tuner::freeze);
    }

    /// Tuning summaries; empty for joint samplers, which have nothing to tune.
    fn reports(&self) -> Vec<BlockReport> {
        if self.config.sampler.is_joint() {
            return Vec::new();
        }
        self.phi_tuners
            .iter()
            .chain(&self.word_tuners)
            .flat_map(Tuner::reports)
            .collect()
    }
}

fn chain_rng(config: &ChainConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    rng
}

/// Runs one chain. The initial state must give a finite log posterior.
pub fn run_chain(
    corpus: &SnippetCorpus,
    spec: &ModelSpec,
    config: &ChainConfig,
    init: &Init,
) -> Result<ChainOutput> {
    config.validate()?;
    corpus.validate()?;
    let Dims { v, t, g, .. } = spec.dims;
    if corpus.v != v || corpus.t != t || corpus.g != g {
        return Err(Error::Dimension(format!(
            "corpus is V={} T={} G={}, model is V={v} T={t} G={g}",
            corpus.v, corpus.t, corpus.g
        )));
    }
    let mut rng = chain_rng(config);
    let state = match init {
        Init::Prior => crate::simulate::draw_state(spec, 1.0, &mut rng),
        Init::State(s) => {
            s.check(spec)?;
            LatentState::from_values(spec, &s.values().collect::<Vec<_>>())?
        }
        Init::Labels(labels) => warm_start(corpus, labels, spec)?,
    };
    state.check(spec)?;
    let prepared = PreparedCorpus::new(corpus);
    let mut chain = Chain::new(&prepared, spec, config, state, rng);
    let start = chain.cache.log_likelihood(&prepared) + log_prior(&chain.state, spec)?;
    if !start.is_finite() {
        return Err(Error::NonFinite(format!(
            "log posterior at the initial state is {start}"
        )));
    }

    let row_len = LatentState::row_len(spec);
    let mut draws = Array2::zeros((config.n_draws(), row_len));
    let mut stored = 0;
    let clock = Instant::now();
    let mut burn_in_seconds = 0.0;
    if config.burn_in == 0 {
        chain.freeze();
    }
    for it in 1..=config.iterations {
        chain.iterate(it)?;
        if it == config.burn_in {
            chain.freeze();
            burn_in_seconds = clock.elapsed().as_secs_f64();
        }
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 {
            for (dst, src) in draws.row_mut(stored).iter_mut().zip(chain.state.values()) {
                *dst = src;
            }
            stored += 1;
        }
    }
    let total = clock.elapsed().as_secs_f64();
    if !draws.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("chain produced non-finite draws".into()));
    }
    Ok(ChainOutput {
        spec: spec.clone(),
        config: config.clone(),
        draws,
        blocks: chain.reports(),
        non_finite: chain.non_finite,
        degenerate_updates: chain.degenerate,
        burn_in_seconds,
        sampling_seconds: total - burn_in_seconds,
    })
}

/// Runs `n_chains` chains concurrently on independent streams of one seed.
pub fn run_chains(
    corpus: &SnippetCorpus,
    spec: &ModelSpec,
    config: &ChainConfig,
    init: &Init,
    n_chains: usize,
) -> Result<Vec<ChainOutput>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                let mut cfg = config.clone();
                cfg.stream = config.stream + c as u64;
                scope.spawn(move || run_chain(corpus, spec, &cfg, init))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}
