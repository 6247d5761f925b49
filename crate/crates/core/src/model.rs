//! Model dimensions, hyperparameters, latent state and prior densities.
//!
//! Array layouts are time-major so that the vectors updated as one block are
//! contiguous in memory:
//!
//! | array | shape        | block            |
//! |-------|--------------|------------------|
//! | φ     | `(T, G, K)`  | `φ[t, g, ..]`    |
//! | θ     | `(T, V)`     | `θ[t, ..]`       |
//! | χ     | `(K, V)`     | `χ[k, ..]`       |
//! | ψ     | `(T, K, V)`  | `ψ[t, k, ..]`    |
//!
//! All indices are zero-based internally. File formats use one-based sense ids.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use statrs::function::gamma::ln_gamma;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::math::{log_softmax_into, normal_log_pdf};

/// Which generative model a specification describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Additive sense and time effects, `ψ = χ + θ`, AR(1) priors.
    Disc,
    /// Full `V×K×T` word array with random-walk priors and a random `κ_φ`.
    /// SCAN is the `G = 1` case.
    Gasc,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Disc => "disc",
            Family::Gasc => "gasc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disc" => Ok(Family::Disc),
            "gasc" | "scan" => Ok(Family::Gasc),
            other => Err(Error::InvalidSpec(format!(
                "unknown model family '{other}'"
            ))),
        }
    }
}

/// Model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Number of senses.
    pub k: usize,
    /// Vocabulary size.
    pub v: usize,
    /// Number of time periods.
    pub t: usize,
    /// Number of genres.
    pub g: usize,
}

/// Hyperparameters. The variant fixes the family, so DiSC-only and GASC-only
/// fields can never be mixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyperparams {
    Disc {
        kappa_phi: f64,
        kappa_theta: f64,
        kappa_chi: f64,
        alpha_phi: f64,
        alpha_theta: f64,
    },
    Gasc {
        kappa_psi: f64,
        /// InvGamma shape for `κ_φ`.
        a: f64,
        /// InvGamma rate for `κ_φ`.
        b: f64,
    },
}

impl Hyperparams {
    /// DiSC settings used throughout: `κ_φ = 0.25, κ_θ = 0.25, κ_χ = 1.25, α = 0.9`.
    pub fn disc_default() -> Self {
        Hyperparams::Disc {
            kappa_phi: 0.25,
            kappa_theta: 0.25,
            kappa_chi: 1.25,
            alpha_phi: 0.9,
            alpha_theta: 0.9,
        }
    }

    /// The SCAN setting `κ_ψ = 0.1, a = 7, b = 3`.
    pub fn gasc_default() -> Self {
        Hyperparams::Gasc {
            kappa_psi: 0.1,
            a: 7.0,
            b: 3.0,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Disc { .. } => Family::Disc,
            Hyperparams::Gasc { .. } => Family::Gasc,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!(
                    "{name} must be positive, got {x}"
                )))
            }
        };
        match *self {
            Hyperparams::Disc {
                kappa_phi,
                kappa_theta,
                kappa_chi,
                alpha_phi,
                alpha_theta,
            } => {
                positive("kappa_phi", kappa_phi)?;
                positive("kappa_theta", kappa_theta)?;
                positive("kappa_chi", kappa_chi)?;
                for (name, a) in [("alpha_phi", alpha_phi), ("alpha_theta", alpha_theta)] {
                    if !(a.abs() < 1.0) {
                        return Err(Error::InvalidSpec(format!("|{name}| must be < 1, got {a}")));
                    }
                }
                Ok(())
            }
            Hyperparams::Gasc { kappa_psi, a, b } => {
                positive("kappa_psi", kappa_psi)?;
                positive("a", a)?;
                positive("b", b)
            }
        }
    }
}

/// Dimensions plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dims: Dims,
    pub hyper: Hyperparams,
}

impl ModelSpec {
    pub fn new(dims: Dims, hyper: Hyperparams) -> Result<Self> {
        if dims.k < 2 {
            return Err(Error::InvalidSpec(format!(
                "K must be at least 2, got {}",
                dims.k
            )));
        }
        if dims.v == 0 || dims.t == 0 || dims.g == 0 {
            return Err(Error::InvalidSpec(format!(
                "V, T and G must be positive, got V={} T={} G={}",
                dims.v, dims.t, dims.g
            )));
        }
        hyper.validate()?;
        Ok(ModelSpec { dims, hyper })
    }

    pub fn family(&self) -> Family {
        self.hyper.family()
    }

    /// Builds a spec from flat key-value settings.
    ///
    /// Keys: `family, K, V, T, G` plus either `kappa_phi, kappa_theta,
    /// kappa_chi, alpha_phi, alpha_theta` (DiSC) or `kappa_psi, a, b` (GASC).
    /// Missing hyperparameters take the defaults; keys from the other family
    /// are rejected. `V`, `T` and `G` may be omitted when `fallback` supplies
    /// them (typically the loaded corpus).
    pub fn from_key_values(kv: &KeyValues, fallback: Option<Dims>) -> Result<Self> {
        let family = Family::parse(kv.get("family").unwrap_or("disc"))?;
        let dim = |key: &str, fb: Option<usize>| -> Result<usize> {
            match kv.get_parsed::<usize>(key)? {
                Some(x) => Ok(x),
                None => fb.ok_or_else(|| Error::InvalidSpec(format!("missing key '{key}'"))),
            }
        };
        let dims = Dims {
            k: dim("K", None)?,
            v: dim("V", fallback.map(|d| d.v))?,
            t: dim("T", fallback.map(|d| d.t))?,
            g: dim("G", fallback.map(|d| d.g))?,
        };
        let disc_keys = ["kappa_theta", "kappa_chi", "alpha_phi", "alpha_theta"];
        let gasc_keys = ["kappa_psi", "a", "b"];
        let hyper = match family {
            Family::Disc => {
                if let Some(k) = gasc_keys.iter().find(|k| kv.contains(k)) {
                    return Err(Error::InvalidSpec(format!(
                        "key '{k}' is not valid for DiSC"
                    )));
                }
                let Hyperparams::Disc {
                    kappa_phi,
                    kappa_theta,
                    kappa_chi,
                    alpha_phi,
                    alpha_theta,
                } = Hyperparams::disc_default()
                else {
                    unreachable!()
                };
                Hyperparams::Disc {
                    kappa_phi: kv.get_parsed("kappa_phi")?.unwrap_or(kappa_phi),
                    kappa_theta: kv.get_parsed("kappa_theta")?.unwrap_or(kappa_theta),
                    kappa_chi: kv.get_parsed("kappa_chi")?.unwrap_or(kappa_chi),
                    alpha_phi: kv.get_parsed("alpha_phi")?.unwrap_or(alpha_phi),
                    alpha_theta: kv.get_parsed("alpha_theta")?.unwrap_or(alpha_theta),
                }
            }
            Family::Gasc => {
                if let Some(k) = disc_keys
                    .iter()
                    .chain(["kappa_phi"].iter())
                    .find(|k| kv.contains(k))
                {
                    return Err(Error::InvalidSpec(format!(
                        "key '{k}' is not valid for GASC (kappa_phi is sampled)"
                    )));
                }
                let Hyperparams::Gasc { kappa_psi, a, b } = Hyperparams::gasc_default() else {
                    unreachable!()
                };
                Hyperparams::Gasc {
                    kappa_psi: kv.get_parsed("kappa_psi")?.unwrap_or(kappa_psi),
                    a: kv.get_parsed("a")?.unwrap_or(a),
                    b: kv.get_parsed("b")?.unwrap_or(b),
                }
            }
        };
        ModelSpec::new(dims, hyper)
    }

    /// Prior on each φ component series.
    pub fn phi_prior(&self, state: &LatentState) -> ArPrior {
        match (self.hyper, &state.words) {
            (
                Hyperparams::Disc {
                    kappa_phi,
                    alpha_phi,
                    ..
                },
                _,
            ) => ArPrior::Stationary {
                alpha: alpha_phi,
                kappa: kappa_phi,
            },
            (Hyperparams::Gasc { .. }, WordParams::Gasc { kappa_phi, .. }) => {
                ArPrior::RandomWalk { kappa: *kappa_phi }
            }
            (Hyperparams::Gasc { .. }, WordParams::Disc { .. }) => {
                unreachable!("state family checked by LatentState::check")
            }
        }
    }
}

/// Real-valued word parameters, by family.
#[derive(Debug, Clone, PartialEq)]
pub enum WordParams {
    Disc {
        /// `(T, V)` word-time effects.
        theta: Array2<f64>,
        /// `(K, V)` word-sense effects.
        chi: Array2<f64>,
    },
    Gasc {
        /// `(T, K, V)` word parameters.
        psi: Array3<f64>,
        /// Sampled prevalence diffusion variance.
        kappa_phi: f64,
    },
}

/// The real-valued latent variables of either model. For DiSC, `ψ` is never
/// stored; it is assembled from `χ + θ` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// `(T, G, K)` sense prevalence parameters.
    pub phi: Array3<f64>,
    pub words: WordParams,
}

impl LatentState {
    /// All-zero state (with `κ_φ = 1` for GASC).
    pub fn zeros(spec: &ModelSpec) -> Self {
        let Dims { k, v, t, g } = spec.dims;
        let words = match spec.family() {
            Family::Disc => WordParams::Disc {
                theta: Array2::zeros((t, v)),
                chi: Array2::zeros((k, v)),
            },
            Family::Gasc => WordParams::Gasc {
                psi: Array3::zeros((t, k, v)),
                kappa_phi: 1.0,
            },
        };
        LatentState {
            phi: Array3::zeros((t, g, k)),
            words,
        }
    }

    pub fn family(&self) -> Family {
        match self.words {
            WordParams::Disc { .. } => Family::Disc,
            WordParams::Gasc { .. } => Family::Gasc,
        }
    }

    /// Checks family, shapes and finiteness against `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let Dims { k, v, t, g } = spec.dims;
        if self.family() != spec.family() {
            return Err(Error::Dimension(format!(
                "state family {} does not match spec family {}",
                self.family().name(),
                spec.family().name()
            )));
        }
        if self.phi.dim() != (t, g, k) {
            return Err(Error::Dimension(format!(
                "phi has shape {:?}, expected {:?}",
                self.phi.dim(),
                (t, g, k)
            )));
        }
        match &self.words {
            WordParams::Disc { theta, chi } => {
                if theta.dim() != (t, v) {
                    return Err(Error::Dimension(format!(
                        "theta has shape {:?}, expected {:?}",
                        theta.dim(),
                        (t, v)
                    )));
                }
                if chi.dim() != (k, v) {
                    return Err(Error::Dimension(format!(
                        "chi has shape {:?}, expected {:?}",
                        chi.dim(),
                        (k, v)
                    )));
                }
            }
            WordParams::Gasc { psi, kappa_phi } => {
                if psi.dim() != (t, k, v) {
                    return Err(Error::Dimension(format!(
                        "psi has shape {:?}, expected {:?}",
                        psi.dim(),
                        (t, k, v)
                    )));
                }
                if !(*kappa_phi > 0.0 && kappa_phi.is_finite()) {
                    return Err(Error::InvalidState(format!(
                        "kappa_phi must be positive, got {kappa_phi}"
                    )));
                }
            }
        }
        if !self.values().all(f64::is_finite) {
            return Err(Error::InvalidState(
                "state contains non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// All real-valued entries in storage order: φ, then θ and χ (DiSC) or ψ
    /// and `κ_φ` (GASC). This is the row layout of the sample store.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let words: Box<dyn Iterator<Item = f64> + '_> = match &self.words {
            WordParams::Disc { theta, chi } => Box::new(theta.iter().chain(chi.iter()).copied()),
            WordParams::Gasc { psi, kappa_phi } => {
                Box::new(psi.iter().copied().chain(std::iter::once(*kappa_phi)))
            }
        };
        self.phi.iter().copied().chain(words)
    }

    /// Number of values produced by [`LatentState::values`] for `spec`.
    pub fn row_len(spec: &ModelSpec) -> usize {
        let Dims { k, v, t, g } = spec.dims;
        t * g * k
            + match spec.family() {
                Family::Disc => t * v + k * v,
                Family::Gasc => t * k * v + 1,
            }
    }

    /// Inverse of [`LatentState::values`].
    pub fn from_values(spec: &ModelSpec, row: &[f64]) -> Result<Self> {
        if row.len() != Self::row_len(spec) {
            return Err(Error::Dimension(format!(
                "row has {} values, expected {}",
                row.len(),
                Self::row_len(spec)
            )));
        }
        let Dims { k, v, t, g } = spec.dims;
        let n_phi = t * g * k;
        let phi = Array3::from_shape_vec((t, g, k), row[..n_phi].to_vec()).expect("length checked");
        let rest = &row[n_phi..];
        let words = match spec.family() {
            Family::Disc => WordParams::Disc {
                theta: Array2::from_shape_vec((t, v), rest[..t * v].to_vec())
                    .expect("length checked"),
                chi: Array2::from_shape_vec((k, v), rest[t * v..].to_vec())
                    .expect("length checked"),
            },
            Family::Gasc => WordParams::Gasc {
                psi: Array3::from_shape_vec((t, k, v), rest[..t * k * v].to_vec())
                    .expect("length checked"),
                kappa_phi: rest[t * k * v],
            },
        };
        Ok(LatentState { phi, words })
    }

    /// Writes `ψ[t, k, ..]` into `out`.
    pub fn psi_column_into(&self, t: usize, k: usize, out: &mut [f64]) {
        match &self.words {
            WordParams::Disc { theta, chi } => {
                for ((o, &a), &b) in out.iter_mut().zip(chi.row(k)).zip(theta.row(t)) {
                    *o = a + b;
                }
            }
            WordParams::Gasc { psi, .. } => {
                for (o, &x) in out.iter_mut().zip(psi.slice(s![t, k, ..])) {
                    *o = x;
                }
            }
        }
    }

    /// The full `(T, K, V)` word parameter array; assembled as `χ + θ` for DiSC.
    pub fn psi(&self) -> Array3<f64> {
        match &self.words {
            WordParams::Gasc { psi, .. } => psi.as_standard_layout().into_owned(),
            WordParams::Disc { theta, chi } => {
                let (t, v) = theta.dim();
                let k = chi.nrows();
                Array3::from_shape_fn((t, k, v), |(ti, ki, vi)| chi[[ki, vi]] + theta[[ti, vi]])
            }
        }
    }
}

/// Softmax transforms of φ and ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityArrays {
    /// `(T, G, K)` sense prevalence; sums to one over the last axis.
    pub phi: Array3<f64>,
    /// `(T, K, V)` context-word probabilities; sums to one over the last axis.
    pub psi: Array3<f64>,
}

impl ProbabilityArrays {
    pub fn dims(&self) -> Dims {
        let (t, g, k) = self.phi.dim();
        Dims {
            k,
            v: self.psi.dim().2,
            t,
            g,
        }
    }
}

/// Softmax of a finite vector, computed with max subtraction.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidState(format!("softmax input contains {bad}")));
    }
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Column-wise log-softmax of φ over senses and ψ over the vocabulary.
pub(crate) fn log_probability_arrays(state: &LatentState) -> (Array3<f64>, Array3<f64>) {
    let mut log_phi = state.phi.as_standard_layout().into_owned();
    for mut col in log_phi.rows_mut() {
        let x = col.to_vec();
        log_softmax_into(&x, col.as_slice_mut().expect("standard layout"));
    }
    let mut log_psi = state.psi();
    for mut col in log_psi.rows_mut() {
        let x = col.to_vec();
        log_softmax_into(&x, col.as_slice_mut().expect("standard layout"));
    }
    (log_phi, log_psi)
}

/// Softmax transforms φ → φ̃ (over senses) and ψ → ψ̃ (over words).
pub fn derive_probability_arrays(
    state: &LatentState,
    spec: &ModelSpec,
) -> Result<ProbabilityArrays> {
    state.check(spec)?;
    let (log_phi, log_psi) = log_probability_arrays(state);
    Ok(ProbabilityArrays {
        phi: log_phi.mapv(f64::exp),
        psi: log_psi.mapv(f64::exp),
    })
}

/// Gaussian full-conditional moments of one time-series component. `var` is
/// infinite when the conditional is improper (GASC with `T = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn precision(&self) -> f64 {
        if self.var.is_finite() {
            1.0 / self.var
        } else {
            0.0
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if self.var.is_finite() {
            normal_log_pdf(x, self.mean, self.var)
        } else {
            0.0
        }
    }

    /// d/dx of the log density.
    pub fn grad(&self, x: f64) -> f64 {
        -(x - self.mean) * self.precision()
    }
}

/// Prior on a scalar time series `x_1..x_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArPrior {
    /// `x_1 ~ N(0, κ/(1-α²))`, `x_t | x_{t-1} ~ N(α x_{t-1}, κ)`.
    Stationary { alpha: f64, kappa: f64 },
    /// Flat `x_1`, `x_t | x_{t-1} ~ N(x_{t-1}, 2κ)`.
    RandomWalk { kappa: f64 },
}

impl ArPrior {
    /// Variance of one increment `x_t - α x_{t-1}`.
    pub fn step_var(&self) -> f64 {
        match *self {
            ArPrior::Stationary { kappa, .. } => kappa,
            ArPrior::RandomWalk { kappa } => 2.0 * kappa,
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            ArPrior::Stationary { alpha, .. } => alpha,
            ArPrior::RandomWalk { .. } => 1.0,
        }
    }

    /// Joint log density of one series. The improper start contributes zero.
    pub fn log_density(&self, series: impl IntoIterator<Item = f64>) -> f64 {
        let alpha = self.alpha();
        let step = self.step_var();
        let mut prev: Option<f64> = None;
        let mut total = 0.0;
        for x in series {
            total += match (prev, *self) {
                (None, ArPrior::Stationary { alpha, kappa }) => {
                    normal_log_pdf(x, 0.0, kappa / (1.0 - alpha * alpha))
                }
                (None, ArPrior::RandomWalk { .. }) => 0.0,
                (Some(p), _) => normal_log_pdf(x, alpha * p, step),
            };
            prev = Some(x);
        }
        total
    }

    /// Full conditional of `x_t` given its neighbours (`None` at the ends).
    pub fn conditional(&self, prev: Option<f64>, next: Option<f64>) -> Moments {
        let alpha = self.alpha();
        let step = self.step_var();
        match (prev, next) {
            (Some(p), Some(n)) => {
                let denom = 1.0 + alpha * alpha;
                Moments {
                    mean: alpha / denom * (p + n),
                    var: step / denom,
                }
            }
            (None, Some(n)) => Moments {
                mean: alpha * n,
                var: step,
            },
            (Some(p), None) => Moments {
                mean: alpha * p,
                var: step,
            },
            (None, None) => match *self {
                ArPrior::Stationary { alpha, kappa } => Moments {
                    mean: 0.0,
                    var: kappa / (1.0 - alpha * alpha),
                },
                ArPrior::RandomWalk { .. } => Moments {
                    mean: 0.0,
                    var: f64::INFINITY,
                },
            },
        }
    }

    /// Conditional of the component at time `t` of `series`.
    pub fn conditional_at(&self, series: ArrayView1<f64>, t: usize) -> Moments {
        let prev = if t > 0 { Some(series[t - 1]) } else { None };
        let next = series.get(t + 1).copied();
        self.conditional(prev, next)
    }
}

/// Full-conditional prior moments for the column at time `t` of a `(T, n)`
/// array of independent component series. Returns per-component means and the
/// shared variance.
pub fn conditional_prior_moments(
    prior: &ArPrior,
    columns: ArrayView2<f64>,
    t: usize,
) -> Result<(Vec<f64>, f64)> {
    let n_t = columns.nrows();
    if t >= n_t {
        return Err(Error::InvalidArgument(format!(
            "time index {t} out of range 0..{n_t}"
        )));
    }
    let mut var = 0.0;
    let means = columns
        .columns()
        .into_iter()
        .map(|series| {
            let m = prior.conditional_at(series, t);
            var = m.var;
            m.mean
        })
        .collect();
    Ok((means, var))
}

/// Log density of the InvGamma(shape `a`, rate `b`) distribution.
pub fn inv_gamma_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Joint prior log density of a state.
pub fn log_prior(state: &LatentState, spec: &ModelSpec) -> Result<f64> {
    state.check(spec)?;
    let Dims { k, g, .. } = spec.dims;
    let phi_prior = spec.phi_prior(state);
    let mut total = 0.0;
    for gi in 0..g {
        for ki in 0..k {
            total += phi_prior.log_density(state.phi.slice(s![.., gi, ki]).iter().copied());
        }
    }
    match (&state.words, spec.hyper) {
        (
            WordParams::Disc { theta, chi },
            Hyperparams::Disc {
                kappa_theta,
                kappa_chi,
                alpha_theta,
                ..
            },
        ) => {
            let theta_prior = ArPrior::Stationary {
                alpha: alpha_theta,
                kappa: kappa_theta,
            };
            for series in theta.columns() {
                total += theta_prior.log_density(series.iter().copied());
            }
            total += chi
                .iter()
                .map(|&x| normal_log_pdf(x, 0.0, kappa_chi))
                .sum::<f64>();
        }
        (WordParams::Gasc { psi, kappa_phi }, Hyperparams::Gasc { kappa_psi, a, b }) => {
            let psi_prior = ArPrior::RandomWalk { kappa: kappa_psi };
            let (_, kk, v) = psi.dim();
            for ki in 0..kk {
                for vi in 0..v {
                    total += psi_prior.log_density(psi.slice(s![.., ki, vi]).iter().copied());
                }
            }
            total += inv_gamma_log_pdf(*kappa_phi, a, b);
        }
        _ => unreachable!("family checked"),
    }
    Ok(total)
}
