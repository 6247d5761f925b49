//! Forward simulation of both model families, vocabulary registration, and
//! the sense-time interaction measure.

use ndarray::{s, Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::corpus::{count_tables, GroundTruth, Snippet, SnippetCorpus};
use crate::error::{Error, Result};
use crate::model::{
    derive_probability_arrays, Dims, Hyperparams, LatentState, ModelSpec, ProbabilityArrays,
    WordParams,
};

/// Standard deviation used for the flat GASC start when simulating.
pub const IMPROPER_START_SD: f64 = 10.0;

fn normal<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

/// Fills `series` (one value per time) with a stationary AR(1) path.
fn stationary_path<R: Rng + ?Sized>(len: usize, alpha: f64, kappa: f64, rng: &mut R) -> Vec<f64> {
    let mut x = Vec::with_capacity(len);
    let mut prev = normal(rng, (kappa / (1.0 - alpha * alpha)).sqrt());
    x.push(prev);
    for _ in 1..len {
        prev = alpha * prev + normal(rng, kappa.sqrt());
        x.push(prev);
    }
    x
}

/// Random walk with increment variance `2κ` from an `N(0, start_sd²)` start.
fn random_walk_path<R: Rng + ?Sized>(
    len: usize,
    kappa: f64,
    start_sd: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(len);
    let mut prev = normal(rng, start_sd);
    x.push(prev);
    for _ in 1..len {
        prev += normal(rng, (2.0 * kappa).sqrt());
        x.push(prev);
    }
    x
}

/// Draws a state from the prior, replacing the flat GASC start by
/// `N(0, improper_start_sd²)`.
pub(crate) fn draw_state<R: Rng + ?Sized>(
    spec: &ModelSpec,
    improper_start_sd: f64,
    rng: &mut R,
) -> LatentState {
    let Dims { k, v, t, g } = spec.dims;
    let mut state = LatentState::zeros(spec);
    match (&mut state.words, spec.hyper) {
        (
            WordParams::Disc { theta, chi },
            Hyperparams::Disc {
                kappa_phi,
                kappa_theta,
                kappa_chi,
                alpha_phi,
                alpha_theta,
            },
        ) => {
            for gi in 0..g {
                for ki in 0..k {
                    let path = stationary_path(t, alpha_phi, kappa_phi, rng);
                    state
                        .phi
                        .slice_mut(s![.., gi, ki])
                        .assign(&ndarray::Array1::from(path));
                }
            }
            for vi in 0..v {
                let path = stationary_path(t, alpha_theta, kappa_theta, rng);
                theta.column_mut(vi).assign(&ndarray::Array1::from(path));
            }
            chi.mapv_inplace(|_| normal(rng, kappa_chi.sqrt()));
        }
        (WordParams::Gasc { psi, kappa_phi }, Hyperparams::Gasc { kappa_psi, a, b }) => {
            let gamma = Gamma::new(a, 1.0 / b).expect("validated shape and rate");
            *kappa_phi = 1.0 / gamma.sample(rng);
            for gi in 0..g {
                for ki in 0..k {
                    let path = random_walk_path(t, *kappa_phi, improper_start_sd, rng);
                    state
                        .phi
                        .slice_mut(s![.., gi, ki])
                        .assign(&ndarray::Array1::from(path));
                }
            }
            for ki in 0..k {
                for vi in 0..v {
                    let path = random_walk_path(t, kappa_psi, improper_start_sd, rng);
                    psi.slice_mut(s![.., ki, vi])
                        .assign(&ndarray::Array1::from(path));
                }
            }
        }
        _ => unreachable!("LatentState::zeros follows the spec family"),
    }
    state
}

/// A draw from the prior. The flat GASC start is realised as `N(0, 10²)`.
pub fn simulate_prior<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> LatentState {
    draw_state(spec, IMPROPER_START_SD, rng)
}

/// Like [`simulate_prior`] with a chosen spread for the flat GASC start.
/// DiSC draws ignore `start_sd`.
pub fn simulate_prior_with_start<R: Rng + ?Sized>(
    spec: &ModelSpec,
    start_sd: f64,
    rng: &mut R,
) -> LatentState {
    draw_state(spec, start_sd, rng)
}

/// Settings of the observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub spec: ModelSpec,
    /// Context window length `L`.
    pub l: usize,
    /// Stopword probability.
    pub q_sw: f64,
    /// Uninformative-word probability.
    pub q_u: f64,
    /// Snippets per time period.
    pub d_per_t: usize,
    /// Probability of each genre; uniform when empty.
    pub genre_mix: Vec<f64>,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(spec: ModelSpec, d_per_t: usize, seed: u64) -> Self {
        SimConfig {
            spec,
            l: 14,
            q_sw: 0.0,
            q_u: 0.0,
            d_per_t,
            genre_mix: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidArgument(
                "window length L must be at least 1".into(),
            ));
        }
        let q_ok = |q: f64| (0.0..=1.0).contains(&q);
        if !q_ok(self.q_sw) || !q_ok(self.q_u) || self.q_sw + self.q_u >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "need q_sw, q_u in [0, 1] with q_sw + q_u < 1, got {} and {}",
                self.q_sw, self.q_u
            )));
        }
        if !self.genre_mix.is_empty() {
            if self.genre_mix.len() != self.spec.dims.g {
                return Err(Error::Dimension(format!(
                    "genre mix has {} entries, G = {}",
                    self.genre_mix.len(),
                    self.spec.dims.g
                )));
            }
            let total: f64 = self.genre_mix.iter().sum();
            if self.genre_mix.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(
                    "genre mix must be a probability vector".into(),
                ));
            }
        }
        Ok(())
    }

    fn genre_weights(&self) -> Vec<f64> {
        if self.genre_mix.is_empty() {
            vec![1.0; self.spec.dims.g]
        } else {
            self.genre_mix.clone()
        }
    }
}

/// A simulated corpus with its ground truth and generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub corpus: SnippetCorpus,
    pub truth: GroundTruth,
    pub true_state: LatentState,
    pub true_probs: ProbabilityArrays,
}

/// Simulates snippets, sense labels and context words given `state`.
pub fn simulate_observations<R: Rng + ?Sized>(
    state: &LatentState,
    sim: &SimConfig,
    rng: &mut R,
) -> Result<SimOutput> {
    sim.validate()?;
    let spec = &sim.spec;
    let probs = derive_probability_arrays(state, spec)?;
    let Dims { k, v, t, g } = spec.dims;
    let genre_dist = WeightedIndex::new(sim.genre_weights())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let len_dist = Binomial::new(sim.l as u64, 1.0 - sim.q_sw - sim.q_u)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut word_dists = Vec::with_capacity(t * k);
    for ti in 0..t {
        for ki in 0..k {
            let column = probs.psi.slice(s![ti, ki, ..]);
            word_dists.push(
                WeightedIndex::new(column.iter().copied())
                    .map_err(|e| Error::NonFinite(e.to_string()))?,
            );
        }
    }
    let mut snippets = Vec::with_capacity(t * sim.d_per_t);
    let mut labels = Vec::with_capacity(t * sim.d_per_t);
    for ti in 0..t {
        let sense_dists = (0..g)
            .map(|gi| WeightedIndex::new(probs.phi.slice(s![ti, gi, ..]).iter().copied()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::NonFinite(e.to_string()))?;
        for _ in 0..sim.d_per_t {
            let genre = genre_dist.sample(rng);
            let z = sense_dists[genre].sample(rng);
            let n_words = len_dist.sample(rng) as usize;
            let words = (0..n_words)
                .map(|_| word_dists[ti * k + z].sample(rng) as u32)
                .collect();
            snippets.push(Snippet {
                id: format!("s{}", snippets.len() + 1),
                time: ti,
                genre,
                words,
            });
            labels.push(z);
        }
    }
    let corpus = SnippetCorpus::new(snippets, v, t, g)?;
    let truth = GroundTruth::from_labels(&corpus, &labels);
    Ok(SimOutput {
        corpus,
        truth,
        true_state: state.clone(),
        true_probs: probs,
    })
}

/// Prior draw followed by observations, seeded from `sim.seed`.
pub fn simulate(sim: &SimConfig) -> Result<SimOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let state = simulate_prior(&sim.spec, &mut rng);
    simulate_observations(&state, sim, &mut rng)
}

/// Vocabulary registration rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Registration {
    /// Drop words that occur exactly once in the corpus.
    HapaxRemoval,
    /// Keep the most frequent words covering at least this share of tokens.
    FrequencyTopShare(f64),
}

/// Removes unregistered words and renumbers the vocabulary, keeping surface
/// forms. Snippets left empty are kept.
pub fn registration_filter(corpus: &SnippetCorpus, mode: Registration) -> Result<SnippetCorpus> {
    let freq = corpus.word_frequencies();
    let keep: Vec<bool> = match mode {
        Registration::HapaxRemoval => freq.iter().map(|&f| f >= 2).collect(),
        Registration::FrequencyTopShare(share) => {
            if !(share > 0.0 && share <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "share must be in (0, 1], got {share}"
                )));
            }
            let total: usize = freq.iter().sum();
            let mut order: Vec<usize> = (0..corpus.v).filter(|&w| freq[w] > 0).collect();
            order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
            let mut keep = vec![false; corpus.v];
            let mut covered = 0usize;
            for w in order {
                if covered as f64 >= share * total as f64 {
                    break;
                }
                keep[w] = true;
                covered += freq[w];
            }
            keep
        }
    };
    let mut new_id = vec![u32::MAX; corpus.v];
    let mut vocab = Vec::new();
    for w in 0..corpus.v {
        if keep[w] {
            new_id[w] = vocab.len() as u32;
            vocab.push(corpus.vocab[w].clone());
        }
    }
    if vocab.is_empty() {
        return Err(Error::Validation(
            "registration left an empty vocabulary".into(),
        ));
    }
    let snippets = corpus
        .snippets
        .iter()
        .map(|s| Snippet {
            id: s.id.clone(),
            time: s.time,
            genre: s.genre,
            words: s
                .words
                .iter()
                .filter(|&&w| keep[w as usize])
                .map(|&w| new_id[w as usize])
                .collect(),
        })
        .collect();
    let out = SnippetCorpus {
        snippets,
        v: vocab.len(),
        t: corpus.t,
        g: corpus.g,
        vocab,
        time_labels: corpus.time_labels.clone(),
        genre_labels: corpus.genre_labels.clone(),
    };
    out.validate()?;
    Ok(out)
}

/// Outcome of the interaction test over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLevel {
    /// Fraction of words with a significant sense-time interaction.
    pub lambda: f64,
    pub significant: usize,
    /// Words whose regression could not be tested; counted as not significant.
    pub insufficient: usize,
    pub words: usize,
}

/// Significance level of the interaction F-test.
pub const INTERACTION_LEVEL: f64 = 0.05;

/// Least-squares line through `(x, y)`: returns `(Sxx, Sxy, residual SS)`.
fn line_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let rss = if sxx > 0.0 {
        syy - sxy * sxy / sxx
    } else {
        syy
    };
    (sxx, sxy, rss.max(0.0))
}

/// Per-word F-test of sense-specific time slopes against a common slope in
/// a regression of the empirical word probabilities `N_vkt / N_·kt` on
/// continuous time (mapped to `[-1, 1]`) with sense intercepts. `Λ` is the
/// fraction of the vocabulary where the test rejects at 5%.
pub fn interaction_level(
    corpus: &SnippetCorpus,
    truth: &GroundTruth,
    k: usize,
) -> Result<InteractionLevel> {
    let labels = truth.complete(corpus)?;
    if k < 2 || corpus.v == 0 {
        return Ok(InteractionLevel {
            lambda: 0.0,
            significant: 0,
            insufficient: 0,
            words: corpus.v,
        });
    }
    let aligned: Vec<Option<usize>> = labels.into_iter().map(Some).collect();
    let counts = count_tables(corpus, &aligned, k)?;
    let t_len = corpus.t;
    let time = |ti: usize| {
        if t_len == 1 {
            0.0
        } else {
            2.0 * ti as f64 / (t_len - 1) as f64 - 1.0
        }
    };
    let totals = Array2::from_shape_fn((t_len, k), |(ti, ki)| counts.tokens(ti, ki));
    let (mut significant, mut insufficient) = (0, 0);
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for v in 0..corpus.v {
        for (ki, group) in groups.iter_mut().enumerate() {
            group.clear();
            for ti in 0..t_len {
                let n = totals[[ti, ki]];
                if n > 0 {
                    group.push((time(ti), counts.n_wz[[ti, ki, v]] as f64 / n as f64));
                }
            }
        }
        let n_obs: usize = groups.iter().map(Vec::len).sum();
        let df_den = n_obs as isize - 2 * k as isize;
        if groups.iter().any(|g| g.len() < 2) || df_den <= 0 {
            insufficient += 1;
            continue;
        }
        let fits: Vec<(f64, f64, f64)> = groups.iter().map(|g| line_fit(g)).collect();
        if fits.iter().any(|f| f.0 <= 0.0) {
            insufficient += 1;
            continue;
        }
        let rss_full: f64 = fits.iter().map(|f| f.2).sum();
        // common slope: pooled within-sense regression
        let sxx: f64 = fits.iter().map(|f| f.0).sum();
        let sxy: f64 = fits.iter().map(|f| f.1).sum();
        let between: f64 = fits.iter().map(|f| f.1 * f.1 / f.0).sum::<f64>() - sxy * sxy / sxx;
        let rss_reduced = rss_full + between.max(0.0);
        let scale = rss_reduced.max(1e-300);
        if rss_full <= 1e-12 * scale {
            if between > 1e-12 * scale {
                significant += 1;
            }
            continue;
        }
        let df_num = (k - 1) as f64;
        let f = (between.max(0.0) / df_num) / (rss_full / df_den as f64);
        let dist = FisherSnedecor::new(df_num, df_den as f64)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if dist.sf(f) < INTERACTION_LEVEL {
            significant += 1;
        }
    }
    Ok(InteractionLevel {
        lambda: significant as f64 / corpus.v as f64,
        significant,
        insufficient,
        words: corpus.v,
    })
}

/// The three hand-built interaction examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplicitDesign {
    Ex1,
    Ex2,
    Ex3,
}

impl ExplicitDesign {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ex1" => Ok(ExplicitDesign::Ex1),
            "ex2" => Ok(ExplicitDesign::Ex2),
            "ex3" => Ok(ExplicitDesign::Ex3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown design '{s}' (expected ex1, ex2 or ex3)"
            ))),
        }
    }

    /// Number of words with a built-in interaction, out of 100.
    pub fn designated(self) -> usize {
        match self {
            ExplicitDesign::Ex1 | ExplicitDesign::Ex2 => 60,
            ExplicitDesign::Ex3 => 100,
        }
    }

    /// Whether the other senses move against the designated sense.
    fn opposed(self) -> bool {
        !matches!(self, ExplicitDesign::Ex1)
    }
}

/// Settings for [`make_explicit_interaction_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitConfig {
    pub d_per_t: usize,
    pub l: usize,
    /// Unnormalised mass of a designated word at its peak, relative to `1/V`.
    pub peak: f64,
    /// Ratio between a designated word's peak and trough.
    pub ratio: f64,
}

impl Default for ExplicitConfig {
    fn default() -> Self {
        ExplicitConfig {
            d_per_t: 100,
            l: 14,
            peak: 2.0,
            ratio: 8.0,
        }
    }
}

/// A corpus with `V = 100`, `K = 3`, `T = 9`, `G = 1` in which designated
/// words have log-linear trajectories: rising or falling in one sense and
/// constant (ex1) or moving the other way (ex2, ex3) in the others. Ex2
/// uses twice the log-range of ex1. Sense prevalence is uniform.
pub fn make_explicit_interaction_dataset<R: Rng + ?Sized>(
    design: ExplicitDesign,
    config: &ExplicitConfig,
    rng: &mut R,
) -> Result<SimOutput> {
    let (k, v, t) = (3, 100, 9);
    let spec = ModelSpec::new(Dims { k, v, t, g: 1 }, Hyperparams::gasc_default())?;
    let log_peak = config.peak.ln();
    let range = match design {
        ExplicitDesign::Ex1 => config.ratio.ln(),
        ExplicitDesign::Ex2 | ExplicitDesign::Ex3 => 2.0 * config.ratio.ln(),
    };
    let mut psi = Array3::zeros((t, k, v));
    for w in 0..design.designated() {
        let sense = w % k;
        let rising = (w / k) % 2 == 0;
        for ti in 0..t {
            let frac = ti as f64 / (t - 1) as f64;
            let up = log_peak - range * (1.0 - frac);
            let down = log_peak - range * frac;
            let (own, other) = if rising { (up, down) } else { (down, up) };
            for ki in 0..k {
                psi[[ti, ki, w]] = if ki == sense {
                    own
                } else if design.opposed() {
                    other
                } else {
                    log_peak - 0.5 * range
                };
            }
        }
    }
    let state = LatentState {
        phi: Array3::zeros((t, 1, k)),
        words: WordParams::Gasc {
            psi,
            kappa_phi: 1.0,
        },
    };
    let mut sim = SimConfig::new(spec, config.d_per_t, 0);
    sim.l = config.l;
    simulate_observations(&state, &sim, rng)
}
