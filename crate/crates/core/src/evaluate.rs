//! Scoring fitted chains against ground truth, and posterior summaries.

use ndarray::{s, Array2, Array3};

use crate::corpus::{count_tables, GroundTruth, PreparedCorpus, SnippetCorpus};
use crate::error::{Error, Result};
use crate::likelihood::{responsibilities, sense_log_likelihoods};
use crate::model::{log_probability_arrays, Dims};
use crate::samplers::ChainOutput;

/// Per-snippet sense probabilities, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    /// `(D, K)`; rows sum to one.
    pub probs: Array2<f64>,
}

impl Predictions {
    pub fn new(ids: Vec<String>, probs: Array2<f64>) -> Result<Self> {
        if ids.len() != probs.nrows() {
            return Err(Error::Dimension(format!(
                "{} ids for {} prediction rows",
                ids.len(),
                probs.nrows()
            )));
        }
        for (id, row) in ids.iter().zip(probs.rows()) {
            let total: f64 = row.sum();
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "predictions for '{id}' are not a probability vector"
                )));
            }
        }
        Ok(Predictions { ids, probs })
    }

    /// Uniform predictions over `k` senses.
    pub fn uniform(ids: Vec<String>, k: usize) -> Self {
        let n = ids.len();
        Predictions {
            ids,
            probs: Array2::from_elem((n, k), 1.0 / k as f64),
        }
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }

    /// Most probable sense of each snippet; ties go to the lower index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (k, &p)| if p > row[best] { k } else { best })
            })
            .collect()
    }

    /// Re-expresses model senses in annotated-sense order. Unmatched model
    /// senses are dropped and each row renormalised over the matched ones.
    pub fn realign(&self, alignment: &SenseAlignment) -> Result<Predictions> {
        if alignment.assignment.len() != self.k() {
            return Err(Error::Dimension(format!(
                "alignment covers {} senses, predictions have {}",
                alignment.assignment.len(),
                self.k()
            )));
        }
        let mut out = Array2::zeros((self.ids.len(), alignment.k_true));
        for (mut dst, src) in out.rows_mut().into_iter().zip(self.probs.rows()) {
            for (model, target) in alignment.assignment.iter().enumerate() {
                if let Some(j) = target {
                    dst[*j] += src[model];
                }
            }
            let total = dst.sum();
            if total > 0.0 {
                dst /= total;
            } else {
                dst.fill(1.0 / alignment.k_true as f64);
            }
        }
        Ok(Predictions {
            ids: self.ids.clone(),
            probs: out,
        })
    }
}

/// Sense probabilities of every snippet, averaged over the stored draws of
/// one or more chains. Senses of later chains are matched to the first.
pub fn predictions(chains: &[ChainOutput], corpus: &SnippetCorpus) -> Result<Predictions> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains to predict from".into()))?;
    let k = first.spec.dims.k;
    let prepared = PreparedCorpus::new(corpus);
    let mut acc = Array2::zeros((corpus.len(), k));
    let mut n = 0usize;
    for chain in chains {
        let order = matched_senses(first, chain)?;
        for i in 0..chain.n_draws() {
            let (log_phi, log_psi) = log_probability_arrays(&chain.state(i));
            let ell = sense_log_likelihoods(&prepared, &log_psi);
            let (resp, _) = responsibilities(&prepared, &log_phi, &ell);
            for (ka, &kb) in order.iter().enumerate() {
                let mut dst = acc.column_mut(ka);
                dst += &resp.column(kb);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    acc /= n as f64;
    Ok(Predictions {
        ids: corpus.snippets.iter().map(|s| s.id.clone()).collect(),
        probs: acc,
    })
}

/// Mean over snippets of `Σ_k (p̂_dk − 1{z_d = k})²`. Every scored snippet
/// needs a label.
pub fn brier_score(predictions: &Predictions, truth: &GroundTruth) -> Result<f64> {
    if predictions.ids.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut total = 0.0;
    for (id, row) in predictions.ids.iter().zip(predictions.probs.rows()) {
        let z = truth
            .get(id)
            .ok_or_else(|| Error::MissingLabel(id.clone()))?;
        if z >= row.len() {
            return Err(Error::Validation(format!(
                "snippet '{id}': sense {} exceeds K = {}",
                z + 1,
                row.len()
            )));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let o = if k == z { 1.0 } else { 0.0 };
                (p - o) * (p - o)
            })
            .sum::<f64>();
    }
    Ok(total / predictions.ids.len() as f64)
}

/// Restricts predictions to snippets that carry a label.
pub fn labelled_only(predictions: &Predictions, truth: &GroundTruth) -> Predictions {
    let keep: Vec<usize> = (0..predictions.ids.len())
        .filter(|&i| truth.get(&predictions.ids[i]).is_some())
        .collect();
    Predictions {
        ids: keep.iter().map(|&i| predictions.ids[i].clone()).collect(),
        probs: predictions.probs.select(ndarray::Axis(0), &keep),
    }
}

/// Matching of model senses to annotated senses.
#[derive(Debug, Clone, PartialEq)]
pub struct SenseAlignment {
    /// Annotated sense of each model sense; `None` for surplus senses.
    pub assignment: Vec<Option<usize>>,
    /// Total-variation distance of each matched pair.
    pub divergence: Vec<Option<f64>>,
    pub k_true: usize,
}

impl SenseAlignment {
    pub fn total(&self) -> f64 {
        self.divergence.iter().flatten().sum()
    }

    /// Identity matching for `k` senses.
    pub fn identity(k: usize) -> Self {
        SenseAlignment {
            assignment: (0..k).map(Some).collect(),
            divergence: vec![Some(0.0); k],
            k_true: k,
        }
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`).
fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    // potentials and matching are 1-based with 0 as a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Matches model word distributions `(K_model, V)` to empirical ones
/// `(K_true, V)` by minimum total variation distance.
pub fn align_senses(model: &Array2<f64>, empirical: &Array2<f64>) -> Result<SenseAlignment> {
    let (k_model, v) = model.dim();
    let (k_true, v_true) = empirical.dim();
    if v != v_true {
        return Err(Error::Dimension(format!(
            "model has V = {v}, empirical has V = {v_true}"
        )));
    }
    if k_true > k_model {
        return Err(Error::InvalidArgument(format!(
            "cannot match {k_true} annotated senses with {k_model} model senses"
        )));
    }
    let cost = Array2::from_shape_fn((k_true, k_model), |(i, j)| {
        total_variation(
            empirical.row(i).as_slice().expect("standard layout"),
            model.row(j).as_slice().expect("standard layout"),
        )
    });
    let mut assignment = vec![None; k_model];
    let mut divergence = vec![None; k_model];
    for (i, j) in hungarian(&cost).into_iter().enumerate() {
        assignment[j] = Some(i);
        divergence[j] = Some(cost[[i, j]]);
    }
    Ok(SenseAlignment {
        assignment,
        divergence,
        k_true,
    })
}

/// Time-averaged `ψ̃` per sense, `(K, V)`, from a `(T, K, V)` array.
pub fn time_averaged_psi(psi: &Array3<f64>) -> Array2<f64> {
    psi.mean_axis(ndarray::Axis(0)).expect("T ≥ 1")
}

/// Empirical word distribution of each annotated sense, `(K, V)`, pooled
/// over time. Unlabelled snippets are skipped; senses with no tokens get a
/// uniform row.
pub fn empirical_word_distributions(
    corpus: &SnippetCorpus,
    truth: &GroundTruth,
    k: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((k, corpus.v));
    for s in &corpus.snippets {
        if let Some(z) = truth.get(&s.id) {
            if z >= k {
                return Err(Error::Validation(format!(
                    "snippet '{}': sense {} exceeds K = {k}",
                    s.id,
                    z + 1
                )));
            }
            for &w in &s.words {
                out[[z, w as usize]] += 1.0;
            }
        }
    }
    for mut row in out.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        } else {
            row.fill(1.0 / corpus.v as f64);
        }
    }
    Ok(out)
}

/// One-vs-rest rates for a positive sense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionStats {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

pub fn confusion_stats(
    predicted: &[usize],
    truth: &[usize],
    positive: usize,
) -> Result<ConfusionStats> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no labels to compare".into()));
    }
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for (&p, &z) in predicted.iter().zip(truth) {
        match (p == positive, z == positive) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            f64::NAN
        } else {
            a as f64 / (a + b) as f64
        }
    };
    Ok(ConfusionStats {
        tp,
        fn_,
        fp,
        tn,
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
        accuracy: (tp + tn) as f64 / predicted.len() as f64,
    })
}

/// Minimum number of draws for an HPD interval.
pub const HPD_MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpdInterval {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl HpdInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Shortest interval spanning `⌈mass · n⌉` of the sorted draws.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<HpdInterval> {
    if samples.len() < HPD_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: HPD_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "HPD mass must be in (0, 1], got {mass}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(
            "HPD input contains non-finite draws".into(),
        ));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let m = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let best = (0..=n - m)
        .min_by(|&a, &b| (x[a + m - 1] - x[a]).total_cmp(&(x[b + m - 1] - x[b])))
        .expect("n ≥ m");
    Ok(HpdInterval {
        lower: x[best],
        upper: x[best + m - 1],
        mass,
    })
}

/// Empirical sense prevalence per `(t, g)` block from labelled snippets.
#[derive(Debug, Clone, PartialEq)]
pub struct Prevalence {
    /// `(T, G, K)`; `NaN` where the block is absent.
    pub values: Array3<f64>,
    /// `(T, G)`; false for blocks without labelled snippets.
    pub present: Array2<bool>,
}

pub fn empirical_prevalence(
    truth: &GroundTruth,
    corpus: &SnippetCorpus,
    k: usize,
) -> Result<Prevalence> {
    let labels: Vec<Option<usize>> = truth.aligned(corpus);
    let (snippets, labels): (Vec<_>, Vec<_>) = corpus
        .snippets
        .iter()
        .zip(labels)
        .filter(|(_, z)| z.is_some())
        .map(|(s, z)| (s.clone(), z))
        .unzip();
    let labelled = SnippetCorpus {
        snippets,
        ..corpus.clone()
    };
    let counts = count_tables(&labelled, &labels, k)?;
    let (t, g) = (corpus.t, corpus.g);
    let mut values = Array3::from_elem((t, g, k), f64::NAN);
    let mut present = Array2::from_elem((t, g), false);
    for ti in 0..t {
        for gi in 0..g {
            let total: u32 = counts.n_z.slice(s![ti, gi, ..]).sum();
            if total > 0 {
                present[[ti, gi]] = true;
                for ki in 0..k {
                    values[[ti, gi, ki]] = counts.n_z[[ti, gi, ki]] as f64 / total as f64;
                }
            }
        }
    }
    Ok(Prevalence { values, present })
}

/// Minimum trace length for ESS.
pub const ESS_MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The trace is constant; `value` is 0.
    pub degenerate: bool,
}

/// Effective sample size `n / (1 + 2 Σ ρ_k)`, truncating the sum with
/// Geyer's initial positive sequence.
pub fn ess(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < ESS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: ESS_MIN_SAMPLES,
            got: n,
        });
    }
    if trace.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(
            "ESS input contains non-finite draws".into(),
        ));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    let scale = centred
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()))
        .max(mean.abs());
    if c0 <= (1e-13 * scale).powi(2) || c0 == 0.0 {
        return Ok(Ess {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    let tau = tau.max(1.0 / (n as f64).log10());
    Ok(Ess {
        value: n as f64 / tau,
        degenerate: false,
    })
}

/// Monte Carlo standard error of the mean of a trace.
pub fn mcse(trace: &[f64]) -> Result<f64> {
    let e = ess(trace)?;
    if e.degenerate {
        return Ok(0.0);
    }
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let var = trace.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((var / e.value).sqrt())
}

/// Parameters entering an ESS benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EssSelection {
    /// Every `φ̃[t, g, k]`.
    PhiAll,
    /// `ψ̃[t, k, v]` at every `t` for the `n` words with the highest
    /// time-averaged posterior mean under each sense.
    PsiTopWords(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssBenchmark {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// ESS per hour of sampling time, one entry per parameter and chain.
    pub per_hour: Vec<f64>,
    /// Constant traces, which are left out.
    pub degenerate: usize,
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Traces of `ψ̃` at the selected `(k, v)` pairs and every `t`; columns
/// ordered by pair, then time.
pub fn psi_tilde_traces(chain: &ChainOutput, pairs: &[(usize, usize)]) -> Array2<f64> {
    let Dims { t, .. } = chain.spec.dims;
    let mut out = Array2::zeros((chain.n_draws(), pairs.len() * t));
    for i in 0..chain.n_draws() {
        let (_, log_psi) = log_probability_arrays(&chain.state(i));
        for (p, &(k, v)) in pairs.iter().enumerate() {
            for ti in 0..t {
                out[[i, p * t + ti]] = log_psi[[ti, k, v]].exp();
            }
        }
    }
    out
}

/// Median and interquartile range of ESS per hour of sampling time.
pub fn ess_benchmark(chains: &[ChainOutput], selection: EssSelection) -> Result<EssBenchmark> {
    let mut per_hour = Vec::new();
    let mut degenerate = 0;
    for chain in chains {
        if !(chain.sampling_seconds > 0.0) {
            return Err(Error::InvalidArgument(
                "chain has no recorded sampling time".into(),
            ));
        }
        let traces = match selection {
            EssSelection::PhiAll => chain.phi_tilde_traces(),
            EssSelection::PsiTopWords(n) => {
                let means = chain.posterior_means().psi;
                let pairs: Vec<(usize, usize)> = (0..chain.spec.dims.k)
                    .flat_map(|k| {
                        top_words(&means, k, n, TopWordsMode::TimeAveraged)
                            .into_iter()
                            .map(move |(v, _)| (k, v))
                    })
                    .collect();
                psi_tilde_traces(chain, &pairs)
            }
        };
        let hours = chain.sampling_seconds / 3600.0;
        for col in traces.columns() {
            let e = ess(&col.to_vec())?;
            if e.degenerate {
                degenerate += 1;
            } else {
                per_hour.push(e.value / hours);
            }
        }
    }
    if per_hour.is_empty() {
        return Err(Error::InvalidArgument(
            "no non-degenerate traces to benchmark".into(),
        ));
    }
    let mut sorted = per_hour.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(EssBenchmark {
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        per_hour,
        degenerate,
    })
}

/// Word ranking rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopWordsMode {
    TimeAveraged,
    PerTime(usize),
}

/// The `n` most probable words of sense `k` in a `(T, K, V)` array of
/// probabilities, with their scores. Ties go to the lower word id.
pub fn top_words(psi: &Array3<f64>, k: usize, n: usize, mode: TopWordsMode) -> Vec<(usize, f64)> {
    let (t, _, v) = psi.dim();
    let score: Vec<f64> = match mode {
        TopWordsMode::TimeAveraged => (0..v)
            .map(|w| psi.slice(s![.., k, w]).sum() / t as f64)
            .collect(),
        TopWordsMode::PerTime(ti) => (0..v).map(|w| psi[[ti, k, w]]).collect(),
    };
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order.into_iter().take(n).map(|w| (w, score[w])).collect()
}

/// `N_{v,k,·} / N_{·,k,·}` normalised over senses: how strongly word `v`
/// leans towards each annotated sense once sense sizes are accounted for.
pub fn word_sense_profile(
    truth: &GroundTruth,
    corpus: &SnippetCorpus,
    k: usize,
    v: usize,
) -> Result<Vec<f64>> {
    if v >= corpus.v {
        return Err(Error::InvalidArgument(format!(
            "word id {v} out of range 0..{}",
            corpus.v
        )));
    }
    let mut word = vec![0u64; k];
    let mut all = vec![0u64; k];
    for s in &corpus.snippets {
        if let Some(z) = truth.get(&s.id) {
            if z >= k {
                return Err(Error::Validation(format!(
                    "snippet '{}': sense {} exceeds K = {k}",
                    s.id,
                    z + 1
                )));
            }
            all[z] += s.words.len() as u64;
            word[z] += s.words.iter().filter(|&&w| w as usize == v).count() as u64;
        }
    }
    let ratios: Vec<f64> = word
        .iter()
        .zip(&all)
        .map(|(&a, &b)| if b == 0 { 0.0 } else { a as f64 / b as f64 })
        .collect();
    let total: f64 = ratios.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "word {} does not occur in labelled snippets",
            corpus.vocab[v]
        )));
    }
    Ok(ratios.into_iter().map(|r| r / total).collect())
}

/// One row of the prevalence table.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceRow {
    pub t: usize,
    pub g: usize,
    pub k: usize,
    /// `None` when the block has no labelled snippets or no truth was given.
    pub empirical: Option<f64>,
    pub mean: f64,
    pub hpd: HpdInterval,
}

/// Posterior mean and HPD interval of every `φ̃[t, g, k]` across chains,
/// alongside the empirical prevalence when labels are available.
pub fn prevalence_table(
    chains: &[ChainOutput],
    empirical: Option<&Prevalence>,
    mass: f64,
) -> Result<Vec<PrevalenceRow>> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains".into()))?;
    let Dims { k, t, g, .. } = first.spec.dims;
    let traces: Vec<Array2<f64>> = chains.iter().map(ChainOutput::phi_tilde_traces).collect();
    let orders = chains
        .iter()
        .map(|c| matched_senses(first, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(t * g * k);
    for ti in 0..t {
        for gi in 0..g {
            for ki in 0..k {
                let draws: Vec<f64> = traces
                    .iter()
                    .zip(&orders)
                    .flat_map(|(tr, order)| tr.column((ti * g + gi) * k + order[ki]).to_vec())
                    .collect();
                let mean = draws.iter().sum::<f64>() / draws.len().max(1) as f64;
                rows.push(PrevalenceRow {
                    t: ti,
                    g: gi,
                    k: ki,
                    empirical: empirical
                        .and_then(|p| p.present[[ti, gi]].then(|| p.values[[ti, gi, ki]])),
                    mean,
                    hpd: hpd_interval(&draws, mass)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Gap between two chains' posterior means in units of their combined MCSE.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGap {
    pub parameter: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub combined_mcse: f64,
    /// `|mean_a − mean_b| / combined_mcse`; infinite when the MCSE is zero
    /// and the means differ.
    pub z: f64,
}

/// For each sense of `reference`, the matching sense of `other`, found by
/// aligning their time-averaged posterior mean word distributions. Sense
/// labels are only identified up to permutation, so chains must be matched
/// before their prevalences are compared or pooled.
pub fn matched_senses(reference: &ChainOutput, other: &ChainOutput) -> Result<Vec<usize>> {
    if reference.spec.dims != other.spec.dims {
        return Err(Error::Dimension(
            "chains disagree on model dimensions".into(),
        ));
    }
    let k = reference.spec.dims.k;
    let a = time_averaged_psi(&reference.posterior_means().psi);
    let b = time_averaged_psi(&other.posterior_means().psi);
    let alignment = align_senses(&b, &a)?;
    let mut order = vec![0; k];
    for (kb, ka) in alignment.assignment.iter().enumerate() {
        order[ka.expect("equal sense counts give a full matching")] = kb;
    }
    Ok(order)
}

/// Compares `φ̃` posterior means of two chains parameter by parameter, after
/// matching the senses of `b` to those of `a`.
pub fn compare_chains(a: &ChainOutput, b: &ChainOutput) -> Result<Vec<ChainGap>> {
    let order = matched_senses(a, b)?;
    let Dims { k, t, g, .. } = a.spec.dims;
    let (ta, tb) = (a.phi_tilde_traces(), b.phi_tilde_traces());
    let mut gaps = Vec::with_capacity(t * g * k);
    for ti in 0..t {
        for gi in 0..g {
            for ki in 0..k {
                let base = (ti * g + gi) * k;
                let (xa, xb) = (
                    ta.column(base + ki).to_vec(),
                    tb.column(base + order[ki]).to_vec(),
                );
                let mean_a = xa.iter().sum::<f64>() / xa.len() as f64;
                let mean_b = xb.iter().sum::<f64>() / xb.len() as f64;
                let combined = (mcse(&xa)?.powi(2) + mcse(&xb)?.powi(2)).sqrt();
                let diff = (mean_a - mean_b).abs();
                let z = if combined > 0.0 {
                    diff / combined
                } else if diff > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                gaps.push(ChainGap {
                    parameter: format!("phi[t={},g={},k={}]", ti + 1, gi + 1, ki + 1),
                    mean_a,
                    mean_b,
                    combined_mcse: combined,
                    z,
                });
            }
        }
    }
    Ok(gaps)
}
