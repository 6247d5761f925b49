//! File formats and corpus loading.
//!
//! Text files are tab-separated UTF-8 with a first line `# disc-<kind> v1`.
//!
//! * snippets: `id  time  genre  tokens`, tokens separated by spaces;
//! * truth: `id  sense`, senses numbered from 1;
//! * predictions: `id  p_1 .. p_K`;
//! * vocabulary: one surface form per line, no header.
//!
//! The sample store is binary, little-endian throughout:
//!
//! ```text
//! magic "DSCS", u32 version
//! u8 family (0 DiSC, 1 GASC), u64 K, V, T, G
//! f64 x5 hyperparameters (DiSC: κ_φ κ_θ κ_χ α_φ α_θ; GASC: κ_ψ a b 0 0)
//! u8 sampler, u64 iterations, burn-in, thin, leapfrog steps,
//!   mixed φ steps, mixed word steps, seed, stream, κ_φ update period
//! f64 mixed long-step probability
//! u64 non-finite proposals, degenerate updates
//! f64 burn-in seconds, sampling seconds
//! u64 draws, row length
//! f64 draws x row length, row-major in LatentState::values order
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GroundTruth, Interner, Snippet, SnippetCorpus};
use crate::error::{Error, Result};
use crate::evaluate::{Predictions, PrevalenceRow};
use crate::model::{derive_probability_arrays, Dims, Family, Hyperparams, LatentState, ModelSpec};
use crate::samplers::{ChainConfig, ChainOutput, MixedSchedule, SamplerKind};
use crate::simulate::SimOutput;

pub const FORMAT_VERSION: u32 = 1;
const STORE_MAGIC: &[u8; 4] = b"DSCS";

fn header(kind: &str) -> String {
    format!("# disc-{kind} v{FORMAT_VERSION}\n")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Data lines of a versioned table as `(line number, fields)`.
fn table_lines<'a>(path: &Path, text: &'a str, kind: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    let expected = header(kind);
    match lines.next() {
        Some((_, first)) if first.trim_end() == expected.trim_end() => {}
        Some((_, first)) if first.starts_with(&format!("# disc-{kind} v")) => {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported format version '{first}'"),
            ));
        }
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("missing header '{}'", expected.trim_end()),
            ))
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
        .collect())
}

pub fn write_corpus(path: &Path, corpus: &SnippetCorpus) -> Result<()> {
    let mut out = header("snippets");
    for s in &corpus.snippets {
        let tokens: Vec<&str> = s
            .words
            .iter()
            .map(|&w| corpus.vocab[w as usize].as_str())
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.id,
            corpus.time_labels[s.time],
            corpus.genre_labels[s.genre],
            tokens.join(" ")
        );
    }
    write_text(path, &out)
}

pub fn write_vocab(path: &Path, vocab: &[String]) -> Result<()> {
    let mut out = vocab.join("\n");
    out.push('\n');
    write_text(path, &out)
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let vocab: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut seen = HashSet::new();
    for (i, w) in vocab.iter().enumerate() {
        if !seen.insert(w.as_str()) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate vocabulary entry '{w}'"),
            ));
        }
    }
    Ok(vocab)
}

/// What to do with a token absent from a frozen vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownTokens {
    #[default]
    Fail,
    Drop,
}

/// How time labels become periods `0..T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TimeBinning {
    /// Distinct labels in numeric order if all are numbers, otherwise in
    /// order of first appearance.
    #[default]
    Auto,
    /// Explicit label → period map, periods numbered from 1 and contiguous.
    Map(Vec<(String, usize)>),
    /// Numeric labels binned by increasing edges: period `i` is
    /// `[edges[i], edges[i+1])`, the last bin closed.
    Edges(Vec<f64>),
}

impl TimeBinning {
    /// Parses `a,b,c` as edges or `label=1,label=2` as a map.
    pub fn parse(s: &str) -> Result<Self> {
        let items: Vec<&str> = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .collect();
        if items.iter().all(|x| x.contains('=')) {
            let map = items
                .iter()
                .map(|x| {
                    let (label, idx) = x.split_once('=').expect("checked");
                    idx.trim()
                        .parse::<usize>()
                        .map(|i| (label.trim().to_string(), i))
                        .map_err(|_| Error::InvalidArgument(format!("bad time bin '{x}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TimeBinning::Map(map))
        } else {
            let edges = items
                .iter()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad time bin edge '{x}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TimeBinning::Edges(edges))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadOptions {
    /// Frozen vocabulary; built from the file when absent.
    pub vocab: Option<Vec<String>>,
    pub unknown: UnknownTokens,
    pub time: TimeBinning,
    /// Genre labels in index order; first-appearance order when absent.
    pub genres: Option<Vec<String>>,
    /// Declared window length; longer snippets are rejected.
    pub max_len: Option<usize>,
    /// Keep at most this many snippets per `(time, genre)` block, chosen at
    /// random with the given seed.
    pub cap_per_block: Option<(usize, u64)>,
}

/// A loaded corpus and what was changed on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub corpus: SnippetCorpus,
    pub dropped_tokens: usize,
    /// Ids of snippets with no tokens left.
    pub empty: Vec<String>,
    /// Snippets removed by the per-block cap.
    pub capped: usize,
}

struct RawSnippet<'a> {
    line: usize,
    id: &'a str,
    time: &'a str,
    genre: &'a str,
    tokens: Vec<&'a str>,
}

fn time_index(
    path: &Path,
    raws: &[RawSnippet],
    binning: &TimeBinning,
) -> Result<(Vec<usize>, Vec<String>)> {
    match binning {
        TimeBinning::Auto => {
            let mut labels: Vec<&str> = Vec::new();
            let mut seen = HashSet::new();
            for r in raws {
                if seen.insert(r.time) {
                    labels.push(r.time);
                }
            }
            let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
            if let Some(values) = numeric {
                let mut order: Vec<usize> = (0..labels.len()).collect();
                order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
                labels = order.into_iter().map(|i| labels[i]).collect();
            }
            let index: HashMap<&str, usize> =
                labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
            Ok((
                raws.iter().map(|r| index[r.time]).collect(),
                labels.into_iter().map(String::from).collect(),
            ))
        }
        TimeBinning::Map(map) => {
            let t = map.iter().map(|m| m.1).max().unwrap_or(0);
            let used: HashSet<usize> = map.iter().map(|m| m.1).collect();
            if t == 0 || (1..=t).any(|i| !used.contains(&i)) {
                return Err(Error::Validation(
                    "time bins must be numbered contiguously from 1".into(),
                ));
            }
            let index: HashMap<&str, usize> =
                map.iter().map(|(l, i)| (l.as_str(), i - 1)).collect();
            let mut labels = vec![String::new(); t];
            for (l, i) in map {
                if labels[i - 1].is_empty() {
                    labels[i - 1] = l.clone();
                } else {
                    labels[i - 1] = format!("{}|{l}", labels[i - 1]);
                }
            }
            let idx = raws
                .iter()
                .map(|r| {
                    index.get(r.time).copied().ok_or_else(|| {
                        Error::parse(
                            path,
                            r.line,
                            format!("time label '{}' is not in the bin map", r.time),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((idx, labels))
        }
        TimeBinning::Edges(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Validation(
                    "time bin edges must be at least two strictly increasing values".into(),
                ));
            }
            let t = edges.len() - 1;
            let labels = edges
                .windows(2)
                .map(|w| format!("{}-{}", w[0], w[1]))
                .collect();
            let idx = raws
                .iter()
                .map(|r| {
                    let x: f64 = r.time.parse().map_err(|_| {
                        Error::parse(
                            path,
                            r.line,
                            format!("time label '{}' is not numeric", r.time),
                        )
                    })?;
                    if x < edges[0] || x > edges[t] {
                        return Err(Error::parse(
                            path,
                            r.line,
                            format!("time {x} outside the bin edges"),
                        ));
                    }
                    Ok(edges[1..].iter().position(|&e| x < e).unwrap_or(t - 1))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((idx, labels))
        }
    }
}

/// Reads a snippet file, interning tokens, times and genres.
pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<LoadReport> {
    let text = read_text(path)?;
    let mut raws = Vec::new();
    let mut ids = HashSet::new();
    for (line, fields) in table_lines(path, &text, "snippets")? {
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty snippet id"));
        }
        if !ids.insert(id) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate snippet id '{id}'"),
            ));
        }
        let tokens: Vec<&str> = fields
            .get(3)
            .map(|t| t.split_whitespace().collect())
            .unwrap_or_default();
        if let Some(l) = options.max_len {
            if tokens.len() > l {
                return Err(Error::parse(
                    path,
                    line,
                    format!("{} tokens exceed the window length {l}", tokens.len()),
                ));
            }
        }
        raws.push(RawSnippet {
            line,
            id,
            time: fields[1].trim(),
            genre: fields[2].trim(),
            tokens,
        });
    }
    let (times, time_labels) = time_index(path, &raws, &options.time)?;

    let mut genres = match &options.genres {
        Some(labels) => Interner::from_labels(labels.clone()),
        None => Interner::default(),
    };
    let frozen_genres = options.genres.is_some();
    let mut vocab = match &options.vocab {
        Some(v) => Interner::from_labels(v.clone()),
        None => Interner::default(),
    };
    let frozen_vocab = options.vocab.is_some();
    let mut dropped_tokens = 0;
    let mut snippets = Vec::with_capacity(raws.len());
    for (r, &time) in raws.iter().zip(&times) {
        let genre = if frozen_genres {
            genres
                .get(r.genre)
                .ok_or_else(|| Error::parse(path, r.line, format!("unknown genre '{}'", r.genre)))?
        } else {
            genres.intern(r.genre)
        };
        let mut words = Vec::with_capacity(r.tokens.len());
        for tok in &r.tokens {
            let id = if frozen_vocab {
                vocab.get(tok)
            } else {
                Some(vocab.intern(tok))
            };
            match (id, options.unknown) {
                (Some(w), _) => words.push(w as u32),
                (None, UnknownTokens::Drop) => dropped_tokens += 1,
                (None, UnknownTokens::Fail) => {
                    return Err(Error::parse(path, r.line, format!("unknown token '{tok}'")))
                }
            }
        }
        snippets.push(Snippet {
            id: r.id.to_string(),
            time,
            genre,
            words,
        });
    }

    let mut capped = 0;
    if let Some((cap, seed)) = options.cap_per_block {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = genres.labels.len();
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); time_labels.len() * g.max(1)];
        for (d, s) in snippets.iter().enumerate() {
            blocks[s.time * g + s.genre].push(d);
        }
        let mut keep = vec![false; snippets.len()];
        for block in &mut blocks {
            block.shuffle(&mut rng);
            for &d in block.iter().take(cap) {
                keep[d] = true;
            }
        }
        capped = keep.iter().filter(|k| !**k).count();
        let mut it = keep.into_iter();
        snippets.retain(|_| it.next().expect("one flag per snippet"));
    }

    let empty = snippets
        .iter()
        .filter(|s| s.words.is_empty())
        .map(|s| s.id.clone())
        .collect();
    let corpus = SnippetCorpus {
        snippets,
        v: vocab.labels.len(),
        t: time_labels.len(),
        g: genres.labels.len(),
        vocab: vocab.labels,
        time_labels,
        genre_labels: genres.labels,
    };
    corpus.validate()?;
    Ok(LoadReport {
        corpus,
        dropped_tokens,
        empty,
        capped,
    })
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut out = header("truth");
    for (id, &z) in &truth.labels {
        let _ = writeln!(out, "{id}\t{}", z + 1);
    }
    write_text(path, &out)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let text = read_text(path)?;
    let mut truth = GroundTruth::default();
    for (line, fields) in table_lines(path, &text, "truth")? {
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 'id<TAB>sense', got {} fields", fields.len()),
            ));
        }
        let sense: usize = fields[1]
            .trim()
            .parse()
            .ok()
            .filter(|&s| s >= 1)
            .ok_or_else(|| {
                Error::parse(
                    path,
                    line,
                    format!("sense must be a positive integer, got '{}'", fields[1]),
                )
            })?;
        if truth
            .labels
            .insert(fields[0].trim().to_string(), sense - 1)
            .is_some()
        {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate id '{}'", fields[0]),
            ));
        }
    }
    Ok(truth)
}

pub fn write_predictions(path: &Path, predictions: &Predictions) -> Result<()> {
    let mut out = header("predictions");
    for (id, row) in predictions.ids.iter().zip(predictions.probs.rows()) {
        let probs: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
        let _ = writeln!(out, "{id}\t{}", probs.join("\t"));
    }
    write_text(path, &out)
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = read_text(path)?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut k = None;
    for (line, fields) in table_lines(path, &text, "predictions")? {
        let row = fields[1..]
            .iter()
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("bad probability '{x}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        match k {
            None => k = Some(row.len()),
            Some(k) if k != row.len() => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {k} probabilities, got {}", row.len()),
                ));
            }
            _ => {}
        }
        let total: f64 = row.iter().sum();
        if row.is_empty() || (total - 1.0).abs() > 1e-4 {
            return Err(Error::parse(
                path,
                line,
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        ids.push(fields[0].trim().to_string());
        values.extend(row.iter().map(|p| p / total));
    }
    let k = k.ok_or_else(|| Error::parse(path, 1, "no predictions"))?;
    let probs = Array2::from_shape_vec((ids.len(), k), values).expect("rows checked");
    Predictions::new(ids, probs)
}

/// Writes the generating parameters: one row per entry of `φ`, and of `ψ`
/// (GASC) or `θ` and `χ` (DiSC), with the corresponding probabilities.
pub fn write_params(path: &Path, state: &LatentState, spec: &ModelSpec) -> Result<()> {
    let probs = derive_probability_arrays(state, spec)?;
    let Dims { k, v, t, g } = spec.dims;
    let mut out = header("params");
    let _ = writeln!(out, "# family={}", spec.family().name());
    out.push_str("array\tt\tg\tk\tv\tvalue\tprobability\n");
    for ti in 0..t {
        for gi in 0..g {
            for ki in 0..k {
                let _ = writeln!(
                    out,
                    "phi\t{}\t{}\t{}\t-\t{}\t{}",
                    ti + 1,
                    gi + 1,
                    ki + 1,
                    state.phi[[ti, gi, ki]],
                    probs.phi[[ti, gi, ki]]
                );
            }
        }
    }
    let psi = state.psi();
    for ti in 0..t {
        for ki in 0..k {
            for vi in 0..v {
                let _ = writeln!(
                    out,
                    "psi\t{}\t-\t{}\t{}\t{}\t{}",
                    ti + 1,
                    ki + 1,
                    vi + 1,
                    psi[[ti, ki, vi]],
                    probs.psi[[ti, ki, vi]]
                );
            }
        }
    }
    if let crate::model::WordParams::Gasc { kappa_phi, .. } = state.words {
        let _ = writeln!(out, "kappa_phi\t-\t-\t-\t-\t{kappa_phi}\t-");
    }
    write_text(path, &out)
}

/// Paths written by [`write_sim_output`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimPaths {
    pub snippets: PathBuf,
    pub truth: PathBuf,
    pub vocab: PathBuf,
    pub params: PathBuf,
    pub state: PathBuf,
}

/// Writes a simulated corpus, its truth, vocabulary and parameters into `dir`.
pub fn write_sim_output(dir: &Path, sim: &SimOutput, spec: &ModelSpec) -> Result<SimPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SimPaths {
        snippets: dir.join("snippets.tsv"),
        truth: dir.join("truth.tsv"),
        vocab: dir.join("vocab.txt"),
        params: dir.join("params.tsv"),
        state: dir.join("params.bin"),
    };
    write_corpus(&paths.snippets, &sim.corpus)?;
    write_truth(&paths.truth, &sim.truth)?;
    write_vocab(&paths.vocab, &sim.corpus.vocab)?;
    write_params(&paths.params, &sim.true_state, spec)?;
    write_state(&paths.state, &sim.true_state, spec)?;
    Ok(paths)
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl In<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(
                self.path,
                0,
                format!("sample store truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x)
            .map_err(|_| Error::parse(self.path, 0, format!("value {x} does not fit in memory")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn encode_spec(out: &mut Out, spec: &ModelSpec) {
    out.u8(match spec.family() {
        Family::Disc => 0,
        Family::Gasc => 1,
    });
    let Dims { k, v, t, g } = spec.dims;
    for d in [k, v, t, g] {
        out.u64(d as u64);
    }
    let hyper = match spec.hyper {
        Hyperparams::Disc {
            kappa_phi,
            kappa_theta,
            kappa_chi,
            alpha_phi,
            alpha_theta,
        } => [kappa_phi, kappa_theta, kappa_chi, alpha_phi, alpha_theta],
        Hyperparams::Gasc { kappa_psi, a, b } => [kappa_psi, a, b, 0.0, 0.0],
    };
    for h in hyper {
        out.f64(h);
    }
}

fn decode_spec(inp: &mut In) -> Result<ModelSpec> {
    let family = inp.u8()?;
    let dims = Dims {
        k: inp.usize()?,
        v: inp.usize()?,
        t: inp.usize()?,
        g: inp.usize()?,
    };
    let mut h = [0.0; 5];
    for x in &mut h {
        *x = inp.f64()?;
    }
    let hyper = match family {
        0 => Hyperparams::Disc {
            kappa_phi: h[0],
            kappa_theta: h[1],
            kappa_chi: h[2],
            alpha_phi: h[3],
            alpha_theta: h[4],
        },
        1 => Hyperparams::Gasc {
            kappa_psi: h[0],
            a: h[1],
            b: h[2],
        },
        x => {
            return Err(Error::parse(
                inp.path,
                0,
                format!("unknown family code {x}"),
            ))
        }
    };
    ModelSpec::new(dims, hyper)
}

fn encode(chain: &ChainOutput) -> Vec<u8> {
    let mut out = Out(Vec::with_capacity(256 + chain.draws.len() * 8));
    out.0.extend_from_slice(STORE_MAGIC);
    out.u32(FORMAT_VERSION);
    encode_spec(&mut out, &chain.spec);
    let c = &chain.config;
    out.u8(SamplerKind::ALL
        .iter()
        .position(|&k| k == c.sampler)
        .expect("listed") as u8);
    for x in [
        c.iterations,
        c.burn_in,
        c.thin,
        c.leapfrog_steps,
        c.mixed.phi_long,
        c.mixed.word_long,
    ] {
        out.u64(x as u64);
    }
    out.u64(c.seed);
    out.u64(c.stream);
    out.u64(c.kappa_update_period as u64);
    out.f64(c.mixed.p_long);
    out.u64(chain.non_finite);
    out.u64(chain.degenerate_updates);
    out.f64(chain.burn_in_seconds);
    out.f64(chain.sampling_seconds);
    out.u64(chain.draws.nrows() as u64);
    out.u64(chain.draws.ncols() as u64);
    for &x in chain.draws.iter() {
        out.f64(x);
    }
    out.0
}

fn decode(path: &Path, buf: &[u8]) -> Result<ChainOutput> {
    let mut inp = In { buf, pos: 0, path };
    if inp.take(4)? != STORE_MAGIC {
        return Err(Error::parse(path, 0, "not a sample store (bad magic)"));
    }
    let version = inp.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            0,
            format!("unsupported sample store version {version}"),
        ));
    }
    let spec = decode_spec(&mut inp)?;
    let sampler = *SamplerKind::ALL
        .get(inp.u8()? as usize)
        .ok_or_else(|| Error::parse(path, 0, "unknown sampler code"))?;
    let iterations = inp.usize()?;
    let burn_in = inp.usize()?;
    let thin = inp.usize()?;
    let leapfrog_steps = inp.usize()?;
    let phi_long = inp.usize()?;
    let word_long = inp.usize()?;
    let seed = inp.u64()?;
    let stream = inp.u64()?;
    let kappa_update_period = inp.usize()?;
    let p_long = inp.f64()?;
    let config = ChainConfig {
        sampler,
        iterations,
        burn_in,
        thin,
        leapfrog_steps,
        mixed: MixedSchedule {
            p_long,
            phi_long,
            word_long,
        },
        seed,
        stream,
        kappa_update_period,
    };
    let non_finite = inp.u64()?;
    let degenerate_updates = inp.u64()?;
    let burn_in_seconds = inp.f64()?;
    let sampling_seconds = inp.f64()?;
    let n = inp.usize()?;
    let row_len = inp.usize()?;
    if row_len != LatentState::row_len(&spec) {
        return Err(Error::parse(
            path,
            0,
            format!("row length {row_len} does not match the model"),
        ));
    }
    let body = inp.take(n.saturating_mul(row_len).saturating_mul(8))?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if inp.pos != buf.len() {
        return Err(Error::parse(path, 0, "trailing bytes after the draws"));
    }
    Ok(ChainOutput {
        spec,
        config,
        draws: Array2::from_shape_vec((n, row_len), values).expect("length checked"),
        blocks: Vec::new(),
        non_finite,
        degenerate_updates,
        burn_in_seconds,
        sampling_seconds,
    })
}

/// Writes a chain to the binary sample store.
pub fn write_store(path: &Path, chain: &ChainOutput) -> Result<()> {
    std::fs::write(path, encode(chain)).map_err(|e| Error::io(path, e))
}

/// Reads a chain from the binary sample store. Block reports are not stored.
pub fn read_store(path: &Path) -> Result<ChainOutput> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &buf)
}

/// Stores a single state as a one-draw chain.
pub fn write_state(path: &Path, state: &LatentState, spec: &ModelSpec) -> Result<()> {
    state.check(spec)?;
    let row: Vec<f64> = state.values().collect();
    let chain = ChainOutput {
        spec: spec.clone(),
        config: ChainConfig {
            iterations: 1,
            burn_in: 0,
            ..ChainConfig::for_family(spec.family(), SamplerKind::MixedMalaHmc)
        },
        draws: Array2::from_shape_vec((1, row.len()), row).expect("one row"),
        blocks: Vec::new(),
        non_finite: 0,
        degenerate_updates: 0,
        burn_in_seconds: 0.0,
        sampling_seconds: 0.0,
    };
    write_store(path, &chain)
}

pub fn read_state(path: &Path) -> Result<(LatentState, ModelSpec)> {
    let chain = read_store(path)?;
    if chain.n_draws() != 1 {
        return Err(Error::Validation(format!(
            "{} holds {} draws, expected one state",
            path.display(),
            chain.n_draws()
        )));
    }
    Ok((chain.state(0), chain.spec))
}

/// Writes the per-`(t, g, k)` prevalence table.
pub fn write_prevalence(path: &Path, rows: &[PrevalenceRow], corpus: &SnippetCorpus) -> Result<()> {
    let mut out = header("prevalence");
    out.push_str("time\tgenre\tsense\tempirical\tmean\thpd_lower\thpd_upper\n");
    for r in rows {
        let emp = r
            .empirical
            .map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{emp}\t{:.6}\t{:.6}\t{:.6}",
            corpus
                .time_labels
                .get(r.t)
                .cloned()
                .unwrap_or_else(|| (r.t + 1).to_string()),
            corpus
                .genre_labels
                .get(r.g)
                .cloned()
                .unwrap_or_else(|| (r.g + 1).to_string()),
            r.k + 1,
            r.mean,
            r.hpd.lower,
            r.hpd.upper
        );
    }
    write_text(path, &out)
}

/// Ordered `key: value` lines of a summary file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = header("summary");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut summary = Summary::default();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == header("summary").trim_end() => {}
            _ => return Err(Error::parse(path, 1, "missing summary header")),
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(": ").ok_or_else(|| {
                Error::parse(path, i + 1, format!("expected 'key: value', got '{line}'"))
            })?;
            summary.push(k, v);
        }
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_tables;
    use crate::simulate::{simulate, SimConfig};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_a_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.tsv",
            "# disc-snippets v1\na\t1850\tnews\triver water river\nb\t1830\tfiction\tmoney\n",
        );
        let r = load_corpus(&p, &LoadOptions::default()).unwrap();
        let c = &r.corpus;
        assert_eq!((c.len(), c.v, c.t, c.g), (2, 3, 2, 2));
        assert_eq!(c.time_labels, vec!["1830", "1850"]);
        assert_eq!(c.snippets[0].time, 1);
        assert_eq!(c.snippets[0].genre, 0);
        assert_eq!(c.snippets[0].words, vec![0, 1, 0]);
        assert_eq!(c.snippets[1].words, vec![2]);
    }

    #[test]
    fn rejects_duplicates_bad_headers_and_unknown_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "d.tsv",
            "# disc-snippets v1\na\t1\tg\tx\na\t1\tg\ty\n",
        );
        match load_corpus(&dup, &LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad = write(dir.path(), "b.tsv", "a\t1\tg\tx\n");
        assert!(load_corpus(&bad, &LoadOptions::default()).is_err());
        let ok = write(dir.path(), "o.tsv", "# disc-snippets v1\na\t1\tg\tx z\n");
        let mut opts = LoadOptions {
            vocab: Some(vec!["x".into()]),
            ..Default::default()
        };
        assert!(load_corpus(&ok, &opts).is_err());
        opts.unknown = UnknownTokens::Drop;
        let r = load_corpus(&ok, &opts).unwrap();
        assert_eq!(r.dropped_tokens, 1);
        assert_eq!(r.corpus.snippets[0].words, vec![0]);
    }

    #[test]
    fn time_binning_by_edges_and_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.tsv",
            "# disc-snippets v1\na\t-650\tg\tx\nb\t-420\tg\tx\nc\t150\tg\tx\n",
        );
        let opts = LoadOptions {
            time: TimeBinning::parse("-700,-600,-500,-400,200").unwrap(),
            ..Default::default()
        };
        let c = load_corpus(&p, &opts).unwrap().corpus;
        assert_eq!(c.t, 4);
        assert_eq!(
            c.snippets.iter().map(|s| s.time).collect::<Vec<_>>(),
            vec![0, 2, 3]
        );
        let bad = LoadOptions {
            time: TimeBinning::Edges(vec![0.0, -1.0]),
            ..Default::default()
        };
        assert!(load_corpus(&p, &bad).is_err());
        let gap = LoadOptions {
            time: TimeBinning::parse("-650=1,-420=3,150=3").unwrap(),
            ..Default::default()
        };
        assert!(matches!(load_corpus(&p, &gap), Err(Error::Validation(_))));
        let map = LoadOptions {
            time: TimeBinning::parse("-650=1,-420=2,150=2").unwrap(),
            ..Default::default()
        };
        let c = load_corpus(&p, &map).unwrap().corpus;
        assert_eq!(
            c.snippets.iter().map(|s| s.time).collect::<Vec<_>>(),
            vec![0, 1, 1]
        );
    }

    #[test]
    fn cap_limits_each_block() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = header("snippets");
        for i in 0..30 {
            let _ = writeln!(text, "s{i}\t{}\tg\tx", i % 2);
        }
        let p = write(dir.path(), "s.tsv", &text);
        let r = load_corpus(
            &p,
            &LoadOptions {
                cap_per_block: Some((10, 1)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.corpus.len(), 20);
        assert_eq!(r.capped, 10);
    }

    #[test]
    fn simulated_output_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(
            Dims {
                k: 3,
                v: 15,
                t: 3,
                g: 2,
            },
            Hyperparams::disc_default(),
        )
        .unwrap();
        let sim = simulate(&SimConfig::new(spec.clone(), 20, 3)).unwrap();
        let paths = write_sim_output(dir.path(), &sim, &spec).unwrap();
        let opts = LoadOptions {
            vocab: Some(read_vocab(&paths.vocab).unwrap()),
            genres: Some(sim.corpus.genre_labels.clone()),
            ..Default::default()
        };
        let loaded = load_corpus(&paths.snippets, &opts).unwrap().corpus;
        assert_eq!(loaded, sim.corpus);
        let truth = read_truth(&paths.truth).unwrap();
        assert_eq!(truth, sim.truth);
        let a = count_tables(&sim.corpus, &sim.truth.aligned(&sim.corpus), 3).unwrap();
        let b = count_tables(&loaded, &truth.aligned(&loaded), 3).unwrap();
        assert_eq!(a, b);
        let (state, spec2) = read_state(&paths.state).unwrap();
        assert_eq!(state, sim.true_state);
        assert_eq!(spec2, spec);
    }

    #[test]
    fn store_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(
            Dims {
                k: 2,
                v: 4,
                t: 2,
                g: 1,
            },
            Hyperparams::gasc_default(),
        )
        .unwrap();
        let draws = Array2::from_shape_fn((3, LatentState::row_len(&spec)), |(i, j)| {
            (i * 100 + j) as f64 * 0.1 + 0.5
        });
        let chain = ChainOutput {
            spec,
            config: ChainConfig {
                seed: 9,
                stream: 2,
                ..ChainConfig::for_family(Family::Gasc, SamplerKind::PolyaGamma)
            },
            draws,
            blocks: Vec::new(),
            non_finite: 1,
            degenerate_updates: 2,
            burn_in_seconds: 1.5,
            sampling_seconds: 2.5,
        };
        let p = dir.path().join("c.bin");
        write_store(&p, &chain).unwrap();
        let back = read_store(&p).unwrap();
        assert_eq!(back.draws, chain.draws);
        assert_eq!(back.config, chain.config);
        assert_eq!(back.spec, chain.spec);
        assert_eq!((back.non_finite, back.degenerate_updates), (1, 2));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_store(&p).is_err());
    }

    #[test]
    fn predictions_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Predictions::new(
            vec!["a".into(), "b".into()],
            ndarray::array![[0.25, 0.75], [1.0, 0.0]],
        )
        .unwrap();
        let path = dir.path().join("p.tsv");
        write_predictions(&path, &p).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), p);
        let mut s = Summary::default();
        s.push("brier", "0.5");
        s.push("note", "a: b");
        let path = dir.path().join("s.txt");
        s.write(&path).unwrap();
        assert_eq!(Summary::read(&path).unwrap(), s);
    }
}
