//! Snippet corpora, ground-truth labels and sufficient-statistic tables.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array3;

use crate::error::{Error, Result};

/// One bag of context words around an occurrence of the target word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub id: String,
    /// Time period, `0..T`.
    pub time: usize,
    /// Genre, `0..G`.
    pub genre: usize,
    /// Context-word ids in `0..V`. Order carries no meaning.
    pub words: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnippetCorpus {
    pub snippets: Vec<Snippet>,
    pub v: usize,
    pub t: usize,
    pub g: usize,
    /// Surface form of each word id.
    pub vocab: Vec<String>,
    /// Surface labels of the time periods, in order.
    pub time_labels: Vec<String>,
    /// Surface labels of the genres, in order.
    pub genre_labels: Vec<String>,
}

impl SnippetCorpus {
    /// Builds a corpus with generated labels (`w1..`, `1..`) and validates it.
    pub fn new(snippets: Vec<Snippet>, v: usize, t: usize, g: usize) -> Result<Self> {
        let corpus = SnippetCorpus {
            snippets,
            v,
            t,
            g,
            vocab: (1..=v).map(|i| format!("w{i}")).collect(),
            time_labels: (1..=t).map(|i| i.to_string()).collect(),
            genre_labels: (1..=g).map(|i| i.to_string()).collect(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Checks index ranges, id uniqueness and label-table sizes.
    pub fn validate(&self) -> Result<()> {
        if self.vocab.len() != self.v {
            return Err(Error::Validation(format!(
                "vocabulary table has {} entries but V = {}",
                self.vocab.len(),
                self.v
            )));
        }
        let mut seen = HashSet::with_capacity(self.snippets.len());
        for s in &self.snippets {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate snippet id '{}'",
                    s.id
                )));
            }
            if s.time >= self.t {
                return Err(Error::Validation(format!(
                    "snippet '{}': time {} out of range 0..{}",
                    s.id, s.time, self.t
                )));
            }
            if s.genre >= self.g {
                return Err(Error::Validation(format!(
                    "snippet '{}': genre {} out of range 0..{}",
                    s.id, s.genre, self.g
                )));
            }
            if let Some(w) = s.words.iter().find(|&&w| w as usize >= self.v) {
                return Err(Error::Validation(format!(
                    "snippet '{}': word id {w} out of range 0..{}",
                    s.id, self.v
                )));
            }
        }
        Ok(())
    }

    /// Total number of context-word tokens.
    pub fn token_count(&self) -> usize {
        self.snippets.iter().map(|s| s.words.len()).sum()
    }

    /// Corpus-wide frequency of each word id.
    pub fn word_frequencies(&self) -> Vec<usize> {
        let mut f = vec![0; self.v];
        for s in &self.snippets {
            for &w in &s.words {
                f[w as usize] += 1;
            }
        }
        f
    }
}

/// Expert sense labels, keyed by snippet id. Senses are zero-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn from_labels(corpus: &SnippetCorpus, labels: &[usize]) -> Self {
        GroundTruth {
            labels: corpus
                .snippets
                .iter()
                .map(|s| s.id.clone())
                .zip(labels.iter().copied())
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    /// Labels aligned with the corpus order; `None` where unlabelled.
    pub fn aligned(&self, corpus: &SnippetCorpus) -> Vec<Option<usize>> {
        corpus.snippets.iter().map(|s| self.get(&s.id)).collect()
    }

    /// Labels aligned with the corpus order; every snippet must be labelled.
    pub fn complete(&self, corpus: &SnippetCorpus) -> Result<Vec<usize>> {
        corpus
            .snippets
            .iter()
            .map(|s| {
                self.get(&s.id)
                    .ok_or_else(|| Error::MissingLabel(s.id.clone()))
            })
            .collect()
    }

    /// Checks labels are below `k` and every id resolves in the corpus.
    pub fn validate(&self, corpus: &SnippetCorpus, k: usize) -> Result<()> {
        let ids: HashSet<&str> = corpus.snippets.iter().map(|s| s.id.as_str()).collect();
        for (id, &label) in &self.labels {
            if label >= k {
                return Err(Error::Validation(format!(
                    "snippet '{id}': sense {} exceeds K = {k}",
                    label + 1
                )));
            }
            if !ids.contains(id.as_str()) {
                return Err(Error::Validation(format!(
                    "truth id '{id}' is not in the corpus"
                )));
            }
        }
        Ok(())
    }
}

/// Sufficient statistics for a labelled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    /// `(T, G, K)` snippets per time, genre and sense.
    pub n_z: Array3<u32>,
    /// `(T, K, V)` context-word occurrences per time, sense and word.
    pub n_wz: Array3<u32>,
}

impl CountTables {
    /// Total context words at `(t, k)`.
    pub fn tokens(&self, t: usize, k: usize) -> u64 {
        self.n_wz
            .slice(ndarray::s![t, k, ..])
            .iter()
            .map(|&c| c as u64)
            .sum()
    }
}

/// Counts snippets and context words by assigned sense.
pub fn count_tables(
    corpus: &SnippetCorpus,
    labels: &[Option<usize>],
    k: usize,
) -> Result<CountTables> {
    if labels.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} snippets",
            labels.len(),
            corpus.len()
        )));
    }
    let mut n_z = Array3::zeros((corpus.t, corpus.g, k));
    let mut n_wz = Array3::zeros((corpus.t, k, corpus.v));
    for (s, label) in corpus.snippets.iter().zip(labels) {
        let z = label.ok_or_else(|| Error::MissingLabel(s.id.clone()))?;
        if z >= k {
            return Err(Error::InvalidArgument(format!(
                "label {z} out of range for K = {k}"
            )));
        }
        n_z[[s.time, s.genre, z]] += 1;
        for &w in &s.words {
            n_wz[[s.time, z, w as usize]] += 1;
        }
    }
    Ok(CountTables { n_z, n_wz })
}

/// A snippet reduced to distinct word ids with multiplicities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub words: Vec<u32>,
    pub counts: Vec<u32>,
    pub len: u32,
}

impl Bag {
    pub fn from_words(words: &[u32]) -> Self {
        let mut sorted = words.to_vec();
        sorted.sort_unstable();
        let mut bag = Bag {
            words: Vec::new(),
            counts: Vec::new(),
            len: words.len() as u32,
        };
        for w in sorted {
            if bag.words.last() == Some(&w) {
                *bag.counts.last_mut().expect("nonempty") += 1;
            } else {
                bag.words.push(w);
                bag.counts.push(1);
            }
        }
        bag
    }

    /// `Σ_i x[w_i]`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.words
            .iter()
            .zip(&self.counts)
            .map(|(&w, &c)| c as f64 * x[w as usize])
            .sum()
    }
}

/// Corpus in the form the likelihood and samplers work on: bags plus index
/// lists per `(t, g)` block and per time period.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub bags: Vec<Bag>,
    pub time: Vec<usize>,
    pub genre: Vec<usize>,
    pub v: usize,
    pub t: usize,
    pub g: usize,
    by_block: Vec<Vec<usize>>,
    by_time: Vec<Vec<usize>>,
}

impl PreparedCorpus {
    pub fn new(corpus: &SnippetCorpus) -> Self {
        let mut by_block = vec![Vec::new(); corpus.t * corpus.g];
        let mut by_time = vec![Vec::new(); corpus.t];
        for (d, s) in corpus.snippets.iter().enumerate() {
            by_block[s.time * corpus.g + s.genre].push(d);
            by_time[s.time].push(d);
        }
        PreparedCorpus {
            bags: corpus
                .snippets
                .iter()
                .map(|s| Bag::from_words(&s.words))
                .collect(),
            time: corpus.snippets.iter().map(|s| s.time).collect(),
            genre: corpus.snippets.iter().map(|s| s.genre).collect(),
            v: corpus.v,
            t: corpus.t,
            g: corpus.g,
            by_block,
            by_time,
        }
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Snippets with time `t` and genre `g`.
    pub fn block(&self, t: usize, g: usize) -> &[usize] {
        &self.by_block[t * self.g + g]
    }

    /// Snippets with time `t`, any genre.
    pub fn at_time(&self, t: usize) -> &[usize] {
        &self.by_time[t]
    }
}

/// Maps arbitrary labels to contiguous indices in first-seen order.
#[derive(Debug, Default, Clone)]
pub(crate) struct Interner {
    pub index: HashMap<String, usize>,
    pub labels: Vec<String>,
}

impl Interner {
    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Interner { index, labels }
    }

    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), i);
        i
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snip(id: &str, time: usize, genre: usize, words: &[u32]) -> Snippet {
        Snippet {
            id: id.into(),
            time,
            genre,
            words: words.to_vec(),
        }
    }

    #[test]
    fn empty_corpus_gives_zero_tables() {
        let corpus = SnippetCorpus::new(vec![], 4, 2, 1).unwrap();
        let c = count_tables(&corpus, &[], 3).unwrap();
        assert!(c.n_z.iter().all(|&x| x == 0) && c.n_wz.iter().all(|&x| x == 0));
    }

    #[test]
    fn single_snippet_counts() {
        let corpus = SnippetCorpus::new(vec![snip("a", 1, 0, &[2, 0, 2])], 4, 2, 1).unwrap();
        let c = count_tables(&corpus, &[Some(1)], 3).unwrap();
        assert_eq!(c.n_z[[1, 0, 1]], 1);
        assert_eq!(c.n_z.iter().map(|&x| x as usize).sum::<usize>(), 1);
        assert_eq!(c.n_wz[[1, 1, 2]], 2);
        assert_eq!(c.n_wz[[1, 1, 0]], 1);
        assert_eq!(c.tokens(1, 1), 3);
    }

    #[test]
    fn missing_label_is_an_error() {
        let corpus = SnippetCorpus::new(vec![snip("a", 0, 0, &[1])], 4, 1, 1).unwrap();
        assert!(matches!(
            count_tables(&corpus, &[None], 2),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_indices_and_duplicates() {
        assert!(SnippetCorpus::new(vec![snip("a", 0, 0, &[9])], 4, 1, 1).is_err());
        assert!(SnippetCorpus::new(vec![snip("a", 2, 0, &[1])], 4, 1, 1).is_err());
        assert!(
            SnippetCorpus::new(vec![snip("a", 0, 0, &[1]), snip("a", 0, 0, &[2])], 4, 1, 1)
                .is_err()
        );
    }

    #[test]
    fn bags_collapse_repeats() {
        let b = Bag::from_words(&[3, 1, 3, 3]);
        assert_eq!(b.words, vec![1, 3]);
        assert_eq!(b.counts, vec![1, 3]);
        assert_eq!(b.len, 4);
        assert_eq!(b.dot(&[0.0, 2.0, 0.0, 1.0]), 5.0);
    }
}
