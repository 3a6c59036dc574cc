//! Add-k smoothed bigram reference model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
const BOS: &str = "<s>";
pub const REFMODEL_FORMAT: &str = "qsalign-reference-model";
pub const REFMODEL_VERSION: u32 = 1;

/// P(w | h) = (c(h, w) + k) / (c(h) + k·V) over a vocabulary of the corpus
/// tokens plus `<unk>`; the history of the first token is `<s>`. Unknown
/// tokens are read as `<unk>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    k: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// Histories are vocabulary indices, with `<s>` at index `vocab.len()`.
    bigrams: HashMap<(u32, u32), u64>,
    history_totals: HashMap<u32, u64>,
}

#[derive(Serialize, Deserialize)]
struct RefModelFile {
    format: String,
    version: u32,
    k: f64,
    vocab: Vec<String>,
    /// `[history, next, count]`, sorted.
    bigrams: Vec<[u64; 3]>,
}

impl ReferenceModel {
    /// Fit on whitespace-tokenised suggestion texts.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>, k: f64) -> Result<Self> {
        if !(k >= 0.0) {
            return Err(Error::invalid("smoothing constant k must be >= 0"));
        }
        let sentences: Vec<Vec<&str>> = corpus
            .into_iter()
            .map(|s| s.split_whitespace().collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::invalid("reference model corpus is empty"));
        }
        let mut words: Vec<String> = sentences.iter().flatten().map(|w| w.to_string()).collect();
        words.push(UNK.to_string());
        words.sort();
        words.dedup();
        let index: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let bos = words.len() as u32;
        let mut bigrams = HashMap::new();
        for s in &sentences {
            let mut h = bos;
            for w in s {
                let wi = index[*w];
                *bigrams.entry((h, wi)).or_insert(0) += 1;
                h = wi;
            }
        }
        Ok(Self::from_parts(k, words, bigrams))
    }

    fn from_parts(k: f64, vocab: Vec<String>, bigrams: HashMap<(u32, u32), u64>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut history_totals = HashMap::new();
        for (&(h, _), &c) in &bigrams {
            *history_totals.entry(h).or_insert(0) += c;
        }
        Self { k, vocab, index, bigrams, history_totals }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn id(&self, w: &str) -> u32 {
        self.index.get(w).copied().unwrap_or_else(|| self.index[UNK])
    }

    fn bos(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn cond_prob_ids(&self, h: u32, w: u32) -> f64 {
        let c = self.bigrams.get(&(h, w)).copied().unwrap_or(0) as f64;
        let t = self.history_totals.get(&h).copied().unwrap_or(0) as f64;
        let v = self.vocab.len() as f64;
        let denom = t + self.k * v;
        if denom == 0.0 {
            return 1.0 / v;
        }
        (c + self.k) / denom
    }

    /// P(next | prev); `prev = None` is the sentence start.
    pub fn cond_prob(&self, prev: Option<&str>, next: &str) -> f64 {
        let h = prev.map_or(self.bos(), |p| self.id(p));
        self.cond_prob_ids(h, self.id(next))
    }

    /// Sum over the vocabulary of P(· | prev); 1 up to rounding.
    pub fn row_sum(&self, prev: Option<&str>) -> f64 {
        let h = prev.map_or(self.bos(), |p| self.id(p));
        (0..self.vocab.len() as u32).map(|w| self.cond_prob_ids(h, w)).sum()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Mean per-token log-probability of a whitespace-tokenised text.
    pub fn mean_logprob(&self, text: &str) -> Result<f64> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.is_empty() {
            return Err(Error::invalid("log-probability of an empty suggestion"));
        }
        let mut h = self.bos();
        let mut total = 0.0;
        for t in &toks {
            let w = self.id(t);
            total += self.cond_prob_ids(h, w).ln();
            h = w;
        }
        Ok(total / toks.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<[u64; 3]> = self
            .bigrams
            .iter()
            .map(|(&(h, w), &c)| [u64::from(h), u64::from(w), c])
            .collect();
        rows.sort_unstable();
        let file = RefModelFile {
            format: REFMODEL_FORMAT.into(),
            version: REFMODEL_VERSION,
            k: self.k,
            vocab: self.vocab.clone(),
            bigrams: rows,
        };
        let s = serde_json::to_string(&file)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: RefModelFile = serde_json::from_str(&s)?;
        if f.format != REFMODEL_FORMAT || f.version != REFMODEL_VERSION {
            return Err(Error::data(format!("unsupported reference model {} v{}", f.format, f.version)));
        }
        let n = f.vocab.len() as u64;
        let mut bigrams = HashMap::new();
        for [h, w, c] in f.bigrams {
            if h > n || w >= n {
                return Err(Error::data("reference model bigram index out of range"));
            }
            bigrams.insert((h as u32, w as u32), c);
        }
        Ok(Self::from_parts(f.k, f.vocab, bigrams))
    }

    /// Counts keyed by (history, next) word, for inspection.
    pub fn counts(&self) -> BTreeMap<(String, String), u64> {
        let name = |i: u32| self.vocab.get(i as usize).cloned().unwrap_or_else(|| BOS.to_string());
        self.bigrams.iter().map(|(&(h, w), &c)| ((name(h), name(w)), c)).collect()
    }
}
