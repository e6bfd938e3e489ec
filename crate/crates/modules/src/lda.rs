//! Topic model over documents of whole-word tokens, fitted by collapsed Gibbs
//! sampling with an optional per-document external class factor.
//!
//! Two assignment granularities are available: the usual one topic per token,
//! and one topic per document (a mixture of unigrams).

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use multicat_core::rng::derive_seed;
use multicat_core::{Categorical, Payload};

use crate::error::{ModuleError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicGranularity {
    #[default]
    Token,
    Document,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaHyper {
    pub alpha: f64,
    pub beta: f64,
    pub granularity: TopicGranularity,
}

impl Default for LdaHyper {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            granularity: TopicGranularity::Token,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaState {
    pub classes: usize,
    pub hyper: LdaHyper,
    /// Grows as new words appear and is never shrunk.
    pub vocab: IndexSet<String>,
    /// `topic_word[k][w]`; rows are padded as the vocabulary grows.
    pub topic_word: Vec<Vec<u32>>,
    pub topic_total: Vec<u32>,
    /// Token counts per (document, topic).
    pub doc_topic: Vec<Vec<u32>>,
    /// Word ids per document.
    pub tokens: Vec<Vec<usize>>,
    /// Topic per token (all equal within a document in document mode).
    pub topics: Vec<Vec<usize>>,
    /// Full conditional of each document's topic at the last sweep (document mode only).
    doc_conditional: Vec<Vec<f64>>,
    pub seed: u64,
}

impl LdaState {
    pub fn new(classes: usize, hyper: LdaHyper, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(ModuleError::Input("topic count must be positive".into()));
        }
        if !(hyper.alpha > 0.0 && hyper.beta > 0.0) {
            return Err(ModuleError::Input(format!(
                "alpha and beta must be positive (got {} and {})",
                hyper.alpha, hyper.beta
            )));
        }
        Ok(Self {
            classes,
            hyper,
            vocab: IndexSet::new(),
            topic_word: vec![Vec::new(); classes],
            topic_total: vec![0; classes],
            doc_topic: Vec::new(),
            tokens: Vec::new(),
            topics: Vec::new(),
            doc_conditional: Vec::new(),
            seed,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn intern(&mut self, word: &str) -> usize {
        let (id, _) = self.vocab.insert_full(word.to_owned());
        id
    }

    fn assign(&mut self, d: usize, t: usize, k: usize) {
        let w = self.tokens[d][t];
        self.topics[d][t] = k;
        self.topic_word[k][w] += 1;
        self.topic_total[k] += 1;
        self.doc_topic[d][k] += 1;
    }

    fn unassign(&mut self, d: usize, t: usize) {
        let w = self.tokens[d][t];
        let k = self.topics[d][t];
        self.topic_word[k][w] -= 1;
        self.topic_total[k] -= 1;
        self.doc_topic[d][k] -= 1;
    }

    /// Interns the documents' words and clears all counts.
    fn load(&mut self, docs: &[Vec<String>]) -> Result<()> {
        if docs.is_empty() {
            return Err(ModuleError::Input("no documents".into()));
        }
        if let Some(i) = docs.iter().position(Vec::is_empty) {
            return Err(ModuleError::Input(format!("document {i} is empty")));
        }
        self.tokens = docs
            .iter()
            .map(|doc| doc.iter().map(|w| self.intern(w)).collect())
            .collect::<Vec<_>>();
        let v = self.vocab.len();
        self.topic_word = vec![vec![0; v]; self.classes];
        self.topic_total = vec![0; self.classes];
        self.doc_topic = vec![vec![0; self.classes]; docs.len()];
        self.topics = self.tokens.iter().map(|t| vec![0; t.len()]).collect();
        self.doc_conditional = Vec::new();
        Ok(())
    }

    fn check_external(&self, external: Option<&[Categorical]>, n: usize) -> Result<()> {
        if let Some(ext) = external {
            if ext.len() != n {
                return Err(ModuleError::Dimension(format!(
                    "external message covers {} documents, expected {n}",
                    ext.len()
                )));
            }
            if let Some(c) = ext.iter().find(|c| c.len() != self.classes) {
                return Err(ModuleError::Dimension(format!(
                    "external message has {} classes, expected {}",
                    c.len(),
                    self.classes
                )));
            }
        }
        Ok(())
    }

    /// Clears all counts, draws random initial topics and runs `sweeps`
    /// collapsed Gibbs sweeps.
    pub fn fit(&mut self, docs: &[Vec<String>], external: Option<&[Categorical]>, sweeps: usize) -> Result<()> {
        self.check_external(external, docs.len())?;
        self.load(docs)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "lda/init"));
        for d in 0..self.tokens.len() {
            match self.hyper.granularity {
                TopicGranularity::Token => {
                    for t in 0..self.tokens[d].len() {
                        let k = init_rng.gen_range(0..self.classes);
                        self.assign(d, t, k);
                    }
                }
                TopicGranularity::Document => {
                    let k = init_rng.gen_range(0..self.classes);
                    for t in 0..self.tokens[d].len() {
                        self.assign(d, t, k);
                    }
                }
            }
        }
        // a uniform factor leaves every conditional unchanged; skipping it
        // keeps the trajectory bit-identical to the unbiased sampler
        let external: Option<Vec<Option<&Categorical>>> =
            external.map(|e| e.iter().map(|c| (!c.is_uniform()).then_some(c)).collect());
        let ext_for = |d: usize| external.as_ref().and_then(|e| e[d]);

        let mut docs_in = vec![0u32; self.classes];
        for tp in &self.topics {
            docs_in[tp[0]] += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "lda/sweep"));
        let mut weights = vec![0.0; self.classes];
        for _ in 0..sweeps {
            for d in 0..self.tokens.len() {
                match self.hyper.granularity {
                    TopicGranularity::Token => {
                        for t in 0..self.tokens[d].len() {
                            self.unassign(d, t);
                            self.token_weights(d, t, ext_for(d), &mut weights);
                            let k = draw(&weights, &mut rng);
                            self.assign(d, t, k);
                        }
                    }
                    TopicGranularity::Document => {
                        for t in 0..self.tokens[d].len() {
                            self.unassign(d, t);
                        }
                        docs_in[self.topics[d][0]] -= 1;
                        self.document_weights(d, ext_for(d), &docs_in, &mut weights);
                        let k = draw(&weights, &mut rng);
                        docs_in[k] += 1;
                        for t in 0..self.tokens[d].len() {
                            self.assign(d, t, k);
                        }
                    }
                }
            }
        }
        if self.hyper.granularity == TopicGranularity::Document {
            self.doc_conditional = (0..self.tokens.len())
                .map(|d| {
                    let k = self.topics[d][0];
                    for t in 0..self.tokens[d].len() {
                        self.unassign(d, t);
                    }
                    docs_in[k] -= 1;
                    let mut w = vec![0.0; self.classes];
                    self.document_weights(d, ext_for(d), &docs_in, &mut w);
                    docs_in[k] += 1;
                    for t in 0..self.tokens[d].len() {
                        self.assign(d, t, k);
                    }
                    let total: f64 = w.iter().sum();
                    w.iter().map(|x| x / total).collect()
                })
                .collect();
        }
        Ok(())
    }

    /// Unnormalized collapsed conditional of token `t` in document `d`,
    /// which must currently be unassigned.
    fn token_weights(&self, d: usize, t: usize, ext: Option<&Categorical>, out: &mut [f64]) {
        let w = self.tokens[d][t];
        let vb = self.vocab.len() as f64 * self.hyper.beta;
        for (k, o) in out.iter_mut().enumerate() {
            *o = (self.topic_word[k][w] as f64 + self.hyper.beta) / (self.topic_total[k] as f64 + vb)
                * (self.doc_topic[d][k] as f64 + self.hyper.alpha);
            if let Some(e) = ext {
                *o *= e.probs()[k];
            }
        }
    }

    /// Unnormalized conditional of the single topic of document `d`, whose
    /// tokens must currently be unassigned.
    /// `docs_in[k]` counts the other documents currently in topic `k`.
    fn document_weights(&self, d: usize, ext: Option<&Categorical>, docs_in: &[u32], out: &mut [f64]) {
        let beta = self.hyper.beta;
        let vb = self.vocab.len() as f64 * beta;
        let mut logs = vec![0.0; self.classes];
        for (k, l) in logs.iter_mut().enumerate() {
            *l = (docs_in[k] as f64 + self.hyper.alpha).ln();
            let mut seen: Vec<(usize, u32)> = Vec::new();
            for (j, &w) in self.tokens[d].iter().enumerate() {
                let prior = match seen.iter_mut().find(|(x, _)| *x == w) {
                    Some((_, c)) => {
                        *c += 1;
                        *c - 1
                    }
                    None => {
                        seen.push((w, 1));
                        0
                    }
                };
                *l += (self.topic_word[k][w] as f64 + prior as f64 + beta).ln()
                    - (self.topic_total[k] as f64 + j as f64 + vb).ln();
            }
            if let Some(e) = ext {
                *l += e.probs()[k].ln();
            }
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (o, l) in out.iter_mut().zip(&logs) {
            *o = (l - max).exp();
        }
    }

    /// Normalized collapsed conditional of one token with that token held out.
    pub fn token_conditional(&mut self, d: usize, t: usize, ext: Option<&Categorical>) -> Result<Vec<f64>> {
        if d >= self.tokens.len() {
            return Err(ModuleError::UnknownDocument(d));
        }
        if t >= self.tokens[d].len() {
            return Err(ModuleError::Input(format!("document {d} has no token {t}")));
        }
        let k = self.topics[d][t];
        self.unassign(d, t);
        let mut w = vec![0.0; self.classes];
        self.token_weights(d, t, ext, &mut w);
        self.assign(d, t, k);
        let total: f64 = w.iter().sum();
        Ok(w.iter().map(|x| x / total).collect())
    }

    pub fn num_docs(&self) -> usize {
        self.tokens.len()
    }

    /// `P(topic | document)`.
    pub fn doc_topic_posterior(&self, d: usize) -> Result<Categorical> {
        let counts = self.doc_topic.get(d).ok_or(ModuleError::UnknownDocument(d))?;
        if self.hyper.granularity == TopicGranularity::Document {
            if let Some(c) = self.doc_conditional.get(d) {
                return Ok(Categorical::new(c.clone())?);
            }
        }
        let len: u32 = counts.iter().sum();
        let denom = len as f64 + self.classes as f64 * self.hyper.alpha;
        Ok(Categorical::new(
            counts.iter().map(|c| (*c as f64 + self.hyper.alpha) / denom).collect(),
        )?)
    }

    /// `P(word | topic)` with symmetric smoothing; unseen words get the floor.
    pub fn word_given_topic(&self, word: &str, k: usize) -> f64 {
        let vb = self.vocab.len().max(1) as f64 * self.hyper.beta;
        let count = self
            .vocab
            .get_index_of(word)
            .map_or(0, |w| self.topic_word[k].get(w).copied().unwrap_or(0));
        (count as f64 + self.hyper.beta) / (self.topic_total[k] as f64 + vb)
    }

    /// `sum_k P(word | k) P(k | document)`.
    pub fn word_importance(&self, word: &str, d: usize) -> Result<f64> {
        let theta = self.doc_topic_posterior(d)?;
        Ok(theta
            .probs()
            .iter()
            .enumerate()
            .map(|(k, p)| self.word_given_topic(word, k) * p)
            .sum())
    }

    pub fn doc_posteriors(&self) -> Result<Payload> {
        Ok(Payload::CategoricalPerDatum(
            (0..self.num_docs()).map(|d| self.doc_topic_posterior(d)).collect::<Result<_>>()?,
        ))
    }

    /// The `n` most frequent words of each topic, most frequent first.
    pub fn top_words(&self, n: usize) -> Vec<Vec<(String, u32)>> {
        self.topic_word
            .iter()
            .map(|row| {
                let mut ids: Vec<usize> = (0..row.len()).filter(|w| row[*w] > 0).collect();
                ids.sort_by(|a, b| row[*b].cmp(&row[*a]).then(a.cmp(b)));
                ids.into_iter()
                    .take(n)
                    .map(|w| (self.vocab[w].clone(), row[w]))
                    .collect()
            })
            .collect()
    }

    pub fn checkpoint(&self) -> LdaCheckpoint {
        LdaCheckpoint {
            classes: self.classes,
            seed: self.seed,
            hyper: self.hyper.clone(),
            vocab: self.vocab.iter().cloned().collect(),
            topic_word: self.topic_word.clone(),
            doc_topic: self.doc_topic.clone(),
        }
    }
}

fn draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaCheckpoint {
    pub classes: usize,
    pub seed: u64,
    pub hyper: LdaHyper,
    pub vocab: Vec<String>,
    pub topic_word: Vec<Vec<u32>>,
    pub doc_topic: Vec<Vec<u32>>,
}
