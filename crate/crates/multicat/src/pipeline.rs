//! Wires the four modules into a graph and runs an experiment.

use std::any::Any;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use multicat_core::graph::NodeKind;
use multicat_core::rng::{derive_seed, stream};
use multicat_core::{
    build_graph, run_schedule, BoxError, Categorical, CoreError, MetricRow, Module, ModuleGraph, Modules, Payload,
    Role, ScheduleTrace, Visit, WeightedItem,
};
use multicat_modules::asr::{AsrState, Hypothesis};
use multicat_modules::gmm::GmmState;
use multicat_modules::lda::LdaState;
use multicat_modules::vae::{columns, SeededNoise, TrainLog, TrainOptions, VaeParams, VaeState};

use crate::config::ExperimentConfig;
use crate::dataio::{Observations, PairedDataset};
use crate::eval::{best_map_accuracy, pca2, stereotype, EvalError, Pca2};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Module(#[from] multicat_modules::ModuleError),

    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn missing(module: &str, variable: &str) -> BoxError {
    format!("{module} received nothing on `{variable}`").into()
}

/// Image autoencoder node. Training is a pure function of the prior means,
/// so results are reused when the prior repeats.
pub struct VaeNode {
    pub state: VaeState,
    images: Rc<DMatrix<f64>>,
    opts: TrainOptions,
    latent_var: String,
    cache: Vec<(DMatrix<f64>, VaeParams, TrainLog)>,
    pub log: TrainLog,
    /// Encoder means from the last visit.
    pub latents: Vec<Vec<f64>>,
}

impl Module for VaeNode {
    fn update(&mut self, visit: &mut Visit<'_>) -> Result<(), BoxError> {
        let n = self.images.ncols();
        let latent = self.state.arch.latent;
        let prior = match visit.receive(&self.latent_var).and_then(|m| m.payload.as_means()) {
            Some(rows) if !rows.is_empty() => columns(latent, rows)?,
            _ => DMatrix::zeros(latent, n),
        };
        if let Some((_, params, log)) = self.cache.iter().find(|(p, _, _)| *p == prior) {
            self.state.params = params.clone();
            self.log = log.clone();
        } else {
            let mut noise = SeededNoise(stream(self.state.seed, "vae/noise"));
            self.log = self.state.train(&self.images, &prior, &self.opts, &mut noise)?;
            if self.cache.len() == 2 {
                self.cache.remove(0);
            }
            self.cache.push((prior, self.state.params.clone(), self.log.clone()));
        }
        let payload = self.state.emit_latents(&self.images)?;
        self.latents = payload.as_means().map(<[_]>::to_vec).unwrap_or_default();
        visit.publish(self.latent_var.clone(), Role::Observation, payload);
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct GmmNode {
    pub state: GmmState,
    sweeps: usize,
    latent_var: String,
    class_var: Option<String>,
}

impl Module for GmmNode {
    fn update(&mut self, visit: &mut Visit<'_>) -> Result<(), BoxError> {
        let latents = visit
            .receive(&self.latent_var)
            .and_then(|m| m.payload.as_means())
            .ok_or_else(|| missing("gmm", &self.latent_var))?
            .to_vec();
        let external: Option<Vec<Categorical>> = self
            .class_var
            .as_ref()
            .and_then(|v| visit.receive(v))
            .and_then(|m| m.payload.as_categorical())
            .map(<[_]>::to_vec);
        let report = self.state.fit(&latents, external.as_deref(), self.sweeps)?;
        visit.flag_degenerate(report.degenerate);
        visit.publish(self.latent_var.clone(), Role::Belief, self.state.component_means());
        if let Some(v) = &self.class_var {
            visit.publish(v.clone(), Role::Belief, self.state.class_posteriors(&latents)?);
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Topic model node. Each document is `L` draws from its recognition list,
/// reweighted by the word importances of the previous fit; after fitting,
/// one word per document is selected the same way and sent back.
pub struct LdaNode {
    pub state: LdaState,
    sweeps: usize,
    lbest: usize,
    word_var: String,
    class_var: Option<String>,
    pub docs: Vec<Vec<String>>,
    pub selected: Vec<String>,
}

impl LdaNode {
    fn importance(&self, word: &str, d: usize) -> f64 {
        if self.state.num_docs() == 0 {
            1.0
        } else {
            self.state.word_importance(word, d).unwrap_or(1.0)
        }
    }
}

impl Module for LdaNode {
    fn update(&mut self, visit: &mut Visit<'_>) -> Result<(), BoxError> {
        let lists: Vec<Vec<WeightedItem>> = visit
            .receive(&self.word_var)
            .and_then(|m| m.payload.as_samples())
            .ok_or_else(|| missing("lda", &self.word_var))?
            .to_vec();
        let external: Option<Vec<Categorical>> = self
            .class_var
            .as_ref()
            .and_then(|v| visit.receive(v))
            .and_then(|m| m.payload.as_categorical())
            .map(<[_]>::to_vec);
        if self.state.num_docs() != 0 && self.state.num_docs() != lists.len() {
            return Err("recognition lists changed size between visits".into());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.state.seed, "lda/sir"));
        let mut degenerate = 0;
        let mut docs = Vec::with_capacity(lists.len());
        for (d, list) in lists.iter().enumerate() {
            let mut doc = Vec::with_capacity(self.lbest);
            for _ in 0..self.lbest {
                let pick = multicat_core::sir_select(list, |w| self.importance(w, d), &mut rng)?;
                degenerate += usize::from(pick.degenerate);
                doc.push(pick.item.clone());
            }
            docs.push(doc);
        }
        self.state.fit(&docs, external.as_deref(), self.sweeps)?;
        self.docs = docs;

        let mut selected = Vec::with_capacity(lists.len());
        for (d, list) in lists.iter().enumerate() {
            let pick = multicat_core::sir_select(list, |w| self.importance(w, d), &mut rng)?;
            degenerate += usize::from(pick.degenerate);
            selected.push(pick.item.clone());
        }
        visit.flag_degenerate(degenerate);
        if let Some(v) = &self.class_var {
            visit.publish(v.clone(), Role::Belief, self.state.doc_posteriors()?);
        }
        visit.publish(
            self.word_var.clone(),
            Role::Belief,
            Payload::WeightedSamples(selected.iter().map(|w| vec![(w.clone(), 1.0)]).collect()),
        );
        self.selected = selected;
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Recognizer node. Re-estimates the language model from the words it is
/// sent (or returns it to uniform when sent nothing) and recognizes every
/// utterance.
pub struct AsrNode {
    pub state: AsrState,
    utterances: Rc<Vec<Vec<String>>>,
    lbest: usize,
    word_var: String,
    cache: HashMap<Vec<String>, Vec<Hypothesis>>,
    pub lists: Vec<Vec<Hypothesis>>,
}

impl Module for AsrNode {
    fn update(&mut self, visit: &mut Visit<'_>) -> Result<(), BoxError> {
        let words: Vec<String> = visit
            .receive(&self.word_var)
            .and_then(|m| m.payload.as_samples())
            .map(|rows| rows.iter().flatten().map(|(w, _)| w.clone()).collect())
            .unwrap_or_default();
        let before = self.state.lm.counts.clone();
        if words.is_empty() {
            self.state.reset_lm();
        } else {
            self.state.update_lm(&words)?;
        }
        if self.state.lm.counts != before {
            self.cache.clear();
        }
        let mut lists = Vec::with_capacity(self.utterances.len());
        for u in self.utterances.iter() {
            let hyps = match self.cache.get(u) {
                Some(h) => h.clone(),
                None => {
                    let h = self.state.recognize(u, self.lbest)?;
                    self.cache.insert(u.clone(), h.clone());
                    h
                }
            };
            lists.push(hyps);
        }
        visit.publish(
            self.word_var.clone(),
            Role::Observation,
            Payload::WeightedSamples(lists.clone()),
        );
        self.lists = lists;
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Node ids of each module kind in a graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub vae: Option<String>,
    pub gmm: Option<String>,
    pub lda: Option<String>,
    pub asr: Option<String>,
}

fn roles(graph: &ModuleGraph) -> Result<Roles> {
    let mut r = Roles::default();
    for node in &graph.nodes {
        if let NodeKind::Module { kind, .. } = &node.kind {
            let slot = match kind.as_str() {
                "vae" => &mut r.vae,
                "gmm" => &mut r.gmm,
                "lda" => &mut r.lda,
                "asr" => &mut r.asr,
                other => return Err(PipelineError::Config(format!("unknown module kind `{other}`"))),
            };
            if slot.replace(node.id.to_string()).is_some() {
                return Err(PipelineError::Config(format!("more than one `{kind}` module")));
            }
        }
    }
    Ok(r)
}

/// Variable shared by nodes `a` and `b`, if they are connected.
fn shared(graph: &ModuleGraph, a: &Option<String>, b: &Option<String>) -> Option<String> {
    let (a, b) = (a.as_deref()?, b.as_deref()?);
    graph
        .edges
        .iter()
        .find(|e| (e.a == *a && e.b == *b) || (e.a == *b && e.b == *a))
        .map(|e| e.variable.clone())
}

/// Builds module implementations for every node of `graph`.
pub fn build_modules(
    config: &ExperimentConfig,
    graph: &ModuleGraph,
    observations: &Observations,
) -> Result<(Modules, Roles)> {
    let r = roles(graph)?;
    let n = observations.images.len();
    if n != observations.utterances.len() {
        return Err(PipelineError::Config(format!(
            "{n} images but {} utterances",
            observations.utterances.len()
        )));
    }
    let seed = graph.seed;
    let need = |var: Option<String>, what: &str| {
        var.ok_or_else(|| PipelineError::Config(format!("{what} is not connected")))
    };
    let mut modules = Modules::new();
    if let Some(id) = &r.vae {
        let input = observations.images.first().map_or(784, Vec::len);
        let images = Rc::new(columns(input, &observations.images)?);
        let state = VaeState::new(config.vae.arch(input), derive_seed(seed, "vae"));
        let latent_var = need(shared(graph, &r.vae, &r.gmm), "vae–gmm")?;
        modules.insert(
            id.as_str(),
            Box::new(VaeNode {
                state,
                images,
                opts: config.vae.train_options(),
                latent_var,
                cache: Vec::new(),
                log: TrainLog::default(),
                latents: Vec::new(),
            }),
        );
    }
    if let Some(id) = &r.gmm {
        let mut state = GmmState::new(
            graph.classes,
            config.vae.latent,
            config.gmm.hyper(),
            derive_seed(seed, "gmm"),
        )?;
        state.combine = config.combine;
        modules.insert(
            id.as_str(),
            Box::new(GmmNode {
                state,
                sweeps: config.gmm.sweeps,
                latent_var: need(shared(graph, &r.vae, &r.gmm), "vae–gmm")?,
                class_var: shared(graph, &r.gmm, &r.lda),
            }),
        );
    }
    if let Some(id) = &r.lda {
        modules.insert(
            id.as_str(),
            Box::new(LdaNode {
                state: LdaState::new(graph.classes, config.lda.hyper(), derive_seed(seed, "lda"))?,
                sweeps: config.lda.sweeps,
                lbest: graph.lbest,
                word_var: need(shared(graph, &r.lda, &r.asr), "lda–asr")?,
                class_var: shared(graph, &r.gmm, &r.lda),
                docs: Vec::new(),
                selected: Vec::new(),
            }),
        );
    }
    if let Some(id) = &r.asr {
        modules.insert(
            id.as_str(),
            Box::new(AsrNode {
                state: AsrState::new(&config.asr)?,
                utterances: Rc::new(observations.utterances.clone()),
                lbest: graph.lbest,
                word_var: need(shared(graph, &r.lda, &r.asr), "lda–asr")?,
                cache: HashMap::new(),
                lists: Vec::new(),
            }),
        );
    }
    Ok((modules, r))
}

/// Accuracy and ELBO after one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub gmm_accuracy: Option<f64>,
    pub lda_accuracy: Option<f64>,
    pub elbo: Option<f64>,
}

impl From<&MetricRow> for MetricsRow {
    fn from(r: &MetricRow) -> Self {
        Self {
            update: r.update,
            gmm_accuracy: r.values.get("gmm_accuracy").copied(),
            lda_accuracy: r.values.get("lda_accuracy").copied(),
            elbo: r.values.get("elbo").copied(),
        }
    }
}

/// Most frequent label among `members`, lowest on ties.
pub fn majority(labels: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts = [0usize; 256];
    let mut any = false;
    for l in labels {
        counts[l] += 1;
        any = true;
    }
    any.then(|| (0..256).max_by(|a, b| counts[*a].cmp(&counts[*b]).then(b.cmp(a))).unwrap_or(0))
}

/// One row of the stereotype table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stereotype {
    pub class: usize,
    pub word: String,
    pub members: usize,
    /// Most frequent true digit among the class members.
    pub majority_digit: u8,
}

/// Final per-datum results.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignments {
    pub gmm_class: Vec<usize>,
    pub lda_class: Vec<usize>,
    pub selected_word: Vec<String>,
}

/// Everything a run produces, before it is written anywhere.
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    /// Set when the run stopped early.
    pub failure: Option<String>,
    pub trace: Option<ScheduleTrace>,
    pub roles: Roles,
    pub modules: Modules,
    pub labels: Vec<u8>,
}

impl RunOutcome {
    pub fn vae(&self) -> Option<&VaeNode> {
        self.roles.vae.as_deref().and_then(|id| self.modules.get(id))
    }

    pub fn gmm(&self) -> Option<&GmmNode> {
        self.roles.gmm.as_deref().and_then(|id| self.modules.get(id))
    }

    pub fn lda(&self) -> Option<&LdaNode> {
        self.roles.lda.as_deref().and_then(|id| self.modules.get(id))
    }

    pub fn asr(&self) -> Option<&AsrNode> {
        self.roles.asr.as_deref().and_then(|id| self.modules.get(id))
    }

    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn assignments(&self) -> Result<Assignments> {
        let lda_class = match self.lda() {
            Some(l) if l.state.num_docs() > 0 => (0..l.state.num_docs())
                .map(|d| l.state.doc_topic_posterior(d).map(|p| p.argmax()))
                .collect::<Result<_, _>>()?,
            _ => Vec::new(),
        };
        Ok(Assignments {
            gmm_class: self.gmm().map(|g| g.state.assignments.clone()).unwrap_or_default(),
            lda_class,
            selected_word: self.lda().map(|l| l.selected.clone()).unwrap_or_default(),
        })
    }

    pub fn stereotypes(&self) -> Result<Vec<Stereotype>> {
        stereotypes(&self.assignments()?, &self.labels)
    }

    pub fn pca(&self) -> Result<Option<Pca2>> {
        match self.vae() {
            Some(v) if v.latents.len() >= 3 => Ok(Some(pca2(&v.latents)?)),
            _ => Ok(None),
        }
    }
}

/// Stereotype word of each topic class over the selected words of its members.
pub fn stereotypes(a: &Assignments, labels: &[u8]) -> Result<Vec<Stereotype>> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, c) in a.lda_class.iter().enumerate() {
        by_class.entry(*c).or_default().push(i);
    }
    by_class
        .into_iter()
        .filter(|(_, members)| members.iter().all(|i| *i < a.selected_word.len()))
        .map(|(class, members)| {
            let words: Vec<Vec<&str>> = members
                .iter()
                .map(|i| a.selected_word[*i].split_whitespace().collect())
                .collect();
            let word = stereotype(&words)?.join(" ");
            let majority_digit = majority(members.iter().map(|i| labels[*i] as usize)).unwrap_or(0) as u8;
            Ok(Stereotype {
                class,
                word,
                members: members.len(),
                majority_digit,
            })
        })
        .collect()
}

/// Builds the graph and modules, runs the schedule and collects metrics.
///
/// A module failure does not discard the metrics gathered so far; it is
/// reported in [`RunOutcome::failure`].
pub fn run_pipeline(config: &ExperimentConfig, dataset: &PairedDataset) -> Result<RunOutcome> {
    let graph = build_graph(&config.graph_spec())?;
    let (mut modules, roles) = build_modules(config, &graph, &dataset.observations)?;
    let labels: Vec<usize> = dataset.labels.iter().map(|l| *l as usize).collect();
    let rows: Rc<RefCell<Vec<MetricsRow>>> = Rc::default();

    let mut observer = {
        let rows = Rc::clone(&rows);
        let roles = roles.clone();
        move |update: usize, modules: &Modules| -> Result<Vec<(String, f64)>, BoxError> {
            let mut values = Vec::new();
            if let Some(g) = roles.gmm.as_deref().and_then(|id| modules.get::<GmmNode>(id)) {
                if g.state.assignments.len() == labels.len() && !labels.is_empty() {
                    values.push(("gmm_accuracy".to_owned(), best_map_accuracy(&g.state.assignments, &labels)?));
                }
            }
            if let Some(l) = roles.lda.as_deref().and_then(|id| modules.get::<LdaNode>(id)) {
                if l.state.num_docs() == labels.len() && !labels.is_empty() {
                    let classes = (0..l.state.num_docs())
                        .map(|d| l.state.doc_topic_posterior(d).map(|p| p.argmax()))
                        .collect::<Result<Vec<_>, _>>()?;
                    values.push(("lda_accuracy".to_owned(), best_map_accuracy(&classes, &labels)?));
                }
            }
            if let Some(v) = roles.vae.as_deref().and_then(|id| modules.get::<VaeNode>(id)) {
                if let Some(e) = v.log.epoch_elbo.last() {
                    values.push(("elbo".to_owned(), *e));
                }
            }
            let row = MetricRow {
                update,
                values: values.iter().cloned().collect(),
            };
            rows.borrow_mut().push(MetricsRow::from(&row));
            Ok(values)
        }
    };

    let result = run_schedule(&graph, &mut modules, config.n_updates, &mut observer);
    drop(observer);
    let rows = Rc::try_unwrap(rows).map(RefCell::into_inner).unwrap_or_default();
    let (trace, failure) = match result {
        Ok(t) => (Some(t), None),
        Err(e) => {
            let mut message = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                message = format!("{message}: {s}");
                source = s.source();
            }
            (None, Some(message))
        }
    };
    Ok(RunOutcome {
        rows,
        failure,
        trace,
        roles,
        modules,
        labels: dataset.labels.clone(),
    })
}
