//! Files written by a run and read back by `eval`.
//!
//! ```text
//! <out>/metrics.csv          update, gmm_accuracy, lda_accuracy, elbo
//! <out>/summary.json         final metrics, stereotypes, PCA proportions, config
//! <out>/assignments.csv      per-datum label, classes and selected word
//! <out>/stereotypes.csv      class, word, members, majority_digit
//! <out>/pca.csv              per-datum coordinates on the two leading axes
//! <out>/corpus.txt           utterances, one per line
//! <out>/corpus_labels.txt    digit of each utterance
//! <out>/checkpoints/*.json   module states
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use multicat_modules::vae::{NamedTensor, VaeArch};

use crate::config::{ExperimentConfig, Variant};
use crate::dataio::{self, format_corpus, format_labels, load_mnist, make_pairs, pair_corpus, PairedDataset};
use crate::pipeline::{run_pipeline, Assignments, MetricsRow, PipelineError, RunOutcome, Stereotype};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Data(#[from] dataio::DataError),

    #[error(transparent)]
    Pipeline(#[from] PipelineError),

    #[error("run failed after {rows} metric rows: {message}")]
    RunFailed { rows: usize, message: String },
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub variant: Option<Variant>,
    pub seed: u64,
    pub pairs: usize,
    #[serde(rename = "final")]
    pub final_metrics: Option<MetricsRow>,
    pub stereotypes: Vec<Stereotype>,
    pub pca_proportions: Option<[f64; 2]>,
    pub degenerate_combinations: usize,
    pub config: ExperimentConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRow {
    datum: usize,
    label: u8,
    gmm_class: Option<usize>,
    lda_class: Option<usize>,
    selected_word: Option<String>,
}

#[derive(Serialize)]
struct PcaRow {
    datum: usize,
    pc1: f64,
    pc2: f64,
}

#[derive(Serialize)]
struct VaeCheckpoint<'a> {
    arch: VaeArch,
    seed: u64,
    tensors: &'a [NamedTensor],
}

#[derive(Serialize)]
struct AsrCheckpoint<'a> {
    noise: multicat_modules::asr::NoiseLevels,
    language_model: &'a multicat_modules::asr::BigramLm,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: path.to_owned(),
        source,
    })?;
    write_file(path, text + "\n")
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_owned(),
        source,
    };
    csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)
}

/// Loads images and labels and builds the paired dataset the config asks for.
pub fn load_dataset(config: &ExperimentConfig) -> Result<PairedDataset> {
    let d = &config.data;
    if d.images.as_os_str().is_empty() || d.labels.as_os_str().is_empty() {
        return Err(dataio::DataError::Input("data.images and data.labels must be set".into()).into());
    }
    let mnist = load_mnist(&d.images, &d.labels)?;
    let seed = multicat_core::rng::derive_seed(config.seed, "data");
    let dataset = match (&d.corpus, &d.corpus_labels) {
        (Some(corpus), Some(labels)) => {
            let utterances = dataio::parse_corpus(&dataio::read_text(corpus)?)?;
            let labels = dataio::parse_labels(&dataio::read_text(labels)?)?;
            pair_corpus(&mnist, utterances, labels, seed)?
        }
        (None, None) => {
            let channel = multicat_modules::asr::AsrState::new(&config.asr)
                .map_err(dataio::DataError::from)?
                .channel;
            make_pairs(&mnist, config.pairs(), &channel, seed)?
        }
        _ => {
            return Err(dataio::DataError::Input(
                "data.corpus and data.corpus_labels must be given together".into(),
            )
            .into())
        }
    };
    Ok(dataset)
}

/// Writes every report file for a finished (or failed) run.
pub fn write_report(
    out: &Path,
    config: &ExperimentConfig,
    dataset: &PairedDataset,
    outcome: &RunOutcome,
) -> Result<Summary> {
    fs::create_dir_all(out.join("checkpoints")).map_err(io_err(out))?;
    write_csv(&out.join("metrics.csv"), &outcome.rows)?;
    write_file(&out.join("corpus.txt"), format_corpus(&dataset.observations.utterances))?;
    write_file(&out.join("corpus_labels.txt"), format_labels(&dataset.labels))?;

    let assignments = outcome.assignments()?;
    write_csv(
        &out.join("assignments.csv"),
        dataset.labels.iter().enumerate().map(|(i, l)| AssignmentRow {
            datum: i,
            label: *l,
            gmm_class: assignments.gmm_class.get(i).copied(),
            lda_class: assignments.lda_class.get(i).copied(),
            selected_word: assignments.selected_word.get(i).cloned(),
        }),
    )?;
    let stereotypes = outcome.stereotypes()?;
    write_csv(&out.join("stereotypes.csv"), &stereotypes)?;
    let pca = outcome.pca()?;
    if let Some(p) = &pca {
        write_csv(
            &out.join("pca.csv"),
            p.coords.iter().enumerate().map(|(i, c)| PcaRow {
                datum: i,
                pc1: c[0],
                pc2: c[1],
            }),
        )?;
    }

    let ck = out.join("checkpoints");
    if let Some(v) = outcome.vae() {
        write_json(
            &ck.join("vae.json"),
            &VaeCheckpoint {
                arch: v.state.arch,
                seed: v.state.seed,
                tensors: &v.state.named_tensors(),
            },
        )?;
    }
    if let Some(g) = outcome.gmm() {
        write_json(&ck.join("gmm.json"), &g.state.checkpoint())?;
    }
    if let Some(l) = outcome.lda() {
        write_json(&ck.join("lda.json"), &l.state.checkpoint())?;
    }
    if let Some(a) = outcome.asr() {
        write_json(
            &ck.join("asr.json"),
            &AsrCheckpoint {
                noise: a.state.channel.noise,
                language_model: &a.state.lm,
            },
        )?;
    }

    let summary = Summary {
        status: if outcome.failure.is_some() { "failed" } else { "ok" }.to_owned(),
        error: outcome.failure.clone(),
        variant: config.variant,
        seed: config.seed,
        pairs: dataset.len(),
        final_metrics: outcome.final_row().cloned(),
        stereotypes,
        pca_proportions: pca.map(|p| p.proportions),
        degenerate_combinations: outcome.trace.as_ref().map_or(0, |t| t.degenerate_combinations),
        config: config.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Loads data, runs the pipeline and writes the report. A failed run still
/// writes its partial report before returning the error.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let dataset = load_dataset(config)?;
    let outcome = run_pipeline(config, &dataset)?;
    let summary = write_report(out, config, &dataset, &outcome)?;
    match &outcome.failure {
        Some(message) => Err(ReportError::RunFailed {
            rows: outcome.rows.len(),
            message: message.clone(),
        }),
        None => Ok(summary),
    }
}

/// A report directory read back from disk, with accuracies recomputed from
/// the per-datum assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct Reloaded {
    pub summary: Summary,
    pub rows: Vec<MetricsRow>,
    pub gmm_accuracy: Option<f64>,
    pub lda_accuracy: Option<f64>,
    pub stereotypes: Vec<Stereotype>,
}

pub fn read_report(dir: &Path) -> Result<Reloaded> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.clone(),
        source,
    })?;
    let rows: Vec<MetricsRow> = read_csv(&dir.join("metrics.csv"))?;
    let per_datum: Vec<AssignmentRow> = read_csv(&dir.join("assignments.csv"))?;
    let labels: Vec<usize> = per_datum.iter().map(|r| r.label as usize).collect();
    let column = |f: fn(&AssignmentRow) -> Option<usize>| per_datum.iter().map(f).collect::<Option<Vec<_>>>();
    let accuracy = |classes: Option<Vec<usize>>| -> Result<Option<f64>> {
        match classes {
            Some(c) if !c.is_empty() => Ok(Some(
                crate::eval::best_map_accuracy(&c, &labels).map_err(PipelineError::from)?,
            )),
            _ => Ok(None),
        }
    };
    let gmm_accuracy = accuracy(column(|r| r.gmm_class))?;
    let lda = column(|r| r.lda_class);
    let lda_accuracy = accuracy(lda.clone())?;
    let words: Option<Vec<String>> = per_datum.iter().map(|r| r.selected_word.clone()).collect();
    let stereotypes = match (lda, words) {
        (Some(lda_class), Some(selected_word)) => {
            let a = Assignments {
                gmm_class: Vec::new(),
                lda_class,
                selected_word,
            };
            let digits: Vec<u8> = per_datum.iter().map(|r| r.label).collect();
            crate::pipeline::stereotypes(&a, &digits)?
        }
        _ => Vec::new(),
    };
    Ok(Reloaded {
        summary,
        rows,
        gmm_accuracy,
        lda_accuracy,
        stereotypes,
    })
}
