//! Experiment configuration, read from TOML.
//!
//! Every field has a default; a file only needs to name the data. When no
//! `[[module]]`/`[[edge]]` entries are given, the four-module reference
//! topology is used.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use multicat_core::{CombineRule, ConnectionKind, EdgeDecl, GraphSpec, ModuleDecl};
use multicat_modules::asr::AsrConfig;
use multicat_modules::gmm::GmmHyper;
use multicat_modules::lda::{LdaHyper, TopicGranularity};
use multicat_modules::vae::{TrainOptions, VaeArch};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

/// Which inter-module connections carry information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Every module learns alone.
    #[serde(rename = "none")]
    Isolated,
    /// Only the word connection between the topic model and the recognizer.
    #[serde(rename = "lda_asr")]
    LdaAsr,
    /// Image-side and speech-side pairs connected, no shared class.
    #[serde(rename = "vae_gmm__lda_asr")]
    VaeGmmLdaAsr,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Isolated, Variant::LdaAsr, Variant::VaeGmmLdaAsr, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Isolated => "none",
            Variant::LdaAsr => "lda_asr",
            Variant::VaeGmmLdaAsr => "vae_gmm__lda_asr",
            Variant::Full => "full",
        }
    }

    /// Whether the connection between modules of kinds `a` and `b` is on.
    pub fn connects(self, a: &str, b: &str) -> bool {
        let pair = |x: &str, y: &str| (a == x && b == y) || (a == y && b == x);
        match self {
            Variant::Isolated => false,
            Variant::LdaAsr => pair("lda", "asr"),
            Variant::VaeGmmLdaAsr => pair("lda", "asr") || pair("vae", "gmm"),
            Variant::Full => true,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown variant `{s}` (expected none, lda_asr, vae_gmm__lda_asr or full)"
                ))
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// IDX image file, optionally gzipped.
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Number of image–utterance pairs.
    pub pairs: Option<usize>,
    /// Pre-recorded utterances (one per line) to use instead of synthesizing.
    pub corpus: Option<PathBuf>,
    /// Digit of each corpus line.
    pub corpus_labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            hidden: VaeArch::MNIST.hidden,
            latent: VaeArch::MNIST.latent,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

impl VaeConfig {
    pub fn arch(&self, input: usize) -> VaeArch {
        VaeArch {
            input,
            hidden: self.hidden,
            latent: self.latent,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ..TrainOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub sweeps: usize,
    pub mean_strength: f64,
    pub prior_mean: Option<Vec<f64>>,
    pub scatter_scale: f64,
    pub dof: Option<f64>,
    pub ridge: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        let h = GmmHyper::default();
        Self {
            sweeps: 50,
            mean_strength: h.mean_strength,
            prior_mean: h.prior_mean,
            scatter_scale: h.scatter_scale,
            dof: h.dof,
            ridge: h.ridge,
        }
    }
}

impl GmmConfig {
    pub fn hyper(&self) -> GmmHyper {
        GmmHyper {
            mean_strength: self.mean_strength,
            prior_mean: self.prior_mean.clone(),
            scatter_scale: self.scatter_scale,
            dof: self.dof,
            ridge: self.ridge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    pub sweeps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub granularity: TopicGranularity,
}

impl Default for LdaConfig {
    fn default() -> Self {
        let h = LdaHyper::default();
        Self {
            sweeps: 100,
            alpha: h.alpha,
            beta: h.beta,
            granularity: h.granularity,
        }
    }
}

impl LdaConfig {
    pub fn hyper(&self) -> LdaHyper {
        LdaHyper {
            alpha: self.alpha,
            beta: self.beta,
            granularity: self.granularity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Overrides the `enabled` flags of the edges. Absent: use them as written.
    pub variant: Option<Variant>,
    pub classes: usize,
    pub lbest: usize,
    pub seed: u64,
    pub n_updates: usize,
    pub combine: CombineRule,
    pub update_order: Vec<String>,
    #[serde(rename = "module")]
    pub modules: Vec<ModuleDecl>,
    #[serde(rename = "edge")]
    pub edges: Vec<EdgeDecl>,
    pub data: DataConfig,
    pub vae: VaeConfig,
    pub gmm: GmmConfig,
    pub lda: LdaConfig,
    pub asr: AsrConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: None,
            classes: 10,
            lbest: 10,
            seed: 0,
            n_updates: 50,
            combine: CombineRule::Poe,
            update_order: Vec::new(),
            modules: Vec::new(),
            edges: Vec::new(),
            data: DataConfig::default(),
            vae: VaeConfig::default(),
            gmm: GmmConfig::default(),
            lda: LdaConfig::default(),
            asr: AsrConfig::default(),
        }
    }
}

/// Default number of pairs.
pub const DEFAULT_PAIRS: usize = 3000;

fn module(id: &str) -> ModuleDecl {
    ModuleDecl {
        id: id.into(),
        kind: id.into(),
        learnable: true,
    }
}

fn edge(a: &str, b: &str, variable: &str, kind: ConnectionKind) -> EdgeDecl {
    EdgeDecl {
        a: a.into(),
        b: b.into(),
        variable: variable.into(),
        kind,
        enabled: true,
    }
}

/// The four-module reference topology.
pub fn reference_topology() -> (Vec<ModuleDecl>, Vec<EdgeDecl>, Vec<String>) {
    (
        ["vae", "gmm", "lda", "asr"].map(module).to_vec(),
        vec![
            edge("vae", "gmm", "z1", ConnectionKind::HeadToTail),
            edge("gmm", "lda", "z2", ConnectionKind::TailToTail),
            edge("asr", "lda", "w", ConnectionKind::HeadToHead),
        ],
        ["asr", "lda", "ttot_z2", "vae", "gmm", "ttot_z2", "asr"]
            .map(String::from)
            .to_vec(),
    )
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_owned(),
            source,
        })
    }

    /// Reads a file and resolves data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.data.resolve(base);
        Ok(config)
    }

    pub fn pairs(&self) -> usize {
        self.data.pairs.unwrap_or(DEFAULT_PAIRS)
    }

    /// The graph description with the variant applied.
    pub fn graph_spec(&self) -> GraphSpec {
        let (mut modules, mut edges, mut order) = reference_topology();
        if !self.modules.is_empty() {
            modules = self.modules.clone();
            edges = self.edges.clone();
        }
        if !self.update_order.is_empty() {
            order = self.update_order.clone();
        }
        if let Some(variant) = self.variant {
            let kind = |id: &str| {
                modules
                    .iter()
                    .find(|m| m.id == id)
                    .map_or_else(String::new, |m| m.kind.clone())
            };
            for e in &mut edges {
                e.enabled = variant.connects(&kind(&e.a), &kind(&e.b));
            }
        }
        GraphSpec {
            classes: self.classes,
            lbest: self.lbest,
            seed: self.seed,
            modules,
            edges,
            update_order: order,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.images);
        fix(&mut self.labels);
        if let Some(p) = &mut self.corpus {
            fix(p);
        }
        if let Some(p) = &mut self.corpus_labels {
            fix(p);
        }
    }
}
