use std::fmt;

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::error::{CoreError, Result};

/// Identifier of a module or relay node in a graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(pub String);

impl ModuleId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModuleId {
    fn from(s: &str) -> Self {
        ModuleId(s.to_owned())
    }
}

impl From<String> for ModuleId {
    fn from(s: String) -> Self {
        ModuleId(s)
    }
}

impl PartialEq<str> for ModuleId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

/// A weighted hypothesis: an opaque item (for words, space-separated
/// syllables) and its non-negative weight.
pub type WeightedItem = (String, f64);

/// The three posterior shapes modules exchange, one entry per data point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// A categorical over the shared class for every data point.
    CategoricalPerDatum(Vec<Categorical>),
    /// A point estimate (mean vector) per data point.
    GaussianMeans(Vec<Vec<f64>>),
    /// A weighted sample set per data point.
    WeightedSamples(Vec<Vec<WeightedItem>>),
}

impl Payload {
    /// Number of data points covered.
    pub fn len(&self) -> usize {
        match self {
            Payload::CategoricalPerDatum(v) => v.len(),
            Payload::GaussianMeans(v) => v.len(),
            Payload::WeightedSamples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::CategoricalPerDatum(_) => "categorical_per_datum",
            Payload::GaussianMeans(_) => "gaussian_means",
            Payload::WeightedSamples(_) => "weighted_samples",
        }
    }

    /// Checks internal consistency: equal class counts, equal mean
    /// dimensions, non-negative finite weights.
    pub fn validate(&self) -> Result<()> {
        match self {
            Payload::CategoricalPerDatum(rows) => {
                if let Some(first) = rows.first() {
                    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
                        return Err(CoreError::Dimension(format!(
                            "datum {i} has {} classes, datum 0 has {}",
                            r.len(),
                            first.len()
                        )));
                    }
                }
            }
            Payload::GaussianMeans(rows) => {
                if let Some(first) = rows.first() {
                    for (i, r) in rows.iter().enumerate() {
                        if r.len() != first.len() {
                            return Err(CoreError::Dimension(format!(
                                "datum {i} has dimension {}, datum 0 has {}",
                                r.len(),
                                first.len()
                            )));
                        }
                        if r.iter().any(|x| !x.is_finite()) {
                            return Err(CoreError::InvalidDistribution(format!(
                                "datum {i} has a non-finite mean"
                            )));
                        }
                    }
                }
            }
            Payload::WeightedSamples(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    if r.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
                        return Err(CoreError::InvalidDistribution(format!(
                            "datum {i} has a negative or non-finite weight"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The message a disabled connection carries instead of this one:
    /// uniform categoricals, zero means, or empty sample sets.
    pub fn neutral(&self) -> Payload {
        match self {
            Payload::CategoricalPerDatum(rows) => Payload::CategoricalPerDatum(
                rows.iter().map(|r| Categorical::uniform(r.len())).collect(),
            ),
            Payload::GaussianMeans(rows) => {
                Payload::GaussianMeans(rows.iter().map(|r| vec![0.0; r.len()]).collect())
            }
            Payload::WeightedSamples(rows) => {
                Payload::WeightedSamples(rows.iter().map(|_| Vec::new()).collect())
            }
        }
    }

    pub fn as_categorical(&self) -> Option<&[Categorical]> {
        match self {
            Payload::CategoricalPerDatum(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_means(&self) -> Option<&[Vec<f64>]> {
        match self {
            Payload::GaussianMeans(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_samples(&self) -> Option<&[Vec<WeightedItem>]> {
        match self {
            Payload::WeightedSamples(v) => Some(v),
            _ => None,
        }
    }
}

/// How the receiver treats a message.
///
/// Observations are data the receiver models (latents it clusters, words it
/// counts) and always flow. Beliefs are posteriors or priors over a shared
/// variable; a disabled connection replaces them with [`Payload::neutral`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Observation,
    Belief,
}

/// A posterior over one shared variable sent from one node to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub variable: String,
    pub sender: ModuleId,
    /// Scheduler step at which the message was published.
    pub epoch: u64,
    pub role: Role,
    pub payload: Payload,
}

impl Message {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}
