//! Combination of categorical beliefs about a shared class variable.
//!
//! Two modules that both reason about the same latent class each hold a
//! conditional over it. The runtime fuses them either as a product of
//! experts, `p(z | x, y) ∝ p(z | x) p(z | y)`, or with uni-gram rescaling,
//! `p(z | x, y) ∝ p(z | x) p(z | y) / p(z)`. The two agree when `p(z)` is
//! uniform.

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::error::{CoreError, Result};

/// Result of fusing categorical factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Combined {
    pub dist: Categorical,
    /// Set when every class received zero mass and the output fell back to uniform.
    pub degenerate: bool,
}

/// Which fusion rule a module applies to its own belief and an external message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    #[default]
    Poe,
    UnigramRescale,
}

impl CombineRule {
    /// Fuses `factors`; `prior` is only consulted by [`CombineRule::UnigramRescale`]
    /// and defaults to uniform.
    pub fn apply(&self, factors: &[&Categorical], prior: Option<&Categorical>) -> Result<Combined> {
        match self {
            CombineRule::Poe => poe_combine(factors.iter().copied()),
            CombineRule::UnigramRescale => unigram_rescale(factors, prior),
        }
    }
}

/// Normalized elementwise product of categorical factors.
///
/// An all-zero product yields the uniform distribution with `degenerate` set.
pub fn poe_combine<'a, I>(factors: I) -> Result<Combined>
where
    I: IntoIterator<Item = &'a Categorical>,
{
    let mut iter = factors.into_iter();
    let first = iter.next().ok_or(CoreError::Empty("poe_combine needs at least one factor"))?;
    let k = first.len();
    let mut product = first.probs().to_vec();
    for (m, factor) in iter.enumerate() {
        if factor.len() != k {
            return Err(CoreError::Dimension(format!(
                "factor {} has {} classes, expected {k}",
                m + 1,
                factor.len()
            )));
        }
        for (acc, p) in product.iter_mut().zip(factor.probs()) {
            *acc *= p;
        }
    }
    finish(product)
}

/// Product of factors divided by a class prior, normalized.
pub fn unigram_rescale(factors: &[&Categorical], prior: Option<&Categorical>) -> Result<Combined> {
    let product = poe_combine(factors.iter().copied())?;
    let Some(prior) = prior else {
        return Ok(product);
    };
    if product.degenerate {
        return Ok(product);
    }
    if prior.len() != product.dist.len() {
        return Err(CoreError::Dimension(format!(
            "prior has {} classes, factors have {}",
            prior.len(),
            product.dist.len()
        )));
    }
    let rescaled = product
        .dist
        .probs()
        .iter()
        .zip(prior.probs())
        .map(|(p, q)| if *q > 0.0 { p / q } else { 0.0 })
        .collect();
    finish(rescaled)
}

fn finish(weights: Vec<f64>) -> Result<Combined> {
    let k = weights.len();
    match Categorical::from_weights(weights)? {
        Some(dist) => Ok(Combined {
            dist,
            degenerate: false,
        }),
        None => Ok(Combined {
            dist: Categorical::uniform(k),
            degenerate: true,
        }),
    }
}
