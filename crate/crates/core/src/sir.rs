//! Sampling importance resampling over a finite hypothesis list.
//!
//! A sender that can only produce samples (an n-best list, a set of
//! recognition results) ships them with proposal weights. The receiver scores
//! each one with its own importance and draws a single survivor with
//! probability proportional to `proposal_weight * importance`. Repeated items
//! accumulate mass.

use rand::Rng;

use crate::error::{CoreError, Result};

/// One resampling outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection<'a, T> {
    pub item: &'a T,
    /// Position in the hypothesis list.
    pub index: usize,
    /// Set when every importance-weighted mass was zero and the draw used
    /// the proposal weights alone.
    pub degenerate: bool,
}

/// Per-hypothesis resampling masses `proposal_weight * importance(item)`.
pub fn sir_masses<T, F>(hypotheses: &[(T, f64)], mut importance: F) -> Result<Vec<f64>>
where
    F: FnMut(&T) -> f64,
{
    if hypotheses.is_empty() {
        return Err(CoreError::Empty("sir_select needs at least one hypothesis"));
    }
    hypotheses
        .iter()
        .map(|(item, weight)| {
            let imp = importance(item);
            if !weight.is_finite() || *weight < 0.0 {
                return Err(CoreError::InvalidDistribution(format!(
                    "proposal weight {weight} is negative or non-finite"
                )));
            }
            if !imp.is_finite() || imp < 0.0 {
                return Err(CoreError::InvalidDistribution(format!(
                    "importance {imp} is negative or non-finite"
                )));
            }
            Ok(weight * imp)
        })
        .collect()
}

/// Draws one hypothesis with probability proportional to
/// `proposal_weight * importance(item)`.
pub fn sir_select<'a, T, F, R>(
    hypotheses: &'a [(T, f64)],
    importance: F,
    rng: &mut R,
) -> Result<Selection<'a, T>>
where
    F: FnMut(&T) -> f64,
    R: Rng + ?Sized,
{
    let masses = sir_masses(hypotheses, importance)?;
    let (masses, degenerate) = if masses.iter().sum::<f64>() > 0.0 {
        (masses, false)
    } else {
        let proposal: Vec<f64> = hypotheses.iter().map(|(_, w)| *w).collect();
        if proposal.iter().sum::<f64>() > 0.0 {
            (proposal, true)
        } else {
            (vec![1.0; hypotheses.len()], true)
        }
    };
    let index = draw_index(&masses, rng.gen::<f64>());
    Ok(Selection {
        item: &hypotheses[index].0,
        index,
        degenerate,
    })
}

/// Inverse-CDF draw over unnormalized non-negative masses.
fn draw_index(masses: &[f64], u: f64) -> usize {
    let total: f64 = masses.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if target < acc {
            return i;
        }
    }
    masses.iter().rposition(|m| *m > 0.0).unwrap_or(masses.len() - 1)
}
