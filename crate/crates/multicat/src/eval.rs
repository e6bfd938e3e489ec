//! Clustering accuracy, stereotype words and a two-component PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Levenshtein distance over tokens with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Index of the member with the smallest mean edit distance to all members,
/// earliest on ties.
pub fn stereotype_index<T: PartialEq>(words: &[Vec<T>]) -> Result<usize> {
    if words.is_empty() {
        return Err(EvalError::Input("stereotype of an empty class".into()));
    }
    // every mean shares the denominator, so total distances compare exactly
    let totals = words
        .iter()
        .map(|w| words.iter().map(|v| edit_distance(w, v)).sum::<usize>());
    let mut best = (0, usize::MAX);
    for (i, t) in totals.enumerate() {
        if t < best.1 {
            best = (i, t);
        }
    }
    Ok(best.0)
}

pub fn stereotype<T: PartialEq + Clone>(words: &[Vec<T>]) -> Result<Vec<T>> {
    Ok(words[stereotype_index(words)?].clone())
}

/// Percentage of points whose cluster maps to their label under the best
/// one-to-one map from clusters to labels.
pub fn best_map_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(EvalError::Input(format!(
            "{} assignments but {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(EvalError::Input("no points to score".into()));
    }
    let size = assignments.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut confusion = Matrix::new(size, size, 0i64);
    for (a, l) in assignments.iter().zip(labels) {
        confusion[(*a, *l)] += 1;
    }
    let (matched, _) = kuhn_munkres(&confusion);
    Ok(100.0 * matched as f64 / assignments.len() as f64)
}

/// Projection onto the two leading principal axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Share of total variance along each axis.
    pub proportions: [f64; 2],
}

pub fn pca2(points: &[Vec<f64>]) -> Result<Pca2> {
    let n = points.len();
    if n < 3 {
        return Err(EvalError::Input(format!("PCA needs at least 3 points, got {n}")));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(EvalError::Input("points differ in dimension".into()));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Ok(Pca2 {
            coords: vec![[0.0; 2]; n],
            proportions: [0.0; 2],
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let axis = |k: usize| order.get(k).map(|i| eig.eigenvectors.column(*i).into_owned());
    let proportion = |k: usize| order.get(k).map_or(0.0, |i| eig.eigenvalues[*i].max(0.0) / trace);
    let (a0, a1) = (axis(0), axis(1));
    let coords = x
        .row_iter()
        .map(|r| {
            let p = |a: &Option<nalgebra::DVector<f64>>| a.as_ref().map_or(0.0, |v| r.dot(&v.transpose()));
            [p(&a0), p(&a1)]
        })
        .collect();
    Ok(Pca2 {
        coords,
        proportions: [proportion(0), proportion(1)],
    })
}
