//! Gaussian mixture over latent vectors with a Gauss–Wishart prior on each
//! component, fitted by Gibbs sampling of the assignments.
//!
//! Between assignment sweeps the component parameters are set to their
//! posterior expectations: the mean to `m_n` and the covariance to the
//! inverse of the expected precision, `S_n / nu_n`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use multicat_core::rng::derive_seed;
use multicat_core::{Categorical, CombineRule, Payload};

use crate::error::{ModuleError, Result};

/// Gauss–Wishart prior hyperparameters. `None` picks the dimension-dependent
/// default (zero mean, `dof = dim + 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmHyper {
    pub mean_strength: f64,
    pub prior_mean: Option<Vec<f64>>,
    /// Prior scatter matrix is `scatter_scale * I`.
    pub scatter_scale: f64,
    pub dof: Option<f64>,
    /// Ridge added to a covariance whose component has fewer than `dim + 1` members.
    pub ridge: f64,
}

impl Default for GmmHyper {
    fn default() -> Self {
        Self {
            mean_strength: 1.0,
            prior_mean: None,
            scatter_scale: 1.0,
            dof: None,
            ridge: 1e-6,
        }
    }
}

/// Parameters of a Gauss–Wishart distribution over (mean, precision).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussWishart {
    pub strength: f64,
    pub mean: DVector<f64>,
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

impl GaussWishart {
    pub fn prior(dim: usize, hyper: &GmmHyper) -> Result<Self> {
        let mean = match &hyper.prior_mean {
            Some(m) if m.len() != dim => {
                return Err(ModuleError::Dimension(format!(
                    "prior_mean has dimension {}, expected {dim}",
                    m.len()
                )))
            }
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(dim),
        };
        let dof = hyper.dof.unwrap_or(dim as f64 + 2.0);
        if dof <= dim as f64 - 1.0 || hyper.mean_strength <= 0.0 || hyper.scatter_scale <= 0.0 {
            return Err(ModuleError::Input(format!(
                "invalid Gauss–Wishart prior (mean_strength = {}, dof = {dof}, scatter_scale = {})",
                hyper.mean_strength, hyper.scatter_scale
            )));
        }
        Ok(Self {
            strength: hyper.mean_strength,
            mean,
            dof,
            scale: DMatrix::identity(dim, dim) * hyper.scatter_scale,
        })
    }

    /// Conjugate update with the given observations.
    pub fn posterior<'a, I>(&self, data: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let dim = self.mean.len();
        let mut n = 0usize;
        let mut sum = DVector::zeros(dim);
        let mut sq = DMatrix::zeros(dim, dim);
        for x in data {
            let v = DVector::from_column_slice(x);
            sq += &v * v.transpose();
            sum += v;
            n += 1;
        }
        if n == 0 {
            return self.clone();
        }
        let nf = n as f64;
        let xbar = &sum / nf;
        // within-group scatter: sum x x^T - n xbar xbar^T
        let scatter = sq - &xbar * xbar.transpose() * nf;
        let strength = self.strength + nf;
        let mean = (&self.mean * self.strength + &xbar * nf) / strength;
        let diff = &xbar - &self.mean;
        let scale = &self.scale + scatter + &diff * diff.transpose() * (self.strength * nf / strength);
        Self {
            strength,
            mean,
            dof: self.dof + nf,
            scale,
        }
    }
}

/// One mixture component with a cached Cholesky factor of its covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub regularized: bool,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Component {
    pub fn new(weight: f64, mean: DVector<f64>, mut cov: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let mut regularized = false;
        loop {
            cov = (&cov + cov.transpose()) * 0.5;
            if let Some(c) = Cholesky::new(cov.clone()) {
                let chol = c.unpack();
                let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                return Ok(Self {
                    weight,
                    mean,
                    cov,
                    regularized,
                    chol,
                    log_det,
                });
            }
            if regularized || ridge <= 0.0 {
                return Err(ModuleError::Input("component covariance is not positive definite".into()));
            }
            cov += DMatrix::identity(cov.nrows(), cov.ncols()) * ridge;
            regularized = true;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff = DVector::from_column_slice(x) - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + y.norm_squared())
    }
}

/// Source of standard Gumbel noise for the assignment draws.
pub trait GumbelSource {
    fn fill(&mut self, sweep: usize, datum: usize, out: &mut [f64]);
}

pub struct SeededGumbel(pub ChaCha8Rng);

impl GumbelSource for SeededGumbel {
    fn fill(&mut self, _sweep: usize, _datum: usize, out: &mut [f64]) {
        for g in out {
            let u: f64 = self.0.gen_range(f64::MIN_POSITIVE..1.0);
            *g = -(-u.ln()).ln();
        }
    }
}

impl<F: FnMut(usize, usize, &mut [f64])> GumbelSource for F {
    fn fill(&mut self, sweep: usize, datum: usize, out: &mut [f64]) {
        self(sweep, datum, out)
    }
}

/// Argmax of `ln p_k + g_k`, an exact draw from `p` when `g` is Gumbel noise.
fn gumbel_argmax(probs: &[f64], gumbel: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, (p, g)) in probs.iter().zip(gumbel).enumerate() {
        if *p > 0.0 {
            let v = p.ln() + g;
            if v > best_val {
                best_val = v;
                best = k;
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmState {
    pub classes: usize,
    pub dim: usize,
    pub hyper: GmmHyper,
    pub prior: GaussWishart,
    pub components: Vec<Component>,
    pub posteriors: Vec<GaussWishart>,
    pub assignments: Vec<usize>,
    pub seed: u64,
    /// How an external message is fused with the responsibilities; uni-gram
    /// rescaling divides by the mixture weights.
    pub combine: CombineRule,
    /// Data points whose combined distribution had zero mass, across the last fit.
    pub degenerate: usize,
}

/// Summary statistics of a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GibbsReport {
    pub sweeps: usize,
    pub degenerate: usize,
    pub regularized: usize,
}

impl GmmState {
    pub fn new(classes: usize, dim: usize, hyper: GmmHyper, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(ModuleError::Input("classes and dimension must be positive".into()));
        }
        let prior = GaussWishart::prior(dim, &hyper)?;
        let mut s = Self {
            classes,
            dim,
            hyper,
            prior: prior.clone(),
            components: Vec::new(),
            posteriors: vec![prior; classes],
            assignments: Vec::new(),
            seed,
            combine: CombineRule::Poe,
            degenerate: 0,
        };
        s.update_parameters(&[])?;
        Ok(s)
    }

    fn check_latents(&self, latents: &[Vec<f64>]) -> Result<()> {
        for (i, x) in latents.iter().enumerate() {
            if x.len() != self.dim {
                return Err(ModuleError::Dimension(format!(
                    "latent {i} has dimension {}, expected {}",
                    x.len(),
                    self.dim
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ModuleError::Input(format!("latent {i} is not finite")));
            }
        }
        Ok(())
    }

    /// `P(class | x)` under the current parameters.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Categorical> {
        if x.len() != self.dim {
            return Err(ModuleError::Dimension(format!(
                "latent has dimension {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                if c.weight > 0.0 {
                    c.weight.ln() + c.log_density(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Ok(Categorical::from_log_weights(&logs)?)
    }

    /// Resets to uniformly random assignments and then runs `sweeps` Gibbs sweeps.
    pub fn fit(
        &mut self,
        latents: &[Vec<f64>],
        external: Option<&[Categorical]>,
        sweeps: usize,
    ) -> Result<GibbsReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "gmm/init"));
        let init: Vec<usize> = (0..latents.len()).map(|_| rng.gen_range(0..self.classes)).collect();
        let mut noise = SeededGumbel(ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "gmm/sweep")));
        self.fit_from(latents, external, sweeps, init, &mut noise)
    }

    /// Gibbs sampling from explicit initial assignments and noise source.
    pub fn fit_from(
        &mut self,
        latents: &[Vec<f64>],
        external: Option<&[Categorical]>,
        sweeps: usize,
        init: Vec<usize>,
        noise: &mut dyn GumbelSource,
    ) -> Result<GibbsReport> {
        self.check_latents(latents)?;
        if init.len() != latents.len() || init.iter().any(|k| *k >= self.classes) {
            return Err(ModuleError::Input("initial assignments do not match the data".into()));
        }
        if let Some(ext) = external {
            if ext.len() != latents.len() {
                return Err(ModuleError::Dimension(format!(
                    "external message covers {} data points, expected {}",
                    ext.len(),
                    latents.len()
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
        self.assignments = init;
        self.degenerate = 0;
        let mut report = GibbsReport::default();
        report.regularized = self.update_parameters(latents)?;

        let mut gumbel = vec![0.0; self.classes];
        for sweep in 0..sweeps {
            for (i, x) in latents.iter().enumerate() {
                let resp = self.responsibilities(x)?;
                let ext = external.map(|e| &e[i]).filter(|c| !c.is_uniform());
                let probs = match ext {
                    Some(e) => {
                        let weights = Categorical::new(self.components.iter().map(|c| c.weight).collect())?;
                        let combined = self.combine.apply(&[&resp, e], Some(&weights))?;
                        if combined.degenerate {
                            self.degenerate += 1;
                        }
                        combined.dist
                    }
                    None => resp,
                };
                noise.fill(sweep, i, &mut gumbel);
                self.assignments[i] = gumbel_argmax(probs.probs(), &gumbel);
            }
            report.regularized = self.update_parameters(latents)?;
            report.sweeps += 1;
        }
        report.degenerate = self.degenerate;
        Ok(report)
    }

    /// Sets every component to its posterior expectation given the current
    /// assignments. Returns how many components needed a ridge.
    fn update_parameters(&mut self, latents: &[Vec<f64>]) -> Result<usize> {
        let n = latents.len();
        let mut counts = vec![0usize; self.classes];
        for &k in &self.assignments {
            counts[k] += 1;
        }
        let mut regularized = 0;
        let mut components = Vec::with_capacity(self.classes);
        for k in 0..self.classes {
            let members = latents
                .iter()
                .zip(&self.assignments)
                .filter(|(_, a)| **a == k)
                .map(|(x, _)| x.as_slice());
            let post = self.prior.posterior(members);
            let mut cov = &post.scale / post.dof;
            let ridge = counts[k] < self.dim + 1;
            if ridge {
                cov += DMatrix::identity(self.dim, self.dim) * self.hyper.ridge;
                regularized += 1;
            }
            let weight = (counts[k] as f64 + 1.0) / (n as f64 + self.classes as f64);
            let mut c = Component::new(weight, post.mean.clone(), cov, self.hyper.ridge)?;
            c.regularized |= ridge;
            components.push(c);
            self.posteriors[k] = post;
        }
        self.components = components;
        Ok(regularized)
    }

    /// Per-datum mean of the currently assigned component.
    pub fn component_means(&self) -> Payload {
        Payload::GaussianMeans(
            self.assignments
                .iter()
                .map(|k| self.components[*k].mean.iter().copied().collect())
                .collect(),
        )
    }

    /// Responsibilities for every datum, as a categorical message.
    pub fn class_posteriors(&self, latents: &[Vec<f64>]) -> Result<Payload> {
        Ok(Payload::CategoricalPerDatum(
            latents
                .iter()
                .map(|x| self.responsibilities(x))
                .collect::<Result<_>>()?,
        ))
    }

    pub fn checkpoint(&self) -> GmmCheckpoint {
        GmmCheckpoint {
            classes: self.classes,
            dim: self.dim,
            seed: self.seed,
            hyper: self.hyper.clone(),
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean.iter().copied().collect()).collect(),
            covariances: self
                .components
                .iter()
                .map(|c| c.cov.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            assignments: self.assignments.clone(),
        }
    }
}

/// Serializable snapshot of a fitted mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmCheckpoint {
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub hyper: GmmHyper,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub assignments: Vec<usize>,
}
