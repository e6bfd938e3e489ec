//! Multilayer-perceptron variational autoencoder with a per-datum prior mean.
//!
//! The encoder maps an image to a diagonal Gaussian `q(z | x)`, the decoder
//! maps a latent to Bernoulli pixel logits. Unlike a textbook VAE the prior is
//! `N(mu_i, I)`, where `mu_i` is supplied from outside (the mean of the mixture
//! component image `i` is currently assigned to). With every `mu_i = 0` this is
//! the standard objective.
//!
//! ```text
//! x ──► relu(W1 x + b1) ──► mean = Wm h + bm
//!                        └─► logvar = Wv h + bv
//! z = mean + exp(logvar / 2) * eps
//! z ──► relu(W3 z + b3) ──► logits = W4 h + b4
//! ```
//!
//! Gradients are computed by hand; `elbo_gradient` is checked against
//! central finite differences in the test suite.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use multicat_core::rng::derive_seed;
use multicat_core::Payload;

use crate::error::{ModuleError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl VaeArch {
    /// 784 → 128 → 10, the image model of the reference pipeline.
    pub const MNIST: VaeArch = VaeArch {
        input: 784,
        hidden: 128,
        latent: 10,
    };
}

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle: true,
        }
    }
}

/// Parameter tensor names, in storage order.
pub const PARAM_NAMES: [&str; 10] = [
    "enc_hidden.weight",
    "enc_hidden.bias",
    "enc_mean.weight",
    "enc_mean.bias",
    "enc_logvar.weight",
    "enc_logvar.bias",
    "dec_hidden.weight",
    "dec_hidden.bias",
    "dec_out.weight",
    "dec_out.bias",
];

/// Network weights. Biases are stored as `n × 1` matrices so that all ten
/// tensors share one type.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub tensors: [DMatrix<f64>; 10],
}

const W1: usize = 0;
const B1: usize = 1;
const WM: usize = 2;
const BM: usize = 3;
const WV: usize = 4;
const BV: usize = 5;
const W3: usize = 6;
const B3: usize = 7;
const W4: usize = 8;
const B4: usize = 9;

impl VaeParams {
    pub fn zeros(arch: VaeArch) -> Self {
        let VaeArch {
            input: i,
            hidden: h,
            latent: l,
        } = arch;
        Self {
            tensors: [
                DMatrix::zeros(h, i),
                DMatrix::zeros(h, 1),
                DMatrix::zeros(l, h),
                DMatrix::zeros(l, 1),
                DMatrix::zeros(l, h),
                DMatrix::zeros(l, 1),
                DMatrix::zeros(h, l),
                DMatrix::zeros(h, 1),
                DMatrix::zeros(i, h),
                DMatrix::zeros(i, 1),
            ],
        }
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for both weights and biases.
    pub fn init<R: Rng + ?Sized>(arch: VaeArch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for pair in 0..5 {
            let fan_in = p.tensors[2 * pair].ncols() as f64;
            let bound = 1.0 / fan_in.sqrt();
            for t in [2 * pair, 2 * pair + 1] {
                for x in p.tensors[t].iter_mut() {
                    *x = rng.gen_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations of one forward pass, kept for backpropagation.
struct Forward {
    pre1: DMatrix<f64>,
    h1: DMatrix<f64>,
    mean: DMatrix<f64>,
    logvar: DMatrix<f64>,
    z: DMatrix<f64>,
    pre3: DMatrix<f64>,
    h2: DMatrix<f64>,
    logits: DMatrix<f64>,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| x.max(0.0))
}

fn affine(w: &DMatrix<f64>, b: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = w * x;
    for mut col in out.column_iter_mut() {
        col += b.column(0);
    }
    out
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Closed-form `KL(N(mean, diag(exp(logvar))) || N(prior_mean, I))`.
pub fn gaussian_kl(mean: &[f64], logvar: &[f64], prior_mean: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .zip(prior_mean)
        .map(|((m, lv), mu)| lv.exp() + (m - mu) * (m - mu) - 1.0 - lv)
        .sum::<f64>()
}

/// `KL(N(mean, diag(exp(logvar))) || N(0, I))`, the standard-prior term.
pub fn standard_normal_kl(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + (m - 0.0) * (m - 0.0) - 1.0 - lv)
        .sum::<f64>()
}

/// Bernoulli log-likelihood of `target` under `logits`.
pub fn bernoulli_log_likelihood(target: &[f64], logits: &[f64]) -> f64 {
    target
        .iter()
        .zip(logits)
        .map(|(x, l)| x * l - softplus(*l))
        .sum()
}

fn forward(p: &VaeParams, x: &DMatrix<f64>, noise: &DMatrix<f64>) -> Forward {
    let t = &p.tensors;
    let pre1 = affine(&t[W1], &t[B1], x);
    let h1 = relu(&pre1);
    let mean = affine(&t[WM], &t[BM], &h1);
    let logvar = affine(&t[WV], &t[BV], &h1);
    let mut z = mean.clone();
    for ((zv, lv), e) in z.iter_mut().zip(logvar.iter()).zip(noise.iter()) {
        *zv += (0.5 * lv).exp() * e;
    }
    let pre3 = affine(&t[W3], &t[B3], &z);
    let h2 = relu(&pre3);
    let logits = affine(&t[W4], &t[B4], &h2);
    Forward {
        pre1,
        h1,
        mean,
        logvar,
        z,
        pre3,
        h2,
        logits,
    }
}

/// Per-column ELBO of a forward pass.
fn column_elbos(f: &Forward, x: &DMatrix<f64>, prior: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let ll = bernoulli_log_likelihood(x.column(j).as_slice(), f.logits.column(j).as_slice());
            let kl = gaussian_kl(
                f.mean.column(j).as_slice(),
                f.logvar.column(j).as_slice(),
                prior.column(j).as_slice(),
            );
            ll - kl
        })
        .collect()
}

/// Gradient of `scale * sum_j elbo_j` with respect to every tensor.
fn backward(
    p: &VaeParams,
    f: &Forward,
    x: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    prior: &DMatrix<f64>,
    scale: f64,
) -> VaeParams {
    let t = &p.tensors;
    let mut d_logits = x.clone();
    for (d, l) in d_logits.iter_mut().zip(f.logits.iter()) {
        *d = scale * (*d - sigmoid(*l));
    }
    let mut d_pre3 = t[W4].transpose() * &d_logits;
    for (d, a) in d_pre3.iter_mut().zip(f.pre3.iter()) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    let d_z = t[W3].transpose() * &d_pre3;

    let mut d_mean = d_z.clone();
    let mut d_logvar = d_z;
    for i in 0..d_mean.len() {
        let m = f.mean[i];
        let lv = f.logvar[i];
        d_mean[i] -= scale * (m - prior[i]);
        d_logvar[i] = d_logvar[i] * noise[i] * 0.5 * (0.5 * lv).exp() - scale * 0.5 * (lv.exp() - 1.0);
    }
    let mut d_pre1 = t[WM].transpose() * &d_mean + t[WV].transpose() * &d_logvar;
    for (d, a) in d_pre1.iter_mut().zip(f.pre1.iter()) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }

    let row_sums = |m: &DMatrix<f64>| {
        let sums = m.column_sum();
        DMatrix::from_column_slice(sums.len(), 1, sums.as_slice())
    };
    VaeParams {
        tensors: [
            &d_pre1 * x.transpose(),
            row_sums(&d_pre1),
            &d_mean * f.h1.transpose(),
            row_sums(&d_mean),
            &d_logvar * f.h1.transpose(),
            row_sums(&d_logvar),
            &d_pre3 * f.z.transpose(),
            row_sums(&d_pre3),
            &d_logits * f.h2.transpose(),
            row_sums(&d_logits),
        ],
    }
}

/// ELBO of a single image for a fixed reparameterization noise vector.
pub fn elbo_with_noise(p: &VaeParams, image: &[f64], prior_mean: &[f64], noise: &[f64]) -> f64 {
    let x = DMatrix::from_column_slice(image.len(), 1, image);
    let e = DMatrix::from_column_slice(noise.len(), 1, noise);
    let prior = DMatrix::from_column_slice(prior_mean.len(), 1, prior_mean);
    column_elbos(&forward(p, &x, &e), &x, &prior)[0]
}

/// ELBO with the standard normal prior, computed through the standard KL.
pub fn standard_elbo_with_noise(p: &VaeParams, image: &[f64], noise: &[f64]) -> f64 {
    let x = DMatrix::from_column_slice(image.len(), 1, image);
    let e = DMatrix::from_column_slice(noise.len(), 1, noise);
    let f = forward(p, &x, &e);
    bernoulli_log_likelihood(image, f.logits.as_slice())
        - standard_normal_kl(f.mean.as_slice(), f.logvar.as_slice())
}

/// Analytic gradient of [`elbo_with_noise`] with respect to the parameters.
pub fn elbo_gradient(p: &VaeParams, image: &[f64], prior_mean: &[f64], noise: &[f64]) -> VaeParams {
    let x = DMatrix::from_column_slice(image.len(), 1, image);
    let e = DMatrix::from_column_slice(noise.len(), 1, noise);
    let prior = DMatrix::from_column_slice(prior_mean.len(), 1, prior_mean);
    let f = forward(p, &x, &e);
    backward(p, &f, &x, &e, &prior, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
struct Adam {
    m: VaeParams,
    v: VaeParams,
    t: u64,
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean ELBO over the epoch's minibatches (as seen during the updates).
    pub epoch_elbo: Vec<f64>,
    pub steps: usize,
}

/// Supplies reparameterization noise for one minibatch.
pub trait NoiseSource {
    /// Fills `out` (latent × batch, column-major) for the data points in `indices`.
    fn fill(&mut self, epoch: usize, indices: &[usize], out: &mut DMatrix<f64>);
}

/// Standard normal draws from a seeded stream.
pub struct SeededNoise(pub ChaCha8Rng);

impl NoiseSource for SeededNoise {
    fn fill(&mut self, _epoch: usize, _indices: &[usize], out: &mut DMatrix<f64>) {
        for x in out.iter_mut() {
            *x = self.0.sample(StandardNormal);
        }
    }
}

impl<F: FnMut(usize, &[usize], &mut DMatrix<f64>)> NoiseSource for F {
    fn fill(&mut self, epoch: usize, indices: &[usize], out: &mut DMatrix<f64>) {
        self(epoch, indices, out)
    }
}

/// A VAE together with its optimizer state and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeState {
    pub arch: VaeArch,
    pub params: VaeParams,
    adam: Adam,
    pub seed: u64,
}

impl VaeState {
    pub fn new(arch: VaeArch, seed: u64) -> Self {
        let mut s = Self {
            arch,
            params: VaeParams::zeros(arch),
            adam: Adam {
                m: VaeParams::zeros(arch),
                v: VaeParams::zeros(arch),
                t: 0,
            },
            seed,
        };
        s.reset();
        s
    }

    /// Restores the exact initial state derived from the seed.
    pub fn reset(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "vae/init"));
        self.params = VaeParams::init(self.arch, &mut rng);
        self.adam = Adam {
            m: VaeParams::zeros(self.arch),
            v: VaeParams::zeros(self.arch),
            t: 0,
        };
    }

    pub fn with_params(arch: VaeArch, params: VaeParams, seed: u64) -> Self {
        let mut s = Self::new(arch, seed);
        s.params = params;
        s
    }

    fn check_image(&self, image: &[f64]) -> Result<()> {
        if image.len() != self.arch.input {
            return Err(ModuleError::Dimension(format!(
                "image has {} pixels, expected {}",
                image.len(),
                self.arch.input
            )));
        }
        if let Some(v) = image.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(ModuleError::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64], what: &str) -> Result<()> {
        if z.len() != self.arch.latent {
            return Err(ModuleError::Dimension(format!(
                "{what} has dimension {}, expected {}",
                z.len(),
                self.arch.latent
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ModuleError::Input(format!("{what} is not finite")));
        }
        Ok(())
    }

    /// Encoder mean and log-variance of `q(z | image)`.
    pub fn encode(&self, image: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_image(image)?;
        let t = &self.params.tensors;
        let x = DMatrix::from_column_slice(image.len(), 1, image);
        let h = relu(&affine(&t[W1], &t[B1], &x));
        let mean = affine(&t[WM], &t[BM], &h);
        let logvar = affine(&t[WV], &t[BV], &h);
        Ok((mean.as_slice().to_vec(), logvar.as_slice().to_vec()))
    }

    /// Pixel means `sigmoid(logits)` for a latent point.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z, "latent")?;
        let t = &self.params.tensors;
        let zm = DMatrix::from_column_slice(z.len(), 1, z);
        let h = relu(&affine(&t[W3], &t[B3], &zm));
        Ok(affine(&t[W4], &t[B4], &h).iter().map(|l| sigmoid(*l)).collect())
    }

    /// One-sample Monte-Carlo ELBO under the prior `N(prior_mean, I)`.
    pub fn elbo<R: Rng + ?Sized>(&self, image: &[f64], prior_mean: &[f64], rng: &mut R) -> Result<f64> {
        self.check_image(image)?;
        self.check_latent(prior_mean, "prior mean")?;
        let noise: Vec<f64> = (0..self.arch.latent).map(|_| rng.sample(StandardNormal)).collect();
        Ok(elbo_with_noise(&self.params, image, prior_mean, &noise))
    }

    /// Encoder means for every image, as a `z1`-style message payload.
    pub fn emit_latents(&self, images: &DMatrix<f64>) -> Result<Payload> {
        if images.nrows() != self.arch.input {
            return Err(ModuleError::Dimension(format!(
                "images have {} rows, expected {}",
                images.nrows(),
                self.arch.input
            )));
        }
        let t = &self.params.tensors;
        let h = relu(&affine(&t[W1], &t[B1], images));
        let mean = affine(&t[WM], &t[BM], &h);
        Ok(Payload::GaussianMeans(
            mean.column_iter().map(|c| c.iter().copied().collect()).collect(),
        ))
    }

    /// Mean ELBO over a dataset with noise from `rng`.
    pub fn mean_elbo<R: Rng + ?Sized>(
        &self,
        images: &DMatrix<f64>,
        prior_means: &DMatrix<f64>,
        rng: &mut R,
    ) -> f64 {
        let mut noise = DMatrix::zeros(self.arch.latent, images.ncols());
        for x in noise.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let f = forward(&self.params, images, &noise);
        let elbos = column_elbos(&f, images, prior_means);
        elbos.iter().sum::<f64>() / elbos.len().max(1) as f64
    }

    /// Re-initializes and then maximizes the mean ELBO by minibatch Adam.
    ///
    /// `images` is `input × N` and `prior_means` is `latent × N`, one column
    /// per data point.
    pub fn train(
        &mut self,
        images: &DMatrix<f64>,
        prior_means: &DMatrix<f64>,
        opts: &TrainOptions,
        noise: &mut dyn NoiseSource,
    ) -> Result<TrainLog> {
        let n = images.ncols();
        if images.nrows() != self.arch.input {
            return Err(ModuleError::Dimension(format!(
                "images have {} rows, expected {}",
                images.nrows(),
                self.arch.input
            )));
        }
        if prior_means.ncols() != n || prior_means.nrows() != self.arch.latent {
            return Err(ModuleError::Dimension(format!(
                "prior means are {}×{}, expected {}×{n}",
                prior_means.nrows(),
                prior_means.ncols(),
                self.arch.latent
            )));
        }
        if opts.batch_size == 0 {
            return Err(ModuleError::Input("batch size must be positive".into()));
        }
        self.reset();
        let mut log = TrainLog::default();
        if n == 0 {
            return Ok(log);
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "vae/shuffle"));

        for epoch in 0..opts.epochs {
            if opts.shuffle {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
            }
            let mut total = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let b = chunk.len();
                let x = images.select_columns(chunk);
                let prior = prior_means.select_columns(chunk);
                let mut eps = DMatrix::zeros(self.arch.latent, b);
                noise.fill(epoch, chunk, &mut eps);
                let f = forward(&self.params, &x, &eps);
                total += column_elbos(&f, &x, &prior).iter().sum::<f64>();
                let grad = backward(&self.params, &f, &x, &eps, &prior, 1.0 / b as f64);
                self.adam_ascent(&grad, opts);
                log.steps += 1;
            }
            let mean = total / n as f64;
            if !mean.is_finite() || !self.params.is_finite() {
                return Err(ModuleError::Diverged { epoch, value: mean });
            }
            log.epoch_elbo.push(mean);
        }
        Ok(log)
    }

    fn adam_ascent(&mut self, grad: &VaeParams, opts: &TrainOptions) {
        let a = &mut self.adam;
        a.t += 1;
        let t = a.t as i32;
        let c1 = 1.0 - opts.beta1.powi(t);
        let c2 = 1.0 - opts.beta2.powi(t);
        for k in 0..10 {
            let p = self.params.tensors[k].as_mut_slice();
            let g = grad.tensors[k].as_slice();
            let m = a.m.tensors[k].as_mut_slice();
            let v = a.v.tensors[k].as_mut_slice();
            for i in 0..p.len() {
                m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
                v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] += opts.learning_rate * m_hat / (v_hat.sqrt() + opts.epsilon);
            }
        }
    }

    /// Named tensors with shapes, for checkpoints.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        PARAM_NAMES
            .iter()
            .zip(self.params.tensors.iter())
            .map(|(name, t)| NamedTensor {
                name: (*name).to_owned(),
                shape: vec![t.nrows(), t.ncols()],
                data: t.transpose().as_slice().to_vec(),
            })
            .collect()
    }

    pub fn from_named_tensors(arch: VaeArch, seed: u64, tensors: &[NamedTensor]) -> Result<Self> {
        let mut params = VaeParams::zeros(arch);
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let t = tensors
                .iter()
                .find(|t| t.name == *name)
                .ok_or_else(|| ModuleError::Input(format!("checkpoint lacks `{name}`")))?;
            let target = &params.tensors[k];
            if t.shape != [target.nrows(), target.ncols()] || t.data.len() != target.len() {
                return Err(ModuleError::Dimension(format!(
                    "`{name}` has shape {:?}, expected [{}, {}]",
                    t.shape,
                    target.nrows(),
                    target.ncols()
                )));
            }
            params.tensors[k] = DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data);
        }
        Ok(Self::with_params(arch, params, seed))
    }
}

/// A row-major tensor with its shape, as written to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Column-major `rows × n` matrix from per-datum vectors.
pub fn columns(rows: usize, data: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if let Some((i, r)) = data.iter().enumerate().find(|(_, r)| r.len() != rows) {
        return Err(ModuleError::Dimension(format!(
            "datum {i} has length {}, expected {rows}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, data.len(), |r, c| data[c][r]))
}
