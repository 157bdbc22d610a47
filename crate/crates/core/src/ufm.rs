//! Unconstrained Features Model: logits `W h_j` for every distinct context,
//! with an exact constructive fit and full-batch gradient-descent training.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{check_index, Error, Result};
use crate::numeric::{log_softmax, softmax};

/// Decoder `W` (V x d) and context embeddings `H` (d x m).
#[derive(Debug, Clone, PartialEq)]
pub struct UfmParams {
    w: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl UfmParams {
    pub fn new(w: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::validation(format!(
                "decoder has {} columns but embeddings have dimension {}",
                w.ncols(),
                h.nrows()
            )));
        }
        Ok(Self { w, h })
    }

    pub fn zeros(vocab: usize, dim: usize, contexts: usize) -> Self {
        Self {
            w: DMatrix::zeros(vocab, dim),
            h: DMatrix::zeros(dim, contexts),
        }
    }

    pub fn decoder(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn embeddings_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.h
    }

    pub fn vocab_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn context_count(&self) -> usize {
        self.h.ncols()
    }

    pub fn embedding(&self, j: usize) -> DVector<f64> {
        self.h.column(j).into_owned()
    }

    /// `W h_j`.
    pub fn logits(&self, j: usize) -> Result<Vec<f64>> {
        check_index("contexts", j, self.context_count())?;
        Ok((&self.w * self.h.column(j)).as_slice().to_vec())
    }

    /// `W x` for an arbitrary embedding.
    pub fn decode(&self, x: &DVector<f64>) -> Vec<f64> {
        (&self.w * x).as_slice().to_vec()
    }

    pub fn to_doc(&self) -> UfmDoc {
        UfmDoc {
            vocab_size: self.vocab_size(),
            dim: self.dim(),
            contexts: self.context_count(),
            w: row_major(&self.w),
            h: row_major(&self.h),
        }
    }

    pub fn from_doc(doc: &UfmDoc) -> Result<Self> {
        let (v, d, m) = (doc.vocab_size, doc.dim, doc.contexts);
        if doc.w.len() != v * d || doc.h.len() != d * m {
            return Err(Error::validation(
                "matrix dump length does not match the declared shape",
            ));
        }
        Self::new(
            DMatrix::from_row_slice(v, d, &doc.w),
            DMatrix::from_row_slice(d, m, &doc.h),
        )
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// JSON matrix dump of [`UfmParams`]; both matrices row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfmDoc {
    #[serde(rename = "V")]
    pub vocab_size: usize,
    pub dim: usize,
    pub contexts: usize,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
}

/// `d = V`, `W = I`, `h_j = log p(.|c_j)`: softmax reproduces the dataset
/// law exactly.
pub fn analytic_perfect_fit(ds: &DatasetSpec) -> UfmParams {
    let v = ds.vocab_size();
    let m = ds.context_count();
    let h = DMatrix::from_fn(v, m, |z, j| ds.prob(j, z).ln());
    UfmParams {
        w: DMatrix::identity(v, v),
        h,
    }
}

fn check_shape(params: &UfmParams, ds: &DatasetSpec) -> Result<()> {
    if params.vocab_size() != ds.vocab_size() || params.context_count() != ds.context_count() {
        return Err(Error::validation(format!(
            "params shape (V={}, m={}) does not match dataset (V={}, m={})",
            params.vocab_size(),
            params.context_count(),
            ds.vocab_size(),
            ds.context_count()
        )));
    }
    Ok(())
}

/// Cross-entropy of a logit vector against context `j`'s law, through a
/// log-softmax.
pub(crate) fn context_ce(ds: &DatasetSpec, j: usize, logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .enumerate()
        .map(|(z, lp)| -ds.prob(j, z) * lp)
        .sum()
}

/// `-Σ_j π_j Σ_z p(z|c_j) log σ_z(W h_j)`.
pub fn cross_entropy(params: &UfmParams, ds: &DatasetSpec) -> Result<f64> {
    check_shape(params, ds)?;
    let logits = &params.w * &params.h;
    Ok(ds
        .context_weights()
        .iter()
        .enumerate()
        .map(|(j, pi)| pi * context_ce(ds, j, logits.column(j).as_slice()))
        .sum())
}

/// Gradients of the cross-entropy with respect to `W` and `H`.
pub fn cross_entropy_gradients(
    params: &UfmParams,
    ds: &DatasetSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shape(params, ds)?;
    let logits = &params.w * &params.h;
    let mut g = DMatrix::zeros(params.vocab_size(), params.context_count());
    for (j, pi) in ds.context_weights().iter().enumerate() {
        let s = softmax(logits.column(j).as_slice());
        for z in 0..params.vocab_size() {
            g[(z, j)] = pi * (s[z] - ds.prob(j, z));
        }
    }
    let grad_w = &g * params.h.transpose();
    let grad_h = params.w.transpose() * &g;
    Ok((grad_w, grad_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Embedding width; `None` means `d = V`.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "TrainConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "TrainConfig::default_steps")]
    pub steps: usize,
    #[serde(default = "TrainConfig::default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    fn default_lr() -> f64 {
        0.5
    }
    fn default_steps() -> usize {
        20_000
    }
    fn default_init_scale() -> f64 {
        0.01
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: None,
            learning_rate: Self::default_lr(),
            steps: Self::default_steps(),
            init_scale: Self::default_init_scale(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UfmParams,
    /// `losses[k]` is the cross-entropy after `k` steps (`steps + 1` entries).
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on `(W, H)` from a seeded Gaussian
/// initialization of scale `init_scale`.
pub fn train_gd(ds: &DatasetSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let v = ds.vocab_size();
    let m = ds.context_count();
    let d = cfg.dim.unwrap_or(v);
    if d == 0 {
        return Err(Error::validation("embedding width d must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::validation("learning rate must be positive and finite"));
    }
    if !(cfg.init_scale >= 0.0 && cfg.init_scale.is_finite()) {
        return Err(Error::validation("init scale must be non-negative and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sample = |rows, cols| {
        DMatrix::from_fn(rows, cols, |_, _| cfg.init_scale * normal.sample(&mut rng))
    };
    let w = sample(v, d);
    let h = sample(d, m);
    let mut params = UfmParams { w, h };

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let loss = cross_entropy(&params, ds)?;
    losses.push(loss);
    for step in 1..=cfg.steps {
        let (gw, gh) = cross_entropy_gradients(&params, ds)?;
        params.w -= cfg.learning_rate * gw;
        params.h -= cfg.learning_rate * gh;
        let loss = cross_entropy(&params, ds)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { params, losses })
}
