//! A small seeded decoder-only transformer with residual-stream steering.
//!
//! Each block is pre-norm: `h_res = h + ATTN(norm(h))`,
//! `h' = h_res + FFN(norm(h_res))`, and the output is `norm(h^L) Wᵀ`.
//! Attention is single-head and causal; the feed-forward uses GELU. There is
//! no positional encoding. Hidden states are stored with one row per position.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::numeric::{log_softmax, softmax};

pub const LAYERNORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Rmsnorm,
    Layernorm,
}

/// `rmsnorm: √d · x/‖x‖ ⊙ γ`; `layernorm: (x − mean)/√(var + 1e-6) ⊙ γ`.
pub fn norm(x: &[f64], gamma: &[f64], kind: NormKind) -> Result<Vec<f64>> {
    norm_with_eps(x, gamma, kind, LAYERNORM_EPS)
}

fn norm_with_eps(x: &[f64], gamma: &[f64], kind: NormKind, eps: f64) -> Result<Vec<f64>> {
    if x.len() != gamma.len() || x.is_empty() {
        return Err(Error::validation(format!(
            "norm input has length {}, gain has length {}",
            x.len(),
            gamma.len()
        )));
    }
    let d = x.len() as f64;
    match kind {
        NormKind::Rmsnorm => {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::domain(format!("rmsnorm of a vector with norm {n}")));
            }
            Ok(x.iter().zip(gamma).map(|(v, g)| d.sqrt() * v / n * g).collect())
        }
        NormKind::Layernorm => {
            let mean = x.iter().sum::<f64>() / d;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let denom = (var + eps).sqrt();
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::domain(format!("layernorm of a vector with variance {var}")));
            }
            Ok(x.iter().zip(gamma).map(|(v, g)| (v - mean) / denom * g).collect())
        }
    }
}

fn norm_rows(m: &DMatrix<f64>, gamma: &[f64], kind: NormKind) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        let n = norm(&row, gamma, kind)?;
        for (c, v) in n.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // √(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerShape {
    pub layers: usize,
    pub dim: usize,
    pub vocab: usize,
    pub seq_len: usize,
    #[serde(default)]
    pub norm: NormKind,
}

impl Default for TransformerShape {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 16,
            vocab: 50,
            seq_len: 8,
            norm: NormKind::Rmsnorm,
        }
    }
}

impl TransformerShape {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.vocab == 0 || self.seq_len == 0 {
            return Err(Error::validation("transformer dim, vocab and seq_len must be positive"));
        }
        if self.norm == NormKind::Layernorm && self.dim < 2 {
            return Err(Error::validation("layernorm needs dim >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    /// d × 4d
    pub w1: DMatrix<f64>,
    /// 4d × d
    pub w2: DMatrix<f64>,
    pub gamma_attn: Vec<f64>,
    pub gamma_ffn: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub shape: TransformerShape,
    pub seed: u64,
    /// V × d token embedding.
    pub embed: DMatrix<f64>,
    /// V × d unembedding; logits are `norm(h) Wᵀ`.
    pub unembed: DMatrix<f64>,
    pub blocks: Vec<Block>,
    pub gamma_final: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    // Row-major fill so the draw order does not depend on storage layout.
    let vals: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &vals)
}

fn gains(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let g: f64 = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
            if g == 0.0 { 1.0 } else { g }
        })
        .collect()
}

impl TransformerParams {
    /// Deterministic weights: Gaussian with variance `1/fan_in` for linear
    /// maps, unit variance for the embedding, gains `1 + 0.1·N(0,1)`.
    pub fn from_seed(shape: TransformerShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.dim;
        let s = 1.0 / (d as f64).sqrt();
        let embed = gaussian(&mut rng, shape.vocab, d, 1.0);
        let blocks = (0..shape.layers)
            .map(|_| Block {
                wq: gaussian(&mut rng, d, d, s),
                wk: gaussian(&mut rng, d, d, s),
                wv: gaussian(&mut rng, d, d, s),
                wo: gaussian(&mut rng, d, d, s),
                w1: gaussian(&mut rng, d, 4 * d, s),
                w2: gaussian(&mut rng, 4 * d, d, 0.5 * s),
                gamma_attn: gains(&mut rng, d),
                gamma_ffn: gains(&mut rng, d),
            })
            .collect();
        let gamma_final = gains(&mut rng, d);
        let unembed = gaussian(&mut rng, shape.vocab, d, s);
        Ok(Self {
            shape,
            seed,
            embed,
            unembed,
            blocks,
            gamma_final,
        })
    }

    pub fn with_norm(mut self, kind: NormKind) -> Result<Self> {
        self.shape.norm = kind;
        self.shape.validate()?;
        Ok(self)
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.shape.seq_len {
            return Err(Error::validation(format!(
                "prompt length {} outside 1..={}",
                tokens.len(),
                self.shape.seq_len
            )));
        }
        for &t in tokens {
            check_index("vocabulary", t, self.shape.vocab)?;
        }
        Ok(())
    }

    fn embed_tokens(&self, tokens: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(tokens.len(), self.shape.dim, |r, c| self.embed[(tokens[r], c)])
    }

    fn attention(&self, b: &Block, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (q, k, v) = (x * &b.wq, x * &b.wk, x * &b.wv);
        let scale = 1.0 / (self.shape.dim as f64).sqrt();
        let t = x.nrows();
        let scores = &q * k.transpose();
        let mut weights = DMatrix::zeros(t, t);
        for r in 0..t {
            let row: Vec<f64> = (0..=r).map(|c| scores[(r, c)] * scale).collect();
            for (c, w) in softmax(&row).into_iter().enumerate() {
                weights[(r, c)] = w;
            }
        }
        weights * v * &b.wo
    }

    fn feed_forward(&self, b: &Block, x: &DMatrix<f64>) -> DMatrix<f64> {
        (x * &b.w1).map(gelu) * &b.w2
    }

    fn block(&self, b: &Block, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.attention(b, &norm_rows(h, &b.gamma_attn, self.shape.norm)?);
        let h_res = h + a;
        let f = self.feed_forward(b, &norm_rows(&h_res, &b.gamma_ffn, self.shape.norm)?);
        Ok(h_res + f)
    }

    /// Residual streams `h^(0), ..., h^(L)` with steering added to `h^(layer)`.
    fn residuals(&self, tokens: &[usize], steer: Option<(usize, &DVector<f64>, f64, SteerPositions)>) -> Result<Vec<DMatrix<f64>>> {
        self.check_tokens(tokens)?;
        let mut h = self.embed_tokens(tokens);
        let mut out = Vec::with_capacity(self.shape.layers + 1);
        for l in 0..=self.shape.layers {
            if let Some((layer, v, alpha, pos)) = steer {
                if l == layer && alpha != 0.0 {
                    let rows = match pos {
                        SteerPositions::All => 0..h.nrows(),
                        SteerPositions::Last => h.nrows() - 1..h.nrows(),
                    };
                    for r in rows {
                        for c in 0..h.ncols() {
                            h[(r, c)] += alpha * v[c];
                        }
                    }
                }
            }
            out.push(h.clone());
            if l < self.shape.layers {
                h = self.block(&self.blocks[l], &h)?;
            }
        }
        Ok(out)
    }

    fn readout(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(norm_rows(h, &self.gamma_final, self.shape.norm)? * self.unembed.transpose())
    }

    /// Residual stream entering block `layer` (`layer = L` is the final one).
    pub fn hidden(&self, tokens: &[usize], layer: usize) -> Result<DMatrix<f64>> {
        check_index("layers", layer, self.shape.layers + 1)?;
        Ok(self.residuals(tokens, None)?.swap_remove(layer))
    }

    /// Logits, one row per position.
    pub fn forward(&self, tokens: &[usize]) -> Result<DMatrix<f64>> {
        let hs = self.residuals(tokens, None)?;
        self.readout(hs.last().expect("at least the embedding"))
    }

    fn check_steer(&self, layer: usize, v: &DVector<f64>) -> Result<()> {
        check_index("layers", layer, self.shape.layers + 1)?;
        if v.len() != self.shape.dim {
            return Err(Error::validation(format!(
                "steering vector has length {}, model width is {}",
                v.len(),
                self.shape.dim
            )));
        }
        Ok(())
    }

    /// Logits with `α v` added to `h^(layer)` at the selected positions.
    /// `layer` may equal `L`, steering the stream just before the final norm.
    /// `α = 0` skips the addition, so the result equals [`Self::forward`] bit for bit.
    pub fn forward_steered(
        &self,
        tokens: &[usize],
        layer: usize,
        v: &DVector<f64>,
        alpha: f64,
        positions: SteerPositions,
    ) -> Result<DMatrix<f64>> {
        self.check_steer(layer, v)?;
        let hs = self.residuals(tokens, Some((layer, v, alpha, positions)))?;
        self.readout(hs.last().expect("at least the embedding"))
    }

    /// `lim_{α → ±∞}` of the steered logits: `norm(±v) Wᵀ`. For layernorm
    /// the stabilizer is dropped since `α v` dominates it in the limit.
    pub fn limit_logits(&self, v: &DVector<f64>, direction: Sign) -> Result<Vec<f64>> {
        if v.len() != self.shape.dim {
            return Err(Error::validation("steering vector length differs from model width"));
        }
        if v.iter().all(|x| *x == 0.0) {
            return Err(Error::domain("limit logits need a nonzero steering vector"));
        }
        let s = match direction {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        };
        let x: Vec<f64> = v.iter().map(|c| s * c).collect();
        let n = norm_with_eps(&x, &self.gamma_final, self.shape.norm, 0.0)?;
        Ok((0..self.shape.vocab)
            .map(|z| (0..self.shape.dim).map(|c| self.unembed[(z, c)] * n[c]).sum())
            .collect())
    }

    /// Difference of means of position-averaged `h^(layer)` between two
    /// prompt sets.
    pub fn steering_vector_from_prompts(
        &self,
        layer: usize,
        positive: &[Vec<usize>],
        negative: &[Vec<usize>],
    ) -> Result<DVector<f64>> {
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::validation("prompt sets must be non-empty"));
        }
        let mean = |set: &[Vec<usize>]| -> Result<DVector<f64>> {
            let mut acc = DVector::zeros(self.shape.dim);
            for p in set {
                let h = self.hidden(p, layer)?;
                acc += h.row_mean().transpose();
            }
            Ok(acc / set.len() as f64)
        };
        Ok(mean(positive)? - mean(negative)?)
    }

    /// Mean next-token cross-entropy over all positions but the last.
    pub fn corpus_cross_entropy(
        &self,
        corpus: &[Vec<usize>],
        steer: Option<(usize, &DVector<f64>, f64, SteerPositions)>,
    ) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in corpus {
            let logits = match steer {
                Some((layer, v, a, pos)) => self.forward_steered(seq, layer, v, a, pos)?,
                None => self.forward(seq)?,
            };
            for t in 0..seq.len().saturating_sub(1) {
                let row: Vec<f64> = logits.row(t).iter().copied().collect();
                total -= log_softmax(&row)[seq[t + 1]];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::validation("corpus has no next-token targets"));
        }
        Ok(total / count as f64)
    }

    /// Gradient descent on the unembedding only, with every other weight
    /// frozen. The final-norm features are fixed, so this is a convex
    /// softmax regression. Returns the loss before each step and at the end.
    pub fn fit_unembedding(&mut self, corpus: &[Vec<usize>], lr: f64, steps: usize) -> Result<Vec<f64>> {
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        for seq in corpus {
            let hs = self.residuals(seq, None)?;
            let x = norm_rows(hs.last().expect("embedding"), &self.gamma_final, self.shape.norm)?;
            for t in 0..seq.len().saturating_sub(1) {
                feats.push(x.row(t).transpose());
                targets.push(seq[t + 1]);
            }
        }
        if feats.is_empty() {
            return Err(Error::validation("corpus has no next-token targets"));
        }
        let n = feats.len() as f64;
        let mut losses = Vec::with_capacity(steps + 1);
        for step in 0..=steps {
            let mut grad = DMatrix::zeros(self.shape.vocab, self.shape.dim);
            let mut loss = 0.0;
            for (x, &y) in feats.iter().zip(&targets) {
                let logits = &self.unembed * x;
                let ls = log_softmax(logits.as_slice());
                loss -= ls[y];
                let mut g: DVector<f64> = DVector::from_iterator(ls.len(), ls.iter().map(|l| l.exp()));
                g[y] -= 1.0;
                grad += g * x.transpose();
            }
            loss /= n;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            losses.push(loss);
            if step < steps {
                self.unembed -= grad * (lr / n);
            }
        }
        Ok(losses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerPositions {
    #[default]
    All,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(alpha: f64) -> Self {
        if alpha < 0.0 { Sign::Minus } else { Sign::Plus }
    }
}

/// Random prompts with tokens drawn from `pool`.
pub fn sample_prompts(pool: &[usize], count: usize, len: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if pool.is_empty() || len == 0 {
        return Err(Error::validation("prompt pool and length must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect())
        .collect())
}

/// Sequences from a Markov chain over `groups` contiguous token blocks: the
/// next token stays in the current block with probability `stay`, otherwise
/// it is uniform over the vocabulary.
pub fn synthetic_corpus(
    vocab: usize,
    groups: usize,
    sequences: usize,
    len: usize,
    stay: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if groups == 0 || !vocab.is_multiple_of(groups) || len == 0 {
        return Err(Error::validation(format!(
            "corpus needs groups dividing vocab ({vocab} / {groups}) and len > 0"
        )));
    }
    if !(0.0..=1.0).contains(&stay) {
        return Err(Error::validation("stay probability must lie in [0, 1]"));
    }
    let size = vocab / groups;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..sequences)
        .map(|_| {
            let mut seq = vec![rng.random_range(0..vocab)];
            while seq.len() < len {
                let cur = *seq.last().expect("non-empty");
                let next = if rng.random::<f64>() < stay {
                    (cur / size) * size + rng.random_range(0..size)
                } else {
                    rng.random_range(0..vocab)
                };
                seq.push(next);
            }
            seq
        })
        .collect())
}

/// One row of a remainder probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub alpha: f64,
    /// `max |R(α)|` with `R(α) = h^(L,α) − h^(ℓ) − α v` over steered rows.
    pub sup_residual: f64,
    /// `max_t ‖softmax(y_t(α)) − softmax(limit)‖_∞` over steered rows.
    pub softmax_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderProbe {
    pub rows: Vec<ProbeRow>,
    /// `sup_residual` at the largest |α| divided by its value at the middle
    /// grid entry.
    pub ratio: f64,
}

impl RemainderProbe {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.sup_residual).fold(0.0, f64::max)
    }
}

pub fn remainder_bound_probe(
    params: &TransformerParams,
    tokens: &[usize],
    layer: usize,
    v: &DVector<f64>,
    alphas: &[f64],
    positions: SteerPositions,
) -> Result<RemainderProbe> {
    params.check_steer(layer, v)?;
    if alphas.is_empty() {
        return Err(Error::validation("probe grid is empty"));
    }
    let base = params.residuals(tokens, None)?;
    let h_l = &base[layer];
    let steered_rows = match positions {
        SteerPositions::All => 0..tokens.len(),
        SteerPositions::Last => tokens.len() - 1..tokens.len(),
    };
    let mut rows = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let hs = params.residuals(tokens, Some((layer, v, a, positions)))?;
        let top = hs.last().expect("embedding");
        let mut sup: f64 = 0.0;
        for r in 0..top.nrows() {
            let shift = if steered_rows.contains(&r) { a } else { 0.0 };
            for c in 0..top.ncols() {
                sup = sup.max((top[(r, c)] - h_l[(r, c)] - shift * v[c]).abs());
            }
        }
        let logits = params.readout(top)?;
        let gap = if a == 0.0 {
            f64::NAN
        } else {
            let lim = softmax(&params.limit_logits(v, Sign::of(a))?);
            steered_rows
                .clone()
                .map(|r| {
                    let row: Vec<f64> = logits.row(r).iter().copied().collect();
                    softmax(&row)
                        .iter()
                        .zip(&lim)
                        .map(|(p, q)| (p - q).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        rows.push(ProbeRow {
            alpha: a,
            sup_residual: sup,
            softmax_gap: gap,
        });
    }
    let far = rows
        .iter()
        .max_by(|x, y| x.alpha.abs().total_cmp(&y.alpha.abs()))
        .expect("non-empty")
        .sup_residual;
    let mid = rows[rows.len() / 2].sup_residual;
    let ratio = if mid == 0.0 {
        if far == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        far / mid
    };
    Ok(RemainderProbe { rows, ratio })
}

/// `max ‖softmax(y_t(α)) − softmax(limit)‖_∞` over the steered rows.
pub fn softmax_gap(
    params: &TransformerParams,
    tokens: &[usize],
    layer: usize,
    v: &DVector<f64>,
    alpha: f64,
    positions: SteerPositions,
) -> Result<f64> {
    let probe = remainder_bound_probe(params, tokens, layer, v, &[alpha], positions)?;
    Ok(probe.rows[0].softmax_gap)
}
