//! Steering-strength analysis on the perfectly fitted UFM.
//!
//! Everything here works through the tilted distribution
//! `σ_α(z) ∝ p(z|c_j) exp(α M(z))`: probability increases and their
//! derivatives, the expected log-odds `E[M](α)` and its variance, the unique
//! peak of each bump, concept-level increases with their logistic
//! decomposition, the cross-entropy penalty and the `α → ±∞` limits.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{check_index, Error, Result};
use crate::numeric::{bisect_increasing, log_sum_exp, polyfit, sigmoid, simpson, weighted_mean_var};
use crate::steering::{steered_logits, steered_probs_closed_form, LogOddsProfile};
use crate::ufm::{context_ce, UfmParams};

/// Direction of an infinite limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Plus,
    Minus,
}

fn check_token(ds: &DatasetSpec, z: usize) -> Result<()> {
    check_index("vocabulary", z, ds.vocab_size())
}

fn check_concept(ds: &DatasetSpec, concept: usize) -> Result<()> {
    check_index("concepts", concept, ds.partition().group_count())
}

/// `σ_α(z) - p(z|c_j)`.
pub fn delta_p(ds: &DatasetSpec, profile: &LogOddsProfile, j: usize, z: usize, alpha: f64) -> Result<f64> {
    check_token(ds, z)?;
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    Ok(s[z] - ds.prob(j, z))
}

/// `E_{Z ~ σ_α}[M(Z)]`.
pub fn expected_log_odds(ds: &DatasetSpec, profile: &LogOddsProfile, j: usize, alpha: f64) -> Result<f64> {
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    Ok(weighted_mean_var(&s, &profile.values).0)
}

/// `d/dα E[M](α) = Var_{Z ~ σ_α}(M(Z))`.
pub fn expected_log_odds_derivative(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    alpha: f64,
) -> Result<f64> {
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    Ok(weighted_mean_var(&s, &profile.values).1)
}

/// `σ_α(z) (M(z) - E[M](α))`.
pub fn delta_p_derivative(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    z: usize,
    alpha: f64,
) -> Result<f64> {
    check_token(ds, z)?;
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    let mean = weighted_mean_var(&s, &profile.values).0;
    Ok(s[z] * (profile.values[z] - mean))
}

/// Bisection settings for [`peak_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    pub bracket: (f64, f64),
    pub tol: f64,
    pub max_iter: usize,
    /// Largest |α| the bracket may grow to before giving up.
    pub cap: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            bracket: (-10.0, 10.0),
            tol: 1e-10,
            max_iter: 200,
            cap: 1e6,
        }
    }
}

/// Location of the maximum of `α ↦ Δp(z|c_j, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Peak {
    Finite {
        alpha: f64,
        residual: f64,
        bracket: (f64, f64),
        iterations: usize,
    },
    /// Token attains the maximal log-odds: Δp increases on all of ℝ.
    PlusInfinity,
    /// Token attains the minimal log-odds: Δp decreases on all of ℝ.
    MinusInfinity,
}

impl Peak {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Peak::Finite { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    /// The peak as a float, with `±inf` for the monotone cases.
    pub fn as_f64(&self) -> f64 {
        match self {
            Peak::Finite { alpha, .. } => *alpha,
            Peak::PlusInfinity => f64::INFINITY,
            Peak::MinusInfinity => f64::NEG_INFINITY,
        }
    }
}

/// Solves `E[M](α) = M(z)` by bisection on the strictly increasing map
/// `α ↦ E[M](α)`; tokens in the argmax (argmin) set return `+∞` (`-∞`)
/// without iterating.
///
/// The bracket is widened geometrically (its width doubles on the failing
/// side) until it straddles the target or an endpoint passes `opts.cap`.
pub fn peak_alpha(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    z: usize,
    opts: &PeakOptions,
) -> Result<Peak> {
    check_token(ds, z)?;
    check_index("contexts", j, ds.context_count())?;
    if profile.is_argmax(z) {
        return Ok(Peak::PlusInfinity);
    }
    if profile.is_argmin(z) {
        return Ok(Peak::MinusInfinity);
    }
    let target = profile.values[z];
    let em = |a: f64| expected_log_odds(ds, profile, j, a).expect("indices checked above");
    let (mut lo, mut hi) = opts.bracket;
    if !(lo < hi) {
        return Err(Error::validation(format!("empty bracket ({lo}, {hi})")));
    }
    while em(lo) >= target {
        lo -= hi - lo;
        if lo.abs() > opts.cap {
            return Err(Error::BracketExhausted { target, cap: opts.cap });
        }
    }
    while em(hi) <= target {
        hi += hi - lo;
        if hi.abs() > opts.cap {
            return Err(Error::BracketExhausted { target, cap: opts.cap });
        }
    }
    let b = bisect_increasing(em, target, lo, hi, opts.tol, opts.max_iter);
    Ok(Peak::Finite {
        alpha: b.root,
        residual: b.residual,
        bracket: b.bracket,
        iterations: b.iterations,
    })
}

fn tokens_of(ds: &DatasetSpec, concept: usize) -> std::ops::Range<usize> {
    ds.partition().tokens_of(concept)
}

/// `(1/|C|) Σ_{z ∈ C} Δp(z|c_j, α)`.
pub fn concept_increase(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    concept: usize,
    alpha: f64,
) -> Result<f64> {
    check_concept(ds, concept)?;
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    let toks = tokens_of(ds, concept);
    let n = toks.len() as f64;
    Ok(toks.map(|z| s[z] - ds.prob(j, z)).sum::<f64>() / n)
}

/// Logistic representation of a concept's steered mass:
/// `F(α) = sigmoid(ν(α) + r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhDecomposition {
    /// `log(F(0) / (1 - F(0)))`.
    pub r: f64,
    /// `∫_0^α (μ_C(t) - μ_{C^c}(t)) dt` by composite Simpson.
    pub nu: f64,
    /// Direct `F(α) = Σ_{z ∈ C} σ_α(z)`.
    pub mass: f64,
    /// `|sigmoid(ν + r) - F(α)|`.
    pub reconstruction_error: f64,
}

impl TanhDecomposition {
    /// Concept increase rebuilt from the decomposition:
    /// `(tanh((ν + r)/2) - tanh(r/2)) / (2|C|)`.
    pub fn concept_increase(&self, concept_size: usize) -> f64 {
        ((0.5 * (self.nu + self.r)).tanh() - (0.5 * self.r).tanh()) / (2.0 * concept_size as f64)
    }
}

/// Conditional means of `M` inside and outside `tokens` under `σ_t`.
fn split_means(ds: &DatasetSpec, profile: &LogOddsProfile, j: usize, tokens: &std::ops::Range<usize>, t: f64) -> (f64, f64) {
    let logw: Vec<f64> = (0..ds.vocab_size())
        .map(|z| ds.prob(j, z).ln() + t * profile.values[z])
        .collect();
    let mean_over = |inside: bool| {
        let idx: Vec<usize> = (0..ds.vocab_size())
            .filter(|z| tokens.contains(z) == inside)
            .collect();
        let lw: Vec<f64> = idx.iter().map(|&z| logw[z]).collect();
        let lse = log_sum_exp(&lw);
        idx.iter()
            .zip(&lw)
            .map(|(&z, l)| (l - lse).exp() * profile.values[z])
            .sum::<f64>()
    };
    (mean_over(true), mean_over(false))
}

pub const MIN_QUADRATURE_POINTS: usize = 64;
pub const DEFAULT_QUADRATURE_POINTS: usize = 512;

pub fn tanh_decomposition(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    concept: usize,
    alpha: f64,
    quadrature_points: usize,
) -> Result<TanhDecomposition> {
    check_concept(ds, concept)?;
    check_index("contexts", j, ds.context_count())?;
    if quadrature_points < MIN_QUADRATURE_POINTS {
        return Err(Error::validation(format!(
            "quadrature needs at least {MIN_QUADRATURE_POINTS} points, got {quadrature_points}"
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::validation("alpha must be finite"));
    }
    let toks = tokens_of(ds, concept);
    let f0: f64 = toks.clone().map(|z| ds.prob(j, z)).sum();
    if !(f0 > 0.0 && f0 < 1.0) {
        return Err(Error::domain(format!(
            "concept {concept} carries mass {f0} under context {j}; the logit of F(0) is undefined"
        )));
    }
    let r = (f0 / (1.0 - f0)).ln();
    let nu = simpson(
        |t| {
            let (inside, outside) = split_means(ds, profile, j, &toks, t);
            inside - outside
        },
        0.0,
        alpha,
        quadrature_points,
    );
    let s = steered_probs_closed_form(ds, profile, j, alpha)?;
    let mass: f64 = toks.map(|z| s[z]).sum();
    Ok(TanhDecomposition {
        r,
        nu,
        mass,
        reconstruction_error: (sigmoid(nu + r) - mass).abs(),
    })
}

/// `CE(f_α) - CE(f)` with `α v` added to every context embedding.
pub fn delta_ce(ds: &DatasetSpec, params: &UfmParams, v: &DVector<f64>, alpha: f64) -> Result<f64> {
    if params.context_count() != ds.context_count() || params.vocab_size() != ds.vocab_size() {
        return Err(Error::validation("params shape does not match dataset"));
    }
    let mut acc = 0.0;
    for (j, pi) in ds.context_weights().iter().enumerate() {
        let steered = steered_logits(params, v, j, alpha)?;
        let base = params.logits(j)?;
        acc += pi * (context_ce(ds, j, &steered) - context_ce(ds, j, &base));
    }
    Ok(acc)
}

/// `½ Σ_j π_j Var_{Z ~ p(.|c_j)}(M(Z))`.
pub fn ce_quadratic_coefficient(ds: &DatasetSpec, profile: &LogOddsProfile) -> Result<f64> {
    if profile.values.len() != ds.vocab_size() {
        return Err(Error::validation("log-odds profile length differs from V"));
    }
    let total: f64 = ds
        .context_weights()
        .iter()
        .enumerate()
        .map(|(j, pi)| {
            let p: Vec<f64> = (0..ds.vocab_size()).map(|z| ds.prob(j, z)).collect();
            pi * weighted_mean_var(&p, &profile.values).1
        })
        .sum();
    Ok(0.5 * total)
}

/// `(1/6) Σ_j π_j κ₃,j(M)`, the cubic Taylor coefficient of `ΔCE` at 0
/// (`κ₃` is the third central moment under `p(.|c_j)`).
pub fn ce_cubic_coefficient(ds: &DatasetSpec, profile: &LogOddsProfile) -> Result<f64> {
    if profile.values.len() != ds.vocab_size() {
        return Err(Error::validation("log-odds profile length differs from V"));
    }
    let total: f64 = ds
        .context_weights()
        .iter()
        .enumerate()
        .map(|(j, pi)| {
            let p: Vec<f64> = (0..ds.vocab_size()).map(|z| ds.prob(j, z)).collect();
            let mean = weighted_mean_var(&p, &profile.values).0;
            let k3: f64 = p
                .iter()
                .zip(&profile.values)
                .map(|(w, m)| w * (m - mean).powi(3))
                .sum();
            pi * k3
        })
        .sum();
    Ok(total / 6.0)
}

/// Least-squares polynomial fit of `ΔCE` on `points` evenly spaced
/// strengths in `[-half_width, half_width]`; coefficients from the constant
/// term up.
pub fn delta_ce_fit(
    ds: &DatasetSpec,
    params: &UfmParams,
    v: &DVector<f64>,
    half_width: f64,
    points: usize,
    degree: usize,
) -> Result<Vec<f64>> {
    if points <= degree || points < 2 || !(half_width > 0.0) {
        return Err(Error::validation("fit needs more points than the degree and a positive width"));
    }
    let xs: Vec<f64> = (0..points)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
        .collect();
    let ys = xs
        .iter()
        .map(|&a| delta_ce(ds, params, v, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(polyfit(&xs, &ys, degree))
}

/// `lim_{α → ±∞} Δp(z|c_j, α)`: the unsteered mass renormalized over the
/// argmax (argmin) set, minus `p(z|c_j)`.
pub fn delta_p_limit(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    z: usize,
    direction: Direction,
) -> Result<f64> {
    check_token(ds, z)?;
    check_index("contexts", j, ds.context_count())?;
    let set = match direction {
        Direction::Plus => &profile.argmax,
        Direction::Minus => &profile.argmin,
    };
    let p = ds.prob(j, z);
    if !set.contains(&z) {
        return Ok(-p);
    }
    let norm: f64 = set.iter().map(|&y| ds.prob(j, y)).sum();
    Ok(p / norm - p)
}
