//! Config-driven runs shared by the command line and the C interface.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    ce_cubic_coefficient, ce_quadratic_coefficient, delta_ce_fit, delta_p_limit, tanh_decomposition,
    Direction, PeakOptions,
};
use crate::config::{ContextSelection, RunConfig, TransformerConfig};
use crate::dataset::DatasetSpec;
use crate::error::{check_index, Error, Result};
use crate::steering::{log_odds, LogOddsProfile, SteeringSpec, DEFAULT_TIE_TOL};
use crate::sweep::{
    concept_csv, content_hash, cross_entropy_csv, next_token_csv, render_labelled, render_table, run_sweep, write_text,
    PeakTable, SweepResult,
};
use crate::transformer::{
    remainder_bound_probe, sample_prompts, synthetic_corpus, SteerPositions, TransformerParams,
};
use crate::ufm::{analytic_perfect_fit, train_gd, UfmParams};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Dataset, perfect fit, steering sets and log-odds for one config.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: DatasetSpec,
    pub fit: UfmParams,
    pub steering: SteeringSpec,
    pub profile: LogOddsProfile,
}

impl Instance {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let dataset = cfg.build_dataset()?;
        Self::new(dataset, cfg)
    }

    pub fn new(dataset: DatasetSpec, cfg: &RunConfig) -> Result<Self> {
        let fit = analytic_perfect_fit(&dataset);
        let s = &cfg.steering;
        let steering = SteeringSpec::build(&dataset, &fit, s.target, s.mode()?, s.pairs, s.seed)
            .map_err(|e| Error::config("steering", e.to_string()))?;
        let profile = log_odds(&dataset, &steering.positive, &steering.negative, DEFAULT_TIE_TOL)?;
        Ok(Self {
            dataset,
            fit,
            steering,
            profile,
        })
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.steering.vector)
    }

    pub fn contexts(&self, sel: ContextSelection) -> Result<Vec<usize>> {
        match sel {
            ContextSelection::All(_) => Ok((0..self.dataset.context_count()).collect()),
            ContextSelection::Index(j) => {
                check_index("contexts", j, self.dataset.context_count())
                    .map_err(|e| Error::config("sweep.context", e.to_string()))?;
                Ok(vec![j])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTanh {
    pub context: usize,
    /// `r` for every concept, in concept order.
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSummary {
    pub quadratic_coefficient: f64,
    pub cubic_coefficient: f64,
    /// Least-squares polynomial of ΔCE on 21 points in [-0.01, 0.01].
    pub fitted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLimits {
    pub context: usize,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub dataset_hash: String,
    pub steering_hash: String,
    pub grid: String,
    pub contexts: Vec<usize>,
    pub steering: SteeringSpec,
    pub log_odds: LogOddsProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peaks: Option<PeakTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tanh: Option<Vec<ContextTanh>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_entropy: Option<CeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<ContextLimits>>,
}

/// Degree used when fitting ΔCE near 0: a quadratic when the cubic Taylor
/// term vanishes, otherwise a quartic so the odd term cannot leak into the
/// linear coefficient.
pub fn ce_fit_degree(cubic: f64) -> usize {
    if cubic.abs() <= 1e-10 {
        2
    } else {
        4
    }
}

pub fn ce_summary(inst: &Instance) -> Result<CeSummary> {
    let quadratic = ce_quadratic_coefficient(&inst.dataset, &inst.profile)?;
    let cubic = ce_cubic_coefficient(&inst.dataset, &inst.profile)?;
    let fitted = delta_ce_fit(
        &inst.dataset,
        &inst.fit,
        &inst.vector(),
        0.01,
        21,
        ce_fit_degree(cubic),
    )?;
    Ok(CeSummary {
        quadratic_coefficient: quadratic,
        cubic_coefficient: cubic,
        fitted,
    })
}

/// CSV texts and summary of a sweep, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct SweepOutputs {
    pub sweeps: Vec<SweepResult>,
    pub next_token_csv: String,
    pub concept_csv: String,
    pub cross_entropy_csv: String,
    pub summary: SweepSummary,
}

pub fn sweep_outputs(cfg: &RunConfig, inst: &Instance) -> Result<SweepOutputs> {
    let contexts = inst.contexts(cfg.sweep.context)?;
    let alphas = cfg.sweep.grid.values();
    let sweeps = contexts
        .iter()
        .map(|&j| run_sweep(&inst.dataset, &inst.fit, &inst.steering, &inst.profile, j, &alphas))
        .collect::<Result<Vec<_>>>()?;
    let a = &cfg.analysis;
    let ds = &inst.dataset;
    let g = ds.partition().group_count();
    let peaks = if a.peaks {
        Some(PeakTable::build(ds, &inst.profile, &contexts, &PeakOptions::default())?)
    } else {
        None
    };
    let tanh = if a.tanh {
        Some(
            contexts
                .iter()
                .map(|&j| {
                    let r = (0..g)
                        .map(|k| {
                            tanh_decomposition(ds, &inst.profile, j, k, 0.0, a.quadrature_points)
                                .map(|d| d.r)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ContextTanh { context: j, r })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let cross_entropy = if a.ce { Some(ce_summary(inst)?) } else { None };
    let limits = if a.limits {
        Some(
            contexts
                .iter()
                .map(|&j| {
                    let side = |d| {
                        (0..ds.vocab_size())
                            .map(|z| delta_p_limit(ds, &inst.profile, j, z, d))
                            .collect::<Result<Vec<_>>>()
                    };
                    Ok(ContextLimits {
                        context: j,
                        plus: side(Direction::Plus)?,
                        minus: side(Direction::Minus)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let summary = SweepSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        dataset_hash: content_hash(&ds.to_doc())?,
        steering_hash: content_hash(&inst.steering)?,
        grid: cfg.sweep.grid.to_string(),
        contexts,
        steering: inst.steering.clone(),
        log_odds: inst.profile.clone(),
        peaks,
        tanh,
        cross_entropy,
        limits,
    };
    Ok(SweepOutputs {
        next_token_csv: next_token_csv(&sweeps)?,
        concept_csv: concept_csv(&sweeps)?,
        cross_entropy_csv: cross_entropy_csv(sweeps.first().expect("at least one context"))?,
        sweeps,
        summary,
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `next_token.csv`, `concept.csv`, `cross_entropy.csv` and
/// `summary.json` into `out`.
pub fn write_sweep(cfg: &RunConfig, inst: &Instance, out: &Path) -> Result<SweepOutputs> {
    let outputs = sweep_outputs(cfg, inst)?;
    ensure_dir(out)?;
    write_text(&out.join("next_token.csv"), &outputs.next_token_csv)?;
    write_text(&out.join("concept.csv"), &outputs.concept_csv)?;
    write_text(&out.join("cross_entropy.csv"), &outputs.cross_entropy_csv)?;
    write_json(&out.join("summary.json"), &outputs.summary)?;
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub steps: usize,
    pub final_loss: f64,
    pub entropy: f64,
    pub gap: f64,
}

/// Runs gradient descent and writes `loss.csv`, `ufm.json` and
/// `train_summary.json`.
pub fn write_train(cfg: &RunConfig, ds: &DatasetSpec, out: &Path) -> Result<TrainSummary> {
    let tc = cfg.train_config()?;
    let outcome = train_gd(ds, &tc)?;
    let final_loss = *outcome.losses.last().expect("steps + 1 losses");
    let entropy = ds.entropy();
    ensure_dir(out)?;
    let header = vec!["step".to_string(), "loss".to_string()];
    let text = render_labelled(
        &header,
        outcome.losses.iter().enumerate().map(|(k, l)| (Some(k), vec![*l])),
    )?;
    write_text(&out.join("loss.csv"), &text)?;
    write_json(&out.join("ufm.json"), &outcome.params.to_doc())?;
    let summary = TrainSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        steps: tc.steps,
        final_loss,
        entropy,
        gap: final_loss - entropy,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

/// Seeded toy model, steering vector, evaluation prompts and corpus.
#[derive(Debug, Clone)]
pub struct ToySetup {
    pub params: TransformerParams,
    pub vector: DVector<f64>,
    pub prompts: Vec<Vec<usize>>,
    pub corpus: Vec<Vec<usize>>,
    pub fit_losses: Vec<f64>,
    pub layer: usize,
    pub positions: SteerPositions,
}

/// Stay probability of the synthetic corpus chain.
pub const CORPUS_STAY: f64 = 0.9;

impl ToySetup {
    /// Sub-seeds are `seed + 1 ..= seed + 4` for the positive prompts,
    /// negative prompts, corpus and evaluation prompts.
    pub fn from_config(t: &TransformerConfig) -> Result<Self> {
        let mut params = TransformerParams::from_seed(t.shape(), t.seed)?;
        let size = t.vocab / t.groups;
        let group = |k: usize| (k * size..(k + 1) * size).collect::<Vec<_>>();
        let pos = sample_prompts(&group(0), t.prompts, t.seq_len, t.seed.wrapping_add(1))?;
        let neg = sample_prompts(&group(1), t.prompts, t.seq_len, t.seed.wrapping_add(2))?;
        let vector = params.steering_vector_from_prompts(t.layer, &pos, &neg)? * t.vector_scale;
        let corpus = synthetic_corpus(
            t.vocab,
            t.groups,
            t.corpus_sequences,
            t.seq_len,
            CORPUS_STAY,
            t.seed.wrapping_add(3),
        )?;
        let fit_losses = params.fit_unembedding(&corpus, t.fit_learning_rate, t.fit_steps)?;
        let all: Vec<usize> = (0..t.vocab).collect();
        let prompts = sample_prompts(&all, t.prompts.max(3), t.seq_len, t.seed.wrapping_add(4))?;
        Ok(Self {
            params,
            vector,
            prompts,
            corpus,
            fit_losses,
            layer: t.layer,
            positions: t.positions,
        })
    }

    /// `CE(α) - CE(0)` on the corpus.
    pub fn delta_ce(&self, alpha: f64) -> Result<f64> {
        let base = self.params.corpus_cross_entropy(&self.corpus, None)?;
        let steered = self.params.corpus_cross_entropy(
            &self.corpus,
            Some((self.layer, &self.vector, alpha, self.positions)),
        )?;
        Ok(steered - base)
    }
}

/// `(alpha, softmax_gap, remainder_sup)` with both quantities maximized over
/// the evaluation prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub alpha: f64,
    pub softmax_gap: f64,
    pub remainder_sup: f64,
}

pub fn limit_rows(setup: &ToySetup, alphas: &[f64]) -> Result<Vec<LimitRow>> {
    let mut rows: Vec<LimitRow> = alphas
        .iter()
        .map(|&a| LimitRow {
            alpha: a,
            softmax_gap: 0.0,
            remainder_sup: 0.0,
        })
        .collect();
    for p in &setup.prompts {
        let probe = remainder_bound_probe(
            &setup.params,
            p,
            setup.layer,
            &setup.vector,
            alphas,
            setup.positions,
        )?;
        for (row, r) in rows.iter_mut().zip(&probe.rows) {
            row.softmax_gap = row.softmax_gap.max(r.softmax_gap);
            row.remainder_sup = row.remainder_sup.max(r.sup_residual);
        }
    }
    Ok(rows)
}

pub fn limit_rows_csv(rows: &[LimitRow]) -> Result<String> {
    let header = ["alpha", "softmax_gap", "remainder_sup"].map(String::from);
    render_table(
        &header,
        rows.iter().map(|r| vec![r.alpha, r.softmax_gap, r.remainder_sup]),
    )
}

/// Strengths `±1e2, ±1e3, ..., ±1e8` in increasing order.
pub fn convergence_grid() -> Vec<f64> {
    let mags: Vec<f64> = (2..=8).map(|k| 10f64.powi(k)).collect();
    mags.iter().rev().map(|m| -m).chain(mags.iter().copied()).collect()
}
