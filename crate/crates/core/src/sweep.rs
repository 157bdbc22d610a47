//! Alpha grids and the tabulated results of a sweep over one context.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{concept_increase, delta_ce, delta_p, peak_alpha, Peak, PeakOptions};
use crate::dataset::DatasetSpec;
use crate::error::{check_index, Error, Result};
use crate::numeric::fmt_f64;
use crate::steering::{LogOddsProfile, SteeringSpec};
use crate::ufm::UfmParams;

/// A set of steering strengths, written `lo:hi:n` (evenly spaced, inclusive)
/// or `logsym:lo:hi:n` (zero plus `(n-1)/2` log-spaced magnitudes in
/// `[lo, hi]` on each side, `n` odd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlphaGrid {
    Linear { lo: f64, hi: f64, n: usize },
    LogSym { lo: f64, hi: f64, n: usize },
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid::LogSym {
            lo: 1e-3,
            hi: 1e2,
            n: 401,
        }
    }
}

impl AlphaGrid {
    pub fn new_linear(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let g = AlphaGrid::Linear { lo, hi, n };
        g.validate()?;
        Ok(g)
    }

    pub fn new_logsym(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let g = AlphaGrid::LogSym { lo, hi, n };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AlphaGrid::Linear { lo, hi, n } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(Error::validation("grid bounds must be finite"));
                }
                if n == 0 || (n == 1 && lo != hi) || (n > 1 && !(lo < hi)) {
                    return Err(Error::validation(format!(
                        "linear grid needs lo < hi and n >= 2 (or lo == hi, n == 1); got {lo}:{hi}:{n}"
                    )));
                }
            }
            AlphaGrid::LogSym { lo, hi, n } => {
                if !(lo > 0.0 && hi.is_finite() && lo < hi) {
                    return Err(Error::validation(format!(
                        "logsym grid needs 0 < lo < hi; got lo={lo}, hi={hi}"
                    )));
                }
                if n < 5 || n % 2 == 0 {
                    return Err(Error::validation(format!(
                        "logsym grid needs an odd point count >= 5; got {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            AlphaGrid::Linear { lo, hi, n } => {
                if n == 1 {
                    return vec![lo];
                }
                let step = (hi - lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                    .collect()
            }
            AlphaGrid::LogSym { lo, hi, n } => {
                let k = (n - 1) / 2;
                let (l0, l1) = (lo.log10(), hi.log10());
                let mags: Vec<f64> = (0..k)
                    .map(|i| {
                        if i == 0 {
                            lo
                        } else if i == k - 1 {
                            hi
                        } else {
                            10f64.powf(l0 + (l1 - l0) * i as f64 / (k - 1) as f64)
                        }
                    })
                    .collect();
                let mut out: Vec<f64> = mags.iter().rev().map(|m| -m).collect();
                out.push(0.0);
                out.extend(mags);
                out
            }
        }
    }
}

impl fmt::Display for AlphaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaGrid::Linear { lo, hi, n } => write!(f, "{lo:e}:{hi:e}:{n}"),
            AlphaGrid::LogSym { lo, hi, n } => write!(f, "logsym:{lo:e}:{hi:e}:{n}"),
        }
    }
}

impl FromStr for AlphaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::validation(format!("grid `{s}` is not lo:hi:n or logsym:lo:hi:n"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let count = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            [lo, hi, n] => AlphaGrid::new_linear(num(lo)?, num(hi)?, count(n)?),
            [tag, lo, hi, n] if tag.trim() == "logsym" => {
                AlphaGrid::new_logsym(num(lo)?, num(hi)?, count(n)?)
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for AlphaGrid {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlphaGrid> for String {
    fn from(g: AlphaGrid) -> String {
        g.to_string()
    }
}

/// Hex SHA-256 of a value's JSON form; ties outputs to their inputs.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub context: usize,
    pub alpha_grid: Vec<f64>,
    /// One row per alpha, one column per token.
    pub per_token_delta: Vec<Vec<f64>>,
    /// One row per alpha, one column per concept.
    pub per_concept_delta: Vec<Vec<f64>>,
    pub delta_ce: Vec<f64>,
    pub dataset_hash: String,
    pub steering_hash: String,
}

/// Tabulates probability, concept and cross-entropy changes for context `j`.
/// The per-token and per-concept curves use the closed-form tilted
/// distribution; `delta_ce` steers every embedding of `params`.
pub fn run_sweep(
    ds: &DatasetSpec,
    params: &UfmParams,
    steering: &SteeringSpec,
    profile: &LogOddsProfile,
    j: usize,
    alphas: &[f64],
) -> Result<SweepResult> {
    check_index("contexts", j, ds.context_count())?;
    let v = DVector::from_column_slice(&steering.vector);
    let g = ds.partition().group_count();
    let mut per_token_delta = Vec::with_capacity(alphas.len());
    let mut per_concept_delta = Vec::with_capacity(alphas.len());
    let mut ce = Vec::with_capacity(alphas.len());
    for &a in alphas {
        per_token_delta.push(
            (0..ds.vocab_size())
                .map(|z| delta_p(ds, profile, j, z, a))
                .collect::<Result<Vec<_>>>()?,
        );
        per_concept_delta.push(
            (0..g)
                .map(|k| concept_increase(ds, profile, j, k, a))
                .collect::<Result<Vec<_>>>()?,
        );
        ce.push(delta_ce(ds, params, &v, a)?);
    }
    Ok(SweepResult {
        context: j,
        alpha_grid: alphas.to_vec(),
        per_token_delta,
        per_concept_delta,
        delta_ce: ce,
        dataset_hash: content_hash(&ds.to_doc())?,
        steering_hash: content_hash(steering)?,
    })
}

/// Renders a header plus rows of doubles as CSV text.
pub fn render_table(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<String> {
    render_labelled(header, rows.map(|r| (None, r)))
}

/// Like [`render_table`], with an optional integer label in front of each row.
pub fn render_labelled(
    header: &[String],
    rows: impl Iterator<Item = (Option<usize>, Vec<f64>)>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for (label, row) in rows {
        let fields = label
            .map(|l| l.to_string())
            .into_iter()
            .chain(row.iter().map(|x| fmt_f64(*x)));
        w.write_record(fields)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::validation(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header(first: &[&str], prefix: &str, n: usize) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

impl SweepResult {
    fn rows<'a>(
        &'a self,
        table: &'a [Vec<f64>],
        with_context: bool,
    ) -> impl Iterator<Item = (Option<usize>, Vec<f64>)> + 'a {
        self.alpha_grid.iter().zip(table).map(move |(a, row)| {
            let mut r = Vec::with_capacity(row.len() + 1);
            r.push(*a);
            r.extend_from_slice(row);
            (with_context.then_some(self.context), r)
        })
    }
}

/// Per-token curves. One sweep gives columns `alpha, z0, ..`; several
/// sweeps are stacked with a leading `context` column.
pub fn next_token_csv(sweeps: &[SweepResult]) -> Result<String> {
    let v = sweeps
        .first()
        .and_then(|s| s.per_token_delta.first())
        .map_or(0, Vec::len);
    stacked_csv(sweeps, "z", v, |s| &s.per_token_delta)
}

/// Per-concept curves, laid out like [`next_token_csv`].
pub fn concept_csv(sweeps: &[SweepResult]) -> Result<String> {
    let g = sweeps
        .first()
        .and_then(|s| s.per_concept_delta.first())
        .map_or(0, Vec::len);
    stacked_csv(sweeps, "concept", g, |s| &s.per_concept_delta)
}

fn stacked_csv(
    sweeps: &[SweepResult],
    prefix: &str,
    n: usize,
    table: impl Fn(&SweepResult) -> &Vec<Vec<f64>>,
) -> Result<String> {
    let many = sweeps.len() > 1;
    let first: &[&str] = if many { &["context", "alpha"] } else { &["alpha"] };
    render_labelled(
        &header(first, prefix, n),
        sweeps.iter().flat_map(|s| s.rows(table(s), many)),
    )
}

/// Columns `alpha, delta_ce`. The curve does not depend on the context, so
/// the first sweep is used.
pub fn cross_entropy_csv(sweep: &SweepResult) -> Result<String> {
    render_table(
        &header(&["alpha", "delta_ce"], "", 0),
        sweep
            .alpha_grid
            .iter()
            .zip(&sweep.delta_ce)
            .map(|(a, c)| vec![*a, *c]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub context: usize,
    pub token: usize,
    pub peak: Peak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PeakTable {
    pub entries: Vec<PeakEntry>,
}

impl PeakTable {
    /// Peaks for every token of each listed context, in (context, token) order.
    pub fn build(
        ds: &DatasetSpec,
        profile: &LogOddsProfile,
        contexts: &[usize],
        opts: &PeakOptions,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(contexts.len() * ds.vocab_size());
        for &j in contexts {
            for z in 0..ds.vocab_size() {
                entries.push(PeakEntry {
                    context: j,
                    token: z,
                    peak: peak_alpha(ds, profile, j, z, opts)?,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, j: usize, z: usize) -> Option<&Peak> {
        self.entries
            .iter()
            .find(|e| e.context == j && e.token == z)
            .map(|e| &e.peak)
    }

    pub fn max_residual(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| match e.peak {
                Peak::Finite { residual, .. } => Some(residual),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}
