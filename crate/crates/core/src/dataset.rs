//! Concept-partitioned vocabularies and the two-level next-token dataset.
//!
//! Tokens and concepts are 0-based: token `z` belongs to concept `z / s`
//! where `s = V / G`. Every context consists of tokens from one concept and
//! the next-token law depends on the context only through that concept:
//! `p(z | c) = a_z` when `z` shares the context's concept, `b_z` otherwise.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

/// Tolerance for user-supplied normalizations (weights, probabilities).
const INPUT_NORM_TOL: f64 = 1e-9;

/// Vocabulary `[V]` split into `G` contiguous, equally sized concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPartition {
    vocab_size: usize,
    group_count: usize,
}

impl ConceptPartition {
    pub fn new(vocab_size: usize, group_count: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::validation("vocabulary size V must be positive"));
        }
        if group_count == 0 {
            return Err(Error::validation("concept count G must be positive"));
        }
        if !vocab_size.is_multiple_of(group_count) {
            return Err(Error::validation(format!(
                "concept count G={group_count} does not divide vocabulary size V={vocab_size}"
            )));
        }
        Ok(Self {
            vocab_size,
            group_count,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Tokens per concept, `s = V / G`.
    pub fn concept_size(&self) -> usize {
        self.vocab_size / self.group_count
    }

    pub fn concept_of(&self, token: usize) -> usize {
        debug_assert!(token < self.vocab_size);
        token / self.concept_size()
    }

    pub fn tokens_of(&self, concept: usize) -> std::ops::Range<usize> {
        let s = self.concept_size();
        concept * s..(concept + 1) * s
    }
}

/// Builds a partition for the steering setting, which needs at least a
/// target and one other concept.
pub fn build_partition(vocab_size: usize, group_count: usize) -> Result<ConceptPartition> {
    let p = ConceptPartition::new(vocab_size, group_count)?;
    if group_count < 2 {
        return Err(Error::validation(
            "steering needs at least two concepts (G >= 2)",
        ));
    }
    Ok(p)
}

/// The in-concept / off-concept probability vectors `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptProbs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// How the `(a, b)` profile was produced; kept for serialization.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbProfile {
    Symmetric { epsilon: f64 },
    Weighted {
        epsilon: f64,
        gamma: Vec<f64>,
        omega: Vec<f64>,
    },
    Explicit,
}

fn check_epsilon(partition: &ConceptPartition, epsilon: f64) -> Result<()> {
    let g = partition.group_count() as f64;
    let upper = (g - 1.0) / g;
    if !(epsilon > 0.0 && epsilon < upper) {
        return Err(Error::validation(format!(
            "epsilon={epsilon} must lie in the open interval (0, {upper})"
        )));
    }
    Ok(())
}

/// `a_z = (1-eps)/s`, `b_z = eps/((G-1)s)` for every token.
pub fn symmetric_probs(partition: &ConceptPartition, epsilon: f64) -> Result<ConceptProbs> {
    check_epsilon(partition, epsilon)?;
    let s = partition.concept_size() as f64;
    let g = partition.group_count() as f64;
    let v = partition.vocab_size();
    Ok(ConceptProbs {
        a: vec![(1.0 - epsilon) / s; v],
        b: vec![epsilon / ((g - 1.0) * s); v],
    })
}

/// `a_z = (1-eps) gamma_z`, `b_z = eps omega_z / (G-1)` with `gamma`, `omega`
/// summing to one inside every concept.
pub fn weighted_probs(
    partition: &ConceptPartition,
    epsilon: f64,
    gamma: &[f64],
    omega: &[f64],
) -> Result<ConceptProbs> {
    check_epsilon(partition, epsilon)?;
    let v = partition.vocab_size();
    for (name, w) in [("gamma", gamma), ("omega", omega)] {
        if w.len() != v {
            return Err(Error::validation(format!(
                "{name} has {} entries, expected V={v}",
                w.len()
            )));
        }
        if let Some(z) = w.iter().position(|x| !(*x > 0.0 && *x < 1.0 || *x == 1.0)) {
            return Err(Error::validation(format!(
                "{name}[{z}]={} must lie in (0, 1]",
                w[z]
            )));
        }
        for k in 0..partition.group_count() {
            let sum: f64 = w[partition.tokens_of(k)].iter().sum();
            if (sum - 1.0).abs() > INPUT_NORM_TOL {
                return Err(Error::validation(format!(
                    "{name} sums to {sum} over concept {k}, expected 1"
                )));
            }
        }
    }
    let g = partition.group_count() as f64;
    let a: Vec<f64> = gamma.iter().map(|x| (1.0 - epsilon) * x).collect();
    let b: Vec<f64> = omega.iter().map(|x| epsilon * x / (g - 1.0)).collect();
    if let Some(z) = (0..v).find(|&z| a[z] <= b[z]) {
        return Err(Error::validation(format!(
            "a_{z}={} <= b_{z}={}: in-concept probability must exceed off-concept probability",
            a[z], b[z]
        )));
    }
    Ok(ConceptProbs { a, b })
}

/// A distinct context: `T-1` tokens from a single concept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub tokens: Vec<usize>,
    pub concept: usize,
}

/// `per_concept` distinct contexts of length `T-1` for every concept,
/// sampled without replacement from the `s^(T-1)` candidates.
///
/// Contexts are grouped by concept (concept 0 first) and, inside a concept,
/// sorted by their base-`s` index. Deterministic given `seed`.
pub fn enumerate_contexts(
    partition: &ConceptPartition,
    seq_len: usize,
    per_concept: usize,
    seed: u64,
) -> Result<Vec<Context>> {
    if seq_len < 2 {
        return Err(Error::validation("sequence length T must be at least 2"));
    }
    if per_concept == 0 {
        return Err(Error::validation("contexts per concept must be at least 1"));
    }
    let s = partition.concept_size();
    let len = seq_len - 1;
    let available = u32::try_from(len)
        .ok()
        .and_then(|l| s.checked_pow(l))
        .unwrap_or(usize::MAX);
    if per_concept > available {
        return Err(Error::validation(format!(
            "requested {per_concept} distinct contexts per concept but only {available} = {s}^{len} exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_concept * partition.group_count());
    for k in 0..partition.group_count() {
        let mut picks = index::sample(&mut rng, available, per_concept).into_vec();
        picks.sort_unstable();
        for mut code in picks {
            let mut tokens = vec![0; len];
            for slot in tokens.iter_mut().rev() {
                *slot = k * s + code % s;
                code /= s;
            }
            out.push(Context { tokens, concept: k });
        }
    }
    Ok(out)
}

/// Distinct contexts with weights and the concept-level next-token law.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    partition: ConceptPartition,
    probs: ConceptProbs,
    profile: ProbProfile,
    contexts: Vec<Context>,
    pi: Vec<f64>,
    seq_len: usize,
}

impl DatasetSpec {
    /// Validates every dataset invariant, including `a_z > b_z`.
    pub fn new(
        partition: ConceptPartition,
        probs: ConceptProbs,
        profile: ProbProfile,
        contexts: Vec<Context>,
        pi: Option<Vec<f64>>,
        seq_len: usize,
    ) -> Result<Self> {
        let ds = Self::new_relaxed(partition, probs, profile, contexts, pi, seq_len)?;
        if let Some(z) = ds.first_assumption_violation() {
            return Err(Error::validation(format!(
                "a_{z}={} <= b_{z}={}: in-concept probability must exceed off-concept probability",
                ds.probs.a[z], ds.probs.b[z]
            )));
        }
        Ok(ds)
    }

    /// Same as [`DatasetSpec::new`] but accepts profiles with `a_z <= b_z`.
    ///
    /// Used when loading external dataset files, so the invariant suite can
    /// report the violation instead of refusing the input.
    pub fn new_relaxed(
        partition: ConceptPartition,
        probs: ConceptProbs,
        profile: ProbProfile,
        contexts: Vec<Context>,
        pi: Option<Vec<f64>>,
        seq_len: usize,
    ) -> Result<Self> {
        let v = partition.vocab_size();
        if probs.a.len() != v || probs.b.len() != v {
            return Err(Error::validation(format!(
                "probability vectors must have V={v} entries"
            )));
        }
        for (name, w) in [("a", &probs.a), ("b", &probs.b)] {
            if let Some(z) = w.iter().position(|x| !(*x > 0.0 && *x < 1.0)) {
                return Err(Error::validation(format!(
                    "{name}[{z}]={} must lie in (0, 1)",
                    w[z]
                )));
            }
        }
        for k in 0..partition.group_count() {
            let total: f64 = (0..v)
                .map(|z| {
                    if partition.concept_of(z) == k {
                        probs.a[z]
                    } else {
                        probs.b[z]
                    }
                })
                .sum();
            if (total - 1.0).abs() > INPUT_NORM_TOL {
                return Err(Error::validation(format!(
                    "next-token distribution for concept {k} sums to {total}, expected 1"
                )));
            }
        }
        if seq_len < 2 {
            return Err(Error::validation("sequence length T must be at least 2"));
        }
        if contexts.is_empty() {
            return Err(Error::validation("dataset has no contexts"));
        }
        for (j, c) in contexts.iter().enumerate() {
            if c.tokens.len() != seq_len - 1 {
                return Err(Error::validation(format!(
                    "context {j} has {} tokens, expected T-1={}",
                    c.tokens.len(),
                    seq_len - 1
                )));
            }
            if let Some(&t) = c.tokens.iter().find(|&&t| t >= v) {
                return Err(Error::validation(format!(
                    "context {j} contains token {t} outside the vocabulary"
                )));
            }
            if c.concept >= partition.group_count()
                || c.tokens.iter().any(|&t| partition.concept_of(t) != c.concept)
            {
                return Err(Error::validation(format!(
                    "context {j} mixes concepts or carries a wrong concept label"
                )));
            }
        }
        for j in 1..contexts.len() {
            if contexts[..j].iter().any(|c| c.tokens == contexts[j].tokens) {
                return Err(Error::validation(format!("context {j} is a duplicate")));
            }
        }
        let m = contexts.len();
        let pi = match pi {
            None => vec![1.0 / m as f64; m],
            Some(pi) => {
                if pi.len() != m {
                    return Err(Error::validation(format!(
                        "pi has {} weights for {m} contexts",
                        pi.len()
                    )));
                }
                if let Some(j) = pi.iter().position(|x| !(*x > 0.0 && *x <= 1.0)) {
                    return Err(Error::validation(format!(
                        "pi[{j}]={} must lie in (0, 1]",
                        pi[j]
                    )));
                }
                let sum: f64 = pi.iter().sum();
                if (sum - 1.0).abs() > INPUT_NORM_TOL {
                    return Err(Error::validation(format!("pi sums to {sum}, expected 1")));
                }
                pi
            }
        };
        Ok(Self {
            partition,
            probs,
            profile,
            contexts,
            pi,
            seq_len,
        })
    }

    /// Symmetric dataset with `per_concept` sampled contexts per concept and
    /// uniform context weights.
    pub fn symmetric(
        vocab_size: usize,
        group_count: usize,
        seq_len: usize,
        epsilon: f64,
        per_concept: usize,
        seed: u64,
    ) -> Result<Self> {
        let partition = build_partition(vocab_size, group_count)?;
        let probs = symmetric_probs(&partition, epsilon)?;
        let contexts = enumerate_contexts(&partition, seq_len, per_concept, seed)?;
        Self::new(
            partition,
            probs,
            ProbProfile::Symmetric { epsilon },
            contexts,
            None,
            seq_len,
        )
    }

    /// Weighted (`gamma`/`omega`) dataset with uniform context weights.
    pub fn weighted(
        vocab_size: usize,
        group_count: usize,
        seq_len: usize,
        epsilon: f64,
        gamma: &[f64],
        omega: &[f64],
        per_concept: usize,
        seed: u64,
    ) -> Result<Self> {
        let partition = build_partition(vocab_size, group_count)?;
        let probs = weighted_probs(&partition, epsilon, gamma, omega)?;
        let contexts = enumerate_contexts(&partition, seq_len, per_concept, seed)?;
        Self::new(
            partition,
            probs,
            ProbProfile::Weighted {
                epsilon,
                gamma: gamma.to_vec(),
                omega: omega.to_vec(),
            },
            contexts,
            None,
            seq_len,
        )
    }

    /// The reference instance: V=9, G=3, T=4, eps=0.1, four contexts per
    /// concept, uniform weights.
    pub fn canonical() -> Self {
        Self::symmetric(9, 3, 4, 0.1, 4, 0).expect("canonical instance is valid")
    }

    pub fn partition(&self) -> &ConceptPartition {
        &self.partition
    }

    pub fn probs(&self) -> &ConceptProbs {
        &self.probs
    }

    pub fn profile(&self) -> &ProbProfile {
        &self.profile
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn context_weights(&self) -> &[f64] {
        &self.pi
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.partition.vocab_size()
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    pub fn concept_of_context(&self, j: usize) -> usize {
        self.contexts[j].concept
    }

    /// Indices of the contexts labelled with `concept`.
    pub fn contexts_in(&self, concept: usize) -> Vec<usize> {
        (0..self.contexts.len())
            .filter(|&j| self.contexts[j].concept == concept)
            .collect()
    }

    /// First token with `a_z <= b_z`, if any.
    pub fn first_assumption_violation(&self) -> Option<usize> {
        (0..self.vocab_size()).find(|&z| self.probs.a[z] <= self.probs.b[z])
    }

    pub fn prob(&self, j: usize, z: usize) -> f64 {
        if self.partition.concept_of(z) == self.contexts[j].concept {
            self.probs.a[z]
        } else {
            self.probs.b[z]
        }
    }

    pub fn next_token_distribution(&self, j: usize) -> Result<Vec<f64>> {
        check_index("contexts", j, self.contexts.len())?;
        Ok((0..self.vocab_size()).map(|z| self.prob(j, z)).collect())
    }

    /// Conditional entropy `-Σ_j π_j Σ_z p(z|c_j) log p(z|c_j)` in nats.
    pub fn entropy(&self) -> f64 {
        (0..self.contexts.len())
            .map(|j| {
                let h: f64 = (0..self.vocab_size())
                    .map(|z| {
                        let p = self.prob(j, z);
                        -p * p.ln()
                    })
                    .sum();
                self.pi[j] * h
            })
            .sum()
    }

    pub fn to_doc(&self) -> DatasetDoc {
        let (epsilon, gamma, omega, a, b) = match &self.profile {
            ProbProfile::Symmetric { epsilon } => (Some(*epsilon), None, None, None, None),
            ProbProfile::Weighted {
                epsilon,
                gamma,
                omega,
            } => (
                Some(*epsilon),
                Some(gamma.clone()),
                Some(omega.clone()),
                None,
                None,
            ),
            ProbProfile::Explicit => (
                None,
                None,
                None,
                Some(self.probs.a.clone()),
                Some(self.probs.b.clone()),
            ),
        };
        DatasetDoc {
            schema_version: DATASET_SCHEMA_VERSION,
            vocab_size: self.vocab_size(),
            group_count: self.partition.group_count(),
            seq_len: self.seq_len,
            epsilon,
            gamma,
            omega,
            a,
            b,
            contexts: self.contexts.iter().map(|c| c.tokens.clone()).collect(),
            pi: self.pi.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    /// Parses a dataset document with full validation.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        doc.into_spec(true)
    }

    /// Parses a dataset document, reporting `a_z <= b_z` through
    /// [`DatasetSpec::first_assumption_violation`] instead of failing.
    pub fn from_json_relaxed(text: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        doc.into_spec(false)
    }

    /// Same dataset with new context weights.
    pub fn with_weights(self, pi: Vec<f64>) -> Result<Self> {
        Self::new_relaxed(
            self.partition,
            self.probs,
            self.profile,
            self.contexts,
            Some(pi),
            self.seq_len,
        )
    }
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// On-disk JSON form of a [`DatasetSpec`].
///
/// The probability profile is given by exactly one of: explicit `a` and `b`
/// arrays; `epsilon` with `gamma` and `omega`; or `epsilon` alone
/// (symmetric). Context concept labels are inferred from their tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDoc {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    #[serde(rename = "G")]
    pub group_count: usize,
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub contexts: Vec<Vec<usize>>,
    pub pi: Vec<f64>,
}

fn default_schema() -> u32 {
    DATASET_SCHEMA_VERSION
}

impl DatasetDoc {
    /// `strict = false` skips the `a_z > b_z` check (see
    /// [`DatasetSpec::new_relaxed`]).
    pub fn into_spec(self, strict: bool) -> Result<DatasetSpec> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported dataset schema_version {}",
                self.schema_version
            )));
        }
        let partition = build_partition(self.vocab_size, self.group_count)?;
        let (probs, profile) = match (self.a, self.b, self.gamma, self.omega, self.epsilon) {
            (Some(a), Some(b), None, None, None) => (ConceptProbs { a, b }, ProbProfile::Explicit),
            (None, None, Some(gamma), Some(omega), Some(epsilon)) => {
                let probs = if strict {
                    weighted_probs(&partition, epsilon, &gamma, &omega)?
                } else {
                    let g = partition.group_count() as f64;
                    check_epsilon(&partition, epsilon)?;
                    ConceptProbs {
                        a: gamma.iter().map(|x| (1.0 - epsilon) * x).collect(),
                        b: omega.iter().map(|x| epsilon * x / (g - 1.0)).collect(),
                    }
                };
                (
                    probs,
                    ProbProfile::Weighted {
                        epsilon,
                        gamma,
                        omega,
                    },
                )
            }
            (None, None, None, None, Some(epsilon)) => (
                symmetric_probs(&partition, epsilon)?,
                ProbProfile::Symmetric { epsilon },
            ),
            _ => {
                return Err(Error::validation(
                    "dataset must give either (a, b), (epsilon, gamma, omega) or epsilon alone",
                ))
            }
        };
        let contexts = self
            .contexts
            .into_iter()
            .enumerate()
            .map(|(j, tokens)| {
                let first = *tokens
                    .first()
                    .ok_or_else(|| Error::validation(format!("context {j} is empty")))?;
                if first >= partition.vocab_size() {
                    return Err(Error::validation(format!(
                        "context {j} contains token {first} outside the vocabulary"
                    )));
                }
                Ok(Context {
                    concept: partition.concept_of(first),
                    tokens,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ctor = if strict {
            DatasetSpec::new
        } else {
            DatasetSpec::new_relaxed
        };
        ctor(partition, probs, profile, contexts, Some(self.pi), self.seq_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_nine_by_three() {
        let p = build_partition(9, 3).unwrap();
        assert_eq!(p.concept_size(), 3);
        // 1-based token 4 is 0-based token 3, which opens the second concept.
        assert_eq!(p.concept_of(3), 1);
        assert_eq!(p.tokens_of(2), 6..9);
    }

    #[test]
    fn partition_single_group_and_errors() {
        let p = ConceptPartition::new(4, 1).unwrap();
        assert!((0..4).all(|z| p.concept_of(z) == 0));
        assert!(build_partition(4, 1).is_err());
        assert!(build_partition(12, 5).unwrap_err().to_string().contains("divide"));
        assert!(build_partition(0, 3).is_err());
        assert!(build_partition(9, 0).is_err());
    }

    #[test]
    fn symmetric_values() {
        let p = build_partition(9, 3).unwrap();
        let pr = symmetric_probs(&p, 0.1).unwrap();
        assert!(pr.a.iter().all(|&x| (x - 0.3).abs() < 1e-15));
        assert!(pr.b.iter().all(|&x| (x - 1.0 / 60.0).abs() < 1e-15));

        let pr = symmetric_probs(&p, 0.6).unwrap();
        assert!((pr.a[0] - 0.4 / 3.0).abs() < 1e-15);
        assert!((pr.b[0] - 0.1).abs() < 1e-15);
        assert!(pr.a[0] > pr.b[0]);

        assert!(symmetric_probs(&p, 2.0 / 3.0).is_err());
        assert!(symmetric_probs(&p, 0.0).is_err());
    }

    #[test]
    fn weighted_values_and_degeneracy() {
        let p = build_partition(9, 3).unwrap();
        let uniform = vec![1.0 / 3.0; 9];
        let w = weighted_probs(&p, 0.1, &uniform, &uniform).unwrap();
        let s = symmetric_probs(&p, 0.1).unwrap();
        for z in 0..9 {
            assert!((w.a[z] - s.a[z]).abs() < 1e-15);
            assert!((w.b[z] - s.b[z]).abs() < 1e-15);
        }

        let mut gamma = uniform.clone();
        gamma[..3].copy_from_slice(&[0.5, 0.3, 0.2]);
        let w = weighted_probs(&p, 0.1, &gamma, &uniform).unwrap();
        for (got, want) in w.a[..3].iter().zip([0.45, 0.27, 0.18]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(w.b.iter().all(|&x| (x - 1.0 / 60.0).abs() < 1e-15));
    }

    #[test]
    fn weighted_rejects_bad_inputs() {
        let p = build_partition(9, 3).unwrap();
        let uniform = vec![1.0 / 3.0; 9];
        let mut bad = uniform.clone();
        bad[0] = 0.5;
        assert!(weighted_probs(&p, 0.1, &bad, &uniform).is_err());
    }

    #[test]
    fn weighted_rejects_inverted_pair_found_by_search() {
        // Search a grid for an (eps, gamma, omega) triple whose resulting
        // profile has a_z <= b_z somewhere; the constructor must refuse it.
        let p = build_partition(9, 3).unwrap();
        let mut found = None;
        'outer: for eps in [0.3, 0.5, 0.6, 0.65] {
            for g0 in [0.01, 0.05, 0.1] {
                for w0 in [0.9, 0.98] {
                    let a = (1.0 - eps) * g0;
                    let b = eps * w0 / 2.0;
                    if a <= b {
                        found = Some((eps, g0, w0));
                        break 'outer;
                    }
                }
            }
        }
        let (eps, g0, w0) = found.expect("violating triple exists");
        let mut gamma = vec![1.0 / 3.0; 9];
        gamma[..3].copy_from_slice(&[g0, (1.0 - g0) / 2.0, (1.0 - g0) / 2.0]);
        let mut omega = vec![1.0 / 3.0; 9];
        omega[..3].copy_from_slice(&[w0, (1.0 - w0) / 2.0, (1.0 - w0) / 2.0]);
        let err = weighted_probs(&p, eps, &gamma, &omega).unwrap_err();
        assert!(err.to_string().contains("a_0"));
    }

    #[test]
    fn contexts_are_single_concept_distinct_and_seeded() {
        let p = build_partition(9, 3).unwrap();
        let c1 = enumerate_contexts(&p, 4, 4, 42).unwrap();
        let c2 = enumerate_contexts(&p, 4, 4, 42).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), 12);
        for c in &c1 {
            assert_eq!(c.tokens.len(), 3);
            assert!(c.tokens.iter().all(|&t| p.concept_of(t) == c.concept));
        }
        for k in 0..3 {
            let mut toks: Vec<_> = c1.iter().filter(|c| c.concept == k).map(|c| &c.tokens).collect();
            let n = toks.len();
            toks.dedup();
            assert_eq!(toks.len(), n);
        }
        assert!(enumerate_contexts(&p, 4, 28, 0).is_err());
        assert_eq!(enumerate_contexts(&p, 4, 27, 0).unwrap().len(), 81);
        assert!(enumerate_contexts(&p, 1, 1, 0).is_err());
    }

    #[test]
    fn next_token_distribution_canonical() {
        let ds = DatasetSpec::canonical();
        let j = ds.contexts_in(0)[0];
        let p = ds.next_token_distribution(j).unwrap();
        for z in 0..3 {
            assert!((p[z] - 0.3).abs() < 1e-15);
        }
        for z in 3..9 {
            assert!((p[z] - 1.0 / 60.0).abs() < 1e-15);
        }
        for j in 0..ds.context_count() {
            let p = ds.next_token_distribution(j).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let c2 = ds.contexts_in(1);
        assert_eq!(
            ds.next_token_distribution(c2[0]).unwrap(),
            ds.next_token_distribution(c2[1]).unwrap()
        );
        assert!(ds.next_token_distribution(99).is_err());
    }

    #[test]
    fn entropy_oracle_and_limits() {
        // Direct summation: 0.9 log(1/0.3) + 0.1 log 60.
        let want = 0.9 * (1.0f64 / 0.3).ln() + 0.1 * 60f64.ln();
        let ds = DatasetSpec::canonical();
        assert!((ds.entropy() - want).abs() < 1e-12);
        assert!((ds.entropy() - 1.49301).abs() < 1e-5);

        // s = 1 (G = V): entropy vanishes as eps -> 0.
        let tiny = DatasetSpec::symmetric(3, 3, 2, 1e-8, 1, 0).unwrap();
        assert!(tiny.entropy() < 1e-6);

        // G = 1: uniform next-token law over V tokens.
        let p = ConceptPartition::new(4, 1).unwrap();
        let probs = ConceptProbs {
            a: vec![0.25; 4],
            b: vec![0.125; 4],
        };
        let ctx = vec![Context {
            tokens: vec![0, 1],
            concept: 0,
        }];
        let ds = DatasetSpec::new(p, probs, ProbProfile::Explicit, ctx, None, 3).unwrap();
        assert!((ds.entropy() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_relaxed_loading() {
        let ds = DatasetSpec::canonical();
        let back = DatasetSpec::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(ds, back);

        // Swap mass inside concept 0 so that a_0 < b_0 while keeping every
        // conditional distribution normalized.
        let mut doc = ds.to_doc();
        doc.epsilon = None;
        let mut a = ds.probs().a.clone();
        a[0] = 0.01;
        a[1] = 0.59;
        doc.a = Some(a);
        doc.b = Some(ds.probs().b.clone());
        let text = serde_json::to_string(&doc).unwrap();
        assert!(DatasetSpec::from_json(&text).is_err());
        let relaxed = serde_json::from_str::<DatasetDoc>(&text)
            .unwrap()
            .into_spec(false)
            .unwrap();
        assert_eq!(relaxed.first_assumption_violation(), Some(0));
    }
}
