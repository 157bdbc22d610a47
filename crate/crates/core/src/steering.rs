//! Difference-of-means steering on the UFM and the log-odds profile that
//! governs the steered distribution.

use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{check_index, Error, Result};
use crate::numeric::softmax;
use crate::ufm::UfmParams;

/// Default absolute tolerance for membership in the argmax/argmin sets.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// How the negative set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SteeringMode {
    /// Negatives all come from one designated opposite concept.
    Contrastive { opposite: usize },
    /// Negatives are any non-target contexts, sampled uniformly.
    Random,
}

/// Positive/negative context sets together with the resulting vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub target: usize,
    pub mode: SteeringMode,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub vector: Vec<f64>,
}

impl SteeringSpec {
    pub fn pair_count(&self) -> usize {
        self.positive.len()
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.vector)
    }

    /// Builds index sets and the difference-of-means vector in one go.
    pub fn build(
        ds: &DatasetSpec,
        params: &UfmParams,
        target: usize,
        mode: SteeringMode,
        pairs: usize,
        seed: u64,
    ) -> Result<Self> {
        let (positive, negative) = build_index_sets(ds, target, mode, pairs, seed)?;
        let v = steering_vector(params, &positive, &negative)?;
        Ok(Self {
            target,
            mode,
            positive,
            negative,
            vector: v.as_slice().to_vec(),
        })
    }
}

fn sample_sorted(pool: &[usize], q: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), q)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Samples `q` positive contexts from the target concept and `q` negatives
/// according to `mode`, without replacement. Deterministic given `seed`.
pub fn build_index_sets(
    ds: &DatasetSpec,
    target: usize,
    mode: SteeringMode,
    q: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let g = ds.partition().group_count();
    if target >= g {
        return Err(Error::validation(format!(
            "target concept {target} does not exist (G={g})"
        )));
    }
    if q == 0 {
        return Err(Error::validation("pair count q must be at least 1"));
    }
    let positives_pool = ds.contexts_in(target);
    if positives_pool.len() < q {
        return Err(Error::validation(format!(
            "target concept {target} has {} contexts, {q} needed (short by {})",
            positives_pool.len(),
            q - positives_pool.len()
        )));
    }
    let negatives_pool: Vec<usize> = match mode {
        SteeringMode::Contrastive { opposite } => {
            if opposite >= g || opposite == target {
                return Err(Error::validation(format!(
                    "opposite concept {opposite} must exist and differ from target {target}"
                )));
            }
            ds.contexts_in(opposite)
        }
        SteeringMode::Random => (0..ds.context_count())
            .filter(|&j| ds.concept_of_context(j) != target)
            .collect(),
    };
    if negatives_pool.len() < q {
        return Err(Error::validation(format!(
            "negative pool has {} contexts, {q} needed (short by {})",
            negatives_pool.len(),
            q - negatives_pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sample_sorted(&positives_pool, q, &mut rng);
    let n = sample_sorted(&negatives_pool, q, &mut rng);
    Ok((p, n))
}

fn check_sets(m: usize, positive: &[usize], negative: &[usize]) -> Result<()> {
    if positive.is_empty() || positive.len() != negative.len() {
        return Err(Error::validation(format!(
            "positive and negative sets must be non-empty and equally sized (got {} and {})",
            positive.len(),
            negative.len()
        )));
    }
    for &j in positive.iter().chain(negative) {
        check_index("contexts", j, m)?;
    }
    if positive.iter().any(|j| negative.contains(j)) {
        return Err(Error::validation("positive and negative sets overlap"));
    }
    Ok(())
}

/// `mean_{P} h_j - mean_{N} h_j`.
pub fn steering_vector(
    params: &UfmParams,
    positive: &[usize],
    negative: &[usize],
) -> Result<DVector<f64>> {
    check_sets(params.context_count(), positive, negative)?;
    let h = params.embeddings();
    let mean = |idx: &[usize]| {
        idx.iter()
            .fold(DVector::zeros(h.nrows()), |acc, &j| acc + h.column(j))
            / idx.len() as f64
    };
    Ok(mean(positive) - mean(negative))
}

/// `W (h_j + alpha v)`.
pub fn steered_logits(
    params: &UfmParams,
    v: &DVector<f64>,
    j: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_index("contexts", j, params.context_count())?;
    if v.len() != params.dim() {
        return Err(Error::validation(format!(
            "steering vector has length {}, embeddings have dimension {}",
            v.len(),
            params.dim()
        )));
    }
    let x = params.embeddings().column(j) + alpha * v;
    Ok(params.decode(&x))
}

/// The same steered logits assembled from unsteered logits only:
/// `l_j + (alpha/q)(Σ_P l_i - Σ_N l_i)`.
pub fn steered_logits_from_unsteered(
    params: &UfmParams,
    positive: &[usize],
    negative: &[usize],
    j: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_sets(params.context_count(), positive, negative)?;
    let mut out = params.logits(j)?;
    let q = positive.len() as f64;
    for (&i, sign) in positive
        .iter()
        .map(|i| (i, 1.0))
        .chain(negative.iter().map(|i| (i, -1.0)))
    {
        for (o, l) in out.iter_mut().zip(params.logits(i)?) {
            *o += sign * alpha / q * l;
        }
    }
    Ok(out)
}

/// Per-token log-odds `M(z)` plus its argmax/argmin sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOddsProfile {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
    pub argmin: Vec<usize>,
    pub tol: f64,
}

impl LogOddsProfile {
    pub fn from_values(values: Vec<f64>, tol: f64) -> Self {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let argmax = (0..values.len())
            .filter(|&z| values[z] >= max - tol)
            .collect();
        let argmin = (0..values.len())
            .filter(|&z| values[z] <= min + tol)
            .collect();
        Self {
            values,
            argmax,
            argmin,
            tol,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_argmax(&self, z: usize) -> bool {
        self.argmax.contains(&z)
    }

    pub fn is_argmin(&self, z: usize) -> bool {
        self.argmin.contains(&z)
    }

    pub fn is_constant(&self) -> bool {
        self.max() - self.min() <= 2.0 * self.tol
    }
}

/// `M(z) = (1/q) Σ_i [log p(z|c_{P_i}) - log p(z|c_{N_i})]`.
pub fn log_odds(
    ds: &DatasetSpec,
    positive: &[usize],
    negative: &[usize],
    tol: f64,
) -> Result<LogOddsProfile> {
    if positive.is_empty() || positive.len() != negative.len() {
        return Err(Error::validation(
            "positive and negative sets must be non-empty and equally sized",
        ));
    }
    for &j in positive.iter().chain(negative) {
        check_index("contexts", j, ds.context_count())?;
    }
    let q = positive.len() as f64;
    let values = (0..ds.vocab_size())
        .map(|z| {
            positive
                .iter()
                .zip(negative)
                .map(|(&i, &k)| ds.prob(i, z).ln() - ds.prob(k, z).ln())
                .sum::<f64>()
                / q
        })
        .collect();
    Ok(LogOddsProfile::from_values(values, tol))
}

/// `p(z|c_j) exp(alpha M(z))`, normalized, evaluated as a softmax of
/// `log p + alpha M`.
pub fn steered_probs_closed_form(
    ds: &DatasetSpec,
    profile: &LogOddsProfile,
    j: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_index("contexts", j, ds.context_count())?;
    if profile.values.len() != ds.vocab_size() {
        return Err(Error::validation("log-odds profile length differs from V"));
    }
    if alpha == 0.0 {
        return ds.next_token_distribution(j);
    }
    let tilted: Vec<f64> = profile
        .values
        .iter()
        .enumerate()
        .map(|(z, m)| ds.prob(j, z).ln() + alpha * m)
        .collect();
    Ok(softmax(&tilted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ufm::analytic_perfect_fit;
    use nalgebra::DMatrix;

    fn canonical_sets(ds: &DatasetSpec) -> (Vec<usize>, Vec<usize>) {
        build_index_sets(ds, 0, SteeringMode::Contrastive { opposite: 1 }, 4, 3).unwrap()
    }

    #[test]
    fn contrastive_sets_follow_concepts() {
        let ds = DatasetSpec::canonical();
        let (p, n) = canonical_sets(&ds);
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|&j| ds.concept_of_context(j) == 0));
        assert!(n.iter().all(|&j| ds.concept_of_context(j) == 1));
        assert_eq!((p.clone(), n.clone()), canonical_sets(&ds));
    }

    #[test]
    fn index_set_errors() {
        let ds = DatasetSpec::canonical();
        let err = build_index_sets(&ds, 0, SteeringMode::Random, 5, 0).unwrap_err();
        assert!(err.to_string().contains("short by 1"));
        assert!(build_index_sets(&ds, 0, SteeringMode::Contrastive { opposite: 0 }, 2, 0).is_err());
        assert!(build_index_sets(&ds, 3, SteeringMode::Random, 2, 0).is_err());
    }

    #[test]
    fn random_mode_can_mix_concepts() {
        let ds = DatasetSpec::canonical();
        let mixed = (0..50u64).any(|seed| {
            let (_, n) = build_index_sets(&ds, 0, SteeringMode::Random, 4, seed).unwrap();
            let has = |k| n.iter().any(|&j| ds.concept_of_context(j) == k);
            has(1) && has(2)
        });
        assert!(mixed);
        let (p, n) = build_index_sets(&ds, 0, SteeringMode::Random, 4, 9).unwrap();
        assert!(n.iter().all(|&j| ds.concept_of_context(j) != 0 && !p.contains(&j)));
    }

    #[test]
    fn vector_special_cases() {
        let h = DMatrix::from_fn(3, 4, |i, _| i as f64);
        let params = UfmParams::new(DMatrix::identity(3, 3), h).unwrap();
        let v = steering_vector(&params, &[0, 1], &[2, 3]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));

        let h = DMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64 + 0.5);
        let params = UfmParams::new(DMatrix::identity(3, 3), h.clone()).unwrap();
        let v = steering_vector(&params, &[0], &[1]).unwrap();
        assert_eq!(v, h.column(0) - h.column(1));
        assert!(steering_vector(&params, &[0], &[0]).is_err());
    }

    #[test]
    fn canonical_vector_is_log_ratio() {
        let ds = DatasetSpec::canonical();
        let fit = analytic_perfect_fit(&ds);
        let (p, n) = canonical_sets(&ds);
        let v = steering_vector(&fit, &p, &n).unwrap();
        let l18 = 18f64.ln();
        for z in 0..9 {
            let want = [l18, -l18, 0.0][z / 3];
            assert!((v[z] - want).abs() < 1e-12, "z={z}: {}", v[z]);
        }
    }

    #[test]
    fn steered_logits_identities() {
        let ds = DatasetSpec::canonical();
        let fit = analytic_perfect_fit(&ds);
        let (p, n) = canonical_sets(&ds);
        let v = steering_vector(&fit, &p, &n).unwrap();
        assert_eq!(steered_logits(&fit, &v, 5, 0.0).unwrap(), fit.logits(5).unwrap());

        let v1 = steering_vector(&fit, &p[..1], &n[..1]).unwrap();
        let got = steered_logits(&fit, &v1, 7, 1.0).unwrap();
        let (lj, lp, ln) = (
            fit.logits(7).unwrap(),
            fit.logits(p[0]).unwrap(),
            fit.logits(n[0]).unwrap(),
        );
        for z in 0..9 {
            assert!((got[z] - (lj[z] + lp[z] - ln[z])).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_log_odds() {
        let ds = DatasetSpec::canonical();
        let (p, n) = canonical_sets(&ds);
        let prof = log_odds(&ds, &p, &n, DEFAULT_TIE_TOL).unwrap();
        let l18 = 18f64.ln();
        assert!((l18 - 2.890372).abs() < 1e-6);
        for z in 0..9 {
            let want = [l18, -l18, 0.0][z / 3];
            assert!((prof.values[z] - want).abs() < 1e-12);
        }
        assert_eq!(prof.argmax, vec![0, 1, 2]);
        assert_eq!(prof.argmin, vec![3, 4, 5]);

        let same = log_odds(&ds, &p, &p, DEFAULT_TIE_TOL).unwrap();
        assert!(same.values.iter().all(|&m| m == 0.0));
        assert!(same.is_constant());
    }

    #[test]
    fn random_mode_log_odds_case_formula() {
        // Off-target tokens: M(z) = -(q_z/q) log(a_z/b_z), with q_z the number
        // of negatives sharing z's concept; compared against the raw product.
        let ds = DatasetSpec::weighted(
            9,
            3,
            4,
            0.1,
            &[0.5, 0.3, 0.2, 0.2, 0.3, 0.5, 0.6, 0.3, 0.1],
            &[0.2, 0.3, 0.5, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8],
            4,
            1,
        )
        .unwrap();
        for seed in 0..10 {
            let (p, n) = build_index_sets(&ds, 0, SteeringMode::Random, 4, seed).unwrap();
            let prof = log_odds(&ds, &p, &n, DEFAULT_TIE_TOL).unwrap();
            for z in 0..9 {
                let num: f64 = p.iter().map(|&i| ds.prob(i, z)).product();
                let den: f64 = n.iter().map(|&i| ds.prob(i, z)).product();
                let brute = (num / den).ln() / 4.0;
                assert!((prof.values[z] - brute).abs() < 1e-12);
                let (a, b) = (ds.probs().a[z], ds.probs().b[z]);
                let case = if z < 3 {
                    (a / b).ln()
                } else {
                    let qz = n
                        .iter()
                        .filter(|&&j| ds.concept_of_context(j) == z / 3)
                        .count() as f64;
                    -(qz / 4.0) * (a / b).ln()
                };
                assert!((prof.values[z] - case).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_basics() {
        let ds = DatasetSpec::canonical();
        let (p, n) = canonical_sets(&ds);
        let prof = log_odds(&ds, &p, &n, DEFAULT_TIE_TOL).unwrap();
        let j = ds.contexts_in(2)[0];
        let at0 = steered_probs_closed_form(&ds, &prof, j, 0.0).unwrap();
        let p0 = ds.next_token_distribution(j).unwrap();
        assert!(at0.iter().zip(&p0).all(|(x, y)| (x - y).abs() < 1e-15));

        let sat = steered_probs_closed_form(&ds, &prof, j, 100.0).unwrap();
        for z in 0..9 {
            let want = if z < 3 { 1.0 / 3.0 } else { 0.0 };
            assert!((sat[z] - want).abs() < 1e-12);
        }
    }
}
