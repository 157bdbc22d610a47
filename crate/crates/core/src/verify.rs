//! The invariant suite behind `verify-all`: every property is measured,
//! compared with its threshold and collected into a JSON report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    concept_increase, delta_ce, delta_p, delta_p_derivative, delta_p_limit, expected_log_odds,
    expected_log_odds_derivative, tanh_decomposition, Direction, Peak, PeakOptions,
};
use crate::config::RunConfig;
use crate::error::Result;
use crate::numeric::softmax;
use crate::pipeline::{
    ce_fit_degree, ce_summary, convergence_grid, limit_rows, sweep_outputs, Instance, ToySetup,
};
use crate::steering::{steered_logits, steered_logits_from_unsteered, steered_probs_closed_form};
use crate::sweep::{content_hash, PeakTable};
use crate::transformer::{remainder_bound_probe, Sign};
use crate::ufm::{cross_entropy, train_gd};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relative error with the denominator floored at this value.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub module: String,
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity, when it is a number.
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub dataset_hash: String,
    pub steering_hash: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Collector {
    module: &'static str,
    checks: Vec<Check>,
}

impl Collector {
    fn module(&mut self, m: &'static str) {
        self.module = m;
    }

    /// Passes when `measured < threshold` (NaN fails).
    fn below(&mut self, name: &str, measured: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, measured < threshold, Some(measured), Some(threshold), detail);
    }

    fn flag(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.push(name, passed, None, None, detail);
    }

    fn push(&mut self, name: &str, passed: bool, measured: Option<f64>, threshold: Option<f64>, detail: impl Into<String>) {
        let clean = |x: Option<f64>| x.filter(|v| v.is_finite());
        self.checks.push(Check {
            module: self.module.to_string(),
            name: name.to_string(),
            passed,
            measured: clean(measured),
            threshold: clean(threshold),
            detail: detail.into(),
        });
    }

    fn error(&mut self, name: &str, err: impl std::fmt::Display) {
        self.push(name, false, None, None, format!("error: {err}"));
    }
}

/// Band around an asymptote inside which a curve counts as saturated.
pub const SATURATION_BAND: f64 = 1e-12;

/// Strictly monotone on `values` once floating-point saturation is set
/// aside: a step may stall or reverse only when both of its points lie
/// within [`SATURATION_BAND`] of one of the curve's asymptotes. There the
/// tilted softmax carries rounding of order `|α| max|M| · 2^-52`.
pub fn monotone_on_grid(values: &[f64], increasing: bool, asymptotes: &[f64]) -> bool {
    let near = |x: f64| asymptotes.iter().any(|l| (x - l).abs() <= SATURATION_BAND);
    values.windows(2).all(|w| {
        let step = if increasing { w[1] - w[0] } else { w[0] - w[1] };
        step > 0.0 || (near(w[0]) && near(w[1]))
    })
}

/// Sign changes of a sequence, ignoring exact zeros (underflow).
pub fn sign_changes(values: &[f64]) -> Vec<(usize, usize)> {
    let nz: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
    nz.windows(2)
        .filter(|w| (values[w[0]] > 0.0) != (values[w[1]] > 0.0))
        .map(|w| (w[0], w[1]))
        .collect()
}

/// Runs every applicable check for `cfg`.
pub fn verify_all(cfg: &RunConfig) -> Result<Report> {
    let dataset = cfg.build_dataset()?;
    let mut c = Collector {
        module: "concept_dataset",
        checks: Vec::new(),
    };
    dataset_checks(&mut c, &dataset);
    // A dataset violating a_z > b_z still gets the remaining checks; most of
    // them are expected to fail as well.
    let inst = Instance::new(dataset, cfg)?;
    ufm_checks(&mut c, &inst, cfg);
    steering_checks(&mut c, &inst);
    analysis_checks(&mut c, &inst, cfg);
    if let Some(t) = cfg.transformer.as_ref().filter(|t| t.enabled) {
        c.module("toy_transformer");
        match ToySetup::from_config(t) {
            Ok(setup) => transformer_checks(&mut c, &setup, &t.probe_grid),
            Err(e) => c.error("toy_setup", e),
        }
    }
    cli_checks(&mut c, cfg, &inst);
    let passed = c.checks.iter().all(|k| k.passed);
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset_hash: content_hash(&inst.dataset.to_doc())?,
        steering_hash: content_hash(&inst.steering)?,
        passed,
        checks: c.checks,
    })
}

fn dataset_checks(c: &mut Collector, ds: &crate::dataset::DatasetSpec) {
    let part = ds.partition();
    let cover = (0..part.group_count()).all(|k| {
        part.tokens_of(k).len() == part.concept_size()
            && part.tokens_of(k).all(|z| part.concept_of(z) == k)
    }) && part.group_count() * part.concept_size() == part.vocab_size();
    c.flag("partition_cover", cover, "every concept has V/G tokens and the blocks cover the vocabulary");

    let margin = (0..ds.vocab_size())
        .map(|z| ds.probs().a[z] - ds.probs().b[z])
        .fold(f64::INFINITY, f64::min);
    let detail = match ds.first_assumption_violation() {
        Some(z) => format!("a_{z} <= b_{z}"),
        None => "a_z > b_z for every token".into(),
    };
    c.push("sign_separation", margin > 0.0, Some(margin), Some(0.0), detail);

    let norm_err = (0..ds.context_count())
        .map(|j| ((0..ds.vocab_size()).map(|z| ds.prob(j, z)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    c.below("distributions_normalize", norm_err, 1e-12, "max |Σ_z p(z|c_j) - 1|");

    let same = (0..ds.context_count()).all(|j| {
        (0..j)
            .filter(|&i| ds.concept_of_context(i) == ds.concept_of_context(j))
            .all(|i| {
                (0..ds.vocab_size()).all(|z| ds.prob(i, z).to_bits() == ds.prob(j, z).to_bits())
            })
    });
    c.flag("same_concept_identical", same, "contexts sharing a concept share the next-token law bit for bit");
}

fn ufm_checks(c: &mut Collector, inst: &Instance, cfg: &RunConfig) {
    c.module("ufm_model");
    let ds = &inst.dataset;
    let mut worst: f64 = 0.0;
    for j in 0..ds.context_count() {
        let probs = softmax(&inst.fit.logits(j).expect("index in range"));
        for (z, s) in probs.iter().enumerate() {
            worst = worst.max((s - ds.prob(j, z)).abs());
        }
    }
    c.below("perfect_fit_exact", worst, 1e-12, "max |softmax(W h_j) - p(.|c_j)| on the analytic fit");
    match cross_entropy(&inst.fit, ds) {
        Ok(ce) => c.below(
            "perfect_fit_entropy",
            (ce - ds.entropy()).abs(),
            1e-12,
            format!("CE = {ce}, entropy = {}", ds.entropy()),
        ),
        Err(e) => c.error("perfect_fit_entropy", e),
    }
    if let Ok(tc) = cfg.train_config() {
        match train_gd(ds, &tc) {
            Ok(out) => {
                let last = *out.losses.last().expect("losses");
                c.push(
                    "gd_attainability",
                    last - ds.entropy() <= 1e-3,
                    Some(last - ds.entropy()),
                    Some(1e-3),
                    format!("trained loss {last} after {} steps", tc.steps),
                );
            }
            Err(e) => c.error("gd_attainability", e),
        }
    }
}

fn steering_checks(c: &mut Collector, inst: &Instance) {
    c.module("steering_core");
    let ds = &inst.dataset;
    let s = &inst.steering;
    let v = inst.vector();
    let disjoint = !s.positive.iter().any(|j| s.negative.contains(j));
    let target_ok = s.positive.iter().all(|&j| ds.concept_of_context(j) == s.target)
        && s.negative.iter().all(|&j| ds.concept_of_context(j) != s.target);
    c.flag(
        "index_sets",
        disjoint && target_ok && s.positive.len() == s.negative.len(),
        format!("q = {}, P from the target concept, N outside it, P ∩ N = ∅", s.pair_count()),
    );

    let alphas: Vec<f64> = (-50..=50).map(f64::from).collect();
    let mut dual: f64 = 0.0;
    let mut closed: f64 = 0.0;
    for j in 0..ds.context_count() {
        for &a in &alphas {
            let direct = steered_logits(&inst.fit, &v, j, a).expect("shapes checked");
            let lemma = steered_logits_from_unsteered(&inst.fit, &s.positive, &s.negative, j, a)
                .expect("sets checked");
            for (x, y) in direct.iter().zip(&lemma) {
                dual = dual.max((x - y).abs());
            }
            let sm = softmax(&direct);
            let cf = steered_probs_closed_form(ds, &inst.profile, j, a).expect("index in range");
            for (x, y) in sm.iter().zip(&cf) {
                closed = closed.max((x - y).abs());
            }
        }
    }
    c.below("dual_path_equality", dual, 1e-10, "max |W(h_j + αv) - (ℓ_j + (α/q)(Σ_P ℓ - Σ_N ℓ))|, α ∈ {-50..50}");
    c.below("closed_form_distribution", closed, 1e-10, "max |softmax(steered logits) - p·exp(αM)/Z|, α ∈ {-50..50}");

    let target = ds.partition().tokens_of(s.target);
    let tol = inst.profile.tol;
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for z in 0..ds.vocab_size() {
        let m = inst.profile.values[z];
        if target.contains(&z) {
            ok &= m > 0.0;
            worst = worst.min(m);
        } else {
            ok &= m <= tol;
            worst = worst.min(-m);
        }
    }
    c.push(
        "log_odds_sign_separation",
        ok,
        Some(worst),
        Some(0.0),
        "M(z) > 0 on the target concept and M(z) <= 0 elsewhere; measured is the smallest margin",
    );
}

fn analysis_checks(c: &mut Collector, inst: &Instance, cfg: &RunConfig) {
    c.module("alpha_analysis");
    let ds = &inst.dataset;
    let prof = &inst.profile;
    let grid = cfg.sweep.grid.values();
    let sat = cfg.analysis.saturation_alpha;
    let m = ds.context_count();
    let v_size = ds.vocab_size();
    let target = ds.partition().tokens_of(inst.steering.target);

    // Finite-difference derivative checks.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.steering.seed);
    let h = 1e-6;
    let (mut d1, mut d2): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let j = rng.random_range(0..m);
        let z = rng.random_range(0..v_size);
        let a: f64 = rng.random_range(-3.0..3.0);
        let f = |x| delta_p(ds, prof, j, z, x).expect("valid");
        let fd = (f(a + h) - f(a - h)) / (2.0 * h);
        d1 = d1.max(relative_error(fd, delta_p_derivative(ds, prof, j, z, a).expect("valid")));
        let e = |x| expected_log_odds(ds, prof, j, x).expect("valid");
        let fd = (e(a + h) - e(a - h)) / (2.0 * h);
        d2 = d2.max(relative_error(fd, expected_log_odds_derivative(ds, prof, j, a).expect("valid")));
    }
    c.below("delta_p_derivative_fd", d1, 1e-5, "20 seeded (j, z, α), α ∈ [-3, 3], central step 1e-6");
    c.below("variance_identity_fd", d2, 1e-5, "d E[M]/dα = Var(M) at 20 seeded (j, α)");

    // Peaks and bumps.
    let contexts: Vec<usize> = (0..m).collect();
    let table = match PeakTable::build(ds, prof, &contexts, &PeakOptions::default()) {
        Ok(t) => Some(t),
        Err(e) => {
            c.error("peak_table", e);
            None
        }
    };
    if let Some(table) = &table {
        let markers = table.entries.iter().all(|e| match e.peak {
            Peak::PlusInfinity => prof.is_argmax(e.token),
            Peak::MinusInfinity => prof.is_argmin(e.token),
            Peak::Finite { .. } => !prof.is_argmax(e.token) && !prof.is_argmin(e.token),
        });
        c.flag("peak_markers", markers, "argmax tokens map to +inf, argmin tokens to -inf, all others finite");
        c.below("peak_residual", table.max_residual(), 1e-9, "max |E[M](α_peak) - M(z)| over finite peaks");

        let mut bump_ok = true;
        let mut detail = String::from("one + to - sign change bracketing each finite peak");
        for j in 0..m {
            for z in 0..v_size {
                let Some(Peak::Finite { alpha, .. }) = table.get(j, z).copied() else {
                    continue;
                };
                let d: Vec<f64> = grid
                    .iter()
                    .map(|&a| delta_p_derivative(ds, prof, j, z, a).expect("valid"))
                    .collect();
                let ch = sign_changes(&d);
                let good = ch.len() == 1 && {
                    let (i, k) = ch[0];
                    d[i] > 0.0 && grid[i] <= alpha && alpha <= grid[k]
                };
                if !good && bump_ok {
                    detail = format!("context {j}, token {z}: {} sign changes, peak {alpha}", ch.len());
                }
                bump_ok &= good;
            }
        }
        c.flag("bump_law", bump_ok, detail);

        let mut gap = f64::INFINITY;
        for j in 0..m {
            let outside = (0..v_size)
                .filter(|z| !target.contains(z))
                .map(|z| table.get(j, z).expect("built").as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let inside = target
                .clone()
                .filter_map(|z| table.get(j, z).expect("built").finite())
                .fold(f64::INFINITY, f64::min);
            if inside.is_finite() {
                gap = gap.min(inside - outside);
            }
        }
        c.push(
            "peak_ordering",
            gap > 0.0,
            Some(gap),
            Some(0.0),
            "min over contexts of (smallest finite target peak - largest off-target peak)",
        );

        let eps = match ds.profile() {
            crate::dataset::ProbProfile::Symmetric { epsilon } => Some(*epsilon),
            crate::dataset::ProbProfile::Weighted { epsilon, .. } => Some(*epsilon),
            crate::dataset::ProbProfile::Explicit => None,
        };
        if let Some(eps) = eps.filter(|e| *e <= 0.1) {
            let mut smallest = f64::INFINITY;
            for j in (0..m).filter(|&j| ds.concept_of_context(j) != inst.steering.target) {
                for z in target.clone() {
                    if let Some(a) = table.get(j, z).expect("built").finite() {
                        smallest = smallest.min(a);
                    }
                }
            }
            if smallest.is_finite() {
                c.push(
                    "small_epsilon_positive_peaks",
                    smallest > 0.0,
                    Some(smallest),
                    Some(0.0),
                    format!("ε = {eps}: smallest finite target peak over off-target contexts"),
                );
            } else {
                c.flag(
                    "small_epsilon_positive_peaks",
                    true,
                    format!("ε = {eps}: every target token is in the argmax set, no finite target peaks"),
                );
            }
        }
    }

    // Monotone extremes.
    let mut mono = true;
    for j in 0..m {
        for z in 0..v_size {
            let up = target.contains(&z) && prof.is_argmax(z);
            let down = !target.contains(&z) && prof.is_argmin(z);
            if !(up || down) {
                continue;
            }
            let curve: Vec<f64> = grid.iter().map(|&a| delta_p(ds, prof, j, z, a).expect("valid")).collect();
            let lims = [
                delta_p_limit(ds, prof, j, z, Direction::Plus).expect("valid"),
                delta_p_limit(ds, prof, j, z, Direction::Minus).expect("valid"),
            ];
            mono &= monotone_on_grid(&curve, up, &lims);
        }
    }
    c.flag("monotone_extremes", mono, "Δp increasing for target argmax tokens, decreasing for off-target argmin tokens");

    // Concept laws.
    let g = ds.partition().group_count();
    let concept_curve = |j: usize, k: usize| -> Vec<f64> {
        grid.iter().map(|&a| concept_increase(ds, prof, j, k, a).expect("valid")).collect()
    };
    let concept_limits = |j: usize, k: usize| -> Vec<f64> {
        let toks = ds.partition().tokens_of(k);
        let n = toks.len() as f64;
        [Direction::Plus, Direction::Minus]
            .iter()
            .map(|&d| toks.clone().map(|z| delta_p_limit(ds, prof, j, z, d).expect("valid")).sum::<f64>() / n)
            .collect()
    };
    let tgt = inst.steering.target;
    let inc = (0..m).all(|j| monotone_on_grid(&concept_curve(j, tgt), true, &concept_limits(j, tgt)));
    c.flag("concept_target_increasing", inc, "target concept increase is increasing on the grid for every context");

    let mut dis: f64 = 0.0;
    let mut any_disjoint = false;
    for k in 0..g {
        let toks = ds.partition().tokens_of(k);
        if toks.clone().any(|z| prof.is_argmax(z) || prof.is_argmin(z)) {
            continue;
        }
        any_disjoint = true;
        for j in 0..m {
            let mean_p = toks.clone().map(|z| ds.prob(j, z)).sum::<f64>() / toks.len() as f64;
            for a in [sat, -sat] {
                dis = dis.max((concept_increase(ds, prof, j, k, a).expect("valid") + mean_p).abs());
            }
        }
    }
    if any_disjoint {
        c.below("concept_disjoint_limit", dis, 1e-6, format!("|concept increase(±{sat}) + mean p| for concepts avoiding both extreme sets"));
    }

    let mut dec = true;
    let mut any_dec = false;
    for k in 0..g {
        let toks = ds.partition().tokens_of(k);
        let max_in = toks.clone().map(|z| prof.values[z]).fold(f64::NEG_INFINITY, f64::max);
        let min_out = (0..v_size)
            .filter(|z| !toks.contains(z))
            .map(|z| prof.values[z])
            .fold(f64::INFINITY, f64::min);
        if max_in <= min_out {
            any_dec = true;
            dec &= (0..m).all(|j| monotone_on_grid(&concept_curve(j, k), false, &concept_limits(j, k)));
        }
    }
    if any_dec {
        c.flag("concept_decreasing", dec, "concepts whose log-odds sit below all others decrease on the grid");
    }

    let mut lim: f64 = 0.0;
    for j in 0..m {
        lim = lim.max((expected_log_odds(ds, prof, j, sat).expect("valid") - prof.max()).abs());
        lim = lim.max((expected_log_odds(ds, prof, j, -sat).expect("valid") - prof.min()).abs());
    }
    c.below("expected_log_odds_limits", lim, 1e-6, format!("|E[M](±{sat}) - max/min M|"));

    if cfg.analysis.tanh {
        let mut worst: f64 = 0.0;
        let mut failure = None;
        for j in 0..m {
            for k in 0..g {
                for &a in &cfg.analysis.tanh_alphas {
                    match tanh_decomposition(ds, prof, j, k, a, cfg.analysis.quadrature_points) {
                        Ok(d) => worst = worst.max(d.reconstruction_error),
                        Err(e) => failure = Some(e),
                    }
                }
            }
        }
        match failure {
            Some(e) => c.error("tanh_reconstruction", e),
            None => c.below(
                "tanh_reconstruction",
                worst,
                1e-6,
                format!("|sigmoid(ν + r) - F(α)| at α ∈ {:?}", cfg.analysis.tanh_alphas),
            ),
        }
    }

    if cfg.analysis.ce {
        match ce_summary(inst) {
            Ok(s) => {
                let deg = ce_fit_degree(s.cubic_coefficient);
                c.below(
                    "ce_linear_coefficient",
                    s.fitted[1].abs(),
                    1e-8,
                    format!("degree-{deg} least-squares fit on 21 points in [-0.01, 0.01]"),
                );
                let rel = relative_error(s.fitted[2], s.quadratic_coefficient);
                c.below(
                    "ce_quadratic_coefficient",
                    rel,
                    5e-3,
                    format!("fitted {} vs ½ Σ π_j Var_j(M) = {}", s.fitted[2], s.quadratic_coefficient),
                );
            }
            Err(e) => c.error("ce_quadratic_law", e),
        }
        let v = inst.vector();
        let neg = grid
            .iter()
            .map(|&a| delta_ce(ds, &inst.fit, &v, a).expect("valid"))
            .fold(f64::INFINITY, f64::min);
        c.push("delta_ce_nonnegative", neg >= 0.0, Some(neg), Some(0.0), "min ΔCE over the grid");
    }

    if cfg.analysis.limits {
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for z in 0..v_size {
                for (a, d) in [(sat, Direction::Plus), (-sat, Direction::Minus)] {
                    let got = delta_p(ds, prof, j, z, a).expect("valid");
                    let want = delta_p_limit(ds, prof, j, z, d).expect("valid");
                    worst = worst.max((got - want).abs());
                }
            }
        }
        c.below("large_alpha_limits", worst, 1e-6, format!("|Δp(±{sat}) - limit formula| over all (j, z)"));
    }
}

/// Toy-transformer checks alone, as run by `transformer-limit`.
pub fn transformer_verdicts(setup: &ToySetup, probe_grid: &[f64]) -> Vec<Check> {
    let mut c = Collector {
        module: "toy_transformer",
        checks: Vec::new(),
    };
    transformer_checks(&mut c, setup, probe_grid);
    c.checks
}

fn transformer_checks(c: &mut Collector, setup: &ToySetup, probe_grid: &[f64]) {
    let p = &setup.params;
    let grid = convergence_grid();
    match limit_rows(setup, &grid) {
        Ok(rows) => {
            let half = grid.len() / 2;
            // Negative strengths are stored most-negative first.
            let neg: Vec<f64> = rows[..half].iter().rev().map(|r| r.softmax_gap).collect();
            let pos: Vec<f64> = rows[half..].iter().map(|r| r.softmax_gap).collect();
            let nonincreasing = |g: &[f64]| g.windows(2).all(|w| w[1] <= w[0]);
            c.flag(
                "limit_convergence_monotone",
                nonincreasing(&neg) && nonincreasing(&pos),
                format!("softmax gap non-increasing along |α| = 1e2..1e8 for both signs over {} prompts", setup.prompts.len()),
            );
            let at = |a: f64| rows.iter().find(|r| r.alpha == a).expect("on grid").softmax_gap;
            c.below(
                "limit_gap_at_1e6",
                at(1e6).max(at(-1e6)),
                1e-4,
                format!("{:?} norm, ‖softmax(y(±1e6)) - softmax(limit)‖∞", p.shape.norm),
            );
        }
        Err(e) => c.error("limit_convergence", e),
    }

    let prompt_gap = (|| -> Result<f64> {
        let a = p.forward_steered(&setup.prompts[0], setup.layer, &setup.vector, 1e6, setup.positions)?;
        let b = p.forward_steered(&setup.prompts[1], setup.layer, &setup.vector, 1e6, setup.positions)?;
        let last = |m: &nalgebra::DMatrix<f64>| softmax(&m.row(m.nrows() - 1).iter().copied().collect::<Vec<_>>());
        Ok(last(&a)
            .iter()
            .zip(last(&b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    })();
    match prompt_gap {
        Ok(g) => c.below("prompt_independence", g, 2e-4, "two prompts' final-position softmax at α = 1e6"),
        Err(e) => c.error("prompt_independence", e),
    }

    match (setup.delta_ce(1e5), setup.delta_ce(1e6)) {
        (Ok(a), Ok(b)) => c.below(
            "ce_plateau",
            (a - b).abs(),
            1e-3,
            format!("corpus ΔCE(1e5) = {a}, ΔCE(1e6) = {b}"),
        ),
        (Err(e), _) | (_, Err(e)) => c.error("ce_plateau", e),
    }

    let mut worst: f64 = 0.0;
    let mut failure = None;
    for scale in [1.0, 10.0] {
        let v = &setup.vector * scale;
        for prompt in &setup.prompts {
            match remainder_bound_probe(p, prompt, setup.layer, &v, probe_grid, setup.positions) {
                Ok(r) => worst = worst.max(r.ratio),
                Err(e) => failure = Some(e),
            }
        }
    }
    match failure {
        Some(e) => c.error("remainder_bounded", e),
        None => c.push(
            "remainder_bounded",
            worst <= 1.05,
            Some(worst),
            Some(1.05),
            format!("sup |R| at the largest |α| over its mid-grid value, grid {probe_grid:?}, v and 10v"),
        ),
    }

    if let Err(e) = p.limit_logits(&setup.vector, Sign::Plus) {
        c.error("limit_logits", e);
    }
}

fn cli_checks(c: &mut Collector, cfg: &RunConfig, inst: &Instance) {
    c.module("sweep_cli");
    let round = cfg
        .to_toml()
        .and_then(|t| RunConfig::from_toml(&t))
        .map(|back| back == *cfg);
    c.flag("config_round_trip", matches!(round, Ok(true)), "serialize then parse yields an equal config");

    let render = || sweep_outputs(cfg, inst);
    match (render(), render()) {
        (Ok(a), Ok(b)) => {
            let same = a.next_token_csv == b.next_token_csv
                && a.concept_csv == b.concept_csv
                && a.cross_entropy_csv == b.cross_entropy_csv;
            c.flag("sweep_determinism", same, "two renders of the sweep CSVs are byte-identical");
            let zero_ok = a.sweeps.iter().all(|s| {
                s.alpha_grid.iter().enumerate().filter(|(_, a)| **a == 0.0).all(|(i, _)| {
                    s.per_token_delta[i].iter().all(|x| x.abs() < 1e-12) && s.delta_ce[i].abs() < 1e-12
                })
            });
            c.flag("sweep_zero_row", zero_ok, "rows at α = 0 vanish");
            let sum = a
                .sweeps
                .iter()
                .flat_map(|s| s.per_token_delta.iter())
                .map(|r| r.iter().sum::<f64>().abs())
                .fold(0.0, f64::max);
            c.below("sweep_rows_sum_to_zero", sum, 1e-10, "max |Σ_z Δp(z)| per row");
        }
        (Err(e), _) | (_, Err(e)) => c.error("sweep_determinism", e),
    }
}
