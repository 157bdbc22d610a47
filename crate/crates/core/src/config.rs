//! Run configuration: a single TOML file that determines every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_QUADRATURE_POINTS;
use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::steering::SteeringMode;
use crate::sweep::AlphaGrid;
use crate::transformer::{NormKind, SteerPositions, TransformerShape};
use crate::ufm::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub steering: SteeringConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer: Option<TransformerConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Either a generated instance or a dataset JSON file. When `file` is set the
/// generator fields must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts_per_concept: Option<usize>,
    /// Context weights; absent means uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Contrastive,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringConfig {
    pub target: usize,
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opposite: Option<usize>,
    pub pairs: usize,
    pub seed: u64,
}

impl SteeringConfig {
    pub fn mode(&self) -> Result<SteeringMode> {
        match (self.mode, self.opposite) {
            (ModeName::Contrastive, Some(opposite)) => Ok(SteeringMode::Contrastive { opposite }),
            (ModeName::Contrastive, None) => Err(Error::config(
                "steering.opposite",
                "contrastive mode needs an opposite concept",
            )),
            (ModeName::Random, None) => Ok(SteeringMode::Random),
            (ModeName::Random, Some(_)) => Err(Error::config(
                "steering.opposite",
                "random mode takes no opposite concept",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllContexts {
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextSelection {
    Index(usize),
    All(AllContexts),
}

impl Default for ContextSelection {
    fn default() -> Self {
        ContextSelection::All(AllContexts::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub grid: AlphaGrid,
    #[serde(default)]
    pub context: ContextSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub peaks: bool,
    pub tanh: bool,
    pub ce: bool,
    pub limits: bool,
    pub quadrature_points: usize,
    /// Strengths at which the logistic reconstruction is checked.
    pub tanh_alphas: Vec<f64>,
    /// Stand-in for `α → ±∞`.
    pub saturation_alpha: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            peaks: true,
            tanh: true,
            ce: true,
            limits: true,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            tanh_alphas: vec![-5.0, -1.0, 1.0, 5.0],
            saturation_alpha: 100.0,
        }
    }
}

/// Gradient-descent settings for the unconstrained features model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub learning_rate: f64,
    pub steps: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl From<TrainSection> for TrainConfig {
    fn from(t: TrainSection) -> Self {
        TrainConfig {
            dim: t.dim,
            learning_rate: t.learning_rate,
            steps: t.steps,
            init_scale: t.init_scale,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub enabled: bool,
    pub layers: usize,
    pub dim: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// Residual stream that receives the steering vector.
    pub layer: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub positions: SteerPositions,
    pub probe_grid: Vec<f64>,
    pub seed: u64,
    /// Token blocks used for prompts and the synthetic corpus.
    pub groups: usize,
    /// Prompts per side when forming the steering vector.
    pub prompts: usize,
    /// Multiplies the prompt-derived vector; 0 requests `v = 0`.
    #[serde(default = "one")]
    pub vector_scale: f64,
    pub corpus_sequences: usize,
    pub fit_steps: usize,
    pub fit_learning_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl TransformerConfig {
    pub fn shape(&self) -> TransformerShape {
        TransformerShape {
            layers: self.layers,
            dim: self.dim,
            vocab: self.vocab,
            seq_len: self.seq_len,
            norm: self.norm,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = field_from_toml_error(&e);
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    /// Reads and validates a config file. A relative `dataset.file` is
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(f) = &cfg.dataset.file {
            if f.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.dataset.file = Some(base.join(f));
            }
        }
        Ok(cfg)
    }

    /// Replaces every seed in the config.
    pub fn override_seeds(&mut self, seed: u64) {
        if self.dataset.file.is_none() {
            self.dataset.seed = Some(seed);
        }
        self.steering.seed = seed;
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
        if let Some(t) = &mut self.transformer {
            t.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {CONFIG_SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        self.validate_dataset()?;
        self.steering.mode()?;
        if self.steering.pairs == 0 {
            return Err(Error::config("steering.pairs", "must be at least 1"));
        }
        let a = &self.analysis;
        if a.quadrature_points < crate::analysis::MIN_QUADRATURE_POINTS {
            return Err(Error::config(
                "analysis.quadrature_points",
                format!("must be at least {}", crate::analysis::MIN_QUADRATURE_POINTS),
            ));
        }
        if !(a.saturation_alpha.is_finite() && a.saturation_alpha > 0.0) {
            return Err(Error::config("analysis.saturation_alpha", "must be positive and finite"));
        }
        if a.tanh_alphas.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("analysis.tanh_alphas", "entries must be finite"));
        }
        if let Some(t) = &self.train {
            if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
                return Err(Error::config("train.learning_rate", "must be positive"));
            }
            if !(t.init_scale >= 0.0 && t.init_scale.is_finite()) {
                return Err(Error::config("train.init_scale", "must be non-negative"));
            }
            if t.dim == Some(0) {
                return Err(Error::config("train.dim", "must be positive"));
            }
        }
        if let Some(t) = &self.transformer {
            self.validate_transformer(t)?;
        }
        Ok(())
    }

    fn validate_dataset(&self) -> Result<()> {
        let d = &self.dataset;
        if d.file.is_some() {
            let extra = [
                ("dataset.vocab_size", d.vocab_size.is_some()),
                ("dataset.groups", d.groups.is_some()),
                ("dataset.seq_len", d.seq_len.is_some()),
                ("dataset.epsilon", d.epsilon.is_some()),
                ("dataset.gamma", d.gamma.is_some()),
                ("dataset.omega", d.omega.is_some()),
                ("dataset.contexts_per_concept", d.contexts_per_concept.is_some()),
                ("dataset.pi", d.pi.is_some()),
                ("dataset.seed", d.seed.is_some()),
            ];
            if let Some((field, _)) = extra.iter().find(|(_, set)| *set) {
                return Err(Error::config(*field, "not allowed together with dataset.file"));
            }
            return Ok(());
        }
        let need = |name: &str, v: Option<usize>| {
            v.ok_or_else(|| Error::config(format!("dataset.{name}"), "missing"))
        };
        let v = need("vocab_size", d.vocab_size)?;
        let g = need("groups", d.groups)?;
        let t = need("seq_len", d.seq_len)?;
        let per = need("contexts_per_concept", d.contexts_per_concept)?;
        if d.seed.is_none() {
            return Err(Error::config("dataset.seed", "missing"));
        }
        if g < 2 {
            return Err(Error::config("dataset.groups", "need at least 2 concepts"));
        }
        if v == 0 || v % g != 0 {
            return Err(Error::config(
                "dataset.vocab_size",
                format!("{v} is not a positive multiple of groups = {g}"),
            ));
        }
        if t < 2 {
            return Err(Error::config("dataset.seq_len", "must be at least 2"));
        }
        if per == 0 {
            return Err(Error::config("dataset.contexts_per_concept", "must be at least 1"));
        }
        let eps = d
            .epsilon
            .ok_or_else(|| Error::config("dataset.epsilon", "missing"))?;
        let upper = (g - 1) as f64 / g as f64;
        if !(eps > 0.0 && eps < upper) {
            return Err(Error::config(
                "dataset.epsilon",
                format!("{eps} outside the open interval (0, {upper})"),
            ));
        }
        match (&d.gamma, &d.omega) {
            (None, None) => {}
            (Some(gm), Some(om)) => {
                for (name, w) in [("dataset.gamma", gm), ("dataset.omega", om)] {
                    if w.len() != v {
                        return Err(Error::config(name, format!("needs {v} entries, has {}", w.len())));
                    }
                }
            }
            (Some(_), None) => return Err(Error::config("dataset.omega", "missing (gamma is set)")),
            (None, Some(_)) => return Err(Error::config("dataset.gamma", "missing (omega is set)")),
        }
        Ok(())
    }

    fn validate_transformer(&self, t: &TransformerConfig) -> Result<()> {
        if !t.enabled {
            return Ok(());
        }
        t.shape()
            .validate()
            .map_err(|e| Error::config("transformer", e.to_string()))?;
        if t.layer >= t.layers {
            return Err(Error::config(
                "transformer.layer",
                format!("layer {} must be below layers = {}", t.layer, t.layers),
            ));
        }
        if t.probe_grid.len() < 2 || t.probe_grid.iter().any(|a| !a.is_finite() || *a == 0.0) {
            return Err(Error::config(
                "transformer.probe_grid",
                "needs at least two finite nonzero strengths",
            ));
        }
        if t.groups < 2 || !t.vocab.is_multiple_of(t.groups) {
            return Err(Error::config(
                "transformer.groups",
                format!("must be at least 2 and divide vocab = {}", t.vocab),
            ));
        }
        if t.prompts == 0 {
            return Err(Error::config("transformer.prompts", "must be at least 1"));
        }
        if t.corpus_sequences == 0 {
            return Err(Error::config("transformer.corpus_sequences", "must be at least 1"));
        }
        if !t.vector_scale.is_finite() {
            return Err(Error::config("transformer.vector_scale", "must be finite"));
        }
        if !(t.fit_learning_rate > 0.0 && t.fit_learning_rate.is_finite()) {
            return Err(Error::config("transformer.fit_learning_rate", "must be positive"));
        }
        Ok(())
    }

    /// Builds (or loads) the dataset. Files are loaded without the
    /// `a_z > b_z` check so the invariant suite can flag a violation.
    pub fn build_dataset(&self) -> Result<DatasetSpec> {
        let d = &self.dataset;
        if let Some(path) = &d.file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return DatasetSpec::from_json_relaxed(&text);
        }
        let (v, g, t, per, eps, seed) = (
            d.vocab_size.expect("validated"),
            d.groups.expect("validated"),
            d.seq_len.expect("validated"),
            d.contexts_per_concept.expect("validated"),
            d.epsilon.expect("validated"),
            d.seed.expect("validated"),
        );
        let ds = match (&d.gamma, &d.omega) {
            (Some(gm), Some(om)) => DatasetSpec::weighted(v, g, t, eps, gm, om, per, seed),
            _ => DatasetSpec::symmetric(v, g, t, eps, per, seed),
        }
        .map_err(|e| Error::config("dataset", e.to_string()))?;
        match &d.pi {
            None => Ok(ds),
            Some(pi) => ds
                .with_weights(pi.clone())
                .map_err(|e| Error::config("dataset.pi", e.to_string())),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.train
            .map(TrainConfig::from)
            .ok_or_else(|| Error::config("train", "section missing"))
    }

    /// The enabled transformer block, or a config error.
    pub fn transformer_config(&self) -> Result<&TransformerConfig> {
        match &self.transformer {
            Some(t) if t.enabled => Ok(t),
            _ => Err(Error::config("transformer.enabled", "transformer block is not enabled")),
        }
    }
}

fn field_from_toml_error(e: &toml::de::Error) -> String {
    // Unknown and missing keys carry the key name in backticks.
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "<root>".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = r#"
schema_version = 1
out_dir = "out/canonical"

[dataset]
vocab_size = 9
groups = 3
seq_len = 4
epsilon = 0.1
contexts_per_concept = 4
seed = 0

[steering]
target = 0
mode = "contrastive"
opposite = 1
pairs = 4
seed = 0

[sweep]
grid = "logsym:1e-3:1e2:401"
context = "all"
"#;

    #[test]
    fn canonical_config_builds_canonical_dataset() {
        let cfg = RunConfig::from_toml(CANONICAL).unwrap();
        assert_eq!(cfg.build_dataset().unwrap(), DatasetSpec::canonical());
        assert_eq!(cfg.sweep.context, ContextSelection::All(AllContexts::All));
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::from_toml(CANONICAL).unwrap();
        cfg.sweep.context = ContextSelection::Index(3);
        cfg.train = Some(TrainSection {
            dim: None,
            learning_rate: 0.5,
            steps: 100,
            init_scale: 0.01,
            seed: 9,
        });
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    fn field_of(text: &str) -> String {
        match RunConfig::from_toml(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&CANONICAL.replace("epsilon = 0.1", "epsilon = 0.7")), "dataset.epsilon");
        assert_eq!(field_of(&CANONICAL.replace("schema_version = 1", "schema_version = 2")), "schema_version");
        assert_eq!(field_of(&CANONICAL.replace("opposite = 1\n", "")), "steering.opposite");
        assert_eq!(field_of(&CANONICAL.replace("pairs = 4", "pairs = 4\ncolour = 1")), "colour");
        assert_eq!(field_of(&CANONICAL.replace("seed = 0\n\n[steering]", "\n[steering]")), "dataset.seed");
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = RunConfig::from_toml(CANONICAL).unwrap();
        cfg.override_seeds(42);
        assert_eq!(cfg.dataset.seed, Some(42));
        assert_eq!(cfg.steering.seed, 42);
    }
}
