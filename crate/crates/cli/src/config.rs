//! Run configuration: a `key = value` file plus command-line overrides.
//!
//! Keys are merged file first, then `--param` pairs, then dedicated flags,
//! so flags win. A `preset` key selects a base set of model
//! hyperparameters and every other key is applied on top of it, regardless
//! of where it appeared.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rwtkan::ingest::{SynthConfig, WindowConvention};
use rwtkan::kan::{KanTrainConfig, Regime};
use rwtkan::trees::{BoostParams, ForestParams};
use rwtkan::{FeatureId, ScalerMode};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Which black-box regressor a command works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Rf,
    Gbm,
    Mlp,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 3] = [ModelChoice::Rf, ModelChoice::Gbm, ModelChoice::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Rf => "rf",
            ModelChoice::Gbm => "gbm",
            ModelChoice::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown model '{s}' (expected rf, gbm or mlp)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// The tuned hyperparameters of the reference study.
    Tuned,
    /// Small models for smoke runs.
    Quick,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MlpSettings {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KanSettings {
    pub regime: Regime,
    /// Column positions, most important first.
    pub ordering: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid: usize,
    pub restarts: usize,
    pub snap: bool,
    pub train: KanTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthSettings {
    pub profiles: usize,
    pub depths: usize,
    pub noise: f64,
    pub seed: u64,
    pub reservoirs: usize,
}

impl SynthSettings {
    pub fn to_core(&self) -> SynthConfig {
        SynthConfig {
            n_profiles: self.profiles,
            depths_per_profile: self.depths,
            noise_sigma: self.noise,
            seed: self.seed,
            n_reservoirs: self.reservoirs,
        }
    }
}

/// File locations. Kept out of the configuration hash so a run can be
/// repeated in another directory with the same hash; input contents are
/// hashed separately in each manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub out: PathBuf,
    pub observations: Option<PathBuf>,
    pub daily: Option<PathBuf>,
    pub morphometry: Option<PathBuf>,
    pub rows: Option<PathBuf>,
}

impl Paths {
    /// The feature-rows table: the `rows` key or `<out>/rows.csv`.
    pub fn rows_file(&self) -> PathBuf {
        self.rows.clone().unwrap_or_else(|| self.out.join("rows.csv"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip)]
    pub paths: Paths,
    pub seed: u64,
    pub synthetic: bool,
    pub synth: SynthSettings,
    pub window: WindowConvention,
    pub scaler: ScalerMode,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub model: ModelChoice,
    pub preset: Preset,
    pub rf: ForestParams,
    pub gbm: BoostParams,
    pub mlp: MlpSettings,
    pub shap_background: usize,
    pub shap_instances: usize,
    pub quantiles: usize,
    pub kan: KanSettings,
}

/// Every accepted key with a one-line description, for `--help` and error
/// messages.
pub const KEYS: &[(&str, &str)] = &[
    ("out", "output directory (default: out)"),
    ("observations", "observation CSV: reservoir_id,date,site_id,depth_m,temp_c"),
    ("daily", "daily covariate CSV"),
    ("morphometry", "reservoir morphometry CSV"),
    ("rows", "feature-rows CSV (default: <out>/rows.csv)"),
    ("seed", "base seed for models, Shapley backgrounds and synthetic data (default 42)"),
    ("synthetic", "ingest generated profiles instead of files (true|false)"),
    ("synth.seed", "synthetic data seed (default: seed)"),
    ("synth.profiles", "synthetic profile count (default 200)"),
    ("synth.depths", "depths per synthetic profile (default 10)"),
    ("synth.noise", "noise sigma on the normalized target (default 0)"),
    ("synth.reservoirs", "synthetic reservoir count (default 10)"),
    ("window", "antecedent window: inclusive|exclusive"),
    ("scaler", "from_data (fit on the training split) | table2_fixed"),
    ("split.ratio", "training share of profiles (default 0.7)"),
    ("split.seed", "profile split seed (default 42)"),
    ("model", "rf | gbm | mlp"),
    ("preset", "paper | quick"),
    ("rf.seed", "forest seed (default: seed)"),
    ("rf.n_estimators", ""),
    ("rf.max_features", "integer or 'all'"),
    ("rf.max_depth", "integer or 'none'"),
    ("rf.min_samples_leaf", ""),
    ("rf.bootstrap", "true|false"),
    ("gbm.n_estimators", ""),
    ("gbm.learning_rate", ""),
    ("gbm.max_depth", "integer or 'none'"),
    ("gbm.gamma", ""),
    ("gbm.colsample_bytree", ""),
    ("gbm.min_child_weight", ""),
    ("gbm.reg_lambda", ""),
    ("gbm.reg_alpha", ""),
    ("mlp.hidden", "comma-separated hidden widths"),
    ("mlp.dropout", ""),
    ("mlp.epochs", ""),
    ("mlp.batch_size", ""),
    ("mlp.learning_rate", ""),
    ("mlp.momentum", ""),
    ("shap.background", "background rows drawn from the training split (default 64)"),
    ("shap.instances", "test rows explained, spread evenly (default 200)"),
    ("quantiles", "points in quantile comparison tables (default 101)"),
    ("kan.regime", "simple | complex"),
    ("kan.ordering", "comma-separated feature names, most important first"),
    ("kan.seeds", "comma-separated seeds (default 0,1,2)"),
    ("kan.grid", "spline intervals per edge"),
    ("kan.restarts", "initialisations per fit"),
    ("kan.snap", "distil each network into an expression (true|false)"),
    ("kan.steps", ""),
    ("kan.learning_rate", ""),
    ("kan.final_lr_ratio", "cosine decay target as a fraction of the rate"),
    ("kan.lambda", "edge sparsity penalty"),
];

impl RunConfig {
    fn base(preset: Preset) -> Self {
        let mut cfg = RunConfig {
            paths: Paths { out: PathBuf::from("out"), ..Default::default() },
            seed: 42,
            synthetic: false,
            synth: SynthSettings { profiles: 200, depths: 10, noise: 0.0, seed: 42, reservoirs: 10 },
            window: WindowConvention::Inclusive,
            scaler: ScalerMode::FromData,
            split_ratio: 0.7,
            split_seed: 42,
            model: ModelChoice::Rf,
            preset,
            rf: ForestParams::tuned(),
            gbm: BoostParams::tuned(),
            mlp: MlpSettings { hidden: vec![48, 48], dropout: 0.1, epochs: 1000, batch_size: 32, learning_rate: 0.01, momentum: 0.0 },
            shap_background: 64,
            shap_instances: 200,
            quantiles: 101,
            kan: KanSettings {
                regime: Regime::Simple,
                ordering: (0..FeatureId::ALL.len()).collect(),
                seeds: vec![0, 1, 2],
                grid: rwtkan::kan::DEFAULT_GRID,
                restarts: 3,
                snap: true,
                train: KanTrainConfig::default(),
            },
        };
        if preset == Preset::Quick {
            cfg.rf = ForestParams { n_estimators: 30, max_depth: Some(12), ..ForestParams::tuned() };
            cfg.gbm = BoostParams { n_estimators: 150, learning_rate: 0.1, max_depth: Some(4), gamma: 0.0, ..BoostParams::tuned() };
            cfg.mlp = MlpSettings { hidden: vec![16, 16], dropout: 0.0, epochs: 100, ..cfg.mlp };
            cfg.kan.train.steps = 1000;
            cfg.kan.restarts = 1;
        }
        cfg
    }

    /// Builds a configuration from merged key-value pairs.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let preset = match pairs.get("preset").map(String::as_str) {
            None | Some("paper") => Preset::Tuned,
            Some("quick") => Preset::Quick,
            Some(other) => return Err(CliError::config(format!("unknown preset '{other}' (expected paper or quick)"))),
        };
        let mut cfg = Self::base(preset);
        for (k, v) in pairs {
            cfg.apply(k, v)?;
        }
        // derived seeds follow the base seed unless set explicitly
        if !pairs.contains_key("rf.seed") {
            cfg.rf.seed = cfg.seed;
        }
        if !pairs.contains_key("synth.seed") {
            cfg.synth.seed = cfg.seed;
        }
        cfg.gbm.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::config(format!("key '{key}': expected {what}, got '{v}'"));
        let int = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let u64_ = || v.parse::<u64>().map_err(|_| bad("a non-negative integer"));
        let num = || v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("a number"));
        let flag = || match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad("true or false")),
        };
        let opt_int = |none: &str| if v == none { Ok(None) } else { int().map(Some) };
        let list = || -> Result<Vec<usize>, CliError> { v.split(',').map(|s| s.trim().parse().map_err(|_| bad("a comma-separated integer list"))).collect() };
        match key {
            "out" => self.paths.out = PathBuf::from(v),
            "observations" => self.paths.observations = Some(PathBuf::from(v)),
            "daily" => self.paths.daily = Some(PathBuf::from(v)),
            "morphometry" => self.paths.morphometry = Some(PathBuf::from(v)),
            "rows" => self.paths.rows = Some(PathBuf::from(v)),
            "seed" => self.seed = u64_()?,
            "synthetic" => self.synthetic = flag()?,
            "synth.profiles" => self.synth.profiles = int()?,
            "synth.depths" => self.synth.depths = int()?,
            "synth.noise" => self.synth.noise = num()?,
            "synth.seed" => self.synth.seed = u64_()?,
            "synth.reservoirs" => self.synth.reservoirs = int()?,
            "window" => {
                self.window = match v {
                    "inclusive" => WindowConvention::Inclusive,
                    "exclusive" => WindowConvention::Exclusive,
                    _ => return Err(bad("inclusive or exclusive")),
                }
            }
            "scaler" => {
                self.scaler = match v {
                    "from_data" => ScalerMode::FromData,
                    "table2_fixed" => ScalerMode::Table2Fixed,
                    _ => return Err(bad("from_data or table2_fixed")),
                }
            }
            "split.ratio" => self.split_ratio = num()?,
            "split.seed" => self.split_seed = u64_()?,
            "model" => self.model = ModelChoice::parse(v)?,
            "preset" => {}
            "rf.n_estimators" => self.rf.n_estimators = int()?,
            "rf.max_features" => self.rf.max_features = opt_int("all")?,
            "rf.max_depth" => self.rf.max_depth = opt_int("none")?,
            "rf.min_samples_leaf" => self.rf.min_samples_leaf = int()?,
            "rf.bootstrap" => self.rf.bootstrap = flag()?,
            "rf.seed" => self.rf.seed = u64_()?,
            "gbm.n_estimators" => self.gbm.n_estimators = int()?,
            "gbm.learning_rate" => self.gbm.learning_rate = num()?,
            "gbm.max_depth" => self.gbm.max_depth = opt_int("none")?,
            "gbm.gamma" => self.gbm.gamma = num()?,
            "gbm.colsample_bytree" => self.gbm.colsample_bytree = num()?,
            "gbm.min_child_weight" => self.gbm.min_child_weight = num()?,
            "gbm.reg_lambda" => self.gbm.reg_lambda = num()?,
            "gbm.reg_alpha" => self.gbm.reg_alpha = num()?,
            "mlp.hidden" => self.mlp.hidden = list()?,
            "mlp.dropout" => self.mlp.dropout = num()?,
            "mlp.epochs" => self.mlp.epochs = int()?,
            "mlp.batch_size" => self.mlp.batch_size = int()?,
            "mlp.learning_rate" => self.mlp.learning_rate = num()?,
            "mlp.momentum" => self.mlp.momentum = num()?,
            "shap.background" => self.shap_background = int()?,
            "shap.instances" => self.shap_instances = int()?,
            "quantiles" => self.quantiles = int()?,
            "kan.regime" => self.kan.regime = v.parse().map_err(|_| bad("simple or complex"))?,
            "kan.ordering" => {
                self.kan.ordering = v
                    .split(',')
                    .map(|s| FeatureId::from_name(s.trim()).map(FeatureId::position).ok_or_else(|| bad("comma-separated feature names")))
                    .collect::<Result<_, _>>()?
            }
            "kan.seeds" => {
                self.kan.seeds = v.split(',').map(|s| s.trim().parse().map_err(|_| bad("a comma-separated seed list"))).collect::<Result<_, _>>()?
            }
            "kan.grid" => self.kan.grid = int()?,
            "kan.restarts" => self.kan.restarts = int()?,
            "kan.snap" => self.kan.snap = flag()?,
            "kan.steps" => self.kan.train.steps = int()?,
            "kan.learning_rate" => self.kan.train.learning_rate = num()?,
            "kan.final_lr_ratio" => self.kan.train.final_lr_ratio = num()?,
            "kan.lambda" => self.kan.train.lambda = num()?,
            _ => return Err(CliError::config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::config(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail(format!("split.ratio {} must lie strictly between 0 and 1", self.split_ratio));
        }
        if self.shap_background == 0 || self.shap_instances == 0 {
            return fail("shap.background and shap.instances must be positive".into());
        }
        if self.quantiles < 2 {
            return fail("quantiles must be at least 2".into());
        }
        if self.mlp.hidden.is_empty() || self.mlp.hidden.contains(&0) {
            return fail("mlp.hidden needs at least one positive width".into());
        }
        if self.mlp.batch_size == 0 || self.mlp.epochs == 0 {
            return fail("mlp.batch_size and mlp.epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mlp.dropout) {
            return fail(format!("mlp.dropout {} outside [0, 1)", self.mlp.dropout));
        }
        if self.kan.ordering.is_empty() || self.kan.seeds.is_empty() {
            return fail("kan.ordering and kan.seeds must not be empty".into());
        }
        let mut seen = self.kan.ordering.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.kan.ordering.len() {
            return fail("kan.ordering repeats a feature".into());
        }
        if self.kan.restarts == 0 {
            return fail("kan.restarts must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the resolved settings, excluding file locations.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !KEYS.iter().any(|(name, _)| *name == k) {
            return Err(CliError::config(format!("line {}: unknown configuration key '{k}'", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Parses a `KEY=VALUE` override.
pub fn parse_override(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::config(format!("override '{s}' is not KEY=VALUE")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// File keys, then overrides in order (later wins).
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut pairs = match file {
        Some(p) => parse_config_text(&crate::output::read_text(p)?)?,
        None => BTreeMap::new(),
    };
    for (k, v) in overrides {
        pairs.insert(k.clone(), v.clone());
    }
    RunConfig::from_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> BTreeMap<String, String> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_tuned_settings() {
        let c = RunConfig::from_pairs(&BTreeMap::new()).unwrap();
        assert_eq!(c.rf.n_estimators, 100);
        assert_eq!(c.rf.max_features, Some(4));
        assert_eq!(c.gbm.n_estimators, 600);
        assert_eq!(c.mlp.hidden, vec![48, 48]);
        assert_eq!(c.scaler, ScalerMode::FromData);
    }

    #[test]
    fn keys_apply_on_top_of_preset() {
        let c = RunConfig::from_pairs(&pairs(&[("rf.n_estimators", "7"), ("preset", "quick")])).unwrap();
        assert_eq!(c.rf.n_estimators, 7);
        assert_eq!(c.rf.max_depth, Some(12));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(parse_config_text("colour = red").is_err());
        assert!(parse_config_text("seed 4").is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("split.ratio", "1.5")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("kan.ordering", "depth_measure,depth_measure")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("model", "svm")])).is_err());
    }

    #[test]
    fn file_parsing_skips_comments() {
        let p = parse_config_text("# header\nseed = 9  # trailing\n\nmodel=gbm\n").unwrap();
        assert_eq!(p, pairs(&[("seed", "9"), ("model", "gbm")]));
    }

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let a = RunConfig::from_pairs(&pairs(&[("out", "a")])).unwrap();
        let b = RunConfig::from_pairs(&pairs(&[("out", "b")])).unwrap();
        let c = RunConfig::from_pairs(&pairs(&[("seed", "1")])).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
