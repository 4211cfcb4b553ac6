use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::int3dnet::{AttentionKernel, NetworkConfig, SetAbstraction, Variant};
use crate::objective::{LossConfig, LossTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Intention,
    Forecaster,
}

/// How the positive-class weight of the BCE term is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassWeightMode {
    /// Negative/positive ratio of each sample.
    PerSample,
    /// One ratio over the whole training split.
    Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a validation Dice improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Share of training samples held out for validation. With none held
    /// out, the training samples themselves are used.
    pub val_fraction: f64,
    pub loss: LossConfig,
    pub class_weight_mode: ClassWeightMode,
    pub network: NetworkConfig,
    pub model: ModelKind,
    pub forecast_horizon_frames: usize,
    pub forecast_feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 30,
            batch_size: 4,
            seed: 0,
            early_stop_patience: 8,
            val_fraction: 0.1,
            loss: LossConfig::default(),
            class_weight_mode: ClassWeightMode::PerSample,
            network: NetworkConfig::default(),
            model: ModelKind::Intention,
            forecast_horizon_frames: 30,
            forecast_feature_dim: 32,
        }
    }
}

const KEYS: &[&str] = &[
    "learning_rate",
    "max_epochs",
    "batch_size",
    "seed",
    "early_stop_patience",
    "val_fraction",
    "alpha",
    "gamma",
    "loss_terms",
    "class_weight_mode",
    "feature_dim",
    "num_frames",
    "sa_levels",
    "fp_widths",
    "interp_k",
    "gcn_layers",
    "head_mlp_widths",
    "output_mlp_widths",
    "attention_kernel",
    "variant",
    "model",
    "forecast_horizon_frames",
    "forecast_feature_dim",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

/// `centers:radius:k_max:w1,w2,... | ...`
fn sa_levels(v: &str) -> Result<Vec<SetAbstraction>> {
    v.split('|')
        .map(|level| {
            let parts: Vec<&str> = level.trim().split(':').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!("sa_levels: expected centers:radius:k_max:widths, got {level:?}")));
            }
            Ok(SetAbstraction {
                num_centers: parse("sa_levels", parts[0])?,
                radius: parse("sa_levels", parts[1])?,
                k_max: parse("sa_levels", parts[2])?,
                widths: widths("sa_levels", parts[3])?,
            })
        })
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.forecast_horizon_frames == 0 || self.forecast_feature_dim == 0 {
            return Err(Error::Config("forecaster sizes must be positive".into()));
        }
        self.loss.validate()?;
        self.network.validate()
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys are errors. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} repeated", n + 1)));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let mut c = TrainConfig::default();
        if let Some(d) = get("feature_dim") {
            c.network = NetworkConfig::with_feature_dim(parse("feature_dim", d)?);
        }
        let n = &mut c.network;
        if let Some(v) = get("num_frames") {
            n.num_frames = parse("num_frames", v)?;
        }
        if let Some(v) = get("sa_levels") {
            n.sa_levels = sa_levels(v)?;
        }
        if let Some(v) = get("fp_widths") {
            n.fp_widths = v.split('|').map(|w| widths("fp_widths", w.trim())).collect::<Result<_>>()?;
        }
        if let Some(v) = get("interp_k") {
            n.interp_k = parse("interp_k", v)?;
        }
        if let Some(v) = get("gcn_layers") {
            n.gcn_layers = parse("gcn_layers", v)?;
        }
        if let Some(v) = get("head_mlp_widths") {
            n.head_mlp_widths = widths("head_mlp_widths", v)?;
        }
        if let Some(v) = get("output_mlp_widths") {
            n.output_mlp_widths = widths("output_mlp_widths", v)?;
        }
        if let Some(v) = get("attention_kernel") {
            n.attention_kernel = v.parse::<AttentionKernel>()?;
        }
        if let Some(v) = get("variant") {
            n.variant = v.parse::<Variant>()?;
        }
        if let Some(v) = get("learning_rate") {
            c.learning_rate = parse("learning_rate", v)?;
        }
        if let Some(v) = get("max_epochs") {
            c.max_epochs = parse("max_epochs", v)?;
        }
        if let Some(v) = get("batch_size") {
            c.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = get("seed") {
            c.seed = parse("seed", v)?;
        }
        if let Some(v) = get("early_stop_patience") {
            c.early_stop_patience = parse("early_stop_patience", v)?;
        }
        if let Some(v) = get("val_fraction") {
            c.val_fraction = parse("val_fraction", v)?;
        }
        if let Some(v) = get("alpha") {
            c.loss.alpha = parse("alpha", v)?;
        }
        if let Some(v) = get("gamma") {
            c.loss.gamma = parse("gamma", v)?;
        }
        if let Some(v) = get("loss_terms") {
            let mut t = LossTerms { bce: false, focal: false, dice: false };
            for term in v.split(',').map(str::trim) {
                match term {
                    "bce" => t.bce = true,
                    "focal" => t.focal = true,
                    "dice" => t.dice = true,
                    _ => return Err(Error::Config(format!("loss_terms: unknown term {term:?}"))),
                }
            }
            c.loss.terms = t;
        }
        if let Some(v) = get("class_weight_mode") {
            c.class_weight_mode = match v {
                "per_sample" => ClassWeightMode::PerSample,
                "dataset" => ClassWeightMode::Dataset,
                _ => return Err(Error::Config(format!("class_weight_mode: expected per_sample or dataset, got {v:?}"))),
            };
        }
        if let Some(v) = get("model") {
            c.model = match v {
                "int3dnet" => ModelKind::Intention,
                "forecaster" => ModelKind::Forecaster,
                _ => return Err(Error::Config(format!("model: expected int3dnet or forecaster, got {v:?}"))),
            };
        }
        if let Some(v) = get("forecast_horizon_frames") {
            c.forecast_horizon_frames = parse("forecast_horizon_frames", v)?;
        }
        if let Some(v) = get("forecast_feature_dim") {
            c.forecast_feature_dim = parse("forecast_feature_dim", v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
