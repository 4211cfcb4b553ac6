use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use serde::Serialize;

use super::train::load_split;
use crate::baselines::{head_ray_scores, motion_forecast_scores, probabilities_to_heatmap, ForecastConfig, Forecaster, RayScorerConfig, PROBABILITY_CLIP};
use crate::datapipe::{load_model, Sample};
use crate::error::{Error, Result};
use crate::int3dnet::{forward, forward_with_plan, IntentionHeatmap, ModelParams, NetworkConfig, ScenePlan, Variant};
use crate::metrics::{attention_intention_srcc, mean_frames, mean_metrics, score_sample, EvalReport, ReportRow, SampleMetrics, SrccRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ours,
    Head,
    HeadScene,
    MotionForecast,
    SceneOnly,
    MlpFusion,
    MotionQuery,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ours,
        Method::Head,
        Method::HeadScene,
        Method::MotionForecast,
        Method::SceneOnly,
        Method::MlpFusion,
        Method::MotionQuery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Head => "head",
            Method::HeadScene => "head_scene",
            Method::MotionForecast => "motion_forecast",
            Method::SceneOnly => "scene_only",
            Method::MlpFusion => "mlp_fusion",
            Method::MotionQuery => "motion_query",
        }
    }

    /// Network variant behind a trained intention method.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Ours => Some(Variant::Full),
            Method::HeadScene => Some(Variant::HeadScene),
            Method::SceneOnly => Some(Variant::SceneOnly),
            Method::MlpFusion => Some(Variant::MlpFusion),
            Method::MotionQuery => Some(Variant::MotionQuery),
            Method::Head | Method::MotionForecast => None,
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        self != Method::Head
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::arg(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// What the attention weights are correlated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SrccTarget {
    /// The continuous ground-truth heatmap.
    #[default]
    Heatmap,
    /// The binary mask.
    Mask,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOptions {
    pub ray: RayScorerConfig,
    pub forecast: ForecastConfig,
    pub srcc_target: SrccTarget,
}

/// Prediction for one sample plus optional N×T attention weights.
pub type Prediction = (IntentionHeatmap, Option<ndarray::Array2<f64>>);

/// A loaded method ready to score samples.
pub enum Predictor {
    Head(RayScorerConfig),
    Network { config: NetworkConfig, params: ModelParams },
    Forecast { forecaster: Forecaster, config: ForecastConfig },
}

impl Predictor {
    /// Loads the checkpoint a method needs and checks that it matches.
    pub fn load(method: Method, checkpoint: Option<&Path>, options: &EvalOptions) -> Result<Self> {
        if !method.needs_checkpoint() {
            return Ok(Predictor::Head(options.ray));
        }
        let path = checkpoint.ok_or_else(|| Error::Usage(format!("method {method} needs a checkpoint")))?;
        match method.variant() {
            Some(v) => {
                let (config, params) = load_model(path)?;
                if config.variant != v {
                    return Err(Error::Usage(format!(
                        "checkpoint {} holds variant {}, method {method} needs {v}",
                        path.display(),
                        config.variant
                    )));
                }
                Ok(Predictor::Network { config, params })
            }
            None => Ok(Predictor::Forecast { forecaster: Forecaster::load(path)?, config: options.forecast }),
        }
    }

    pub fn predict(&self, sample: &Sample) -> Result<Prediction> {
        match self {
            Predictor::Head(cfg) => {
                let s = head_ray_scores(&sample.cloud, &sample.window, cfg)?;
                Ok((probabilities_to_heatmap(&s, PROBABILITY_CLIP), None))
            }
            Predictor::Network { config, params } => {
                let (heat, bundle) = forward(&sample.cloud, &sample.window, params, config)?;
                Ok((heat, bundle.attention_weights))
            }
            Predictor::Forecast { forecaster, config } => {
                let mut cfg = *config;
                cfg.horizon_frames = forecast_frames(sample, forecaster.shape.horizon_frames);
                let s = motion_forecast_scores(&sample.cloud, &sample.window, forecaster, &cfg)?;
                Ok((probabilities_to_heatmap(&s, PROBABILITY_CLIP), None))
            }
        }
    }
}

/// Future frame that corresponds to the sample's horizon at the window rate.
pub fn forecast_frames(sample: &Sample, max_frames: usize) -> usize {
    let f = (sample.horizon_ms as f64 / 1000.0 / sample.window.frame_interval()).round() as usize;
    f.clamp(1, max_frames)
}

/// Scores every sample with `predict` and aggregates per horizon.
/// Horizons without samples become absent cells; samples without a
/// positive point are skipped with a warning.
pub fn evaluate_samples(
    method: &str,
    samples: &[Sample],
    horizons: &[u32],
    srcc_target: SrccTarget,
    mut predict: impl FnMut(&Sample) -> Result<Prediction>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::arg("test split is empty"));
    }
    let mut hs = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    if hs.is_empty() {
        return Err(Error::arg("no horizons requested"));
    }
    let mut report = EvalReport::default();
    let mut per_horizon = Vec::new();
    let mut srcc_rows = Vec::new();
    for &h in &hs {
        let mut scores: Vec<SampleMetrics> = Vec::new();
        let mut frames = Vec::new();
        for s in samples.iter().filter(|s| s.horizon_ms == h) {
            if s.gt.mask.positives() == 0 {
                warn!("sample {} has no positive points; skipped", s.sample_id);
                continue;
            }
            let (heat, weights) = predict(s)?;
            scores.push(score_sample(&heat, &s.gt)?);
            if let Some(w) = weights {
                let target: Vec<f64> = match srcc_target {
                    SrccTarget::Heatmap => s.gt.heatmap.clone(),
                    SrccTarget::Mask => s.gt.mask.labels().iter().map(|&b| b as f64).collect(),
                };
                frames.push(attention_intention_srcc(&w, &target)?);
            }
        }
        let m = mean_metrics(&scores);
        if m.is_none() {
            warn!("no usable samples at horizon {h} ms");
        }
        per_horizon.push(m);
        report.rows.push(ReportRow {
            method: method.to_string(),
            horizon_ms: Some(h),
            samples: scores.len(),
            metrics: m,
        });
        if !frames.is_empty() {
            let mean = mean_frames(&frames);
            srcc_rows.push(mean.clone());
            report.srcc.push(SrccRow { method: method.to_string(), horizon_ms: Some(h), frames: mean });
        }
    }
    let defined: Vec<SampleMetrics> = per_horizon.iter().flatten().copied().collect();
    report.rows.push(ReportRow {
        method: method.to_string(),
        horizon_ms: None,
        samples: report.rows.iter().map(|r| r.samples).sum(),
        metrics: mean_metrics(&defined),
    });
    if !srcc_rows.is_empty() {
        report.srcc.push(SrccRow { method: method.to_string(), horizon_ms: None, frames: mean_frames(&srcc_rows) });
    }
    report.validate()?;
    Ok(report)
}

/// Evaluates a method on `root/test.txt`. Reads only.
pub fn evaluate(root: &Path, method: Method, checkpoint: Option<&Path>, horizons: &[u32], options: &EvalOptions) -> Result<EvalReport> {
    let predictor = Predictor::load(method, checkpoint, options)?;
    let samples = load_split(root, "test")?;
    evaluate_samples(method.name(), &samples, horizons, options.srcc_target, |s| predictor.predict(s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub reps: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Forward latency over `reps` runs after `warmup` discarded runs. Scene
/// preprocessing is part of each timed run.
pub fn timing_probe(config: &NetworkConfig, params: &ModelParams, sample: &Sample, reps: usize, warmup: usize) -> Result<TimingStats> {
    if reps == 0 {
        return Err(Error::arg("timing needs at least one repetition"));
    }
    let run = || -> Result<f64> {
        let t0 = Instant::now();
        let plan = ScenePlan::new(&sample.cloud, config)?;
        let out = forward_with_plan(&plan, &sample.window, params, config)?;
        std::hint::black_box(&out);
        Ok(t0.elapsed().as_secs_f64() * 1e3)
    };
    for _ in 0..warmup {
        run()?;
    }
    let times = (0..reps).map(|_| run()).collect::<Result<Vec<_>>>()?;
    let n = reps as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(TimingStats {
        reps,
        warmup,
        mean_ms: mean,
        std_ms: var.sqrt(),
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
