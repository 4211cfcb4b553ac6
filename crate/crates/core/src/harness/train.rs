use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ClassWeightMode, ModelKind, TrainConfig};
use super::optim::Adam;
use crate::baselines::{ForecastTraining, Forecaster, ForecasterShape};
use crate::datapipe::{derive_seed, read_dataset_split, read_sample, save_model, Sample};
use crate::error::{Error, Result};
use crate::int3dnet::{forward_with_plan, gradient_with_plan, ModelParams, ScenePlan};
use crate::metrics::{auc, dice_score, DICE_THRESHOLD};
use crate::objective::{ClassWeight, LossBreakdown, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// Counted from 1.
    pub epoch: usize,
    /// Mean over the epoch's training samples.
    pub loss: LossBreakdown,
    pub val_dice: f64,
    pub val_auc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub updates: u64,
}

pub fn load_split(root: &Path, name: &str) -> Result<Vec<Sample>> {
    read_dataset_split(root, name)?.iter().map(|d| read_sample(d)).collect()
}

/// Per-sample scene geometry reused across epochs.
pub struct PreparedSample<'a> {
    pub sample: &'a Sample,
    pub plan: ScenePlan,
}

pub fn prepare<'a>(samples: &'a [Sample], cfg: &crate::int3dnet::NetworkConfig) -> Result<Vec<PreparedSample<'a>>> {
    samples
        .iter()
        .map(|s| {
            s.validate(Some(cfg.num_frames))?;
            Ok(PreparedSample { sample: s, plan: ScenePlan::new(&s.cloud, cfg)? })
        })
        .collect()
}

/// Mean validation Dice and AUC (AUC over samples where it is defined).
pub fn validate_model(data: &[PreparedSample], params: &ModelParams, cfg: &crate::int3dnet::NetworkConfig) -> Result<(f64, Option<f64>)> {
    let mut dice = 0.0;
    let mut aucs = Vec::new();
    for p in data {
        let (heat, _) = forward_with_plan(&p.plan, &p.sample.window, params, cfg)?;
        dice += dice_score(&heat, &p.sample.gt.mask, DICE_THRESHOLD)?;
        if let Ok(a) = auc(&heat, &p.sample.gt.mask) {
            aucs.push(a);
        }
    }
    let n = data.len().max(1) as f64;
    let a = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok((dice / n, a))
}

fn dataset_weight(samples: &[Sample]) -> Result<f64> {
    let pos: usize = samples.iter().map(|s| s.gt.mask.positives()).sum();
    let total: usize = samples.iter().map(|s| s.gt.mask.len()).sum();
    if pos == 0 {
        return Err(Error::DegenerateLabel("training split has no positive points".into()));
    }
    Ok((total - pos) as f64 / pos as f64)
}

/// Validation indices: a seeded `val_fraction` share of the samples, or none.
fn carve_validation(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, u64::MAX)));
    let mut v = idx[..k].to_vec();
    v.sort_unstable();
    v
}

/// Trains the intention network on in-memory samples and returns the
/// parameters of the best validation epoch.
pub fn train_samples(samples: &[Sample], config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    let net = &config.network;
    let val_idx = carve_validation(samples.len(), config.val_fraction, config.seed);
    let (val, train): (Vec<Sample>, Vec<Sample>) = {
        let (mut v, mut t) = (Vec::new(), Vec::new());
        for (i, s) in samples.iter().enumerate() {
            if val_idx.binary_search(&i).is_ok() {
                v.push(s.clone());
            } else {
                t.push(s.clone());
            }
        }
        (v, t)
    };
    let mut loss_cfg: LossConfig = config.loss;
    let train = match config.class_weight_mode {
        ClassWeightMode::Dataset => {
            loss_cfg.class_weight = ClassWeight::Fixed(dataset_weight(&train)?);
            train
        }
        ClassWeightMode::PerSample => {
            // The per-sample weight is undefined without positives.
            let before = train.len();
            let kept: Vec<Sample> = train.into_iter().filter(|s| s.gt.mask.positives() > 0).collect();
            if kept.len() < before {
                warn!("skipping {} training samples without positive points", before - kept.len());
            }
            if kept.is_empty() {
                return Err(Error::DegenerateLabel("no training sample has positive points".into()));
            }
            kept
        }
    };
    let train_data = prepare(&train, net)?;
    let val_data = if val.is_empty() { None } else { Some(prepare(&val, net)?) };
    info!("training on {} samples, validating on {}", train.len(), val.len().max(train.len()));

    let mut params = ModelParams::init(net, config.seed)?;
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut best = params.clone();
    let mut best_dice = f64::NEG_INFINITY;
    let mut log = TrainLog::default();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, 0)));
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(config.batch_size) {
            let mut acc = params.zeros_like();
            for &i in chunk {
                let p = &train_data[i];
                let (b, g) = gradient_with_plan(&p.plan, &p.sample.window, &p.sample.gt.mask, &params, net, &loss_cfg)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("step {}: {m}", adam.steps() + 1)),
                        other => other,
                    })?;
                sum.bce += b.bce;
                sum.focal += b.focal;
                sum.dice += b.dice;
                sum.total += b.total;
                acc.scaled_add(1.0 / chunk.len() as f64, &g);
            }
            let step = adam.steps() + 1;
            adam.step(&mut params, &acc).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                other => other,
            })?;
        }
        let n = train_data.len() as f64;
        let mean = LossBreakdown {
            bce: sum.bce / n,
            focal: sum.focal / n,
            dice: sum.dice / n,
            total: sum.total / n,
        };
        let (val_dice, val_auc) = validate_model(val_data.as_deref().unwrap_or(&train_data), &params, net)?;
        let entry = EpochLog {
            epoch,
            loss: mean,
            val_dice,
            val_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.4} (bce {:.4} focal {:.4} dice {:.4}) val dice {val_dice:.4} auc {} in {:.1}s",
            mean.total,
            mean.bce,
            mean.focal,
            mean.dice,
            val_auc.map_or("-".into(), |a| format!("{a:.2}")),
            entry.seconds
        );
        log.epochs.push(entry);
        if val_dice > best_dice {
            best_dice = val_dice;
            best = params.clone();
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                info!("no validation improvement for {since_best} epochs; stopping");
                break;
            }
        }
    }
    log.updates = adam.steps();
    Ok((best, log))
}

/// Forecaster training pairs from samples that carry future frames.
pub fn train_forecaster_samples(samples: &[Sample], config: &TrainConfig) -> Result<(Forecaster, Vec<f64>)> {
    config.validate()?;
    let data: Vec<_> = samples
        .iter()
        .filter(|s| !s.future.is_empty())
        .map(|s| (s.window.clone(), s.future.clone()))
        .collect();
    if data.is_empty() {
        return Err(Error::arg("no training samples carry future frames"));
    }
    let shape = ForecasterShape {
        num_frames: config.network.num_frames,
        feature_dim: config.forecast_feature_dim,
        gcn_layers: config.network.gcn_layers,
        horizon_frames: config.forecast_horizon_frames,
    };
    let mut f = Forecaster::new(shape, config.seed)?;
    let opts = ForecastTraining {
        epochs: config.max_epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: config.seed,
    };
    let history = f.train(&data, &opts)?;
    Ok((f, history))
}

/// Trains from `root/train.txt` and writes the checkpoint to `out`.
pub fn train(root: &Path, config: &TrainConfig, out: &Path) -> Result<TrainLog> {
    let samples = load_split(root, "train")?;
    if samples.is_empty() {
        return Err(Error::arg(format!("{} lists no training samples", root.join("train.txt").display())));
    }
    match config.model {
        ModelKind::Intention => {
            let (params, log) = train_samples(&samples, config)?;
            save_model(out, &config.network, &params)?;
            Ok(log)
        }
        ModelKind::Forecaster => {
            let (f, history) = train_forecaster_samples(&samples, config)?;
            if history.is_empty() {
                warn!("forecaster trained for zero epochs");
            }
            f.save(out)?;
            let epochs = history
                .iter()
                .enumerate()
                .map(|(i, &l)| EpochLog {
                    epoch: i + 1,
                    loss: LossBreakdown { total: l, ..Default::default() },
                    val_dice: 0.0,
                    val_auc: None,
                    seconds: 0.0,
                })
                .collect();
            Ok(TrainLog { epochs, best_epoch: history.len(), updates: 0 })
        }
    }
}
