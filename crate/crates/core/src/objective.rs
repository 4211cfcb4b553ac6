//! Composite training objective: class-weighted BCE, focal loss and soft
//! dice, each evaluated on raw logits.
//!
//! BCE and focal terms use mean reduction over points. Logarithms of
//! probabilities are always taken through `softplus` so saturated logits
//! stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dice smoothing constant.
pub const DICE_EPSILON: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary per-point labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryIntentionMask {
    labels: Vec<u8>,
}

impl BinaryIntentionMask {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(i) = labels.iter().position(|&v| v > 1) {
            return Err(Error::arg(format!("label {i} is {}, expected 0 or 1", labels[i])));
        }
        Ok(Self { labels })
    }

    pub fn from_bools(values: impl IntoIterator<Item = bool>) -> Self {
        Self {
            labels: values.into_iter().map(u8::from).collect(),
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.labels[i] == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub bce: bool,
    pub focal: bool,
    pub dice: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        bce: true,
        focal: true,
        dice: true,
    };

    pub fn any(&self) -> bool {
        self.bce || self.focal || self.dice
    }
}

/// Where the positive-class weight of the BCE term comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassWeight {
    /// `N_neg / N_pos` of each sample's own mask.
    PerSample,
    /// A fixed value, e.g. the ratio over a whole training set.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub terms: LossTerms,
    pub class_weight: ClassWeight,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            terms: LossTerms::ALL,
            class_weight: ClassWeight::PerSample,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("focal alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !self.terms.any() {
            return Err(Error::Config("at least one loss term must be enabled".into()));
        }
        if let ClassWeight::Fixed(w) = self.class_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("class weight must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub focal: f64,
    pub dice: f64,
    pub total: f64,
}

fn check_inputs(logits: &[f64], mask: &BinaryIntentionMask) -> Result<()> {
    if logits.len() != mask.len() {
        return Err(Error::arg(format!("{} logits for {} labels", logits.len(), mask.len())));
    }
    if logits.is_empty() {
        return Err(Error::arg("loss over zero points"));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("logit {i} is not finite")));
    }
    Ok(())
}

/// `N_neg / N_pos`.
pub fn class_weight(mask: &BinaryIntentionMask) -> Result<f64> {
    let pos = mask.positives();
    if pos == 0 {
        return Err(Error::DegenerateLabel("mask has no positive points".into()));
    }
    Ok((mask.len() - pos) as f64 / pos as f64)
}

pub fn weighted_bce(logits: &[f64], mask: &BinaryIntentionMask, w: f64) -> Result<f64> {
    Ok(weighted_bce_grad(logits, mask, w, None)?)
}

fn weighted_bce_grad(logits: &[f64], mask: &BinaryIntentionMask, w: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    check_inputs(logits, mask)?;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::arg(format!("class weight must be finite and >= 0, got {w}")));
    }
    let n = logits.len() as f64;
    let mut sum = 0.0;
    for (i, &x) in logits.iter().enumerate() {
        sum += if mask.is_positive(i) { w * softplus(-x) } else { softplus(x) };
    }
    if let Some(g) = grad {
        for (i, &x) in logits.iter().enumerate() {
            g[i] += if mask.is_positive(i) { -w * sigmoid(-x) } else { sigmoid(x) } / n;
        }
    }
    Ok(sum / n)
}

pub fn focal_loss(logits: &[f64], mask: &BinaryIntentionMask, alpha: f64, gamma: f64) -> Result<f64> {
    focal_grad(logits, mask, alpha, gamma, None)
}

fn focal_grad(
    logits: &[f64],
    mask: &BinaryIntentionMask,
    alpha: f64,
    gamma: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_inputs(logits, mask)?;
    let n = logits.len() as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for (i, &x) in logits.iter().enumerate() {
        // z is the logit of the true class, p_t = sigmoid(z).
        let sign = if mask.is_positive(i) { 1.0 } else { -1.0 };
        let z = sign * x;
        let log_p = -softplus(-z);
        let p = sigmoid(z);
        let q = sigmoid(-z);
        let modulation = q.powf(gamma);
        sum += -alpha * modulation * log_p;
        if let Some(g) = grad.as_deref_mut() {
            let dz = alpha * modulation * (gamma * p * log_p - q);
            g[i] += sign * dz / n;
        }
    }
    Ok(sum / n)
}

/// Soft dice on sigmoid probabilities against binary labels.
pub fn dice_loss(logits: &[f64], mask: &BinaryIntentionMask, epsilon: f64) -> Result<f64> {
    dice_grad(logits, mask, epsilon, None)
}

fn dice_grad(logits: &[f64], mask: &BinaryIntentionMask, epsilon: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    check_inputs(logits, mask)?;
    let (mut inter, mut psum, mut ysum) = (0.0, 0.0, 0.0);
    for (i, &x) in logits.iter().enumerate() {
        let p = sigmoid(x);
        let y = mask.labels[i] as f64;
        inter += p * y;
        psum += p;
        ysum += y;
    }
    let num = 2.0 * inter + epsilon;
    let den = psum + ysum + epsilon;
    if let Some(g) = grad {
        for (i, &x) in logits.iter().enumerate() {
            let p = sigmoid(x);
            let y = mask.labels[i] as f64;
            let dp = -(2.0 * y * den - num) / (den * den);
            g[i] += dp * p * (1.0 - p);
        }
    }
    Ok(1.0 - num / den)
}

fn resolve_weight(mask: &BinaryIntentionMask, config: &LossConfig) -> Result<f64> {
    match config.class_weight {
        ClassWeight::PerSample => class_weight(mask),
        ClassWeight::Fixed(w) => Ok(w),
    }
}

pub fn total_loss(logits: &[f64], mask: &BinaryIntentionMask, config: &LossConfig) -> Result<(f64, LossBreakdown)> {
    let b = loss_and_grad(logits, mask, config, None)?;
    Ok((b.total, b))
}

/// Loss breakdown plus `d total / d logits`.
pub fn total_loss_with_grad(
    logits: &[f64],
    mask: &BinaryIntentionMask,
    config: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; logits.len()];
    let b = loss_and_grad(logits, mask, config, Some(&mut grad))?;
    Ok((b, grad))
}

fn loss_and_grad(
    logits: &[f64],
    mask: &BinaryIntentionMask,
    config: &LossConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    config.validate()?;
    check_inputs(logits, mask)?;
    let mut b = LossBreakdown::default();
    if config.terms.bce {
        let w = resolve_weight(mask, config)?;
        b.bce = weighted_bce_grad(logits, mask, w, grad.as_deref_mut())?;
    }
    if config.terms.focal {
        b.focal = focal_grad(logits, mask, config.alpha, config.gamma, grad.as_deref_mut())?;
    }
    if config.terms.dice {
        b.dice = dice_grad(logits, mask, DICE_EPSILON, grad.as_deref_mut())?;
    }
    b.total = b.bce + b.focal + b.dice;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[u8]) -> BinaryIntentionMask {
        BinaryIntentionMask::new(v.to_vec()).unwrap()
    }

    #[test]
    fn class_weight_cases() {
        let mut labels = vec![0u8; 90];
        labels.extend([1u8; 10]);
        assert_eq!(class_weight(&mask(&labels)).unwrap(), 9.0);
        assert_eq!(class_weight(&mask(&[0, 1, 0, 1])).unwrap(), 1.0);
        let mut labels = vec![1u8; 99];
        labels.push(0);
        assert!((class_weight(&mask(&labels)).unwrap() - 1.0 / 99.0).abs() < 1e-15);
        assert!(matches!(class_weight(&mask(&[0, 0])), Err(Error::DegenerateLabel(_))));
    }

    #[test]
    fn bce_hand_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((weighted_bce(&[0.0], &mask(&[1]), 4.0).unwrap() - 4.0 * ln2).abs() < 1e-12);
        assert!(weighted_bce(&[30.0], &mask(&[1]), 1.0).unwrap() < 1e-12);
        assert!((weighted_bce(&[0.0], &mask(&[0]), 7.0).unwrap() - ln2).abs() < 1e-12);
        assert!(matches!(weighted_bce(&[f64::NAN], &mask(&[0]), 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn focal_hand_values() {
        let f = focal_loss(&[0.0], &mask(&[1]), 0.25, 2.0).unwrap();
        assert!((f - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((f - 0.043322).abs() < 1e-6);
        assert!(focal_loss(&[30.0], &mask(&[1]), 0.25, 2.0).unwrap() < 1e-12);
        let xs = [-1.5, 0.2, 3.0, -0.1];
        let m = mask(&[1, 0, 1, 0]);
        let f0 = focal_loss(&xs, &m, 0.25, 0.0).unwrap();
        let bce = weighted_bce(&xs, &m, 1.0).unwrap();
        assert!((f0 - 0.25 * bce).abs() < 1e-9);
    }

    #[test]
    fn dice_hand_values() {
        let big = 1e3;
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let exact: Vec<f64> = labels.iter().map(|&y| if y == 1 { big } else { -big }).collect();
        assert!(dice_loss(&exact, &mask(&labels), DICE_EPSILON).unwrap().abs() < 1e-12);
        let flipped: Vec<f64> = exact.iter().map(|x| -x).collect();
        let d = dice_loss(&flipped, &mask(&labels), DICE_EPSILON).unwrap();
        assert!((d - (1.0 - DICE_EPSILON / (10.0 + DICE_EPSILON))).abs() < 1e-12);
        let pred = [big, big, big, big, -big, -big];
        let d = dice_loss(&pred, &mask(&[1, 1, 0, 0, 1, 1]), DICE_EPSILON).unwrap();
        assert!((d - (1.0 - (4.0 + DICE_EPSILON) / (8.0 + DICE_EPSILON))).abs() < 1e-12);
        assert!((d - 0.5).abs() < 1e-6);
    }

    #[test]
    fn total_hand_value() {
        let cfg = LossConfig {
            class_weight: ClassWeight::Fixed(1.0),
            ..LossConfig::default()
        };
        let (t, b) = total_loss(&[0.0], &mask(&[1]), &cfg).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let expected = ln2 + 0.0625 * ln2 + (1.0 - (1.0 + DICE_EPSILON) / (1.5 + DICE_EPSILON));
        assert!((t - expected).abs() < 1e-12);
        assert!((t - 1.06980).abs() < 1e-5);
        assert!((b.bce + b.focal + b.dice - t).abs() < 1e-12);

        let bce_only = LossConfig {
            terms: LossTerms { bce: true, focal: false, dice: false },
            ..LossConfig::default()
        };
        let xs = [0.3, -2.0, 1.0];
        let m = mask(&[1, 0, 0]);
        let (t, _) = total_loss(&xs, &m, &bce_only).unwrap();
        assert_eq!(t, weighted_bce(&xs, &m, 2.0).unwrap());

        let none = LossConfig {
            terms: LossTerms { bce: false, focal: false, dice: false },
            ..LossConfig::default()
        };
        assert!(total_loss(&xs, &m, &none).is_err());
    }

    #[test]
    fn saturated_total_vanishes() {
        let labels = [1, 0, 0, 1, 0, 0, 0];
        let xs: Vec<f64> = labels.iter().map(|&y| if y == 1 { 30.0 } else { -30.0 }).collect();
        let (t, _) = total_loss(&xs, &mask(&labels), &LossConfig::default()).unwrap();
        assert!(t < 1e-6, "{t}");
    }

    #[test]
    fn dice_gradient_bounded_at_zero_logits() {
        let m = mask(&[1, 0, 1, 0]);
        let (_, g) = total_loss_with_grad(&[0.0; 4], &m, &LossConfig::default()).unwrap();
        assert!(g.iter().all(|x| x.is_finite() && x.abs() < 10.0));
    }

    #[test]
    fn logit_gradient_matches_central_differences() {
        let xs = [0.7, -1.3, 2.2, -0.4, 0.05, -3.0];
        let m = mask(&[1, 0, 1, 0, 0, 1]);
        let cfg = LossConfig::default();
        let (_, g) = total_loss_with_grad(&xs, &m, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..xs.len() {
            let mut up = xs;
            let mut dn = xs;
            up[i] += h;
            dn[i] -= h;
            let fd = (total_loss(&up, &m, &cfg).unwrap().0 - total_loss(&dn, &m, &cfg).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
