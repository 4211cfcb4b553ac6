//! Heatmap evaluation: SIM, ROC AUC, mIoU, Dice and rank correlation.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::int3dnet::IntentionHeatmap;
use crate::objective::{sigmoid, BinaryIntentionMask};

/// Default binarization grid for [`miou`].
pub const MIOU_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DICE_THRESHOLD: f64 = 0.5;

/// Continuous heatmap and the mask obtained by thresholding it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub heatmap: Vec<f64>,
    pub mask: BinaryIntentionMask,
}

impl GroundTruth {
    pub fn from_heatmap(heatmap: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::arg(format!("threshold {tau} outside (0, 1)")));
        }
        if heatmap.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return Err(Error::arg("heatmap values must lie in [0, 1]"));
        }
        let mask = BinaryIntentionMask::from_bools(heatmap.iter().map(|&h| h >= tau));
        Ok(Self { heatmap, mask })
    }

    pub fn len(&self) -> usize {
        self.heatmap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heatmap.is_empty()
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::arg(format!("prediction has {a} points, ground truth has {b}")));
    }
    Ok(())
}

fn probabilities(pred: &IntentionHeatmap) -> Vec<f64> {
    pred.logits.iter().map(|&x| sigmoid(x)).collect()
}

/// Histogram intersection of the two sum-normalized maps.
pub fn sim(pred: &IntentionHeatmap, gt_heatmap: &[f64]) -> Result<f64> {
    check_len(pred.len(), gt_heatmap.len())?;
    let g_sum: f64 = gt_heatmap.iter().sum();
    if !(g_sum > 0.0) {
        return Err(Error::DegenerateLabel("ground-truth heatmap sums to zero".into()));
    }
    let p = probabilities(pred);
    let p_sum: f64 = p.iter().sum();
    if !(p_sum > 0.0) {
        return Ok(0.0);
    }
    let s: f64 = p
        .iter()
        .zip(gt_heatmap)
        .map(|(a, b)| (a / p_sum).min(b / g_sum))
        .sum();
    Ok(s.clamp(0.0, 1.0))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// 100 × ROC AUC via the rank-sum statistic, ties counted as one half.
pub fn auc(pred: &IntentionHeatmap, mask: &BinaryIntentionMask) -> Result<f64> {
    check_len(pred.len(), mask.len())?;
    let pos = mask.positives();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabel("AUC needs both positive and negative labels".into()));
    }
    let ranks = mid_ranks(&pred.logits);
    let rank_sum: f64 = ranks.iter().zip(mask.labels()).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(100.0 * u / (pos as f64 * neg as f64))
}

fn overlap(pred: &[bool], mask: &BinaryIntentionMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut p = 0;
    for (&x, &y) in pred.iter().zip(mask.labels()) {
        p += x as usize;
        inter += (x && y == 1) as usize;
    }
    (inter, p, mask.positives())
}

pub fn miou(pred: &IntentionHeatmap, mask: &BinaryIntentionMask, thresholds: &[f64]) -> Result<f64> {
    check_len(pred.len(), mask.len())?;
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::arg("thresholds must be non-empty and lie in (0, 1)"));
    }
    let p = probabilities(pred);
    let mut total = 0.0;
    for &t in thresholds {
        let bin: Vec<bool> = p.iter().map(|&v| v >= t).collect();
        let (inter, a, b) = overlap(&bin, mask);
        let union = a + b - inter;
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(100.0 * total / thresholds.len() as f64)
}

pub fn dice_score(pred: &IntentionHeatmap, mask: &BinaryIntentionMask, tau: f64) -> Result<f64> {
    check_len(pred.len(), mask.len())?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("threshold {tau} outside (0, 1)")));
    }
    let bin: Vec<bool> = pred.logits.iter().map(|&x| sigmoid(x) >= tau).collect();
    let (inter, a, b) = overlap(&bin, mask);
    Ok(if a + b == 0 { 1.0 } else { 2.0 * inter as f64 / (a + b) as f64 })
}

/// Spearman correlation: Pearson correlation of mid-ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("srcc needs two vectors of equal length ≥ 2"));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::DegenerateInput("rank correlation of a constant vector".into()));
    }
    let (ra, rb) = (mid_ranks(a), mid_ranks(b));
    let mean = (a.len() + 1) as f64 / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Rank correlation of each attention column with the target; constant
/// columns are reported as `None`.
pub fn attention_intention_srcc(weights: &Array2<f64>, target: &[f64]) -> Result<Vec<Option<f64>>> {
    if weights.nrows() != target.len() {
        return Err(Error::arg(format!(
            "attention has {} rows, target has {} points",
            weights.nrows(),
            target.len()
        )));
    }
    weights
        .columns()
        .into_iter()
        .map(|c| match srcc(&c.to_vec(), target) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sim: f64,
    pub auc: f64,
    pub miou: f64,
    pub dice: f64,
}

pub fn score_sample(pred: &IntentionHeatmap, gt: &GroundTruth) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        sim: sim(pred, &gt.heatmap)?,
        auc: auc(pred, &gt.mask)?,
        miou: miou(pred, &gt.mask, &MIOU_THRESHOLDS)?,
        dice: dice_score(pred, &gt.mask, DICE_THRESHOLD)?,
    })
}

/// One (method, horizon) cell; `horizon_ms = None` is the average over horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub horizon_ms: Option<u32>,
    pub samples: usize,
    pub metrics: Option<SampleMetrics>,
}

/// Per-frame attention correlation for one horizon (`None` = average).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrccRow {
    pub method: String,
    pub horizon_ms: Option<u32>,
    pub frames: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub srcc: Vec<SrccRow>,
}

/// Mean of each metric.
pub fn mean_metrics(items: &[SampleMetrics]) -> Option<SampleMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let sum = |f: fn(&SampleMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    Some(SampleMetrics {
        sim: sum(|m| m.sim),
        auc: sum(|m| m.auc),
        miou: sum(|m| m.miou),
        dice: sum(|m| m.dice),
    })
}

/// Elementwise mean over the defined entries of each frame.
pub fn mean_frames(rows: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let t = rows.iter().map(Vec::len).max().unwrap_or(0);
    (0..t)
        .map(|j| {
            let v: Vec<f64> = rows.iter().filter_map(|r| r.get(j).copied().flatten()).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn horizon_label(h: Option<u32>) -> String {
    h.map_or_else(|| "avg".to_string(), |h| h.to_string())
}

impl EvalReport {
    /// Checks metric ranges and that horizons ascend within each method.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if let Some(m) = r.metrics {
                let ok = (0.0..=1.0).contains(&m.sim)
                    && (0.0..=100.0).contains(&m.auc)
                    && (0.0..=100.0).contains(&m.miou)
                    && (0.0..=1.0).contains(&m.dice);
                if !ok {
                    return Err(Error::Numeric(format!("metrics out of range for {}: {m:?}", r.method)));
                }
            }
        }
        for pair in self.rows.windows(2) {
            if pair[0].method == pair[1].method {
                if let (Some(a), Some(b)) = (pair[0].horizon_ms, pair[1].horizon_ms) {
                    if a >= b {
                        return Err(Error::arg("horizons must ascend within a method"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn row(&self, method: &str, horizon_ms: Option<u32>) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon_ms == horizon_ms)
    }

    /// Tab-separated table: metrics first, then per-frame correlations.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\thorizon_ms\tsamples\tsim\tauc\tmiou\tdice\n");
        for r in &self.rows {
            let m = r.metrics;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method,
                horizon_label(r.horizon_ms),
                r.samples,
                cell(m.map(|m| m.sim), 4),
                cell(m.map(|m| m.auc), 2),
                cell(m.map(|m| m.miou), 2),
                cell(m.map(|m| m.dice), 4)
            );
        }
        if !self.srcc.is_empty() {
            let t = self.srcc.iter().map(|r| r.frames.len()).max().unwrap_or(0);
            s.push_str("\nmethod\thorizon_ms");
            for j in 1..=t {
                let _ = write!(s, "\tframe{j}");
            }
            s.push('\n');
            for r in &self.srcc {
                let _ = write!(s, "{}\t{}", r.method, horizon_label(r.horizon_ms));
                for v in &r.frames {
                    let _ = write!(s, "\t{}", cell(*v, 4));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(v: &[f64]) -> IntentionHeatmap {
        IntentionHeatmap { logits: v.to_vec() }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn mask(v: &[u8]) -> BinaryIntentionMask {
        BinaryIntentionMask::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sim_examples() {
        let g = [0.2, 0.4, 0.0, 0.9];
        let p: Vec<f64> = [0.1, 0.2, 1e-300, 0.45].iter().map(|&q| logit(q)).collect();
        assert!((sim(&heat(&p), &g).unwrap() - 1.0).abs() < 1e-9);
        assert!((sim(&heat(&[0.0, 0.0]), &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(sim(&heat(&[-800.0, 40.0]), &[1.0, 0.0]).unwrap() < 1e-12);
        assert!(matches!(sim(&heat(&[0.0]), &[0.0]), Err(Error::DegenerateLabel(_))));
    }

    #[test]
    fn auc_examples() {
        let m = mask(&[1, 1, 0, 0, 0]);
        assert_eq!(auc(&heat(&[3.0, 2.0, 1.0, 0.0, -1.0]), &m).unwrap(), 100.0);
        assert_eq!(auc(&heat(&[0.5; 5]), &m).unwrap(), 50.0);
        assert_eq!(auc(&heat(&[-3.0, -2.0, 1.0, 0.0, -1.0]), &m).unwrap(), 0.0);
        assert!(matches!(auc(&heat(&[1.0, 2.0]), &mask(&[1, 1])), Err(Error::DegenerateLabel(_))));
    }

    #[test]
    fn miou_and_dice_examples() {
        let p = heat(&[logit(0.9), logit(0.6), logit(0.2), logit(0.1)]);
        let m = mask(&[1, 1, 0, 0]);
        assert!((miou(&p, &m, &[0.5]).unwrap() - 100.0).abs() < 1e-12);
        assert!((miou(&p, &m, &[0.8]).unwrap() - 50.0).abs() < 1e-12);
        assert!((miou(&p, &m, &[0.5, 0.8]).unwrap() - 75.0).abs() < 1e-12);
        assert_eq!(miou(&heat(&[-30.0; 4]), &m, &MIOU_THRESHOLDS).unwrap(), 0.0);
        let hard = heat(&[40.0, 40.0, -40.0, -40.0]);
        assert_eq!(miou(&hard, &m, &MIOU_THRESHOLDS).unwrap(), 100.0);
        assert_eq!(dice_score(&hard, &m, 0.5).unwrap(), 1.0);
        let x = heat(&[5.0, 5.0, 5.0, 5.0, -5.0, -5.0]);
        assert_eq!(dice_score(&x, &mask(&[0, 0, 1, 1, 1, 1]), 0.5).unwrap(), 0.5);
        assert_eq!(dice_score(&heat(&[5.0, -5.0]), &mask(&[0, 1]), 0.5).unwrap(), 0.0);
        assert_eq!(dice_score(&heat(&[-5.0, -5.0]), &mask(&[0, 0]), 0.5).unwrap(), 1.0);
        assert!(miou(&hard, &m, &[]).is_err());
    }

    #[test]
    fn srcc_examples() {
        assert!((srcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(srcc(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateInput(_))));
        assert_eq!(mid_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn attention_columns() {
        let gt = [0.1, 0.9, 0.4];
        let w = ndarray::array![[0.2, 0.5], [0.7, 0.5], [0.5, 0.5]];
        let r = attention_intention_srcc(&w, &gt).unwrap();
        assert!((r[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r[1], None);
    }

    #[test]
    fn ground_truth_mask_follows_threshold() {
        let gt = GroundTruth::from_heatmap(vec![0.2, 0.5, 0.9], 0.5).unwrap();
        assert_eq!(gt.mask.labels(), &[0, 1, 1]);
        assert!(GroundTruth::from_heatmap(vec![1.5], 0.5).is_err());
    }

    #[test]
    fn report_formats() {
        let m = SampleMetrics { sim: 0.5, auc: 90.0, miou: 40.0, dice: 0.3 };
        let report = EvalReport {
            rows: vec![
                ReportRow { method: "ours".into(), horizon_ms: Some(500), samples: 3, metrics: Some(m) },
                ReportRow { method: "ours".into(), horizon_ms: Some(1000), samples: 0, metrics: None },
                ReportRow { method: "ours".into(), horizon_ms: None, samples: 3, metrics: Some(m) },
            ],
            srcc: vec![SrccRow { method: "ours".into(), horizon_ms: None, frames: vec![Some(0.25), None] }],
        };
        report.validate().unwrap();
        let tsv = report.to_tsv();
        assert!(tsv.contains("ours\t500\t3\t0.5000\t90.00\t40.00\t0.3000"));
        assert!(tsv.contains("ours\t1000\t0\t-\t-\t-\t-"));
        assert!(tsv.contains("ours\tavg\t0.2500\t-"));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
