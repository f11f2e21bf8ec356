//! Forensic scores at pixel and image level.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_AREA_FRAC: f64 = 0.001;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / den.sqrt()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

pub fn balanced_accuracy(c: &ConfusionCounts) -> f64 {
    (ratio(c.tp, c.tp + c.fn_) + ratio(c.tn, c.tn + c.fp)) / 2.0
}

/// Pooled pixel counts; `pred` holds probabilities, `gt` holds 0/1 labels.
pub fn pixel_eval(pred: &[f64], gt: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(CoreError::LengthMismatch {
            what: "pixel prediction and mask",
            left: pred.len(),
            right: gt.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        c.record(p > threshold, g != 0);
    }
    Ok(c)
}

/// An image is called manipulated when at least `min_area_frac` of its pixels exceed the threshold.
pub fn image_positive(pred: &[f64], threshold: f64, min_area_frac: f64) -> bool {
    let above = pred.iter().filter(|&&p| p > threshold).count();
    above > 0 && above as f64 >= min_area_frac * pred.len() as f64
}

pub fn image_eval(preds: &[Vec<f64>], gts: &[Vec<u8>], threshold: f64, min_area_frac: f64) -> Result<ConfusionCounts> {
    if preds.len() != gts.len() {
        return Err(CoreError::LengthMismatch {
            what: "image predictions and masks",
            left: preds.len(),
            right: gts.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, g) in preds.iter().zip(gts) {
        c.record(image_positive(p, threshold, min_area_frac), g.iter().any(|&v| v != 0));
    }
    Ok(c)
}

/// Mann–Whitney AUC with half credit for ties; `None` when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(CoreError::LengthMismatch {
            what: "scores and labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks); `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(CoreError::LengthMismatch {
            what: "spearman inputs",
            left: x.len(),
            right: y.len(),
        });
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (vx * vy).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pixel,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub counts: ConfusionCounts,
    pub mcc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `null` when only one class is present.
    pub auc: Option<f64>,
    pub bacc: f64,
    pub samples: usize,
}

impl Scores {
    pub fn from_counts(counts: ConfusionCounts, auc: Option<f64>, samples: usize) -> Self {
        let (precision, recall, f1) = prf1(&counts);
        Scores {
            counts,
            mcc: mcc(&counts),
            precision,
            recall,
            f1,
            auc,
            bacc: balanced_accuracy(&counts),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: Level,
    pub combined: Scores,
    pub per_task: BTreeMap<String, Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub min_area_frac: f64,
    pub pixel: LevelReport,
    pub image: LevelReport,
    /// Set when any input was produced by the block-quantization JPEG proxy.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Predictions for one image of a pair, tagged with its task.
#[derive(Debug, Clone)]
pub struct ScoredImage {
    pub task: String,
    pub pred: Vec<f64>,
    pub gt: Vec<u8>,
}

/// Image-level AUC scores each image by its maximum pixel probability.
pub fn evaluate(items: &[ScoredImage], threshold: f64, min_area_frac: f64) -> Result<MetricsReport> {
    let mut groups: BTreeMap<String, Vec<&ScoredImage>> = BTreeMap::new();
    for it in items {
        groups.entry(it.task.clone()).or_default().push(it);
    }
    let score = |set: &[&ScoredImage]| -> Result<(Scores, Scores)> {
        let mut pc = ConfusionCounts::default();
        let (mut pix_scores, mut pix_labels) = (Vec::new(), Vec::new());
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for it in set {
            pc += pixel_eval(&it.pred, &it.gt, threshold)?;
            pix_scores.extend_from_slice(&it.pred);
            pix_labels.extend(it.gt.iter().map(|&g| g != 0));
            preds.push(it.pred.clone());
            gts.push(it.gt.clone());
        }
        let ic = image_eval(&preds, &gts, threshold, min_area_frac)?;
        let img_scores: Vec<f64> = preds.iter().map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let img_labels: Vec<bool> = gts.iter().map(|g| g.iter().any(|&v| v != 0)).collect();
        Ok((
            Scores::from_counts(pc, auc(&pix_scores, &pix_labels)?, set.len()),
            Scores::from_counts(ic, auc(&img_scores, &img_labels)?, set.len()),
        ))
    };
    let all: Vec<&ScoredImage> = items.iter().collect();
    let (pixel, image) = score(&all)?;
    let mut pixel_tasks = BTreeMap::new();
    let mut image_tasks = BTreeMap::new();
    for (task, set) in &groups {
        let (p, i) = score(set)?;
        pixel_tasks.insert(task.clone(), p);
        image_tasks.insert(task.clone(), i);
    }
    Ok(MetricsReport {
        threshold,
        min_area_frac,
        pixel: LevelReport {
            level: Level::Pixel,
            combined: pixel,
            per_task: pixel_tasks,
        },
        image: LevelReport {
            level: Level::Image,
            combined: image,
            per_task: image_tasks,
        },
        note: None,
    })
}
