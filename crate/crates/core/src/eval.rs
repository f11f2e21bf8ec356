//! Batch inference, scoring against ground truth, and perturbation sweeps.

use serde::{Deserialize, Serialize};
use tamperscope_tensor::{no_grad, Float};

use crate::error::Result;
use crate::metrics::{evaluate, mcc, pixel_eval, ConfusionCounts, MetricsReport, ScoredImage};
use crate::model::SiameseModel;
use crate::synth::dataset::sample_rng;
use crate::synth::forge::Task;
use crate::synth::{perturb, ForgerySample, Perturbation};
use crate::train::make_batch;

/// Source of the probability maps being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Model,
    /// Ground-truth masks as predictions (oracle self-test).
    Gt,
    /// All-zero maps.
    Zeros,
}

/// Row-major `H·W` probabilities for both images of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

/// Fused-output masks in eval mode.
pub fn predict<T: Float>(model: &SiameseModel<T>, samples: &[ForgerySample], batch_size: usize) -> Result<Vec<PairPrediction>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&ForgerySample> = chunk.iter().collect();
            let b = make_batch::<T>(&refs)?;
            let o = model.forward(&b.x1, &b.x2, None)?;
            let (o1, o2) = (o.o1.to_f64_vec(), o.o2.to_f64_vec());
            let hw = o1.len() / chunk.len();
            for i in 0..chunk.len() {
                out.push(PairPrediction {
                    p1: o1[i * hw..(i + 1) * hw].to_vec(),
                    p2: o2[i * hw..(i + 1) * hw].to_vec(),
                });
            }
        }
        Ok(out)
    })
}

pub fn baseline_predictions(samples: &[ForgerySample], predictor: Predictor) -> Vec<PairPrediction> {
    let map = |m: &crate::synth::Mask| -> Vec<f64> {
        match predictor {
            Predictor::Zeros => vec![0.0; m.data.len()],
            _ => m.data.iter().map(|&v| v as f64).collect(),
        }
    };
    samples.iter().map(|s| PairPrediction { p1: map(&s.mask1), p2: map(&s.mask2) }).collect()
}

pub fn task_name(t: Task) -> &'static str {
    match t {
        Task::Edd => "edd",
        Task::Idd => "idd",
        Task::Cstd => "cstd",
    }
}

/// Each pair contributes two images to the image-level counts.
pub fn score(samples: &[ForgerySample], preds: &[PairPrediction], threshold: f64, min_area_frac: f64) -> Result<MetricsReport> {
    let mut items = Vec::with_capacity(2 * samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let task = task_name(s.task()).to_string();
        items.push(ScoredImage {
            task: task.clone(),
            pred: p.p1.clone(),
            gt: s.mask1.data.clone(),
        });
        items.push(ScoredImage {
            task,
            pred: p.p2.clone(),
            gt: s.mask2.data.clone(),
        });
    }
    evaluate(&items, threshold, min_area_frac)
}

/// Pooled pixel MCC of predictions against the samples' masks.
pub fn pixel_mcc(samples: &[ForgerySample], preds: &[PairPrediction], threshold: f64) -> Result<f64> {
    let mut c = ConfusionCounts::default();
    for (s, p) in samples.iter().zip(preds) {
        c += pixel_eval(&p.p1, &s.mask1.data, threshold)?;
        c += pixel_eval(&p.p2, &s.mask2.data, threshold)?;
    }
    Ok(mcc(&c))
}

/// Applies `p` to both images of every sample; masks are untouched. Noise draws come from a
/// stream keyed by `(seed, sample index)`.
pub fn perturb_samples(samples: &[ForgerySample], p: Perturbation, seed: u64) -> Result<Vec<ForgerySample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sample_rng(seed, i as u64);
            let mut out = s.clone();
            out.img1 = perturb(&s.img1, p, &mut rng)?;
            out.img2 = perturb(&s.img2, p, &mut rng)?;
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub kind: String,
    pub level: f64,
    pub pixel_mcc: f64,
    pub image_mcc: f64,
}

pub fn robustness_curve<T: Float>(
    model: &SiameseModel<T>,
    samples: &[ForgerySample],
    levels: &[Perturbation],
    seed: u64,
    batch_size: usize,
    threshold: f64,
    min_area_frac: f64,
) -> Result<Vec<CurvePoint>> {
    levels
        .iter()
        .map(|&p| {
            let perturbed = perturb_samples(samples, p, seed)?;
            let preds = predict(model, &perturbed, batch_size)?;
            let report = score(&perturbed, &preds, threshold, min_area_frac)?;
            Ok(CurvePoint {
                kind: p.name().to_string(),
                level: p.level(),
                pixel_mcc: report.pixel.combined.mcc,
                image_mcc: report.image.combined.mcc,
            })
        })
        .collect()
}
