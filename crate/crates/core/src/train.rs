//! AdamW training loop with cosine decay, early stopping and divergence recovery.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tamperscope_tensor::nn::Module;
use tamperscope_tensor::{no_grad, Float, Tensor, TensorError};

use crate::error::{CoreError, Result};
use crate::metrics::{mcc, pixel_eval, ConfusionCounts, DEFAULT_THRESHOLD};
use crate::model::{loss, ModelConfig, SiameseModel};
use crate::synth::ForgerySample;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Final learning rate is `lr / LR_FLOOR_DIV`.
pub const LR_FLOOR_DIV: f64 = 100.0;

/// Stacked pair batch: images `[B,3,H,W]`, masks `[B,1,H,W]`.
#[derive(Debug, Clone)]
pub struct Batch<T: Float> {
    pub x1: Tensor<T>,
    pub x2: Tensor<T>,
    pub t1: Tensor<T>,
    pub t2: Tensor<T>,
}

pub fn make_batch<T: Float>(samples: &[&ForgerySample]) -> Result<Batch<T>> {
    let first = samples.first().ok_or(CoreError::EmptyDataset)?;
    let (h, w) = (first.img1.height, first.img1.width);
    for s in samples {
        for (hh, ww) in [(s.img1.height, s.img1.width), (s.img2.height, s.img2.width), (s.mask1.height, s.mask1.width), (s.mask2.height, s.mask2.width)] {
            if (hh, ww) != (h, w) {
                return Err(CoreError::BadImageSize { expected: h, height: hh, width: ww });
            }
        }
    }
    let b = samples.len();
    let img = |pick: fn(&ForgerySample) -> &crate::synth::Image| {
        let data: Vec<T> = samples.iter().flat_map(|s| pick(s).data.iter().map(|&v| T::of(v as f64 / 255.0))).collect();
        Tensor::new(data, &[b, 3, h, w])
    };
    let mask = |pick: fn(&ForgerySample) -> &crate::synth::Mask| {
        let data: Vec<T> = samples.iter().flat_map(|s| pick(s).data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() })).collect();
        Tensor::new(data, &[b, 1, h, w])
    };
    Ok(Batch {
        x1: img(|s| &s.img1)?,
        x2: img(|s| &s.img2)?,
        t1: mask(|s| &s.mask1)?,
        t2: mask(|s| &s.mask2)?,
    })
}

/// Decoupled-weight-decay Adam. Moments are kept in f64 regardless of the model dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Float, M: Module<T>>(model: &M, weight_decay: f64) -> Self {
        let mut m = Vec::new();
        model.visit("", &mut |_, t| m.push(vec![0.0; t.numel()]));
        AdamW {
            weight_decay,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update with the gradients currently accumulated on `model`.
    pub fn update<T: Float, M: Module<T>>(&mut self, model: &mut M, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let (wd, ms, vs) = (self.weight_decay, &mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_mut("", &mut |_, t| {
            let grad = t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]);
            let (m, v) = (&mut ms[i], &mut vs[i]);
            let data: Vec<T> = t
                .data()
                .iter()
                .zip(grad)
                .enumerate()
                .map(|(j, (&p, g))| {
                    let g = g.as_f64();
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    let p = p.as_f64();
                    T::of(p - lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * p))
                })
                .collect();
            let shape = t.shape().to_vec();
            *t = Tensor::param(data, &shape).expect("update keeps shape");
            i += 1;
        });
    }
}

/// Learning rate for `epoch` (0-based): cosine from `lr` down to `lr / 100` at the last epoch.
pub fn cosine_lr(lr: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let floor = lr / LR_FLOOR_DIV;
    let t = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    floor + 0.5 * (lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Epoch-local stream for shuffling and drop-path.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11_0000_0000);
    rng.set_stream(epoch as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub pixel_mcc: f64,
}

/// Everything needed to resume a run besides the model and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stale_epochs: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}


pub fn snapshot<T: Float, M: Module<T>>(model: &M) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    model.visit("", &mut |_, t| out.push(t.to_vec()));
    out
}

pub fn restore<T: Float, M: Module<T>>(model: &mut M, snap: &[Vec<T>]) {
    let mut i = 0;
    model.visit_mut("", &mut |_, t| {
        let shape = t.shape().to_vec();
        *t = Tensor::param(snap[i].clone(), &shape).expect("snapshot matches model");
        i += 1;
    });
}

fn diverged(e: CoreError, epoch: usize) -> CoreError {
    match e {
        CoreError::Tensor(TensorError::NonFiniteResult { .. }) => CoreError::DivergedLoss { epoch },
        other => other,
    }
}

/// Mean loss and pooled fused-output pixel MCC in eval mode.
pub fn evaluate_loss<T: Float>(model: &SiameseModel<T>, samples: &[ForgerySample], batch_size: usize) -> Result<(f64, f64)> {
    no_grad(|| {
        let mut total = 0.0;
        let mut counts = ConfusionCounts::default();
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&ForgerySample> = chunk.iter().collect();
            let b = make_batch::<T>(&refs)?;
            let out = model.forward(&b.x1, &b.x2, None)?;
            total += loss(&out, &b.t1, &b.t2, model.cfg.loss_weights)?.item()?.as_f64() * chunk.len() as f64;
            for (o, t) in [(&out.o1, &b.t1), (&out.o2, &b.t2)] {
                let gt: Vec<u8> = t.data().iter().map(|v| (v.as_f64() > 0.5) as u8).collect();
                counts += pixel_eval(&o.to_f64_vec(), &gt, DEFAULT_THRESHOLD)?;
            }
        }
        Ok((total / samples.len().max(1) as f64, mcc(&counts)))
    })
}

/// Runs the remaining epochs of `state`. `on_epoch` sees every log entry together with the
/// model and optimizer as they stand after that epoch (useful for checkpointing).
///
/// Early stopping tracks validation loss (training loss when `val` is empty) and restores the
/// best parameters at the end. On a non-finite loss the model is rolled back to the start of
/// the failing epoch and `DivergedLoss` is returned.
pub fn train<T: Float>(
    model: &mut SiameseModel<T>,
    opt: &mut AdamW,
    state: &mut TrainState,
    train_set: &[ForgerySample],
    val: &[ForgerySample],
    mut on_epoch: impl FnMut(&EpochLog, &SiameseModel<T>, &AdamW, &TrainState) -> Result<()>,
) -> Result<()> {
    if train_set.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let cfg: ModelConfig = model.cfg.clone();
    let mut best = snapshot(model);
    while state.epoch < cfg.epochs && !state.stopped_early {
        let epoch = state.epoch;
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let good = (snapshot(model), opt.clone());
        let mut sum = 0.0;
        let step = |model: &mut SiameseModel<T>, opt: &mut AdamW, rng: &mut ChaCha8Rng, idx: &[usize]| -> Result<f64> {
            let refs: Vec<&ForgerySample> = idx.iter().map(|&i| &train_set[i]).collect();
            let b = make_batch::<T>(&refs)?;
            model.zero_grad();
            let out = model.forward(&b.x1, &b.x2, Some(rng))?;
            let l = loss(&out, &b.t1, &b.t2, cfg.loss_weights)?;
            let value = l.item()?.as_f64();
            if !value.is_finite() {
                return Err(CoreError::Tensor(TensorError::NonFiniteResult { op: "loss" }));
            }
            l.backward()?;
            opt.update(model, lr);
            Ok(value * idx.len() as f64)
        };
        for chunk in order.chunks(cfg.batch_size) {
            match step(model, opt, &mut rng, chunk) {
                Ok(v) => sum += v,
                Err(e) => {
                    restore(model, &good.0);
                    *opt = good.1;
                    return Err(diverged(e, epoch));
                }
            }
        }
        let train_loss = sum / train_set.len() as f64;
        let (val_loss, pixel_mcc) = if val.is_empty() { (train_loss, f64::NAN) } else { evaluate_loss(model, val, cfg.batch_size)? };
        if !val_loss.is_finite() {
            restore(model, &good.0);
            *opt = good.1;
            return Err(CoreError::DivergedLoss { epoch });
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            pixel_mcc: if pixel_mcc.is_finite() { pixel_mcc } else { 0.0 },
        };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e} pixel-mcc {:.4}", entry.pixel_mcc);
        match state.best_val {
            Some(b) if val_loss >= b - cfg.min_delta => state.stale_epochs += 1,
            _ => {
                state.best_val = Some(val_loss);
                state.best_epoch = Some(epoch);
                state.stale_epochs = 0;
                best = snapshot(model);
            }
        }
        state.epoch += 1;
        if cfg.patience > 0 && state.stale_epochs >= cfg.patience {
            state.stopped_early = true;
        }
        state.history.push(entry.clone());
        on_epoch(&entry, model, opt, state)?;
    }
    if state.best_epoch.is_some() {
        restore(model, &best);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 60), 1e-3);
        assert!((cosine_lr(1e-3, 59, 60) - 1e-5).abs() < 1e-18);
        let mid = cosine_lr(1e-3, 1, 3);
        assert!((mid - (1e-5 + 0.5 * (1e-3 - 1e-5))).abs() < 1e-15);
    }
}
