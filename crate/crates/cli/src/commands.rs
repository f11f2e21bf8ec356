use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tamperscope::checkpoint::{load_checkpoint, save_checkpoint};
use tamperscope::eval::{baseline_predictions, predict, robustness_curve, score, Predictor};
use tamperscope::model::SiameseModel;
use tamperscope::synth::dataset::load_dataset;
use tamperscope::synth::{build_dataset, dataset_hash, merge_pair, pristine_pair, split_pair, ForgerySample, Image, Mask, Split, SplitAxis, Task};
use tamperscope::train::{evaluate_loss, make_batch, train as run_training, AdamW, TrainState};
use tamperscope::verify;
use tamperscope::{CoreError, Result};
use tamperscope_tensor::{no_grad, Tensor};

use crate::config::{write_json, RunConfig};
use crate::Status;

/// Models run in single precision; checkpoints of either width load.
type Real = f32;

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

fn load_model(cfg: &RunConfig) -> Result<SiameseModel<Real>> {
    let path = cfg.checkpoint.as_deref().ok_or_else(|| CoreError::Config("a checkpoint is required (--checkpoint)".into()))?;
    Ok(load_checkpoint::<Real>(path)?.model)
}

fn check_size(model: &SiameseModel<Real>, samples: &[ForgerySample]) -> Result<()> {
    let want = model.cfg.image_size;
    match samples.iter().find(|s| s.img1.height != want || s.img1.width != want) {
        Some(s) => Err(CoreError::Config(format!(
            "model expects {want}x{want} images, dataset has {}x{}",
            s.img1.height, s.img1.width
        ))),
        None => Ok(()),
    }
}

/// 8-bit grayscale map with values `round(255·p)`.
fn prob_image(p: &[f64], height: usize, width: usize) -> Image {
    Image::from_fn(1, height, width, |_, y, x| p[y * width + x])
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

pub fn synth(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    cfg.synth.validate()?;
    let dir = cfg.out_dir()?;
    let manifest = build_dataset(dir, &cfg.synth)?;
    cfg.echo()?;
    print_json(&json!({
        "count": manifest.count,
        "pristine": manifest.pristine,
        "manipulated": manifest.manipulated,
        "hash": dataset_hash(dir)?,
    }));
    Ok(Status::Ok)
}

pub fn train(cfg: &RunConfig, epochs_override: Option<usize>) -> Result<Status> {
    cfg.validate()?;
    let dir = cfg.out_dir()?.to_path_buf();
    let (_, train_set) = load_dataset(cfg.data_dir()?)?;
    let val = match &cfg.val_data {
        Some(p) => load_dataset(p)?.1,
        None => Vec::new(),
    };
    let resumed = cfg.resume.is_some();
    let (mut model, mut opt, mut state) = match &cfg.resume {
        Some(path) => {
            let ck = load_checkpoint::<Real>(path)?;
            let mut model = ck.model;
            if let Some(e) = epochs_override {
                model.cfg.epochs = e;
            }
            let opt = ck.optimizer.unwrap_or_else(|| AdamW::new(&model, model.cfg.weight_decay));
            (model, opt, ck.train_state.unwrap_or_default())
        }
        None => {
            let model = SiameseModel::<Real>::new(&cfg.model)?;
            let opt = AdamW::new(&model, cfg.model.weight_decay);
            (model, opt, TrainState::default())
        }
    };
    check_size(&model, &train_set)?;
    check_size(&model, &val)?;
    let effective = RunConfig {
        model: model.cfg.clone(),
        ..cfg.clone()
    };
    effective.echo()?;

    let (init_loss, _) = evaluate_loss(&model, &train_set, model.cfg.batch_size)?;
    let log_path = dir.join("train_log.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(|e| CoreError::io(&log_path, e))?;
    let last = dir.join("last.ckpt");
    let result = run_training(&mut model, &mut opt, &mut state, &train_set, &val, |entry, m, o, s| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(log, "{line}").map_err(|e| CoreError::io(&log_path, e))?;
        save_checkpoint(&last, m, Some(s), Some(o))
    });
    if let Err(e) = result {
        if let CoreError::DivergedLoss { epoch } = e {
            log::error!("loss diverged in epoch {epoch}; {} holds the last good state", last.display());
        }
        return Err(e);
    }
    let final_path = dir.join("model.ckpt");
    save_checkpoint(&final_path, &model, Some(&state), Some(&opt))?;
    let summary = json!({
        "checkpoint": final_path,
        "epochs_run": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val_loss": state.best_val,
        "initial_train_loss": init_loss,
        "stopped_early": state.stopped_early,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary);
    Ok(Status::Ok)
}

pub fn eval(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let dir = cfg.out_dir()?.to_path_buf();
    let (_, samples) = load_dataset(cfg.data_dir()?)?;
    let preds = match cfg.predictor {
        Predictor::Model => {
            let model = load_model(cfg)?;
            check_size(&model, &samples)?;
            predict(&model, &samples, model.cfg.batch_size)?
        }
        other => baseline_predictions(&samples, other),
    };
    let report = score(&samples, &preds, cfg.threshold, cfg.min_area_frac)?;
    cfg.echo()?;
    write_json(&dir.join("metrics.json"), &report)?;
    if cfg.save_masks {
        let masks = dir.join("masks");
        create_dir(&masks)?;
        for (s, p) in samples.iter().zip(&preds) {
            let stem = format!("{:05}", s.provenance.index);
            prob_image(&p.p1, s.mask1.height, s.mask1.width).write_pnm(&masks.join(format!("{stem}_pred1.pgm")))?;
            prob_image(&p.p2, s.mask2.height, s.mask2.width).write_pnm(&masks.join(format!("{stem}_pred2.pgm")))?;
        }
    }
    print_json(&report);
    Ok(Status::Ok)
}

fn to_rgb(img: Image) -> Result<Image> {
    match img.channels {
        3 => Ok(img),
        1 => Ok(Image::from_fn(3, img.height, img.width, |_, y, x| img.get(0, y, x))),
        n => Err(CoreError::BadImage(format!("{n}-channel image"))),
    }
}

/// Per query token, the head-averaged largest attention weight.
fn cross_strength(probs: &Tensor<Real>) -> Vec<f64> {
    let (heads, n, m) = (probs.dim(1), probs.dim(2), probs.dim(3));
    let p = probs.to_f64_vec();
    (0..n)
        .map(|i| {
            (0..heads)
                .map(|h| p[(h * n + i) * m..(h * n + i + 1) * m].iter().cloned().fold(0.0, f64::max))
                .sum::<f64>()
                / heads as f64
        })
        .collect()
}

pub fn infer(cfg: &RunConfig, img1: &Path, img2: Option<&Path>) -> Result<Status> {
    cfg.validate()?;
    let dir = cfg.out_dir()?.to_path_buf();
    let model = load_model(cfg)?;
    let first = to_rgb(Image::read_pnm(img1)?)?;
    let (a, b, split) = match img2 {
        Some(p) => (first, to_rgb(Image::read_pnm(p)?)?, None),
        None => {
            let axis = cfg.split_axis;
            let len = match axis {
                SplitAxis::Vertical => first.width,
                SplitAxis::Horizontal => first.height,
            };
            if len < 2 || len % 2 != 0 {
                return Err(CoreError::Config(format!("cannot split {}x{} image into equal halves", first.height, first.width)));
            }
            let split = Split { axis, at: len / 2 };
            let (a, b, _, _) = split_pair(&first, &Mask::new(first.height, first.width), split);
            (a, b, Some(split))
        }
    };
    let size = model.cfg.image_size;
    let pair = pristine_pair(&a.resize(size, size), &b.resize(size, size), Task::Edd);
    let batch = make_batch::<Real>(&[&pair])?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut emit = |img: Image, name: &str| -> Result<()> {
        let path = dir.join(name);
        img.write_pnm(&path)?;
        written.push(path);
        Ok(())
    };
    create_dir(&dir)?;
    no_grad(|| -> Result<()> {
        let out = model.forward(&batch.x1, &batch.x2, None)?;
        let m1 = prob_image(&out.o1.to_f64_vec(), size, size).resize(a.height, a.width);
        let m2 = prob_image(&out.o2.to_f64_vec(), size, size).resize(b.height, b.width);
        if let Some(s) = split {
            emit(merge_pair(&m1, &m2, s.axis)?, "mask.pgm")?;
        }
        emit(m1, "mask1.pgm")?;
        emit(m2, "mask2.pgm")?;
        if cfg.dump_affinity {
            let det = &out.detector;
            let g = model.cfg.grid();
            let heat = |v: &[f64], h: usize, w: usize| prob_image(&normalize(v), g, g).resize(h, w);
            emit(heat(&det.bundles.0.flat.to_f64_vec(), a.height, a.width), "affinity1.pgm")?;
            emit(heat(&det.bundles.1.flat.to_f64_vec(), b.height, b.width), "affinity2.pgm")?;
            let d = &model.detector;
            let guided = d.cfg.affinity_guided_cross;
            let (c1, c2) = (&d.cross[0], d.cross.last().expect("at least one cross branch"));
            let (_, p1) = c1.attend(&det.self1, &det.self2, guided.then_some(&det.bundles.0.final_aff))?;
            let (_, p2) = c2.attend(&det.self2, &det.self1, guided.then_some(&det.bundles.1.final_aff))?;
            emit(heat(&cross_strength(&p1), a.height, a.width), "cross1.pgm")?;
            emit(heat(&cross_strength(&p2), b.height, b.width), "cross2.pgm")?;
        }
        Ok(())
    })?;
    cfg.echo()?;
    print_json(&json!({ "split": split, "written": written }));
    Ok(Status::Ok)
}

pub fn verify(cfg: &RunConfig) -> Result<Status> {
    let report = verify::run(&cfg.verify)?;
    println!("{:<30} {:>6} {:>14}  result", "property", "cases", "max_violation");
    for p in &report.properties {
        println!(
            "{:<30} {:>6} {:>14.3e}  {}",
            p.name,
            p.cases,
            p.max_violation,
            if p.passed { "PASS" } else { "FAIL" }
        );
    }
    if cfg.out.is_some() {
        let path = cfg.echo()?.with_file_name("verify_report.json");
        write_json(&path, &report)?;
    }
    Ok(if report.passed { Status::Ok } else { Status::PropertyFailure })
}

#[derive(Debug, Serialize)]
struct Curve {
    seed: u64,
    threshold: f64,
    points: Vec<tamperscope::eval::CurvePoint>,
}

pub fn perturb(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let dir = cfg.out_dir()?.to_path_buf();
    let (_, samples) = load_dataset(cfg.data_dir()?)?;
    let model = load_model(cfg)?;
    check_size(&model, &samples)?;
    let points = robustness_curve(&model, &samples, &cfg.sweep, cfg.seed, model.cfg.batch_size, cfg.threshold, cfg.min_area_frac)?;
    let curve = Curve {
        seed: cfg.seed,
        threshold: cfg.threshold,
        points,
    };
    cfg.echo()?;
    write_json(&dir.join("curve.json"), &curve)?;
    print_json(&curve);
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_image_rounds_to_bytes() {
        let img = prob_image(&[0.0, 0.5, 1.0, 0.2], 2, 2);
        assert_eq!(img.data, vec![0, 128, 255, 51]);
    }

    #[test]
    fn normalize_handles_constant_maps() {
        assert_eq!(normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize(&[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn cross_strength_averages_heads() {
        let probs = Tensor::<Real>::new(vec![0.5, 0.5, 1.0, 0.0, 0.9, 0.1, 0.2, 0.8], &[1, 2, 2, 2]).unwrap();
        let s = cross_strength(&probs);
        assert!((s[0] - 0.7).abs() < 1e-6 && (s[1] - 0.9).abs() < 1e-6);
    }

}
