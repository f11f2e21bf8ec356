use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tamperscope::checkpoint::load_checkpoint;
use tamperscope::synth::{pristine_pair, Image, Task};
use tamperscope::train::make_batch;
use tamperscope_tensor::no_grad;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamperscope")).args(args).output().expect("spawn tamperscope")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64, extra: &[&str]) -> Value {
    let (count, seed) = (count.to_string(), seed.to_string());
    let mut args = vec!["synth", "--out", p(dir), "--task", "edd", "--count", &count, "--seed", &seed, "--image-size", "32"];
    args.extend_from_slice(extra);
    ok(&args)
}

/// A one-epoch 32×32 model trained on `data`, returned with its run directory.
fn tiny_model(tmp: &TempDir, data: &Path) -> PathBuf {
    let out = tmp.path().join("run");
    ok(&["train", "--data", p(data), "--out", p(&out), "--epochs", "1", "--image-size", "32", "--embed-dim", "8", "--batch-size", "4"]);
    out.join("model.ckpt")
}

#[test]
fn synth_is_deterministic_and_counts_pristine() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp.path().join("a"), 8, 7, &[]);
    let b = synth(&tmp.path().join("b"), 8, 7, &[]);
    assert_eq!(a["hash"], b["hash"]);
    assert_eq!(a["count"], 8);
    assert!(tmp.path().join("a/effective_config.json").exists());
    assert!(tmp.path().join("a/samples/00007_mask2.pgm").exists());

    let c = synth(&tmp.path().join("c"), 8, 7, &["--pristine-frac", "1.0"]);
    assert_eq!(c["manipulated"], 0);
    assert_eq!(read_json(&tmp.path().join("c/manifest.json"))["manipulated"], 0);
}

#[test]
fn eval_baselines() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 8, 1, &[]);
    let gt = ok(&["eval", "--data", p(&data), "--out", p(&tmp.path().join("gt")), "--predictor", "gt"]);
    assert_eq!(gt["pixel"]["combined"]["mcc"], 1.0);
    assert_eq!(read_json(&tmp.path().join("gt/metrics.json")), gt);
    let zeros = ok(&["eval", "--data", p(&data), "--out", p(&tmp.path().join("z")), "--predictor", "zeros"]);
    assert_eq!(zeros["image"]["combined"]["recall"], 0.0);
}

#[test]
fn train_then_resume_continues_epochs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 8, 2, &[]);
    let ckpt = tiny_model(&tmp, &data);
    let more = tmp.path().join("more");
    let summary = ok(&["train", "--data", p(&data), "--out", p(&more), "--resume", p(&ckpt), "--epochs", "3"]);
    assert_eq!(summary["epochs_run"], 3);
    let log = std::fs::read_to_string(more.join("train_log.jsonl")).unwrap();
    let epochs: Vec<u64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, vec![1, 2]);
}

#[test]
fn infer_writes_quantized_masks_and_optional_heatmaps() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 3, &[]);
    let ckpt = tiny_model(&tmp, &data);
    let (img1, img2) = (data.join("samples/00000_img1.ppm"), data.join("samples/00000_img2.ppm"));
    let out = tmp.path().join("infer");
    ok(&["infer", "--checkpoint", p(&ckpt), "--out", p(&out), p(&img1), p(&img2)]);
    assert!(!out.join("affinity1.pgm").exists() && !out.join("cross2.pgm").exists());

    let model = load_checkpoint::<f32>(&ckpt).unwrap().model;
    let pair = pristine_pair(&Image::read_pnm(&img1).unwrap(), &Image::read_pnm(&img2).unwrap(), Task::Edd);
    let b = make_batch::<f32>(&[&pair]).unwrap();
    let o = no_grad(|| model.forward(&b.x1, &b.x2, None)).unwrap();
    for (name, probs) in [("mask1.pgm", o.o1.to_f64_vec()), ("mask2.pgm", o.o2.to_f64_vec())] {
        let bytes = std::fs::read(out.join(name)).unwrap();
        let header = b"P5\n32 32\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let want: Vec<u8> = probs.iter().map(|v| (255.0 * v).round() as u8).collect();
        assert_eq!(&bytes[header.len()..], &want[..]);
    }

    let dumped = tmp.path().join("dumped");
    ok(&["infer", "--checkpoint", p(&ckpt), "--out", p(&dumped), "--dump-affinity", p(&img1), p(&img2)]);
    for name in ["affinity1.pgm", "affinity2.pgm", "cross1.pgm", "cross2.pgm"] {
        assert_eq!(Image::read_pnm(&dumped.join(name)).unwrap().width, 32, "{name}");
    }
}

#[test]
fn infer_splits_a_single_image() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 4, &[]);
    let ckpt = tiny_model(&tmp, &data);
    let wide = Image::from_fn(3, 32, 64, |c, y, x| ((c * 7 + y * 3 + x) % 17) as f64 / 16.0);
    let path = tmp.path().join("wide.ppm");
    wide.write_pnm(&path).unwrap();
    let out = tmp.path().join("single");
    let report = ok(&["infer", "--checkpoint", p(&ckpt), "--out", p(&out), p(&path)]);
    assert!(!report["split"].is_null());
    let merged = Image::read_pnm(&out.join("mask.pgm")).unwrap();
    assert_eq!((merged.height, merged.width), (32, 64));
}

#[test]
fn verify_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let good = run(&["verify", "--seeds", "5"]);
    assert_eq!(good.status.code(), Some(0), "{}", String::from_utf8_lossy(&good.stdout));
    let stdout = String::from_utf8_lossy(&good.stdout);
    assert_eq!(stdout.matches("PASS").count(), 12);

    let out = tmp.path().join("v");
    let bad = run(&["verify", "--seeds", "5", "--sabotage", "rope-norm", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    let report = read_json(&out.join("verify_report.json"));
    assert_eq!(report["passed"], false);
    assert!(report["properties"].as_array().unwrap().iter().all(|p| p["max_violation"].is_number()));
}

#[test]
fn zero_brightness_matches_eval() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 6, 5, &[]);
    let ckpt = tiny_model(&tmp, &data);
    let eval = ok(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&tmp.path().join("e"))]);
    let curve = ok(&["perturb", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&tmp.path().join("c")), "--kind", "brightness", "--levels", "-0.2,0,0.2"]);
    let points = curve["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points[1]["level"], 0.0);
    assert_eq!(points[1]["pixel_mcc"], eval["pixel"]["combined"]["mcc"]);
}

#[test]
fn bad_configs_exit_two_and_missing_files_exit_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&tmp.path().join("x"))]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"threshold": 2.0}"#).unwrap();
    assert_eq!(run(&["eval", "--config", p(&cfg), "--data", p(tmp.path()), "--out", p(&tmp.path().join("y"))]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--out", p(&tmp.path().join("z")), "--pristine-frac", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--config", p(&tmp.path().join("missing.json")), "--out", p(&tmp.path().join("w"))]).status.code(), Some(3));
}

#[test]
fn tiny_training_run_lowers_validation_loss() {
    let tmp = TempDir::new().unwrap();
    let (train, val) = (tmp.path().join("train"), tmp.path().join("val"));
    synth(&train, 64, 10, &[]);
    synth(&val, 16, 11, &[]);
    let out = tmp.path().join("run");
    let t0 = Instant::now();
    let summary = ok(&["train", "--data", p(&train), "--val", p(&val), "--out", p(&out), "--epochs", "30", "--image-size", "32"]);
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 600.0, "took {secs:.0}s");
    let initial = summary["initial_train_loss"].as_f64().unwrap();
    let best = summary["best_val_loss"].as_f64().unwrap();
    assert!(best < initial, "val {best} vs initial train {initial}");
    assert!(out.join("effective_config.json").exists() && out.join("last.ckpt").exists());
}
