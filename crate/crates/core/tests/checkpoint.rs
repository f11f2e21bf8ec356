use std::path::Path;

use tamperscope::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
use tamperscope::model::{ModelConfig, SiameseModel};
use tamperscope::train::{snapshot, AdamW, TrainState};
use tamperscope::CoreError;
use tamperscope_tensor::nn::Module;

fn tiny() -> ModelConfig {
    ModelConfig { image_size: 32, patch_size: 8, embed_dim: 8, heads: 2, ssm_state_dim: 4, topk: 4, encoder_depth: 1, ..ModelConfig::default() }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let mut opt = AdamW::new(&model, 0.01);
    opt.step = 7;
    opt.m[0][0] = 0.25;
    let state = TrainState { epoch: 3, best_val: Some(0.5), ..TrainState::default() };
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &model, Some(&state), Some(&opt)).unwrap();
    let ck = load_checkpoint::<f64>(&a).unwrap();
    assert_eq!(ck.optimizer.as_ref(), Some(&opt));
    assert_eq!(ck.train_state.as_ref().map(|s| s.epoch), Some(3));
    save_checkpoint(&b, &ck.model, ck.train_state.as_ref(), ck.optimizer.as_ref()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn f32_parameters_keep_their_bits() {
    let model = SiameseModel::<f32>::new(&tiny()).unwrap();
    let bytes = to_bytes(&model, None, None).unwrap();
    let back = from_bytes::<f32>(&bytes, Path::new("mem")).unwrap().model;
    let bits = |m: &SiameseModel<f32>| {
        let mut out = Vec::new();
        m.visit("", &mut |_, t| out.extend(t.data().iter().map(|v| v.to_bits())));
        out
    };
    assert_eq!(bits(&back), bits(&model));
    assert!(from_bytes::<f32>(&bytes, Path::new("mem")).unwrap().optimizer.is_none());
}

#[test]
fn f64_checkpoint_loads_into_f64_exactly() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let back = from_bytes::<f64>(&to_bytes(&model, None, None).unwrap(), Path::new("mem")).unwrap().model;
    assert_eq!(snapshot(&back), snapshot(&model));
}

#[test]
fn corrupt_files_are_rejected() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let bytes = to_bytes(&model, None, None).unwrap();
    assert_eq!(&bytes[..4], MAGIC);

    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(from_bytes::<f64>(&wrong, Path::new("mem")), Err(CoreError::BadMagic)));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        from_bytes::<f64>(&future, Path::new("mem")),
        Err(CoreError::VersionMismatch { found, expected }) if found == FORMAT_VERSION + 1 && expected == FORMAT_VERSION
    ));

    for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
        let r = from_bytes::<f64>(&bytes[..cut], Path::new("mem"));
        assert!(matches!(r, Err(CoreError::BadMagic) | Err(CoreError::Io { .. })), "cut at {cut}: {r:?}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint::<f64>(&dir.path().join("nope.ckpt")), Err(CoreError::Io { .. })));
}
