mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tamperscope::checkpoint::{from_bytes, to_bytes};
use tamperscope::model::{loss, ModelConfig, SiameseModel};
use tamperscope::synth::{generate, BaseKind, SynthConfig, Task, TaskMix};
use tamperscope::train::{make_batch, snapshot, train, AdamW, TrainState};
use tamperscope_tensor::nn::Module;
use tamperscope_tensor::{no_grad, Tensor, BCE_EPS};

use common::{bilinear_oracle, max_err};

fn tiny() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        patch_size: 8,
        embed_dim: 8,
        heads: 2,
        ssm_state_dim: 4,
        topk: 4,
        encoder_depth: 1,
        batch_size: 2,
        ..ModelConfig::default()
    }
}

fn edd_pairs(count: usize, size: usize, seed: u64) -> Vec<tamperscope::synth::ForgerySample> {
    generate(&SynthConfig {
        image_size: size,
        count,
        seed,
        pristine_fraction: 0.0,
        task_mix: TaskMix::only(Task::Edd),
        base_kinds: vec![BaseKind::BlobTexture],
        identity_spec: true,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn bce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let q = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        s -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
    }
    s / p.len() as f64
}

#[test]
fn sixty_four_tokens_at_patch_eight() {
    let cfg = ModelConfig::default();
    let model = SiameseModel::<f64>::new(&cfg).unwrap();
    let x = Tensor::<f64>::zeros(&[1, 3, 64, 64]);
    assert_eq!(model.encode(&x).unwrap().shape(), &[1, 64, 32]);
}

#[test]
fn zero_embedding_leaves_positional_bias() {
    let mut model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let enc = &mut model.encoder;
    enc.embed.weight = Tensor::zeros(enc.embed.weight.shape());
    enc.embed.bias = Some(Tensor::zeros(&[8]));
    let tokens = enc.embed_tokens(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
    assert_eq!(tokens.to_vec(), enc.pos.to_vec());
}

#[test]
fn swapping_patches_swaps_tokens() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
    // Swap patch (0, 1) with patch (2, 3) of the 4×4 grid.
    let mut d = x.to_vec();
    for c in 0..3 {
        for dy in 0..8 {
            for dx in 0..8 {
                let a = (c * 32 + dy) * 32 + 8 + dx;
                let b = (c * 32 + 16 + dy) * 32 + 24 + dx;
                d.swap(a, b);
            }
        }
    }
    let y = Tensor::new(d, &[1, 3, 32, 32]).unwrap();
    let pos = model.encoder.pos.to_vec();
    let strip = |t: Tensor<f64>| -> Vec<f64> { t.to_vec().iter().zip(&pos).map(|(a, p)| a - p).collect() };
    let (tx, ty) = (strip(model.encoder.embed_tokens(&x).unwrap()), strip(model.encoder.embed_tokens(&y).unwrap()));
    let row = |v: &[f64], i: usize| v[i * 8..(i + 1) * 8].to_vec();
    assert!(max_err(&row(&tx, 1), &row(&ty, 11)) <= 1e-12);
    assert!(max_err(&row(&tx, 11), &row(&ty, 1)) <= 1e-12);
    assert!(max_err(&row(&tx, 5), &row(&ty, 5)) <= 1e-12);
}

#[test]
fn decoder_outputs() {
    let mut model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vp = Tensor::<f64>::randn(&[2, 16, 8], &mut rng).scale(4.0).unwrap();
    let out = model.decode(&vp, 32, 32).unwrap();
    assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let probs = model.decoder.logits(&vp).unwrap().sigmoid().unwrap();
    assert!(max_err(&out.to_f64_vec(), &bilinear_oracle(&probs, 32, 32)) <= 1e-12);

    model.decoder.head.weight = Tensor::zeros(model.decoder.head.weight.shape());
    model.decoder.head.bias = Some(Tensor::zeros(&[1]));
    let half = model.decode(&Tensor::full(&[1, 16, 8], 0.3), 32, 32).unwrap();
    assert!(half.data().iter().all(|&p| p == 0.5));
}

#[test]
fn loss_examples() {
    let cfg = tiny();
    let model = SiameseModel::<f64>::new(&cfg).unwrap();
    let samples = edd_pairs(2, 32, 4);
    let b = make_batch::<f64>(&samples.iter().collect::<Vec<_>>()).unwrap();
    let mut out = model.forward(&b.x1, &b.x2, None).unwrap();
    let want: f64 = [(&out.self1, &out.self2), (&out.cross1, &out.cross2), (&out.o1, &out.o2)]
        .iter()
        .zip(cfg.loss_weights)
        .map(|((a, c), w)| w * 0.5 * (bce_oracle(&a.to_vec(), &b.t1.to_vec()) + bce_oracle(&c.to_vec(), &b.t2.to_vec())))
        .sum();
    let got = loss(&out, &b.t1, &b.t2, cfg.loss_weights).unwrap().item().unwrap();
    assert!((got - want).abs() <= 1e-12);

    let half = Tensor::full(b.t1.shape(), 0.5);
    for t in [&mut out.self1, &mut out.self2, &mut out.cross1, &mut out.cross2, &mut out.o1, &mut out.o2] {
        *t = half.clone();
    }
    let l = loss(&out, &b.t1, &b.t2, [1.0, 0.0, 0.0]).unwrap().item().unwrap();
    assert!((l - std::f64::consts::LN_2).abs() <= 1e-12);
    assert!(loss(&out, &b.t1, &b.t1.narrow(2, 0, 16).unwrap(), [1.0; 3]).is_err());
}

#[test]
fn forward_is_deterministic_and_finite() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
    let a = model.forward(&x, &x, None).unwrap();
    let b = model.forward(&x, &x, None).unwrap();
    assert_eq!(a.o1.shape(), &[1, 1, 32, 32]);
    assert!(a.o1.bit_eq(&b.o1) && a.o2.bit_eq(&b.o2));
    assert!(a.o1.data().iter().all(|v| v.is_finite()));
}

#[test]
fn batch_rows_do_not_leak() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let samples = edd_pairs(2, 32, 5);
    let both = make_batch::<f64>(&[&samples[0], &samples[1]]).unwrap();
    let joint = model.forward(&both.x1, &both.x2, None).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let one = make_batch::<f64>(&[s]).unwrap();
        let alone = model.forward(&one.x1, &one.x2, None).unwrap();
        for (j, a) in [(&joint.o1, &alone.o1), (&joint.o2, &alone.o2)] {
            let row = j.narrow(0, i, 1).unwrap();
            assert!(row.max_abs_diff(a) <= 1e-6);
        }
    }
}

#[test]
fn every_parameter_gets_a_gradient() {
    let model = SiameseModel::<f64>::new(&tiny()).unwrap();
    let samples = edd_pairs(2, 32, 6);
    let b = make_batch::<f64>(&samples.iter().collect::<Vec<_>>()).unwrap();
    let out = model.forward(&b.x1, &b.x2, None).unwrap();
    loss(&out, &b.t1, &b.t2, model.cfg.loss_weights).unwrap().backward().unwrap();
    let mut dead = Vec::new();
    model.visit("", &mut |name, t| {
        if t.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)) {
            dead.push(name.to_string());
        }
    });
    assert!(dead.is_empty(), "no gradient reaches {dead:?}");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = ModelConfig { lr: 0.0, epochs: 1, ..tiny() };
    let mut model = SiameseModel::<f64>::new(&cfg).unwrap();
    let before = snapshot(&model);
    let mut opt = AdamW::new(&model, cfg.weight_decay);
    train(&mut model, &mut opt, &mut TrainState::default(), &edd_pairs(4, 32, 7), &[], |_, _, _, _| Ok(())).unwrap();
    assert_eq!(snapshot(&model), before);
    assert_eq!(opt.step, 2);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let cfg = ModelConfig { lr: 1e-3, epochs: 2, patience: 0, ..tiny() };
    let data = edd_pairs(4, 32, 8);

    let mut straight = SiameseModel::<f64>::new(&cfg).unwrap();
    let mut opt = AdamW::new(&straight, cfg.weight_decay);
    train(&mut straight, &mut opt, &mut TrainState::default(), &data, &[], |_, _, _, _| Ok(())).unwrap();

    let mut first = SiameseModel::<f64>::new(&cfg).unwrap();
    let mut opt1 = AdamW::new(&first, cfg.weight_decay);
    let mut bytes = Vec::new();
    let mut state = TrainState::default();
    // Run the first epoch only, keeping the checkpoint it would write.
    let halted = train(&mut first, &mut opt1, &mut state, &data, &[], |_, m, o, s| {
        bytes = to_bytes(m, Some(s), Some(o))?;
        Err(tamperscope::CoreError::Config("stop".into()))
    });
    assert!(halted.is_err());

    let ck = from_bytes::<f64>(&bytes, std::path::Path::new("mem")).unwrap();
    let (mut resumed, mut opt2, mut st2) = (ck.model, ck.optimizer.unwrap(), ck.train_state.unwrap());
    assert_eq!(st2.epoch, 1);
    train(&mut resumed, &mut opt2, &mut st2, &data, &[], |_, _, _, _| Ok(())).unwrap();
    assert_eq!(snapshot(&resumed), snapshot(&straight));
    assert_eq!(opt2, opt);
}

#[test]
fn single_pair_overfits() {
    let cfg = ModelConfig { image_size: 32, patch_size: 4, topk: 4, ..ModelConfig::default() };
    let data = edd_pairs(1, 32, 3);
    let b = make_batch::<f64>(&[&data[0]]).unwrap();
    let mut model = SiameseModel::<f64>::new(&cfg).unwrap();
    let mut opt = AdamW::new(&model, 0.0);
    let mut losses = Vec::new();
    for _ in 0..200 {
        model.zero_grad();
        let out = model.forward(&b.x1, &b.x2, None).unwrap();
        let l = loss(&out, &b.t1, &b.t2, cfg.loss_weights).unwrap();
        losses.push(l.item().unwrap());
        l.backward().unwrap();
        opt.update(&mut model, 3e-3);
    }
    let final_loss = no_grad(|| loss(&model.forward(&b.x1, &b.x2, None).unwrap(), &b.t1, &b.t2, cfg.loss_weights).unwrap().item().unwrap());
    assert!(final_loss < 0.05, "loss after 200 steps {final_loss}");
    let windows: Vec<f64> = losses.chunks(20).map(|c| c.iter().sum::<f64>() / 20.0).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}
