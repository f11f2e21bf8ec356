//! End-to-end model: patch encoder, shared detector, mask decoders, loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tamperscope_tensor::nn::{self, Conv2dLayer, LayerNorm, Linear, Mlp, Module, MultiHeadAttention};
use tamperscope_tensor::{impl_module, Float, Tensor, TensorError};

use crate::affinity::AffinityConfig;
use crate::detector::{Detector, DetectorConfig, DetectorOutput};
use crate::error::{CoreError, Result};
use crate::to_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub heads: usize,
    pub ssm_state_dim: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub topk: usize,
    /// `(w_self, w_cross, w_fused)`.
    pub loss_weights: [f64; 3],
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub drop_path: f64,
    pub rope: bool,
    pub distinct_projections: bool,
    pub refine_width: usize,
    pub affinity_guided_cross: bool,
    pub shared_cross: bool,
    pub separate_aux_heads: bool,
    pub margin_diagnostic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 32,
            encoder_depth: 2,
            heads: 4,
            ssm_state_dim: 8,
            sigma: 2.0,
            alpha: 5.0,
            topk: 8,
            loss_weights: [0.25, 0.25, 0.5],
            lr: 1e-4,
            epochs: 60,
            seed: 0,
            batch_size: 8,
            weight_decay: 0.01,
            patience: 10,
            min_delta: 1e-4,
            drop_path: 0.0,
            rope: true,
            distinct_projections: false,
            refine_width: 8,
            affinity_guided_cross: true,
            shared_cross: true,
            separate_aux_heads: false,
            margin_diagnostic: false,
        }
    }
}

impl ModelConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return fail(format!("embed_dim {} must be even and positive", self.embed_dim));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.tokens() < 2 || self.topk == 0 || self.topk >= self.tokens() {
            return fail(format!("topk {} must lie in [1, {}]", self.topk, self.tokens().saturating_sub(1)));
        }
        if !(self.sigma > 0.0) || !(self.alpha > 0.0) {
            return fail("sigma and alpha must be positive".into());
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return fail("lr, weight_decay and loss weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.drop_path) {
            return fail(format!("drop_path {} outside [0, 1]", self.drop_path));
        }
        if self.ssm_state_dim == 0 || self.refine_width == 0 || self.batch_size == 0 {
            return fail("ssm_state_dim, refine_width and batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            channels: self.embed_dim,
            state_dim: self.ssm_state_dim,
            grid: self.grid(),
            heads: self.heads,
            mlp_hidden: self.embed_dim,
            drop_path: self.drop_path,
            affinity: AffinityConfig {
                sigma: self.sigma,
                alpha: self.alpha,
                topk: self.topk,
                rope: self.rope,
                l2_normalize: true,
                distinct_projections: self.distinct_projections,
                refine_width: self.refine_width,
            },
            affinity_guided_cross: self.affinity_guided_cross,
            shared_cross: self.shared_cross,
            margin_diagnostic: self.margin_diagnostic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock<T: Float> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl_module!(TransformerBlock { norm1, attn, norm2, mlp });

impl<T: Float> TransformerBlock<T> {
    pub fn new<R: rand::Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng)?,
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, 2 * dim, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm1.forward(x)?;
        let x = x.add(&self.attn.forward(&h, &h, &h, None)?)?;
        Ok(x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)?)
    }
}

/// Fixed input standardization applied before patch embedding.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Linear patch embedding of standardized pixels plus learned positional
/// bias, then pre-norm transformer blocks.
#[derive(Debug, Clone)]
pub struct Encoder<T: Float> {
    pub embed: Linear<T>,
    pub pos: Tensor<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub patch_size: usize,
    pub image_size: usize,
}

impl_module!(Encoder { embed, pos, blocks });

impl<T: Float> Encoder<T> {
    pub fn new<R: rand::Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let p = cfg.patch_size;
        Ok(Encoder {
            embed: Linear::new(3 * p * p, cfg.embed_dim, true, rng),
            pos: nn::uniform_param(&[cfg.tokens(), cfg.embed_dim], 0.02, rng),
            blocks: (0..cfg.encoder_depth)
                .map(|_| TransformerBlock::new(cfg.embed_dim, cfg.heads, rng))
                .collect::<Result<_>>()?,
            patch_size: p,
            image_size: cfg.image_size,
        })
    }

    /// `[B, 3, H, W]` → `[B, N, 3·p²]`, patches in row-major grid order,
    /// each flattened channel-major.
    pub fn patchify(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != self.image_size || x.dim(3) != self.image_size {
            return Err(CoreError::BadImageSize {
                expected: self.image_size,
                height: if x.rank() == 4 { x.dim(2) } else { 0 },
                width: if x.rank() == 4 { x.dim(3) } else { 0 },
            });
        }
        let (b, p) = (x.dim(0), self.patch_size);
        let g = self.image_size / p;
        Ok(x
            .reshape(&[b, 3, g, p, g, p])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b, g * g, 3 * p * p])?)
    }

    /// Token features before the transformer blocks.
    pub fn embed_tokens(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = x.shift(-INPUT_MEAN)?.scale(1.0 / INPUT_STD)?;
        Ok(self.embed.forward(&self.patchify(&x)?)?.add(&self.pos)?)
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.embed_tokens(x)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }
}

/// `Upsample(σ(Conv₁ₓ₁(φ(V'))))`, φ = two 3×3 conv + SiLU layers.
#[derive(Debug, Clone)]
pub struct Decoder<T: Float> {
    pub conv1: Conv2dLayer<T>,
    pub conv2: Conv2dLayer<T>,
    pub head: Conv2dLayer<T>,
}

impl_module!(Decoder { conv1, conv2, head });

impl<T: Float> Decoder<T> {
    pub fn new<R: rand::Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Decoder {
            conv1: Conv2dLayer::same3(channels, channels, rng),
            conv2: Conv2dLayer::same3(channels, channels, rng),
            head: Conv2dLayer::pointwise(channels, 1, rng),
        }
    }

    /// Grid-resolution logits `[B, 1, g, g]`.
    pub fn logits(&self, vp: &Tensor<T>) -> Result<Tensor<T>> {
        let x = to_grid(vp)?;
        let x = self.conv1.forward(&x)?.silu()?;
        let x = self.conv2.forward(&x)?.silu()?;
        Ok(self.head.forward(&x)?)
    }

    /// Mask probabilities `[B, 1, height, width]`.
    pub fn decode(&self, vp: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
        Ok(self.logits(vp)?.sigmoid()?.upsample_bilinear(height, width)?)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Float> {
    /// Fused masks from `V'`, `[B, 1, H, W]`.
    pub o1: Tensor<T>,
    pub o2: Tensor<T>,
    pub self1: Tensor<T>,
    pub self2: Tensor<T>,
    pub cross1: Tensor<T>,
    pub cross2: Tensor<T>,
    pub detector: DetectorOutput<T>,
}

#[derive(Debug, Clone)]
pub struct SiameseModel<T: Float> {
    pub cfg: ModelConfig,
    pub encoder: Encoder<T>,
    pub detector: Detector<T>,
    pub decoder: Decoder<T>,
    pub aux_self: Option<Decoder<T>>,
    pub aux_cross: Option<Decoder<T>>,
}

impl<T: Float> Module<T> for SiameseModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit(&nn::join(prefix, "encoder"), f);
        self.detector.visit(&nn::join(prefix, "detector"), f);
        self.decoder.visit(&nn::join(prefix, "decoder"), f);
        self.aux_self.visit(&nn::join(prefix, "aux_self"), f);
        self.aux_cross.visit(&nn::join(prefix, "aux_cross"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_mut(&nn::join(prefix, "encoder"), f);
        self.detector.visit_mut(&nn::join(prefix, "detector"), f);
        self.decoder.visit_mut(&nn::join(prefix, "decoder"), f);
        self.aux_self.visit_mut(&nn::join(prefix, "aux_self"), f);
        self.aux_cross.visit_mut(&nn::join(prefix, "aux_cross"), f);
    }
}

impl<T: Float> SiameseModel<T> {
    /// Fresh model, initialized from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(cfg, &mut rng)?;
        let detector = Detector::new(&cfg.detector_config(), &mut rng)?;
        let decoder = Decoder::new(cfg.embed_dim, &mut rng);
        let (aux_self, aux_cross) = if cfg.separate_aux_heads {
            (Some(Decoder::new(cfg.embed_dim, &mut rng)), Some(Decoder::new(cfg.embed_dim, &mut rng)))
        } else {
            (None, None)
        };
        Ok(SiameseModel {
            cfg: cfg.clone(),
            encoder,
            detector,
            decoder,
            aux_self,
            aux_cross,
        })
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.encode(x)
    }

    pub fn decode(&self, vp: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
        self.decoder.decode(vp, height, width)
    }

    /// `rng` is `Some` in training mode (drop-path active).
    pub fn forward(&self, x1: &Tensor<T>, x2: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Result<ForwardOutput<T>> {
        let (h, w) = (self.cfg.image_size, self.cfg.image_size);
        let v1 = self.encode(x1)?;
        let v2 = self.encode(x2)?;
        let det = self.detector.detect(&v1, &v2, rng)?;
        let self_head = self.aux_self.as_ref().unwrap_or(&self.decoder);
        let cross_head = self.aux_cross.as_ref().unwrap_or(&self.decoder);
        Ok(ForwardOutput {
            o1: self.decoder.decode(&det.v1p, h, w)?,
            o2: self.decoder.decode(&det.v2p, h, w)?,
            self1: self_head.decode(&det.self1, h, w)?,
            self2: self_head.decode(&det.self2, h, w)?,
            cross1: cross_head.decode(&det.cross1, h, w)?,
            cross2: cross_head.decode(&det.cross2, h, w)?,
            detector: det,
        })
    }
}

/// `w_self·BCE_self + w_cross·BCE_cross + w_fused·BCE_fused`, each term the
/// mean over pixels averaged over both branches.
pub fn loss<T: Float>(out: &ForwardOutput<T>, t1: &Tensor<T>, t2: &Tensor<T>, weights: [f64; 3]) -> Result<Tensor<T>> {
    let pair = |a: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
        if a.shape() != t1.shape() || b.shape() != t2.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "loss",
                lhs: a.shape().to_vec(),
                rhs: t1.shape().to_vec(),
            }
            .into());
        }
        Ok(a.bce(t1)?.add(&b.bce(t2)?)?.scale(0.5)?)
    };
    let terms = [
        pair(&out.self1, &out.self2)?,
        pair(&out.cross1, &out.cross2)?,
        pair(&out.o1, &out.o2)?,
    ];
    let mut total: Option<Tensor<T>> = None;
    for (term, w) in terms.iter().zip(weights) {
        let t = term.scale(w)?;
        total = Some(match total {
            Some(acc) => acc.add(&t)?,
            None => t,
        });
    }
    Ok(total.expect("three terms"))
}
