//! Token affinity: similarity-encoded features → ELU+1 → RoPE → unit rows →
//! dot products → spatial suppression → bidirectional softmax → top-k map →
//! convolutional refinement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tamperscope_tensor::nn::{self, Conv2dLayer, Linear, RoPEConfig};
use tamperscope_tensor::{impl_module, Float, Tensor, TensorError};

use crate::error::{CoreError, Result};
use crate::grid_side;
use crate::ssm::{ssm_similarity_encode, SSMParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinityConfig {
    /// Suppression kernel width in token units.
    pub sigma: f64,
    /// Softmax temperature.
    pub alpha: f64,
    pub topk: usize,
    pub rope: bool,
    /// Unit-normalize rows before the dot product. Off only for fault injection.
    pub l2_normalize: bool,
    /// Separate linear projections for the C̄ and B̄ branches.
    pub distinct_projections: bool,
    pub refine_width: usize,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            sigma: 2.0,
            alpha: 5.0,
            topk: 8,
            rope: true,
            l2_normalize: true,
            distinct_projections: false,
            refine_width: 8,
        }
    }
}

/// `K[p, q] = d² / (d² + σ²)` over token grid coordinates, `[N, N]`.
#[derive(Debug, Clone)]
pub struct SuppressionKernel<T: Float> {
    pub sigma: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub k: Tensor<T>,
}

impl<T: Float> SuppressionKernel<T> {
    pub fn new(grid_h: usize, grid_w: usize, sigma: f64) -> Result<Self> {
        Ok(SuppressionKernel {
            sigma,
            grid_h,
            grid_w,
            k: suppression_kernel(grid_h, grid_w, sigma)?,
        })
    }

    /// Largest off-diagonal value, attained at opposite grid corners.
    pub fn upper_bound(&self) -> f64 {
        let d2 = ((self.grid_h - 1).pow(2) + (self.grid_w - 1).pow(2)) as f64;
        d2 / (d2 + self.sigma * self.sigma)
    }
}

pub fn suppression_kernel<T: Float>(grid_h: usize, grid_w: usize, sigma: f64) -> Result<Tensor<T>> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(CoreError::NonPositiveSigma(sigma));
    }
    let n = grid_h * grid_w;
    let s2 = sigma * sigma;
    Ok(Tensor::from_fn(&[n, n], |i| {
        let (p, q) = (i / n, i % n);
        let dy = (p / grid_w) as f64 - (q / grid_w) as f64;
        let dx = (p % grid_w) as f64 - (q % grid_w) as f64;
        let d2 = dy * dy + dx * dx;
        T::of(d2 / (d2 + s2))
    }))
}

/// One branch of the feature transform: `ELU + 1`, optional RoPE, optional
/// row normalization.
pub fn feature_branch<T: Float>(x: &Tensor<T>, rope: bool, l2_normalize: bool) -> Result<Tensor<T>> {
    let mut f = x.elu()?.shift(1.0)?;
    if rope {
        let cfg = RoPEConfig::new(f.dim(f.rank() - 1))?;
        f = nn::rope(&f, &cfg)?;
    }
    if l2_normalize {
        let norm = f.square()?.sum_axis(-1)?.sqrt()?;
        f = f.div(&norm)?;
    }
    Ok(f)
}

/// `(C̄, B̄)` from shared features; both branches apply the same transform.
pub fn transform_features<T: Float>(v: &Tensor<T>, rope: bool, l2_normalize: bool) -> Result<(Tensor<T>, Tensor<T>)> {
    if rope && !v.dim(v.rank() - 1).is_multiple_of(2) {
        return Err(TensorError::OddDimension(v.dim(v.rank() - 1)).into());
    }
    let f = feature_branch(v, rope, l2_normalize)?;
    Ok((f.clone(), f))
}

/// `C̄ B̄ᵀ`, `[B, N, N]`.
pub fn affinity_matrix<T: Float>(c: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if c.shape() != b.shape() || c.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "affinity_matrix",
            lhs: c.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(c.matmul(&b.transpose_last()?)?)
}

/// Row-wise and column-wise softmax of `alpha · affp`.
pub fn softmax_factors<T: Float>(affp: &Tensor<T>, alpha: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let scaled = affp.scale(alpha)?;
    Ok((scaled.softmax(-1)?, scaled.softmax(-2)?))
}

/// Elementwise product of the row and column softmax factors.
pub fn bidirectional_softmax<T: Float>(affp: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    let (row, col) = softmax_factors(affp, alpha)?;
    Ok(row.mul(&col)?)
}

/// Per-row mean of the `k` strongest off-diagonal affinities, laid out on the
/// token grid: `[B, 1, g, g]`.
pub fn topk_map<T: Float>(final_aff: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (b, n) = (final_aff.dim(0), final_aff.dim(1));
    let side = grid_side(n)?;
    if k == 0 || k >= n {
        return Err(CoreError::KOutOfRange { k, max: n.saturating_sub(1) });
    }
    Ok(final_aff.topk_mean_rows(k)?.reshape(&[b, 1, side, side])?)
}

/// Four 3×3 convolutions, SiLU between them, `1 → w → w → w → 1` channels.
#[derive(Debug, Clone)]
pub struct Refinement<T: Float> {
    pub convs: Vec<Conv2dLayer<T>>,
}

impl_module!(Refinement { convs });

impl<T: Float> Refinement<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let widths = [1, width, width, width, 1];
        Refinement {
            convs: widths.windows(2).map(|w| Conv2dLayer::same3(w[0], w[1], rng)).collect(),
        }
    }

    pub fn forward(&self, map: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = map.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x)?;
            if i < last {
                x = x.silu()?;
            }
        }
        Ok(x)
    }
}

/// Refined map `[B, 1, g, g]` and its row-major flattening `[B, N]`.
pub fn refine_affinity_map<T: Float>(final_aff: &Tensor<T>, k: usize, refine: &Refinement<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let map2d = refine.forward(&topk_map(final_aff, k)?)?;
    let flat = map2d.reshape(&[final_aff.dim(0), final_aff.dim(1)])?;
    Ok((map2d, flat))
}

/// Parameters of the affinity pipeline for one image branch.
#[derive(Debug, Clone)]
pub struct AffinityBlock<T: Float> {
    pub ssm: SSMParams<T>,
    pub proj_c: Option<Linear<T>>,
    pub proj_b: Option<Linear<T>>,
    pub refine: Refinement<T>,
}

impl_module!(AffinityBlock { ssm, proj_c, proj_b, refine });

impl<T: Float> AffinityBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, state: usize, cfg: &AffinityConfig, rng: &mut R) -> Self {
        let ssm = SSMParams::new(channels, state, rng);
        let (proj_c, proj_b) = if cfg.distinct_projections {
            (Some(Linear::new(channels, channels, false, rng)), Some(Linear::new(channels, channels, false, rng)))
        } else {
            (None, None)
        };
        AffinityBlock {
            ssm,
            proj_c,
            proj_b,
            refine: Refinement::new(cfg.refine_width, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffinityBundle<T: Float> {
    pub raw: Tensor<T>,
    pub suppressed: Tensor<T>,
    pub final_aff: Tensor<T>,
    /// Top-k map before refinement, `[B, 1, g, g]`.
    pub topk: Tensor<T>,
    pub map2d: Tensor<T>,
    pub flat: Tensor<T>,
}

pub fn build_affinity<T: Float>(
    v: &Tensor<T>,
    block: &AffinityBlock<T>,
    kernel: &SuppressionKernel<T>,
    cfg: &AffinityConfig,
) -> Result<AffinityBundle<T>> {
    let n = v.dim(1);
    grid_side(n)?;
    if kernel.k.shape() != [n, n] {
        return Err(TensorError::ShapeMismatch {
            op: "build_affinity",
            lhs: vec![n, n],
            rhs: kernel.k.shape().to_vec(),
        }
        .into());
    }
    let encoded = ssm_similarity_encode(&block.ssm, v)?;
    let (c, b) = match (&block.proj_c, &block.proj_b) {
        (Some(pc), Some(pb)) => (
            feature_branch(&pc.forward(&encoded)?, cfg.rope, cfg.l2_normalize)?,
            feature_branch(&pb.forward(&encoded)?, cfg.rope, cfg.l2_normalize)?,
        ),
        _ => transform_features(&encoded, cfg.rope, cfg.l2_normalize)?,
    };
    let raw = affinity_matrix(&c, &b)?;
    let suppressed = raw.mul(&kernel.k)?;
    let final_aff = bidirectional_softmax(&suppressed, cfg.alpha)?;
    let topk = topk_map(&final_aff, cfg.topk)?;
    let map2d = block.refine.forward(&topk)?;
    let flat = map2d.reshape(&[v.dim(0), n])?;
    Ok(AffinityBundle {
        raw,
        suppressed,
        final_aff,
        topk,
        map2d,
        flat,
    })
}
