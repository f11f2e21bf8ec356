//! Siamese duplication detector: affinity-guided self-attention through
//! three AGSSM blocks, then residual cross-attention between the branches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tamperscope_tensor::nn::{self, Conv2dLayer, DepthwiseConvLayer, LayerNorm, Linear, Mlp, Module, MultiHeadAttention};
use tamperscope_tensor::{impl_module, no_grad, Float, Tensor, TensorError};

use crate::affinity::{build_affinity, AffinityBlock, AffinityBundle, AffinityConfig, SuppressionKernel};
use crate::error::Result;
use crate::{from_grid, grid_side, to_grid};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub channels: usize,
    pub state_dim: usize,
    pub grid: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub drop_path: f64,
    pub affinity: AffinityConfig,
    /// Add `β · Aff^final` to the cross-attention scores.
    pub affinity_guided_cross: bool,
    /// One set of cross-attention weights for both directions.
    pub shared_cross: bool,
    pub margin_diagnostic: bool,
}

impl DetectorConfig {
    pub fn new(channels: usize, grid: usize) -> Self {
        DetectorConfig {
            channels,
            state_dim: 8,
            grid,
            heads: 4,
            mlp_hidden: channels,
            drop_path: 0.0,
            affinity: AffinityConfig::default(),
            affinity_guided_cross: true,
            shared_cross: true,
            margin_diagnostic: false,
        }
    }
}

/// Lifts the single-channel affinity map to `C` channels:
///
/// ```text
/// f' = f + DW₁(f)
/// a  = SiLU(FC_act(Norm(f')))
/// x  = f' + DropPath(FC_out(LinearAttn(DW₂(FC_in(f')), FC_in(f)) ⊙ a))
/// y  = x + DW₃(x) + DropPath(MLP(Norm(x)))
/// ```
///
/// `f'` is broadcast over channels in the first residual. The map norm
/// standardizes over tokens since the map has a single channel.
#[derive(Debug, Clone)]
pub struct AGSSMBlock<T: Float> {
    pub dw1: DepthwiseConvLayer<T>,
    pub dw2: DepthwiseConvLayer<T>,
    pub dw3: DepthwiseConvLayer<T>,
    pub map_norm: LayerNorm<T>,
    pub fc_act: Linear<T>,
    pub fc_in: Linear<T>,
    pub fc_out: Linear<T>,
    pub norm: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub drop_path_rate: f64,
}

impl_module!(AGSSMBlock { dw1, dw2, dw3, map_norm, fc_act, fc_in, fc_out, norm, mlp });

impl<T: Float> AGSSMBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, mlp_hidden: usize, drop_path_rate: f64, rng: &mut R) -> Self {
        AGSSMBlock {
            dw1: DepthwiseConvLayer::new(1, 3, rng),
            dw2: DepthwiseConvLayer::new(channels, 3, rng),
            dw3: DepthwiseConvLayer::new(channels, 3, rng),
            map_norm: LayerNorm::new(1),
            fc_act: Linear::new(1, channels, true, rng),
            fc_in: Linear::new(1, channels, true, rng),
            fc_out: Linear::new(channels, channels, true, rng),
            norm: LayerNorm::new(channels),
            mlp: Mlp::new(channels, mlp_hidden, rng),
            drop_path_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.fc_out.d_out()
    }

    /// `flat: [B, N]` → `[B, N, C]`. `rng` is `Some` in training mode.
    pub fn forward(&self, flat: &Tensor<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<T>> {
        let (b, n) = (flat.dim(0), flat.dim(1));
        let side = grid_side(n)?;
        let map = flat.reshape(&[b, 1, side, side])?;
        let flat1 = flat.add(&self.dw1.forward(&map)?.reshape(&[b, n])?)?;
        let col1 = flat1.reshape(&[b, n, 1])?;
        let gate = self.fc_act.forward(&self.map_norm.forward(&flat1)?.reshape(&[b, n, 1])?)?.silu()?;
        let query = from_grid(&self.dw2.forward(&to_grid(&self.fc_in.forward(&col1)?)?)?)?;
        let kv = self.fc_in.forward(&flat.reshape(&[b, n, 1])?)?;
        let attn = nn::linear_attention(&query, &kv)?;
        let branch = self.fc_out.forward(&attn.mul(&gate)?)?;
        let x = col1.add(&self.drop_path(&branch, rng.as_deref_mut())?)?;
        let local = from_grid(&self.dw3.forward(&to_grid(&x)?)?)?;
        let ffn = self.mlp.forward(&self.norm.forward(&x)?)?;
        Ok(x.add(&local)?.add(&self.drop_path(&ffn, rng)?)?)
    }

    fn drop_path(&self, x: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<T>> {
        match rng {
            Some(rng) => Ok(nn::drop_path(x, self.drop_path_rate, true, rng)?),
            None => Ok(x.clone()),
        }
    }
}

/// `v + Conv₁ₓ₁(mean_b block_b(flat))`.
pub fn self_attention<T: Float>(
    v: &Tensor<T>,
    bundle: &AffinityBundle<T>,
    blocks: &[AGSSMBlock<T>],
    proj: &Conv2dLayer<T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    if blocks.is_empty() {
        return Err(TensorError::InvalidArgument("self_attention needs at least one block".into()).into());
    }
    let mut sum: Option<Tensor<T>> = None;
    for block in blocks {
        let out = block.forward(&bundle.flat, rng.as_deref_mut())?;
        sum = Some(match sum {
            Some(s) => s.add(&out)?,
            None => out,
        });
    }
    let mean = sum.expect("non-empty").scale(1.0 / blocks.len() as f64)?;
    Ok(v.add(&proj.forward_tokens(&mean)?)?)
}

/// One direction of cross-attention: query branch attends to the projected
/// other branch, with optional score bias `β · Λ`.
#[derive(Debug, Clone)]
pub struct CrossBranch<T: Float> {
    pub mha: MultiHeadAttention<T>,
    pub proj: Conv2dLayer<T>,
    pub beta: Tensor<T>,
}

impl_module!(CrossBranch { mha, proj, beta });

impl<T: Float> CrossBranch<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(CrossBranch {
            mha: MultiHeadAttention::new(channels, heads, rng)?,
            proj: Conv2dLayer::pointwise(channels, channels, rng),
            beta: Tensor::ones(&[1]).with_requires_grad(true),
        })
    }

    /// Attention term only (no residual) and its probabilities.
    pub fn attend(&self, query: &Tensor<T>, other: &Tensor<T>, lambda: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        let keys = self.proj.forward_tokens(other)?;
        let bias = match lambda {
            Some(l) => Some(l.mul(&self.beta)?),
            None => None,
        };
        Ok(self.mha.forward_with_probs(query, &keys, &keys, bias.as_ref())?)
    }
}

#[derive(Debug, Clone)]
pub struct CrossOutput<T: Float> {
    pub v1p: Tensor<T>,
    pub v2p: Tensor<T>,
    /// Attention terms before the residual.
    pub c1: Tensor<T>,
    pub c2: Tensor<T>,
}

/// `V₁' = S₁ + CrossAttn(S₁, P(S₂))` and symmetrically for `V₂'`.
/// `lambdas` are the per-branch guidance terms.
pub fn cross_attention<T: Float>(
    s1: &Tensor<T>,
    s2: &Tensor<T>,
    branches: (&CrossBranch<T>, &CrossBranch<T>),
    lambdas: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<CrossOutput<T>> {
    if s1.shape() != s2.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_attention",
            lhs: s1.shape().to_vec(),
            rhs: s2.shape().to_vec(),
        }
        .into());
    }
    let (l1, l2) = match lambdas {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let (c1, _) = branches.0.attend(s1, s2, l1)?;
    let (c2, _) = branches.1.attend(s2, s1, l2)?;
    Ok(CrossOutput {
        v1p: s1.add(&c1)?,
        v2p: s2.add(&c2)?,
        c1,
        c2,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MarginRow {
    pub batch: usize,
    pub row: usize,
    pub j_star: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct MarginReport {
    pub rows: Vec<MarginRow>,
}

impl MarginReport {
    /// Largest `lhs - epsilon` over all rows.
    pub fn max_violation(&self) -> f64 {
        self.rows.iter().map(|r| r.lhs - r.epsilon).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.lhs <= r.epsilon + tol)
    }
}

/// Single-head form of the guided cross-attention update
/// `V₁'(i) = V₁(i) + Σ_k α_ik W_V V₂(k)` with scores
/// `A = (W_Q V₁)(W_K V₂)ᵀ/√C + Λ`, evaluated in f64.
///
/// Per row, `j*` is the top-scoring column, `delta` its margin over the
/// runner-up, `epsilon = Σ_{k≠j*} α_ik ‖W_V V₂(k) − W_V V₂(j*)‖` and `lhs`
/// the measured `‖V₁'(i) − (V₁(i) + W_V V₂(j*))‖`.
pub fn margin_diagnostic<T: Float>(v1: &Tensor<T>, v2: &Tensor<T>, mha: &MultiHeadAttention<T>, lambda: &Tensor<T>) -> Result<MarginReport> {
    let (b, n, c) = (v1.dim(0), v1.dim(1), v1.dim(2));
    let m = v2.dim(1);
    if v2.dim(0) != b || v2.dim(2) != c || lambda.shape() != [b, n, m] {
        return Err(TensorError::ShapeMismatch {
            op: "margin_diagnostic",
            lhs: v1.shape().to_vec(),
            rhs: lambda.shape().to_vec(),
        }
        .into());
    }
    let x1 = v1.to_f64_vec();
    let x2 = v2.to_f64_vec();
    let lam = lambda.to_f64_vec();
    let (wq, wk, wv) = (mha.wq.to_f64_vec(), mha.wk.to_f64_vec(), mha.wv.to_f64_vec());
    let project = |x: &[f64], w: &[f64], tokens: usize| -> Vec<f64> {
        let mut out = vec![0.0; tokens * c];
        for t in 0..tokens {
            for i in 0..c {
                let xi = x[t * c + i];
                for o in 0..c {
                    out[t * c + o] += xi * w[i * c + o];
                }
            }
        }
        out
    };
    let scale = 1.0 / (c as f64).sqrt();
    let mut rows = Vec::with_capacity(b * n);
    for bi in 0..b {
        let x1b = &x1[bi * n * c..(bi + 1) * n * c];
        let x2b = &x2[bi * m * c..(bi + 1) * m * c];
        let q = project(x1b, &wq, n);
        let k = project(x2b, &wk, m);
        let u = project(x2b, &wv, m);
        for i in 0..n {
            let scores: Vec<f64> = (0..m)
                .map(|j| {
                    let dot: f64 = (0..c).map(|d| q[i * c + d] * k[j * c + d]).sum();
                    dot * scale + lam[(bi * n + i) * m + j]
                })
                .collect();
            let j_star = (0..m).fold(0, |best, j| if scores[j] > scores[best] { j } else { best });
            let runner_up = (0..m).filter(|&j| j != j_star).map(|j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
            let top = scores[j_star];
            let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = weights.iter().sum();
            let alpha: Vec<f64> = weights.iter().map(|w| w / z).collect();
            let updated: Vec<f64> = (0..c)
                .map(|d| x1b[i * c + d] + (0..m).map(|j| alpha[j] * u[j * c + d]).sum::<f64>())
                .collect();
            let lhs = (0..c)
                .map(|d| (updated[d] - (x1b[i * c + d] + u[j_star * c + d])).powi(2))
                .sum::<f64>()
                .sqrt();
            let epsilon = (0..m)
                .filter(|&j| j != j_star)
                .map(|j| {
                    let dist = (0..c).map(|d| (u[j * c + d] - u[j_star * c + d]).powi(2)).sum::<f64>().sqrt();
                    alpha[j] * dist
                })
                .sum();
            rows.push(MarginRow {
                batch: bi,
                row: i,
                j_star,
                delta: top - runner_up,
                epsilon,
                lhs,
            });
        }
    }
    Ok(MarginReport { rows })
}

#[derive(Debug, Clone)]
pub struct DetectorOutput<T: Float> {
    pub v1p: Tensor<T>,
    pub v2p: Tensor<T>,
    pub self1: Tensor<T>,
    pub self2: Tensor<T>,
    pub cross1: Tensor<T>,
    pub cross2: Tensor<T>,
    pub bundles: (AffinityBundle<T>, AffinityBundle<T>),
    pub margin_report: Option<MarginReport>,
}

#[derive(Debug, Clone)]
pub struct Detector<T: Float> {
    pub affinity: AffinityBlock<T>,
    pub blocks: Vec<AGSSMBlock<T>>,
    pub proj: Conv2dLayer<T>,
    /// One entry when cross weights are shared, two otherwise.
    pub cross: Vec<CrossBranch<T>>,
    pub kernel: SuppressionKernel<T>,
    pub cfg: DetectorConfig,
}

impl<T: Float> Module<T> for Detector<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.affinity.visit(&nn::join(prefix, "affinity"), f);
        self.blocks.visit(&nn::join(prefix, "blocks"), f);
        self.proj.visit(&nn::join(prefix, "proj"), f);
        self.cross.visit(&nn::join(prefix, "cross"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.affinity.visit_mut(&nn::join(prefix, "affinity"), f);
        self.blocks.visit_mut(&nn::join(prefix, "blocks"), f);
        self.proj.visit_mut(&nn::join(prefix, "proj"), f);
        self.cross.visit_mut(&nn::join(prefix, "cross"), f);
    }
}

impl<T: Float> Detector<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &DetectorConfig, rng: &mut R) -> Result<Self> {
        let c = cfg.channels;
        let affinity = AffinityBlock::new(c, cfg.state_dim, &cfg.affinity, rng);
        let blocks = (0..3).map(|_| AGSSMBlock::new(c, cfg.mlp_hidden, cfg.drop_path, rng)).collect();
        let proj = Conv2dLayer::pointwise(c, c, rng);
        let n_cross = if cfg.shared_cross { 1 } else { 2 };
        let cross = (0..n_cross).map(|_| CrossBranch::new(c, cfg.heads, rng)).collect::<Result<_>>()?;
        Ok(Detector {
            affinity,
            blocks,
            proj,
            cross,
            kernel: SuppressionKernel::new(cfg.grid, cfg.grid, cfg.affinity.sigma)?,
            cfg: cfg.clone(),
        })
    }

    fn branches(&self) -> (&CrossBranch<T>, &CrossBranch<T>) {
        (&self.cross[0], self.cross.last().expect("at least one cross branch"))
    }

    pub fn detect(&self, v1: &Tensor<T>, v2: &Tensor<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<DetectorOutput<T>> {
        if v1.shape() != v2.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "detect",
                lhs: v1.shape().to_vec(),
                rhs: v2.shape().to_vec(),
            }
            .into());
        }
        let acfg = &self.cfg.affinity;
        let bundle1 = build_affinity(v1, &self.affinity, &self.kernel, acfg)?;
        let bundle2 = build_affinity(v2, &self.affinity, &self.kernel, acfg)?;
        let self1 = self_attention(v1, &bundle1, &self.blocks, &self.proj, rng.as_deref_mut())?;
        let self2 = self_attention(v2, &bundle2, &self.blocks, &self.proj, rng)?;
        let lambdas = self.cfg.affinity_guided_cross.then_some((&bundle1.final_aff, &bundle2.final_aff));
        let cross = cross_attention(&self1, &self2, self.branches(), lambdas)?;
        let margin_report = if self.cfg.margin_diagnostic {
            let branch = self.branches().0;
            no_grad(|| -> Result<Option<MarginReport>> {
                let keys = branch.proj.forward_tokens(&self2)?;
                let lambda = match lambdas {
                    Some((l1, _)) => l1.mul(&branch.beta)?,
                    None => Tensor::zeros(&[v1.dim(0), v1.dim(1), v1.dim(1)]),
                };
                Ok(Some(margin_diagnostic(&self1, &keys, &branch.mha, &lambda)?))
            })?
        } else {
            None
        };
        Ok(DetectorOutput {
            v1p: cross.v1p,
            v2p: cross.v2p,
            self1,
            self2,
            cross1: cross.c1,
            cross2: cross.c2,
            bundles: (bundle1, bundle2),
            margin_report,
        })
    }
}

/// Affinity-weighted self update with identity projections and unit gates:
/// `f + Aff · f`.
pub fn harness_self_update<T: Float>(f: &Tensor<T>, aff: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(f.add(&aff.matmul(f)?)?)
}

/// Identity-projection form of the full refinement:
/// `f̂₁ = V₁ + Aff · V₁ + softmax(V₁ V₂ᵀ / √C) · V₂`.
pub fn harness_update<T: Float>(v1: &Tensor<T>, v2: &Tensor<T>, aff: &Tensor<T>) -> Result<Tensor<T>> {
    let c = v1.dim(v1.rank() - 1) as f64;
    let attn = v1.matmul(&v2.transpose_last()?)?.scale(1.0 / c.sqrt())?.softmax(-1)?;
    Ok(harness_self_update(v1, aff)?.add(&attn.matmul(v2)?)?)
}
