//! Direct-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use tamperscope::ssm::SSMParams;
use tamperscope_tensor::nn::MultiHeadAttention;
use tamperscope_tensor::Tensor;

pub fn max_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn elu1(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

fn dense(x: &[f64], w: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Vec<f64> {
    let (din, dout) = (w.dim(0), w.dim(1));
    (0..dout)
        .map(|o| (0..din).map(|i| x[i] * w.at(&[i, o])).sum::<f64>() + bias.map_or(0.0, |b| b.data()[o]))
        .collect()
}

/// Selective scan written as the unrolled sum
/// `h_k = Σ_{j≤k} exp(A Σ_{i=j+1..k} Δ_i) Δ_j B_j v_j`, with the normalizer
/// `n_k` the same sum without `v_j`. `normalized` selects the ratio readout
/// and the `ELU + 1` maps on B and C.
pub fn scan_oracle(p: &SSMParams<f64>, v: &Tensor<f64>, normalized: bool) -> Vec<f64> {
    let (bsz, n, c) = (v.dim(0), v.dim(1), v.dim(2));
    let s = p.a_log.dim(1);
    let mut out = vec![0.0; bsz * n * c];
    for b in 0..bsz {
        let tok = |k: usize| -> Vec<f64> { (0..c).map(|ch| v.at(&[b, k, ch])).collect() };
        let delta: Vec<Vec<f64>> = (0..n)
            .map(|k| dense(&tok(k), &p.w_delta.weight, p.w_delta.bias.as_ref()).into_iter().map(softplus).collect())
            .collect();
        let map = |x: Vec<f64>| -> Vec<f64> { if normalized { x.into_iter().map(elu1).collect() } else { x } };
        let bm: Vec<Vec<f64>> = (0..n).map(|k| map(dense(&tok(k), &p.w_b.weight, None))).collect();
        let cm: Vec<Vec<f64>> = (0..n).map(|k| map(dense(&tok(k), &p.w_c.weight, None))).collect();
        for k in 0..n {
            for ch in 0..c {
                let (mut num, mut den) = (0.0, 0.0);
                for st in 0..s {
                    let a = -p.a_log.at(&[ch, st]).exp();
                    let (mut h, mut nn) = (0.0, 0.0);
                    for j in 0..=k {
                        let decay: f64 = (j + 1..=k).map(|i| delta[i][ch]).sum::<f64>() * a;
                        let w = decay.exp() * delta[j][ch] * bm[j][st];
                        h += w * v.at(&[b, j, ch]);
                        nn += w;
                    }
                    num += cm[k][st] * h;
                    den += cm[k][st] * nn;
                }
                let read = if normalized { num / (den + 1e-9) } else { num };
                out[(b * n + k) * c + ch] = read + p.d.data()[ch] * v.at(&[b, k, ch]);
            }
        }
    }
    out
}

pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (b, ci, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (co, _, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = bias[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w.at(&[o, c, ky, kx]) * x.at(&[n, c, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

/// Depthwise convolution: channel `c` of the output sees only channel `c`.
pub fn depthwise_oracle(x: &Tensor<f64>, w: &Tensor<f64>, pad: usize) -> Vec<f64> {
    let (b, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let k = w.dim(2);
    let (oh, ow) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    let mut out = vec![0.0; b * c * oh * ow];
    for n in 0..b {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = ((y + ky) as isize - pad as isize, (xo + kx) as isize - pad as isize);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += w.at(&[ch, 0, ky, kx]) * x.at(&[n, ch, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out[((n * c + ch) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

/// Bilinear resize as a separable tent filter over clamped half-pixel
/// source coordinates.
pub fn bilinear_oracle(x: &Tensor<f64>, height: usize, width: usize) -> Vec<f64> {
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let coord = |o: usize, inp: usize, out: usize| ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = Vec::with_capacity(b * c * height * width);
    for n in 0..b {
        for ch in 0..c {
            for oy in 0..height {
                let sy = coord(oy, h, height);
                for ox in 0..width {
                    let sx = coord(ox, w, width);
                    let mut s = 0.0;
                    for iy in 0..h {
                        for ix in 0..w {
                            s += tent(sy - iy as f64) * tent(sx - ix as f64) * x.at(&[n, ch, iy, ix]);
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

/// `Σ_j φ(q_i)·φ(k_j) v_j / Σ_j φ(q_i)·φ(k_j)` with `φ = ELU + 1`, keys
/// doubling as values.
pub fn linear_attention_oracle(q: &Tensor<f64>, kv: &Tensor<f64>) -> Vec<f64> {
    let (b, n, c) = (q.dim(0), q.dim(1), q.dim(2));
    let m = kv.dim(1);
    let mut out = vec![0.0; b * n * c];
    for bi in 0..b {
        for i in 0..n {
            let w: Vec<f64> = (0..m)
                .map(|j| (0..c).map(|d| elu1(q.at(&[bi, i, d])) * elu1(kv.at(&[bi, j, d]))).sum())
                .collect();
            let total: f64 = w.iter().sum();
            for d in 0..c {
                out[(bi * n + i) * c + d] = (0..m).map(|j| w[j] / total * kv.at(&[bi, j, d])).sum();
            }
        }
    }
    out
}

pub fn mha_oracle(m: &MultiHeadAttention<f64>, q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    let (b, n, c) = (q.dim(0), q.dim(1), q.dim(2));
    let mk = k.dim(1);
    let proj = |x: &Tensor<f64>, w: &Tensor<f64>, bi: usize, t: usize| -> Vec<f64> {
        (0..c).map(|o| (0..c).map(|i| x.at(&[bi, t, i]) * w.at(&[i, o])).sum()).collect()
    };
    let d = m.head_dim;
    let mut out = vec![0.0; b * n * c];
    for bi in 0..b {
        let qs: Vec<Vec<f64>> = (0..n).map(|t| proj(q, &m.wq, bi, t)).collect();
        let ks: Vec<Vec<f64>> = (0..mk).map(|t| proj(k, &m.wk, bi, t)).collect();
        let vs: Vec<Vec<f64>> = (0..mk).map(|t| proj(v, &m.wv, bi, t)).collect();
        for i in 0..n {
            let mut ctx = vec![0.0; c];
            for h in 0..m.heads {
                let r = h * d..(h + 1) * d;
                let s: Vec<f64> = ks
                    .iter()
                    .map(|kj| r.clone().map(|x| qs[i][x] * kj[x]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for x in r.clone() {
                    ctx[x] = (0..mk).map(|j| e[j] / z * vs[j][x]).sum();
                }
            }
            for o in 0..c {
                out[(bi * n + i) * c + o] = (0..c).map(|x| ctx[x] * m.wo.at(&[x, o])).sum();
            }
        }
    }
    out
}

/// MCC straight from the four counts.
pub fn mcc_oracle(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut good, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                good += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| good / pairs)
}
