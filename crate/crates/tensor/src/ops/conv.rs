use crate::autograd::Op;
use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    /// Input coordinate for output `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize, depthwise: bool) -> Result<Geom> {
    let op = if depthwise { "depthwise_conv2d" } else { "conv2d" };
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: x.to_vec(),
        rhs: w.to_vec(),
    };
    if x.len() != 4 || w.len() != 4 || stride == 0 {
        return Err(mismatch());
    }
    let (batch, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (cout, kin, kh, kw) = (w[0], w[1], w[2], w[3]);
    let channels_ok = if depthwise { cout == cin && kin == 1 } else { kin == cin };
    if !channels_ok || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(mismatch());
    }
    Ok(Geom {
        batch,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (wd + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

/// Accumulates one input plane through one kernel into one output plane.
#[inline]
fn plane_forward<T: Float>(g: &Geom, xp: &[T], wk: &[T], op: &mut [T]) {
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let wv = wk[ky * g.kw + kx];
            if wv == T::zero() {
                continue;
            }
            for oy in 0..g.oh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                let orow = &mut op[oy * g.ow..(oy + 1) * g.ow];
                for (ox, o) in orow.iter_mut().enumerate() {
                    if let Some(ix) = g.src(ox, kx, g.w) {
                        *o += wv * xrow[ix];
                    }
                }
            }
        }
    }
}

/// Gradients of `plane_forward` w.r.t. its input plane and kernel.
#[inline]
fn plane_backward<T: Float>(g: &Geom, xp: &[T], wk: &[T], gp: &[T], gx: Option<&mut [T]>, gw: Option<&mut [T]>) {
    if let Some(gx) = gx {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let wv = wk[ky * g.kw + kx];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            gx[iy * g.w + ix] += wv * gp[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let mut acc = T::zero();
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            acc += xp[iy * g.w + ix] * gp[oy * g.ow + ox];
                        }
                    }
                }
                gw[ky * g.kw + kx] += acc;
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// 2-D cross-correlation. `self: [B, Cin, H, W]`, `weight: [Cout, Cin, kh, kw]`,
    /// `bias: [Cout]`; zero padding on all sides.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let g = conv_geom(self.shape(), weight.shape(), stride, padding, false)?;
        if let Some(b) = bias {
            if b.shape() != [g.cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![g.cout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let (x, w) = (self.data(), weight.data());
        let (in_plane, out_plane, kplane) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
        let mut out = vec![T::zero(); g.batch * g.cout * out_plane];
        for b in 0..g.batch {
            for co in 0..g.cout {
                let op = &mut out[(b * g.cout + co) * out_plane..(b * g.cout + co + 1) * out_plane];
                if let Some(bias) = bias {
                    op.iter_mut().for_each(|v| *v = bias.data()[co]);
                }
                for ci in 0..g.cin {
                    let xp = &x[(b * g.cin + ci) * in_plane..(b * g.cin + ci + 1) * in_plane];
                    let wk = &w[(co * g.cin + ci) * kplane..(co * g.cin + ci + 1) * kplane];
                    plane_forward(&g, xp, wk, op);
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Tensor::from_op(
            out,
            vec![g.batch, g.cout, g.oh, g.ow],
            Op::Conv2d { stride, padding },
            inputs,
        )
    }

    /// Per-channel convolution, stride 1. `weight: [C, 1, k, k]`.
    pub fn depthwise_conv2d(&self, weight: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
        let g = conv_geom(self.shape(), weight.shape(), 1, padding, true)?;
        let (x, w) = (self.data(), weight.data());
        let (in_plane, out_plane, kplane) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
        let mut out = vec![T::zero(); g.batch * g.cout * out_plane];
        for b in 0..g.batch {
            for c in 0..g.cin {
                let xp = &x[(b * g.cin + c) * in_plane..(b * g.cin + c + 1) * in_plane];
                let op = &mut out[(b * g.cin + c) * out_plane..(b * g.cin + c + 1) * out_plane];
                plane_forward(&g, xp, &w[c * kplane..(c + 1) * kplane], op);
            }
        }
        Tensor::from_op(
            out,
            vec![g.batch, g.cout, g.oh, g.ow],
            Op::DepthwiseConv2d { padding },
            vec![self.clone(), weight.clone()],
        )
    }
}

pub(crate) fn conv2d_backward<T: Float>(stride: usize, padding: usize, inputs: &[Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
    let (x, w) = (&inputs[0], &inputs[1]);
    let g = conv_geom(x.shape(), w.shape(), stride, padding, false).expect("validated in forward");
    let (in_plane, out_plane, kplane) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
    let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let gp = &grad[(b * g.cout + co) * out_plane..(b * g.cout + co + 1) * out_plane];
            for ci in 0..g.cin {
                let xi = (b * g.cin + ci) * in_plane;
                let wi = (co * g.cin + ci) * kplane;
                plane_backward(
                    &g,
                    &x.data()[xi..xi + in_plane],
                    &w.data()[wi..wi + kplane],
                    gp,
                    gx.as_mut().map(|v| &mut v[xi..xi + in_plane]),
                    gw.as_mut().map(|v| &mut v[wi..wi + kplane]),
                );
            }
        }
    }
    let mut res = vec![gx, gw];
    if let Some(b) = inputs.get(2) {
        res.push(b.requires_grad().then(|| {
            (0..g.cout)
                .map(|co| {
                    (0..g.batch)
                        .flat_map(|bi| grad[(bi * g.cout + co) * out_plane..(bi * g.cout + co + 1) * out_plane].iter())
                        .copied()
                        .sum()
                })
                .collect()
        }));
    }
    res
}

pub(crate) fn depthwise_backward<T: Float>(padding: usize, inputs: &[Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
    let (x, w) = (&inputs[0], &inputs[1]);
    let g = conv_geom(x.shape(), w.shape(), 1, padding, true).expect("validated in forward");
    let (in_plane, out_plane, kplane) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
    let mut gw = w.requires_grad().then(|| vec![T::zero(); w.numel()]);
    for b in 0..g.batch {
        for c in 0..g.cin {
            let xi = (b * g.cin + c) * in_plane;
            let gp = &grad[(b * g.cin + c) * out_plane..(b * g.cin + c + 1) * out_plane];
            plane_backward(
                &g,
                &x.data()[xi..xi + in_plane],
                &w.data()[c * kplane..(c + 1) * kplane],
                gp,
                gx.as_mut().map(|v| &mut v[xi..xi + in_plane]),
                gw.as_mut().map(|v| &mut v[c * kplane..(c + 1) * kplane]),
            );
        }
    }
    vec![gx, gw]
}
