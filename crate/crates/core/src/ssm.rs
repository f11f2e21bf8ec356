//! Diagonal selective state-space scan and its normalized similarity variant.
//!
//! Per channel `c` and state `s`, with `Ā = exp(Δ·A)` and `B̄ = Δ·B`:
//! `h_k = Ā h_{k-1} + B̄ v_k`, `n_k = Ā n_{k-1} + B̄`.
//! The plain scan reads out `C·h_k + D v_k`; the similarity scan reads out
//! `C·h_k / (C·n_k + ε) + D v_k`, a weighted average of past tokens.

use rand::Rng;
use tamperscope_tensor::nn::Linear;
use tamperscope_tensor::{impl_module, CustomOp, Float, Tensor, TensorError};

use crate::error::{CoreError, Result};

/// Guard added to the similarity denominator.
pub const SCAN_EPS: f64 = 1e-9;

/// Target step size at initialization, `softplus(bias) = 0.1`.
const DELTA_INIT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SSMParams<T: Float> {
    /// `A = -exp(a_log)`, shape `[C, S]`.
    pub a_log: Tensor<T>,
    pub d: Tensor<T>,
    pub w_delta: Linear<T>,
    pub w_b: Linear<T>,
    pub w_c: Linear<T>,
}

impl_module!(SSMParams { a_log, d, w_delta, w_b, w_c });

impl<T: Float> SSMParams<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, state: usize, rng: &mut R) -> Self {
        let mut w_delta = Linear::new(channels, channels, true, rng);
        let bias = DELTA_INIT.exp_m1().ln();
        w_delta.bias = Some(Tensor::full(&[channels], T::of(bias)).with_requires_grad(true));
        SSMParams {
            a_log: Tensor::from_fn(&[channels, state], |i| T::of(((i % state) + 1) as f64).ln()).with_requires_grad(true),
            d: Tensor::ones(&[channels]).with_requires_grad(true),
            w_delta,
            w_b: Linear::new(channels, state, false, rng),
            w_c: Linear::new(channels, state, false, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.dim(0)
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.dim(1)
    }

    pub fn a(&self) -> Result<Tensor<T>> {
        Ok(self.a_log.exp()?.neg()?)
    }

    /// Per-token `(Δ, B, C)`. `positive` maps B and C through `ELU + 1`.
    pub fn project(&self, v: &Tensor<T>, positive: bool) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let delta = self.w_delta.forward(v)?.softplus()?;
        let mut b = self.w_b.forward(v)?;
        let mut c = self.w_c.forward(v)?;
        if positive {
            b = b.elu()?.shift(1.0)?;
            c = c.elu()?.shift(1.0)?;
        }
        Ok((delta, b, c))
    }
}

/// Zero-order-hold state matrix with the first-order input matrix:
/// `(exp(Δ·A), Δ·B)`, broadcasting.
pub fn discretize<T: Float>(a: &Tensor<T>, b: &Tensor<T>, delta: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if let Some(&bad) = delta.data().iter().find(|&&x| x <= T::zero()) {
        return Err(CoreError::NonPositiveDelta(bad.as_f64()));
    }
    Ok((delta.mul(a)?.exp()?, delta.mul(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Plain,
    Normalized,
}

/// Raw scan operands: `v, delta: [B,N,C]`, `a: [C,S]`, `b, c: [B,N,S]`, `d: [C]`.
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a, T: Float> {
    pub v: &'a Tensor<T>,
    pub delta: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
    pub c: &'a Tensor<T>,
    pub d: &'a Tensor<T>,
}

/// Hidden state and normalizer after the last token, `[B, C, S]` each.
#[derive(Debug, Clone)]
pub struct ScanState<T: Float> {
    pub h: Tensor<T>,
    pub n: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    tokens: usize,
    channels: usize,
    state: usize,
}

impl Dims {
    fn idx(&self, b: usize, k: usize, c: usize, s: usize) -> usize {
        ((b * self.tokens + k) * self.channels + c) * self.state + s
    }
}

impl<T: Float> ScanInputs<'_, T> {
    fn dims(&self) -> Result<Dims> {
        let bad = |lhs: &[usize], rhs: &[usize]| {
            Err(CoreError::Tensor(TensorError::ShapeMismatch {
                op: "scan",
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            }))
        };
        if self.v.rank() != 3 {
            return bad(&[0, 0, 0], self.v.shape());
        }
        let (batch, tokens, channels) = (self.v.dim(0), self.v.dim(1), self.v.dim(2));
        if self.a.rank() != 2 || self.a.dim(0) != channels {
            return bad(&[channels, 0], self.a.shape());
        }
        let state = self.a.dim(1);
        if self.delta.shape() != self.v.shape() {
            return bad(self.v.shape(), self.delta.shape());
        }
        for t in [self.b, self.c] {
            if t.shape() != [batch, tokens, state] {
                return bad(&[batch, tokens, state], t.shape());
            }
        }
        if self.d.shape() != [channels] {
            return bad(&[channels], self.d.shape());
        }
        if let Some(&bad) = self.delta.data().iter().find(|&&x| x <= T::zero()) {
            return Err(CoreError::NonPositiveDelta(bad.as_f64()));
        }
        Ok(Dims {
            batch,
            tokens,
            channels,
            state,
        })
    }

    /// Runs the recurrence, returning every `h_k` and `n_k`.
    fn states(&self, dims: Dims) -> (Vec<T>, Vec<T>) {
        let total = dims.batch * dims.tokens * dims.channels * dims.state;
        let (mut hs, mut ns) = (vec![T::zero(); total], vec![T::zero(); total]);
        let (v, delta, a, b) = (self.v.data(), self.delta.data(), self.a.data(), self.b.data());
        for bi in 0..dims.batch {
            for ch in 0..dims.channels {
                for s in 0..dims.state {
                    let (mut h, mut n) = (T::zero(), T::zero());
                    for k in 0..dims.tokens {
                        let tok = (bi * dims.tokens + k) * dims.channels + ch;
                        let abar = (delta[tok] * a[ch * dims.state + s]).exp();
                        let bbar = delta[tok] * b[(bi * dims.tokens + k) * dims.state + s];
                        h = abar * h + bbar * v[tok];
                        n = abar * n + bbar;
                        let at = dims.idx(bi, k, ch, s);
                        hs[at] = h;
                        ns[at] = n;
                    }
                }
            }
        }
        (hs, ns)
    }
}

/// Differentiable fused scan; see the module docs for the two readouts.
pub fn scan<T: Float>(inputs: &ScanInputs<T>, mode: ScanMode) -> Result<Tensor<T>> {
    let dims = inputs.dims()?;
    let (hs, ns) = inputs.states(dims);
    let (v, c, d) = (inputs.v.data(), inputs.c.data(), inputs.d.data());
    let eps = T::of(SCAN_EPS);
    let mut y = vec![T::zero(); v.len()];
    for bi in 0..dims.batch {
        for k in 0..dims.tokens {
            let crow = &c[(bi * dims.tokens + k) * dims.state..][..dims.state];
            for ch in 0..dims.channels {
                let at = dims.idx(bi, k, ch, 0);
                let h = &hs[at..at + dims.state];
                let num: T = crow.iter().zip(h).map(|(&cs, &hs)| cs * hs).sum();
                let read = match mode {
                    ScanMode::Plain => num,
                    ScanMode::Normalized => {
                        let n = &ns[at..at + dims.state];
                        let den: T = crow.iter().zip(n).map(|(&cs, &ns)| cs * ns).sum::<T>() + eps;
                        num / den
                    }
                };
                let tok = (bi * dims.tokens + k) * dims.channels + ch;
                y[tok] = read + d[ch] * v[tok];
            }
        }
    }
    let op = ScanBackward { mode, dims, hs, ns };
    let operands = vec![
        inputs.v.clone(),
        inputs.delta.clone(),
        inputs.a.clone(),
        inputs.b.clone(),
        inputs.c.clone(),
        inputs.d.clone(),
    ];
    Ok(Tensor::from_custom(y, inputs.v.shape(), operands, Box::new(op))?)
}

pub fn scan_final_state<T: Float>(inputs: &ScanInputs<T>) -> Result<ScanState<T>> {
    let dims = inputs.dims()?;
    let (hs, ns) = inputs.states(dims);
    let shape = [dims.batch, dims.channels, dims.state];
    let last = |all: &[T]| Tensor::from_fn(&shape, |i| {
        let (bi, rest) = (i / (dims.channels * dims.state), i % (dims.channels * dims.state));
        all[dims.idx(bi, dims.tokens - 1, rest / dims.state, rest % dims.state)]
    });
    Ok(ScanState { h: last(&hs), n: last(&ns) })
}

struct ScanBackward<T> {
    mode: ScanMode,
    dims: Dims,
    hs: Vec<T>,
    ns: Vec<T>,
}

impl<T: Float> CustomOp<T> for ScanBackward<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let dims = self.dims;
        let (v, delta, a, b, c, d) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
        );
        let mut gv = vec![T::zero(); v.len()];
        let mut gdelta = vec![T::zero(); delta.len()];
        let mut ga = vec![T::zero(); a.len()];
        let mut gb = vec![T::zero(); b.len()];
        let mut gc = vec![T::zero(); c.len()];
        let mut gd = vec![T::zero(); d.len()];
        let mut gh = vec![T::zero(); self.hs.len()];
        let mut gn = vec![T::zero(); self.ns.len()];
        let eps = T::of(SCAN_EPS);

        // readout
        for bi in 0..dims.batch {
            for k in 0..dims.tokens {
                let row = (bi * dims.tokens + k) * dims.state;
                for ch in 0..dims.channels {
                    let tok = (bi * dims.tokens + k) * dims.channels + ch;
                    let gy = grad[tok];
                    gd[ch] += gy * v[tok];
                    gv[tok] += gy * d[ch];
                    let at = dims.idx(bi, k, ch, 0);
                    match self.mode {
                        ScanMode::Plain => {
                            for s in 0..dims.state {
                                gh[at + s] = gy * c[row + s];
                                gc[row + s] += gy * self.hs[at + s];
                            }
                        }
                        ScanMode::Normalized => {
                            let mut num = T::zero();
                            let mut den = eps;
                            for s in 0..dims.state {
                                num += c[row + s] * self.hs[at + s];
                                den += c[row + s] * self.ns[at + s];
                            }
                            let gnum = gy / den;
                            let gden = -gy * num / (den * den);
                            for s in 0..dims.state {
                                gh[at + s] = gnum * c[row + s];
                                gn[at + s] = gden * c[row + s];
                                gc[row + s] += gnum * self.hs[at + s] + gden * self.ns[at + s];
                            }
                        }
                    }
                }
            }
        }

        // recurrence, newest token first
        for bi in 0..dims.batch {
            for ch in 0..dims.channels {
                for s in 0..dims.state {
                    let a_cs = a[ch * dims.state + s];
                    let (mut carry_h, mut carry_n) = (T::zero(), T::zero());
                    for k in (0..dims.tokens).rev() {
                        let at = dims.idx(bi, k, ch, s);
                        carry_h += gh[at];
                        carry_n += gn[at];
                        let tok = (bi * dims.tokens + k) * dims.channels + ch;
                        let row = (bi * dims.tokens + k) * dims.state + s;
                        let abar = (delta[tok] * a_cs).exp();
                        let bbar = delta[tok] * b[row];
                        let (h_prev, n_prev) = if k > 0 {
                            (self.hs[at - dims.channels * dims.state], self.ns[at - dims.channels * dims.state])
                        } else {
                            (T::zero(), T::zero())
                        };
                        let g_abar = carry_h * h_prev + carry_n * n_prev;
                        let g_bbar = carry_h * v[tok] + carry_n;
                        gv[tok] += carry_h * bbar;
                        gdelta[tok] += g_abar * abar * a_cs + g_bbar * b[row];
                        ga[ch * dims.state + s] += g_abar * abar * delta[tok];
                        gb[row] += g_bbar * delta[tok];
                        carry_h *= abar;
                        carry_n *= abar;
                    }
                }
            }
        }
        vec![Some(gv), Some(gdelta), Some(ga), Some(gb), Some(gc), Some(gd)]
    }
}

/// Input-dependent scan with the plain readout `C·h_k + D v_k`.
pub fn selective_scan<T: Float>(params: &SSMParams<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (delta, b, c) = params.project(v, false)?;
    let a = params.a()?;
    let inputs = ScanInputs {
        v,
        delta: &delta,
        a: &a,
        b: &b,
        c: &c,
        d: &params.d,
    };
    scan(&inputs, ScanMode::Plain)
}

/// Input-dependent scan with the normalized readout. B and C pass through
/// `ELU + 1` so the denominator is a positive combination.
pub fn ssm_similarity_encode<T: Float>(params: &SSMParams<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (delta, b, c) = params.project(v, true)?;
    let a = params.a()?;
    let inputs = ScanInputs {
        v,
        delta: &delta,
        a: &a,
        b: &b,
        c: &c,
        d: &params.d,
    };
    scan(&inputs, ScanMode::Normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tamperscope_tensor::grad_check;

    fn t(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(data, shape).unwrap()
    }

    #[test]
    fn discretize_examples() {
        let one = t(vec![1.0], &[1]);
        let b = t(vec![0.7], &[1]);
        let (abar, bbar) = discretize(&t(vec![0.0], &[1]), &b, &one).unwrap();
        assert_eq!(abar.data(), &[1.0]);
        assert_eq!(bbar.data(), &[0.7]);
        let (abar, _) = discretize(&t(vec![-1.0], &[1]), &b, &t(vec![2f64.ln()], &[1])).unwrap();
        assert!((abar.data()[0] - 0.5).abs() < 1e-15);
        let (abar, bbar) = discretize(&t(vec![-3.0], &[1]), &b, &t(vec![1e-12], &[1])).unwrap();
        assert!((abar.data()[0] - 1.0).abs() < 1e-11 && bbar.data()[0] < 1e-11);
        assert!(matches!(
            discretize(&t(vec![-1.0], &[1]), &b, &t(vec![0.0], &[1])),
            Err(CoreError::NonPositiveDelta(_))
        ));
    }

    struct Fixed {
        v: Tensor<f64>,
        delta: Tensor<f64>,
        a: Tensor<f64>,
        b: Tensor<f64>,
        c: Tensor<f64>,
        d: Tensor<f64>,
    }

    impl Fixed {
        fn inputs(&self) -> ScanInputs<'_, f64> {
            ScanInputs {
                v: &self.v,
                delta: &self.delta,
                a: &self.a,
                b: &self.b,
                c: &self.c,
                d: &self.d,
            }
        }
    }

    fn fixed(v: Vec<f64>, a: f64, d: f64) -> Fixed {
        let n = v.len();
        Fixed {
            v: t(v, &[1, n, 1]),
            delta: Tensor::ones(&[1, n, 1]),
            a: t(vec![a], &[1, 1]),
            b: Tensor::ones(&[1, n, 1]),
            c: Tensor::ones(&[1, n, 1]),
            d: t(vec![d], &[1]),
        }
    }

    #[test]
    fn unit_dynamics_accumulate() {
        let f = fixed(vec![1.0, 2.0, 3.0, 4.0], 0.0, 0.0);
        let y = scan(&f.inputs(), ScanMode::Plain).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 6.0, 10.0]);
        let y = scan(&f.inputs(), ScanMode::Normalized).unwrap();
        let means = [1.0, 1.5, 2.0, 2.5];
        for (got, want) in y.data().iter().zip(means) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn vanishing_state_is_memoryless() {
        let f = fixed(vec![1.0, -2.0, 3.0], -1e3, 0.5);
        let y = scan(&f.inputs(), ScanMode::Plain).unwrap();
        assert_eq!(y.data(), &[1.5, -3.0, 4.5]);
    }

    #[test]
    fn single_token_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SSMParams::<f64>::new(4, 3, &mut rng);
        let v = Tensor::randn(&[1, 1, 4], &mut rng);
        let y = ssm_similarity_encode(&p, &v).unwrap();
        // C·B̄v / (C·B̄ + ε) + D v with D = 1
        for (got, x) in y.data().iter().zip(v.data()) {
            assert!((got - 2.0 * x).abs() < 1e-7);
        }
    }

    #[test]
    fn state_stays_bounded_on_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SSMParams::<f64>::new(3, 4, &mut rng);
        let v = Tensor::full(&[1, 200, 3], 0.8);
        let (delta, b, c) = p.project(&v, false).unwrap();
        let a = p.a().unwrap();
        let inputs = ScanInputs {
            v: &v,
            delta: &delta,
            a: &a,
            b: &b,
            c: &c,
            d: &p.d,
        };
        let st = scan_final_state(&inputs).unwrap();
        for ch in 0..3 {
            for s in 0..4 {
                let abar = (delta.at(&[0, 0, ch]) * a.at(&[ch, s])).exp();
                let bbar = (delta.at(&[0, 0, ch]) * b.at(&[0, 0, s])).abs();
                let bound = bbar * 0.8 / (1.0 - abar);
                assert!(st.h.at(&[0, ch, s]).abs() <= bound * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn scan_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (bs, n, c, s) = (2, 4, 3, 2);
        let v = Tensor::randn(&[bs, n, c], &mut rng);
        let delta = Tensor::uniform(&[bs, n, c], 0.2, 1.0, &mut rng);
        let a = Tensor::uniform(&[c, s], -1.5, -0.1, &mut rng);
        let b = Tensor::uniform(&[bs, n, s], 0.2, 1.5, &mut rng);
        let cc = Tensor::uniform(&[bs, n, s], 0.2, 1.5, &mut rng);
        let d = Tensor::randn(&[c], &mut rng);
        let w = Tensor::randn(&[bs, n, c], &mut rng);
        for mode in [ScanMode::Plain, ScanMode::Normalized] {
            let ops = [&v, &delta, &a, &b, &cc, &d];
            for slot in 0..6 {
                let f = |x: &Tensor<f64>| {
                    let mut o: Vec<Tensor<f64>> = ops.iter().map(|t| (*t).clone()).collect();
                    o[slot] = x.clone();
                    let inputs = ScanInputs {
                        v: &o[0],
                        delta: &o[1],
                        a: &o[2],
                        b: &o[3],
                        c: &o[4],
                        d: &o[5],
                    };
                    scan(&inputs, mode).map_err(|e| match e {
                        CoreError::Tensor(t) => t,
                        other => TensorError::InvalidArgument(other.to_string()),
                    })?
                    .mul(&w)?
                    .sum()
                };
                let r = grad_check(f, ops[slot], 1e-5, 1e-4).unwrap();
                assert!(r.passed(), "{mode:?} slot {slot}: {} {} {}", r.max_rel_error, r.analytic[r.worst_index], r.numeric[r.worst_index]);
            }
        }
    }
}
