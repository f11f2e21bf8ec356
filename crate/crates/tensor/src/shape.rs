//! Row-major shape arithmetic and trailing-dimension broadcasting.

use crate::error::{Result, TensorError};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides, in elements.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Flat index to multi-index.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

/// Multi-index to flat index.
pub fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Result shape of broadcasting `a` against `b`, aligning trailing dimensions.
/// A dimension broadcasts when it equals the other or is 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `input` viewed in the broadcast `out` shape (0 on broadcast axes).
pub fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(input);
    let offset = out.len() - input.len();
    (0..out.len())
        .map(|d| {
            if d < offset || input[d - offset] == 1 {
                0
            } else {
                own[d - offset]
            }
        })
        .collect()
}

/// How an input is laid out relative to a broadcast output; lets hot loops
/// skip the general multi-index walk.
#[derive(Debug, Clone)]
pub(crate) enum Layout {
    /// Same shape as output.
    Same,
    /// A single element.
    Scalar,
    /// Input equals the trailing dims of the output: index is `i % len`.
    Suffix(usize),
    /// Anything else.
    General(Vec<usize>),
}

impl Layout {
    pub(crate) fn of(input: &[usize], out: &[usize]) -> Layout {
        let n = numel(input);
        if input == out {
            Layout::Same
        } else if n == 1 {
            Layout::Scalar
        } else {
            let trimmed: Vec<usize> = {
                let first = input.iter().position(|&d| d != 1).unwrap_or(input.len());
                input[first..].to_vec()
            };
            if out.len() >= trimmed.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
                Layout::Suffix(n)
            } else {
                Layout::General(broadcast_strides(input, out))
            }
        }
    }
}

/// Source index of every output element for an input with `layout`.
pub(crate) fn source_indices(layout: &Layout, out: &[usize]) -> Vec<usize> {
    let n = numel(out);
    match layout {
        Layout::Same => (0..n).collect(),
        Layout::Scalar => vec![0; n],
        Layout::Suffix(len) => (0..n).map(|i| i % len).collect(),
        Layout::General(bs) => {
            let mut res = Vec::with_capacity(n);
            let mut idx = vec![0usize; out.len()];
            let mut src = 0usize;
            for _ in 0..n {
                res.push(src);
                for d in (0..out.len()).rev() {
                    idx[d] += 1;
                    src += bs[d];
                    if idx[d] < out[d] {
                        break;
                    }
                    src -= bs[d] * out[d];
                    idx[d] = 0;
                }
            }
            res
        }
    }
}

pub(crate) fn normalize_axis(axis: isize, rank: usize) -> Result<usize> {
    let a = if axis < 0 { axis + rank as isize } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(TensorError::InvalidAxis {
            axis: axis.unsigned_abs(),
            rank,
        });
    }
    Ok(a as usize)
}

/// Integer square root when `n` is a perfect square.
pub fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1, 3], &[2, 1]).unwrap(), vec![4, 2, 3]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn layout_classification() {
        assert!(matches!(Layout::of(&[3], &[2, 3]), Layout::Suffix(3)));
        assert!(matches!(Layout::of(&[1, 3], &[2, 3]), Layout::Suffix(3)));
        assert!(matches!(Layout::of(&[2, 1], &[2, 3]), Layout::General(_)));
        assert!(matches!(Layout::of(&[1], &[2, 3]), Layout::Scalar));
    }

    proptest! {
        #[test]
        fn ravel_unravel_round_trip(shape in prop::collection::vec(1usize..5, 0..=4), seed in 0usize..10_000) {
            let n = numel(&shape);
            let flat = seed % n.max(1);
            if n > 0 {
                prop_assert_eq!(ravel(&unravel(flat, &shape), &shape), flat);
            }
        }

        #[test]
        fn general_indices_agree_with_multi_index(
            out in prop::collection::vec(1usize..4, 1..=4),
            mask in prop::collection::vec(any::<bool>(), 4),
        ) {
            let input: Vec<usize> = out.iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
            let layout = Layout::General(broadcast_strides(&input, &out));
            let got = source_indices(&layout, &out);
            for (flat, &src) in got.iter().enumerate() {
                let idx = unravel(flat, &out);
                let in_idx: Vec<usize> = idx.iter().zip(&input).map(|(&i, &d)| if d == 1 { 0 } else { i }).collect();
                prop_assert_eq!(src, ravel(&in_idx, &input));
            }
            let fast = source_indices(&Layout::of(&input, &out), &out);
            prop_assert_eq!(fast, got);
        }
    }
}
