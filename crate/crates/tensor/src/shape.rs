//! Shape arithmetic: trailing-dimension broadcasting and strided index walks.

use crate::error::TensorError;
use crate::Result;

/// Broadcast two shapes, aligning from the trailing dimension. Extents must
/// match or one of them must be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::dim("broadcast", a, b)),
        };
    }
    Ok(out)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside the broadcast `out` shape; broadcast axes
/// get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// How each flat output index of a broadcast binary op maps onto its inputs.
pub(crate) enum BroadcastPlan {
    /// Both inputs already have the output shape.
    Same,
    /// `b` is repeated over the leading axes of `a` (e.g. a bias row).
    SuffixB { period: usize },
    /// Arbitrary broadcast: precomputed input offsets per output element.
    General { a_idx: Vec<usize>, b_idx: Vec<usize> },
}

impl BroadcastPlan {
    pub(crate) fn new(a: &[usize], b: &[usize], out: &[usize]) -> Self {
        if a == b {
            return BroadcastPlan::Same;
        }
        if a == out && b.len() <= a.len() && a[a.len() - b.len()..] == *b {
            return BroadcastPlan::SuffixB {
                period: b.iter().product(),
            };
        }
        let sa = broadcast_strides(a, out);
        let sb = broadcast_strides(b, out);
        let n: usize = out.iter().product();
        let mut a_idx = Vec::with_capacity(n);
        let mut b_idx = Vec::with_capacity(n);
        let mut counter = vec![0usize; out.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..n {
            a_idx.push(ia);
            b_idx.push(ib);
            for axis in (0..out.len()).rev() {
                counter[axis] += 1;
                ia += sa[axis];
                ib += sb[axis];
                if counter[axis] < out[axis] {
                    break;
                }
                ia -= sa[axis] * out[axis];
                ib -= sb[axis] * out[axis];
                counter[axis] = 0;
            }
        }
        BroadcastPlan::General { a_idx, b_idx }
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> (usize, usize) {
        match self {
            BroadcastPlan::Same => (i, i),
            BroadcastPlan::SuffixB { period } => (i, i % period),
            BroadcastPlan::General { a_idx, b_idx } => (a_idx[i], b_idx[i]),
        }
    }
}

/// Flat source index for every element of `src` permuted by `perm`, i.e.
/// `out[i] = src[gather[i]]`.
pub(crate) fn permute_gather(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_src_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut gather = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        gather.push(src);
        for axis in (0..out_shape.len()).rev() {
            counter[axis] += 1;
            src += out_src_strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            src -= out_src_strides[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
    gather
}

/// Split a shape at `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
