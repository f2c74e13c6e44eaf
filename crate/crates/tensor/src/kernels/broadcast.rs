//! Numpy-style broadcasting for binary elementwise ops.

use crate::float::Float;

/// Result shape of broadcasting `a` against `b`, or `None` if incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// Element strides of `shape` laid over `out` (zero on broadcast axes).
pub fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for k in 0..rank {
        let d = dim_from_right(shape, k);
        let axis = rank - 1 - k;
        strides[axis] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// Visit the output in row-major order, one innermost row at a time:
/// `f(out_offset, a_offset, b_offset)`; the row has `out[rank-1]` elements
/// and the operands advance by their innermost strides.
fn walk_rows(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let rows: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let (mut oa, mut ob) = (0usize, 0usize);
    for r in 0..rows {
        f(r * inner, oa, ob);
        for axis in (0..rank - 1).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= sa[axis] * out[axis];
            ob -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

pub fn binary<T: Float>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out.iter().product();
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = aligned_strides(a_shape, out);
    let sb = aligned_strides(b_shape, out);
    let inner = out.last().copied().unwrap_or(1);
    let (ia, ib) = (
        sa.last().copied().unwrap_or(0),
        sb.last().copied().unwrap_or(0),
    );
    let mut y = vec![T::zero(); n];
    walk_rows(out, &sa, &sb, |o, pa, pb| {
        for i in 0..inner {
            y[o + i] = f(a[pa + i * ia], b[pb + i * ib]);
        }
    });
    y
}

/// Sum `grad` (shaped like `out`) down to `target`, optionally weighting each
/// element by the matching element of `other` broadcast from `other_shape`.
pub fn reduce_to<T: Float>(
    grad: &[T],
    out: &[usize],
    target: &[usize],
    other: Option<(&[T], &[usize])>,
) -> Vec<T> {
    let n_target: usize = target.iter().product();
    if target == out {
        return match other {
            None => grad.to_vec(),
            Some((o, o_shape)) if o_shape == out => {
                grad.iter().zip(o).map(|(&g, &v)| g * v).collect()
            }
            Some((o, o_shape)) => binary(grad, out, o, o_shape, out, |g, v| g * v),
        };
    }
    let st = aligned_strides(target, out);
    let (so, other_data) = match other {
        Some((o, o_shape)) => (aligned_strides(o_shape, out), Some(o)),
        None => (vec![0; out.len()], None),
    };
    let inner = out.last().copied().unwrap_or(1);
    let it = st.last().copied().unwrap_or(0);
    let io = so.last().copied().unwrap_or(0);
    let mut acc = vec![T::zero(); n_target];
    walk_rows(out, &st, &so, |o, pt, po| match other_data {
        Some(od) => {
            for i in 0..inner {
                acc[pt + i * it] += grad[o + i] * od[po + i * io];
            }
        }
        None => {
            for i in 0..inner {
                acc[pt + i * it] += grad[o + i];
            }
        }
    });
    acc
}
