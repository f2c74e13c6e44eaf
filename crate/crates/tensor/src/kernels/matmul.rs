use crate::error::{Result, TensorError};
use crate::float::{gemm, Float, MatRef};
use crate::par;

/// Resolved dimensions of a (possibly batched) matrix product
/// `op(a) @ op(b)` where `op` optionally transposes the last two axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `b` is a single matrix shared by every batch entry.
    pub shared_b: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulDims {
    pub fn resolve(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(TensorError::shape(
                "matmul",
                format!("operands must be at least 2-D, got {a:?} and {b:?}"),
            ));
        }
        let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
        let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dims differ: lhs {a:?} (k={k}) vs rhs {b:?} (k={kb})"),
            ));
        }
        let batch_dims = &a[..a.len() - 2];
        let shared_b = b.len() == 2;
        if !shared_b && &b[..b.len() - 2] != batch_dims {
            return Err(TensorError::shape(
                "matmul",
                format!("batch dims differ: lhs {a:?} vs rhs {b:?}"),
            ));
        }
        let mut out_shape = batch_dims.to_vec();
        out_shape.extend([m, n]);
        Ok(MatmulDims {
            batch: batch_dims.iter().product(),
            m,
            k,
            n,
            shared_b,
            out_shape,
        })
    }
}

fn op_view<T>(data: &[T], rows: usize, cols: usize, t: bool) -> MatRef<'_, T> {
    // `rows x cols` is the logical (post-op) shape.
    if t {
        MatRef::row_major(data, cols, rows).t()
    } else {
        MatRef::row_major(data, rows, cols)
    }
}

pub fn matmul_forward<T: Float>(a: &[T], b: &[T], d: &MatmulDims, ta: bool, tb: bool) -> Vec<T> {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![T::zero(); d.batch * m * n];
    if d.shared_b && !ta {
        let bm = op_view(b, k, n, tb);
        gemm(T::one(), MatRef::row_major(a, d.batch * m, k), bm, T::zero(), &mut out);
        return out;
    }
    par::for_each_chunk_mut(&mut out, m * n, |i, out_i| {
        let ai = op_view(&a[i * m * k..(i + 1) * m * k], m, k, ta);
        let bi = if d.shared_b {
            op_view(b, k, n, tb)
        } else {
            op_view(&b[i * k * n..(i + 1) * k * n], k, n, tb)
        };
        gemm(T::one(), ai, bi, T::zero(), out_i);
    });
    out
}

/// Gradients of `op(a) @ op(b)` with respect to `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Float>(
    a: &[T],
    b: &[T],
    dc: &[T],
    d: &MatmulDims,
    ta: bool,
    tb: bool,
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (m, k, n) = (d.m, d.k, d.n);
    let b_at = |i: usize| -> MatRef<'_, T> {
        if d.shared_b {
            op_view(b, k, n, tb)
        } else {
            op_view(&b[i * k * n..(i + 1) * k * n], k, n, tb)
        }
    };
    let da = need_a.then(|| {
        let mut da = vec![T::zero(); d.batch * m * k];
        if d.shared_b && !ta {
            let dcm = MatRef::row_major(dc, d.batch * m, n);
            gemm(T::one(), dcm, op_view(b, k, n, tb).t(), T::zero(), &mut da);
            return da;
        }
        par::for_each_chunk_mut(&mut da, m * k, |i, da_i| {
            let dci = MatRef::row_major(&dc[i * m * n..(i + 1) * m * n], m, n);
            if ta {
                // stored a is k x m: da = op(b) @ dc^T
                gemm(T::one(), b_at(i), dci.t(), T::zero(), da_i);
            } else {
                gemm(T::one(), dci, b_at(i).t(), T::zero(), da_i);
            }
        });
        da
    });
    let db = need_b.then(|| {
        // gradient of the logical op(b), stored as k x n (or n x k if tb)
        let grad_for = |ai: MatRef<'_, T>, dci: MatRef<'_, T>, dst: &mut [T]| {
            if tb {
                gemm(T::one(), dci.t(), ai, T::zero(), dst);
            } else {
                gemm(T::one(), ai.t(), dci, T::zero(), dst);
            }
        };
        if d.shared_b {
            let mut db = vec![T::zero(); k * n];
            if !ta {
                let am = MatRef::row_major(a, d.batch * m, k);
                grad_for(am, MatRef::row_major(dc, d.batch * m, n), &mut db);
            } else {
                let parts = par::map_range(d.batch, |i| {
                    let mut part = vec![T::zero(); k * n];
                    let ai = op_view(&a[i * m * k..(i + 1) * m * k], m, k, ta);
                    let dci = MatRef::row_major(&dc[i * m * n..(i + 1) * m * n], m, n);
                    grad_for(ai, dci, &mut part);
                    part
                });
                for part in parts {
                    db.iter_mut().zip(part).for_each(|(acc, v)| *acc += v);
                }
            }
            db
        } else {
            let mut db = vec![T::zero(); d.batch * k * n];
            par::for_each_chunk_mut(&mut db, k * n, |i, db_i| {
                let ai = op_view(&a[i * m * k..(i + 1) * m * k], m, k, ta);
                let dci = MatRef::row_major(&dc[i * m * n..(i + 1) * m * n], m, n);
                grad_for(ai, dci, db_i);
            });
            db
        }
    });
    (da, db)
}
