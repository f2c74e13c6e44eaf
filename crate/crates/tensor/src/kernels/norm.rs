use crate::float::Float;

/// Normalize each contiguous `group_len` block to zero mean and unit
/// variance (population statistics, `eps` inside the square root).
/// Returns the normalized values and the per-block reciprocal std.
pub fn normalize_blocks<T: Float>(x: &[T], group_len: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let blocks = x.len() / group_len;
    let inv_len = T::lit(1.0 / group_len as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(blocks);
    for (src, dst) in x.chunks(group_len).zip(y.chunks_mut(group_len)) {
        let mean = src.iter().fold(T::zero(), |a, &v| a + v) * inv_len;
        let var = src
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            * inv_len;
        let r = T::one() / (var + T::lit(eps)).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        rstd.push(r);
    }
    (y, rstd)
}

/// Vector-Jacobian product of [`normalize_blocks`] given its output `y`.
pub fn normalize_blocks_backward<T: Float>(
    dy: &[T],
    y: &[T],
    rstd: &[T],
    group_len: usize,
) -> Vec<T> {
    let inv_len = T::lit(1.0 / group_len as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for (((g_dy, g_y), g_dx), &r) in dy
        .chunks(group_len)
        .zip(y.chunks(group_len))
        .zip(dx.chunks_mut(group_len))
        .zip(rstd)
    {
        let mean_dy = g_dy.iter().fold(T::zero(), |a, &v| a + v) * inv_len;
        let mean_dyy = g_dy
            .iter()
            .zip(g_y)
            .fold(T::zero(), |a, (&d, &v)| a + d * v)
            * inv_len;
        for ((o, &d), &v) in g_dx.iter_mut().zip(g_dy).zip(g_y) {
            *o = r * (d - mean_dy - v * mean_dyy);
        }
    }
    dx
}

/// Row-wise softmax over contiguous rows of length `len`.
pub fn softmax_rows<T: Float>(x: &[T], len: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(len).zip(y.chunks_mut(len)) {
        let max = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        let inv = T::one() / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    y
}

pub fn softmax_rows_backward<T: Float>(dy: &[T], y: &[T], len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    for ((g_dy, g_y), g_dx) in dy.chunks(len).zip(y.chunks(len)).zip(dx.chunks_mut(len)) {
        let dot = g_dy.iter().zip(g_y).fold(T::zero(), |a, (&d, &v)| a + d * v);
        for ((o, &d), &v) in g_dx.iter_mut().zip(g_dy).zip(g_y) {
            *o = v * (d - dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_normalizes_to_zero() {
        let (y, _) = normalize_blocks(&[3.0f64; 12], 6, 1e-5);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = [0.3f64, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 1000.0).collect();
        let a = softmax_rows(&x, 4);
        let b = softmax_rows(&shifted, 4);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
