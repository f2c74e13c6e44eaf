use crate::error::{Result, TensorError};
use crate::float::{gemm, Float, MatRef};
use crate::par;

/// Geometry of a 2-D cross-correlation over one `c x h x w` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        if kh == 0 || kw == 0 {
            return Err(TensorError::invalid("conv2d", "kernel must be non-empty"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::shape(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{} (H={h}, W={w}, pad={pad})",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            ));
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one image into a `(c*kh*kw) x (oh*ow)` patch matrix.
pub fn im2col<T: Float>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(kj, g.pad, g.stride, g.w, g.ow);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    let x0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        seg[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for (v, &s) in seg[lo..hi].iter_mut().zip(src[x0..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + k - pad` lies inside `0..w`.
fn valid_range(k: usize, pad: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if w + pad > k { ((w + pad - k - 1) / stride + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into an image.
pub fn col2im<T: Float>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let p = g.col_cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(kj, g.pad, g.stride, g.w, g.ow);
                if lo >= hi {
                    continue;
                }
                let x0 = lo * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[x0..x0 + hi - lo].iter_mut().zip(seg) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[x0..].iter_mut().step_by(g.stride).zip(seg) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation. `x: [n, c, h, w]`, `w: [o, c, kh, kw]`,
/// returns `[n, o, oh, ow]`.
pub fn conv2d_forward<T: Float>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    o: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let p = g.col_cols();
    let k = g.col_rows();
    let mut out = vec![T::zero(); n * o * p];
    let wm = MatRef::row_major(weight, o, k);
    par::for_each_chunk_mut(&mut out, o * p, |b, out_b| {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        if g.pointwise() {
            gemm(T::one(), wm, MatRef::row_major(xb, k, p), T::zero(), out_b);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col(g, xb, &mut cols);
            gemm(T::one(), wm, MatRef::row_major(&cols, k, p), T::zero(), out_b);
        }
        if let Some(bias) = bias {
            for (row, &bv) in out_b.chunks_mut(p).zip(bias) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Vector-Jacobian product of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    o: usize,
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let p = g.col_cols();
    let k = g.col_rows();
    let wm = MatRef::row_major(weight, o, k);
    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); n * g.in_len()];
        par::for_each_chunk_mut(&mut dx, g.in_len(), |b, dx_b| {
            let dyb = MatRef::row_major(&dy[b * o * p..(b + 1) * o * p], o, p);
            if g.pointwise() {
                gemm(T::one(), wm.t(), dyb, T::zero(), dx_b);
            } else {
                let mut dcols = vec![T::zero(); k * p];
                gemm(T::one(), wm.t(), dyb, T::zero(), &mut dcols);
                col2im(g, &dcols, dx_b);
            }
        });
        dx
    });
    let dw = need[1].then(|| {
        let partials = par::map_range(n, |b| {
            let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
            let dyb = MatRef::row_major(&dy[b * o * p..(b + 1) * o * p], o, p);
            let mut part = vec![T::zero(); o * k];
            if g.pointwise() {
                gemm(T::one(), dyb, MatRef::row_major(xb, k, p).t(), T::zero(), &mut part);
            } else {
                let mut cols = vec![T::zero(); k * p];
                im2col(g, xb, &mut cols);
                gemm(T::one(), dyb, MatRef::row_major(&cols, k, p).t(), T::zero(), &mut part);
            }
            part
        });
        sum_ordered(partials, o * k)
    });
    let db = need[2].then(|| channel_sums(dy, n, o, p));
    ConvGrads { dx, dw, db }
}

/// Batched transposed convolution (the adjoint of [`conv2d_forward`] with
/// respect to its input). `x: [n, ci, h, w]`, `w: [ci, co, kh, kw]`; `g`
/// describes the *output* image as the input of the matching forward conv,
/// so `g.oh == h` and `g.ow == w`.
pub fn conv_transpose2d_forward<T: Float>(
    x: &[T],
    n: usize,
    ci: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let p = g.col_cols();
    let k = g.col_rows();
    let co = g.c;
    let plane = g.h * g.w;
    let wm = MatRef::row_major(weight, ci, k);
    let mut out = vec![T::zero(); n * g.in_len()];
    par::for_each_chunk_mut(&mut out, g.in_len(), |b, out_b| {
        let xb = MatRef::row_major(&x[b * ci * p..(b + 1) * ci * p], ci, p);
        let mut cols = vec![T::zero(); k * p];
        gemm(T::one(), wm.t(), xb, T::zero(), &mut cols);
        col2im(g, &cols, out_b);
        if let Some(bias) = bias {
            for c in 0..co {
                out_b[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v += bias[c]);
            }
        }
    });
    out
}

pub fn conv_transpose2d_backward<T: Float>(
    x: &[T],
    n: usize,
    ci: usize,
    g: &ConvGeom,
    weight: &[T],
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let p = g.col_cols();
    let k = g.col_rows();
    let wm = MatRef::row_major(weight, ci, k);
    let unfold = |b: usize| {
        let mut cols = vec![T::zero(); k * p];
        im2col(g, &dy[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        cols
    };
    let (dx, dw) = if need[0] && need[1] {
        // Unfold each sample once and reuse it for both products.
        let mut dx = vec![T::zero(); n * ci * p];
        let partials = par::map_range(n, |b| {
            let cols = unfold(b);
            let cm = MatRef::row_major(&cols, k, p);
            let mut dxb = vec![T::zero(); ci * p];
            gemm(T::one(), wm, cm, T::zero(), &mut dxb);
            let xb = MatRef::row_major(&x[b * ci * p..(b + 1) * ci * p], ci, p);
            let mut part = vec![T::zero(); ci * k];
            gemm(T::one(), xb, cm.t(), T::zero(), &mut part);
            (dxb, part)
        });
        let mut parts = Vec::with_capacity(n);
        for (b, (dxb, part)) in partials.into_iter().enumerate() {
            dx[b * ci * p..(b + 1) * ci * p].copy_from_slice(&dxb);
            parts.push(part);
        }
        (Some(dx), Some(sum_ordered(parts, ci * k)))
    } else {
        let dx = need[0].then(|| {
            let mut dx = vec![T::zero(); n * ci * p];
            par::for_each_chunk_mut(&mut dx, ci * p, |b, dx_b| {
                let cols = unfold(b);
                gemm(T::one(), wm, MatRef::row_major(&cols, k, p), T::zero(), dx_b);
            });
            dx
        });
        let dw = need[1].then(|| {
            let partials = par::map_range(n, |b| {
                let cols = unfold(b);
                let xb = MatRef::row_major(&x[b * ci * p..(b + 1) * ci * p], ci, p);
                let mut part = vec![T::zero(); ci * k];
                gemm(T::one(), xb, MatRef::row_major(&cols, k, p).t(), T::zero(), &mut part);
                part
            });
            sum_ordered(partials, ci * k)
        });
        (dx, dw)
    };
    let db = need[2].then(|| channel_sums(dy, n, g.c, g.h * g.w));
    ConvGrads { dx, dw, db }
}

fn sum_ordered<T: Float>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        acc.iter_mut().zip(part).for_each(|(a, v)| *a += v);
    }
    acc
}

fn channel_sums<T: Float>(dy: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *acc += dy[off..off + plane].iter().fold(T::zero(), |s, &v| s + v);
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let g = ConvGeom::new(3, 32, 32, 3, 3, 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (16, 16));
        let g = ConvGeom::new(1, 7, 5, 3, 3, 1, 0).unwrap();
        assert_eq!((g.oh, g.ow), (5, 3));
    }

    #[test]
    fn rejects_oversized_kernel() {
        let err = ConvGeom::new(1, 2, 2, 5, 5, 1, 0).unwrap_err();
        assert!(err.to_string().contains("H=2"), "{err}");
        assert!(ConvGeom::new(1, 4, 4, 3, 3, 0, 1).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(2, 5, 4, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
