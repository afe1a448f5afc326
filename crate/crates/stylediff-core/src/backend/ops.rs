//! Layer primitives: 3x3 same-padding convolution (as im2col + GEMM),
//! rectifier, and 2x2 stride-2 pooling, each with an input-gradient
//! backward pass. Weights are fixed at construction, so no parameter
//! gradients exist anywhere.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, Array3};

use crate::Scalar;

/// Unfold `(C, H, W)` into `(C*9, H*W)` for a 3x3 kernel with padding 1.
/// Row `c*9 + ky*3 + kx` holds the input shifted by `(ky-1, kx-1)`,
/// zero outside the image.
pub(crate) fn im2col<T: Scalar>(x: &Array3<T>) -> Array2<T> {
    let (c, h, w) = x.dim();
    let hw = h * w;
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::<T>::zeros((c * 9, hw));
    let cs = col.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            for kx in 0..3usize {
                let dx = kx as isize - 1;
                let row_base = (ci * 9 + ky * 3 + kx) * hw;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                if x1 <= x0 {
                    continue;
                }
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let src = (ci * h + sy) * w + (x0 as isize + dx) as usize;
                    let dst = row_base + y * w + x0;
                    cs[dst..dst + (x1 - x0)].copy_from_slice(&xs[src..src + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Fold a `(C*9, H*W)` column gradient back into `(C, H, W)`,
/// accumulating overlapping contributions.
pub(crate) fn col2im<T: Scalar>(dcol: &Array2<T>, c: usize, h: usize, w: usize) -> Array3<T> {
    let hw = h * w;
    debug_assert_eq!(dcol.dim(), (c * 9, hw));
    let ds = dcol.as_slice().expect("standard layout");
    let mut dx = Array3::<T>::zeros((c, h, w));
    let out = dx.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            for kx in 0..3usize {
                let dxo = kx as isize - 1;
                let row_base = (ci * 9 + ky * 3 + kx) * hw;
                let x0 = (-dxo).max(0) as usize;
                let x1 = (w as isize - dxo).min(w as isize) as usize;
                if x1 <= x0 {
                    continue;
                }
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let dst = (ci * h + sy) * w + (x0 as isize + dxo) as usize;
                    let src = row_base + y * w + x0;
                    for k in 0..(x1 - x0) {
                        out[dst + k] += ds[src + k];
                    }
                }
            }
        }
    }
    dx
}

/// `weight` has shape `(C_out, C_in*9)` with columns ordered
/// `c_in*9 + ky*3 + kx`, matching [`im2col`].
pub(crate) fn conv3x3_forward<T: Scalar>(
    x: &Array3<T>,
    weight: &Array2<T>,
    bias: &[T],
) -> Array3<T> {
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(weight.ncols(), c_in * 9);
    let col = im2col(x);
    let mut y = weight.dot(&col);
    for (o, mut row) in y.rows_mut().into_iter().enumerate() {
        let b = bias[o];
        if b != T::zero() {
            row.mapv_inplace(|v| v + b);
        }
    }
    let out = weight.nrows();
    y.into_shape_with_order((out, h, w))
        .expect("row-major reshape")
}

pub(crate) fn conv3x3_backward_input<T: Scalar>(
    dy: &Array3<T>,
    weight: &Array2<T>,
    c_in: usize,
) -> Array3<T> {
    let (c_out, h, w) = dy.dim();
    debug_assert_eq!(weight.nrows(), c_out);
    let dy2 = dy
        .view()
        .into_shape_with_order((c_out, h * w))
        .expect("row-major reshape");
    let dcol = weight.t().dot(&dy2);
    col2im(&dcol, c_in, h, w)
}

pub(crate) fn relu_forward<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient masked by the sign of the forward *input* (the stored
/// pre-activation); the subgradient at exactly zero is zero.
pub(crate) fn relu_backward<T: Scalar>(dy: &Array3<T>, pre: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

/// 2x2 stride-2 max pooling with floor semantics (a trailing odd row or
/// column is dropped). Returns the output and, per output element, the
/// in-block index `dy*2 + dx` of the maximum (first maximum wins).
pub(crate) fn maxpool2_forward<T: Scalar>(x: &Array3<T>) -> (Array3<T>, Vec<u8>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array3::<T>::zeros((c, ho, wo));
    let ys = y.as_slice_mut().expect("standard layout");
    let mut arg = vec![0u8; c * ho * wo];
    for ci in 0..c {
        for yo in 0..ho {
            let r0 = (ci * h + 2 * yo) * w;
            let r1 = r0 + w;
            for xo in 0..wo {
                let i00 = r0 + 2 * xo;
                let candidates = [xs[i00], xs[i00 + 1], xs[r1 + 2 * xo], xs[r1 + 2 * xo + 1]];
                let mut best = 0usize;
                for k in 1..4 {
                    if candidates[k] > candidates[best] {
                        best = k;
                    }
                }
                let o = (ci * ho + yo) * wo + xo;
                ys[o] = candidates[best];
                arg[o] = best as u8;
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool2_backward<T: Scalar>(
    dy: &Array3<T>,
    argmax: &[u8],
    in_dim: (usize, usize, usize),
) -> Array3<T> {
    let (c, h, w) = in_dim;
    let (_, ho, wo) = dy.dim();
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = Array3::<T>::zeros((c, h, w));
    let dxs = dx.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for yo in 0..ho {
            for xo in 0..wo {
                let o = (ci * ho + yo) * wo + xo;
                let k = argmax[o] as usize;
                let (dyk, dxk) = (k / 2, k % 2);
                dxs[(ci * h + 2 * yo + dyk) * w + 2 * xo + dxk] += dys[o];
            }
        }
    }
    dx
}

pub(crate) fn avgpool2_forward<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array3::<T>::zeros((c, ho, wo));
    let ys = y.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for yo in 0..ho {
            let r0 = (ci * h + 2 * yo) * w;
            let r1 = r0 + w;
            for xo in 0..wo {
                let s = xs[r0 + 2 * xo] + xs[r0 + 2 * xo + 1] + xs[r1 + 2 * xo] + xs[r1 + 2 * xo + 1];
                ys[(ci * ho + yo) * wo + xo] = s * quarter;
            }
        }
    }
    y
}

pub(crate) fn avgpool2_backward<T: Scalar>(
    dy: &Array3<T>,
    in_dim: (usize, usize, usize),
) -> Array3<T> {
    let (c, h, w) = in_dim;
    let (_, ho, wo) = dy.dim();
    let quarter = T::from_f64(0.25);
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = Array3::<T>::zeros((c, h, w));
    let dxs = dx.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for yo in 0..ho {
            let r0 = (ci * h + 2 * yo) * w;
            let r1 = r0 + w;
            for xo in 0..wo {
                let g = dys[(ci * ho + yo) * wo + xo] * quarter;
                dxs[r0 + 2 * xo] += g;
                dxs[r0 + 2 * xo + 1] += g;
                dxs[r1 + 2 * xo] += g;
                dxs[r1 + 2 * xo + 1] += g;
            }
        }
    }
    dx
}
