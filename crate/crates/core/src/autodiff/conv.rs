//! Shared lowering for conv2d and conv2d_transpose: same-padding geometry,
//! im2col/col2im, and thin wrappers over the GEMM kernel.
//!
//! Layout conventions: activations are [B, H, W, C] row-major, conv weights
//! are [KH, KW, Cin, Cout] row-major, which flattens to a [KH*KW*Cin, Cout]
//! matrix whose row index matches the im2col patch layout exactly.

use super::tensor::Real;

/// Same-padding output size and leading pad for one spatial axis:
/// out = ceil(n / stride), with any odd padding going after, not before.
pub fn same_pad(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let needed = (out - 1) * stride + k;
    let total = needed.saturating_sub(n);
    (out, total / 2)
}

/// Extract patches of `x` ([b, h, w, c]) into a [b*oh*ow, k*k*c] matrix.
/// Out-of-bounds taps read as zero (same padding).
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_y: usize,
    pad_x: usize,
) -> Vec<T> {
    let patch = k * k * c;
    let mut out = vec![T::zero(); b * oh * ow * patch];
    let row_w = w * c;
    for bi in 0..b {
        let xb = &x[bi * h * row_w..(bi + 1) * h * row_w];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst_base = ((bi * oh + oy) * ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let src_row = &xb[iy as usize * row_w..(iy as usize + 1) * row_w];
                    let ix0 = (ox * stride) as isize - pad_x as isize;
                    let dst_row = dst_base + ky * k * c;
                    if ix0 >= 0 && ix0 as usize + k <= w {
                        // fully in bounds: one contiguous copy of k*c elements
                        let s = ix0 as usize * c;
                        out[dst_row..dst_row + k * c].copy_from_slice(&src_row[s..s + k * c]);
                    } else {
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let s = ix as usize * c;
                            let d = dst_row + kx * c;
                            out[d..d + c].copy_from_slice(&src_row[s..s + c]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `im2col`: scatter-add a [b*oh*ow, k*k*c] patch matrix back
/// into a [b, h, w, c] buffer.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_y: usize,
    pad_x: usize,
) -> Vec<T> {
    let patch = k * k * c;
    let mut out = vec![T::zero(); b * h * w * c];
    let row_w = w * c;
    for bi in 0..b {
        let ob = bi * h * row_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let src_base = ((bi * oh + oy) * ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let dst_row = ob + iy as usize * row_w;
                    let ix0 = (ox * stride) as isize - pad_x as isize;
                    let src_row = src_base + ky * k * c;
                    for kx in 0..k {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let d = dst_row + ix as usize * c;
                        let s = src_row + kx * c;
                        for ci in 0..c {
                            out[d + ci] = out[d + ci] + cols[s + ci];
                        }
                    }
                }
            }
        }
    }
    out
}

/// out[m,n] = a[m,k] * b[k,n] + beta * out
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            out.fill(T::zero());
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// out[m,n] = transpose(a)[m,k] * b[k,n] + beta * out, where a is stored [k,m]
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            out.fill(T::zero());
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// out[m,n] = a[m,k] * transpose(b)[k,n] + beta * out, where b is stored [n,k]
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            out.fill(T::zero());
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_pad_matches_ceil_division() {
        // 28 -> 14 at stride 2 with 3x3 kernel: needs one pixel of padding
        let (out, pad) = same_pad(28, 3, 2);
        assert_eq!((out, pad), (14, 0)); // total pad 1, all of it trailing
        let (out, pad) = same_pad(28, 3, 1);
        assert_eq!((out, pad), (28, 1));
        let (out, pad) = same_pad(7, 3, 2);
        assert_eq!((out, pad), (4, 1)); // needed = 3*2+3 = 9, total = 2
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish integer fills
        let (b, h, w, c, k, s) = (2, 5, 4, 3, 3, 2);
        let (oh, pad_y) = same_pad(h, k, s);
        let (ow, pad_x) = same_pad(w, k, s);
        let x: Vec<f64> = (0..b * h * w * c).map(|i| (i % 13) as f64 - 6.0).collect();
        let y: Vec<f64> = (0..b * oh * ow * k * k * c)
            .map(|i| (i % 7) as f64 - 3.0)
            .collect();
        let cols = im2col(&x, b, h, w, c, k, s, oh, ow, pad_y, pad_x);
        let back = col2im(&y, b, h, w, c, k, s, oh, ow, pad_y, pad_x);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn gemm_variants_agree_with_naive_products() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| i as f64 * 0.25 + 1.0).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    want[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }

        let mut got = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, 0.0, &mut got);
        assert_eq!(got, want);

        // a stored transposed as [k, m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let mut got_t = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, 0.0, &mut got_t);
        assert_eq!(got_t, want);

        // b stored transposed as [n, k]
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let mut got_nt = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, 0.0, &mut got_nt);
        assert_eq!(got_nt, want);
    }
}
