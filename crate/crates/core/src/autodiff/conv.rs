//! Stride-1, zero-padded "same" convolutions through im2col and GEMM.

use super::Tensor;

/// Unfolds `x` into a `(c·k²) × (h·w)` matrix for a `k × k` kernel.
pub(super) fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let hw = h * w;
    if k == 1 {
        return x.data.clone();
    }
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = x.plane(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx.max(0)) as usize;
                    for xo in x_lo..x_hi {
                        dst[xo] = src[(xo as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back into `dx`.
pub(super) fn col2im_add(cols: &[f64], k: usize, dx: &mut Tensor) {
    let (c, h, w) = dx.shape();
    let hw = h * w;
    if k == 1 {
        dx.data.iter_mut().zip(cols).for_each(|(a, b)| *a += b);
        return;
    }
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let plane = dx.plane_mut(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let x_lo = (-dxo).max(0) as usize;
                    let x_hi = (w as isize - dxo.max(0)) as usize;
                    for xo in x_lo..x_hi {
                        dst[(xo as isize + dxo) as usize] += src[xo];
                    }
                }
            }
        }
    }
}

/// `C[m×n] = alpha·op(A)·op(B) + beta·C` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let max_a = (m as isize - 1) * rsa + (k as isize - 1).max(0) * csa;
    let max_b = (k as isize - 1).max(0) * rsb + (n as isize - 1) * csb;
    assert!(k == 0 || ((max_a as usize) < a.len() && (max_b as usize) < b.len()));
    // SAFETY: the asserts above bound every strided index into `a`, `b`, `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution. `weight` is `cout × cin × k²`, `bias` is `cout × 1 × 1`.
pub(super) fn forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let k = kernel_size(weight);
    let (_, h, w) = x.shape();
    let hw = h * w;
    let cout = weight.c;
    let kk = weight.h * weight.w;
    let cols = im2col(x, k);
    let mut out = Tensor::zeros(cout, h, w);
    gemm(
        cout,
        kk,
        hw,
        &weight.data,
        (kk as isize, 1),
        &cols,
        (hw as isize, 1),
        0.0,
        &mut out.data,
    );
    for (co, b) in bias.data.iter().enumerate() {
        out.plane_mut(co).iter_mut().for_each(|v| *v += b);
    }
    out
}

/// Accumulates gradients of a convolution into `dx`, `dw`, `db`.
pub(super) fn backward(
    x: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    dx: Option<&mut Tensor>,
    dw: Option<&mut Tensor>,
    db: Option<&mut Tensor>,
) {
    let k = kernel_size(weight);
    let hw = x.plane_len();
    let cout = weight.c;
    let kk = weight.h * weight.w;
    if let Some(db) = db {
        for co in 0..cout {
            db.data[co] += dout.plane(co).iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        let cols = im2col(x, k);
        gemm(
            cout,
            hw,
            kk,
            &dout.data,
            (hw as isize, 1),
            &cols,
            (1, hw as isize),
            1.0,
            &mut dw.data,
        );
    }
    if let Some(dx) = dx {
        let mut dcols = vec![0.0; kk * hw];
        gemm(
            kk,
            cout,
            hw,
            &weight.data,
            (1, kk as isize),
            &dout.data,
            (hw as isize, 1),
            0.0,
            &mut dcols,
        );
        col2im_add(&dcols, k, dx);
    }
}

pub(super) fn kernel_size(weight: &Tensor) -> usize {
    let k2 = weight.w;
    let k = (k2 as f64).sqrt().round() as usize;
    debug_assert_eq!(k * k, k2);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn naive(x: &Tensor, wt: &Tensor, b: &Tensor) -> Tensor {
        let k = kernel_size(wt) as isize;
        let pad = k / 2;
        let (cin, h, w) = x.shape();
        let mut out = Tensor::zeros(wt.c, h, w);
        for co in 0..wt.c {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - pad, xx + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = wt.data[(co * cin + ci) * (k * k) as usize + (ky * k + kx) as usize];
                                acc += wv * x.data[ci * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out.data[co * h * w + y as usize * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn ramp(c: usize, h: usize, w: usize, s: f64) -> Tensor {
        let data = (0..c * h * w).map(|i| ((i as f64) * s).sin()).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn matches_naive_3x3_and_1x1() {
        let x = ramp(3, 5, 7, 0.37);
        for k in [1usize, 3] {
            let wt = ramp(4, 3, k * k, 1.3);
            let b = ramp(4, 1, 1, 2.1);
            let fast = forward(&x, &wt, &b);
            assert!(fast.max_abs_diff(&naive(&x, &wt, &b)) < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> for the bias-free linear map.
        let x = ramp(2, 4, 6, 0.7);
        let wt = ramp(3, 2, 9, 0.9);
        let zero_b = Tensor::zeros(3, 1, 1);
        let g = ramp(3, 4, 6, 0.21);
        let y = forward(&x, &wt, &zero_b);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut dx = Tensor::zeros(2, 4, 6);
        let mut dw = Tensor::zeros(3, 2, 9);
        backward(&x, &wt, &g, Some(&mut dx), Some(&mut dw), None);
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = wt.data.iter().zip(&dw.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
