//! Pure numeric kernels behind the tape ops. Everything here works on
//! plain slices so the backward pass can reuse the same routines.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// c[m×n] = a[m×k] · b[k×n], accumulated in ikj order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}

pub fn transpose2(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Split a shape at `axis` into (outer, axis extent, inner) block sizes.
pub fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Max-stabilized softmax along `axis`.
pub fn softmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_blocks(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = Float::exp(x[base + j * inner] - max);
                y[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                y[base + j * inner] /= sum;
            }
        }
    }
    y
}

/// Backward of softmax given its output `y`: g_j = y_j (gy_j - Σ_k gy_k y_k).
pub fn softmax_axis_backward(gy: &[f64], y: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_blocks(shape, axis);
    let mut gx = vec![0.0; gy.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for j in 0..len {
                let idx = base + j * inner;
                dot += gy[idx] * y[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                gx[idx] = y[idx] * (gy[idx] - dot);
            }
        }
    }
    gx
}

/// Source coordinate mapping for align-corners=false bilinear resize:
/// returns (low index, high index, weight of the high sample).
pub fn resize_coords(dst: usize, in_extent: usize, out_extent: usize) -> (usize, usize, f64) {
    let scale = in_extent as f64 / out_extent as f64;
    let src = (dst as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0);
    let lo = (src.floor() as usize).min(in_extent - 1);
    let hi = (lo + 1).min(in_extent - 1);
    let w_hi = if hi > lo { src - lo as f64 } else { 0.0 };
    (lo, hi, w_hi)
}

/// Bilinear resize of a c×h×w tensor to c×oh×ow.
pub fn bilinear_resize(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut y = vec![0.0; c * oh * ow];
    for oy in 0..oh {
        let (y0, y1, wy) = resize_coords(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, wx) = resize_coords(ox, w, ow);
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                y[ch * oh * ow + oy * ow + ox] = top + (bot - top) * wy;
            }
        }
    }
    y
}

/// Backward of bilinear resize: scatter output grads to the four corners.
pub fn bilinear_resize_backward(
    gy: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut gx = vec![0.0; c * h * w];
    for oy in 0..oh {
        let (y0, y1, wy) = resize_coords(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, wx) = resize_coords(ox, w, ow);
            for ch in 0..c {
                let g = gy[ch * oh * ow + oy * ow + ox];
                let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                plane[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                plane[y0 * w + x1] += g * (1.0 - wy) * wx;
                plane[y1 * w + x0] += g * wy * (1.0 - wx);
                plane[y1 * w + x1] += g * wy * wx;
            }
        }
    }
    gx
}

/// Output spatial extent of a convolution, if integral.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if span < kernel || !(span - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

/// Cross-correlation of x[cin×h×w] with k[cout×cin×kh×kw].
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    k: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                let iy0 = oy * stride;
                let ix0 = ox * stride;
                for ci in 0..cin {
                    let x_plane = &x[ci * h * w..(ci + 1) * h * w];
                    let k_plane = &k[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                    for ky in 0..kh {
                        let iy = iy0 + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        for kx in 0..kw {
                            let ix = ix0 + kx;
                            if ix < pad || ix >= w + pad {
                                continue;
                            }
                            acc += x_plane[iy * w + (ix - pad)] * k_plane[ky * kw + kx];
                        }
                    }
                }
                y[co * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    y
}

/// Gradients of conv2d w.r.t. input and kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    gy: &[f64],
    x: &[f64],
    k: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; cin * h * w];
    let mut gk = vec![0.0; cout * cin * kh * kw];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gy[co * oh * ow + oy * ow + ox];
                if g == 0.0 {
                    continue;
                }
                let iy0 = oy * stride;
                let ix0 = ox * stride;
                for ci in 0..cin {
                    let x_plane = &x[ci * h * w..(ci + 1) * h * w];
                    let base = (co * cin + ci) * kh * kw;
                    for ky in 0..kh {
                        let iy = iy0 + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        for kx in 0..kw {
                            let ix = ix0 + kx;
                            if ix < pad || ix >= w + pad {
                                continue;
                            }
                            let ix = ix - pad;
                            gx[ci * h * w + iy * w + ix] += g * k[base + ky * kw + kx];
                            gk[base + ky * kw + kx] += g * x_plane[iy * w + ix];
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-x))
}
