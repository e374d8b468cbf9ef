//! Numeric kernels behind the graph ops.
//!
//! Plain loops over row-major slices, `f64` throughout, fixed accumulation
//! order — the same inputs produce the same bits on every run.

use serde::{Deserialize, Serialize};

/// Geometry of a valid (no padding, stride 1) 2-d convolution.
///
/// The image batch is a matrix whose rows are images packed channel-planar:
/// columns = `in_channels * in_h * in_w`. The kernel is a matrix with one row
/// per output channel: columns = `in_channels * k_h * k_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.k_h
    }
    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.k_w
    }
    pub fn in_cols(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }
    pub fn kernel_cols(&self) -> usize {
        self.in_channels * self.k_h * self.k_w
    }
    pub fn out_cols(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }
}

/// Geometry of a non-overlapping 2x2 average pool over channel-planar rows.
/// Odd trailing rows/columns are dropped (floor semantics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        self.in_h / 2
    }
    pub fn out_w(&self) -> usize {
        self.in_w / 2
    }
    pub fn in_cols(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }
    pub fn out_cols(&self) -> usize {
        self.channels * self.out_h() * self.out_w()
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub(crate) fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Row-wise softmax with max subtraction; stable for logits like 1e3.
pub(crate) fn softmax_rows(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            out[i * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            out[i * c + j] /= sum;
        }
    }
    out
}

/// Backward of row softmax given its cached output `y`:
/// dx = y .* (dy - rowdot(y, dy)).
pub(crate) fn softmax_rows_backward(y: &[f64], dy: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut dx = vec![0.0; r * c];
    for i in 0..r {
        let yr = &y[i * c..(i + 1) * c];
        let dyr = &dy[i * c..(i + 1) * c];
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            dx[i * c + j] = yr[j] * (dyr[j] - dot);
        }
    }
    dx
}

/// Row-wise l2 normalization; an all-zero row maps to an all-zero row.
pub(crate) fn l2_normalize_rows(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
    }
    out
}

/// Backward of row l2 normalization given the input `x`:
/// dx = dy/n - x * (x . dy) / n^3, and exactly zero for all-zero rows.
pub(crate) fn l2_normalize_rows_backward(x: &[f64], dy: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut dx = vec![0.0; r * c];
    for i in 0..r {
        let xr = &x[i * c..(i + 1) * c];
        let dyr = &dy[i * c..(i + 1) * c];
        let norm_sq: f64 = xr.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        let dot: f64 = xr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            dx[i * c + j] = dyr[j] / norm - xr[j] * dot / (norm_sq * norm);
        }
    }
    dx
}

pub(crate) fn conv2d_valid(input: &[f64], kernel: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; batch * g.out_cols()];
    for b in 0..batch {
        let img = &input[b * g.in_cols()..(b + 1) * g.in_cols()];
        for co in 0..g.out_channels {
            let krow = &kernel[co * g.kernel_cols()..(co + 1) * g.kernel_cols()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..g.in_channels {
                        let plane = &img[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
                        let kplane = &krow[ci * g.k_h * g.k_w..(ci + 1) * g.k_h * g.k_w];
                        for ky in 0..g.k_h {
                            let irow = &plane[(oy + ky) * g.in_w + ox..];
                            let kr = &kplane[ky * g.k_w..(ky + 1) * g.k_w];
                            for kx in 0..g.k_w {
                                acc += irow[kx] * kr[kx];
                            }
                        }
                    }
                    out[b * g.out_cols() + co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Gradients for both convolution operands.
pub(crate) fn conv2d_valid_backward(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    batch: usize,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut din = vec![0.0; batch * g.in_cols()];
    let mut dk = vec![0.0; g.out_channels * g.kernel_cols()];
    for b in 0..batch {
        let img = &input[b * g.in_cols()..(b + 1) * g.in_cols()];
        let dimg = &mut din[b * g.in_cols()..(b + 1) * g.in_cols()];
        for co in 0..g.out_channels {
            let krow = &kernel[co * g.kernel_cols()..(co + 1) * g.kernel_cols()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = dout[b * g.out_cols() + co * oh * ow + oy * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..g.in_channels {
                        let pbase = ci * g.in_h * g.in_w;
                        let kbase = ci * g.k_h * g.k_w;
                        for ky in 0..g.k_h {
                            for kx in 0..g.k_w {
                                let ii = pbase + (oy + ky) * g.in_w + (ox + kx);
                                let ki = kbase + ky * g.k_w + kx;
                                dimg[ii] += go * krow[ki];
                                dk[co * g.kernel_cols() + ki] += go * img[ii];
                            }
                        }
                    }
                }
            }
        }
    }
    (din, dk)
}

pub(crate) fn avgpool2x2(input: &[f64], batch: usize, g: &PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; batch * g.out_cols()];
    for b in 0..batch {
        let img = &input[b * g.in_cols()..(b + 1) * g.in_cols()];
        for ch in 0..g.channels {
            let plane = &img[ch * g.in_h * g.in_w..(ch + 1) * g.in_h * g.in_w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, x) = (2 * oy, 2 * ox);
                    let sum = plane[y * g.in_w + x]
                        + plane[y * g.in_w + x + 1]
                        + plane[(y + 1) * g.in_w + x]
                        + plane[(y + 1) * g.in_w + x + 1];
                    out[b * g.out_cols() + ch * oh * ow + oy * ow + ox] = sum * 0.25;
                }
            }
        }
    }
    out
}

pub(crate) fn avgpool2x2_backward(dout: &[f64], batch: usize, g: &PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut din = vec![0.0; batch * g.in_cols()];
    for b in 0..batch {
        let dimg = &mut din[b * g.in_cols()..(b + 1) * g.in_cols()];
        for ch in 0..g.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = dout[b * g.out_cols() + ch * oh * ow + oy * ow + ox] * 0.25;
                    let (y, x) = (2 * oy, 2 * ox);
                    let pbase = ch * g.in_h * g.in_w;
                    dimg[pbase + y * g.in_w + x] += go;
                    dimg[pbase + y * g.in_w + x + 1] += go;
                    dimg[pbase + (y + 1) * g.in_w + x] += go;
                    dimg[pbase + (y + 1) * g.in_w + x + 1] += go;
                }
            }
        }
    }
    din
}

/// Mean cross-entropy of integer labels against row logits, computed through
/// a max-shifted log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], r: usize, c: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..r {
        let row = &logits[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / r as f64
}

/// dLogits = (softmax(logits) - onehot(labels)) * upstream / rows.
pub(crate) fn cross_entropy_backward(
    logits: &[f64],
    r: usize,
    c: usize,
    labels: &[usize],
    upstream: f64,
) -> Vec<f64> {
    let mut dx = softmax_rows(logits, r, c);
    let scale = upstream / r as f64;
    for i in 0..r {
        dx[i * c + labels[i]] -= 1.0;
        for j in 0..c {
            dx[i * c + j] *= scale;
        }
    }
    dx
}
