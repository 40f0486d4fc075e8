//! Layer primitives with hand-derived backward passes, operating on raw
//! channel-major buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Same-padded stride-1 convolution, odd kernel size.
/// `input` is `[cin, h, w]`, `weight` is `[cout, cin, k, k]`, output `[cout, h, w]`.
pub fn conv2d_same(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let w_base = o * cin * k * k;
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..cin {
                    let in_base = i * h * w;
                    let wk = w_base + i * k * k;
                    for ky in 0..k {
                        let sy = y + ky;
                        if sy < pad || sy >= h + pad {
                            continue;
                        }
                        let sy = sy - pad;
                        for kx in 0..k {
                            let sx = x + kx;
                            if sx < pad || sx >= w + pad {
                                continue;
                            }
                            acc += input[in_base + sy * w + (sx - pad)] * weight[wk + ky * k + kx];
                        }
                    }
                }
                out[o * h * w + y * w + x] = acc;
            }
        }
    }
    out
}

/// Backward of `conv2d_same`; accumulates into `d_weight`/`d_bias` and
/// returns the input gradient.
pub fn conv2d_same_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let mut d_in = vec![0.0; cin * h * w];
    for o in 0..cout {
        let w_base = o * cin * k * k;
        for y in 0..h {
            for x in 0..w {
                let g = d_out[o * h * w + y * w + x];
                if g == 0.0 {
                    continue;
                }
                d_bias[o] += g;
                for i in 0..cin {
                    let in_base = i * h * w;
                    let wk = w_base + i * k * k;
                    for ky in 0..k {
                        let sy = y + ky;
                        if sy < pad || sy >= h + pad {
                            continue;
                        }
                        let sy = sy - pad;
                        for kx in 0..k {
                            let sx = x + kx;
                            if sx < pad || sx >= w + pad {
                                continue;
                            }
                            let src = in_base + sy * w + (sx - pad);
                            d_weight[wk + ky * k + kx] += g * input[src];
                            d_in[src] += g * weight[wk + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    d_in
}

pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2x2 stride-2 average pooling with partial edge windows averaged over the
/// cells that exist.
pub fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dy in 0..2 {
                    let y = oy * 2 + dy;
                    if y >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let x = ox * 2 + dx;
                        if x >= w {
                            continue;
                        }
                        acc += input[ch * h * w + y * w + x];
                        count += 1.0;
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = acc / count;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(d_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut d_in = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let y_count = if oy * 2 + 1 < h { 2.0 } else { 1.0 };
                let x_count = if ox * 2 + 1 < w { 2.0 } else { 1.0 };
                let g = d_out[ch * oh * ow + oy * ow + ox] / (y_count * x_count);
                for dy in 0..2 {
                    let y = oy * 2 + dy;
                    if y >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let x = ox * 2 + dx;
                        if x >= w {
                            continue;
                        }
                        d_in[ch * h * w + y * w + x] += g;
                    }
                }
            }
        }
    }
    d_in
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// `pre` is the pre-activation the forward pass saw.
pub fn relu_backward(d_out: &[f64], pre: &[f64]) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect()
}

/// Batch-norm statistics and normalized activations for a batch of maps
/// sharing per-channel statistics.
pub struct BatchNormCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Per map: normalized activations, `[c, hw]`.
    pub xhat: Vec<Vec<f64>>,
    pub count: usize,
}

/// Train-mode forward over `maps` (each `[c, hw]`), biased variance.
pub fn batch_norm_train(
    maps: &[&[f64]],
    gamma: &[f64],
    beta: &[f64],
    c: usize,
    hw: usize,
    eps: f64,
) -> (Vec<Vec<f64>>, BatchNormCache) {
    let count = maps.len() * hw;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for m in maps {
            for &v in &m[ch * hw..(ch + 1) * hw] {
                acc += v;
            }
        }
        mean[ch] = acc / count as f64;
        let mut sq = 0.0;
        for m in maps {
            for &v in &m[ch * hw..(ch + 1) * hw] {
                let d = v - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / count as f64;
    }
    let mut outs = Vec::with_capacity(maps.len());
    let mut xhats = Vec::with_capacity(maps.len());
    for m in maps {
        let mut out = vec![0.0; c * hw];
        let mut xhat = vec![0.0; c * hw];
        for ch in 0..c {
            let inv_std = 1.0 / fmath::sqrt(var[ch] + eps);
            for i in 0..hw {
                let xh = (m[ch * hw + i] - mean[ch]) * inv_std;
                xhat[ch * hw + i] = xh;
                out[ch * hw + i] = gamma[ch] * xh + beta[ch];
            }
        }
        outs.push(out);
        xhats.push(xhat);
    }
    (
        outs,
        BatchNormCache {
            mean,
            var,
            xhat: xhats,
            count,
        },
    )
}

/// Eval-mode forward using running statistics.
pub fn batch_norm_eval(
    map: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        let inv_std = 1.0 / fmath::sqrt(running_var[ch] + eps);
        for i in 0..hw {
            out[ch * hw + i] = gamma[ch] * (map[ch * hw + i] - running_mean[ch]) * inv_std + beta[ch];
        }
    }
    out
}

/// Backward through train-mode batch norm; `d_outs` aligned with the
/// forward batch. Accumulates into `d_gamma`/`d_beta` and returns per-map
/// input gradients.
pub fn batch_norm_backward(
    d_outs: &[&[f64]],
    cache: &BatchNormCache,
    gamma: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<Vec<f64>> {
    let m = cache.count as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for (d_out, xhat) in d_outs.iter().zip(&cache.xhat) {
        for ch in 0..c {
            for i in 0..hw {
                let dy = d_out[ch * hw + i];
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * xhat[ch * hw + i];
            }
        }
    }
    for ch in 0..c {
        d_beta[ch] += sum_dy[ch];
        d_gamma[ch] += sum_dy_xhat[ch];
    }
    let mut d_ins = Vec::with_capacity(d_outs.len());
    for (d_out, xhat) in d_outs.iter().zip(&cache.xhat) {
        let mut d_in = vec![0.0; c * hw];
        for ch in 0..c {
            let inv_std = 1.0 / fmath::sqrt(cache.var[ch] + eps);
            let scale = gamma[ch] * inv_std;
            for i in 0..hw {
                let dy = d_out[ch * hw + i];
                d_in[ch * hw + i] =
                    scale * (dy - sum_dy[ch] / m - xhat[ch * hw + i] * sum_dy_xhat[ch] / m);
            }
        }
        d_ins.push(d_in);
    }
    d_ins
}

/// Per-pixel L2 normalization over channels; `input` is `[c, hw]`.
/// Returns (output, per-pixel norms before the eps guard).
pub fn normalize_pixels(input: &[f64], c: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; c * hw];
    let mut norms = vec![0.0; hw];
    for i in 0..hw {
        let mut sq = 0.0;
        for ch in 0..c {
            let v = input[ch * hw + i];
            sq += v * v;
        }
        let norm = fmath::sqrt(sq);
        norms[i] = norm;
        let denom = if norm > eps { norm } else { eps };
        for ch in 0..c {
            out[ch * hw + i] = input[ch * hw + i] / denom;
        }
    }
    (out, norms)
}

pub fn normalize_pixels_backward(
    d_out: &[f64],
    output: &[f64],
    norms: &[f64],
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<f64> {
    let mut d_in = vec![0.0; c * hw];
    for i in 0..hw {
        if norms[i] > eps {
            let mut y_dot_dy = 0.0;
            for ch in 0..c {
                y_dot_dy += output[ch * hw + i] * d_out[ch * hw + i];
            }
            for ch in 0..c {
                d_in[ch * hw + i] =
                    (d_out[ch * hw + i] - output[ch * hw + i] * y_dot_dy) / norms[i];
            }
        } else {
            for ch in 0..c {
                d_in[ch * hw + i] = d_out[ch * hw + i] / eps;
            }
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with unit weight copies the input.
        let input = [1.0, 2.0, 3.0, 4.0];
        let out = conv2d_same(&input, &[1.0], &[0.0], 1, 1, 2, 2, 1);
        assert_eq!(out, input.to_vec());
    }

    #[test]
    fn conv_3x3_center_sum() {
        // All-ones 3x3 kernel on all-ones 3x3 input: center sees 9, edges less.
        let input = [1.0; 9];
        let weight = [1.0; 9];
        let out = conv2d_same(&input, &weight, &[0.0], 1, 1, 3, 3, 3);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn pool_partial_windows() {
        // 3x3 -> 2x2 with edge windows averaging the valid cells.
        let input: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let out = avg_pool2(&input, 1, 3, 3);
        assert_eq!(out.len(), 4);
        assert!((out[0] - (1.0 + 2.0 + 4.0 + 5.0) / 4.0).abs() < 1e-15);
        assert!((out[1] - (3.0 + 6.0) / 2.0).abs() < 1e-15);
        assert!((out[2] - (7.0 + 8.0) / 2.0).abs() < 1e-15);
        assert!((out[3] - 9.0).abs() < 1e-15);
    }

    #[test]
    fn bn_train_zero_mean_unit_var() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let (outs, cache) = batch_norm_train(&[&a, &b], &[1.0], &[0.0], 1, 4, 1e-5);
        let all: Vec<f64> = outs.iter().flatten().copied().collect();
        let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert_eq!(cache.count, 8);
    }

    #[test]
    fn normalize_unit_output() {
        let input = [3.0, 0.0, 4.0, 0.0]; // 2 channels, 2 pixels
        let (out, norms) = normalize_pixels(&input, 2, 2, 1e-12);
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[2] - 0.8).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[3], 0.0);
        assert!((norms[0] - 5.0).abs() < 1e-15);
        assert_eq!(norms[1], 0.0);
    }
}
