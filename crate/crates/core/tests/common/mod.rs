//! Independent brute-force oracles used by the integration suites. These are
//! deliberately written as literal nested loops over the defining sums, with
//! no code shared with the library's filtering paths.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use pacgrid_core::kernels::KernelSpec;
use pacgrid_core::rng::Rng;
use pacgrid_core::tensor::{Tensor4, WindowSpec};

pub fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, rng.normal_vec(n * c * h * w)).unwrap()
}

/// Scalar kernel value for a pair of (zero-padded) feature vectors.
fn kernel_value(spec: &KernelSpec, f: &Tensor4, ni: usize, iy: isize, ix: isize, jy: isize, jx: isize) -> f64 {
    let d = f.channels();
    let mut dist = 0.0;
    for ci in 0..d {
        let a = f.at_padded(ni, ci, iy, ix);
        let b = f.at_padded(ni, ci, jy, jx);
        dist += (a - b) * (a - b);
    }
    match *spec {
        KernelSpec::Gaussian => (-0.5 * dist).exp(),
        KernelSpec::DetailPreserving { alpha, epsilon, lambda } => {
            alpha + (dist + epsilon * epsilon).powf(lambda)
        }
        KernelSpec::Constant => 1.0,
    }
}

/// Triple-nested-loop evaluation of the pixel-adaptive filter: for each output
/// pixel, each window tap, each channel, accumulate K(f_i, f_j) * W * v_j.
pub fn naive_pac_forward(
    v: &Tensor4,
    f: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    win: &WindowSpec,
    kernel: &KernelSpec,
) -> Tensor4 {
    let (n, c_in, h, w) = v.dims();
    let (c_out, _, s, _) = weights.dims();
    let (oh, ow) = win.out_dims(h, w).unwrap();
    let r = win.radius();
    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    for ni in 0..n {
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let iy = win.tap_pos(oy, r);
                    let ix = win.tap_pos(ox, r);
                    let mut acc = bias.map(|b| b[o]).unwrap_or(0.0);
                    for ky in 0..s {
                        for kx in 0..s {
                            let jy = win.tap_pos(oy, ky);
                            let jx = win.tap_pos(ox, kx);
                            if jy < 0 || jx < 0 || jy >= h as isize || jx >= w as isize {
                                continue;
                            }
                            let k = kernel_value(kernel, f, ni, iy, ix, jy, jx);
                            for ci in 0..c_in {
                                acc += k
                                    * weights.at(o, ci, ky, kx)
                                    * v.at(ni, ci, jy as usize, jx as usize);
                            }
                        }
                    }
                    out.set(ni, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Plain spatial convolution as its own direct loop.
pub fn naive_conv_forward(
    v: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    win: &WindowSpec,
) -> Tensor4 {
    naive_pac_forward(
        v,
        &Tensor4::zeros(v.batch(), 1, v.height(), v.width()),
        weights,
        bias,
        win,
        &KernelSpec::Constant,
    )
}

/// High-dimensional filtering restricted to position features: the filter is a
/// table over feature-space offsets W(f_i - f_j), enumerated from the table's
/// key set rather than window taps. With f = pixel positions this reduces to
/// table lookups at p_i - p_j.
pub fn naive_position_filter(
    v: &Tensor4,
    table: &[(isize, isize, Vec<f64>)], // (dy, dx, weight[c_out * c_in])
    c_out: usize,
    bias: Option<&[f64]>,
) -> Tensor4 {
    let (n, c_in, h, w) = v.dims();
    let mut out = Tensor4::zeros(n, c_out, h, w);
    for ni in 0..n {
        for o in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.map(|b| b[o]).unwrap_or(0.0);
                    for (dy, dx, wmat) in table {
                        // Offset key is p_i - p_j, so j = i - (dy, dx).
                        let jy = y as isize - dy;
                        let jx = x as isize - dx;
                        if jy < 0 || jx < 0 || jy >= h as isize || jx >= w as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            acc += wmat[o * c_in + ci] * v.at(ni, ci, jy as usize, jx as usize);
                        }
                    }
                    out.set(ni, o, y, x, acc);
                }
            }
        }
    }
    out
}

/// Offset table realizing the same filter as correlation weights under
/// stride 1 and padding radius*dilation: tap (ky, kx) sits at
/// p_i - p_j = ((r - ky) * dil, (r - kx) * dil).
pub fn position_table(weights: &Tensor4, dilation: usize) -> Vec<(isize, isize, Vec<f64>)> {
    let (c_out, c_in, s, _) = weights.dims();
    let r = (s - 1) as isize / 2;
    let mut table = Vec::new();
    for ky in 0..s {
        for kx in 0..s {
            let dy = (r - ky as isize) * dilation as isize;
            let dx = (r - kx as isize) * dilation as isize;
            let mut wmat = vec![0.0; c_out * c_in];
            for o in 0..c_out {
                for ci in 0..c_in {
                    wmat[o * c_in + ci] = weights.at(o, ci, ky, kx);
                }
            }
            table.push((dy, dx, wmat));
        }
    }
    table
}

/// Textbook transposed convolution as a scatter: every coarse pixel adds its
/// weighted stencil into the fine grid at stride-m offsets. Weights are in
/// scatter orientation (c_in, c_out, s, s).
pub fn naive_transposed_conv(
    v: &Tensor4,
    weights_scatter: &Tensor4,
    bias: Option<&[f64]>,
    m: usize,
    padding: usize,
    dilation: usize,
    output_padding: usize,
) -> Tensor4 {
    let (n, c_in, h, w) = v.dims();
    let (_, c_out, s, _) = weights_scatter.dims();
    let oh = (h - 1) * m + dilation * (s - 1) + 1 + output_padding - 2 * padding;
    let ow = (w - 1) * m + dilation * (s - 1) + 1 + output_padding - 2 * padding;
    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    for ni in 0..n {
        for uy in 0..h {
            for ux in 0..w {
                for ky in 0..s {
                    let fy = (uy * m + ky * dilation) as isize - padding as isize;
                    if fy < 0 || fy >= oh as isize {
                        continue;
                    }
                    for kx in 0..s {
                        let fx = (ux * m + kx * dilation) as isize - padding as isize;
                        if fx < 0 || fx >= ow as isize {
                            continue;
                        }
                        for o in 0..c_out {
                            for ci in 0..c_in {
                                let add = weights_scatter.at(ci, o, ky, kx) * v.at(ni, ci, uy, ux);
                                let idx = out.idx(ni, o, fy as usize, fx as usize);
                                out.data[idx] += add;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        for ni in 0..n {
            for o in 0..c_out {
                for y in 0..oh {
                    for x in 0..ow {
                        let idx = out.idx(ni, o, y, x);
                        out.data[idx] += b[o];
                    }
                }
            }
        }
    }
    out
}

/// Scatter-orientation weights equivalent to correlation weights `w`:
/// channel-swapped and spatially flipped.
pub fn scatter_weights(weights: &Tensor4) -> Tensor4 {
    let (c_out, c_in, s, _) = weights.dims();
    let mut out = Tensor4::zeros(c_in, c_out, s, s);
    for o in 0..c_out {
        for ci in 0..c_in {
            for ky in 0..s {
                for kx in 0..s {
                    out.set(ci, o, ky, kx, weights.at(o, ci, s - 1 - ky, s - 1 - kx));
                }
            }
        }
    }
    out
}

/// Textbook bilateral filter: per-channel weighted mean with spatial Gaussian
/// times intensity Gaussian weights over a square window.
pub fn naive_bilateral(
    img: &Tensor4,
    spatial_sigma: f64,
    feature_sigma: f64,
    size: usize,
    normalized: bool,
) -> Tensor4 {
    let (n, c, h, w) = img.dims();
    let r = (size - 1) as isize / 2;
    let mut out = Tensor4::zeros(n, c, h, w);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut weight_sum = 0.0;
                let mut acc = vec![0.0; c];
                for dy in -r..=r {
                    for dx in -r..=r {
                        let jy = y as isize + dy;
                        let jx = x as isize + dx;
                        if jy < 0 || jx < 0 || jy >= h as isize || jx >= w as isize {
                            continue;
                        }
                        let spatial = (-0.5 * (dy * dy + dx * dx) as f64
                            / (spatial_sigma * spatial_sigma))
                            .exp();
                        let mut dint = 0.0;
                        for ci in 0..c {
                            let d = img.at(ni, ci, y, x) - img.at(ni, ci, jy as usize, jx as usize);
                            dint += d * d;
                        }
                        let range = (-0.5 * dint / (feature_sigma * feature_sigma)).exp();
                        let wgt = spatial * range;
                        weight_sum += wgt;
                        for ci in 0..c {
                            acc[ci] += wgt * img.at(ni, ci, jy as usize, jx as usize);
                        }
                    }
                }
                for ci in 0..c {
                    let val = if normalized { acc[ci] / weight_sum } else { acc[ci] };
                    out.set(ni, ci, y, x, val);
                }
            }
        }
    }
    out
}

/// Plain mean pooling loop.
pub fn naive_mean_pool(v: &Tensor4, size: usize, stride: usize) -> Tensor4 {
    let (n, c, h, w) = v.dims();
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..size {
                        for kx in 0..size {
                            acc += v.at(ni, ci, oy * stride + ky, ox * stride + kx);
                        }
                    }
                    out.set(ni, ci, oy, ox, acc / (size * size) as f64);
                }
            }
        }
    }
    out
}

/// Weighted mean over each window with detail-preserving weights relative to
/// the window center.
#[allow(clippy::too_many_arguments)]
pub fn naive_dpp_pool(
    v: &Tensor4,
    f: &Tensor4,
    size: usize,
    stride: usize,
    alpha: f64,
    epsilon: f64,
    lambda: f64,
) -> Tensor4 {
    let (n, c, h, w) = v.dims();
    let d = f.channels();
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let r = size / 2;
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = oy * stride + r;
                let cx = ox * stride + r;
                let mut wsum = 0.0;
                let mut acc = vec![0.0; c];
                for ky in 0..size {
                    for kx in 0..size {
                        let jy = oy * stride + ky;
                        let jx = ox * stride + kx;
                        let mut dist = 0.0;
                        for di in 0..d {
                            let diff = f.at(ni, di, cy, cx) - f.at(ni, di, jy, jx);
                            dist += diff * diff;
                        }
                        let k = alpha + (dist + epsilon * epsilon).powf(lambda);
                        wsum += k;
                        for ci in 0..c {
                            acc[ci] += k * v.at(ni, ci, jy, jx);
                        }
                    }
                }
                for ci in 0..c {
                    out.set(ni, ci, oy, ox, acc[ci] / wsum);
                }
            }
        }
    }
    out
}

/// Literal nested-loop mean-field update: for each pixel the pairwise energy
/// sums K^k(f_i, f_j) * compat[l', l, tap] * q_j(l') over branches, window
/// taps (offsets p_j - p_i) and source labels, then normalizes
/// exp(-unary - energy) over labels.
#[derive(Clone)]
pub struct NaiveBranch {
    pub size: usize,
    pub dilation: usize,
    /// (l', l, s, s) storage over p_j - p_i offsets.
    pub compat: Tensor4,
    pub kernel: KernelSpec,
    pub feature_scale: Vec<f64>,
}

pub fn naive_mf_step(
    q: &Tensor4,
    unary: &Tensor4,
    guide: &Tensor4,
    branches: &[NaiveBranch],
) -> Tensor4 {
    let (n, l, h, w) = q.dims();
    let gc = guide.channels();
    let mut out = Tensor4::zeros(n, l, h, w);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut energy = vec![0.0; l];
                for br in branches {
                    let r = (br.size - 1) as isize / 2;
                    for ky in 0..br.size {
                        for kx in 0..br.size {
                            let jy = y as isize + (ky as isize - r) * br.dilation as isize;
                            let jx = x as isize + (kx as isize - r) * br.dilation as isize;
                            if jy < 0 || jx < 0 || jy >= h as isize || jx >= w as isize {
                                continue;
                            }
                            let mut dist = 0.0;
                            for ci in 0..gc {
                                let a = guide.at(ni, ci, y, x) * br.feature_scale[ci];
                                let b = guide.at(ni, ci, jy as usize, jx as usize)
                                    * br.feature_scale[ci];
                                dist += (a - b) * (a - b);
                            }
                            let k = match br.kernel {
                                KernelSpec::Gaussian => (-0.5 * dist).exp(),
                                KernelSpec::Constant => 1.0,
                                KernelSpec::DetailPreserving { alpha, epsilon, lambda } => {
                                    alpha + (dist + epsilon * epsilon).powf(lambda)
                                }
                            };
                            for lp in 0..l {
                                let qj = q.at(ni, lp, jy as usize, jx as usize);
                                for li in 0..l {
                                    energy[li] += k * br.compat.at(lp, li, ky, kx) * qj;
                                }
                            }
                        }
                    }
                }
                let mut max = f64::NEG_INFINITY;
                let mut exps = vec![0.0; l];
                for li in 0..l {
                    exps[li] = -unary.at(ni, li, y, x) - energy[li];
                    max = max.max(exps[li]);
                }
                let mut z = 0.0;
                for e in exps.iter_mut() {
                    *e = (*e - max).exp();
                    z += *e;
                }
                for li in 0..l {
                    out.set(ni, li, y, x, exps[li] / z);
                }
            }
        }
    }
    out
}
