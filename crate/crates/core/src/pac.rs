//! Pixel-adaptive convolution: a spatially shared filter bank whose taps are
//! rescaled per pixel pair by an adapting kernel over guiding features, plus
//! the transposed (upsampling) variant, analytic gradients, and the classical
//! filters the operation reduces to (standard convolution, bilateral filter,
//! average and detail-preserving pooling).

use crate::error::{Error, Result};
use crate::kernels::{kernel_eval, kernel_grad, KernelField, KernelSpec};
use crate::parallel;
use crate::tensor::{zero_insert, Tensor4, WindowSpec};

/// Learnable state of one pixel-adaptive filter: spatially shared weights
/// (c_out, c_in, s, s), optional per-output-channel bias, window geometry and
/// the adapting-kernel form.
#[derive(Debug, Clone)]
pub struct PacParams {
    pub weights: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub win: WindowSpec,
    pub kernel: KernelSpec,
}

impl PacParams {
    pub fn new(
        weights: Tensor4,
        bias: Option<Vec<f64>>,
        win: WindowSpec,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let (c_out, _, kh, kw) = weights.dims();
        if kh != win.size || kw != win.size {
            return Err(Error::ShapeMismatch(format!(
                "weight spatial dims ({kh}, {kw}) != window size {}",
                win.size
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::ShapeMismatch(format!(
                    "bias length {} != output channels {c_out}",
                    b.len()
                )));
            }
        }
        kernel.validate()?;
        Ok(PacParams {
            weights,
            bias,
            win,
            kernel,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.batch()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.channels()
    }
}

/// Gradients of a scalar loss with respect to every input of the filter.
#[derive(Debug, Clone)]
pub struct PacGradients {
    pub d_input: Tensor4,
    pub d_weights: Tensor4,
    pub d_bias: Option<Vec<f64>>,
    pub d_features: Tensor4,
}

/// Multiplier applied to adapting features before kernel evaluation. At 0 the
/// Gaussian kernel collapses to 1 and the filter behaves as its plain
/// convolution counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale(pub f64);

impl FeatureScale {
    pub fn apply(&self, features: &Tensor4) -> Tensor4 {
        features.scale(self.0)
    }
}

fn check_grids(v: &Tensor4, f: &Tensor4, params: &PacParams) -> Result<()> {
    let (vn, vc, vh, vw) = v.dims();
    let (fn_, _, fh, fw) = f.dims();
    if vn != fn_ || vh != fh || vw != fw {
        return Err(Error::ShapeMismatch(format!(
            "value grid ({vn}, {vh}, {vw}) != feature grid ({fn_}, {fh}, {fw})"
        )));
    }
    if vc != params.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "input channels {vc} != weight input channels {}",
            params.in_channels()
        )));
    }
    Ok(())
}

/// Weights rearranged to [tap][c_in][c_out] so the output-channel loop reads a
/// contiguous column.
fn weight_columns(weights: &Tensor4) -> Vec<f64> {
    let (c_out, c_in, s, _) = weights.dims();
    let taps = s * s;
    let mut out = vec![0.0; c_out * c_in * taps];
    for o in 0..c_out {
        for ci in 0..c_in {
            for ky in 0..s {
                for kx in 0..s {
                    let tap = ky * s + kx;
                    out[(tap * c_in + ci) * c_out + o] = weights.at(o, ci, ky, kx);
                }
            }
        }
    }
    out
}

/// Dot product with four independent accumulators so the reduction pipelines;
/// the summation order is fixed (lane-major, remainder last).
#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (pa, pb) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Inclusive ox range for which tap `k` stays inside a length-`len` axis.
#[inline]
fn valid_out_range(win: &WindowSpec, k: usize, len: usize, out_len: usize) -> (usize, usize) {
    let off = k as isize * win.dilation as isize - win.padding as isize;
    // need 0 <= o*stride + off <= len-1
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(win.stride)
    } else {
        0
    };
    let hi_raw = len as isize - 1 - off;
    if hi_raw < 0 || lo >= out_len {
        return (1, 0); // empty
    }
    let hi = ((hi_raw as usize) / win.stride).min(out_len - 1);
    (lo, hi)
}

/// Forward pass: out_i = sum_j K(f_i, f_j) * W[tap(i,j)] * v_j + b, over the
/// strided/dilated window, with zero padding outside the grid.
pub fn pac_forward(v: &Tensor4, features: &Tensor4, params: &PacParams) -> Result<Tensor4> {
    let field = kernel_eval(&params.kernel, features, &params.win)?;
    pac_forward_with_field(v, &field, params)
}

/// Forward pass with a precomputed kernel field (shared by the CRF stack,
/// which reuses one field across mean-field steps).
pub fn pac_forward_with_field(
    v: &Tensor4,
    field: &KernelField,
    params: &PacParams,
) -> Result<Tensor4> {
    let (n, c_in, h, w) = v.dims();
    if c_in != params.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "input channels {c_in} != weight input channels {}",
            params.in_channels()
        )));
    }
    let win = &params.win;
    let (oh, ow) = win.out_dims(h, w)?;
    if field.n != n || field.oh != oh || field.ow != ow || field.size != win.size {
        return Err(Error::ShapeMismatch(
            "kernel field does not match value grid and window".into(),
        ));
    }
    let c_out = params.out_channels();
    let s = win.size;
    let weights = &params.weights;

    // Scratch in (n, oy, o, ox) layout so each (n, oy) task owns one
    // contiguous chunk; transposed into (n, o, oy, ox) at the end.
    let wcols = weight_columns(weights);
    let mut scratch = vec![0.0; n * oh * c_out * ow];
    parallel::for_each_chunk(&mut scratch, c_out * ow, |task, acc| {
        let ni = task / oh;
        let oy = task % oh;
        let mut tmp = vec![0.0; ow];
        for ky in 0..s {
            let iy = win.tap_pos(oy, ky);
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let iy = iy as usize;
            for kx in 0..s {
                let (lo, hi) = valid_out_range(win, kx, w, ow);
                if lo > hi {
                    continue;
                }
                let len = hi - lo + 1;
                let tap = ky * s + kx;
                let kappa = &field.strip(ni, oy, tap)[lo..lo + len];
                for ci in 0..c_in {
                    let vrow = v.row(ni, ci, iy);
                    let dst = &mut tmp[..len];
                    if win.stride == 1 {
                        let shift = kx as isize * win.dilation as isize - win.padding as isize;
                        let ix0 = (lo as isize + shift) as usize;
                        let src = &vrow[ix0..ix0 + len];
                        for ((t, k), x) in dst.iter_mut().zip(kappa).zip(src) {
                            *t = k * x;
                        }
                    } else {
                        for (i, (t, k)) in dst.iter_mut().zip(kappa).enumerate() {
                            let ix = win.tap_pos(lo + i, kx) as usize;
                            *t = k * vrow[ix];
                        }
                    }
                    let wcol = &wcols[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                    for (o, &wv) in wcol.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let arow = &mut acc[o * ow + lo..o * ow + lo + len];
                        for (a, t) in arow.iter_mut().zip(dst.iter()) {
                            *a += wv * t;
                        }
                    }
                }
            }
        }
        if let Some(b) = &params.bias {
            for o in 0..c_out {
                let arow = &mut acc[o * ow..(o + 1) * ow];
                for val in arow.iter_mut() {
                    *val += b[o];
                }
            }
        }
    });

    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    for ni in 0..n {
        for oy in 0..oh {
            for o in 0..c_out {
                let src = ((ni * oh + oy) * c_out + o) * ow;
                let dst = out.idx(ni, o, oy, 0);
                out.data[dst..dst + ow].copy_from_slice(&scratch[src..src + ow]);
            }
        }
    }
    Ok(out)
}

/// Backward pass for `pac_forward`: gradients with respect to the values,
/// weights, bias and adapting features.
pub fn pac_backward(
    v: &Tensor4,
    features: &Tensor4,
    params: &PacParams,
    upstream: &Tensor4,
) -> Result<PacGradients> {
    check_grids(v, features, params)?;
    let field = kernel_eval(&params.kernel, features, &params.win)?;
    let (d_input, d_weights, d_bias, d_field) =
        pac_backward_core(v, &field, params, upstream)?;
    let d_features = match d_field {
        Some(df) => kernel_grad(&params.kernel, features, &params.win, &df)?,
        None => Tensor4::zeros(
            features.batch(),
            features.channels(),
            features.height(),
            features.width(),
        ),
    };
    Ok(PacGradients {
        d_input,
        d_weights,
        d_bias,
        d_features,
    })
}

/// Backward pass with a precomputed kernel field; the feature chain uses the
/// filter's own window (aligned geometry).
pub fn pac_backward_with_field(
    v: &Tensor4,
    features: &Tensor4,
    field: &KernelField,
    params: &PacParams,
    upstream: &Tensor4,
) -> Result<PacGradients> {
    let (d_input, d_weights, d_bias, d_field) = pac_backward_core(v, field, params, upstream)?;
    let d_features = match d_field {
        Some(df) => kernel_grad(&params.kernel, features, &params.win, &df)?,
        None => Tensor4::zeros(
            features.batch(),
            features.channels(),
            features.height(),
            features.width(),
        ),
    };
    Ok(PacGradients {
        d_input,
        d_weights,
        d_bias,
        d_features,
    })
}

/// d_input, d_weights, d_bias, and the raw kernel-field gradient (None for
/// constant kernels).
type CoreGradients = (Tensor4, Tensor4, Option<Vec<f64>>, Option<KernelField>);

/// Gradients for values, weights and bias plus the raw kernel-field gradient.
/// The caller chains the field gradient to its own feature grid, which may
/// differ from the value grid (transposed case).
fn pac_backward_core(
    v: &Tensor4,
    field: &KernelField,
    params: &PacParams,
    upstream: &Tensor4,
) -> Result<CoreGradients> {
    let (n, c_in, h, w) = v.dims();
    let win = &params.win;
    let (oh, ow) = win.out_dims(h, w)?;
    let c_out = params.out_channels();
    if upstream.dims() != (n, c_out, oh, ow) {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} != forward output ({n}, {c_out}, {oh}, {ow})",
            upstream.dims()
        )));
    }
    let s = win.size;
    let weights = &params.weights;

    // d_bias: plain sums of the upstream per output channel.
    let d_bias = params.bias.as_ref().map(|_| {
        let mut db = vec![0.0; c_out];
        for ni in 0..n {
            for o in 0..c_out {
                for oy in 0..oh {
                    db[o] += upstream.row(ni, o, oy).iter().sum::<f64>();
                }
            }
        }
        db
    });

    let wcols = weight_columns(weights);

    // d_input, gathered per input row (fixed summation order per element).
    let mut d_input = Tensor4::zeros(n, c_in, h, w);
    parallel::for_each_chunk(&mut d_input.data, w, |task, drow| {
        let ni = task / (c_in * h);
        let ci = (task / h) % c_in;
        let iy = task % h;
        let mut tmp = vec![0.0; ow];
        for ky in 0..s {
            // oy * stride = iy + pad - ky*dil must be a valid multiple.
            let num = iy as isize + win.padding as isize - (ky * win.dilation) as isize;
            if num < 0 || !(num as usize).is_multiple_of(win.stride) {
                continue;
            }
            let oy = num as usize / win.stride;
            if oy >= oh {
                continue;
            }
            for kx in 0..s {
                let tap = ky * s + kx;
                let (lo, hi) = valid_out_range(win, kx, w, ow);
                if lo > hi {
                    continue;
                }
                let len = hi - lo + 1;
                // Sum the weighted upstream rows once per tap, then fold in
                // the kernel strip while scattering to input columns.
                let acc = &mut tmp[..len];
                acc.fill(0.0);
                let wcol = &wcols[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                for (o, &wv) in wcol.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let urow = &upstream.row(ni, o, oy)[lo..lo + len];
                    for (a, u) in acc.iter_mut().zip(urow) {
                        *a += wv * u;
                    }
                }
                let kappa = &field.strip(ni, oy, tap)[lo..lo + len];
                if win.stride == 1 {
                    let shift = kx as isize * win.dilation as isize - win.padding as isize;
                    let ix0 = (lo as isize + shift) as usize;
                    let dst = &mut drow[ix0..ix0 + len];
                    for ((d, k), a) in dst.iter_mut().zip(kappa).zip(acc.iter()) {
                        *d += k * a;
                    }
                } else {
                    for i in 0..len {
                        let ix = win.tap_pos(lo + i, kx) as usize;
                        drow[ix] += kappa[i] * acc[i];
                    }
                }
            }
        }
    });

    // d_weights: partials per (batch item, fixed block of output rows) written
    // to disjoint slices of one flat buffer, then folded serially in task
    // order. The block size is a constant so the reduction order never
    // depends on the worker count.
    const ROW_BLOCK: usize = 8;
    let blocks = oh.div_ceil(ROW_BLOCK);
    let wlen = c_out * c_in * s * s;
    let mut partials = vec![0.0; n * blocks * wlen];
    parallel::for_each_chunk(&mut partials, wlen, |task, part| {
        let ni = task / blocks;
        let block = task % blocks;
        let mut tmp = vec![0.0; ow];
        for oy in block * ROW_BLOCK..((block + 1) * ROW_BLOCK).min(oh) {
            for ky in 0..s {
                let iy = win.tap_pos(oy, ky);
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let iy = iy as usize;
                for kx in 0..s {
                    let (lo, hi) = valid_out_range(win, kx, w, ow);
                    if lo > hi {
                        continue;
                    }
                    let len = hi - lo + 1;
                    let tap = ky * s + kx;
                    let kappa = &field.strip(ni, oy, tap)[lo..lo + len];
                    for ci in 0..c_in {
                        let vrow = v.row(ni, ci, iy);
                        let dst = &mut tmp[..len];
                        if win.stride == 1 {
                            let shift =
                                kx as isize * win.dilation as isize - win.padding as isize;
                            let ix0 = (lo as isize + shift) as usize;
                            let src = &vrow[ix0..ix0 + len];
                            for ((t, k), x) in dst.iter_mut().zip(kappa).zip(src) {
                                *t = k * x;
                            }
                        } else {
                            for (i, (t, k)) in dst.iter_mut().zip(kappa).enumerate() {
                                let ix = win.tap_pos(lo + i, kx) as usize;
                                *t = k * vrow[ix];
                            }
                        }
                        for o in 0..c_out {
                            let urow = &upstream.row(ni, o, oy)[lo..lo + len];
                            part[((o * c_in + ci) * s + ky) * s + kx] +=
                                dot_unrolled(urow, dst);
                        }
                    }
                }
            }
        }
    });
    let mut d_weights = Tensor4::zeros(c_out, c_in, s, s);
    for part in partials.chunks(wlen) {
        for (dst, src) in d_weights.data.iter_mut().zip(part.iter()) {
            *dst += src;
        }
    }

    // Kernel-field gradient, skipped entirely for constant kernels (their
    // field has zero derivative).
    let d_field = if params.kernel.is_constant() {
        None
    } else {
        let mut d_field = KernelField::zeros(n, s, oh, ow);
        parallel::for_each_chunk(&mut d_field.data, s * s * ow, |task, chunk| {
            let ni = task / oh;
            let oy = task % oh;
            let mut tmp = vec![0.0; ow];
            for ky in 0..s {
                let iy = win.tap_pos(oy, ky);
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let iy = iy as usize;
                for kx in 0..s {
                    let (lo, hi) = valid_out_range(win, kx, w, ow);
                    if lo > hi {
                        continue;
                    }
                    let len = hi - lo + 1;
                    let tap = ky * s + kx;
                    let strip = &mut chunk[tap * ow + lo..tap * ow + lo + len];
                    for ci in 0..c_in {
                        // Weighted upstream for this input channel.
                        let acc = &mut tmp[..len];
                        acc.fill(0.0);
                        let wcol =
                            &wcols[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                        for (o, &wv) in wcol.iter().enumerate() {
                            if wv == 0.0 {
                                continue;
                            }
                            let urow = &upstream.row(ni, o, oy)[lo..lo + len];
                            for (a, u) in acc.iter_mut().zip(urow) {
                                *a += wv * u;
                            }
                        }
                        let vrow = v.row(ni, ci, iy);
                        if win.stride == 1 {
                            let shift =
                                kx as isize * win.dilation as isize - win.padding as isize;
                            let ix0 = (lo as isize + shift) as usize;
                            let src = &vrow[ix0..ix0 + len];
                            for ((d, a), x) in strip.iter_mut().zip(acc.iter()).zip(src) {
                                *d += a * x;
                            }
                        } else {
                            for i in 0..len {
                                let ix = win.tap_pos(lo + i, kx) as usize;
                                strip[i] += acc[i] * vrow[ix];
                            }
                        }
                    }
                }
            }
        });
        Some(d_field)
    };

    Ok((d_input, d_weights, d_bias, d_field))
}

/// Geometry of the transposed (fractionally strided) variant.
fn pact_geometry(params: &PacParams, m: usize) -> Result<WindowSpec> {
    if m == 0 {
        return Err(Error::InvalidParam("upsample factor must be >= 1".into()));
    }
    let win = &params.win;
    let full = win.dilation * (win.size - 1);
    if win.padding > full {
        return Err(Error::InvalidWindow(format!(
            "transposed padding {} exceeds dilated span {full}",
            win.padding
        )));
    }
    WindowSpec::new(win.size, 1, full - win.padding, win.dilation)
}

/// Zero-inserted input extended with `output_padding` extra rows/cols.
fn pact_input(v: &Tensor4, m: usize, output_padding: usize) -> Tensor4 {
    let z = zero_insert(v, m);
    if output_padding == 0 {
        return z;
    }
    let (n, c, zh, zw) = z.dims();
    let mut out = Tensor4::zeros(n, c, zh + output_padding, zw + output_padding);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..zh {
                let src = z.idx(ni, ci, y, 0);
                let dst = out.idx(ni, ci, y, 0);
                out.data[dst..dst + zw].copy_from_slice(&z.data[src..src + zw]);
            }
        }
    }
    out
}

/// Output spatial extent of the transposed filter along one axis.
pub fn pact_out_len(params: &PacParams, len: usize, m: usize, output_padding: usize) -> usize {
    let win = &params.win;
    (len - 1) * m + 1 + output_padding + win.dilation * (win.size - 1) - 2 * win.padding
}

/// Window used to evaluate the adapting kernel on the fine grid: same size
/// and dilation, stride 1, padding that keeps the output grid equal to the
/// feature grid (each output pixel is its own window center).
fn fine_kernel_window(params: &PacParams) -> Result<WindowSpec> {
    let win = &params.win;
    WindowSpec::new(win.size, 1, win.radius() * win.dilation, win.dilation)
}

/// Transposed pixel-adaptive convolution: fractional striding by `m` realized
/// as zero insertion followed by a stride-1 pass. Adapting features live on
/// the fine output grid, and the kernel compares feature pairs on that grid.
pub fn pact_forward(
    v: &Tensor4,
    features_fine: &Tensor4,
    params: &PacParams,
    m: usize,
    output_padding: usize,
) -> Result<Tensor4> {
    let (z, field, eff_params) = pact_setup(v, features_fine, params, m, output_padding)?;
    pac_forward_with_field(&z, &field, &eff_params)
}

/// Backward pass of `pact_forward`; the value gradient is read back off the
/// zero-inserted grid at the original sample positions, and the feature
/// gradient is chained through the fine-grid kernel window.
pub fn pact_backward(
    v: &Tensor4,
    features_fine: &Tensor4,
    params: &PacParams,
    m: usize,
    output_padding: usize,
    upstream: &Tensor4,
) -> Result<PacGradients> {
    let (z, field, eff_params) = pact_setup(v, features_fine, params, m, output_padding)?;
    let (dz, d_weights, d_bias, d_field) =
        pac_backward_core(&z, &field, &eff_params, upstream)?;
    let d_features = match d_field {
        Some(df) => {
            let fine_win = fine_kernel_window(params)?;
            kernel_grad(&params.kernel, features_fine, &fine_win, &df)?
        }
        None => Tensor4::zeros(
            features_fine.batch(),
            features_fine.channels(),
            features_fine.height(),
            features_fine.width(),
        ),
    };
    let (n, c, h, w) = v.dims();
    let mut d_input = Tensor4::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let gi = dz.idx(ni, ci, y * m, x * m);
                    let di = d_input.idx(ni, ci, y, x);
                    d_input.data[di] = dz.data[gi];
                }
            }
        }
    }
    Ok(PacGradients {
        d_input,
        d_weights,
        d_bias,
        d_features,
    })
}

/// Shared setup for the transposed passes: zero-inserted input, fine-grid
/// kernel field, and effective stride-1 parameters.
fn pact_setup(
    v: &Tensor4,
    features_fine: &Tensor4,
    params: &PacParams,
    m: usize,
    output_padding: usize,
) -> Result<(Tensor4, KernelField, PacParams)> {
    let eff = pact_geometry(params, m)?;
    let z = pact_input(v, m, output_padding);
    let (n, _, zh, zw) = z.dims();
    let (oh, ow) = eff.out_dims(zh, zw)?;
    let (fn_, _, fh, fw) = features_fine.dims();
    if fn_ != n || fh != oh || fw != ow {
        return Err(Error::ShapeMismatch(format!(
            "fine feature grid ({fn_}, {fh}, {fw}) != transposed output grid ({n}, {oh}, {ow})"
        )));
    }
    let fine_win = fine_kernel_window(params)?;
    let field = kernel_eval(&params.kernel, features_fine, &fine_win)?;
    debug_assert_eq!((field.oh, field.ow), (oh, ow));
    let eff_params = PacParams {
        weights: params.weights.clone(),
        bias: params.bias.clone(),
        win: eff,
        kernel: params.kernel,
    };
    Ok((z, field, eff_params))
}

/// Standard spatial convolution (correlation indexing). Kept as an independent
/// code path from `pac_forward` so the constant-kernel reduction is a real
/// cross check; the loop structure and accumulation order are identical, which
/// makes the reduction exact to the bit.
pub fn conv_forward(
    v: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    win: &WindowSpec,
) -> Result<Tensor4> {
    let (n, c_in, h, w) = v.dims();
    let (c_out, wc, kh, kw) = weights.dims();
    if wc != c_in {
        return Err(Error::ShapeMismatch(format!(
            "input channels {c_in} != weight input channels {wc}"
        )));
    }
    if kh != win.size || kw != win.size {
        return Err(Error::ShapeMismatch(format!(
            "weight spatial dims ({kh}, {kw}) != window size {}",
            win.size
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} != output channels {c_out}",
                b.len()
            )));
        }
    }
    let (oh, ow) = win.out_dims(h, w)?;
    let s = win.size;

    let wcols = weight_columns(weights);
    let mut scratch = vec![0.0; n * oh * c_out * ow];
    parallel::for_each_chunk(&mut scratch, c_out * ow, |task, acc| {
        let ni = task / oh;
        let oy = task % oh;
        let mut tmp = vec![0.0; ow];
        for ky in 0..s {
            let iy = win.tap_pos(oy, ky);
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let iy = iy as usize;
            for kx in 0..s {
                let (lo, hi) = valid_out_range(win, kx, w, ow);
                if lo > hi {
                    continue;
                }
                let len = hi - lo + 1;
                let tap = ky * s + kx;
                for ci in 0..c_in {
                    let vrow = v.row(ni, ci, iy);
                    let dst = &mut tmp[..len];
                    if win.stride == 1 {
                        let shift = kx as isize * win.dilation as isize - win.padding as isize;
                        let ix0 = (lo as isize + shift) as usize;
                        dst.copy_from_slice(&vrow[ix0..ix0 + len]);
                    } else {
                        for (i, t) in dst.iter_mut().enumerate() {
                            let ix = win.tap_pos(lo + i, kx) as usize;
                            *t = vrow[ix];
                        }
                    }
                    let wcol = &wcols[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                    for (o, &wv) in wcol.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let arow = &mut acc[o * ow + lo..o * ow + lo + len];
                        for (a, t) in arow.iter_mut().zip(dst.iter()) {
                            *a += wv * t;
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            for o in 0..c_out {
                let arow = &mut acc[o * ow..(o + 1) * ow];
                for val in arow.iter_mut() {
                    *val += b[o];
                }
            }
        }
    });

    let mut out = Tensor4::zeros(n, c_out, oh, ow);
    for ni in 0..n {
        for oy in 0..oh {
            for o in 0..c_out {
                let src = ((ni * oh + oy) * c_out + o) * ow;
                let dst = out.idx(ni, o, oy, 0);
                out.data[dst..dst + ow].copy_from_slice(&scratch[src..src + ow]);
            }
        }
    }
    Ok(out)
}

/// Convolution gradients (values, weights, bias) without the kernel machinery.
pub(crate) fn conv_backward(
    v: &Tensor4,
    weights: &Tensor4,
    has_bias: bool,
    win: &WindowSpec,
    upstream: &Tensor4,
) -> Result<(Tensor4, Tensor4, Option<Vec<f64>>)> {
    let (n, _, h, w) = v.dims();
    let (oh, ow) = win.out_dims(h, w)?;
    let ones = KernelField {
        n,
        size: win.size,
        oh,
        ow,
        data: vec![1.0; n * oh * win.size * win.size * ow],
    };
    let params = PacParams {
        weights: weights.clone(),
        bias: if has_bias {
            Some(vec![0.0; weights.batch()])
        } else {
            None
        },
        win: *win,
        kernel: KernelSpec::Constant,
    };
    let (d_input, d_weights, d_bias, _) = pac_backward_core(v, &ones, &params, upstream)?;
    Ok((d_input, d_weights, d_bias))
}

/// Classical bilateral filter: 2D Gaussian spatial weights modulated by a
/// Gaussian kernel on intensity differences, each channel filtered with the
/// same weights, optionally normalized by the total tap weight.
pub fn bilateral_filter(
    img: &Tensor4,
    spatial_sigma: f64,
    feature_sigma: f64,
    size: usize,
    normalized: bool,
) -> Result<Tensor4> {
    if spatial_sigma <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "spatial sigma {spatial_sigma} must be > 0"
        )));
    }
    if feature_sigma <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "feature sigma {feature_sigma} must be > 0"
        )));
    }
    let win = WindowSpec::new(size, 1, (size - 1) / 2, 1)?;
    let r = win.radius() as isize;
    let mut spatial = Tensor4::zeros(1, 1, size, size);
    for ky in 0..size {
        for kx in 0..size {
            let dy = ky as isize - r;
            let dx = kx as isize - r;
            let d2 = (dy * dy + dx * dx) as f64;
            spatial.set(0, 0, ky, kx, (-0.5 * d2 / (spatial_sigma * spatial_sigma)).exp());
        }
    }
    let params = PacParams::new(spatial, None, win, KernelSpec::Gaussian)?;
    let features = img.scale(1.0 / feature_sigma);
    let field = kernel_eval(&params.kernel, &features, &params.win)?;

    let (n, c, h, w) = img.dims();
    let mut out = Tensor4::zeros(n, c, h, w);
    let denom = if normalized {
        let ones = Tensor4::full(n, 1, h, w, 1.0);
        Some(pac_forward_with_field(&ones, &field, &params)?)
    } else {
        None
    };
    for ci in 0..c {
        let chan = channel_slice(img, ci);
        let num = pac_forward_with_field(&chan, &field, &params)?;
        for ni in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let val = match &denom {
                        Some(d) => num.at(ni, 0, y, x) / d.at(ni, 0, y, x),
                        None => num.at(ni, 0, y, x),
                    };
                    out.set(ni, ci, y, x, val);
                }
            }
        }
    }
    Ok(out)
}

/// Mean over each window: constant kernel with uniform weights 1/s^2.
pub fn avg_pool(v: &Tensor4, size: usize, stride: usize) -> Result<Tensor4> {
    let win = WindowSpec::new(size, stride, 0, 1)?;
    let (n, c, h, w) = v.dims();
    win.out_dims(h, w)?;
    let uniform = Tensor4::full(1, 1, size, size, 1.0 / (size * size) as f64);
    let params = PacParams::new(uniform, None, win, KernelSpec::Constant)?;
    let features = Tensor4::zeros(n, 1, h, w);
    let field = kernel_eval(&params.kernel, &features, &params.win)?;
    let mut out: Option<Tensor4> = None;
    for ci in 0..c {
        let chan = channel_slice(v, ci);
        let pooled = pac_forward_with_field(&chan, &field, &params)?;
        out = Some(match out {
            None => {
                let (oh, ow) = (pooled.height(), pooled.width());
                let mut t = Tensor4::zeros(n, c, oh, ow);
                copy_channel(&mut t, &pooled, ci);
                t
            }
            Some(mut t) => {
                copy_channel(&mut t, &pooled, ci);
                t
            }
        });
    }
    Ok(out.unwrap())
}

/// Detail-preserving pooling: uniform weights under a detail-preserving
/// kernel, normalized by the kernel sum over the window (a weighted mean that
/// emphasizes pixels distinct from the window center).
pub fn dpp_pool(
    v: &Tensor4,
    features: &Tensor4,
    size: usize,
    stride: usize,
    alpha: f64,
    epsilon: f64,
    lambda: f64,
) -> Result<Tensor4> {
    let win = WindowSpec::new(size, stride, 0, 1)?;
    let (n, c, h, w) = v.dims();
    let (fn_, _, fh, fw) = features.dims();
    if fn_ != n || fh != h || fw != w {
        return Err(Error::ShapeMismatch(
            "pooling feature grid must match value grid".into(),
        ));
    }
    let kernel = KernelSpec::DetailPreserving { alpha, epsilon, lambda };
    kernel.validate()?;
    let uniform = Tensor4::full(1, 1, size, size, 1.0 / (size * size) as f64);
    let params = PacParams::new(uniform, None, win, kernel)?;
    let field = kernel_eval(&kernel, features, &win)?;
    let ones = Tensor4::full(n, 1, h, w, 1.0);
    let denom = pac_forward_with_field(&ones, &field, &params)?;
    let (oh, ow) = (denom.height(), denom.width());
    let mut out = Tensor4::zeros(n, c, oh, ow);
    for ci in 0..c {
        let chan = channel_slice(v, ci);
        let num = pac_forward_with_field(&chan, &field, &params)?;
        for ni in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    out.set(ni, ci, y, x, num.at(ni, 0, y, x) / denom.at(ni, 0, y, x));
                }
            }
        }
    }
    Ok(out)
}

/// Reuse trained convolution weights inside a pixel-adaptive filter. With the
/// returned (small) feature scale the swapped layer initially behaves like the
/// original convolution; scale 0 reproduces it exactly.
pub fn hot_swap_init(
    conv_weights: &Tensor4,
    conv_bias: Option<&[f64]>,
    win: WindowSpec,
    feature_scale: f64,
) -> Result<(PacParams, FeatureScale)> {
    let params = PacParams::new(
        conv_weights.clone(),
        conv_bias.map(|b| b.to_vec()),
        win,
        KernelSpec::Gaussian,
    )?;
    Ok((params, FeatureScale(feature_scale)))
}

/// Upper bound on |pac - conv| for a hot-swapped layer whose raw features have
/// per-pixel norm <= `feature_norm`: the kernel deviates from 1 by at most
/// 1 - exp(-1/2 (2 * scale * feature_norm)^2), and each output sums |W| * |v|
/// over taps.
pub fn hot_swap_bound(
    weights: &Tensor4,
    input_inf_norm: f64,
    feature_norm: f64,
    scale: f64,
) -> f64 {
    let (c_out, c_in, kh, kw) = weights.dims();
    let mut max_l1 = 0.0f64;
    for o in 0..c_out {
        let mut l1 = 0.0;
        for ci in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    l1 += weights.at(o, ci, ky, kx).abs();
                }
            }
        }
        max_l1 = max_l1.max(l1);
    }
    let max_diff = 2.0 * scale * feature_norm;
    (1.0 - (-0.5 * max_diff * max_diff).exp()) * max_l1 * input_inf_norm
}

/// Single-channel view (copy) of channel `c`.
pub fn channel_slice(t: &Tensor4, c: usize) -> Tensor4 {
    let (n, _, h, w) = t.dims();
    let mut out = Tensor4::zeros(n, 1, h, w);
    for ni in 0..n {
        for y in 0..h {
            let src = t.idx(ni, c, y, 0);
            let dst = out.idx(ni, 0, y, 0);
            out.data[dst..dst + w].copy_from_slice(&t.data[src..src + w]);
        }
    }
    out
}

fn copy_channel(dst: &mut Tensor4, single: &Tensor4, c: usize) {
    let (n, _, h, w) = single.dims();
    for ni in 0..n {
        for y in 0..h {
            let src = single.idx(ni, 0, y, 0);
            let d = dst.idx(ni, c, y, 0);
            dst.data[d..d + w].copy_from_slice(&single.data[src..src + w]);
        }
    }
}
