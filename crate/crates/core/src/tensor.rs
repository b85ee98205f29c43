//! Dense rank-4 arrays and the sliding-window geometry every filter builds on.
//!
//! Layout is fixed: batch x channel x height x width, row-major with width
//! fastest. All operations are pure; a produced tensor is never mutated by
//! later operations.

use crate::error::{Error, Result};
use crate::parallel;

/// Dense rank-4 array of f64 in (n, c, h, w) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "all dims must be >= 1");
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n < 1 || c < 1 || h < 1 || w < 1 {
            return Err(Error::ShapeMismatch(format!(
                "dims ({n}, {c}, {h}, {w}) must all be >= 1"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}*{}*{}*{}",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, value: f64) -> Self {
        let mut t = Self::zeros(n, c, h, w);
        t.data.fill(value);
        t
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    /// Read with zero padding outside [0,h) x [0,w).
    #[inline(always)]
    pub fn at_padded(&self, n: usize, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            self.at(n, c, y as usize, x as usize)
        }
    }

    /// Contiguous row (n, c, y, 0..w).
    #[inline(always)]
    pub fn row(&self, n: usize, c: usize, y: usize) -> &[f64] {
        let start = self.idx(n, c, y, 0);
        &self.data[start..start + self.w]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, factor: f64) -> Tensor4 {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= factor;
        }
        out
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Square sliding-window geometry: odd size, stride, zero padding, dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl WindowSpec {
    pub fn new(size: usize, stride: usize, padding: usize, dilation: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidWindow(format!("size {size} must be odd and >= 1")));
        }
        if stride == 0 {
            return Err(Error::InvalidWindow("stride must be >= 1".into()));
        }
        if dilation == 0 {
            return Err(Error::InvalidWindow("dilation must be >= 1".into()));
        }
        Ok(WindowSpec {
            size,
            stride,
            padding,
            dilation,
        })
    }

    /// Unit window: size 1, stride 1, no padding, dilation 1.
    pub fn unit() -> Self {
        WindowSpec {
            size: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Half width in taps.
    pub fn radius(&self) -> usize {
        (self.size - 1) / 2
    }

    /// Span of the dilated window in pixels.
    pub fn extent(&self) -> usize {
        self.dilation * (self.size - 1) + 1
    }

    /// Output length along one axis of input length `len`, or an error when
    /// the dilated window exceeds the padded input.
    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if self.extent() > padded {
            return Err(Error::InvalidWindow(format!(
                "window extent {} exceeds padded input extent {padded}",
                self.extent()
            )));
        }
        Ok((padded - self.extent()) / self.stride + 1)
    }

    /// Output grid (h', w') for an (h, w) input.
    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_len(h)?, self.out_len(w)?))
    }

    /// Input row/col of tap `k` for output index `o` (may be out of bounds).
    #[inline(always)]
    pub fn tap_pos(&self, o: usize, k: usize) -> isize {
        (o * self.stride) as isize - self.padding as isize + (k * self.dilation) as isize
    }
}

/// Integer pixel offset (rows, cols) between window positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridOffset {
    pub dy: isize,
    pub dx: isize,
}

impl GridOffset {
    pub fn new(dy: isize, dx: isize) -> Self {
        GridOffset { dy, dx }
    }
}

/// Materialized neighborhoods: for every strided output pixel, the s*s window
/// values per channel (zeros where the window leaves the input).
///
/// Layout: [n][c][tap][oy][ox], tap = ky * size + kx.
#[derive(Debug, Clone)]
pub struct NeighborhoodView {
    pub n: usize,
    pub c: usize,
    pub size: usize,
    pub oh: usize,
    pub ow: usize,
    pub data: Vec<f64>,
}

impl NeighborhoodView {
    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, tap: usize, oy: usize, ox: usize) -> usize {
        (((n * self.c + c) * self.taps() + tap) * self.oh + oy) * self.ow + ox
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, tap: usize, oy: usize, ox: usize) -> f64 {
        self.data[self.idx(n, c, tap, oy, ox)]
    }
}

/// Zero-pad the spatial dims by `p` on every side.
pub fn pad_zero(t: &Tensor4, p: usize) -> Tensor4 {
    if p == 0 {
        return t.clone();
    }
    let (n, c, h, w) = t.dims();
    let mut out = Tensor4::zeros(n, c, h + 2 * p, w + 2 * p);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src = t.idx(ni, ci, y, 0);
                let dst = out.idx(ni, ci, y + p, p);
                out.data[dst..dst + w].copy_from_slice(&t.data[src..src + w]);
            }
        }
    }
    out
}

/// Crop `p` pixels from every spatial side (inverse of `pad_zero`).
pub fn crop(t: &Tensor4, p: usize) -> Result<Tensor4> {
    if p == 0 {
        return Ok(t.clone());
    }
    let (n, c, h, w) = t.dims();
    if h <= 2 * p || w <= 2 * p {
        return Err(Error::ShapeMismatch(format!(
            "cannot crop {p} from ({h}, {w})"
        )));
    }
    let (nh, nw) = (h - 2 * p, w - 2 * p);
    let mut out = Tensor4::zeros(n, c, nh, nw);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..nh {
                let src = t.idx(ni, ci, y + p, p);
                let dst = out.idx(ni, ci, y, 0);
                out.data[dst..dst + nw].copy_from_slice(&t.data[src..src + nw]);
            }
        }
    }
    Ok(out)
}

/// Materialize every window of `t` under `win` (zeros outside the input).
pub fn unfold(t: &Tensor4, win: &WindowSpec) -> Result<NeighborhoodView> {
    let (n, c, h, w) = t.dims();
    let (oh, ow) = win.out_dims(h, w)?;
    let s = win.size;
    let mut view = NeighborhoodView {
        n,
        c,
        size: s,
        oh,
        ow,
        data: vec![0.0; n * c * s * s * oh * ow],
    };
    for ni in 0..n {
        for ci in 0..c {
            for ky in 0..s {
                for kx in 0..s {
                    let tap = ky * s + kx;
                    for oy in 0..oh {
                        let iy = win.tap_pos(oy, ky);
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = view.idx(ni, ci, tap, oy, 0);
                        for ox in 0..ow {
                            let ix = win.tap_pos(ox, kx);
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            view.data[base + ox] = t.at(ni, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
        }
    }
    Ok(view)
}

/// Adjoint of `unfold`: accumulate every window value back into its source
/// pixel; contributions that fell in the padding are discarded.
pub fn scatter_add(view: &NeighborhoodView, win: &WindowSpec, h: usize, w: usize) -> Result<Tensor4> {
    let (oh, ow) = win.out_dims(h, w)?;
    if oh != view.oh || ow != view.ow || win.size != view.size {
        return Err(Error::ShapeMismatch(format!(
            "view grid ({}, {}, s={}) incompatible with window output ({oh}, {ow}, s={})",
            view.oh, view.ow, view.size, win.size
        )));
    }
    let s = win.size;
    let mut out = Tensor4::zeros(view.n, view.c, h, w);
    for ni in 0..view.n {
        for ci in 0..view.c {
            for ky in 0..s {
                for kx in 0..s {
                    let tap = ky * s + kx;
                    for oy in 0..oh {
                        let iy = win.tap_pos(oy, ky);
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = view.idx(ni, ci, tap, oy, 0);
                        for ox in 0..ow {
                            let ix = win.tap_pos(ox, kx);
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let di = out.idx(ni, ci, iy as usize, ix as usize);
                            out.data[di] += view.data[src + ox];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Insert `m - 1` zeros between neighboring pixels along both spatial axes.
/// Output is ((h-1)*m+1, (w-1)*m+1) with t[y][x] at (m*y, m*x).
pub fn zero_insert(t: &Tensor4, m: usize) -> Tensor4 {
    assert!(m >= 1, "stride factor must be >= 1");
    if m == 1 {
        return t.clone();
    }
    let (n, c, h, w) = t.dims();
    let (zh, zw) = ((h - 1) * m + 1, (w - 1) * m + 1);
    let mut out = Tensor4::zeros(n, c, zh, zw);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let di = out.idx(ni, ci, y * m, x * m);
                    out.data[di] = t.at(ni, ci, y, x);
                }
            }
        }
    }
    out
}

/// Bilinear resize to (oh, ow), align-corners = false convention with edge
/// clamping. Linear in the input; `resize_bilinear_adjoint` is its transpose.
pub fn resize_bilinear(t: &Tensor4, oh: usize, ow: usize) -> Tensor4 {
    let (n, c, h, w) = t.dims();
    assert!(oh >= 1 && ow >= 1);
    let ys = sample_coords(h, oh);
    let xs = sample_coords(w, ow);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let plane = oh * ow;
    let out_c = c;
    parallel::for_each_chunk(&mut out.data, plane, |task, chunk| {
        let ni = task / out_c;
        let ci = task % out_c;
        for oy in 0..oh {
            let (y0, y1, fy) = ys[oy];
            for ox in 0..ow {
                let (x0, x1, fx) = xs[ox];
                let v00 = t.at(ni, ci, y0, x0);
                let v01 = t.at(ni, ci, y0, x1);
                let v10 = t.at(ni, ci, y1, x0);
                let v11 = t.at(ni, ci, y1, x1);
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                chunk[oy * ow + ox] = top + fy * (bot - top);
            }
        }
    });
    out
}

/// Transpose of `resize_bilinear`: scatter an upstream gradient on the (oh, ow)
/// grid back to an (ih, iw) grid.
pub fn resize_bilinear_adjoint(upstream: &Tensor4, ih: usize, iw: usize) -> Tensor4 {
    let (n, c, oh, ow) = upstream.dims();
    let ys = sample_coords(ih, oh);
    let xs = sample_coords(iw, ow);
    let mut out = Tensor4::zeros(n, c, ih, iw);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1, fy) = ys[oy];
                for ox in 0..ow {
                    let (x0, x1, fx) = xs[ox];
                    let g = upstream.at(ni, ci, oy, ox);
                    let i00 = out.idx(ni, ci, y0, x0);
                    let i01 = out.idx(ni, ci, y0, x1);
                    let i10 = out.idx(ni, ci, y1, x0);
                    let i11 = out.idx(ni, ci, y1, x1);
                    out.data[i00] += g * (1.0 - fy) * (1.0 - fx);
                    out.data[i01] += g * (1.0 - fy) * fx;
                    out.data[i10] += g * fy * (1.0 - fx);
                    out.data[i11] += g * fy * fx;
                }
            }
        }
    }
    out
}

/// Per output index: (lower source index, upper source index, fraction).
fn sample_coords(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let pos = (o as f64 + 0.5) * scale - 0.5;
            let pos = pos.clamp(0.0, (in_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}
