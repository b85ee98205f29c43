//! Adapting-kernel family: per pixel-pair scalars computed from feature
//! differences over a sliding window, plus their derivatives with respect to
//! the features.
//!
//! One scalar is produced per (output pixel, window tap) pair and broadcast
//! over all value channels. Features read outside the grid are taken as the
//! zero vector; in a full filter those taps multiply zero-padded values, so
//! the convention is unobservable there, but it is part of this module's
//! contract because `kernel_eval` exposes the raw field.

use crate::error::{Error, Result};
use crate::tensor::{Tensor4, WindowSpec};

/// Fixed parametric form of the adapting kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// exp(-1/2 * ||f_i - f_j||^2); equals 1 exactly at zero difference.
    Gaussian,
    /// alpha + (||f_i - f_j||^2 + epsilon^2)^lambda; weights distinct pixels up.
    DetailPreserving { alpha: f64, epsilon: f64, lambda: f64 },
    /// Identically 1; reduces any pixel-adaptive filter to its fixed form.
    Constant,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian | KernelSpec::Constant => Ok(()),
            KernelSpec::DetailPreserving { alpha, epsilon, lambda } => {
                if epsilon <= 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "detail-preserving epsilon {epsilon} must be > 0"
                    )));
                }
                if alpha < 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "detail-preserving alpha {alpha} must be >= 0"
                    )));
                }
                if !lambda.is_finite() {
                    return Err(Error::InvalidParam("detail-preserving lambda must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Kernel value for a squared feature-difference norm.
    #[inline(always)]
    pub fn eval_sq(&self, dist_sq: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian => (-0.5 * dist_sq).exp(),
            KernelSpec::DetailPreserving { alpha, epsilon, lambda } => {
                alpha + (dist_sq + epsilon * epsilon).powf(lambda)
            }
            KernelSpec::Constant => 1.0,
        }
    }

    /// d(kernel)/d(dist_sq); the feature gradient follows by the chain rule
    /// d dist_sq / d f_i = 2 (f_i - f_j).
    #[inline(always)]
    pub fn grad_sq(&self, dist_sq: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian => -0.5 * (-0.5 * dist_sq).exp(),
            KernelSpec::DetailPreserving { epsilon, lambda, .. } => {
                lambda * (dist_sq + epsilon * epsilon).powf(lambda - 1.0)
            }
            KernelSpec::Constant => 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, KernelSpec::Constant)
    }
}

/// Kernel values for every (output pixel, tap) pair.
///
/// Layout: [n][oy][tap][ox] so that a fixed (row, tap) strip is contiguous in
/// ox, matching the access pattern of the filtering hot loops.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub n: usize,
    pub size: usize,
    pub oh: usize,
    pub ow: usize,
    pub data: Vec<f64>,
}

impl KernelField {
    pub fn zeros(n: usize, size: usize, oh: usize, ow: usize) -> Self {
        KernelField {
            n,
            size,
            oh,
            ow,
            data: vec![0.0; n * oh * size * size * ow],
        }
    }

    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, oy: usize, tap: usize, ox: usize) -> usize {
        ((n * self.oh + oy) * self.taps() + tap) * self.ow + ox
    }

    #[inline(always)]
    pub fn at(&self, n: usize, oy: usize, ox: usize, tap: usize) -> f64 {
        self.data[self.idx(n, oy, tap, ox)]
    }

    /// Contiguous (row, tap) strip over ox.
    #[inline(always)]
    pub fn strip(&self, n: usize, oy: usize, tap: usize) -> &[f64] {
        let start = self.idx(n, oy, tap, 0);
        &self.data[start..start + self.ow]
    }
}

/// Center position of the window for output index `o`: the tap at the window
/// radius.
#[inline(always)]
fn center_pos(win: &WindowSpec, o: usize) -> isize {
    win.tap_pos(o, win.radius())
}

/// Squared distance between the feature vectors at grid positions `a` and `b`,
/// reading the zero vector outside the grid.
#[inline(always)]
fn feature_dist_sq(
    f: &Tensor4,
    ni: usize,
    ay: isize,
    ax: isize,
    by: isize,
    bx: isize,
) -> f64 {
    let d = f.channels();
    let mut acc = 0.0;
    for ci in 0..d {
        let fa = f.at_padded(ni, ci, ay, ax);
        let fb = f.at_padded(ni, ci, by, bx);
        let diff = fa - fb;
        acc += diff * diff;
    }
    acc
}

/// Evaluate the kernel for every (output pixel, tap) pair of `win` over the
/// feature grid `f`.
pub fn kernel_eval(spec: &KernelSpec, f: &Tensor4, win: &WindowSpec) -> Result<KernelField> {
    spec.validate()?;
    let (n, _, h, w) = f.dims();
    let (oh, ow) = win.out_dims(h, w)?;
    let s = win.size;
    let mut field = KernelField::zeros(n, s, oh, ow);
    if spec.is_constant() {
        field.data.fill(1.0);
        return Ok(field);
    }
    for ni in 0..n {
        for oy in 0..oh {
            let cy = center_pos(win, oy);
            for ox in 0..ow {
                let cx = center_pos(win, ox);
                for ky in 0..s {
                    let jy = win.tap_pos(oy, ky);
                    for kx in 0..s {
                        let jx = win.tap_pos(ox, kx);
                        let d2 = feature_dist_sq(f, ni, cy, cx, jy, jx);
                        let tap = ky * s + kx;
                        let di = field.idx(ni, oy, tap, ox);
                        field.data[di] = spec.eval_sq(d2);
                    }
                }
            }
        }
    }
    Ok(field)
}

/// Chain an upstream gradient on the kernel field back to the features.
///
/// Both endpoints of each pair receive a contribution: d/df_i = g'(||df||^2) *
/// 2 (f_i - f_j) and the negation for f_j. Out-of-grid endpoints are constants
/// and receive nothing.
pub fn kernel_grad(
    spec: &KernelSpec,
    f: &Tensor4,
    win: &WindowSpec,
    upstream: &KernelField,
) -> Result<Tensor4> {
    spec.validate()?;
    let (n, d, h, w) = f.dims();
    let (oh, ow) = win.out_dims(h, w)?;
    if upstream.n != n || upstream.oh != oh || upstream.ow != ow || upstream.size != win.size {
        return Err(Error::ShapeMismatch(format!(
            "upstream field ({}, {}, {}, s={}) does not match window output ({n}, {oh}, {ow}, s={})",
            upstream.n, upstream.oh, upstream.ow, upstream.size, win.size
        )));
    }
    let mut grad = Tensor4::zeros(n, d, h, w);
    if spec.is_constant() {
        return Ok(grad);
    }
    let s = win.size;
    for ni in 0..n {
        for oy in 0..oh {
            let cy = center_pos(win, oy);
            for ox in 0..ow {
                let cx = center_pos(win, ox);
                let i_inside = cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w;
                for ky in 0..s {
                    let jy = win.tap_pos(oy, ky);
                    for kx in 0..s {
                        let jx = win.tap_pos(ox, kx);
                        let tap = ky * s + kx;
                        let up = upstream.at(ni, oy, ox, tap);
                        if up == 0.0 {
                            continue;
                        }
                        let d2 = feature_dist_sq(f, ni, cy, cx, jy, jx);
                        // coef multiplies (f_i - f_j) in d/df_i.
                        let coef = 2.0 * up * spec.grad_sq(d2);
                        if coef == 0.0 {
                            continue;
                        }
                        let j_inside =
                            jy >= 0 && jx >= 0 && (jy as usize) < h && (jx as usize) < w;
                        for ci in 0..d {
                            let fi = f.at_padded(ni, ci, cy, cx);
                            let fj = f.at_padded(ni, ci, jy, jx);
                            let diff = fi - fj;
                            if i_inside {
                                let gi = grad.idx(ni, ci, cy as usize, cx as usize);
                                grad.data[gi] += coef * diff;
                            }
                            if j_inside {
                                let gj = grad.idx(ni, ci, jy as usize, jx as usize);
                                grad.data[gj] -= coef * diff;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_features(n: usize, d: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = Rng::new(seed);
        Tensor4::from_vec(n, d, h, w, rng.normal_vec(n * d * h * w)).unwrap()
    }

    #[test]
    fn gaussian_zero_difference_is_one() {
        let f = Tensor4::full(1, 2, 3, 3, 1.25);
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Gaussian, &f, &win).unwrap();
        // Center tap compares a pixel with itself.
        let r = win.radius();
        for oy in 0..3 {
            for ox in 0..3 {
                assert_eq!(field.at(0, oy, ox, r * 3 + r), 1.0);
            }
        }
    }

    #[test]
    fn gaussian_unit_difference() {
        // f_i - f_j = (1, 0) -> exp(-0.5).
        let f = Tensor4::from_vec(1, 2, 1, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Gaussian, &f, &win).unwrap();
        // Output (0,0): center (0,0), tap (1,2) lands on pixel (0,1).
        let k = field.at(0, 0, 0, 3 + 2);
        assert!((k - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn detail_preserving_zero_difference() {
        let spec = KernelSpec::DetailPreserving { alpha: 0.0, epsilon: 1.0, lambda: 1.0 };
        assert_eq!(spec.eval_sq(0.0), 1.0);
    }

    #[test]
    fn constant_kernel_all_ones() {
        let f = random_features(1, 3, 4, 4, 1);
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Constant, &f, &win).unwrap();
        assert!(field.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn invalid_epsilon_rejected() {
        let spec = KernelSpec::DetailPreserving { alpha: 0.0, epsilon: 0.0, lambda: 1.0 };
        let f = random_features(1, 1, 3, 3, 2);
        let win = WindowSpec::unit();
        assert!(kernel_eval(&spec, &f, &win).is_err());
    }

    #[test]
    fn gaussian_symmetric_and_bounded() {
        let f = random_features(1, 3, 5, 5, 3);
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Gaussian, &f, &win).unwrap();
        for v in field.data.iter() {
            assert!(*v > 0.0 && *v <= 1.0);
        }
        // Symmetry: K(f_a, f_b) == K(f_b, f_a) for sampled interior pairs.
        // Pair (i at (2,2), j at (1,1)) appears as tap (0,0) of output (2,2)
        // and tap (2,2) of output (1,1).
        assert_eq!(field.at(0, 2, 2, 0), field.at(0, 1, 1, 8));
    }

    #[test]
    fn zero_scaled_features_make_gaussian_constant() {
        let f = random_features(1, 3, 4, 4, 4).scale(0.0);
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Gaussian, &f, &win).unwrap();
        assert!(field.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_kernel_zero_grad() {
        let f = random_features(1, 2, 4, 4, 5);
        let win = WindowSpec::new(3, 1, 1, 1).unwrap();
        let field = kernel_eval(&KernelSpec::Constant, &f, &win).unwrap();
        let grad = kernel_grad(&KernelSpec::Constant, &f, &win, &field).unwrap();
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_equal_features_zero_grad() {
        let f = Tensor4::full(1, 2, 4, 4, 0.5);
        let win = WindowSpec::new(3, 1, 0, 1).unwrap();
        let mut up = kernel_eval(&KernelSpec::Gaussian, &f, &win).unwrap();
        up.data.fill(1.0);
        let grad = kernel_grad(&KernelSpec::Gaussian, &f, &win, &up).unwrap();
        // All in-bounds differences vanish, so every contribution carries a
        // zero (f_i - f_j) factor.
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    // Finite-difference checks for all kernel variants live in
    // tests/gradients.rs next to the filter-level checks.
}
