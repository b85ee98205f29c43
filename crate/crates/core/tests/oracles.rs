//! Cross checks of the filtering paths against independent brute-force
//! oracles: the triple-loop filter sum, an offset-table position filter, a
//! textbook scatter transposed convolution, a textbook bilateral loop, and
//! direct pooling loops.

#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use pacgrid_core::kernels::KernelSpec;
use pacgrid_core::pac::{
    avg_pool, bilateral_filter, conv_forward, dpp_pool, pac_forward, pact_forward, pact_out_len,
    PacParams,
};
use pacgrid_core::rng::Rng;
use pacgrid_core::tensor::{Tensor4, WindowSpec};

fn random_params(
    c_out: usize,
    c_in: usize,
    win: WindowSpec,
    kernel: KernelSpec,
    rng: &mut Rng,
) -> PacParams {
    let s = win.size;
    let weights =
        Tensor4::from_vec(c_out, c_in, s, s, rng.normal_vec(c_out * c_in * s * s)).unwrap();
    let bias = Some(rng.normal_vec(c_out));
    PacParams::new(weights, bias, win, kernel).unwrap()
}

#[test]
fn pac_matches_triple_loop_over_geometry_grid() {
    let mut rng = Rng::new(100);
    for &s in &[1usize, 3, 5] {
        for &stride in &[1usize, 2] {
            for &dil in &[1usize, 2] {
                let win = match WindowSpec::new(s, stride, dil * (s - 1) / 2, dil) {
                    Ok(w) => w,
                    Err(_) => continue,
                };
                if win.out_dims(6, 6).is_err() {
                    continue;
                }
                let params = random_params(3, 2, win, KernelSpec::Gaussian, &mut rng);
                let v = random_tensor(1, 2, 6, 6, &mut rng);
                let f = random_tensor(1, 2, 6, 6, &mut rng);
                let got = pac_forward(&v, &f, &params).unwrap();
                let want = naive_pac_forward(
                    &v,
                    &f,
                    &params.weights,
                    params.bias.as_deref(),
                    &win,
                    &params.kernel,
                );
                assert!(
                    got.max_abs_diff(&want) <= 1e-12,
                    "s={s} stride={stride} dil={dil}: {}",
                    got.max_abs_diff(&want)
                );
            }
        }
    }
}

#[test]
fn pac_matches_triple_loop_detail_preserving() {
    let mut rng = Rng::new(101);
    let win = WindowSpec::new(3, 1, 1, 1).unwrap();
    let kernel = KernelSpec::DetailPreserving {
        alpha: 0.3,
        epsilon: 0.5,
        lambda: 0.8,
    };
    let params = random_params(2, 3, win, kernel, &mut rng);
    let v = random_tensor(2, 3, 6, 5, &mut rng);
    let f = random_tensor(2, 2, 6, 5, &mut rng);
    let got = pac_forward(&v, &f, &params).unwrap();
    let want = naive_pac_forward(&v, &f, &params.weights, params.bias.as_deref(), &win, &kernel);
    assert!(got.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn reduction_chain_constant_kernel_conv_position_filter() {
    // Three routes to the same numbers: the adaptive filter under a constant
    // kernel, the dedicated convolution, and the offset-table position filter.
    let mut rng = Rng::new(102);
    for &dil in &[1usize, 2] {
        let win = WindowSpec::new(3, 1, dil, dil).unwrap();
        let params = random_params(4, 4, win, KernelSpec::Constant, &mut rng);
        let v = random_tensor(1, 4, 16, 16, &mut rng);
        let f = random_tensor(1, 2, 16, 16, &mut rng);
        let adaptive = pac_forward(&v, &f, &params).unwrap();
        let plain = conv_forward(&v, &params.weights, params.bias.as_deref(), &win).unwrap();
        let table = position_table(&params.weights, dil);
        let positional = naive_position_filter(&v, &table, 4, params.bias.as_deref());
        assert!(adaptive.max_abs_diff(&plain) <= 1e-12);
        assert!(adaptive.max_abs_diff(&positional) <= 1e-12);
    }
}

#[test]
fn constant_features_reduce_gaussian_to_conv() {
    let mut rng = Rng::new(103);
    let win = WindowSpec::new(5, 1, 2, 1).unwrap();
    let params = random_params(3, 2, win, KernelSpec::Gaussian, &mut rng);
    let v = random_tensor(1, 2, 8, 8, &mut rng);
    let f = Tensor4::full(1, 3, 8, 8, 0.75);
    let adaptive = pac_forward(&v, &f, &params).unwrap();
    let plain = conv_forward(&v, &params.weights, params.bias.as_deref(), &win).unwrap();
    // Interior pixels see only zero feature differences; border windows
    // compare against zero-padded features, but those taps multiply padded
    // (zero) values, so the reduction is exact everywhere.
    assert_eq!(adaptive.max_abs_diff(&plain), 0.0);
}

#[test]
fn transposed_constant_kernel_matches_scatter_oracle() {
    let mut rng = Rng::new(104);
    for &(m, pad, op) in &[(2usize, 2usize, 1usize), (2, 1, 1), (3, 2, 2), (1, 2, 0)] {
        let win = WindowSpec::new(5, 1, pad, 1).unwrap();
        let params = random_params(3, 2, win, KernelSpec::Constant, &mut rng);
        let v = random_tensor(1, 2, 4, 4, &mut rng);
        let oh = pact_out_len(&params, 4, m, op);
        let f = random_tensor(1, 2, oh, oh, &mut rng);
        let got = pact_forward(&v, &f, &params, m, op).unwrap();
        let want = naive_transposed_conv(
            &v,
            &scatter_weights(&params.weights),
            params.bias.as_deref(),
            m,
            pad,
            1,
            op,
        );
        assert!(
            got.max_abs_diff(&want) <= 1e-12,
            "m={m} pad={pad} op={op}: {}",
            got.max_abs_diff(&want)
        );
    }
}

#[test]
fn transposed_equals_filter_of_zero_insert() {
    // Aligned geometry: the transposed pass is exactly the stride-1 filter
    // applied to the zero-inserted input.
    let mut rng = Rng::new(105);
    let win = WindowSpec::new(5, 1, 2, 1).unwrap();
    let params = random_params(2, 3, win, KernelSpec::Gaussian, &mut rng);
    let v = random_tensor(1, 3, 4, 4, &mut rng);
    for m in [1usize, 2, 3] {
        let oh = pact_out_len(&params, 4, m, 0);
        let f = random_tensor(1, 2, oh, oh, &mut rng);
        let got = pact_forward(&v, &f, &params, m, 0).unwrap();
        let z = pacgrid_core::tensor::zero_insert(&v, m);
        let want = pac_forward(&z, &f, &params).unwrap();
        assert_eq!(got.max_abs_diff(&want), 0.0, "m={m}");
    }
}

#[test]
fn bilateral_matches_textbook_loop() {
    let mut rng = Rng::new(106);
    // Random 8x8 image in [0, 1].
    let mut img = Tensor4::zeros(1, 3, 8, 8);
    for v in img.data.iter_mut() {
        *v = rng.next_f64();
    }
    for &(ss, fs, size) in &[(1.0f64, 0.2f64, 5usize), (2.5, 0.5, 7), (0.8, 0.1, 3)] {
        let got = bilateral_filter(&img, ss, fs, size, true).unwrap();
        let want = naive_bilateral(&img, ss, fs, size, true);
        assert!(
            got.max_abs_diff(&want) <= 1e-12,
            "ss={ss} fs={fs} size={size}: {}",
            got.max_abs_diff(&want)
        );
    }
}

#[test]
fn bilateral_constant_features_is_gaussian_blur() {
    // Huge feature sigma: intensity differences stop mattering and the filter
    // becomes a normalized Gaussian blur.
    let mut rng = Rng::new(107);
    let mut img = Tensor4::zeros(1, 1, 8, 8);
    for v in img.data.iter_mut() {
        *v = rng.next_f64();
    }
    let got = bilateral_filter(&img, 1.2, 1e9, 5, true).unwrap();
    // Direct normalized Gaussian blur.
    let r = 2isize;
    let mut want = Tensor4::zeros(1, 1, 8, 8);
    for y in 0..8isize {
        for x in 0..8isize {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (jy, jx) = (y + dy, x + dx);
                    if jy < 0 || jx < 0 || jy >= 8 || jx >= 8 {
                        continue;
                    }
                    let wgt = (-0.5 * (dy * dy + dx * dx) as f64 / (1.2f64 * 1.2)).exp();
                    acc += wgt * img.at(0, 0, jy as usize, jx as usize);
                    wsum += wgt;
                }
            }
            want.set(0, 0, y as usize, x as usize, acc / wsum);
        }
    }
    assert!(got.max_abs_diff(&want) <= 1e-9);
}

#[test]
fn mean_pool_matches_direct_loop() {
    let mut rng = Rng::new(108);
    let v = random_tensor(2, 3, 9, 12, &mut rng);
    for &(s, stride) in &[(3usize, 3usize), (3, 1), (3, 2)] {
        let got = avg_pool(&v, s, stride).unwrap();
        let want = naive_mean_pool(&v, s, stride);
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}

#[test]
fn dpp_pool_matches_weighted_mean_loop() {
    let mut rng = Rng::new(109);
    let v = random_tensor(1, 2, 9, 9, &mut rng);
    let f = random_tensor(1, 3, 9, 9, &mut rng);
    for &(alpha, eps, lambda) in &[(0.0f64, 1.0f64, 1.0f64), (0.5, 0.3, 0.5), (1.0, 0.2, 2.0)] {
        let got = dpp_pool(&v, &f, 3, 3, alpha, eps, lambda).unwrap();
        let want = naive_dpp_pool(&v, &f, 3, 3, alpha, eps, lambda);
        assert!(
            got.max_abs_diff(&want) <= 1e-12,
            "alpha={alpha} eps={eps} lambda={lambda}"
        );
    }
}

#[test]
fn pac_equals_mean_pool_with_uniform_weights() {
    // Constant kernel and 1/s^2 weights: the filter is mean pooling.
    let mut rng = Rng::new(110);
    let v = random_tensor(1, 4, 16, 16, &mut rng);
    let got = avg_pool(&v, 4 + 1, 1).unwrap(); // 5x5 window, stride 1
    let want = naive_mean_pool(&v, 5, 1);
    assert!(got.max_abs_diff(&want) <= 1e-12);
}
