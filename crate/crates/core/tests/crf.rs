//! CRF inference cross checks: the literal update-rule loop, the dense fully
//! connected oracle, finite differences through unrolled steps, and a small
//! learning run.

#![allow(clippy::needless_range_loop)]

mod common;

use common::{naive_mf_step, random_tensor, NaiveBranch};
use pacgrid_core::crf::{
    argmax_labels, crf_backward, default_branch, dense_fullcrf_mf, full_crf_as_branches,
    mf_infer, mf_infer_cached, mf_step, CrfSpec, FullCrfParams, PairwiseBranch,
};
use pacgrid_core::gradcheck::{compare, FD_RTOL_NET, FD_STEP};
use pacgrid_core::kernels::KernelSpec;
use pacgrid_core::rng::Rng;
use pacgrid_core::tensor::Tensor4;

fn softmax_neg(unary: &Tensor4) -> Tensor4 {
    let (n, l, h, w) = unary.dims();
    let mut q = Tensor4::zeros(n, l, h, w);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut max = f64::NEG_INFINITY;
                for li in 0..l {
                    max = max.max(-unary.at(ni, li, y, x));
                }
                let mut z = 0.0;
                let mut e = vec![0.0; l];
                for li in 0..l {
                    e[li] = (-unary.at(ni, li, y, x) - max).exp();
                    z += e[li];
                }
                for li in 0..l {
                    q.set(ni, li, y, x, e[li] / z);
                }
            }
        }
    }
    q
}

fn random_branch(labels: usize, size: usize, dilation: usize, seed: u64) -> PairwiseBranch {
    let mut rng = Rng::new(seed);
    // Deliberately asymmetric compatibility so any tap-orientation mistake in
    // the filter route shows up against the literal loop.
    let compat = Tensor4::from_vec(
        labels,
        labels,
        size,
        size,
        rng.normal_vec(labels * labels * size * size),
    )
    .unwrap()
    .scale(0.3);
    PairwiseBranch::new(
        size,
        dilation,
        compat,
        KernelSpec::Gaussian,
        vec![1.5, 0.8, 2.0],
    )
    .unwrap()
}

fn branch_as_naive(b: &PairwiseBranch) -> NaiveBranch {
    NaiveBranch {
        size: b.window().size,
        dilation: b.window().dilation,
        compat: b.compat().clone(),
        kernel: b.kernel,
        feature_scale: b.feature_scale.clone(),
    }
}

#[test]
fn mf_step_matches_literal_loop() {
    for &labels in &[2usize, 3] {
        let mut rng = Rng::new(800 + labels as u64);
        let unary = random_tensor(1, labels, 6, 6, &mut rng).scale(0.5);
        let guide = random_tensor(1, 3, 6, 6, &mut rng);
        let branch = random_branch(labels, 3, 1, 900 + labels as u64);
        let spec = CrfSpec::new(vec![branch.clone()], 1, labels).unwrap();
        let q0 = softmax_neg(&unary);
        let got = mf_step(&q0, &unary, &guide, &spec).unwrap();
        let want = naive_mf_step(&q0, &unary, &guide, &[branch_as_naive(&branch)]);
        assert!(
            got.max_abs_diff(&want) <= 1e-12,
            "labels={labels}: {}",
            got.max_abs_diff(&want)
        );
    }
}

#[test]
fn mf_step_matches_literal_loop_two_dilated_branches() {
    let mut rng = Rng::new(810);
    let labels = 3;
    let unary = random_tensor(1, labels, 8, 8, &mut rng).scale(0.4);
    let guide = random_tensor(1, 3, 8, 8, &mut rng);
    let b1 = random_branch(labels, 5, 1, 811);
    let b2 = random_branch(labels, 5, 2, 812);
    let spec = CrfSpec::new(vec![b1.clone(), b2.clone()], 1, labels).unwrap();
    let q0 = softmax_neg(&unary);
    let got = mf_step(&q0, &unary, &guide, &spec).unwrap();
    let want = naive_mf_step(
        &q0,
        &unary,
        &guide,
        &[branch_as_naive(&b1), branch_as_naive(&b2)],
    );
    assert!(got.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn multi_step_inference_matches_iterated_loop() {
    let mut rng = Rng::new(820);
    let labels = 2;
    let unary = random_tensor(1, labels, 6, 6, &mut rng).scale(0.5);
    let guide = random_tensor(1, 3, 6, 6, &mut rng);
    let branch = random_branch(labels, 3, 1, 821);
    let spec = CrfSpec::new(vec![branch.clone()], 3, labels).unwrap();
    let (got, _) = mf_infer(&unary, &guide, &spec).unwrap();
    let nb = [branch_as_naive(&branch)];
    let mut q = softmax_neg(&unary);
    for _ in 0..3 {
        q = naive_mf_step(&q, &unary, &guide, &nb);
    }
    assert!(got.max_abs_diff(&q) <= 1e-12);
}

#[test]
fn windowed_model_reproduces_dense_oracle() {
    // Full-image window with the two-kernel stencils folded into Potts
    // compatibility reproduces the dense fully connected update.
    let mut rng = Rng::new(830);
    let (h, w) = (8, 8);
    let labels = 2;
    let unary = random_tensor(1, labels, h, w, &mut rng).scale(0.6);
    let mut image = Tensor4::zeros(1, 3, h, w);
    for v in image.data.iter_mut() {
        *v = rng.next_f64();
    }
    let params = FullCrfParams {
        w1: 0.4,
        w2: 0.2,
        theta_alpha: 2.5,
        theta_beta: 0.3,
        theta_gamma: 1.5,
    };
    for t in [1usize, 3, 5] {
        let dense = dense_fullcrf_mf(&unary, &image, &params, t).unwrap();
        let branches = full_crf_as_branches(&params, labels, h, w, 3).unwrap();
        let spec = CrfSpec::new(branches, t, labels).unwrap();
        let (windowed, _) = mf_infer(&unary, &image, &spec).unwrap();
        assert!(
            windowed.max_abs_diff(&dense) <= 1e-6,
            "t={t}: {}",
            windowed.max_abs_diff(&dense)
        );
    }
}

#[test]
fn backward_matches_fd_through_unrolled_steps() {
    for &t_steps in &[1usize, 3] {
        let mut rng = Rng::new(840 + t_steps as u64);
        let labels = 2;
        let (h, w) = (6, 6);
        let unary = random_tensor(1, labels, h, w, &mut rng).scale(0.5);
        let guide = random_tensor(1, 3, h, w, &mut rng);
        let branch = random_branch(labels, 3, 1, 850 + t_steps as u64);
        let spec = CrfSpec::new(vec![branch], t_steps, labels).unwrap();
        let u = random_tensor(1, labels, h, w, &mut rng);

        let cache = mf_infer_cached(&unary, &guide, &spec).unwrap();
        let grads = crf_backward(&cache, &u).unwrap();

        // Unary gradient.
        let loss_unary = |t: &Tensor4| {
            let c = mf_infer_cached(t, &guide, &spec).unwrap();
            c.marginals().dot(&u)
        };
        let numeric = fd_tensor(&unary, loss_unary);
        let c = compare("d_unary", &grads.d_unary.data, &numeric, FD_RTOL_NET);
        assert!(c.passed(), "t={t_steps} d_unary rel err {}", c.max_rel_err);

        // Compatibility tensor gradient, probed through reconstruction so the
        // pinned center tap stays pinned for both routes.
        let base = spec.branches[0].compat().clone();
        let mut numeric = vec![0.0; base.len()];
        for i in 0..base.len() {
            let probe = |delta: f64| {
                let mut c = base.clone();
                c.data[i] += delta;
                let b = PairwiseBranch::new(
                    3,
                    1,
                    c,
                    spec.branches[0].kernel,
                    spec.branches[0].feature_scale.clone(),
                )
                .unwrap();
                let s2 = CrfSpec::new(vec![b], t_steps, labels).unwrap();
                mf_infer_cached(&unary, &guide, &s2).unwrap().marginals().dot(&u)
            };
            numeric[i] = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
        }
        let c = compare("d_compat", &grads.d_compat[0].data, &numeric, FD_RTOL_NET);
        assert!(c.passed(), "t={t_steps} d_compat rel err {}", c.max_rel_err);

        // Feature-scale gradient.
        let base_scale = spec.branches[0].feature_scale.clone();
        let mut numeric = vec![0.0; base_scale.len()];
        for i in 0..base_scale.len() {
            let probe = |delta: f64| {
                let mut sc = base_scale.clone();
                sc[i] += delta;
                let b = PairwiseBranch::new(
                    3,
                    1,
                    spec.branches[0].compat().clone(),
                    spec.branches[0].kernel,
                    sc,
                )
                .unwrap();
                let s2 = CrfSpec::new(vec![b], t_steps, labels).unwrap();
                mf_infer_cached(&unary, &guide, &s2).unwrap().marginals().dot(&u)
            };
            numeric[i] = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
        }
        let c = compare("d_scale", &grads.d_feature_scale[0], &numeric, FD_RTOL_NET);
        assert!(c.passed(), "t={t_steps} d_scale rel err {}", c.max_rel_err);
    }
}

fn fd_tensor(t: &Tensor4, mut loss: impl FnMut(&Tensor4) -> f64) -> Vec<f64> {
    let mut probe = t.clone();
    let mut grad = vec![0.0; probe.data.len()];
    for i in 0..probe.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe.data[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe.data[i] = orig;
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Count pixels whose label differs from all 4-neighbors.
fn isolated_pixels(labels: &[u8], h: usize, w: usize) -> usize {
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let me = labels[y * w + x];
            let mut isolated = true;
            if y > 0 && labels[(y - 1) * w + x] == me {
                isolated = false;
            }
            if y + 1 < h && labels[(y + 1) * w + x] == me {
                isolated = false;
            }
            if x > 0 && labels[y * w + x - 1] == me {
                isolated = false;
            }
            if x + 1 < w && labels[y * w + x + 1] == me {
                isolated = false;
            }
            if isolated {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn smoothing_removes_isolated_labels() {
    // Homogeneous guide, attractive Potts-like branch: isolated unary flips
    // are voted away by the window majority.
    let (h, w) = (16, 16);
    let labels = 2usize;
    let mut rng = Rng::new(860);
    let mut unary = Tensor4::zeros(1, labels, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut good = usize::from(x >= w / 2);
            if rng.next_f64() < 0.12 {
                good = 1 - good; // noise flip
            }
            unary.set(0, good, y, x, 0.0);
            unary.set(0, 1 - good, y, x, 1.2);
        }
    }
    let guide = Tensor4::full(1, 3, h, w, 0.5);
    let branch = default_branch(labels, 1, 1.0, 1.0, 3).unwrap();
    let spec = CrfSpec::new(vec![branch], 5, labels).unwrap();
    let before = isolated_pixels(&argmax_labels(&softmax_neg(&unary)).data, h, w);
    let (_, after_map) = mf_infer(&unary, &guide, &spec).unwrap();
    let after = isolated_pixels(&after_map.data, h, w);
    assert!(
        before > 0 && after < before,
        "isolated pixels before {before} after {after}"
    );
}

#[test]
fn learning_reduces_cross_entropy() {
    // Two-region synthetic task: noisy unaries, edge-aligned guide. Train the
    // compatibility tensor and feature scales for 100 steps.
    let (h, w) = (12, 12);
    let labels = 2usize;
    let mut rng = Rng::new(870);
    let mut gt = vec![0usize; h * w];
    let mut guide = Tensor4::zeros(1, 3, h, w);
    let mut unary = Tensor4::zeros(1, labels, h, w);
    for y in 0..h {
        for x in 0..w {
            let region = usize::from(x >= w / 2);
            gt[y * w + x] = region;
            for ci in 0..3 {
                guide.set(0, ci, y, x, if region == 0 { 0.2 } else { 0.8 });
            }
            let mut obs = region;
            if rng.next_f64() < 0.25 {
                obs = 1 - obs;
            }
            unary.set(0, obs, y, x, 0.2);
            unary.set(0, 1 - obs, y, x, 1.0);
        }
    }

    let cross_entropy = |q: &Tensor4| -> f64 {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc -= q.at(0, gt[y * w + x], y, x).max(1e-12).ln();
            }
        }
        acc / (h * w) as f64
    };
    let ce_grad = |q: &Tensor4| -> Tensor4 {
        let mut g = Tensor4::zeros(1, labels, h, w);
        for y in 0..h {
            for x in 0..w {
                let l = gt[y * w + x];
                g.set(0, l, y, x, -1.0 / (q.at(0, l, y, x).max(1e-12) * (h * w) as f64));
            }
        }
        g
    };

    let mut rng2 = Rng::new(871);
    let mut compat = Tensor4::from_vec(
        labels,
        labels,
        5,
        5,
        rng2.normal_vec(labels * labels * 25),
    )
    .unwrap()
    .scale(0.05);
    let mut scale = vec![2.0; 3];
    let spec_of = |compat: &Tensor4, scale: &[f64]| {
        let b = PairwiseBranch::new(
            5,
            1,
            compat.clone(),
            KernelSpec::Gaussian,
            scale.to_vec(),
        )
        .unwrap();
        CrfSpec::new(vec![b], 3, labels).unwrap()
    };

    let ce0 = {
        let cache = mf_infer_cached(&unary, &guide, &spec_of(&compat, &scale)).unwrap();
        cross_entropy(cache.marginals())
    };

    // Plain Adam over (compat, scale).
    let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 5e-3);
    let mut m = vec![0.0; compat.len() + scale.len()];
    let mut v = vec![0.0; compat.len() + scale.len()];
    let mut ce_last = ce0;
    for step in 1..=100 {
        let spec = spec_of(&compat, &scale);
        let cache = mf_infer_cached(&unary, &guide, &spec).unwrap();
        ce_last = cross_entropy(cache.marginals());
        let grads = crf_backward(&cache, &ce_grad(cache.marginals())).unwrap();
        let flat_g: Vec<f64> = grads.d_compat[0]
            .data
            .iter()
            .chain(grads.d_feature_scale[0].iter())
            .copied()
            .collect();
        let b1c = 1.0 - f64::powi(b1, step);
        let b2c = 1.0 - f64::powi(b2, step);
        for i in 0..flat_g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * flat_g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * flat_g[i] * flat_g[i];
            let upd = lr * (m[i] / b1c) / ((v[i] / b2c).sqrt() + eps);
            if i < compat.len() {
                compat.data[i] -= upd;
            } else {
                scale[i - compat.len()] = (scale[i - compat.len()] - upd).max(1e-3);
            }
        }
    }
    assert!(
        ce_last < ce0,
        "cross-entropy did not improve: {ce0} -> {ce_last}"
    );
}
