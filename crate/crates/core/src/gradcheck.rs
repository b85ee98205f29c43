//! Central finite-difference verification of analytic gradients.
//!
//! The harness perturbs one scalar at a time (step 1e-5, central differences,
//! f64) and compares against the analytic gradient. A comparison passes when
//! the absolute difference is below a small noise floor or the relative error
//! is within tolerance; near-zero gradients sit inside the difference
//! estimator's round-off and are covered by the floor.

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Absolute noise floor for the difference estimator: eps_machine * |loss| /
/// step reaches a few 1e-9 for the loss magnitudes the suites produce, so
/// differences below this carry no information about the analytic gradient.
pub const FD_ATOL: f64 = 1e-8;
/// Relative tolerance for element-level gradients.
pub const FD_RTOL: f64 = 1e-6;
/// Relaxed relative tolerance for whole-network chains.
pub const FD_RTOL_NET: f64 = 1e-5;

/// Central difference of `loss` with respect to each element of `params`.
pub fn numeric_grad(params: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        let up = loss(params);
        params[i] = orig - FD_STEP;
        let down = loss(params);
        params[i] = orig;
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Outcome of comparing one analytic gradient against finite differences.
#[derive(Debug, Clone)]
pub struct GradCompare {
    pub name: String,
    /// Worst relative error among elements above the noise floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub elements: usize,
    pub tolerance: f64,
}

impl GradCompare {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare an analytic gradient with a numeric one.
pub fn compare(name: &str, analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCompare {
    assert_eq!(analytic.len(), numeric.len(), "{name}: length mismatch");
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let diff = (a - n).abs();
        max_abs = max_abs.max(diff);
        if diff <= FD_ATOL {
            continue;
        }
        let scale = a.abs().max(n.abs());
        max_rel = max_rel.max(diff / scale);
    }
    GradCompare {
        name: name.to_string(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        elements: analytic.len(),
        tolerance,
    }
}

/// Collected comparisons for one verification run.
#[derive(Debug, Default)]
pub struct GradReport {
    pub entries: Vec<GradCompare>,
}

impl GradReport {
    pub fn push(&mut self, entry: GradCompare) {
        self.entries.push(entry);
    }

    pub fn merge(&mut self, other: GradReport) {
        self.entries.extend(other.entries);
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed())
    }

    /// Fold duplicate names (e.g. the same gradient across seeds) keeping the
    /// worst errors, preserving first-seen order.
    pub fn folded(&self) -> Vec<GradCompare> {
        let mut out: Vec<GradCompare> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|o| o.name == e.name) {
                Some(o) => {
                    o.max_rel_err = o.max_rel_err.max(e.max_rel_err);
                    o.max_abs_err = o.max_abs_err.max(e.max_abs_err);
                    o.elements += e.elements;
                }
                None => out.push(e.clone()),
            }
        }
        out
    }
}

use crate::kernels::{kernel_eval, kernel_grad, KernelSpec};
use crate::nn::{loss_epe, loss_mse, loss_rmse};
use crate::pac::{pac_backward, pac_forward, pact_backward, pact_forward, pact_out_len, PacParams};
use crate::rng::Rng;
use crate::tensor::{Tensor4, WindowSpec};

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, rng.normal_vec(n * c * h * w)).unwrap()
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

const GEOMETRIES: [(usize, usize, usize); 8] = [
    (1, 1, 1),
    (3, 1, 1),
    (3, 2, 1),
    (3, 1, 2),
    (5, 1, 1),
    (5, 2, 1),
    (3, 2, 2),
    (5, 1, 2),
];

/// Run `cases` seeded finite-difference checks over the filter, transposed
/// filter, kernel and loss gradients. `negate_df` flips the sign of the
/// analytic feature gradients before comparison — a negative control that must
/// make the report fail.
pub fn run_suites(seed: u64, cases: usize, negate_df: bool) -> GradReport {
    let mut report = GradReport::default();
    let flip = if negate_df { -1.0 } else { 1.0 };
    for case in 0..cases {
        let mut rng = Rng::new(seed.wrapping_add(case as u64).wrapping_mul(0x9e37_79b9));
        let (s, stride, dil) = GEOMETRIES[case % GEOMETRIES.len()];
        let d = 1 + (case % 3) * 2; // 1, 3, 5 feature channels
        let win = WindowSpec::new(s, stride, dil * (s - 1) / 2, dil).unwrap();
        if win.out_dims(6, 6).is_err() {
            continue;
        }
        let weights =
            Tensor4::from_vec(2, 2, s, s, rng.normal_vec(4 * s * s)).unwrap();
        let params = PacParams::new(weights, Some(rng.normal_vec(2)), win, KernelSpec::Gaussian)
            .unwrap();
        let v = random_tensor(1, 2, 6, 6, &mut rng);
        let f = random_tensor(1, d, 6, 6, &mut rng);
        let (oh, ow) = win.out_dims(6, 6).unwrap();
        let u = random_tensor(1, 2, oh, ow, &mut rng);
        let grads = pac_backward(&v, &f, &params, &u).unwrap();
        report.push(compare(
            "pac dV",
            &grads.d_input.data,
            &fd_tensor(&v, |t| pac_forward(t, &f, &params).unwrap().dot(&u)),
            FD_RTOL,
        ));
        report.push(compare(
            "pac dW",
            &grads.d_weights.data,
            &fd_tensor(&params.weights, |t| {
                let p = PacParams {
                    weights: t.clone(),
                    bias: params.bias.clone(),
                    win: params.win,
                    kernel: params.kernel,
                };
                pac_forward(&v, &f, &p).unwrap().dot(&u)
            }),
            FD_RTOL,
        ));
        let mut bias = params.bias.clone().unwrap();
        let nb = numeric_grad(&mut bias, |b| {
            let p = PacParams {
                weights: params.weights.clone(),
                bias: Some(b.to_vec()),
                win: params.win,
                kernel: params.kernel,
            };
            pac_forward(&v, &f, &p).unwrap().dot(&u)
        });
        report.push(compare("pac dB", grads.d_bias.as_ref().unwrap(), &nb, FD_RTOL));
        report.push(compare(
            "pac dF",
            &grads.d_features.scale(flip).data,
            &fd_tensor(&f, |t| pac_forward(&v, t, &params).unwrap().dot(&u)),
            FD_RTOL,
        ));

        // Transposed pass on the aligned geometry.
        let m = 2 + case % 2;
        let twin = WindowSpec::new(s, 1, dil * (s - 1) / 2, dil).unwrap();
        let tparams = PacParams {
            weights: params.weights.clone(),
            bias: params.bias.clone(),
            win: twin,
            kernel: params.kernel,
        };
        let vt = random_tensor(1, 2, 4, 4, &mut rng);
        let toh = pact_out_len(&tparams, 4, m, 1);
        let ft = random_tensor(1, d, toh, toh, &mut rng);
        let ut = random_tensor(1, 2, toh, toh, &mut rng);
        let tgrads = pact_backward(&vt, &ft, &tparams, m, 1, &ut).unwrap();
        report.push(compare(
            "pact dV",
            &tgrads.d_input.data,
            &fd_tensor(&vt, |t| pact_forward(t, &ft, &tparams, m, 1).unwrap().dot(&ut)),
            FD_RTOL,
        ));
        report.push(compare(
            "pact dF",
            &tgrads.d_features.scale(flip).data,
            &fd_tensor(&ft, |t| pact_forward(&vt, t, &tparams, m, 1).unwrap().dot(&ut)),
            FD_RTOL,
        ));

        // Kernel variants.
        let kspec = match case % 4 {
            0 => KernelSpec::Gaussian,
            1 => KernelSpec::DetailPreserving { alpha: 0.2, epsilon: 0.7, lambda: 0.5 },
            2 => KernelSpec::DetailPreserving { alpha: 0.0, epsilon: 1.0, lambda: 1.0 },
            _ => KernelSpec::DetailPreserving { alpha: 0.4, epsilon: 0.8, lambda: 2.0 },
        };
        let kwin = WindowSpec::new(3, 1, 1, 1).unwrap();
        let fk = random_tensor(1, 2, 5, 5, &mut rng);
        let mut uk = kernel_eval(&kspec, &fk, &kwin).unwrap();
        for val in uk.data.iter_mut() {
            *val = rng.normal();
        }
        let kg = kernel_grad(&kspec, &fk, &kwin, &uk).unwrap();
        report.push(compare(
            "kernel dF",
            &kg.scale(flip).data,
            &fd_tensor(&fk, |t| {
                kernel_eval(&kspec, t, &kwin)
                    .unwrap()
                    .data
                    .iter()
                    .zip(uk.data.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            }),
            FD_RTOL,
        ));

        // Losses.
        let pred = random_tensor(1, 2, 4, 4, &mut rng);
        let target = random_tensor(1, 2, 4, 4, &mut rng);
        let (_, g) = loss_mse(&pred, &target).unwrap();
        report.push(compare(
            "loss mse",
            &g.data,
            &fd_tensor(&pred, |t| loss_mse(t, &target).unwrap().0),
            FD_RTOL,
        ));
        let (_, g) = loss_rmse(&pred, &target).unwrap();
        report.push(compare(
            "loss rmse",
            &g.data,
            &fd_tensor(&pred, |t| loss_rmse(t, &target).unwrap().0),
            FD_RTOL,
        ));
        let (_, g) = loss_epe(&pred, &target).unwrap();
        report.push(compare(
            "loss epe",
            &g.data,
            &fd_tensor(&pred, |t| loss_epe(t, &target).unwrap().0),
            FD_RTOL,
        ));
    }
    report
}
