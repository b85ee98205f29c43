//! Shared fixtures for the benchmark targets.

use pacgrid_core::kernels::KernelSpec;
use pacgrid_core::pac::PacParams;
use pacgrid_core::rng::Rng;
use pacgrid_core::tensor::{Tensor4, WindowSpec};

pub fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, rng.normal_vec(n * c * h * w)).unwrap()
}

pub fn random_params(
    c_out: usize,
    c_in: usize,
    win: WindowSpec,
    kernel: KernelSpec,
    rng: &mut Rng,
) -> PacParams {
    let s = win.size;
    let weights =
        Tensor4::from_vec(c_out, c_in, s, s, rng.normal_vec(c_out * c_in * s * s)).unwrap();
    PacParams::new(weights, Some(rng.normal_vec(c_out)), win, kernel).unwrap()
}
