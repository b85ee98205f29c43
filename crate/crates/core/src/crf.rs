//! Mean-field inference for CRFs whose pairwise terms are windowed, dilated
//! pixel-adaptive filters with a 4D label-compatibility tensor per branch,
//! plus a dense fully connected oracle and reverse-mode differentiation
//! through the unrolled steps.
//!
//! Conventions fixed here:
//! - Marginals start from the softmax of negated unaries.
//! - The window includes its center; every compatibility tensor has its center
//!   tap zeroed at construction, so self-interaction vanishes there (the dense
//!   formulation excludes the j = i term instead).
//! - Unaries are positive energies. The exponent is clamped to +-60 before
//!   normalization; clamped entries pass no gradient.

use crate::error::{Error, Result};
use crate::kernels::{kernel_eval, KernelField, KernelSpec};
use crate::pac::{pac_backward_with_field, pac_forward_with_field, PacParams};
use crate::tensor::{Tensor4, WindowSpec};

/// Clamp bound for the exponent of the normalized update.
pub const ENERGY_CLAMP: f64 = 60.0;

/// Tolerance for the incoming-marginals normalization precondition.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One pairwise term: window geometry, a compatibility tensor indexed
/// (source label l', target label l, tap row, tap col) over offsets
/// p_j - p_i, the adapting-kernel form and per-channel feature scales.
#[derive(Debug, Clone)]
pub struct PairwiseBranch {
    win: WindowSpec,
    compat: Tensor4,
    pub kernel: KernelSpec,
    pub feature_scale: Vec<f64>,
}

impl PairwiseBranch {
    /// Build a branch. The window is stride 1 with same-size padding; the
    /// compatibility center tap is forced to zero.
    pub fn new(
        size: usize,
        dilation: usize,
        compat: Tensor4,
        kernel: KernelSpec,
        feature_scale: Vec<f64>,
    ) -> Result<Self> {
        let win = WindowSpec::new(size, 1, (size - 1) / 2 * dilation, dilation)?;
        let (l_src, l_dst, kh, kw) = compat.dims();
        if l_src != l_dst {
            return Err(Error::ShapeMismatch(format!(
                "compatibility tensor label dims ({l_src}, {l_dst}) must be square"
            )));
        }
        if l_src < 2 {
            return Err(Error::InvalidParam("label count must be >= 2".into()));
        }
        if kh != size || kw != size {
            return Err(Error::ShapeMismatch(format!(
                "compatibility spatial dims ({kh}, {kw}) != window size {size}"
            )));
        }
        if !compat.is_all_finite() {
            return Err(Error::InvalidParam("compatibility tensor must be finite".into()));
        }
        kernel.validate()?;
        if feature_scale.is_empty() || feature_scale.iter().any(|&s| s <= 0.0 || s.is_nan()) {
            return Err(Error::InvalidParam(
                "feature scales must be positive and non-empty".into(),
            ));
        }
        let mut compat = compat;
        let r = win.radius();
        for lp in 0..l_src {
            for l in 0..l_dst {
                compat.set(lp, l, r, r, 0.0);
            }
        }
        Ok(PairwiseBranch {
            win,
            compat,
            kernel,
            feature_scale,
        })
    }

    pub fn labels(&self) -> usize {
        self.compat.batch()
    }

    pub fn window(&self) -> &WindowSpec {
        &self.win
    }

    pub fn compat(&self) -> &Tensor4 {
        &self.compat
    }

    /// Overwrite the compatibility tensor (training); dims must match.
    pub fn set_compat(&mut self, compat: Tensor4) -> Result<()> {
        if compat.dims() != self.compat.dims() {
            return Err(Error::ShapeMismatch(format!(
                "compat dims {:?} != {:?}",
                compat.dims(),
                self.compat.dims()
            )));
        }
        self.compat = compat;
        Ok(())
    }

    /// Guide scaled per channel by the branch's feature scales.
    fn scaled_features(&self, guide: &Tensor4) -> Result<Tensor4> {
        let (_, gc, _, _) = guide.dims();
        if gc != self.feature_scale.len() {
            return Err(Error::ShapeMismatch(format!(
                "guide has {gc} channels, branch scales {}",
                self.feature_scale.len()
            )));
        }
        let mut f = guide.clone();
        let (n, c, h, w) = f.dims();
        for ni in 0..n {
            for ci in 0..c {
                let base = f.idx(ni, ci, 0, 0);
                for v in f.data[base..base + h * w].iter_mut() {
                    *v *= self.feature_scale[ci];
                }
            }
        }
        Ok(f)
    }

    /// Filter parameters realizing the pairwise sum: output channel l gathers
    /// sum over l' and window taps of K * compat[l', l, tap] * q(l').
    fn pac_params(&self) -> PacParams {
        let l = self.labels();
        let s = self.win.size;
        let mut weights = Tensor4::zeros(l, l, s, s);
        for lp in 0..l {
            for ll in 0..l {
                for ky in 0..s {
                    for kx in 0..s {
                        weights.set(ll, lp, ky, kx, self.compat.at(lp, ll, ky, kx));
                    }
                }
            }
        }
        PacParams {
            weights,
            bias: None,
            win: self.win,
            kernel: self.kernel,
        }
    }
}

/// Full inference configuration: pairwise branches, step count, label count.
#[derive(Debug, Clone)]
pub struct CrfSpec {
    pub branches: Vec<PairwiseBranch>,
    pub mf_steps: usize,
    pub labels: usize,
}

impl CrfSpec {
    pub fn new(branches: Vec<PairwiseBranch>, mf_steps: usize, labels: usize) -> Result<Self> {
        if mf_steps < 1 {
            return Err(Error::InvalidParam("step count must be >= 1".into()));
        }
        if labels < 2 {
            return Err(Error::InvalidParam("label count must be >= 2".into()));
        }
        for b in &branches {
            if b.labels() != labels {
                return Err(Error::ShapeMismatch(format!(
                    "branch labels {} != spec labels {labels}",
                    b.labels()
                )));
            }
        }
        Ok(CrfSpec {
            branches,
            mf_steps,
            labels,
        })
    }
}

/// Per-pixel argmax labels (ties resolve to the lowest index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

/// Convert classifier logits to positive unary energies -log softmax(logits).
pub fn logits_to_unary(logits: &Tensor4) -> Tensor4 {
    let (n, l, h, w) = logits.dims();
    let mut out = Tensor4::zeros(n, l, h, w);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut max = f64::NEG_INFINITY;
                for li in 0..l {
                    max = max.max(logits.at(ni, li, y, x));
                }
                let mut z = 0.0;
                for li in 0..l {
                    z += (logits.at(ni, li, y, x) - max).exp();
                }
                let logz = z.ln() + max;
                for li in 0..l {
                    out.set(ni, li, y, x, logz - logits.at(ni, li, y, x));
                }
            }
        }
    }
    out
}

/// Softmax over the label axis of the clamped exponent; returns the marginals
/// and a mask of entries that stayed inside the clamp range (those pass
/// gradient).
fn normalize_exponent(exponent: &Tensor4) -> (Tensor4, Vec<bool>) {
    let (n, l, h, w) = exponent.dims();
    let mut q = Tensor4::zeros(n, l, h, w);
    let mut mask = vec![false; exponent.len()];
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut clamped = vec![0.0; l];
                let mut max = f64::NEG_INFINITY;
                for li in 0..l {
                    let e = exponent.at(ni, li, y, x);
                    let c = e.clamp(-ENERGY_CLAMP, ENERGY_CLAMP);
                    mask[exponent.idx(ni, li, y, x)] = e == c;
                    clamped[li] = c;
                    max = max.max(c);
                }
                let mut z = 0.0;
                for li in 0..l {
                    clamped[li] = (clamped[li] - max).exp();
                    z += clamped[li];
                }
                for li in 0..l {
                    q.set(ni, li, y, x, clamped[li] / z);
                }
            }
        }
    }
    (q, mask)
}

/// d(loss)/d(exponent) from d(loss)/d(marginals) through the softmax, with
/// clamped entries zeroed.
fn normalize_backward(q: &Tensor4, d_q: &Tensor4, mask: &[bool]) -> Tensor4 {
    let (n, l, h, w) = q.dims();
    let mut de = Tensor4::zeros(n, l, h, w);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut inner = 0.0;
                for li in 0..l {
                    inner += d_q.at(ni, li, y, x) * q.at(ni, li, y, x);
                }
                for li in 0..l {
                    let idx = q.idx(ni, li, y, x);
                    if mask[idx] {
                        de.data[idx] = q.at(ni, li, y, x) * (d_q.at(ni, li, y, x) - inner);
                    }
                }
            }
        }
    }
    de
}

fn check_marginals(q: &Tensor4) -> Result<()> {
    let (n, l, h, w) = q.dims();
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for li in 0..l {
                    let v = q.at(ni, li, y, x);
                    if v < -1e-12 {
                        return Err(Error::NotNormalized {
                            sum: v,
                            pixel: (y, x),
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::NotNormalized {
                        sum,
                        pixel: (y, x),
                    });
                }
            }
        }
    }
    Ok(())
}

fn check_grids(q: &Tensor4, unary: &Tensor4, guide: &Tensor4, spec: &CrfSpec) -> Result<()> {
    if q.dims() != unary.dims() {
        return Err(Error::ShapeMismatch(format!(
            "marginals {:?} != unary {:?}",
            q.dims(),
            unary.dims()
        )));
    }
    let (n, l, h, w) = q.dims();
    if l != spec.labels {
        return Err(Error::ShapeMismatch(format!(
            "{l} marginal channels != {} labels",
            spec.labels
        )));
    }
    let (gn, _, gh, gw) = guide.dims();
    if gn != n || gh != h || gw != w {
        return Err(Error::ShapeMismatch(format!(
            "guide grid ({gn}, {gh}, {gw}) != marginal grid ({n}, {h}, {w})"
        )));
    }
    Ok(())
}

/// One mean-field update: q'(l) normalizes exp(-unary(l) - sum over branches
/// of the pairwise filter response).
pub fn mf_step(q: &Tensor4, unary: &Tensor4, guide: &Tensor4, spec: &CrfSpec) -> Result<Tensor4> {
    check_grids(q, unary, guide, spec)?;
    check_marginals(q)?;
    let mut exponent = unary.scale(-1.0);
    for branch in &spec.branches {
        let f = branch.scaled_features(guide)?;
        let params = branch.pac_params();
        let field = kernel_eval(&params.kernel, &f, &params.win)?;
        let pair = pac_forward_with_field(q, &field, &params)?;
        for (e, p) in exponent.data.iter_mut().zip(pair.data.iter()) {
            *e -= p;
        }
    }
    Ok(normalize_exponent(&exponent).0)
}

/// Everything the backward pass needs from one inference run.
pub struct MfCache {
    spec: CrfSpec,
    unary: Tensor4,
    guide: Tensor4,
    /// q_0 .. q_T.
    q_hist: Vec<Tensor4>,
    /// Clamp masks for q_0 .. q_T.
    masks: Vec<Vec<bool>>,
    /// Scaled features and kernel field per branch (constant across steps).
    features: Vec<Tensor4>,
    fields: Vec<KernelField>,
}

impl MfCache {
    pub fn marginals(&self) -> &Tensor4 {
        self.q_hist.last().unwrap()
    }

    /// Marginals after `t` steps (0 is the initialization).
    pub fn q_at(&self, t: usize) -> &Tensor4 {
        &self.q_hist[t]
    }

    pub fn steps(&self) -> usize {
        self.q_hist.len() - 1
    }
}

/// Run `spec.mf_steps` updates from the softmax of negated unaries, keeping
/// per-step state for `crf_backward`.
pub fn mf_infer_cached(unary: &Tensor4, guide: &Tensor4, spec: &CrfSpec) -> Result<MfCache> {
    check_grids(unary, unary, guide, spec)?;
    let mut features = Vec::with_capacity(spec.branches.len());
    let mut fields = Vec::with_capacity(spec.branches.len());
    for branch in &spec.branches {
        let f = branch.scaled_features(guide)?;
        let field = kernel_eval(&branch.kernel, &f, &branch.win)?;
        features.push(f);
        fields.push(field);
    }
    let (q0, mask0) = normalize_exponent(&unary.scale(-1.0));
    let mut q_hist = vec![q0];
    let mut masks = vec![mask0];
    for _ in 0..spec.mf_steps {
        let q = q_hist.last().unwrap();
        check_marginals(q)?;
        let mut exponent = unary.scale(-1.0);
        for (branch, field) in spec.branches.iter().zip(fields.iter()) {
            let params = branch.pac_params();
            let pair = pac_forward_with_field(q, field, &params)?;
            for (e, p) in exponent.data.iter_mut().zip(pair.data.iter()) {
                *e -= p;
            }
        }
        let (q_next, mask) = normalize_exponent(&exponent);
        q_hist.push(q_next);
        masks.push(mask);
    }
    Ok(MfCache {
        spec: spec.clone(),
        unary: unary.clone(),
        guide: guide.clone(),
        q_hist,
        masks,
        features,
        fields,
    })
}

/// Final marginals and the per-pixel argmax labels.
pub fn mf_infer(unary: &Tensor4, guide: &Tensor4, spec: &CrfSpec) -> Result<(Tensor4, LabelMap)> {
    let cache = mf_infer_cached(unary, guide, spec)?;
    let q = cache.marginals().clone();
    let labels = argmax_labels(&q);
    Ok((q, labels))
}

/// Argmax over the label axis; ties resolve to the lowest label index.
pub fn argmax_labels(q: &Tensor4) -> LabelMap {
    let (n, l, h, w) = q.dims();
    let mut data = vec![0u8; n * h * w];
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut best = 0usize;
                let mut best_v = q.at(ni, 0, y, x);
                for li in 1..l {
                    let v = q.at(ni, li, y, x);
                    if v > best_v {
                        best_v = v;
                        best = li;
                    }
                }
                data[(ni * h + y) * w + x] = best as u8;
            }
        }
    }
    LabelMap { n, h, w, data }
}

/// Gradients of a scalar loss with respect to the learnable CRF state.
#[derive(Debug, Clone)]
pub struct CrfGradients {
    /// Per branch, in (l', l, s, s) storage orientation.
    pub d_compat: Vec<Tensor4>,
    /// Per branch, per guide channel.
    pub d_feature_scale: Vec<Vec<f64>>,
    pub d_unary: Tensor4,
}

/// Reverse-mode through the unrolled steps of `mf_infer_cached`.
pub fn crf_backward(cache: &MfCache, d_marginals: &Tensor4) -> Result<CrfGradients> {
    let spec = &cache.spec;
    let t_steps = spec.mf_steps;
    let (n, l, h, w) = cache.unary.dims();
    if d_marginals.dims() != (n, l, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} != marginals {:?}",
            d_marginals.dims(),
            (n, l, h, w)
        )));
    }
    let mut d_compat: Vec<Tensor4> = spec
        .branches
        .iter()
        .map(|b| {
            let (a, bb, c, d) = b.compat.dims();
            Tensor4::zeros(a, bb, c, d)
        })
        .collect();
    let mut d_scale: Vec<Vec<f64>> = spec
        .branches
        .iter()
        .map(|b| vec![0.0; b.feature_scale.len()])
        .collect();
    let mut d_unary = Tensor4::zeros(n, l, h, w);

    let mut dq = d_marginals.clone();
    for t in (0..t_steps).rev() {
        let q_next = &cache.q_hist[t + 1];
        let q_prev = &cache.q_hist[t];
        let de = normalize_backward(q_next, &dq, &cache.masks[t + 1]);
        // exponent = -unary - sum(pairwise)
        let d_energy = de.scale(-1.0);
        d_unary = d_unary.add(&d_energy)?;
        let mut dq_prev = Tensor4::zeros(n, l, h, w);
        for (k, branch) in spec.branches.iter().enumerate() {
            let params = branch.pac_params();
            let grads = pac_backward_with_field(
                q_prev,
                &cache.features[k],
                &cache.fields[k],
                &params,
                &d_energy,
            )?;
            dq_prev = dq_prev.add(&grads.d_input)?;
            // Transpose the weight gradient back to (l', l, s, s) storage. The
            // center tap is pinned to zero at construction, so it is not a
            // free coordinate and reports no gradient.
            let s = branch.win.size;
            let r = branch.win.radius();
            for lp in 0..l {
                for ll in 0..l {
                    for ky in 0..s {
                        for kx in 0..s {
                            if ky == r && kx == r {
                                continue;
                            }
                            let di = d_compat[k].idx(lp, ll, ky, kx);
                            d_compat[k].data[di] += grads.d_weights.at(ll, lp, ky, kx);
                        }
                    }
                }
            }
            // Scaled features f = guide * scale per channel.
            for ci in 0..branch.feature_scale.len() {
                let mut acc = 0.0;
                for ni in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            acc += grads.d_features.at(ni, ci, y, x)
                                * cache.guide.at(ni, ci, y, x);
                        }
                    }
                }
                d_scale[k][ci] += acc;
            }
        }
        dq = dq_prev;
    }
    // q_0 = softmax(-unary).
    let de0 = normalize_backward(&cache.q_hist[0], &dq, &cache.masks[0]);
    d_unary = d_unary.add(&de0.scale(-1.0))?;
    Ok(CrfGradients {
        d_compat,
        d_feature_scale: d_scale,
        d_unary,
    })
}

/// Dense fully connected mean field with the two-kernel pairwise form
/// (appearance: positions and colors; smoothness: positions only) under Potts
/// compatibility, excluding j = i. Brute force in O(pixels^2) per step and
/// guarded to small images.
#[derive(Debug, Clone, Copy)]
pub struct FullCrfParams {
    pub w1: f64,
    pub w2: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
    pub theta_gamma: f64,
}

impl FullCrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_alpha", self.theta_alpha),
            ("theta_beta", self.theta_beta),
            ("theta_gamma", self.theta_gamma),
        ] {
            if v <= 0.0 || v.is_nan() {
                return Err(Error::InvalidParam(format!("{name} {v} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Maximum side length accepted by the dense oracle.
pub const DENSE_MAX_SIDE: usize = 48;

pub fn dense_fullcrf_mf(
    unary: &Tensor4,
    image: &Tensor4,
    params: &FullCrfParams,
    t_steps: usize,
) -> Result<Tensor4> {
    params.validate()?;
    let (n, l, h, w) = unary.dims();
    if h > DENSE_MAX_SIDE || w > DENSE_MAX_SIDE {
        return Err(Error::TooLarge(format!(
            "dense mean field is O(pixels^2); ({h}, {w}) exceeds {DENSE_MAX_SIDE}"
        )));
    }
    let (im_n, im_c, im_h, im_w) = image.dims();
    if im_n != n || im_h != h || im_w != w {
        return Err(Error::ShapeMismatch(format!(
            "image grid ({im_n}, {im_h}, {im_w}) != unary grid ({n}, {h}, {w})"
        )));
    }
    let (mut q, _) = normalize_exponent(&unary.scale(-1.0));
    for _ in 0..t_steps {
        let mut next = Tensor4::zeros(n, l, h, w);
        for ni in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    // Message m(l') = sum_{j != i} k_ij q_j(l').
                    let mut message = vec![0.0; l];
                    for jy in 0..h {
                        for jx in 0..w {
                            if jy == iy && jx == ix {
                                continue;
                            }
                            let dp = (iy as f64 - jy as f64).powi(2)
                                + (ix as f64 - jx as f64).powi(2);
                            let mut dc = 0.0;
                            for ci in 0..im_c {
                                let d = image.at(ni, ci, iy, ix) - image.at(ni, ci, jy, jx);
                                dc += d * d;
                            }
                            let appearance = (-dp / (2.0 * params.theta_alpha.powi(2))
                                - dc / (2.0 * params.theta_beta.powi(2)))
                            .exp();
                            let smoothness = (-dp / (2.0 * params.theta_gamma.powi(2))).exp();
                            let k = params.w1 * appearance + params.w2 * smoothness;
                            for lp in 0..l {
                                message[lp] += k * q.at(ni, lp, jy, jx);
                            }
                        }
                    }
                    let total: f64 = message.iter().sum();
                    // Potts: energy(l) = unary(l) + sum_{l' != l} m(l').
                    let mut exps = vec![0.0; l];
                    let mut max = f64::NEG_INFINITY;
                    for li in 0..l {
                        let e = -unary.at(ni, li, iy, ix) - (total - message[li]);
                        exps[li] = e;
                        max = max.max(e);
                    }
                    let mut z = 0.0;
                    for e in exps.iter_mut() {
                        *e = (*e - max).exp();
                        z += *e;
                    }
                    for li in 0..l {
                        next.set(ni, li, iy, ix, exps[li] / z);
                    }
                }
            }
        }
        q = next;
    }
    Ok(q)
}

/// Outer product of a label table and a spatial stencil:
/// compat[l', l, ky, kx] = mu[l' * labels + l] * spatial[ky * size + kx].
pub fn factor_compat(mu: &[f64], labels: usize, spatial: &[f64], size: usize) -> Result<Tensor4> {
    if mu.len() != labels * labels {
        return Err(Error::ShapeMismatch(format!(
            "label table length {} != {labels}^2",
            mu.len()
        )));
    }
    if spatial.len() != size * size {
        return Err(Error::ShapeMismatch(format!(
            "stencil length {} != {size}^2",
            spatial.len()
        )));
    }
    let mut compat = Tensor4::zeros(labels, labels, size, size);
    for lp in 0..labels {
        for l in 0..labels {
            for ky in 0..size {
                for kx in 0..size {
                    compat.set(lp, l, ky, kx, mu[lp * labels + l] * spatial[ky * size + kx]);
                }
            }
        }
    }
    Ok(compat)
}

/// Express the dense two-kernel model as windowed branches covering the whole
/// (h, w) grid: Gaussian spatial stencils folded into Potts compatibility
/// tensors, zero at the center, one branch per kernel. Feeding these to
/// `mf_infer` against the same image reproduces `dense_fullcrf_mf`.
pub fn full_crf_as_branches(
    params: &FullCrfParams,
    labels: usize,
    h: usize,
    w: usize,
    guide_channels: usize,
) -> Result<Vec<PairwiseBranch>> {
    params.validate()?;
    let size = 2 * h.max(w) - 1;
    let r = (size - 1) as isize / 2;
    let mut potts = vec![0.0; labels * labels];
    for lp in 0..labels {
        for l in 0..labels {
            if lp != l {
                potts[lp * labels + l] = 1.0;
            }
        }
    }
    let stencil = |theta: f64, weight: f64| -> Vec<f64> {
        let mut s = vec![0.0; size * size];
        for ky in 0..size {
            for kx in 0..size {
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                if dy == 0 && dx == 0 {
                    continue; // dense sum excludes j = i
                }
                let d2 = (dy * dy + dx * dx) as f64;
                s[ky * size + kx] = weight * (-d2 / (2.0 * theta * theta)).exp();
            }
        }
        s
    };
    let appearance = PairwiseBranch::new(
        size,
        1,
        factor_compat(
            &potts,
            labels,
            &stencil(params.theta_alpha, params.w1),
            size,
        )?,
        KernelSpec::Gaussian,
        vec![1.0 / params.theta_beta; guide_channels],
    )?;
    let smoothness = PairwiseBranch::new(
        size,
        1,
        factor_compat(
            &potts,
            labels,
            &stencil(params.theta_gamma, params.w2),
            size,
        )?,
        KernelSpec::Constant,
        vec![1.0; guide_channels],
    )?;
    Ok(vec![appearance, smoothness])
}

/// Default learnable branch: Potts label table times a tap-space Gaussian
/// stencil over a 5x5 window at the given dilation.
pub fn default_branch(
    labels: usize,
    dilation: usize,
    strength: f64,
    feature_scale: f64,
    guide_channels: usize,
) -> Result<PairwiseBranch> {
    let size = 5;
    let r = (size - 1) as isize / 2;
    let mut potts = vec![0.0; labels * labels];
    for lp in 0..labels {
        for l in 0..labels {
            if lp != l {
                potts[lp * labels + l] = strength;
            }
        }
    }
    let mut spatial = vec![0.0; size * size];
    for ky in 0..size {
        for kx in 0..size {
            let dy = (ky as isize - r) as f64;
            let dx = (kx as isize - r) as f64;
            spatial[ky * size + kx] = (-(dy * dy + dx * dx) / (2.0 * 1.5f64.powi(2))).exp();
        }
    }
    PairwiseBranch::new(
        size,
        dilation,
        factor_compat(&potts, labels, &spatial, size)?,
        KernelSpec::Gaussian,
        vec![feature_scale; guide_channels],
    )
}
