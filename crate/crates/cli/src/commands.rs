//! Command implementations. All fallible I/O returns Err(String) which the
//! entry point maps to exit code 2; semantic verification failures return
//! `Outcome::VerificationFailed` (exit code 1).

use std::path::{Path, PathBuf};

use pacgrid_core::crf::{
    argmax_labels, default_branch, logits_to_unary, mf_infer, CrfSpec, LabelMap, PairwiseBranch,
};
use pacgrid_core::data::{
    container_read, container_write, image_to_tensor, pgm_write, ppm_read, ppm_write,
    tensor_to_image, ContainerEntry, Image8, SynthMode,
};
use pacgrid_core::gradcheck;
use pacgrid_core::kernels::KernelSpec;
use pacgrid_core::nn::upsample::{
    load_checkpoint, run_experiment, save_checkpoint, CheckpointMeta, ExperimentConfig,
};
use pacgrid_core::nn::{evaluate, Variant};
use pacgrid_core::pac::{bilateral_filter, conv_forward, hot_swap_bound, hot_swap_init, pac_forward};
use pacgrid_core::rng::Rng;
use pacgrid_core::tensor::{Tensor4, WindowSpec};

use crate::config::RunConfig;

pub enum Outcome {
    Success,
    VerificationFailed,
}

type CmdResult = Result<Outcome, String>;

fn ctx<T, E: std::fmt::Display>(r: Result<T, E>, what: &str, path: &Path) -> Result<T, String> {
    r.map_err(|e| format!("{what} {}: {e}", path.display()))
}

pub fn gradcheck(seed: u64, cases: usize) -> CmdResult {
    // The negative-control build flips the analytic feature gradients; the
    // report must then fail, proving the comparison has teeth.
    let negate_df = cfg!(feature = "negative-control");
    let report = gradcheck::run_suites(seed, cases, negate_df);
    for entry in report.folded() {
        println!(
            "{:<12} max_rel_err {:>12.3e}  max_abs_err {:>12.3e}  ({} elements) {}",
            entry.name,
            entry.max_rel_err,
            entry.max_abs_err,
            entry.elements,
            if entry.passed() { "PASS" } else { "FAIL" }
        );
    }
    if report.all_passed() {
        println!("gradcheck: all gradients within tolerance ({cases} cases, seed {seed})");
        Ok(Outcome::Success)
    } else {
        println!("gradcheck: FAILED");
        Ok(Outcome::VerificationFailed)
    }
}

pub fn bilateral(
    input: &Path,
    output: &Path,
    spatial_sigma: f64,
    feature_sigma: f64,
    window: Option<usize>,
    config: Option<&Path>,
) -> CmdResult {
    let cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &cfg.window {
        // The classical filter is stride-1, same-padded, undilated.
        if w.stride != 1 || w.dilation != 1 || (w.padding != 0 && w.padding != (w.size - 1) / 2) {
            return Err(
                "bilateral uses stride 1, same padding and dilation 1; only window.size applies"
                    .into(),
            );
        }
    }
    let window = window
        .or_else(|| cfg.window.as_ref().map(|w| w.size))
        .unwrap_or(9);
    let img = ctx(ppm_read(input), "reading", input)?;
    let tensor = image_to_tensor(&img);
    let filtered = bilateral_filter(&tensor, spatial_sigma, feature_sigma, window, true)
        .map_err(|e| e.to_string())?;
    ctx(ppm_write(output, &tensor_to_image(&filtered)), "writing", output)?;
    println!(
        "bilateral: {}x{} window {window} spatial {spatial_sigma} feature {feature_sigma} -> {}",
        img.width,
        img.height,
        output.display()
    );
    Ok(Outcome::Success)
}

pub struct CrfRefineArgs {
    pub unary: PathBuf,
    pub guide: PathBuf,
    pub out: PathBuf,
    pub branches: Option<String>,
    pub steps: usize,
    pub compat: Option<PathBuf>,
    pub compat_strength: f64,
    pub feature_scale: f64,
    pub marginals: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

fn logits_entry(entries: &[ContainerEntry]) -> Result<Tensor4, String> {
    if let Some(e) = entries.iter().find(|e| e.name == "logits") {
        return e.to_tensor().map_err(|e| e.to_string());
    }
    let rank4: Vec<&ContainerEntry> = entries.iter().filter(|e| e.dims.len() == 4).collect();
    match rank4.as_slice() {
        [single] => single.to_tensor().map_err(|e| e.to_string()),
        [] => Err("container has no rank-4 entry to use as logits".into()),
        _ => Err("container has several rank-4 entries; name one \"logits\"".into()),
    }
}

pub fn crf_refine(args: CrfRefineArgs) -> CmdResult {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let steps = if args.steps != 5 {
        args.steps
    } else {
        cfg.mf_steps.unwrap_or(args.steps)
    };
    let strength = cfg.compat_strength.unwrap_or(args.compat_strength);
    let feature_scale = cfg.feature_scale.unwrap_or(args.feature_scale);
    let kernel = match &cfg.kernel {
        Some(k) => k.to_spec()?,
        None => KernelSpec::Gaussian,
    };

    let branch_spec: Vec<(usize, usize)> = match (&args.branches, &cfg.branches) {
        (Some(text), _) => text
            .split(',')
            .map(|tok| tok.trim().parse::<usize>().map(|d| (5usize, d)))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("invalid --branches '{text}': {e}"))?,
        (None, Some(list)) => list.iter().map(|b| (b.size, b.dilation)).collect(),
        (None, None) => vec![(5, 16), (5, 64)],
    };

    let entries = ctx(container_read(&args.unary), "reading unary", &args.unary)?;
    let logits = logits_entry(&entries)?;
    let unary = logits_to_unary(&logits);
    let labels = unary.channels();

    let guide_img = ctx(ppm_read(&args.guide), "reading guide", &args.guide)?;
    let guide = image_to_tensor(&guide_img);
    if (guide.height(), guide.width()) != (unary.height(), unary.width()) {
        return Err(format!(
            "guide {}x{} does not match unary {}x{}",
            guide.height(),
            guide.width(),
            unary.height(),
            unary.width()
        ));
    }

    let branches: Vec<PairwiseBranch> = if let Some(compat_path) = &args.compat {
        let compat_entries = ctx(container_read(compat_path), "reading compat", compat_path)?;
        branch_spec
            .iter()
            .enumerate()
            .map(|(i, &(_, dil))| {
                let name = format!("compat{i}");
                let entry = compat_entries
                    .iter()
                    .find(|e| e.name == name)
                    .ok_or_else(|| format!("compat container missing entry '{name}'"))?;
                let tensor = entry.to_tensor().map_err(|e| e.to_string())?;
                PairwiseBranch::new(
                    tensor.height(),
                    dil,
                    tensor.clone(),
                    kernel,
                    vec![feature_scale; 3],
                )
                .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?
    } else {
        branch_spec
            .iter()
            .map(|&(_, dil)| {
                default_branch(labels, dil, strength, feature_scale, 3)
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?
    };

    let spec = CrfSpec::new(branches, steps, labels).map_err(|e| e.to_string())?;
    let (marginals, label_map) = mf_infer(&unary, &guide, &spec).map_err(|e| e.to_string())?;

    write_label_map(&args.out, &label_map)?;
    if let Some(marg_path) = &args.marginals {
        ctx(
            container_write(marg_path, &[ContainerEntry::from_tensor("marginals", &marginals)]),
            "writing marginals",
            marg_path,
        )?;
    }

    let unary_labels = argmax_labels(&logits_argmax_source(&unary));
    let changed = label_map
        .data
        .iter()
        .zip(unary_labels.data.iter())
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "crf-refine: {} labels, {} steps, dilations {:?}, {} of {} pixels changed -> {}",
        labels,
        steps,
        branch_spec.iter().map(|b| b.1).collect::<Vec<_>>(),
        changed,
        label_map.data.len(),
        args.out.display()
    );
    Ok(Outcome::Success)
}

/// Unary energies are positive; the per-pixel argmax of the classifier is the
/// argmin of the energy, i.e. the argmax of its negation.
fn logits_argmax_source(unary: &Tensor4) -> Tensor4 {
    unary.scale(-1.0)
}

fn write_label_map(path: &Path, labels: &LabelMap) -> Result<(), String> {
    let img = Image8::new(labels.w, labels.h, 1, labels.data.clone()).map_err(|e| e.to_string())?;
    ctx(pgm_write(path, &img), "writing labels", path)
}

pub struct UpsampleTrainArgs {
    pub mode: String,
    pub factor: usize,
    pub variant: String,
    pub out: PathBuf,
    pub seed: u64,
    pub scenes: Option<usize>,
    pub size: Option<usize>,
    pub config: Option<PathBuf>,
}

fn parse_mode(mode: &str) -> Result<SynthMode, String> {
    match mode {
        "depth" => Ok(SynthMode::Depth),
        "flow" => Ok(SynthMode::Flow),
        other => Err(format!("unknown mode '{other}', expected depth or flow")),
    }
}

fn parse_variant(variant: &str) -> Result<Variant, String> {
    match variant {
        "lite" => Ok(Variant::Lite),
        "standard" => Ok(Variant::Standard),
        other => Err(format!("unknown variant '{other}', expected lite or standard")),
    }
}

pub fn upsample_train(args: UpsampleTrainArgs) -> CmdResult {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mode = parse_mode(&args.mode)?;
    let variant = parse_variant(&args.variant)?;
    let mut exp = ExperimentConfig::new(mode, args.factor, variant.clone(), cfg.seed.unwrap_or(args.seed));
    if let Some(s) = args.scenes.or(cfg.scenes) {
        exp.scene_count = s;
    }
    if let Some(h) = cfg.held_out {
        exp.held_out = h;
    }
    if let Some(s) = args.size.or(cfg.size) {
        exp.scene_size = s;
    }
    if let Some(phases) = &cfg.schedule {
        exp.schedule.phases = phases.iter().map(|p| (p.lr, p.steps)).collect();
    }
    if let Some(b) = cfg.batch {
        exp.schedule.batch = b;
    }
    if let Some(c) = cfg.crop {
        exp.schedule.crop = c;
    }

    let started = std::time::Instant::now();
    let (mut net, report) = run_experiment(&exp).map_err(|e| e.to_string())?;
    let meta = CheckpointMeta {
        mode,
        factor: exp.factor,
        variant,
        seed: exp.seed,
        scene_count: exp.scene_count,
        held_out: exp.held_out,
        scene_size: exp.scene_size,
    };
    ctx(save_checkpoint(&args.out, &mut net, &meta), "writing checkpoint", &args.out)?;
    println!(
        "upsample-train: {} x{} {} | {} steps in {:.0}s | held-out {} {:.5} vs bilinear {:.5} -> {}",
        args.mode,
        exp.factor,
        args.variant,
        report.train.losses.len(),
        started.elapsed().as_secs_f64(),
        report.metric_name,
        report.net_metric,
        report.baseline_metric,
        args.out.display()
    );
    Ok(Outcome::Success)
}

pub fn upsample_eval(ckpt: &Path, report_path: &Path) -> CmdResult {
    let (mut net, meta) = ctx(load_checkpoint(ckpt), "loading checkpoint", ckpt)?;
    let scenes = pacgrid_core::data::synth_generate(
        meta.seed,
        meta.scene_count,
        meta.scene_size,
        meta.mode,
    );
    let split = meta.scene_count - meta.held_out;
    let (net_metric, baseline_metric) =
        evaluate(&mut net, &scenes[split..], meta.mode).map_err(|e| e.to_string())?;
    let metric = match meta.mode {
        SynthMode::Depth => "rmse",
        SynthMode::Flow => "epe",
    };
    let json = serde_json::json!({
        "mode": match meta.mode { SynthMode::Depth => "depth", SynthMode::Flow => "flow" },
        "factor": meta.factor,
        "metric": metric,
        "held_out_scenes": meta.held_out,
        "net": net_metric,
        "bilinear": baseline_metric,
    });
    ctx(
        std::fs::write(report_path, serde_json::to_string_pretty(&json).unwrap()),
        "writing report",
        report_path,
    )?;
    println!(
        "upsample-eval: {metric} {net_metric:.5} vs bilinear {baseline_metric:.5} -> {}",
        report_path.display()
    );
    Ok(Outcome::Success)
}

pub fn swap_check(scale: f64, seed: u64) -> CmdResult {
    let mut rng = Rng::new(seed);
    let win = WindowSpec::new(3, 1, 1, 1).unwrap();
    let channels = [3usize, 8, 8, 4];
    let weights: Vec<Tensor4> = channels
        .windows(2)
        .map(|cc| {
            Tensor4::from_vec(cc[1], cc[0], 3, 3, rng.normal_vec(cc[1] * cc[0] * 9))
                .unwrap()
                .scale(0.3)
        })
        .collect();
    let biases: Vec<Vec<f64>> = channels[1..].iter().map(|&c| rng.normal_vec(c)).collect();
    let input = Tensor4::from_vec(1, 3, 12, 12, rng.normal_vec(3 * 144)).unwrap();
    let mut features = Tensor4::from_vec(1, 2, 12, 12, rng.normal_vec(2 * 144)).unwrap();
    for y in 0..12 {
        for x in 0..12 {
            let norm: f64 = (0..2)
                .map(|c| features.at(0, c, y, x).powi(2))
                .sum::<f64>()
                .sqrt();
            for c in 0..2 {
                let v = features.at(0, c, y, x) / norm;
                features.set(0, c, y, x, v);
            }
        }
    }

    let relu = |t: &Tensor4| {
        let mut out = t.clone();
        for v in out.data.iter_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        out
    };
    let run = |feature_scale: Option<f64>| -> (Tensor4, Vec<Tensor4>) {
        let mut act = input.clone();
        let mut acts = vec![act.clone()];
        for (i, (w, b)) in weights.iter().zip(biases.iter()).enumerate() {
            act = match feature_scale {
                None => conv_forward(&act, w, Some(b), &win).unwrap(),
                Some(fs) => {
                    let (params, fsv) = hot_swap_init(w, Some(b), win, fs).unwrap();
                    pac_forward(&act, &fsv.apply(&features), &params).unwrap()
                }
            };
            if i + 1 < weights.len() {
                act = relu(&act);
            }
            acts.push(act.clone());
        }
        (act, acts)
    };

    let (conv_out, conv_acts) = run(None);
    let zero_dev = run(Some(0.0)).0.max_abs_diff(&conv_out);
    let scaled_dev = run(Some(scale)).0.max_abs_diff(&conv_out);

    // Stack bound: each layer adds its own kernel deviation on top of the
    // propagated input error; ReLU is 1-Lipschitz.
    let mut bound = 0.0f64;
    for (k, w) in weights.iter().enumerate() {
        let (c_out, c_in, kh, kw) = w.dims();
        let mut l1: f64 = 0.0;
        for o in 0..c_out {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for ky in 0..kh {
                    for kx in 0..kw {
                        acc += w.at(o, ci, ky, kx).abs();
                    }
                }
            }
            l1 = l1.max(acc);
        }
        let x_inf = conv_acts[k].data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        bound = l1 * bound + hot_swap_bound(w, x_inf, 1.0, scale);
    }

    println!("swap-check: 3-layer stack, seed {seed}");
    println!("  deviation at feature scale 0:      {zero_dev}");
    println!("  deviation at feature scale {scale}: {scaled_dev:.6e}");
    println!("  analytic bound at that scale:       {bound:.6e}");
    if zero_dev != 0.0 {
        println!("swap-check: FAILED — scale 0 must reproduce the convolution bit for bit");
        return Ok(Outcome::VerificationFailed);
    }
    Ok(Outcome::Success)
}
