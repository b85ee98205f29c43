//! Joint-upsampling network builder, the desk-scale experiment runner, and
//! checkpoint save/load.
//!
//! The network has three branches. The encoder convolves the low-resolution
//! signal, the guidance branch convolves the high-resolution guide, and the
//! decoder applies one transposed pixel-adaptive stage per doubling followed
//! by plain convolutions. All filters are 5x5 and every layer except the final
//! convolution is followed by ReLU. The guidance output is divided equally in
//! the channel dimension across the transposed stages.

use std::path::{Path, PathBuf};

use crate::data::{
    container_read, container_write, synth_generate, ContainerEntry, SynthMode,
};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::nn::{
    evaluate, train, ConvLayer, DecoderStage, Network, PacTLayer, TrainReport, TrainSchedule,
};
use crate::pac::PacParams;
use crate::rng::Rng;
use crate::tensor::{Tensor4, WindowSpec};

/// Channel layout of the upsampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    /// Reduced widths, parameter count comparable to plain concat baselines.
    Lite,
    /// Uniform 32-channel widths.
    Standard,
    /// Explicit widths: encoder convs, guidance convs, transposed stages,
    /// decoder convs before the final projection.
    Custom {
        encoder: Vec<usize>,
        guidance: Vec<usize>,
        pact: Vec<usize>,
        head: Vec<usize>,
    },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Lite => "lite",
            Variant::Standard => "standard",
            Variant::Custom { .. } => "custom",
        }
    }
}

/// How the low-resolution samples relate to the fine grid; controls the phase
/// of the pass-through initialization only (training can move it either way).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitAlignment {
    /// low[u] sits at fine coordinate u*m (nearest-neighbor reductions).
    #[default]
    SampleAligned,
    /// low[u] sits at the cell center u*m + (m-1)/2 (box/bilinear reductions).
    CenterAligned,
}

/// Upsampler configuration.
#[derive(Debug, Clone)]
pub struct UpsamplerSpec {
    /// Total upsampling factor, a power of two in {4, 8, 16}.
    pub factor: usize,
    pub variant: Variant,
    /// Channels of the low-resolution signal (1 for depth, 2 for flow).
    pub signal_channels: usize,
    /// Channels of the guide image (3 for RGB).
    pub guide_channels: usize,
    pub init_alignment: InitAlignment,
}

const FILTER: usize = 5;

/// Channel widths per branch: (encoder, guidance, transposed stages, head).
type Widths = (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>);

fn widths(spec: &UpsamplerSpec) -> Result<Widths> {
    let table = |f: usize, v: &Variant| -> Option<Widths> {
        match (v, f) {
            (Variant::Lite, 4) => Some((vec![12, 16, 22], vec![12, 22, 24], vec![12, 16], vec![22])),
            (Variant::Lite, 8) => Some((
                vec![12, 16, 16],
                vec![12, 16, 36],
                vec![12, 16, 16],
                vec![20],
            )),
            (Variant::Lite, 16) => Some((
                vec![8, 16, 16],
                vec![8, 16, 40],
                vec![8, 16, 16, 16],
                vec![16],
            )),
            (Variant::Standard, 4) => Some((
                vec![32, 32, 32],
                vec![32, 32, 32],
                vec![32, 32],
                vec![32],
            )),
            (Variant::Standard, 8) => Some((
                vec![32, 32, 32],
                vec![32, 32, 48],
                vec![32, 32, 32],
                vec![32],
            )),
            (Variant::Standard, 16) => Some((
                vec![32, 32, 32],
                vec![32, 32, 64],
                vec![32, 32, 32, 32],
                vec![32],
            )),
            _ => None,
        }
    };
    let n_pact = match spec.factor {
        4 => 2,
        8 => 3,
        16 => 4,
        other => {
            return Err(Error::InvalidParam(format!(
                "upsampling factor {other} must be one of 4, 8, 16"
            )))
        }
    };
    let (encoder, guidance, pact, head) = match &spec.variant {
        Variant::Custom {
            encoder,
            guidance,
            pact,
            head,
        } => (encoder.clone(), guidance.clone(), pact.clone(), head.clone()),
        v => table(spec.factor, v).expect("built-in width table covers 4/8/16"),
    };
    if pact.len() != n_pact {
        return Err(Error::InvalidParam(format!(
            "{} transposed stages required for factor {}, got {}",
            n_pact,
            spec.factor,
            pact.len()
        )));
    }
    let guide_out = *guidance.last().ok_or_else(|| {
        Error::InvalidParam("guidance branch needs at least one layer".into())
    })?;
    if guide_out % n_pact != 0 {
        return Err(Error::InvalidParam(format!(
            "guidance output channels {guide_out} not divisible by {n_pact} transposed stages"
        )));
    }
    if encoder.is_empty() {
        return Err(Error::InvalidParam("encoder branch needs at least one layer".into()));
    }
    Ok((encoder, guidance, pact, head))
}

fn he_uniform(rng: &mut Rng, c_out: usize, c_in: usize, s: usize) -> Tensor4 {
    let bound = (6.0 / (c_in * s * s) as f64).sqrt();
    let data = (0..c_out * c_in * s * s)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor4::from_vec(c_out, c_in, s, s, data).unwrap()
}

/// Fraction of the He bound used as noise on top of the pass-through
/// initialization of the signal path.
const PASSTHROUGH_NOISE: f64 = 0.05;

/// Init gain of the last guidance convolution.
const GUIDANCE_GAIN: f64 = 0.2;

/// Signal-path initialization: damped He noise plus a signed pass-through.
/// Output channels form (+x, -x) pairs at the stencil, so the signal survives
/// every ReLU as relu(x) - relu(-x); pair q reads input pair q modulo the
/// input pair count (raw inputs count as one "pair" per channel). The tiny
/// step budget then starts from a working upsampler instead of noise.
fn passthrough_weights(
    rng: &mut Rng,
    c_out: usize,
    c_in: usize,
    stencil: &[f64],
    raw_input: bool,
) -> Tensor4 {
    let s = FILTER;
    let mut w = he_uniform(rng, c_out, c_in, s).scale(PASSTHROUGH_NOISE);
    if !c_out.is_multiple_of(2) || (!raw_input && !c_in.is_multiple_of(2)) {
        return w; // pairing impossible; plain (damped) He
    }
    let pairs_in = if raw_input { c_in } else { c_in / 2 };
    for q in 0..c_out / 2 {
        let p = q % pairs_in;
        for (tap, &b) in stencil.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let (ky, kx) = (tap / s, tap % s);
            if raw_input {
                // Raw channel p feeds the pair directly.
                let i = w.idx(2 * q, p, ky, kx);
                w.data[i] += b;
                let i = w.idx(2 * q + 1, p, ky, kx);
                w.data[i] -= b;
            } else {
                // Reconstruct x = relu(x) - relu(-x) from the input pair.
                for (src, sign) in [(2 * p, 1.0), (2 * p + 1, -1.0)] {
                    let i = w.idx(2 * q, src, ky, kx);
                    w.data[i] += sign * b;
                    let i = w.idx(2 * q + 1, src, ky, kx);
                    w.data[i] -= sign * b;
                }
            }
        }
    }
    w
}

/// Center-tap delta stencil.
fn delta_stencil() -> Vec<f64> {
    let mut s = vec![0.0; FILTER * FILTER];
    s[(FILTER / 2) * FILTER + FILTER / 2] = 1.0;
    s
}

/// Separable tent stencil that turns the zero-inserted stride-2 grid back
/// into a bilinear interpolation. The center-aligned variant shifts each
/// doubling by half a pixel; across log2(m) stages the shifts compound to the
/// (m-1)/2 offset of box-style reductions.
fn tent_stencil(alignment: InitAlignment) -> Vec<f64> {
    let t = match alignment {
        InitAlignment::SampleAligned => [0.0, 0.5, 1.0, 0.5, 0.0],
        InitAlignment::CenterAligned => [0.25, 0.75, 0.75, 0.25, 0.0],
    };
    let mut s = vec![0.0; FILTER * FILTER];
    for ky in 0..FILTER {
        for kx in 0..FILTER {
            s[ky * FILTER + kx] = t[ky] * t[kx];
        }
    }
    s
}

/// Final projection: rebuild each raw channel from its pass-through pair.
fn head_weights(rng: &mut Rng, c_out: usize, c_in: usize) -> Tensor4 {
    let s = FILTER;
    let mut w = he_uniform(rng, c_out, c_in, s).scale(PASSTHROUGH_NOISE);
    if !c_in.is_multiple_of(2) || c_in / 2 < c_out {
        return w;
    }
    let r = FILTER / 2;
    for o in 0..c_out {
        let i = w.idx(o, 2 * o, r, r);
        w.data[i] += 1.0;
        let i = w.idx(o, 2 * o + 1, r, r);
        w.data[i] -= 1.0;
    }
    w
}

fn conv_layer(rng: &mut Rng, c_in: usize, c_out: usize, relu: bool) -> ConvLayer {
    let win = WindowSpec::new(FILTER, 1, (FILTER - 1) / 2, 1).unwrap();
    ConvLayer::new(he_uniform(rng, c_out, c_in, FILTER), vec![0.0; c_out], win, relu)
}

fn signal_conv_layer(
    rng: &mut Rng,
    c_in: usize,
    c_out: usize,
    relu: bool,
    raw_input: bool,
) -> ConvLayer {
    let win = WindowSpec::new(FILTER, 1, (FILTER - 1) / 2, 1).unwrap();
    let weights = if relu {
        passthrough_weights(rng, c_out, c_in, &delta_stencil(), raw_input)
    } else {
        head_weights(rng, c_out, c_in)
    };
    ConvLayer::new(weights, vec![0.0; c_out], win, relu)
}

fn pact_layer(rng: &mut Rng, c_in: usize, c_out: usize, alignment: InitAlignment) -> PacTLayer {
    // 5x5, stride-2 transposed geometry: padding 2 plus output padding 1
    // doubles the grid exactly.
    let win = WindowSpec::new(FILTER, 1, 2, 1).unwrap();
    let params = PacParams::new(
        passthrough_weights(rng, c_out, c_in, &tent_stencil(alignment), false),
        Some(vec![0.0; c_out]),
        win,
        KernelSpec::Gaussian,
    )
    .unwrap();
    PacTLayer::new(params, 2, 1, true)
}

/// Build an upsampler with He-uniform weight initialization from `seed`.
pub fn build_upsampler(spec: &UpsamplerSpec, seed: u64) -> Result<Network> {
    let (enc_w, guid_w, pact_w, head_w) = widths(spec)?;
    let mut rng = Rng::new(seed);

    let mut encoder = Vec::new();
    let mut c = spec.signal_channels;
    for (i, &w) in enc_w.iter().enumerate() {
        encoder.push(signal_conv_layer(&mut rng, c, w, true, i == 0));
        c = w;
    }
    let enc_out = c;

    let mut guidance = Vec::new();
    let mut c = spec.guide_channels;
    for (i, &w) in guid_w.iter().enumerate() {
        let mut layer = conv_layer(&mut rng, c, w, true);
        if i + 1 == guid_w.len() {
            // Small initial adapting features keep the kernels near 1, so the
            // pass-through start is not attenuated across guide edges; the
            // modulation grows as training scales these weights up.
            layer.weights = layer.weights.scale(GUIDANCE_GAIN);
        }
        guidance.push(layer);
        c = w;
    }

    let mut decoder = Vec::new();
    let mut c = enc_out;
    for &w in &pact_w {
        decoder.push(DecoderStage::PacT(pact_layer(&mut rng, c, w, spec.init_alignment)));
        c = w;
    }
    for &w in &head_w {
        decoder.push(DecoderStage::Conv(signal_conv_layer(&mut rng, c, w, true, false)));
        c = w;
    }
    decoder.push(DecoderStage::Conv(signal_conv_layer(
        &mut rng,
        c,
        spec.signal_channels,
        false,
        false,
    )));

    Ok(Network::assemble(
        encoder,
        guidance,
        decoder,
        spec.factor,
        spec.signal_channels,
        spec.guide_channels,
    ))
}

/// Init alignment matching each mode's downsampling: nearest reductions are
/// sample-aligned, bilinear reductions center-aligned.
pub fn mode_alignment(mode: SynthMode) -> InitAlignment {
    match mode {
        SynthMode::Depth => InitAlignment::SampleAligned,
        SynthMode::Flow => InitAlignment::CenterAligned,
    }
}

/// Full desk-scale experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: SynthMode,
    pub factor: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Scenes generated; the last `held_out` are never trained on.
    pub scene_count: usize,
    pub held_out: usize,
    pub scene_size: usize,
    pub schedule: TrainSchedule,
}

impl ExperimentConfig {
    pub fn new(mode: SynthMode, factor: usize, variant: Variant, seed: u64) -> Self {
        ExperimentConfig {
            mode,
            factor,
            variant,
            seed,
            scene_count: 250,
            held_out: 50,
            scene_size: 64,
            schedule: TrainSchedule::default(),
        }
    }
}

/// Outcome of one experiment: held-out metric for the trained network and the
/// bilinear baseline, plus the loss curve.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub metric_name: &'static str,
    pub net_metric: f64,
    pub baseline_metric: f64,
    pub train: TrainReport,
}

/// Generate data, train, and evaluate on the held-out split.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Network, ExperimentReport)> {
    if cfg.held_out >= cfg.scene_count {
        return Err(Error::InvalidParam(
            "held-out split must leave at least one training scene".into(),
        ));
    }
    let spec = UpsamplerSpec {
        factor: cfg.factor,
        variant: cfg.variant.clone(),
        signal_channels: cfg.mode.target_channels(),
        guide_channels: 3,
        init_alignment: mode_alignment(cfg.mode),
    };
    let scenes = synth_generate(cfg.seed, cfg.scene_count, cfg.scene_size, cfg.mode);
    let split = cfg.scene_count - cfg.held_out;
    let mut net = build_upsampler(&spec, cfg.seed)?;
    let report = train(&mut net, &scenes[..split], cfg.mode, &cfg.schedule, cfg.seed)?;
    let (net_metric, baseline_metric) = evaluate(&mut net, &scenes[split..], cfg.mode)?;
    Ok((
        net,
        ExperimentReport {
            metric_name: match cfg.mode {
                SynthMode::Depth => "rmse",
                SynthMode::Flow => "epe",
            },
            net_metric,
            baseline_metric,
            train: report,
        },
    ))
}

/// Metadata stored in the checkpoint manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub mode: SynthMode,
    pub factor: usize,
    pub variant: Variant,
    pub seed: u64,
    pub scene_count: usize,
    pub held_out: usize,
    pub scene_size: usize,
}

/// Manifest path that accompanies a checkpoint container.
pub fn manifest_path(ckpt: &Path) -> PathBuf {
    let mut os = ckpt.as_os_str().to_os_string();
    os.push(".manifest");
    PathBuf::from(os)
}

fn layer_lines(net: &mut Network) -> Vec<String> {
    let mut lines = Vec::new();
    let conv_line = |branch: &str, l: &ConvLayer| {
        format!(
            "layer {branch} conv {} {} {} {} {}",
            l.in_channels(),
            l.out_channels(),
            l.win.size,
            l.win.stride,
            l.win.dilation
        )
    };
    for l in &net.encoder {
        lines.push(conv_line("encoder", l));
    }
    for l in &net.guidance {
        lines.push(conv_line("guidance", l));
    }
    for stage in &net.decoder {
        match stage {
            DecoderStage::PacT(l) => lines.push(format!(
                "layer decoder pact {} {} {} {} {}",
                l.in_channels(),
                l.out_channels(),
                l.params.win.size,
                l.m,
                l.params.win.dilation
            )),
            DecoderStage::Conv(l) => lines.push(conv_line("decoder", l)),
        }
    }
    lines
}

/// Write the parameter container plus a text manifest describing the layers
/// (one per line: kind, in/out channels, filter size, stride, dilation).
pub fn save_checkpoint(path: &Path, net: &mut Network, meta: &CheckpointMeta) -> Result<()> {
    let entries: Vec<ContainerEntry> = net
        .slots()
        .iter()
        .map(|s| ContainerEntry {
            name: s.name.clone(),
            dtype: crate::data::Dtype::F64,
            dims: s.dims.clone(),
            values: s.value.clone(),
        })
        .collect();
    container_write(path, &entries)?;
    let mode = match meta.mode {
        SynthMode::Depth => "depth",
        SynthMode::Flow => "flow",
    };
    let mut manifest = String::new();
    manifest.push_str("pacgrid-upsampler 1\n");
    manifest.push_str(&format!("mode {mode}\n"));
    manifest.push_str(&format!("factor {}\n", meta.factor));
    manifest.push_str(&format!("variant {}\n", meta.variant.name()));
    manifest.push_str(&format!("seed {}\n", meta.seed));
    manifest.push_str(&format!("scenes {}\n", meta.scene_count));
    manifest.push_str(&format!("held-out {}\n", meta.held_out));
    manifest.push_str(&format!("size {}\n", meta.scene_size));
    for line in layer_lines(net) {
        manifest.push_str(&line);
        manifest.push('\n');
    }
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

fn manifest_field<'a>(lines: &'a [&str], key: &str) -> Result<&'a str> {
    lines
        .iter()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .ok_or_else(|| Error::InvalidParam(format!("manifest missing '{key}' line")))
}

/// Rebuild the network described by a checkpoint manifest and load its
/// parameters. Layer lines and parameter shapes must match exactly.
pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let manifest = std::fs::read_to_string(manifest_path(path))?;
    let lines: Vec<&str> = manifest.lines().collect();
    if lines.first() != Some(&"pacgrid-upsampler 1") {
        return Err(Error::InvalidParam(
            "manifest header is not 'pacgrid-upsampler 1'".into(),
        ));
    }
    let mode = match manifest_field(&lines, "mode")? {
        "depth" => SynthMode::Depth,
        "flow" => SynthMode::Flow,
        other => {
            return Err(Error::InvalidParam(format!("unknown mode '{other}'")))
        }
    };
    let variant = match manifest_field(&lines, "variant")? {
        "lite" => Variant::Lite,
        "standard" => Variant::Standard,
        other => {
            return Err(Error::InvalidParam(format!(
                "cannot rebuild '{other}' variant from a manifest"
            )))
        }
    };
    let parse_num = |key: &str| -> Result<u64> {
        manifest_field(&lines, key)?
            .parse::<u64>()
            .map_err(|_| Error::InvalidParam(format!("invalid '{key}' in manifest")))
    };
    let meta = CheckpointMeta {
        mode,
        factor: parse_num("factor")? as usize,
        variant,
        seed: parse_num("seed")?,
        scene_count: parse_num("scenes")? as usize,
        held_out: parse_num("held-out")? as usize,
        scene_size: parse_num("size")? as usize,
    };
    let spec = UpsamplerSpec {
        factor: meta.factor,
        variant: meta.variant.clone(),
        signal_channels: meta.mode.target_channels(),
        guide_channels: 3,
        init_alignment: InitAlignment::default(),
    };
    let mut net = build_upsampler(&spec, meta.seed)?;

    // The stored layer lines must match the rebuilt architecture.
    let want: Vec<&str> = lines
        .iter()
        .copied()
        .filter(|l| l.starts_with("layer "))
        .collect();
    let got = layer_lines(&mut net);
    if want != got {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint manifest layers do not match the rebuilt network:\n{}\nvs\n{}",
            want.join("\n"),
            got.join("\n")
        )));
    }

    let entries = container_read(path)?;
    for slot in net.slots() {
        let entry = entries
            .iter()
            .find(|e| e.name == slot.name)
            .ok_or_else(|| {
                Error::ShapeMismatch(format!("checkpoint missing parameter '{}'", slot.name))
            })?;
        if entry.dims != slot.dims {
            return Err(Error::ShapeMismatch(format!(
                "parameter '{}' dims {:?} != expected {:?}",
                slot.name, entry.dims, slot.dims
            )));
        }
        slot.value.copy_from_slice(&entry.values);
    }
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lite_4x_channel_table() {
        let spec = UpsamplerSpec {
            factor: 4,
            variant: Variant::Lite,
            signal_channels: 1,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        let net = build_upsampler(&spec, 1).unwrap();
        assert_eq!(net.n_pact(), 2);
        let enc: Vec<usize> = net.encoder.iter().map(|l| l.out_channels()).collect();
        assert_eq!(enc, vec![12, 16, 22]);
        let guid: Vec<usize> = net.guidance.iter().map(|l| l.out_channels()).collect();
        assert_eq!(guid, vec![12, 22, 24]);
        let dec: Vec<usize> = net
            .decoder
            .iter()
            .map(|s| match s {
                DecoderStage::PacT(l) => l.out_channels(),
                DecoderStage::Conv(l) => l.out_channels(),
            })
            .collect();
        assert_eq!(dec, vec![12, 16, 22, 1]);
        assert_eq!(net.split_channels(), 12);
    }

    #[test]
    fn lite_16x_has_four_stages() {
        let spec = UpsamplerSpec {
            factor: 16,
            variant: Variant::Lite,
            signal_channels: 1,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        let net = build_upsampler(&spec, 1).unwrap();
        assert_eq!(net.n_pact(), 4);
        assert_eq!(net.split_channels(), 10);
    }

    #[test]
    fn invalid_factor_rejected() {
        let spec = UpsamplerSpec {
            factor: 6,
            variant: Variant::Lite,
            signal_channels: 1,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        assert!(build_upsampler(&spec, 1).is_err());
    }

    #[test]
    fn custom_tiny_net_runs_on_16x16() {
        let spec = UpsamplerSpec {
            factor: 4,
            variant: Variant::Custom {
                encoder: vec![4],
                guidance: vec![4, 4],
                pact: vec![4, 4],
                head: vec![],
            },
            signal_channels: 2,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        let mut net = build_upsampler(&spec, 2).unwrap();
        let low = Tensor4::full(1, 2, 4, 4, 0.1);
        let guide = Tensor4::full(1, 3, 16, 16, 0.2);
        let out = net.forward(&low, &guide).unwrap();
        assert_eq!(out.dims(), (1, 2, 16, 16));
    }

    #[test]
    fn indivisible_guidance_rejected() {
        let spec = UpsamplerSpec {
            factor: 4,
            variant: Variant::Custom {
                encoder: vec![4],
                guidance: vec![4, 5],
                pact: vec![4, 4],
                head: vec![],
            },
            signal_channels: 1,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        assert!(build_upsampler(&spec, 1).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let dir = std::env::temp_dir().join("pacgrid-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.pact");
        let spec = UpsamplerSpec {
            factor: 4,
            variant: Variant::Lite,
            signal_channels: 1,
            guide_channels: 3,
            init_alignment: InitAlignment::default(),
        };
        let mut net = build_upsampler(&spec, 42).unwrap();
        let meta = CheckpointMeta {
            mode: SynthMode::Depth,
            factor: 4,
            variant: Variant::Lite,
            seed: 42,
            scene_count: 10,
            held_out: 2,
            scene_size: 32,
        };
        save_checkpoint(&path, &mut net, &meta).unwrap();
        let (mut back, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        let a: Vec<Vec<f64>> = net.slots().iter().map(|s| s.value.clone()).collect();
        let b: Vec<Vec<f64>> = back.slots().iter().map(|s| s.value.clone()).collect();
        assert_eq!(a, b);

        // Corrupt the manifest layer table: load must fail.
        let mpath = manifest_path(&path);
        let manifest = std::fs::read_to_string(&mpath).unwrap();
        let corrupted = manifest.replace("conv 1 12", "conv 1 13");
        std::fs::write(&mpath, corrupted).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
