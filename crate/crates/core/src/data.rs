//! File formats and synthetic paired data.
//!
//! Binary netpbm images (P6/P5), Middlebury-style .flo flow files, a simple
//! named-tensor container, deterministic synthetic scenes for joint
//! upsampling, and the two downsampling operators. All multi-byte integers are
//! little-endian; every reader reports the byte offset of a malformed or
//! truncated field.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{resize_bilinear, Tensor4};

/// Raw 8-bit image: `channels` is 3 (RGB) or 1 (gray).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image8 {
            width,
            height,
            channels,
            data,
        })
    }
}

/// Interleaved 8-bit image -> (1, channels, h, w) tensor scaled to [0, 1].
pub fn image_to_tensor(img: &Image8) -> Tensor4 {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut t = Tensor4::zeros(1, c, h, w);
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                let v = img.data[(y * w + x) * c + ci] as f64 / 255.0;
                t.set(0, ci, y, x, v);
            }
        }
    }
    t
}

/// (1, channels, h, w) tensor in [0, 1] -> interleaved 8-bit image, rounding
/// and clamping out-of-range values.
pub fn tensor_to_image(t: &Tensor4) -> Image8 {
    let (_, c, h, w) = t.dims();
    let mut data = vec![0u8; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                let v = (t.at(0, ci, y, x) * 255.0).round().clamp(0.0, 255.0);
                data[(y * w + x) * c + ci] = v as u8;
            }
        }
    }
    Image8 {
        width: w,
        height: h,
        channels: c,
        data,
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn i32_le(&mut self, what: &str) -> Result<i32> {
        let b = self.take(4, what)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_le(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Next ASCII token, skipping whitespace and '#' comment lines.
    fn pnm_token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return Err(self.error("unexpected end of header"));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn pnm_number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let tok = self.pnm_token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or(Error::Parse {
                offset: start,
                message: format!("invalid {what}"),
            })
    }
}

fn pnm_read(bytes: &[u8], magic: &[u8], channels: usize) -> Result<Image8> {
    let mut r = ByteReader::new(bytes);
    let got = r.take(2, "magic")?;
    if got != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let width = r.pnm_number("width")?;
    let height = r.pnm_number("height")?;
    let maxval_at = r.pos;
    let maxval = r.pnm_number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("unsupported maxval {maxval}, expected 255"),
        });
    }
    // Exactly one whitespace byte separates the header from raster data.
    r.take(1, "header separator")?;
    let data = r.take(width * height * channels, "pixel data")?.to_vec();
    Image8::new(width, height, channels, data)
}

fn pnm_write(path: &Path, img: &Image8, magic: &str) -> Result<()> {
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    out.extend_from_slice(&img.data);
    fs::write(path, out)?;
    Ok(())
}

/// Read a binary P6 RGB image.
pub fn ppm_read(path: &Path) -> Result<Image8> {
    pnm_read(&fs::read(path)?, b"P6", 3)
}

/// Write a binary P6 RGB image (maxval 255).
pub fn ppm_write(path: &Path, img: &Image8) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "P6 needs 3 channels, got {}",
            img.channels
        )));
    }
    pnm_write(path, img, "P6")
}

/// Read a binary P5 grayscale image.
pub fn pgm_read(path: &Path) -> Result<Image8> {
    pnm_read(&fs::read(path)?, b"P5", 1)
}

/// Write a binary P5 grayscale image (maxval 255).
pub fn pgm_write(path: &Path, img: &Image8) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "P5 needs 1 channel, got {}",
            img.channels
        )));
    }
    pnm_write(path, img, "P5")
}

/// Magic float at the head of a .flo file; its little-endian bytes read "PIEH".
pub const FLO_MAGIC: f32 = 202021.25;

/// Read a .flo optical-flow file into a (1, 2, h, w) tensor (u then v).
pub fn flo_read(path: &Path) -> Result<Tensor4> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.f32_le("magic")?;
    if magic != FLO_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad flo magic {magic}, expected {FLO_MAGIC}"),
        });
    }
    let w_at = r.pos;
    let width = r.i32_le("width")?;
    let h_at = r.pos;
    let height = r.i32_le("height")?;
    if width <= 0 {
        return Err(Error::Parse {
            offset: w_at,
            message: format!("non-positive width {width}"),
        });
    }
    if height <= 0 {
        return Err(Error::Parse {
            offset: h_at,
            message: format!("non-positive height {height}"),
        });
    }
    let (w, h) = (width as usize, height as usize);
    let mut t = Tensor4::zeros(1, 2, h, w);
    for y in 0..h {
        for x in 0..w {
            let u = r.f32_le("flow u")? as f64;
            let v = r.f32_le("flow v")? as f64;
            t.set(0, 0, y, x, u);
            t.set(0, 1, y, x, v);
        }
    }
    Ok(t)
}

/// Write a (1, 2, h, w) flow tensor as a .flo file (interleaved u, v in f32).
pub fn flo_write(path: &Path, flow: &Tensor4) -> Result<()> {
    let (n, c, h, w) = flow.dims();
    if n != 1 || c != 2 {
        return Err(Error::ShapeMismatch(format!(
            "flow tensor must be (1, 2, h, w), got {:?}",
            flow.dims()
        )));
    }
    let mut out = Vec::with_capacity(12 + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&(flow.at(0, 0, y, x) as f32).to_le_bytes());
            out.extend_from_slice(&(flow.at(0, 1, y, x) as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Element type of a container entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

/// One named tensor inside a container file. Values are held as f64 in
/// memory; `dtype` controls the on-disk element width.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerEntry {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub values: Vec<f64>,
}

impl ContainerEntry {
    pub fn from_tensor(name: &str, t: &Tensor4) -> Self {
        let (n, c, h, w) = t.dims();
        ContainerEntry {
            name: name.to_string(),
            dtype: Dtype::F64,
            dims: vec![n as u64, c as u64, h as u64, w as u64],
            values: t.data.clone(),
        }
    }

    pub fn from_vec(name: &str, values: &[f64]) -> Self {
        ContainerEntry {
            name: name.to_string(),
            dtype: Dtype::F64,
            dims: vec![values.len() as u64],
            values: values.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor4> {
        if self.dims.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "entry '{}' has rank {}, expected 4",
                self.name,
                self.dims.len()
            )));
        }
        Tensor4::from_vec(
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.dims[2] as usize,
            self.dims[3] as usize,
            self.values.clone(),
        )
    }
}

const CONTAINER_MAGIC: &[u8; 4] = b"PACT";
const CONTAINER_VERSION: u32 = 1;

/// Write named tensors to a container file.
pub fn container_write(path: &Path, entries: &[ContainerEntry]) -> Result<()> {
    let mut names = std::collections::HashSet::new();
    for e in entries {
        if !names.insert(e.name.as_str()) {
            return Err(Error::InvalidParam(format!(
                "duplicate container entry name '{}'",
                e.name
            )));
        }
        let count: u64 = e.dims.iter().product();
        if count as usize != e.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "entry '{}': {} values but dims {:?}",
                e.name,
                e.values.len(),
                e.dims
            )));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.dtype.tag());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match e.dtype {
            Dtype::F32 => {
                for v in &e.values {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for v in &e.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a container file.
pub fn container_read(path: &Path) -> Result<Vec<ContainerEntry>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.take(4, "magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad container magic {magic:?}, expected \"PACT\""),
        });
    }
    let ver_at = r.pos;
    let version = r.u32_le("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::Parse {
            offset: ver_at,
            message: format!("unsupported container version {version}"),
        });
    }
    let count = r.u32_le("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut names = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = r.u16_le("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Parse {
                offset: name_at,
                message: "entry name is not valid UTF-8".into(),
            })?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(Error::Parse {
                offset: name_at,
                message: format!("duplicate entry name '{name}'"),
            });
        }
        let dtype_at = r.pos;
        let dtype = match r.take(1, "dtype")?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => {
                return Err(Error::Parse {
                    offset: dtype_at,
                    message: format!("unknown dtype tag {other}"),
                })
            }
        };
        let ndim = r.take(1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64_le("dim")?);
        }
        let count: u64 = dims.iter().product();
        let values = match dtype {
            Dtype::F32 => {
                let raw = r.take(count as usize * 4, "f32 payload")?;
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect()
            }
            Dtype::F64 => {
                let raw = r.take(count as usize * 8, "f64 payload")?;
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            }
        };
        entries.push(ContainerEntry {
            name,
            dtype,
            dims,
            values,
        });
    }
    Ok(entries)
}

/// What the synthetic target field contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Single-channel piecewise ramp ("depth").
    Depth,
    /// Two-channel piecewise-constant vector field ("flow").
    Flow,
}

impl SynthMode {
    pub fn target_channels(self) -> usize {
        match self {
            SynthMode::Depth => 1,
            SynthMode::Flow => 2,
        }
    }
}

/// One synthetic guide/target pair. Target discontinuities occur only where
/// the guide changes color (region boundaries).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub guide: Tensor4,
    pub target: Tensor4,
    pub regions: Vec<u16>,
}

/// Well-separated 8-bit palette for region colors.
const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [250, 190, 190],
    [0, 128, 128],
    [128, 128, 0],
    [170, 110, 40],
    [128, 0, 0],
];

/// Deterministic scene set: Voronoi partitions with distinct region colors as
/// the guide, and per-region targets (quantized ramps for depth, constant
/// vectors for flow). Geometry and values use integer arithmetic only, so the
/// bytes are identical across platforms for a given (seed, count, size, mode).
pub fn synth_generate(seed: u64, count: usize, size: usize, mode: SynthMode) -> Vec<SyntheticScene> {
    (0..count)
        .map(|i| synth_scene(Rng::derive(seed, i as u64), size, mode))
        .collect()
}

fn synth_scene(mut rng: Rng, size: usize, mode: SynthMode) -> SyntheticScene {
    let n_sites = 5 + rng.below(4); // 5..=8 regions
    let mut sites = Vec::with_capacity(n_sites);
    while sites.len() < n_sites {
        let p = (rng.below(size) as i64, rng.below(size) as i64);
        if !sites.contains(&p) {
            sites.push(p);
        }
    }
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    rng.shuffle(&mut colors);

    // Per-region target parameters, all in integer 1/256 steps. Ramps are
    // gentle: the signal is dominated by the jumps between regions.
    let mut base = Vec::with_capacity(n_sites);
    let mut ramp = Vec::with_capacity(n_sites);
    let mut flow_uv = Vec::with_capacity(n_sites);
    for _ in 0..n_sites {
        base.push(32 + rng.below(192) as i64);
        ramp.push((
            rng.below(17) as i64 - 8, // gy in [-8, 8]
            rng.below(17) as i64 - 8, // gx
        ));
        flow_uv.push((
            rng.below(513) as i64 - 256, // u*256 in [-256, 256]
            rng.below(513) as i64 - 256,
        ));
    }

    let mut regions = vec![0u16; size * size];
    let mut guide = Tensor4::zeros(1, 3, size, size);
    let c = mode.target_channels();
    let mut target = Tensor4::zeros(1, c, size, size);
    for y in 0..size {
        for x in 0..size {
            // Nearest site by squared distance, lowest index on ties.
            let mut best = 0usize;
            let mut best_d = i64::MAX;
            for (si, (sy, sx)) in sites.iter().enumerate() {
                let dy = y as i64 - sy;
                let dx = x as i64 - sx;
                let d = dy * dy + dx * dx;
                if d < best_d {
                    best_d = d;
                    best = si;
                }
            }
            regions[y * size + x] = best as u16;
            let color = PALETTE[colors[best]];
            for ci in 0..3 {
                guide.set(0, ci, y, x, color[ci] as f64 / 255.0);
            }
            match mode {
                SynthMode::Depth => {
                    let (gy, gx) = ramp[best];
                    let q = base[best]
                        + gy * y as i64 / size as i64
                        + gx * x as i64 / size as i64;
                    target.set(0, 0, y, x, q.clamp(0, 256) as f64 / 256.0);
                }
                SynthMode::Flow => {
                    let (u, v) = flow_uv[best];
                    target.set(0, 0, y, x, u as f64 / 256.0);
                    target.set(0, 1, y, x, v as f64 / 256.0);
                }
            }
        }
    }
    SyntheticScene {
        guide,
        target,
        regions,
    }
}

/// Keep every m-th sample starting at (0, 0). Spatial dims must divide by m.
pub fn downsample_nearest(t: &Tensor4, m: usize) -> Result<Tensor4> {
    if m == 0 {
        return Err(Error::InvalidParam("downsample factor must be >= 1".into()));
    }
    if m == 1 {
        return Ok(t.clone());
    }
    let (n, c, h, w) = t.dims();
    if h % m != 0 || w % m != 0 {
        return Err(Error::ShapeMismatch(format!(
            "({h}, {w}) not divisible by factor {m}"
        )));
    }
    let mut out = Tensor4::zeros(n, c, h / m, w / m);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h / m {
                for x in 0..w / m {
                    out.set(ni, ci, y, x, t.at(ni, ci, y * m, x * m));
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear reduction by an integer factor (align-corners = false).
pub fn downsample_bilinear(t: &Tensor4, m: usize) -> Result<Tensor4> {
    if m == 0 {
        return Err(Error::InvalidParam("downsample factor must be >= 1".into()));
    }
    if m == 1 {
        return Ok(t.clone());
    }
    let (_, _, h, w) = t.dims();
    if h % m != 0 || w % m != 0 {
        return Err(Error::ShapeMismatch(format!(
            "({h}, {w}) not divisible by factor {m}"
        )));
    }
    Ok(resize_bilinear(t, h / m, w / m))
}
