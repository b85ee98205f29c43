//! Optional JSON run configuration. Unknown keys are rejected so a typo in a
//! window or dilation field cannot silently fall back to a default.

use std::path::Path;

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePhase {
    pub lr: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub size: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub size: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "one")]
    pub dilation: usize,
}

fn one() -> usize {
    1
}

/// Adapting-kernel selection: "gaussian", "constant" or "detail-preserving"
/// (the latter reads alpha/epsilon/lambda).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variant: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "one_f")]
    pub epsilon: f64,
    #[serde(default = "one_f")]
    pub lambda: f64,
}

fn one_f() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn to_spec(&self) -> Result<pacgrid_core::kernels::KernelSpec, String> {
        use pacgrid_core::kernels::KernelSpec;
        match self.variant.as_str() {
            "gaussian" => Ok(KernelSpec::Gaussian),
            "constant" => Ok(KernelSpec::Constant),
            "detail-preserving" => Ok(KernelSpec::DetailPreserving {
                alpha: self.alpha,
                epsilon: self.epsilon,
                lambda: self.lambda,
            }),
            other => Err(format!("unknown kernel variant '{other}'")),
        }
    }
}

/// All tunables a command may read from `--config`. Command-line flags win
/// over config values; defaults are documented per command in `--help`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Synthetic scene side length.
    pub size: Option<usize>,
    /// Total synthetic scenes (training plus held-out).
    pub scenes: Option<usize>,
    pub held_out: Option<usize>,
    pub schedule: Option<Vec<SchedulePhase>>,
    pub batch: Option<usize>,
    pub crop: Option<usize>,
    pub branches: Option<Vec<BranchConfig>>,
    pub mf_steps: Option<usize>,
    pub compat_strength: Option<f64>,
    pub feature_scale: Option<f64>,
    /// Window of the bilateral command.
    pub window: Option<WindowConfig>,
    /// Adapting kernel of the CRF branches.
    pub kernel: Option<KernelConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}
