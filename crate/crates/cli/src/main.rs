//! Batch command-line front-end: gradient verification, bilateral filtering,
//! CRF label refinement, and desk-scale guided-upsampling training/evaluation.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
//! Every command is deterministic for a given `--seed`; repeated invocations
//! produce byte-identical output files. `PACGRID_THREADS` caps internal
//! parallelism (results do not depend on it).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pacgrid", version, about = "Pixel-adaptive filtering toolbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        /// Base seed for the random configurations.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of random configurations (0 runs nothing and succeeds).
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Edge-preserving bilateral filter between two P6 images.
    Bilateral {
        input: PathBuf,
        output: PathBuf,
        /// Gaussian spatial falloff in pixels.
        #[arg(long)]
        spatial_sigma: f64,
        /// Gaussian intensity falloff on the [0,1] scale.
        #[arg(long)]
        feature_sigma: f64,
        /// Odd window side length (default 9).
        #[arg(long)]
        window: Option<usize>,
        /// JSON config supplying defaults (flags win).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mean-field label refinement of classifier logits under a guide image.
    CrfRefine {
        /// Tensor container holding (1, labels, h, w) logits (entry "logits"
        /// or the only rank-4 entry).
        #[arg(long)]
        unary: PathBuf,
        /// Guide image (P6).
        #[arg(long)]
        guide: PathBuf,
        /// Label map output (P5, one byte per pixel).
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated dilations of the 5x5 pairwise branches
        /// (default 16,64).
        #[arg(long)]
        branches: Option<String>,
        /// Mean-field steps.
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Optional container with one "compat<i>" entry per branch
        /// (labels x labels x size x size), replacing the default stencils.
        #[arg(long)]
        compat: Option<PathBuf>,
        /// Potts strength of the default compatibility stencils.
        #[arg(long, default_value_t = 1.0)]
        compat_strength: f64,
        /// Multiplier applied to guide channels before the kernel.
        #[arg(long, default_value_t = 4.0)]
        feature_scale: f64,
        /// Optional marginals output container.
        #[arg(long)]
        marginals: Option<PathBuf>,
        /// JSON config supplying defaults (flags win).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the guided upsampler on synthetic scenes and save a checkpoint.
    UpsampleTrain {
        /// Signal type: depth (1 channel, RMSE) or flow (2 channels, EPE).
        #[arg(long)]
        mode: String,
        /// Upsampling factor (4, 8 or 16).
        #[arg(long, default_value_t = 4)]
        factor: usize,
        /// Width table: lite or standard.
        #[arg(long, default_value = "lite")]
        variant: String,
        /// Checkpoint path; a "<out>.manifest" text file is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Total scenes (training uses all but the held-out tail).
        #[arg(long)]
        scenes: Option<usize>,
        /// Scene side length.
        #[arg(long)]
        size: Option<usize>,
        /// JSON config supplying defaults (flags win).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its held-out scenes against the bilinear
    /// baseline and write a JSON report.
    UpsampleEval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Replace a random convolution stack by kernel-modulated layers reusing
    /// the same weights and report the output deviation.
    SwapCheck {
        /// Multiplier on the guiding features.
        #[arg(long, default_value_t = 1e-4)]
        scale: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gradcheck { seed, cases } => commands::gradcheck(seed, cases),
        Command::Bilateral {
            input,
            output,
            spatial_sigma,
            feature_sigma,
            window,
            config,
        } => commands::bilateral(&input, &output, spatial_sigma, feature_sigma, window, config.as_deref()),
        Command::CrfRefine {
            unary,
            guide,
            out,
            branches,
            steps,
            compat,
            compat_strength,
            feature_scale,
            marginals,
            config,
        } => commands::crf_refine(commands::CrfRefineArgs {
            unary,
            guide,
            out,
            branches,
            steps,
            compat,
            compat_strength,
            feature_scale,
            marginals,
            config,
        }),
        Command::UpsampleTrain {
            mode,
            factor,
            variant,
            out,
            seed,
            scenes,
            size,
            config,
        } => commands::upsample_train(commands::UpsampleTrainArgs {
            mode,
            factor,
            variant,
            out,
            seed,
            scenes,
            size,
            config,
        }),
        Command::UpsampleEval { ckpt, report } => commands::upsample_eval(&ckpt, &report),
        Command::SwapCheck { scale, seed } => commands::swap_check(scale, seed),
    };
    match outcome {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::VerificationFailed) => ExitCode::from(1),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
