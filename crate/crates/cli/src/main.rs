//! `retina`: enroll, identify and verify retinal templates.

mod commands;
mod config;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, bad usage or a failed read/write.
    #[error("{0}")]
    Input(String),
    #[error("gallery is empty: {0}")]
    EmptyGallery(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::EmptyGallery(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "retina",
    version,
    about = "Retinal identification from corner constellations"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// `key = value` settings file; keys are long flag names without the dashes
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Gallery directory or template file
    #[arg(long, global = true, value_name = "PATH")]
    gallery: Option<PathBuf>,
    /// Manual optic-disc centre, `x,y`
    #[arg(long, global = true, value_name = "X,Y", allow_hyphen_values = true)]
    od: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every stage on the current thread
    #[arg(long, global = true)]
    sequential: bool,
    /// Harris sensitivity constant
    #[arg(long, global = true)]
    k: Option<f64>,
    /// Harris response threshold
    #[arg(long, global = true, value_name = "R")]
    harris_threshold: Option<f64>,
    /// Gaussian window sigma
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true, value_name = "PX")]
    window_radius: Option<usize>,
    #[arg(long, global = true, value_name = "PX")]
    nms_radius: Option<usize>,
    #[arg(long, global = true, value_name = "PX")]
    border_margin: Option<usize>,
    #[arg(long, global = true, value_name = "PX")]
    od_template_radius: Option<usize>,
    #[arg(long, global = true, value_name = "PX")]
    od_stride: Option<usize>,
    #[arg(long, global = true, value_name = "PX")]
    od_margin: Option<usize>,
    /// Weight of the inner class
    #[arg(long, global = true)]
    w1: Option<f64>,
    #[arg(long, global = true)]
    w2: Option<f64>,
    #[arg(long, global = true)]
    w3: Option<f64>,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            harris_threshold: self.harris_threshold,
            sigma: self.sigma,
            window_radius: self.window_radius,
            nms_radius: self.nms_radius,
            border_margin: self.border_margin,
            od_template_radius: self.od_template_radius,
            od_stride: self.od_stride,
            od_margin: self.od_margin,
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            gallery: self.gallery.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print Harris corners as `x y response`
    Detect { image: PathBuf },
    /// Encode an image and add it to the gallery as `<gallery>/<subject>.rtpl`
    Enroll { image: PathBuf, subject: String },
    /// Rank gallery subjects against an image
    Identify {
        image: PathBuf,
        /// Print only the best K candidates
        #[arg(long, value_name = "K")]
        top_k: Option<usize>,
        /// Rank by totals divided by each subject's self-match total
        #[arg(long)]
        normalized: bool,
    },
    /// Accept or reject an identity claim; exits 0 on accept, 1 on reject
    Verify {
        image: PathBuf,
        subject: String,
        #[arg(allow_hyphen_values = true)]
        threshold: f64,
    },
    /// Rotation experiment on a synthetic gallery or an image directory
    Eval(EvalArgs),
    /// Write a synthetic gallery and, optionally, rendered images
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Enroll every `*.pgm`/`*.ppm` in DIR instead of a synthetic gallery
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    corners: usize,
    /// Rotated probes per subject, one experiment row each
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
    rotations: Vec<usize>,
    /// Probe angles are drawn from [-A, A] degrees
    #[arg(long, value_name = "A", default_value_t = 15.0)]
    angle_range: f64,
    #[arg(long, default_value_t = 0.5)]
    jitter_px: f64,
    #[arg(long, default_value_t = 0.5)]
    jitter_deg: f64,
    /// Write the accuracy rows as CSV
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Write a FAR/FRR threshold sweep as CSV (synthetic gallery only)
    #[arg(long, value_name = "FILE")]
    far_frr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    corners: usize,
    /// Also render one PGM per subject (with an `.od` sidecar) into DIR
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let cfg = config::resolve(cli.global.config.as_deref(), &cli.global.overrides())?;
    let od = cli
        .global
        .od
        .as_deref()
        .map(|s| {
            retina_core::pipeline::parse_od_pair(s)
                .ok_or_else(|| CliError::Input(format!("--od expects `x,y`, got {s:?}")))
        })
        .transpose()?;
    let ctx = commands::Context {
        cfg,
        od,
        exec: if cli.global.sequential {
            retina_core::Exec::Sequential
        } else {
            retina_core::Exec::default()
        },
    };
    match cli.command {
        Command::Detect { image } => commands::detect(&ctx, &image),
        Command::Enroll { image, subject } => commands::enroll(&ctx, &image, &subject),
        Command::Identify {
            image,
            top_k,
            normalized,
        } => commands::identify(&ctx, &image, top_k, normalized),
        Command::Verify {
            image,
            subject,
            threshold,
        } => commands::verify(&ctx, &image, &subject, threshold),
        Command::Eval(args) => commands::eval(&ctx, &args),
        Command::Synth(args) => commands::synth(&ctx, &args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("retina: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
