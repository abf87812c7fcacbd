//! Command-line front end. Every subcommand resolves parameters as
//! flag > config file > default, echoes the resolved set into its output,
//! and derives all randomness from one named seed.

mod cmds;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scdm_core::schedule::Eta;
use scdm_core::{Error, Result};

use config::{resolve_seed, RunConfig};

#[derive(Parser)]
#[command(
    name = "scdm",
    version,
    about = "Semantic-conditioned diffusion on toy maps: class statistics, \
             mask schedules, label diffusion, sampling, and verification."
)]
struct Cli {
    /// Defaults file (JSON); explicit flags win over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// RNG seed. Falls back to the config file, then SCDM_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-class rarity statistics from a corpus of label maps.
    EstimateStats(EstimateStatsArgs),
    /// Build a label + image schedule pair and write it as JSON.
    Schedule(ScheduleArgs),
    /// Sample a masking trajectory for one map and emit chosen steps.
    DiffuseLabels(DiffuseLabelsArgs),
    /// Degrade a label map (downsample, edge bands, or random relabels).
    Corrupt(CorruptArgs),
    /// Train the toy MLP denoiser and write a checkpoint.
    TrainToy(TrainToyArgs),
    /// Run the reverse chain conditioned on a label map.
    Sample(SampleArgs),
    /// Compare maps or images and write a metric report.
    Metrics(MetricsArgs),
    /// Run the numerical self-checks and report pass/fail per target.
    Verify(VerifyArgs),
    /// Paired comparison of fixed-label vs. label-diffusion sampling.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct EstimateStatsArgs {
    /// Label maps or directories of .slm files.
    #[arg(required = true, value_name = "PATH")]
    pub corpus: Vec<PathBuf>,

    /// Keep raw phi values instead of clamping them to at least 1.
    #[arg(long)]
    pub no_clamp_phi: bool,

    /// Class to exclude from the statistics (still present in maps).
    #[arg(long, value_name = "CLASS")]
    pub unlabeled: Option<u16>,

    /// Rescale products so the smallest participating class sits here.
    #[arg(long, value_name = "VALUE")]
    pub min_product: Option<f64>,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScheduleArgs {
    /// Class statistics file from estimate-stats.
    #[arg(long, value_name = "PATH")]
    pub stats: PathBuf,

    /// Number of diffusion steps.
    #[arg(long = "T", value_name = "STEPS")]
    pub num_steps: Option<usize>,

    /// Schedule exponent; "inf" selects the identity label schedule.
    #[arg(long)]
    pub eta: Option<Eta>,

    /// Image noise schedule: linear_beta (default) or cosine.
    #[arg(long, value_name = "KIND")]
    pub kind: Option<String>,

    /// First beta of the linear ramp; defaults to the 1000-step analog.
    #[arg(long, value_name = "BETA")]
    pub beta_start: Option<f64>,

    /// Last beta of the linear ramp.
    #[arg(long, value_name = "BETA")]
    pub beta_end: Option<f64>,

    /// Offset for the cosine schedule.
    #[arg(long, value_name = "S")]
    pub offset: Option<f64>,

    /// Classes forced onto the uniform ramp regardless of their product.
    #[arg(long, value_delimiter = ',', value_name = "CLASSES")]
    pub uniform_classes: Vec<u16>,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DiffuseLabelsArgs {
    /// Input label map (.slm).
    #[arg(long, value_name = "PATH")]
    pub map: PathBuf,

    /// Schedule file from the schedule command.
    #[arg(long, value_name = "PATH")]
    pub sched: PathBuf,

    /// Trajectory fractions in [0,1] to reconstruct as step_XXX.slm.
    #[arg(long, value_delimiter = ',', value_name = "FRACTIONS")]
    pub emit_steps: Vec<f64>,

    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct CorruptArgs {
    /// Corruption mode: ds, edge, or random.
    #[arg(long, value_name = "MODE")]
    pub mode: Option<String>,

    /// Downsampling factor for ds.
    #[arg(long, value_name = "N")]
    pub factor: Option<usize>,

    /// Band half-width for edge.
    #[arg(long, value_name = "D")]
    pub distance: Option<usize>,

    /// Per-cell relabel probability for random.
    #[arg(long, value_name = "P")]
    pub rate: Option<f64>,

    /// Class id written into corrupted cells.
    #[arg(long, value_name = "CLASS")]
    pub unlabeled: Option<u16>,

    /// Distance metric for edge: chebyshev, manhattan, or euclidean.
    #[arg(long, value_name = "METRIC")]
    pub metric: Option<String>,

    /// Skip boundaries against cells already holding the unlabeled class.
    #[arg(long)]
    pub ignore_unlabeled_edges: bool,

    /// Input label map (.slm).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainToyArgs {
    /// Toy data spec (JSON).
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,

    /// Number of diffusion steps.
    #[arg(long = "T", value_name = "STEPS")]
    pub num_steps: Option<usize>,

    /// Schedule exponent for label diffusion during training.
    #[arg(long)]
    pub eta: Option<Eta>,

    /// Weight on the variational term.
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_vlb: Option<f64>,

    /// Probability of training a step unconditionally.
    #[arg(long, value_name = "P")]
    pub drop_rate: Option<f64>,

    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,

    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,

    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,

    /// Hidden layer width.
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,

    /// Class embedding dimension.
    #[arg(long, value_name = "N")]
    pub emb_dim: Option<usize>,

    /// Predict noise only; use the fixed posterior variance.
    #[arg(long)]
    pub fixed_variance: bool,

    /// Corpus size for estimating class statistics from the spec.
    #[arg(long, value_name = "N")]
    pub stats_maps: Option<usize>,

    /// Print the loss every N iterations.
    #[arg(long, default_value_t = 500, value_name = "N")]
    pub log_every: usize,

    #[arg(long, default_value = "model.json", value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SampleArgs {
    /// Conditioning label map (.slm).
    #[arg(long, value_name = "PATH")]
    pub map: PathBuf,

    /// Schedule file from the schedule command.
    #[arg(long, value_name = "PATH")]
    pub sched: PathBuf,

    /// Denoiser checkpoint (oracle or MLP JSON).
    #[arg(long, value_name = "PATH")]
    pub denoiser: PathBuf,

    /// Respaced step count; defaults to the schedule's full T.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,

    /// Classifier-free guidance scale s.
    #[arg(long, value_name = "S")]
    pub cfg_scale: Option<f64>,

    /// Extrapolation weight w on consecutive clean-image estimates.
    #[arg(long, value_name = "W")]
    pub extrapolation: Option<f64>,

    /// Dynamic thresholding percentile.
    #[arg(long, value_name = "Q")]
    pub percentile: Option<f64>,

    /// Posterior variance: fixed_small, fixed_large, or learned.
    #[arg(long, value_name = "MODE")]
    pub variance: Option<String>,

    /// Label trajectory reuse: coupled or fresh.
    #[arg(long, value_name = "MODE")]
    pub coupling: Option<String>,

    /// Start from an all-masked condition at t = T.
    #[arg(long, value_name = "BOOL")]
    pub force_full_mask: Option<bool>,

    /// Condition every step on the input map itself (no label diffusion).
    #[arg(long)]
    pub fixed_label: bool,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MetricsArgs {
    /// miou, grouped-miou, psnr, ssim, or frechet.
    #[arg(long, value_name = "TASK")]
    pub task: String,

    /// First operand: .slm, .sim, or a directory for frechet.
    #[arg(long, value_name = "PATH")]
    pub a: PathBuf,

    /// Second operand, same shape as --a.
    #[arg(long, value_name = "PATH")]
    pub b: PathBuf,

    /// Class excluded from intersection-over-union counts.
    #[arg(long, value_name = "CLASS")]
    pub ignore: Option<u16>,

    /// Class statistics file; required for grouped-miou.
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,

    /// Value range of the image data (psnr/ssim).
    #[arg(long, value_name = "RANGE")]
    pub data_range: Option<f64>,

    /// SSIM window side length.
    #[arg(long, value_name = "N")]
    pub window: Option<usize>,

    /// Gaussian window sigma for SSIM; uniform window when absent.
    #[arg(long, value_name = "SIGMA")]
    pub gaussian_sigma: Option<f64>,

    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Comma-separated targets, or "all": prop1, prop2, marginal,
    /// trajectory, oracle, gradcheck.
    #[arg(long, required = true, value_delimiter = ',', value_name = "TARGETS")]
    pub targets: Vec<String>,

    /// Override the psi*phi products probed by prop1.
    #[arg(long, value_delimiter = ',', value_name = "VALUES")]
    pub product: Vec<f64>,

    /// Override the step count probed by prop1.
    #[arg(long = "T", value_name = "STEPS")]
    pub num_steps: Option<usize>,

    /// Report path; defaults to verify_report.json.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Toy data spec; defaults to the built-in 12x12 three-class scene.
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,

    /// Number of diffusion steps.
    #[arg(long = "T", value_name = "STEPS")]
    pub num_steps: Option<usize>,

    /// Schedule exponent for the label-diffusion rows.
    #[arg(long)]
    pub eta: Option<Eta>,

    /// Respaced step counts to sweep (comma-separated).
    #[arg(long, value_delimiter = ',', value_name = "COUNTS")]
    pub steps: Vec<usize>,

    /// Classifier-free guidance scale.
    #[arg(long, value_name = "S")]
    pub cfg_scale: Option<f64>,

    /// Extrapolation weight for the third method.
    #[arg(long, value_name = "W")]
    pub extrapolation: Option<f64>,

    /// Shared-seed sample pairs per cell.
    #[arg(long, value_name = "N")]
    pub pairs: Option<usize>,

    /// Class id corruption writes into degraded cells.
    #[arg(long, value_name = "CLASS")]
    pub unlabeled: Option<u16>,

    /// Corpus size for estimating class statistics.
    #[arg(long, value_name = "N")]
    pub stats_maps: Option<usize>,

    #[arg(long, default_value = "ablate", value_name = "DIR")]
    pub out_dir: PathBuf,
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(cli.seed, &cfg)?;
    match &cli.command {
        Command::EstimateStats(args) => cmds::estimate_stats_cmd(args, &cfg, seed).map(|_| true),
        Command::Schedule(args) => cmds::schedule_cmd(args, &cfg, seed).map(|_| true),
        Command::DiffuseLabels(args) => cmds::diffuse_labels_cmd(args, &cfg, seed).map(|_| true),
        Command::Corrupt(args) => cmds::corrupt_cmd(args, &cfg, seed).map(|_| true),
        Command::TrainToy(args) => cmds::train_toy_cmd(args, &cfg, seed).map(|_| true),
        Command::Sample(args) => cmds::sample_cmd(args, &cfg, seed).map(|_| true),
        Command::Metrics(args) => cmds::metrics_cmd(args, &cfg, seed).map(|_| true),
        Command::Verify(args) => cmds::verify_cmd(args, &cfg, seed),
        Command::Ablate(args) => cmds::ablate_cmd(args, &cfg, seed).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Argument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
