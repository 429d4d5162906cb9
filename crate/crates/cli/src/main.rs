//! `splice`: train, estimate, enhance, adapt and check piecewise-linear
//! feature compensation from the command line.

mod commands;
mod context;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splice_core::{AssignmentMode, CovarianceMode, Error, ErrorClass, MomentKind, PosteriorModel};

use crate::context::Context;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O error (unreadable or unwritable file)
  2  usage error (bad arguments, missing inputs, model mismatch)
  3  format error (malformed feature, model or manifest file)
  4  numerical failure (including failed `verify` checks)";

#[derive(Parser)]
#[command(name = "splice", version, about, after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Require reproducible output. Reductions are always merged in a fixed
    /// order, so this only records the request in the log.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Seed for initialisation and random splits.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Skip per-utterance cepstral mean subtraction on every loaded file.
    #[arg(long, global = true)]
    no_cms: bool,

    /// Directory that relative model and transform paths resolve against.
    #[arg(long, global = true, env = "SPLICE_MODEL_DIR")]
    model_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GMM to every file of a manifest.
    TrainGmm(TrainGmmArgs),
    /// Estimate a piecewise-linear transform.
    Estimate {
        #[command(subcommand)]
        kind: EstimateKind,
    },
    /// Enhance every file of a manifest.
    Enhance(EnhanceArgs),
    /// Re-estimate transform biases per test condition and enhance.
    Adapt(AdaptArgs),
    /// Mixture correspondence matrix between a clean and a noisy GMM.
    Vmatrix(VmatrixArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Re-check stored artifacts against their invariants.
    Verify(VerifyArgs),
    /// Summarise a model, transform, oracle, V matrix or feature file.
    Inspect {
        file: PathBuf,
    },
    /// Run a configured sequence of steps.
    RunPipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Full,
    Diagonal,
}

impl From<CovArg> for CovarianceMode {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Full => CovarianceMode::Full,
            CovArg::Diagonal => CovarianceMode::Diagonal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PosteriorArg {
    Original,
    Adapted,
}

impl From<PosteriorArg> for PosteriorModel {
    fn from(p: PosteriorArg) -> Self {
        match p {
            PosteriorArg::Original => PosteriorModel::Original,
            PosteriorArg::Adapted => PosteriorModel::Adapted,
        }
    }
}

#[derive(Args)]
struct TrainGmmArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 128)]
    mixtures: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, value_enum, default_value = "full")]
    covariance: CovArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-iteration log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EstimateKind {
    /// MMSE regression matrices.
    Splice(StereoArgs),
    /// Whitening-recolouring matrices.
    Msplice(StereoArgs),
    /// Per-dimension regression.
    Diag(StereoArgs),
    /// Identity matrices, biases only.
    Bias(StereoArgs),
    /// Whitening transforms from unpaired clean and noisy data.
    Nonstereo(NonStereoArgs),
}

#[derive(Args)]
struct StereoArgs {
    /// Noisy GMM used for the alignment posteriors.
    #[arg(long)]
    gmm: PathBuf,
    /// Manifest whose noisy records name their clean partner.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "central")]
    moments: MomentArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MomentArg {
    Central,
    Raw,
}

impl From<MomentArg> for MomentKind {
    fn from(m: MomentArg) -> Self {
        match m {
            MomentArg::Central => MomentKind::Central,
            MomentArg::Raw => MomentKind::Raw,
        }
    }
}

#[derive(Args)]
struct NonStereoArgs {
    #[arg(long)]
    clean_manifest: PathBuf,
    #[arg(long)]
    noisy_manifest: PathBuf,
    #[arg(long, default_value_t = 128)]
    mixtures: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// EM iterations refining the adapted clean GMM (at least 3).
    #[arg(long, default_value_t = 3)]
    refine_iters: usize,
    #[arg(long, value_enum, default_value = "full")]
    covariance: CovArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    noisy_gmm_out: PathBuf,
    #[arg(long)]
    clean_gmm_out: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    gmm: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Use the transform even if it was estimated against another GMM of
    /// the same shape.
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum, default_value = "original")]
    posterior_model: PosteriorArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionKey {
    /// The manifest's `condition` column.
    Condition,
    /// The name of each file's parent directory.
    Directory,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    gmm: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "condition")]
    condition_key: ConditionKey,
    #[arg(long, value_enum, default_value = "original")]
    posterior_model: PosteriorArg,
    /// MLLR E-step / maximisation cycles.
    #[arg(long, default_value_t = 5)]
    mllr_cycles: usize,
}

#[derive(Args)]
struct VmatrixArgs {
    #[arg(long)]
    clean_gmm: PathBuf,
    #[arg(long)]
    noisy_gmm: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "hard")]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Soft,
    Hard,
}

impl From<ModeArg> for AssignmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Soft => AssignmentMode::Soft,
            ModeArg::Hard => AssignmentMode::Hard,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum FormatArg {
    Htk,
    Csv,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "htk")]
    format: FormatArg,
}

#[derive(Args)]
struct VerifyArgs {
    /// Alignment (noisy) GMM.
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Clean GMM; with a non-stereo transform, enables the whitening check
    /// against the two models' covariances.
    #[arg(long)]
    clean_gmm: Option<PathBuf>,
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Stereo manifest: checks feature-file roundtrips, posterior rows and
    /// the whitening invariant against the data moments.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Oracle file from `synth`: reports per-mixture transform error.
    #[arg(long)]
    against_oracle: Option<PathBuf>,
    /// Fail when an oracle error exceeds this relative Frobenius norm.
    #[arg(long)]
    oracle_tolerance: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Io => 1,
        ErrorClass::Usage => 2,
        ErrorClass::Format => 3,
        ErrorClass::Numerical => 4,
    }
}

fn run(cli: Cli) -> splice_core::Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot configure {j} worker threads: {e}")))?;
    }
    if cli.deterministic {
        log::info!("deterministic mode: fixed-order reductions, seed {}", cli.seed);
    }
    let ctx = Context { seed: cli.seed, cms: !cli.no_cms, model_dir: cli.model_dir };
    match cli.command {
        Command::TrainGmm(a) => commands::train_gmm(&ctx, &a),
        Command::Estimate { kind } => commands::estimate(&ctx, &kind),
        Command::Enhance(a) => commands::enhance(&ctx, &a),
        Command::Adapt(a) => commands::adapt(&ctx, &a),
        Command::Vmatrix(a) => commands::vmatrix(&ctx, &a),
        Command::Synth(a) => commands::synth(&ctx, &a),
        Command::Verify(a) => commands::verify(&ctx, &a),
        Command::Inspect { file } => commands::inspect(&ctx, &file),
        Command::RunPipeline { config } => pipeline::run(&ctx, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splice: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
