use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hglmm",
    version,
    about = "Mixture-model Fisher Vectors and CCA text/image retrieval",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// TSV file of `flag<TAB>value` defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit or apply a PCA/ICA whitening transform.
    #[command(subcommand)]
    Whiten(WhitenCommand),
    /// Fit a GMM, LMM or HGLMM with EM.
    Fit(FitArgs),
    /// Pool descriptor sets into Fisher Vectors or mean vectors.
    Encode(EncodeArgs),
    /// Fit CCA or project through a fitted model.
    #[command(subcommand)]
    Cca(CcaCommand),
    /// Score projected images and sentences on the retrieval tasks.
    Eval(EvalArgs),
    /// Write the seeded synthetic image/sentence fixture.
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WhitenMethod {
    Ica,
    Pca,
}

#[derive(Debug, Subcommand)]
pub enum WhitenCommand {
    Fit(WhitenFitArgs),
    Apply(WhitenApplyArgs),
}

#[derive(Debug, Args)]
pub struct WhitenFitArgs {
    /// Training matrix (FVM1).
    #[arg(long)]
    pub input: PathBuf,
    /// Transform file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = WhitenMethod::Ica)]
    pub method: WhitenMethod,
    /// Output dimension; defaults to the input width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// ICA iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// ICA convergence tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct WhitenApplyArgs {
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training descriptors (FVM1).
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// gmm, lmm or hglmm.
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative log-likelihood gain below which EM stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    /// Lower bound on every scale parameter.
    #[arg(long, default_value_t = 1e-6)]
    pub scale_floor: f64,
    /// Optional TSV of the per-iteration log-likelihood.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Descriptor rows (FVM1).
    #[arg(long)]
    pub input: PathBuf,
    /// Set index TSV grouping the rows.
    #[arg(long)]
    pub sets: PathBuf,
    /// Encoded vectors, one row per set.
    #[arg(long)]
    pub output: PathBuf,
    /// gmm, lmm, hglmm, gmm+hglmm or mean.
    #[arg(long)]
    pub family: String,
    /// Model file; give two (GMM and HGLMM) for gmm+hglmm.
    #[arg(long, action = clap::ArgAction::Append)]
    pub model: Vec<PathBuf>,
    /// Power-normalization exponent in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Skip the Fisher-information scaling.
    #[arg(long)]
    pub no_fim: bool,
    /// Skip the final L2 normalization.
    #[arg(long)]
    pub no_l2: bool,
}

#[derive(Debug, Subcommand)]
pub enum CcaCommand {
    Fit(CcaFitArgs),
    Project(CcaProjectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TuneTaskArg {
    Annotation,
    Search,
}

#[derive(Debug, Args)]
pub struct CcaFitArgs {
    /// CCA model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Paired X rows (FVM1); use with --y.
    #[arg(long, requires = "y", conflicts_with = "manifest")]
    pub x: Option<PathBuf>,
    /// Paired Y rows (FVM1).
    #[arg(long, requires = "x")]
    pub y: Option<PathBuf>,
    /// Image features, one row per --image-ids line.
    #[arg(long, requires_all = ["image_ids", "sentences", "sentence_ids", "manifest"])]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub image_ids: Option<PathBuf>,
    /// Sentence vectors, one row per --sentence-ids line.
    #[arg(long)]
    pub sentences: Option<PathBuf>,
    #[arg(long)]
    pub sentence_ids: Option<PathBuf>,
    /// Sentence/image/split manifest; training pairs come from its train split.
    #[arg(long, requires = "images")]
    pub manifest: Option<PathBuf>,
    /// Ridge, or "auto" to search the validation split (needs --manifest).
    #[arg(long, default_value = "auto")]
    pub reg: String,
    #[arg(long)]
    pub reg_x: Option<f64>,
    #[arg(long)]
    pub reg_y: Option<f64>,
    /// Output dimension; defaults to min(p, q, n - 1).
    #[arg(long)]
    pub r: Option<usize>,
    /// Validation task steering the ridge search.
    #[arg(long, value_enum, default_value_t = TuneTaskArg::Annotation)]
    pub tune_task: TuneTaskArg,
    /// Correlation-weighting exponent used while scoring.
    #[arg(long, default_value_t = 0.0)]
    pub weight_exp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    X,
    Y,
}

#[derive(Debug, Args)]
pub struct CcaProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub side: SideArg,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Annotation,
    Search,
    Sentence,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::All)]
    pub task: TaskArg,
    /// Projected images (FVM1).
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub image_ids: Option<PathBuf>,
    /// Projected sentences (FVM1).
    #[arg(long)]
    pub sentences: PathBuf,
    #[arg(long)]
    pub sentence_ids: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only rows of this split are evaluated.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// CCA model supplying correlations for --weight-exp.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub weight_exp: f64,
    /// Metrics TSV to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Row label in the printed table.
    #[arg(long, default_value = "model")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct GenFixtureArgs {
    /// Directory to create or fill.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, default_value_t = 5)]
    pub sentences_per_image: usize,
    #[arg(long, default_value_t = 4000)]
    pub corpus_words: usize,
}
