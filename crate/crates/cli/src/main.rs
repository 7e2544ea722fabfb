mod commands;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ktrace_core::kernel::OptimizerKind;
use ktrace_core::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "ktrace", version, about = "Generative knowledge tracing: ingest, train, evaluate, predict")]
pub struct Cli {
    /// Worker threads for gradient evaluation (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and filter exercise logs into a corpus archive
    Ingest(IngestArgs),
    /// Wake-sleep training followed by predictor training
    Train(TrainArgs),
    /// Metrics for a checkpoint, or k-fold cross-validation
    Evaluate(EvaluateArgs),
    /// Per-step mastery trajectory for one student
    Predict(PredictArgs),
    /// Draw synthetic records from a checkpoint
    Sample(SampleArgs),
    /// Compare exact inference with path enumeration on random models
    OracleCheck(OracleArgs),
    /// Render a trajectory or embedding CSV as SVG
    Plot(PlotArgs),
    /// Train a concept-relation or concept-of-problem head on frozen embeddings
    Heads(HeadsArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub qmatrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of concepts; defaults to the largest concept id plus one
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub min_records: usize,
    #[arg(long, default_value_t = 0.10)]
    pub min_accept: f64,
    #[arg(long, default_value_t = 30)]
    pub min_problem_records: usize,
    /// Repeat the filters until nothing changes
    #[arg(long)]
    pub fixpoint: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long = "d-e", default_value_t = 20)]
    pub d_e: usize,
    /// Posterior LSTM width [default: 2K]
    #[arg(long = "d-h")]
    pub d_h: Option<usize>,
    /// Predictor LSTM width [default: 80 + 4K]
    #[arg(long = "d-p")]
    pub d_p: Option<usize>,
    #[arg(long, default_value_t = 86400.0)]
    pub delta_hat: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// Predictor epochs [default: --iters]
    #[arg(long)]
    pub pred_epochs: Option<usize>,
    /// Predictor learning rate [default: --lr]
    #[arg(long)]
    pub pred_lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 15)]
    pub k_max: usize,
    #[arg(long, default_value_t = 1)]
    pub wake_samples: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            d_e: self.d_e,
            d_h: self.d_h,
            d_p: self.d_p,
            delta_hat: self.delta_hat,
            iters: self.iters,
            pred_epochs: self.pred_epochs,
            lr: self.lr,
            pred_lr: self.pred_lr,
            l2: self.l2,
            seed,
            batch_size: self.batch_size,
            k_max: self.k_max,
            wake_samples: self.wake_samples,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV [default: checkpoint path with extension .loss.csv]
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["ckpt", "folds"]))]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Cross-validate with this many folds, training with the model flags
    #[arg(long)]
    pub folds: Option<usize>,
    /// Metrics CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Raw student id as it appears in the records file
    #[arg(long)]
    pub student: String,
    /// Trajectory CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Also write student-state, problem and concept embeddings
    #[arg(long)]
    pub embeddings_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub students: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Smallest gap between consecutive records, seconds
    #[arg(long, default_value_t = 60)]
    pub min_gap: i64,
    /// Largest gap between consecutive records, seconds
    #[arg(long, default_value_t = 14400)]
    pub max_gap: i64,
    /// Records CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub t: usize,
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlotKind {
    /// Prior and posterior mastery per concept over steps
    Mastery,
    /// PCA scatter of student states over time with problem and concept points
    Trajectory,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(value_enum)]
    pub kind: PlotKind,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HeadKind {
    /// Concept includes concept; ids are concept ids
    Relation,
    /// Problem involves concept; left ids are problems, right ids concepts
    Concept,
}

#[derive(Args, Debug)]
pub struct HeadsArgs {
    #[arg(value_enum)]
    pub kind: HeadKind,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// CSV `left_id,right_id,label`; negatives are sampled when no 0 labels are present
    #[arg(long)]
    pub pairs: PathBuf,
    /// Metrics CSV
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Sampled negatives per positive
    #[arg(long, default_value_t = 2)]
    pub neg_ratio: usize,
    /// Cross-validate instead of a single 80/20 split
    #[arg(long)]
    pub folds: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
