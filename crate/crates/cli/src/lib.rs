//! `deferctl`: train, evaluate and serve deferral routers from the command line.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use defer_core::metrics::ObjectiveKind;
use defer_core::seed::DEFAULT_SEED;

pub use commands::run;

#[derive(Debug, Parser)]
#[command(name = "deferctl", version, about = "Learned deferral between a base classifier and an expert model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a deferral model and tune its threshold.
    Train(TrainArgs),
    /// Compare the learned router with the baselines.
    Eval(EvalArgs),
    /// Keep only pairs on which two annotators agree.
    Consensus(ConsensusArgs),
    /// Relative cost and latency over a grid of deferral rates.
    Cost(CostArgs),
    /// Run the HTTP routing service.
    Serve(ServeArgs),
    /// Split a dataset into train/validation/test files.
    Split(SplitArgs),
    /// Write a synthetic dataset where base model and expert are complementary.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Kfold,
    SingleFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    BinaryF1,
    MacroF1,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::BinaryF1 => ObjectiveKind::BinaryF1,
            ObjectiveArg::MacroF1 => ObjectiveKind::MacroF1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    BaseOnly,
    ExpertOnly,
    Fixed,
    Random,
    Learned,
    Oracle,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Newline-delimited JSON dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Label-space file, for datasets without a header line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgsCommon {
    #[arg(long, default_value_t = 1.0)]
    pub cost_base: f64,
    #[arg(long, default_value_t = 50.0)]
    pub cost_expert: f64,
    #[arg(long, default_value_t = 12.0)]
    pub lat_base_ms: f64,
    #[arg(long, default_value_t = 850.0)]
    pub lat_expert_ms: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Where to write the model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "kfold")]
    pub mode: Mode,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Inverse L2 regularization strength.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "binary-f1")]
    pub objective: ObjectiveArg,
    /// Keyword lexicon override (JSON or TOML).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file; required for the learned and random rows.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Policies to report [default: all that are available].
    #[arg(long, value_enum, value_delimiter = ',')]
    pub policies: Vec<PolicyArg>,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9,0.95")]
    pub theta_grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "binary-f1")]
    pub objective: ObjectiveArg,
    #[command(flatten)]
    pub cost: CostArgsCommon,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// Pair file: one `{"id", "label_a", "label_b"}` object per line.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Label-space file; required to resolve label names.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Dataset to filter; kept records take the agreed label as gold.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Where to write the kept records (or kept pairs without --dataset).
    #[arg(long)]
    pub kept: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.168,0.2,0.3,0.5,1")]
    pub rates: Vec<f64>,
    /// JSON report from `eval`; its deferral rates are added to the table.
    #[arg(long)]
    pub from_report: Option<PathBuf>,
    #[command(flatten)]
    pub cost: CostArgsCommon,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "DEFER_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "DEFER_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Expert endpoint; without it every deferral falls back to the base model.
    /// The bearer token is read from DEFER_EXPERT_TOKEN.
    #[arg(long, env = "DEFER_EXPERT_URL")]
    pub expert_url: Option<String>,
    #[arg(long, env = "DEFER_EXPERT_TIMEOUT_MS", default_value_t = 10_000)]
    pub expert_timeout_ms: u64,
}

pub const TOKEN_ENV: &str = "DEFER_EXPERT_TOKEN";

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    pub fractions: Vec<f64>,
    /// Keep every `group_id` within one split instead of stratifying by label.
    #[arg(long)]
    pub by_group: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the matching hedge-word lexicon (JSON).
    #[arg(long)]
    pub lexicon_out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_defaults() {
        let cli = Cli::try_parse_from(["deferctl", "train", "--dataset", "d.jsonl", "--model", "m.json"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("not train") };
        assert_eq!((a.k, a.c, a.max_iter, a.seed), (5, 1.0, 1000, 42));
        assert_eq!(a.mode, Mode::Kfold);
        assert_eq!(a.objective, ObjectiveArg::BinaryF1);
        assert_eq!(a.output.format, Format::Table);
    }

    #[test]
    fn eval_lists() {
        let cli = Cli::try_parse_from([
            "deferctl",
            "eval",
            "--dataset",
            "d",
            "--policies",
            "base-only,oracle",
            "--theta-grid",
            "0.5,0.9",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!("not eval") };
        assert_eq!(a.policies, vec![PolicyArg::BaseOnly, PolicyArg::Oracle]);
        assert_eq!(a.theta_grid, vec![0.5, 0.9]);
        assert_eq!(
            (a.cost.cost_base, a.cost.cost_expert, a.cost.lat_base_ms, a.cost.lat_expert_ms),
            (1.0, 50.0, 12.0, 850.0)
        );
    }
}
