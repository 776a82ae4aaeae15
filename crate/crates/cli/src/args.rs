use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use madpl_core::trainer::Algorithm;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "madpl", version, about = "Multi-agent dialog policy learning on a synthetic world")]
pub struct Cli {
    /// Artifact root. Falls back to $MADPL_LAB_DIR, then ./madpl-lab.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build the ontology, entity database and a fixed evaluation goal set.
    GenWorld(GenWorldArgs),
    /// Generate a rule-agent corpus for behavior cloning.
    GenCorpus(GenCorpusArgs),
    /// Behavior-clone both policies from a corpus.
    Pretrain(PretrainArgs),
    /// Train dialog policies with an actor-critic algorithm.
    Train(TrainArgs),
    /// Evaluate a user/system pair on the fixed goal set.
    Evaluate(EvaluateArgs),
    /// Merge training runs into learning curves and a results table.
    Report(ReportArgs),
    /// Re-run a stage from its manifest with one worker.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenWorld(_) => "gen-world",
            Command::GenCorpus(_) => "gen-corpus",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenWorldArgs {
    /// World TOML; the built-in three-domain world when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the database seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub eval_goals: usize,
    /// Seed of the evaluation goal set (default: world seed + 1).
    #[arg(long)]
    pub goal_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub dialogs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2.5)]
    pub beta_sys: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta_user: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long, default_value = "madpl")]
    pub algo: Algorithm,
    /// Directory with pretrained `system.json` and `user.json`; random init when omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Training TOML (hyperparameters and reward constants).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Goal set (JSONL); defaults to the world's fixed set.
    #[arg(long)]
    pub goals: Option<PathBuf>,
    /// `USER:SYSTEM`, each one of `rule`, `trained`, `sl` or a checkpoint directory.
    #[arg(long, default_value = "trained:trained")]
    pub pair: String,
    /// Checkpoints used for `trained`.
    #[arg(long)]
    pub policies: Option<PathBuf>,
    /// Checkpoints used for `sl`.
    #[arg(long)]
    pub sl: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub max_turns: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Training run directories.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Episodes per curve point.
    #[arg(long, default_value_t = 100)]
    pub bin: usize,
    /// Trailing episodes averaged for the table.
    #[arg(long, default_value_t = 500)]
    pub final_window: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Output directory for the re-run (defaults to the original).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
