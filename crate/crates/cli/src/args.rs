use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "nestmdp", version, about = "Solve and compare tabular MDP frameworks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one can also be set through the
/// `NESTMDP_*` environment variable named next to it; the flag wins.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Value-iteration stopping tolerance (sup-norm step).
    #[arg(long, global = true, env = "NESTMDP_TOL", default_value_t = 1e-10)]
    pub tol: f64,
    /// Value-iteration sweep limit.
    #[arg(long, global = true, env = "NESTMDP_MAX_ITER", default_value_t = 100_000)]
    pub max_iter: usize,
    /// Monte Carlo samples per stochastic backup.
    #[arg(long, global = true, env = "NESTMDP_MC_SAMPLES", default_value_t = 100_000)]
    pub mc_samples: usize,
    #[arg(long, global = true, env = "NESTMDP_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Random reward settings per equivalence check.
    #[arg(long, global = true, env = "NESTMDP_TRIALS", default_value_t = 50)]
    pub trials: usize,
    /// Output directory.
    #[serde(skip)]
    #[arg(long, global = true, env = "NESTMDP_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Regularized model to constrained model.
    R2ct,
    /// Constrained model to regularized (Lagrangian) model.
    Ct2r,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a model file under its framework block.
    Solve { model: PathBuf },
    /// Check two model files for equivalence over random reward settings.
    Compare {
        x: PathBuf,
        y: PathBuf,
        /// JSON reward offset: one number, or an `[s][a]` array.
        #[arg(long)]
        offset: Option<PathBuf>,
        /// Gap tolerance for the equivalence verdict.
        #[arg(long, env = "NESTMDP_EQ_TOL", default_value_t = 1e-6)]
        eq_tol: f64,
        /// Skip the all-zero and large-gap reward settings.
        #[arg(long)]
        no_corners: bool,
    },
    /// Run the nested-relation suite and write plot-ready data.
    Figure1 {
        #[arg(long, env = "NESTMDP_EQ_TOL", default_value_t = 1e-6)]
        eq_tol: f64,
    },
    /// Convert between regularized and constrained formulations.
    Convert { direction: Direction, model: PathBuf },
    /// Write a random model file.
    Gen {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 0.9)]
        discount: f64,
        #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
        reward_lo: f64,
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        reward_hi: f64,
    },
}
