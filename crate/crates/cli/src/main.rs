//! `blockcot` command-line interface.
//!
//! Every subcommand reads and writes JSON-Lines. Exit status is 0 on success,
//! 1 when some record fails validation, and 2 on usage errors or malformed
//! input.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod jsonl;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blockcot", version, about = "Block-structured chain-of-thought tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Io {
    /// Input JSON-Lines file; stdin when omitted or `-`.
    pub input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct SimArgs {
    /// Sim policy config (TOML).
    #[arg(long = "sim-config")]
    pub sim_config: Option<PathBuf>,
    /// Problem records; defaults to a synthetic set over the difficulty grid.
    #[arg(long)]
    pub problems: Option<PathBuf>,
    /// Size of the synthetic problem set.
    #[arg(long, default_value_t = 20)]
    pub num_problems: usize,
    #[arg(long, env = "BLOCKCOT_SEED")]
    pub seed: Option<u64>,
    /// Samples per problem.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Auto,
    Override,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    PerProblem,
    Batch,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Parse response texts into block traces.
    Parse {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        lenient: bool,
    },
    /// Check declared against actual block counts.
    Validate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        lenient: bool,
    },
    /// Length-budget rewards per response.
    DastScore {
        #[command(flatten)]
        io: Io,
        /// Reward config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Preference pairs for DPO.
    MakePairs {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reward-gap threshold; overrides the config.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lenient: bool,
    },
    /// Per-sample advantages with accuracy-scaled multipliers.
    Advantage {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reference samples: lines of {problem_id, ref_correct: [...]}.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScaleArg::PerProblem)]
        scale: ScaleArg,
        /// Append a batch summary line.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        lenient: bool,
    },
    /// Clipped surrogate for {logp_new, logp_old, advantage} lines.
    PpoLoss {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Decode responses from the simulated policy.
    DecodeSim {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        cap_low: usize,
        /// Defaults to the policy's maximum block count.
        #[arg(long)]
        cap_high: Option<usize>,
        /// Take the most likely admissible block count instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        retry_budget: usize,
    },
    /// Accuracy and length across block caps.
    CapSweep {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Comma-separated caps: N (at most N), >N, A-B, auto.
        #[arg(long, default_value = "0,2,6,>6,auto")]
        caps: String,
        /// Render a text table instead of JSON-Lines.
        #[arg(long)]
        table: bool,
    },
    /// Validate segmentations: {id, difficulty, original, segmented}.
    SegmentCheck {
        #[command(flatten)]
        io: Io,
    },
    /// Evaluation report over a response file.
    Stats {
        #[command(flatten)]
        io: Io,
        /// Problem records supplying difficulties.
        #[arg(long)]
        problems: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "2.0-4.5")]
        easy: String,
        #[arg(long, default_value = "8.0-9.0")]
        difficult: String,
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        table: bool,
    },
}

#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Invalid,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse { io, lenient } => commands::parse(&io, lenient),
        Command::Validate { io, lenient } => commands::validate(&io, lenient),
        Command::DastScore { io, config } => commands::dast_score(&io, config.as_deref()),
        Command::MakePairs {
            io,
            config,
            delta,
            lenient,
        } => commands::make_pairs(&io, config.as_deref(), delta, lenient),
        Command::Advantage {
            io,
            config,
            reference,
            scale,
            summary,
            lenient,
        } => commands::advantage(
            &io,
            config.as_deref(),
            reference.as_deref(),
            scale,
            summary,
            lenient,
        ),
        Command::PpoLoss { io, config } => commands::ppo_loss(&io, config.as_deref()),
        Command::DecodeSim {
            sim,
            out,
            mode,
            cap_low,
            cap_high,
            greedy,
            retry_budget,
        } => commands::decode_sim(
            &sim,
            out.as_deref(),
            mode,
            cap_low,
            cap_high,
            greedy,
            retry_budget,
        ),
        Command::CapSweep {
            sim,
            out,
            caps,
            table,
        } => commands::cap_sweep(&sim, out.as_deref(), &caps, table),
        Command::SegmentCheck { io } => commands::segment_check(&io),
        Command::Stats {
            io,
            problems,
            config,
            easy,
            difficult,
            lenient,
            table,
        } => commands::stats(
            &io,
            &problems,
            config.as_deref(),
            &easy,
            &difficult,
            lenient,
            table,
        ),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
