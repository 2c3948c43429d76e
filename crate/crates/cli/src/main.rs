use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod settings;

use settings::{GlobalArgs, Settings};

#[derive(Parser)]
#[command(name = "oasd", version)]
#[command(about = "Online anomalous subtrajectory detection on road networks")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: network, trajectories, manifest
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; the flags below override it
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        trajs_per_group: Option<usize>,
        #[arg(long)]
        anomaly_ratio: Option<f64>,
        #[arg(long)]
        corridors: Option<usize>,
        /// Emit the two-partition route-swap scenario instead
        #[arg(long)]
        drift: bool,
        /// Share of trajectories written to test.jsonl
        #[arg(long, default_value_t = 0.3)]
        test_frac: f64,
    },
    /// Build the transition statistics from historical trajectories
    Preprocess {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm-start both networks on noisy labels
    Pretrain {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log (JSONL)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Joint training with model selection on labeled trajectories
    Train {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Pretrained checkpoint; pretraining runs first when omitted
        #[arg(long)]
        model: Option<PathBuf>,
        /// Labeled validation trajectories; split from the training file when omitted
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Detect anomalous subtrajectories (file or streaming mode)
    Detect {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Trajectory JSONL to label; omit with --stream
        #[arg(long, required_unless_present = "stream")]
        trajectories: Option<PathBuf>,
        /// Read open/point commands from --input or stdin
        #[arg(long, conflicts_with = "trajectories")]
        stream: bool,
        #[arg(long, requires = "stream")]
        input: Option<PathBuf>,
        /// Events JSONL; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-trajectory label sequences (JSONL)
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Score detections against ground truth
    Eval {
        /// JSONL with "id" and "labels" (trajectory files qualify)
        #[arg(long)]
        truth: PathBuf,
        /// Label JSONL or detection events JSONL
        #[arg(long)]
        pred: PathBuf,
        /// Report JSON; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frozen versus fine-tuned models over time partitions
    Drift {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        test_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F1 as historical trajectories are dropped
    Coldstart {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-point detection latency by trajectory length
    Bench {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn report(code: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "code": code, "message": message })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            report(
                "usage",
                msg.lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: "),
            );
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OASD_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let result = Settings::resolve(&cli.global).and_then(|s| commands::run(cli.command, &s));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
