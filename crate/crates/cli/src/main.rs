mod commands;
mod config;
mod error;
mod work;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::{keys_help, RunConfig};
use crate::error::CliError;
use crate::work::Work;

/// Image grammar pipeline: synthetic data, corruption, part segmentation,
/// syntax learning and grammar-based corruption detection.
#[derive(Parser)]
#[command(name = "grammarscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: PathBuf,
    /// Work directory holding every artifact.
    #[arg(long, short)]
    work: PathBuf,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace existing output directories.
    #[arg(long)]
    force: bool,
    /// Worker threads for scoring (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset split: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic images, masks and train/val/test manifests.
    GenData(Common),
    /// Corrupt half of a split and record what was done.
    Corrupt(SplitArgs),
    /// Train the part segmentation model (PiCIE, then supervised fine-tune).
    TrainCluster(Common),
    /// Segment a split with the trained model.
    Segment(SplitArgs),
    /// Train the bidirectional LSTM on segmented train masks.
    TrainSyntax(Common),
    /// Choose the detection threshold on the corrupted val split.
    Calibrate(Common),
    /// Score the corrupted test split and write the scenario result.
    Evaluate(Common),
    /// Pick the original among permuted copies of test images.
    Puzzle(Common),
    /// Merge scenario results into one CSV.
    Report {
        /// Work directory (results are read from its results/ folder).
        #[arg(long, short)]
        work: PathBuf,
        /// Output CSV (default: <work>/report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Result files to merge instead of every results/*.json.
        files: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Corrupt(_) => "corrupt",
            Command::TrainCluster(_) => "train-cluster",
            Command::Segment(_) => "segment",
            Command::TrainSyntax(_) => "train-syntax",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
            Command::Puzzle(_) => "puzzle",
            Command::Report { .. } => "report",
        }
    }
}

fn context(c: &Common) -> Result<Ctx, CliError> {
    let cfg = RunConfig::load(&c.config, &c.set)?;
    if let Some(jobs) = c.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    Ok(Ctx { cfg, work: Work::new(&c.work), force: c.force })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(c) => commands::gen_data(&context(&c)?),
        Command::Corrupt(s) => commands::corrupt(&context(&s.common)?, &s.split),
        Command::TrainCluster(c) => commands::train_cluster(&context(&c)?),
        Command::Segment(s) => commands::segment(&context(&s.common)?, &s.split),
        Command::TrainSyntax(c) => commands::train_syntax_cmd(&context(&c)?),
        Command::Calibrate(c) => commands::calibrate(&context(&c)?),
        Command::Evaluate(c) => commands::evaluate(&context(&c)?),
        Command::Puzzle(c) => commands::puzzle(&context(&c)?),
        Command::Report { work, out, files } => {
            let path = commands::report(&Work::new(&work), &files, out.as_deref())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAMMARSCOPE_LOG", "warn")).init();
    let keys = keys_help();
    let mut cmd = Cli::command();
    for name in ["gen-data", "corrupt", "train-cluster", "segment", "train-syntax", "calibrate", "evaluate", "puzzle"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(keys.clone()));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line(name));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
