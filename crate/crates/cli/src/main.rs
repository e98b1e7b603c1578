use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use crowdspeak_cli::artifacts::{append_log, LogEntry, RunLock, VERSION};
use crowdspeak_cli::config::RunConfig;
use crowdspeak_cli::error::Result;
use crowdspeak_cli::stages::{self, Context};

/// Speaking-status detection from overhead video and wearable acceleration.
#[derive(Debug, Parser)]
#[command(name = "crowdspeak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short, default_value = "run.toml")]
    config: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `data`.
    Synth(Common),
    /// Link poses into tracks and count identity switches.
    Track(Common),
    /// Dense trajectories from rendered frames.
    Extract(Common),
    /// Build examples and apply the trajectory filters.
    Filter(Common),
    /// Fit PCA and the GMM codebook.
    FitFv(Common),
    /// Fisher vectors for the configured method.
    Encode(Common),
    /// Train the SVM and the accelerometer CNN.
    Train(Common),
    /// Score every example with the trained models.
    Score(Common),
    /// Late fusion of video and acceleration scores.
    Fuse(Common),
    /// Full cross-validated experiment; writes report.json.
    Evaluate(Common),
    /// Tables and figures from report.json.
    Report {
        #[command(flatten)]
        common: Common,
        /// Proceed even when artifacts come from different configs.
        #[arg(long)]
        force: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Track(_) => "track",
            Command::Extract(_) => "extract",
            Command::Filter(_) => "filter",
            Command::FitFv(_) => "fit-fv",
            Command::Encode(_) => "encode",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Fuse(_) => "fuse",
            Command::Evaluate(_) => "evaluate",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Track(c)
            | Command::Extract(c)
            | Command::Filter(c)
            | Command::FitFv(c)
            | Command::Encode(c)
            | Command::Train(c)
            | Command::Score(c)
            | Command::Fuse(c)
            | Command::Evaluate(c) => c,
            Command::Report { common, .. } => common,
        }
    }
}

fn run(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let cfg = RunConfig::load(&common.config, common.seed)?;
    let threads = if common.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        common.threads
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        log::debug!("thread pool already set up: {e}");
    }
    let ctx = Context::new(cfg);
    let _lock = RunLock::acquire(&ctx.cfg.output)?;
    log::info!(
        "{} (config {}, seed {}, {threads} threads)",
        cmd.name(),
        &ctx.hash[..12],
        ctx.cfg.seed
    );
    let start = Instant::now();
    let outcome = match cmd {
        Command::Synth(_) => stages::synth(&ctx),
        Command::Track(_) => stages::track(&ctx),
        Command::Extract(_) => stages::extract(&ctx),
        Command::Filter(_) => stages::filter(&ctx),
        Command::FitFv(_) => stages::fit_fv(&ctx),
        Command::Encode(_) => stages::encode(&ctx),
        Command::Train(_) => stages::train(&ctx),
        Command::Score(_) => stages::score(&ctx),
        Command::Fuse(_) => stages::fuse(&ctx),
        Command::Evaluate(_) => stages::evaluate(&ctx),
        Command::Report { force, .. } => stages::report(&ctx, *force),
    };
    let entry = LogEntry {
        stage: cmd.name().into(),
        config_hash: ctx.hash.clone(),
        seed: ctx.cfg.seed,
        version: VERSION.into(),
        threads,
        wall_seconds: start.elapsed().as_secs_f64(),
        status: match &outcome {
            Ok(_) => "ok".into(),
            Err(e) => format!("error (exit {}): {e}", e.exit_code()),
        },
    };
    if let Err(e) = append_log(&ctx.cfg.output, &entry) {
        log::warn!("could not append to run.log: {e}");
    }
    println!("{}", outcome?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
