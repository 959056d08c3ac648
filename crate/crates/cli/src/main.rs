//! `fadc`: train, evaluate and inspect frequency-adaptive classifiers.
//!
//! Exit status: 0 success, 1 I/O or internal error, 2 usage, 3 config,
//! 4 data, 5 numeric abort, 6 malformed checkpoint or image.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fadc::config::RunConfig;
use fadc::data::{generate_synth, write_synth, SynthSpec};
use fadc::gradcheck::{run_suite, SuiteConfig};
use fadc::run::{format_report, load_model, run_eval, run_inspect, run_train};
use fadc::train::{BEST_CHECKPOINT, FINAL_CHECKPOINT};
use fadc::Error;

#[derive(Parser)]
#[command(name = "fadc", version, about = "Frequency-adaptive image classification")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, metrics.csv and steps.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override one config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Report accuracy and loss of a checkpoint on a class-per-directory corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the band reconstructions and masks of one image.
    InspectDct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic band-signal corpus.
    GenSynth {
        /// `key = value` spec file; the default spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Data(_) => 4,
        Error::Numeric(_) => 5,
        Error::Format { .. } => 6,
        Error::Io { .. } | Error::Shape(_) | Error::Domain(_) | Error::Invariant(_) => 1,
    }
}

fn read_text(path: &Path) -> fadc::Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn run(cmd: Command) -> fadc::Result<bool> {
    match cmd {
        Command::Train { config, out, overrides } => {
            let mut cfg = RunConfig::parse(&read_text(&config)?)?;
            cfg.apply_overrides(&overrides)?;
            let result = run_train(&cfg, &out)?;
            if let Some(last) = result.epochs.last() {
                println!("epochs={}", result.epochs.len());
                println!("final_train_loss={}", last.train_loss);
            }
            if let (Some(e), Some(acc)) = (result.best_epoch, result.best_val_acc) {
                println!("best_epoch={e}");
                println!("best_val_acc={acc}");
                println!("best_checkpoint={}", out.join(BEST_CHECKPOINT).display());
            }
            println!("final_checkpoint={}", out.join(FINAL_CHECKPOINT).display());
            Ok(true)
        }
        Command::Eval { checkpoint, data } => {
            let (cfg, _) = load_model(&checkpoint)?;
            let (report, classes) = run_eval(&checkpoint, &data)?;
            print!("{}", format_report(&report, &classes, cfg.variant.is_bayesian()));
            Ok(true)
        }
        Command::InspectDct { checkpoint, image, out } => {
            let ins = run_inspect(&checkpoint, &image, &out)?;
            println!("c1={}", ins.c1);
            println!("c2={}", ins.c2);
            Ok(true)
        }
        Command::GenSynth { spec, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::parse(&read_text(&p)?)?,
                None => SynthSpec::default(),
            };
            let corpus = generate_synth(&spec)?;
            write_synth(&corpus, &spec, &out)?;
            println!(
                "train={} val={} test={} classes={}",
                corpus.train.len(),
                corpus.val.len(),
                corpus.test.len(),
                corpus.classes.len()
            );
            Ok(true)
        }
        Command::Gradcheck { trials, seed } => {
            let report = run_suite(&SuiteConfig { trials, seed, ..SuiteConfig::default() })?;
            for line in report.lines() {
                println!("{line}");
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
