use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sigstop::experiments::{
    emit_csv, run_selftest, run_selftest_with, run_table, ExperimentConfig, ModelKind, RunOptions,
};
use sigstop::tensor_algebra::{LinearFunctional, Word};
use sigstop::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

/// Primal and dual bounds for optimal stopping with path signatures.
#[derive(Parser)]
#[command(name = "sigstop", version)]
struct Cli {
    /// Worker threads; falls back to SIGSTOP_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct TableArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; defaults to `output.csv` of the config, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the training seed by N and the evaluation seed by N+1.
    #[arg(long, value_name = "N")]
    seed_override: Option<u64>,
    /// Report wall-clock seconds per row instead of NA.
    #[arg(long)]
    timings: bool,
    /// Run table rows concurrently.
    #[arg(long)]
    parallel_rows: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fractional Brownian motion table: one row per Hurst parameter.
    FbmTable(TableArgs),
    /// Rough Bergomi Bermudan put table: one row per strike.
    RbergomiTable(TableArgs),
    /// Invariant checks at tiny sizes.
    Selftest,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("SIGSTOP_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("SIGSTOP_THREADS={s:?} is not a thread count")),
        Err(_) => Ok(None),
    }
}

/// Deliberately wrong shuffle product: keeps only the concatenation `wv`.
fn concatenation_only(w: &Word, v: &Word) -> LinearFunctional {
    let mut letters = w.letters().to_vec();
    letters.extend_from_slice(v.letters());
    let alphabet = letters.iter().copied().max().unwrap_or(1) as usize;
    LinearFunctional::word(Word::new(&letters, alphabet).expect("letters from valid words"))
}

fn run_table_command(args: TableArgs, expected: ModelKind) -> u8 {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if cfg.model.kind != expected {
        eprintln!(
            "{}: model.kind does not match this subcommand",
            args.config.display()
        );
        return EXIT_CONFIG;
    }
    if let Some(seed) = args.seed_override {
        cfg.override_seed(seed);
    }
    let opts = RunOptions {
        timings: args.timings,
        parallel_rows: args.parallel_rows,
    };
    let outcome = match run_table(&cfg, &opts) {
        Ok(o) => o,
        Err(Error::Config(m)) => {
            eprintln!("configuration error: {m}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("{e}");
            return EXIT_NUMERICAL;
        }
    };
    if let Err(e) = emit_csv(&cfg, args.out.as_deref(), &outcome.rows, args.timings) {
        eprintln!("cannot write CSV: {e}");
        return EXIT_NUMERICAL;
    }
    if outcome.all_ok() {
        0
    } else {
        for (key, reason) in &outcome.failed {
            eprintln!("row {key} failed: {reason}");
        }
        EXIT_NUMERICAL
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(m) => {
            eprintln!("{m}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("--threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is built once");
    }
    let code = match cli.command {
        Command::FbmTable(args) => run_table_command(args, ModelKind::Fbm),
        Command::RbergomiTable(args) => run_table_command(args, ModelKind::Rbergomi),
        Command::Selftest => {
            let report = match std::env::var("SIGSTOP_SELFTEST_MUTATE").as_deref() {
                Ok("shuffle") => run_selftest_with(concatenation_only),
                _ => run_selftest(),
            };
            print!("{report}");
            if report.passed() {
                0
            } else {
                EXIT_SELFTEST
            }
        }
    };
    ExitCode::from(code)
}
