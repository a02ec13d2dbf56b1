use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lfbp_cli::{dispatch, parse_config, CliError, Command, Format};

#[derive(Parser, Debug)]
#[command(name = "lfbp", version, about = "Extinction-time laboratory for two-type linear-fractional branching processes")]
struct Args {
    /// Overrides the command in the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn run(args: Args) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(c) = args.command {
        cfg.command = c;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(t) = args.threads.or(cfg.threads) {
        if t == 0 {
            return Err(CliError::Config("--threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    dispatch(&cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
