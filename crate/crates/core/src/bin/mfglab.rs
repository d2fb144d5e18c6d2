use clap::{Parser, Subcommand};
use mfglab::harness::{run_to_dir, Command, Config};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mfglab", version, about = "Mean-field game experiments with common noise")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json, CSVs and meta.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Added to `seeds.start`.
    #[arg(long, default_value_t = 0)]
    seed_offset: usize,
    /// Worker threads; overrides `workers` from the config (0: one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Particle-versus-SPDE gap of measure functionals against N.
    Chaos(RunArgs),
    /// The same for a tagged player with its own control.
    TaggedChaos(RunArgs),
    /// Exact generator decomposition on random atomic configurations.
    GeneratorCheck(RunArgs),
    /// First and second sensitivities to the initial law and their oracles.
    Sensitivity(RunArgs),
    /// SPDE solves per W path with conservation and cross-method diagnostics.
    SpdeSolve(RunArgs),
    /// Damped Picard iteration for MFG consistency.
    MfgFixedPoint(RunArgs),
    /// Family-restricted ε-Nash estimate against N.
    Nash(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Chaos(a) => (Command::Chaos, a),
        Cmd::TaggedChaos(a) => (Command::TaggedChaos, a),
        Cmd::GeneratorCheck(a) => (Command::GeneratorCheck, a),
        Cmd::Sensitivity(a) => (Command::Sensitivity, a),
        Cmd::SpdeSolve(a) => (Command::SpdeSolve, a),
        Cmd::MfgFixedPoint(a) => (Command::MfgFixedPoint, a),
        Cmd::Nash(a) => (Command::Nash, a),
    };
    match run(command, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e {
                mfglab::Error::Config(list) => {
                    eprintln!("invalid configuration:");
                    for item in list {
                        eprintln!("  {item}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, args: &RunArgs) -> mfglab::Result<()> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| mfglab::Error::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let base = Config::parse(command, &text, &[])?;
    let cfg = if args.seed_offset > 0 {
        base.with("seeds.start", &(base.usize("seeds.start") + args.seed_offset).to_string())?
    } else {
        base
    };
    let workers = args.workers.unwrap_or_else(|| cfg.workers());
    run_to_dir(&cfg, &args.out, workers)?;
    println!("{} finished; config hash {}; outputs in {}", command.name(), cfg.content_hash(), args.out.display());
    Ok(())
}
