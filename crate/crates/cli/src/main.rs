use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clpriv::defense::DefenseConfig;
use clpriv::harness::{
    emit_report, run_experiment, summary_table, AuditReport, ExperimentConfig, Phases, ReportFormat, RunOptions,
    RunOutput,
};
use clpriv::{Error, Result, Stage};

#[derive(Parser)]
#[command(name = "clpriv", version, about = "Curriculum-learning training and privacy auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured targets and report their accuracy.
    Train(RunArgs),
    /// Train targets and run the configured attacks.
    Attack(RunArgs),
    /// Like `attack`, but requires a defense in the config.
    Defend(RunArgs),
    /// Run the memorization experiment only.
    Memorize(RunArgs),
    /// Compute KNN-Shapley values only.
    Shapley(RunArgs),
    /// Print the summary of an existing report and rewrite its CSV summary.
    Report(ReportArgs),
    /// Full pipeline: targets, attacks, memorization and Shapley.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to the config's output_dir, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.json` written by an earlier run.
    #[arg(long)]
    input: PathBuf,
    /// Write `{id}/summary.csv` under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config).map_err(|e| tag(e, Stage::Config))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.repeat {
        cfg.repeat = r;
    }
    Ok(cfg)
}

fn tag(e: Error, stage: Stage) -> Error {
    match e {
        tagged @ Error::Stage { .. } => tagged,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    }
}

fn execute(args: &RunArgs, phases: Phases, need_defense: bool) -> Result<RunOutput> {
    let cfg = load_config(args)?;
    if need_defense && cfg.defense == DefenseConfig::None {
        return Err(tag(Error::Config("`defend` needs a [defense] section".into()), Stage::Config));
    }
    let out_root = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let output = run_experiment(&cfg, &RunOptions { jobs: args.jobs, phases })?;
    emit_report(&output, &out_root, ReportFormat::Json)?;
    emit_report(&output, &out_root, ReportFormat::CsvBundle)?;
    print!("{}", summary_table(&output.report));
    println!("wrote {}", out_root.join(&output.report.id).display());
    Ok(output)
}

fn report(args: &ReportArgs) -> Result<()> {
    let r = AuditReport::from_path(&args.input).map_err(|e| tag(e, Stage::Report))?;
    print!("{}", summary_table(&r));
    if let Some(out) = &args.out {
        let output = RunOutput {
            details: vec![None; r.trials.len()],
            report: r,
        };
        emit_report(&output, Path::new(out), ReportFormat::CsvBundle)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => execute(a, Phases::TRAIN, false),
        Command::Attack(a) => execute(a, Phases::ATTACK, false),
        Command::Defend(a) => execute(a, Phases::ATTACK, true),
        Command::Memorize(a) => execute(a, Phases::MEMORIZATION, false),
        Command::Shapley(a) => execute(a, Phases::SHAPLEY, false),
        Command::Run(a) => execute(a, Phases::ALL, false),
        Command::Report(a) => return finish(report(a).map(|_| 0)),
    };
    finish(result.map(|o| o.report.failed()))
}

/// Exit 0 when every trial completed, 3 when some failed, 1 on a run-level error.
fn finish(result: Result<usize>) -> ExitCode {
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("error: {failed} trial(s) failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
