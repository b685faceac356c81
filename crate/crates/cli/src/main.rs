//! Batch CLI: load a scenario file, dispatch to the engine, emit a
//! deterministic structured document on stdout (and to `--out` with any
//! numeric artifacts next to it). Exit codes: 0 pass, 1 verification or
//! engine failure, 2 input error.

mod report;
mod scenario;
mod tasks;

use clap::{Args, Parser, Subcommand};
use report::{ChartEcho, ErrorEcho, ReportDoc};
use scenario::CliError;
use std::path::PathBuf;
use std::process::ExitCode;
use tasks::TaskCtx;

#[derive(Parser)]
#[command(
    name = "varmax",
    about = "Maximal-degree variational principles for volume-preserving dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TaskArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Seed for all randomized sampling; overrides the scenario options.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero-test trial count; overrides the scenario options.
    #[arg(long)]
    trials: Option<u32>,
    /// Zero-test tolerance; overrides the scenario options.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the document here; numeric artifacts go next to it with
    /// documented suffixes (.trajectory.tsv, .phi0.tsv, .section.tsv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the annihilator field of a maximal-degree problem.
    Extract(TaskArgs),
    /// Build θ for general volume-preserving data (Ω, γ).
    BuildLiouville(TaskArgs),
    /// Build θ for Hamiltonian data (ω, β, H).
    BuildHamiltonian(TaskArgs),
    /// Build θ for Nambu data (Ω, H₂…H_p).
    BuildNambu(TaskArgs),
    /// Build θ for hyperhamiltonian data (three ω_α, three Hamiltonians).
    BuildHyperham(TaskArgs),
    /// Check that a field annihilates a form, symbolically and numerically.
    Verify(TaskArgs),
    /// Integrate a field with invariant monitors.
    Flow(TaskArgs),
    /// Build a critical section by flowing initial data and measure its
    /// pullback residual.
    Section(TaskArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &TaskArgs) {
        match self {
            Command::Extract(a) => ("extract", a),
            Command::BuildLiouville(a) => ("build-liouville", a),
            Command::BuildHamiltonian(a) => ("build-hamiltonian", a),
            Command::BuildNambu(a) => ("build-nambu", a),
            Command::BuildHyperham(a) => ("build-hyperham", a),
            Command::Verify(a) => ("verify", a),
            Command::Flow(a) => ("flow", a),
            Command::Section(a) => ("section", a),
        }
    }
}

fn empty_chart_echo() -> ChartEcho {
    ChartEcho {
        coords: Vec::new(),
        vertical: Vec::new(),
        time: None,
    }
}

fn error_doc(task: &str, seed: u64, chart: ChartEcho, err: &CliError) -> ReportDoc {
    let mut doc = ReportDoc::new(task, seed, chart);
    doc.status = "error".to_string();
    doc.errors.push(ErrorEcho {
        code: err.code.clone(),
        message: err.message.clone(),
    });
    doc
}

fn execute(task: &'static str, args: &TaskArgs) -> (ReportDoc, ExitCode) {
    let scenario = match scenario::load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e) => return (error_doc(task, 0, empty_chart_echo(), &e), ExitCode::from(2)),
    };
    let seed = args.seed.or(scenario.options.seed).unwrap_or(0);
    let chart_echo = ChartEcho {
        coords: scenario.chart.coords.clone(),
        vertical: scenario.chart.vertical.clone(),
        time: scenario.chart.time.clone(),
    };
    let ctx = TaskCtx {
        seed,
        cfg: scenario.options.sample_config(args.trials, args.tol),
        out: args.out.clone(),
    };
    match tasks::run_task(task, &scenario, &ctx) {
        Ok(doc) => {
            let code = if doc.status == "pass" { 0 } else { 1 };
            (doc, ExitCode::from(code))
        }
        Err(e) => {
            let code = if e.input { 2 } else { 1 };
            (error_doc(task, seed, chart_echo, &e), ExitCode::from(code))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = cli.command.split();
    let (doc, code) = execute(task, args);
    let rendered = doc.render();
    print!("{rendered}");
    if let Some(out) = &args.out {
        if let Err(e) = std::fs::write(out, &rendered) {
            eprintln!("failed to write {}: {e}", out.display());
            return ExitCode::from(1);
        }
    }
    code
}
