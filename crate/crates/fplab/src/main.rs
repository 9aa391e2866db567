use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fplab::studies::{load_and_validate, run_study, StudyKind, StudySpec};

#[derive(Parser)]
#[command(
    name = "fplab",
    version,
    about = "Fokker-Planck laboratory: periodic-box solvers, commutator ladders, and estimate audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StudyArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Parent directory for run outputs; each run gets a hashed subdirectory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ladder. Mollification scales in grid spacings
    /// (commutator-study, stability-study), grid sizes (regularity-study,
    /// equivalence-check), or particle counts (sde-compare).
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    /// Override the grid size.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario against the standing assumptions and print a report.
    Validate {
        /// Scenario description (JSON).
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve the divergence form and record per-step diagnostics.
    Solve(StudyArgs),
    /// Mollification ladder for transport, diffusion, and flux commutators.
    CommutatorStudy(StudyArgs),
    /// Space-time gradient budgets under grid refinement.
    RegularityStudy(StudyArgs),
    /// Gaps between solves with coefficients mollified at shrinking scales.
    StabilityStudy(StudyArgs),
    /// L^q growth against the drift-divergence budget, plus dissipation.
    EnergyAudit(StudyArgs),
    /// Distance between the two equation forms on a refinement ladder.
    EquivalenceCheck(StudyArgs),
    /// Empirical particle law against the solved density.
    SdeCompare(StudyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Validate { scenario } => return validate(&scenario),
        Command::Solve(a) => (StudyKind::Solve, a),
        Command::CommutatorStudy(a) => (StudyKind::Commutator, a),
        Command::RegularityStudy(a) => (StudyKind::Regularity, a),
        Command::StabilityStudy(a) => (StudyKind::Stability, a),
        Command::EnergyAudit(a) => (StudyKind::EnergyAudit, a),
        Command::EquivalenceCheck(a) => (StudyKind::Equivalence, a),
        Command::SdeCompare(a) => (StudyKind::SdeCompare, a),
    };
    let spec = StudySpec {
        kind,
        scenario: args.scenario,
        out_dir: args.out,
        seed: args.seed,
        ladder: args.ladder,
        grid: args.grid,
    };
    match run_study(&spec) {
        Ok(outcome) => {
            for v in &outcome.manifest.verdicts {
                println!("{}", v.render());
            }
            println!("run directory: {}", outcome.run_dir.display());
            if outcome.manifest.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{e:#}"), "study": kind.label() })
            );
            ExitCode::from(2)
        }
    }
}

fn validate(scenario: &PathBuf) -> ExitCode {
    match load_and_validate(scenario) {
        Ok((_, report)) => {
            print!("{}", report.render());
            if report.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "scenario invalid", "report": report })
                );
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::from(2)
        }
    }
}
