use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degenerate_parabolic::harness::{catalog_listing, run_experiment, ExperimentConfig, Stages};

#[derive(Parser)]
#[command(name = "degpar", version, about = "Boundary regularity experiments for degenerate/singular parabolic equations")]
struct Cli {
    /// Print registered operators, barriers and data selectors.
    #[arg(long)]
    list_catalog: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Cauchy-Dirichlet problem and write the final slice.
    Solve(Common),
    /// Solve, then run boundary fits and Lipschitz/Hopf checks.
    Fit(Common),
    /// Run the barrier certificates.
    Certify(Common),
    /// Run the comparison suite.
    Suite(Common),
    /// Run the convergence study.
    Converge(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_catalog {
        print!("{}", catalog_listing());
        if cli.command.is_none() {
            return ExitCode::SUCCESS;
        }
    }
    let Some(cmd) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(2);
    };
    let (stages, args) = match cmd {
        Command::Solve(a) => (Stages::SOLVE, a),
        Command::Fit(a) => (Stages::FIT, a),
        Command::Certify(a) => (Stages::CERTIFY, a),
        Command::Suite(a) => (Stages::SUITE, a),
        Command::Converge(a) => (Stages::CONVERGE, a),
    };
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.or_else(|| cfg.output.clone());
    match run_experiment(&cfg, stages, out.as_deref()) {
        Ok(o) => {
            for c in &o.report.checks {
                println!("{:<48} {:?} {}", c.name, c.status, c.measured);
            }
            println!("{}", if o.report.pass { "PASS" } else { "FAIL" });
            if o.report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
