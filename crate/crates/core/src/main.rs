use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ensemble_mhd::harness::{
    run_convergence, run_custom, run_efficiency, run_stability, CliOverrides, Experiment, ExperimentConfig,
};
use ensemble_mhd::Error;

/// Ensemble finite-element experiments for reduced MHD.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error and rate table over a mesh/time-step ladder.
    Converge(Common),
    /// Ensemble versus per-member timing and accuracy.
    Efficiency(Common),
    /// Energy traces for several time steps.
    Stability(Common),
    /// General run with norms and monitors every `stride` steps.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: $ENSEMBLE_MHD_OUT or ./results).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Force single-threaded, bitwise reproducible execution.
    #[arg(long)]
    serial: bool,
    /// Worker threads; more than one enables parallel mode.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Flag steps whose CFL monitor exceeds this value.
    #[arg(long, value_name = "X")]
    cfl_threshold: Option<f64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn run(experiment: Experiment, common: &Common) -> Result<(), Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(experiment, path)?,
        None => ExperimentConfig::defaults(experiment),
    };
    cfg.apply_cli(&CliOverrides {
        out_dir: common.out.clone(),
        serial: common.serial,
        threads: common.threads,
        cfl_threshold: common.cfl_threshold,
    });
    cfg.validate()?;
    let files = match experiment {
        Experiment::Converge => {
            let r = run_convergence(&cfg)?;
            for (j, s) in r.members.iter().enumerate() {
                for (k, name) in s.names.iter().enumerate() {
                    let errs: Vec<String> = s.column(k).iter().map(|e| format!("{e:.4e}")).collect();
                    let rates: Vec<String> = s.rates(k)?.iter().map(|r| format!("{r:.3}")).collect();
                    println!("member {} {name}: errors [{}] rates [{}]", j + 1, errs.join(", "), rates.join(", "));
                }
            }
            r.outputs.files
        }
        Experiment::Efficiency => {
            let r = run_efficiency(&cfg)?;
            for row in &r.rows {
                println!(
                    "h={:.4} dt={:.4e} J={}: ensemble {:.3}s err {:.4e} | serial {:.3}s err {:.4e} | speedup {:.2}",
                    row.h,
                    row.dt,
                    row.members,
                    row.ensemble_seconds,
                    row.ensemble_u_error,
                    row.serial_seconds,
                    row.serial_u_error,
                    row.speedup
                );
            }
            r.outputs.files
        }
        Experiment::Stability => {
            let r = run_stability(&cfg)?;
            for run in &r.runs {
                println!(
                    "dt={:.1e}: E0={:.4e} E_final={:.4e}{}",
                    run.dt,
                    run.initial_energy(),
                    run.final_energy(),
                    run.diverged_at.map_or(String::new(), |s| format!(" diverged at step {s}"))
                );
            }
            r.outputs.files
        }
        Experiment::Run => {
            let r = run_custom(&cfg)?;
            for run in &r.runs {
                println!("n={} dt={:.4e}: {} steps", run.divisions, run.dt, run.final_state.n);
            }
            r.outputs.files
        }
    };
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Converge(c) => (Experiment::Converge, c),
        Command::Efficiency(c) => (Experiment::Efficiency, c),
        Command::Stability(c) => (Experiment::Stability, c),
        Command::Run(c) => (Experiment::Run, c),
    };
    match run(experiment, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
