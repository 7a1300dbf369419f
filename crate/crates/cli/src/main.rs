use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use districting_cli::commands::{self, RunOptions};
use districting_cli::scenario::resolve_output_dir;
use districting_cli::{Bundle, CliError, CliResult, Scenario};

#[derive(Parser)]
#[command(name = "districting", version, about = "Minority welfare under districting plans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for output files; defaults to [output] dir in the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the machine-readable report instead of the summary.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium platforms b and budget shares T per matchup.
    Platforms {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal plans for each objective case, one table row per case.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Base seed for random restarts.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of restarts; restart 0 starts from the uniform plan.
        #[arg(long)]
        restarts: Option<usize>,
        /// Also report the grid-search optimum at this resolution.
        #[arg(long)]
        grid_res: Option<f64>,
    },
    /// Curvature decomposition, tipping intervals and surface samples.
    Curvature {
        #[command(flatten)]
        common: Common,
        /// Plan CSV with columns mD, nD, R; overrides [plan].
        #[arg(long)]
        plan: Option<PathBuf>,
        /// s-sweep resolution.
        #[arg(long)]
        grid_res: Option<f64>,
    },
    /// One optimization per value of the [sweep] axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Base seed for random restarts.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of restarts; restart 0 starts from the uniform plan.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Finite-difference, oracle-equivalence and decomposition checks.
    Selftest {
        /// Seed for the randomized check points.
        #[arg(long)]
        seed: Option<u64>,
        /// Best-response oracle grid step.
        #[arg(long)]
        grid_res: Option<f64>,
        /// Print the machine-readable report instead of the summary.
        #[arg(long)]
        json: bool,
        /// Directory for selftest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Forces the named suite to fail.
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
}

fn finish(bundle: Bundle, out: Option<PathBuf>, json: bool) -> CliResult<()> {
    if let Some(dir) = out {
        bundle.write_to(&dir)?;
    }
    if json {
        let text = serde_json::to_string_pretty(&bundle.json).map_err(|e| CliError::Failed(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", bundle.summary);
    }
    match bundle.failure {
        Some(msg) => Err(CliError::Failed(msg)),
        None => Ok(()),
    }
}

fn scenario_run(common: &Common, f: impl FnOnce(&Scenario) -> CliResult<Bundle>) -> CliResult<()> {
    let sc = Scenario::load(&common.scenario)?;
    let bundle = f(&sc)?;
    finish(bundle, resolve_output_dir(&sc, common.out.clone()), common.json)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Platforms { common } => scenario_run(&common, commands::platforms),
        Command::Optimize {
            common,
            seed,
            restarts,
            grid_res,
        } => {
            let opts = RunOptions {
                seed,
                restarts,
                grid_res,
                plan: None,
            };
            scenario_run(&common, |sc| commands::optimize_cmd(sc, &opts))
        }
        Command::Curvature { common, plan, grid_res } => {
            let opts = RunOptions {
                grid_res,
                plan,
                ..Default::default()
            };
            scenario_run(&common, |sc| commands::curvature_cmd(sc, &opts))
        }
        Command::Sweep { common, seed, restarts } => {
            let opts = RunOptions {
                seed,
                restarts,
                ..Default::default()
            };
            scenario_run(&common, |sc| commands::sweep_cmd(sc, &opts))
        }
        Command::Selftest {
            seed,
            grid_res,
            json,
            out,
            inject_failure,
        } => finish(commands::selftest_cmd(seed, grid_res, inject_failure.as_deref())?, out, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
