use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crossflow::io::{cmd_compare, cmd_plotdata, cmd_run, Figure, Overrides, ScenarioFile};
use crossflow::sim::Mode;
use crossflow::Error;

/// Coordinated vehicle crossing over two adjacent intersections.
#[derive(Parser)]
#[command(name = "crossflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one mode and write logs plus report.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Simulate both modes on the same arrivals and compare them.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Extract figure series from a finished run directory.
    Plotdata {
        /// Directory holding trajectory.csv and report.json.
        run_dir: PathBuf,
        #[arg(long, value_enum)]
        figure: FigureArg,
        /// Number of vehicles, in order of entry.
        #[arg(long, default_value_t = 22)]
        vehicles: usize,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        intersection: u8,
        /// Output CSV; defaults to <run_dir>/<figure>.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; bare names are looked up in the scenario directory.
    scenario: Option<PathBuf>,
    #[arg(long, env = "CROSSFLOW_SCENARIO_DIR", default_value = "scenarios")]
    scenario_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Coordinated,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    Speed,
    Position,
}

fn resolve_scenario(common: &Common) -> PathBuf {
    match &common.scenario {
        None => common.scenario_dir.join("reference.toml"),
        Some(p) if p.exists() || p.components().count() > 1 => p.clone(),
        Some(p) => {
            let candidate = common.scenario_dir.join(p);
            if candidate.exists() || candidate.extension().is_some() {
                candidate
            } else {
                candidate.with_extension("toml")
            }
        }
    }
}

fn load(common: &Common, mode: Option<Mode>) -> crossflow::Result<ScenarioFile> {
    let mut scenario = ScenarioFile::load(&resolve_scenario(common))?;
    scenario.apply(&Overrides {
        seed: common.seed,
        horizon: common.horizon,
        mode,
        output_dir: common.output_dir.clone(),
    })?;
    Ok(scenario)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) | Error::Config(_) => 2,
        Error::SafetyHalt { .. } => 3,
        Error::Infeasible(_) | Error::Capacity { .. } => 4,
        _ => 1,
    }
}

fn execute(cli: Cli) -> crossflow::Result<()> {
    match cli.command {
        Command::Run { common, mode } => {
            let mode = mode.map(|m| match m {
                ModeArg::Coordinated => Mode::Coordinated,
                ModeArg::Baseline => Mode::Baseline,
            });
            let scenario = load(&common, mode)?;
            let r = cmd_run(&scenario)?;
            println!(
                "{} seed {}: {} vehicles, mean travel time {:.2} s, fuel {:.1} mL, min speed {:.2} m/s",
                r.mode,
                r.seed,
                r.vehicles.len(),
                r.mean_travel_time,
                r.total_fuel,
                r.min_speed
            );
            println!("artifacts in {}", scenario.run.output_dir.display());
        }
        Command::Compare { common } => {
            let scenario = load(&common, None)?;
            let cmp = cmd_compare(&scenario)?;
            print!("{}", cmp.to_table());
            println!("artifacts in {}", scenario.run.output_dir.display());
        }
        Command::Plotdata { run_dir, figure, vehicles, intersection, output } => {
            let (figure, name) = match figure {
                FigureArg::Speed => (Figure::Speed, "speed"),
                FigureArg::Position => (Figure::Position, "position"),
            };
            let out = output.unwrap_or_else(|| run_dir.join(format!("{name}.csv")));
            let n = cmd_plotdata(&run_dir, figure, vehicles, intersection, &out)?;
            println!("{n} series written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let err = anyhow::Error::new(e).context("crossflow failed");
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Schema("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::SafetyHalt { time: 1.0, detail: "x".into() }), 3);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 4);
        assert_eq!(exit_code(&Error::Capacity { time: 1.0, count: 40, length: 160.0 }), 4);
        assert_eq!(exit_code(&Error::Comparison("x".into())), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
