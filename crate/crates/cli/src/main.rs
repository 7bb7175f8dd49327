use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcr_formation_cli::commands::{
    bench_ofps, bench_scaling, compare_slender, ofps_bench_csv, run_scenario, scaling_csv, shape_csv, write_run,
    write_text,
};
use pcr_formation_cli::{CliError, ScenarioConfig, ShapeSpec};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "pcrform",
    version,
    about = "PCR-based formation planning: scenarios and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios; writes `<name>_metrics.csv` and `<name>_summary.json`.
    Run {
        #[arg(short, long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed of every config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run independent scenarios concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Time OFPS computation versus point count; writes `bench_ofps.csv`.
    BenchOfps {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "100,200,300,400,500,600,700,800,900,1000"
        )]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Frames per OFPS (horizon samples + 1).
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Cube scenarios at several swarm sizes; writes `bench_scaling.csv`.
    BenchScaling {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "20,40")]
        sizes: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: bool,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Slender-rectangle run plus the short-axis sensitivity probe;
    /// writes `compare_slender.json`.
    CompareSlender {
        #[arg(short, long)]
        config: PathBuf,
        /// Keep the config's obstacles (dropped by default).
        #[arg(long)]
        obstacles: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a generated shape as `id,x,y,z` CSV.
    GenShape {
        /// Shape as an inline TOML table, e.g. `generator = "cube_grid", count = 27`.
        #[arg(long)]
        shape: String,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            configs,
            out,
            seed,
            parallel,
        } => {
            let cfgs = configs.iter().map(|p| load(p, seed)).collect::<Result<Vec<_>, _>>()?;
            let run = |cfg: &ScenarioConfig| -> Result<(), CliError> {
                let result = run_scenario(cfg)?;
                let (csv, json) = write_run(&out, &cfg.name, &result)?;
                println!(
                    "{}: steady e_dist {:.4} (normal {:.4}), t_mean {:.4}s -> {} {}",
                    cfg.name,
                    result.summary.steady_e_dist_all,
                    result.summary.steady_e_dist_normal,
                    result.summary.t_opt_mean,
                    csv.display(),
                    json.display()
                );
                Ok(())
            };
            if parallel {
                cfgs.par_iter().try_for_each(run)
            } else {
                cfgs.iter().try_for_each(run)
            }
        }
        Command::BenchOfps {
            counts,
            trials,
            frames,
            seed,
            out,
        } => {
            let rows = bench_ofps(&counts, trials, frames, seed)?;
            let csv = ofps_bench_csv(&rows);
            print!("{csv}");
            for r in rows.iter().filter(|r| r.failures > 0) {
                eprintln!("count {}: {} of {trials} registrations failed", r.count, r.failures);
            }
            write_text(&out, "bench_ofps.csv", &csv)?;
            Ok(())
        }
        Command::BenchScaling {
            config,
            sizes,
            seed,
            parallel,
            out,
        } => {
            let cfg = load(&config, seed)?;
            let rows = bench_scaling(&cfg, &sizes, parallel)?;
            let csv = scaling_csv(&rows);
            print!("{csv}");
            write_text(&out, "bench_scaling.csv", &csv)?;
            Ok(())
        }
        Command::CompareSlender {
            config,
            obstacles,
            seed,
            out,
        } => {
            let cfg = load(&config, seed)?;
            let (report, run) = compare_slender(&cfg, obstacles)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            write_run(&out, &cfg.name, &run)?;
            write_text(&out, "compare_slender.json", &json)?;
            Ok(())
        }
        Command::GenShape { shape } => {
            #[derive(serde::Deserialize)]
            struct Wrapper {
                shape: ShapeSpec,
            }
            let parsed: Wrapper =
                toml::from_str(&format!("shape = {{ {shape} }}")).map_err(|e| CliError::Config(e.into()))?;
            print!("{}", shape_csv(&parsed.shape)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
