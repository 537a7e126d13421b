use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssdsim::config::{preset_text, ConfigError, ExperimentConfig};
use ssdsim::metrics::{compare, format_deltas, Report};
use ssdsim::runner::{run_to_dir, RunError};

#[derive(Parser)]
#[command(name = "ssdsim", version, about = "Full-system SSD simulator experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every sweep point of a config and write reports.
    Run {
        /// Config file, or the name of a shipped preset.
        config: String,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the config's seed).
        #[arg(long)]
        seed: Option<u64>,
        /// KEY=V1,V2,... replacing the config's sweep.
        #[arg(long)]
        sweep: Option<String>,
        /// Sweep points simulated in parallel, one simulator each.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print per-metric deltas between two reports.
    Compare {
        /// report.json, or a run directory containing one.
        a: PathBuf,
        b: PathBuf,
    },
    /// Check a config and list every problem found.
    Validate { config: String },
}

const CONFIG_ERROR: u8 = 1;
const SIM_FAULT: u8 = 2;

fn load(arg: &str) -> Result<ExperimentConfig, ConfigError> {
    let path = Path::new(arg);
    if !path.exists() && preset_text(arg).is_some() {
        return ExperimentConfig::preset(arg);
    }
    ExperimentConfig::load(path)
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("report.json")
    } else {
        p.to_path_buf()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => match load(&config).and_then(|c| {
            let bad = c.problems();
            if bad.is_empty() {
                c.points().map(|p| (c, p.len()))
            } else {
                Err(ConfigError::Invalid(bad))
            }
        }) {
            Ok((c, n)) => {
                println!("ok: {n} sweep point(s), config hash {}", c.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
        Cmd::Run {
            config,
            out,
            seed,
            sweep,
            jobs,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = sweep {
                if let Err(e) = cfg.set_sweep_override(&s) {
                    eprintln!("{e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            }
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            match run_to_dir(&cfg, &dir, jobs) {
                Ok((report, _)) => {
                    println!(
                        "{:<28} {:>12} {:>12} {:>12} {:>12} {:>8}",
                        "point", "MB/s", "IOPS", "mean us", "p99 us", "WA"
                    );
                    for p in &report.points {
                        let s = &p.summary;
                        println!(
                            "{:<28} {:>12.1} {:>12.0} {:>12.2} {:>12.2} {:>8.3}",
                            p.label, s.bandwidth_mb_s, s.iops, s.lat_mean_us, s.lat_p99_us, s.write_amplification
                        );
                    }
                    println!("reports written to {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(RunError::Config(e)) => {
                    eprintln!("{e}");
                    ExitCode::from(CONFIG_ERROR)
                }
                Err(e) => {
                    eprintln!("simulation failed: {e}");
                    ExitCode::from(SIM_FAULT)
                }
            }
        }
        Cmd::Compare { a, b } => {
            let read = |p: &Path| Report::read_json(&report_path(p));
            let (ra, rb) = match (read(&a), read(&b)) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("{e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            };
            match compare(&ra, &rb) {
                Ok(d) => {
                    print!("{}", format_deltas(&d));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(CONFIG_ERROR)
                }
            }
        }
    }
}
