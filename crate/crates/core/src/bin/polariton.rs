use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polariton::classify::{cross_probability, Regime};
use polariton::config::{Config, Preset};
use polariton::converge::{convergence_harness, write_report};
use polariton::io::{self, write_json};
use polariton::pipeline::{analyze_snapshots, classify_stored, simulate, write_analysis_outputs, write_run_outputs, SnapshotWriter};
use polariton::solver::SnapshotSink;
use polariton::sweep::{config_hash, run_sweep, SweepPlan};

/// Counter-propagating polariton fluid simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid, box and duration preset applied on top of the configuration.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Disorder seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Root directory for all outputs.
    #[arg(long, global = true, env = "POLARITON_OUT", default_value = "polariton-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its report, observables and maps.
    Run {
        #[arg(long)]
        f_inc: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        k_p: Option<f64>,
        /// Keep every n-th snapshot as a binary dump.
        #[arg(long)]
        snapshots: Option<usize>,
        /// Output subdirectory; defaults to one derived from the config hash.
        #[arg(long)]
        name: Option<String>,
    },
    /// Run the phase-diagram sweep described by the [sweep] section.
    Sweep {
        #[arg(long, default_value = "sweep")]
        name: String,
    },
    /// Recompute observables from stored snapshot dumps.
    Analyze {
        /// Directory holding snap_*.bin files.
        snapshots: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Refinement study in dx, dt and box size.
    Converge {
        #[arg(long, default_value = "converge")]
        name: String,
    },
    /// Label stored runs; with several runs also tabulate energy-ratio
    /// cross-probabilities.
    Classify {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

type BoxError = Box<dyn std::error::Error>;

fn load_config(common: &Common) -> Result<Config, BoxError> {
    let mut c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(p) = common.preset {
        c.apply_preset(p);
    }
    if let Some(s) = common.seed {
        c.disorder.seed = s;
    }
    if let Some(w) = common.workers {
        c.sweep.workers = w;
    }
    c.validate()?;
    Ok(c)
}

fn prepare_dir(dir: &Path, config: &Config) -> Result<(), BoxError> {
    std::fs::create_dir_all(dir)?;
    io::write_atomic(&dir.join("config.toml"), config.to_toml_string()?.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), BoxError> {
    let common = &cli.common;
    match cli.command {
        Command::Run {
            f_inc,
            delta,
            k_p,
            snapshots,
            name,
        } => {
            let mut c = load_config(common)?;
            if let Some(v) = f_inc {
                c.pump.f_inc = v;
            }
            if let Some(v) = delta {
                c.model.delta = v;
            }
            if let Some(v) = k_p {
                c.pump.k_p = v;
            }
            c.validate()?;
            let name = name.unwrap_or_else(|| format!("run_{}", &config_hash(&c)[..12]));
            let dir = common.out.join(name);
            prepare_dir(&dir, &c)?;
            let mut writer = snapshots.map(|s| SnapshotWriter::new(&dir.join("snapshots"), s));
            let mut extra: Vec<&mut dyn SnapshotSink> = Vec::new();
            if let Some(w) = writer.as_mut() {
                extra.push(w);
            }
            let outcome = simulate(&c, &mut extra)?;
            let report = write_run_outputs(&dir, &c, &outcome)?;
            let regime = report.label.as_ref().map_or("unlabelled".to_string(), |l| l.regime.to_string());
            println!(
                "{}: g1 = {:.4}, eta = {}, regime {regime}",
                dir.display(),
                report.g1,
                report.eta.map_or("n/a".into(), |e| format!("{e:.4}"))
            );
        }
        Command::Sweep { name } => {
            let c = load_config(common)?;
            let dir = common.out.join(name);
            prepare_dir(&dir, &c)?;
            let plan = SweepPlan::from_config(&c, &dir);
            let m = run_sweep(&plan)?;
            let done = m.cells.iter().filter(|c| c.outputs.is_some()).count();
            println!("{}: {done} of {} cells complete", dir.display(), m.cells.len());
        }
        Command::Analyze { snapshots, name } => {
            let c = match &common.config {
                Some(_) => load_config(common)?,
                None => stored_config(&snapshots).map_or_else(|| load_config(common), Ok)?,
            };
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&snapshots)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("snap_") && n.ends_with(".bin"))
                })
                .collect();
            paths.sort();
            let (records, analysis, last) = analyze_snapshots(&c, &paths)?;
            let dir = common.out.join(name.unwrap_or_else(|| "analysis".into()));
            prepare_dir(&dir, &c)?;
            let report = write_analysis_outputs(&dir, &c, None, &records, &analysis, &last)?;
            println!("{}: {} snapshots, g1 = {:.4}", dir.display(), paths.len(), report.g1);
        }
        Command::Converge { name } => {
            let c = load_config(common)?;
            let dir = common.out.join(name);
            prepare_dir(&dir, &c)?;
            let report = convergence_harness(&c, Some(&dir.join("runs")))?;
            write_report(&dir, &report)?;
            print!("{}", report.render());
        }
        Command::Classify { runs } => {
            let thresholds = match &common.config {
                Some(_) => Some(load_config(common)?.analysis.thresholds),
                None => None,
            };
            let mut labelled: Vec<(Regime, f64)> = Vec::new();
            let mut out = Vec::new();
            for dir in &runs {
                match classify_stored(dir, thresholds.as_ref()) {
                    Ok(label) => {
                        println!("{}: {} (g1 {:.4}, eta {:.4})", dir.display(), label.regime, label.evidence.g1, label.evidence.eta);
                        labelled.push((label.regime, label.evidence.eta));
                        out.push((dir.display().to_string(), Some(label)));
                    }
                    Err(e) => {
                        println!("{}: unlabelled ({e})", dir.display());
                        out.push((dir.display().to_string(), None));
                    }
                }
            }
            let dir = common.out.join("classify");
            std::fs::create_dir_all(&dir)?;
            write_json(&dir.join("labels.json"), &out)?;
            if labelled.len() > 1 {
                let table = cross_probability(&labelled);
                io::write_cross_probability_csv(&dir.join("cross_probability.csv"), &table)?;
            }
        }
    }
    Ok(())
}

/// Configuration saved next to (or one level above) a snapshot directory.
fn stored_config(snapshots: &Path) -> Option<Config> {
    [snapshots.join("config.toml"), snapshots.join("..").join("config.toml")]
        .iter()
        .find(|p| p.exists())
        .and_then(|p| Config::load(p).ok())
}
