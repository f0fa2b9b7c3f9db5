//! Resolution, box-size and time-step refinement study.
//!
//! Every refinement keeps the same disorder sample: it is interpolated onto
//! finer grids and tiled onto larger boxes. Errors compare the photon field of
//! the coarser run against the refined one over a small central window at the
//! common final time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::drive::{pump_profile, sample_disorder, transfer_disorder, Drive, DriveError};
use crate::grid::{FieldPair, Grid2D};
use crate::io::{self, IoError};
use crate::observables::{convergence_error, ObservablesError};
use crate::solver::{Solver, SolverError};
use crate::sweep::config_hash;

/// Side of the central comparison window.
pub const CONVERGENCE_WINDOW: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ConvergeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Drive(#[from] DriveError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("base run failed: {0}")]
    BaseRun(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    Base,
    HalfDx,
    HalfDt,
    QuarterDt,
    DoubleL,
}

impl Refinement {
    pub fn name(self) -> &'static str {
        match self {
            Refinement::Base => "base",
            Refinement::HalfDx => "dx/2",
            Refinement::HalfDt => "dt/2",
            Refinement::QuarterDt => "dt/4",
            Refinement::DoubleL => "L×2",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Refinement::Base => "base",
            Refinement::HalfDx => "half_dx",
            Refinement::HalfDt => "half_dt",
            Refinement::QuarterDt => "quarter_dt",
            Refinement::DoubleL => "double_l",
        }
    }

    pub fn apply(self, base: &Config) -> Config {
        let mut c = base.clone();
        match self {
            Refinement::Base => {}
            Refinement::HalfDx => c.solver.n *= 2,
            Refinement::HalfDt => c.solver.dt /= 2.0,
            Refinement::QuarterDt => c.solver.dt /= 4.0,
            Refinement::DoubleL => {
                c.solver.n *= 2;
                c.solver.length *= 2.0;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBar {
    pub refinement: Refinement,
    /// Run compared against.
    pub against: Refinement,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub window: f64,
    pub base: Config,
    /// dx/2, dt/2 and L×2, each against the base run.
    pub bars: Vec<ConvergenceBar>,
    /// dt/2 against dt/4.
    pub fine_dt: ConvergenceBar,
    /// `sqrt(err(dt, dt/2) / err(dt/2, dt/4))`; ≈ 4 for a second-order scheme.
    pub dt_ratio: Option<f64>,
}

impl ConvergenceReport {
    pub fn error(&self, r: Refinement) -> Option<f64> {
        self.bars.iter().find(|b| b.refinement == r).and_then(|b| b.error)
    }

    /// Text bar chart on a log scale from 1e-12 to 1.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "relative error over the central {0}×{0} window at t = {1}", self.window, self.t);
        for b in self.bars.iter().chain([&self.fine_dt]) {
            let label = format!("{} vs {}", b.refinement.name(), b.against.name());
            match (b.error, &b.failure) {
                (Some(e), _) => {
                    let width = if e > 0.0 { ((e.log10() + 12.0) * 4.0).clamp(0.0, 48.0) as usize } else { 0 };
                    let _ = writeln!(s, "{label:>12} | {:<48} {e:.3e}", "#".repeat(width));
                }
                (None, Some(f)) => {
                    let _ = writeln!(s, "{label:>12} | failed: {f}");
                }
                (None, None) => {
                    let _ = writeln!(s, "{label:>12} | not run");
                }
            }
        }
        match self.dt_ratio {
            Some(r) => {
                let _ = writeln!(s, "dt convergence ratio {r:.3}");
            }
            None => {
                let _ = writeln!(s, "dt convergence ratio unavailable");
            }
        }
        s
    }
}

/// Runs `base` and its refinements to the same final time and compares them.
///
/// With `cache` set, each run's final fields are stored there keyed by the
/// run's configuration hash and reused on later calls.
pub fn convergence_harness(base: &Config, cache: Option<&Path>) -> Result<ConvergenceReport, ConvergeError> {
    base.validate()?;
    let base_grid = base.solver.grid().map_err(SolverError::from)?;
    let disorder = sample_disorder(&base.disorder, &base_grid)?;
    let run = |r: Refinement| -> Result<FieldPair, String> {
        let config = r.apply(base);
        let path = cache.map(|dir| dir.join(format!("{}_{}.bin", r.slug(), &config_hash(&config)[..16])));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            if let Ok(f) = io::read_snapshot(p) {
                return Ok(f);
            }
        }
        let fields = run_refinement(&config, &disorder, &base_grid).map_err(|e| e.to_string())?;
        if let Some(p) = path {
            io::write_snapshot(&p, &fields).map_err(|e| e.to_string())?;
        }
        Ok(fields)
    };
    let reference = run(Refinement::Base).map_err(ConvergeError::BaseRun)?;
    let compare = |candidate: &Result<FieldPair, String>, refined: &Result<FieldPair, String>, r: Refinement, against: Refinement, dt: f64| {
        let outcome = match (candidate, refined) {
            (Ok(c), Ok(f)) => convergence_error(c, f, CONVERGENCE_WINDOW, dt).map_err(|e| e.to_string()),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        };
        ConvergenceBar {
            refinement: r,
            against,
            error: outcome.as_ref().ok().copied(),
            failure: outcome.err(),
        }
    };
    let base_ok = Ok(reference);
    let dt = base.solver.dt;
    let half_dx = run(Refinement::HalfDx);
    let half_dt = run(Refinement::HalfDt);
    let double_l = run(Refinement::DoubleL);
    let quarter_dt = run(Refinement::QuarterDt);
    let bars = vec![
        compare(&base_ok, &half_dx, Refinement::HalfDx, Refinement::Base, dt),
        compare(&base_ok, &half_dt, Refinement::HalfDt, Refinement::Base, dt),
        compare(&base_ok, &double_l, Refinement::DoubleL, Refinement::Base, dt),
    ];
    let fine_dt = compare(&half_dt, &quarter_dt, Refinement::QuarterDt, Refinement::HalfDt, dt / 2.0);
    let dt_ratio = match (bars[1].error, fine_dt.error) {
        (Some(a), Some(b)) if b > 0.0 => Some((a / b).sqrt()),
        _ => None,
    };
    let t = base_ok.as_ref().map(|f| f.t).unwrap_or(base.solver.t_end);
    Ok(ConvergenceReport {
        t,
        window: CONVERGENCE_WINDOW,
        base: base.clone(),
        bars,
        fine_dt,
        dt_ratio,
    })
}

/// Integrates one refinement from empty fields, carrying the base disorder
/// sample onto the refined grid.
pub fn run_refinement(config: &Config, base_disorder: &ndarray::Array2<f64>, base_grid: &Grid2D) -> Result<FieldPair, ConvergeError> {
    let grid = config.solver.grid().map_err(SolverError::from)?;
    let disorder = transfer_disorder(base_disorder, base_grid, &grid)?;
    let drive = Drive::from_parts(pump_profile(&config.pump, &grid), disorder, config.pump.ramp_tau, &grid)?;
    let mut solver = Solver::new(&config.params(), &drive, &config.solver)?;
    let (fields, _) = solver.run(FieldPair::zeros(grid), &mut [])?;
    Ok(fields)
}

/// Writes `convergence.json` and the text chart `convergence.txt` into `dir`.
pub fn write_report(dir: &Path, report: &ConvergenceReport) -> Result<PathBuf, IoError> {
    io::write_json(&dir.join("convergence.json"), report)?;
    let txt = dir.join("convergence.txt");
    io::write_atomic(&txt, report.render().as_bytes())?;
    Ok(txt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        let mut c = Config::default();
        c.solver.n = 64;
        c.solver.length = 64.0;
        c.solver.t_end = 20.0;
        c.solver.dt = 0.04;
        c.solver.absorber_margin = 8.0;
        c.analysis.roi = crate::grid::Roi::centered(12.0);
        c.pump.f_inc = 3.7;
        c
    }

    #[test]
    fn refinements_change_the_right_knob() {
        let b = Config::preset(crate::config::Preset::Desk);
        assert_eq!(Refinement::HalfDx.apply(&b).solver.grid().unwrap().dx(), 0.25);
        assert_eq!(Refinement::DoubleL.apply(&b).solver.grid().unwrap().dx(), 0.5);
        assert_eq!(Refinement::DoubleL.apply(&b).solver.length, 256.0);
        assert_eq!(Refinement::QuarterDt.apply(&b).solver.dt, 0.005);
        assert_eq!(Refinement::Base.apply(&b), b);
    }

    #[test]
    fn base_against_itself_is_zero() {
        let c = small();
        let g = c.solver.grid().unwrap();
        let d = sample_disorder(&c.disorder, &g).unwrap();
        let a = run_refinement(&c, &d, &g).unwrap();
        let b = run_refinement(&c, &d, &g).unwrap();
        assert_eq!(convergence_error(&a, &b, CONVERGENCE_WINDOW, c.solver.dt).unwrap(), 0.0);
    }

    #[test]
    fn short_ladder_is_second_order() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        let report = convergence_harness(&c, Some(dir.path())).unwrap();
        let ratio = report.dt_ratio.unwrap();
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
        assert!(report.error(Refinement::HalfDt).unwrap() < 1e-3);
        assert!(report.error(Refinement::HalfDx).is_some());
        assert!(report.error(Refinement::DoubleL).is_some());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 5);

        let again = convergence_harness(&c, Some(dir.path())).unwrap();
        assert_eq!(again, report);
        let txt = write_report(dir.path(), &report).unwrap();
        assert!(std::fs::read_to_string(txt).unwrap().contains("dt/2 vs base"));
    }
}
