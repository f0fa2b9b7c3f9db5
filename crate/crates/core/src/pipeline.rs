//! One simulation from configuration to classified result.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify_run, summarize_density, ClassifyError, DensitySummary, RegimeLabel, Thresholds};
use crate::config::{Config, ConfigError};
use crate::drive::{Drive, DriveError};
use crate::grid::{FieldPair, Grid2D};
use crate::io::{self, IoError};
use crate::observables::{
    density_spectrum, eta_time_average, g1, window_samples, Analyzer, CoherenceResult, MomentumSpectrum,
    ObservableRecord, ObservablesError, RoiSample, SPECTRUM_PAD,
};
use crate::solver::{RunSummary, SnapshotSink, Solver, SolverError};

#[derive(Debug, Error)]
pub enum PipelineError {
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
    #[error("{0}")]
    Stored(String),
}

/// Sink that evaluates observables on every snapshot and keeps the ROI
/// photon field for coherence analysis.
pub struct Recorder {
    analyzer: Analyzer,
    pub records: Vec<ObservableRecord>,
    pub samples: Vec<RoiSample>,
}

impl Recorder {
    pub fn new(analyzer: Analyzer) -> Self {
        Self {
            analyzer,
            records: Vec::new(),
            samples: Vec::new(),
        }
    }
}

impl SnapshotSink for Recorder {
    fn accept(&mut self, fields: &FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        self.records.push(self.analyzer.observe(fields));
        self.samples.push(self.analyzer.roi_sample(fields));
        Ok(())
    }
}

/// Writes every `stride`-th snapshot as a binary dump.
pub struct SnapshotWriter {
    dir: PathBuf,
    stride: usize,
    seen: usize,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: &Path, stride: usize) -> Self {
        Self {
            dir: dir.to_path_buf(),
            stride: stride.max(1),
            seen: 0,
            written: Vec::new(),
        }
    }
}

impl SnapshotSink for SnapshotWriter {
    fn accept(&mut self, fields: &FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        if self.seen % self.stride == 0 {
            let path = self.dir.join(format!("snap_{:06}.bin", self.seen));
            io::write_snapshot(&path, fields)?;
            self.written.push(path);
        }
        self.seen += 1;
        Ok(())
    }
}

struct Fanout<'a, 'b> {
    recorder: &'a mut Recorder,
    extra: &'a mut [&'b mut dyn SnapshotSink],
}

impl SnapshotSink for Fanout<'_, '_> {
    fn accept(&mut self, fields: &FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        self.recorder.accept(fields)?;
        for s in self.extra.iter_mut() {
            s.accept(fields)?;
        }
        Ok(())
    }
}

/// Late-time analysis of a recorded series.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub g1: CoherenceResult,
    pub g1_long: Option<CoherenceResult>,
    pub eta: Option<(f64, f64)>,
    /// ROI photon density averaged over the standard coherence window.
    pub mean_density: Array2<f64>,
    pub spectrum: MomentumSpectrum,
    pub density: DensitySummary,
    pub label: Result<RegimeLabel, String>,
}

pub fn analyze_series(
    config: &Config,
    grid: &Grid2D,
    records: &[ObservableRecord],
    samples: &[RoiSample],
) -> Result<Analysis, ObservablesError> {
    let a = &config.analysis;
    let coherence = g1(samples, a.g1_window)?;
    let g1_long = g1(samples, a.g1_long_window).ok();
    let eta = eta_time_average(records, a.eta_window).ok();
    let window = window_samples(samples, a.g1_window);
    let mut mean_density = Array2::<f64>::zeros(window[0].psi_c.dim());
    for s in window {
        mean_density.zip_mut_with(&s.psi_c, |m, z| *m += z.norm_sqr());
    }
    mean_density /= window.len() as f64;
    let spectrum = density_spectrum(mean_density.view(), grid.dx(), SPECTRUM_PAD);
    let density = summarize_density(mean_density.view(), grid.dx());
    let label = classify_run(&coherence, records, &density, &config.params(), &a.thresholds).map_err(|e: ClassifyError| e.to_string());
    Ok(Analysis {
        g1: coherence,
        g1_long,
        eta,
        mean_density,
        spectrum,
        density,
        label,
    })
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<ObservableRecord>,
    pub samples: Vec<RoiSample>,
    pub analysis: Analysis,
    pub final_fields: FieldPair,
}

/// Integrates the configured system from empty fields, recording observables
/// on every snapshot, then analyses the late-time window.
pub fn simulate(config: &Config, extra: &mut [&mut dyn SnapshotSink]) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let params = config.params();
    let grid = config.solver.grid().map_err(SolverError::from)?;
    let drive = Drive::new(&config.pump, &config.disorder, &grid)?;
    let mut solver = Solver::new(&params, &drive, &config.solver)?;
    let mut recorder = Recorder::new(Analyzer::new(&grid, &config.analysis.roi)?);
    let (final_fields, summary) = {
        let mut fan = Fanout {
            recorder: &mut recorder,
            extra,
        };
        solver.run(FieldPair::zeros(grid), &mut [&mut fan])?
    };
    let analysis = analyze_series(config, &grid, &recorder.records, &recorder.samples)?;
    Ok(RunOutcome {
        summary,
        records: recorder.records,
        samples: recorder.samples,
        analysis,
        final_fields,
    })
}

/// Rebuilds the observable series from stored snapshot dumps, in the given
/// order, and analyses it.
pub fn analyze_snapshots(
    config: &Config,
    paths: &[PathBuf],
) -> Result<(Vec<ObservableRecord>, Analysis, FieldPair), PipelineError> {
    let mut recorder = None;
    let mut last = None;
    for p in paths {
        let fields = io::read_snapshot(p)?;
        let rec = match &mut recorder {
            Some(r) => r,
            None => recorder.insert(Recorder::new(Analyzer::new(&fields.grid, &config.analysis.roi)?)),
        };
        rec.accept(&fields).map_err(|e| PipelineError::Stored(e.to_string()))?;
        last = Some(fields);
    }
    let (Some(rec), Some(last)) = (recorder, last) else {
        return Err(PipelineError::Stored("no snapshots to analyse".into()));
    };
    let analysis = analyze_series(config, &last.grid, &rec.records, &rec.samples)?;
    Ok((rec.records, analysis, last))
}

/// Labels a stored run from its report and observables table, optionally
/// with different thresholds than the run used.
pub fn classify_stored(dir: &Path, thresholds: Option<&Thresholds>) -> Result<RegimeLabel, PipelineError> {
    let report: RunReport = io::read_json(&dir.join("report.json"))?;
    let records = io::read_observables_csv(&dir.join("observables.csv"))?;
    let map_path = dir.join("g1_map.bin");
    let map = if map_path.exists() {
        io::read_real_field(&map_path)?.3
    } else {
        Array2::zeros((0, 0))
    };
    let coherence = CoherenceResult {
        flagged: map.iter().filter(|v| v.is_nan()).count(),
        map,
        scalar: report.g1,
        t_start: report.g1_window.0,
        t_end: report.g1_window.1,
        samples: report.g1_samples,
    };
    let t = thresholds.unwrap_or(&report.config.analysis.thresholds);
    classify_run(&coherence, &records, &report.density, &report.config.params(), t)
        .map_err(|e| PipelineError::Stored(e.to_string()))
}

/// Machine-readable summary of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Config,
    /// Absent when the series was re-analysed from stored snapshots.
    pub summary: Option<RunSummary>,
    pub g1: f64,
    pub g1_window: (f64, f64),
    pub g1_samples: usize,
    pub g1_long: Option<f64>,
    pub eta: Option<f64>,
    pub eta_std: Option<f64>,
    pub density: DensitySummary,
    pub label: Option<RegimeLabel>,
    pub label_error: Option<String>,
    pub final_record: Option<ObservableRecord>,
    pub disorder_seed: u64,
}

impl RunReport {
    pub fn new(config: &Config, summary: Option<&RunSummary>, records: &[ObservableRecord], analysis: &Analysis) -> Self {
        Self {
            config: config.clone(),
            summary: summary.cloned(),
            g1: analysis.g1.scalar,
            g1_window: (analysis.g1.t_start, analysis.g1.t_end),
            g1_samples: analysis.g1.samples,
            g1_long: analysis.g1_long.as_ref().map(|c| c.scalar),
            eta: analysis.eta.map(|e| e.0),
            eta_std: analysis.eta.map(|e| e.1),
            density: analysis.density,
            label: analysis.label.as_ref().ok().cloned(),
            label_error: analysis.label.as_ref().err().cloned(),
            final_record: records.last().cloned(),
            disorder_seed: config.disorder.seed,
        }
    }
}

/// Writes the standard artefacts of a run into `dir`.
pub fn write_run_outputs(dir: &Path, config: &Config, outcome: &RunOutcome) -> Result<RunReport, IoError> {
    write_analysis_outputs(
        dir,
        config,
        Some(&outcome.summary),
        &outcome.records,
        &outcome.analysis,
        &outcome.final_fields,
    )
}

/// Report, observables table, final fields, coherence map, time-averaged
/// density and heatmaps.
pub fn write_analysis_outputs(
    dir: &Path,
    config: &Config,
    summary: Option<&RunSummary>,
    records: &[ObservableRecord],
    a: &Analysis,
    fin: &FieldPair,
) -> Result<RunReport, IoError> {
    use crate::io::{write_heatmap, write_json, write_observables_csv, write_real_field, write_snapshot, Colormap};
    let report = RunReport::new(config, summary, records, a);
    write_json(&dir.join("report.json"), &report)?;
    write_observables_csv(&dir.join("observables.csv"), records)?;
    write_snapshot(&dir.join("final.bin"), fin)?;
    write_json(&dir.join("final.json"), &SnapshotMeta::new(config, fin))?;
    let roi_side = a.g1.map.ncols() as f64 * fin.grid.dx();
    if a.g1.map.nrows() == a.g1.map.ncols() {
        write_real_field(&dir.join("g1_map.bin"), roi_side, a.g1.t_end, a.g1.map.view())?;
        write_real_field(&dir.join("mean_density.bin"), roi_side, a.g1.t_end, a.mean_density.view())?;
    }
    write_heatmap(&dir.join("g1_map.png"), a.g1.map.view(), Colormap::Inferno, Some((0.0, 1.0)), "g1")?;
    let density = fin.psi_c.mapv(|z| z.norm_sqr());
    write_heatmap(&dir.join("density.png"), density.view(), Colormap::Inferno, None, "photon density")?;
    let phase = fin.psi_c.mapv(|z| z.arg());
    write_heatmap(
        &dir.join("phase.png"),
        phase.view(),
        Colormap::Phase,
        Some((-std::f64::consts::PI, std::f64::consts::PI)),
        "photon phase",
    )?;
    let shifted = fftshift(&a.spectrum.spectrum);
    write_heatmap(&dir.join("spectrum.png"), shifted.view(), Colormap::Inferno, Some((0.0, 1.0)), "ROI density spectrum")?;
    Ok(report)
}

/// Sidecar for a snapshot dump: everything needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub n: usize,
    pub length: f64,
    pub t: f64,
    pub fields: Vec<String>,
    pub config: Config,
    pub disorder_seed: u64,
}

impl SnapshotMeta {
    pub fn new(config: &Config, fields: &FieldPair) -> Self {
        Self {
            n: fields.grid.n,
            length: fields.grid.length,
            t: fields.t,
            fields: vec!["psi_c".into(), "psi_x".into()],
            config: config.clone(),
            disorder_seed: config.disorder.seed,
        }
    }
}

fn fftshift(a: &Array2<f64>) -> Array2<f64> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((r, c), |(i, j)| a[[(i + r - r / 2) % r, (j + c - c / 2) % c]])
}
