//! Phase-diagram sweeps over pump amplitude, detuning and pump wavevector.
//!
//! Cells run independently on a bounded worker pool. The manifest is the
//! only shared state; it is rewritten atomically after every cell so an
//! interrupted sweep resumes where it stopped.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::Regime;
use crate::config::{Config, ConfigError};
use crate::io::{self, Colormap, IoError};
use crate::pipeline::{simulate, write_run_outputs, PipelineError};
use crate::solver::SolverError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid sweep plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("manifest version {0} is not supported")]
    ManifestVersion(u32),
    #[error("cannot interpolate: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub f_inc: f64,
    pub delta: f64,
    pub k_p: f64,
    pub seed: u64,
}

impl CellSpec {
    fn key(&self) -> [u64; 4] {
        [self.f_inc.to_bits(), self.delta.to_bits(), self.k_p.to_bits(), self.seed]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutputs {
    pub g1: f64,
    pub g1_long: Option<f64>,
    pub eta: Option<f64>,
    pub eta_std: Option<f64>,
    pub label: Option<Regime>,
    pub vortex_count: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Done,
    BlowUp { t: f64 },
    Failed { message: String },
}

impl CellStatus {
    /// Finished with a deterministic outcome; skipped on resume.
    pub fn is_final(&self) -> bool {
        matches!(self, CellStatus::Done | CellStatus::BlowUp { .. })
    }

    fn tag(&self) -> &'static str {
        match self {
            CellStatus::Pending => "pending",
            CellStatus::Done => "done",
            CellStatus::BlowUp { .. } => "blow_up",
            CellStatus::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub index: usize,
    pub inputs: CellSpec,
    pub config_hash: String,
    pub status: CellStatus,
    pub blow_up: bool,
    /// Present iff the run completed.
    pub outputs: Option<CellOutputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub cells: Vec<PhaseCell>,
}

impl Manifest {
    pub fn cell(&self, f_inc: f64, delta: f64, k_p: f64) -> Option<&PhaseCell> {
        self.cells
            .iter()
            .find(|c| c.inputs.f_inc == f_inc && c.inputs.delta == delta && c.inputs.k_p == k_p)
    }
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: Config,
    pub cells: Vec<CellSpec>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl SweepPlan {
    /// Cartesian product of the `[sweep]` axes, ordered k_p, then Δ, then F.
    pub fn from_config(config: &Config, out_dir: &Path) -> Self {
        let s = &config.sweep;
        let mut cells = Vec::with_capacity(s.k_p.len() * s.delta.len() * s.f_inc.len());
        for &k_p in &s.k_p {
            for &delta in &s.delta {
                for &f_inc in &s.f_inc {
                    let mut spec = CellSpec {
                        f_inc,
                        delta,
                        k_p,
                        seed: config.disorder.seed,
                    };
                    if s.per_cell_seeds {
                        spec.seed = cell_seed(config.disorder.seed, &spec);
                    }
                    cells.push(spec);
                }
            }
        }
        Self {
            base: config.clone(),
            cells,
            out_dir: out_dir.to_path_buf(),
            workers: s.workers,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.workers == 0 {
            return Err(SweepError::Plan("workers must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.cells {
            if !seen.insert(c.key()) {
                return Err(SweepError::Plan(format!(
                    "duplicate cell F = {}, Δ = {}, k_p = {}, seed = {}",
                    c.f_inc, c.delta, c.k_p, c.seed
                )));
            }
            self.cell_config(c).validate()?;
        }
        Ok(())
    }

    /// Single-run configuration of one cell. The sweep section is reset so
    /// that the cell hash ignores the worker count and the rest of the lattice.
    pub fn cell_config(&self, spec: &CellSpec) -> Config {
        let mut c = self.base.clone();
        c.sweep = Default::default();
        c.pump.f_inc = spec.f_inc;
        c.pump.k_p = spec.k_p;
        c.model.delta = spec.delta;
        c.disorder.seed = spec.seed;
        c
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }

    pub fn cell_dir(&self, index: usize) -> PathBuf {
        self.out_dir.join("cells").join(format!("cell_{index:04}"))
    }
}

/// Seed derived from the base seed and the cell inputs only, so it does not
/// depend on the plan the cell belongs to.
pub fn cell_seed(base: u64, spec: &CellSpec) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for v in [spec.f_inc, spec.delta, spec.k_p] {
        h.update(v.to_bits().to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash(config: &Config) -> String {
    let json = serde_json::to_vec(config).expect("configuration serialises");
    hex::encode(Sha256::digest(&json))
}

/// How a single cell ended, as reported by a cell runner.
pub enum CellResult {
    Done(CellOutputs),
    BlowUp { t: f64 },
    Failed(String),
}

/// Runs every pending cell with the full simulation pipeline and writes the
/// per-cell artefacts, the manifest and the phase CSV.
pub fn run_sweep(plan: &SweepPlan) -> Result<Manifest, SweepError> {
    run_sweep_with(plan, &|index, config| {
        let started = Instant::now();
        match simulate(config, &mut []) {
            Ok(outcome) => {
                let dir = plan.cell_dir(index);
                if let Err(e) = write_run_outputs(&dir, config, &outcome) {
                    return CellResult::Failed(e.to_string());
                }
                let a = &outcome.analysis;
                let last = outcome.records.last().map_or(0.0, |r| r.t);
                let vortex_count = outcome
                    .records
                    .iter()
                    .filter(|r| r.t > last - config.analysis.eta_window)
                    .map(|r| r.vortex_count)
                    .max()
                    .unwrap_or(0);
                CellResult::Done(CellOutputs {
                    g1: a.g1.scalar,
                    g1_long: a.g1_long.as_ref().map(|c| c.scalar),
                    eta: a.eta.map(|e| e.0),
                    eta_std: a.eta.map(|e| e.1),
                    label: a.label.as_ref().ok().map(|l| l.regime),
                    vortex_count,
                    runtime_s: started.elapsed().as_secs_f64(),
                })
            }
            Err(PipelineError::Solver(SolverError::BlowUp { t })) => CellResult::BlowUp { t },
            Err(e) => CellResult::Failed(e.to_string()),
        }
    })
}

/// Sweep driver with a pluggable cell runner; `runner` receives the cell
/// index and its full configuration.
pub fn run_sweep_with(
    plan: &SweepPlan,
    runner: &(dyn Fn(usize, &Config) -> CellResult + Sync),
) -> Result<Manifest, SweepError> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.out_dir).map_err(|source| IoError::Io {
        path: plan.out_dir.clone(),
        source,
    })?;
    let previous = load_manifest(&plan.manifest_path())?;
    let cells: Vec<PhaseCell> = plan
        .cells
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let hash = config_hash(&plan.cell_config(spec));
            previous
                .as_ref()
                .and_then(|m| m.cells.iter().find(|c| c.config_hash == hash && c.status.is_final()))
                .map(|c| PhaseCell { index, ..c.clone() })
                .unwrap_or(PhaseCell {
                    index,
                    inputs: *spec,
                    config_hash: hash,
                    status: CellStatus::Pending,
                    blow_up: false,
                    outputs: None,
                })
        })
        .collect();
    let pending: Vec<usize> = cells.iter().filter(|c| !c.status.is_final()).map(|c| c.index).collect();
    let manifest = Mutex::new(Manifest {
        version: MANIFEST_VERSION,
        cells,
    });
    save_manifest(plan, &manifest.lock().expect("manifest lock"))?;
    if !pending.is_empty() {
        log::info!("sweep: {} of {} cells to run", pending.len(), plan.cells.len());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    pool.install(|| {
        pending.par_iter().try_for_each(|&index| -> Result<(), SweepError> {
            let spec = plan.cells[index];
            let config = plan.cell_config(&spec);
            let result = runner(index, &config);
            let mut m = manifest.lock().expect("manifest lock");
            let cell = &mut m.cells[index];
            match result {
                CellResult::Done(out) => {
                    log::info!("cell {index}: F = {}, Δ = {} g1 = {:.3}", spec.f_inc, spec.delta, out.g1);
                    cell.status = CellStatus::Done;
                    cell.outputs = Some(out);
                }
                CellResult::BlowUp { t } => {
                    log::warn!("cell {index}: blow-up at t = {t}");
                    cell.status = CellStatus::BlowUp { t };
                    cell.blow_up = true;
                    cell.outputs = None;
                }
                CellResult::Failed(message) => {
                    log::warn!("cell {index}: {message}");
                    cell.status = CellStatus::Failed { message };
                    cell.outputs = None;
                }
            }
            save_manifest(plan, &m)
        })
    })?;

    let manifest = manifest.into_inner().expect("manifest lock");
    write_phase_csv(&plan.out_dir.join("phase.csv"), &manifest)?;
    write_phase_heatmaps(plan, &manifest)?;
    Ok(manifest)
}

fn save_manifest(plan: &SweepPlan, m: &Manifest) -> Result<(), SweepError> {
    Ok(io::write_json(&plan.manifest_path(), m)?)
}

pub fn load_manifest(path: &Path) -> Result<Option<Manifest>, SweepError> {
    if !path.exists() {
        return Ok(None);
    }
    let m: Manifest = io::read_json(path)?;
    if m.version != MANIFEST_VERSION {
        return Err(SweepError::ManifestVersion(m.version));
    }
    Ok(Some(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub index: usize,
    pub f_inc: f64,
    pub delta: f64,
    pub k_p: f64,
    pub seed: u64,
    pub status: String,
    pub blow_up: bool,
    pub g1: Option<f64>,
    pub g1_long: Option<f64>,
    pub eta: Option<f64>,
    pub eta_std: Option<f64>,
    pub label: Option<Regime>,
    pub vortex_count: Option<usize>,
    pub runtime_s: Option<f64>,
    pub config_hash: String,
}

impl From<&PhaseCell> for PhaseRow {
    fn from(c: &PhaseCell) -> Self {
        let o = c.outputs.as_ref();
        Self {
            index: c.index,
            f_inc: c.inputs.f_inc,
            delta: c.inputs.delta,
            k_p: c.inputs.k_p,
            seed: c.inputs.seed,
            status: c.status.tag().to_string(),
            blow_up: c.blow_up,
            g1: o.map(|o| o.g1),
            g1_long: o.and_then(|o| o.g1_long),
            eta: o.and_then(|o| o.eta),
            eta_std: o.and_then(|o| o.eta_std),
            label: o.and_then(|o| o.label),
            vortex_count: o.map(|o| o.vortex_count),
            runtime_s: o.map(|o| o.runtime_s),
            config_hash: c.config_hash.clone(),
        }
    }
}

pub fn write_phase_csv(path: &Path, manifest: &Manifest) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &manifest.cells {
        w.serialize(PhaseRow::from(c)).map_err(csv_err)?;
    }
    if manifest.cells.is_empty() {
        w.write_record([
            "index", "f_inc", "delta", "k_p", "seed", "status", "blow_up", "g1", "g1_long", "eta", "eta_std", "label",
            "vortex_count", "runtime_s", "config_hash",
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    io::write_atomic(path, &bytes)
}

pub fn read_phase_csv(path: &Path) -> Result<Vec<PhaseRow>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

fn write_phase_heatmaps(plan: &SweepPlan, manifest: &Manifest) -> Result<(), SweepError> {
    let mut k_values: Vec<f64> = manifest.cells.iter().map(|c| c.inputs.k_p).collect();
    k_values.sort_by(f64::total_cmp);
    k_values.dedup();
    for k_p in k_values {
        let points: Vec<DiagramPoint> = manifest
            .cells
            .iter()
            .filter(|c| c.inputs.k_p == k_p)
            .map(|c| DiagramPoint {
                f_inc: c.inputs.f_inc,
                delta: c.inputs.delta,
                value: c.outputs.as_ref().map_or(f64::NAN, |o| o.g1),
            })
            .collect();
        let Ok(map) = interpolate_diagram(&points, (128, 128)) else {
            continue;
        };
        let path = plan.out_dir.join(format!("phase_g1_kp{k_p}.png"));
        io::write_heatmap(&path, map.values.view(), Colormap::Inferno, Some((0.0, 1.0)), "g1 (F_inc across, Δ up)")?;
        io::write_json(&plan.out_dir.join(format!("phase_g1_kp{k_p}.json")), &map)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub f_inc: f64,
    pub delta: f64,
    pub value: f64,
}

/// Densely sampled phase diagram; rows follow Δ, columns follow F.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagramMap {
    pub f_axis: Vec<f64>,
    pub delta_axis: Vec<f64>,
    pub values: Array2<f64>,
    /// Input cells, unchanged.
    pub cells: Vec<DiagramPoint>,
}

/// Bilinear interpolation of cell values laid out on a rectilinear (F, Δ)
/// lattice onto an evenly spaced `(columns, rows)` grid spanning it.
/// A NaN cell propagates into the patches that touch it.
pub fn interpolate_diagram(cells: &[DiagramPoint], resolution: (usize, usize)) -> Result<DiagramMap, SweepError> {
    let axis = |get: fn(&DiagramPoint) -> f64| {
        let mut v: Vec<f64> = cells.iter().map(get).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let fs = axis(|p| p.f_inc);
    let ds = axis(|p| p.delta);
    if fs.len() < 2 || ds.len() < 2 {
        return Err(SweepError::Layout(format!(
            "cells are collinear ({} F values, {} Δ values)",
            fs.len(),
            ds.len()
        )));
    }
    if cells.len() != fs.len() * ds.len() {
        return Err(SweepError::Layout(format!(
            "{} cells do not fill the {}×{} lattice",
            cells.len(),
            fs.len(),
            ds.len()
        )));
    }
    let mut lattice = Array2::from_elem((ds.len(), fs.len()), None);
    for p in cells {
        let i = ds.binary_search_by(|v| v.total_cmp(&p.delta)).expect("on axis");
        let j = fs.binary_search_by(|v| v.total_cmp(&p.f_inc)).expect("on axis");
        lattice[[i, j]] = Some(p.value);
    }
    if lattice.iter().any(Option::is_none) {
        return Err(SweepError::Layout("cells do not fill the lattice".into()));
    }
    let lattice = lattice.mapv(|v| v.expect("checked"));
    let (nc, nr) = (resolution.0.max(2), resolution.1.max(2));
    let even = |a: &[f64], n: usize| -> Vec<f64> {
        let (lo, hi) = (a[0], a[a.len() - 1]);
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let f_axis = even(&fs, nc);
    let delta_axis = even(&ds, nr);
    let bracket = |a: &[f64], x: f64| -> (usize, f64) {
        let j = a.partition_point(|&v| v <= x).clamp(1, a.len() - 1) - 1;
        (j, ((x - a[j]) / (a[j + 1] - a[j])).clamp(0.0, 1.0))
    };
    let values = Array2::from_shape_fn((nr, nc), |(r, c)| {
        let (i, u) = bracket(&ds, delta_axis[r]);
        let (j, v) = bracket(&fs, f_axis[c]);
        let at = |di: usize, dj: usize| lattice[[i + di, j + dj]];
        (1.0 - u) * ((1.0 - v) * at(0, 0) + v * at(0, 1)) + u * ((1.0 - v) * at(1, 0) + v * at(1, 1))
    });
    Ok(DiagramMap {
        f_axis,
        delta_axis,
        values,
        cells: cells.to_vec(),
    })
}

/// Cells of one k_p slice whose g1 is below `theta`, grouped into the
/// 4-connected component (on the F × Δ lattice) that contains `(f_inc, delta)`.
/// Empty when that cell is itself coherent or missing.
pub fn reduced_coherence_region(manifest: &Manifest, k_p: f64, theta: f64, f_inc: f64, delta: f64) -> Vec<(f64, f64)> {
    let slice: Vec<&PhaseCell> = manifest.cells.iter().filter(|c| c.inputs.k_p == k_p).collect();
    let axis = |get: fn(&CellSpec) -> f64| {
        let mut v: Vec<f64> = slice.iter().map(|c| get(&c.inputs)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let fs = axis(|s| s.f_inc);
    let ds = axis(|s| s.delta);
    let reduced = |i: usize, j: usize| {
        slice.iter().any(|c| {
            c.inputs.delta == ds[i] && c.inputs.f_inc == fs[j] && c.outputs.as_ref().is_some_and(|o| o.g1 < theta)
        })
    };
    let (Some(i0), Some(j0)) = (ds.iter().position(|&d| d == delta), fs.iter().position(|&f| f == f_inc)) else {
        return Vec::new();
    };
    if !reduced(i0, j0) {
        return Vec::new();
    }
    let mut seen = HashSet::from([(i0, j0)]);
    let mut stack = vec![(i0, j0)];
    while let Some((i, j)) = stack.pop() {
        let neighbours = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (a, b) in neighbours {
            if a < ds.len() && b < fs.len() && !seen.contains(&(a, b)) && reduced(a, b) {
                seen.insert((a, b));
                stack.push((a, b));
            }
        }
    }
    let mut out: Vec<(f64, f64)> = seen.into_iter().map(|(i, j)| (fs[j], ds[i])).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fake_runner(_: usize, c: &Config) -> CellResult {
        if c.pump.f_inc > 100.0 {
            return CellResult::BlowUp { t: 12.0 };
        }
        CellResult::Done(CellOutputs {
            g1: 1.0 - c.pump.f_inc * c.model.delta,
            g1_long: None,
            eta: Some(c.pump.f_inc),
            eta_std: Some(0.0),
            label: Some(Regime::Linear),
            vortex_count: 0,
            runtime_s: 0.0,
        })
    }

    fn plan(dir: &Path) -> SweepPlan {
        let mut c = Config::default();
        c.sweep.f_inc = vec![0.3, 1.2, 3.7];
        c.sweep.delta = vec![0.05, 0.22];
        SweepPlan::from_config(&c, dir)
    }

    #[test]
    fn plan_order_and_seeds() {
        let p = plan(Path::new("/nonexistent"));
        assert_eq!(p.cells.len(), 6);
        assert_eq!((p.cells[0].f_inc, p.cells[0].delta), (0.3, 0.05));
        assert_eq!((p.cells[1].f_inc, p.cells[1].delta), (1.2, 0.05));
        assert_eq!((p.cells[3].f_inc, p.cells[3].delta), (0.3, 0.22));
        assert!(p.cells.iter().all(|c| c.seed == p.base.disorder.seed));
        let mut c = p.base.clone();
        c.sweep.per_cell_seeds = true;
        let q = SweepPlan::from_config(&c, Path::new("/nonexistent"));
        let seeds: HashSet<u64> = q.cells.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 6);
        assert_eq!(q.cells[2].seed, cell_seed(c.disorder.seed, &CellSpec { seed: 0, ..q.cells[2] }));
    }

    #[test]
    fn duplicate_cells_rejected() {
        let mut p = plan(Path::new("/nonexistent"));
        p.cells.push(p.cells[0]);
        assert!(matches!(p.validate(), Err(SweepError::Plan(_))));
    }

    #[test]
    fn hash_tracks_config() {
        let p = plan(Path::new("/nonexistent"));
        let a = config_hash(&p.cell_config(&p.cells[0]));
        assert_eq!(a, config_hash(&p.cell_config(&p.cells[0])));
        assert_ne!(a, config_hash(&p.cell_config(&p.cells[1])));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn empty_plan_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path());
        p.cells.clear();
        let m = run_sweep_with(&p, &fake_runner).unwrap();
        assert!(m.cells.is_empty());
        assert_eq!(load_manifest(&p.manifest_path()).unwrap().unwrap(), m);
        assert!(read_phase_csv(&dir.path().join("phase.csv")).unwrap().is_empty());
    }

    #[test]
    fn resume_skips_finished_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(dir.path());
        let full = run_sweep_with(&p, &fake_runner).unwrap();

        // emulate an interruption after two cells
        let mut cut = full.clone();
        for c in &mut cut.cells[2..] {
            c.status = CellStatus::Pending;
            c.outputs = None;
        }
        io::write_json(&p.manifest_path(), &cut).unwrap();
        let calls = AtomicUsize::new(0);
        let resumed = run_sweep_with(&p, &|i, c| {
            calls.fetch_add(1, Ordering::SeqCst);
            fake_runner(i, c)
        })
        .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert_eq!(resumed, full);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let d1 = tempfile::tempdir().unwrap();
        let d4 = tempfile::tempdir().unwrap();
        let mut p1 = plan(d1.path());
        p1.workers = 1;
        let mut p4 = plan(d4.path());
        p4.workers = 4;
        let m1 = run_sweep_with(&p1, &fake_runner).unwrap();
        let m4 = run_sweep_with(&p4, &fake_runner).unwrap();
        assert_eq!(m1, m4);
        let r1 = std::fs::read(d1.path().join("phase.csv")).unwrap();
        let r4 = std::fs::read(d4.path().join("phase.csv")).unwrap();
        assert_eq!(r1, r4);
    }

    #[test]
    fn failures_recorded_and_sweep_continues() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path());
        p.cells[1].f_inc = 1000.0;
        let m = run_sweep_with(&p, &|i, c| if i == 4 { CellResult::Failed("boom".into()) } else { fake_runner(i, c) }).unwrap();
        assert!(m.cells[1].blow_up);
        assert_eq!(m.cells[1].status, CellStatus::BlowUp { t: 12.0 });
        assert!(m.cells[1].outputs.is_none());
        assert!(matches!(m.cells[4].status, CellStatus::Failed { .. }));
        assert_eq!(m.cells.iter().filter(|c| c.outputs.is_some()).count(), 4);
        let rows = read_phase_csv(&dir.path().join("phase.csv")).unwrap();
        assert_eq!(rows[1].status, "blow_up");
        assert_eq!(rows[1].g1, None);
        assert_eq!(rows[0].g1, Some(1.0 - 0.3 * 0.05));

        // failed cells are retried, blow-ups are not
        let calls = AtomicUsize::new(0);
        run_sweep_with(&p, &|i, c| {
            calls.fetch_add(1, Ordering::SeqCst);
            fake_runner(i, c)
        })
        .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    fn pt(f_inc: f64, delta: f64, value: f64) -> DiagramPoint {
        DiagramPoint { f_inc, delta, value }
    }

    #[test]
    fn interpolation_examples() {
        let flat = [pt(0.0, 0.0, 0.7), pt(1.0, 0.0, 0.7), pt(0.0, 1.0, 0.7), pt(1.0, 1.0, 0.7)];
        let m = interpolate_diagram(&flat, (9, 7)).unwrap();
        assert!(m.values.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert_eq!(m.cells, flat.to_vec());

        let ramp = [pt(0.3, 0.05, 1.0), pt(3.7, 0.05, 1.0), pt(0.3, 0.35, 0.0), pt(3.7, 0.35, 0.0)];
        let m = interpolate_diagram(&ramp, (5, 3)).unwrap();
        assert!(m.values.row(1).iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(m.values.row(0).iter().all(|&v| v == 1.0));
        assert!((m.delta_axis[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_lattice_values() {
        let mut cells = Vec::new();
        for (i, d) in [0.0, 0.1, 0.3].into_iter().enumerate() {
            for (j, f) in [1.0, 2.0].into_iter().enumerate() {
                cells.push(pt(f, d, (i * 2 + j) as f64));
            }
        }
        let m = interpolate_diagram(&cells, (2, 4)).unwrap();
        assert_eq!(m.values[[0, 0]], 0.0);
        assert_eq!(m.values[[3, 1]], 5.0);
        // Δ = 0.2 sits halfway between the 0.1 and 0.3 rows
        assert!((m.values[[2, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_layouts_rejected() {
        let line = [pt(0.0, 0.1, 1.0), pt(1.0, 0.1, 1.0), pt(2.0, 0.1, 1.0), pt(3.0, 0.1, 1.0)];
        assert!(matches!(interpolate_diagram(&line, (4, 4)), Err(SweepError::Layout(_))));
        let holey = [pt(0.0, 0.0, 1.0), pt(1.0, 0.0, 1.0), pt(0.0, 1.0, 1.0), pt(2.0, 1.0, 1.0)];
        assert!(interpolate_diagram(&holey, (4, 4)).is_err());
    }

    #[test]
    fn connected_region() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Config::default();
        c.sweep.f_inc = vec![1.0, 2.0, 3.0];
        c.sweep.delta = vec![0.1, 0.2, 0.3];
        let p = SweepPlan::from_config(&c, dir.path());
        // reduced g1 on the anti-diagonal plus (3, 0.3), which touches nothing
        let low = [(1.0, 0.3), (2.0, 0.2), (2.0, 0.3), (3.0, 0.1)];
        let m = run_sweep_with(&p, &|i, c| {
            let hit = low.contains(&(c.pump.f_inc, c.model.delta));
            let CellResult::Done(mut o) = fake_runner(i, c) else { unreachable!() };
            o.g1 = if hit { 0.5 } else { 1.0 };
            CellResult::Done(o)
        })
        .unwrap();
        let r = reduced_coherence_region(&m, 0.4, 0.95, 2.0, 0.2);
        assert_eq!(r, vec![(1.0, 0.3), (2.0, 0.2), (2.0, 0.3)]);
        assert!(reduced_coherence_region(&m, 0.4, 0.95, 1.0, 0.1).is_empty());
        assert_eq!(reduced_coherence_region(&m, 0.4, 0.95, 3.0, 0.1), vec![(3.0, 0.1)]);
    }
}
