//! Persistence: binary field dumps with JSON sidecars, observable tables and
//! PNG heatmaps.
//!
//! Binary layout (little endian): 4-byte magic, `u32` format version, `u64` n,
//! `f64` L, `f64` t, `u32` field count, then per field n·n samples in
//! row-major order. Complex dumps (`PLRC`) store interleaved `(re, im)` pairs,
//! real dumps (`PLRR`) plain values.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::CrossProbabilityTable;
use crate::grid::{FieldPair, Grid2D, GridError};
use crate::observables::ObservableRecord;

pub const COMPLEX_MAGIC: [u8; 4] = *b"PLRC";
pub const REAL_MAGIC: [u8; 4] = *b"PLRR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct Header {
    magic: [u8; 4],
    n: usize,
    length: f64,
    t: f64,
    fields: usize,
}

fn encode_header(h: &Header) -> Vec<u8> {
    let mut out = Vec::with_capacity(36);
    out.extend_from_slice(&h.magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.n as u64).to_le_bytes());
    out.extend_from_slice(&h.length.to_le_bytes());
    out.extend_from_slice(&h.t.to_le_bytes());
    out.extend_from_slice(&(h.fields as u32).to_le_bytes());
    out
}

fn read_exact<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N], IoError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format_err(path, "truncated file")
        } else {
            IoError::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    Ok(buf)
}

fn decode_header(r: &mut impl Read, path: &Path, expect: [u8; 4]) -> Result<Header, IoError> {
    let magic = read_exact::<4>(r, path)?;
    if magic != expect {
        return Err(format_err(path, format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact::<4>(r, path)?);
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(read_exact::<8>(r, path)?) as usize;
    let length = f64::from_le_bytes(read_exact::<8>(r, path)?);
    let t = f64::from_le_bytes(read_exact::<8>(r, path)?);
    let fields = u32::from_le_bytes(read_exact::<4>(r, path)?) as usize;
    if n == 0 || n > 1 << 16 {
        return Err(format_err(path, format!("implausible grid size {n}")));
    }
    Ok(Header { magic, n, length, t, fields })
}

fn f64s(r: &mut impl Read, path: &Path, count: usize) -> Result<Vec<f64>, IoError> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|_| format_err(path, "truncated payload"))?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn ensure_eof(r: &mut impl Read, path: &Path) -> Result<(), IoError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(io_err(path))? {
        0 => Ok(()),
        _ => Err(format_err(path, "trailing bytes after payload")),
    }
}

/// Dumps complex fields sharing one grid and time stamp.
pub fn write_complex_fields(path: &Path, grid: &Grid2D, t: f64, fields: &[&Array2<Complex64>]) -> Result<(), IoError> {
    for f in fields {
        grid.check_shape(f)?;
    }
    let mut bytes = encode_header(&Header {
        magic: COMPLEX_MAGIC,
        n: grid.n,
        length: grid.length,
        t,
        fields: fields.len(),
    });
    bytes.reserve(fields.len() * grid.cells() * 16);
    for f in fields {
        for z in f.iter() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_complex_fields(path: &Path) -> Result<(Grid2D, f64, Vec<Array2<Complex64>>), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let h = decode_header(&mut r, path, COMPLEX_MAGIC)?;
    let grid = Grid2D::new(h.n, h.length).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = Vec::with_capacity(h.fields);
    for _ in 0..h.fields {
        let raw = f64s(&mut r, path, 2 * h.n * h.n)?;
        let data: Vec<Complex64> = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        out.push(Array2::from_shape_vec((h.n, h.n), data).expect("sized above"));
    }
    ensure_eof(&mut r, path)?;
    Ok((grid, h.t, out))
}

/// Snapshot dump of `(ψ_C, ψ_X)`.
pub fn write_snapshot(path: &Path, fields: &FieldPair) -> Result<(), IoError> {
    write_complex_fields(path, &fields.grid, fields.t, &[&fields.psi_c, &fields.psi_x])
}

pub fn read_snapshot(path: &Path) -> Result<FieldPair, IoError> {
    let (grid, t, mut f) = read_complex_fields(path)?;
    if f.len() != 2 {
        return Err(format_err(path, format!("expected 2 fields, found {}", f.len())));
    }
    let psi_x = f.pop().unwrap();
    let psi_c = f.pop().unwrap();
    Ok(FieldPair::from_arrays(grid, psi_c, psi_x, t)?)
}

/// Dump of a square real map; `length` is its physical side.
pub fn write_real_field(path: &Path, length: f64, t: f64, field: ArrayView2<f64>) -> Result<(), IoError> {
    let (rows, cols) = field.dim();
    if rows != cols {
        return Err(format_err(path, format!("real dumps must be square, got {rows}x{cols}")));
    }
    let mut bytes = encode_header(&Header {
        magic: REAL_MAGIC,
        n: rows,
        length,
        t,
        fields: 1,
    });
    for v in field.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Returns `(n, L, t, field)`.
pub fn read_real_field(path: &Path) -> Result<(usize, f64, f64, Array2<f64>), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let h = decode_header(&mut r, path, REAL_MAGIC)?;
    if h.fields != 1 {
        return Err(format_err(path, format!("expected 1 field, found {}", h.fields)));
    }
    let data = f64s(&mut r, path, h.n * h.n)?;
    ensure_eof(&mut r, path)?;
    Ok((h.n, h.length, h.t, Array2::from_shape_vec((h.n, h.n), data).expect("sized above")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Sidecar path `foo.bin -> foo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservableRow {
    t: f64,
    n_c: f64,
    f_c: f64,
    f_x: f64,
    e_kin: Option<f64>,
    e_int: f64,
    eta_t: Option<f64>,
    k_peak: f64,
    vortex_count: usize,
}

pub fn write_observables_csv(path: &Path, records: &[ObservableRecord]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(ObservableRow {
            t: r.t,
            n_c: r.n_c,
            f_c: r.f_c,
            f_x: r.f_x,
            e_kin: r.e_kin,
            e_int: r.e_int,
            eta_t: r.eta_t,
            k_peak: r.k_peak,
            vortex_count: r.vortex_count,
        })
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_observables_csv(path: &Path) -> Result<Vec<ObservableRecord>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
    r.deserialize::<ObservableRow>()
        .map(|row| {
            let row = row.map_err(|source| IoError::Csv { path: path.to_path_buf(), source })?;
            Ok(ObservableRecord {
                t: row.t,
                n_c: row.n_c,
                f_c: row.f_c,
                f_x: row.f_x,
                e_kin: row.e_kin,
                e_int: row.e_int,
                eta_t: row.eta_t,
                k_peak: row.k_peak,
                vortex_count: row.vortex_count,
                vortices: Vec::new(),
            })
        })
        .collect()
}

pub fn write_cross_probability_csv(path: &Path, table: &CrossProbabilityTable) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["reference".to_string(), "runs".into(), "eta_mean".into(), "eta_std".into(), "in_interval".into()];
    header.extend(crate::classify::Regime::ALL.iter().map(|r| format!("p_{r}")));
    w.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut rec = vec![
            row.reference.to_string(),
            row.runs.to_string(),
            row.mean.to_string(),
            row.std.to_string(),
            row.in_interval.to_string(),
        ];
        match row.probabilities {
            Some(p) => rec.extend(p.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n("undefined".to_string(), 4)),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    /// Sequential black-purple-orange-yellow ramp.
    Inferno,
    /// Cyclic hue wheel for phases in [−π, π].
    Phase,
}

const INFERNO_STOPS: [[f64; 3]; 6] = [
    [0.0, 0.0, 0.016],
    [0.258, 0.039, 0.408],
    [0.576, 0.149, 0.404],
    [0.867, 0.318, 0.227],
    [0.988, 0.647, 0.039],
    [0.988, 1.0, 0.643],
];

impl Colormap {
    /// RGB for a value already scaled to [0, 1].
    pub fn rgb(self, u: f64) -> [u8; 3] {
        let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
        let c = match self {
            Colormap::Inferno => {
                let pos = u * (INFERNO_STOPS.len() - 1) as f64;
                let i = (pos.floor() as usize).min(INFERNO_STOPS.len() - 2);
                let f = pos - i as f64;
                let (a, b) = (INFERNO_STOPS[i], INFERNO_STOPS[i + 1]);
                [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
            }
            Colormap::Phase => {
                let h = u * 6.0;
                let x = 1.0 - ((h % 2.0) - 1.0).abs();
                match h as usize {
                    0 => [1.0, x, 0.0],
                    1 => [x, 1.0, 0.0],
                    2 => [0.0, 1.0, x],
                    3 => [0.0, x, 1.0],
                    4 => [x, 0.0, 1.0],
                    _ => [1.0, 0.0, x],
                }
            }
        };
        c.map(|v| (v * 255.0).round() as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub label: String,
    pub colormap: Colormap,
    pub vmin: f64,
    pub vmax: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Renders `data` (row 0 at the bottom) to PNG and writes its colour scale to
/// a JSON sidecar. Without an explicit range the finite data extrema are used.
pub fn write_heatmap(
    path: &Path,
    data: ArrayView2<f64>,
    colormap: Colormap,
    range: Option<(f64, f64)>,
    label: &str,
) -> Result<HeatmapMeta, IoError> {
    let (rows, cols) = data.dim();
    let (vmin, vmax) = range.unwrap_or_else(|| {
        data.iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    let (vmin, vmax) = if vmin.is_finite() && vmax.is_finite() { (vmin, vmax) } else { (0.0, 1.0) };
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let mut img = image::RgbImage::new(cols as u32, rows as u32);
    for ((iy, ix), &v) in data.indexed_iter() {
        let px = colormap.rgb((v - vmin) / span);
        img.put_pixel(ix as u32, (rows - 1 - iy) as u32, image::Rgb(px));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    img.write_to(&mut BufWriter::new(file), image::ImageFormat::Png)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    let meta = HeatmapMeta {
        label: label.to_string(),
        colormap,
        vmin,
        vmax,
        rows,
        cols,
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn sample_pair() -> FieldPair {
        let g = make_grid(8, 4.0).unwrap();
        let c = Array2::from_shape_fn((8, 8), |(i, j)| Complex64::new(i as f64, -(j as f64) * 0.5));
        let x = Array2::from_shape_fn((8, 8), |(i, j)| Complex64::new(1e-300 * j as f64, (i * j) as f64));
        FieldPair::from_arrays(g, c, x, 12.5).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let f = sample_pair();
        write_snapshot(&p, &f).unwrap();
        let back = read_snapshot(&p).unwrap();
        assert_eq!(back, f);
        let len = fs::metadata(&p).unwrap().len();
        assert_eq!(len, 36 + 2 * 64 * 16);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_snapshot(&p, &sample_pair()).unwrap();
        let b = fs::read(&p).unwrap();
        assert_eq!(&b[0..4], b"PLRC");
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 4.0);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 12.5);
        assert_eq!(u32::from_le_bytes(b[32..36].try_into().unwrap()), 2);
        // first sample of psi_c[0][1] = (0, -0.5)
        assert_eq!(f64::from_le_bytes(b[52..60].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(b[60..68].try_into().unwrap()), -0.5);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_snapshot(&p, &sample_pair()).unwrap();
        let mut b = fs::read(&p).unwrap();
        fs::write(&p, &b[..b.len() - 3]).unwrap();
        assert!(matches!(read_snapshot(&p), Err(IoError::Format { .. })));
        b[0] = b'X';
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_snapshot(&p), Err(IoError::Format { .. })));
        assert!(matches!(read_real_field(&p), Err(IoError::Format { .. })));
    }

    #[test]
    fn real_field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let a = Array2::from_shape_fn((6, 6), |(i, j)| (i as f64).sin() * j as f64);
        write_real_field(&p, 3.0, 0.0, a.view()).unwrap();
        let (n, l, t, back) = read_real_field(&p).unwrap();
        assert_eq!((n, l, t), (6, 3.0, 0.0));
        assert_eq!(back, a);
        assert!(write_real_field(&p, 3.0, 0.0, Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn observables_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        let recs = vec![
            ObservableRecord {
                t: 0.0,
                n_c: 0.0,
                f_c: 0.5,
                f_x: 0.5,
                e_kin: None,
                e_int: 0.0,
                eta_t: None,
                k_peak: 0.0,
                vortex_count: 0,
                vortices: vec![],
            },
            ObservableRecord {
                t: 2.0,
                n_c: 0.125,
                f_c: 0.53,
                f_x: 0.47,
                e_kin: Some(0.1),
                e_int: 0.3,
                eta_t: Some(3.0),
                k_peak: 1.25,
                vortex_count: 4,
                vortices: vec![],
            },
        ];
        write_observables_csv(&p, &recs).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,n_c,f_c,f_x,e_kin,e_int,eta_t,k_peak,vortex_count\n"));
        assert_eq!(read_observables_csv(&p).unwrap(), recs);
    }

    #[test]
    fn heatmap_writes_png_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("maps/d.png");
        let a = Array2::from_shape_fn((5, 7), |(i, j)| (i * j) as f64);
        let meta = write_heatmap(&p, a.view(), Colormap::Inferno, None, "density").unwrap();
        assert_eq!((meta.vmin, meta.vmax), (0.0, 24.0));
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (7, 5));
        // max value at the top-right after the vertical flip
        assert_eq!(img.get_pixel(6, 0).0, Colormap::Inferno.rgb(1.0));
        let back: HeatmapMeta = read_json(&sidecar_path(&p)).unwrap();
        assert_eq!(back, meta);
    }

    #[test]
    fn colormaps_hit_endpoints() {
        assert_eq!(Colormap::Inferno.rgb(0.0), [0, 0, 4]);
        assert_eq!(Colormap::Inferno.rgb(f64::NAN), Colormap::Inferno.rgb(0.0));
        assert_eq!(Colormap::Phase.rgb(0.0), [255, 0, 0]);
        assert_eq!(Colormap::Phase.rgb(1.0), [255, 0, 0]);
    }
}
