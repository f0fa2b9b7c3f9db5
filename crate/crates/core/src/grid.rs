//! Periodic square grid, the photon/exciton field pair, unitary 2D FFTs and
//! region-of-interest windows.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid size {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),
    #[error("grid length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("array shape {got:?} does not match grid {n}x{n}")]
    ShapeMismatch { got: (usize, usize), n: usize },
    #[error("region of interest {0} lies outside the grid")]
    RoiOutOfBounds(String),
    #[error("region of interest overlaps the absorbing margin ({0})")]
    RoiInAbsorber(String),
}

/// Square periodic grid of `n × n` points covering `[-L/2, L/2)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub n: usize,
    pub length: f64,
}

pub fn make_grid(n: usize, length: f64) -> Result<Grid2D, GridError> {
    Grid2D::new(n, length)
}

impl Grid2D {
    pub fn new(n: usize, length: f64) -> Result<Self, GridError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(n));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::BadLength(length));
        }
        Ok(Self { n, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn dk(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Real-space coordinate of index `i` (the origin sits at `i = n/2`).
    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.dx()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// FFT-ordered wavevector of bin `i`; the Nyquist bin carries `+π/dx`.
    pub fn k(&self, i: usize) -> f64 {
        let n = self.n as isize;
        let i = i as isize;
        let m = if i <= n / 2 { i } else { i - n };
        m as f64 * self.dk()
    }

    pub fn k_axis(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.k(i)).collect()
    }

    pub fn k_max(&self) -> f64 {
        PI / self.dx()
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn check_shape<T>(&self, a: &Array2<T>) -> Result<(), GridError> {
        let (r, c) = a.dim();
        if r != self.n || c != self.n {
            return Err(GridError::ShapeMismatch { got: (r, c), n: self.n });
        }
        Ok(())
    }
}

/// Photon and exciton fields on a shared grid at time `t`.
///
/// Arrays are indexed `[[iy, ix]]`; the pump travels along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub grid: Grid2D,
    pub psi_c: Array2<Complex64>,
    pub psi_x: Array2<Complex64>,
    pub t: f64,
}

impl FieldPair {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            psi_c: Array2::zeros((grid.n, grid.n)),
            psi_x: Array2::zeros((grid.n, grid.n)),
            t: 0.0,
        }
    }

    pub fn from_arrays(
        grid: Grid2D,
        psi_c: Array2<Complex64>,
        psi_x: Array2<Complex64>,
        t: f64,
    ) -> Result<Self, GridError> {
        grid.check_shape(&psi_c)?;
        grid.check_shape(&psi_x)?;
        Ok(Self { grid, psi_c, psi_x, t })
    }

    pub fn is_finite(&self) -> bool {
        self.psi_c.iter().chain(self.psi_x.iter()).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Σ (|ψ_C|² + |ψ_X|²) dx².
    pub fn norm(&self) -> f64 {
        let dx = self.grid.dx();
        self.psi_c.iter().chain(self.psi_x.iter()).map(|z| z.norm_sqr()).sum::<f64>() * dx * dx
    }
}

/// Reusable unitary 2D FFT for one grid size.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place unitary forward transform.
    pub fn forward(&mut self, a: &mut Array2<Complex64>) {
        let data = contiguous(a, self.n);
        self.forward_transposed_raw(data);
        transpose_in_place(data, self.n);
        scale(data, 1.0 / self.n as f64);
    }

    /// In-place unitary inverse transform.
    pub fn inverse(&mut self, a: &mut Array2<Complex64>) {
        let data = contiguous(a, self.n);
        transpose_in_place(data, self.n);
        self.inverse_from_transposed_raw(data);
        scale(data, 1.0 / self.n as f64);
    }

    /// Unnormalised forward transform leaving the spectrum in `[kx][ky]` order.
    pub(crate) fn forward_transposed_raw(&mut self, data: &mut [Complex64]) {
        self.fwd.process_with_scratch(data, &mut self.scratch);
        transpose_in_place(data, self.n);
        self.fwd.process_with_scratch(data, &mut self.scratch);
    }

    /// Unnormalised inverse of [`Self::forward_transposed_raw`].
    pub(crate) fn inverse_from_transposed_raw(&mut self, data: &mut [Complex64]) {
        self.inv.process_with_scratch(data, &mut self.scratch);
        transpose_in_place(data, self.n);
        self.inv.process_with_scratch(data, &mut self.scratch);
    }
}

fn contiguous(a: &mut Array2<Complex64>, n: usize) -> &mut [Complex64] {
    assert_eq!(a.dim(), (n, n), "array does not match FFT size");
    a.as_slice_mut().expect("FFT input must be in standard layout")
}

fn scale(data: &mut [Complex64], f: f64) {
    for z in data {
        *z *= f;
    }
}

/// Blocked in-place transpose of a row-major `n × n` matrix.
pub(crate) fn transpose_in_place(data: &mut [Complex64], n: usize) {
    const B: usize = 16;
    for bi in (0..n).step_by(B) {
        for bj in (bi..n).step_by(B) {
            for i in bi..(bi + B).min(n) {
                let j0 = if bi == bj { i + 1 } else { bj };
                for j in j0..(bj + B).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

pub fn forward_spectrum(grid: &Grid2D, field: &Array2<Complex64>) -> Result<Array2<Complex64>, GridError> {
    grid.check_shape(field)?;
    let mut out = field.as_standard_layout().into_owned();
    Fft2::new(grid.n).forward(&mut out);
    Ok(out)
}

pub fn inverse_spectrum(grid: &Grid2D, spectrum: &Array2<Complex64>) -> Result<Array2<Complex64>, GridError> {
    grid.check_shape(spectrum)?;
    let mut out = spectrum.as_standard_layout().into_owned();
    Fft2::new(grid.n).inverse(&mut out);
    Ok(out)
}

/// Rectangular analysis region given in dimensionless units relative to the
/// grid origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Roi {
    fn default() -> Self {
        Self::centered(24.0)
    }
}

impl Roi {
    pub fn centered(side: f64) -> Self {
        Self {
            center_x: 0.0,
            center_y: 0.0,
            width: side,
            height: side,
        }
    }

    pub fn full(grid: &Grid2D) -> Self {
        Self::centered(grid.length)
    }

    pub fn resolve(&self, grid: &Grid2D) -> Result<RoiWindow, GridError> {
        let dx = grid.dx();
        let cols = (self.width / dx).round() as isize;
        let rows = (self.height / dx).round() as isize;
        let half = grid.n as isize / 2;
        let x0 = half + (self.center_x / dx).round() as isize - cols / 2;
        let y0 = half + (self.center_y / dx).round() as isize - rows / 2;
        let n = grid.n as isize;
        if cols < 1 || rows < 1 || x0 < 0 || y0 < 0 || x0 + cols > n || y0 + rows > n {
            return Err(GridError::RoiOutOfBounds(format!("{self:?}")));
        }
        Ok(RoiWindow {
            x0: x0 as usize,
            y0: y0 as usize,
            cols: cols as usize,
            rows: rows as usize,
        })
    }
}

/// Index window resolved from a [`Roi`] on a specific grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiWindow {
    pub x0: usize,
    pub y0: usize,
    pub cols: usize,
    pub rows: usize,
}

impl RoiWindow {
    pub fn view<'a, T>(&self, a: &'a Array2<T>) -> ArrayView2<'a, T> {
        a.slice(s![self.y0..self.y0 + self.rows, self.x0..self.x0 + self.cols])
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails if the window reaches into an edge band `margin` wide.
    pub fn check_interior(&self, grid: &Grid2D, margin: f64) -> Result<(), GridError> {
        let m = (margin / grid.dx()).ceil() as usize;
        let ok = self.x0 >= m
            && self.y0 >= m
            && self.x0 + self.cols + m <= grid.n
            && self.y0 + self.rows + m <= grid.n;
        if ok {
            Ok(())
        } else {
            Err(GridError::RoiInAbsorber(format!("{self:?} with margin {margin}")))
        }
    }
}

/// Read-only views of both fields restricted to `roi`.
pub fn roi_view<'a>(
    fields: &'a FieldPair,
    roi: &Roi,
) -> Result<(ArrayView2<'a, Complex64>, ArrayView2<'a, Complex64>), GridError> {
    let w = roi.resolve(&fields.grid)?;
    Ok((w.view(&fields.psi_c), w.view(&fields.psi_x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(512, 256.0).unwrap();
        assert_eq!(g.dx(), 0.5);
        assert_relative_eq!(g.dk(), 0.024543692606170259, max_relative = 1e-14);
        let g = make_grid(2, 2.0).unwrap();
        assert_eq!(g.k_axis(), vec![0.0, PI]);
        assert_eq!(make_grid(256, 128.0).unwrap().dx(), 0.5);
        assert_eq!(make_grid(300, 1.0), Err(GridError::NotPowerOfTwo(300)));
        assert!(make_grid(8, -1.0).is_err());
    }

    #[test]
    fn k_axis_is_symmetric() {
        let g = make_grid(16, 8.0).unwrap();
        assert_relative_eq!(g.dx() * g.n as f64, g.length);
        let k = g.k_axis();
        assert_relative_eq!(k.iter().cloned().fold(0.0, f64::max), g.k_max());
        for i in 1..g.n {
            if i != g.n / 2 {
                assert_relative_eq!(k[i], -k[g.n - i]);
            }
        }
    }

    #[test]
    fn constant_field_maps_to_zero_bin() {
        let g = make_grid(8, 4.0).unwrap();
        let c = Complex64::new(0.3, -1.2);
        let spec = forward_spectrum(&g, &Array2::from_elem((8, 8), c)).unwrap();
        assert!((spec[[0, 0]] - c * 8.0).norm() < 1e-12);
        let rest: f64 = spec.iter().skip(1).map(|z| z.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn plane_wave_maps_to_single_bin() {
        let g = make_grid(16, 8.0).unwrap();
        let (mx, my) = (3usize, 13usize);
        let field = Array2::from_shape_fn((16, 16), |(iy, ix)| {
            Complex64::from_polar(1.0, g.k(mx) * g.x(ix) + g.k(my) * g.x(iy))
        });
        let spec = forward_spectrum(&g, &field).unwrap();
        for ((iy, ix), z) in spec.indexed_iter() {
            if (iy, ix) == (my, mx) {
                assert_relative_eq!(z.norm(), 16.0, max_relative = 1e-12);
            } else {
                assert!(z.norm() < 1e-12, "leak at {iy},{ix}: {z}");
            }
        }
    }

    /// Direct O(n⁴) unitary DFT.
    fn dft_oracle(a: &Array2<Complex64>) -> Array2<Complex64> {
        let n = a.nrows();
        Array2::from_shape_fn((n, n), |(ky, kx)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((y, x), v) in a.indexed_iter() {
                let ph = -2.0 * PI * ((ky * y + kx * x) as f64) / n as f64;
                acc += v * Complex64::from_polar(1.0, ph);
            }
            acc / n as f64
        })
    }

    #[test]
    fn fft_matches_direct_dft_and_parseval() {
        let g = make_grid(8, 4.0).unwrap();
        let a = random_field(8, 7);
        let spec = forward_spectrum(&g, &a).unwrap();
        let oracle = dft_oracle(&a);
        for (u, v) in spec.iter().zip(oracle.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        let e_real: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let e_spec: f64 = oracle.iter().map(|z| z.norm_sqr()).sum();
        assert_relative_eq!(e_real, e_spec, max_relative = 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = make_grid(8, 4.0).unwrap();
        let a = Array2::<Complex64>::zeros((4, 8));
        assert!(matches!(forward_spectrum(&g, &a), Err(GridError::ShapeMismatch { .. })));
    }

    #[test]
    fn transpose_round_trip() {
        for n in [1usize, 3, 16, 33] {
            let mut data: Vec<Complex64> = (0..n * n).map(|i| Complex64::new(i as f64, 0.0)).collect();
            transpose_in_place(&mut data, n);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(data[i * n + j].re, (j * n + i) as f64);
                }
            }
        }
    }

    #[test]
    fn roi_examples() {
        let g = make_grid(512, 256.0).unwrap();
        let full = Roi::full(&g).resolve(&g).unwrap();
        assert_eq!(full, RoiWindow { x0: 0, y0: 0, cols: 512, rows: 512 });
        let w = Roi::default().resolve(&g).unwrap();
        assert_eq!((w.rows, w.cols), (48, 48));
        assert_relative_eq!(g.x(w.x0) + 0.5 * (w.cols as f64) * g.dx(), 0.0);
        let w = Roi::centered(10.0).resolve(&g).unwrap();
        assert_eq!((w.rows, w.cols), (20, 20));
        assert_eq!(w.x0, 246);
        assert!(Roi::centered(300.0).resolve(&g).is_err());
        assert!(Roi::default().resolve(&g).unwrap().check_interior(&g, 16.0).is_ok());
        assert!(Roi::centered(250.0).resolve(&g).unwrap().check_interior(&g, 16.0).is_err());
    }

    #[test]
    fn roi_view_slices_both_fields() {
        let g = make_grid(16, 8.0).unwrap();
        let mut f = FieldPair::zeros(g);
        f.psi_c[[8, 8]] = Complex64::new(2.0, 0.0);
        let (c, x) = roi_view(&f, &Roi::centered(2.0)).unwrap();
        assert_eq!(c.dim(), (4, 4));
        assert_eq!(x.dim(), (4, 4));
        assert_eq!(c[[2, 2]].re, 2.0);
    }

    proptest! {
        #[test]
        fn fft_round_trip(seed in any::<u64>(), log_n in 1u32..6) {
            let n = 1usize << log_n;
            let g = make_grid(n, n as f64).unwrap();
            let a = random_field(n, seed);
            let back = inverse_spectrum(&g, &forward_spectrum(&g, &a).unwrap()).unwrap();
            let err = a.iter().zip(back.iter()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn roi_resolution_ignores_contents(cx in -10.0f64..10.0, side in 1.0f64..40.0) {
            let g = make_grid(128, 64.0).unwrap();
            let roi = Roi { center_x: cx, center_y: -cx, width: side, height: side };
            prop_assert_eq!(roi.resolve(&g), roi.resolve(&g));
        }
    }
}
