//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use num_complex::Complex64;
use polariton::solver::Dealias;
use polariton::{DisorderSpec, Drive, FieldPair, Grid2D, ModelParams, Solver, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
/// Dimensionless photon–exciton coupling.
const G: f64 = 2.0;

/// Amplitudes `(c, x)` at time `t` of a lossless mode with photon kinetic
/// energy `k2`, starting from `(1, 0)`: the detuned Rabi formula.
pub fn rabi_oracle(delta_c: f64, delta_x: f64, k2: f64, t: f64) -> (Complex64, Complex64) {
    let (a, b) = (-delta_c + k2, -delta_x);
    let mean = 0.5 * (a + b);
    let d = 0.5 * (a - b);
    let s = (d * d + G * G).sqrt();
    let phase = Complex64::from_polar(1.0, -mean * t);
    let (sn, cs) = (s * t).sin_cos();
    let c = phase * (cs - I * (d / s) * sn);
    let x = phase * (I * (G / s) * sn);
    (c, x)
}

/// Stationary `(ψ_C, ψ_X)` of the linear equations under a spatially
/// uniform pump of complex amplitude `f`, by Cramer's rule.
pub fn uniform_steady_state(p: &ModelParams, f: Complex64) -> (Complex64, Complex64) {
    // 0 = −i M ψ + s with s = (√(γ_C/2) f, 0)
    let m00 = Complex64::new(-p.delta_c, -0.5 * p.gamma_c);
    let m11 = Complex64::new(-p.delta_x, -0.5 * p.gamma_x);
    let m01 = Complex64::new(-G, 0.0);
    let s = (0.5 * p.gamma_c).sqrt() * f;
    // M ψ = −i s
    let rhs = -I * s;
    let det = m00 * m11 - m01 * m01;
    (rhs * m11 / det, -m01 * rhs / det)
}

/// Normalised lower-branch eigenvector `(c, x)` of the lossless mode matrix.
pub fn lower_branch_amplitudes(p: &ModelParams, k2: f64) -> (Complex64, Complex64) {
    let (a, b) = (-p.delta_c + k2, -p.delta_x);
    let lower = 0.5 * (a + b) - (0.25 * (a - b).powi(2) + G * G).sqrt();
    // (a − λ) c − G x = 0
    let (c, x) = (G, a - lower);
    let n = (c * c + x * x).sqrt();
    (Complex64::new(c / n, 0.0), Complex64::new(x / n, 0.0))
}

/// Random band-limited fields: a handful of low Fourier modes per component.
pub fn random_fields(grid: &Grid2D, amp: f64, seed: u64) -> FieldPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |rng: &mut ChaCha8Rng| {
        let modes: Vec<(f64, f64, Complex64)> = (0..6)
            .map(|_| {
                let kx = 2.0 * std::f64::consts::PI * rng.random_range(-3i32..=3) as f64 / grid.length;
                let ky = 2.0 * std::f64::consts::PI * rng.random_range(-3i32..=3) as f64 / grid.length;
                let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (kx, ky, c * amp)
            })
            .collect();
        Array2::from_shape_fn((grid.n, grid.n), |(iy, ix)| {
            modes
                .iter()
                .map(|&(kx, ky, c)| c * Complex64::from_polar(1.0, kx * grid.x(ix) + ky * grid.x(iy)))
                .sum()
        })
    };
    let c = make(&mut rng);
    let x = make(&mut rng);
    FieldPair::from_arrays(*grid, c, x, 0.0).unwrap()
}

/// Absorber and dealiasing off, one snapshot at the end.
pub fn quiet_config(n: usize, length: f64, dt: f64, t_end: f64) -> SolverConfig {
    SolverConfig {
        n,
        length,
        dt,
        t_end,
        absorber_margin: 0.0,
        dealias: Dealias::Off,
        snapshot_every: t_end,
        ..SolverConfig::default()
    }
}

pub fn no_drive(grid: &Grid2D) -> Drive {
    let z = Array2::zeros((grid.n, grid.n));
    Drive::from_parts(z.clone(), z.mapv(|v: Complex64| v.re), 1.0, grid).unwrap()
}

pub fn plane_wave(grid: &Grid2D, m: i32, amp: Complex64) -> Array2<Complex64> {
    let k = 2.0 * std::f64::consts::PI * m as f64 / grid.length;
    Array2::from_shape_fn((grid.n, grid.n), |(_, ix)| amp * Complex64::from_polar(1.0, k * grid.x(ix)))
}

/// Largest deviation of lossless, linear photon plane waves (m = 0 and 3)
/// from the closed-form Rabi evolution after t = 25.
pub fn rabi_deviation() -> f64 {
    let mut params = ModelParams::new(0.22);
    params.gamma_c = 0.0;
    params.gamma_x = 0.0;
    let cfg = SolverConfig {
        interaction_scale: 0.0,
        ..quiet_config(16, 16.0, 0.02, 25.0)
    };
    let grid = cfg.grid().unwrap();
    let mut worst: f64 = 0.0;
    for m in [0, 3] {
        let mut solver = Solver::new(&params, &no_drive(&grid), &cfg).unwrap();
        let c0 = plane_wave(&grid, m, Complex64::new(1.0, 0.0));
        let mut f = FieldPair::from_arrays(grid, c0.clone(), Array2::zeros((16, 16)), 0.0).unwrap();
        solver.advance(&mut f, cfg.total_steps()).unwrap();
        let k = 2.0 * std::f64::consts::PI * m as f64 / grid.length;
        let (c, x) = rabi_oracle(params.delta_c, params.delta_x, k * k, f.t);
        for ((iy, ix), &p) in c0.indexed_iter() {
            worst = worst.max((f.psi_c[[iy, ix]] - p * c).norm());
            worst = worst.max((f.psi_x[[iy, ix]] - p * x).norm());
        }
    }
    worst
}

/// Largest relative deviation of the total norm from `N(0) e^{−γt}` with
/// equal decays, disorder and the exciton nonlinearity switched on.
pub fn norm_law_deviation() -> f64 {
    let mut params = ModelParams::new(0.22);
    params.gamma_c = 0.05;
    params.gamma_x = 0.05;
    let cfg = quiet_config(32, 32.0, 0.02, 40.0);
    let grid = cfg.grid().unwrap();
    let disorder = DisorderSpec {
        w0: 0.05,
        sigma_w: 1.5,
        seed: 4,
    };
    let w = polariton::drive::sample_disorder(&disorder, &grid).unwrap();
    let drive = Drive::from_parts(Array2::zeros((32, 32)), w, 1.0, &grid).unwrap();
    let mut solver = Solver::new(&params, &drive, &cfg).unwrap();
    let mut f = random_fields(&grid, 0.8, 11);
    let n0 = f.norm();
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        solver.advance(&mut f, 500).unwrap();
        let expected = n0 * (-params.gamma_c * f.t).exp();
        worst = worst.max((f.norm() - expected).abs() / expected);
    }
    worst
}

/// Largest relative deviation of the long-time linear response to a uniform
/// pump from the stationary 2×2 solve.
pub fn steady_state_deviation() -> f64 {
    let mut params = ModelParams::new(0.22);
    // larger loss shortens the transient; small dt keeps the O(dt²) splitting
    // offset of the fixed point below the tolerance
    params.gamma_c = 0.2;
    params.gamma_x = 0.2;
    let cfg = SolverConfig {
        interaction_scale: 0.0,
        ..quiet_config(8, 8.0, 5e-4, 220.0)
    };
    let grid = cfg.grid().unwrap();
    let amp = Complex64::from_polar(0.7, 0.3);
    let pump = Array2::from_elem((8, 8), amp);
    let drive = Drive::from_parts(pump, Array2::zeros((8, 8)), 5.0, &grid).unwrap();
    let mut solver = Solver::new(&params, &drive, &cfg).unwrap();
    let mut f = FieldPair::zeros(grid);
    solver.advance(&mut f, cfg.total_steps()).unwrap();
    let (c, x) = uniform_steady_state(&params, amp);
    f.psi_c
        .iter()
        .zip(f.psi_x.iter())
        .map(|(&a, &b)| ((a - c).norm() / c.norm()).max((b - x).norm() / x.norm()))
        .fold(0.0, f64::max)
}
