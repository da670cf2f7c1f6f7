//! Periodic grids, grid functions and the pseudo-spectral operators built on
//! top of them.
//!
//! All operators act on real-space [`Field`]s and return real-space fields;
//! the Fourier representation is an internal detail of [`SpectralWorkspace`].
//! Grid storage is row-major with `x` varying fastest, i.e. the value at
//! `(ix, iy)` lives at `iy * n + ix`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field length {got} does not match grid point count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field mean {mean:e} exceeds the zero-mean tolerance {tolerance:e}")]
    NonZeroMean { mean: f64, tolerance: f64 },
}

/// Uniform periodic lattice on `[0, L)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    length: f64,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self, SpectralError> {
        if dim != 1 && dim != 2 {
            return Err(SpectralError::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(SpectralError::InvalidGrid(format!(
                "points per dimension must be a power of two >= 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(SpectralError::InvalidGrid(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total number of grid points, `n^dim`.
    pub fn point_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Quadrature weight of a single cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Physical coordinates of the point with flat index `idx`; `y` is zero
    /// on 1D grids.
    pub fn coordinates(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx % self.n) as f64 * h, (idx / self.n) as f64 * h],
        }
    }

    /// Signed integer wavenumber index of FFT slot `j`; the Nyquist slot maps
    /// to `-n/2`.
    pub fn mode_index(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }
}

/// Real grid function. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != grid.point_count() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.point_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: PeriodicGrid, value: f64) -> Self {
        assert!(value.is_finite(), "constant field value must be finite");
        Self {
            grid,
            values: vec![value; grid.point_count()],
        }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at every grid point (`y = 0` in 1D).
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self, SpectralError> {
        let values = (0..grid.point_count())
            .map(|i| {
                let [x, y] = grid.coordinates(i);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.point_count());
        Self { grid, values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise map; fails if the map produces non-finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, SpectralError> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `self - other`, pointwise.
    pub fn difference(&self, other: &Field) -> Result<Self, SpectralError> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.grid, values))
    }

    /// Discrete L2 norm, `sqrt(h^dim * sum f_i^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// `h^dim * sum f_i g_i`; the trapezoidal rule, which for periodic
/// integrands is spectrally accurate.
pub fn inner_product(f: &Field, g: &Field) -> Result<f64, SpectralError> {
    if f.grid != g.grid {
        return Err(SpectralError::GridMismatch);
    }
    let sum: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(f.grid.cell_volume() * sum)
}

/// Zero-mean tolerance used by [`SpectralWorkspace::inv_neg_laplacian_zero_mean`].
pub fn zero_mean_tolerance(f: &Field) -> f64 {
    1e-10 * (f.rms() + 1.0)
}

/// FFT plans, wavenumber tables and scratch space for one grid.
///
/// A workspace is not shared between threads; parallel sweeps build one per
/// worker.
pub struct SpectralWorkspace {
    grid: PeriodicGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Physical wavenumber `2 pi m / L` per FFT slot along one axis.
    wavenumbers: Vec<f64>,
    /// `|k|^2` per spectral mode; exactly zero for the mean mode.
    neg_laplacian_symbol: Vec<f64>,
    dealias: bool,
    scratch: Vec<Complex64>,
    transpose_buf: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralWorkspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralWorkspace")
            .field("grid", &self.grid)
            .field("dealias", &self.dealias)
            .finish_non_exhaustive()
    }
}

impl SpectralWorkspace {
    pub fn new(grid: PeriodicGrid) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let base = 2.0 * PI / grid.length();
        let wavenumbers: Vec<f64> = (0..n).map(|j| base * grid.mode_index(j) as f64).collect();
        let neg_laplacian_symbol = match grid.dim() {
            1 => wavenumbers.iter().map(|k| k * k).collect(),
            _ => (0..grid.point_count())
                .map(|idx| {
                    let kx = wavenumbers[idx % n];
                    let ky = wavenumbers[idx / n];
                    kx * kx + ky * ky
                })
                .collect(),
        };
        let transpose_len = if grid.dim() == 2 { grid.point_count() } else { 0 };
        Self {
            grid,
            forward,
            inverse,
            wavenumbers,
            neg_laplacian_symbol,
            dealias: false,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            transpose_buf: vec![Complex64::new(0.0, 0.0); transpose_len],
        }
    }

    /// Enables the 2/3-rule filter applied by [`Self::dealias`].
    pub fn with_dealiasing(mut self, enabled: bool) -> Self {
        self.dealias = enabled;
        self
    }

    pub fn dealiasing_enabled(&self) -> bool {
        self.dealias
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// `|k|^2` for every spectral mode, laid out like the spectrum.
    pub fn neg_laplacian_symbol(&self) -> &[f64] {
        &self.neg_laplacian_symbol
    }

    /// Wavevector `(kx, ky)` of spectral slot `idx` (`ky = 0` in 1D).
    pub fn wavevector(&self, idx: usize) -> [f64; 2] {
        let n = self.grid.n();
        match self.grid.dim() {
            1 => [self.wavenumbers[idx], 0.0],
            _ => [self.wavenumbers[idx % n], self.wavenumbers[idx / n]],
        }
    }

    fn check_grid(&self, f: &Field) {
        assert_eq!(
            f.grid, self.grid,
            "field grid does not match the workspace grid"
        );
    }

    fn transform(&mut self, buf: &mut [Complex64], forward: bool) {
        let n = self.grid.n();
        let plan = if forward {
            Arc::clone(&self.forward)
        } else {
            Arc::clone(&self.inverse)
        };
        // rows (x direction); rustfft processes consecutive chunks of length n
        plan.process_with_scratch(buf, &mut self.scratch);
        if self.grid.dim() == 2 {
            let t = &mut self.transpose_buf;
            for iy in 0..n {
                for ix in 0..n {
                    t[ix * n + iy] = buf[iy * n + ix];
                }
            }
            plan.process_with_scratch(t, &mut self.scratch);
            for iy in 0..n {
                for ix in 0..n {
                    buf[iy * n + ix] = t[ix * n + iy];
                }
            }
        }
    }

    /// Unnormalized forward DFT of a real field.
    pub fn forward(&mut self, f: &Field) -> Vec<Complex64> {
        self.check_grid(f);
        let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Inverse DFT (with `1/N` normalization) keeping the real part.
    pub fn inverse(&mut self, mut spectrum: Vec<Complex64>) -> Field {
        assert_eq!(spectrum.len(), self.grid.point_count());
        self.transform(&mut spectrum, false);
        let scale = 1.0 / self.grid.point_count() as f64;
        let values: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Field::from_raw(self.grid, values)
    }

    /// Applies the 2/3 rule in place when enabled; no-op otherwise.
    pub fn dealias(&self, spectrum: &mut [Complex64]) {
        if !self.dealias {
            return;
        }
        let n = self.grid.n();
        let cutoff = (n / 3) as i64;
        for (idx, c) in spectrum.iter_mut().enumerate() {
            let mx = self.grid.mode_index(idx % n).abs();
            let my = if self.grid.dim() == 2 {
                self.grid.mode_index(idx / n).abs()
            } else {
                0
            };
            if mx > cutoff || my > cutoff {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn laplacian(&mut self, f: &Field) -> Field {
        let mut spec = self.forward(f);
        for (c, k2) in spec.iter_mut().zip(&self.neg_laplacian_symbol) {
            *c *= -k2;
        }
        self.inverse(spec)
    }

    /// Spectral gradient, one component per dimension. The Nyquist mode is
    /// dropped so that every component stays real.
    pub fn gradient(&mut self, f: &Field) -> Vec<Field> {
        let spec = self.forward(f);
        let n = self.grid.n();
        let nyquist = -((n / 2) as i64);
        (0..self.grid.dim())
            .map(|axis| {
                let mut comp = spec.clone();
                for (idx, c) in comp.iter_mut().enumerate() {
                    let slot = if axis == 0 { idx % n } else { idx / n };
                    if self.grid.mode_index(slot) == nyquist {
                        *c = Complex64::new(0.0, 0.0);
                    } else {
                        *c *= Complex64::new(0.0, self.wavenumbers[slot]);
                    }
                }
                self.inverse(comp)
            })
            .collect()
    }

    /// Solves `(-Δ) g = f - mean(f)` with `mean(g) = 0`.
    ///
    /// Fails with [`SpectralError::NonZeroMean`] when `|mean(f)|` exceeds
    /// [`zero_mean_tolerance`]: a nonzero mean upstream almost always means
    /// mass was not conserved.
    pub fn inv_neg_laplacian_zero_mean(&mut self, f: &Field) -> Result<Field, SpectralError> {
        let mean = f.mean();
        let tolerance = zero_mean_tolerance(f);
        if mean.abs() > tolerance {
            return Err(SpectralError::NonZeroMean { mean, tolerance });
        }
        let mut spec = self.forward(f);
        for (c, &k2) in spec.iter_mut().zip(&self.neg_laplacian_symbol) {
            if k2 == 0.0 {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c /= k2;
            }
        }
        Ok(self.inverse(spec))
    }

    /// `h^dim / N * sum |f_hat|^2`, which equals `inner_product(f, f)` by
    /// Parseval.
    pub fn spectral_norm_sq(&mut self, f: &Field) -> f64 {
        let spec = self.forward(f);
        let sum: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        self.grid.cell_volume() * sum / self.grid.point_count() as f64
    }
}
