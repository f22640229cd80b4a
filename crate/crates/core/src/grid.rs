//! Uniform periodic grids on the box `[-L, L)^d`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension must be 2 or 3, got {0}")]
    UnsupportedDimension(usize),
    #[error("cells per axis must be an even 2^a*3^b with N >= 8 (power of two preferred), got {0}")]
    UnsupportedCellCount(usize),
    #[error("half-period must be positive and finite, got {0}")]
    InvalidHalfPeriod(f64),
    #[error("grid mismatch: expected {expected:?}, got {found:?}")]
    Mismatch { expected: TorusGrid, found: TorusGrid },
}

/// Periodic grid with `n` cells per axis on `[-L, L)^d`.
///
/// Node `j` along an axis sits at `-L + j*h` with `h = 2L/n`; index `n` wraps to `0`.
/// Flat storage is row-major with axis 0 slowest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    half_period: f64,
}

fn fft_friendly(n: usize) -> bool {
    if n < 8 || n % 2 != 0 {
        return false;
    }
    let mut m = n;
    while m % 2 == 0 {
        m /= 2;
    }
    while m % 3 == 0 {
        m /= 3;
    }
    m == 1
}

impl TorusGrid {
    pub fn new(dim: usize, half_period: f64, n: usize) -> Result<Self, GridError> {
        if dim != 2 && dim != 3 {
            return Err(GridError::UnsupportedDimension(dim));
        }
        if !(half_period.is_finite() && half_period > 0.0) {
            return Err(GridError::InvalidHalfPeriod(half_period));
        }
        if !fft_friendly(n) {
            return Err(GridError::UnsupportedCellCount(n));
        }
        Ok(Self { dim, n, half_period })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    pub fn period(&self) -> f64 {
        2.0 * self.half_period
    }

    pub fn spacing(&self) -> f64 {
        self.period() / self.n as f64
    }

    /// Number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one node, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.period().powi(self.dim as i32)
    }

    /// Coordinate of node `j` along any axis.
    pub fn coord(&self, j: usize) -> f64 {
        -self.half_period + j as f64 * self.spacing()
    }

    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    /// Flat index of a multi-index; unused trailing entries are ignored.
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        let n = self.n;
        match self.dim {
            2 => idx[0] * n + idx[1],
            _ => (idx[0] * n + idx[1]) * n + idx[2],
        }
    }

    pub fn multi(&self, flat: usize) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [flat / n, flat % n, 0],
            _ => [flat / (n * n), (flat / n) % n, flat % n],
        }
    }

    /// Physical position of a node (third entry is 0 in 2D).
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let m = self.multi(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coord(m[a]);
        }
        x
    }

    /// Minimal-image representative of a displacement, in `[-L, L)`.
    pub fn min_image(&self, dx: f64) -> f64 {
        let p = self.period();
        let r = (dx + self.half_period).rem_euclid(p) - self.half_period;
        if r >= self.half_period {
            r - p
        } else {
            r
        }
    }

    /// Signed integer frequency of FFT bin `m`, in `[-n/2, n/2)`.
    pub fn frequency(&self, m: usize) -> isize {
        if m < self.n / 2 {
            m as isize
        } else {
            m as isize - self.n as isize
        }
    }

    /// Angular wavenumber of FFT bin `m`: `pi * freq / L`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        std::f64::consts::PI * self.frequency(m) as f64 / self.half_period
    }

    /// Wavenumber used by first derivatives: zero at the Nyquist bin so that
    /// derivatives of real fields stay real and skew-adjoint.
    pub fn derivative_wavenumber(&self, m: usize) -> f64 {
        if m == self.n / 2 {
            0.0
        } else {
            self.wavenumber(m)
        }
    }

    /// Weighted centroid on the torus: a circular mean per axis fixes a reference point,
    /// then min-image offsets from it are averaged. Exact for weights supported in a
    /// ball of radius below `L/2`. `None` when the total weight is not positive.
    pub fn periodic_centroid(&self, weight: &[f64]) -> Option<[f64; 3]> {
        let total: f64 = weight.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let scale = std::f64::consts::PI / self.half_period;
        let mut c = [0.0; 3];
        let mut re = [0.0; 3];
        let mut im = [0.0; 3];
        for (i, &w) in weight.iter().enumerate() {
            let x = self.position(i);
            for a in 0..self.dim {
                re[a] += w * (scale * x[a]).cos();
                im[a] += w * (scale * x[a]).sin();
            }
        }
        for a in 0..self.dim {
            c[a] = im[a].atan2(re[a]) / scale;
        }
        let mut shift = [0.0; 3];
        for (i, &w) in weight.iter().enumerate() {
            let x = self.position(i);
            for a in 0..self.dim {
                shift[a] += w * self.min_image(x[a] - c[a]);
            }
        }
        for a in 0..self.dim {
            c[a] = self.min_image(c[a] + shift[a] / total);
        }
        Some(c)
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::Mismatch { expected: *self, found: *other })
        }
    }
}
