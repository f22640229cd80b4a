//! Scalar, vector and tensor fields sampled on a [`TorusGrid`].
//!
//! Reductions (integrals, norms, extrema) run sequentially in flat-index order so
//! results are bitwise reproducible regardless of thread count.

use crate::grid::TorusGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self { grid: *grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: &TorusGrid, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.len(), "scalar field length mismatch");
        Self { grid: *grid, data }
    }

    pub fn from_fn(grid: &TorusGrid, mut f: impl FnMut(&[f64; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid: *grid, data }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Grid quadrature `sum f * h^d`.
    pub fn integral(&self) -> f64 {
        sum(&self.data) * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: *grid, comps: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn from_comps(grid: &TorusGrid, comps: Vec<Vec<f64>>) -> Self {
        assert_eq!(comps.len(), grid.dim(), "vector field component count mismatch");
        for c in &comps {
            assert_eq!(c.len(), grid.len(), "vector field length mismatch");
        }
        Self { grid: *grid, comps }
    }

    pub fn from_fn(grid: &TorusGrid, mut f: impl FnMut(&[f64; 3]) -> [f64; 3]) -> Self {
        let d = grid.dim();
        let mut comps = vec![vec![0.0; grid.len()]; d];
        for i in 0..grid.len() {
            let v = f(&grid.position(i));
            for a in 0..d {
                comps[a][i] = v[a];
            }
        }
        Self { grid: *grid, comps }
    }

    pub fn constant(grid: &TorusGrid, value: [f64; 3]) -> Self {
        Self::from_fn(grid, |_| value)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn at(&self, i: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[i];
        }
        v
    }

    pub fn norm_sq_at(&self, i: usize) -> f64 {
        self.comps.iter().map(|c| c[i] * c[i]).sum()
    }

    /// `∫ w |v|^2` with an optional pointwise weight.
    pub fn weighted_norm_sq(&self, weight: Option<&[f64]>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.grid.len() {
            let w = weight.map_or(1.0, |w| w[i]);
            acc += w * self.norm_sq_at(i);
        }
        acc * self.grid.cell_volume()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len()).fold(0.0, |m, i| m.max(self.norm_sq_at(i).sqrt()))
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn axpy(&mut self, a: f64, x: &VectorField) {
        for (c, xc) in self.comps.iter_mut().zip(&x.comps) {
            for (v, xv) in c.iter_mut().zip(xc) {
                *v += a * xv;
            }
        }
    }

    /// Components concatenated into one flat vector.
    pub fn to_flat(&self) -> Vec<f64> {
        self.comps.concat()
    }

    pub fn from_flat(grid: &TorusGrid, flat: &[f64]) -> Self {
        let n = grid.len();
        assert_eq!(flat.len(), n * grid.dim());
        Self { grid: *grid, comps: flat.chunks(n).map(|c| c.to_vec()).collect() }
    }
}

/// Rank-2 tensor field, components stored row-major as `(i, j) -> i * d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: TorusGrid,
    pub comps: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn from_comps(grid: &TorusGrid, comps: Vec<Vec<f64>>) -> Self {
        assert_eq!(comps.len(), grid.dim() * grid.dim());
        Self { grid: *grid, comps }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[i * self.grid.dim() + j]
    }

    /// Pointwise Frobenius norm squared `A:A`.
    pub fn frobenius_sq_at(&self, k: usize) -> f64 {
        self.comps.iter().map(|c| c[k] * c[k]).sum()
    }

    /// `∫ w A:A` with an optional pointwise weight.
    pub fn weighted_frobenius_sq(&self, weight: Option<&[f64]>) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.grid.len() {
            let w = weight.map_or(1.0, |w| w[k]);
            acc += w * self.frobenius_sq_at(k);
        }
        acc * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = self.grid.dim();
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for (a, b) in self.get(i, j).iter().zip(self.get(j, i)) {
                    m = m.max((a - b).abs());
                }
            }
        }
        m
    }
}

/// Sequential sum in index order.
pub fn sum(values: &[f64]) -> f64 {
    values.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
