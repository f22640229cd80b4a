use serde::{Deserialize, Serialize};

use crate::grid::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Periodized Gaussian with standard deviation `delta`.
    Gaussian,
}

/// Smoothing kernel `sigma_delta`, stored as its Fourier symbol per FFT bin.
///
/// The Gaussian symbol is `exp(-delta^2 |k|^2 / 2)`: real, radially symmetric,
/// equal to 1 at `k = 0`, and strictly inside `(0, 1]` for moderate `delta*k`.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    grid: TorusGrid,
    delta: f64,
    kind: KernelKind,
    symbol: Vec<f64>,
}

impl MollifierKernel {
    pub fn gaussian(grid: &TorusGrid, delta: f64) -> Self {
        assert!(delta >= 0.0 && delta.is_finite(), "mollifier radius must be >= 0");
        let d = grid.dim();
        let n = grid.n();
        let symbol = (0..grid.len())
            .map(|flat| {
                let m = grid.multi(flat);
                let k2: f64 = (0..d).map(|a| grid.wavenumber(m[a]).powi(2)).sum();
                (-0.5 * delta * delta * k2).exp()
            })
            .collect::<Vec<_>>();
        debug_assert_eq!(symbol.len(), n.pow(d as u32));
        Self { grid: *grid, delta, kind: KernelKind::Gaussian, symbol }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Analytic symbol at an arbitrary wavevector.
    pub fn symbol_at(&self, k: &[f64]) -> f64 {
        let k2: f64 = k.iter().map(|v| v * v).sum();
        (-0.5 * self.delta * self.delta * k2).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_mass_and_range() {
        let g = TorusGrid::new(2, 1.0, 32).unwrap();
        let h = g.spacing();
        let k = MollifierKernel::gaussian(&g, 4.0 * h);
        assert_eq!(k.symbol()[0], 1.0);
        assert!(k.symbol().iter().all(|&s| s > 0.0 && s <= 1.0));
        // radial symmetry: bins (1,2) and (2,1) and (-1,2) agree
        let a = k.symbol()[g.flat([1, 2, 0])];
        let b = k.symbol()[g.flat([2, 1, 0])];
        let c = k.symbol()[g.flat([31, 2, 0])];
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
