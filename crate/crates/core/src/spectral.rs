//! Fourier-collocation operators on the torus.
//!
//! Real fields are transformed two at a time by packing them into the real and
//! imaginary parts of one complex FFT. First derivatives multiply by `i*k` with the
//! Nyquist bin zeroed, which keeps every derivative matrix real and skew-symmetric;
//! as a consequence `∫ v·div(μ D u)` is exactly symmetric in `u, v` on the grid.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{ScalarField, TensorField, VectorField};
use crate::grid::TorusGrid;
use crate::mollifier::MollifierKernel;

pub type Spectrum = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<Complex64>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    const B: usize = 16;
    for ib in (0..n).step_by(B) {
        for jb in (ib..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                let start = if ib == jb { i + 1 } else { jb };
                for j in start..(jb + B).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

pub struct Spectral {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
    /// Derivative wavevector per flat bin.
    kd: Vec<[f64; 3]>,
    /// `|kd|^2` per flat bin.
    kd_sq: Vec<f64>,
    /// Flat index of the bin holding `-k`.
    neg: Vec<usize>,
    /// Bins kept by the 2/3 truncation rule.
    keep: Vec<bool>,
    /// Bins with a Nyquist index along some axis.
    nyquist: Vec<bool>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: &TorusGrid) -> Self {
        let n = grid.n();
        let d = grid.dim();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let len = grid.len();
        let mut kd = Vec::with_capacity(len);
        let mut kd_sq = Vec::with_capacity(len);
        let mut neg = Vec::with_capacity(len);
        let mut keep = Vec::with_capacity(len);
        let mut nyquist = Vec::with_capacity(len);
        let cutoff = n / 3;
        for flat in 0..len {
            let m = grid.multi(flat);
            let mut k = [0.0; 3];
            let mut mneg = [0usize; 3];
            let mut kept = true;
            for a in 0..d {
                k[a] = grid.derivative_wavenumber(m[a]);
                mneg[a] = (n - m[a]) % n;
                if grid.frequency(m[a]).unsigned_abs() > cutoff {
                    kept = false;
                }
            }
            kd_sq.push(k.iter().map(|v| v * v).sum());
            kd.push(k);
            neg.push(grid.flat(mneg));
            keep.push(kept);
            nyquist.push((0..d).any(|a| m[a] == n / 2));
        }
        Self { grid: *grid, fwd, inv, scratch_len, kd, kd_sq, neg, keep, nyquist }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn kd(&self) -> &[[f64; 3]] {
        &self.kd
    }

    pub fn kd_sq(&self) -> &[f64] {
        &self.kd_sq
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.n();
        let d = self.grid.dim();
        let fft = if inverse { &self.inv } else { &self.fwd };
        SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            if scratch.len() < self.scratch_len {
                scratch.resize(self.scratch_len, ZERO);
            }
            let scratch = &mut scratch[..self.scratch_len];
            if d == 2 {
                // rows, then columns through an in-place transpose
                fft.process_with_scratch(data, scratch);
                transpose_square(data, n);
                fft.process_with_scratch(data, scratch);
                transpose_square(data, n);
            } else {
                let mut buf: Vec<Complex64> = Vec::new();
                for axis in 0..d {
                    let stride = n.pow((d - 1 - axis) as u32);
                    if stride == 1 {
                        fft.process_with_scratch(data, scratch);
                        continue;
                    }
                    let outer = n.pow(axis as u32);
                    let block = n * stride;
                    buf.resize(block, ZERO);
                    for o in 0..outer {
                        let base = o * block;
                        for j in 0..n {
                            let row = &data[base + j * stride..base + (j + 1) * stride];
                            for (s, v) in row.iter().enumerate() {
                                buf[s * n + j] = *v;
                            }
                        }
                        fft.process_with_scratch(&mut buf, scratch);
                        for j in 0..n {
                            let row = &mut data[base + j * stride..base + (j + 1) * stride];
                            for (s, v) in row.iter_mut().enumerate() {
                                *v = buf[s * n + j];
                            }
                        }
                    }
                }
            }
        });
        if inverse {
            let norm = 1.0 / data.len() as f64;
            for v in data.iter_mut() {
                *v *= norm;
            }
        }
    }

    pub fn forward(&self, f: &[f64]) -> Spectrum {
        let mut z: Spectrum = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut z, false);
        z
    }

    /// Spectra of two real fields from a single complex FFT.
    pub fn forward_pair(&self, a: &[f64], b: &[f64]) -> (Spectrum, Spectrum) {
        let mut z: Spectrum = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.transform(&mut z, false);
        let mut sb = Vec::with_capacity(z.len());
        let sa = z
            .iter()
            .zip(&self.neg)
            .map(|(zk, &nk)| {
                let zc = z[nk].conj();
                let diff = zk - zc;
                // (z - conj(z_-k)) / (2i)
                sb.push(Complex64::new(diff.im * 0.5, -diff.re * 0.5));
                (zk + zc) * 0.5
            })
            .collect();
        (sa, sb)
    }

    /// Real part of the inverse transform.
    pub fn inverse(&self, s: &[Complex64]) -> Vec<f64> {
        let mut z = s.to_vec();
        self.transform(&mut z, true);
        z.into_iter().map(|c| c.re).collect()
    }

    /// Inverse of two Hermitian spectra from a single complex FFT.
    pub fn inverse_pair(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let mut z: Spectrum =
            a.iter().zip(b).map(|(x, y)| Complex64::new(x.re - y.im, x.im + y.re)).collect();
        self.transform(&mut z, true);
        let re = z.iter().map(|c| c.re).collect();
        let im = z.iter().map(|c| c.im).collect();
        (re, im)
    }

    pub fn forward_many(&self, fields: &[&[f64]]) -> Vec<Spectrum> {
        let mut out = Vec::with_capacity(fields.len());
        let mut chunks = fields.chunks_exact(2);
        for pair in &mut chunks {
            let (a, b) = self.forward_pair(pair[0], pair[1]);
            out.push(a);
            out.push(b);
        }
        if let [last] = chunks.remainder() {
            out.push(self.forward(last));
        }
        out
    }

    pub fn inverse_many(&self, spectra: &[Spectrum]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(spectra.len());
        let mut chunks = spectra.chunks_exact(2);
        for pair in &mut chunks {
            let (a, b) = self.inverse_pair(&pair[0], &pair[1]);
            out.push(a);
            out.push(b);
        }
        if let [last] = chunks.remainder() {
            out.push(self.inverse(last));
        }
        out
    }

    /// `i * kd_axis * s`.
    pub fn derivative_spectrum(&self, s: &[Complex64], axis: usize) -> Spectrum {
        s.iter()
            .zip(&self.kd)
            .map(|(c, k)| Complex64::new(-k[axis] * c.im, k[axis] * c.re))
            .collect()
    }

    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        let s = self.forward(&f.data);
        let d = self.grid.dim();
        let ds: Vec<Spectrum> = (0..d).map(|a| self.derivative_spectrum(&s, a)).collect();
        VectorField::from_comps(&self.grid, self.inverse_many(&ds))
    }

    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let refs: Vec<&[f64]> = v.comps.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        ScalarField::from_vec(&self.grid, self.inverse(&self.divergence_spectrum(&s)))
    }

    fn divergence_spectrum(&self, s: &[Spectrum]) -> Spectrum {
        let mut out = vec![ZERO; self.grid.len()];
        for (a, sa) in s.iter().enumerate() {
            for (k, c) in sa.iter().enumerate() {
                let kk = self.kd[k][a];
                out[k] += Complex64::new(-kk * c.im, kk * c.re);
            }
        }
        out
    }

    /// Full velocity gradient, component `(i, j)` is `∂_j v_i`.
    pub fn velocity_gradient(&self, v: &VectorField) -> TensorField {
        let d = self.grid.dim();
        let refs: Vec<&[f64]> = v.comps.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        let mut ds = Vec::with_capacity(d * d);
        for si in &s {
            for j in 0..d {
                ds.push(self.derivative_spectrum(si, j));
            }
        }
        TensorField::from_comps(&self.grid, self.inverse_many(&ds))
    }

    /// Symmetric gradient `(∇v + ∇v^T) / 2`, symmetric to the last bit.
    pub fn sym_grad(&self, v: &VectorField) -> TensorField {
        let d = self.grid.dim();
        let refs: Vec<&[f64]> = v.comps.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        let upper = self.sym_grad_upper(&s);
        let vals = self.inverse_many(&upper);
        let mut comps = vec![Vec::new(); d * d];
        let mut idx = 0;
        for i in 0..d {
            for j in i..d {
                comps[i * d + j] = vals[idx].clone();
                comps[j * d + i] = vals[idx].clone();
                idx += 1;
            }
        }
        TensorField::from_comps(&self.grid, comps)
    }

    /// Upper-triangle spectra of the symmetric gradient, ordered `(0,0),(0,1),..,(1,1),..`.
    fn sym_grad_upper(&self, s: &[Spectrum]) -> Vec<Spectrum> {
        let d = self.grid.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                let mut c = vec![ZERO; self.grid.len()];
                for k in 0..c.len() {
                    let (ki, kj) = (self.kd[k][i], self.kd[k][j]);
                    let (ui, uj) = (s[i][k], s[j][k]);
                    // 0.5 * i * (kj ui + ki uj)
                    let re = kj * ui.re + ki * uj.re;
                    let im = kj * ui.im + ki * uj.im;
                    c[k] = Complex64::new(-0.5 * im, 0.5 * re);
                }
                out.push(c);
            }
        }
        out
    }

    /// `div(weight * D v)` computed by collocation: the product with `weight` is taken
    /// at the nodes with no truncation so the discrete operator stays symmetric.
    pub fn div_weighted_sym_grad(&self, weight: &[f64], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.grid.dim();
        let refs: Vec<&[f64]> = v.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        let upper = self.sym_grad_upper(&s);
        let mut stress = self.inverse_many(&upper);
        for comp in stress.iter_mut() {
            for (x, w) in comp.iter_mut().zip(weight) {
                *x *= w;
            }
        }
        let srefs: Vec<&[f64]> = stress.iter().map(|c| c.as_slice()).collect();
        let ss = self.forward_many(&srefs);
        let upper_index = |i: usize, j: usize| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            // position of (a, b) in the upper-triangle ordering
            a * d - a * (a + 1) / 2 + b
        };
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut c = vec![ZERO; self.grid.len()];
            for j in 0..d {
                let sij = &ss[upper_index(i, j)];
                for k in 0..c.len() {
                    let kk = self.kd[k][j];
                    c[k] += Complex64::new(-kk * sij[k].im, kk * sij[k].re);
                }
            }
            out.push(c);
        }
        self.inverse_many(&out)
    }

    /// `mass v - div(weight D v)` with every Nyquist bin removed from the result. For `v`
    /// free of Nyquist content this is the Galerkin restriction of the variable-coefficient
    /// operator to that subspace, on which `D` has no spurious null modes.
    pub fn mass_minus_div_weighted_sym_grad(&self, mass: &[f64], weight: &[f64], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let refs: Vec<&[f64]> = v.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        let out = self.weighted_operator_spectra(mass, weight, &s, Some(v));
        self.inverse_many(&out)
    }

    /// Spectral form of [`Self::mass_minus_div_weighted_sym_grad`]: spectra in, spectra
    /// out. `values` may supply the nodal values of `s` to save a transform.
    pub fn weighted_operator_spectra(
        &self,
        mass: &[f64],
        weight: &[f64],
        s: &[Spectrum],
        values: Option<&[Vec<f64>]>,
    ) -> Vec<Spectrum> {
        let d = self.grid.dim();
        let nu = d * (d + 1) / 2;
        let mut batch = self.sym_grad_upper(s);
        if values.is_none() {
            batch.extend(s.iter().cloned());
        }
        let mut fields = self.inverse_many(&batch);
        for comp in fields.iter_mut().take(nu) {
            for (x, w) in comp.iter_mut().zip(weight) {
                *x *= w;
            }
        }
        match values {
            Some(v) => {
                for c in v {
                    fields.push(c.iter().zip(mass).map(|(x, m)| x * m).collect());
                }
            }
            None => {
                for comp in fields.iter_mut().skip(nu) {
                    for (x, m) in comp.iter_mut().zip(mass) {
                        *x *= m;
                    }
                }
            }
        }
        let frefs: Vec<&[f64]> = fields.iter().map(|c| c.as_slice()).collect();
        let mut ss = self.forward_many(&frefs);
        let upper_index = |i: usize, j: usize| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            a * d - a * (a + 1) / 2 + b
        };
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut c = std::mem::take(&mut ss[nu + i]);
            for j in 0..d {
                let sij = &ss[upper_index(i, j)];
                for k in 0..c.len() {
                    let kk = self.kd[k][j];
                    c[k] -= Complex64::new(-kk * sij[k].im, kk * sij[k].re);
                }
            }
            self.remove_nyquist(&mut c);
            out.push(c);
        }
        out
    }

    pub fn is_nyquist(&self, k: usize) -> bool {
        self.nyquist[k]
    }

    /// Zero every bin with a Nyquist index.
    pub fn remove_nyquist(&self, s: &mut [Complex64]) {
        for (c, &nq) in s.iter_mut().zip(&self.nyquist) {
            if nq {
                *c = ZERO;
            }
        }
    }

    /// Remove Nyquist content from real fields in place.
    pub fn project_off_nyquist(&self, comps: &mut [Vec<f64>]) {
        let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        let mut s = self.forward_many(&refs);
        s.iter_mut().for_each(|c| self.remove_nyquist(c));
        for (dst, src) in comps.iter_mut().zip(self.inverse_many(&s)) {
            *dst = src;
        }
    }

    /// Divergence of a general tensor field, `(div T)_i = Σ_j ∂_j T_ij`.
    pub fn div_tensor(&self, t: &TensorField) -> VectorField {
        let d = self.grid.dim();
        let refs: Vec<&[f64]> = t.comps.iter().map(|c| c.as_slice()).collect();
        let s = self.forward_many(&refs);
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut c = vec![ZERO; self.grid.len()];
            for j in 0..d {
                let sij = &s[i * d + j];
                for k in 0..c.len() {
                    let kk = self.kd[k][j];
                    c[k] += Complex64::new(-kk * sij[k].im, kk * sij[k].re);
                }
            }
            out.push(c);
        }
        VectorField::from_comps(&self.grid, self.inverse_many(&out))
    }

    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut s = self.forward(&f.data);
        for (c, k2) in s.iter_mut().zip(&self.kd_sq) {
            *c *= -k2;
        }
        ScalarField::from_vec(&self.grid, self.inverse(&s))
    }

    /// Divergence-free part of `v` (Helmholtz projection). The mean is kept.
    pub fn leray_project(&self, v: &VectorField) -> VectorField {
        let refs: Vec<&[f64]> = v.comps.iter().map(|c| c.as_slice()).collect();
        let mut s = self.forward_many(&refs);
        self.leray_spectra(&mut s);
        VectorField::from_comps(&self.grid, self.inverse_many(&s))
    }

    pub(crate) fn leray_spectra(&self, s: &mut [Spectrum]) {
        let d = self.grid.dim();
        for k in 0..self.grid.len() {
            let k2 = self.kd_sq[k];
            if k2 == 0.0 {
                continue;
            }
            let kv = self.kd[k];
            let mut dotp = ZERO;
            for a in 0..d {
                dotp += s[a][k] * kv[a];
            }
            let f = dotp / k2;
            for a in 0..d {
                s[a][k] -= f * kv[a];
            }
        }
    }

    pub fn mollify(&self, f: &ScalarField, kernel: &MollifierKernel) -> ScalarField {
        assert_eq!(kernel.grid(), &self.grid, "mollifier grid mismatch");
        let mut s = self.forward(&f.data);
        for (c, sym) in s.iter_mut().zip(kernel.symbol()) {
            *c *= *sym;
        }
        ScalarField::from_vec(&self.grid, self.inverse(&s))
    }

    pub fn mollify_vector(&self, v: &VectorField, kernel: &MollifierKernel) -> VectorField {
        assert_eq!(kernel.grid(), &self.grid, "mollifier grid mismatch");
        let refs: Vec<&[f64]> = v.comps.iter().map(|c| c.as_slice()).collect();
        let mut s = self.forward_many(&refs);
        for sa in s.iter_mut() {
            for (c, sym) in sa.iter_mut().zip(kernel.symbol()) {
                *c *= *sym;
            }
        }
        VectorField::from_comps(&self.grid, self.inverse_many(&s))
    }

    /// Zero every bin outside the 2/3-rule band.
    pub fn dealias(&self, s: &mut [Complex64]) {
        for (c, &k) in s.iter_mut().zip(&self.keep) {
            if !k {
                *c = ZERO;
            }
        }
    }

    /// Advection term `(w·∇)u` with 2/3-rule truncation of inputs and product.
    pub fn advection_term(&self, w: &VectorField, u: &VectorField) -> VectorField {
        let d = self.grid.dim();
        let wrefs: Vec<&[f64]> = w.comps.iter().map(|c| c.as_slice()).collect();
        let mut ws = self.forward_many(&wrefs);
        ws.iter_mut().for_each(|s| self.dealias(s));
        let wf = self.inverse_many(&ws);
        let urefs: Vec<&[f64]> = u.comps.iter().map(|c| c.as_slice()).collect();
        let mut us = self.forward_many(&urefs);
        us.iter_mut().for_each(|s| self.dealias(s));
        let mut grads = Vec::with_capacity(d * d);
        for ui in &us {
            for j in 0..d {
                grads.push(self.derivative_spectrum(ui, j));
            }
        }
        let g = self.inverse_many(&grads);
        let mut prod = vec![vec![0.0; self.grid.len()]; d];
        for i in 0..d {
            for j in 0..d {
                let gij = &g[i * d + j];
                for k in 0..self.grid.len() {
                    prod[i][k] += wf[j][k] * gij[k];
                }
            }
        }
        let prefs: Vec<&[f64]> = prod.iter().map(|c| c.as_slice()).collect();
        let mut ps = self.forward_many(&prefs);
        ps.iter_mut().for_each(|s| self.dealias(s));
        VectorField::from_comps(&self.grid, self.inverse_many(&ps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(n: usize, l: f64) -> TorusGrid {
        TorusGrid::new(2, l, n).unwrap()
    }

    #[test]
    fn pair_transforms_round_trip() {
        let g = grid2(16, 1.0);
        let sp = Spectral::new(&g);
        let a = ScalarField::from_fn(&g, |x| (PI * x[0]).sin() + 0.3 * x[1]);
        let b = ScalarField::from_fn(&g, |x| (2.0 * PI * x[1]).cos() * x[0]);
        let (sa, sb) = sp.forward_pair(&a.data, &b.data);
        let sa1 = sp.forward(&a.data);
        for (x, y) in sa.iter().zip(&sa1) {
            assert!((x - y).norm() < 1e-12);
        }
        let (ra, rb) = sp.inverse_pair(&sa, &sb);
        for i in 0..g.len() {
            assert!((ra[i] - a.data[i]).abs() < 1e-13);
            assert!((rb[i] - b.data[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn three_dimensional_round_trip() {
        let g = TorusGrid::new(3, 1.0, 8).unwrap();
        let sp = Spectral::new(&g);
        let f = ScalarField::from_fn(&g, |x| (PI * x[0]).sin() * (PI * x[2]).cos() + x[1]);
        let back = sp.inverse(&sp.forward(&f.data));
        for (a, b) in back.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-13);
        }
        // derivative along axis 2 of sin(pi x0) cos(pi x2)
        let fx = ScalarField::from_fn(&g, |x| (PI * x[0]).sin() * (PI * x[2]).cos());
        let grad = sp.gradient(&fx);
        for i in 0..g.len() {
            let x = g.position(i);
            let exact = -PI * (PI * x[0]).sin() * (PI * x[2]).sin();
            assert!((grad.comps[2][i] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_cosine_matches_analytic() {
        let l = 1.3;
        let g = grid2(32, l);
        let sp = Spectral::new(&g);
        let k = 2.0 * PI / l;
        let f = ScalarField::from_fn(&g, |x| (k * x[0]).cos());
        let grad = sp.gradient(&f);
        for i in 0..g.len() {
            let x = g.position(i);
            assert!((grad.comps[0][i] + k * (k * x[0]).sin()).abs() < 1e-11);
            assert!(grad.comps[1][i].abs() < 1e-11);
        }
    }

    #[test]
    fn shear_mode_is_divergence_free() {
        let l = 1.0;
        let g = grid2(32, l);
        let sp = Spectral::new(&g);
        let v = VectorField::from_fn(&g, |x| [(2.0 * PI * x[1] / l).sin(), 0.0, 0.0]);
        assert!(sp.divergence(&v).max_abs() < 1e-12);
    }

    #[test]
    fn sym_grad_is_symmetric_and_kills_translations() {
        let g = grid2(16, 1.0);
        let sp = Spectral::new(&g);
        let v = VectorField::from_fn(&g, |x| [(PI * x[1]).sin() * x[0].cos(), (PI * x[0]).cos(), 0.0]);
        let dv = sp.sym_grad(&v);
        assert_eq!(dv.max_asymmetry(), 0.0);
        let t = VectorField::constant(&g, [1.5, -2.0, 0.0]);
        assert!(sp.sym_grad(&t).max_abs() < 1e-12);
    }

    #[test]
    fn weighted_viscous_operator_is_symmetric() {
        let g = grid2(16, 1.0);
        let sp = Spectral::new(&g);
        let mu: Vec<f64> = (0..g.len()).map(|i| 1.0 + (i % 7) as f64).collect();
        let u = VectorField::from_fn(&g, |x| [(PI * x[0]).sin() + x[1] * x[1], (PI * x[1]).cos() * x[0], 0.0]);
        let v = VectorField::from_fn(&g, |x| [(2.0 * PI * x[1]).sin() * x[0], x[0].exp(), 0.0]);
        let au = sp.div_weighted_sym_grad(&mu, &u.comps);
        let av = sp.div_weighted_sym_grad(&mu, &v.comps);
        let vau: f64 = (0..2).map(|a| crate::field::dot(&v.comps[a], &au[a])).sum();
        let uav: f64 = (0..2).map(|a| crate::field::dot(&u.comps[a], &av[a])).sum();
        assert!((vau - uav).abs() < 1e-9 * vau.abs().max(1.0));
        // -<u, div(mu Du)> equals Σ mu |Du|^2
        let du = sp.sym_grad(&u);
        let diss = du.weighted_frobenius_sq(Some(&mu)) / g.cell_volume();
        let uau: f64 = (0..2).map(|a| crate::field::dot(&u.comps[a], &au[a])).sum();
        assert!((diss + uau).abs() < 1e-9 * diss);
    }
}
