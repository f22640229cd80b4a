//! Weak-form residuals of the continuity and momentum equations.
//!
//! A probe records, per sample, the space integrals of the state against a fixed set
//! of spatial test functions. Residuals for any time profile `ψ` then follow from the
//! recorded scalars alone.

use crate::field::{ScalarField, VectorField};
use crate::grid::TorusGrid;
use crate::jet::{radial_cutoff, Jet};
use crate::scenario::{displacement, DomainCutoff, DomainSpec};
use crate::solver::FluidState;
use crate::spectral::Spectral;

use super::{psi_prime_integral, trapezoid, uniform_spacing, DiagError, LedgerContext, PsiBump};

/// Residual of one space-time test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    pub psi: PsiBump,
    pub phi: usize,
    /// With the equation as stated: `u` transports, physical viscosity `μ`.
    pub raw: f64,
    /// With the terms the solver actually discretizes: `[u]_δ` transports, `[μ]_δ`
    /// and the penalty.
    pub substituted: f64,
    /// Sum of the magnitudes of the individual terms.
    pub scale: f64,
}

/// Smooth periodic scalar test functions: periodized Gaussians `exp(κ Σ(cos(π(x-c)/L) - 1))`
/// at fixed centers, then single Fourier modes.
pub fn mass_test_functions(grid: &TorusGrid, count: usize) -> Vec<ScalarField> {
    let l = grid.half_period();
    let k = std::f64::consts::PI / l;
    let centers = [[0.0, 0.0, 0.0], [0.4, -0.3, 0.2], [-0.55, 0.5, -0.1], [0.7, 0.65, 0.0]];
    let modes = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.5], [1.0, 1.0, 1.0, 1.3], [2.0, -1.0, 0.0, 0.2]];
    (0..count)
        .map(|j| {
            if j < centers.len() {
                let c = centers[j];
                ScalarField::from_fn(grid, |x| {
                    let s: f64 = (0..grid.dim()).map(|a| (k * (x[a] - c[a] * l)).cos() - 1.0).sum();
                    (4.0 * s).exp()
                })
            } else {
                let m = modes[(j - centers.len()) % modes.len()];
                let harmonic = 1.0 + ((j - centers.len()) / modes.len()) as f64;
                ScalarField::from_fn(grid, |x| {
                    let arg: f64 = (0..grid.dim()).map(|a| m[a] * x[a]).sum::<f64>() * k * harmonic;
                    (arg + m[3]).cos()
                })
            }
        })
        .collect()
}

/// Recorder for the continuity residual
/// `∫∫ ρ ∂_tΦ + ρ u·∇Φ + ∫ ρ₀ Φ(0)` with `Φ = ψ(t) φ(x)`.
pub struct MassProbe {
    phis: Vec<ScalarField>,
    grads: Vec<VectorField>,
    times: Vec<f64>,
    /// Per sample and test function: `∫ρφ`, `∫ρu·∇φ`, `∫ρ[u]_δ·∇φ`.
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    b_w: Vec<Vec<f64>>,
}

impl MassProbe {
    pub fn new(spectral: &Spectral, phis: Vec<ScalarField>) -> Self {
        let grads = phis.iter().map(|p| spectral.gradient(p)).collect();
        Self { phis, grads, times: Vec::new(), a: Vec::new(), b: Vec::new(), b_w: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn record(&mut self, ctx: &LedgerContext, state: &FluidState) {
        let w = ctx.spectral.mollify_vector(&state.u, ctx.kernel);
        self.record_with(state.t, &state.rho, &state.u, &w);
    }

    /// Records with an explicit transporting velocity `w`.
    pub fn record_with(&mut self, t: f64, rho: &ScalarField, u: &VectorField, w: &VectorField) {
        let grid = *rho.grid();
        let cell = grid.cell_volume();
        let d = grid.dim();
        let (mut a, mut b, mut bw) = (Vec::new(), Vec::new(), Vec::new());
        for (phi, grad) in self.phis.iter().zip(&self.grads) {
            let (mut sa, mut sb, mut sw) = (0.0, 0.0, 0.0);
            for i in 0..grid.len() {
                let r = rho.data[i];
                sa += r * phi.data[i];
                for c in 0..d {
                    sb += r * u.comps[c][i] * grad.comps[c][i];
                    sw += r * w.comps[c][i] * grad.comps[c][i];
                }
            }
            a.push(sa * cell);
            b.push(sb * cell);
            bw.push(sw * cell);
        }
        self.times.push(t);
        self.a.push(a);
        self.b.push(b);
        self.b_w.push(bw);
    }

    /// Residuals for every pair of `basket` profile and spatial test function.
    /// Profiles are in absolute time and must vanish at the last sample.
    pub fn residuals(&self, basket: &[PsiBump]) -> Result<Vec<WeakResidual>, DiagError> {
        let dt = uniform_spacing(&self.times)?;
        let t0 = self.times[0];
        let mut out = Vec::new();
        for psi in basket {
            for k in 0..self.phis.len() {
                let a: Vec<f64> = self.a.iter().map(|r| r[k]).collect();
                let time_term = psi_prime_integral(psi, &self.times, &a) + psi.value(t0) * a[0];
                let flux = trapezoid(dt, self.times.iter().zip(&self.b).map(|(&t, r)| psi.value(t) * r[k]));
                let flux_w = trapezoid(dt, self.times.iter().zip(&self.b_w).map(|(&t, r)| psi.value(t) * r[k]));
                let scale = psi.value(t0) * a[0].abs()
                    + trapezoid(dt, self.times.iter().zip(&self.b).map(|(&t, r)| psi.value(t) * r[k].abs()))
                    + a.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
                out.push(WeakResidual { psi: *psi, phi: k, raw: time_term + flux, substituted: time_term + flux_w, scale });
            }
        }
        Ok(out)
    }
}

/// Region around a body on which momentum test fields are rigid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyNeighborhood {
    /// Marker id the region belongs to.
    pub id: u32,
    pub center: [f64; 3],
    /// Test fields are affine in `x` for `|x - center| ≤ radius`.
    pub radius: f64,
    /// Width of the blend back to the free stream function.
    pub width: f64,
}

/// Divergence-free test field `φ = curl s` with `s` affine on every body neighborhood.
///
/// The stream function is evaluated analytically with its derivatives. `analytic_grad`
/// is the exact gradient of `curl s`, divergence-free and strain-free on the
/// neighborhoods to round-off. The residuals use `phi` and `grad`, the spectral curl
/// and gradient of the nodal stream function: these are divergence-free in the
/// discrete sense, so the pressure drops out of the weak form exactly, at the price
/// of a truncation-sized strain on the neighborhoods.
#[derive(Debug, Clone)]
pub struct MomentumTestField {
    pub stream: ScalarField,
    pub phi: VectorField,
    /// `∂_j φ_i` at node `k` stored as `grad[k][i][j]`, spectral.
    pub grad: Vec<[[f64; 2]; 2]>,
    /// The same for the analytic field.
    pub analytic_grad: Vec<[[f64; 2]; 2]>,
    pub neighborhoods: Vec<BodyNeighborhood>,
}

fn max_strain_inside(grid: &TorusGrid, grad: &[[[f64; 2]; 2]], neighborhoods: &[BodyNeighborhood]) -> f64 {
    let mut m: f64 = 0.0;
    for (k, g) in grad.iter().enumerate() {
        let x = grid.position(k);
        let inside = neighborhoods.iter().any(|nb| {
            let r = displacement(grid, &x, &nb.center);
            (r[0] * r[0] + r[1] * r[1]).sqrt() <= nb.radius
        });
        if inside {
            let s = 0.5 * (g[0][1] + g[1][0]);
            m = m.max(g[0][0].abs()).max(g[1][1].abs()).max(s.abs());
        }
    }
    m
}

impl MomentumTestField {
    /// Largest `|div φ|` of the analytic field.
    pub fn max_divergence(&self) -> f64 {
        self.analytic_grad.iter().map(|g| (g[0][0] + g[1][1]).abs()).fold(0.0, f64::max)
    }

    /// Largest `|D φ|` of the analytic field on the neighborhoods.
    pub fn max_strain_on_neighborhoods(&self) -> f64 {
        max_strain_inside(self.phi.grid(), &self.analytic_grad, &self.neighborhoods)
    }

    /// Largest `|D φ|` of the spectral field on the neighborhoods.
    pub fn discrete_strain_on_neighborhoods(&self) -> f64 {
        max_strain_inside(self.phi.grid(), &self.grad, &self.neighborhoods)
    }
}

fn stream_mode(x: &[f64; 3], k: f64, j: usize) -> Jet {
    const MODES: [(f64, f64, f64); 6] =
        [(1.0, 0.0, 0.0), (0.0, 1.0, 0.4), (1.0, 1.0, 0.3), (1.0, -1.0, 1.1), (2.0, 1.0, 0.7), (1.0, 2.0, 2.0)];
    let (mx, my, phase) = MODES[j % MODES.len()];
    let harmonic = 1.0 + (j / MODES.len()) as f64;
    let arg = Jet::coordinate(x, 0, 0.0).scale(k * mx * harmonic)
        + Jet::coordinate(x, 1, 0.0).scale(k * my * harmonic)
        + Jet::constant(phase);
    arg.sin().scale(1.0 / (k * harmonic))
}

/// `count` admissible momentum test fields (2D). Each is the curl of a low Fourier mode,
/// windowed to the inside of the container when there is one and replaced by its
/// tangent plane on every body neighborhood.
pub fn admissible_test_fields(
    spectral: &Spectral,
    neighborhoods: &[BodyNeighborhood],
    domain: Option<(&DomainSpec, f64)>,
    count: usize,
) -> Result<Vec<MomentumTestField>, DiagError> {
    let grid = spectral.grid();
    if grid.dim() != 2 {
        return Err(DiagError::UnsupportedDimension);
    }
    let h = grid.spacing();
    for nb in neighborhoods {
        let needed = 4.0 * h;
        if nb.width < needed || nb.radius <= 0.0 {
            return Err(DiagError::NeighborhoodTooSmall { id: nb.id, radius: nb.radius, needed });
        }
        if nb.radius + nb.width >= grid.half_period() {
            return Err(DiagError::NeighborhoodTooSmall { id: nb.id, radius: nb.radius, needed: grid.half_period() });
        }
    }
    let cutoff = match domain {
        Some((dom, width)) => Some(DomainCutoff::new(dom, width).map_err(|e| DiagError::InsufficientData(e.to_string()))?),
        None => None,
    };
    let k = std::f64::consts::PI / grid.half_period();
    let stream = |x: &[f64; 3], j: usize| {
        let m = stream_mode(x, k, j);
        match &cutoff {
            Some(c) => c.eval(x) * m,
            None => m,
        }
    };
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let planes: Vec<Jet> = neighborhoods.iter().map(|nb| stream(&nb.center, j)).collect();
        let mut stream_values = Vec::with_capacity(grid.len());
        let mut analytic_grad = Vec::with_capacity(grid.len());
        for node in 0..grid.len() {
            let x = grid.position(node);
            let mut blend = Jet::default();
            let mut rigid = Jet::default();
            for (nb, plane) in neighborhoods.iter().zip(&planes) {
                let r = displacement(grid, &x, &nb.center);
                let eta = radial_cutoff(&r, 2, nb.radius, nb.width);
                if eta.v == 0.0 && eta.g == [0.0; 3] {
                    continue;
                }
                let mut affine = Jet::constant(plane.v + plane.g[0] * r[0] + plane.g[1] * r[1]);
                affine.g = [plane.g[0], plane.g[1], 0.0];
                rigid = rigid + eta * affine;
                blend = blend + eta;
            }
            let s = if blend.v == 1.0 && blend.g == [0.0; 3] {
                rigid
            } else {
                rigid + (Jet::constant(1.0) - blend) * stream(&x, j)
            };
            stream_values.push(s.v);
            analytic_grad.push([[s.h[1][0], s.h[1][1]], [-s.h[0][0], -s.h[0][1]]]);
        }
        let ss = spectral.forward(&stream_values);
        let (p0, p1) = spectral.inverse_pair(&spectral.derivative_spectrum(&ss, 1), &spectral.derivative_spectrum(&ss, 0));
        let phi = VectorField::from_comps(grid, vec![p0, p1.iter().map(|v| -v).collect()]);
        let vg = spectral.velocity_gradient(&phi);
        let grad = (0..grid.len())
            .map(|k| [[vg.get(0, 0)[k], vg.get(0, 1)[k]], [vg.get(1, 0)[k], vg.get(1, 1)[k]]])
            .collect();
        out.push(MomentumTestField {
            stream: ScalarField::from_vec(grid, stream_values),
            phi,
            grad,
            analytic_grad,
            neighborhoods: neighborhoods.to_vec(),
        });
    }
    Ok(out)
}

/// Recorder for the momentum residual
/// `∫∫ ρu·∂_tΦ + ρ(u⊗u):∇Φ - μ Du:DΦ + ∫∫ ρg·Φ + ∫ ρ₀u₀·Φ(0)` with `Φ = ψ(t) φ(x)`.
pub struct MomentumProbe {
    fields: Vec<MomentumTestField>,
    times: Vec<f64>,
    /// Per sample and field: `∫ρu·φ`, raw flux terms, substituted flux terms.
    p: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    sub: Vec<Vec<f64>>,
    mag: Vec<Vec<f64>>,
}

impl MomentumProbe {
    pub fn new(fields: Vec<MomentumTestField>) -> Self {
        Self { fields, times: Vec::new(), p: Vec::new(), raw: Vec::new(), sub: Vec::new(), mag: Vec::new() }
    }

    pub fn fields(&self) -> &[MomentumTestField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Records a sample after checking that every body is still inside its neighborhood
    /// (marker values above `1e-6` only inside the rigid radius).
    pub fn record(&mut self, ctx: &LedgerContext, state: &FluidState) -> Result<(), DiagError> {
        let grid = *state.grid();
        if grid.dim() != 2 {
            return Err(DiagError::UnsupportedDimension);
        }
        if let Some(f) = self.fields.first() {
            for nb in &f.neighborhoods {
                let Some(m) = state.marker(nb.id) else { continue };
                let outside = (0..grid.len()).any(|i| {
                    let r = displacement(&grid, &grid.position(i), &nb.center);
                    m.field.data[i] > 1e-6 && (r[0] * r[0] + r[1] * r[1]).sqrt() > nb.radius
                });
                if outside {
                    return Err(DiagError::BodyLeftNeighborhood { id: nb.id, t: state.t });
                }
            }
        }
        let cell = grid.cell_volume();
        let u = &state.u;
        let rho = &state.rho.data;
        let w = ctx.spectral.mollify_vector(u, ctx.kernel);
        let du = ctx.spectral.sym_grad(u);
        let mu_bar = ctx.spectral.mollify(&state.mu, ctx.kernel);
        let g = &ctx.forcing.g;
        let (mut p, mut raw, mut sub, mut mag) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for f in &self.fields {
            let (mut sp, mut sr, mut ss, mut sm) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..grid.len() {
                let uk = [u.comps[0][k], u.comps[1][k]];
                let wk = [w.comps[0][k], w.comps[1][k]];
                let ph = [f.phi.comps[0][k], f.phi.comps[1][k]];
                let gr = &f.grad[k];
                let dphi = [[gr[0][0], 0.5 * (gr[0][1] + gr[1][0])], [0.5 * (gr[0][1] + gr[1][0]), gr[1][1]]];
                let (mut conv, mut conv_w, mut strain) = (0.0, 0.0, 0.0);
                for i in 0..2 {
                    for j in 0..2 {
                        conv += uk[i] * uk[j] * gr[i][j];
                        conv_w += uk[i] * wk[j] * gr[i][j];
                        strain += du.get(i, j)[k] * dphi[i][j];
                    }
                }
                let uphi = uk[0] * ph[0] + uk[1] * ph[1];
                let gphi = g.comps[0][k] * ph[0] + g.comps[1][k] * ph[1];
                let r = rho[k];
                sp += r * uphi;
                sr += r * conv - state.mu.data[k] * strain + r * gphi;
                ss += r * conv_w - mu_bar.data[k] * strain - ctx.chi_eps[k] * uphi + r * gphi;
                sm += (r * conv).abs() + (state.mu.data[k] * strain).abs() + (r * gphi).abs();
            }
            p.push(sp * cell);
            raw.push(sr * cell);
            sub.push(ss * cell);
            mag.push(sm * cell);
        }
        self.times.push(state.t);
        self.p.push(p);
        self.raw.push(raw);
        self.sub.push(sub);
        self.mag.push(mag);
        Ok(())
    }

    pub fn residuals(&self, basket: &[PsiBump]) -> Result<Vec<WeakResidual>, DiagError> {
        let dt = uniform_spacing(&self.times)?;
        let t0 = self.times[0];
        let mut out = Vec::new();
        for psi in basket {
            for k in 0..self.fields.len() {
                let p: Vec<f64> = self.p.iter().map(|r| r[k]).collect();
                let time_term = psi_prime_integral(psi, &self.times, &p) + psi.value(t0) * p[0];
                let weighted = |rows: &Vec<Vec<f64>>| trapezoid(dt, self.times.iter().zip(rows).map(|(&t, r)| psi.value(t) * r[k]));
                let scale = psi.value(t0) * p[0].abs()
                    + weighted(&self.mag)
                    + p.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
                out.push(WeakResidual {
                    psi: *psi,
                    phi: k,
                    raw: time_term + weighted(&self.raw),
                    substituted: time_term + weighted(&self.sub),
                    scale,
                });
            }
        }
        Ok(out)
    }
}
