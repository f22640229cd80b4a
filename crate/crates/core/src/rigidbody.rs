//! Rigid-body kinematics extracted from the penalized flow: weighted least-squares fits
//! of `Y + Q (x - h)` to the velocity, orientation integration, contact detection on
//! marker supports and merging of bodies after contact.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::field::{ScalarField, VectorField};
use crate::grid::TorusGrid;
use crate::rotation::{self, Mat3};
use crate::scenario::displacement;
use crate::solver::{FluidState, Marker};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigidError {
    #[error("no body with id {0}")]
    UnknownBody(u32),
    #[error("marker of body {0} has no mass")]
    VanishedMarker(u32),
    #[error("inertia of body {0} is singular (degenerate marker support)")]
    SingularInertia(u32),
    #[error("bodies {i} and {j} are not in contact (gap {gap:.4e} >= threshold {threshold:.4e})")]
    NotInContact { i: u32, j: u32, gap: f64, threshold: f64 },
}

/// Kinematics of one body. In 2D only `omega[2]` is used and `orientation` is a planar
/// rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidState {
    pub id: u32,
    pub dim: usize,
    pub t: f64,
    /// Centroid `h`.
    pub centroid: [f64; 3],
    /// Translational velocity `Y`.
    pub velocity: [f64; 3],
    /// Axial vector of `Q`.
    pub omega: [f64; 3],
    pub orientation: Mat3,
    pub mass: f64,
    /// `Σ w (|r|² I - r rᵀ)`; in 2D the polar moment sits in `[2][2]`.
    pub inertia: Mat3,
    /// Weighted residual `Σ w |u - Y - Q r|²` (rigidity deficit of the fit).
    pub residual: f64,
}

impl RigidState {
    /// Skew matrix `Q`.
    pub fn angular_matrix(&self) -> Mat3 {
        rotation::skew(&self.omega)
    }

    /// Planar orientation angle (2D).
    pub fn angle(&self) -> f64 {
        self.orientation[1][0].atan2(self.orientation[0][0])
    }

    /// `Y + ω × r`.
    pub fn velocity_at(&self, r: &[f64; 3]) -> [f64; 3] {
        let w = &self.omega;
        let cross = [w[1] * r[2] - w[2] * r[1], w[2] * r[0] - w[0] * r[2], w[0] * r[1] - w[1] * r[0]];
        let mut v = [0.0; 3];
        for a in 0..self.dim {
            v[a] = self.velocity[a] + cross[a];
        }
        v
    }
}

/// Rotational generators in use: `e_z` in 2D, all three axes in 3D.
fn rotation_axes(dim: usize) -> &'static [usize] {
    if dim == 2 {
        &[2]
    } else {
        &[0, 1, 2]
    }
}

/// `e_k × r`.
fn generator(k: usize, r: &[f64; 3]) -> [f64; 3] {
    match k {
        0 => [0.0, -r[2], r[1]],
        1 => [r[2], 0.0, -r[0]],
        _ => [-r[1], r[0], 0.0],
    }
}

/// Weighted least-squares fit of the rigid family to `u` with weights `marker · ρ`.
pub fn fit_rigid_field(
    id: u32,
    t: f64,
    marker: &ScalarField,
    rho: &ScalarField,
    u: &VectorField,
) -> Result<RigidState, RigidError> {
    let grid = *u.grid();
    let d = grid.dim();
    let cell = grid.cell_volume();
    let weight: Vec<f64> = marker.data.iter().zip(&rho.data).map(|(a, r)| a.max(0.0) * r * cell).collect();
    let mass: f64 = weight.iter().sum();
    if !(mass > 0.0) {
        return Err(RigidError::VanishedMarker(id));
    }
    let centroid = grid.periodic_centroid(&weight).ok_or(RigidError::VanishedMarker(id))?;
    let axes = rotation_axes(d);
    let p = d + axes.len();
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut inertia = [[0.0; 3]; 3];
    let mut basis = vec![[0.0; 3]; p];
    for (i, &w) in weight.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let r = displacement(&grid, &grid.position(i), &centroid);
        for (a, b) in basis.iter_mut().enumerate().take(d) {
            *b = [0.0; 3];
            b[a] = 1.0;
        }
        for (q, &k) in axes.iter().enumerate() {
            basis[d + q] = generator(k, &r);
        }
        let ui = u.at(i);
        for a in 0..p {
            let ba = &basis[a];
            rhs[a] += w * (0..d).map(|c| ba[c] * ui[c]).sum::<f64>();
            for b in a..p {
                let v = w * (0..d).map(|c| ba[c] * basis[b][c]).sum::<f64>();
                normal[(a, b)] += v;
            }
        }
        let r2: f64 = r.iter().map(|x| x * x).sum();
        for a in 0..3 {
            for b in 0..3 {
                inertia[a][b] += w * (if a == b { r2 } else { 0.0 } - r[a] * r[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            normal[(a, b)] = normal[(b, a)];
        }
    }
    let chol = normal.cholesky().ok_or(RigidError::SingularInertia(id))?;
    // reject numerically rank-deficient rotational blocks
    let diag_min = (0..p).map(|a| chol.l()[(a, a)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..p).map(|a| chol.l()[(a, a)]).fold(0.0, f64::max);
    if !(diag_min > 1e-7 * diag_max) {
        return Err(RigidError::SingularInertia(id));
    }
    let coef = chol.solve(&rhs);
    let mut velocity = [0.0; 3];
    let mut omega = [0.0; 3];
    for a in 0..d {
        velocity[a] = coef[a];
    }
    for (q, &k) in axes.iter().enumerate() {
        omega[k] = coef[d + q];
    }
    if d == 2 {
        // only the polar moment is meaningful in the plane
        inertia = [[inertia[0][0], inertia[0][1], 0.0], [inertia[1][0], inertia[1][1], 0.0], [0.0, 0.0, inertia[2][2]]];
    }
    let mut state = RigidState {
        id,
        dim: d,
        t,
        centroid,
        velocity,
        omega,
        orientation: rotation::IDENTITY,
        mass,
        inertia,
        residual: 0.0,
    };
    let mut residual = 0.0;
    for (i, &w) in weight.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let r = displacement(&grid, &grid.position(i), &centroid);
        let v = state.velocity_at(&r);
        let ui = u.at(i);
        residual += w * (0..d).map(|a| (ui[a] - v[a]).powi(2)).sum::<f64>();
    }
    state.residual = residual;
    Ok(state)
}

/// Rigid fit of the body (or merged group) `id` in `state`.
pub fn fit_rigid_motion(state: &FluidState, id: u32) -> Result<RigidState, RigidError> {
    let marker = state.marker(id).ok_or(RigidError::UnknownBody(id))?;
    fit_rigid_field(id, state.t, &marker.field, &state.rho, &state.u)
}

/// `Y + Q (x - h)` with minimal-image displacement from `h`.
pub fn rigid_velocity_field(r: &RigidState, grid: &TorusGrid) -> VectorField {
    VectorField::from_fn(grid, |x| r.velocity_at(&displacement(grid, x, &r.centroid)))
}

/// Orientation trajectory `O_{k+1} = exp(dt Q_k) O_k` starting from the first sample's
/// orientation. In 2D the angle is accumulated directly, so constant `ω` gives
/// `angle(0) + ω t` exactly; in 3D each step is re-orthonormalized.
pub fn integrate_orientation(series: &[RigidState], dt: f64) -> Vec<Mat3> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(series.len());
    out.push(first.orientation);
    if first.dim == 2 {
        let a0 = first.angle();
        let mut turned = 0.0;
        for s in &series[..series.len() - 1] {
            turned += dt * s.omega[2];
            out.push(rotation::planar(a0 + turned));
        }
    } else {
        let mut o = first.orientation;
        for s in &series[..series.len() - 1] {
            let step = rotation::rodrigues(&[dt * s.omega[0], dt * s.omega[1], dt * s.omega[2]]);
            o = rotation::reorthonormalize(&rotation::mul(&step, &o));
            out.push(o);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPair {
    Bodies(u32, u32),
    Wall(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactEvent {
    pub t: f64,
    pub pair: ContactPair,
    /// Distance between the sampled supports minus one grid spacing; `<= 0` when the
    /// supports share or neighbour a node.
    pub gap: f64,
}

/// Nodes of `{f >= level}` with at least one axis neighbour outside the set.
fn support_boundary(grid: &TorusGrid, f: &[f64], level: f64) -> Vec<usize> {
    let d = grid.dim();
    (0..grid.len())
        .filter(|&i| {
            if f[i] < level {
                return false;
            }
            let m = grid.multi(i);
            (0..d).any(|a| {
                [-1isize, 1].iter().any(|s| {
                    let mut nb = m;
                    nb[a] = grid.wrap(m[a] as isize + s);
                    f[grid.flat(nb)] < level
                })
            })
        })
        .collect()
}

fn set_gap(grid: &TorusGrid, a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        let xi = grid.position(i);
        for &j in b {
            let dv = displacement(grid, &xi, &grid.position(j));
            best = best.min(dv.iter().map(|x| x * x).sum::<f64>());
        }
    }
    best.sqrt() - grid.spacing()
}

/// Gap between the marker supports (`a >= 1/2`) of two bodies.
pub fn support_gap(grid: &TorusGrid, a: &ScalarField, b: &ScalarField) -> f64 {
    let ba = support_boundary(grid, &a.data, 0.5);
    let bb = support_boundary(grid, &b.data, 0.5);
    if a.data.iter().zip(&b.data).any(|(x, y)| *x >= 0.5 && *y >= 0.5) {
        return -grid.spacing();
    }
    set_gap(grid, &ba, &bb)
}

/// Contacts between marker supports and with the penalized set `{χ > 0}`. Thresholds
/// below `2h` are raised to `2h`.
pub fn detect_contacts(state: &FluidState, chi: Option<&ScalarField>, threshold: f64) -> Vec<ContactEvent> {
    let grid = *state.grid();
    let floor = 2.0 * grid.spacing();
    let threshold = if threshold < floor {
        log::warn!("contact threshold {threshold:.3e} below 2h, using {floor:.3e}");
        floor
    } else {
        threshold
    };
    let mut events = Vec::new();
    let ms = &state.markers;
    for i in 0..ms.len() {
        for j in i + 1..ms.len() {
            let gap = support_gap(&grid, &ms[i].field, &ms[j].field);
            if gap < threshold {
                events.push(ContactEvent { t: state.t, pair: ContactPair::Bodies(ms[i].id, ms[j].id), gap });
            }
        }
    }
    if let Some(chi) = chi {
        let positive: Vec<f64> = chi.data.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect();
        let wall = support_boundary(&grid, &positive, 0.5);
        if !wall.is_empty() {
            for m in ms {
                let own = support_boundary(&grid, &m.field.data, 0.5);
                let overlap = m.field.data.iter().zip(&positive).any(|(a, p)| *a >= 0.5 && *p > 0.0);
                let gap = if overlap { -grid.spacing() } else { set_gap(&grid, &own, &wall) };
                if gap < threshold {
                    events.push(ContactEvent { t: state.t, pair: ContactPair::Wall(m.id), gap });
                }
            }
        }
    }
    events
}

/// Replace the markers of `i` and `j` by their pointwise maximum under a fresh id, which
/// is returned. Refused unless the supports are within `threshold`.
pub fn merge_bodies(state: &mut FluidState, i: u32, j: u32, threshold: f64) -> Result<u32, RigidError> {
    let grid = *state.grid();
    let a = state.marker(i).ok_or(RigidError::UnknownBody(i))?;
    let b = state.marker(j).ok_or(RigidError::UnknownBody(j))?;
    if i == j {
        return Err(RigidError::NotInContact { i, j, gap: f64::INFINITY, threshold });
    }
    let gap = support_gap(&grid, &a.field, &b.field);
    if !(gap < threshold) {
        return Err(RigidError::NotInContact { i, j, gap, threshold });
    }
    let field = a.field.zip_map(&b.field, f64::max);
    let mut members: Vec<u32> = a.members.iter().chain(&b.members).copied().collect();
    members.sort_unstable();
    let id = state.markers.iter().flat_map(|m| m.members.iter().copied().chain([m.id])).max().unwrap_or(0) + 1;
    log::info!("t = {:.6}: merged bodies {i} and {j} into {id} (gap {gap:.3e})", state.t);
    state.markers.retain(|m| m.id != i && m.id != j);
    state.markers.push(Marker { id, members, field });
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Spectral;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn disk_marker(grid: &TorusGrid, c: [f64; 2], r: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| {
            let d = displacement(grid, x, &[c[0], c[1], 0.0]);
            let s = (d[0] * d[0] + d[1] * d[1]).sqrt();
            (((r - s) / 0.05).clamp(0.0, 1.0)).powi(2)
        })
    }

    fn state_with(grid: &TorusGrid, markers: Vec<(u32, ScalarField)>, u: VectorField) -> FluidState {
        FluidState {
            t: 0.5,
            step: 0,
            rho: ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (x[0] + x[1]).cos().powi(2)),
            u,
            mu: ScalarField::constant(grid, 1.0),
            pressure: ScalarField::zeros(grid),
            markers: markers.into_iter().map(|(id, field)| Marker { id, members: vec![id], field }).collect(),
        }
    }

    fn rigid(grid: &TorusGrid, c: [f64; 3], y: [f64; 2], w: f64) -> VectorField {
        VectorField::from_fn(grid, |x| {
            let r = displacement(grid, x, &c);
            [y[0] - w * r[1], y[1] + w * r[0], 0.0]
        })
    }

    #[test]
    fn exact_rigid_field_is_recovered() {
        let g = TorusGrid::new(2, 1.0, 48).unwrap();
        let m = disk_marker(&g, [0.2, -0.1], 0.3);
        let st = state_with(&g, vec![(1, m)], VectorField::zeros(&g));
        let c = g.periodic_centroid(&st.marker(1).unwrap().field.data.iter().zip(&st.rho.data).map(|(a, r)| a * r).collect::<Vec<_>>()).unwrap();
        let st = FluidState { u: rigid(&g, c, [1.0, 2.0], 3.0), ..st };
        let fit = fit_rigid_motion(&st, 1).unwrap();
        assert_abs_diff_eq!(fit.velocity[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.velocity[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.omega[2], 3.0, epsilon = 1e-10);
        assert!(fit.residual < 1e-20);
        assert!(fit.inertia[2][2] > 0.0);
    }

    #[test]
    fn pure_translation_has_no_spin() {
        let g = TorusGrid::new(2, 1.0, 32).unwrap();
        let st = state_with(&g, vec![(4, disk_marker(&g, [0.0, 0.0], 0.35))], VectorField::constant(&g, [-0.7, 0.2, 0.0]));
        let fit = fit_rigid_motion(&st, 4).unwrap();
        assert_abs_diff_eq!(fit.omega[2], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.velocity[0], -0.7, epsilon = 1e-12);
    }

    #[test]
    fn body_straddling_the_seam_is_fitted() {
        let g = TorusGrid::new(2, 1.0, 48).unwrap();
        let m = disk_marker(&g, [0.95, -0.98], 0.3);
        let st = state_with(&g, vec![(1, m)], VectorField::zeros(&g));
        let w: Vec<f64> = st.markers[0].field.data.iter().zip(&st.rho.data).map(|(a, r)| a * r).collect();
        let c = g.periodic_centroid(&w).unwrap();
        assert!((g.min_image(c[0] - 0.95)).abs() < 1e-2 && (g.min_image(c[1] + 0.98)).abs() < 1e-2);
        let st = FluidState { u: rigid(&g, c, [0.3, -0.4], -1.5), ..st };
        let fit = fit_rigid_motion(&st, 1).unwrap();
        assert_abs_diff_eq!(fit.omega[2], -1.5, epsilon = 1e-10);
    }

    #[test]
    fn orthogonal_perturbation_leaves_the_fit_unchanged() {
        // oracle: explicit Gram–Schmidt against the weighted rigid family
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let m = disk_marker(&g, [0.1, 0.0], 0.5);
        let st = state_with(&g, vec![(1, m)], VectorField::zeros(&g));
        let w: Vec<f64> = st.markers[0].field.data.iter().zip(&st.rho.data).map(|(a, r)| a * r * g.cell_volume()).collect();
        let c = g.periodic_centroid(&w).unwrap();
        let family: Vec<Vec<[f64; 2]>> = vec![
            (0..g.len()).map(|_| [1.0, 0.0]).collect(),
            (0..g.len()).map(|_| [0.0, 1.0]).collect(),
            (0..g.len())
                .map(|i| {
                    let r = displacement(&g, &g.position(i), &c);
                    [-r[1], r[0]]
                })
                .collect(),
        ];
        let inner = |a: &[[f64; 2]], b: &[[f64; 2]]| -> f64 {
            (0..g.len()).map(|i| w[i] * (a[i][0] * b[i][0] + a[i][1] * b[i][1])).sum()
        };
        let mut ortho: Vec<Vec<[f64; 2]>> = Vec::new();
        for f in &family {
            let mut v = f.clone();
            for q in &ortho {
                let s = inner(&v, q) / inner(q, q);
                for i in 0..g.len() {
                    v[i][0] -= s * q[i][0];
                    v[i][1] -= s * q[i][1];
                }
            }
            ortho.push(v);
        }
        let mut p: Vec<[f64; 2]> = (0..g.len()).map(|i| [(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        for q in &ortho {
            let s = inner(&p, q) / inner(q, q);
            for i in 0..g.len() {
                p[i][0] -= s * q[i][0];
                p[i][1] -= s * q[i][1];
            }
        }
        let base = rigid(&g, c, [0.5, -0.25], 0.8);
        let mut pert = base.clone();
        for i in 0..g.len() {
            pert.comps[0][i] += p[i][0];
            pert.comps[1][i] += p[i][1];
        }
        let f0 = fit_rigid_motion(&FluidState { u: base, ..st.clone() }, 1).unwrap();
        let f1 = fit_rigid_motion(&FluidState { u: pert, ..st }, 1).unwrap();
        for a in 0..2 {
            assert_abs_diff_eq!(f0.velocity[a], f1.velocity[a], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(f0.omega[2], f1.omega[2], epsilon = 1e-10);
        assert_abs_diff_eq!(f1.residual, inner(&p, &p), epsilon = 1e-10);
    }

    #[test]
    fn vanished_and_unknown_markers_are_errors() {
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let st = state_with(&g, vec![(1, ScalarField::zeros(&g))], VectorField::zeros(&g));
        assert_eq!(fit_rigid_motion(&st, 1), Err(RigidError::VanishedMarker(1)));
        assert_eq!(fit_rigid_motion(&st, 9), Err(RigidError::UnknownBody(9)));
    }

    #[test]
    fn single_node_marker_has_singular_inertia() {
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let mut m = ScalarField::zeros(&g);
        m.data[40] = 1.0;
        let st = state_with(&g, vec![(2, m)], VectorField::zeros(&g));
        assert_eq!(fit_rigid_motion(&st, 2), Err(RigidError::SingularInertia(2)));
    }

    #[test]
    fn three_dimensional_fit_recovers_spin_vector() {
        let g = TorusGrid::new(3, 1.0, 16).unwrap();
        let marker = ScalarField::from_fn(&g, |x| {
            let s = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            ((0.6 - s) / 0.1).clamp(0.0, 1.0)
        });
        let rho = ScalarField::constant(&g, 2.0);
        let w = [0.3, -1.1, 0.7];
        let y = [0.1, 0.2, -0.3];
        let u = VectorField::from_fn(&g, |x| {
            [y[0] + w[1] * x[2] - w[2] * x[1], y[1] + w[2] * x[0] - w[0] * x[2], y[2] + w[0] * x[1] - w[1] * x[0]]
        });
        let fit = fit_rigid_field(3, 0.0, &marker, &rho, &u).unwrap();
        for a in 0..3 {
            assert_abs_diff_eq!(fit.omega[a], w[a], epsilon = 1e-10);
            assert_abs_diff_eq!(fit.velocity[a], y[a], epsilon = 1e-10);
        }
        let q = fit.angular_matrix();
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(q[a][b], -q[b][a], epsilon = 1e-12);
            }
        }
        let inertia = nalgebra::Matrix3::from_fn(|a, b| fit.inertia[a][b]);
        assert!(inertia.symmetric_eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn synthesized_field_round_trips_and_translation_has_zero_strain() {
        let g = TorusGrid::new(2, 1.0, 32).unwrap();
        let marker = disk_marker(&g, [-0.2, 0.3], 0.3);
        let rho = ScalarField::constant(&g, 1.0);
        let probe = fit_rigid_field(1, 0.0, &marker, &rho, &VectorField::zeros(&g)).unwrap();
        let r = RigidState { velocity: [0.4, -0.1, 0.0], omega: [0.0, 0.0, 2.5], ..probe };
        let field = rigid_velocity_field(&r, &g);
        let back = fit_rigid_field(1, 0.0, &marker, &rho, &field).unwrap();
        assert_abs_diff_eq!(back.velocity[0], 0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(back.velocity[1], -0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(back.omega[2], 2.5, epsilon = 1e-10);
        // spectral strain vanishes for the periodic member of the family
        let still = RigidState { omega: [0.0; 3], ..r.clone() };
        let sp = Spectral::new(&g);
        let strain = sp.sym_grad(&rigid_velocity_field(&still, &g));
        assert!(strain.max_abs() < 1e-12);
        // the rotational member is linear away from the seam: central differences vanish
        let h = g.spacing();
        for i in (0..g.len()).step_by(7) {
            let m = g.multi(i);
            let near = |a: usize| {
                let x = g.coord(m[a]);
                (g.min_image(x - r.centroid[a])).abs() < 0.8
            };
            if !(near(0) && near(1)) {
                continue;
            }
            let at = |di: isize, dj: isize| field.at(g.flat([g.wrap(m[0] as isize + di), g.wrap(m[1] as isize + dj), 0]));
            let du0_dx = (at(1, 0)[0] - at(-1, 0)[0]) / (2.0 * h);
            let du1_dy = (at(0, 1)[1] - at(0, -1)[1]) / (2.0 * h);
            let shear = 0.5 * ((at(0, 1)[0] - at(0, -1)[0]) + (at(1, 0)[1] - at(-1, 0)[1])) / (2.0 * h);
            assert!(du0_dx.abs() < 1e-12 && du1_dy.abs() < 1e-12 && shear.abs() < 1e-12);
        }
        let zero = RigidState { velocity: [0.0; 3], omega: [0.0; 3], ..r };
        assert_eq!(rigid_velocity_field(&zero, &g).max_abs(), 0.0);
    }

    fn series(dim: usize, omega: [f64; 3], n: usize) -> Vec<RigidState> {
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let base = fit_rigid_field(1, 0.0, &disk_marker(&g, [0.0, 0.0], 0.5), &ScalarField::constant(&g, 1.0), &VectorField::zeros(&g)).unwrap();
        let orientation = if dim == 2 { rotation::planar(0.3) } else { rotation::IDENTITY };
        (0..n).map(|_| RigidState { dim, omega, orientation, ..base.clone() }).collect()
    }

    #[test]
    fn planar_orientation_is_exact() {
        let dt = 1e-3;
        let s = series(2, [0.0, 0.0, 1.7], 10_001);
        let o = integrate_orientation(&s, dt);
        let last = o.last().unwrap();
        let angle = last[1][0].atan2(last[0][0]);
        let expected = 0.3 + 1.7 * 10.0;
        let wrapped = (expected + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        assert_abs_diff_eq!(angle, wrapped, epsilon = 1e-10);
        let still = integrate_orientation(&series(2, [0.0; 3], 50), dt);
        assert!(still.iter().all(|m| *m == still[0]));
    }

    #[test]
    fn spatial_orientation_matches_rodrigues_and_stays_orthogonal() {
        let dt = 1e-3;
        let w = [0.4, -0.9, 1.3];
        let n = 10_001;
        let o = integrate_orientation(&series(3, w, n), dt);
        let t = dt * (n - 1) as f64;
        let closed = rotation::rodrigues(&[w[0] * t, w[1] * t, w[2] * t]);
        let last = o.last().unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(last[a][b], closed[a][b], epsilon = 1e-8);
            }
        }
        assert!(o.iter().all(|m| rotation::orthogonality_defect(m) < 1e-8 && (rotation::determinant(m) - 1.0).abs() < 1e-8));
    }

    #[test]
    fn contacts_between_bodies() {
        let g = TorusGrid::new(2, 1.0, 64).unwrap();
        let h = g.spacing();
        let threshold = 3.0 * h;
        let far = state_with(
            &g,
            vec![(1, disk_marker(&g, [-0.5, 0.0], 0.2)), (2, disk_marker(&g, [0.5, 0.0], 0.2))],
            VectorField::zeros(&g),
        );
        // supports about 0.6 apart, i.e. more than 10 thresholds
        assert!(detect_contacts(&far, None, threshold).is_empty());
        let overlapping = state_with(
            &g,
            vec![(1, disk_marker(&g, [-0.1, 0.0], 0.2)), (2, disk_marker(&g, [0.1, 0.0], 0.2))],
            VectorField::zeros(&g),
        );
        let ev = detect_contacts(&overlapping, None, threshold);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].pair, ContactPair::Bodies(1, 2));
        assert!(ev[0].gap <= 0.0);
        assert_eq!(ev[0].t, 0.5);
    }

    #[test]
    fn wall_contact_fires_at_first_close_sample() {
        let g = TorusGrid::new(2, 1.0, 64).unwrap();
        let h = g.spacing();
        let threshold = 3.0 * h;
        let chi = ScalarField::from_fn(&g, |x| if x[0].abs() > 0.75 { 1.0 } else { 0.0 });
        // oracle: brute-force distance between sampled supports
        let oracle = |m: &ScalarField| -> f64 {
            let mut best = f64::INFINITY;
            for i in 0..g.len() {
                if m.data[i] < 0.5 {
                    continue;
                }
                for j in 0..g.len() {
                    if chi.data[j] > 0.0 {
                        let dv = displacement(&g, &g.position(i), &g.position(j));
                        best = best.min((dv[0] * dv[0] + dv[1] * dv[1]).sqrt());
                    }
                }
            }
            best - h
        };
        let mut fired = None;
        for k in 0..40 {
            let cx = 0.2 + 0.01 * k as f64;
            let m = disk_marker(&g, [cx, 0.0], 0.2);
            let expected = oracle(&m);
            let st = state_with(&g, vec![(1, m)], VectorField::zeros(&g));
            let ev = detect_contacts(&st, Some(&chi), threshold);
            if let Some(e) = ev.first() {
                assert_eq!(e.pair, ContactPair::Wall(1));
                assert_abs_diff_eq!(e.gap, expected, epsilon = 1e-12);
                fired.get_or_insert(k);
            } else {
                assert!(expected >= threshold);
                assert!(fired.is_none(), "contact disappeared after firing");
            }
        }
        assert!(fired.is_some());
    }

    #[test]
    fn merging_touching_bodies_adds_masses() {
        let g = TorusGrid::new(2, 1.0, 64).unwrap();
        let a = disk_marker(&g, [-0.2, 0.0], 0.2);
        let b = disk_marker(&g, [0.2, 0.0], 0.2);
        let (ma, mb) = (a.integral(), b.integral());
        let u = rigid(&g, [0.0; 3], [0.3, 0.1], 0.9);
        let mut st = state_with(&g, vec![(1, a), (2, b), (3, disk_marker(&g, [0.0, 0.7], 0.1))], u);
        // the half-level supports of touching disks sit one ramp depth apart
        let id = merge_bodies(&mut st, 1, 2, 4.0 * g.spacing()).unwrap();
        assert_eq!(id, 4);
        assert!(st.marker(1).is_none() && st.marker(2).is_none());
        let merged = st.marker(id).unwrap();
        assert_eq!(merged.members, vec![1, 2]);
        assert_abs_diff_eq!(merged.field.integral(), ma + mb, epsilon = 1e-8);
        let fit = fit_rigid_motion(&st, id).unwrap();
        let w: Vec<f64> = merged.field.data.iter().zip(&st.rho.data).map(|(a, r)| a * r).collect();
        let c = g.periodic_centroid(&w).unwrap();
        // the common rigid field about the origin, expressed about the merged centroid
        assert_abs_diff_eq!(fit.omega[2], 0.9, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.velocity[0], 0.3 - 0.9 * c[1], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.velocity[1], 0.1 + 0.9 * c[0], epsilon = 1e-10);
        let err = merge_bodies(&mut st, id, 3, 4.0 * g.spacing()).unwrap_err();
        assert!(matches!(err, RigidError::NotInContact { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn contacts_are_monotone_in_threshold(cx in -0.6f64..0.6, cy in -0.6f64..0.6, r in 0.08f64..0.25, t1 in 2.0f64..6.0, extra in 0.0f64..6.0) {
            let g = TorusGrid::new(2, 1.0, 32).unwrap();
            let h = g.spacing();
            let chi = ScalarField::from_fn(&g, |x| if x[1].abs() > 0.8 { 1.0 } else { 0.0 });
            let st = state_with(
                &g,
                vec![(1, disk_marker(&g, [cx, cy], r)), (2, disk_marker(&g, [-cx, 0.5 * cy], 0.2))],
                VectorField::zeros(&g),
            );
            let small = detect_contacts(&st, Some(&chi), t1 * h);
            let large = detect_contacts(&st, Some(&chi), (t1 + extra) * h);
            for e in &small {
                prop_assert!(large.iter().any(|f| f.pair == e.pair));
            }
        }

        #[test]
        fn residual_is_nonnegative(seed in 0u64..500) {
            let g = TorusGrid::new(2, 1.0, 16).unwrap();
            let s = seed as f64;
            let u = VectorField::from_fn(&g, |x| [(3.0 * x[0] + s).sin(), (2.0 * x[1] - s).cos(), 0.0]);
            let st = state_with(&g, vec![(1, disk_marker(&g, [0.0, 0.1], 0.5))], u);
            let fit = fit_rigid_motion(&st, 1).unwrap();
            prop_assert!(fit.residual >= 0.0);
        }
    }
}
