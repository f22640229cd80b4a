//! Scenario construction: bodies, the penalty profile χ, and layered initial data.
//!
//! Initial velocities come from a stream function (2D) or vector potential (3D)
//! assembled from analytic jets: rigid potentials on balls around each body, the
//! fluid potential elsewhere, all multiplied by a cutoff that vanishes outside Ω.
//! The resulting field is divergence-free, rigid on every body and zero outside Ω
//! before the final discrete projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ChiProfile, Config, ConfigError, FluidVelocity, ForcingConfig};
use crate::field::{ScalarField, VectorField};
use crate::grid::TorusGrid;
use crate::jet::{interval_cutoff, radial_cutoff, smooth_step_value, Jet};
use crate::mollifier::MollifierKernel;
use crate::shapes::{PlacedShape, Pose, Shape};
use crate::spectral::Spectral;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("domain (with penalty ramp width {width}) must lie strictly inside the periodic box (-{half_period}, {half_period})")]
    DomainTouchesBoundary { width: f64, half_period: f64 },
    #[error("bodies {0} and {1} overlap")]
    BodiesOverlap(u32, u32),
    #[error("body {0} is not strictly inside the domain")]
    BodyOutsideDomain(u32),
    #[error("body {id} has no grid node at depth >= delta = {delta}; refine the grid or reduce delta")]
    BodyTooThin { id: u32, delta: f64 },
    #[error("{0}")]
    Unsupported(String),
}

/// A body: placed shape, solid density and initial rigid velocity `Y + ω × (x - h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySpec {
    pub id: u32,
    pub placed: PlacedShape,
    pub density: f64,
    pub velocity: [f64; 3],
    /// Angular velocity vector; in 2D only the third entry is used.
    pub angular_velocity: [f64; 3],
}

impl BodySpec {
    pub fn center(&self) -> [f64; 3] {
        self.placed.pose.center
    }

    pub fn volume(&self) -> f64 {
        self.placed.shape.volume(self.placed.dim)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.placed.shape.bounding_radius(self.placed.dim)
    }

    /// Signed distance at a node, measured through the minimal periodic image.
    pub fn signed_distance(&self, grid: &TorusGrid, x: &[f64; 3]) -> f64 {
        self.placed.signed_distance_disp(&displacement(grid, x, &self.center()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub placed: PlacedShape,
}

#[derive(Debug, Clone)]
pub struct PenaltyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub chi: ScalarField,
    pub kernel: MollifierKernel,
}

impl PenaltyParams {
    /// `χ / ε`.
    pub fn chi_eps(&self) -> ScalarField {
        self.chi.map(|c| c / self.epsilon)
    }
}

/// External force: a constant field or the gradient of a potential.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub g: VectorField,
    pub potential: Option<ScalarField>,
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        self.g.max_abs() == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: TorusGrid,
    pub bodies: Vec<BodySpec>,
    pub domain: Option<DomainSpec>,
    pub penalty: PenaltyParams,
    pub forcing: Forcing,
    pub rho0: ScalarField,
    pub mu0: ScalarField,
    pub u0: VectorField,
    pub markers: Vec<ScalarField>,
    pub warnings: Vec<String>,
}

/// Minimal-image displacement `x - c`.
pub fn displacement(grid: &TorusGrid, x: &[f64; 3], c: &[f64; 3]) -> [f64; 3] {
    let mut d = [0.0; 3];
    for a in 0..grid.dim() {
        d[a] = grid.min_image(x[a] - c[a]);
    }
    d
}

pub fn bodies_from_config(cfg: &Config) -> Vec<BodySpec> {
    let d = cfg.grid.dim;
    cfg.bodies
        .iter()
        .map(|b| {
            let mut velocity = [0.0; 3];
            if let Some(v) = &b.velocity {
                velocity[..d].copy_from_slice(&v[..d]);
            }
            let angular_velocity = if d == 2 { [0.0, 0.0, b.spin] } else { b.angular_velocity.unwrap_or([0.0; 3]) };
            BodySpec {
                id: b.id,
                placed: PlacedShape {
                    dim: d,
                    shape: b.shape.clone(),
                    pose: Pose::new(d, &b.center, b.angle, b.rotation),
                },
                density: b.density,
                velocity,
                angular_velocity,
            }
        })
        .collect()
}

pub fn domain_from_config(cfg: &Config) -> Option<DomainSpec> {
    let d = cfg.grid.dim;
    cfg.domain.as_ref().map(|dom| {
        let center = dom.center.clone().unwrap_or_else(|| vec![0.0; d]);
        DomainSpec {
            placed: PlacedShape { dim: d, shape: dom.shape.clone(), pose: Pose::new(d, &center, dom.angle, dom.rotation) },
        }
    })
}

/// Penalty profile: zero on Ω̄, `profile(dist / width)` outside, saturating at 1.
pub fn build_chi(
    domain: Option<&DomainSpec>,
    grid: &TorusGrid,
    width: f64,
    profile: ChiProfile,
) -> Result<ScalarField, ScenarioError> {
    let Some(domain) = domain else {
        return Ok(ScalarField::zeros(grid));
    };
    let l = grid.half_period();
    let (lo, hi) = domain.placed.bounding_box();
    for a in 0..grid.dim() {
        if lo[a] - width <= -l || hi[a] + width >= l {
            return Err(ScenarioError::DomainTouchesBoundary { width, half_period: l });
        }
    }
    Ok(ScalarField::from_fn(grid, |x| {
        let dist = domain.placed.signed_distance(x);
        if dist <= 0.0 {
            return 0.0;
        }
        let s = smooth_step_value(dist / width);
        match profile {
            ChiProfile::SmoothStepSquared => s * s,
            ChiProfile::SmoothStep => s,
        }
    }))
}

/// Smoothed indicator of one body: 0 outside, 1 at depth `>= delta`.
pub fn build_marker(body: &BodySpec, delta: f64, grid: &TorusGrid) -> ScalarField {
    ScalarField::from_fn(grid, |x| smooth_step_value(-body.signed_distance(grid, x) / delta))
}

fn check_bodies(bodies: &[BodySpec], delta: f64, grid: &TorusGrid) -> Result<Vec<ScalarField>, ScenarioError> {
    let sd: Vec<Vec<f64>> = bodies
        .iter()
        .map(|b| (0..grid.len()).map(|i| b.signed_distance(grid, &grid.position(i))).collect())
        .collect();
    for (i, bi) in bodies.iter().enumerate() {
        if !sd[i].iter().any(|&s| -s >= delta) {
            return Err(ScenarioError::BodyTooThin { id: bi.id, delta });
        }
        for j in i + 1..bodies.len() {
            if sd[i].iter().zip(&sd[j]).any(|(a, b)| *a <= 0.0 && *b <= 0.0) {
                return Err(ScenarioError::BodiesOverlap(bi.id, bodies[j].id));
            }
        }
    }
    Ok(bodies.iter().map(|b| build_marker(b, delta, grid)).collect())
}

fn layered(bodies: &[BodySpec], markers: &[ScalarField], grid: &TorusGrid, level: impl Fn(&BodySpec) -> f64) -> ScalarField {
    let mut f = ScalarField::constant(grid, 1.0);
    for (b, m) in bodies.iter().zip(markers) {
        let top = level(b);
        for (v, a) in f.data.iter_mut().zip(&m.data) {
            if *a > 0.0 {
                *v = 1.0 + (top - 1.0) * a;
            }
        }
    }
    f
}

/// `ρ₀`: 1 in the fluid, `ρ_S` at depth `>= delta` inside each body, monotone blend between.
pub fn build_initial_density(bodies: &[BodySpec], delta: f64, grid: &TorusGrid) -> Result<ScalarField, ScenarioError> {
    let markers = check_bodies(bodies, delta, grid)?;
    Ok(layered(bodies, &markers, grid, |b| b.density))
}

/// `μ₀`: 1 in the fluid, `1/ε` at depth `>= delta` inside each body.
pub fn build_initial_viscosity(
    bodies: &[BodySpec],
    delta: f64,
    epsilon: f64,
    grid: &TorusGrid,
) -> Result<ScalarField, ScenarioError> {
    let markers = check_bodies(bodies, delta, grid)?;
    Ok(layered(bodies, &markers, grid, |_| 1.0 / epsilon))
}

/// Fluid part of the stream function / vector potential.
#[derive(Debug, Clone)]
enum FluidPotential {
    Zero,
    TaylorGreen { amplitude: f64, k: f64 },
    Modes { modes: Vec<([f64; 3], f64, f64, usize)>, scale: f64 },
}

impl FluidPotential {
    fn new(datum: &FluidVelocity, grid: &TorusGrid, seed: u64) -> Self {
        let l = grid.half_period();
        match datum {
            FluidVelocity::Quiescent => FluidPotential::Zero,
            FluidVelocity::TaylorGreen { amplitude, mode } => {
                if *amplitude == 0.0 {
                    FluidPotential::Zero
                } else {
                    FluidPotential::TaylorGreen { amplitude: *amplitude, k: *mode as f64 * std::f64::consts::PI / l }
                }
            }
            FluidVelocity::RandomModes { amplitude, max_mode } => {
                if *amplitude == 0.0 {
                    return FluidPotential::Zero;
                }
                let d = grid.dim();
                let m = *max_mode as i64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let comps = if d == 2 { 1 } else { 3 };
                let mut modes = Vec::new();
                let range = -m..=m;
                for i in range.clone() {
                    for j in range.clone() {
                        let kz: Vec<i64> = if d == 3 { range.clone().collect() } else { vec![0] };
                        for &k in &kz {
                            let idx = [i, j, k];
                            // one representative of each ±m pair
                            let first = idx.iter().find(|&&v| v != 0);
                            if first.map_or(true, |&v| v < 0) {
                                continue;
                            }
                            let kv = idx.map(|v| v as f64 * std::f64::consts::PI / l);
                            let k2: f64 = kv.iter().map(|v| v * v).sum();
                            for c in 0..comps {
                                let amp: f64 = (rng.random::<f64>() - 0.5) / k2;
                                let phase: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                                modes.push((kv, amp, phase, if d == 2 { 2 } else { c }));
                            }
                        }
                    }
                }
                let unscaled = FluidPotential::Modes { modes: modes.clone(), scale: 1.0 };
                let peak = (0..grid.len())
                    .map(|i| {
                        let pot = unscaled.eval(&grid.position(i), d);
                        let u = curl(&pot, d);
                        (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
                    })
                    .fold(0.0, f64::max);
                FluidPotential::Modes { modes, scale: if peak > 0.0 { amplitude / peak } else { 0.0 } }
            }
        }
    }

    /// Potential jets; in 2D the stream function is stored in slot 2.
    fn eval(&self, x: &[f64; 3], dim: usize) -> [Jet; 3] {
        let mut out = [Jet::default(); 3];
        match self {
            FluidPotential::Zero => {}
            FluidPotential::TaylorGreen { amplitude, k } => {
                let sx = Jet::coordinate(x, 0, 0.0).scale(*k).sin();
                let sy = Jet::coordinate(x, 1, 0.0).scale(*k).sin();
                let mut psi = (sx * sy).scale(amplitude / k);
                if dim == 3 {
                    psi = psi * Jet::coordinate(x, 2, 0.0).scale(*k).cos();
                }
                out[2] = psi;
            }
            FluidPotential::Modes { modes, scale } => {
                for (kv, amp, phase, slot) in modes {
                    let mut arg = Jet::constant(*phase);
                    for a in 0..dim {
                        arg = arg + Jet::coordinate(x, a, 0.0).scale(kv[a]);
                    }
                    out[*slot] = out[*slot] + arg.cos().scale(amp * scale);
                }
            }
        }
        out
    }
}

/// Velocity from potential jets: `∇⊥ψ` in 2D (ψ in slot 2), `curl A` in 3D.
fn curl(pot: &[Jet; 3], dim: usize) -> [f64; 3] {
    if dim == 2 {
        [pot[2].g[1], -pot[2].g[0], 0.0]
    } else {
        [
            pot[2].g[1] - pot[1].g[2],
            pot[0].g[2] - pot[2].g[0],
            pot[1].g[0] - pot[0].g[1],
        ]
    }
}

/// Rigid potential of `Y + ω × r` about the body center.
fn rigid_potential(r: &[f64; 3], y: &[f64; 3], w: &[f64; 3], dim: usize) -> [Jet; 3] {
    let rj: Vec<Jet> = (0..3).map(|a| if a < dim { Jet::displacement(r[a], a) } else { Jet::default() }).collect();
    let r2 = rj[0] * rj[0] + rj[1] * rj[1] + rj[2] * rj[2];
    let mut out = [Jet::default(); 3];
    if dim == 2 {
        // ψ = Y0 r1 - Y1 r0 - ω |r|^2 / 2
        out[2] = rj[1].scale(y[0]) - rj[0].scale(y[1]) - r2.scale(0.5 * w[2]);
    } else {
        // A = (Y × r) / 2 - |r|^2 ω / 2
        let cross = [
            rj[2].scale(y[1]) - rj[1].scale(y[2]),
            rj[0].scale(y[2]) - rj[2].scale(y[0]),
            rj[1].scale(y[0]) - rj[0].scale(y[1]),
        ];
        for a in 0..3 {
            out[a] = cross[a].scale(0.5) - r2.scale(0.5 * w[a]);
        }
    }
    out
}

/// Smooth cutoff equal to 1 well inside Ω and 0 outside it.
#[derive(Debug, Clone)]
pub struct DomainCutoff {
    placed: PlacedShape,
    width: f64,
}

impl DomainCutoff {
    pub fn new(domain: &DomainSpec, width: f64) -> Result<Self, ScenarioError> {
        if let Shape::Polygon { .. } = domain.placed.shape {
            return Err(ScenarioError::Unsupported(
                "nonzero initial velocity or momentum test fields need a disk, ellipse or box domain".into(),
            ));
        }
        Ok(Self { placed: domain.placed.clone(), width })
    }

    pub fn eval(&self, x: &[f64; 3]) -> Jet {
        let d = self.placed.dim;
        let mut disp = [0.0; 3];
        for a in 0..d {
            disp[a] = x[a] - self.placed.pose.center[a];
        }
        let p = self.placed.pose.to_local(&disp);
        let w = self.width;
        let local = match &self.placed.shape {
            Shape::Disk { radius } => radial_cutoff(&p, d, radius - w, w),
            Shape::Box { half_extents } => {
                let mut j = Jet::constant(1.0);
                for a in 0..d {
                    j = j * interval_cutoff(p[a], a, -half_extents[a], half_extents[a], w);
                }
                j
            }
            Shape::Ellipse { semi_axes } => {
                let emin = semi_axes[..d].iter().copied().fold(f64::INFINITY, f64::min);
                let mut q2 = Jet::default();
                for a in 0..d {
                    q2 = q2 + Jet::displacement(p[a], a).scale(1.0 / semi_axes[a]).square();
                }
                let inner = 1.0 - w / emin;
                if q2.v <= inner * inner {
                    Jet::constant(1.0)
                } else {
                    let q = q2.v.sqrt();
                    let qj = q2.compose(q, 0.5 / q, -0.25 / (q * q * q));
                    let (s, ds, dds) = crate::jet::smooth_step((qj.v - inner) / (1.0 - inner));
                    let sc = 1.0 / (1.0 - inner);
                    qj.compose(1.0 - s, -ds * sc, -dds * sc * sc)
                }
            }
            Shape::Polygon { .. } => unreachable!(),
        };
        local.rotate_from_local(&self.placed.pose.rotation)
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

/// Radial cutoff about a body center, 1 on the bounding ball.
fn body_cutoff(grid: &TorusGrid, x: &[f64; 3], center: &[f64; 3], radius: f64, width: f64) -> Jet {
    radial_cutoff(&displacement(grid, x, center), grid.dim(), radius, width)
}

/// Width of the cutoff transitions used for initial velocities and test fields.
pub fn velocity_cutoff_width(delta: f64, grid: &TorusGrid) -> f64 {
    (2.0 * delta).max(8.0 * grid.spacing())
}

/// Analytic, exactly divergence-free initial velocity before the discrete projection.
pub fn assemble_velocity(
    datum: &FluidVelocity,
    bodies: &[BodySpec],
    domain: Option<&DomainSpec>,
    delta: f64,
    grid: &TorusGrid,
    seed: u64,
) -> Result<(VectorField, Vec<String>), ScenarioError> {
    let d = grid.dim();
    let fluid = FluidPotential::new(datum, grid, seed);
    let moving = bodies.iter().any(|b| b.velocity.iter().chain(&b.angular_velocity).any(|v| *v != 0.0));
    let any_motion = moving || !matches!(fluid, FluidPotential::Zero);
    let mut warnings = Vec::new();
    if !any_motion {
        return Ok((VectorField::zeros(grid), warnings));
    }
    let width = velocity_cutoff_width(delta, grid);
    let cutoff = match domain {
        Some(dom) => Some(DomainCutoff::new(dom, width)?),
        None => None,
    };
    // Rigid balls must be disjoint and sit where the domain cutoff is 1.
    for (i, b) in bodies.iter().enumerate() {
        let r = b.bounding_radius();
        if r + width >= grid.half_period() {
            warnings.push(format!("body {}: rigid blending ball wraps around the torus", b.id));
        }
        for other in &bodies[i + 1..] {
            let dist = displacement(grid, &b.center(), &other.center())[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
            if dist < r + other.bounding_radius() + 2.0 * width {
                warnings.push(format!(
                    "bodies {} and {}: rigid blending balls overlap, initial velocity is not exactly rigid on them",
                    b.id, other.id
                ));
            }
        }
        if let Some(dom) = domain {
            let clearance = -(0..grid.len())
                .filter(|&k| {
                    let x = grid.position(k);
                    displacement(grid, &x, &b.center())[..d].iter().map(|v| v * v).sum::<f64>().sqrt() <= r + width
                })
                .map(|k| dom.placed.signed_distance(&grid.position(k)))
                .fold(f64::NEG_INFINITY, f64::max);
            if clearance < width {
                warnings.push(format!(
                    "body {}: too close to the domain boundary for an exactly rigid initial velocity",
                    b.id
                ));
            }
        }
    }
    let u = VectorField::from_fn(grid, |x| {
        let mut pot = fluid.eval(x, d);
        let mut total_b = Jet::default();
        let mut rigid = [Jet::default(); 3];
        for b in bodies {
            let bj = body_cutoff(grid, x, &b.center(), b.bounding_radius(), width);
            if bj.v == 0.0 && bj.g == [0.0; 3] {
                continue;
            }
            let r = displacement(grid, x, &b.center());
            let rp = rigid_potential(&r, &b.velocity, &b.angular_velocity, d);
            for a in 0..3 {
                rigid[a] = rigid[a] + bj * rp[a];
            }
            total_b = total_b + bj;
        }
        let one_minus = Jet::constant(1.0) - total_b;
        for a in 0..3 {
            pot[a] = rigid[a] + one_minus * pot[a];
            if let Some(c) = &cutoff {
                pot[a] = c.eval(x) * pot[a];
            }
        }
        curl(&pot, d)
    });
    Ok((u, warnings))
}

/// Assembled velocity followed by the discrete projection.
pub fn build_initial_velocity(
    datum: &FluidVelocity,
    bodies: &[BodySpec],
    domain: Option<&DomainSpec>,
    delta: f64,
    grid: &TorusGrid,
    spectral: &Spectral,
    seed: u64,
) -> Result<(VectorField, Vec<String>), ScenarioError> {
    let (u, mut warnings) = assemble_velocity(datum, bodies, domain, delta, grid, seed)?;
    let div = spectral.divergence(&u).max_abs();
    let scale = u.max_abs() / grid.spacing();
    if scale > 0.0 && div > 1e-3 * scale {
        warnings.push(format!("initial velocity has discrete divergence {div:.3e} before projection"));
    }
    Ok((spectral.leray_project(&u), warnings))
}

pub fn build_forcing(cfg: &ForcingConfig, grid: &TorusGrid) -> Forcing {
    let d = grid.dim();
    match cfg {
        ForcingConfig::None => Forcing { g: VectorField::zeros(grid), potential: None },
        ForcingConfig::Constant { g } => {
            let mut v = [0.0; 3];
            v[..d].copy_from_slice(&g[..d]);
            Forcing { g: VectorField::constant(grid, v), potential: None }
        }
        ForcingConfig::CosinePotential { amplitude, axis, cycles } => {
            let k = 2.0 * std::f64::consts::PI * cycles / grid.half_period();
            let potential = ScalarField::from_fn(grid, |x| amplitude * (k * x[*axis]).cos());
            let g = VectorField::from_fn(grid, |x| {
                let mut v = [0.0; 3];
                v[*axis] = -amplitude * k * (k * x[*axis]).sin();
                v
            });
            Forcing { g, potential: Some(potential) }
        }
    }
}

pub fn build_scenario(cfg: &Config) -> Result<Scenario, ScenarioError> {
    let grid = cfg.grid()?;
    let spectral = Spectral::new(&grid);
    build_scenario_with(cfg, &spectral)
}

pub fn build_scenario_with(cfg: &Config, spectral: &Spectral) -> Result<Scenario, ScenarioError> {
    let grid = *spectral.grid();
    let delta = cfg.delta();
    let eps = cfg.penalty.epsilon;
    let bodies = bodies_from_config(cfg);
    let domain = domain_from_config(cfg);
    let chi = build_chi(domain.as_ref(), &grid, cfg.chi_width(), cfg.penalty.chi_profile)?;
    let markers = check_bodies(&bodies, delta, &grid)?;
    if let Some(dom) = &domain {
        for (b, m) in bodies.iter().zip(&markers) {
            let _ = m;
            let outside = (0..grid.len()).any(|k| {
                let x = grid.position(k);
                b.signed_distance(&grid, &x) <= 0.0 && dom.placed.signed_distance(&x) >= 0.0
            });
            if outside {
                return Err(ScenarioError::BodyOutsideDomain(b.id));
            }
        }
    }
    let rho0 = layered(&bodies, &markers, &grid, |b| b.density);
    let mu0 = layered(&bodies, &markers, &grid, |_| 1.0 / eps);
    let (u0, warnings) =
        build_initial_velocity(&cfg.fluid.velocity, &bodies, domain.as_ref(), delta, &grid, spectral, cfg.seed)?;
    let forcing = build_forcing(&cfg.forcing, &grid);
    let kernel = MollifierKernel::gaussian(&grid, delta);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Scenario {
        grid,
        bodies,
        domain,
        penalty: PenaltyParams { epsilon: eps, delta, chi, kernel },
        forcing,
        rho0,
        mu0,
        u0,
        markers,
        warnings,
    })
}
