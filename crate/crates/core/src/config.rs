//! Run configuration: a strict TOML document.
//!
//! Unknown keys are rejected, every optional key has a documented default, and
//! [`load_config`] returns a fully validated [`Config`] with grid-dependent defaults
//! (layer width, contact threshold) filled in so the echo is self-contained.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::TorusGrid;
use crate::shapes::Shape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    /// Physical domain Ω. Without it χ vanishes identically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub bodies: Vec<BodyConfig>,
    #[serde(default)]
    pub fluid: FluidConfig,
    #[serde(default)]
    pub forcing: ForcingConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub contact: ContactConfig,
    /// Seed for randomized initial data.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub half_period: f64,
    pub cells: usize,
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChiProfile {
    /// `χ = s(d / w)^2` with the C-infinity transition `s`.
    #[default]
    SmoothStepSquared,
    /// `χ = s(d / w)` without squaring.
    SmoothStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Layer width and mollifier radius. Defaults to `4h`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Width of the χ ramp outside Ω. Defaults to `4h`.
    #[serde(default)]
    pub chi_width: Option<f64>,
    #[serde(default)]
    pub chi_profile: ChiProfile,
}

fn default_epsilon() -> f64 {
    1e-3
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { epsilon: default_epsilon(), delta: None, chi_width: None, chi_profile: ChiProfile::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: Shape,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub rotation: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub id: u32,
    pub shape: Shape,
    /// Solid density relative to the fluid.
    pub density: f64,
    pub center: Vec<f64>,
    /// Orientation angle (2D).
    #[serde(default)]
    pub angle: f64,
    /// Orientation as a rotation vector (3D).
    #[serde(default)]
    pub rotation: Option<[f64; 3]>,
    #[serde(default)]
    pub velocity: Option<Vec<f64>>,
    /// Angular velocity (2D).
    #[serde(default)]
    pub spin: f64,
    /// Angular velocity vector (3D).
    #[serde(default)]
    pub angular_velocity: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    #[serde(default)]
    pub velocity: FluidVelocity,
    /// Admissible solid densities `[min, max]`.
    #[serde(default = "default_density_bounds")]
    pub density_bounds: [f64; 2],
}

fn default_density_bounds() -> [f64; 2] {
    [1e-2, 1e2]
}

impl Default for FluidConfig {
    fn default() -> Self {
        Self { velocity: FluidVelocity::default(), density_bounds: default_density_bounds() }
    }
}

/// Fluid velocity datum, given through a stream function (2D) or vector potential (3D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluidVelocity {
    #[default]
    Quiescent,
    /// `u = A (sin kx cos ky, -cos kx sin ky[, 0])` with `k = m π / L` (times `cos kz` in 3D).
    TaylorGreen {
        amplitude: f64,
        #[serde(default = "default_mode")]
        mode: u32,
    },
    /// Random Fourier modes up to index `max_mode`, scaled to peak speed `amplitude`.
    RandomModes {
        amplitude: f64,
        #[serde(default = "default_max_mode")]
        max_mode: u32,
    },
}

fn default_mode() -> u32 {
    1
}

fn default_max_mode() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    None,
    Constant { g: Vec<f64> },
    /// Potential `G = amplitude * cos(2π cycles x_axis / L)`, force `g = ∇G`.
    CosinePotential {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_axis")]
        axis: usize,
        #[serde(default = "one")]
        cycles: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn one_axis() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    #[default]
    Fixed,
    Cfl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    /// Fixed step, or the cap for the CFL policy.
    pub dt: f64,
    #[serde(default)]
    pub policy: DtPolicy,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_cfl() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Ledger and body samples every this many steps.
    #[serde(default = "one_usize")]
    pub sample_every: usize,
    /// Field snapshots every this many steps; 0 writes only the final state.
    #[serde(default)]
    pub snapshot_every: usize,
}

fn one_usize() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { sample_every: 1, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_viscous_tol")]
    pub viscous_tol: f64,
    #[serde(default = "default_pressure_tol")]
    pub pressure_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Largest admissible `max|[u]_δ| dt / h`.
    #[serde(default = "default_max_cfl")]
    pub max_cfl: f64,
}

fn default_viscous_tol() -> f64 {
    1e-8
}

fn default_pressure_tol() -> f64 {
    1e-10
}

fn default_max_iterations() -> usize {
    5000
}

fn default_max_cfl() -> f64 {
    1.0
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            viscous_tol: default_viscous_tol(),
            pressure_tol: default_pressure_tol(),
            max_iterations: default_max_iterations(),
            max_cfl: default_max_cfl(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContactPolicy {
    Continue,
    #[default]
    Merge,
    Halt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    /// Detection threshold; defaults to `3h`.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub policy: ContactPolicy,
}

impl Config {
    pub fn grid(&self) -> Result<TorusGrid, ConfigError> {
        TorusGrid::new(self.grid.dim, self.grid.half_period, self.grid.cells)
            .map_err(|e| invalid("grid", e.to_string()))
    }

    /// Layer width and mollifier radius.
    pub fn delta(&self) -> f64 {
        self.penalty.delta.expect("delta is filled by load_config")
    }

    pub fn chi_width(&self) -> f64 {
        self.penalty.chi_width.expect("chi_width is filled by load_config")
    }

    pub fn contact_threshold(&self) -> f64 {
        self.contact.threshold.expect("threshold is filled by load_config")
    }

    /// Fill grid-dependent defaults.
    pub fn fill_defaults(&mut self) -> Result<(), ConfigError> {
        let grid = self.grid()?;
        let h = grid.spacing();
        self.penalty.delta.get_or_insert(4.0 * h);
        self.penalty.chi_width.get_or_insert(4.0 * h);
        self.contact.threshold.get_or_insert(3.0 * h);
        if let Some(domain) = &mut self.domain {
            domain.center.get_or_insert(vec![0.0; grid.dim()]);
        }
        for b in &mut self.bodies {
            b.velocity.get_or_insert(vec![0.0; grid.dim()]);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.grid()?;
        let d = grid.dim();
        let h = grid.spacing();
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive and finite (got {v})")))
            }
        };
        positive("penalty.epsilon", self.penalty.epsilon)?;
        if self.penalty.epsilon > 1.0 {
            return Err(invalid("penalty.epsilon", format!("must be <= 1 (got {})", self.penalty.epsilon)));
        }
        let delta = self.delta();
        positive("penalty.delta", delta)?;
        if delta < 2.0 * h {
            return Err(invalid("penalty.delta", format!("must be at least 2h = {:.6} (got {delta})", 2.0 * h)));
        }
        positive("penalty.chi_width", self.chi_width())?;
        let [lo, hi] = self.fluid.density_bounds;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= 1.0 && 1.0 <= hi) {
            return Err(invalid(
                "fluid.density_bounds",
                format!("need 0 < min <= 1 <= max (got [{lo}, {hi}])"),
            ));
        }
        if let Some(dom) = &self.domain {
            dom.shape.validate(d).map_err(|e| invalid("domain.shape", e.to_string()))?;
            let c = dom.center.as_deref().unwrap_or(&[]);
            if c.len() != d {
                return Err(invalid("domain.center", format!("must have {d} entries")));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, b) in self.bodies.iter().enumerate() {
            let key = |k: &str| format!("bodies[{i}].{k}");
            if !ids.insert(b.id) {
                return Err(invalid(key("id"), format!("duplicate body id {}", b.id)));
            }
            b.shape.validate(d).map_err(|e| invalid(key("shape"), e.to_string()))?;
            if !(b.density.is_finite() && b.density > 0.0) {
                return Err(invalid(key("density"), format!("solid density must be positive (got {})", b.density)));
            }
            if b.density < lo || b.density > hi {
                return Err(invalid(
                    key("density"),
                    format!("solid density {} outside admissible range [{lo}, {hi}]", b.density),
                ));
            }
            if b.center.len() != d || b.center.iter().any(|v| !v.is_finite()) {
                return Err(invalid(key("center"), format!("must have {d} finite entries")));
            }
            let v = b.velocity.as_deref().unwrap_or(&[]);
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(key("velocity"), format!("must have {d} finite entries")));
            }
            if d == 2 && (b.rotation.is_some() || b.angular_velocity.is_some()) {
                return Err(invalid(key("rotation"), "use `angle` and `spin` in 2D"));
            }
            if d == 3 && (b.angle != 0.0 || b.spin != 0.0) {
                return Err(invalid(key("angle"), "use `rotation` and `angular_velocity` in 3D"));
            }
        }
        match &self.fluid.velocity {
            FluidVelocity::Quiescent => {}
            FluidVelocity::TaylorGreen { amplitude, mode } => {
                if !amplitude.is_finite() {
                    return Err(invalid("fluid.velocity.amplitude", "must be finite"));
                }
                if *mode == 0 || *mode as usize >= grid.n() / 3 {
                    return Err(invalid("fluid.velocity.mode", format!("must be in 1..{}", grid.n() / 3)));
                }
            }
            FluidVelocity::RandomModes { amplitude, max_mode } => {
                if !amplitude.is_finite() {
                    return Err(invalid("fluid.velocity.amplitude", "must be finite"));
                }
                if *max_mode == 0 || *max_mode as usize >= grid.n() / 3 {
                    return Err(invalid("fluid.velocity.max_mode", format!("must be in 1..{}", grid.n() / 3)));
                }
            }
        }
        match &self.forcing {
            ForcingConfig::None => {}
            ForcingConfig::Constant { g } => {
                if g.len() != d || g.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("forcing.g", format!("must have {d} finite entries")));
                }
            }
            ForcingConfig::CosinePotential { amplitude, axis, cycles } => {
                if !amplitude.is_finite() {
                    return Err(invalid("forcing.amplitude", "must be finite"));
                }
                if *axis >= d {
                    return Err(invalid("forcing.axis", format!("must be < {d}")));
                }
                let twice = 2.0 * cycles;
                if !(twice.is_finite() && twice > 0.0 && twice.fract() == 0.0) {
                    return Err(invalid(
                        "forcing.cycles",
                        format!("must be a positive multiple of 1/2 to be periodic (got {cycles})"),
                    ));
                }
            }
        }
        positive("time.horizon", self.time.horizon)?;
        positive("time.dt", self.time.dt)?;
        if self.time.dt > self.time.horizon {
            return Err(invalid("time.dt", "must not exceed time.horizon"));
        }
        if !(self.time.cfl > 0.0 && self.time.cfl <= 1.0) {
            return Err(invalid("time.cfl", format!("must lie in (0, 1] (got {})", self.time.cfl)));
        }
        if self.output.sample_every == 0 {
            return Err(invalid("output.sample_every", "must be >= 1"));
        }
        positive("solver.viscous_tol", self.solver.viscous_tol)?;
        positive("solver.pressure_tol", self.solver.pressure_tol)?;
        positive("solver.max_cfl", self.solver.max_cfl)?;
        if self.solver.max_iterations == 0 {
            return Err(invalid("solver.max_iterations", "must be >= 1"));
        }
        let thr = self.contact_threshold();
        if !(thr.is_finite() && thr >= 2.0 * h) {
            return Err(invalid("contact.threshold", format!("must be at least 2h = {:.6} (got {thr})", 2.0 * h)));
        }
        Ok(())
    }

    /// TOML echo with every default spelled out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parse, fill defaults and validate.
pub fn load_config(text: &str) -> Result<Config, ConfigError> {
    let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.fill_defaults()?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [grid]
        half_period = 1.0
        cells = 32

        [time]
        horizon = 0.1
        dt = 0.01
    "#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = load_config(MINIMAL).unwrap();
        let h = 2.0 / 32.0;
        assert_eq!(cfg.grid.dim, 2);
        assert_eq!(cfg.penalty.epsilon, 1e-3);
        assert!((cfg.delta() - 4.0 * h).abs() < 1e-15);
        assert!((cfg.contact_threshold() - 3.0 * h).abs() < 1e-15);
        assert_eq!(cfg.contact.policy, ContactPolicy::Merge);
        assert_eq!(cfg.fluid.velocity, FluidVelocity::Quiescent);
        assert_eq!(cfg.forcing, ForcingConfig::None);
        assert!(cfg.bodies.is_empty() && cfg.domain.is_none());
        // echo round-trips
        let again = load_config(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let text = format!("{MINIMAL}\n[penalty]\nepsilon = 0.0\n");
        let err = load_config(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "penalty.epsilon"), "{err}");
    }

    #[test]
    fn zero_solid_density_is_rejected() {
        let text = format!(
            "{MINIMAL}\n[[bodies]]\nid = 1\ndensity = 0.0\ncenter = [0.0, 0.0]\nshape = {{ kind = \"disk\", radius = 0.2 }}\n"
        );
        let err = load_config(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "bodies[0].density"), "{err}");
    }

    #[test]
    fn unknown_and_missing_keys_are_reported() {
        let err = load_config(&format!("{MINIMAL}\n[output]\ncadence = 3\n")).unwrap_err();
        assert!(err.to_string().contains("cadence"), "{err}");
        let err = load_config("[grid]\nhalf_period = 1.0\ncells = 32\n").unwrap_err();
        assert!(err.to_string().contains("time"), "{err}");
        let err = load_config("[grid]\nhalf_period = 1.0\ncells = 30\n[time]\nhorizon=1.0\ndt=0.1\n").unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
    }

    #[test]
    fn tagged_sections_parse() {
        let text = format!(
            "{MINIMAL}\n[fluid.velocity]\nkind = \"taylor_green\"\namplitude = 1.0\n[forcing]\nkind = \"cosine_potential\"\ncycles = 1.0\n[domain]\nshape = {{ kind = \"box\", half_extents = [0.7, 0.7] }}\n"
        );
        let cfg = load_config(&text).unwrap();
        assert_eq!(cfg.fluid.velocity, FluidVelocity::TaylorGreen { amplitude: 1.0, mode: 1 });
        assert_eq!(cfg.forcing, ForcingConfig::CosinePotential { amplitude: 1.0, axis: 1, cycles: 1.0 });
        assert_eq!(cfg.domain.unwrap().center, Some(vec![0.0, 0.0]));
    }
}
