//! Scenario configuration: a human-writable TOML file with nested sections,
//! validated against every model assumption at once (the full list of
//! violations is reported, not just the first). Unknown keys are errors.
//!
//! Units: lengths in meters, times in seconds, velocities in m/s,
//! diffusion in m^2/s; densities are dimensionless in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::agents::ControlTrajectory;
use crate::error::{Error, Result};
use crate::grid::{build_grid, build_grid_sealed, CellField, DoorSegment, Grid};
use crate::model::{KernelParams, ProjectionParams, SpeedLaw};
use crate::objective::ObjectiveConfig;
use crate::optimizer::OptimizerConfig;
use crate::vec2::Vec2;
use crate::{density::DensityParams, eikonal::EikonalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Domain side lengths (m).
    pub lx: f64,
    pub ly: f64,
    /// Cell counts.
    pub nx: usize,
    pub ny: usize,
    /// Door intervals on the boundary. Required unless `sealed = true`.
    #[serde(default)]
    pub door: Vec<DoorSegment>,
    /// A sealed room has no doors at all; the travel-time potential is
    /// dropped and only diffusion and agent interaction act. Used for
    /// mass-conservation scenarios.
    #[serde(default)]
    pub sealed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Density diffusion (m^2/s).
    pub eps: f64,
    /// Potential viscosity.
    pub delta1: f64,
    /// Travel-cost floor.
    pub delta2: f64,
    /// Door outflow velocity (m/s).
    pub eta_out: f64,
    pub speed_law: SpeedLaw,
    /// Blend half-width of the unit-ball projection.
    pub eps_h: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            eps: 0.02,
            delta1: 0.5,
            delta2: 0.1,
            eta_out: 1.0,
            speed_law: SpeedLaw::Linear,
            eps_h: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    /// Initial positions (m).
    pub positions: Vec<[f64; 2]>,
    /// Optional constant-in-time initial controls, one per agent, `|u| <= 1`.
    pub controls: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// Final time (s).
    pub t_final: f64,
    /// Number of uniform time steps.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensityConfig {
    /// Uniform density.
    Constant { value: f64 },
    /// `value` inside the axis-aligned box, `background` outside.
    Box {
        value: f64,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        #[serde(default)]
        background: f64,
    },
    /// Background plus smooth compactly supported bumps
    /// `height * exp(1 - 1/(1 - (d/radius)^2))`.
    Bumps {
        #[serde(default)]
        background: f64,
        bumps: Vec<BumpConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    /// Plain matrix text, one grid row per line, j = 0 first.
    #[default]
    Matrix,
    /// Legacy ASCII VTK structured points with cell data.
    Vtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a density snapshot every k-th step; 0 disables snapshots.
    pub snapshot_every: usize,
    pub snapshot_format: SnapshotFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub agents: AgentsConfig,
    pub time: TimeConfig,
    pub initial_density: InitialDensityConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Seed for randomized validation utilities only; the solver itself is
    /// deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            detail: e.to_string(),
        })
    }

    /// Canonical serialization; parsing it back yields an identical config.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Collect every violated constraint.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let g = &self.geometry;
        if g.sealed && !g.door.is_empty() {
            errs.push("geometry: sealed = true contradicts a non-empty door list".into());
        }
        if !g.sealed && g.door.is_empty() {
            errs.push(
                "geometry.door: at least one door is required (the door part of the boundary must have positive measure); set sealed = true for an intentionally closed room"
                    .into(),
            );
        }
        // grid construction re-checks counts, lengths and door intervals
        let built = if g.sealed && g.door.is_empty() {
            build_grid_sealed(g.lx, g.ly, g.nx, g.ny)
        } else {
            build_grid(g.lx, g.ly, g.nx, g.ny, &g.door)
        };
        let grid = match built {
            Ok(grid) => Some(grid),
            Err(Error::InvalidConfig(list)) => {
                errs.extend(list);
                None
            }
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };

        let p = &self.physics;
        if !(p.eps > 0.0 && p.eps.is_finite()) {
            errs.push(format!("physics.eps: diffusion must be > 0, got {}", p.eps));
        }
        if !(p.delta1 > 0.0 && p.delta1.is_finite()) {
            errs.push(format!("physics.delta1: the potential viscosity must be > 0, got {}", p.delta1));
        }
        if !(p.delta2 > 0.0 && p.delta2.is_finite()) {
            errs.push(format!(
                "physics.delta2: the travel-cost floor must be > 0 (the regularized potential equation is singular otherwise), got {}",
                p.delta2
            ));
        }
        if !(p.eta_out > 0.0 && p.eta_out.is_finite()) {
            errs.push(format!("physics.eta_out: the door outflow velocity must be > 0, got {}", p.eta_out));
        }
        if !(p.eps_h > 0.0 && p.eps_h < 0.5) {
            errs.push(format!("physics.eps_h: the projection blend half-width must lie in (0, 0.5), got {}", p.eps_h));
        }

        if !(self.kernel.intensity > 0.0 && self.kernel.intensity.is_finite()) {
            errs.push(format!("kernel.intensity: must be > 0, got {}", self.kernel.intensity));
        }
        if !(self.kernel.radius > 0.0 && self.kernel.radius.is_finite()) {
            errs.push(format!("kernel.radius: must be > 0, got {}", self.kernel.radius));
        }

        if !(self.time.t_final > 0.0 && self.time.t_final.is_finite()) {
            errs.push(format!("time.t_final: must be > 0, got {}", self.time.t_final));
        }
        if self.time.steps == 0 {
            errs.push("time.steps: at least one step is required".into());
        }

        for (k, pos) in self.agents.positions.iter().enumerate() {
            if !(pos[0].is_finite() && pos[1].is_finite()) {
                errs.push(format!("agents.positions[{k}]: coordinates must be finite"));
            }
        }
        if let Some(controls) = &self.agents.controls {
            if controls.len() != self.agents.positions.len() {
                errs.push(format!(
                    "agents.controls: expected {} entries (one per agent), got {}",
                    self.agents.positions.len(),
                    controls.len()
                ));
            }
            for (k, u) in controls.iter().enumerate() {
                let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
                if !norm.is_finite() || norm > 1.0 + 1e-12 {
                    errs.push(format!(
                        "agents.controls[{k}]: |u| = {norm:.6} exceeds the admissible unit bound"
                    ));
                }
            }
        }

        match &self.initial_density {
            InitialDensityConfig::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    errs.push(format!(
                        "initial_density.value: densities must lie in [0, 1], got {value}"
                    ));
                }
            }
            InitialDensityConfig::Box { value, x0, x1, y0, y1, background } => {
                for (name, v) in [("value", value), ("background", background)] {
                    if !(0.0..=1.0).contains(v) {
                        errs.push(format!(
                            "initial_density.{name}: densities must lie in [0, 1], got {v}"
                        ));
                    }
                }
                if x0 >= x1 || y0 >= y1 {
                    errs.push("initial_density: box extents must satisfy x0 < x1 and y0 < y1".into());
                }
            }
            InitialDensityConfig::Bumps { background, bumps } => {
                if !(0.0..=1.0).contains(background) {
                    errs.push(format!(
                        "initial_density.background: densities must lie in [0, 1], got {background}"
                    ));
                }
                for (k, b) in bumps.iter().enumerate() {
                    if !(b.radius > 0.0) {
                        errs.push(format!("initial_density.bumps[{k}].radius: must be > 0"));
                    }
                    if b.height < 0.0 {
                        errs.push(format!("initial_density.bumps[{k}].height: must be >= 0"));
                    }
                }
            }
        }
        if let Some(grid) = &grid {
            let rho0 = build_initial_density(&self.initial_density, grid);
            let (min, max) = (rho0.min(), rho0.max());
            if min < 0.0 || max > 1.0 {
                errs.push(format!(
                    "initial_density: the constructed field leaves [0, 1] (min {min:.6}, max {max:.6}); reduce bump heights or the background"
                ));
            }
            // advective stability: |T| <= 1 by construction
            let dt = self.time.t_final / self.time.steps as f64;
            let slope = self.physics.speed_law.max_flux_slope().max(1.0);
            let limit = 1.0 / (slope * (2.0 / grid.hx + 2.0 / grid.hy));
            if dt > limit * (1.0 + 1e-12) {
                let needed = (self.time.t_final / limit).ceil() as usize;
                errs.push(format!(
                    "time.steps: dt = {dt:.6} exceeds the advective stability bound {limit:.6}; use at least {needed} steps"
                ));
            }
        }

        errs.extend(self.objective.validation_errors());
        errs.extend(self.optimizer.validation_errors());
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

/// Parse a scenario file and validate it fully.
pub fn parse_and_validate(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config = ScenarioConfig::from_toml_str(&text, &path.display().to_string())?;
    config.validate()?;
    Ok(config)
}

fn build_initial_density(spec: &InitialDensityConfig, grid: &Grid) -> CellField {
    match spec {
        InitialDensityConfig::Constant { value } => CellField::constant(grid, *value),
        InitialDensityConfig::Box { value, x0, x1, y0, y1, background } => {
            CellField::from_fn(grid, |c| {
                if c.x >= *x0 && c.x <= *x1 && c.y >= *y0 && c.y <= *y1 {
                    *value
                } else {
                    *background
                }
            })
        }
        InitialDensityConfig::Bumps { background, bumps } => CellField::from_fn(grid, |c| {
            let mut v = *background;
            for b in bumps {
                let dx = (c.x - b.cx) / b.radius;
                let dy = (c.y - b.cy) / b.radius;
                let s2 = dx * dx + dy * dy;
                if s2 < 1.0 {
                    v += b.height * (1.0 - 1.0 / (1.0 - s2)).exp();
                }
            }
            v
        }),
    }
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub rho0: CellField,
    pub agents0: Vec<Vec2>,
    pub sealed: bool,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let g = &config.geometry;
        let grid = if g.sealed {
            build_grid_sealed(g.lx, g.ly, g.nx, g.ny)?
        } else {
            build_grid(g.lx, g.ly, g.nx, g.ny, &g.door)?
        };
        let rho0 = build_initial_density(&config.initial_density, &grid);
        let agents0 = config
            .agents
            .positions
            .iter()
            .map(|p| Vec2::new(p[0], p[1]))
            .collect();
        let sealed = g.sealed;
        Ok(Scenario { config, grid, rho0, agents0, sealed })
    }

    pub fn n_agents(&self) -> usize {
        self.agents0.len()
    }

    pub fn n_steps(&self) -> usize {
        self.config.time.steps
    }

    pub fn n_nodes(&self) -> usize {
        self.config.time.steps + 1
    }

    pub fn t_final(&self) -> f64 {
        self.config.time.t_final
    }

    pub fn dt(&self) -> f64 {
        self.config.time.t_final / self.config.time.steps as f64
    }

    pub fn law(&self) -> SpeedLaw {
        self.config.physics.speed_law
    }

    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams { eps_h: self.config.physics.eps_h }
    }

    pub fn kernel(&self) -> KernelParams {
        self.config.kernel
    }

    pub fn eikonal_params(&self) -> EikonalParams {
        EikonalParams { delta1: self.config.physics.delta1, delta2: self.config.physics.delta2 }
    }

    pub fn density_params(&self) -> DensityParams {
        DensityParams {
            eps: self.config.physics.eps,
            eta_out: self.config.physics.eta_out,
            dt: self.dt(),
        }
    }

    /// Controls from the config (constant in time) or zeros.
    pub fn initial_controls(&self) -> ControlTrajectory {
        match &self.config.agents.controls {
            Some(list) => {
                let u: Vec<Vec2> = list.iter().map(|p| Vec2::new(p[0], p[1])).collect();
                ControlTrajectory::constant(self.n_agents(), self.n_nodes(), &u)
            }
            None => ControlTrajectory::zeros(self.n_agents(), self.n_nodes()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[geometry]
lx = 1.0
ly = 1.0
nx = 8
ny = 8

[[geometry.door]]
side = "right"
from = 0.25
to = 0.75

[time]
t_final = 0.05
steps = 10

[initial_density]
kind = "constant"
value = 0.4
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL, "test").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.physics.delta1, 0.5);
        assert_eq!(cfg.physics.speed_law, SpeedLaw::Linear);
        let scenario = Scenario::from_config(cfg).unwrap();
        assert_eq!(scenario.n_agents(), 0);
        assert!((scenario.rho0.max() - 0.4).abs() <= 1e-15);
    }

    #[test]
    fn zero_delta2_is_reported_with_field_path() {
        let text = MINIMAL.replace(
            "[time]",
            "[physics]\ndelta2 = 0.0\n\n[time]",
        );
        let cfg = ScenarioConfig::from_toml_str(&text, "test").unwrap();
        let errs = cfg.validation_errors();
        assert!(errs.iter().any(|e| e.contains("physics.delta2")), "{errs:?}");
    }

    #[test]
    fn overdense_initial_condition_rejected() {
        let text = MINIMAL.replace("value = 0.4", "value = 1.5");
        let cfg = ScenarioConfig::from_toml_str(&text, "test").unwrap();
        let errs = cfg.validation_errors();
        assert!(errs.iter().any(|e| e.contains("[0, 1]")), "{errs:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[time]", "[time]\nwarp = 9\n");
        assert!(ScenarioConfig::from_toml_str(&text, "test").is_err());
    }

    #[test]
    fn all_violations_reported_at_once() {
        let text = r#"
[geometry]
lx = 1.0
ly = 1.0
nx = 8
ny = 8
[[geometry.door]]
side = "right"
from = 0.0
to = 1.0
[physics]
delta2 = 0.0
eta_out = -1.0
[time]
t_final = 0.05
steps = 10
[initial_density]
kind = "constant"
value = 1.2
"#;
        let cfg = ScenarioConfig::from_toml_str(text, "test").unwrap();
        let errs = cfg.validation_errors();
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn canonical_roundtrip_is_identity() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL, "test").unwrap();
        let text = cfg.to_canonical_toml();
        let again = ScenarioConfig::from_toml_str(&text, "roundtrip").unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn sealed_room_without_doors_is_valid() {
        let text = MINIMAL
            .replace("[[geometry.door]]\nside = \"right\"\nfrom = 0.25\nto = 0.75\n", "")
            .replace("ny = 8", "ny = 8\nsealed = true");
        let cfg = ScenarioConfig::from_toml_str(&text, "test").unwrap();
        cfg.validate().unwrap();
        let scenario = Scenario::from_config(cfg).unwrap();
        assert!(scenario.sealed);
        assert_eq!(scenario.grid.door_face_count(), 0);
    }

    #[test]
    fn missing_doors_without_sealed_flag_rejected() {
        let text =
            MINIMAL.replace("[[geometry.door]]\nside = \"right\"\nfrom = 0.25\nto = 0.75\n", "");
        let cfg = ScenarioConfig::from_toml_str(&text, "test").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cfl_violation_names_required_steps() {
        let text = MINIMAL.replace("steps = 10", "steps = 1");
        let cfg = ScenarioConfig::from_toml_str(&text, "test").unwrap();
        let errs = cfg.validation_errors();
        assert!(errs.iter().any(|e| e.contains("stability")), "{errs:?}");
    }
}
