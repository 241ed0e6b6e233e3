//! Objective functionals over forward trajectories.
//!
//! Two state terms are provided: an evacuation cost
//! `c1 int rho(T) + c2 int_0^T int t rho` and the time-averaged spatial
//! variance of the density, plus any nonnegative blend of the two. Both are
//! completed by the H1 control penalty `(alpha / 2T) sum_i ||u_i||_H1^2`.
//! Time quadrature is trapezoidal throughout, matching the piecewise-linear
//! control representation, so the penalty, its gradient and the Riesz map
//! are mutually exact.

use serde::{Deserialize, Serialize};

use crate::agents::ControlTrajectory;
use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::grid::{CellField, Grid};
use crate::h1::H1Form;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Evacuation,
    Variance,
    Blend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Weight of the terminal-mass term.
    pub c1: f64,
    /// Weight of the time-weighted occupancy term.
    pub c2: f64,
    /// Control regularization `alpha > 0`.
    pub alpha: f64,
    /// Blend weights, used when `kind = "blend"`.
    pub blend_evacuation: f64,
    pub blend_variance: f64,
    /// The variance term divides by the total mass; below this floor the
    /// objective is reported as degenerate instead of silently regularized.
    pub mass_floor: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            kind: ObjectiveKind::Evacuation,
            c1: 1.0,
            c2: 1.0,
            alpha: 0.1,
            blend_evacuation: 1.0,
            blend_variance: 1.0,
            mass_floor: 1e-10,
        }
    }
}

impl ObjectiveConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            errs.push(format!("objective.alpha: the control regularization must be > 0, got {}", self.alpha));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            errs.push(format!("objective: weights c1, c2 must be >= 0, got {} and {}", self.c1, self.c2));
        }
        if self.blend_evacuation < 0.0 || self.blend_variance < 0.0 {
            errs.push("objective: blend weights must be >= 0".into());
        }
        if !(self.mass_floor > 0.0) {
            errs.push(format!("objective.mass_floor: must be > 0, got {}", self.mass_floor));
        }
        errs
    }

    fn weights(&self) -> (f64, f64) {
        match self.kind {
            ObjectiveKind::Evacuation => (1.0, 0.0),
            ObjectiveKind::Variance => (0.0, 1.0),
            ObjectiveKind::Blend => (self.blend_evacuation, self.blend_variance),
        }
    }
}

/// Trapezoid weights on the uniform time grid: `dt/2` at the ends.
pub fn trapezoid_weights(n_nodes: usize, dt: f64) -> Vec<f64> {
    (0..n_nodes)
        .map(|k| if k == 0 || k + 1 == n_nodes { 0.5 * dt } else { dt })
        .collect()
}

/// `(alpha / 2T) sum_i ( ||u_i||_L2^2 + ||du_i/dt||_L2^2 )` with the lumped
/// mass term and the exact piecewise-constant derivative.
pub fn control_h1_penalty(u: &ControlTrajectory, alpha: f64, t_final: f64) -> f64 {
    if u.n_agents == 0 {
        return 0.0;
    }
    let dt = t_final / (u.n_nodes as f64 - 1.0);
    let form = H1Form::new(u.n_nodes, dt);
    let mut total = 0.0;
    let mut comp = vec![0.0; u.n_nodes];
    for agent in 0..u.n_agents {
        for pick in [0usize, 1] {
            for n in 0..u.n_nodes {
                let v = u.get(agent, n);
                comp[n] = if pick == 0 { v.x } else { v.y };
            }
            total += form.inner(&comp, &comp);
        }
    }
    alpha / (2.0 * t_final) * total
}

/// Coefficient gradient of the penalty: `(alpha / T) B u` per component.
pub fn penalty_gradient(u: &ControlTrajectory, alpha: f64, t_final: f64) -> ControlTrajectory {
    let mut out = ControlTrajectory::zeros(u.n_agents, u.n_nodes);
    if u.n_agents == 0 {
        return out;
    }
    let dt = t_final / (u.n_nodes as f64 - 1.0);
    let form = H1Form::new(u.n_nodes, dt);
    let scale = alpha / t_final;
    let mut comp = vec![0.0; u.n_nodes];
    for agent in 0..u.n_agents {
        for pick in [0usize, 1] {
            for n in 0..u.n_nodes {
                let v = u.get(agent, n);
                comp[n] = if pick == 0 { v.x } else { v.y };
            }
            let bu = form.apply(&comp);
            for n in 0..u.n_nodes {
                let mut g = out.get(agent, n);
                if pick == 0 {
                    g.x += scale * bu[n];
                } else {
                    g.y += scale * bu[n];
                }
                out.set(agent, n, g);
            }
        }
    }
    out
}

/// Mass, center of mass and variance of a density field. The optional
/// coordinate shift exercises translation invariance in tests.
pub(crate) fn density_moments(rho: &CellField, grid: &Grid, shift: Vec2) -> (f64, Vec2, f64) {
    let area = grid.cell_area();
    let mut mass = 0.0;
    let mut first = Vec2::ZERO;
    let mut second = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let x = grid.cell_center(i, j) + shift;
            let r = rho.at(i, j) * area;
            mass += r;
            first += x * r;
            second += x.norm_sq() * r;
        }
    }
    if mass == 0.0 {
        return (0.0, Vec2::ZERO, 0.0);
    }
    let center = first * (1.0 / mass);
    let variance = second / mass - center.norm_sq();
    (mass, center, variance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub state_term: f64,
    pub penalty: f64,
    pub total: f64,
}

fn evacuation_term(traj: &ForwardTrajectory, c1: f64, c2: f64, dt: f64) -> f64 {
    let n_nodes = traj.mass.len();
    let w = trapezoid_weights(n_nodes, dt);
    let mut value = c1 * traj.mass[n_nodes - 1];
    for n in 0..n_nodes {
        value += c2 * w[n] * (n as f64 * dt) * traj.mass[n];
    }
    value
}

fn variance_term(
    traj: &ForwardTrajectory,
    grid: &Grid,
    dt: f64,
    t_final: f64,
    mass_floor: f64,
) -> Result<f64> {
    let n_nodes = traj.rho.len();
    let w = trapezoid_weights(n_nodes, dt);
    let mut acc = 0.0;
    for n in 0..n_nodes {
        let (mass, _, variance) = density_moments(&traj.rho[n], grid, Vec2::ZERO);
        if mass < mass_floor {
            return Err(Error::DegenerateMass { mass, time: n as f64 * dt, floor: mass_floor });
        }
        acc += w[n] * variance;
    }
    Ok(acc / (2.0 * t_final))
}

/// Evaluate the configured objective on a trajectory.
pub fn evaluate(
    traj: &ForwardTrajectory,
    u: &ControlTrajectory,
    cfg: &ObjectiveConfig,
    grid: &Grid,
    dt: f64,
    t_final: f64,
) -> Result<ObjectiveValue> {
    let (we, wv) = cfg.weights();
    let mut state = 0.0;
    if we != 0.0 {
        state += we * evacuation_term(traj, cfg.c1, cfg.c2, dt);
    }
    if wv != 0.0 {
        state += wv * variance_term(traj, grid, dt, t_final, cfg.mass_floor)?;
    }
    let penalty = control_h1_penalty(u, cfg.alpha, t_final);
    Ok(ObjectiveValue { state_term: state, penalty, total: state + penalty })
}

/// Partial derivatives of the state term with respect to every density cell
/// at every node, consistent with the discrete quadrature above. These seed
/// the adjoint sweep.
pub fn gradient_wrt_trajectory(
    traj: &ForwardTrajectory,
    cfg: &ObjectiveConfig,
    grid: &Grid,
    dt: f64,
    t_final: f64,
) -> Result<Vec<CellField>> {
    let n_nodes = traj.rho.len();
    let w = trapezoid_weights(n_nodes, dt);
    let area = grid.cell_area();
    let (we, wv) = cfg.weights();

    let mut out: Vec<CellField> = traj.rho.iter().map(|r| {
        let mut z = r.clone();
        z.data.fill(0.0);
        z
    }).collect();

    if we != 0.0 {
        for n in 0..n_nodes {
            let coef = we * (cfg.c2 * w[n] * (n as f64 * dt)
                + if n + 1 == n_nodes { cfg.c1 } else { 0.0 })
                * area;
            if coef != 0.0 {
                for v in &mut out[n].data {
                    *v += coef;
                }
            }
        }
    }

    if wv != 0.0 {
        for n in 0..n_nodes {
            let (mass, center, variance) = density_moments(&traj.rho[n], grid, Vec2::ZERO);
            if mass < cfg.mass_floor {
                return Err(Error::DegenerateMass {
                    mass,
                    time: n as f64 * dt,
                    floor: cfg.mass_floor,
                });
            }
            let coef = wv * w[n] / (2.0 * t_final) * area / mass;
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let x = grid.cell_center(i, j);
                    let d = (x - center).norm_sq() - variance;
                    out[n].data[grid.idx(i, j)] += coef * d;
                }
            }
        }
    }
    Ok(out)
}
