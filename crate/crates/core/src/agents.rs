//! Guide-agent dynamics: density sampling through a discrete extension
//! operator and Heun integration of `dx_i/dt = f(rho_bar(t, x_i)) u_i(t)`.
//!
//! The extension clamps the query point to the hull of the cell centers and
//! interpolates bilinearly, so it is linear in the density, bounded by
//! `max |rho|`, and constant outside the domain. Agents are free to leave
//! the room; no wall handling is applied (a diagnostic counts crossings).

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::model::SpeedLaw;
use crate::vec2::Vec2;

/// Controls sampled at the uniform time nodes, piecewise linear in time.
/// Layout: agent-major, `data[agent * n_nodes + node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub n_agents: usize,
    pub n_nodes: usize,
    pub data: Vec<Vec2>,
}

impl ControlTrajectory {
    pub fn zeros(n_agents: usize, n_nodes: usize) -> Self {
        ControlTrajectory { n_agents, n_nodes, data: vec![Vec2::ZERO; n_agents * n_nodes] }
    }

    pub fn constant(n_agents: usize, n_nodes: usize, u: &[Vec2]) -> Self {
        assert_eq!(u.len(), n_agents);
        let mut c = Self::zeros(n_agents, n_nodes);
        for (a, &v) in u.iter().enumerate() {
            for n in 0..n_nodes {
                c.data[a * n_nodes + n] = v;
            }
        }
        c
    }

    #[inline]
    pub fn get(&self, agent: usize, node: usize) -> Vec2 {
        self.data[agent * self.n_nodes + node]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, node: usize, v: Vec2) {
        self.data[agent * self.n_nodes + node] = v;
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plain coefficient dot product (no quadrature weights).
    pub fn dot(&self, other: &ControlTrajectory) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.dot(*b)).sum()
    }

    pub fn axpy(&mut self, a: f64, x: &ControlTrajectory) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += *v * a;
        }
    }

    /// Check the admissibility bound `|u_i(t_n)| <= 1`.
    pub fn check_admissible(&self, tol: f64) -> Result<()> {
        if !self.all_finite() {
            return Err(Error::InvalidInput { context: "controls", value: f64::NAN });
        }
        let m = self.max_norm();
        if m > 1.0 + tol {
            return Err(Error::InvariantViolation {
                context: "controls",
                detail: format!("control magnitude {m:.6e} exceeds the unit bound"),
            });
        }
        Ok(())
    }
}

/// One density sample with everything the tangent and adjoint sweeps need:
/// the value, its gradient with respect to the query point (zero in clamped
/// directions), and the four bilinear stencil weights.
#[derive(Debug, Clone, Copy)]
pub struct DensitySample {
    pub value: f64,
    pub grad: Vec2,
    pub cells: [(usize, f64); 4],
}

/// Bilinear interpolation of cell-centered values with the query clamped to
/// the hull of the cell centers (constant continuation outside).
pub fn sample_density_extended(rho: &CellField, x: Vec2, grid: &Grid) -> DensitySample {
    let half_x = 0.5 * grid.hx;
    let half_y = 0.5 * grid.hy;
    let cx = x.x.clamp(half_x, grid.lx - half_x);
    let cy = x.y.clamp(half_y, grid.ly - half_y);
    let clamped_x = cx != x.x;
    let clamped_y = cy != x.y;

    let fx = cx / grid.hx - 0.5;
    let fy = cy / grid.hy - 0.5;
    let i0 = (fx.floor() as usize).min(grid.nx - 2);
    let j0 = (fy.floor() as usize).min(grid.ny - 2);
    let tx = (fx - i0 as f64).clamp(0.0, 1.0);
    let ty = (fy - j0 as f64).clamp(0.0, 1.0);

    let c00 = grid.idx(i0, j0);
    let c10 = grid.idx(i0 + 1, j0);
    let c01 = grid.idx(i0, j0 + 1);
    let c11 = grid.idx(i0 + 1, j0 + 1);
    let (r00, r10, r01, r11) = (rho.data[c00], rho.data[c10], rho.data[c01], rho.data[c11]);

    let w00 = (1.0 - tx) * (1.0 - ty);
    let w10 = tx * (1.0 - ty);
    let w01 = (1.0 - tx) * ty;
    let w11 = tx * ty;
    let value = r00 * w00 + r10 * w10 + r01 * w01 + r11 * w11;

    let gx = if clamped_x {
        0.0
    } else {
        ((r10 - r00) * (1.0 - ty) + (r11 - r01) * ty) / grid.hx
    };
    let gy = if clamped_y {
        0.0
    } else {
        ((r01 - r00) * (1.0 - tx) + (r11 - r10) * tx) / grid.hy
    };

    DensitySample {
        value,
        grad: Vec2::new(gx, gy),
        cells: [(c00, w00), (c10, w10), (c01, w01), (c11, w11)],
    }
}

/// Heun (explicit trapezoid) step for all agents: predictor with
/// `(rho_n, u(t_n))`, corrector averaging the slopes at `(rho_n, t_n)` and
/// `(rho_np1, t_np1)` with the predicted position.
pub fn step_agents(
    positions: &[Vec2],
    rho_n: &CellField,
    rho_np1: &CellField,
    u_n: &[Vec2],
    u_np1: &[Vec2],
    dt: f64,
    law: SpeedLaw,
    grid: &Grid,
) -> Result<Vec<Vec2>> {
    let mut out = Vec::with_capacity(positions.len());
    for (i, &x) in positions.iter().enumerate() {
        let s1 = sample_density_extended(rho_n, x, grid);
        let k1 = u_n[i] * law.f(s1.value);
        let predicted = x + k1 * dt;
        let s2 = sample_density_extended(rho_np1, predicted, grid);
        let k2 = u_np1[i] * law.f(s2.value);
        let next = x + (k1 + k2) * (0.5 * dt);
        if !next.is_finite() {
            return Err(Error::InvalidInput { context: "step_agents", value: f64::NAN });
        }
        out.push(next);
    }
    Ok(out)
}
