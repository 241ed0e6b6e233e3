//! Projected gradient descent over agent controls.
//!
//! Iterates `u <- P(u - s * grad_H1 j(u))` with pointwise radial projection
//! onto the unit ball at every time node, Armijo backtracking on the actual
//! objective, and the projected-gradient residual in the H1 norm as the
//! stationarity measure.

use serde::{Deserialize, Serialize};

use crate::agents::ControlTrajectory;
use crate::error::Result;
use crate::forward::solve_forward;
use crate::h1::H1Form;
use crate::objective::{evaluate, ObjectiveConfig};
use crate::scenario::Scenario;
use crate::sensitivity::solve_adjoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant, in (0, 1).
    pub armijo_c: f64,
    /// Step shrink factor, in (0, 1).
    pub backtrack: f64,
    pub initial_step: f64,
    /// Stationarity tolerance on the scaled projected-gradient residual.
    pub tol: f64,
    /// Line search gives up below this step size.
    pub min_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 50,
            armijo_c: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            tol: 1e-4,
            min_step: 1e-12,
        }
    }
}

impl OptimizerConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.max_iters == 0 {
            errs.push("optimizer.max_iters: must be >= 1".into());
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            errs.push(format!("optimizer.armijo_c: must lie in (0, 1), got {}", self.armijo_c));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            errs.push(format!("optimizer.backtrack: must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.initial_step > 0.0) {
            errs.push(format!("optimizer.initial_step: must be > 0, got {}", self.initial_step));
        }
        if !(self.tol > 0.0) {
            errs.push(format!("optimizer.tol: must be > 0, got {}", self.tol));
        }
        if !(self.min_step > 0.0) {
            errs.push(format!("optimizer.min_step: must be > 0, got {}", self.min_step));
        }
        errs
    }
}

/// Pointwise radial projection onto the unit ball at every time node.
pub fn project_controls(u: &ControlTrajectory) -> ControlTrajectory {
    let mut out = u.clone();
    for v in &mut out.data {
        let norm = v.norm();
        if norm > 1.0 {
            *v = *v * (1.0 / norm);
        }
    }
    out
}

/// One optimizer iteration record, written to `history.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Stationary,
    MaxIters,
    StepTooSmall,
}

pub struct OptimizeResult {
    pub controls: ControlTrajectory,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
    pub objective: f64,
}

fn h1_inner(a: &ControlTrajectory, b: &ControlTrajectory, t_final: f64) -> f64 {
    if a.n_agents == 0 {
        return 0.0;
    }
    let dt = t_final / (a.n_nodes as f64 - 1.0);
    let form = H1Form::new(a.n_nodes, dt);
    let mut acc = 0.0;
    let mut ca = vec![0.0; a.n_nodes];
    let mut cb = vec![0.0; a.n_nodes];
    for agent in 0..a.n_agents {
        for pick in [0usize, 1] {
            for n in 0..a.n_nodes {
                let (va, vb) = (a.get(agent, n), b.get(agent, n));
                ca[n] = if pick == 0 { va.x } else { va.y };
                cb[n] = if pick == 0 { vb.x } else { vb.y };
            }
            acc += form.inner(&ca, &cb);
        }
    }
    acc
}

fn h1_norm(a: &ControlTrajectory, t_final: f64) -> f64 {
    h1_inner(a, a, t_final).max(0.0).sqrt()
}

/// Projected H1 gradient descent with Armijo backtracking.
pub fn optimize(
    scenario: &Scenario,
    cfg: &ObjectiveConfig,
    opt: &OptimizerConfig,
    u0: &ControlTrajectory,
) -> Result<OptimizeResult> {
    let t_final = scenario.t_final();
    let mut u = project_controls(u0);
    let mut history = Vec::new();
    let mut step = opt.initial_step;

    let mut traj = solve_forward(scenario, &u)?;
    let mut value =
        evaluate(&traj, &u, cfg, &scenario.grid, scenario.dt(), t_final)?.total;

    for iter in 0..opt.max_iters {
        let grad = solve_adjoint(&traj, scenario, cfg)?;

        // projected-gradient residual, scaled by the gradient size
        let mut trial_full = u.clone();
        trial_full.axpy(-1.0, &grad.h1);
        let projected = project_controls(&trial_full);
        let mut residual = u.clone();
        residual.axpy(-1.0, &projected);
        let stationarity = h1_norm(&residual, t_final) / (1.0 + h1_norm(&grad.h1, t_final));

        if stationarity <= opt.tol {
            history.push(IterationRecord { iter, objective: value, stationarity, step: 0.0 });
            return Ok(OptimizeResult { controls: u, history, stop: StopReason::Stationary, objective: value });
        }

        // Armijo backtracking on the actual objective
        let mut s = step.min(opt.initial_step * 16.0);
        let mut accepted = None;
        while s >= opt.min_step {
            let mut candidate = u.clone();
            candidate.axpy(-s, &grad.h1);
            let candidate = project_controls(&candidate);
            let mut diff = u.clone();
            diff.axpy(-1.0, &candidate);
            let decrease = h1_inner(&grad.h1, &diff, t_final);
            if decrease > 0.0 {
                let trial_traj = solve_forward(scenario, &candidate)?;
                let trial_value =
                    evaluate(&trial_traj, &candidate, cfg, &scenario.grid, scenario.dt(), t_final)?
                        .total;
                if trial_value <= value - opt.armijo_c * decrease {
                    accepted = Some((candidate, trial_traj, trial_value, s));
                    break;
                }
            }
            s *= opt.backtrack;
        }

        match accepted {
            Some((new_u, new_traj, new_value, used)) => {
                history.push(IterationRecord { iter, objective: value, stationarity, step: used });
                u = new_u;
                traj = new_traj;
                value = new_value;
                step = used * 2.0;
            }
            None => {
                history.push(IterationRecord { iter, objective: value, stationarity, step: 0.0 });
                return Ok(OptimizeResult {
                    controls: u,
                    history,
                    stop: StopReason::StepTooSmall,
                    objective: value,
                });
            }
        }
    }

    let grad = solve_adjoint(&traj, scenario, cfg)?;
    let mut trial_full = u.clone();
    trial_full.axpy(-1.0, &grad.h1);
    let projected = project_controls(&trial_full);
    let mut residual = u.clone();
    residual.axpy(-1.0, &projected);
    let stationarity = h1_norm(&residual, t_final) / (1.0 + h1_norm(&grad.h1, t_final));
    history.push(IterationRecord { iter: opt.max_iters, objective: value, stationarity, step: 0.0 });
    Ok(OptimizeResult { controls: u, history, stop: StopReason::MaxIters, objective: value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec2::Vec2;

    #[test]
    fn projection_examples() {
        let mut u = ControlTrajectory::zeros(1, 3);
        u.set(0, 0, Vec2::new(0.3, -0.4));
        u.set(0, 1, Vec2::new(3.0, 4.0));
        let p = project_controls(&u);
        assert_eq!(p.get(0, 0), Vec2::new(0.3, -0.4));
        assert!((p.get(0, 1) - Vec2::new(0.6, 0.8)).norm() <= 1e-15);
        assert_eq!(p.get(0, 2), Vec2::ZERO);
    }
}
