//! The coupled forward loop.
//!
//! Per step `n`: solve the potential from `rho^n`, build the transport field
//! with the agent positions `x^n`, advance the density, then advance the
//! agents using both `rho^n` and `rho^{n+1}`. Everything is recorded for the
//! objective evaluation and the adjoint sweep (no checkpointing; desk-scale
//! state histories fit in memory).

use crate::agents::{step_agents, ControlTrajectory};
use crate::density::{advance_density, boundary_outflux, transport_field, DiffusionSolve, TransportField};
use crate::eikonal::solve_eikonal;
use crate::error::{Error, Result};
use crate::grid::{integrate_cell_field, CellField};
use crate::scenario::Scenario;
use crate::vec2::Vec2;

/// Complete recorded state history of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    /// `n_steps + 1` density fields.
    pub rho: Vec<CellField>,
    /// Potential and transformed potential at every node.
    pub phi: Vec<CellField>,
    pub psi: Vec<CellField>,
    /// Transport field used in step `n` (length `n_steps`).
    pub transport: Vec<TransportField>,
    /// Agent positions at every node.
    pub agents: Vec<Vec<Vec2>>,
    /// Total mass at every node.
    pub mass: Vec<f64>,
    /// Door discharge rate at every node; entry `n >= 1` is exactly the rate
    /// drained during step `n-1`, so
    /// `mass[0] - mass[N] = dt * sum_{n=1..N} outflux[n]`.
    pub outflux: Vec<f64>,
    /// Number of domain-boundary crossings of agent path segments.
    pub wall_crossings: usize,
    /// The controls that produced this trajectory; the tangent and adjoint
    /// sweeps re-linearize the agent steps around them.
    pub controls: ControlTrajectory,
}

impl ForwardTrajectory {
    pub fn n_steps(&self) -> usize {
        self.rho.len() - 1
    }
}

/// Run the coupled ODE-PDE system forward in time.
pub fn solve_forward(
    scenario: &Scenario,
    controls: &ControlTrajectory,
) -> Result<ForwardTrajectory> {
    let grid = &scenario.grid;
    let n_steps = scenario.n_steps();
    let dt = scenario.dt();
    let law = scenario.law();
    let kernel = scenario.kernel();
    let projection = scenario.projection();
    let eikonal_params = scenario.eikonal_params();
    let density_params = scenario.density_params();

    if controls.n_agents != scenario.n_agents() || controls.n_nodes != n_steps + 1 {
        return Err(Error::InvariantViolation {
            context: "solve_forward",
            detail: format!(
                "controls have shape {}x{}, scenario needs {}x{}",
                controls.n_agents,
                controls.n_nodes,
                scenario.n_agents(),
                n_steps + 1
            ),
        });
    }
    controls.check_admissible(1e-12)?;

    let diffusion = DiffusionSolve::new(grid, &density_params)?;

    let mut rho = Vec::with_capacity(n_steps + 1);
    let mut phi = Vec::with_capacity(n_steps + 1);
    let mut psi = Vec::with_capacity(n_steps + 1);
    let mut transport = Vec::with_capacity(n_steps);
    let mut agents = Vec::with_capacity(n_steps + 1);
    let mut mass = Vec::with_capacity(n_steps + 1);
    let mut outflux = Vec::with_capacity(n_steps + 1);
    let mut wall_crossings = 0usize;

    rho.push(scenario.rho0.clone());
    agents.push(scenario.agents0.clone());
    mass.push(integrate_cell_field(&scenario.rho0, grid));
    outflux.push(boundary_outflux(&scenario.rho0, &density_params, grid));

    for n in 0..n_steps {
        let rho_n = &rho[n];
        let (phi_n, psi_n) = if scenario.sealed {
            (CellField::zeros(grid), CellField::zeros(grid))
        } else {
            let sol = solve_eikonal(rho_n, &eikonal_params, law, grid).map_err(|e| e.at_step(n))?;
            (sol.phi, sol.psi)
        };
        let t_n = transport_field(&phi_n, &agents[n], &kernel, &projection, grid)
            .map_err(|e| e.at_step(n))?;

        let rho_next = advance_density(rho_n, &t_n, &diffusion, &density_params, law, grid)
            .map_err(|e| e.at_step(n))?;

        let u_n: Vec<Vec2> = (0..controls.n_agents).map(|a| controls.get(a, n)).collect();
        let u_np1: Vec<Vec2> = (0..controls.n_agents).map(|a| controls.get(a, n + 1)).collect();
        let next_agents = step_agents(&agents[n], rho_n, &rho_next, &u_n, &u_np1, dt, law, grid)
            .map_err(|e| e.at_step(n))?;
        for (a, b) in agents[n].iter().zip(&next_agents) {
            if grid.contains(*a) != grid.contains(*b) {
                wall_crossings += 1;
            }
        }

        phi.push(phi_n);
        psi.push(psi_n);
        transport.push(t_n);
        mass.push(integrate_cell_field(&rho_next, grid));
        outflux.push(boundary_outflux(&rho_next, &density_params, grid));
        rho.push(rho_next);
        agents.push(next_agents);
    }

    // potential at the final node, for recording and invariant checks
    let (phi_last, psi_last) = if scenario.sealed {
        (CellField::zeros(grid), CellField::zeros(grid))
    } else {
        let sol = solve_eikonal(&rho[n_steps], &eikonal_params, law, grid)
            .map_err(|e| e.at_step(n_steps))?;
        (sol.phi, sol.psi)
    };
    phi.push(phi_last);
    psi.push(psi_last);

    Ok(ForwardTrajectory {
        rho,
        phi,
        psi,
        transport,
        agents,
        mass,
        outflux,
        wall_crossings,
        controls: controls.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn scenario_from(text: &str) -> Scenario {
        let cfg = ScenarioConfig::from_toml_str(text, "test").unwrap();
        Scenario::from_config(cfg).unwrap()
    }

    const DOOR_SCENARIO: &str = r#"
[geometry]
lx = 2.0
ly = 2.0
nx = 12
ny = 12

[[geometry.door]]
side = "right"
from = 0.5
to = 1.5

[physics]
eps = 0.04

[agents]
positions = [[0.6, 1.0]]

[time]
t_final = 0.4
steps = 16

[initial_density]
kind = "box"
value = 0.8
x0 = 0.2
x1 = 1.0
y0 = 0.5
y1 = 1.5
"#;

    const SEALED_SCENARIO: &str = r#"
[geometry]
lx = 1.0
ly = 1.0
nx = 10
ny = 10
sealed = true

[physics]
eps = 0.03

[time]
t_final = 0.2
steps = 20

[initial_density]
kind = "bumps"
background = 0.1

[[initial_density.bumps]]
cx = 0.4
cy = 0.6
radius = 0.3
height = 0.5
"#;

    #[test]
    fn empty_room_stays_empty_and_agents_run_free() {
        let text = DOOR_SCENARIO
            .replace("kind = \"box\"", "kind = \"constant\"")
            .replace("value = 0.8\nx0 = 0.2\nx1 = 1.0\ny0 = 0.5\ny1 = 1.5", "value = 0.0");
        let scenario = scenario_from(&text);
        let mut controls = scenario.initial_controls();
        for n in 0..controls.n_nodes {
            controls.set(0, n, crate::vec2::Vec2::new(1.0, 0.0));
        }
        let traj = solve_forward(&scenario, &controls).unwrap();
        assert!(traj.rho.iter().all(|r| r.linf() == 0.0));
        // f(0) = 1, so the agent moves at unit speed along u
        let moved = traj.agents[traj.n_steps()][0] - traj.agents[0][0];
        assert!((moved.x - scenario.t_final()).abs() <= 1e-12);
        assert!(moved.y.abs() <= 1e-13);
    }

    #[test]
    fn sealed_room_conserves_mass() {
        let scenario = scenario_from(SEALED_SCENARIO);
        let controls = scenario.initial_controls();
        let traj = solve_forward(&scenario, &controls).unwrap();
        let m0 = traj.mass[0];
        for m in &traj.mass {
            assert!((m - m0).abs() <= 1e-11 * m0, "mass drift {}", (m - m0) / m0);
        }
        assert!(traj.outflux.iter().all(|o| *o == 0.0));
    }

    #[test]
    fn door_scenario_drains_mass_and_balances_outflux() {
        let scenario = scenario_from(DOOR_SCENARIO);
        let controls = scenario.initial_controls();
        let traj = solve_forward(&scenario, &controls).unwrap();
        let n = traj.n_steps();
        assert!(traj.mass[n] < traj.mass[0]);
        for w in traj.mass.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "mass must be non-increasing");
        }
        let drained: f64 = traj.outflux[1..].iter().sum::<f64>() * scenario.dt();
        let lost = traj.mass[0] - traj.mass[n];
        assert!(
            (drained - lost).abs() <= 1e-10 * traj.mass[0],
            "bookkeeping mismatch: drained {drained}, lost {lost}"
        );
    }

    #[test]
    fn box_and_psi_invariants_hold_along_the_way() {
        let scenario = scenario_from(DOOR_SCENARIO);
        let traj = solve_forward(&scenario, &scenario.initial_controls()).unwrap();
        for (rho, (phi, psi)) in traj.rho.iter().zip(traj.phi.iter().zip(&traj.psi)) {
            assert!(rho.min() >= -1e-10 && rho.max() <= 1.0 + 1e-10);
            assert!(psi.min() > -1.0 && psi.max() <= 1e-12);
            assert!(phi.min() >= -1e-12);
        }
    }

    #[test]
    fn restart_matches_uninterrupted_run() {
        let scenario = scenario_from(DOOR_SCENARIO);
        let controls = scenario.initial_controls();
        let full = solve_forward(&scenario, &controls).unwrap();

        // first half
        let mut cfg_a = scenario.config.clone();
        cfg_a.time.steps = 8;
        cfg_a.time.t_final = 0.2;
        let sc_a = Scenario::from_config(cfg_a).unwrap();
        let controls_a = sc_a.initial_controls();
        let half = solve_forward(&sc_a, &controls_a).unwrap();

        // second half restarted from the recorded state
        let mut cfg_b = sc_a.config.clone();
        cfg_b.initial_density = scenario.config.initial_density.clone();
        let mut sc_b = Scenario::from_config(cfg_b).unwrap();
        sc_b.rho0 = half.rho[8].clone();
        sc_b.agents0 = half.agents[8].clone();
        let controls_b = sc_b.initial_controls();
        let second = solve_forward(&sc_b, &controls_b).unwrap();

        let diff = full.rho[16]
            .data
            .iter()
            .zip(&second.rho[8].data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-12, "restart drift {diff}");
        let agent_diff = (full.agents[16][0] - second.agents[8][0]).norm();
        assert!(agent_diff <= 1e-12);
    }

    #[test]
    fn deterministic_replay_is_bitwise() {
        let scenario = scenario_from(DOOR_SCENARIO);
        let controls = scenario.initial_controls();
        let a = solve_forward(&scenario, &controls).unwrap();
        let b = solve_forward(&scenario, &controls).unwrap();
        for (ra, rb) in a.rho.iter().zip(&b.rho) {
            assert_eq!(ra.data, rb.data);
        }
        for (xa, xb) in a.agents.iter().zip(&b.agents) {
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn control_shape_mismatch_is_rejected() {
        let scenario = scenario_from(DOOR_SCENARIO);
        let bad = ControlTrajectory::zeros(2, scenario.n_nodes());
        assert!(solve_forward(&scenario, &bad).is_err());
    }
}
