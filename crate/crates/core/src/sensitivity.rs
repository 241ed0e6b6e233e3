//! Exact differentiation of the discrete forward map.
//!
//! The tangent sweep applies the derivative of every implemented step
//! (linearized screened-Poisson solve through the coefficient, frozen-upwind
//! advection, the constant diffusion solve, and the chain rule through the
//! Heun agent step). The adjoint sweep applies the transposes in reverse
//! order; both symmetric solves are their own transposes, so the reduced
//! gradient is the exact gradient of the computed objective up to solver
//! rounding. Upwind donors and interpolation stencils are frozen at the base
//! trajectory (a Clarke-style choice at the nonsmooth points); faces whose
//! transport value sits within 1e-14 of an upwind switch are counted and
//! reported.

use crate::agents::{sample_density_extended, ControlTrajectory, DensitySample};
use crate::density::{
    face_cells, face_center, for_each_gradient_weight, interior_face_vectors, interior_faces, DiffusionSolve,
    Face,
};
use crate::eikonal::{coefficient_q, coefficient_q_prime, ScreenedSolve};
use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::grid::CellField;
use crate::h1::H1Form;
use crate::objective::{gradient_wrt_trajectory, penalty_gradient, ObjectiveConfig};
use crate::scenario::Scenario;
use crate::vec2::Vec2;

const SWITCH_TOL: f64 = 1e-14;

/// Directional state derivative along a control direction.
#[derive(Debug, Clone)]
pub struct TangentState {
    /// Density sensitivities at every node (`rho_tilde(0) = 0`).
    pub rho: Vec<CellField>,
    /// Potential sensitivities at every node.
    pub phi: Vec<CellField>,
    /// Agent-position sensitivities at every node (`x_tilde(0) = 0`).
    pub agents: Vec<Vec<Vec2>>,
    /// Faces whose upwind donor was within `1e-14` of switching.
    pub near_switch_faces: usize,
}

/// Cotangents on the recorded trajectory, the input of the adjoint sweep.
/// Objective seeds populate `rho`; `agents` is available for dot tests.
#[derive(Debug, Clone)]
pub struct AdjointSeed {
    pub rho: Vec<CellField>,
    pub agents: Vec<Vec<Vec2>>,
}

impl AdjointSeed {
    pub fn zeros(scenario: &Scenario) -> Self {
        let n_nodes = scenario.n_steps() + 1;
        AdjointSeed {
            rho: (0..n_nodes).map(|_| CellField::zeros(&scenario.grid)).collect(),
            agents: vec![vec![Vec2::ZERO; scenario.n_agents()]; n_nodes],
        }
    }
}

/// Reduced gradient with respect to the control coefficients.
#[derive(Debug, Clone)]
pub struct ReducedGradient {
    /// Plain coefficient gradient: `dJ = sum l2[a][n] . du[a][n]`.
    pub l2: ControlTrajectory,
    /// H1 representative: `dJ = <h1, du>_H1`.
    pub h1: ControlTrajectory,
    pub near_switch_faces: usize,
}

/// Everything a step's linearization needs, recomputed deterministically
/// from the recorded base trajectory.
struct StepContext {
    screened: Option<ScreenedSolve>,
    q_prime: CellField,
    one_plus_psi: Vec<f64>,
    face_vectors: Vec<Vec2>,
    s1: Vec<DensitySample>,
    s2: Vec<DensitySample>,
    f1: Vec<f64>,
    f1p: Vec<f64>,
    f2: Vec<f64>,
    f2p: Vec<f64>,
    u_n: Vec<Vec2>,
    u_np1: Vec<Vec2>,
    near_switch: usize,
}

fn step_context(base: &ForwardTrajectory, scenario: &Scenario, n: usize) -> Result<StepContext> {
    let grid = &scenario.grid;
    let law = scenario.law();
    let dt = scenario.dt();
    let rho_n = &base.rho[n];
    let psi_n = &base.psi[n];
    let eik = scenario.eikonal_params();

    let screened = if scenario.sealed {
        None
    } else {
        let q = coefficient_q(rho_n, &eik, law);
        Some(ScreenedSolve::new(grid, &q).map_err(|e| e.at_step(n))?)
    };
    let q_prime = coefficient_q_prime(rho_n, &eik, law);
    let one_plus_psi: Vec<f64> = psi_n.data.iter().map(|p| 1.0 + p).collect();

    let face_vectors = interior_face_vectors(&base.phi[n], &base.agents[n], &scenario.kernel(), grid);
    let mut near_switch = 0usize;
    for (face, _) in interior_faces(grid).zip(&face_vectors) {
        let t = match face {
            Face::X { fi, j } => base.transport[n].normal.xf(fi, j),
            Face::Y { i, fj } => base.transport[n].normal.yf(i, fj),
        };
        if t.abs() <= SWITCH_TOL {
            let (minus, plus) = face_cells(grid, face);
            if (law.g(rho_n.data[minus]) - law.g(rho_n.data[plus])).abs() > 0.0 {
                near_switch += 1;
            }
        }
    }

    let m = scenario.n_agents();
    let controls = &base.controls;
    let u_n: Vec<Vec2> = (0..m).map(|a| controls.get(a, n)).collect();
    let u_np1: Vec<Vec2> = (0..m).map(|a| controls.get(a, n + 1)).collect();
    let mut s1 = Vec::with_capacity(m);
    let mut s2 = Vec::with_capacity(m);
    let mut f1 = Vec::with_capacity(m);
    let mut f1p = Vec::with_capacity(m);
    let mut f2 = Vec::with_capacity(m);
    let mut f2p = Vec::with_capacity(m);
    for i in 0..m {
        let x = base.agents[n][i];
        let a = sample_density_extended(rho_n, x, grid);
        let predicted = x + u_n[i] * (law.f(a.value) * dt);
        let b = sample_density_extended(&base.rho[n + 1], predicted, grid);
        f1.push(law.f(a.value));
        f1p.push(law.f_prime(a.value));
        f2.push(law.f(b.value));
        f2p.push(law.f_prime(b.value));
        s1.push(a);
        s2.push(b);
    }

    Ok(StepContext {
        screened,
        q_prime,
        one_plus_psi,
        face_vectors,
        s1,
        s2,
        f1,
        f1p,
        f2,
        f2p,
        u_n,
        u_np1,
        near_switch,
    })
}

/// Tangent of the potential solve: `rho_tilde -> phi_tilde`.
fn eikonal_tangent(ctx: &StepContext, tr: &CellField, delta1: f64) -> CellField {
    let mut out = tr.clone();
    match &ctx.screened {
        None => {
            out.data.fill(0.0);
            out
        }
        Some(solver) => {
            let rhs: Vec<f64> = tr
                .data
                .iter()
                .zip(&ctx.q_prime.data)
                .zip(&ctx.one_plus_psi)
                .map(|((r, qp), op)| -(op * qp * r))
                .collect();
            let tpsi = solver.solve(&rhs);
            for (k, v) in out.data.iter_mut().enumerate() {
                *v = -delta1 * tpsi[k] / ctx.one_plus_psi[k];
            }
            out
        }
    }
}

/// Transpose of [`eikonal_tangent`]: `w_phi -> contribution to w_rho`.
fn eikonal_adjoint(ctx: &StepContext, w_phi: &CellField, delta1: f64, w_rho: &mut CellField) {
    if let Some(solver) = &ctx.screened {
        let w_psi: Vec<f64> = w_phi
            .data
            .iter()
            .zip(&ctx.one_plus_psi)
            .map(|(w, op)| -delta1 * w / op)
            .collect();
        let lambda = solver.solve(&w_psi);
        for (k, w) in w_rho.data.iter_mut().enumerate() {
            *w += ctx.q_prime.data[k] * (-(ctx.one_plus_psi[k]) * lambda[k]);
        }
    }
}

/// Solve the tangent (directional-derivative) system along `du`.
pub fn solve_tangent(
    base: &ForwardTrajectory,
    scenario: &Scenario,
    du: &ControlTrajectory,
) -> Result<TangentState> {
    let grid = &scenario.grid;
    let law = scenario.law();
    let proj = scenario.projection();
    let kernel = scenario.kernel();
    let dt = scenario.dt();
    let delta1 = scenario.eikonal_params().delta1;
    let n_steps = base.n_steps();
    let m = scenario.n_agents();

    if du.n_agents != m || du.n_nodes != n_steps + 1 {
        return Err(Error::InvariantViolation {
            context: "solve_tangent",
            detail: "control direction has the wrong shape".into(),
        });
    }

    let diffusion = DiffusionSolve::new(grid, &scenario.density_params())?;
    let mut rho = Vec::with_capacity(n_steps + 1);
    let mut phi = Vec::with_capacity(n_steps + 1);
    let mut agents = Vec::with_capacity(n_steps + 1);
    rho.push(CellField::zeros(grid));
    agents.push(vec![Vec2::ZERO; m]);
    let mut near_switch = 0usize;

    for n in 0..n_steps {
        let ctx = step_context(base, scenario, n)?;
        near_switch += ctx.near_switch;
        let tr = rho[n].clone();
        let tx = agents[n].clone();

        let tphi = eikonal_tangent(&ctx, &tr, delta1);

        // advective tangent with frozen upwind donors
        let mut ta = tr.clone();
        for ((face, v), k) in interior_faces(grid).zip(&ctx.face_vectors).zip(0usize..) {
            let _ = k;
            let (minus, plus) = face_cells(grid, face);
            let (t, h) = match face {
                Face::X { fi, j } => (base.transport[n].normal.xf(fi, j), grid.hx),
                Face::Y { i, fj } => (base.transport[n].normal.yf(i, fj), grid.hy),
            };
            let donor = if t > 0.0 { plus } else { minus };

            // transport tangent at this face
            let mut tv = Vec2::ZERO;
            for_each_gradient_weight(grid, face, |cell, wx, wy| {
                let p = tphi.data[cell];
                tv.x += wx * p;
                tv.y += wy * p;
            });
            let fc = face_center(grid, face);
            for (i, &xi) in base.agents[n].iter().enumerate() {
                let hess = kernel.hessian(fc - xi);
                tv += -hess.apply(tx[i]);
            }
            let dh = proj.dh(*v);
            let tt = match face {
                Face::X { .. } => dh.apply(tv).x,
                Face::Y { .. } => dh.apply(tv).y,
            };

            let tf = law.g_prime(base.rho[n].data[donor]) * tr.data[donor] * t
                + law.g(base.rho[n].data[donor]) * tt;
            ta.data[minus] += dt * tf / h;
            ta.data[plus] -= dt * tf / h;
        }
        let tr_next = CellField { nx: grid.nx, ny: grid.ny, data: diffusion.solve(&ta.data) };

        // Heun tangent
        let mut tx_next = vec![Vec2::ZERO; m];
        for i in 0..m {
            let s1 = &ctx.s1[i];
            let s2 = &ctx.s2[i];
            let inner1 = s1.grad.dot(tx[i])
                + s1.cells.iter().map(|(c, w)| w * tr.data[*c]).sum::<f64>();
            let tk1 = ctx.u_n[i] * (ctx.f1p[i] * inner1) + du.get(i, n) * ctx.f1[i];
            let tpred = tx[i] + tk1 * dt;
            let inner2 = s2.grad.dot(tpred)
                + s2.cells.iter().map(|(c, w)| w * tr_next.data[*c]).sum::<f64>();
            let tk2 = ctx.u_np1[i] * (ctx.f2p[i] * inner2) + du.get(i, n + 1) * ctx.f2[i];
            tx_next[i] = tx[i] + (tk1 + tk2) * (0.5 * dt);
        }

        phi.push(tphi);
        rho.push(tr_next);
        agents.push(tx_next);
    }

    // tangent of the recorded final-node potential
    let ctx = step_context_final(base, scenario)?;
    let tphi_last = eikonal_tangent(&ctx, &rho[n_steps], delta1);
    phi.push(tphi_last);

    Ok(TangentState { rho, phi, agents, near_switch_faces: near_switch })
}

/// Context for the final node (only the potential linearization is needed).
fn step_context_final(base: &ForwardTrajectory, scenario: &Scenario) -> Result<StepContext> {
    let grid = &scenario.grid;
    let law = scenario.law();
    let n = base.n_steps();
    let eik = scenario.eikonal_params();
    let screened = if scenario.sealed {
        None
    } else {
        let q = coefficient_q(&base.rho[n], &eik, law);
        Some(ScreenedSolve::new(grid, &q).map_err(|e| e.at_step(n))?)
    };
    Ok(StepContext {
        screened,
        q_prime: coefficient_q_prime(&base.rho[n], &eik, law),
        one_plus_psi: base.psi[n].data.iter().map(|p| 1.0 + p).collect(),
        face_vectors: Vec::new(),
        s1: Vec::new(),
        s2: Vec::new(),
        f1: Vec::new(),
        f1p: Vec::new(),
        f2: Vec::new(),
        f2p: Vec::new(),
        u_n: Vec::new(),
        u_np1: Vec::new(),
        near_switch: 0,
    })
}

/// Transpose sweep: trajectory cotangents in, control cotangents out.
/// The returned trajectory pairs with control directions by the plain
/// coefficient dot product.
pub fn adjoint_sweep(
    base: &ForwardTrajectory,
    scenario: &Scenario,
    seed: &AdjointSeed,
) -> Result<(ControlTrajectory, usize)> {
    let grid = &scenario.grid;
    let law = scenario.law();
    let proj = scenario.projection();
    let kernel = scenario.kernel();
    let dt = scenario.dt();
    let delta1 = scenario.eikonal_params().delta1;
    let n_steps = base.n_steps();
    let m = scenario.n_agents();

    if seed.rho.len() != n_steps + 1 || seed.agents.len() != n_steps + 1 {
        return Err(Error::InvariantViolation {
            context: "adjoint_sweep",
            detail: "seed must provide cotangents at every time node".into(),
        });
    }

    let diffusion = DiffusionSolve::new(grid, &scenario.density_params())?;
    let mut w_u = ControlTrajectory::zeros(m, n_steps + 1);
    let mut wr = seed.rho[n_steps].clone();
    let mut wx = seed.agents[n_steps].clone();
    let mut near_switch = 0usize;

    for n in (0..n_steps).rev() {
        let ctx = step_context(base, scenario, n)?;
        near_switch += ctx.near_switch;
        let mut new_wr = CellField::zeros(grid);
        let mut new_wx = vec![Vec2::ZERO; m];

        // transpose of the Heun step; feeds wr (cotangent on rho^{n+1})
        // before the density transpose consumes it
        for i in 0..m {
            let wxi = wx[i];
            let s1 = &ctx.s1[i];
            let s2 = &ctx.s2[i];

            let mut w_tx = wxi;
            let mut w_tk1 = wxi * (0.5 * dt);

            let w_inner2 = wxi.dot(ctx.u_np1[i]) * (0.5 * dt) * ctx.f2p[i];
            let mut g2 = wx[i];
            g2 = g2 * (ctx.f2[i] * 0.5 * dt);
            let prev = w_u.get(i, n + 1);
            w_u.set(i, n + 1, prev + g2);

            let w_tpred = s2.grad * w_inner2;
            w_tx += w_tpred;
            w_tk1 += w_tpred * dt;
            for (cell, w) in s2.cells {
                wr.data[cell] += w_inner2 * w;
            }

            let w_inner1 = w_tk1.dot(ctx.u_n[i]) * ctx.f1p[i];
            w_tx += s1.grad * w_inner1;
            for (cell, w) in s1.cells {
                new_wr.data[cell] += w_inner1 * w;
            }
            let prev = w_u.get(i, n);
            w_u.set(i, n, prev + w_tk1 * ctx.f1[i]);

            new_wx[i] = w_tx;
        }

        // transpose of the density step
        let lambda = CellField { nx: grid.nx, ny: grid.ny, data: diffusion.solve(&wr.data) };
        new_wr.axpy(1.0, &lambda);
        let mut w_phi = CellField::zeros(grid);
        for (face, v) in interior_faces(grid).zip(&ctx.face_vectors) {
            let (minus, plus) = face_cells(grid, face);
            let (t, h) = match face {
                Face::X { fi, j } => (base.transport[n].normal.xf(fi, j), grid.hx),
                Face::Y { i, fj } => (base.transport[n].normal.yf(i, fj), grid.hy),
            };
            let donor = if t > 0.0 { plus } else { minus };
            let w_f = dt * (lambda.data[minus] - lambda.data[plus]) / h;
            new_wr.data[donor] += w_f * law.g_prime(base.rho[n].data[donor]) * t;
            let w_t = w_f * law.g(base.rho[n].data[donor]);

            // transpose of the transport assembly at this face
            let dh = proj.dh(*v);
            let w_v = match face {
                Face::X { .. } => Vec2::new(dh.xx * w_t, dh.xy * w_t),
                Face::Y { .. } => Vec2::new(dh.xy * w_t, dh.yy * w_t),
            };
            for_each_gradient_weight(grid, face, |cell, wgx, wgy| {
                w_phi.data[cell] += wgx * w_v.x + wgy * w_v.y;
            });
            let fc = face_center(grid, face);
            for (i, &xi) in base.agents[n].iter().enumerate() {
                let hess = kernel.hessian(fc - xi);
                new_wx[i] += -hess.apply(w_v);
            }
        }

        // transpose of the potential solve
        eikonal_adjoint(&ctx, &w_phi, delta1, &mut new_wr);

        new_wr.axpy(1.0, &seed.rho[n]);
        for (a, s) in new_wx.iter_mut().zip(&seed.agents[n]) {
            *a += *s;
        }
        wr = new_wr;
        wx = new_wx;
    }

    Ok((w_u, near_switch))
}

/// H1 Riesz representative of a coefficient gradient: per agent and per
/// component, solve the tridiagonal system `B v = g`.
pub fn riesz_h1(l2: &ControlTrajectory, t_final: f64) -> ControlTrajectory {
    let mut out = ControlTrajectory::zeros(l2.n_agents, l2.n_nodes);
    if l2.n_agents == 0 {
        return out;
    }
    let dt = t_final / (l2.n_nodes as f64 - 1.0);
    let form = H1Form::new(l2.n_nodes, dt);
    let mut comp = vec![0.0; l2.n_nodes];
    for agent in 0..l2.n_agents {
        for pick in [0usize, 1] {
            for n in 0..l2.n_nodes {
                let v = l2.get(agent, n);
                comp[n] = if pick == 0 { v.x } else { v.y };
            }
            let sol = form.solve(&comp);
            for n in 0..l2.n_nodes {
                let mut v = out.get(agent, n);
                if pick == 0 {
                    v.x = sol[n];
                } else {
                    v.y = sol[n];
                }
                out.set(agent, n, v);
            }
        }
    }
    out
}

/// Reduced gradient of the configured objective at the base trajectory.
pub fn solve_adjoint(
    base: &ForwardTrajectory,
    scenario: &Scenario,
    cfg: &ObjectiveConfig,
) -> Result<ReducedGradient> {
    let seed = AdjointSeed {
        rho: gradient_wrt_trajectory(base, cfg, &scenario.grid, scenario.dt(), scenario.t_final())?,
        agents: vec![vec![Vec2::ZERO; scenario.n_agents()]; base.n_steps() + 1],
    };
    let (mut l2, near_switch) = adjoint_sweep(base, scenario, &seed)?;
    let pen = penalty_gradient(&base.controls, cfg.alpha, scenario.t_final());
    l2.axpy(1.0, &pen);
    let h1 = riesz_h1(&l2, scenario.t_final());
    Ok(ReducedGradient { l2, h1, near_switch_faces: near_switch })
}

/// Pairing of a tangent state with an adjoint seed: the plain sum of
/// coefficient products over all nodes. Used by the duality tests.
pub fn pair_tangent_seed(tangent: &TangentState, seed: &AdjointSeed) -> f64 {
    let mut acc = 0.0;
    for (tr, sr) in tangent.rho.iter().zip(&seed.rho) {
        acc += tr.dot(sr);
    }
    for (tx, sx) in tangent.agents.iter().zip(&seed.agents) {
        for (a, b) in tx.iter().zip(sx) {
            acc += a.dot(*b);
        }
    }
    acc
}
