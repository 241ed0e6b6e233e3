//! Regularized Eikonal solves via the exponential transformation.
//!
//! Instead of attacking `-delta1 lap(phi) + |grad phi|^2 = 1/(f(rho)^2 + delta2)`
//! with Newton iterations, we substitute `psi = exp(-phi/delta1) - 1`, which
//! turns the equation into the linear screened-Poisson problem
//!
//! ```text
//! -lap(psi) + q psi = -q,    q = 1 / (delta1^2 (f(rho)^2 + delta2))
//! ```
//!
//! with `psi = 0` on door faces and zero normal flux on walls. The system is
//! symmetric positive definite, so one factorization solves both the forward
//! problem and (by self-transposition) the adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryTag, CellField, Grid};
use crate::linsolve::{BandedCholesky, SymBanded};
use crate::model::SpeedLaw;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EikonalParams {
    /// Viscosity `delta1 > 0`.
    pub delta1: f64,
    /// Floor `delta2 > 0` keeping the right-hand side bounded at jam density.
    pub delta2: f64,
}

impl Default for EikonalParams {
    fn default() -> Self {
        EikonalParams { delta1: 0.5, delta2: 0.1 }
    }
}

/// Screened coefficient `q = 1 / (delta1^2 (f(rho)^2 + delta2))`, cellwise.
pub fn coefficient_q(rho: &CellField, params: &EikonalParams, law: SpeedLaw) -> CellField {
    let d1sq = params.delta1 * params.delta1;
    let mut q = rho.clone();
    for v in &mut q.data {
        let f = law.f(*v);
        *v = 1.0 / (d1sq * (f * f + params.delta2));
    }
    q
}

/// Derivative `dq/drho`, needed by the tangent and adjoint sweeps:
/// `q'(rho) = -2 f f' / (delta1^2 (f^2 + delta2)^2)`.
pub fn coefficient_q_prime(rho: &CellField, params: &EikonalParams, law: SpeedLaw) -> CellField {
    let d1sq = params.delta1 * params.delta1;
    let mut out = rho.clone();
    for v in &mut out.data {
        let f = law.f(*v);
        let fp = law.f_prime(*v);
        let denom = f * f + params.delta2;
        *v = -2.0 * f * fp / (d1sq * denom * denom);
    }
    out
}

/// Assemble the five-point operator `-lap_h + diag(q)` with Dirichlet ghost
/// closure (`ghost = -interior`) on door faces and zero-flux walls.
pub fn assemble_screened(grid: &Grid, q: &CellField) -> SymBanded {
    let n = grid.n_cells();
    let mut a = SymBanded::zeros(n, grid.nx);
    let ax = 1.0 / (grid.hx * grid.hx);
    let ay = 1.0 / (grid.hy * grid.hy);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.idx(i, j);
            let mut diag = q.data[c];
            // x-direction neighbours
            if i > 0 {
                diag += ax;
                a.add(c, grid.idx(i - 1, j), -ax);
            } else if grid.left[j] == BoundaryTag::Door {
                diag += 2.0 * ax;
            }
            if i + 1 < grid.nx {
                diag += ax;
            } else if grid.right[j] == BoundaryTag::Door {
                diag += 2.0 * ax;
            }
            // y-direction neighbours
            if j > 0 {
                diag += ay;
                a.add(c, grid.idx(i, j - 1), -ay);
            } else if grid.bottom[i] == BoundaryTag::Door {
                diag += 2.0 * ay;
            }
            if j + 1 < grid.ny {
                diag += ay;
            } else if grid.top[i] == BoundaryTag::Door {
                diag += 2.0 * ay;
            }
            a.add(c, c, diag);
        }
    }
    a
}

/// Factorized screened operator, reusable for forward, tangent and adjoint
/// solves of the same time step.
pub struct ScreenedSolve {
    pub matrix: SymBanded,
    factor: BandedCholesky,
}

impl ScreenedSolve {
    pub fn new(grid: &Grid, q: &CellField) -> Result<Self> {
        let matrix = assemble_screened(grid, q);
        let factor = matrix.clone().cholesky()?;
        Ok(ScreenedSolve { matrix, factor })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }
}

const RESIDUAL_TOL: f64 = 1e-10;

/// Solve `(-lap_h + diag(q)) psi = rhs` and verify the residual.
pub fn solve_screened_poisson(q: &CellField, rhs: &CellField, grid: &Grid) -> Result<CellField> {
    if q.data.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput {
            context: "solve_screened_poisson (q must be strictly positive)",
            value: q.min(),
        });
    }
    let solver = ScreenedSolve::new(grid, q)?;
    let psi = solver.solve(&rhs.data);

    let mut residual = vec![0.0; psi.len()];
    solver.matrix.apply(&psi, &mut residual);
    let norm_b = rhs.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_r = residual
        .iter()
        .zip(&rhs.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if norm_b > 0.0 && norm_r > RESIDUAL_TOL * norm_b {
        return Err(Error::SolverFailure {
            context: "solve_screened_poisson",
            residual: norm_r / norm_b,
            iterations: 1,
            tolerance: RESIDUAL_TOL,
        });
    }
    Ok(CellField { nx: grid.nx, ny: grid.ny, data: psi })
}

/// Invert the exponential transform: `phi = -delta1 ln(1 + psi)`.
///
/// Requires `min(psi) > -1`; a violation signals a broken discrete maximum
/// principle and is reported as an error rather than clamped.
pub fn potential_from_psi(psi: &CellField, delta1: f64) -> Result<CellField> {
    let min = psi.min();
    if min <= -1.0 + 1e-12 {
        return Err(Error::InvariantViolation {
            context: "potential_from_psi",
            detail: format!("min(psi) = {min:.6e} violates psi > -1; the transform is singular"),
        });
    }
    let mut phi = psi.clone();
    for v in &mut phi.data {
        *v = -delta1 * (1.0 + *v).ln();
    }
    Ok(phi)
}

/// Result of one Eikonal solve.
pub struct EikonalSolution {
    pub phi: CellField,
    pub psi: CellField,
    pub q: CellField,
}

/// Composition: coefficient, screened solve with `rhs = -q`, back-transform.
pub fn solve_eikonal(
    rho: &CellField,
    params: &EikonalParams,
    law: SpeedLaw,
    grid: &Grid,
) -> Result<EikonalSolution> {
    let q = coefficient_q(rho, params, law);
    let mut rhs = q.clone();
    rhs.scale(-1.0);
    let psi = solve_screened_poisson(&q, &rhs, grid)?;
    let phi = potential_from_psi(&psi, params.delta1)?;
    Ok(EikonalSolution { phi, psi, q })
}
