//! Density transport: face-normal transport field and the IMEX step.
//!
//! One time step performs
//!   1. an explicit, donor-cell upwinded divergence of the advective flux
//!      `F = g(rho_upwind) * T` over interior faces, and
//!   2. an implicit backward-Euler diffusion solve whose matrix carries the
//!      door outflow as Robin rows (`flux out = eta * rho_cell`).
//!
//! Advective normal fluxes vanish on all boundary faces; the entire door
//! discharge sits in the Robin rows. The advective divergence then
//! telescopes exactly and the discrete mass identity
//! `mass(t_{n+1}) - mass(t_n) = -dt * boundary_outflux(rho_{n+1})`
//! holds to solver precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryTag, CellField, FaceField, Grid};
use crate::linsolve::{BandedCholesky, SymBanded};
use crate::model::{KernelParams, ProjectionParams, SpeedLaw};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Diffusion coefficient `eps > 0` (m^2/s).
    pub eps: f64,
    /// Door outflow velocity `eta > 0` (m/s).
    pub eta_out: f64,
    /// Time step (s).
    pub dt: f64,
}

/// Face-normal component of the projected direction `h(grad(phi + phi_K))`.
/// All values lie in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportField {
    pub normal: FaceField,
}

/// Box-constraint tolerance used for both the pre- and post-state checks.
pub const BOX_TOL: f64 = 1e-10;

/// Interior face identifier. x-faces `fi in 1..nx` separate cells
/// `(fi-1, j)` and `(fi, j)`; y-faces `fj in 1..ny` separate `(i, fj-1)`
/// and `(i, fj)`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Face {
    X { fi: usize, j: usize },
    Y { i: usize, fj: usize },
}

pub(crate) fn interior_faces(grid: &Grid) -> impl Iterator<Item = Face> + '_ {
    let xs = (0..grid.ny)
        .flat_map(move |j| (1..grid.nx).map(move |fi| Face::X { fi, j }));
    let ys = (1..grid.ny)
        .flat_map(move |fj| (0..grid.nx).map(move |i| Face::Y { i, fj }));
    xs.chain(ys)
}

pub(crate) fn face_center(grid: &Grid, face: Face) -> Vec2 {
    match face {
        Face::X { fi, j } => grid.x_face_center(fi, j),
        Face::Y { i, fj } => grid.y_face_center(i, fj),
    }
}

/// Cells adjacent to an interior face, in (minus side, plus side) order.
pub(crate) fn face_cells(grid: &Grid, face: Face) -> (usize, usize) {
    match face {
        Face::X { fi, j } => (grid.idx(fi - 1, j), grid.idx(fi, j)),
        Face::Y { i, fj } => (grid.idx(i, fj - 1), grid.idx(i, fj)),
    }
}

/// Enumerate the linear weights that reconstruct the full gradient vector of
/// a cell field at an interior face center. The callback receives
/// `(cell index, weight on v.x, weight on v.y)`. The normal component is the
/// two-point difference across the face; the tangential component averages
/// the central (one-sided at the boundary) differences of the two adjacent
/// cells. Keeping this enumeration in one place makes the transport tangent
/// and adjoint exact transposes of each other.
pub(crate) fn for_each_gradient_weight(
    grid: &Grid,
    face: Face,
    mut emit: impl FnMut(usize, f64, f64),
) {
    let nx = grid.nx;
    let ny = grid.ny;
    match face {
        Face::X { fi, j } => {
            let inv = 1.0 / grid.hx;
            emit(grid.idx(fi, j), inv, 0.0);
            emit(grid.idx(fi - 1, j), -inv, 0.0);
            for ci in [fi - 1, fi] {
                // y-derivative of the cell column ci at row j, halved for the average
                if j == 0 {
                    let w = 0.5 / grid.hy;
                    emit(grid.idx(ci, 1), 0.0, w);
                    emit(grid.idx(ci, 0), 0.0, -w);
                } else if j == ny - 1 {
                    let w = 0.5 / grid.hy;
                    emit(grid.idx(ci, ny - 1), 0.0, w);
                    emit(grid.idx(ci, ny - 2), 0.0, -w);
                } else {
                    let w = 0.25 / grid.hy;
                    emit(grid.idx(ci, j + 1), 0.0, w);
                    emit(grid.idx(ci, j - 1), 0.0, -w);
                }
            }
        }
        Face::Y { i, fj } => {
            let inv = 1.0 / grid.hy;
            emit(grid.idx(i, fj), 0.0, inv);
            emit(grid.idx(i, fj - 1), 0.0, -inv);
            for cj in [fj - 1, fj] {
                if i == 0 {
                    let w = 0.5 / grid.hx;
                    emit(grid.idx(1, cj), w, 0.0);
                    emit(grid.idx(0, cj), -w, 0.0);
                } else if i == nx - 1 {
                    let w = 0.5 / grid.hx;
                    emit(grid.idx(nx - 1, cj), w, 0.0);
                    emit(grid.idx(nx - 2, cj), -w, 0.0);
                } else {
                    let w = 0.25 / grid.hx;
                    emit(grid.idx(i + 1, cj), w, 0.0);
                    emit(grid.idx(i - 1, cj), -w, 0.0);
                }
            }
        }
    }
}

/// Sum of the analytic kernel gradients at a point.
pub(crate) fn kernel_gradient_sum(p: Vec2, positions: &[Vec2], kernel: &KernelParams) -> Vec2 {
    let mut g = Vec2::ZERO;
    for &x in positions {
        g += kernel.grad(p - x);
    }
    g
}

/// Reconstructed `grad(phi + phi_K)` at every interior face, in iteration
/// order of [`interior_faces`].
pub(crate) fn interior_face_vectors(
    phi: &CellField,
    positions: &[Vec2],
    kernel: &KernelParams,
    grid: &Grid,
) -> Vec<Vec2> {
    interior_faces(grid)
        .map(|face| {
            let mut v = kernel_gradient_sum(face_center(grid, face), positions, kernel);
            for_each_gradient_weight(grid, face, |cell, wx, wy| {
                let p = phi.data[cell];
                v.x += wx * p;
                v.y += wy * p;
            });
            v
        })
        .collect()
}

fn store_face(t: &mut FaceField, face: Face, value: f64) {
    match face {
        Face::X { fi, j } => *t.xf_mut(fi, j) = value,
        Face::Y { i, fj } => *t.yf_mut(i, fj) = value,
    }
}

/// Build the transport field from the potential and the agent positions.
///
/// Interior faces project the reconstructed gradient; WALL faces stay zero;
/// DOOR faces use the one-sided normal derivative against the zero boundary
/// value of `phi`. Door values are recorded for diagnostics but carry no
/// advective flux (the door discharge lives in the diffusion Robin rows).
pub fn transport_field(
    phi: &CellField,
    positions: &[Vec2],
    kernel: &KernelParams,
    proj: &ProjectionParams,
    grid: &Grid,
) -> Result<TransportField> {
    if !phi.all_finite() {
        return Err(Error::InvalidInput { context: "transport_field", value: f64::NAN });
    }
    let mut t = FaceField::zeros(grid);
    for (face, v) in interior_faces(grid).zip(interior_face_vectors(phi, positions, kernel, grid)) {
        let hv = proj.h(v);
        match face {
            Face::X { .. } => store_face(&mut t, face, hv.x),
            Face::Y { .. } => store_face(&mut t, face, hv.y),
        }
    }

    // door faces, one-sided against phi = 0 at the face
    let cell_dy = |i: usize, j: usize| -> f64 {
        if j == 0 {
            (phi.at(i, 1) - phi.at(i, 0)) / grid.hy
        } else if j == grid.ny - 1 {
            (phi.at(i, grid.ny - 1) - phi.at(i, grid.ny - 2)) / grid.hy
        } else {
            (phi.at(i, j + 1) - phi.at(i, j - 1)) / (2.0 * grid.hy)
        }
    };
    let cell_dx = |i: usize, j: usize| -> f64 {
        if i == 0 {
            (phi.at(1, j) - phi.at(0, j)) / grid.hx
        } else if i == grid.nx - 1 {
            (phi.at(grid.nx - 1, j) - phi.at(grid.nx - 2, j)) / grid.hx
        } else {
            (phi.at(i + 1, j) - phi.at(i - 1, j)) / (2.0 * grid.hx)
        }
    };
    for j in 0..grid.ny {
        if grid.left[j] == BoundaryTag::Door {
            let k = kernel_gradient_sum(grid.x_face_center(0, j), positions, kernel);
            let v = Vec2::new(2.0 * phi.at(0, j) / grid.hx + k.x, cell_dy(0, j) + k.y);
            *t.xf_mut(0, j) = proj.h(v).x;
        }
        if grid.right[j] == BoundaryTag::Door {
            let k = kernel_gradient_sum(grid.x_face_center(grid.nx, j), positions, kernel);
            let v = Vec2::new(
                -2.0 * phi.at(grid.nx - 1, j) / grid.hx + k.x,
                cell_dy(grid.nx - 1, j) + k.y,
            );
            *t.xf_mut(grid.nx, j) = proj.h(v).x;
        }
    }
    for i in 0..grid.nx {
        if grid.bottom[i] == BoundaryTag::Door {
            let k = kernel_gradient_sum(grid.y_face_center(i, 0), positions, kernel);
            let v = Vec2::new(cell_dx(i, 0) + k.x, 2.0 * phi.at(i, 0) / grid.hy + k.y);
            *t.yf_mut(i, 0) = proj.h(v).y;
        }
        if grid.top[i] == BoundaryTag::Door {
            let k = kernel_gradient_sum(grid.y_face_center(i, grid.ny), positions, kernel);
            let v = Vec2::new(
                cell_dx(i, grid.ny - 1) + k.x,
                -2.0 * phi.at(i, grid.ny - 1) / grid.hy + k.y,
            );
            *t.yf_mut(i, grid.ny) = proj.h(v).y;
        }
    }
    debug_assert!(t.max_abs() <= 1.0 + 1e-14);
    Ok(TransportField { normal: t })
}

/// Prefactored implicit diffusion operator
/// `D = I + dt eps L_N + dt R_door` (Robin rows `eta / h` on door cells).
/// The matrix is constant along a trajectory, so it is factored once.
pub struct DiffusionSolve {
    pub matrix: SymBanded,
    factor: BandedCholesky,
}

impl DiffusionSolve {
    pub fn new(grid: &Grid, params: &DensityParams) -> Result<Self> {
        let n = grid.n_cells();
        let mut d = SymBanded::zeros(n, grid.nx);
        let cx = params.dt * params.eps / (grid.hx * grid.hx);
        let cy = params.dt * params.eps / (grid.hy * grid.hy);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.idx(i, j);
                let mut diag = 1.0;
                if i > 0 {
                    diag += cx;
                    d.add(c, grid.idx(i - 1, j), -cx);
                }
                if i + 1 < grid.nx {
                    diag += cx;
                }
                if j > 0 {
                    diag += cy;
                    d.add(c, grid.idx(i, j - 1), -cy);
                }
                if j + 1 < grid.ny {
                    diag += cy;
                }
                if i == 0 && grid.left[j] == BoundaryTag::Door {
                    diag += params.dt * params.eta_out / grid.hx;
                }
                if i + 1 == grid.nx && grid.right[j] == BoundaryTag::Door {
                    diag += params.dt * params.eta_out / grid.hx;
                }
                if j == 0 && grid.bottom[i] == BoundaryTag::Door {
                    diag += params.dt * params.eta_out / grid.hy;
                }
                if j + 1 == grid.ny && grid.top[i] == BoundaryTag::Door {
                    diag += params.dt * params.eta_out / grid.hy;
                }
                d.add(c, c, diag);
            }
        }
        let factor = d.clone().cholesky()?;
        Ok(DiffusionSolve { matrix: d, factor })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }
}

/// Explicit upwinded advective divergence: returns `rho + dt * div(g(rho) T)`.
pub(crate) fn advect(
    rho: &CellField,
    transport: &TransportField,
    law: SpeedLaw,
    grid: &Grid,
    dt: f64,
) -> CellField {
    let mut out = rho.clone();
    for face in interior_faces(grid) {
        let (minus, plus) = face_cells(grid, face);
        let (t, h) = match face {
            Face::X { fi, j } => (transport.normal.xf(fi, j), grid.hx),
            Face::Y { i, fj } => (transport.normal.yf(i, fj), grid.hy),
        };
        // mass flux is -g h(..): for t > 0 the donor is the plus-side cell
        let donor = if t > 0.0 { plus } else { minus };
        let flux = law.g(rho.data[donor]) * t;
        out.data[minus] += dt * flux / h;
        out.data[plus] -= dt * flux / h;
    }
    out
}

fn check_box(rho: &CellField, context: &'static str) -> Result<()> {
    let (min, max) = (rho.min(), rho.max());
    if min < -BOX_TOL || max > 1.0 + BOX_TOL || !rho.all_finite() {
        return Err(Error::InvariantViolation {
            context,
            detail: format!("density outside [0, 1]: min {min:.6e}, max {max:.6e}"),
        });
    }
    Ok(())
}

/// Advance the density one IMEX step.
pub fn advance_density(
    rho_n: &CellField,
    transport: &TransportField,
    diffusion: &DiffusionSolve,
    params: &DensityParams,
    law: SpeedLaw,
    grid: &Grid,
) -> Result<CellField> {
    check_box(rho_n, "advance_density (pre-state)")?;

    let max_t = transport.normal.max_abs();
    let speed = law.max_flux_slope().max(1.0);
    let cfl = params.dt * max_t * speed * (2.0 / grid.hx + 2.0 / grid.hy);
    if cfl > 1.0 + 1e-12 {
        return Err(Error::StepSize {
            dt: params.dt,
            limit: 1.0 / (max_t.max(1e-300) * speed * (2.0 / grid.hx + 2.0 / grid.hy)),
            max_transport: max_t,
        });
    }

    let advected = advect(rho_n, transport, law, grid, params.dt);
    let new = CellField { nx: grid.nx, ny: grid.ny, data: diffusion.solve(&advected.data) };
    check_box(&new, "advance_density (post-state)")?;
    Ok(new)
}

/// Door discharge rate `sum_doors eta * rho_cell * face_length` (mass/s).
pub fn boundary_outflux(rho: &CellField, params: &DensityParams, grid: &Grid) -> f64 {
    let mut rate = 0.0;
    for j in 0..grid.ny {
        if grid.left[j] == BoundaryTag::Door {
            rate += rho.at(0, j) * grid.hy;
        }
        if grid.right[j] == BoundaryTag::Door {
            rate += rho.at(grid.nx - 1, j) * grid.hy;
        }
    }
    for i in 0..grid.nx {
        if grid.bottom[i] == BoundaryTag::Door {
            rate += rho.at(i, 0) * grid.hx;
        }
        if grid.top[i] == BoundaryTag::Door {
            rate += rho.at(i, grid.ny - 1) * grid.hx;
        }
    }
    params.eta_out * rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, build_grid_sealed, integrate_cell_field, DoorSegment, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strip_grid(nx: usize) -> Grid {
        let doors = vec![
            DoorSegment { side: Side::Left, from: 0.0, to: 1.0 },
            DoorSegment { side: Side::Right, from: 0.0, to: 1.0 },
        ];
        build_grid(1.0, 1.0, nx, 3, &doors).unwrap()
    }

    #[test]
    fn zero_potential_no_agents_gives_zero_field() {
        let g = strip_grid(8);
        let t = transport_field(
            &CellField::zeros(&g),
            &[],
            &KernelParams::default(),
            &ProjectionParams::default(),
            &g,
        )
        .unwrap();
        assert_eq!(t.normal.max_abs(), 0.0);
    }

    #[test]
    fn constant_gradient_saturates_projection() {
        let g = strip_grid(8);
        let proj = ProjectionParams { eps_h: 0.25 };
        // phi = 2x: |grad| = 2 >= 1 + eps_h, so interior x-faces carry exactly 1
        let phi = CellField::from_fn(&g, |c| 2.0 * c.x);
        let t = transport_field(&phi, &[], &KernelParams::default(), &proj, &g).unwrap();
        for j in 0..g.ny {
            for fi in 1..g.nx {
                assert!((t.normal.xf(fi, j) - 1.0).abs() <= 1e-14);
            }
        }
        // phi = x sits inside the blend: sigma(1) = 1 - eps_h/4
        let phi1 = CellField::from_fn(&g, |c| c.x);
        let t1 = transport_field(&phi1, &[], &KernelParams::default(), &proj, &g).unwrap();
        let expected = 1.0 - proj.eps_h / 4.0;
        for j in 0..g.ny {
            for fi in 1..g.nx {
                assert!((t1.normal.xf(fi, j) - expected).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn agent_only_field_matches_kernel_gradient() {
        let g = build_grid(1.0, 1.0, 10, 10, &[DoorSegment { side: Side::Top, from: 0.0, to: 1.0 }])
            .unwrap();
        let kernel = KernelParams { intensity: 0.4, radius: 0.35 };
        let proj = ProjectionParams::default();
        let agent = Vec2::new(0.45, 0.55);
        let t = transport_field(&CellField::zeros(&g), &[agent], &kernel, &proj, &g).unwrap();
        for fi in 1..g.nx {
            for j in 0..g.ny {
                let v = kernel.grad(g.x_face_center(fi, j) - agent);
                let expected = proj.h(v).x;
                assert!((t.normal.xf(fi, j) - expected).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn zero_density_is_a_fixed_point() {
        let g = strip_grid(8);
        let params = DensityParams { eps: 0.05, eta_out: 1.0, dt: 0.01 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let phi = CellField::from_fn(&g, |c| (1.0 - c.x) * 0.5);
        let t = transport_field(&phi, &[], &KernelParams::default(), &ProjectionParams::default(), &g)
            .unwrap();
        let out = advance_density(&CellField::zeros(&g), &t, &diff, &params, SpeedLaw::Linear, &g)
            .unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sealed_room_full_density_is_steady() {
        let g = build_grid_sealed(1.0, 1.0, 8, 8).unwrap();
        let params = DensityParams { eps: 0.05, eta_out: 1.0, dt: 0.01 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let t = TransportField { normal: FaceField::zeros(&g) };
        let rho = CellField::constant(&g, 1.0);
        let out = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap();
        for v in &out.data {
            assert!((*v - 1.0).abs() <= 1e-13);
        }
    }

    #[test]
    fn heat_step_matches_dense_reference() {
        // 6x6 sealed grid, zero transport: the step is pure backward-Euler
        // diffusion. Compare against a dense Gaussian-elimination reference.
        let n = 6;
        let g = build_grid_sealed(1.0, 1.0, n, n).unwrap();
        let params = DensityParams { eps: 0.08, eta_out: 1.0, dt: 0.015 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = CellField::from_fn(&g, |_| rng.gen_range(0.0..1.0));
        let t = TransportField { normal: FaceField::zeros(&g) };
        let stepped = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap();

        // dense reference
        let nn = g.n_cells();
        let mut dense = vec![vec![0.0f64; nn]; nn];
        let cx = params.dt * params.eps / (g.hx * g.hx);
        let cy = params.dt * params.eps / (g.hy * g.hy);
        for j in 0..n {
            for i in 0..n {
                let c = g.idx(i, j);
                dense[c][c] = 1.0;
                let mut add = |other: usize, coef: f64| {
                    dense[c][c] += coef;
                    dense[c][other] -= coef;
                };
                if i > 0 {
                    add(g.idx(i - 1, j), cx);
                }
                if i + 1 < n {
                    add(g.idx(i + 1, j), cx);
                }
                if j > 0 {
                    add(g.idx(i, j - 1), cy);
                }
                if j + 1 < n {
                    add(g.idx(i, j + 1), cy);
                }
            }
        }
        let mut rhs = rho.data.clone();
        // naive Gaussian elimination with partial pivoting
        for col in 0..nn {
            let piv = (col..nn).max_by(|a, b| dense[*a][col].abs().total_cmp(&dense[*b][col].abs())).unwrap();
            dense.swap(col, piv);
            rhs.swap(col, piv);
            for r in (col + 1)..nn {
                let m = dense[r][col] / dense[col][col];
                for c in col..nn {
                    dense[r][c] -= m * dense[col][c];
                }
                rhs[r] -= m * rhs[col];
            }
        }
        let mut reference = vec![0.0; nn];
        for r in (0..nn).rev() {
            let mut acc = rhs[r];
            for c in (r + 1)..nn {
                acc -= dense[r][c] * reference[c];
            }
            reference[r] = acc / dense[r][r];
        }

        let mut max_diff = 0.0f64;
        for k in 0..nn {
            max_diff = max_diff.max((stepped.data[k] - reference[k]).abs());
        }
        assert!(max_diff <= 1e-12, "diff {max_diff}");
        // mass conserved and max-norm non-expansive
        let m0 = integrate_cell_field(&rho, &g);
        let m1 = integrate_cell_field(&stepped, &g);
        assert!((m1 - m0).abs() <= 1e-12 * m0);
        assert!(stepped.linf() <= rho.linf() + 1e-13);
    }

    #[test]
    fn outflux_closed_forms() {
        let params = DensityParams { eps: 0.1, eta_out: 2.0, dt: 0.01 };
        let g = build_grid(1.0, 1.0, 8, 8, &[DoorSegment { side: Side::Right, from: 0.0, to: 1.0 }])
            .unwrap();
        assert_eq!(boundary_outflux(&CellField::zeros(&g), &params, &g), 0.0);
        let full = CellField::constant(&g, 1.0);
        assert!((boundary_outflux(&full, &params, &g) - 2.0).abs() <= 1e-14);

        let half_door = build_grid(
            1.0,
            1.0,
            8,
            8,
            &[DoorSegment { side: Side::Right, from: 0.25, to: 0.75 }],
        )
        .unwrap();
        let p1 = DensityParams { eps: 0.1, eta_out: 1.0, dt: 0.01 };
        let rho = CellField::constant(&half_door, 0.8);
        assert!((boundary_outflux(&rho, &p1, &half_door) - 0.4).abs() <= 1e-14);
    }

    #[test]
    fn discrete_mass_identity_with_doors() {
        let g = build_grid(1.0, 1.0, 12, 12, &[DoorSegment { side: Side::Left, from: 0.0, to: 0.5 }])
            .unwrap();
        let params = DensityParams { eps: 0.04, eta_out: 1.5, dt: 0.008 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let phi = CellField::from_fn(&g, |c| c.x * 0.8 + 0.1 * c.y);
        let t = transport_field(&phi, &[], &KernelParams::default(), &ProjectionParams::default(), &g)
            .unwrap();
        let mut rho = CellField::from_fn(&g, |c| 0.6 * (1.0 - c.x) + 0.2 * c.y * (1.0 - c.y));
        for _ in 0..5 {
            let next = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap();
            let lhs = integrate_cell_field(&next, &g) - integrate_cell_field(&rho, &g);
            let rhs = -params.dt * boundary_outflux(&next, &params, &g);
            assert!((lhs - rhs).abs() <= 1e-13, "lhs {lhs} rhs {rhs}");
            rho = next;
        }
    }

    #[test]
    fn positivity_under_cfl_with_random_transport() {
        let g = build_grid(1.0, 1.0, 10, 10, &[DoorSegment { side: Side::Top, from: 0.0, to: 1.0 }])
            .unwrap();
        // dt at 90% of the stability bound for |T| = 1
        let dt = 0.9 / (2.0 / g.hx + 2.0 / g.hy);
        let params = DensityParams { eps: 0.02, eta_out: 1.0, dt };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let mut t = FaceField::zeros(&g);
            for v in t.x.iter_mut().chain(t.y.iter_mut()) {
                *v = rng.gen_range(-1.0..1.0);
            }
            // boundary faces carry no advective flux anyway
            let t = TransportField { normal: t };
            let rho = CellField::from_fn(&g, |_| rng.gen_range(0.0..0.4));
            let next = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap();
            assert!(next.min() >= -BOX_TOL);
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = strip_grid(16);
        let params = DensityParams { eps: 0.02, eta_out: 1.0, dt: 0.5 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let phi = CellField::from_fn(&g, |c| 2.0 * c.x);
        let t = transport_field(&phi, &[], &KernelParams::default(), &ProjectionParams::default(), &g)
            .unwrap();
        let rho = CellField::constant(&g, 0.3);
        let err = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn pre_state_outside_box_is_rejected() {
        let g = strip_grid(8);
        let params = DensityParams { eps: 0.02, eta_out: 1.0, dt: 0.001 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let t = TransportField { normal: FaceField::zeros(&g) };
        let bad = CellField::constant(&g, 1.5);
        assert!(advance_density(&bad, &t, &diff, &params, SpeedLaw::Linear, &g).is_err());
    }

    #[test]
    fn mirror_symmetry_of_one_step() {
        // mirror-symmetric doors, density and potential: the stepped density
        // must stay symmetric to solver precision
        let doors = vec![
            DoorSegment { side: Side::Left, from: 0.2, to: 0.8 },
            DoorSegment { side: Side::Right, from: 0.2, to: 0.8 },
        ];
        let g = build_grid(1.0, 1.0, 12, 9, &doors).unwrap();
        let params = DensityParams { eps: 0.03, eta_out: 1.0, dt: 0.005 };
        let diff = DiffusionSolve::new(&g, &params).unwrap();
        let rho = CellField::from_fn(&g, |c| 0.5 * (1.0 - (2.0 * (c.x - 0.5)).powi(2)));
        let sol = crate::eikonal::solve_eikonal(
            &rho,
            &crate::eikonal::EikonalParams::default(),
            SpeedLaw::Linear,
            &g,
        )
        .unwrap();
        let t = transport_field(&sol.phi, &[], &KernelParams::default(), &ProjectionParams::default(), &g)
            .unwrap();
        let next = advance_density(&rho, &t, &diff, &params, SpeedLaw::Linear, &g).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let d = (next.at(i, j) - next.at(g.nx - 1 - i, j)).abs();
                assert!(d <= 1e-12, "asymmetry {d} at ({i},{j})");
            }
        }
    }
}
