//! Uniform cell-centered Cartesian grid with tagged boundary faces.
//!
//! Cells are indexed `(i, j)` with `i` along x and `j` along y, flattened
//! as `j * nx + i`. x-faces live at `x = i * hx` and separate cells
//! `(i-1, j)` and `(i, j)`; y-faces analogously. Every boundary face
//! carries a DOOR or WALL tag; at least one DOOR face must exist.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Door,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// An interval on one side of the rectangle that acts as a door.
/// Coordinates run along the side axis: y for left/right, x for bottom/top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorSegment {
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    /// Tags for boundary faces, indexed by the running coordinate:
    /// `left[j]`, `right[j]` for x-faces, `bottom[i]`, `top[i]` for y-faces.
    pub left: Vec<BoundaryTag>,
    pub right: Vec<BoundaryTag>,
    pub bottom: Vec<BoundaryTag>,
    pub top: Vec<BoundaryTag>,
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn cell_of(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Center of the x-face with face index `fi` in `0..=nx`, row `j`.
    pub fn x_face_center(&self, fi: usize, j: usize) -> Vec2 {
        Vec2::new(fi as f64 * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Center of the y-face with face index `fj` in `0..=ny`, column `i`.
    pub fn y_face_center(&self, i: usize, fj: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.hx, fj as f64 * self.hy)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn door_face_count(&self) -> usize {
        self.left
            .iter()
            .chain(self.right.iter())
            .chain(self.bottom.iter())
            .chain(self.top.iter())
            .filter(|t| **t == BoundaryTag::Door)
            .count()
    }

    pub fn boundary_face_count(&self) -> usize {
        2 * (self.nx + self.ny)
    }

    /// Whether a point lies inside the closed domain rectangle.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.lx && p.y >= 0.0 && p.y <= self.ly
    }
}

/// Build a grid from the rectangle dimensions, cell counts and door layout.
pub fn build_grid(
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    doors: &[DoorSegment],
) -> Result<Grid> {
    let mut problems = Vec::new();
    if nx < 2 || ny < 2 {
        problems.push(format!("geometry: cell counts must be at least 2, got nx={nx}, ny={ny}"));
    }
    if !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
        problems.push(format!("geometry: side lengths must be positive, got lx={lx}, ly={ly}"));
    }
    if doors.is_empty() {
        problems.push("geometry.door: at least one door segment is required".to_string());
    }
    for (k, d) in doors.iter().enumerate() {
        let len = match d.side {
            Side::Left | Side::Right => ly,
            Side::Bottom | Side::Top => lx,
        };
        if !(d.from.is_finite() && d.to.is_finite()) || d.from >= d.to {
            problems.push(format!("geometry.door[{k}]: interval [{}, {}] is empty or not finite", d.from, d.to));
        } else if d.from < 0.0 || d.to > len {
            problems.push(format!(
                "geometry.door[{k}]: interval [{}, {}] exceeds the side length {len}",
                d.from, d.to
            ));
        }
    }
    // overlap check per side
    for side in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
        let mut ivals: Vec<(f64, f64)> = doors
            .iter()
            .filter(|d| d.side == side)
            .map(|d| (d.from, d.to))
            .collect();
        ivals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in ivals.windows(2) {
            if w[1].0 < w[0].1 {
                problems.push(format!(
                    "geometry.door: overlapping intervals [{}, {}] and [{}, {}] on side {:?}",
                    w[0].0, w[0].1, w[1].0, w[1].1, side
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }

    let hx = lx / nx as f64;
    let hy = ly / ny as f64;

    let tag_line = |side: Side, count: usize, h: f64| -> Vec<BoundaryTag> {
        (0..count)
            .map(|k| {
                let c = (k as f64 + 0.5) * h;
                let hit = doors
                    .iter()
                    .any(|d| d.side == side && c >= d.from && c <= d.to);
                if hit {
                    BoundaryTag::Door
                } else {
                    BoundaryTag::Wall
                }
            })
            .collect()
    };

    let grid = Grid {
        nx,
        ny,
        lx,
        ly,
        hx,
        hy,
        left: tag_line(Side::Left, ny, hy),
        right: tag_line(Side::Right, ny, hy),
        bottom: tag_line(Side::Bottom, nx, hx),
        top: tag_line(Side::Top, nx, hx),
    };

    if grid.door_face_count() == 0 {
        return Err(Error::InvalidConfig(vec![
            "geometry.door: no boundary face center falls inside any door interval; the door part of the boundary is empty".to_string(),
        ]));
    }
    Ok(grid)
}

/// Build a sealed (all-WALL) grid. Such rooms have no travel-time target,
/// so the forward coupler drops the potential solve for them; they exist to
/// exercise exact mass conservation.
pub fn build_grid_sealed(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Grid> {
    let mut problems = Vec::new();
    if nx < 2 || ny < 2 {
        problems.push(format!("geometry: cell counts must be at least 2, got nx={nx}, ny={ny}"));
    }
    if !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
        problems.push(format!("geometry: side lengths must be positive, got lx={lx}, ly={ly}"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    Ok(Grid {
        nx,
        ny,
        lx,
        ly,
        hx: lx / nx as f64,
        hy: ly / ny as f64,
        left: vec![BoundaryTag::Wall; ny],
        right: vec![BoundaryTag::Wall; ny],
        bottom: vec![BoundaryTag::Wall; nx],
        top: vec![BoundaryTag::Wall; nx],
    })
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &Grid) -> Self {
        CellField { nx: grid.nx, ny: grid.ny, data: vec![0.0; grid.n_cells()] }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        CellField { nx: grid.nx, ny: grid.ny, data: vec![value; grid.n_cells()] }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Vec2) -> f64) -> Self {
        let mut field = CellField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                field.data[grid.idx(i, j)] = f(grid.cell_center(i, j));
            }
        }
        field
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.nx + i]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &CellField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, a: f64, x: &CellField) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }
}

/// Face-centered scalar data: one value per x-face and per y-face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub nx: usize,
    pub ny: usize,
    /// `(nx + 1) * ny` values, index `j * (nx + 1) + i` for `i` in `0..=nx`.
    pub x: Vec<f64>,
    /// `nx * (ny + 1)` values, index `j * nx + i` for `j` in `0..=ny`.
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        FaceField {
            nx: grid.nx,
            ny: grid.ny,
            x: vec![0.0; (grid.nx + 1) * grid.ny],
            y: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    #[inline]
    pub fn xf(&self, i: usize, j: usize) -> f64 {
        self.x[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn xf_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.x[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn yf(&self, i: usize, j: usize) -> f64 {
        self.y[j * self.nx + i]
    }

    #[inline]
    pub fn yf_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.y[j * self.nx + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(self.y.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

/// Midpoint-rule integral over the domain: `sum f_ij * hx * hy`.
pub fn integrate_cell_field(f: &CellField, grid: &Grid) -> f64 {
    f.data.iter().sum::<f64>() * grid.cell_area()
}
