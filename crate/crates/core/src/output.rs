//! Structured, byte-stable output files.
//!
//! All floats are written with a fixed scientific format so repeated runs of
//! the same configuration produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::grid::{CellField, Grid};
use crate::optimizer::IterationRecord;
use crate::scenario::SnapshotFormat;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `mass.csv`: per node `t, mass, outflux`. The outflux at node `n >= 1` is
/// the discharge rate of step `n-1`, so
/// `mass[0] - mass[N] = dt * sum(outflux[1..])`.
pub fn write_mass_csv(path: &Path, traj: &ForwardTrajectory, dt: f64) -> Result<()> {
    let mut s = String::from("t,mass,outflux\n");
    for (n, (m, o)) in traj.mass.iter().zip(&traj.outflux).enumerate() {
        let _ = writeln!(s, "{},{},{}", fmt(n as f64 * dt), fmt(*m), fmt(*o));
    }
    write_file(path, &s)
}

/// `agents.csv`: per node `t, x_i, y_i, u_ix, u_iy` for every agent.
pub fn write_agents_csv(path: &Path, traj: &ForwardTrajectory, dt: f64) -> Result<()> {
    let m = traj.controls.n_agents;
    let mut s = String::from("t");
    for i in 0..m {
        let _ = write!(s, ",x{i},y{i},u{i}x,u{i}y");
    }
    s.push('\n');
    for (n, xs) in traj.agents.iter().enumerate() {
        let _ = write!(s, "{}", fmt(n as f64 * dt));
        for (i, x) in xs.iter().enumerate() {
            let u = traj.controls.get(i, n);
            let _ = write!(s, ",{},{},{},{}", fmt(x.x), fmt(x.y), fmt(u.x), fmt(u.y));
        }
        s.push('\n');
    }
    write_file(path, &s)
}

/// `objective.csv`: labelled component values.
pub fn write_objective_csv(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut s = String::from("component,value\n");
    for (name, value) in rows {
        let _ = writeln!(s, "{name},{}", fmt(*value));
    }
    write_file(path, &s)
}

/// `history.csv`: optimizer iterations.
pub fn write_history_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut s = String::from("iter,objective,stationarity,step\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.iter, fmt(r.objective), fmt(r.stationarity), fmt(r.step));
    }
    write_file(path, &s)
}

/// Density snapshot, either plain matrix text (row `j = 0` first) or a
/// legacy ASCII VTK structured-points file with cell data.
pub fn write_snapshot(
    path: &Path,
    field: &CellField,
    grid: &Grid,
    format: SnapshotFormat,
    label: &str,
) -> Result<()> {
    let mut s = String::new();
    match format {
        SnapshotFormat::Matrix => {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    if i > 0 {
                        s.push(' ');
                    }
                    s.push_str(&fmt(field.at(i, j)));
                }
                s.push('\n');
            }
        }
        SnapshotFormat::Vtk => {
            let _ = writeln!(s, "# vtk DataFile Version 3.0");
            let _ = writeln!(s, "{label}");
            let _ = writeln!(s, "ASCII");
            let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
            let _ = writeln!(s, "DIMENSIONS {} {} 1", grid.nx + 1, grid.ny + 1);
            let _ = writeln!(s, "ORIGIN 0 0 0");
            let _ = writeln!(s, "SPACING {} {} 1", fmt(grid.hx), fmt(grid.hy));
            let _ = writeln!(s, "CELL_DATA {}", grid.n_cells());
            let _ = writeln!(s, "SCALARS density double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let _ = writeln!(s, "{}", fmt(field.at(i, j)));
                }
            }
        }
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use crate::grid::integrate_cell_field;
    use crate::scenario::{Scenario, ScenarioConfig};

    const SMALL: &str = r#"
[geometry]
lx = 1.0
ly = 1.0
nx = 6
ny = 6

[[geometry.door]]
side = "left"
from = 0.0
to = 1.0

[time]
t_final = 0.02
steps = 4

[initial_density]
kind = "constant"
value = 0.3
"#;

    #[test]
    fn mass_csv_starts_with_the_initial_mass_and_is_reproducible() {
        let cfg = ScenarioConfig::from_toml_str(SMALL, "test").unwrap();
        let scenario = Scenario::from_config(cfg).unwrap();
        let traj = solve_forward(&scenario, &scenario.initial_controls()).unwrap();
        let dir = std::env::temp_dir().join("crowdflow_output_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("mass1.csv");
        let p2 = dir.join("mass2.csv");
        write_mass_csv(&p1, &traj, scenario.dt()).unwrap();
        write_mass_csv(&p2, &traj, scenario.dt()).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);

        let text = String::from_utf8(a).unwrap();
        let first_row = text.lines().nth(1).unwrap();
        let mass: f64 = first_row.split(',').nth(1).unwrap().parse().unwrap();
        let expected = integrate_cell_field(&scenario.rho0, &scenario.grid);
        assert!((mass - expected).abs() <= 1e-15 * expected.abs());
    }

    #[test]
    fn snapshot_formats_have_expected_shape() {
        let cfg = ScenarioConfig::from_toml_str(SMALL, "test").unwrap();
        let scenario = Scenario::from_config(cfg).unwrap();
        let dir = std::env::temp_dir().join("crowdflow_output_test");
        std::fs::create_dir_all(&dir).unwrap();

        let m = dir.join("rho.txt");
        write_snapshot(&m, &scenario.rho0, &scenario.grid, SnapshotFormat::Matrix, "t").unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        assert_eq!(text.lines().count(), scenario.grid.ny);
        assert_eq!(text.lines().next().unwrap().split(' ').count(), scenario.grid.nx);

        let v = dir.join("rho.vtk");
        write_snapshot(&v, &scenario.rho0, &scenario.grid, SnapshotFormat::Vtk, "density").unwrap();
        let text = std::fs::read_to_string(&v).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("CELL_DATA 36"));
    }
}
