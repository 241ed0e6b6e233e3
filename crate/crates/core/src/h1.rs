//! Discrete H1(0,T) inner product for piecewise-linear controls on the
//! uniform time grid: trapezoid (lumped) mass plus the exact stiffness of
//! the piecewise-constant derivative. The matrix is tridiagonal with
//! natural (free-endpoint) boundary behaviour, so constants lie in the
//! kernel of the stiffness part.

/// `B = M + S` with `M = diag(dt/2, dt, ..., dt, dt/2)` and `S` the standard
/// 1-D stiffness matrix scaled by `1/dt`.
#[derive(Debug, Clone)]
pub struct H1Form {
    pub n_nodes: usize,
    pub dt: f64,
}

impl H1Form {
    pub fn new(n_nodes: usize, dt: f64) -> Self {
        assert!(n_nodes >= 2 && dt > 0.0);
        H1Form { n_nodes, dt }
    }

    fn mass(&self, node: usize) -> f64 {
        if node == 0 || node + 1 == self.n_nodes {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// `B u` for one scalar component.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.n_nodes);
        let n = self.n_nodes;
        let inv = 1.0 / self.dt;
        let mut out = vec![0.0; n];
        for k in 0..n {
            let mut v = self.mass(k) * u[k];
            if k > 0 {
                v += inv * (u[k] - u[k - 1]);
            }
            if k + 1 < n {
                v += inv * (u[k] - u[k + 1]);
            }
            out[k] = v;
        }
        out
    }

    /// Solve the tridiagonal system `B v = rhs` (Thomas algorithm).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.n_nodes);
        let n = self.n_nodes;
        let inv = 1.0 / self.dt;
        let mut diag: Vec<f64> = (0..n)
            .map(|k| {
                let links = if k == 0 || k + 1 == n { 1.0 } else { 2.0 };
                self.mass(k) + links * inv
            })
            .collect();
        let off = -inv;
        let mut x = rhs.to_vec();
        // forward elimination
        for k in 1..n {
            let m = off / diag[k - 1];
            diag[k] -= m * off;
            x[k] -= m * x[k - 1];
        }
        // back substitution
        x[n - 1] /= diag[n - 1];
        for k in (0..n - 1).rev() {
            x[k] = (x[k] - off * x[k + 1]) / diag[k];
        }
        x
    }

    /// `u^T B v` for one scalar component.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.apply(u).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}
