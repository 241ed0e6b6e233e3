//! Linear solvers for the symmetric positive-definite systems produced by
//! the five-point discretizations.
//!
//! The banded Cholesky factorization is the workhorse: it is deterministic,
//! accurate to machine precision, and a solve with the same factorization is
//! its own transpose, which keeps the discrete adjoint exact. A diagonally
//! preconditioned conjugate-gradient solver is provided as well and is used
//! to cross-check the factorization.

use crate::error::{Error, Result};

/// Symmetric banded matrix. Only the lower band is stored:
/// `band[r, k] = A[r, r - bw + k]` for `k` in `0..=bw`.
#[derive(Debug, Clone)]
pub struct SymBanded {
    pub n: usize,
    pub bw: usize,
    band: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBanded { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && r - c <= self.bw);
        r * (self.bw + 1) + (c + self.bw - r)
    }

    /// Read `A[r, c]` for `c <= r` within the band.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.band[self.slot(r, c)]
    }

    /// Add to `A[r, c]` (and implicitly `A[c, r]`). Requires `c <= r`.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.band[s] += v;
    }

    /// Matrix-vector product using the symmetric storage.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for r in 0..self.n {
            let lo = r.saturating_sub(self.bw);
            let mut acc = 0.0;
            for c in lo..r {
                let v = self.get(r, c);
                acc += v * x[c];
                out[c] += v * x[r];
            }
            acc += self.get(r, r) * x[r];
            out[r] += acc;
        }
    }

    /// In-place banded Cholesky factorization `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let bw = self.bw;
        for r in 0..self.n {
            let lo = r.saturating_sub(bw);
            for c in lo..=r {
                let klo = lo.max(c.saturating_sub(bw));
                let mut sum = self.get(r, c);
                for k in klo..c {
                    sum -= self.get(r, k) * self.get(c, k);
                }
                if c == r {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::SolverFailure {
                            context: "banded Cholesky (matrix not positive definite)",
                            residual: sum,
                            iterations: r,
                            tolerance: 0.0,
                        });
                    }
                    let s = self.slot(r, r);
                    self.band[s] = sum.sqrt();
                } else {
                    let s = self.slot(r, c);
                    self.band[s] = sum / self.get(c, c);
                }
            }
        }
        Ok(BandedCholesky { n: self.n, bw, band: self.band })
    }
}

/// Cholesky factor of a [`SymBanded`] matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    #[inline]
    fn l(&self, r: usize, c: usize) -> f64 {
        self.band[r * (self.bw + 1) + (c + self.bw - r)]
    }

    /// Solve `A x = b`. Since `A` is symmetric this is also the transposed solve.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        // forward: L y = b
        for r in 0..self.n {
            let lo = r.saturating_sub(self.bw);
            let mut acc = y[r];
            for c in lo..r {
                acc -= self.l(r, c) * y[c];
            }
            y[r] = acc / self.l(r, r);
        }
        // backward: L^T x = y
        for r in (0..self.n).rev() {
            let hi = (r + self.bw).min(self.n - 1);
            let mut acc = y[r];
            for c in (r + 1)..=hi {
                acc -= self.l(c, r) * y[c];
            }
            y[r] = acc / self.l(r, r);
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Stops when `||r|| <= rel_tol * ||b||` (or `||b|| = 0`, returning zero).
pub fn pcg(
    a: &SymBanded,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
    context: &'static str,
) -> Result<Vec<f64>> {
    let n = a.n;
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = (0..n).map(|r| 1.0 / a.get(r, r)).collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    for it in 0..max_iters {
        a.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r <= rel_tol * norm_b {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        let _ = it;
    }

    let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::SolverFailure {
        context,
        residual: norm_r / norm_b,
        iterations: max_iters,
        tolerance: rel_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, bw: usize, seed: u64) -> SymBanded {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = SymBanded::zeros(n, bw);
        for r in 0..n {
            let lo = r.saturating_sub(bw);
            for c in lo..r {
                a.add(r, c, rng.gen_range(-0.5..0.5));
            }
            // diagonal dominance keeps it SPD
            a.add(r, r, bw as f64 + rng.gen_range(1.0..2.0));
        }
        a
    }

    #[test]
    fn cholesky_solves_to_machine_precision() {
        for seed in 0..4 {
            let n = 60;
            let a = random_spd(n, 7, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = a.clone().cholesky().unwrap().solve(&b);
            let mut ax = vec![0.0; n];
            a.apply(&x, &mut ax);
            let res: f64 = ax
                .iter()
                .zip(&b)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-12, "residual {res}");
        }
    }

    #[test]
    fn pcg_matches_cholesky() {
        let n = 80;
        let a = random_spd(n, 9, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xc = a.clone().cholesky().unwrap().solve(&b);
        let xp = pcg(&a, &b, 1e-12, 10 * n, "test").unwrap();
        let diff: f64 = xc
            .iter()
            .zip(&xp)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-9, "diff {diff}");
    }

    #[test]
    fn pcg_zero_rhs_returns_zero() {
        let a = random_spd(20, 4, 3);
        let x = pcg(&a, &vec![0.0; 20], 1e-12, 100, "test").unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBanded::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -2.0);
        a.add(2, 2, 1.0);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn apply_is_symmetric() {
        let a = random_spd(30, 5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut au = vec![0.0; 30];
        let mut av = vec![0.0; 30];
        a.apply(&u, &mut au);
        a.apply(&v, &mut av);
        let lhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = av.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
