//! Constitutive functions shared by every solver component.
//!
//! Provides the density-dependent speed law `f`, the flux density
//! `g(rho) = rho * f(rho)`, the smoothed unit-ball projection `h`, the
//! compactly supported interaction kernel `K` and the agent potential
//! gradient. All functions come with the analytic derivatives needed by
//! the tangent and adjoint sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::{Sym2, Vec2};

/// Walking-speed law. `f(0) = 1` (free flow), `f(1) = 0` (jam),
/// non-increasing on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpeedLaw {
    /// `f(rho) = 1 - rho`, clamped so that inputs outside `[0, 1]` map to
    /// the endpoint values. The standard choice; Lipschitz with constant 1.
    #[default]
    Linear,
    /// `f(rho) = exp(1 - 1/(1 - rho^2))` for `|rho| < 1`, zero outside.
    /// Smooth and compactly supported.
    SmoothBump,
}

impl SpeedLaw {
    /// Speed at density `rho`. Total: accepts any finite input.
    pub fn f(self, rho: f64) -> f64 {
        match self {
            SpeedLaw::Linear => 1.0 - rho.clamp(0.0, 1.0),
            SpeedLaw::SmoothBump => {
                if rho.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - rho * rho)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative `f'(rho)`. For the linear law the slope on the closed
    /// interval `[0, 1]` is used, so `f'(0) = f'(1) = -1`.
    pub fn f_prime(self, rho: f64) -> f64 {
        match self {
            SpeedLaw::Linear => {
                if (0.0..=1.0).contains(&rho) {
                    -1.0
                } else {
                    0.0
                }
            }
            SpeedLaw::SmoothBump => {
                if rho.abs() < 1.0 {
                    let w = 1.0 - rho * rho;
                    -2.0 * rho / (w * w) * self.f(rho)
                } else {
                    0.0
                }
            }
        }
    }

    /// Flux density `g(rho) = rho * f(rho)`.
    pub fn g(self, rho: f64) -> f64 {
        rho * self.f(rho)
    }

    /// `g'(rho) = f(rho) + rho * f'(rho)`.
    pub fn g_prime(self, rho: f64) -> f64 {
        self.f(rho) + rho * self.f_prime(rho)
    }

    /// Upper bound for `|g'|` on `[0, 1]`, used in the advective CFL rule.
    /// Both laws attain their maximum slope 1 at `rho = 0`.
    pub fn max_flux_slope(self) -> f64 {
        1.0
    }
}

/// Checked speed evaluation. Rejects non-finite input.
pub fn speed_f(rho: f64, law: SpeedLaw) -> Result<f64> {
    if !rho.is_finite() {
        return Err(Error::InvalidInput { context: "speed_f", value: rho });
    }
    Ok(law.f(rho))
}

/// Checked flux density `g(rho) = rho * f(rho)`.
pub fn flux_density_g(rho: f64, law: SpeedLaw) -> Result<f64> {
    if !rho.is_finite() {
        return Err(Error::InvalidInput { context: "flux_density_g", value: rho });
    }
    Ok(law.g(rho))
}

/// Parameters of the smoothed projection onto the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// Half-width of the C1 blend around `|y| = 1`, in `(0, 0.5)`.
    pub eps_h: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams { eps_h: 0.1 }
    }
}

impl ProjectionParams {
    /// Radial profile sigma of the projection: identity for
    /// `s <= 1 - eps_h`, constant 1 for `s >= 1 + eps_h`, and the cubic
    /// Hermite blend `1 - (1 + eps_h - s)^2 / (4 eps_h)` in between. The
    /// blend is monotone, bounded by 1 and C1 at both knots.
    fn sigma(&self, s: f64) -> f64 {
        let e = self.eps_h;
        if s <= 1.0 - e {
            s
        } else if s >= 1.0 + e {
            1.0
        } else {
            let u = 1.0 + e - s;
            1.0 - u * u / (4.0 * e)
        }
    }

    fn sigma_prime(&self, s: f64) -> f64 {
        let e = self.eps_h;
        if s <= 1.0 - e {
            1.0
        } else if s >= 1.0 + e {
            0.0
        } else {
            (1.0 + e - s) / (2.0 * e)
        }
    }

    /// Smoothed projection `h(y) = sigma(|y|) y / |y|`, with `h(0) = 0`.
    /// Identity on the ball of radius `1 - eps_h`, exact normalization
    /// outside radius `1 + eps_h`, `|h(y)| <= 1` everywhere.
    pub fn h(&self, y: Vec2) -> Vec2 {
        let m = y.norm();
        if m <= 1.0 - self.eps_h {
            // sigma(s) = s here, so h is the identity; avoids 0/0 at the origin.
            y
        } else {
            y.scale(self.sigma(m) / m)
        }
    }

    /// Jacobian `Dh(y)`, a symmetric 2x2 matrix:
    /// `sigma(m)/m` on the tangential subspace and `sigma'(m)` radially.
    pub fn dh(&self, y: Vec2) -> Sym2 {
        let m = y.norm();
        if m <= 1.0 - self.eps_h {
            return Sym2::identity();
        }
        let ratio = self.sigma(m) / m;
        let radial = self.sigma_prime(m);
        let nx = y.x / m;
        let ny = y.y / m;
        // ratio * (I - n n^T) + radial * n n^T
        Sym2 {
            xx: ratio + (radial - ratio) * nx * nx,
            xy: (radial - ratio) * nx * ny,
            yy: ratio + (radial - ratio) * ny * ny,
        }
    }
}

/// Checked projection evaluation.
pub fn project_h(y: Vec2, params: &ProjectionParams) -> Result<Vec2> {
    if !y.is_finite() {
        return Err(Error::InvalidInput { context: "project_h", value: f64::NAN });
    }
    Ok(params.h(y))
}

/// Interaction-kernel parameters. `radius` is the attraction radius of
/// the kernel (the support radius); it is named `radius` rather than
/// reusing the outflow-velocity symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Intensity factor `s > 0`.
    pub intensity: f64,
    /// Support radius `r > 0`.
    pub radius: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { intensity: 0.5, radius: 0.3 }
    }
}

impl KernelParams {
    /// `K(d) = s exp(-r^2 / (r^2 - |d|^2))` for `|d| < r`, zero outside.
    pub fn eval(&self, d: Vec2) -> f64 {
        let r2 = self.radius * self.radius;
        let t = d.norm_sq();
        if t < r2 {
            self.intensity * (-r2 / (r2 - t)).exp()
        } else {
            0.0
        }
    }

    /// Analytic gradient of `K`. With `w = r^2 - |d|^2`:
    /// `grad K(d) = -2 r^2 K(d) / w^2 * d`.
    pub fn grad(&self, d: Vec2) -> Vec2 {
        let r2 = self.radius * self.radius;
        let t = d.norm_sq();
        if t >= r2 {
            return Vec2::ZERO;
        }
        let w = r2 - t;
        d.scale(-2.0 * r2 * self.eval(d) / (w * w))
    }

    /// Analytic Hessian of `K`:
    /// `hess K(d) = -2 r^2 K [ I / w^2 + 2 (2w - r^2) / w^4 * d d^T ]`.
    pub fn hessian(&self, d: Vec2) -> Sym2 {
        let r2 = self.radius * self.radius;
        let t = d.norm_sq();
        if t >= r2 {
            return Sym2::ZERO;
        }
        let w = r2 - t;
        let k = self.eval(d);
        let a = -2.0 * r2 * k / (w * w);
        let b = -4.0 * r2 * k * (2.0 * w - r2) / (w * w * w * w);
        Sym2 {
            xx: a + b * d.x * d.x,
            xy: b * d.x * d.y,
            yy: a + b * d.y * d.y,
        }
    }
}

/// Checked kernel evaluation at offset `d`.
pub fn kernel_k(d: Vec2, params: &KernelParams) -> f64 {
    params.eval(d)
}

/// Gradient at `x` of the summed agent potential `phi_K(x) = sum_i K(x - x_i)`.
pub fn agent_potential_grad(x: Vec2, positions: &[Vec2], params: &KernelParams) -> Result<Vec2> {
    let mut grad = Vec2::ZERO;
    for (idx, &p) in positions.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidInput {
                context: "agent_potential_grad",
                value: if p.x.is_finite() { p.y } else { p.x },
            });
        }
        let _ = idx;
        grad += params.grad(x - p);
    }
    Ok(grad)
}
