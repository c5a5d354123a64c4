//! Coefficients of the fast process and the closed-form auxiliary functions
//! built on them.
//!
//! The fast variable `y = (y1, y2)` follows
//!
//! ```text
//! dY = b(Y) dt + sqrt(2) sigma_rho(Y) dW,   b(y) = -alpha y,
//! sigma_rho(y) = [[1, 0, 0], [0, y1, rho]]
//! ```
//!
//! so that `sigma_rho sigma_rho^T = diag(1, y1^2 + rho^2)`. With `rho = 0` the
//! diffusion is of Grushin type and degenerates on the axis `y1 = 0`; `rho > 0`
//! is the locally elliptic regularization. The generator acting on a 2-jet
//! `(q, Y)` at `y` is `-tr(sigma sigma^T Y) - b . q`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Drift rate `alpha` and regularization `rho` of the fast process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub alpha: f64,
    #[serde(default)]
    pub rho: f64,
}

impl DynamicsSpec {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        let spec = Self { alpha, rho };
        spec.validate()?;
        Ok(spec)
    }

    /// The unregularized Grushin process (`rho = 0`).
    pub fn degenerate(alpha: f64) -> Result<Self> {
        Self::new(alpha, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(invalid("rho", format!("must be >= 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// The Lipschitz and Hölder estimates for the discounted correctors need
    /// `alpha > 1`.
    pub fn require_strong_drift(&self) -> Result<()> {
        if self.alpha > 1.0 {
            Ok(())
        } else {
            Err(invalid(
                "alpha",
                format!("regularity estimates require alpha > 1, got {}", self.alpha),
            ))
        }
    }

    /// Same drift, different regularization.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.alpha, rho)
    }

    /// Variance of the `y2` diffusion at `y`, i.e. `y1^2 + rho^2`.
    #[inline]
    pub fn y2_diffusion(&self, y1: f64) -> f64 {
        y1 * y1 + self.rho * self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub y1: f64,
    pub y2: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { y1: 0.0, y2: 0.0 };

    #[inline]
    pub const fn new(y1: f64, y2: f64) -> Self {
        Self { y1, y2 }
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.y1.hypot(self.y2)
    }

    #[inline]
    pub fn dist(&self, other: &Point2) -> f64 {
        (self.y1 - other.y1).hypot(self.y2 - other.y2)
    }

    pub fn is_finite(&self) -> bool {
        self.y1.is_finite() && self.y2.is_finite()
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.y1, -self.y2)
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `tr(self * other)` for two symmetric matrices.
    pub fn contract(&self, other: &Sym2) -> f64 {
        self.xx * other.xx + 2.0 * self.xy * other.xy + self.yy * other.yy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.xx + self.yy);
        let half_gap = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        [mean - half_gap, mean + half_gap]
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(s * self.xx, s * self.xy, s * self.yy)
    }

    pub fn add(&self, other: &Sym2) -> Sym2 {
        Sym2::new(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)
    }
}

/// Value, gradient and Hessian of a function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: Sym2,
}

impl Jet2 {
    pub fn new(value: f64, grad: [f64; 2], hess: Sym2) -> Self {
        Self { value, grad, hess }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            value,
            ..Self::default()
        }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Jet2, b: f64) -> Jet2 {
        Jet2 {
            value: a * self.value + b * other.value,
            grad: [
                a * self.grad[0] + b * other.grad[0],
                a * self.grad[1] + b * other.grad[1],
            ],
            hess: self.hess.scale(a).add(&other.hess.scale(b)),
        }
    }
}

/// `sigma_rho(y) sigma_rho(y)^T = diag(1, y1^2 + rho^2)`.
pub fn diffusion_product(spec: &DynamicsSpec, y: Point2) -> Sym2 {
    Sym2::diag(1.0, spec.y2_diffusion(y.y1))
}

/// Ornstein-Uhlenbeck drift `b(y) = -alpha y`.
pub fn drift(spec: &DynamicsSpec, y: Point2) -> [f64; 2] {
    [-spec.alpha * y.y1, -spec.alpha * y.y2]
}

/// Generator applied to a jet: `-tr(sigma sigma^T Y) - b . q`.
pub fn generator_apply(spec: &DynamicsSpec, jet: &Jet2, y: Point2) -> f64 {
    let a = diffusion_product(spec, y);
    let b = drift(spec, y);
    -a.contract(&jet.hess) - (b[0] * jet.grad[0] + b[1] * jet.grad[1])
}

/// Lyapunov function `W(y) = y1^4 / 12 + y2^2 / 2`.
pub fn lyapunov_w(y: Point2) -> f64 {
    y.y1.powi(4) / 12.0 + 0.5 * y.y2 * y.y2
}

/// Regularized generator applied to `W`, in closed form:
/// `-2 y1^2 - rho^2 + (alpha / 3) y1^4 + alpha y2^2`.
pub fn lyapunov_residual(spec: &DynamicsSpec, y: Point2) -> f64 {
    let y1sq = y.y1 * y.y1;
    -2.0 * y1sq - spec.rho * spec.rho + spec.alpha / 3.0 * y1sq * y1sq + spec.alpha * y.y2 * y.y2
}

/// Minimum of [`lyapunov_residual`] over all directions at radius `r`.
///
/// With `t = cos^2(theta)` the residual on the circle is the quadratic
/// `(alpha r^4 / 3) t^2 - (2 + alpha) r^2 t + alpha r^2 - rho^2`, minimized
/// over `t in [0, 1]`.
pub fn lyapunov_worst_residual(spec: &DynamicsSpec, r: f64) -> f64 {
    let r2 = r * r;
    let qa = spec.alpha * r2 * r2 / 3.0;
    let qb = -(2.0 + spec.alpha) * r2;
    let qc = spec.alpha * r2 - spec.rho * spec.rho;
    let t = if qa > 0.0 { (-qb / (2.0 * qa)).clamp(0.0, 1.0) } else { 1.0 };
    let at = |t: f64| qa * t * t + qb * t + qc;
    at(t).min(at(0.0)).min(at(1.0))
}

/// Radius `R0` beyond which `lyapunov_residual >= 1` in every direction.
///
/// Scans the radial worst case on a fine mesh up to a radius past which it is
/// increasing, then bisects the last crossing of the level 1.
pub fn lyapunov_radius(spec: &DynamicsSpec) -> Result<f64> {
    spec.validate()?;
    // Past r_c the angular minimizer is interior and the worst case reads
    // alpha r^2 - rho^2 - 3 (2 + alpha)^2 / (4 alpha), which increases in r.
    let r_c = (3.0 * (2.0 + spec.alpha) / (2.0 * spec.alpha)).sqrt();
    let mut r_hi = r_c.max(1.0);
    let mut doublings = 0;
    while lyapunov_worst_residual(spec, r_hi) < 1.0 {
        r_hi *= 2.0;
        doublings += 1;
        if doublings > 200 || !r_hi.is_finite() {
            return Err(invalid("rho", "no exterior region where the Lyapunov residual exceeds 1"));
        }
    }
    const SCAN: usize = 10_000;
    let step = r_hi / SCAN as f64;
    let mut last_below = None;
    for k in 0..=SCAN {
        let r = k as f64 * step;
        if lyapunov_worst_residual(spec, r) < 1.0 {
            last_below = Some(r);
        }
    }
    let Some(lo) = last_below else {
        return Ok(0.0);
    };
    let (mut lo, mut hi) = (lo, (lo + step).min(r_hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lyapunov_worst_residual(spec, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Weight `Phi(z) = z1^4 + z2^2 + M` of the Hölder estimate.
pub fn phi(z: Point2, m: f64) -> f64 {
    z.y1.powi(4) + z.y2 * z.y2 + m
}

/// `-Delta_G Phi(z) + alpha z . D Phi(z) - 2 alpha Phi(z)` evaluated from the
/// derivatives of `Phi`, where `Delta_G u = u_11 + z1^2 u_22` is the Grushin
/// Laplacian.
pub fn theta_gap(spec: &DynamicsSpec, z: Point2, m: f64) -> f64 {
    let (z1, z2) = (z.y1, z.y2);
    let phi_11 = 12.0 * z1 * z1;
    let phi_22 = 2.0;
    let grad = [4.0 * z1.powi(3), 2.0 * z2];
    let grushin_laplacian = phi_11 + z1 * z1 * phi_22;
    -grushin_laplacian + spec.alpha * (z1 * grad[0] + z2 * grad[1]) - 2.0 * spec.alpha * phi(z, m)
}

/// Smallest `L` (up to scan resolution) with
/// `-Delta_G Phi + alpha z . D Phi >= 2 alpha Phi - L` on the scan region.
///
/// The region `[-SCAN_HALF_WIDTH, SCAN_HALF_WIDTH]^2` is scanned on a
/// uniform mesh; the best mesh point is then polished by coordinate-wise
/// golden-section search.
pub fn phi_theta_constant(spec: &DynamicsSpec, m: f64) -> Result<f64> {
    spec.validate()?;
    spec.require_strong_drift()?;
    if !(m >= 1.0 && m.is_finite()) {
        return Err(invalid("M", format!("must be >= 1, got {m}")));
    }
    const SCAN_HALF_WIDTH: f64 = 10.0;
    const MESH: usize = 400;
    let h = 2.0 * SCAN_HALF_WIDTH / MESH as f64;
    let mut best = (f64::INFINITY, Point2::ORIGIN);
    for i in 0..=MESH {
        for j in 0..=MESH {
            let z = Point2::new(-SCAN_HALF_WIDTH + i as f64 * h, -SCAN_HALF_WIDTH + j as f64 * h);
            let g = theta_gap(spec, z, m);
            if g < best.0 {
                best = (g, z);
            }
        }
    }
    let mut z = best.1;
    for _ in 0..4 {
        z.y1 = golden_min(|t| theta_gap(spec, Point2::new(t, z.y2), m), z.y1 - h, z.y1 + h);
        z.y2 = golden_min(|t| theta_gap(spec, Point2::new(z.y1, t), m), z.y2 - h, z.y2 + h);
    }
    let min_gap = theta_gap(spec, z, m).min(best.0);
    let constant = -min_gap;
    // A few ulps of slack so that exact re-evaluation at the minimizer passes.
    Ok(constant + 1e-12 * (1.0 + constant.abs()))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
