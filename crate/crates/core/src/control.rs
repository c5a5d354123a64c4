//! Slow-variable control data, the frozen Hamiltonian and its averages.
//!
//! The slow state is scalar. With a finite control list the Hamiltonian
//! `H(x, y, p, X, Z) = min_u { -s^2 X - phi p - 2 s Z1 - f }`, where
//! `phi = phi_tilde(x, y, u)` and `s = sigma_tilde(x, y, u)`, is evaluated
//! exactly. `s` is the slow diffusion row acting on the first Brownian
//! channel, which also drives `y1`; hence only `Z1 = V_{x y1}` enters.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Point2;
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid2D};

/// Coefficient `(x, y, u) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, Point2, f64) -> f64 + Send + Sync>;
/// Terminal datum `(x, y) -> value`.
pub type Terminal = Arc<dyn Fn(f64, Point2) -> f64 + Send + Sync>;

/// Growth and size constants a problem declares about itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    /// `|f| <= c_f (1 + |x|)`.
    pub c_f: f64,
    /// `|g| <= c_g (1 + |x|)`.
    pub c_g: f64,
    pub c_phi: f64,
    pub c_sigma: f64,
    /// Lipschitz constant of `f` in `y`, uniform in `(x, u)`.
    pub lip_y: f64,
}

#[derive(Clone)]
pub struct ControlProblem {
    pub catalog_id: String,
    pub controls: Vec<f64>,
    pub phi_tilde: Coefficient,
    pub sigma_tilde: Coefficient,
    pub running_cost: Coefficient,
    pub terminal: Terminal,
    pub discount: f64,
    pub horizon: f64,
    pub bounds: DeclaredBounds,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("catalog_id", &self.catalog_id)
            .field("controls", &self.controls)
            .field("discount", &self.discount)
            .field("horizon", &self.horizon)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

const AUDIT_SAMPLES: usize = 20_000;
const AUDIT_BOX: f64 = 50.0;
const AUDIT_SLACK: f64 = 1e-12;

impl ControlProblem {
    /// Builds a problem and audits its declared bounds on a seeded sample.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        catalog_id: impl Into<String>,
        controls: Vec<f64>,
        phi_tilde: Coefficient,
        sigma_tilde: Coefficient,
        running_cost: Coefficient,
        terminal: Terminal,
        discount: f64,
        horizon: f64,
        bounds: DeclaredBounds,
    ) -> Result<Self> {
        let prob = Self::new_unaudited(
            catalog_id,
            controls,
            phi_tilde,
            sigma_tilde,
            running_cost,
            terminal,
            discount,
            horizon,
            bounds,
        );
        prob.audit()?;
        Ok(prob)
    }

    /// Like [`ControlProblem::new`] without the randomized audit, for analytic
    /// cases (such as polynomial costs) that sit outside the growth bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn new_unaudited(
        catalog_id: impl Into<String>,
        controls: Vec<f64>,
        phi_tilde: Coefficient,
        sigma_tilde: Coefficient,
        running_cost: Coefficient,
        terminal: Terminal,
        discount: f64,
        horizon: f64,
        bounds: DeclaredBounds,
    ) -> Self {
        Self {
            catalog_id: catalog_id.into(),
            controls,
            phi_tilde,
            sigma_tilde,
            running_cost,
            terminal,
            discount,
            horizon,
            bounds,
        }
    }

    fn fail(&self, reason: String) -> Error {
        Error::AuditFailed {
            entry: self.catalog_id.clone(),
            reason,
        }
    }

    /// Randomized check of the growth and boundedness hypotheses.
    pub fn audit(&self) -> Result<()> {
        if self.controls.is_empty() || self.controls.iter().any(|u| !u.is_finite()) {
            return Err(invalid("controls", "need at least one finite control value"));
        }
        if !(self.discount > 0.0 && self.discount.is_finite()) {
            return Err(invalid("discount", "must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be > 0"));
        }
        let b = &self.bounds;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..AUDIT_SAMPLES {
            let x = rng.random_range(-AUDIT_BOX..AUDIT_BOX);
            let y = Point2::new(rng.random_range(-AUDIT_BOX..AUDIT_BOX), rng.random_range(-AUDIT_BOX..AUDIT_BOX));
            let u = self.controls[rng.random_range(0..self.controls.len())];
            let growth = 1.0 + x.abs();
            let f = (self.running_cost)(x, y, u);
            if !(f.abs() <= b.c_f * growth + AUDIT_SLACK) {
                return Err(self.fail(format!("|f({x}, {y:?}, {u})| = {} exceeds c_f (1 + |x|)", f.abs())));
            }
            let g = (self.terminal)(x, y);
            if !(g.abs() <= b.c_g * growth + AUDIT_SLACK) {
                return Err(self.fail(format!("|g({x}, {y:?})| = {} exceeds c_g (1 + |x|)", g.abs())));
            }
            let phi = (self.phi_tilde)(x, y, u);
            if !(phi.abs() <= b.c_phi + AUDIT_SLACK) {
                return Err(self.fail(format!("|phi_tilde| = {} exceeds c_phi", phi.abs())));
            }
            let s = (self.sigma_tilde)(x, y, u);
            if !(s.abs() <= b.c_sigma + AUDIT_SLACK) {
                return Err(self.fail(format!("|sigma_tilde| = {} exceeds c_sigma", s.abs())));
            }
            let y2 = Point2::new(y.y1 + rng.random_range(-1.0..1.0), y.y2 + rng.random_range(-1.0..1.0));
            let df = ((self.running_cost)(x, y2, u) - f).abs();
            if df > b.lip_y * y.dist(&y2) + AUDIT_SLACK {
                return Err(self.fail(format!("f is not {}-Lipschitz in y", b.lip_y)));
            }
        }
        Ok(())
    }

    /// The expression inside the minimum for one control.
    #[inline]
    pub fn branch(&self, frozen: &FrozenArgs, y: Point2, u: f64) -> f64 {
        let x = frozen.x;
        let s = (self.sigma_tilde)(x, y, u);
        -s * s * frozen.xx - (self.phi_tilde)(x, y, u) * frozen.p - 2.0 * s * frozen.z[0] - (self.running_cost)(x, y, u)
    }
}

/// Frozen slow arguments `(x, p, X, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenArgs {
    pub x: f64,
    pub p: f64,
    pub xx: f64,
    pub z: [f64; 2],
}

impl FrozenArgs {
    pub fn new(x: f64, p: f64, xx: f64) -> Self {
        Self { x, p, xx, z: [0.0; 2] }
    }
}

/// Minimum over the control list; the first minimizer wins ties.
pub fn hamiltonian(prob: &ControlProblem, frozen: &FrozenArgs, y: Point2) -> f64 {
    hamiltonian_argmin(prob, frozen, y).0
}

pub fn hamiltonian_argmin(prob: &ControlProblem, frozen: &FrozenArgs, y: Point2) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (k, &u) in prob.controls.iter().enumerate() {
        let v = prob.branch(frozen, y, u);
        if v < best.0 {
            best = (v, k);
        }
    }
    best
}

/// `y -> -H(x, y, p, X, 0)`, the datum of the cell problem.
#[derive(Debug, Clone)]
pub struct CellDatum {
    prob: ControlProblem,
    frozen: FrozenArgs,
}

const REG_STEP: f64 = 1e-3;
const REG_SAMPLES: usize = 4000;
const REG_INNER: f64 = 8.0;
const REG_OUTER: f64 = 64.0;

impl CellDatum {
    pub fn eval(&self, y: Point2) -> f64 {
        -hamiltonian(&self.prob, &self.frozen, y)
    }

    pub fn on_grid(&self, grid: &Grid2D) -> Field {
        Field::from_fn(*grid, |y| self.eval(y))
    }

    /// Finite-difference values of `F`, `F_2`, `F_22` and their gradients.
    fn derivative_sizes(&self, y: Point2) -> [f64; 6] {
        let h = REG_STEP;
        let f = |a: f64, b: f64| self.eval(Point2::new(y.y1 + a, y.y2 + b));
        let d2 = |a: f64| (f(a, h) - f(a, -h)) / (2.0 * h);
        let d22 = |a: f64, b: f64| (f(a, b + h) - 2.0 * f(a, b) + f(a, b - h)) / (h * h);
        let f_1 = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
        let f_2 = d2(0.0);
        let f_12 = (d2(h) - d2(-h)) / (2.0 * h);
        let f_22 = d22(0.0, 0.0);
        let f_122 = (d22(h, 0.0) - d22(-h, 0.0)) / (2.0 * h);
        let f_222 = (f(0.0, 2.0 * h) - 2.0 * f(0.0, h) + 2.0 * f(0.0, -h) - f(0.0, -2.0 * h)) / (2.0 * h * h * h);
        [
            f(0.0, 0.0).abs(),
            f_1.hypot(f_2),
            f_2.abs(),
            f_12.hypot(f_22),
            f_22.abs(),
            f_122.hypot(f_222),
        ]
    }

    fn sampled_sup(&self, half_width: f64, seed: u64) -> [f64; 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sup = [0.0f64; 6];
        for _ in 0..REG_SAMPLES {
            let y = Point2::new(
                rng.random_range(-half_width..half_width),
                rng.random_range(-half_width..half_width),
            );
            for (s, v) in sup.iter_mut().zip(self.derivative_sizes(y)) {
                *s = s.max(v);
            }
        }
        sup
    }

    /// Checks that `F`, `F_2` and `F_22` are bounded and Lipschitz: their
    /// sampled sizes on `[-64, 64]^2` may exceed those on `[-8, 8]^2` by at
    /// most a factor of two.
    pub fn audit_regularity(&self) -> Result<()> {
        let inner = self.sampled_sup(REG_INNER, 1);
        let outer = self.sampled_sup(REG_OUTER, 2);
        const NAMES: [&str; 6] = ["F", "DF", "F_2", "DF_2", "F_22", "DF_22"];
        for k in 0..6 {
            if !outer[k].is_finite() || outer[k] > 2.0 * inner[k] + 1e-6 {
                return Err(Error::AuditFailed {
                    entry: self.prob.catalog_id.clone(),
                    reason: format!(
                        "{} grows from {:.3e} on [-8,8]^2 to {:.3e} on [-64,64]^2",
                        NAMES[k], inner[k], outer[k]
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Freezes `(x, p, X)` and audits the cell datum. `Z` must vanish.
pub fn freeze_f(prob: &ControlProblem, frozen: &FrozenArgs) -> Result<CellDatum> {
    if frozen.z != [0.0; 2] {
        return Err(invalid("Z", "the cell problem is posed with Z = 0"));
    }
    let datum = CellDatum {
        prob: prob.clone(),
        frozen: *frozen,
    };
    datum.audit_regularity()?;
    Ok(datum)
}

fn check_density(m: &Field) -> Result<()> {
    let mass = m.integral();
    if (mass - 1.0).abs() > 1e-8 || m.min() < 0.0 {
        return Err(invalid("m", format!("must be a normalized density, mass {mass}")));
    }
    Ok(())
}

/// `sum_k H(x, y_k, p, X, 0) m_k h1 h2`.
pub fn effective_hamiltonian(prob: &ControlProblem, frozen: &FrozenArgs, m: &Field) -> Result<f64> {
    if frozen.z != [0.0; 2] {
        return Err(invalid("Z", "the effective Hamiltonian is evaluated at Z = 0"));
    }
    check_density(m)?;
    Ok(m.integrate_against(|y| hamiltonian(prob, frozen, y)))
}

/// `x -> sum_k g(x, y_k) m_k h1 h2` at each requested point.
pub fn effective_datum(prob: &ControlProblem, m: &Field, xs: &[f64]) -> Result<Vec<f64>> {
    check_density(m)?;
    Ok(xs
        .iter()
        .map(|&x| m.integrate_against(|y| (prob.terminal)(x, y)))
        .collect())
}

/// Parameter overrides accepted by [`catalog`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogOverrides {
    pub discount: Option<f64>,
    pub horizon: Option<f64>,
    pub sigma: Option<f64>,
    pub n_controls: Option<usize>,
}

pub const CATALOG: [&str; 3] = ["bench-A", "bench-trivial", "bench-odd"];

fn control_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect()
}

/// Benchmark problems, all with `phi_tilde = u` and constant `sigma_tilde`.
///
/// * `bench-A`: `f = sin x + cos y1 + 1/(1 + y2^2)`,
///   `g = atan x + y1^2 exp(-y1^2)`.
/// * `bench-trivial`: `f = sin x + 1/2`, `g = atan x`.
/// * `bench-odd`: `f = sin x + sin y1 + y2 / (2 (1 + y2^2))`,
///   `g = atan x + sin(y1) / 2`.
pub fn catalog(name: &str, overrides: &CatalogOverrides) -> Result<ControlProblem> {
    let sigma = overrides.sigma.unwrap_or(0.2);
    let n_controls = overrides.n_controls.unwrap_or(5);
    if n_controls == 0 {
        return Err(invalid("n_controls", "must be >= 1"));
    }
    if !sigma.is_finite() {
        return Err(invalid("sigma", "must be finite"));
    }
    let phi: Coefficient = Arc::new(|_, _, u| u);
    let sig: Coefficient = Arc::new(move |_, _, _| sigma);
    let (f, g, c_f, c_g, lip_y): (Coefficient, Terminal, f64, f64, f64) = match name {
        "bench-A" => (
            Arc::new(|x: f64, y: Point2, _| x.sin() + y.y1.cos() + 1.0 / (1.0 + y.y2 * y.y2)),
            Arc::new(|x: f64, y: Point2| x.atan() + y.y1 * y.y1 * (-y.y1 * y.y1).exp()),
            3.0,
            2.0,
            1.2,
        ),
        "bench-trivial" => (
            Arc::new(|x: f64, _, _| x.sin() + 0.5),
            Arc::new(|x: f64, _| x.atan()),
            1.5,
            2.0,
            0.0,
        ),
        "bench-odd" => (
            Arc::new(|x: f64, y: Point2, _| x.sin() + y.y1.sin() + 0.5 * y.y2 / (1.0 + y.y2 * y.y2)),
            Arc::new(|x: f64, y: Point2| x.atan() + 0.5 * y.y1.sin()),
            3.0,
            3.0,
            1.12,
        ),
        other => return Err(Error::UnknownCatalog(other.to_string())),
    };
    ControlProblem::new(
        name,
        control_grid(n_controls),
        phi,
        sig,
        f,
        g,
        overrides.discount.unwrap_or(1.0),
        overrides.horizon.unwrap_or(1.0),
        DeclaredBounds {
            c_f,
            c_g,
            c_phi: 1.0,
            c_sigma: sigma.abs(),
            lip_y,
        },
    )
}

/// The `(p, X)` pairs used to cross-check averaged and ergodic constants.
pub const AUDIT_PX: [(f64, f64); 5] = [(0.0, 0.0), (1.0, 0.0), (-0.7, 0.5), (2.0, -1.0), (0.3, 2.0)];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsSpec;
    use crate::grid_pde::{discretize, stationary_density};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn custom(controls: Vec<f64>, sigma: f64, f: Coefficient) -> ControlProblem {
        ControlProblem::new_unaudited(
            "custom",
            controls,
            Arc::new(|_, _, u| u),
            Arc::new(move |_, _, _| sigma),
            f,
            Arc::new(|x: f64, _| x.atan()),
            1.0,
            1.0,
            DeclaredBounds {
                c_f: 10.0,
                c_g: 2.0,
                c_phi: 1.0,
                c_sigma: sigma.abs(),
                lip_y: 10.0,
            },
        )
    }

    fn density(alpha: f64) -> Field {
        let s = DynamicsSpec::new(alpha, 0.0).unwrap();
        let g = Grid2D::square(6.0 / alpha.sqrt(), 61).unwrap();
        stationary_density(&discretize(&s, &g).unwrap()).unwrap()
    }

    #[test]
    fn two_point_minimum() {
        let prob = custom(vec![-1.0, 1.0], 0.0, Arc::new(|_, _, _| 0.0));
        for p in [-2.0, -0.5, 0.0, 0.3, 4.0] {
            let h = hamiltonian(&prob, &FrozenArgs::new(0.0, p, 0.0), Point2::ORIGIN);
            assert_eq!(h, -f64::abs(p));
        }
        let prob = custom(vec![-1.0, 1.0], 1.0, Arc::new(|_, _, _| 0.0));
        let h = hamiltonian(&prob, &FrozenArgs::new(0.0, 1.5, 2.0), Point2::ORIGIN);
        assert_eq!(h, -1.5 - 2.0);
    }

    #[test]
    fn singleton_control() {
        let prob = custom(vec![0.4], 0.5, Arc::new(|x, y: Point2, _| x + y.y1));
        let fr = FrozenArgs {
            x: 0.3,
            p: 2.0,
            xx: 1.0,
            z: [0.7, 9.0],
        };
        let y = Point2::new(0.2, -1.0);
        let expect = -0.25 * 1.0 - 0.4 * 2.0 - 2.0 * 0.5 * 0.7 - (0.3 + 0.2);
        assert!((hamiltonian(&prob, &fr, y) - expect).abs() < 1e-15);
    }

    #[test]
    fn catalog_entries_pass_their_audits() {
        for name in CATALOG {
            let prob = catalog(name, &CatalogOverrides::default()).unwrap();
            assert_eq!(prob.controls.len(), 5);
            for &(p, xx) in &AUDIT_PX {
                freeze_f(&prob, &FrozenArgs::new(0.3, p, xx)).unwrap();
            }
        }
        assert!(matches!(
            catalog("bench-Z", &CatalogOverrides::default()),
            Err(Error::UnknownCatalog(_))
        ));
    }

    #[test]
    fn audits_reject_violations() {
        let bad_growth = ControlProblem::new(
            "quadratic-cost",
            vec![0.0],
            Arc::new(|_, _, u| u),
            Arc::new(|_, _, _| 0.2),
            Arc::new(|x: f64, _, _| x * x),
            Arc::new(|_, _| 0.0),
            1.0,
            1.0,
            DeclaredBounds {
                c_f: 3.0,
                c_g: 1.0,
                c_phi: 1.0,
                c_sigma: 0.2,
                lip_y: 0.0,
            },
        );
        assert!(matches!(bad_growth, Err(Error::AuditFailed { .. })));
        // Within the growth bounds on the audit box, but unbounded in y2.
        let unbounded_in_y = custom(vec![0.0], 0.2, Arc::new(|_, y: Point2, _| 0.01 * y.y2));
        let datum = freeze_f(&unbounded_in_y, &FrozenArgs::new(0.0, 0.0, 0.0));
        assert!(matches!(datum, Err(Error::AuditFailed { .. })));
        let prob = catalog("bench-A", &CatalogOverrides::default()).unwrap();
        let fr = FrozenArgs {
            z: [1.0, 0.0],
            ..FrozenArgs::new(0.0, 1.0, 0.0)
        };
        assert!(freeze_f(&prob, &fr).is_err());
    }

    #[test]
    fn y_free_data_give_constant_cell_datum() {
        let prob = catalog("bench-trivial", &CatalogOverrides::default()).unwrap();
        let d = freeze_f(&prob, &FrozenArgs::new(0.7, 1.3, -0.4)).unwrap();
        let g = Grid2D::square(3.0, 21).unwrap();
        let f = d.on_grid(&g);
        assert_eq!(f.min(), f.max());
        let h = hamiltonian(&prob, &FrozenArgs::new(0.7, 1.3, -0.4), Point2::ORIGIN);
        assert_eq!(f.values[0], -h);
    }

    #[test]
    fn averages_against_the_density() {
        let alpha = 2.0;
        let m = density(alpha);
        let trivial = catalog("bench-trivial", &CatalogOverrides::default()).unwrap();
        let fr = FrozenArgs::new(0.4, 0.8, 0.3);
        let hbar = effective_hamiltonian(&trivial, &fr, &m).unwrap();
        assert!((hbar - hamiltonian(&trivial, &fr, Point2::ORIGIN)).abs() < 1e-10);
        // f = y1^2 shifts the average by -E[y1^2] = -1/alpha.
        let quad = custom(vec![-1.0, 1.0], 0.0, Arc::new(|_, y: Point2, _| y.y1 * y.y1));
        let flat = custom(vec![-1.0, 1.0], 0.0, Arc::new(|_, _, _| 0.0));
        let shift = effective_hamiltonian(&quad, &fr, &m).unwrap() - effective_hamiltonian(&flat, &fr, &m).unwrap();
        assert!((shift + 1.0 / alpha).abs() < 5e-3, "{shift}");
        let xs = [-2.0, 0.0, 1.5];
        let gbar = effective_datum(&trivial, &m, &xs).unwrap();
        for (x, g) in xs.iter().zip(gbar) {
            assert!((g - x.atan()).abs() < 1e-10);
        }
        let odd = catalog("bench-odd", &CatalogOverrides::default()).unwrap();
        for (x, g) in xs.iter().zip(effective_datum(&odd, &m, &xs).unwrap()) {
            assert!((g - x.atan()).abs() < 1e-10);
        }
        let mut unnormalized = m.clone();
        unnormalized.values[0] += 1.0;
        assert!(effective_hamiltonian(&trivial, &fr, &unnormalized).is_err());
    }

    #[test]
    fn effective_hamiltonian_is_concave_and_degenerate_elliptic() {
        let m = density(2.0);
        let prob = catalog("bench-A", &CatalogOverrides::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (p0, x0) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (p1, x1) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let hb = |p, xx| effective_hamiltonian(&prob, &FrozenArgs::new(0.2, p, xx), &m).unwrap();
            let mid = hb(0.5 * (p0 + p1), 0.5 * (x0 + x1));
            assert!(mid >= 0.5 * (hb(p0, x0) + hb(p1, x1)) - 1e-12);
            let bump = rng.random_range(0.0..2.0);
            assert!(hb(p0, x0 + bump) <= hb(p0, x0) + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn minimum_is_attained_and_below_every_branch(
            x in -5.0..5.0f64, p in -3.0..3.0f64, xx in -3.0..3.0f64, z in -2.0..2.0f64,
            y1 in -5.0..5.0f64, y2 in -5.0..5.0f64, which in 0usize..3,
        ) {
            let prob = catalog(CATALOG[which], &CatalogOverrides::default()).unwrap();
            let fr = FrozenArgs { x, p, xx, z: [z, 0.0] };
            let y = Point2::new(y1, y2);
            let (h, k) = hamiltonian_argmin(&prob, &fr, y);
            for &u in &prob.controls {
                prop_assert!(h <= prob.branch(&fr, y, u));
            }
            prop_assert_eq!(h, prob.branch(&fr, y, prob.controls[k]));
        }

        #[test]
        fn hamiltonian_inherits_the_y_lipschitz_bound(
            x in -5.0..5.0f64, p in -3.0..3.0f64, xx in -3.0..3.0f64,
            y1 in -6.0..6.0f64, y2 in -6.0..6.0f64, d1 in -1.0..1.0f64, d2 in -1.0..1.0f64, which in 0usize..3,
        ) {
            let prob = catalog(CATALOG[which], &CatalogOverrides::default()).unwrap();
            let fr = FrozenArgs::new(x, p, xx);
            let (a, b) = (Point2::new(y1, y2), Point2::new(y1 + d1, y2 + d2));
            let gap = (hamiltonian(&prob, &fr, a) - hamiltonian(&prob, &fr, b)).abs();
            prop_assert!(gap <= prob.bounds.lip_y * a.dist(&b) + 1e-12);
        }
    }
}
