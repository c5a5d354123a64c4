//! Monotone finite differences for the generator on a truncated rectangle.
//!
//! In each direction the generator is a 1-D operator `-a u'' + beta u'` with
//! `beta = alpha * y` (the drift enters with a minus sign). Interior stencils:
//!
//! * [`Stencil::Upwind`]: central second difference plus a first-order
//!   difference taken against the drift.
//! * [`Stencil::MinimalDiffusion`]: central differences for both terms, with
//!   the diffusion raised to `max(a, |beta| h / 2)`. This is the least added
//!   diffusion that keeps every coupling nonnegative. It coincides with upwinding
//!   where `a = 0` (the Grushin axis in the `y2` direction) and is
//!   second-order wherever the physical diffusion dominates.
//!
//! Boundary rows mirror the missing outer neighbour onto the inner one
//! (reflecting closure). The drift points inward there, so the first-order
//! term only ever reads interior values. Every row has zero sum and
//! nonnegative couplings.

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsSpec;
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid2D};
use crate::linalg::{ShiftedSolver, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    Upwind,
    #[default]
    MinimalDiffusion,
}

/// `L_h` on a grid, immutable after construction.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    pub spec: DynamicsSpec,
    pub grid: Grid2D,
    pub stencil: Stencil,
    op: SparseOperator,
}

/// Couplings `(to_minus, to_plus)` of one interior node along one axis.
#[inline]
fn axis_couplings(a: f64, beta: f64, h: f64, stencil: Stencil) -> (f64, f64) {
    let inv_h2 = 1.0 / (h * h);
    match stencil {
        Stencil::Upwind => {
            let adv = beta.abs() / h;
            if beta > 0.0 {
                (a * inv_h2 + adv, a * inv_h2)
            } else {
                (a * inv_h2, a * inv_h2 + adv)
            }
        }
        Stencil::MinimalDiffusion => {
            let a_eff = a.max(0.5 * beta.abs() * h);
            let half = 0.5 * beta / h;
            // At the threshold one coupling is zero up to rounding.
            ((a_eff * inv_h2 + half).max(0.0), (a_eff * inv_h2 - half).max(0.0))
        }
    }
}

/// Couplings of one axis at node index `i` of `n`: `(neighbour, coupling)` pairs
/// as index offsets `-1` / `+1`.
fn axis_row(a: f64, beta: f64, h: f64, i: usize, n: usize, stencil: Stencil) -> [(isize, f64); 2] {
    if i == 0 || i == n - 1 {
        // Reflecting closure: the ghost node equals the inner neighbour.
        let inward: isize = if i == 0 { 1 } else { -1 };
        let c = 2.0 * a / (h * h) + beta.abs() / h;
        [(inward, c), (0, 0.0)]
    } else {
        let (minus, plus) = axis_couplings(a, beta, h, stencil);
        [(-1, minus), (1, plus)]
    }
}

pub fn discretize(spec: &DynamicsSpec, grid: &Grid2D) -> Result<DiscreteGenerator> {
    discretize_with(spec, grid, Stencil::default())
}

pub fn discretize_with(spec: &DynamicsSpec, grid: &Grid2D, stencil: Stencil) -> Result<DiscreteGenerator> {
    spec.validate()?;
    grid.validate()?;
    let (n1, n2) = (grid.n1(), grid.n2());
    let [h1, h2] = grid.spacings();
    let mut rows = Vec::with_capacity(grid.len());
    for i in 0..n1 {
        let y1 = grid.coord(0, i);
        let a2 = spec.y2_diffusion(y1);
        let beta1 = spec.alpha * y1;
        let along1 = axis_row(1.0, beta1, h1, i, n1, stencil);
        for j in 0..n2 {
            let y2 = grid.coord(1, j);
            let along2 = axis_row(a2, spec.alpha * y2, h2, j, n2, stencil);
            let k = grid.index(i, j);
            let mut row = Vec::with_capacity(4);
            for (off, c) in along1 {
                if c != 0.0 && off != 0 {
                    row.push(((i as isize + off) as usize * n2 + j, c));
                }
            }
            for (off, c) in along2 {
                if c != 0.0 && off != 0 {
                    row.push((k.wrapping_add_signed(off), c));
                }
            }
            rows.push(row);
        }
    }
    let op = SparseOperator::from_rows(rows);
    if op.nnz() > 0 && op.min_coupling() < 0.0 {
        return Err(invalid("grid", "discretization produced a negative coupling"));
    }
    Ok(DiscreteGenerator {
        spec: *spec,
        grid: *grid,
        stencil,
        op,
    })
}

impl DiscreteGenerator {
    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    pub fn apply(&self, u: &Field) -> Field {
        debug_assert_eq!(u.grid, self.grid);
        Field {
            grid: self.grid,
            values: self.op.apply(&u.values),
        }
    }

    pub fn apply_transpose(&self, m: &Field) -> Field {
        Field {
            grid: self.grid,
            values: self.op.apply_transpose(&m.values),
        }
    }

    /// Smallest off-diagonal coupling; nonnegative for a monotone scheme.
    pub fn min_coupling(&self) -> f64 {
        self.op.min_coupling()
    }
}

/// Factored `delta I + L_h`, reusable across right-hand sides.
pub struct DiscountedSolver<'a> {
    gen: &'a DiscreteGenerator,
    delta: f64,
    inner: ShiftedSolver<'a>,
}

impl<'a> DiscountedSolver<'a> {
    pub fn new(gen: &'a DiscreteGenerator, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid("delta", format!("must be > 0, got {delta}")));
        }
        Ok(Self {
            gen,
            delta,
            inner: ShiftedSolver::new(&gen.op, delta, 1.0)?,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        check_grid(self.gen, rhs)?;
        Ok(Field {
            grid: self.gen.grid,
            values: self.inner.solve(&rhs.values)?,
        })
    }
}

fn check_grid(gen: &DiscreteGenerator, f: &Field) -> Result<()> {
    if f.grid != gen.grid {
        return Err(invalid("field", "grid does not match the generator"));
    }
    if !f.is_finite() {
        return Err(invalid("field", "contains non-finite values"));
    }
    Ok(())
}

/// Solves `(delta I + L_h) u = rhs`.
pub fn solve_discounted(gen: &DiscreteGenerator, delta: f64, rhs: &Field) -> Result<Field> {
    DiscountedSolver::new(gen, delta)?.solve(rhs)
}

/// Shift used by inverse iteration on the adjoint. It only has to dominate
/// rounding in the near-singular pivot; the spectral gap is `O(alpha)`.
const STATIONARY_SHIFT: f64 = 1e-8;
const STATIONARY_MAX_SWEEPS: usize = 50;
const STATIONARY_TOL: f64 = 1e-13;
const UNDERSHOOT_TOL: f64 = 1e-12;

/// Discrete invariant density: the nonnegative solution of `L_h^T m = 0`
/// normalized so that `sum_k m_k h1 h2 = 1`.
pub fn stationary_density(gen: &DiscreteGenerator) -> Result<Field> {
    let n = gen.grid.len();
    let area = gen.grid.cell_area();
    let solver = ShiftedSolver::new(&gen.op, STATIONARY_SHIFT, 1.0)?;
    let mut m = vec![1.0 / (n as f64 * area); n];
    let mut change = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_SWEEPS {
        let mut next = solver.solve_transpose(&m);
        let undershoot = next.iter().copied().fold(0.0, f64::min);
        let mass: f64 = next.iter().sum::<f64>() * area;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NoConvergence {
                iterations: 0,
                change: mass,
            });
        }
        if undershoot / mass < -UNDERSHOOT_TOL {
            return Err(Error::NegativeDensity(undershoot / mass));
        }
        for v in next.iter_mut() {
            *v = (*v / mass).max(0.0);
        }
        let mass: f64 = next.iter().sum::<f64>() * area;
        for v in next.iter_mut() {
            *v /= mass;
        }
        change = next.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum::<f64>() * area;
        m = next;
        if change < STATIONARY_TOL {
            return Field::new(gen.grid, m);
        }
    }
    Err(Error::NoConvergence {
        iterations: STATIONARY_MAX_SWEEPS,
        change,
    })
}

/// Result of a time march: the final field and the value at the origin after
/// every step.
#[derive(Debug, Clone)]
pub struct TimeMarch {
    pub last: Field,
    pub origin_trace: Vec<(f64, f64)>,
}

fn march(
    gen: &DiscreteGenerator,
    start: Field,
    source: Option<&Field>,
    t_end: f64,
    dt: f64,
) -> Result<TimeMarch> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", format!("must be >= 0, got {t_end}")));
    }
    check_grid(gen, &start)?;
    if let Some(f) = source {
        check_grid(gen, f)?;
    }
    let steps = (t_end / dt).round() as usize;
    if steps == 0 {
        return Ok(TimeMarch {
            last: start,
            origin_trace: vec![],
        });
    }
    let dt = t_end / steps as f64;
    let solver = ShiftedSolver::new(&gen.op, 1.0, dt)?;
    let origin = gen.grid.origin_index();
    let mut u = start.values;
    let mut trace = Vec::with_capacity(steps);
    for step in 1..=steps {
        if let Some(f) = source {
            for (ui, fi) in u.iter_mut().zip(&f.values) {
                *ui += dt * fi;
            }
        }
        u = solver.solve(&u)?;
        trace.push((step as f64 * dt, u[origin]));
    }
    Ok(TimeMarch {
        last: Field::new(gen.grid, u)?,
        origin_trace: trace,
    })
}

/// Implicit Euler for `u_t + L_h u = 0`, `u(0) = u0`. The step is adjusted so
/// that an integer number of steps lands on `t_end`.
pub fn solve_parabolic(gen: &DiscreteGenerator, u0: &Field, t_end: f64, dt: f64) -> Result<TimeMarch> {
    march(gen, u0.clone(), None, t_end, dt)
}

/// Implicit Euler for `v_t + L_h v = f`, `v(0) = 0`.
pub fn solve_forced(gen: &DiscreteGenerator, f: &Field, t_end: f64, dt: f64) -> Result<TimeMarch> {
    march(gen, Field::constant(gen.grid, 0.0), Some(f), t_end, dt)
}

/// `(E[y1], E[y2], E[y1^2], E[y2^2], E[y1 y2])` under a density.
pub fn density_moments(m: &Field) -> [f64; 5] {
    [
        m.integrate_against(|p| p.y1),
        m.integrate_against(|p| p.y2),
        m.integrate_against(|p| p.y1 * p.y1),
        m.integrate_against(|p| p.y2 * p.y2),
        m.integrate_against(|p| p.y1 * p.y2),
    ]
}
