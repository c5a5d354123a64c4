//! Backward solvers for the two-scale HJB problem and its effective limit.
//!
//! With `tau = T - t` the epsilon-problem reads
//! `V_tau = max_u { s^2 V_xx + phi V_x + (2 s / sqrt(eps)) V_{x y1} + f } - L V / eps - a V`
//! and the effective problem
//! `V_tau = int max_u { s^2 V_xx + phi V_x + f } dm - a V`.
//! Each step is split: an explicit monotone step for the slow terms (upwind
//! `V_x` per control branch, central `V_xx`, a 7-point mixed stencil chosen by
//! the sign of its coefficient) followed by an implicit Euler step of
//! `I + (dt / eps) L_h` on every `x` slice, factored once per epsilon. The
//! time step is limited only by the slow terms.
//!
//! Boundaries in `x` and `y1` mirror the first interior neighbour.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlProblem;
use crate::dynamics::DynamicsSpec;
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid2D};
use crate::grid_pde::{discretize, stationary_density, DiscreteGenerator};
use crate::linalg::ShiftedSolver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowGrid {
    pub half_width: f64,
    pub count: usize,
    pub horizon: f64,
    /// Number of backward steps; `dt = horizon / n_steps`.
    pub n_steps: usize,
}

impl SlowGrid {
    /// `x` in `[-4, 4]` with 81 nodes and 200 steps over the problem horizon.
    pub fn default_for(prob: &ControlProblem) -> Self {
        Self {
            half_width: 4.0,
            count: 81,
            horizon: prob.horizon,
            n_steps: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(invalid("half_width", "must be positive"));
        }
        if self.count < 3 || self.count.is_multiple_of(2) {
            return Err(invalid("count", format!("must be odd and >= 3, got {}", self.count)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps", "must be positive"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.count - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - ((self.count - 1) / 2) as f64) * self.spacing()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.x(i)).collect()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of backward step `n` (step 0 is the terminal time).
    pub fn time(&self, n: usize) -> f64 {
        self.horizon - n as f64 * self.dt()
    }
}

/// Largest stable explicit step for the slow block of `prob` on `slow`.
pub fn cfl_bound(prob: &ControlProblem, slow: &SlowGrid) -> f64 {
    let h = slow.spacing();
    let b = &prob.bounds;
    1.0 / (prob.discount + 2.0 * b.c_sigma * b.c_sigma / (h * h) + b.c_phi / h)
}

fn check_setup(prob: &ControlProblem, slow: &SlowGrid) -> Result<()> {
    slow.validate()?;
    if (slow.horizon - prob.horizon).abs() > 1e-12 * prob.horizon {
        return Err(invalid(
            "horizon",
            format!("slow grid horizon {} differs from the problem's {}", slow.horizon, prob.horizon),
        ));
    }
    let bound = cfl_bound(prob, slow);
    if slow.dt() > bound {
        return Err(Error::Cfl { dt: slow.dt(), bound });
    }
    Ok(())
}

/// Values at selected backward steps. Effective solutions have one value
/// per `x` node; epsilon solutions have `x`-major slices over the fast grid.
#[derive(Debug, Clone)]
pub struct ValueTensor {
    pub slow: SlowGrid,
    pub fast: Option<Grid2D>,
    pub steps: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl ValueTensor {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&n| self.slow.time(n)).collect()
    }

    pub fn at_step(&self, n: usize) -> Option<&[f64]> {
        self.steps.iter().position(|&s| s == n).map(|k| self.values[k].as_slice())
    }

    /// CSV with columns `t,x,value` (effective) or `t,x,y1,y2,value`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        use crate::grid::fmt_f64;
        match self.fast {
            None => writeln!(out, "t,x,value")?,
            Some(_) => writeln!(out, "t,x,y1,y2,value")?,
        }
        for (&n, slice) in self.steps.iter().zip(&self.values) {
            let t = fmt_f64(self.slow.time(n));
            match self.fast {
                None => {
                    for (i, v) in slice.iter().enumerate() {
                        writeln!(out, "{t},{},{}", fmt_f64(self.slow.x(i)), fmt_f64(*v))?;
                    }
                }
                Some(g) => {
                    for (idx, v) in slice.iter().enumerate() {
                        let (i, k) = (idx / g.len(), idx % g.len());
                        let p = g.point(k);
                        writeln!(
                            out,
                            "{t},{},{},{},{}",
                            fmt_f64(self.slow.x(i)),
                            fmt_f64(p.y1),
                            fmt_f64(p.y2),
                            fmt_f64(*v)
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(s^2, s, phi, f)` at every `(x, fast node, control)`, fast node major.
struct Tables {
    nu: usize,
    nodes: Vec<usize>,
    weights: Vec<f64>,
    /// Index `((i * nodes.len()) + k) * nu + u`.
    entries: Vec<[f64; 4]>,
}

/// Fast nodes whose cell mass is below this are dropped from averages.
const PRUNE_MASS: f64 = 1e-16;

impl Tables {
    fn build(prob: &ControlProblem, slow: &SlowGrid, fast: &Grid2D, weights: Option<&Field>) -> Self {
        let (nodes, w): (Vec<usize>, Vec<f64>) = match weights {
            Some(m) => {
                let area = m.grid.cell_area();
                (0..fast.len())
                    .filter(|&k| m.values[k] * area > PRUNE_MASS)
                    .map(|k| (k, m.values[k] * area))
                    .unzip()
            }
            None => ((0..fast.len()).collect(), vec![]),
        };
        let nu = prob.controls.len();
        let xs = slow.xs();
        let entries: Vec<[f64; 4]> = xs
            .par_iter()
            .flat_map_iter(|&x| {
                let nodes = &nodes;
                nodes.iter().flat_map(move |&k| {
                    let y = fast.point(k);
                    prob.controls.iter().map(move |&u| {
                        let s = (prob.sigma_tilde)(x, y, u);
                        [s * s, s, (prob.phi_tilde)(x, y, u), (prob.running_cost)(x, y, u)]
                    })
                })
            })
            .collect();
        Self {
            nu,
            nodes,
            weights: w,
            entries,
        }
    }
}

#[inline]
fn mirror(i: usize, n: usize) -> (usize, usize) {
    let lo = if i == 0 { 1 } else { i - 1 };
    let hi = if i + 1 == n { n - 2 } else { i + 1 };
    (lo, hi)
}

/// Backward march of the effective problem with the averaged Hamiltonian.
/// `m` must live on the fast grid used by the epsilon-problem it is compared
/// with. Every time slice is kept.
pub fn solve_effective(prob: &ControlProblem, m: &Field, slow: &SlowGrid) -> Result<ValueTensor> {
    check_setup(prob, slow)?;
    let mass = m.integral();
    if (mass - 1.0).abs() > 1e-8 || m.min() < 0.0 {
        return Err(invalid("m", format!("must be a normalized density, mass {mass}")));
    }
    let tables = Tables::build(prob, slow, &m.grid, Some(m));
    let nx = slow.count;
    let (h, dt, a) = (slow.spacing(), slow.dt(), prob.discount);
    let xs = slow.xs();
    let mut v: Vec<f64> = xs
        .iter()
        .map(|&x| {
            tables
                .nodes
                .iter()
                .zip(&tables.weights)
                .map(|(&k, w)| w * (prob.terminal)(x, m.grid.point(k)))
                .sum()
        })
        .collect();
    let mut out = ValueTensor {
        slow: *slow,
        fast: None,
        steps: vec![0],
        values: vec![v.clone()],
    };
    let nk = tables.nodes.len();
    for n in 1..=slow.n_steps {
        let next: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = mirror(i, nx);
                let vxx = (v[hi] - 2.0 * v[i] + v[lo]) / (h * h);
                let fwd = (v[hi] - v[i]) / h;
                let bwd = (v[i] - v[lo]) / h;
                let mut avg = 0.0;
                for k in 0..nk {
                    let row = &tables.entries[(i * nk + k) * tables.nu..][..tables.nu];
                    let best = row
                        .iter()
                        .map(|e| e[0] * vxx + e[2] * if e[2] > 0.0 { fwd } else { bwd } + e[3])
                        .fold(f64::NEG_INFINITY, f64::max);
                    avg += tables.weights[k] * best;
                }
                v[i] + dt * (avg - a * v[i])
            })
            .collect();
        v = next;
        out.steps.push(n);
        out.values.push(v.clone());
    }
    Ok(out)
}

/// One backward step of the epsilon-problem observed by [`solve_full`].
pub struct FullSlice<'a> {
    pub step: usize,
    pub time: f64,
    /// `x`-major: node `(i, k)` at `i * fast.len() + k`.
    pub values: &'a [f64],
}

struct FullContext<'a> {
    prob: &'a ControlProblem,
    slow: SlowGrid,
    fast: Grid2D,
    gen: DiscreteGenerator,
    tables: &'a Tables,
}

fn full_context<'a>(
    prob: &'a ControlProblem,
    spec: &DynamicsSpec,
    slow: &SlowGrid,
    fast: &Grid2D,
    tables: &'a Tables,
) -> Result<FullContext<'a>> {
    check_setup(prob, slow)?;
    Ok(FullContext {
        prob,
        slow: *slow,
        fast: *fast,
        gen: discretize(spec, fast)?,
        tables,
    })
}

fn march_full(ctx: &FullContext, epsilon: f64, terminal: &[f64], observe: &mut dyn FnMut(FullSlice)) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let slow = &ctx.slow;
    let (nx, ny) = (slow.count, ctx.fast.len());
    let (n1, n2) = (ctx.fast.n1(), ctx.fast.n2());
    let (hx, hy) = (slow.spacing(), ctx.fast.spacing(0));
    let (dt, a) = (slow.dt(), ctx.prob.discount);
    let mixed_scale = 2.0 / epsilon.sqrt();
    let nu = ctx.tables.nu;
    let fast_solver = ShiftedSolver::new(ctx.gen.operator(), 1.0, dt / epsilon)?;
    let mut v = terminal.to_vec();
    observe(FullSlice {
        step: 0,
        time: slow.time(0),
        values: &v,
    });
    let mut next = vec![0.0; v.len()];
    for n in 1..=slow.n_steps {
        next.par_chunks_mut(ny).enumerate().try_for_each(|(i, out)| -> Result<()> {
            let (il, ih) = mirror(i, nx);
            let (c, l, r) = (&v[i * ny..][..ny], &v[il * ny..][..ny], &v[ih * ny..][..ny]);
            for (k, o) in out.iter_mut().enumerate() {
                let (j1, j2) = (k / n2, k % n2);
                let (jl, jh) = mirror(j1, n1);
                let (kl, kh) = (jl * n2 + j2, jh * n2 + j2);
                let v0 = c[k];
                let vxx = (r[k] - 2.0 * v0 + l[k]) / (hx * hx);
                let fwd = (r[k] - v0) / hx;
                let bwd = (v0 - l[k]) / hx;
                let base = r[k] + l[k] + c[kh] + c[kl] - 2.0 * v0;
                let d_plus = (r[kh] + l[kl] - base) / (2.0 * hx * hy);
                let d_minus = -(r[kl] + l[kh] - base) / (2.0 * hx * hy);
                let row = &ctx.tables.entries[(i * ny + k) * nu..][..nu];
                let best = row
                    .iter()
                    .map(|e| {
                        let cm = mixed_scale * e[1];
                        e[0] * vxx
                            + e[2] * if e[2] > 0.0 { fwd } else { bwd }
                            + cm * if cm > 0.0 { d_plus } else { d_minus }
                            + e[3]
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                *o = v0 + dt * (best - a * v0);
            }
            let solved = fast_solver.solve(out)?;
            out.copy_from_slice(&solved);
            Ok(())
        })?;
        std::mem::swap(&mut v, &mut next);
        observe(FullSlice {
            step: n,
            time: slow.time(n),
            values: &v,
        });
    }
    Ok(v)
}

fn full_terminal(prob: &ControlProblem, slow: &SlowGrid, fast: &Grid2D) -> Vec<f64> {
    let mut out = Vec::with_capacity(slow.count * fast.len());
    for x in slow.xs() {
        for k in 0..fast.len() {
            out.push((prob.terminal)(x, fast.point(k)));
        }
    }
    out
}

/// Backward march of the epsilon-problem with `observe` called after every
/// step (step 0 is the terminal datum). Returns the slice at `t = 0`.
pub fn solve_full(
    prob: &ControlProblem,
    spec: &DynamicsSpec,
    slow: &SlowGrid,
    fast: &Grid2D,
    epsilon: f64,
    mut observe: impl FnMut(FullSlice),
) -> Result<Vec<f64>> {
    let tables = Tables::build(prob, slow, fast, None);
    let ctx = full_context(prob, spec, slow, fast, &tables)?;
    march_full(&ctx, epsilon, &full_terminal(prob, slow, fast), &mut observe)
}

/// Like [`solve_full`] with a caller-supplied terminal datum.
pub fn solve_full_from(
    prob: &ControlProblem,
    spec: &DynamicsSpec,
    slow: &SlowGrid,
    fast: &Grid2D,
    epsilon: f64,
    terminal: &[f64],
    mut observe: impl FnMut(FullSlice),
) -> Result<Vec<f64>> {
    if terminal.len() != slow.count * fast.len() {
        return Err(invalid("terminal", "length must be x count times fast nodes"));
    }
    let tables = Tables::build(prob, slow, fast, None);
    let ctx = full_context(prob, spec, slow, fast, &tables)?;
    march_full(&ctx, epsilon, terminal, &mut observe)
}

/// Keeps the slices at the listed backward steps.
pub fn solve_full_slices(
    prob: &ControlProblem,
    spec: &DynamicsSpec,
    slow: &SlowGrid,
    fast: &Grid2D,
    epsilon: f64,
    keep: &[usize],
) -> Result<ValueTensor> {
    let mut out = ValueTensor {
        slow: *slow,
        fast: Some(*fast),
        steps: vec![],
        values: vec![],
    };
    solve_full(prob, spec, slow, fast, epsilon, |s| {
        if keep.contains(&s.step) {
            out.steps.push(s.step);
            out.values.push(s.values.to_vec());
        }
    })?;
    Ok(out)
}

/// Compact window `[0.5T, 0.9T] x [-Rx/2, Rx/2] x [-1, 1]^2` and the
/// terminal-layer probe at `t = 0.99T`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Window {
    pub t_min: f64,
    pub t_max: f64,
    pub x_half_width: f64,
    pub y_half_width: f64,
    pub terminal_probe: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub catalog_id: String,
    pub epsilons: Vec<f64>,
    /// `sup_K |V^eps - V|` per epsilon.
    pub errors: Vec<f64>,
    /// `sup |V^eps - V|` at the terminal probe time, same `(x, y)` window.
    pub terminal_errors: Vec<f64>,
    /// `sup |g - gbar|` over the `(x, y)` window.
    pub terminal_mismatch: f64,
    /// `max_K V - min_K V`.
    pub oscillation: f64,
    pub runtimes_s: Vec<f64>,
    pub effective_runtime_s: f64,
    pub window: Window,
    pub slow: SlowGrid,
    pub fast: Grid2D,
}

/// Steps inside the window and the terminal probe step. Requires the step
/// count to be a multiple of 100 so all of them are grid times.
fn window_steps(slow: &SlowGrid) -> Result<(std::ops::RangeInclusive<usize>, usize)> {
    if !slow.n_steps.is_multiple_of(100) {
        return Err(invalid(
            "n_steps",
            "must be a multiple of 100 so the window edges fall on time steps",
        ));
    }
    let n = slow.n_steps;
    Ok((n / 10..=n / 2, n / 100))
}

fn window_nodes(slow: &SlowGrid, fast: &Grid2D) -> (Vec<usize>, Vec<usize>) {
    let xs = (0..slow.count)
        .filter(|&i| slow.x(i).abs() <= 0.5 * slow.half_width + 1e-12)
        .collect();
    let ys = (0..fast.len())
        .filter(|&k| {
            let p = fast.point(k);
            p.y1.abs() <= 1.0 + 1e-12 && p.y2.abs() <= 1.0 + 1e-12
        })
        .collect();
    (xs, ys)
}

/// Effective solve once, then one epsilon-solve per entry, with errors
/// taken on the compact window and at the terminal probe.
pub fn convergence_study(
    prob: &ControlProblem,
    spec: &DynamicsSpec,
    slow: &SlowGrid,
    fast: &Grid2D,
    epsilons: &[f64],
) -> Result<ConvergenceReport> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("epsilons", "must be nonempty and strictly decreasing"));
    }
    let (window, probe) = window_steps(slow)?;
    check_setup(prob, slow)?;
    let started = Instant::now();
    let gen = discretize(spec, fast)?;
    let m = stationary_density(&gen)?;
    let effective = solve_effective(prob, &m, slow)?;
    let effective_runtime_s = started.elapsed().as_secs_f64();
    let (wx, wy) = window_nodes(slow, fast);
    let ny = fast.len();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for n in window.clone() {
        for &i in &wx {
            let v = effective.values[n][i];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let gbar = &effective.values[0];
    let xs = slow.xs();
    let mut terminal_mismatch: f64 = 0.0;
    for &i in &wx {
        for &k in &wy {
            terminal_mismatch = terminal_mismatch.max(((prob.terminal)(xs[i], fast.point(k)) - gbar[i]).abs());
        }
    }

    let tables = Tables::build(prob, slow, fast, None);
    let ctx = full_context(prob, spec, slow, fast, &tables)?;
    let terminal = full_terminal(prob, slow, fast);
    let runs: Vec<Result<(f64, f64, f64)>> = epsilons
        .par_iter()
        .map(|&eps| {
            let t0 = Instant::now();
            let mut err: f64 = 0.0;
            let mut term: f64 = 0.0;
            march_full(&ctx, eps, &terminal, &mut |s: FullSlice| {
                let in_window = window.contains(&s.step);
                if !in_window && s.step != probe {
                    return;
                }
                let reference = &effective.values[s.step];
                let mut e: f64 = 0.0;
                for &i in &wx {
                    for &k in &wy {
                        e = e.max((s.values[i * ny + k] - reference[i]).abs());
                    }
                }
                if in_window {
                    err = err.max(e);
                }
                if s.step == probe {
                    term = e;
                }
            })?;
            Ok((err, term, t0.elapsed().as_secs_f64()))
        })
        .collect();
    let mut report = ConvergenceReport {
        catalog_id: prob.catalog_id.clone(),
        epsilons: epsilons.to_vec(),
        errors: vec![],
        terminal_errors: vec![],
        terminal_mismatch,
        oscillation: hi - lo,
        runtimes_s: vec![],
        effective_runtime_s,
        window: Window {
            t_min: slow.time(*window.end()),
            t_max: slow.time(*window.start()),
            x_half_width: 0.5 * slow.half_width,
            y_half_width: 1.0,
            terminal_probe: slow.time(probe),
        },
        slow: *slow,
        fast: *fast,
    };
    for r in runs {
        let (e, t, s) = r?;
        report.errors.push(e);
        report.terminal_errors.push(t);
        report.runtimes_s.push(s);
    }
    Ok(report)
}

/// Fast grid used for the epsilon-problem: `R = 4 / sqrt(alpha)`, 61 x 61.
pub fn default_fast_grid(spec: &DynamicsSpec) -> Grid2D {
    let r = 4.0 / spec.alpha.sqrt();
    Grid2D {
        half_widths: [r, r],
        counts: [61, 61],
    }
}
