//! Vanishing-discount approximation of the cell problem and regularity
//! diagnostics for its solutions.
//!
//! For a datum `F` the discounted problems `(delta + L) u_delta = F` give
//! `lambda = lim -delta u_delta(0) = -int F dm` and the corrector
//! `w = lim (u_delta - u_delta(0))`, which solves `L w - F = lambda`.
//! All diagnostics on `u_delta` and `w` are taken over the inner half of the
//! grid, away from the artificial boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{generator_apply, phi, DynamicsSpec, Jet2, Point2, Sym2};
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid2D};
use crate::grid_pde::{
    discretize, solve_discounted, solve_forced, solve_parabolic, DiscountedSolver, DiscreteGenerator,
};

pub const DEFAULT_DELTAS: [f64; 5] = [0.1, 0.05, 0.02, 0.01, 0.005];

#[derive(Debug, Clone, Serialize)]
pub struct DeltaTracePoint {
    pub delta: f64,
    /// `-delta * u_delta(0)`.
    pub value: f64,
    /// Largest centered-difference gradient of `u_delta`.
    pub sup_grad: f64,
    /// `max delta |u_delta| / sup |F|`, at most one by the maximum principle.
    pub growth_ratio: f64,
    /// Hoelder ratio of `u_delta` on the common pair sample.
    pub holder_ratio: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LipschitzDiag {
    pub emp_lip: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderDiag {
    pub gamma: f64,
    pub m: f64,
    pub emp_ratio: f64,
    /// `(max - min) / min` of the ratio across the discount schedule.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogGrowthDiag {
    pub emp_c: f64,
    /// Least-squares slope of `|w|` against `|y|`.
    pub linear_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectorResult {
    pub lambda: f64,
    #[serde(skip)]
    pub w: Field,
    pub delta_trace: Vec<DeltaTracePoint>,
    /// Present only for `alpha > 1`.
    pub lipschitz: Option<LipschitzDiag>,
    pub holder: HolderDiag,
    pub log_growth: LogGrowthDiag,
    /// Sup of the cell-equation residual on the inner half.
    pub cell_residual: f64,
}

#[derive(Debug, Clone)]
pub struct CorrectorOptions {
    pub deltas: Vec<f64>,
    pub holder_gamma: f64,
    pub holder_m: f64,
    pub holder_pairs: usize,
    pub seed: u64,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            deltas: DEFAULT_DELTAS.to_vec(),
            holder_gamma: 1.0,
            holder_m: 1.0,
            holder_pairs: 100_000,
            seed: 0,
        }
    }
}

impl CorrectorOptions {
    pub fn validate(&self) -> Result<()> {
        let d = &self.deltas;
        if d.len() < 3 {
            return Err(invalid("delta_schedule", "needs at least 3 entries"));
        }
        if d.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(invalid("delta_schedule", "entries must be positive"));
        }
        if d.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("delta_schedule", "must be strictly decreasing"));
        }
        if !(self.holder_gamma > 0.0 && self.holder_gamma <= 1.0) {
            return Err(invalid("holder_gamma", "must lie in (0, 1]"));
        }
        if !(self.holder_m >= 1.0) {
            return Err(invalid("holder_m", "must be >= 1"));
        }
        if self.holder_pairs == 0 {
            return Err(invalid("holder_pairs", "must be positive"));
        }
        Ok(())
    }
}

/// Solves `(delta + L_h) u = F`.
pub fn approximate_corrector(spec: &DynamicsSpec, grid: &Grid2D, f: &Field, delta: f64) -> Result<Field> {
    let gen = discretize(spec, grid)?;
    solve_discounted(&gen, delta, f)
}

/// Largest centered-difference gradient magnitude over interior nodes of
/// the inner half.
pub fn max_gradient(u: &Field) -> f64 {
    let g = &u.grid;
    let [h1, h2] = g.spacings();
    let mut best: f64 = 0.0;
    for i in 1..g.n1() - 1 {
        for j in 1..g.n2() - 1 {
            if !g.in_inner_half(i, j) {
                continue;
            }
            let d1 = (u.at(i + 1, j) - u.at(i - 1, j)) / (2.0 * h1);
            let d2 = (u.at(i, j + 1) - u.at(i, j - 1)) / (2.0 * h2);
            best = best.max(d1.hypot(d2));
        }
    }
    best
}

/// Empirical Lipschitz constant of `u_delta` against `L / (alpha - 1)`.
pub fn check_lipschitz(u_delta: &Field, l: f64, alpha: f64) -> Result<LipschitzDiag> {
    if !(alpha > 1.0) {
        return Err(invalid(
            "alpha",
            format!("the Lipschitz estimate needs alpha > 1, got {alpha}"),
        ));
    }
    Ok(LipschitzDiag {
        emp_lip: max_gradient(u_delta),
        bound: l / (alpha - 1.0),
    })
}

fn inner_nodes(grid: &Grid2D) -> Vec<usize> {
    (0..grid.len())
        .filter(|&k| {
            let (i, j) = grid.split(k);
            grid.in_inner_half(i, j)
        })
        .collect()
}

/// Seeded sample of distinct inner-half node pairs.
pub fn holder_pairs(grid: &Grid2D, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let nodes = inner_nodes(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n && nodes.len() > 1 {
        let a = nodes[rng.random_range(0..nodes.len())];
        let b = nodes[rng.random_range(0..nodes.len())];
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs
}

fn holder_ratio_on(u: &Field, pairs: &[(usize, usize)], gamma: f64, m: f64) -> f64 {
    let g = &u.grid;
    pairs
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (g.point(a), g.point(b));
            (u.values[a] - u.values[b]).abs() / (x.dist(&y).powf(gamma) * (phi(x, m) + phi(y, m)))
        })
        .fold(0.0, f64::max)
}

/// `sup |u(x) - u(y)| / (|x - y|^gamma (Phi(x) + Phi(y)))` over `n_pairs`
/// seeded pairs of inner-half nodes.
pub fn check_holder(u_delta: &Field, gamma: f64, m: f64, n_pairs: usize, seed: u64) -> Result<HolderDiag> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma", "must lie in (0, 1]"));
    }
    if !(m >= 1.0) {
        return Err(invalid("M", "must be >= 1"));
    }
    let pairs = holder_pairs(&u_delta.grid, n_pairs, seed);
    Ok(HolderDiag {
        gamma,
        m,
        emp_ratio: holder_ratio_on(u_delta, &pairs, gamma, m),
        spread: 0.0,
    })
}

fn log_weight(p: Point2) -> f64 {
    1.0 + (p.y1.powi(4) + p.y2 * p.y2 + 1.0).ln()
}

/// Growth of a corrector with `w(0) = 0`, over the inner half.
pub fn check_log_growth(w: &Field) -> LogGrowthDiag {
    let g = &w.grid;
    let w0 = w.at_origin();
    let nodes = inner_nodes(g);
    let emp_c = nodes
        .iter()
        .map(|&k| (w.values[k] - w0).abs() / log_weight(g.point(k)))
        .fold(0.0, f64::max);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &k in &nodes {
        let x = g.point(k).norm();
        let y = (w.values[k] - w0).abs();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let n = nodes.len() as f64;
    let var = sxx - sx * sx / n;
    let linear_slope = if var > 0.0 { (sxy - sx * sy / n) / var } else { 0.0 };
    LogGrowthDiag { emp_c, linear_slope }
}

/// Outcome of the supersolution audit for `g = C1 log(y1^4 + y2^2)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SupersolutionCheck {
    /// Largest relative deviation between `delta g + L g` and its closed form.
    pub identity_residual: f64,
    /// Smallest `(L g) - C1 [(2y1^6 - 10 y1^2 y2^2)/Q^2 + alpha (4y1^4 + y2^2)/Q]`;
    /// nonnegative when the weaker lower bound holds.
    pub lower_bound_margin: f64,
    pub n_points: usize,
}

fn log_jet(c1: f64, y: Point2) -> Jet2 {
    let (a, b) = (y.y1, y.y2);
    let q = a.powi(4) + b * b;
    let g1 = 4.0 * a.powi(3) / q;
    let g2 = 2.0 * b / q;
    let g11 = 12.0 * a * a / q - 16.0 * a.powi(6) / (q * q);
    let g12 = -8.0 * a.powi(3) * b / (q * q);
    let g22 = 2.0 / q - 4.0 * b * b / (q * q);
    Jet2::new(c1 * q.ln(), [c1 * g1, c1 * g2], Sym2::new(c1 * g11, c1 * g12, c1 * g22))
}

/// Checks at `n_points` seeded points with `r_min < |y| < r_max`:
/// `delta g + L g = delta g + C1 [(2y1^6 - 10 y1^2 y2^2)/Q^2 + alpha (4y1^4 + 2 y2^2)/Q]`
/// with `Q = y1^4 + y2^2`, and the weaker bound with `y2^2` in place of
/// `2 y2^2`.
pub fn supersolution_check(
    spec: &DynamicsSpec,
    c1: f64,
    delta: f64,
    r_min: f64,
    r_max: f64,
    n_points: usize,
    seed: u64,
) -> SupersolutionCheck {
    let degenerate = DynamicsSpec { rho: 0.0, ..*spec };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identity_residual: f64 = 0.0;
    let mut lower_bound_margin = f64::INFINITY;
    let mut count = 0;
    while count < n_points {
        let r = rng.random_range(r_min..r_max);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let y = Point2::new(r * t.cos(), r * t.sin());
        if y.norm() <= r_min {
            continue;
        }
        count += 1;
        let jet = log_jet(c1, y);
        let lhs = delta * jet.value + generator_apply(&degenerate, &jet, y);
        let (a, b) = (y.y1, y.y2);
        let q = a.powi(4) + b * b;
        let second = (2.0 * a.powi(6) - 10.0 * a * a * b * b) / (q * q);
        let closed = delta * jet.value + c1 * (second + spec.alpha * (4.0 * a.powi(4) + 2.0 * b * b) / q);
        let scale = 1.0 + delta * jet.value.abs() + c1.abs() * (second.abs() + spec.alpha * 4.0);
        identity_residual = identity_residual.max((lhs - closed).abs() / scale);
        let weak = c1 * (second + spec.alpha * (4.0 * a.powi(4) + b * b) / q);
        lower_bound_margin = lower_bound_margin.min(lhs - delta * jet.value - weak);
    }
    SupersolutionCheck {
        identity_residual,
        lower_bound_margin,
        n_points,
    }
}

/// Sup over the inner half of `|L_h w - F - lambda|`.
pub fn cell_residual(gen: &DiscreteGenerator, f: &Field, lambda: f64, w: &Field) -> f64 {
    let lw = gen.apply(w);
    let g = &gen.grid;
    (0..g.len())
        .filter(|&k| {
            let (i, j) = g.split(k);
            g.in_inner_half(i, j)
        })
        .map(|k| (lw.values[k] - f.values[k] - lambda).abs())
        .fold(0.0, f64::max)
}

/// Intercept of the least-squares line through `(x, y)`.
fn linear_intercept(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        my
    } else {
        my - sxy / sxx * mx
    }
}

/// Limit of `-delta u_delta(0)` from a linear fit over the last three
/// schedule points.
pub fn extrapolate_trace(deltas: &[f64], values: &[f64]) -> f64 {
    let k = deltas.len().saturating_sub(3);
    linear_intercept(&deltas[k..], &values[k..])
}

fn check_contraction(values: &[f64]) -> Result<()> {
    let scale = 1.0 + values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for (k, d) in diffs.windows(2).enumerate() {
        if d[1] > d[0] + 1e-9 * scale {
            return Err(Error::NonCauchyTrace(format!(
                "increment {} after {} at schedule position {}",
                d[1],
                d[0],
                k + 2
            )));
        }
    }
    Ok(())
}

struct Accum {
    values: Vec<f64>,
    trace: Vec<DeltaTracePoint>,
    emp_lip: f64,
    last: Option<Field>,
}

/// Runs the discount schedule for several data at once, factoring each
/// `delta I + L_h` a single time.
pub fn extract_lambda_w_batch(
    spec: &DynamicsSpec,
    grid: &Grid2D,
    fs: &[Field],
    opts: &CorrectorOptions,
) -> Result<Vec<CorrectorResult>> {
    opts.validate()?;
    let gen = discretize(spec, grid)?;
    for f in fs {
        if f.grid != *grid || !f.is_finite() {
            return Err(invalid("F", "must be finite and live on the solver grid"));
        }
    }
    let pairs = holder_pairs(grid, opts.holder_pairs, opts.seed);
    let mut acc: Vec<Accum> = fs
        .iter()
        .map(|_| Accum {
            values: vec![],
            trace: vec![],
            emp_lip: 0.0,
            last: None,
        })
        .collect();
    let origin = grid.origin_index();
    for &delta in &opts.deltas {
        let solver = DiscountedSolver::new(&gen, delta)?;
        for (f, a) in fs.iter().zip(acc.iter_mut()) {
            let u = solver.solve(f)?;
            let value = -delta * u.values[origin];
            let sup_grad = max_gradient(&u);
            let f_sup = f.sup_norm();
            let growth_ratio = if f_sup > 0.0 { delta * u.sup_norm() / f_sup } else { 0.0 };
            a.values.push(value);
            a.emp_lip = a.emp_lip.max(sup_grad);
            a.trace.push(DeltaTracePoint {
                delta,
                value,
                sup_grad,
                growth_ratio,
                holder_ratio: holder_ratio_on(&u, &pairs, opts.holder_gamma, opts.holder_m),
            });
            a.last = Some(u);
        }
    }
    let mut out = Vec::with_capacity(fs.len());
    for (f, a) in fs.iter().zip(acc) {
        check_contraction(&a.values)?;
        let lambda = extrapolate_trace(&opts.deltas, &a.values);
        let u = a.last.expect("schedule is nonempty");
        let u0 = u.values[origin];
        let w = u.map(|v| v - u0);
        let ratios: Vec<f64> = a.trace.iter().map(|t| t.holder_ratio).collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let lipschitz = if spec.alpha > 1.0 {
            Some(LipschitzDiag {
                emp_lip: a.emp_lip,
                bound: max_gradient(f) / (spec.alpha - 1.0),
            })
        } else {
            None
        };
        out.push(CorrectorResult {
            lambda,
            delta_trace: a.trace,
            lipschitz,
            holder: HolderDiag {
                gamma: opts.holder_gamma,
                m: opts.holder_m,
                emp_ratio: hi,
                spread: if lo > 0.0 { (hi - lo) / lo } else { 0.0 },
            },
            log_growth: check_log_growth(&w),
            cell_residual: cell_residual(&gen, f, lambda, &w),
            w,
        });
    }
    Ok(out)
}

pub fn extract_lambda_w(
    spec: &DynamicsSpec,
    grid: &Grid2D,
    f: &Field,
    opts: &CorrectorOptions,
) -> Result<CorrectorResult> {
    Ok(extract_lambda_w_batch(spec, grid, std::slice::from_ref(f), opts)?
        .pop()
        .expect("one datum in, one result out"))
}

/// Horizons and step counts for [`ergodic_three_ways`].
#[derive(Debug, Clone, Copy)]
pub struct ThreeWayOptions {
    pub parabolic_horizon: f64,
    /// The forced route converges like `1/t`, so it needs a longer horizon.
    pub forced_horizon: f64,
    pub steps: usize,
}

impl ThreeWayOptions {
    pub fn for_alpha(alpha: f64) -> Self {
        Self {
            parabolic_horizon: 20.0 / alpha,
            forced_horizon: 100.0 / alpha,
            steps: 200,
        }
    }
}

/// `(lim delta u_delta(0), u(t, 0), v(t, 0) / t)` for the datum `f`.
pub fn ergodic_three_ways(
    spec: &DynamicsSpec,
    grid: &Grid2D,
    f: &Field,
    deltas: &[f64],
    opts: ThreeWayOptions,
) -> Result<(f64, f64, f64)> {
    let copts = CorrectorOptions {
        deltas: deltas.to_vec(),
        holder_pairs: 1,
        ..CorrectorOptions::default()
    };
    copts.validate()?;
    let gen = discretize(spec, grid)?;
    let origin = grid.origin_index();
    let mut values = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        values.push(delta * solve_discounted(&gen, delta, f)?.values[origin]);
    }
    check_contraction(&values)?;
    let by_discount = extrapolate_trace(deltas, &values);
    let t1 = opts.parabolic_horizon;
    let by_parabolic = solve_parabolic(&gen, f, t1, t1 / opts.steps as f64)?.last.values[origin];
    let t2 = opts.forced_horizon;
    let by_forced = solve_forced(&gen, f, t2, t2 / opts.steps as f64)?.last.values[origin] / t2;
    Ok((by_discount, by_parabolic, by_forced))
}
