//! Euler-Maruyama paths of the fast process, occupation histograms and
//! stationary moments.
//!
//! Path `p` draws its noise from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `p`. Paths run in fixed-size chunks; inside a chunk they are simulated in
//! parallel and then merged in path order, so results do not depend on the
//! number of worker threads.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsSpec, Point2, Sym2};
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid2D};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const PATH_CHUNK: usize = 16;
const BATCHES_PER_PATH: usize = 8;
/// Largest tolerated fraction of samples beyond the histogram grid.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Total steps per path, burn-in included.
    pub n_steps: u64,
    pub n_paths: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub initial: Point2,
}

impl SimConfig {
    /// `dt = 1e-3 / alpha`, burn-in of ten relaxation times, `n_paths` paths
    /// each recording `recorded` steps.
    pub fn defaults_for(spec: &DynamicsSpec, n_paths: u64, recorded: u64) -> Self {
        let dt = 1e-3 / spec.alpha;
        let burn_in = (10.0 / (spec.alpha * dt)).round() as u64;
        Self {
            dt,
            n_steps: burn_in + recorded,
            n_paths,
            burn_in,
            seed: 0,
            initial: Point2::ORIGIN,
        }
    }

    pub fn validate(&self, spec: &DynamicsSpec) -> Result<()> {
        spec.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.dt * spec.alpha >= 1.0 {
            return Err(invalid(
                "dt",
                format!("alpha * dt = {} must be < 1 for a stable explicit step", self.dt * spec.alpha),
            ));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(invalid("n_steps", "n_steps and n_paths must be positive"));
        }
        if self.burn_in >= self.n_steps {
            return Err(invalid(
                "burn_in",
                format!("burn_in {} must be < n_steps {}", self.burn_in, self.n_steps),
            ));
        }
        if !self.initial.is_finite() {
            return Err(invalid("initial", "must be finite"));
        }
        Ok(())
    }

    pub fn recorded_steps(&self) -> u64 {
        self.n_steps - self.burn_in
    }

    pub fn total_samples(&self) -> u64 {
        self.recorded_steps() * self.n_paths
    }
}

/// Per-entry standard errors matching [`MomentEstimates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub mean: [f64; 2],
    pub second: Sym2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub mean: [f64; 2],
    /// `xx = E[y1^2]`, `xy = E[y1 y2]`, `yy = E[y2^2]`.
    pub second: Sym2,
    pub n_samples: u64,
    pub std_err: MomentErrors,
    pub n_batches: u64,
}

/// Occupation counts per node-centered cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub grid: Grid2D,
    pub counts: Vec<u64>,
    pub n_outside: u64,
    pub n_samples: u64,
}

impl Histogram2D {
    pub fn empty(grid: Grid2D) -> Self {
        Self {
            grid,
            counts: vec![0; grid.len()],
            n_outside: 0,
            n_samples: 0,
        }
    }

    pub fn from_counts(grid: Grid2D, counts: Vec<u64>, n_outside: u64) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(invalid("counts", "length does not match the grid"));
        }
        let n_samples = counts.iter().sum::<u64>() + n_outside;
        Ok(Self {
            grid,
            counts,
            n_outside,
            n_samples,
        })
    }

    pub fn outside_fraction(&self) -> f64 {
        self.n_outside as f64 / self.n_samples.max(1) as f64
    }

    /// Density per cell: `counts / (n_samples * cell_area)`. Together with the
    /// outside fraction it integrates to one.
    pub fn density(&self) -> Field {
        let scale = 1.0 / (self.n_samples.max(1) as f64 * self.grid.cell_area());
        Field {
            grid: self.grid,
            values: self.counts.iter().map(|&c| c as f64 * scale).collect(),
        }
    }

    /// Probability of each cell, summing to one minus the outside fraction.
    pub fn mass(&self) -> Vec<f64> {
        let n = self.n_samples.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn y1_counts(&self) -> Vec<u64> {
        let n2 = self.grid.n2();
        self.counts.chunks(n2).map(|row| row.iter().sum()).collect()
    }

    fn merge(&mut self, other: &Histogram2D) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_outside += other.n_outside;
        self.n_samples += other.n_samples;
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.density().write_csv(out, "density")
    }
}

/// One Euler-Maruyama step. `dw` holds Brownian increments (variance `dt`);
/// `dw[2]` drives the regularizing channel and is ignored when `rho = 0`.
#[inline]
pub fn euler_step(spec: &DynamicsSpec, y: Point2, dt: f64, dw: [f64; 3]) -> Point2 {
    let decay = 1.0 - spec.alpha * dt;
    Point2 {
        y1: y.y1 * decay + SQRT2 * dw[0],
        y2: y.y2 * decay + SQRT2 * (y.y1 * dw[1] + spec.rho * dw[2]),
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: u64,
    s: [f64; 5],
}

impl Sums {
    #[inline]
    fn add(&mut self, y: Point2) {
        self.n += 1;
        self.s[0] += y.y1;
        self.s[1] += y.y2;
        self.s[2] += y.y1 * y.y1;
        self.s[3] += y.y1 * y.y2;
        self.s[4] += y.y2 * y.y2;
    }

    fn means(&self) -> [f64; 5] {
        let n = self.n as f64;
        self.s.map(|v| v / n)
    }
}

struct PathOutput {
    hist: Option<Histogram2D>,
    batches: Vec<Sums>,
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn run_path(spec: &DynamicsSpec, cfg: &SimConfig, grid: Option<&Grid2D>, path: u64) -> PathOutput {
    let mut rng = path_rng(cfg.seed, path);
    let sd = cfg.dt.sqrt();
    let regularized = spec.rho > 0.0;
    let mut y = cfg.initial;
    let mut hist = grid.map(|g| Histogram2D::empty(*g));
    let recorded = cfg.recorded_steps();
    let batches_n = BATCHES_PER_PATH.min(recorded as usize).max(1) as u64;
    let mut batches = vec![Sums::default(); batches_n as usize];
    for step in 0..cfg.n_steps {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = if regularized { StandardNormal.sample(&mut rng) } else { 0.0 };
        y = euler_step(spec, y, cfg.dt, [z0 * sd, z1 * sd, z2 * sd]);
        if step < cfg.burn_in {
            continue;
        }
        let r = step - cfg.burn_in;
        batches[(r * batches_n / recorded) as usize].add(y);
        if let Some(h) = hist.as_mut() {
            h.n_samples += 1;
            match h.grid.locate(y) {
                Some((i, j)) => {
                    let k = h.grid.index(i, j);
                    h.counts[k] += 1;
                }
                None => h.n_outside += 1,
            }
        }
    }
    PathOutput { hist, batches }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub moments: MomentEstimates,
    pub histogram: Option<Histogram2D>,
}

/// Runs all paths once, collecting moments and, when a grid is given, the
/// occupation histogram.
pub fn simulate(spec: &DynamicsSpec, cfg: &SimConfig, grid: Option<&Grid2D>) -> Result<SimOutput> {
    cfg.validate(spec)?;
    if let Some(g) = grid {
        g.validate()?;
    }
    let mut hist = grid.map(|g| Histogram2D::empty(*g));
    let mut batches: Vec<Sums> = Vec::new();
    let paths: Vec<u64> = (0..cfg.n_paths).collect();
    for chunk in paths.chunks(PATH_CHUNK) {
        let outs: Vec<PathOutput> = chunk.par_iter().map(|&p| run_path(spec, cfg, grid, p)).collect();
        for out in outs {
            if let (Some(total), Some(h)) = (hist.as_mut(), out.hist.as_ref()) {
                total.merge(h);
            }
            batches.extend(out.batches);
        }
    }
    Ok(SimOutput {
        moments: batch_moments(&batches),
        histogram: hist,
    })
}

fn batch_moments(batches: &[Sums]) -> MomentEstimates {
    let mut total = Sums::default();
    for b in batches {
        total.n += b.n;
        for k in 0..5 {
            total.s[k] += b.s[k];
        }
    }
    let means = total.means();
    let nb = batches.len();
    let mut se = [f64::NAN; 5];
    if nb >= 2 {
        // Batches may differ in length by one sample; the equal-weight
        // batch-means formula is accurate enough for error bars.
        let mut var = [0.0; 5];
        for b in batches {
            let m = b.means();
            for k in 0..5 {
                var[k] += (m[k] - means[k]).powi(2);
            }
        }
        for k in 0..5 {
            se[k] = (var[k] / ((nb - 1) * nb) as f64).sqrt();
        }
    }
    MomentEstimates {
        mean: [means[0], means[1]],
        second: Sym2::new(means[2], means[3], means[4]),
        n_samples: total.n,
        std_err: MomentErrors {
            mean: [se[0], se[1]],
            second: Sym2::new(se[2], se[3], se[4]),
        },
        n_batches: nb as u64,
    }
}

/// Time-averaged occupation histogram after burn-in over all paths.
pub fn simulate_occupation(spec: &DynamicsSpec, cfg: &SimConfig, grid: &Grid2D) -> Result<Histogram2D> {
    let hist = simulate(spec, cfg, Some(grid))?
        .histogram
        .expect("grid was supplied");
    check_escape(&hist)?;
    Ok(hist)
}

fn check_escape(hist: &Histogram2D) -> Result<()> {
    if hist.outside_fraction() > MAX_OUTSIDE_FRACTION {
        return Err(Error::GridTooSmall {
            escaped: hist.n_outside,
            total: hist.n_samples,
        });
    }
    Ok(())
}

/// Stationary moments with batch-means standard errors.
pub fn estimate_moments(spec: &DynamicsSpec, cfg: &SimConfig) -> Result<MomentEstimates> {
    Ok(simulate(spec, cfg, None)?.moments)
}

fn gaussian_cdf(x: f64, variance: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / (2.0 * variance).sqrt()))
}

/// Kolmogorov-Smirnov distance between the binned `y1`-marginal and the
/// Gaussian with mean 0 and variance `1/alpha`, evaluated at the cell edges.
/// The empirical CDF is normalized by the in-grid samples.
pub fn ks_distance_y1_marginal(hist: &Histogram2D, spec: &DynamicsSpec) -> Result<f64> {
    let counts = hist.y1_counts();
    let inside: u64 = counts.iter().sum();
    if inside == 0 {
        return Err(invalid("histogram", "has no samples inside the grid"));
    }
    let var = 1.0 / spec.alpha;
    let h = hist.grid.spacing(0);
    let lower = hist.grid.coord(0, 0) - 0.5 * h;
    let mut ks = gaussian_cdf(lower, var).abs();
    let mut cum = 0u64;
    for (i, &c) in counts.iter().enumerate() {
        cum += c;
        let edge = hist.grid.coord(0, i) + 0.5 * h;
        let emp = cum as f64 / inside as f64;
        ks = ks.max((emp - gaussian_cdf(edge, var)).abs());
    }
    Ok(ks.min(1.0))
}

/// Total-variation distance between two histograms on the same grid. Mass
/// beyond the grid counts as one extra cell.
pub fn total_variation(a: &Histogram2D, b: &Histogram2D) -> Result<f64> {
    if a.grid != b.grid {
        return Err(invalid("histogram", "grids differ"));
    }
    let (ma, mb) = (a.mass(), b.mass());
    let cells: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum();
    Ok(0.5 * (cells + (a.outside_fraction() - b.outside_fraction()).abs()))
}

/// Total-variation distance between a histogram and a density on its grid.
pub fn total_variation_to_density(hist: &Histogram2D, m: &Field) -> Result<f64> {
    if hist.grid != m.grid {
        return Err(invalid("density", "grid differs from the histogram grid"));
    }
    let area = m.grid.cell_area();
    let cells: f64 = hist
        .mass()
        .iter()
        .zip(&m.values)
        .map(|(p, d)| (p - d * area).abs())
        .sum();
    let missing = (1.0 - m.integral()).max(0.0);
    Ok(0.5 * (cells + (hist.outside_fraction() - missing).abs()))
}

/// JSON record of a moment run.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport<'a> {
    pub alpha: f64,
    pub rho: f64,
    pub config: &'a SimConfig,
    pub moments: &'a MomentEstimates,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: f64) -> DynamicsSpec {
        DynamicsSpec::new(alpha, 0.0).unwrap()
    }

    fn small_cfg(alpha: f64, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            ..SimConfig::defaults_for(&spec(alpha), 4, 20_000)
        }
    }

    #[test]
    fn step_examples() {
        let y = euler_step(&spec(1.0), Point2::new(1.0, 1.0), 0.1, [0.0; 3]);
        assert!((y.y1 - 0.9).abs() < 1e-15 && (y.y2 - 0.9).abs() < 1e-15);
        let y = euler_step(&spec(1.0), Point2::new(2.0, 0.0), 0.01, [0.2, 0.1, 0.0]);
        assert!((y.y1 - (1.98 + 0.2 * SQRT2)).abs() < 1e-14);
        assert!((y.y1 - 2.262842712474619).abs() < 1e-12);
        assert!((y.y2 - 0.282842712474619).abs() < 1e-12);
        let c = 0.7303;
        let y = euler_step(&spec(1.7), Point2::new(0.0, c), 0.01, [0.3, -1.9, 0.4]);
        assert_eq!(y.y2, (1.0 - 1.7 * 0.01) * c);
    }

    #[test]
    fn regularized_channel_only_moves_y2() {
        let s = DynamicsSpec::new(1.0, 0.5).unwrap();
        let y = euler_step(&s, Point2::new(0.0, 0.0), 0.01, [0.0, 0.0, 0.1]);
        assert_eq!(y.y1, 0.0);
        assert!((y.y2 - SQRT2 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn reflection_equivariance_is_exact() {
        // y -> -y flips dW1 and dW3 but not dW2, because the y2 noise is y1 dW2.
        let s = DynamicsSpec::new(1.3, 0.2).unwrap();
        let mut rng = path_rng(3, 0);
        let mut y = Point2::new(0.4, -1.1);
        let mut z = -y;
        for _ in 0..1000 {
            let dw: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
            y = euler_step(&s, y, 1e-3, dw);
            z = euler_step(&s, z, 1e-3, [-dw[0], dw[1], -dw[2]]);
            assert_eq!(z, -y);
        }
    }

    #[test]
    fn config_validation() {
        let s = spec(2.0);
        let good = small_cfg(2.0, 1);
        assert!(good.validate(&s).is_ok());
        assert!(SimConfig { dt: 0.5, ..good }.validate(&s).is_err());
        assert!(SimConfig { burn_in: good.n_steps, ..good }.validate(&s).is_err());
        assert!(SimConfig { n_paths: 0, ..good }.validate(&s).is_err());
        assert!(SimConfig { dt: -1.0, ..good }.validate(&s).is_err());
    }

    #[test]
    fn counting_identity() {
        let s = spec(2.0);
        let grid = Grid2D::square(1.0, 21).unwrap();
        let cfg = small_cfg(2.0, 5);
        let h = simulate(&s, &cfg, Some(&grid)).unwrap().histogram.unwrap();
        assert!(h.n_outside > 0);
        assert_eq!(h.n_samples, cfg.total_samples());
        let total = h.density().integral() + h.outside_fraction();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(
            simulate_occupation(&s, &cfg, &grid),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = DynamicsSpec::new(2.0, 0.1).unwrap();
        let grid = Grid2D::default_for(&s);
        let cfg = SimConfig {
            n_paths: 20,
            ..small_cfg(2.0, 9)
        };
        let a = simulate(&s, &cfg, Some(&grid)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate(&s, &cfg, Some(&grid)).unwrap());
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.moments, b.moments);
        let c = simulate(&s, &SimConfig { seed: 10, ..cfg }, Some(&grid)).unwrap();
        assert_ne!(a.histogram, c.histogram);
    }

    #[test]
    fn y2_rebinning_leaves_ks_unchanged() {
        let s = spec(2.0);
        let cfg = small_cfg(2.0, 2);
        let r = 6.0 / 2f64.sqrt();
        let fine = simulate_occupation(&s, &cfg, &Grid2D::new(r, r, 121, 121).unwrap()).unwrap();
        let coarse = simulate_occupation(&s, &cfg, &Grid2D::new(r, r, 121, 31).unwrap()).unwrap();
        assert_eq!(fine.y1_counts(), coarse.y1_counts());
        assert_eq!(
            ks_distance_y1_marginal(&fine, &s).unwrap(),
            ks_distance_y1_marginal(&coarse, &s).unwrap()
        );
    }

    #[test]
    fn ks_of_exact_gaussian_bins_is_rounding_only() {
        let s = spec(2.0);
        let grid = Grid2D::new(6.0 / 2f64.sqrt(), 1.0, 121, 3).unwrap();
        let h = grid.spacing(0);
        let scale = 1e12;
        let mut counts = vec![0u64; grid.len()];
        for i in 0..grid.n1() {
            let y = grid.coord(0, i);
            let p = gaussian_cdf(y + 0.5 * h, 0.5) - gaussian_cdf(y - 0.5 * h, 0.5);
            counts[grid.index(i, 1)] = (p * scale).round() as u64;
        }
        let hist = Histogram2D::from_counts(grid, counts, 0).unwrap();
        assert!(ks_distance_y1_marginal(&hist, &s).unwrap() < 1e-9);
    }

    #[test]
    fn total_variation_properties() {
        let s = spec(2.0);
        let grid = Grid2D::square(3.0, 31).unwrap();
        let a = simulate_occupation(&s, &small_cfg(2.0, 1), &grid).unwrap();
        let b = simulate_occupation(&s, &small_cfg(2.0, 2), &grid).unwrap();
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        let d = total_variation(&a, &b).unwrap();
        assert!(d > 0.0 && d < 1.0);
        assert!((total_variation(&b, &a).unwrap() - d).abs() < 1e-15);
        let tv_self = total_variation_to_density(&a, &a.density()).unwrap();
        assert!(tv_self < 1e-12, "{tv_self}");
    }

    #[test]
    fn short_run_moments_are_plausible() {
        let s = spec(2.0);
        let m = estimate_moments(&s, &small_cfg(2.0, 4)).unwrap();
        assert_eq!(m.n_samples, 80_000);
        assert_eq!(m.n_batches, 32);
        assert!((m.second.xx - 0.5).abs() < 6.0 * m.std_err.second.xx + 0.02);
        let ev = m.second.eigenvalues();
        assert!(ev[0] >= 0.0);
    }
}
