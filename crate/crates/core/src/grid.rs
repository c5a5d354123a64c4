//! Truncated rectangular grids over the fast variables and nodal fields.
//!
//! Nodes are ordered `y1`-major: node `(i, j)` has flat index `i * n2 + j`.
//! Every node owns the cell `[y1 - h1/2, y1 + h1/2] x [y2 - h2/2, y2 + h2/2]`,
//! which is the convention shared by histograms, densities and quadrature.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsSpec, Point2};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub half_widths: [f64; 2],
    pub counts: [usize; 2],
}

impl Grid2D {
    pub fn new(r1: f64, r2: f64, n1: usize, n2: usize) -> Result<Self> {
        let g = Self {
            half_widths: [r1, r2],
            counts: [n1, n2],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        Self::new(half_width, half_width, n, n)
    }

    /// `R = 6 / sqrt(alpha)` with 241 nodes per axis.
    pub fn default_for(spec: &DynamicsSpec) -> Self {
        let r = 6.0 / spec.alpha.sqrt();
        Self {
            half_widths: [r, r],
            counts: [241, 241],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..2 {
            let r = self.half_widths[axis];
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid("half_widths", format!("must be positive, got {r}")));
            }
            let n = self.counts[axis];
            if n < 3 || n.is_multiple_of(2) {
                return Err(invalid(
                    "counts",
                    format!("must be odd and >= 3 so the origin is a node, got {n}"),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n1(&self) -> usize {
        self.counts[0]
    }

    #[inline]
    pub fn n2(&self) -> usize {
        self.counts[1]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_widths[axis] / (self.counts[axis] - 1) as f64
    }

    pub fn spacings(&self) -> [f64; 2] {
        [self.spacing(0), self.spacing(1)]
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        // Symmetric evaluation keeps mirrored nodes exact negatives.
        let c = (self.counts[axis] - 1) / 2;
        (i as f64 - c as f64) * self.spacing(axis)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.counts[1] + j
    }

    #[inline]
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.counts[1], k % self.counts[1])
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point2 {
        Point2::new(self.coord(0, i), self.coord(1, j))
    }

    #[inline]
    pub fn point(&self, k: usize) -> Point2 {
        let (i, j) = self.split(k);
        self.node(i, j)
    }

    pub fn center(&self) -> (usize, usize) {
        ((self.counts[0] - 1) / 2, (self.counts[1] - 1) / 2)
    }

    pub fn origin_index(&self) -> usize {
        let (i, j) = self.center();
        self.index(i, j)
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing(0) * self.spacing(1)
    }

    /// Node whose cell contains `y`, or `None` when `y` is beyond the grid.
    #[inline]
    pub fn locate(&self, y: Point2) -> Option<(usize, usize)> {
        let i = locate_axis(y.y1, self.half_widths[0], self.spacing(0), self.counts[0])?;
        let j = locate_axis(y.y2, self.half_widths[1], self.spacing(1), self.counts[1])?;
        Some((i, j))
    }

    /// Whether node `(i, j)` lies in `[-R1/2, R1/2] x [-R2/2, R2/2]`.
    pub fn in_inner_half(&self, i: usize, j: usize) -> bool {
        let p = self.node(i, j);
        p.y1.abs() <= 0.5 * self.half_widths[0] + 1e-12 && p.y2.abs() <= 0.5 * self.half_widths[1] + 1e-12
    }

    pub fn covers(&self, half_width: f64) -> bool {
        self.half_widths.iter().all(|&r| r >= half_width)
    }

    /// Same spacing, doubled half-widths.
    pub fn doubled(&self) -> Self {
        Self {
            half_widths: [2.0 * self.half_widths[0], 2.0 * self.half_widths[1]],
            counts: [2 * self.counts[0] - 1, 2 * self.counts[1] - 1],
        }
    }
}

#[inline]
fn locate_axis(y: f64, r: f64, h: f64, n: usize) -> Option<usize> {
    let s = (y + r) / h + 0.5;
    if s >= 0.0 && s < n as f64 {
        Some(s as usize)
    } else {
        None
    }
}

/// Real values at the nodes of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} nodes, got {}", grid.len(), values.len()),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(Point2) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Cell-rule integral `sum_k values_k * h1 * h2`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Integral of `f` against `self` seen as a density.
    pub fn integrate_against(&self, f: impl Fn(Point2) -> f64) -> f64 {
        let area = self.grid.cell_area();
        (0..self.grid.len())
            .map(|k| self.values[k] * f(self.grid.point(k)))
            .sum::<f64>()
            * area
    }

    /// Integral of a nodal field against `self` seen as a density.
    pub fn pair(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_area()
    }

    /// Density of the `y1` marginal at the `y1` nodes.
    pub fn y1_marginal(&self) -> Vec<f64> {
        let n2 = self.grid.n2();
        let h2 = self.grid.spacing(1);
        self.values.chunks(n2).map(|row| row.iter().sum::<f64>() * h2).collect()
    }

    /// Writes one row per node: `y1_center,y2_center,<column>`.
    pub fn write_csv<W: Write>(&self, mut out: W, column: &str) -> Result<()> {
        writeln!(out, "y1_center,y2_center,{column}")?;
        for k in 0..self.grid.len() {
            let p = self.grid.point(k);
            writeln!(out, "{},{},{}", fmt_f64(p.y1), fmt_f64(p.y2), fmt_f64(self.values[k]))?;
        }
        Ok(())
    }

    /// Reads the node format written by [`Field::write_csv`], recovering the grid.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != 3 || cols[0] != "y1_center" || cols[1] != "y2_center" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let parsed = parsed.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if parsed.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", lineno + 2)));
            }
            rows.push([parsed[0], parsed[1], parsed[2]]);
        }
        if rows.is_empty() {
            return Err(Error::Parse("no data rows".into()));
        }
        let y1_first = rows[0][0];
        let n2 = rows.iter().take_while(|r| r[0] == y1_first).count();
        if n2 == 0 || rows.len() % n2 != 0 {
            return Err(Error::Parse("rows do not form a rectangular y1-major grid".into()));
        }
        let n1 = rows.len() / n2;
        let r1 = -y1_first;
        let r2 = -rows[0][1];
        let grid = Grid2D::new(r1, r2, n1, n2).map_err(|e| Error::Parse(e.to_string()))?;
        let tol = 1e-9 * (1.0 + r1.max(r2));
        for (k, row) in rows.iter().enumerate() {
            let p = grid.point(k);
            if (p.y1 - row[0]).abs() > tol || (p.y2 - row[1]).abs() > tol {
                return Err(Error::Parse(format!("row {} is not at node {:?}", k + 2, p)));
            }
        }
        Field::new(grid, rows.into_iter().map(|r| r[2]).collect())
    }
}

/// 17 significant digits, the round-trip precision of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalizes -0.0 so reruns and mirrored nodes print identically
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}
