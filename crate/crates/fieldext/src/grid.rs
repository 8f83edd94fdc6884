//! Rectangles, uniform cell-center grids, and the midpoint quadrature rule
//! turning truncated convolutions and L2(Q) inner products into finite sums.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in the source plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Rect {
    pub fn new(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64) -> Result<Self> {
        let r = Rect {
            x1_min,
            x1_max,
            x2_min,
            x2_max,
        };
        r.validate()?;
        Ok(r)
    }

    /// Square `[-a, a]^2`.
    pub fn centered_square(a: f64) -> Result<Self> {
        Rect::new(-a, a, -a, a)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x1_min.is_finite()
            && self.x1_max.is_finite()
            && self.x2_min.is_finite()
            && self.x2_max.is_finite();
        if !finite || self.x1_min >= self.x1_max || self.x2_min >= self.x2_max {
            return Err(Error::Config(format!(
                "degenerate rectangle [{}, {}] x [{}, {}]",
                self.x1_min, self.x1_max, self.x2_min, self.x2_max
            )));
        }
        Ok(())
    }

    pub fn width1(&self) -> f64 {
        self.x1_max - self.x1_min
    }

    pub fn width2(&self) -> f64 {
        self.x2_max - self.x2_min
    }

    pub fn area(&self) -> f64 {
        self.width1() * self.width2()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x1_min && p[0] <= self.x1_max && p[1] >= self.x2_min && p[1] <= self.x2_max
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x1_min >= self.x1_min
            && other.x1_max <= self.x1_max
            && other.x2_min >= self.x2_min
            && other.x2_max <= self.x2_max
    }
}

/// Uniform cell-center grid over a rectangle.
///
/// Node `(i, j)` sits at `(x1_min + (i+1/2) dx1, x2_min + (j+1/2) dx2)` and
/// is stored at flat index `i * n2 + j` (row-major, x1-major). All operator
/// matrices index against this ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rect: Rect,
    n1: usize,
    n2: usize,
    nodes: Vec<[f64; 2]>,
    cell_weight: f64,
}

/// Builds the uniform midpoint grid.
pub fn build_grid(rect: Rect, n1: usize, n2: usize) -> Result<Arc<Grid>> {
    rect.validate()?;
    if n1 == 0 || n2 == 0 {
        return Err(Error::Config(format!(
            "grid cell counts must be positive, got {}x{}",
            n1, n2
        )));
    }
    let dx1 = rect.width1() / n1 as f64;
    let dx2 = rect.width2() / n2 as f64;
    let mut nodes = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        let x1 = rect.x1_min + (i as f64 + 0.5) * dx1;
        for j in 0..n2 {
            let x2 = rect.x2_min + (j as f64 + 0.5) * dx2;
            nodes.push([x1, x2]);
        }
    }
    Ok(Arc::new(Grid {
        rect,
        n1,
        n2,
        nodes,
        cell_weight: dx1 * dx2,
    }))
}

impl Grid {
    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> [f64; 2] {
        self.nodes[idx]
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    pub fn dx1(&self) -> f64 {
        self.rect.width1() / self.n1 as f64
    }

    pub fn dx2(&self) -> f64 {
        self.rect.width2() / self.n2 as f64
    }

    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n1 && j < self.n2);
        i * self.n2 + j
    }
}

/// A scalar function sampled on a grid, one value per node in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

/// Field samples at measurement height share the representation of plain
/// source-plane fields.
pub type FieldSample = ScalarField;

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![c; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&p| f(p)).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes `x1,x2,value` CSV rows in grid order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x1,x2,value")?;
        for (node, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", node[0], node[1], v)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Quadrature form of the L2(Q) inner product: `w * sum_k f_k g_k`.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::Contract(
            "inner_product of fields on different grids".into(),
        ));
    }
    let s: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a * b)
        .sum();
    Ok(f.grid.cell_weight() * s)
}

/// Quadrature L2(Q) norm.
pub fn norm(f: &ScalarField) -> f64 {
    let s: f64 = f.values.iter().map(|v| v * v).sum();
    (f.grid.cell_weight() * s).sqrt()
}
