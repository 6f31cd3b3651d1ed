//! Discrete probability measures on the plane: cell-averaged grid densities,
//! weighted particle clouds, and the support mask of a density.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::Point;

/// Uniform rectangular grid over the box `[x0, x0+lx] x [y0, y0+ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2x2 cells, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0) || !x0.is_finite() || !y0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid side lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, x0, y0, lx, ly })
    }

    /// Square `n x n` grid on the unit square.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 0.0, 0.0, 1.0, 1.0)
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index, `i` fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.x0 + (i as f64 + 0.5) * self.hx(),
            self.y0 + (j as f64 + 0.5) * self.hy(),
        )
    }

    /// Cell centers in storage order.
    pub fn centers(&self) -> Vec<Point> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.cell_center(i, j))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lx.hypot(self.ly)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x0 + self.lx && p.y >= self.y0 && p.y <= self.y0 + self.ly
    }

    /// Same box, cell counts multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self { nx: self.nx * factor, ny: self.ny * factor, ..*self }
    }
}

/// Anything that can report a density value at an arbitrary point.
pub trait DensityField: Sync {
    fn density_at(&self, p: &Point) -> f64;
}

/// Nonnegative cell-averaged density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(if value.is_nan() {
                Error::InvalidInput(format!("NaN density at cell {index}"))
            } else {
                Error::NegativeDensity { index, value }
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at cell centers. Negative samples are rejected.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = grid.centers().iter().map(f).collect();
        Self::new(grid, values)
    }

    pub fn uniform(grid: GridSpec) -> Self {
        let v = 1.0 / (grid.lx * grid.ly);
        Self { grid, values: vec![v; grid.len()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Midpoint-rule total mass.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Rescales to unit mass.
    pub fn normalize(&self) -> Result<Self> {
        if let Some((index, &value)) = self.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeDensity { index, value });
        }
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(Error::AllZeroDensity);
        }
        if mass == 1.0 {
            return Ok(self.clone());
        }
        let scale = 1.0 / mass;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * scale).collect(),
        })
    }

    pub fn second_moment(&self) -> f64 {
        let area = self.grid.cell_area();
        self.grid
            .centers()
            .iter()
            .zip(&self.values)
            .map(|(c, v)| c.norm_squared() * v * area)
            .sum()
    }

    /// Mass-weighted mean position (divided by the total mass).
    pub fn centroid(&self) -> Point {
        let mut acc = Point::zeros();
        let mut mass = 0.0;
        for (c, v) in self.grid.centers().iter().zip(&self.values) {
            acc += c * *v;
            mass += v;
        }
        acc / mass
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// L1 distance `sum |a - b| * cell area` on a shared grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("densities live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_area())
    }

    /// Midpoint quadrature of `f * rho`.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        let area = self.grid.cell_area();
        self.grid
            .centers()
            .iter()
            .zip(&self.values)
            .map(|(c, v)| f(c) * v * area)
            .sum()
    }

    /// Writes `i,j,x,y,rho` rows, `j` outer and `i` inner, 12 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_cell_csv(&self.grid, &self.values, "rho", out)
    }

    /// Plain PGM (P2, maxval 65535), linear scaling from `[0, max]`.
    /// The first image row is the top of the box (largest `y`).
    pub fn write_pgm<W: Write>(&self, out: W) -> io::Result<()> {
        write_cell_pgm(&self.grid, &self.values, out)
    }
}

/// Bilinear interpolation of cell-center values, constant extrapolation up
/// to the box boundary and zero outside it.
impl DensityField for GridDensity {
    fn density_at(&self, p: &Point) -> f64 {
        if !self.grid.contains(p) {
            return 0.0;
        }
        let g = &self.grid;
        let fx = ((p.x - g.x0) / g.hx() - 0.5).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p.y - g.y0) / g.hy() - 0.5).clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// Real-valued field with one value per grid cell (no sign constraint).
#[derive(Debug, Clone, PartialEq)]
pub struct CellScalar {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl CellScalar {
    pub fn from_fn(grid: GridSpec, f: impl Fn(&Point) -> f64) -> Self {
        Self { grid, values: grid.centers().iter().map(f).collect() }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Gradient by central differences, one-sided on the outermost cells.
    pub fn gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let mut gx = vec![0.0; g.len()];
        let mut gy = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                gx[k] = if i == 0 {
                    (self.at(1, j) - self.at(0, j)) / hx
                } else if i == g.nx - 1 {
                    (self.at(i, j) - self.at(i - 1, j)) / hx
                } else {
                    (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * hx)
                };
                gy[k] = if j == 0 {
                    (self.at(i, 1) - self.at(i, 0)) / hy
                } else if j == g.ny - 1 {
                    (self.at(i, j) - self.at(i, j - 1)) / hy
                } else {
                    (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * hy)
                };
            }
        }
        (gx, gy)
    }

    pub fn write_csv<W: Write>(&self, out: W, column: &str) -> io::Result<()> {
        write_cell_csv(&self.grid, &self.values, column, out)
    }

    pub fn write_pgm<W: Write>(&self, out: W) -> io::Result<()> {
        write_cell_pgm(&self.grid, &self.values, out)
    }
}

pub(crate) fn write_cell_csv<W: Write>(
    grid: &GridSpec,
    values: &[f64],
    column: &str,
    mut out: W,
) -> io::Result<()> {
    writeln!(out, "i,j,x,y,{column}")?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell_center(i, j);
            writeln!(
                out,
                "{},{},{:.11e},{:.11e},{:.11e}",
                i,
                j,
                c.x,
                c.y,
                values[grid.index(i, j)]
            )?;
        }
    }
    Ok(())
}

pub(crate) fn write_cell_pgm<W: Write>(grid: &GridSpec, values: &[f64], mut out: W) -> io::Result<()> {
    const MAXVAL: f64 = 65535.0;
    let max = values.iter().copied().fold(0.0, f64::max);
    writeln!(out, "P2")?;
    writeln!(out, "{} {}", grid.nx, grid.ny)?;
    writeln!(out, "65535")?;
    for j in (0..grid.ny).rev() {
        let row: Vec<String> = (0..grid.nx)
            .map(|i| {
                let v = values[grid.index(i, j)].max(0.0);
                let level = if max > 0.0 { (v / max * MAXVAL).round() } else { 0.0 };
                (level as u32).to_string()
            })
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Sum of isotropic Gaussians, evaluated in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    /// `(center, standard deviation, weight)` per component.
    pub components: Vec<(Point, f64, f64)>,
    /// Constant background added everywhere.
    pub floor: f64,
}

impl GaussianMixture {
    pub fn single(center: Point, sigma: f64) -> Self {
        Self { components: vec![(center, sigma, 1.0)], floor: 0.0 }
    }

    pub fn gradient(&self, p: &Point) -> Point {
        self.components
            .iter()
            .map(|(c, s, w)| {
                let d = p - c;
                -d * (gaussian(&d, *s) * w / (s * s))
            })
            .sum()
    }
}

fn gaussian(d: &Point, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-d.norm_squared() / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

impl DensityField for GaussianMixture {
    fn density_at(&self, p: &Point) -> f64 {
        self.floor + self.components.iter().map(|(c, s, w)| w * gaussian(&(p - c), *s)).sum::<f64>()
    }
}

/// Weighted point cloud with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "need matching nonempty points/weights, got {} and {}",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidInput("points must be finite".into()));
        }
        Ok(Self { points, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        let n = points.len().max(1);
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn dirac(p: Point) -> Self {
        Self { points: vec![p], weights: vec![1.0] }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Point {
        self.points.iter().zip(&self.weights).map(|(p, w)| p * *w).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| p.norm_squared() * w).sum()
    }

    /// Image measure under `map`; weights are carried over unchanged.
    pub fn pushforward<F>(&self, mut map: F) -> Result<Self>
    where
        F: FnMut(&Point) -> Result<Point>,
    {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(index, p)| match map(p) {
                Ok(q) if q.x.is_finite() && q.y.is_finite() => Ok(q),
                _ => Err(Error::MapUndefined { index }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, weights: self.weights.clone() })
    }
}

/// Boolean flag per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    grid: GridSpec,
    flags: Vec<bool>,
}

impl CellMask {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.flags[self.grid.index(i, j)]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// True when every flagged cell of `self` is flagged in `other`.
    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.flags.iter().zip(&other.flags).all(|(a, b)| !*a || *b)
    }

    /// One-cell erosion with 4-neighbour connectivity; cells on the box
    /// boundary are removed since the density vanishes outside the box.
    pub fn interior(&self) -> CellMask {
        let g = &self.grid;
        let mut flags = vec![false; g.len()];
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                flags[g.index(i, j)] = self.get(i, j)
                    && self.get(i - 1, j)
                    && self.get(i + 1, j)
                    && self.get(i, j - 1)
                    && self.get(i, j + 1);
            }
        }
        CellMask { grid: self.grid, flags }
    }
}

/// Cells whose density strictly exceeds `tol`.
pub fn support_projection(d: &GridDensity, tol: f64) -> Result<CellMask> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be >= 0, got {tol}")));
    }
    Ok(CellMask {
        grid: d.grid,
        flags: d.values.iter().map(|v| *v > tol).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_constant() {
        let g = GridSpec::unit(16).unwrap();
        let d = GridDensity::new(g, vec![2.0; 256]).unwrap().normalize().unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn normalize_single_cell() {
        let g = GridSpec::unit(4).unwrap();
        let mut values = vec![0.0; 16];
        values[5] = 5.0;
        let d = GridDensity::new(g, values).unwrap().normalize().unwrap();
        assert!((d.values()[5] - 16.0).abs() < 1e-12);
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_already_normalized_is_unchanged() {
        let g = GridSpec::unit(8).unwrap();
        let d = GridDensity::uniform(g);
        let n = d.normalize().unwrap();
        for (a, b) in d.values().iter().zip(n.values()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn normalize_errors() {
        let g = GridSpec::unit(4).unwrap();
        let zero = GridDensity::new(g, vec![0.0; 16]).unwrap();
        assert_eq!(zero.normalize(), Err(Error::AllZeroDensity));
        let mut v = vec![1.0; 16];
        v[3] = -0.5;
        assert!(matches!(
            GridDensity::new(g, v),
            Err(Error::NegativeDensity { index: 3, .. })
        ));
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(GridSpec::new(1, 4, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn pushforward_translation_of_dirac() {
        let d = ParticleMeasure::dirac(Point::new(0.0, 0.0));
        let m = d.pushforward(|p| Ok(p + Point::new(1.0, 0.0))).unwrap();
        assert_eq!(m.points()[0], Point::new(1.0, 0.0));
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn pushforward_identity_and_scaling() {
        let m = ParticleMeasure::uniform(vec![Point::new(1.0, 2.0), Point::new(-0.5, 0.25)]).unwrap();
        assert_eq!(m.pushforward(|p| Ok(*p)).unwrap(), m);
        let scaled = m.pushforward(|p| Ok(p * 2.0)).unwrap();
        assert!((scaled.second_moment() - 4.0 * m.second_moment()).abs() < 1e-14);
    }

    #[test]
    fn pushforward_reports_failing_point() {
        let m = ParticleMeasure::uniform(vec![Point::new(1.0, 0.0), Point::new(0.0, 0.0)]).unwrap();
        let r = m.pushforward(|p| {
            if p.norm() == 0.0 {
                Err(Error::SingularPoint { x: 0.0, y: 0.0 })
            } else {
                Ok(p / p.norm())
            }
        });
        assert_eq!(r, Err(Error::MapUndefined { index: 1 }));
    }

    #[test]
    fn second_moments() {
        assert_eq!(ParticleMeasure::dirac(Point::zeros()).second_moment(), 0.0);
        assert_eq!(ParticleMeasure::dirac(Point::new(3.0, 4.0)).second_moment(), 25.0);
    }

    #[test]
    fn uniform_grid_second_moment_converges() {
        // Midpoint rule on x^2 + y^2 over the unit square has error exactly
        // 2 * h^2 / 12 = h^2 / 6.
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let d = GridDensity::uniform(GridSpec::unit(n).unwrap());
            let err = (d.second_moment() - 2.0 / 3.0).abs();
            let h = 1.0 / n as f64;
            assert!((err - h * h / 6.0).abs() < 1e-14);
            assert!(err < prev / 3.9);
            prev = err;
        }
    }

    #[test]
    fn support_projection_cases() {
        let g = GridSpec::unit(8).unwrap();
        let full = GridDensity::uniform(g);
        assert_eq!(support_projection(&full, 0.0).unwrap().count(), 64);

        let hole = GridDensity::from_fn(g, |p| {
            if (p - Point::new(0.5, 0.5)).norm() < 0.2 { 0.0 } else { 1.0 }
        })
        .unwrap();
        let mask = support_projection(&hole, 0.0).unwrap();
        assert!(!mask.get(3, 3) && !mask.get(4, 4));
        assert!(mask.get(0, 0));

        let zero = GridDensity::new(g, vec![0.0; 64]).unwrap();
        assert_eq!(support_projection(&zero, 0.0).unwrap().count(), 0);
    }

    #[test]
    fn interior_erodes_one_cell() {
        let g = GridSpec::unit(6).unwrap();
        let mask = support_projection(&GridDensity::uniform(g), 0.0).unwrap().interior();
        assert_eq!(mask.count(), 16);
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::unit(2).unwrap();
        let d = GridDensity::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,x,y,rho");
        assert_eq!(lines[1], "0,0,2.50000000000e-1,2.50000000000e-1,1.00000000000e0");
        assert_eq!(lines[2], "1,0,7.50000000000e-1,2.50000000000e-1,2.00000000000e0");
        assert!(lines[3].starts_with("0,1,"));
    }

    #[test]
    fn pgm_layout() {
        let g = GridSpec::unit(2).unwrap();
        let d = GridDensity::new(g, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        d.write_pgm(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "P2\n2 2\n65535\n32768 65535\n0 16384\n");
    }

    #[test]
    fn cell_gradient_exact_on_linear_data() {
        let g = GridSpec::new(6, 5, 0.0, 0.0, 3.0, 1.0).unwrap();
        let f = CellScalar::from_fn(g, |p| 2.0 * p.x - 3.0 * p.y);
        let (gx, gy) = f.gradient();
        assert!(gx.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(gy.iter().all(|v| (v + 3.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_reproduces_linear_functions() {
        let g = GridSpec::unit(10).unwrap();
        let d = GridDensity::from_fn(g, |p| 1.0 + p.x + 2.0 * p.y).unwrap();
        let q = Point::new(0.33, 0.71);
        assert!((d.density_at(&q) - (1.0 + 0.33 + 1.42)).abs() < 1e-12);
        assert_eq!(d.density_at(&Point::new(1.5, 0.5)), 0.0);
    }

    fn cloud() -> impl Strategy<Value = ParticleMeasure> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.1..1.0f64), 1..12).prop_map(|v| {
            let total: f64 = v.iter().map(|t| t.2).sum();
            let pts = v.iter().map(|t| Point::new(t.0, t.1)).collect();
            let mut w: Vec<f64> = v.iter().map(|t| t.2 / total).collect();
            let s: f64 = w.iter().sum();
            w[0] += 1.0 - s;
            ParticleMeasure::new(pts, w).unwrap()
        })
    }

    proptest! {
        #[test]
        fn translation_shifts_second_moment(m in cloud(), vx in -3.0..3.0f64, vy in -3.0..3.0f64) {
            let v = Point::new(vx, vy);
            let t = m.pushforward(|p| Ok(p + v)).unwrap();
            let expected = m.second_moment() + 2.0 * m.mean().dot(&v) + v.norm_squared();
            prop_assert!((t.second_moment() - expected).abs() < 1e-10 * (1.0 + expected));
            prop_assert_eq!(t.weights(), m.weights());
        }

        #[test]
        fn normalize_idempotent(vals in prop::collection::vec(0.0..10.0f64, 16)) {
            prop_assume!(vals.iter().any(|v| *v > 0.0));
            let d = GridDensity::new(GridSpec::unit(4).unwrap(), vals).unwrap();
            let once = d.normalize().unwrap();
            let twice = once.normalize().unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
            prop_assert!((once.mass() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn support_monotone_in_tol(vals in prop::collection::vec(0.0..1.0f64, 16), a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let d = GridDensity::new(GridSpec::unit(4).unwrap(), vals).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = support_projection(&d, lo).unwrap();
            let m_hi = support_projection(&d, hi).unwrap();
            prop_assert!(m_hi.is_subset_of(&m_lo));
        }
    }
}
