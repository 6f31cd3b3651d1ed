//! Plane-strain linear elasticity with a density-dependent stiffness,
//! `-div(b(rho) sigma(u)) + delta u = f`, discretized with bilinear
//! quadrilaterals on the density grid, plus the density sensitivity of the
//! compliance and its spatial gradient.

use std::fmt;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::measures::{CellScalar, GridDensity, GridSpec};
use crate::transport::GridVectorField;
use crate::{Mat2, Point};

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// Lame constants, zeroth-order coefficient and the stiffness interpolation
/// `b(rho) = b_min + rho^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialLaw {
    pub mu: f64,
    pub lambda: f64,
    pub delta: f64,
    pub b_min: f64,
    pub p: f64,
    /// Material budget: the solver sees `budget * rho`, so a unit-mass
    /// density on a large box still carries physical stiffness.
    pub budget: f64,
}

impl Default for MaterialLaw {
    fn default() -> Self {
        Self { mu: 1.0, lambda: 1.0, delta: 1e-3, b_min: 0.1, p: 1.0, budget: 1.0 }
    }
}

impl MaterialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.lambda > 0.0
            && self.delta > 0.0
            && self.b_min > 0.0
            && self.p >= 1.0
            && self.budget > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "material law needs mu, lambda, delta, b_min, budget > 0 and p >= 1: {self:?}"
            )))
        }
    }

    /// Stiffness factor for a probability density value.
    pub fn b(&self, rho: f64) -> f64 {
        self.b_min + (self.budget * rho).powf(self.p)
    }

    /// Derivative of `b(budget * rho)` with respect to `rho`.
    pub fn db(&self, rho: f64) -> f64 {
        let s = self.budget * rho;
        let d = if self.p == 1.0 { 1.0 } else { self.p * s.powf(self.p - 1.0) };
        self.budget * d
    }

    /// `sigma = 2 mu eps + lambda tr(eps) I`.
    pub fn stress(&self, strain: &Mat2) -> Mat2 {
        strain * (2.0 * self.mu) + Mat2::identity() * (self.lambda * strain.trace())
    }
}

/// Side of the rectangular box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Closed coordinate interval along one side of the box. For the left and
/// right sides the coordinate is `y`; for bottom and top it is `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRange {
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

impl EdgeRange {
    /// The whole side.
    pub fn full(side: Side) -> Self {
        Self { side, from: f64::NEG_INFINITY, to: f64::INFINITY }
    }

    fn contains(&self, s: f64) -> bool {
        s >= self.from && s <= self.to
    }
}

#[derive(Clone, Default)]
pub enum BodyLoad {
    #[default]
    Zero,
    Constant(Point),
    Custom(Arc<dyn Fn(&Point) -> Point + Send + Sync>),
}

impl BodyLoad {
    fn at(&self, p: &Point) -> Point {
        match self {
            BodyLoad::Zero => Point::zeros(),
            BodyLoad::Constant(c) => *c,
            BodyLoad::Custom(f) => f(p),
        }
    }
}

impl fmt::Debug for BodyLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyLoad::Zero => write!(f, "Zero"),
            BodyLoad::Constant(c) => write!(f, "Constant({}, {})", c.x, c.y),
            BodyLoad::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Clamped edges, traction edges and body load.
#[derive(Debug, Clone, Default)]
pub struct BoundaryCondition {
    pub dirichlet: Vec<EdgeRange>,
    pub traction: Vec<(EdgeRange, Point)>,
    pub body: BodyLoad,
}

impl BoundaryCondition {
    /// Left side clamped, uniform traction `g` on `[from, to]` of the right side.
    pub fn cantilever(g: Point, from: f64, to: f64) -> Self {
        Self {
            dirichlet: vec![EdgeRange::full(Side::Left)],
            traction: vec![(EdgeRange { side: Side::Right, from, to }, g)],
            body: BodyLoad::Zero,
        }
    }

    /// Rejects traction ranges that overlap a clamped range on the same side
    /// in more than a point.
    pub fn validate(&self) -> Result<()> {
        for (t, _) in &self.traction {
            if !(t.from <= t.to) {
                return Err(Error::InvalidInput("traction range is empty".into()));
            }
            for d in &self.dirichlet {
                if d.side == t.side && d.from.max(t.from) < d.to.min(t.to) {
                    return Err(Error::InvalidInput(format!(
                        "clamped and traction ranges overlap on side {:?}",
                        t.side
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Node numbering `a = j * (nx + 1) + i`; displacement dofs `2a`, `2a + 1`.
#[derive(Debug, Clone, Copy)]
struct Mesh {
    grid: GridSpec,
}

impl Mesh {
    fn nodes_x(&self) -> usize {
        self.grid.nx + 1
    }

    fn node_count(&self) -> usize {
        (self.grid.nx + 1) * (self.grid.ny + 1)
    }

    fn node(&self, i: usize, j: usize) -> usize {
        j * self.nodes_x() + i
    }

    fn node_pos(&self, a: usize) -> Point {
        let (i, j) = (a % self.nodes_x(), a / self.nodes_x());
        Point::new(
            self.grid.x0 + i as f64 * self.grid.hx(),
            self.grid.y0 + j as f64 * self.grid.hy(),
        )
    }

    /// Counter-clockwise element nodes starting bottom-left.
    fn element_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        [self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)]
    }

    fn element_dofs(&self, i: usize, j: usize) -> [usize; 8] {
        let n = self.element_nodes(i, j);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    /// Nodes whose side coordinate lies in `range`.
    fn side_nodes(&self, range: &EdgeRange) -> Vec<usize> {
        let g = &self.grid;
        let pts: Vec<(usize, f64)> = match range.side {
            Side::Left => (0..=g.ny).map(|j| (self.node(0, j), g.y0 + j as f64 * g.hy())).collect(),
            Side::Right => (0..=g.ny).map(|j| (self.node(g.nx, j), g.y0 + j as f64 * g.hy())).collect(),
            Side::Bottom => (0..=g.nx).map(|i| (self.node(i, 0), g.x0 + i as f64 * g.hx())).collect(),
            Side::Top => (0..=g.nx).map(|i| (self.node(i, g.ny), g.x0 + i as f64 * g.hx())).collect(),
        };
        pts.into_iter().filter(|(_, s)| range.contains(*s)).map(|(a, _)| a).collect()
    }

    /// Element edges meeting `range`, as `(node_a, node_b, w_a, w_b)` where
    /// `w` is the integral of the nodal hat function over the overlap.
    fn side_edges(&self, range: &EdgeRange) -> Vec<(usize, usize, f64, f64)> {
        let g = &self.grid;
        let (count, h, origin) = match range.side {
            Side::Left | Side::Right => (g.ny, g.hy(), g.y0),
            Side::Bottom | Side::Top => (g.nx, g.hx(), g.x0),
        };
        (0..count)
            .filter_map(|k| {
                let (a, b) = match range.side {
                    Side::Left => (self.node(0, k), self.node(0, k + 1)),
                    Side::Right => (self.node(g.nx, k), self.node(g.nx, k + 1)),
                    Side::Bottom => (self.node(k, 0), self.node(k + 1, 0)),
                    Side::Top => (self.node(k, g.ny), self.node(k + 1, g.ny)),
                };
                let s0 = origin + k as f64 * h;
                let lo = ((range.from - s0) / h).clamp(0.0, 1.0);
                let hi = ((range.to - s0) / h).clamp(0.0, 1.0);
                (hi > lo).then(|| {
                    let wb = 0.5 * h * (hi * hi - lo * lo);
                    let wa = h * (hi - lo) - wb;
                    (a, b, wa, wb)
                })
            })
            .collect()
    }
}

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    CORNERS.map(|(a, b)| 0.25 * (1.0 + a * xi) * (1.0 + b * eta))
}

/// Strain-displacement matrix rows `[e_xx, e_yy, gamma_xy]`.
fn b_matrix(xi: f64, eta: f64, hx: f64, hy: f64) -> SMatrix<f64, 3, 8> {
    let mut b = SMatrix::<f64, 3, 8>::zeros();
    for (k, (a, c)) in CORNERS.iter().enumerate() {
        let dx = 0.25 * a * (1.0 + c * eta) * 2.0 / hx;
        let dy = 0.25 * c * (1.0 + a * xi) * 2.0 / hy;
        b[(0, 2 * k)] = dx;
        b[(1, 2 * k + 1)] = dy;
        b[(2, 2 * k)] = dy;
        b[(2, 2 * k + 1)] = dx;
    }
    b
}

fn element_matrices(law: &MaterialLaw, hx: f64, hy: f64) -> (Mat8, Mat8) {
    let (l, m) = (law.lambda, law.mu);
    let d = SMatrix::<f64, 3, 3>::new(l + 2.0 * m, l, 0.0, l, l + 2.0 * m, 0.0, 0.0, 0.0, m);
    let jac = hx * hy / 4.0;
    let mut stiff = Mat8::zeros();
    let mut mass = Mat8::zeros();
    for xi in GAUSS {
        for eta in GAUSS {
            let b = b_matrix(xi, eta, hx, hy);
            stiff += b.transpose() * d * b * jac;
            let n = shape(xi, eta);
            for a in 0..4 {
                for c in 0..4 {
                    let v = n[a] * n[c] * jac;
                    mass[(2 * a, 2 * c)] += v;
                    mass[(2 * a + 1, 2 * c + 1)] += v;
                }
            }
        }
    }
    (stiff, mass)
}

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    fn pattern(mesh: &Mesh) -> Self {
        let (nxn, nyn) = (mesh.grid.nx + 1, mesh.grid.ny + 1);
        let n = 2 * mesh.node_count();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for a in 0..mesh.node_count() {
            let (i, j) = (a % nxn, a / nxn);
            let mut neigh = Vec::with_capacity(18);
            for jj in j.saturating_sub(1)..=(j + 1).min(nyn - 1) {
                for ii in i.saturating_sub(1)..=(i + 1).min(nxn - 1) {
                    let b = jj * nxn + ii;
                    neigh.push(2 * b);
                    neigh.push(2 * b + 1);
                }
            }
            for _ in 0..2 {
                cols.extend_from_slice(&neigh);
                row_ptr.push(cols.len());
            }
        }
        let vals = vec![0.0; cols.len()];
        Self { n, row_ptr, cols, vals }
    }

    fn position(&self, r: usize, c: usize) -> usize {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        self.row_ptr[r] + row.binary_search(&c).expect("entry outside sparsity pattern")
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        row.binary_search(&c).map_or(0.0, |k| self.vals[self.row_ptr[r] + k])
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }
}

/// Assembled system `K u = f` with clamped dofs eliminated.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub grid: GridSpec,
    pub law: MaterialLaw,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained: Vec<bool>,
    /// Stiffness factor `b(rho_e)` per element.
    pub coefficients: Vec<f64>,
}

/// Consistent load vector from body force (2x2 Gauss per element) and
/// tractions (exact for piecewise-constant traction on the box sides).
pub fn load_vector(grid: &GridSpec, bc: &BoundaryCondition) -> Vec<f64> {
    let mesh = Mesh { grid: *grid };
    let mut f = vec![0.0; 2 * mesh.node_count()];
    let (hx, hy) = (grid.hx(), grid.hy());
    if !matches!(bc.body, BodyLoad::Zero) {
        let jac = hx * hy / 4.0;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.cell_center(i, j);
                let dofs = mesh.element_dofs(i, j);
                for xi in GAUSS {
                    for eta in GAUSS {
                        let x = c + Point::new(xi * hx / 2.0, eta * hy / 2.0);
                        let load = bc.body.at(&x);
                        let n = shape(xi, eta);
                        for k in 0..4 {
                            f[dofs[2 * k]] += n[k] * load.x * jac;
                            f[dofs[2 * k + 1]] += n[k] * load.y * jac;
                        }
                    }
                }
            }
        }
    }
    for (range, g) in &bc.traction {
        for (a, b, wa, wb) in mesh.side_edges(range) {
            for (node, w) in [(a, wa), (b, wb)] {
                f[2 * node] += w * g.x;
                f[2 * node + 1] += w * g.y;
            }
        }
    }
    f
}

/// Builds the stiffness `sum_e b(rho_e) K_e + delta M` and load vector, then
/// eliminates clamped rows and columns (unit diagonal, zero right-hand side).
pub fn assemble(rho: &GridDensity, law: &MaterialLaw, bc: &BoundaryCondition) -> Result<LinearSystem> {
    law.validate()?;
    bc.validate()?;
    let grid = *rho.grid();
    let mesh = Mesh { grid };
    let (k0, m0) = element_matrices(law, grid.hx(), grid.hy());
    let mut matrix = CsrMatrix::pattern(&mesh);
    let coefficients: Vec<f64> = rho.values().iter().map(|r| law.b(*r)).collect();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let ke = k0 * coefficients[grid.index(i, j)] + m0 * law.delta;
            let dofs = mesh.element_dofs(i, j);
            for (a, &ra) in dofs.iter().enumerate() {
                for (c, &rc) in dofs.iter().enumerate() {
                    let pos = matrix.position(ra, rc);
                    matrix.vals[pos] += ke[(a, c)];
                }
            }
        }
    }
    let mut rhs = load_vector(&grid, bc);
    let mut constrained = vec![false; matrix.n];
    for range in &bc.dirichlet {
        for a in mesh.side_nodes(range) {
            constrained[2 * a] = true;
            constrained[2 * a + 1] = true;
        }
    }
    for r in 0..matrix.n {
        for k in matrix.row_ptr[r]..matrix.row_ptr[r + 1] {
            let c = matrix.cols[k];
            if constrained[r] || constrained[c] {
                matrix.vals[k] = if r == c { 1.0 } else { 0.0 };
            }
        }
        if constrained[r] {
            rhs[r] = 0.0;
        }
    }
    Ok(LinearSystem { grid, law: *law, matrix, rhs, constrained, coefficients })
}

/// Displacement with element-center strain and stress.
#[derive(Debug, Clone)]
pub struct ElasticField {
    pub grid: GridSpec,
    /// Nodal displacement, node `j * (nx + 1) + i`.
    pub u: Vec<Point>,
    pub strain: Vec<Mat2>,
    pub stress: Vec<Mat2>,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl ElasticField {
    pub fn dofs(&self) -> Vec<f64> {
        self.u.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Nodal displacement at grid node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> Point {
        self.u[j * (self.grid.nx + 1) + i]
    }
}

/// Relative residual target of [`solve_state`].
pub const CG_TOLERANCE: f64 = 1e-10;

/// Jacobi-preconditioned conjugate gradients to relative residual
/// [`CG_TOLERANCE`], then strain and stress at element centers.
pub fn solve_state(system: &LinearSystem) -> Result<ElasticField> {
    let (u, iterations, relative_residual) = conjugate_gradient(&system.matrix, &system.rhs, CG_TOLERANCE)?;
    let grid = system.grid;
    let mesh = Mesh { grid };
    let b0 = b_matrix(0.0, 0.0, grid.hx(), grid.hy());
    let mut strain = Vec::with_capacity(grid.len());
    let mut stress = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let ue = Vec8::from_iterator(mesh.element_dofs(i, j).iter().map(|&d| u[d]));
            let eps = voigt_strain(&(b0 * ue));
            stress.push(system.law.stress(&eps));
            strain.push(eps);
        }
    }
    let u = u.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
    Ok(ElasticField { grid, u, strain, stress, iterations, relative_residual })
}

fn voigt_strain(e: &SVector<f64, 3>) -> Mat2 {
    Mat2::new(e[0], 0.5 * e[2], 0.5 * e[2], e[1])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, usize, f64)> {
    let n = a.n;
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_iter = 20 * n;
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            // Confirm with the true residual; the recurrence drifts slowly.
            a.mul(&x, &mut ap);
            let true_res = b.iter().zip(&ap).map(|(b, y)| (b - y) * (b - y)).sum::<f64>().sqrt() / bnorm;
            if true_res <= tol {
                return Ok((x, it, true_res));
            }
            for k in 0..n {
                r[k] = b[k] - ap[k];
            }
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: dot(&r, &r).sqrt() / bnorm })
}

/// Work of the applied loads, `int f.u + int_{traction} g.u`.
pub fn compliance(field: &ElasticField, bc: &BoundaryCondition) -> f64 {
    dot(&load_vector(&field.grid, bc), &field.dofs())
}

/// Energy `a_rho(u, u) = u^T K u`, including the zeroth-order term.
pub fn energy(system: &LinearSystem, field: &ElasticField) -> f64 {
    let u = field.dofs();
    let mut ku = vec![0.0; u.len()];
    system.matrix.mul(&u, &mut ku);
    dot(&u, &ku)
}

/// Largest `|K u - f|` over unconstrained dofs, relative to `max |f|`.
pub fn galerkin_residual(system: &LinearSystem, field: &ElasticField) -> f64 {
    let u = field.dofs();
    let mut ku = vec![0.0; u.len()];
    system.matrix.mul(&u, &mut ku);
    let scale = system.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    ku.iter()
        .zip(&system.rhs)
        .zip(&system.constrained)
        .filter(|(_, c)| !**c)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// `F = b'(rho) sigma(u) : eps(u)` per cell from element-center fields.
pub fn sensitivity_f(rho: &GridDensity, field: &ElasticField, law: &MaterialLaw) -> Result<CellScalar> {
    if *rho.grid() != field.grid {
        return Err(Error::InvalidInput("density and displacement meshes differ".into()));
    }
    let values = rho
        .values()
        .iter()
        .zip(field.stress.iter().zip(&field.strain))
        .map(|(r, (s, e))| law.db(*r) * s.component_mul(e).sum())
        .collect();
    Ok(CellScalar { grid: field.grid, values })
}

/// Spatial gradient of a cell field: the velocity direction of the density
/// gradient flow.
pub fn wasserstein_gradient(f: &CellScalar) -> Result<GridVectorField> {
    let (gx, gy) = f.gradient();
    GridVectorField::new(f.grid, gx, gy)
}

/// Nodal position helper for tests and exports.
pub fn node_position(grid: &GridSpec, i: usize, j: usize) -> Point {
    Mesh { grid: *grid }.node_pos(j * (grid.nx + 1) + i)
}
