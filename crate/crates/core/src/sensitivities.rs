//! Finite-difference certification of shape, topological and density
//! derivatives on objectives whose derivatives are known in closed form.

use std::f64::consts::PI;

use serde::Serialize;

use crate::elasticity::{self, BoundaryCondition, MaterialLaw};
use crate::error::{Error, Result};
use crate::flows::{self, HoleField, Potential, VectorFieldSpec};
use crate::measures::{CellScalar, DensityField, GaussianMixture, GridDensity, GridSpec};
use crate::rng::CounterRng;
use crate::Point;

/// Default polygon resolution for shape tests.
pub const POLYGON_VERTICES: usize = 4096;
/// Default relative-error floor.
pub const REL_FLOOR: f64 = 1e-12;
/// Largest admissible `|grad phi|` on the outer ring of cells in the
/// density test, relative to its maximum.
pub const WALL_SPEED_TOL: f64 = 1e-6;
/// Admissible deviation of the free-fit exponent from the dimension.
pub const EXPONENT_TOL: f64 = 0.1;
/// RK4 steps per flow-map evaluation in the flow-based tests.
pub const FLOW_STEPS: usize = 16;

/// Simple planar domains with closed-form area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticShape {
    Disk { center: Point, radius: f64 },
    Rectangle { corner: Point, width: f64, height: f64 },
    Annulus { center: Point, r_in: f64, r_out: f64 },
}

impl AnalyticShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnalyticShape::Disk { radius, .. } => radius > 0.0,
            AnalyticShape::Rectangle { width, height, .. } => width > 0.0 && height > 0.0,
            AnalyticShape::Annulus { r_in, r_out, .. } => r_in > 0.0 && r_in < r_out,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid shape {self:?}")))
        }
    }

    pub fn volume(&self) -> f64 {
        match *self {
            AnalyticShape::Disk { radius, .. } => PI * radius * radius,
            AnalyticShape::Rectangle { width, height, .. } => width * height,
            AnalyticShape::Annulus { r_in, r_out, .. } => PI * (r_out * r_out - r_in * r_in),
        }
    }

    /// Whether the closed ball `B(x, r)` lies inside the open shape.
    pub fn contains_ball(&self, x: &Point, r: f64) -> bool {
        match *self {
            AnalyticShape::Disk { center, radius } => (x - center).norm() + r < radius,
            AnalyticShape::Rectangle { corner, width, height } => {
                x.x - r > corner.x
                    && x.x + r < corner.x + width
                    && x.y - r > corner.y
                    && x.y + r < corner.y + height
            }
            AnalyticShape::Annulus { center, r_in, r_out } => {
                let d = (x - center).norm();
                d - r > r_in && d + r < r_out
            }
        }
    }

    /// Boundary polygon with about `n` vertices: one counter-clockwise outer
    /// loop, plus a clockwise inner loop for the annulus.
    pub fn polygon(&self, n: usize) -> Polygon {
        let circle = |c: Point, r: f64, m: usize, ccw: bool| -> Vec<Point> {
            (0..m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    let a = if ccw { a } else { -a };
                    c + Point::new(a.cos(), a.sin()) * r
                })
                .collect()
        };
        let loops = match *self {
            AnalyticShape::Disk { center, radius } => vec![circle(center, radius, n, true)],
            AnalyticShape::Rectangle { corner, width, height } => {
                let m = (n / 4).max(1);
                let corners = [
                    corner,
                    corner + Point::new(width, 0.0),
                    corner + Point::new(width, height),
                    corner + Point::new(0.0, height),
                ];
                let mut pts = Vec::with_capacity(4 * m);
                for s in 0..4 {
                    let (a, b) = (corners[s], corners[(s + 1) % 4]);
                    pts.extend((0..m).map(|k| a + (b - a) * (k as f64 / m as f64)));
                }
                vec![pts]
            }
            AnalyticShape::Annulus { center, r_in, r_out } => {
                let inner = ((n as f64 * r_in / r_out) as usize).max(8);
                vec![circle(center, r_out, n, true), circle(center, r_in, inner, false)]
            }
        };
        Polygon { loops }
    }

    /// `int_Omega f` by composite Gauss-Legendre (polar coordinates for the
    /// round shapes) with `panels` panels per direction.
    pub fn integrate(&self, f: &dyn Fn(&Point) -> f64, panels: usize) -> f64 {
        let (nodes, weights) = gauss_legendre(8);
        let composite = |a: f64, b: f64, g: &mut dyn FnMut(f64) -> f64| -> f64 {
            let h = (b - a) / panels as f64;
            let mut acc = 0.0;
            for p in 0..panels {
                let mid = a + (p as f64 + 0.5) * h;
                for (x, w) in nodes.iter().zip(&weights) {
                    acc += w * 0.5 * h * g(mid + 0.5 * h * x);
                }
            }
            acc
        };
        let polar = |c: Point, r0: f64, r1: f64| -> f64 {
            let m = 64 * panels;
            composite(r0, r1, &mut |r| {
                let ring: f64 = (0..m)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / m as f64;
                        f(&(c + Point::new(a.cos(), a.sin()) * r))
                    })
                    .sum();
                ring * 2.0 * PI / m as f64 * r
            })
        };
        match *self {
            AnalyticShape::Disk { center, radius } => polar(center, 0.0, radius),
            AnalyticShape::Annulus { center, r_in, r_out } => polar(center, r_in, r_out),
            AnalyticShape::Rectangle { corner, width, height } => composite(corner.x, corner.x + width, &mut |x| {
                composite(corner.y, corner.y + height, &mut |y| f(&Point::new(x, y)))
            }),
        }
    }

    /// `int_{dOmega} f(x, n(x)) ds` with the outward unit normal.
    pub fn integrate_boundary(&self, f: &dyn Fn(&Point, &Point) -> f64, resolution: usize) -> f64 {
        let ring = |c: Point, r: f64, outward: f64| -> f64 {
            let m = resolution.max(16);
            let sum: f64 = (0..m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    let e = Point::new(a.cos(), a.sin());
                    f(&(c + e * r), &(e * outward))
                })
                .sum();
            sum * 2.0 * PI * r / m as f64
        };
        match *self {
            AnalyticShape::Disk { center, radius } => ring(center, radius, 1.0),
            AnalyticShape::Annulus { center, r_in, r_out } => ring(center, r_out, 1.0) + ring(center, r_in, -1.0),
            AnalyticShape::Rectangle { corner, width, height } => {
                let (nodes, weights) = gauss_legendre(8);
                let panels = (resolution / 32).max(4);
                let sides = [
                    (corner, Point::new(width, 0.0), Point::new(0.0, -1.0)),
                    (corner + Point::new(width, 0.0), Point::new(0.0, height), Point::new(1.0, 0.0)),
                    (corner + Point::new(width, height), Point::new(-width, 0.0), Point::new(0.0, 1.0)),
                    (corner + Point::new(0.0, height), Point::new(0.0, -height), Point::new(-1.0, 0.0)),
                ];
                let mut acc = 0.0;
                for (a, d, n) in sides {
                    let len = d.norm() / panels as f64;
                    for p in 0..panels {
                        for (x, w) in nodes.iter().zip(&weights) {
                            let s = (p as f64 + 0.5 + 0.5 * x) / panels as f64;
                            acc += w * 0.5 * len * f(&(a + d * s), &n);
                        }
                    }
                }
                acc
            }
        }
    }
}

/// Exact area of an analytic shape.
pub fn volume_objective(shape: &AnalyticShape) -> f64 {
    shape.volume()
}

/// `int_Omega g` by tensor midpoint quadrature with `depth` cells per
/// direction (radius and angle for the round shapes, `4 * depth` angles).
pub fn weighted_volume(g: &dyn Fn(&Point) -> f64, shape: &AnalyticShape, depth: usize) -> f64 {
    let depth = depth.max(1);
    let polar = |c: Point, r0: f64, r1: f64| -> f64 {
        let (nr, na) = (depth, 4 * depth);
        let (dr, da) = ((r1 - r0) / nr as f64, 2.0 * PI / na as f64);
        let mut acc = 0.0;
        for i in 0..nr {
            let r = r0 + (i as f64 + 0.5) * dr;
            for k in 0..na {
                let a = (k as f64 + 0.5) * da;
                acc += g(&(c + Point::new(a.cos(), a.sin()) * r)) * r * dr * da;
            }
        }
        acc
    };
    match *shape {
        AnalyticShape::Disk { center, radius } => polar(center, 0.0, radius),
        AnalyticShape::Annulus { center, r_in, r_out } => polar(center, r_in, r_out),
        AnalyticShape::Rectangle { corner, width, height } => {
            let (hx, hy) = (width / depth as f64, height / depth as f64);
            let mut acc = 0.0;
            for i in 0..depth {
                for j in 0..depth {
                    acc += g(&(corner + Point::new((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy)));
                }
            }
            acc * hx * hy
        }
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Weight `g(x) = c0 + a . x + q |x - c|^2`: polynomial, so its integral over
/// a polygon is exact through Green's theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFn {
    pub c0: f64,
    pub linear: Point,
    pub quad: f64,
    pub quad_center: Point,
}

impl WeightFn {
    pub fn constant(c0: f64) -> Self {
        Self { c0, linear: Point::zeros(), quad: 0.0, quad_center: Point::zeros() }
    }

    pub fn value(&self, p: &Point) -> f64 {
        self.c0 + self.linear.dot(p) + self.quad * (p - self.quad_center).norm_squared()
    }

    /// Antiderivative in `x`: `dG/dx = g`.
    fn antiderivative_x(&self, p: &Point) -> f64 {
        let d = p - self.quad_center;
        self.c0 * p.x
            + 0.5 * self.linear.x * p.x * p.x
            + self.linear.y * p.y * p.x
            + self.quad * (d.x * d.x * d.x / 3.0 + d.y * d.y * p.x)
    }
}

/// Closed polygonal loops; the enclosed region is where the winding number
/// is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub loops: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn vertex_count(&self) -> usize {
        self.loops.iter().map(Vec::len).sum()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.loops
            .iter()
            .flat_map(|l| (0..l.len()).map(move |k| (l[k], l[(k + 1) % l.len()])))
    }

    /// Signed areas of each loop by the shoelace formula.
    pub fn loop_areas(&self) -> Vec<f64> {
        self.loops
            .iter()
            .map(|l| {
                0.5 * (0..l.len())
                    .map(|k| {
                        let (a, b) = (l[k], l[(k + 1) % l.len()]);
                        a.x * b.y - b.x * a.y
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.loop_areas().iter().sum()
    }

    /// `int g` over the enclosed region as `oint G dy` with `dG/dx = g`;
    /// 2-point Gauss per edge is exact for the cubic integrand.
    pub fn weighted_area(&self, g: &WeightFn) -> f64 {
        let s = 0.5 / 3f64.sqrt();
        self.edges()
            .map(|(a, b)| {
                let d = b - a;
                let p1 = a + d * (0.5 - s);
                let p2 = a + d * (0.5 + s);
                0.5 * (g.antiderivative_x(&p1) + g.antiderivative_x(&p2)) * d.y
            })
            .sum()
    }

    /// Moves every vertex through `map`.
    pub fn mapped(&self, mut map: impl FnMut(&Point) -> Result<Point>) -> Result<Polygon> {
        let loops = self
            .loops
            .iter()
            .map(|l| l.iter().map(&mut map).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Polygon { loops })
    }

    /// Local validity check against a reference polygon with the same
    /// topology: finite vertices, no vanishing edges, no sharp fold between
    /// consecutive edges where the reference had none, and unchanged loop
    /// orientation. A global self-intersection test is not attempted.
    pub fn check_against(&self, reference: &Polygon) -> Result<()> {
        let folds = |poly: &Polygon| -> Vec<bool> {
            poly.loops
                .iter()
                .flat_map(|l| {
                    let n = l.len();
                    (0..n).map(move |k| {
                        let e0 = l[k] - l[(k + n - 1) % n];
                        let e1 = l[(k + 1) % n] - l[k];
                        e0.dot(&e1) < -0.5 * e0.norm() * e1.norm()
                    })
                })
                .collect()
        };
        let fail = |why: &str| Err(Error::DegenerateBoundary(why.to_string()));
        if self.loops.iter().flatten().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return fail("non-finite vertex");
        }
        if self.edges().any(|(a, b)| a == b) {
            return fail("zero-length edge");
        }
        if folds(self).iter().zip(folds(reference)).any(|(now, before)| *now && !before) {
            return fail("boundary folds back on itself");
        }
        for (a, b) in self.loop_areas().iter().zip(reference.loop_areas()) {
            if a.signum() != b.signum() || *a == 0.0 {
                return fail("loop orientation flipped");
            }
        }
        Ok(())
    }
}

/// Geometric objective on domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeObjective {
    Volume,
    WeightedVolume(WeightFn),
}

impl ShapeObjective {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeObjective::Volume => "volume",
            ShapeObjective::WeightedVolume(_) => "weighted_volume",
        }
    }

    pub fn weight(&self) -> WeightFn {
        match self {
            ShapeObjective::Volume => WeightFn::constant(1.0),
            ShapeObjective::WeightedVolume(g) => *g,
        }
    }

    pub fn on_polygon(&self, p: &Polygon) -> f64 {
        match self {
            ShapeObjective::Volume => p.area(),
            ShapeObjective::WeightedVolume(g) => p.weighted_area(g),
        }
    }

    /// Closed-form shape derivative along `theta`: `int_Omega div theta` for
    /// the volume, `int_{dOmega} g theta . n` for the weighted volume.
    pub fn shape_derivative(&self, shape: &AnalyticShape, theta: &VectorFieldSpec) -> Result<f64> {
        // Surface the field's own errors before quadrature swallows them.
        theta.evaluate(&shape.polygon(8).loops[0][0])?;
        Ok(match self {
            ShapeObjective::Volume => shape.integrate(&|x| theta.divergence(x).unwrap_or(f64::NAN), 32),
            ShapeObjective::WeightedVolume(g) => shape.integrate_boundary(
                &|x, n| g.value(x) * theta.evaluate(x).map_or(f64::NAN, |v| v.dot(n)),
                8192,
            ),
        })
    }
}

/// Outcome of one derivative check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub test: String,
    pub estimate: f64,
    pub reference: f64,
    #[serde(skip)]
    pub abs_err: f64,
    pub rel_err: f64,
    #[serde(rename = "orders")]
    pub richardson_orders: Vec<f64>,
    pub pass: bool,
    #[serde(skip)]
    pub tolerance: f64,
    #[serde(skip)]
    pub floor: f64,
}

impl DerivativeReport {
    pub fn new(test: impl Into<String>, estimate: f64, reference: f64, orders: Vec<f64>, tolerance: f64) -> Self {
        let mut r = Self {
            test: test.into(),
            estimate,
            reference,
            abs_err: 0.0,
            rel_err: 0.0,
            richardson_orders: orders,
            pass: false,
            tolerance,
            floor: REL_FLOOR,
        };
        r.recompute();
        r
    }

    /// Replaces the relative-error floor; a floor of one turns `rel_err` into
    /// an absolute error for references at zero.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self.recompute();
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.recompute();
        self
    }

    fn recompute(&mut self) {
        self.abs_err = (self.estimate - self.reference).abs();
        self.rel_err = self.abs_err / self.reference.abs().max(self.floor);
        self.pass = self.rel_err <= self.tolerance;
    }
}

/// Centered differences at `tau`, `tau/2`, `tau/4` combined by two levels of
/// Richardson extrapolation. Returns the estimate and the observed order of
/// the raw differences when it is measurable above roundoff.
pub fn richardson_derivative(mut f: impl FnMut(f64) -> Result<f64>, tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {tau}")));
    }
    let f0 = f(0.0)?;
    let mut d = [0.0; 3];
    for (k, dk) in d.iter_mut().enumerate() {
        let h = tau / (1 << k) as f64;
        *dk = (f(h)? - f(-h)?) / (2.0 * h);
    }
    let r1 = (4.0 * d[1] - d[0]) / 3.0;
    let r2 = (4.0 * d[2] - d[1]) / 3.0;
    let estimate = (16.0 * r2 - r1) / 15.0;
    let noise = 1e3 * f64::EPSILON * f0.abs().max(1.0) / (tau / 4.0);
    let (e1, e2) = ((d[0] - d[1]).abs(), (d[1] - d[2]).abs());
    let orders = if e1 > noise && e2 > noise { vec![(e1 / e2).log2()] } else { Vec::new() };
    Ok((estimate, orders))
}

fn shape_test_name(kind: &str, shape: &AnalyticShape, obj: &ShapeObjective) -> String {
    let s = match shape {
        AnalyticShape::Disk { .. } => "disk",
        AnalyticShape::Rectangle { .. } => "rectangle",
        AnalyticShape::Annulus { .. } => "annulus",
    };
    format!("{kind}/{s}/{}", obj.name())
}

/// Derivative of `t -> J((Id + t theta)(Omega))` at zero, with the domain
/// tracked as a polygon of [`POLYGON_VERTICES`] vertices.
pub fn verify_shape1(
    shape: &AnalyticShape,
    objective: &ShapeObjective,
    theta: &VectorFieldSpec,
    tau: f64,
    tolerance: f64,
) -> Result<DerivativeReport> {
    shape.validate()?;
    let base = shape.polygon(POLYGON_VERTICES);
    let (estimate, orders) = richardson_derivative(
        |t| {
            let moved = base.mapped(|x| Ok(x + theta.evaluate(x)? * t))?;
            moved.check_against(&base)?;
            Ok(objective.on_polygon(&moved))
        },
        tau,
    )?;
    let reference = objective.shape_derivative(shape, theta)?;
    Ok(DerivativeReport::new(shape_test_name("shape1", shape, objective), estimate, reference, orders, tolerance))
}

/// As [`verify_shape1`], but the vertices follow the flow of `grad phi`
/// rather than the straight-line perturbation.
pub fn verify_shape2(
    shape: &AnalyticShape,
    objective: &ShapeObjective,
    phi: &Potential,
    tau: f64,
    tolerance: f64,
) -> Result<DerivativeReport> {
    shape.validate()?;
    let theta = VectorFieldSpec::gradient(phi.clone())?;
    let base = shape.polygon(POLYGON_VERTICES);
    let (estimate, orders) = richardson_derivative(
        |t| {
            let moved = base.mapped(|x| Ok(flows::flow_map(&theta, x, t, FLOW_STEPS)?.position))?;
            moved.check_against(&base)?;
            Ok(objective.on_polygon(&moved))
        },
        tau,
    )?;
    let reference = objective.shape_derivative(shape, &theta)?;
    Ok(DerivativeReport::new(shape_test_name("shape2", shape, objective), estimate, reference, orders, tolerance))
}

/// Result of a topological-derivative fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologicalFit {
    pub report: DerivativeReport,
    /// Hole radius `R(t)` for each sample time.
    pub radii: Vec<f64>,
    /// `J(mu_t) - J(mu_0)` for each sample time.
    pub increments: Vec<f64>,
    /// Exponent `q` of the free fit `c t^q`.
    pub exponent: f64,
}

/// Radius of the hole opened by the singular field after time `t`: the
/// image of the puncture, extrapolated from two starting radii.
pub fn hole_radius(hole: &HoleField, t: f64) -> Result<f64> {
    let (a, b) = (1e-3 * hole.eps, 1e-4 * hole.eps);
    let (ra, rb) = (flows::radial_flow(hole, a, t)?, flows::radial_flow(hole, b, t)?);
    Ok(rb - (ra - rb) * b / (a - b))
}

/// Coefficient `c` in `J(mu_t) - J(mu_0) ~ c * pi t^2` for the hole field
/// centered at `x0`.
///
/// The flow is the identity outside `B(x0, 2 eps)` and maps the punctured
/// ball onto the annulus `R(t) < |x - x0| < 2 eps`, so the deformed domain is
/// `Omega` minus the closed ball of radius `R(t)` and the increment is
/// `-int_{B_R(t)} g`, evaluated by polar Gauss quadrature. The report's
/// orders hold the exponent of the free fit, which must lie within
/// [`EXPONENT_TOL`] of two for the report to pass.
pub fn verify_top(
    shape: &AnalyticShape,
    objective: &ShapeObjective,
    x0: Point,
    eps: f64,
    times: &[f64],
    tolerance: f64,
) -> Result<TopologicalFit> {
    shape.validate()?;
    if !shape.contains_ball(&x0, 2.0 * eps) {
        return Err(Error::BallNotInterior { x: x0.x, y: x0.y, radius: 2.0 * eps });
    }
    if times.len() < 2 || times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::TooFewSamples { needed: 2, got: times.iter().filter(|t| **t > 0.0).count() });
    }
    let hole = HoleField::new(x0, eps)?;
    let g = objective.weight();
    let radii = times.iter().map(|t| hole_radius(&hole, *t)).collect::<Result<Vec<_>>>()?;
    let increments: Vec<f64> = radii
        .iter()
        .map(|r| -AnalyticShape::Disk { center: x0, radius: *r }.integrate(&|x| g.value(x), 2))
        .collect();
    let basis: Vec<f64> = times.iter().map(|t| PI * t * t).collect();
    let coefficient = basis.iter().zip(&increments).map(|(b, d)| b * d).sum::<f64>()
        / basis.iter().map(|b| b * b).sum::<f64>();
    let exponent = log_log_slope(times, &increments);
    let reference = -g.value(&x0);
    let name = format!("top/eps={eps}/{}", objective.name());
    let mut report = DerivativeReport::new(name, coefficient, reference, vec![exponent], tolerance);
    report.pass &= (exponent - 2.0).abs() <= EXPONENT_TOL;
    Ok(TopologicalFit { report, radii, increments, exponent })
}

/// Least-squares slope of `log |y|` against `log x`.
fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fixed first variation `F` with closed-form gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearFunctional {
    /// `F(x) = a . x + c`.
    Affine { a: Point, c: f64 },
    Potential(Potential),
}

impl LinearFunctional {
    pub fn value(&self, x: &Point) -> f64 {
        match self {
            LinearFunctional::Affine { a, c } => a.dot(x) + c,
            LinearFunctional::Potential(p) => p.value(x),
        }
    }

    pub fn gradient(&self, x: &Point) -> Point {
        match self {
            LinearFunctional::Affine { a, .. } => *a,
            LinearFunctional::Potential(p) => p.gradient(x),
        }
    }
}

/// Objective on densities.
#[derive(Debug, Clone)]
pub enum DensityObjective {
    /// `J(rho) = int F rho`.
    Linear(LinearFunctional),
    /// Work of the loads for the elastic state at `rho`. `sign` multiplies
    /// the pairing `<grad F, grad phi>_rho` in the reference, with `F` the
    /// sensitivity `b'(rho) sigma : eps`.
    Compliance { bc: BoundaryCondition, law: MaterialLaw, sign: f64 },
}

impl DensityObjective {
    fn name(&self) -> &'static str {
        match self {
            DensityObjective::Linear(_) => "linear",
            DensityObjective::Compliance { .. } => "compliance",
        }
    }

    /// `J(rho)` with the density sampled on `grid`.
    pub fn evaluate(&self, rho: &GridDensity) -> Result<f64> {
        match self {
            DensityObjective::Linear(f) => Ok(rho.integrate(|x| f.value(x))),
            DensityObjective::Compliance { bc, law, .. } => {
                let system = elasticity::assemble(rho, law, bc)?;
                let field = elasticity::solve_state(&system)?;
                Ok(elasticity::compliance(&field, bc))
            }
        }
    }

    /// First variation `F` and its gradient at the cell centers of `rho`.
    pub fn first_variation(&self, rho: &GridDensity) -> Result<(CellScalar, Vec<Point>)> {
        let grid = *rho.grid();
        match self {
            DensityObjective::Linear(f) => {
                let values = CellScalar::from_fn(grid, |x| f.value(x));
                let grads = grid.centers().iter().map(|x| f.gradient(x)).collect();
                Ok((values, grads))
            }
            DensityObjective::Compliance { bc, law, .. } => {
                let system = elasticity::assemble(rho, law, bc)?;
                let field = elasticity::solve_state(&system)?;
                let f = elasticity::sensitivity_f(rho, &field, law)?;
                let (gx, gy) = f.gradient();
                let grads = gx.iter().zip(&gy).map(|(a, b)| Point::new(*a, *b)).collect();
                Ok((f, grads))
            }
        }
    }

    fn sign(&self) -> f64 {
        match self {
            DensityObjective::Linear(_) => 1.0,
            DensityObjective::Compliance { sign, .. } => *sign,
        }
    }
}

/// Derivative of `t -> J(rho_t)` at zero, `rho_t` the push-forward of the
/// analytic density `rho` by the flow of `grad phi`, sampled on `grid`.
/// The reference is `sign * int grad F . grad phi rho` by midpoint
/// quadrature on the same grid.
pub fn verify_dens(
    objective: &DensityObjective,
    rho: &dyn DensityField,
    grid: &GridSpec,
    phi: &Potential,
    tau: f64,
    tolerance: f64,
) -> Result<DerivativeReport> {
    let theta = VectorFieldSpec::gradient(phi.clone())?;
    // The velocity must vanish (to roundoff) on the outer ring of cells so
    // that no mass crosses the box walls.
    let speeds: Vec<f64> = grid.centers().iter().map(|x| phi.gradient(x).norm()).collect();
    let peak = speeds.iter().fold(0.0f64, |m, v| m.max(*v));
    let on_ring = (0..grid.ny)
        .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
        .filter(|(i, j)| *i == 0 || *j == 0 || *i + 1 == grid.nx || *j + 1 == grid.ny)
        .map(|(i, j)| speeds[grid.index(i, j)])
        .fold(0.0f64, f64::max);
    if on_ring > WALL_SPEED_TOL * peak {
        return Err(Error::InvalidInput("potential is not supported inside the grid".into()));
    }
    let (estimate, orders, pairing) = directional_derivative(objective, rho, grid, &theta, phi, tau)?;
    let reference = objective.sign() * pairing;
    Ok(DerivativeReport::new(format!("dens/{}", objective.name()), estimate, reference, orders, tolerance))
}

/// Finite-difference derivative along the flow of `grad phi` together with
/// the unsigned pairing `int grad F . grad phi rho`.
fn directional_derivative(
    objective: &DensityObjective,
    rho: &dyn DensityField,
    grid: &GridSpec,
    theta: &VectorFieldSpec,
    phi: &Potential,
    tau: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let (estimate, orders) = richardson_derivative(
        |t| objective.evaluate(&flows::pushforward_density(rho, grid, theta, t, FLOW_STEPS)?),
        tau,
    )?;
    let base = GridDensity::from_fn(*grid, |x| rho.density_at(x))?;
    let (_, grad_f) = objective.first_variation(&base)?;
    let pairing: f64 = grid
        .centers()
        .iter()
        .zip(&grad_f)
        .zip(base.values())
        .map(|((x, gf), r)| gf.dot(&phi.gradient(x)) * r)
        .sum::<f64>()
        * grid.cell_area();
    Ok((estimate, orders, pairing))
}

/// Sign `s` such that `d/dt J(rho_t) = s <grad F, grad phi>_rho` along a
/// probe potential centered in the grid, for the objective's first
/// variation `F` at `rho`. Returns `None` when either side vanishes.
pub fn resolve_sign(objective: &DensityObjective, rho: &GridDensity) -> Result<Option<f64>> {
    let grid = rho.grid();
    let center = Point::new(grid.x0 + 0.5 * grid.lx, grid.y0 + 0.5 * grid.ly);
    let width = 0.125 * grid.lx.min(grid.ly);
    let phi = Potential::Gaussian { center, width, amp: 1e-2 * width * width };
    let theta = VectorFieldSpec::gradient(phi.clone())?;
    let (estimate, _, pairing) = directional_derivative(objective, rho, grid, &theta, &phi, 0.05)?;
    let product = estimate * pairing;
    Ok(if product == 0.0 || !product.is_finite() { None } else { Some(product.signum()) })
}

/// Families of the standard verification battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Shape1,
    Shape2,
    Top,
    Dens,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Shape1, Family::Shape2, Family::Top, Family::Dens];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Shape1 => "shape1",
            Family::Shape2 => "shape2",
            Family::Top => "top",
            Family::Dens => "dens",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Shapes of the shape-derivative battery.
pub fn battery_shapes() -> [AnalyticShape; 2] {
    [
        AnalyticShape::Disk { center: Point::new(0.1, -0.05), radius: 0.8 },
        AnalyticShape::Rectangle { corner: Point::new(-0.6, -0.4), width: 1.2, height: 0.9 },
    ]
}

/// Weight of the weighted-volume objective in the battery.
pub fn battery_weight() -> WeightFn {
    WeightFn { c0: 1.0, linear: Point::new(0.5, -0.3), quad: 0.8, quad_center: Point::new(0.2, 0.1) }
}

/// Potentials of the shape-derivative battery; each overlaps the boundary
/// of both battery shapes.
pub fn battery_potentials() -> [Potential; 3] {
    [
        Potential::Gaussian { center: Point::new(0.5, 0.2), width: 0.35, amp: 0.1 },
        Potential::Sum(vec![
            Potential::Gaussian { center: Point::new(-0.4, 0.3), width: 0.3, amp: -0.05 },
            Potential::Gaussian { center: Point::new(0.3, -0.5), width: 0.25, amp: 0.04 },
        ]),
        Potential::Gaussian { center: Point::new(-0.2, -0.3), width: 0.5, amp: 0.08 },
    ]
}

/// Finite-difference step of the shape battery.
pub const SHAPE_TAU: f64 = 0.05;

/// Perturbation- and flow-based shape derivatives for the two battery
/// objectives on the battery shapes: a linear field and two gradient
/// fields for the former, the three battery potentials for the latter.
pub fn shape_battery(family: Family, tolerance: f64) -> Result<Vec<DerivativeReport>> {
    let objectives = [ShapeObjective::Volume, ShapeObjective::WeightedVolume(battery_weight())];
    let potentials = battery_potentials();
    let mut reports = Vec::new();
    for shape in battery_shapes() {
        for obj in &objectives {
            for (k, phi) in potentials.iter().enumerate() {
                let mut r = match family {
                    Family::Shape1 => {
                        let theta = if k == 2 {
                            VectorFieldSpec::Linear(crate::Mat2::new(1.0, 0.3, -0.2, 0.5))
                        } else {
                            VectorFieldSpec::gradient(phi.clone())?
                        };
                        verify_shape1(&shape, obj, &theta, SHAPE_TAU, tolerance)?
                    }
                    Family::Shape2 => verify_shape2(&shape, obj, phi, SHAPE_TAU, tolerance)?,
                    _ => return Err(Error::InvalidInput(format!("{} is not a shape family", family.name()))),
                };
                r.test = format!("{}/field{}", r.test, k);
                reports.push(r);
            }
        }
    }
    Ok(reports)
}

/// Sample times `eps * k / 40`, `k = 1..=5`.
pub fn top_times(eps: f64) -> Vec<f64> {
    (1..=5).map(|k| eps * k as f64 / 40.0).collect()
}

/// Topological derivatives of the volume and weighted volume on the unit
/// disk at an off-center point, for two hole sizes.
pub fn top_battery(tolerance: f64) -> Result<Vec<DerivativeReport>> {
    let shape = AnalyticShape::Disk { center: Point::zeros(), radius: 1.0 };
    let x0 = Point::new(0.1, -0.1);
    let mut reports = Vec::new();
    for eps in [0.1, 0.05] {
        for obj in [ShapeObjective::Volume, ShapeObjective::WeightedVolume(battery_weight())] {
            reports.push(verify_top(&shape, &obj, x0, eps, &top_times(eps), tolerance)?.report);
        }
    }
    Ok(reports)
}

/// Grid, base density and objective of the linear density battery.
pub fn dens_linear_setup() -> (GridSpec, GaussianMixture) {
    let grid = GridSpec::new(64, 64, -1.0, -1.0, 2.0, 2.0).expect("valid grid");
    let rho = GaussianMixture { components: vec![(Point::new(0.1, -0.05), 0.3, 0.6)], floor: 0.1 };
    (grid, rho)
}

/// Grid, base density and boundary condition of the compliance battery.
pub fn dens_compliance_setup() -> (GridSpec, GaussianMixture, BoundaryCondition) {
    let grid = GridSpec::unit(32).expect("valid grid");
    let rho = GaussianMixture {
        components: vec![(Point::new(0.3, 0.4), 0.2, 0.2), (Point::new(0.7, 0.6), 0.25, 0.2)],
        floor: 0.6,
    };
    (grid, rho, BoundaryCondition::cantilever(Point::new(0.0, -1.0), 0.4, 0.6))
}

/// Finite-difference step of the density battery.
pub const DENS_TAU: f64 = 0.02;

/// Density derivatives along five seeded potentials for a linear objective
/// (alternating affine and Gaussian `F`) and for compliance, whose sign is
/// first fixed by [`resolve_sign`].
pub fn dens_battery(seed: u64, linear_tol: f64, compliance_tol: f64) -> Result<Vec<DerivativeReport>> {
    let rng = CounterRng::new(seed);
    let mut reports = Vec::new();
    let (grid, rho) = dens_linear_setup();
    let mut draw = rng.substream(0);
    for k in 0..5 {
        let f = if k % 2 == 0 {
            LinearFunctional::Affine { a: Point::new(1.0, 0.5), c: 0.0 }
        } else {
            LinearFunctional::Potential(Potential::Gaussian { center: Point::new(0.2, 0.1), width: 0.5, amp: 1.0 })
        };
        let phi = Potential::Gaussian {
            center: Point::new(draw.uniform(-0.3, 0.3), draw.uniform(-0.3, 0.3)),
            width: draw.uniform(0.08, 0.12),
            amp: 0.02,
        };
        let mut r = verify_dens(&DensityObjective::Linear(f), &rho, &grid, &phi, DENS_TAU, linear_tol)?;
        r.test = format!("{}/seed{}", r.test, k);
        reports.push(r);
    }
    let (grid, rho, bc) = dens_compliance_setup();
    let law = MaterialLaw::default();
    let base = GridDensity::from_fn(grid, |x| rho.density_at(x))?;
    let unsigned = DensityObjective::Compliance { bc: bc.clone(), law, sign: 1.0 };
    let sign = resolve_sign(&unsigned, &base)?.ok_or_else(|| Error::InvalidInput("compliance derivative vanished".into()))?;
    let objective = DensityObjective::Compliance { bc, law, sign };
    let mut draw = rng.substream(1);
    for k in 0..5 {
        let phi = Potential::Gaussian {
            center: Point::new(draw.uniform(0.4, 0.6), draw.uniform(0.4, 0.6)),
            width: 0.06,
            amp: 0.01,
        };
        let mut r = verify_dens(&objective, &rho, &grid, &phi, DENS_TAU, compliance_tol)?;
        r.test = format!("{}/sign{:+}/seed{}", r.test, sign, k);
        reports.push(r);
    }
    Ok(reports)
}

/// Tolerances of the standard battery.
pub const SHAPE_TOL: f64 = 1e-3;
pub const TOP_TOL: f64 = 1e-3;
pub const DENS_LINEAR_TOL: f64 = 1e-6;
pub const DENS_COMPLIANCE_TOL: f64 = 2e-2;

/// Runs the selected families of the standard battery.
pub fn standard_battery(families: &[Family], seed: u64) -> Result<Vec<DerivativeReport>> {
    let mut out = Vec::new();
    for f in families {
        out.extend(match f {
            Family::Shape1 | Family::Shape2 => shape_battery(*f, SHAPE_TOL)?,
            Family::Top => top_battery(TOP_TOL)?,
            Family::Dens => dens_battery(seed, DENS_LINEAR_TOL, DENS_COMPLIANCE_TOL)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat2;

    fn disk() -> AnalyticShape {
        AnalyticShape::Disk { center: Point::zeros(), radius: 1.0 }
    }

    fn weight() -> WeightFn {
        WeightFn { c0: 1.0, linear: Point::new(0.5, -0.3), quad: 0.8, quad_center: Point::new(0.2, 0.1) }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((i14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn volumes() {
        assert_eq!(disk().volume(), PI);
        let ann = AnalyticShape::Annulus { center: Point::zeros(), r_in: 1.0, r_out: 2.0 };
        assert_eq!(ann.volume(), 3.0 * PI);
        for s in [disk(), ann, AnalyticShape::Rectangle { corner: Point::new(-1.0, 0.5), width: 2.0, height: 0.7 }] {
            assert!((weighted_volume(&|_| 1.0, &s, 64) - s.volume()).abs() < 1e-12 * s.volume());
            let poly = s.polygon(POLYGON_VERTICES);
            assert!((poly.area() - s.volume()).abs() < 1e-5 * s.volume());
        }
    }

    #[test]
    fn polygon_weighted_area_matches_quadrature() {
        let g = weight();
        let rect = AnalyticShape::Rectangle { corner: Point::new(-0.3, 0.2), width: 1.1, height: 0.6 };
        let exact_poly = rect.polygon(4).weighted_area(&g);
        let quad = rect.integrate(&|x| g.value(x), 4);
        assert!((exact_poly - quad).abs() < 1e-13);
        assert!((weighted_volume(&|x| g.value(x), &rect, 400) - quad).abs() < 1e-5);
    }

    #[test]
    fn dilation_of_unit_disk() {
        let r = verify_shape1(&disk(), &ShapeObjective::Volume, &VectorFieldSpec::Linear(Mat2::identity()), 0.05, 1e-4)
            .unwrap();
        assert!((r.reference - 2.0 * PI).abs() < 1e-10, "{r:?}");
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn rotation_does_not_move_the_disk() {
        let r = verify_shape1(&disk(), &ShapeObjective::Volume, &VectorFieldSpec::Rotation, 0.05, 1e-6).unwrap();
        assert!(r.estimate.abs() <= 1e-6);
        let r = r.with_floor(1.0);
        assert!(r.pass);
        let r2 = verify_shape2(&disk(), &ShapeObjective::Volume, &Potential::Sum(vec![]), 0.05, 1e-6).unwrap();
        assert_eq!(r2.estimate, 0.0);
    }

    #[test]
    fn flow_and_perturbation_derivatives_agree() {
        let phi = Potential::Gaussian { center: Point::new(0.7, 0.3), width: 0.3, amp: 0.1 };
        let theta = VectorFieldSpec::gradient(phi.clone()).unwrap();
        let obj = ShapeObjective::WeightedVolume(weight());
        let r1 = verify_shape1(&disk(), &obj, &theta, 0.05, 1e-3).unwrap();
        let r2 = verify_shape2(&disk(), &obj, &phi, 0.05, 1e-3).unwrap();
        assert!(r1.pass && r2.pass, "{r1:?} {r2:?}");
        assert!((r1.estimate - r2.estimate).abs() < 1e-3 * r1.reference.abs());
    }

    #[test]
    fn interior_potential_preserves_volume() {
        let phi = Potential::Bump { center: Point::new(0.1, 0.0), radius: 0.5, amp: 0.05 };
        let r = verify_shape2(&disk(), &ShapeObjective::Volume, &phi, 0.05, 1e-6).unwrap().with_floor(1.0);
        assert_eq!(r.estimate, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn folded_boundary_is_rejected() {
        let err = verify_shape1(&disk(), &ShapeObjective::Volume, &VectorFieldSpec::Linear(Mat2::new(-1.0, 0.0, 0.0, 1.0)), 1.5, 1e-3);
        assert!(matches!(err, Err(Error::DegenerateBoundary(_))));
    }

    #[test]
    fn topological_derivative_of_volume() {
        let fit = verify_top(&disk(), &ShapeObjective::Volume, Point::zeros(), 0.1, &[0.0025, 0.005, 0.0075], 1e-3)
            .unwrap();
        assert!((fit.report.estimate + 1.0).abs() < 1e-9, "{:?}", fit.report);
        assert!((fit.exponent - 2.0).abs() < 1e-6);
        for (t, r) in [0.0025, 0.005, 0.0075].iter().zip(&fit.radii) {
            assert!((r - t).abs() < 1e-12);
        }
    }

    #[test]
    fn topological_derivative_with_quadratic_weight() {
        let x0 = Point::new(0.1, -0.2);
        let g = WeightFn { c0: 1.0, linear: Point::zeros(), quad: 1.0, quad_center: x0 };
        let times: Vec<f64> = (1..=5).map(|k| 0.1 * k as f64 / 40.0).collect();
        let fit = verify_top(&disk(), &ShapeObjective::WeightedVolume(g), x0, 0.1, &times, 1e-3).unwrap();
        for (t, d) in times.iter().zip(&fit.increments) {
            let exact = -(PI * t * t + PI * t.powi(4) / 2.0);
            assert!((d - exact).abs() < 1e-14, "{d} {exact}");
        }
        assert!(fit.report.pass, "{:?}", fit.report);
    }

    #[test]
    fn ball_must_be_interior() {
        let r = verify_top(&disk(), &ShapeObjective::Volume, Point::new(0.9, 0.0), 0.1, &[0.001, 0.002], 1e-3);
        assert!(matches!(r, Err(Error::BallNotInterior { .. })));
    }

    #[test]
    fn linear_density_derivative() {
        let grid = GridSpec::new(64, 64, -1.0, -1.0, 2.0, 2.0).unwrap();
        let rho = GaussianMixture { components: vec![(Point::new(0.1, -0.05), 0.3, 0.6)], floor: 0.1 };
        let phi = Potential::Gaussian { center: Point::new(-0.05, 0.08), width: 0.1, amp: 0.02 };
        let obj = DensityObjective::Linear(LinearFunctional::Affine { a: Point::new(1.0, 0.0), c: 0.0 });
        let r = verify_dens(&obj, &rho, &grid, &phi, 0.02, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        let flat = DensityObjective::Linear(LinearFunctional::Affine { a: Point::zeros(), c: 2.0 });
        let r = verify_dens(&flat, &rho, &grid, &phi, 0.02, 1e-9).unwrap().with_floor(1.0);
        assert_eq!(r.reference, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn compliance_derivative_has_negative_sign() {
        let grid = GridSpec::unit(32).unwrap();
        let rho = GaussianMixture { components: vec![(Point::new(0.3, 0.4), 0.2, 0.2)], floor: 0.8 };
        let bc = BoundaryCondition::cantilever(Point::new(0.0, -1.0), 0.4, 0.6);
        let law = MaterialLaw::default();
        let phi = Potential::Gaussian { center: Point::new(0.45, 0.55), width: 0.06, amp: 0.01 };
        let minus = DensityObjective::Compliance { bc: bc.clone(), law, sign: -1.0 };
        let r = verify_dens(&minus, &rho, &grid, &phi, 0.02, 2e-2).unwrap();
        assert!(r.pass, "{r:?}");
        let plus = DensityObjective::Compliance { bc, law, sign: 1.0 };
        assert!(!verify_dens(&plus, &rho, &grid, &phi, 0.02, 2e-2).unwrap().pass);
        let base = GridDensity::from_fn(grid, |x| rho.density_at(x)).unwrap();
        assert_eq!(resolve_sign(&plus, &base).unwrap(), Some(-1.0));
    }

    #[test]
    fn battery_passes() {
        let reports = standard_battery(&Family::ALL, 2024).unwrap();
        assert_eq!(reports.len(), 12 + 12 + 4 + 10);
        for r in &reports {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn report_json_keys() {
        let r = DerivativeReport::new("x", 1.0, 1.0, vec![2.0], 1e-3);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["estimate", "orders", "pass", "reference", "rel_err", "test"]);
    }
}
