//! Conservative donor-cell solver for the continuity equation
//! `d rho/dt + div(rho v) = 0` on a uniform grid with no-flux walls.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::VectorFieldSpec;
use crate::measures::{GridDensity, GridSpec};
use crate::Point;

/// Cell-centered velocity samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    grid: GridSpec,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl GridVectorField {
    pub fn new(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        if vx.len() != grid.len() || vy.len() != grid.len() {
            return Err(Error::InvalidInput("velocity arrays do not match the grid".into()));
        }
        if vx.iter().chain(&vy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("velocity contains non-finite entries".into()));
        }
        Ok(Self { grid, vx, vy })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, vx: vec![0.0; grid.len()], vy: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&Point) -> Point) -> Result<Self> {
        let (vx, vy) = grid.centers().iter().map(|c| {
            let v = f(c);
            (v.x, v.y)
        }).unzip();
        Self::new(grid, vx, vy)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn vx(&self) -> &[f64] {
        &self.vx
    }

    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    pub fn at(&self, i: usize, j: usize) -> Point {
        let k = self.grid.index(i, j);
        Point::new(self.vx[k], self.vy[k])
    }

    /// Largest Euclidean speed over cells.
    pub fn max_speed(&self) -> f64 {
        self.vx.iter().zip(&self.vy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            vx: self.vx.iter().map(|v| v * s).collect(),
            vy: self.vy.iter().map(|v| v * s).collect(),
        }
    }
}

/// Normal velocities on cell faces. Boundary faces are always zero.
///
/// `ux[j * (nx + 1) + i]` is the face on the left of cell `(i, j)`;
/// `uy[j * nx + i]` is the face below cell `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocity {
    grid: GridSpec,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl FaceVelocity {
    /// Arithmetic means of the two neighbouring cell values.
    pub fn from_cells(v: &GridVectorField) -> Self {
        let g = v.grid;
        let mut ux = vec![0.0; (g.nx + 1) * g.ny];
        let mut uy = vec![0.0; g.nx * (g.ny + 1)];
        for j in 0..g.ny {
            for i in 1..g.nx {
                ux[j * (g.nx + 1) + i] = 0.5 * (v.vx[g.index(i - 1, j)] + v.vx[g.index(i, j)]);
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                uy[j * g.nx + i] = 0.5 * (v.vy[g.index(i, j - 1)] + v.vy[g.index(i, j)]);
            }
        }
        Self { grid: g, ux, uy }
    }

    /// Analytic field sampled at interior face midpoints.
    pub fn from_spec(spec: &VectorFieldSpec, g: &GridSpec) -> Result<Self> {
        let (hx, hy) = (g.hx(), g.hy());
        let mut ux = vec![0.0; (g.nx + 1) * g.ny];
        let mut uy = vec![0.0; g.nx * (g.ny + 1)];
        for j in 0..g.ny {
            for i in 1..g.nx {
                let p = Point::new(g.x0 + i as f64 * hx, g.y0 + (j as f64 + 0.5) * hy);
                ux[j * (g.nx + 1) + i] = spec.evaluate(&p)?.x;
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let p = Point::new(g.x0 + (i as f64 + 0.5) * hx, g.y0 + j as f64 * hy);
                uy[j * g.nx + i] = spec.evaluate(&p)?.y;
            }
        }
        if ux.iter().chain(&uy).any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteState);
        }
        Ok(Self { grid: *g, ux, uy })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    fn ux(&self, i: usize, j: usize) -> f64 {
        self.ux[j * (self.grid.nx + 1) + i]
    }

    #[inline]
    fn uy(&self, i: usize, j: usize) -> f64 {
        self.uy[j * self.grid.nx + i]
    }

    /// Sum of outgoing face speeds of cell `(i, j)`.
    fn outflow_speed(&self, i: usize, j: usize) -> f64 {
        self.ux(i + 1, j).max(0.0)
            + (-self.ux(i, j)).max(0.0)
            + self.uy(i, j + 1).max(0.0)
            + (-self.uy(i, j)).max(0.0)
    }

    fn max_outflow_speed(&self) -> f64 {
        let g = &self.grid;
        (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.outflow_speed(i, j))
            .fold(0.0, f64::max)
    }

    /// Exact positivity bound of the donor-cell update: the largest `dt`
    /// for which no cell loses more than its content in one step.
    pub fn positivity_bound(&self) -> f64 {
        let g = &self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let mut rate: f64 = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let r = (self.ux(i + 1, j).max(0.0) + (-self.ux(i, j)).max(0.0)) / hx
                    + (self.uy(i, j + 1).max(0.0) + (-self.uy(i, j)).max(0.0)) / hy;
                rate = rate.max(r);
            }
        }
        if rate == 0.0 { f64::INFINITY } else { 1.0 / rate }
    }

    /// `safety * min(hx, hy) / s`, where `s` is the largest total outgoing
    /// face speed of any cell, or `dt_max` when nothing moves.
    pub fn cfl_dt(&self, safety: f64, dt_max: f64) -> f64 {
        let speed = self.max_outflow_speed();
        if speed == 0.0 {
            return dt_max;
        }
        (safety * self.grid.hx().min(self.grid.hy()) / speed).min(dt_max)
    }
}

/// Default cap on the time step: one hundredth of the box diameter.
pub fn default_dt_max(grid: &GridSpec) -> f64 {
    1e-2 * grid.diameter()
}

/// CFL-limited step for cell-centered velocity data.
///
/// The speed entering the bound is the total outgoing face speed of a cell,
/// which equals `|v|` for axis-aligned flow and guarantees positivity of the
/// unsplit donor-cell update for `safety <= 1`.
pub fn cfl_dt(v: &GridVectorField, safety: f64, dt_max: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidInput(format!("safety must lie in (0, 1], got {safety}")));
    }
    Ok(FaceVelocity::from_cells(v).cfl_dt(safety, dt_max))
}

/// One donor-cell step with face velocities.
pub fn step_faces(d: &GridDensity, faces: &FaceVelocity, dt: f64) -> Result<GridDensity> {
    let g = *d.grid();
    if *faces.grid() != g {
        return Err(Error::InvalidInput("velocity and density grids differ".into()));
    }
    if !(dt >= 0.0) {
        return Err(Error::InvalidInput(format!("time step must be nonnegative, got {dt}")));
    }
    let bound = faces.positivity_bound();
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    let rho = d.values();
    let (nx, ny) = (g.nx, g.ny);
    let mut fx = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 1..nx {
            let u = faces.ux(i, j);
            let up = if u > 0.0 { rho[g.index(i - 1, j)] } else { rho[g.index(i, j)] };
            fx[j * (nx + 1) + i] = u * up;
        }
    }
    let mut fy = vec![0.0; nx * (ny + 1)];
    for j in 1..ny {
        for i in 0..nx {
            let u = faces.uy(i, j);
            let up = if u > 0.0 { rho[g.index(i, j - 1)] } else { rho[g.index(i, j)] };
            fy[j * nx + i] = u * up;
        }
    }
    let (cx, cy) = (dt / g.hx(), dt / g.hy());
    let mut out = Vec::with_capacity(g.len());
    for j in 0..ny {
        for i in 0..nx {
            let div_x = fx[j * (nx + 1) + i + 1] - fx[j * (nx + 1) + i];
            let div_y = fy[(j + 1) * nx + i] - fy[j * nx + i];
            // Roundoff can leave a -1e-20 residue in a fully drained cell.
            out.push((rho[g.index(i, j)] - cx * div_x - cy * div_y).max(0.0));
        }
    }
    GridDensity::new(g, out)
}

/// One donor-cell step; face velocities are means of adjacent cells.
pub fn step_upwind(d: &GridDensity, v: &GridVectorField, dt: f64) -> Result<GridDensity> {
    step_faces(d, &FaceVelocity::from_cells(v), dt)
}

/// Velocity input of [`solve_continuity`].
#[derive(Debug, Clone, Copy)]
pub enum Velocity<'a> {
    Analytic(&'a VectorFieldSpec),
    Grid(&'a GridVectorField),
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

/// Repeated CFL-limited upwind steps up to time `t_final`; the last step is
/// shortened to land exactly on `t_final`.
pub fn solve_continuity(
    d0: &GridDensity,
    velocity: Velocity<'_>,
    t_final: f64,
    safety: f64,
    dt_max: f64,
) -> Result<(GridDensity, Vec<StepRecord>)> {
    if !(t_final >= 0.0) {
        return Err(Error::InvalidInput(format!("final time must be >= 0, got {t_final}")));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidInput(format!("safety must lie in (0, 1], got {safety}")));
    }
    let faces = match velocity {
        Velocity::Analytic(spec) => FaceVelocity::from_spec(spec, d0.grid())?,
        Velocity::Grid(v) => FaceVelocity::from_cells(v),
    };
    let dt_cfl = faces.cfl_dt(safety, dt_max);
    let mut rho = d0.clone();
    let mut records = Vec::new();
    let mut t = 0.0;
    let mut step = 0;
    while t < t_final {
        let remaining = t_final - t;
        let dt = if remaining <= dt_cfl * (1.0 + 1e-12) { remaining } else { dt_cfl };
        rho = step_faces(&rho, &faces, dt)?;
        step += 1;
        t = if dt == remaining { t_final } else { t + dt };
        records.push(StepRecord {
            step,
            t,
            dt,
            mass: rho.mass(),
            min_rho: rho.min_value(),
            max_rho: rho.max_value(),
        });
    }
    Ok((rho, records))
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(records: &[T], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}
