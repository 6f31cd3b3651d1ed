//! Explicit Wasserstein gradient flow `d rho/dt = div(rho grad G)` for an
//! objective with first variation `G`, stepped with the donor-cell solver.

use serde::Serialize;

use crate::elasticity::{self, BoundaryCondition, MaterialLaw};
use crate::error::{Error, Result};
use crate::measures::{CellScalar, GridDensity};
use crate::sensitivities::{self, DensityObjective, LinearFunctional};
use crate::transport::{self, GridVectorField};
use crate::Point;

/// Objective driven by the flow.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `int |x - center|^2 / 2 rho`.
    Quadratic { center: Point },
    /// `c * int rho`; every density is stationary.
    Constant(f64),
    /// `int F rho` for a fixed `F`.
    Linear(LinearFunctional),
    /// Compliance of the elastic state; the material budget is taken from
    /// the flow configuration.
    Compliance { bc: BoundaryCondition, law: MaterialLaw },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Quadratic { .. } => "quadratic",
            Objective::Constant(_) => "constant",
            Objective::Linear(_) => "linear",
            Objective::Compliance { .. } => "compliance",
        }
    }
}

/// Gradient-flow parameters.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub objective: Objective,
    /// CFL safety factor in `(0, 1]`.
    pub safety: f64,
    pub max_steps: usize,
    /// Stop once `|J_{k+1} - J_k| <= stop_tol * |J_k|`; zero disables.
    pub stop_tol: f64,
    /// Optional density cap enforced by clamping and renormalizing.
    pub rho_max: Option<f64>,
    /// Weight of the penalty `beta int rho^2`.
    pub beta: f64,
    /// Material budget scaling the density seen by the elasticity solver.
    pub m_total: f64,
    pub seed: u64,
    /// Time-step cap; defaults to a hundredth of the box diameter.
    pub dt_max: Option<f64>,
    /// Sign `s` in `v = -s grad F`; resolved by a directional test at the
    /// initial density when absent.
    pub sign: Option<f64>,
}

impl FlowConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            safety: 0.5,
            max_steps: 100,
            stop_tol: 0.0,
            rho_max: None,
            beta: 0.0,
            m_total: 1.0,
            seed: 0,
            dt_max: None,
            sign: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.safety));
        }
        if !(self.stop_tol >= 0.0) {
            return bad(format!("stop tolerance must be >= 0, got {}", self.stop_tol));
        }
        if let Some(cap) = self.rho_max {
            if !(cap > 0.0) {
                return bad(format!("density cap must be positive, got {cap}"));
            }
        }
        if !(self.beta >= 0.0) {
            return bad(format!("penalty weight must be >= 0, got {}", self.beta));
        }
        if !(self.m_total > 0.0) {
            return bad(format!("material budget must be positive, got {}", self.m_total));
        }
        if let Some(dt) = self.dt_max {
            if !(dt > 0.0) {
                return bad(format!("dt_max must be positive, got {dt}"));
            }
        }
        if let Some(s) = self.sign {
            if s != 1.0 && s != -1.0 {
                return bad(format!("sign must be +1 or -1, got {s}"));
            }
        }
        if let Objective::Compliance { bc, law } = &self.objective {
            law.validate()?;
            bc.validate()?;
        }
        Ok(())
    }

    fn law(&self) -> Option<MaterialLaw> {
        match &self.objective {
            Objective::Compliance { law, .. } => Some(MaterialLaw { budget: self.m_total, ..*law }),
            _ => None,
        }
    }
}

/// Clamp-and-renormalize event: mass right after clamping and after
/// renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    pub mass_before: f64,
    pub mass_after: f64,
}

/// One step of the run log; `objective` is evaluated after the step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub objective: f64,
    pub mass: f64,
    pub max_v: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    /// Sign used in the velocity `-s grad F`.
    pub sign: f64,
    /// Objective at the initial density.
    pub initial_objective: f64,
    pub entries: Vec<LogEntry>,
}

/// Objective value and descent velocity at one density.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub first_variation: CellScalar,
    pub velocity: GridVectorField,
}

/// Smallest admissible time step.
pub const MIN_DT: f64 = 1e-14;

/// `J(rho)` (with penalty) and the velocity `-grad(s F + 2 beta rho)`.
pub fn evaluate(rho: &GridDensity, cfg: &FlowConfig, sign: f64) -> Result<Evaluation> {
    let grid = *rho.grid();
    let centers = grid.centers();
    let (value, f, grad): (f64, CellScalar, Vec<Point>) = match &cfg.objective {
        Objective::Quadratic { center } => {
            let f = CellScalar::from_fn(grid, |x| 0.5 * (x - center).norm_squared());
            (rho.integrate(|x| 0.5 * (x - center).norm_squared()), f, centers.iter().map(|x| x - center).collect())
        }
        Objective::Constant(c) => (c * rho.mass(), CellScalar::constant(grid, *c), vec![Point::zeros(); grid.len()]),
        Objective::Linear(lf) => {
            let f = CellScalar::from_fn(grid, |x| lf.value(x));
            (rho.integrate(|x| lf.value(x)), f, centers.iter().map(|x| lf.gradient(x)).collect())
        }
        Objective::Compliance { bc, .. } => {
            let law = cfg.law().expect("compliance objective carries a law");
            let system = elasticity::assemble(rho, &law, bc)?;
            let field = elasticity::solve_state(&system)?;
            let f = elasticity::sensitivity_f(rho, &field, &law)?;
            let (gx, gy) = f.gradient();
            let grad = gx.iter().zip(&gy).map(|(a, b)| Point::new(*a, *b)).collect();
            (elasticity::compliance(&field, bc), f, grad)
        }
    };
    let mut vx: Vec<f64> = grad.iter().map(|g| -sign * g.x).collect();
    let mut vy: Vec<f64> = grad.iter().map(|g| -sign * g.y).collect();
    let mut value = value;
    if cfg.beta > 0.0 {
        value += cfg.beta * rho.values().iter().map(|r| r * r).sum::<f64>() * grid.cell_area();
        let penalty = CellScalar { grid, values: rho.values().iter().map(|r| 2.0 * cfg.beta * r).collect() };
        let (px, py) = penalty.gradient();
        for k in 0..grid.len() {
            vx[k] -= px[k];
            vy[k] -= py[k];
        }
    }
    Ok(Evaluation { value, first_variation: f, velocity: GridVectorField::new(grid, vx, vy)? })
}

/// Sign of the objective's first variation, fixed by configuration, by
/// definition for the analytic objectives, or by a finite-difference
/// directional test for compliance.
pub fn resolve_sign(rho: &GridDensity, cfg: &FlowConfig) -> Result<f64> {
    if let Some(s) = cfg.sign {
        return Ok(s);
    }
    match &cfg.objective {
        Objective::Compliance { bc, .. } => {
            let law = cfg.law().expect("compliance objective carries a law");
            let obj = DensityObjective::Compliance { bc: bc.clone(), law, sign: 1.0 };
            let s = sensitivities::resolve_sign(&obj, rho)?.unwrap_or(-1.0);
            log::info!("compliance descent sign resolved to {s}");
            Ok(s)
        }
        _ => Ok(1.0),
    }
}

/// Advances `rho` by one CFL-limited upwind step with the velocity of `eval`.
fn advance(rho: &GridDensity, eval: &Evaluation, cfg: &FlowConfig, t: f64, step: usize) -> Result<(GridDensity, LogEntry)> {
    let dt_max = cfg.dt_max.unwrap_or_else(|| transport::default_dt_max(rho.grid()));
    let dt = transport::cfl_dt(&eval.velocity, cfg.safety, dt_max)?;
    if dt < MIN_DT {
        return Err(Error::StalledStep { dt });
    }
    let mut next = transport::step_upwind(rho, &eval.velocity, dt)?;
    let mut projection = None;
    if let Some(cap) = cfg.rho_max {
        if next.max_value() > cap {
            let clamped = GridDensity::new(*rho.grid(), next.values().iter().map(|r| r.clamp(0.0, cap)).collect())?;
            let mass_before = clamped.mass();
            next = clamped.normalize()?;
            projection = Some(Projection { mass_before, mass_after: next.mass() });
        }
    }
    let entry = LogEntry {
        step,
        t: t + dt,
        dt,
        objective: f64::NAN,
        mass: next.mass(),
        max_v: eval.velocity.max_speed(),
        min_rho: next.min_value(),
        max_rho: next.max_value(),
        projection,
    };
    Ok((next, entry))
}

/// One gradient-flow step from a normalized density.
pub fn step(rho: &GridDensity, cfg: &FlowConfig) -> Result<(GridDensity, LogEntry)> {
    cfg.validate()?;
    let sign = resolve_sign(rho, cfg)?;
    let eval = evaluate(rho, cfg, sign)?;
    let (next, mut entry) = advance(rho, &eval, cfg, 0.0, 1)?;
    entry.objective = evaluate(&next, cfg, sign)?.value;
    Ok((next, entry))
}

/// Runs the flow until `max_steps` or the stop tolerance.
pub fn run_gradient_flow(rho0: &GridDensity, cfg: &FlowConfig) -> Result<(GridDensity, RunLog)> {
    run_gradient_flow_with(rho0, cfg, |_, _| Ok(()))
}

/// As [`run_gradient_flow`], calling `observer(step, rho)` after every step.
pub fn run_gradient_flow_with(
    rho0: &GridDensity,
    cfg: &FlowConfig,
    mut observer: impl FnMut(usize, &GridDensity) -> Result<()>,
) -> Result<(GridDensity, RunLog)> {
    cfg.validate()?;
    if (rho0.mass() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("initial density has mass {}, expected 1", rho0.mass())));
    }
    let sign = if cfg.max_steps == 0 { cfg.sign.unwrap_or(1.0) } else { resolve_sign(rho0, cfg)? };
    let mut eval = evaluate(rho0, cfg, sign)?;
    let mut log = RunLog { sign, initial_objective: eval.value, entries: Vec::with_capacity(cfg.max_steps) };
    let mut rho = rho0.clone();
    let mut t = 0.0;
    for k in 1..=cfg.max_steps {
        let (next, mut entry) = advance(&rho, &eval, cfg, t, k)?;
        let next_eval = evaluate(&next, cfg, sign)?;
        entry.objective = next_eval.value;
        let change = (next_eval.value - eval.value).abs();
        let stop = cfg.stop_tol > 0.0 && change <= cfg.stop_tol * eval.value.abs();
        t = entry.t;
        log.entries.push(entry);
        rho = next;
        eval = next_eval;
        observer(k, &rho)?;
        if stop {
            break;
        }
    }
    Ok((rho, log))
}
