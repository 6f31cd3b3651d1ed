//! Flat sectioned `key = value` configuration files.
//!
//! ```text
//! # comment
//! [grid]
//! nx = 64
//! ny = 64
//! ```
//!
//! Sections and keys outside the known schema are rejected, values are
//! validated when read, and every error names the offending `[section].key`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::elasticity::{BodyLoad, BoundaryCondition, EdgeRange, MaterialLaw, Side};
use crate::flows::{Potential, VectorFieldSpec};
use crate::measures::{GaussianMixture, GridDensity, GridSpec};
use crate::optimizer::{FlowConfig, Objective};
use crate::sensitivities::LinearFunctional;
use crate::{Mat2, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key [{section}].{key}")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: duplicate key [{section}].{key}")]
    DuplicateKey { line: usize, section: String, key: String },
    #[error("missing required key [{section}].{key}")]
    Missing { section: String, key: String },
    #[error("invalid value for [{section}].{key}: {message}")]
    Invalid { section: String, key: String, message: String },
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["nx", "ny", "x0", "y0", "lx", "ly", "init", "floor"]),
    ("objective", &["kind", "center_x", "center_y", "value", "ax", "ay", "c"]),
    ("field", &["preset"]),
    (
        "flow",
        &["safety", "max_steps", "stop_tol", "rho_max", "beta", "m_total", "seed", "dt_max", "sign", "t_final"],
    ),
    (
        "elasticity",
        &[
            "mu",
            "lambda",
            "delta",
            "b_min",
            "p",
            "clamp",
            "traction_side",
            "traction_from",
            "traction_to",
            "traction_x",
            "traction_y",
            "body_x",
            "body_y",
        ],
    ),
    ("output", &["dir", "snapshot_every"]),
];

/// Parsed configuration: raw strings per section, typed on access.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

type CResult<T> = std::result::Result<T, ConfigError>;

impl Config {
    pub fn load(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CResult<Self> {
        let mut cfg = Config::default();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, message: format!("malformed section header `{content}`") })?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::UnknownSection { line, name: name.to_string() });
                }
                cfg.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected key = value, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            let section = current
                .clone()
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("key `{key}` outside any section") })?;
            let known = SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(ConfigError::UnknownKey { line, section, key: key.to_string() });
            }
            if value.is_empty() {
                return Err(ConfigError::Syntax { line, message: format!("empty value for [{section}].{key}") });
            }
            let entries = cfg.sections.entry(section.clone()).or_default();
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey { line, section, key: key.to_string() });
            }
        }
        Ok(cfg)
    }

    /// Sets or overrides a value, with the same schema checks as parsing.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> CResult<()> {
        let known = SCHEMA
            .iter()
            .find(|(s, _)| *s == section)
            .ok_or_else(|| ConfigError::UnknownSection { line: 0, name: section.to_string() })?
            .1;
        if !known.contains(&key) {
            return Err(ConfigError::UnknownKey { line: 0, section: section.to_string(), key: key.to_string() });
        }
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn invalid(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { section: section.to_string(), key: key.to_string(), message: message.into() }
    }

    pub fn require_str(&self, section: &str, key: &str) -> CResult<&str> {
        self.raw(section, key)
            .ok_or_else(|| ConfigError::Missing { section: section.to_string(), key: key.to_string() })
    }

    pub fn f64_opt(&self, section: &str, key: &str) -> CResult<Option<f64>> {
        self.raw(section, key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Self::invalid(section, key, format!("`{v}` is not a finite number")))
            })
            .transpose()
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> CResult<f64> {
        Ok(self.f64_opt(section, key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> CResult<f64> {
        self.f64_opt(section, key)?
            .ok_or_else(|| ConfigError::Missing { section: section.to_string(), key: key.to_string() })
    }

    pub fn usize_opt(&self, section: &str, key: &str) -> CResult<Option<usize>> {
        self.raw(section, key)
            .map(|v| v.parse::<usize>().map_err(|_| Self::invalid(section, key, format!("`{v}` is not a nonnegative integer"))))
            .transpose()
    }

    pub fn require_usize(&self, section: &str, key: &str) -> CResult<usize> {
        self.usize_opt(section, key)?
            .ok_or_else(|| ConfigError::Missing { section: section.to_string(), key: key.to_string() })
    }

    /// Positive real with a default.
    fn positive_or(&self, section: &str, key: &str, default: f64) -> CResult<f64> {
        let v = self.f64_or(section, key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Self::invalid(section, key, format!("must be positive, got {v}")))
        }
    }

    pub fn seed(&self) -> CResult<u64> {
        self.raw("flow", "seed")
            .map(|v| v.parse::<u64>().map_err(|_| Self::invalid("flow", "seed", format!("`{v}` is not a 64-bit unsigned integer"))))
            .transpose()
            .map(|s| s.unwrap_or(0))
    }

    /// `[grid]`: `nx` and `ny` are required; the box defaults to the unit
    /// square.
    pub fn grid(&self) -> CResult<GridSpec> {
        let nx = self.require_usize("grid", "nx")?;
        let ny = self.require_usize("grid", "ny")?;
        for (k, n) in [("nx", nx), ("ny", ny)] {
            if n < 2 {
                return Err(Self::invalid("grid", k, format!("need at least 2 cells, got {n}")));
            }
        }
        let x0 = self.f64_or("grid", "x0", 0.0)?;
        let y0 = self.f64_or("grid", "y0", 0.0)?;
        let lx = self.positive_or("grid", "lx", 1.0)?;
        let ly = self.positive_or("grid", "ly", 1.0)?;
        GridSpec::new(nx, ny, x0, y0, lx, ly).map_err(|e| Self::invalid("grid", "nx", e.to_string()))
    }

    /// Initial density from `[grid].init`: `uniform` (default) or
    /// `gaussian(cx,cy,sigma)`, plus an optional constant `floor`; the result
    /// is normalized to unit mass.
    pub fn initial_density(&self) -> CResult<GridDensity> {
        let grid = self.grid()?;
        let floor = self.f64_or("grid", "floor", 0.0)?;
        if floor < 0.0 {
            return Err(Self::invalid("grid", "floor", "must be nonnegative"));
        }
        let init = self.raw("grid", "init").unwrap_or("uniform");
        let (name, args) = split_call(init).map_err(|m| Self::invalid("grid", "init", m))?;
        let mixture = match (name, args.len()) {
            ("uniform", 0) => GaussianMixture { components: vec![], floor: 1.0 + floor },
            ("gaussian", 3) if args[2] > 0.0 => {
                GaussianMixture { components: vec![(Point::new(args[0], args[1]), args[2], 1.0)], floor }
            }
            _ => {
                return Err(Self::invalid(
                    "grid",
                    "init",
                    format!("expected `uniform` or `gaussian(cx,cy,sigma)` with sigma > 0, got `{init}`"),
                ))
            }
        };
        use crate::measures::DensityField;
        GridDensity::from_fn(grid, |x| mixture.density_at(x))
            .and_then(|d| d.normalize())
            .map_err(|e| Self::invalid("grid", "init", e.to_string()))
    }

    /// Velocity preset from `[field].preset`: `translate[(vx,vy)]`,
    /// `dilate[(rate)]`, `rotate`, `gaussian-potential(cx,cy,s,amp)` or
    /// `hole(x0,y0,eps)`.
    pub fn field(&self) -> CResult<VectorFieldSpec> {
        let preset = self.require_str("field", "preset")?;
        let bad = |m: String| Self::invalid("field", "preset", m);
        let (name, a) = split_call(preset).map_err(bad)?;
        let spec = match (name, a.len()) {
            ("translate", 0) => VectorFieldSpec::Constant(Point::new(1.0, 0.0)),
            ("translate", 2) => VectorFieldSpec::Constant(Point::new(a[0], a[1])),
            ("dilate", 0) => VectorFieldSpec::Linear(Mat2::identity()),
            ("dilate", 1) => VectorFieldSpec::Linear(Mat2::identity() * a[0]),
            ("rotate", 0) => VectorFieldSpec::Rotation,
            ("gaussian-potential", 4) if a[2] > 0.0 => VectorFieldSpec::gradient(Potential::Gaussian {
                center: Point::new(a[0], a[1]),
                width: a[2],
                amp: a[3],
            })
            .map_err(|e| bad(e.to_string()))?,
            ("hole", 3) => VectorFieldSpec::hole(Point::new(a[0], a[1]), a[2]).map_err(|e| bad(e.to_string()))?,
            _ => return Err(bad(format!("unknown preset or wrong argument count: `{preset}`"))),
        };
        Ok(spec)
    }

    /// `[elasticity]` material law; unset keys take the library defaults.
    pub fn material_law(&self) -> CResult<MaterialLaw> {
        let d = MaterialLaw::default();
        let p = self.f64_or("elasticity", "p", d.p)?;
        if p < 1.0 {
            return Err(Self::invalid("elasticity", "p", format!("must be >= 1, got {p}")));
        }
        Ok(MaterialLaw {
            mu: self.positive_or("elasticity", "mu", d.mu)?,
            lambda: self.positive_or("elasticity", "lambda", d.lambda)?,
            delta: self.positive_or("elasticity", "delta", d.delta)?,
            b_min: self.positive_or("elasticity", "b_min", d.b_min)?,
            p,
            budget: self.positive_or("flow", "m_total", d.budget)?,
        })
    }

    /// `[elasticity]` boundary data. Defaults: left side clamped, traction
    /// `(0, -1)` on the middle fifth of the right side.
    pub fn boundary_condition(&self) -> CResult<BoundaryCondition> {
        let grid = self.grid()?;
        let parse_side = |key: &str, s: &str| -> CResult<Side> {
            match s.trim() {
                "left" => Ok(Side::Left),
                "right" => Ok(Side::Right),
                "bottom" => Ok(Side::Bottom),
                "top" => Ok(Side::Top),
                other => Err(Self::invalid("elasticity", key, format!("unknown side `{other}`"))),
            }
        };
        let clamp = self.raw("elasticity", "clamp").unwrap_or("left");
        let dirichlet = if clamp == "none" {
            Vec::new()
        } else {
            clamp.split(',').map(|s| parse_side("clamp", s).map(EdgeRange::full)).collect::<CResult<Vec<_>>>()?
        };
        let side = parse_side("traction_side", self.raw("elasticity", "traction_side").unwrap_or("right"))?;
        let (lo, len) = match side {
            Side::Left | Side::Right => (grid.y0, grid.ly),
            Side::Bottom | Side::Top => (grid.x0, grid.lx),
        };
        let from = self.f64_or("elasticity", "traction_from", lo + 0.4 * len)?;
        let to = self.f64_or("elasticity", "traction_to", lo + 0.6 * len)?;
        if !(from < to) {
            return Err(Self::invalid("elasticity", "traction_to", format!("range [{from}, {to}] is empty")));
        }
        let g = Point::new(self.f64_or("elasticity", "traction_x", 0.0)?, self.f64_or("elasticity", "traction_y", -1.0)?);
        let body = Point::new(self.f64_or("elasticity", "body_x", 0.0)?, self.f64_or("elasticity", "body_y", 0.0)?);
        let bc = BoundaryCondition {
            dirichlet,
            traction: vec![(EdgeRange { side, from, to }, g)],
            body: if body == Point::zeros() { BodyLoad::Zero } else { BodyLoad::Constant(body) },
        };
        bc.validate().map_err(|e| Self::invalid("elasticity", "traction_side", e.to_string()))?;
        Ok(bc)
    }

    /// `[objective]`: `kind` is `quadratic` (`center_x`, `center_y`),
    /// `constant` (`value`), `linear` (`ax`, `ay`, `c`) or `compliance`.
    pub fn objective(&self) -> CResult<Objective> {
        let kind = self.require_str("objective", "kind")?;
        Ok(match kind {
            "quadratic" => Objective::Quadratic {
                center: Point::new(self.f64_or("objective", "center_x", 0.0)?, self.f64_or("objective", "center_y", 0.0)?),
            },
            "constant" => Objective::Constant(self.f64_or("objective", "value", 0.0)?),
            "linear" => Objective::Linear(LinearFunctional::Affine {
                a: Point::new(self.f64_or("objective", "ax", 1.0)?, self.f64_or("objective", "ay", 0.0)?),
                c: self.f64_or("objective", "c", 0.0)?,
            }),
            "compliance" => Objective::Compliance { bc: self.boundary_condition()?, law: self.material_law()? },
            other => return Err(Self::invalid("objective", "kind", format!("unknown objective `{other}`"))),
        })
    }

    /// `[flow].safety`, default 0.5.
    pub fn flow_safety(&self) -> CResult<f64> {
        let safety = self.f64_or("flow", "safety", 0.5)?;
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(Self::invalid("flow", "safety", format!("must lie in (0, 1], got {safety}")));
        }
        Ok(safety)
    }

    /// `[flow]` together with the objective.
    pub fn flow(&self) -> CResult<FlowConfig> {
        let mut cfg = FlowConfig::new(self.objective()?);
        cfg.safety = self.flow_safety()?;
        cfg.max_steps = self.usize_opt("flow", "max_steps")?.unwrap_or(cfg.max_steps);
        cfg.stop_tol = self.f64_or("flow", "stop_tol", 0.0)?;
        if cfg.stop_tol < 0.0 {
            return Err(Self::invalid("flow", "stop_tol", "must be nonnegative"));
        }
        cfg.rho_max = self.f64_opt("flow", "rho_max")?;
        if cfg.rho_max.is_some_and(|c| c <= 0.0) {
            return Err(Self::invalid("flow", "rho_max", "must be positive"));
        }
        cfg.beta = self.f64_or("flow", "beta", 0.0)?;
        if cfg.beta < 0.0 {
            return Err(Self::invalid("flow", "beta", "must be nonnegative"));
        }
        cfg.m_total = self.positive_or("flow", "m_total", 1.0)?;
        cfg.seed = self.seed()?;
        cfg.dt_max = self.f64_opt("flow", "dt_max")?;
        if cfg.dt_max.is_some_and(|d| d <= 0.0) {
            return Err(Self::invalid("flow", "dt_max", "must be positive"));
        }
        cfg.sign = self.f64_opt("flow", "sign")?;
        if cfg.sign.is_some_and(|s| s != 1.0 && s != -1.0) {
            return Err(Self::invalid("flow", "sign", "must be 1 or -1"));
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> &str {
        self.raw("output", "dir").unwrap_or("out")
    }

    pub fn snapshot_every(&self) -> CResult<usize> {
        let k = self.usize_opt("output", "snapshot_every")?.unwrap_or(10);
        if k == 0 {
            return Err(Self::invalid("output", "snapshot_every", "must be at least 1"));
        }
        Ok(k)
    }
}

/// Splits `name(a,b,c)` into the name and numeric arguments; a bare name
/// has no arguments.
fn split_call(s: &str) -> std::result::Result<(&str, Vec<f64>), String> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s, Vec::new()));
    };
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| format!("missing `)` in `{s}`"))?;
    let args = inner
        .split(',')
        .map(|a| a.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("bad argument `{}` in `{s}`", a.trim())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((s[..open].trim(), args))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# optimizer run
[grid]
nx = 16   # cells
ny = 8
lx = 2

[objective]
kind = quadratic
center_x = 0.5

[flow]
max_steps = 3
seed = 9
";

    #[test]
    fn parses_sample() {
        let c = Config::parse(SAMPLE).unwrap();
        let g = c.grid().unwrap();
        assert_eq!((g.nx, g.ny, g.lx, g.ly), (16, 8, 2.0, 1.0));
        let f = c.flow().unwrap();
        assert_eq!(f.max_steps, 3);
        assert_eq!(f.seed, 9);
        assert!(matches!(f.objective, Objective::Quadratic { center } if center == Point::new(0.5, 0.0)));
        assert_eq!(c.output_dir(), "out");
        assert!((c.initial_density().unwrap().mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::parse("[grid]\nny = 4\n").unwrap().grid().unwrap_err();
        assert_eq!(e, ConfigError::Missing { section: "grid".into(), key: "nx".into() });
        assert!(e.to_string().contains("[grid].nx"));
        let e = Config::parse("[grid]\nnz = 4\n").unwrap_err();
        assert!(e.to_string().contains("[grid].nz"));
        assert!(matches!(Config::parse("[mesh]\n"), Err(ConfigError::UnknownSection { .. })));
        assert!(matches!(Config::parse("nx = 3\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(Config::parse("[grid]\nnx = 3\nnx = 4\n"), Err(ConfigError::DuplicateKey { .. })));
        let e = Config::parse("[flow]\nsafety = 2\n[objective]\nkind = constant\n").unwrap().flow().unwrap_err();
        assert!(e.to_string().contains("[flow].safety"));
        let e = Config::parse("[grid]\nnx = x\n").unwrap().grid().unwrap_err();
        assert!(e.to_string().contains("[grid].nx"));
    }

    #[test]
    fn field_presets() {
        let field = |p: &str| Config::parse(&format!("[field]\npreset = {p}\n")).unwrap().field();
        assert_eq!(field("translate(0.5, -1)").unwrap(), VectorFieldSpec::Constant(Point::new(0.5, -1.0)));
        assert_eq!(field("rotate").unwrap(), VectorFieldSpec::Rotation);
        assert_eq!(field("dilate(2)").unwrap(), VectorFieldSpec::Linear(Mat2::identity() * 2.0));
        assert!(matches!(field("gaussian-potential(0.5,0.5,0.1,0.01)").unwrap(), VectorFieldSpec::Gradient(_)));
        assert!(matches!(field("hole(0.5,0.5,0.1)").unwrap(), VectorFieldSpec::Hole(_)));
        assert!(field("hole(0.5,0.5)").is_err());
        assert!(field("swirl").is_err());
        assert!(field("hole(0.5,0.5,-1)").is_err());
    }

    #[test]
    fn compliance_defaults() {
        let c = Config::parse("[grid]\nnx = 8\nny = 8\n[objective]\nkind = compliance\n[flow]\nm_total = 2\n").unwrap();
        let Objective::Compliance { bc, law } = c.objective().unwrap() else { panic!() };
        assert_eq!(law.budget, 2.0);
        assert_eq!(bc.dirichlet, vec![EdgeRange::full(Side::Left)]);
        assert_eq!(bc.traction[0].0, EdgeRange { side: Side::Right, from: 0.4, to: 0.6 });
        let c = Config::parse("[grid]\nnx = 8\nny = 8\n[elasticity]\nclamp = right\n").unwrap();
        assert!(c.boundary_condition().is_err());
    }
}
