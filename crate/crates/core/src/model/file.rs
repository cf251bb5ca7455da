//! Problem files: a TOML document with `[domain]`, `[coefficients]`,
//! `[gain]`, `[far_field]`, `[jumps.N]`, `[solver]`, `[grid]`, `[window]`
//! and `[boundary]` sections. Expressions are quoted strings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Atom, CoefficientSet, DensitySpec, DomainBox, FaceRule, FarField, GainSpec, JumpComponent, ModelError, Orientation,
    ProblemSpec, WindowU,
};
use crate::exprs::{parse, parse_with, Expr, ParseError, Symbols};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemFileError {
    #[error("malformed problem file: {0}")]
    Toml(String),
    #[error("expression `{field}`: {source}")]
    Expr { field: String, source: ParseError },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsFile {
    #[serde(default = "zero")]
    pub alpha1: String,
    #[serde(default = "zero")]
    pub alpha2: String,
    #[serde(default = "zero")]
    pub beta1: String,
    #[serde(default = "zero")]
    pub beta2: String,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "zero")]
    pub r: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_cost: Option<String>,
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    pub g: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
}

/// `"gain"`, `"linear"`, or `{ dirichlet = "<expr>" }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FaceFile {
    Named(String),
    Dirichlet { dirichlet: String },
}

impl Default for FaceFile {
    fn default() -> Self {
        FaceFile::Named("gain".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldFile {
    #[serde(default)]
    pub x_lo: FaceFile,
    #[serde(default)]
    pub x_hi: FaceFile,
    #[serde(default)]
    pub y_lo: FaceFile,
    #[serde(default)]
    pub y_hi: FaceFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityFile {
    pub expr: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpFile {
    pub gamma1: String,
    #[serde(default = "zero")]
    pub gamma2: String,
    #[serde(default = "one")]
    pub mark_dim: usize,
    pub gamma_bar: String,
    #[serde(default)]
    pub compensate_small_jumps: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Atom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityFile>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowFile {
    pub t: [f64; 2],
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl From<WindowFile> for WindowU {
    fn from(w: WindowFile) -> WindowU {
        WindowU::new((w.t[0], w.t[1]), (w.x[0], w.x[1]), (w.y[0], w.y[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
}

/// The document as written, before expressions are parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub horizon: f64,
    #[serde(default = "default_orientation")]
    pub orientation: Orientation,
    pub domain: DomainBox,
    pub coefficients: CoefficientsFile,
    pub gain: GainFile,
    #[serde(default)]
    pub far_field: FarFieldFile,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub jumps: BTreeMap<String, JumpFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryFile>,
}

fn default_orientation() -> Orientation {
    Orientation::ContinuationAbove
}

/// A parsed problem file: the problem plus the optional run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedProblem {
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
    pub grid: Option<GridFile>,
    pub window: Option<WindowU>,
    pub x_range: Option<(f64, f64)>,
}

fn expr(field: &str, src: &str) -> Result<Expr, ProblemFileError> {
    parse(src).map_err(|source| ProblemFileError::Expr { field: field.into(), source })
}

fn mark_expr(field: &str, src: &str, dim: usize) -> Result<Expr, ProblemFileError> {
    parse_with(src, &Symbols::with_marks(dim)).map_err(|source| ProblemFileError::Expr { field: field.into(), source })
}

fn face(field: &str, f: &FaceFile) -> Result<FaceRule, ProblemFileError> {
    match f {
        FaceFile::Named(s) if s == "gain" => Ok(FaceRule::Gain),
        FaceFile::Named(s) if s == "linear" => Ok(FaceRule::Linear),
        FaceFile::Named(s) => Err(ProblemFileError::Invalid(format!(
            "far_field.{field} = \"{s}\": expected \"gain\", \"linear\" or {{ dirichlet = \"...\" }}"
        ))),
        FaceFile::Dirichlet { dirichlet } => Ok(FaceRule::Expression(expr(&format!("far_field.{field}"), dirichlet)?)),
    }
}

fn jump(key: &str, j: &JumpFile) -> Result<JumpComponent, ProblemFileError> {
    let d = j.mark_dim;
    if d == 0 {
        return Err(ProblemFileError::Invalid(format!("jumps.{key}.mark_dim must be positive")));
    }
    let field = |name: &str| format!("jumps.{key}.{name}");
    let g1 = mark_expr(&field("gamma1"), &j.gamma1, d)?;
    let g2 = mark_expr(&field("gamma2"), &j.gamma2, d)?;
    let gbar = mark_expr(&field("gamma_bar"), &j.gamma_bar, d)?;
    let component = match (&j.atoms, &j.density) {
        (Some(atoms), None) => {
            if atoms.is_empty() {
                return Err(ProblemFileError::Invalid(format!("jumps.{key}.atoms is empty")));
            }
            if let Some(a) = atoms.iter().find(|a| a.mark.len() != d) {
                return Err(ProblemFileError::Invalid(format!(
                    "jumps.{key}: atom mark {:?} does not have dimension {d}",
                    a.mark
                )));
            }
            if let Some(a) = atoms.iter().find(|a| !(a.weight > 0.0)) {
                return Err(ProblemFileError::Invalid(format!("jumps.{key}: atom weight {} is not positive", a.weight)));
            }
            JumpComponent::with_atoms(g1, g2, d, atoms.clone(), gbar)
        }
        (None, Some(dens)) => {
            if dens.lower.len() != d || dens.upper.len() != d {
                return Err(ProblemFileError::Invalid(format!("jumps.{key}.density bounds must have dimension {d}")));
            }
            let spec = DensitySpec {
                density: mark_expr(&field("density.expr"), &dens.expr, d)?,
                lower: dens.lower.clone(),
                upper: dens.upper.clone(),
                nodes: dens.nodes,
            };
            JumpComponent::with_density(g1, g2, spec, gbar)?
        }
        _ => return Err(ProblemFileError::Invalid(format!("jumps.{key} needs exactly one of `atoms` and `density`"))),
    };
    Ok(component.compensated(j.compensate_small_jumps))
}

impl ProblemFile {
    pub fn from_toml(src: &str) -> Result<ProblemFile, ProblemFileError> {
        toml::from_str(src).map_err(|e| ProblemFileError::Toml(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ProblemFileError> {
        toml::to_string(self).map_err(|e| ProblemFileError::Toml(e.to_string()))
    }

    pub fn load(&self) -> Result<LoadedProblem, ProblemFileError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ModelError::InvalidHorizon(self.horizon).into());
        }
        self.domain.check()?;
        let c = &self.coefficients;
        let coefficients = CoefficientSet {
            alpha1: expr("coefficients.alpha1", &c.alpha1)?,
            alpha2: expr("coefficients.alpha2", &c.alpha2)?,
            beta1: expr("coefficients.beta1", &c.beta1)?,
            beta2: expr("coefficients.beta2", &c.beta2)?,
            rho: c.rho,
            r: expr("coefficients.r", &c.r)?,
            running_cost: c.running_cost.as_deref().map(|s| expr("coefficients.running_cost", s)).transpose()?,
        };
        let gain = GainSpec {
            g: expr("gain.g", &self.gain.g)?,
            terminal_g: self.gain.terminal.as_deref().map(|s| expr("gain.terminal", s)).transpose()?,
        };
        let mut spec = ProblemSpec::new(coefficients, gain, self.domain, self.horizon);
        spec.orientation = self.orientation;
        let f = &self.far_field;
        spec.far_field = FarField {
            x_lo: face("x_lo", &f.x_lo)?,
            x_hi: face("x_hi", &f.x_hi)?,
            y_lo: face("y_lo", &f.y_lo)?,
            y_hi: face("y_hi", &f.y_hi)?,
        };
        let mut keys: Vec<(usize, &String)> = Vec::new();
        for k in self.jumps.keys() {
            let n = k.parse::<usize>().map_err(|_| ProblemFileError::Invalid(format!("jump table key `{k}` is not an index")))?;
            keys.push((n, k));
        }
        keys.sort();
        for (_, k) in keys {
            spec.jumps.push(jump(k, &self.jumps[k])?);
        }
        let solver = self.solver.clone().unwrap_or_default();
        solver.check().map_err(|e| ProblemFileError::Invalid(e.to_string()))?;
        Ok(LoadedProblem {
            spec,
            solver,
            grid: self.grid,
            window: self.window.map(WindowU::from),
            x_range: self.boundary.and_then(|b| b.x_range).map(|r| (r[0], r[1])),
        })
    }
}

/// Parses and loads a problem file in one step.
pub fn load_problem(src: &str) -> Result<LoadedProblem, ProblemFileError> {
    ProblemFile::from_toml(src)?.load()
}
