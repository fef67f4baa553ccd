//! System description files.
//!
//! ```toml
//! n = 2
//! n_w = 1
//! n_u = 1
//! n_z = 1
//! box = [0.0, 1.0]
//! h = 0.5
//! delay = "0.5*sin(r)"
//! lambda0 = 10.0              # or a list of [[kernel]] terms
//! history = ["-1", "2"]       # optional, expressions in t
//! controller = "ctrl.toml"    # optional, relative to this file
//!
//! [matrices.A]                # keys are powers of rho
//! 0 = [[2.0, -0.5], [-1.0, -2.0]]
//! 1 = [[-1.0, -0.5], [0.0, 0.1]]
//! ```
//!
//! Omitted matrices are zero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::{Expr, Symbol};
use crate::model::{validate, DelayLaw, InitialHistory, JumpKernel, LpvDelaySystem, ValidationReport};
use crate::polymat::{matrix_from_rows, Monomial, ParamBox, PolyMatrix};
use crate::synthesis::Controller;

/// One term `coeff * theta^theta * rho^rho` of the jump kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    #[serde(default)]
    pub theta: u32,
    #[serde(default)]
    pub rho: u32,
    pub coeff: f64,
}

/// Raw file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionFile {
    pub n: usize,
    pub n_w: usize,
    #[serde(default)]
    pub n_u: usize,
    pub n_z: usize,
    #[serde(rename = "box")]
    pub param_box: [f64; 2],
    pub h: f64,
    /// Delay law in `r`; defaults to the constant `h`.
    #[serde(default)]
    pub delay: Option<String>,
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub kernel: Option<Vec<KernelTerm>>,
    #[serde(default)]
    pub history: Option<Vec<String>>,
    #[serde(default)]
    pub controller: Option<PathBuf>,
    #[serde(default)]
    pub matrices: BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>,
}

/// Validated model assembled from a description file.
#[derive(Debug, Clone)]
pub struct Description {
    pub system: LpvDelaySystem,
    pub kernel: JumpKernel,
    pub delay: DelayLaw,
    /// The file gave a delay law; otherwise the delay is the constant `h`.
    pub explicit_delay: bool,
    pub history: Option<InitialHistory>,
    /// Resolved path of the referenced controller file.
    pub controller: Option<PathBuf>,
    pub report: ValidationReport,
}

impl Description {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("description", format!("cannot read {}: {e}", path.display())))?;
        let mut d = Self::parse(&text)?;
        if let Some(c) = &d.controller {
            if c.is_relative() {
                d.controller = Some(path.parent().unwrap_or(Path::new(".")).join(c));
            }
        }
        Ok(d)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: DescriptionFile = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        file.build()
    }

    pub fn load_controller(&self) -> Result<Option<Controller>> {
        self.controller.as_deref().map(read_controller).transpose()
    }

    /// Same description with a constant kernel `lambda0`.
    pub fn with_lambda0(&self, lambda0: f64) -> Result<Self> {
        let kernel = JumpKernel::constant(lambda0, self.system.param_box)?;
        let report = validate(&self.system, &kernel, &self.delay)?;
        Ok(Description { kernel, report, ..self.clone() })
    }

    /// Same description with delay bound `h`. A default delay follows `h`; an explicit
    /// law must still fit under the new bound.
    pub fn with_h(&self, h: f64) -> Result<Self> {
        let mut system = self.system.clone();
        system.h = h;
        let delay =
            if self.explicit_delay { DelayLaw::new(self.delay.expr().clone(), h)? } else { DelayLaw::constant(h, h) };
        let report = validate(&system, &self.kernel, &delay)?;
        Ok(Description { system, delay, report, ..self.clone() })
    }
}

pub fn read_controller(path: &Path) -> Result<Controller> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("controller", format!("cannot read {}: {e}", path.display())))?;
    Controller::from_text(&text)
}

const MATRIX_NAMES: [&str; 8] = ["A", "Ad", "B", "E", "C", "Cd", "D", "F"];

impl DescriptionFile {
    pub fn build(&self) -> Result<Description> {
        let bx = ParamBox::new(self.param_box[0], self.param_box[1])?;
        let mut sys = LpvDelaySystem::zeros(self.n, self.n_w, self.n_u, self.n_z, bx, self.h);
        for (name, blocks) in &self.matrices {
            let shape = match name.as_str() {
                "A" | "Ad" => (self.n, self.n),
                "B" => (self.n, self.n_u),
                "E" => (self.n, self.n_w),
                "C" | "Cd" => (self.n_z, self.n),
                "D" => (self.n_z, self.n_u),
                "F" => (self.n_z, self.n_w),
                other => {
                    return Err(invalid(
                        "matrices",
                        format!("unknown matrix `{other}`; expected one of {}", MATRIX_NAMES.join(", ")),
                    ))
                }
            };
            let pm = poly_from_blocks(name, blocks, shape)?;
            let slot = match name.as_str() {
                "A" => &mut sys.a,
                "Ad" => &mut sys.a_d,
                "B" => &mut sys.b,
                "E" => &mut sys.e,
                "C" => &mut sys.c,
                "Cd" => &mut sys.c_d,
                "D" => &mut sys.d,
                _ => &mut sys.f,
            };
            *slot = pm;
        }
        let kernel = match (&self.lambda0, &self.kernel) {
            (Some(l), None) => JumpKernel::constant(*l, bx)?,
            (None, Some(terms)) => {
                let mut pm = PolyMatrix::zeros(1, 1);
                for t in terms {
                    let term = PolyMatrix::monomial(Monomial::new(t.theta, t.rho), nalgebra::DMatrix::from_element(1, 1, t.coeff));
                    pm = pm.add(&term)?;
                }
                JumpKernel::new(pm, bx)?
            }
            (Some(_), Some(_)) => return Err(invalid("kernel", "give either lambda0 or kernel terms, not both")),
            (None, None) => return Err(invalid("kernel", "missing: give lambda0 or kernel terms")),
        };
        let delay = match &self.delay {
            Some(text) => DelayLaw::parse(text, self.h)?,
            None => DelayLaw::constant(self.h, self.h),
        };
        let history = match &self.history {
            Some(exprs) => {
                let exprs = exprs.iter().map(|e| e.parse()).collect::<Result<Vec<Expr>>>()?;
                if exprs.iter().any(|e| e.uses(Symbol::Rho)) {
                    return Err(invalid("history", "initial histories may depend on t only, not r"));
                }
                let phi = InitialHistory::Exprs(exprs);
                if phi.dim() != self.n {
                    return Err(invalid("history", format!("{} components for {} states", phi.dim(), self.n)));
                }
                phi.check_continuous(self.h)?;
                Some(phi)
            }
            None => None,
        };
        let report = validate(&sys, &kernel, &delay)?;
        Ok(Description { system: sys, kernel, delay, explicit_delay: self.delay.is_some(), history, controller: self.controller.clone(), report })
    }
}

fn poly_from_blocks(
    name: &str,
    blocks: &BTreeMap<String, Vec<Vec<f64>>>,
    (rows, cols): (usize, usize),
) -> Result<PolyMatrix> {
    let mut terms = Vec::new();
    for (key, data) in blocks {
        let deg: u32 = key
            .parse()
            .map_err(|_| invalid(name, format!("block key `{key}` is not a rho degree")))?;
        let m = matrix_from_rows(data, rows, cols).map_err(|e| invalid(name, e.to_string()))?;
        terms.push((Monomial::rho(deg), m));
    }
    Ok(PolyMatrix::from_terms(rows, cols, terms)?.pruned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymat::Point;

    const PLANT: &str = r#"
n = 2
n_w = 1
n_u = 1
n_z = 1
box = [0.0, 1.0]
h = 0.5
delay = "0.5*sin(r)"
lambda0 = 10.0
history = ["-1", "2"]

[matrices.A]
0 = [[2.0, -0.5], [-1.0, -2.0]]
1 = [[-1.0, -0.5], [0.0, 0.1]]

[matrices.B]
0 = [[1.0], [0.0]]
"#;

    #[test]
    fn parses_plant() {
        let d = Description::parse(PLANT).unwrap();
        let a = d.system.a.eval(&Point::rho(1.0)).unwrap();
        assert_eq!(a[(1, 1)], -1.9);
        assert!(d.system.e.is_zero());
        assert_eq!(d.kernel.constant_value(), Some(10.0));
        assert!((d.report.tau_max - 0.5 * 1f64.sin()).abs() < 1e-12);
        assert_eq!(d.history.unwrap().at(-0.3).unwrap()[1], 2.0);
    }

    #[test]
    fn rejects_bad_shape() {
        let bad = PLANT.replace("0 = [[1.0], [0.0]]", "0 = [[1.0, 0.0]]");
        assert!(matches!(Description::parse(&bad), Err(Error::Validation { .. })));
    }

    #[test]
    fn rejects_unknown_field_and_matrix() {
        assert!(matches!(Description::parse(&format!("{PLANT}\nfoo = 1\n")), Err(Error::Parse { .. })));
        let bad = PLANT.replace("[matrices.B]", "[matrices.G]");
        assert!(matches!(Description::parse(&bad), Err(Error::Validation { .. })));
    }

    #[test]
    fn delay_may_not_use_time() {
        let bad = PLANT.replace("0.5*sin(r)", "0.5*sin(t)");
        assert!(Description::parse(&bad).is_err());
        let long = PLANT.replace("0.5*sin(r)", "0.6");
        assert!(Description::parse(&long).is_err());
    }

    #[test]
    fn kernel_terms() {
        let text = PLANT.replace("lambda0 = 10.0", "kernel = [{ theta = 1, coeff = 2.0 }]");
        let d = Description::parse(&text).unwrap();
        assert!((d.kernel.intensity(0.3) - 1.0).abs() < 1e-15);
    }
}
