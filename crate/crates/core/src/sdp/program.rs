use nalgebra::DMatrix;

use super::affine::AffExpr;
use crate::error::{usage, Result};
use crate::polymat::{Monomial, ParamBox, PolyMatrix, Point, VarSet};

/// Strictness margin emulating `< 0` constraints.
pub const DEFAULT_STRICT_MARGIN: f64 = 1e-7;

/// Lower eigenvalue bound imposed on variables required to be positive definite.
pub const DEFAULT_PD_MARGIN: f64 = 1e-6;

/// Uniform points on `bx`, both endpoints included.
pub fn grid(bx: &ParamBox, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(usage(format!("grid needs at least 2 points, got {count}")));
    }
    Ok(crate::model::axis_points(bx, count))
}

/// Uniform axis over a parameter box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub param_box: ParamBox,
    pub count: usize,
}

impl Axis {
    pub fn new(param_box: ParamBox, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(usage(format!("grid needs at least 2 points, got {count}")));
        }
        Ok(Axis { param_box, count })
    }

    pub fn points(&self) -> Vec<f64> {
        crate::model::axis_points(&self.param_box, self.count)
    }

    /// Axis with `factor` times the density that keeps every original point.
    pub fn refined(&self, factor: usize) -> Axis {
        Axis { param_box: self.param_box, count: factor * (self.count - 1) + 1 }
    }
}

/// Evaluation grid of a constraint: Cartesian product of the axes it uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grid {
    pub theta: Option<Axis>,
    pub rho: Option<Axis>,
}

impl Grid {
    /// Single evaluation for constraints free of parameters.
    pub fn none() -> Self {
        Grid::default()
    }

    pub fn rho(param_box: ParamBox, count: usize) -> Result<Self> {
        Ok(Grid { theta: None, rho: Some(Axis::new(param_box, count)?) })
    }

    pub fn theta_rho(param_box: ParamBox, n_theta: usize, n_rho: usize) -> Result<Self> {
        Ok(Grid {
            theta: Some(Axis::new(param_box, n_theta)?),
            rho: Some(Axis::new(param_box, n_rho)?),
        })
    }

    pub fn covers(&self, vars: VarSet) -> bool {
        (!vars.rho || self.rho.is_some()) && (!vars.theta || self.theta.is_some())
    }

    pub fn len(&self) -> usize {
        self.theta.map_or(1, |a| a.count) * self.rho.map_or(1, |a| a.count)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points in rho-major order.
    pub fn points(&self) -> Vec<Point> {
        let rhos = self.rho.map(|a| a.points().into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let thetas =
            self.theta.map(|a| a.points().into_iter().map(Some).collect()).unwrap_or(vec![None]);
        let mut out = Vec::with_capacity(rhos.len() * thetas.len());
        for &rho in &rhos {
            for &theta in &thetas {
                out.push(Point { rho, theta });
            }
        }
        out
    }

    pub fn refined(&self, factor: usize) -> Grid {
        Grid { theta: self.theta.map(|a| a.refined(factor)), rho: self.rho.map(|a| a.refined(factor)) }
    }
}

/// Per-variable polynomial degrees of a matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degrees {
    pub theta: Option<u32>,
    pub rho: Option<u32>,
}

impl Degrees {
    pub const CONSTANT: Degrees = Degrees { theta: None, rho: None };

    pub fn rho(d: u32) -> Self {
        Degrees { theta: None, rho: Some(d) }
    }

    pub fn theta_rho(dt: u32, dr: u32) -> Self {
        Degrees { theta: Some(dt), rho: Some(dr) }
    }

    fn monomials(&self) -> Vec<Monomial> {
        let mut out = Vec::new();
        for r in 0..=self.rho.unwrap_or(0) {
            for t in 0..=self.theta.unwrap_or(0) {
                out.push(Monomial::new(t, r));
            }
        }
        out
    }

    fn vars(&self) -> VarSet {
        VarSet { rho: self.rho.is_some(), theta: self.theta.is_some() }
    }
}

/// Polynomial matrix of unknown coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MatVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    pub vars: VarSet,
    pub monomials: Vec<Monomial>,
    /// Index of the first scalar unknown in the decision vector.
    pub offset: usize,
}

impl MatVar {
    fn entries(&self) -> Vec<(usize, usize)> {
        if self.symmetric {
            (0..self.cols).flat_map(|j| (0..=j).map(move |i| (i, j))).collect()
        } else {
            (0..self.rows).flat_map(|i| (0..self.cols).map(move |j| (i, j))).collect()
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.monomials.len() * self.entries().len()
    }

    /// `(decision index, monomial, basis matrix)` for every scalar unknown.
    pub fn basis(&self) -> Vec<(usize, Monomial, DMatrix<f64>)> {
        let entries = self.entries();
        let mut out = Vec::with_capacity(self.n_scalars());
        let mut idx = self.offset;
        for &m in &self.monomials {
            for &(i, j) in &entries {
                let mut e = DMatrix::zeros(self.rows, self.cols);
                e[(i, j)] = 1.0;
                if self.symmetric {
                    e[(j, i)] = 1.0;
                }
                out.push((idx, m, e));
                idx += 1;
            }
        }
        out
    }

    /// Decision index of coefficient `(i, j)` of monomial `m`.
    pub fn index_of(&self, m: Monomial, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if self.symmetric && i > j { (j, i) } else { (i, j) };
        let entries = self.entries();
        let e = entries.iter().position(|&p| p == (i, j))?;
        let k = self.monomials.iter().position(|&x| x == m)?;
        Some(self.offset + k * entries.len() + e)
    }

    /// The variable as an affine expression in its own parameters.
    pub fn expr(&self) -> AffExpr {
        self.expr_with(|m| m)
    }

    /// Same coefficients evaluated at `theta` instead of `rho`, e.g. `P(theta)`.
    pub fn expr_at_theta(&self) -> Result<AffExpr> {
        if self.vars.theta {
            return Err(usage(format!("{} already depends on theta", self.name)));
        }
        Ok(self.expr_with(|m| Monomial::theta(m.rho)))
    }

    fn expr_with(&self, remap: impl Fn(Monomial) -> Monomial) -> AffExpr {
        let vars = if self.monomials.iter().any(|m| remap(*m) != *m) {
            VarSet { rho: false, theta: self.vars.rho }
        } else {
            self.vars
        };
        self.basis().into_iter().fold(AffExpr::zeros(self.rows, self.cols), |acc, (i, m, e)| {
            let pm = PolyMatrix::monomial(remap(m), e).with_vars(vars);
            acc.add(&AffExpr::term(i, pm)).expect("same shape")
        })
    }

    /// Concrete value for decision vector `x`.
    pub fn value(&self, x: &[f64]) -> PolyMatrix {
        let terms = self.basis().into_iter().map(|(i, m, e)| (m, e * x[i]));
        PolyMatrix::from_terms(self.rows, self.cols, terms).expect("basis shape").with_vars(self.vars)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVar {
    pub name: String,
    pub index: usize,
    pub lower: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// `expr >= margin * I`.
    Psd,
    /// `expr <= -margin * I`.
    Nsd,
}

#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub name: String,
    pub expr: AffExpr,
    pub sign: Sign,
    pub grid: Grid,
    pub margin: f64,
}

impl PsdConstraint {
    /// Largest eigenvalue of the violation matrix at `point`: `<= 0` means satisfied with margin.
    pub fn violation(&self, point: &Point, x: &[f64]) -> f64 {
        let v = self.expr.value(point, x);
        let n = v.nrows();
        let shifted = match self.sign {
            Sign::Psd => -v + DMatrix::identity(n, n) * self.margin,
            Sign::Nsd => v + DMatrix::identity(n, n) * self.margin,
        };
        max_eigenvalue(shifted)
    }

    /// Worst violation over a grid.
    pub fn worst_violation(&self, grid: &Grid, x: &[f64]) -> f64 {
        grid.points().iter().map(|p| self.violation(p, x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// `sum coeffs * x = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Finite semidefinite program over polynomial matrix variables.
#[derive(Debug, Clone, Default)]
pub struct LmiProgram {
    n_decision: usize,
    mat_vars: Vec<MatVar>,
    scalar_vars: Vec<ScalarVar>,
    constraints: Vec<PsdConstraint>,
    equalities: Vec<LinearEquality>,
    objective: Vec<(usize, f64)>,
}

impl LmiProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_decision(&self) -> usize {
        self.n_decision
    }

    pub fn mat_vars(&self) -> &[MatVar] {
        &self.mat_vars
    }

    pub fn scalar_vars(&self) -> &[ScalarVar] {
        &self.scalar_vars
    }

    pub fn constraints(&self) -> &[PsdConstraint] {
        &self.constraints
    }

    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }

    pub fn objective(&self) -> &[(usize, f64)] {
        &self.objective
    }

    fn check_name(&self, name: &str) -> Result<()> {
        if self.mat_vars.iter().any(|v| v.name == name) || self.scalar_vars.iter().any(|v| v.name == name)
        {
            return Err(usage(format!("duplicate variable name `{name}`")));
        }
        Ok(())
    }

    pub fn add_matrix_var(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        symmetric: bool,
        degrees: Degrees,
    ) -> Result<MatVar> {
        self.check_name(name)?;
        if symmetric && rows != cols {
            return Err(usage(format!("symmetric variable `{name}` must be square")));
        }
        let v = MatVar {
            name: name.to_string(),
            rows,
            cols,
            symmetric,
            vars: degrees.vars(),
            monomials: degrees.monomials(),
            offset: self.n_decision,
        };
        self.n_decision += v.n_scalars();
        self.mat_vars.push(v.clone());
        Ok(v)
    }

    pub fn add_scalar_var(&mut self, name: &str, lower: Option<f64>) -> Result<ScalarVar> {
        self.check_name(name)?;
        let v = ScalarVar { name: name.to_string(), index: self.n_decision, lower };
        self.n_decision += 1;
        self.scalar_vars.push(v.clone());
        Ok(v)
    }

    pub fn mat_var(&self, name: &str) -> Option<&MatVar> {
        self.mat_vars.iter().find(|v| v.name == name)
    }

    pub fn scalar_var(&self, name: &str) -> Option<&ScalarVar> {
        self.scalar_vars.iter().find(|v| v.name == name)
    }

    /// Adds `integral over theta of Z(theta, rho) = 0` as equalities on the coefficients,
    /// one per rho-monomial and upper-triangular entry. Returns the number added.
    pub fn add_integral_zero(&mut self, z: &MatVar, bx: &ParamBox) -> Result<usize> {
        if !z.vars.theta {
            return Err(usage(format!("`{}` does not depend on theta", z.name)));
        }
        let mut rho_monos: Vec<u32> = z.monomials.iter().map(|m| m.rho).collect();
        rho_monos.sort_unstable();
        rho_monos.dedup();
        let entries = z.entries();
        let mut added = 0;
        for &r in &rho_monos {
            for &(i, j) in &entries {
                let coeffs = z
                    .monomials
                    .iter()
                    .filter(|m| m.rho == r)
                    .map(|&m| (z.index_of(m, i, j).expect("own monomial"), bx.monomial_integral(m.theta)))
                    .collect();
                self.equalities.push(LinearEquality { coeffs, rhs: 0.0 });
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> Result<()> {
        if let Some((i, _)) = coeffs.iter().find(|(i, _)| *i >= self.n_decision) {
            return Err(usage(format!("equality references unknown coefficient {i}")));
        }
        self.equalities.push(LinearEquality { coeffs, rhs });
        Ok(())
    }

    /// Pins a scalar variable to `value`.
    pub fn fix_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        let idx = self
            .scalar_var(name)
            .ok_or_else(|| usage(format!("no scalar variable `{name}`")))?
            .index;
        self.add_equality(vec![(idx, 1.0)], value)
    }

    pub fn add_psd_on_grid(
        &mut self,
        name: &str,
        expr: AffExpr,
        sign: Sign,
        grid: Grid,
        margin: f64,
    ) -> Result<()> {
        if expr.rows() != expr.cols() || !expr.is_symmetric() {
            return Err(usage(format!("constraint `{name}` is not a symmetric block")));
        }
        if !grid.covers(expr.vars()) {
            return Err(usage(format!("grid of `{name}` does not cover its free parameters")));
        }
        if margin < 0.0 {
            return Err(usage("negative strictness margin"));
        }
        if let Some((i, _)) = expr.linear_terms().find(|(i, _)| *i >= self.n_decision) {
            return Err(usage(format!("constraint `{name}` references unknown coefficient {i}")));
        }
        self.constraints.push(PsdConstraint { name: name.to_string(), expr, sign, grid, margin });
        Ok(())
    }

    /// Sets the objective to minimize `sum c_i x_i`.
    pub fn minimize(&mut self, objective: Vec<(usize, f64)>) {
        self.objective = objective;
    }

    /// Convenience: minimize a single scalar variable.
    pub fn minimize_scalar(&mut self, v: &ScalarVar) {
        self.minimize(vec![(v.index, 1.0)]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = grid(&ParamBox::unit(), 50).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[49], 1.0);
        assert!((g[1] - 1.0 / 49.0).abs() < 1e-16);
        assert_eq!(grid(&ParamBox::unit(), 2).unwrap(), vec![0.0, 1.0]);
        let g = grid(&ParamBox::new(0.2, 0.8).unwrap(), 4).unwrap();
        for (a, b) in g.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(grid(&ParamBox::unit(), 1).is_err());
    }

    #[test]
    fn cartesian_grid_and_refinement() {
        let g = Grid::theta_rho(ParamBox::unit(), 3, 4).unwrap();
        assert_eq!(g.points().len(), 12);
        let r = g.refined(4);
        assert_eq!(r.theta.unwrap().count, 9);
        assert_eq!(r.rho.unwrap().count, 13);
        let fine: Vec<f64> = r.rho.unwrap().points();
        for p in g.rho.unwrap().points() {
            assert!(fine.iter().any(|&q| (q - p).abs() < 1e-15));
        }
    }

    #[test]
    fn integral_zero_hand_coefficients() {
        // Z scalar, degree 1 in each variable, on [0, 1]:
        // z00 + z10/2 = 0 and z01 + z11/2 = 0 with (theta-degree, rho-degree) indexing.
        let mut p = LmiProgram::new();
        let z = p.add_matrix_var("Z", 1, 1, true, Degrees::theta_rho(1, 1)).unwrap();
        let added = p.add_integral_zero(&z, &ParamBox::unit()).unwrap();
        assert_eq!(added, 2);
        let idx = |t, r| z.index_of(Monomial::new(t, r), 0, 0).unwrap();
        let mut eqs: Vec<Vec<(usize, f64)>> = p.equalities().iter().map(|e| e.coeffs.clone()).collect();
        for e in &mut eqs {
            e.sort_by_key(|c| c.0);
        }
        let mut want0 = vec![(idx(0, 0), 1.0), (idx(1, 0), 0.5)];
        let mut want1 = vec![(idx(0, 1), 1.0), (idx(1, 1), 0.5)];
        want0.sort_by_key(|c| c.0);
        want1.sort_by_key(|c| c.0);
        assert!(eqs.contains(&want0));
        assert!(eqs.contains(&want1));

        // Cross-check against the integration of the variable expression.
        let integ = z.expr().integrate_theta(&ParamBox::unit()).unwrap();
        let x = [0.3, -0.6, 1.1, 0.4];
        let val = integ.substitute(&x);
        let c0 = val.coefficient(Monomial::ONE).map_or(0.0, |c| c[(0, 0)]);
        let c1 = val.coefficient(Monomial::rho(1)).map_or(0.0, |c| c[(0, 0)]);
        let eval = |coeffs: &Vec<(usize, f64)>| coeffs.iter().map(|(i, a)| a * x[*i]).sum::<f64>();
        assert!((eval(&want0) - c0).abs() < 1e-15);
        assert!((eval(&want1) - c1).abs() < 1e-15);
    }

    #[test]
    fn integral_zero_count_matrix() {
        let mut p = LmiProgram::new();
        let z = p.add_matrix_var("Z", 2, 2, true, Degrees::theta_rho(1, 2)).unwrap();
        assert_eq!(p.add_integral_zero(&z, &ParamBox::unit()).unwrap(), 3 * 3);
        let q = p.add_matrix_var("Q", 2, 2, true, Degrees::rho(1)).unwrap();
        assert!(p.add_integral_zero(&q, &ParamBox::unit()).is_err());
    }

    #[test]
    fn theta_reindex_keeps_coefficients() {
        let mut p = LmiProgram::new();
        let v = p.add_matrix_var("P", 2, 2, true, Degrees::rho(1)).unwrap();
        let x: Vec<f64> = (0..v.n_scalars()).map(|k| k as f64 + 1.0).collect();
        let at_rho = v.expr().value(&Point::rho(0.3), &x);
        let at_theta = v.expr_at_theta().unwrap().value(&Point::theta_rho(0.3, 0.9), &x);
        assert_eq!(at_rho, at_theta);
        assert!(v.value(&x).is_symmetric());
    }

    #[test]
    fn uncovered_parameters_rejected() {
        let mut p = LmiProgram::new();
        let v = p.add_matrix_var("P", 1, 1, true, Degrees::rho(1)).unwrap();
        assert!(p.add_psd_on_grid("P", v.expr(), Sign::Psd, Grid::none(), 0.0).is_err());
        let full = p.add_matrix_var("X", 2, 2, false, Degrees::CONSTANT).unwrap();
        assert!(p.add_psd_on_grid("X", full.expr(), Sign::Psd, Grid::none(), 0.0).is_err());
    }
}
