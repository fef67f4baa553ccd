//! Matrices whose entries are polynomials in the scheduling parameter `rho`
//! and the post-jump parameter `theta`.
//!
//! Polynomials are stored in the monomial basis as a sparse map from exponent
//! pairs to dense coefficient matrices. All arithmetic is exact in the sense
//! that it only combines coefficients; no approximation happens until a
//! polynomial is evaluated at a point.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Largest exponent the builders accept per variable unless configured otherwise.
pub const DEFAULT_MAX_DEGREE: u32 = 4;

/// Compact interval of admissible parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ParamBox {
    lo: f64,
    hi: f64,
}

impl ParamBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(usage(format!("parameter box requires finite lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Exact integral of `theta^k` over the box.
    pub fn monomial_integral(&self, k: u32) -> f64 {
        let p = k as i32 + 1;
        (self.hi.powi(p) - self.lo.powi(p)) / p as f64
    }
}

impl TryFrom<[f64; 2]> for ParamBox {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        ParamBox::new(v[0], v[1])
    }
}

impl From<ParamBox> for [f64; 2] {
    fn from(b: ParamBox) -> Self {
        [b.lo, b.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Rho,
    Theta,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Rho => f.write_str("rho"),
            Var::Theta => f.write_str("theta"),
        }
    }
}

/// Subset of `{rho, theta}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VarSet {
    pub rho: bool,
    pub theta: bool,
}

impl VarSet {
    pub const NONE: VarSet = VarSet { rho: false, theta: false };
    pub const RHO: VarSet = VarSet { rho: true, theta: false };
    pub const THETA: VarSet = VarSet { rho: false, theta: true };
    pub const BOTH: VarSet = VarSet { rho: true, theta: true };

    pub fn contains(&self, v: Var) -> bool {
        match v {
            Var::Rho => self.rho,
            Var::Theta => self.theta,
        }
    }

    pub fn union(self, other: VarSet) -> VarSet {
        VarSet { rho: self.rho || other.rho, theta: self.theta || other.theta }
    }

    pub fn without(self, v: Var) -> VarSet {
        match v {
            Var::Rho => VarSet { rho: false, ..self },
            Var::Theta => VarSet { theta: false, ..self },
        }
    }
}

/// Exponent pair `theta^theta * rho^rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Monomial {
    pub theta: u32,
    pub rho: u32,
}

impl Monomial {
    pub const ONE: Monomial = Monomial { theta: 0, rho: 0 };

    pub fn rho(k: u32) -> Self {
        Self { theta: 0, rho: k }
    }

    pub fn theta(k: u32) -> Self {
        Self { theta: k, rho: 0 }
    }

    pub fn new(theta: u32, rho: u32) -> Self {
        Self { theta, rho }
    }

    pub fn mul(self, other: Monomial) -> Monomial {
        Monomial { theta: self.theta + other.theta, rho: self.rho + other.rho }
    }

    fn vars(self) -> VarSet {
        VarSet { rho: self.rho > 0, theta: self.theta > 0 }
    }
}

/// Assignment of values to the polynomial variables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub rho: Option<f64>,
    pub theta: Option<f64>,
}

impl Point {
    pub fn rho(rho: f64) -> Self {
        Self { rho: Some(rho), theta: None }
    }

    pub fn theta_rho(theta: f64, rho: f64) -> Self {
        Self { rho: Some(rho), theta: Some(theta) }
    }

    fn covers(&self, vars: VarSet) -> Result<()> {
        if vars.rho && self.rho.is_none() {
            return Err(usage("evaluation point does not assign rho"));
        }
        if vars.theta && self.theta.is_none() {
            return Err(usage("evaluation point does not assign theta"));
        }
        Ok(())
    }

    /// Value of `m` at this point; unassigned variables must carry a zero exponent.
    pub fn monomial_value(&self, m: Monomial) -> f64 {
        let mut v = 1.0;
        if m.rho > 0 {
            v *= self.rho.unwrap_or(0.0).powi(m.rho as i32);
        }
        if m.theta > 0 {
            v *= self.theta.unwrap_or(0.0).powi(m.theta as i32);
        }
        v
    }
}

/// Matrix of multivariate polynomials in `rho` and `theta`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyMatrixRepr", into = "PolyMatrixRepr")]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    vars: VarSet,
    terms: BTreeMap<Monomial, DMatrix<f64>>,
}

impl fmt::Debug for PolyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolyMatrix {}x{} {{", self.rows, self.cols)?;
        for (m, c) in &self.terms {
            write!(f, " theta^{} rho^{}: {:?};", m.theta, m.rho, c.as_slice())?;
        }
        write!(f, " }}")
    }
}

impl PolyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, vars: VarSet::NONE, terms: BTreeMap::new() }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let mut p = Self::zeros(m.nrows(), m.ncols());
        p.push_term(Monomial::ONE, m);
        p
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// 1x1 constant.
    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    /// Single-term polynomial `coeff * monomial`.
    pub fn monomial(m: Monomial, coeff: DMatrix<f64>) -> Self {
        let mut p = Self::zeros(coeff.nrows(), coeff.ncols());
        p.push_term(m, coeff);
        p
    }

    /// Builds from explicit terms; repeated monomials are summed.
    pub fn from_terms(
        rows: usize,
        cols: usize,
        terms: impl IntoIterator<Item = (Monomial, DMatrix<f64>)>,
    ) -> Result<Self> {
        let mut p = Self::zeros(rows, cols);
        for (m, c) in terms {
            if c.shape() != (rows, cols) {
                return Err(usage(format!(
                    "coefficient of shape {:?} in a {rows}x{cols} polynomial matrix",
                    c.shape()
                )));
            }
            p.push_term(m, c);
        }
        Ok(p)
    }

    /// Scalar polynomial in `rho` from ascending coefficients.
    pub fn scalar_rho(coeffs: &[f64]) -> Self {
        let mut p = Self::zeros(1, 1);
        for (k, &c) in coeffs.iter().enumerate() {
            p.push_term(Monomial::rho(k as u32), DMatrix::from_element(1, 1, c));
        }
        p
    }

    /// Widens the declared variable set (e.g. a constant that will be treated as a function of rho).
    pub fn with_vars(mut self, vars: VarSet) -> Self {
        self.vars = self.vars.union(vars);
        self
    }

    fn push_term(&mut self, m: Monomial, c: DMatrix<f64>) {
        self.vars = self.vars.union(m.vars());
        match self.terms.get_mut(&m) {
            Some(existing) => *existing += c,
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn vars(&self) -> VarSet {
        self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &DMatrix<f64>)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: Monomial) -> Option<&DMatrix<f64>> {
        self.terms.get(&m)
    }

    pub fn degree(&self, v: Var) -> u32 {
        self.terms
            .keys()
            .map(|m| match v {
                Var::Rho => m.rho,
                Var::Theta => m.theta,
            })
            .max()
            .unwrap_or(0)
    }

    /// True when every coefficient is exactly zero (or there are no terms).
    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| c.iter().all(|&v| v == 0.0))
    }

    /// Exact structural symmetry: square with every coefficient equal to its transpose.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.terms.values().all(|c| *c == c.transpose())
    }

    pub fn eval(&self, point: &Point) -> Result<DMatrix<f64>> {
        point.covers(self.vars)?;
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &Point) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for (m, c) in &self.terms {
            out += c * point.monomial_value(*m);
        }
        out
    }

    /// Exact integral over `theta` on `bx`; the result no longer depends on `theta`.
    pub fn integrate_theta(&self, bx: &ParamBox) -> Result<PolyMatrix> {
        if !self.vars.theta {
            return Err(usage("integrate_theta on a polynomial matrix without theta"));
        }
        let mut out = Self::zeros(self.rows, self.cols);
        for (m, c) in &self.terms {
            out.push_term(Monomial::rho(m.rho), c * bx.monomial_integral(m.theta));
        }
        out.vars = self.vars.without(Var::Theta);
        Ok(out)
    }

    /// Re-indexes a polynomial in `rho` against `theta`, i.e. forms `P(theta)` from `P(rho)`.
    pub fn rho_as_theta(&self) -> Result<PolyMatrix> {
        if self.vars.theta {
            return Err(usage("rho_as_theta requires a polynomial free of theta"));
        }
        let mut out = Self::zeros(self.rows, self.cols);
        for (m, c) in &self.terms {
            out.push_term(Monomial::theta(m.rho), c.clone());
        }
        out.vars = VarSet { rho: false, theta: self.vars.rho };
        Ok(out)
    }

    fn check_same_shape(&self, other: &PolyMatrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(usage(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &PolyMatrix) -> Result<PolyMatrix> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.push_term(*m, c.clone());
        }
        out.vars = out.vars.union(other.vars);
        Ok(out)
    }

    pub fn sub(&self, other: &PolyMatrix) -> Result<PolyMatrix> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.push_term(*m, -c);
        }
        out.vars = out.vars.union(other.vars);
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> PolyMatrix {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= alpha;
        }
        out
    }

    pub fn neg(&self) -> PolyMatrix {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &PolyMatrix) -> Result<PolyMatrix> {
        if self.cols != other.rows {
            return Err(usage(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.push_term(ma.mul(*mb), ca * cb);
            }
        }
        out.vars = self.vars.union(other.vars);
        Ok(out)
    }

    /// Product with a 1x1 polynomial, which may sit on either side.
    pub fn scale_poly(&self, s: &PolyMatrix) -> Result<PolyMatrix> {
        if s.shape() != (1, 1) {
            return Err(usage(format!("scale_poly expects a 1x1 factor, got {:?}", s.shape())));
        }
        let mut out = Self::zeros(self.rows, self.cols);
        for (ms, cs) in &s.terms {
            for (m, c) in &self.terms {
                out.push_term(ms.mul(*m), c * cs[(0, 0)]);
            }
        }
        out.vars = self.vars.union(s.vars);
        Ok(out)
    }

    pub fn transpose(&self) -> PolyMatrix {
        PolyMatrix {
            rows: self.cols,
            cols: self.rows,
            vars: self.vars,
            terms: self.terms.iter().map(|(m, c)| (*m, c.transpose())).collect(),
        }
    }

    /// `M + M^T`.
    pub fn sym(&self) -> Result<PolyMatrix> {
        if self.rows != self.cols {
            return Err(usage(format!("sym of non-square {}x{}", self.rows, self.cols)));
        }
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = &*c + c.transpose();
        }
        Ok(out)
    }

    /// Drops coefficient matrices that are identically zero.
    pub fn pruned(mut self) -> PolyMatrix {
        self.terms.retain(|_, c| c.iter().any(|&v| v != 0.0));
        self
    }
}

#[derive(Serialize, Deserialize)]
struct PolyMatrixRepr {
    rows: usize,
    cols: usize,
    #[serde(default)]
    terms: Vec<TermRepr>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    #[serde(default)]
    theta: u32,
    #[serde(default)]
    rho: u32,
    /// Row-major coefficient rows.
    coeff: Vec<Vec<f64>>,
}

impl From<PolyMatrix> for PolyMatrixRepr {
    fn from(p: PolyMatrix) -> Self {
        PolyMatrixRepr {
            rows: p.rows,
            cols: p.cols,
            terms: p
                .terms
                .iter()
                .map(|(m, c)| TermRepr {
                    theta: m.theta,
                    rho: m.rho,
                    coeff: c.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<PolyMatrixRepr> for PolyMatrix {
    type Error = Error;
    fn try_from(r: PolyMatrixRepr) -> Result<Self> {
        let terms = r
            .terms
            .into_iter()
            .map(|t| {
                let m = matrix_from_rows(&t.coeff, r.rows, r.cols)?;
                Ok((Monomial::new(t.theta, t.rho), m))
            })
            .collect::<Result<Vec<_>>>()?;
        PolyMatrix::from_terms(r.rows, r.cols, terms)
    }
}

/// Dense matrix from row-major nested rows, checking the expected shape.
pub fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(usage(format!("expected a {nrows}x{ncols} coefficient matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horner(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    #[test]
    fn constant_kernel_evaluates_everywhere() {
        let k = PolyMatrix::scalar(10.0).with_vars(VarSet::BOTH);
        let v = k.eval(&Point::theta_rho(0.3, 0.9)).unwrap();
        assert_eq!(v[(0, 0)], 10.0);
    }

    #[test]
    fn identity_times_rho_vanishes_at_zero() {
        let p = PolyMatrix::monomial(Monomial::rho(1), DMatrix::identity(2, 2));
        assert_eq!(p.eval(&Point::rho(0.0)).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn cubic_matches_horner() {
        let c = [0.7, -1.3, 2.25, -0.4];
        let p = PolyMatrix::scalar_rho(&c);
        let v = p.eval(&Point::rho(0.37)).unwrap()[(0, 0)];
        assert!((v - horner(&c, 0.37)).abs() <= 1e-14);
    }

    #[test]
    fn missing_assignment_is_usage_error() {
        let p = PolyMatrix::monomial(Monomial::theta(1), DMatrix::identity(1, 1));
        assert!(matches!(p.eval(&Point::rho(0.5)), Err(Error::Usage(_))));
    }

    #[test]
    fn integrate_constant_kernel() {
        let k = PolyMatrix::scalar(10.0).with_vars(VarSet::BOTH);
        let bar = k.integrate_theta(&ParamBox::unit()).unwrap();
        assert!(!bar.vars().theta);
        assert_eq!(bar.eval(&Point::rho(0.2)).unwrap()[(0, 0)], 10.0);
    }

    #[test]
    fn odd_about_midpoint_integrates_to_zero() {
        let z = PolyMatrix::from_terms(
            1,
            1,
            [
                (Monomial::theta(1), DMatrix::from_element(1, 1, 2.0)),
                (Monomial::ONE, DMatrix::from_element(1, 1, -1.0)),
            ],
        )
        .unwrap();
        let i = z.integrate_theta(&ParamBox::unit()).unwrap();
        assert!(i.is_zero());
    }

    #[test]
    fn integrate_requires_theta() {
        let p = PolyMatrix::scalar_rho(&[1.0, 2.0]);
        assert!(p.integrate_theta(&ParamBox::unit()).is_err());
    }

    #[test]
    fn sym_of_skew_is_zero() {
        let m = PolyMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]));
        assert!(m.sym().unwrap().is_zero());
    }

    #[test]
    fn rho_times_rho() {
        let p = PolyMatrix::monomial(Monomial::rho(1), DMatrix::identity(2, 2));
        let sq = p.matmul(&p).unwrap();
        assert_eq!(sq.terms().count(), 1);
        assert_eq!(sq.coefficient(Monomial::rho(2)), Some(&DMatrix::identity(2, 2)));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = PolyMatrix::zeros(2, 3);
        let b = PolyMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Usage(_))));
        assert!(matches!(a.add(&b.transpose()), Err(Error::Usage(_))));
    }

    #[test]
    fn rho_as_theta_reindexes() {
        let p = PolyMatrix::scalar_rho(&[1.0, 2.0, 3.0]);
        let t = p.rho_as_theta().unwrap();
        assert_eq!(t.vars(), VarSet::THETA);
        assert_eq!(t.eval(&Point::theta_rho(0.5, 99.0)).unwrap()[(0, 0)], 1.0 + 1.0 + 0.75);
    }

    #[test]
    fn param_box_rejects_empty() {
        assert!(ParamBox::new(1.0, 1.0).is_err());
        assert!(ParamBox::new(2.0, 1.0).is_err());
        assert_eq!(ParamBox::new(0.2, 0.8).unwrap().measure(), 0.6000000000000001);
    }

    #[test]
    fn serde_round_trip() {
        let p = PolyMatrix::from_terms(
            2,
            1,
            [
                (Monomial::new(1, 0), DMatrix::from_row_slice(2, 1, &[1.5, -2.0])),
                (Monomial::new(0, 2), DMatrix::from_row_slice(2, 1, &[0.25, 3.0])),
            ],
        )
        .unwrap();
        let text = toml::to_string(&p).unwrap();
        let back: PolyMatrix = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
