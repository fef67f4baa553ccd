//! LPV time-delay plant with Poisson-jumping parameter.
//!
//! ```text
//! x'(t) = A(r) x(t) + Ad(r) x(t - tau(r)) + B(r) u(t) + E(r) w(t)
//! z(t)  = C(r) x(t) + Cd(r) x(t - tau(r)) + D(r) u(t) + F(r) w(t)
//! ```
//!
//! The parameter `r` is piecewise constant and jumps from `r` to `theta`
//! with rate density `lambda(theta, r)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, usage, Result};
use crate::expr::{Env, Expr, Symbol};
use crate::polymat::{ParamBox, PolyMatrix, Point, Var, VarSet};

/// Number of uniform points per axis on validation grids.
pub const VALIDATION_GRID: usize = 1001;

/// Safety factor applied to the gridded supremum of the kernel.
pub const ENVELOPE_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LpvDelaySystem {
    pub n: usize,
    pub n_w: usize,
    pub n_u: usize,
    pub n_z: usize,
    pub a: PolyMatrix,
    pub a_d: PolyMatrix,
    pub b: PolyMatrix,
    pub e: PolyMatrix,
    pub c: PolyMatrix,
    pub c_d: PolyMatrix,
    pub d: PolyMatrix,
    pub f: PolyMatrix,
    pub param_box: ParamBox,
    /// Upper bound on the delay, seconds.
    pub h: f64,
}

impl LpvDelaySystem {
    /// All-zero system of the given dimensions; fill in the matrices afterwards.
    pub fn zeros(n: usize, n_w: usize, n_u: usize, n_z: usize, param_box: ParamBox, h: f64) -> Self {
        let z = PolyMatrix::zeros;
        LpvDelaySystem {
            n,
            n_w,
            n_u,
            n_z,
            a: z(n, n),
            a_d: z(n, n),
            b: z(n, n_u),
            e: z(n, n_w),
            c: z(n_z, n),
            c_d: z(n_z, n),
            d: z(n_z, n_u),
            f: z(n_z, n_w),
            param_box,
            h,
        }
    }

    pub fn matrices(&self) -> [(&'static str, &PolyMatrix, (usize, usize)); 8] {
        let (n, nw, nu, nz) = (self.n, self.n_w, self.n_u, self.n_z);
        [
            ("A", &self.a, (n, n)),
            ("Ad", &self.a_d, (n, n)),
            ("B", &self.b, (n, nu)),
            ("E", &self.e, (n, nw)),
            ("C", &self.c, (nz, n)),
            ("Cd", &self.c_d, (nz, n)),
            ("D", &self.d, (nz, nu)),
            ("F", &self.f, (nz, nw)),
        ]
    }

    /// Shapes and variable dependence of the eight system matrices plus `h >= 0`.
    pub fn check_structure(&self) -> Result<()> {
        for (name, m, shape) in self.matrices() {
            if m.shape() != shape {
                return Err(invalid(
                    name,
                    format!("shape {:?}, expected {:?}", m.shape(), shape),
                ));
            }
            if m.vars().theta {
                return Err(invalid(name, "system matrices may depend on rho only"));
            }
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(invalid("h", format!("delay bound must be finite and >= 0, got {}", self.h)));
        }
        Ok(())
    }

    /// Largest rho-degree among the system matrices.
    pub fn degree(&self) -> u32 {
        self.matrices().iter().map(|(_, m, _)| m.degree(Var::Rho)).max().unwrap_or(0)
    }
}

/// Jump-rate density `lambda(theta, rho)` with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    lambda: PolyMatrix,
    lambda_bar: PolyMatrix,
    param_box: ParamBox,
    lambda_max: f64,
    lambda_bar_max: f64,
}

impl JumpKernel {
    /// Builds the kernel, checking nonnegativity on the validation grid.
    pub fn new(lambda: PolyMatrix, param_box: ParamBox) -> Result<Self> {
        if lambda.shape() != (1, 1) {
            return Err(invalid("kernel", "jump kernel must be scalar"));
        }
        let lambda = lambda.with_vars(VarSet::BOTH);
        let lambda_bar = lambda.integrate_theta(&param_box)?;
        let axis = axis_points(&param_box, VALIDATION_GRID);
        let mut sup = 0.0f64;
        for &r in &axis {
            for &th in &axis {
                let v = lambda.eval_unchecked(&Point::theta_rho(th, r))[(0, 0)];
                // Tolerate roundoff from polynomial evaluation at exact roots.
                if v < -1e-12 {
                    return Err(invalid(
                        "kernel",
                        format!("lambda({th}, {r}) = {v} is negative"),
                    ));
                }
                sup = sup.max(v);
            }
        }
        let lambda_bar_max = axis
            .iter()
            .map(|&r| lambda_bar.eval_unchecked(&Point::rho(r))[(0, 0)])
            .fold(0.0, f64::max);
        Ok(JumpKernel {
            lambda,
            lambda_bar,
            param_box,
            lambda_max: sup * ENVELOPE_FACTOR,
            lambda_bar_max,
        })
    }

    /// Constant density `lambda0` on the box.
    pub fn constant(lambda0: f64, param_box: ParamBox) -> Result<Self> {
        Self::new(PolyMatrix::scalar(lambda0), param_box)
    }

    pub fn lambda(&self) -> &PolyMatrix {
        &self.lambda
    }

    pub fn lambda_bar(&self) -> &PolyMatrix {
        &self.lambda_bar
    }

    pub fn param_box(&self) -> ParamBox {
        self.param_box
    }

    /// Gridded supremum of `lambda` times the envelope factor.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Gridded supremum of the total intensity `lambda_bar`.
    pub fn lambda_bar_max(&self) -> f64 {
        self.lambda_bar_max
    }

    pub fn density(&self, theta: f64, rho: f64) -> f64 {
        self.lambda.eval_unchecked(&Point::theta_rho(theta, rho))[(0, 0)]
    }

    pub fn intensity(&self, rho: f64) -> f64 {
        self.lambda_bar.eval_unchecked(&Point::rho(rho))[(0, 0)]
    }

    /// Value of a kernel that does not depend on theta or rho.
    pub fn constant_value(&self) -> Option<f64> {
        let mut terms = self.lambda.terms().filter(|(_, c)| c[(0, 0)] != 0.0);
        match (terms.next(), terms.next()) {
            (None, _) => Some(0.0),
            (Some((m, c)), None) if m.theta == 0 && m.rho == 0 => Some(c[(0, 0)]),
            _ => None,
        }
    }
}

/// Delay law `tau(rho)` bounded by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLaw {
    expr: Expr,
    h: f64,
}

impl DelayLaw {
    pub fn new(expr: Expr, h: f64) -> Result<Self> {
        if expr.uses(Symbol::Time) {
            return Err(invalid("delay", "delay laws may depend on r only, not t"));
        }
        Ok(DelayLaw { expr, h })
    }

    pub fn parse(text: &str, h: f64) -> Result<Self> {
        Self::new(Expr::parse(text)?, h)
    }

    /// Constant delay `tau`.
    pub fn constant(tau: f64, h: f64) -> Self {
        DelayLaw { expr: Expr::Num(tau), h }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self, rho: f64) -> Result<f64> {
        self.expr.eval(&Env::rho(rho))
    }

    /// Largest delay on the validation grid.
    pub fn check_range(&self, bx: &ParamBox) -> Result<f64> {
        let mut max = 0.0f64;
        for r in axis_points(bx, VALIDATION_GRID) {
            let tau = self.tau(r).map_err(|e| invalid("delay", e.to_string()))?;
            if !(0.0..=self.h).contains(&tau) {
                return Err(invalid(
                    "delay",
                    format!("tau({r}) = {tau} outside [0, {}]", self.h),
                ));
            }
            max = max.max(tau);
        }
        Ok(max)
    }
}

/// Initial state history `phi` on `[-h, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialHistory {
    Constant(DVector<f64>),
    /// One expression in `t` per state component.
    Exprs(Vec<Expr>),
}

impl InitialHistory {
    pub fn zero(n: usize) -> Self {
        InitialHistory::Constant(DVector::zeros(n))
    }

    pub fn constant(x0: &[f64]) -> Self {
        InitialHistory::Constant(DVector::from_column_slice(x0))
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialHistory::Constant(v) => v.len(),
            InitialHistory::Exprs(e) => e.len(),
        }
    }

    pub fn at(&self, t: f64) -> Result<DVector<f64>> {
        match self {
            InitialHistory::Constant(v) => Ok(v.clone()),
            InitialHistory::Exprs(es) => {
                let env = Env::time(t);
                let vals = es.iter().map(|e| e.eval(&env)).collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(vals))
            }
        }
    }

    /// Sampled continuity on `[-h, 0]`: neighbouring samples of the validation grid may not
    /// differ by more than 1% of the local magnitude.
    pub fn check_continuous(&self, h: f64) -> Result<()> {
        let InitialHistory::Exprs(_) = self else { return Ok(()) };
        if h == 0.0 {
            self.at(0.0)?;
            return Ok(());
        }
        let steps = VALIDATION_GRID - 1;
        let mut prev = self.at(-h)?;
        for k in 1..=steps {
            let t = -h + h * k as f64 / steps as f64;
            let cur = self.at(t)?;
            let jump = (&cur - &prev).amax();
            let scale = 1.0 + cur.amax().max(prev.amax());
            if jump > 1e-2 * scale {
                return Err(invalid("history", format!("discontinuity near t = {t}")));
            }
            prev = cur;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `delta(rho) = 1 + 2 lambda_bar(rho) h`.
    pub delta: PolyMatrix,
    pub lambda_bar_sup: f64,
    pub lambda_max: f64,
    pub tau_max: f64,
}

/// Checks the plant, kernel and delay law against each other.
pub fn validate(sys: &LpvDelaySystem, kernel: &JumpKernel, delay: &DelayLaw) -> Result<ValidationReport> {
    sys.check_structure()?;
    if kernel.param_box() != sys.param_box {
        return Err(invalid("kernel", "kernel box differs from the system box"));
    }
    if delay.h() != sys.h {
        return Err(invalid("delay", "delay law bound differs from the system h"));
    }
    let tau_max = delay.check_range(&sys.param_box)?;
    let delta = delta_poly(kernel, sys.h);
    Ok(ValidationReport {
        delta,
        lambda_bar_sup: kernel.lambda_bar_max(),
        lambda_max: kernel.lambda_max(),
        tau_max,
    })
}

/// `delta(rho) = 1 + 2 lambda_bar(rho) h` as a polynomial in rho.
pub fn delta_poly(kernel: &JumpKernel, h: f64) -> PolyMatrix {
    PolyMatrix::scalar(1.0)
        .add(&kernel.lambda_bar().scale(2.0 * h))
        .expect("both 1x1")
        .with_vars(VarSet::RHO)
}

/// Uniform points on the box including both endpoints.
pub(crate) fn axis_points(bx: &ParamBox, count: usize) -> Vec<f64> {
    let (lo, hi) = (bx.lo(), bx.hi());
    let last = count - 1;
    (0..count)
        .map(|k| if k == last { hi } else { lo + (hi - lo) * k as f64 / last as f64 })
        .collect()
}

/// Constant-coefficient matrix helper used by the examples and tests.
pub fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// `c0 + c1 * rho` from two row-major coefficient arrays.
pub fn affine_rho(rows: usize, cols: usize, c0: &[f64], c1: &[f64]) -> PolyMatrix {
    use crate::polymat::Monomial;
    PolyMatrix::from_terms(
        rows,
        cols,
        [(Monomial::ONE, mat(rows, cols, c0)), (Monomial::rho(1), mat(rows, cols, c1))],
    )
    .expect("shapes match")
    .pruned()
    .with_vars(VarSet::RHO)
}

/// Check used by builders that need a concrete input channel.
pub(crate) fn require_inputs(sys: &LpvDelaySystem) -> Result<()> {
    if sys.n_u == 0 {
        return Err(usage("synthesis requires at least one control input"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymat::Monomial;

    pub(crate) fn section51() -> LpvDelaySystem {
        let mut s = LpvDelaySystem::zeros(2, 1, 0, 1, ParamBox::unit(), 0.05);
        s.a = affine_rho(2, 2, &[0.0, 1.0, -2.0, 1.0], &[0.0, 0.0, -1.0, 0.0]);
        s.a_d = affine_rho(2, 2, &[-1.0, 0.0, -1.0, -1.0], &[0.0, 0.0, -1.0, 0.0]);
        s.c = PolyMatrix::constant(mat(1, 2, &[1.0, 0.0]));
        s.c_d = s.c.clone();
        s.e = s.c.transpose();
        s
    }

    #[test]
    fn section51_is_valid() {
        let s = section51();
        let k = JumpKernel::constant(10.0, ParamBox::unit()).unwrap();
        let d = DelayLaw::constant(0.05, 0.05);
        let rep = validate(&s, &k, &d).unwrap();
        let delta = rep.delta.eval(&Point::rho(0.4)).unwrap()[(0, 0)];
        assert!((delta - (1.0 + 20.0 * 0.05)).abs() < 1e-15);
        assert_eq!(rep.lambda_bar_sup, 10.0);
        assert!((rep.lambda_max - 10.5).abs() < 1e-12);
        assert_eq!(validate(&s, &k, &d).unwrap(), rep);
    }

    #[test]
    fn negative_kernel_rejected() {
        let lam = PolyMatrix::from_terms(
            1,
            1,
            [(Monomial::theta(1), mat(1, 1, &[1.0])), (Monomial::ONE, mat(1, 1, &[-2.0]))],
        )
        .unwrap();
        match JumpKernel::new(lam, ParamBox::unit()) {
            Err(crate::Error::Validation { field, .. }) => assert_eq!(field, "kernel"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sine_delay_fits_bound() {
        let d = DelayLaw::parse("0.5*sin(r)", 0.5).unwrap();
        let m = d.check_range(&ParamBox::unit()).unwrap();
        // Brute-force maximum on a 10^4 grid, computed independently.
        let brute = (0..=10_000).map(|k| 0.5 * (k as f64 / 1e4).sin()).fold(0.0, f64::max);
        assert!((m - brute).abs() < 1e-12);
        assert!((m - 0.420_735_492_403_948).abs() < 1e-12);
    }

    #[test]
    fn delay_above_bound_rejected() {
        let d = DelayLaw::parse("0.6*r", 0.5).unwrap();
        assert!(d.check_range(&ParamBox::unit()).is_err());
        assert!(DelayLaw::parse("t", 0.5).is_err());
    }

    #[test]
    fn shape_mismatch_named() {
        let mut s = section51();
        s.c_d = PolyMatrix::zeros(2, 2);
        match s.check_structure() {
            Err(crate::Error::Validation { field, .. }) => assert_eq!(field, "Cd"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn delta_at_least_one() {
        let lam = PolyMatrix::from_terms(
            1,
            1,
            [(Monomial::new(1, 1), mat(1, 1, &[6.0])), (Monomial::new(2, 1), mat(1, 1, &[-6.0]))],
        )
        .unwrap();
        let k = JumpKernel::new(lam, ParamBox::unit()).unwrap();
        let delta = delta_poly(&k, 0.3);
        for r in axis_points(&ParamBox::unit(), 11) {
            assert!(delta.eval(&Point::rho(r)).unwrap()[(0, 0)] >= 1.0);
        }
    }

    #[test]
    fn discontinuous_history_rejected() {
        let h = InitialHistory::Exprs(vec![Expr::parse("H(t+0.25)").unwrap()]);
        assert!(h.check_continuous(0.5).is_err());
        let ok = InitialHistory::Exprs(vec![Expr::parse("cos(t)").unwrap()]);
        ok.check_continuous(0.5).unwrap();
    }
}
