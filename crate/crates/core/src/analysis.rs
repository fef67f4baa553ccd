//! Stability and L2-performance programs.
//!
//! Two parameterizations of the Lyapunov-Krasovskii functional are offered:
//! [`build_thm1`] uses a parameter-dependent `P(rho)` with constant delay
//! weights `Q`, `R`; [`build_thm2`] makes every weight parameter-dependent
//! and bounds the jump contributions of `Q` and `R` by a multiplier
//! `lambda_hat`. Both minimize `g = gamma^2` directly since it enters the
//! LMI linearly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::model::{delta_poly, JumpKernel, LpvDelaySystem};
use crate::polymat::{PolyMatrix, DEFAULT_MAX_DEGREE};
use crate::sdp::{
    lower_and_solve, AffExpr, BlockMatrix, Degrees, Grid, LmiProgram, MatVar, Sign, SolveReport,
    SolveStatus, SolverSettings, DEFAULT_PD_MARGIN, DEFAULT_STRICT_MARGIN,
};

/// Offset added to the kernel intensity when `lambda_hat` is not supplied.
pub const LAMBDA_HAT_OFFSET: f64 = 0.005;

/// Degrees, grid sizes and margins shared by every program builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiOptions {
    /// rho-degree of `P`.
    pub deg_p: u32,
    /// theta-degree of `Z`.
    pub deg_z_theta: u32,
    /// rho-degree of `Z`.
    pub deg_z_rho: u32,
    /// rho-degree of the remaining parameter-dependent weights (`Q`, `R`, `Qcal`, `Y`, `Yd`).
    pub deg_aux: u32,
    pub grid_rho: usize,
    pub grid_theta: usize,
    pub strict_margin: f64,
    pub pd_margin: f64,
    pub max_degree: u32,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions {
            deg_p: 1,
            deg_z_theta: 1,
            deg_z_rho: 1,
            deg_aux: 1,
            grid_rho: 50,
            grid_theta: 50,
            strict_margin: DEFAULT_STRICT_MARGIN,
            pd_margin: DEFAULT_PD_MARGIN,
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }
}

impl LmiOptions {
    /// 15 x 15 grids for quick runs.
    pub fn coarse() -> Self {
        LmiOptions { grid_rho: 15, grid_theta: 15, ..Self::default() }
    }

    pub fn with_grid(mut self, n: usize) -> Self {
        self.grid_rho = n;
        self.grid_theta = n;
        self
    }

    pub(crate) fn bivariate_grid(&self, sys: &LpvDelaySystem) -> Result<Grid> {
        Grid::theta_rho(sys.param_box, self.grid_theta, self.grid_rho)
    }

    pub(crate) fn rho_grid(&self, sys: &LpvDelaySystem) -> Result<Grid> {
        Grid::rho(sys.param_box, self.grid_rho)
    }
}

/// Which set of conditions produced a program or certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Constant delay weights.
    Thm1,
    /// Parameter-dependent delay weights with jump multiplier.
    Thm2,
    /// Slack-variable form of `Thm1`.
    Prop1,
    /// Slack-variable form of `Thm2`.
    Prop2,
    /// Synthesis from `Prop1`.
    Thm3,
    /// Synthesis from `Prop2`.
    Thm4,
}

impl Condition {
    pub fn number(self) -> u8 {
        match self {
            Condition::Thm1 | Condition::Prop1 => 1,
            Condition::Thm2 | Condition::Prop2 => 2,
            Condition::Thm3 => 3,
            Condition::Thm4 => 4,
        }
    }

    pub fn uses_lambda_hat(self) -> bool {
        matches!(self, Condition::Thm2 | Condition::Prop2 | Condition::Thm4)
    }
}

/// Result of a gamma minimization over an analysis program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCertificate {
    pub condition: Condition,
    pub gamma: f64,
    /// `gamma^2` as returned by the solver.
    pub g: f64,
    pub h: f64,
    pub lambda_hat: Option<f64>,
    pub options: LmiOptions,
    pub training_residual: f64,
    pub verification_residual: f64,
    pub solve_time: f64,
    /// Decision functions (`P`, `Z`, `Q`, `R`, ...) keyed by name.
    pub variables: BTreeMap<String, PolyMatrix>,
}

impl AnalysisCertificate {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("certificate serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })
    }
}

pub(crate) fn c(pm: &PolyMatrix) -> AffExpr {
    AffExpr::constant(pm.clone())
}

/// `mu(B) * lambda(theta, rho) * (P(theta) - P(rho))`.
pub(crate) fn jump_term(kernel: &JumpKernel, p: &MatVar) -> Result<AffExpr> {
    let mu = kernel.param_box().measure();
    p.expr_at_theta()?.sub(&p.expr())?.scale_poly(kernel.lambda()).map(|e| e.scale(mu))
}

/// `integral over theta of lambda(theta, rho) V(theta)`.
pub(crate) fn weighted_integral(kernel: &JumpKernel, v: &MatVar) -> Result<AffExpr> {
    v.expr_at_theta()?.scale_poly(kernel.lambda())?.integrate_theta(&kernel.param_box())
}

pub(crate) fn check_degree(expr: &AffExpr, opts: &LmiOptions) -> Result<()> {
    let d = expr.max_degree();
    if d > opts.max_degree {
        return Err(usage(format!(
            "LMI entries reach degree {d}, above the configured maximum {}",
            opts.max_degree
        )));
    }
    Ok(())
}

pub(crate) fn check_inputs(sys: &LpvDelaySystem, kernel: &JumpKernel, h: f64) -> Result<()> {
    sys.check_structure()?;
    if !(h >= 0.0 && h.is_finite()) {
        return Err(usage(format!("delay bound h must be >= 0, got {h}")));
    }
    if kernel.param_box() != sys.param_box {
        return Err(usage("kernel and system use different parameter boxes"));
    }
    Ok(())
}

/// `epsilon = h^2 + lambda_hat h^3 / 2`.
pub fn epsilon(h: f64, lambda_hat: f64) -> f64 {
    h * h + lambda_hat * h.powi(3) / 2.0
}

/// Default jump multiplier: largest intensity plus a small offset.
pub fn default_lambda_hat(kernel: &JumpKernel) -> f64 {
    kernel.lambda_bar_max() + LAMBDA_HAT_OFFSET
}

pub(crate) fn pd(prog: &mut LmiProgram, v: &MatVar, grid: Grid, margin: f64) -> Result<()> {
    let g = if v.vars.rho { grid } else { Grid::none() };
    prog.add_psd_on_grid(&format!("{} > 0", v.name), v.expr(), Sign::Psd, g, margin)
}

/// Adds `rhs(rho) - integral lambda V(theta) dtheta >= 0` on the rho grid.
pub(crate) fn jump_bound(
    prog: &mut LmiProgram,
    name: &str,
    kernel: &JumpKernel,
    v: &MatVar,
    rhs: AffExpr,
    grid: Grid,
) -> Result<()> {
    let lhs = weighted_integral(kernel, v)?;
    prog.add_psd_on_grid(name, rhs.sub(&lhs)?, Sign::Psd, grid, 0.0)
}

/// Constant delay weights `Q`, `R`; LMI gridded over `(theta, rho)`.
pub fn build_thm1(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    check_inputs(sys, kernel, h)?;
    let n = sys.n;
    let mut prog = LmiProgram::new();
    let p = prog.add_matrix_var("P", n, n, true, Degrees::rho(opts.deg_p))?;
    let z = prog.add_matrix_var("Z", n, n, true, Degrees::theta_rho(opts.deg_z_theta, opts.deg_z_rho))?;
    let q = prog.add_matrix_var("Q", n, n, true, Degrees::CONSTANT)?;
    let r = prog.add_matrix_var("R", n, n, true, Degrees::CONSTANT)?;
    let g = prog.add_scalar_var("g", Some(0.0))?;
    prog.add_integral_zero(&z, &sys.param_box)?;

    let delta = delta_poly(kernel, h);
    let (pe, qe, re) = (p.expr(), q.expr(), r.expr());

    let l11 = pe
        .right_mul(&sys.a)?
        .sym()?
        .add(&jump_term(kernel, &p)?)?
        .add(&z.expr())?
        .add(&qe.scale_poly(&delta)?)?
        .sub(&re)?;
    let l12 = pe.right_mul(&sys.a_d)?.add(&re)?;
    let l22 = qe.add(&re)?.neg();
    let lmi = BlockMatrix::symmetric(
        &[n, n, sys.n_w, sys.n_z, n],
        vec![
            (0, 0, l11),
            (0, 1, l12),
            (0, 2, pe.right_mul(&sys.e)?),
            (0, 3, c(&sys.c.transpose())),
            (0, 4, re.left_mul(&sys.a.transpose())?.scale(h)),
            (1, 1, l22),
            (1, 3, c(&sys.c_d.transpose())),
            (1, 4, re.left_mul(&sys.a_d.transpose())?.scale(h)),
            (2, 2, AffExpr::scaled_identity(g.index, sys.n_w, -1.0)),
            (2, 3, c(&sys.f.transpose())),
            (2, 4, re.left_mul(&sys.e.transpose())?.scale(h)),
            (3, 3, c(&PolyMatrix::identity(sys.n_z).neg())),
            (4, 4, re.neg()),
        ],
    )?;
    check_degree(&lmi, opts)?;
    prog.add_psd_on_grid("LMI", lmi, Sign::Nsd, opts.bivariate_grid(sys)?, opts.strict_margin)?;

    let rho_grid = opts.rho_grid(sys)?;
    for v in [&p, &q, &r] {
        pd(&mut prog, v, rho_grid, opts.pd_margin)?;
    }
    prog.minimize_scalar(&g);
    Ok(prog)
}

/// Parameter-dependent weights `Q(rho)`, `R(rho)`, `Qcal(rho)` with jump multiplier `lambda_hat`.
pub fn build_thm2(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    lambda_hat: f64,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    check_inputs(sys, kernel, h)?;
    if !(lambda_hat > 0.0) {
        return Err(usage(format!("lambda_hat must be > 0, got {lambda_hat}")));
    }
    let n = sys.n;
    let aux = Degrees::rho(opts.deg_aux);
    let mut prog = LmiProgram::new();
    let p = prog.add_matrix_var("P", n, n, true, Degrees::rho(opts.deg_p))?;
    let q = prog.add_matrix_var("Q", n, n, true, aux)?;
    let r = prog.add_matrix_var("R", n, n, true, aux)?;
    let qc = prog.add_matrix_var("Qcal", n, n, true, aux)?;
    let z = prog.add_matrix_var("Z", n, n, true, Degrees::theta_rho(opts.deg_z_theta, opts.deg_z_rho))?;
    let g = prog.add_scalar_var("g", Some(0.0))?;
    prog.add_integral_zero(&z, &sys.param_box)?;

    let s = epsilon(h, lambda_hat).sqrt();
    let (pe, qe, re) = (p.expr(), q.expr(), r.expr());
    let l11 = pe
        .right_mul(&sys.a)?
        .sym()?
        .add(&jump_term(kernel, &p)?)?
        .add(&z.expr())?
        .add(&qe)?
        .add(&qc.expr().scale(h))?
        .sub(&re)?;
    let l12 = pe.right_mul(&sys.a_d)?.add(&re)?;
    let l22 = qe.add(&re)?.neg();
    let lmi = BlockMatrix::symmetric(
        &[n, n, sys.n_w, sys.n_z, n],
        vec![
            (0, 0, l11),
            (0, 1, l12),
            (0, 2, pe.right_mul(&sys.e)?),
            (0, 3, c(&sys.c.transpose())),
            (0, 4, re.left_mul(&sys.a.transpose())?.scale(s)),
            (1, 1, l22),
            (1, 3, c(&sys.c_d.transpose())),
            (1, 4, re.left_mul(&sys.a_d.transpose())?.scale(s)),
            (2, 2, AffExpr::scaled_identity(g.index, sys.n_w, -1.0)),
            (2, 3, c(&sys.f.transpose())),
            (2, 4, re.left_mul(&sys.e.transpose())?.scale(s)),
            (3, 3, c(&PolyMatrix::identity(sys.n_z).neg())),
            (4, 4, re.neg()),
        ],
    )?;
    check_degree(&lmi, opts)?;
    prog.add_psd_on_grid("LMI", lmi, Sign::Nsd, opts.bivariate_grid(sys)?, opts.strict_margin)?;

    let rho_grid = opts.rho_grid(sys)?;
    jump_bound(&mut prog, "jump bound Q", kernel, &q, qc.expr(), rho_grid)?;
    jump_bound(&mut prog, "jump bound R", kernel, &r, re.scale(lambda_hat), rho_grid)?;
    for v in [&p, &q, &r, &qc] {
        pd(&mut prog, v, rho_grid, opts.pd_margin)?;
    }
    prog.minimize_scalar(&g);
    Ok(prog)
}

/// Solves a program whose objective is `g` and returns `gamma = sqrt(g)` with the report.
pub fn solve_gamma(prog: &LmiProgram, settings: &SolverSettings) -> Result<(f64, SolveReport)> {
    let report = lower_and_solve(prog, settings)?;
    match report.status {
        SolveStatus::Optimal => {
            let g = report.scalar("g").ok_or_else(|| usage("program has no scalar `g`"))?;
            Ok((g.max(0.0).sqrt(), report))
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "conic solver reported {} after {} iterations",
            report.diagnostics, report.iterations
        ))),
        SolveStatus::NumericalFailure => Err(Error::Solver(format!(
            "conic solver stopped with {} after {} iterations (training residual {:.3e})",
            report.diagnostics, report.iterations, report.training_residual
        ))),
    }
}

/// Minimizes gamma over an analysis program built by [`build_thm1`] or [`build_thm2`].
pub fn min_gamma(
    prog: &LmiProgram,
    condition: Condition,
    h: f64,
    lambda_hat: Option<f64>,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<AnalysisCertificate> {
    let (gamma, report) = solve_gamma(prog, settings)?;
    let variables = report
        .values
        .iter()
        .filter_map(|(k, v)| match v {
            crate::sdp::VarValue::Matrix(m) => Some((k.clone(), m.clone())),
            crate::sdp::VarValue::Scalar(_) => None,
        })
        .collect();
    Ok(AnalysisCertificate {
        condition,
        gamma,
        g: report.scalar("g").unwrap_or(f64::NAN),
        h,
        lambda_hat,
        options: *opts,
        training_residual: report.training_residual,
        verification_residual: report.verification_residual,
        solve_time: report.solve_time,
        variables,
    })
}

/// Builds and solves the requested analysis condition in one call.
pub fn analyze(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    condition: Condition,
    h: f64,
    lambda_hat: Option<f64>,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<AnalysisCertificate> {
    match condition {
        Condition::Thm1 => {
            let prog = build_thm1(sys, kernel, h, opts)?;
            min_gamma(&prog, condition, h, None, opts, settings)
        }
        Condition::Thm2 => {
            let lh = lambda_hat.unwrap_or_else(|| default_lambda_hat(kernel));
            let prog = build_thm2(sys, kernel, h, lh, opts)?;
            min_gamma(&prog, condition, h, Some(lh), opts, settings)
        }
        other => Err(usage(format!("{other:?} is not an analysis condition"))),
    }
}

/// Golden-section search of `lambda_hat` in `[lo, hi]` minimizing the Theorem-2 gamma.
/// Infeasible trial points count as `gamma = inf`.
pub fn optimize_lambda_hat(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    lo: f64,
    hi: f64,
    iterations: usize,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<AnalysisCertificate> {
    if !(lo > 0.0 && hi > lo) {
        return Err(usage(format!("lambda_hat search interval [{lo}, {hi}] is invalid")));
    }
    let eval = |lh: f64| analyze(sys, kernel, Condition::Thm2, h, Some(lh), opts, settings).ok();
    let gamma_of = |c: &Option<AnalysisCertificate>| c.as_ref().map_or(f64::INFINITY, |c| c.gamma);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut c1 = eval(x1);
    let mut c2 = eval(x2);
    for _ in 0..iterations {
        if gamma_of(&c1) <= gamma_of(&c2) {
            b = x2;
            x2 = x1;
            c2 = c1;
            x1 = b - ratio * (b - a);
            c1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            c1 = c2;
            x2 = a + ratio * (b - a);
            c2 = eval(x2);
        }
    }
    let best = if gamma_of(&c1) <= gamma_of(&c2) { c1 } else { c2 };
    best.ok_or_else(|| Error::Infeasible(format!("no feasible lambda_hat in [{lo}, {hi}]")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{affine_rho, mat};
    use crate::polymat::{ParamBox, Point};

    fn scalar_lowpass(h: f64) -> LpvDelaySystem {
        let mut s = LpvDelaySystem::zeros(1, 1, 0, 1, ParamBox::unit(), h);
        s.a = PolyMatrix::constant(mat(1, 1, &[-1.0]));
        s.e = PolyMatrix::constant(mat(1, 1, &[1.0]));
        s.c = PolyMatrix::constant(mat(1, 1, &[1.0]));
        s
    }

    fn section51() -> LpvDelaySystem {
        let mut s = LpvDelaySystem::zeros(2, 1, 0, 1, ParamBox::unit(), 0.05);
        s.a = affine_rho(2, 2, &[0.0, 1.0, -2.0, 1.0], &[0.0, 0.0, -1.0, 0.0]);
        s.a_d = affine_rho(2, 2, &[-1.0, 0.0, -1.0, -1.0], &[0.0, 0.0, -1.0, 0.0]);
        s.c = PolyMatrix::constant(mat(1, 2, &[1.0, 0.0]));
        s.c_d = s.c.clone();
        s.e = s.c.transpose();
        s
    }

    #[test]
    fn epsilon_arithmetic() {
        assert!((epsilon(0.15, 10.0) - 0.039375).abs() < 1e-15);
        assert_eq!(epsilon(0.3, 0.0), 0.09);
    }

    #[test]
    fn scalar_hinf_oracle_thm1() {
        let sys = scalar_lowpass(1e-3);
        let k = JumpKernel::constant(0.0, ParamBox::unit()).unwrap();
        let opts = LmiOptions::coarse();
        let cert = analyze(&sys, &k, Condition::Thm1, 1e-3, None, &opts, &SolverSettings::default())
            .unwrap();
        assert!((1.0..=1.05).contains(&cert.gamma), "gamma = {}", cert.gamma);
        assert!(cert.training_residual <= 1e-7);
    }

    #[test]
    fn zero_theta_degree_forces_z_zero() {
        let sys = scalar_lowpass(1e-3);
        let k = JumpKernel::constant(0.0, ParamBox::unit()).unwrap();
        let opts = LmiOptions { deg_z_theta: 0, ..LmiOptions::coarse() };
        let cert = analyze(&sys, &k, Condition::Thm1, 1e-3, None, &opts, &SolverSettings::default())
            .unwrap();
        let z = &cert.variables["Z"];
        for (_, coeff) in z.terms() {
            assert!(coeff.amax() < 1e-7);
        }
    }

    #[test]
    fn lmi_holds_at_origin_after_solve() {
        let sys = section51();
        let k = JumpKernel::constant(10.0, ParamBox::unit()).unwrap();
        let opts = LmiOptions::coarse();
        let prog = build_thm1(&sys, &k, 0.05, &opts).unwrap();
        let (_, report) = solve_gamma(&prog, &SolverSettings::default()).unwrap();
        let lmi = &prog.constraints()[0];
        let v = lmi.expr.value(&Point::theta_rho(0.0, 0.0), &report.x);
        let max_eig = v.symmetric_eigenvalues().max();
        assert!(max_eig <= -opts.strict_margin + 1e-7, "{max_eig}");
    }

    #[test]
    fn degree_cap_enforced() {
        let sys = section51();
        let k = JumpKernel::constant(10.0, ParamBox::unit()).unwrap();
        let opts = LmiOptions { deg_p: 4, ..LmiOptions::coarse() };
        assert!(matches!(build_thm1(&sys, &k, 0.05, &opts), Err(Error::Usage(_))));
    }

    #[test]
    fn lambda_hat_must_be_positive() {
        let sys = section51();
        let k = JumpKernel::constant(10.0, ParamBox::unit()).unwrap();
        assert!(build_thm2(&sys, &k, 0.1, 0.0, &LmiOptions::coarse()).is_err());
    }

    #[test]
    fn certificate_text_round_trip() {
        let sys = scalar_lowpass(1e-3);
        let k = JumpKernel::constant(0.0, ParamBox::unit()).unwrap();
        let cert = analyze(&sys, &k, Condition::Thm1, 1e-3, None, &LmiOptions::coarse(), &SolverSettings::default())
            .unwrap();
        let back = AnalysisCertificate::from_text(&cert.to_text()).unwrap();
        assert_eq!(back, cert);
    }
}
