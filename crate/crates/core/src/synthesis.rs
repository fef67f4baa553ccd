//! Slack-variable programs and memory state-feedback synthesis.
//!
//! The slack forms introduce a full constant matrix `X` that decouples the
//! Lyapunov weights from the system matrices. Replacing `X^T A` by
//! `A X + B Y` turns them into synthesis conditions for
//! `u = K(rho) x(t) + Kd(rho) x(t - tau)` with `K = Y X^-1`, `Kd = Yd X^-1`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    c, check_degree, check_inputs, default_lambda_hat, epsilon, jump_bound, jump_term, min_gamma, pd,
    AnalysisCertificate, Condition, LmiOptions,
};
use crate::error::{usage, Error, Result};
use crate::model::{delta_poly, require_inputs, JumpKernel, LpvDelaySystem};
use crate::polymat::{PolyMatrix, Var};
use crate::sdp::{AffExpr, BlockMatrix, Degrees, LmiProgram, Sign, SolverSettings};

/// Largest accepted condition number of `X` when recovering gains.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// Synthesis certificates share the analysis layout; `condition` tells them apart
/// and the variables additionally hold `X`, `Y` and `Yd`.
pub type SynthesisCertificate = AnalysisCertificate;

/// Builds the 7x7 slack-variable inequality shared by the four conditions.
/// `synth` selects the synthesis variables; `lambda_hat` selects parameter-dependent weights.
fn slack_program(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    lambda_hat: Option<f64>,
    synth: bool,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    check_inputs(sys, kernel, h)?;
    if synth {
        require_inputs(sys)?;
    }
    if let Some(lh) = lambda_hat {
        if !(lh > 0.0) {
            return Err(usage(format!("lambda_hat must be > 0, got {lh}")));
        }
    }
    let n = sys.n;
    let aux = Degrees::rho(opts.deg_aux);
    let weights = if lambda_hat.is_some() { aux } else { Degrees::CONSTANT };

    let mut prog = LmiProgram::new();
    let p = prog.add_matrix_var("P", n, n, true, Degrees::rho(opts.deg_p))?;
    let z = prog.add_matrix_var("Z", n, n, true, Degrees::theta_rho(opts.deg_z_theta, opts.deg_z_rho))?;
    let q = prog.add_matrix_var("Q", n, n, true, weights)?;
    let r = prog.add_matrix_var("R", n, n, true, weights)?;
    let qc = match lambda_hat {
        Some(_) => Some(prog.add_matrix_var("Qcal", n, n, true, aux)?),
        None => None,
    };
    let x = prog.add_matrix_var("X", n, n, false, Degrees::CONSTANT)?;
    let (y, yd) = if synth {
        (
            Some(prog.add_matrix_var("Y", sys.n_u, n, false, aux)?),
            Some(prog.add_matrix_var("Yd", sys.n_u, n, false, aux)?),
        )
    } else {
        (None, None)
    };
    let g = prog.add_scalar_var("g", Some(0.0))?;
    prog.add_integral_zero(&z, &sys.param_box)?;

    let (pe, qe, re, xe) = (p.expr(), q.expr(), r.expr(), x.expr());
    let w = match lambda_hat {
        Some(lh) => epsilon(h, lh).sqrt(),
        None => h,
    };
    let storage = match &qc {
        Some(qc) => qe.add(&qc.expr().scale(h))?,
        None => qe.scale_poly(&delta_poly(kernel, h))?,
    };
    let u22 = jump_term(kernel, &p)?
        .sub(&pe)?
        .add(&z.expr())?
        .add(&storage)?
        .sub(&re)?;

    let (u12, u13, u14, u16, u25, u35) = match (&y, &yd) {
        (Some(y), Some(yd)) => {
            let ye = y.expr();
            let yde = yd.expr();
            (
                pe.add(&xe.left_mul(&sys.a)?)?.add(&ye.left_mul(&sys.b)?)?,
                xe.left_mul(&sys.a_d)?.add(&yde.left_mul(&sys.b)?)?,
                c(&sys.e),
                xe.clone(),
                xe.left_mul(&sys.c)?.add(&ye.left_mul(&sys.d)?)?.transpose(),
                xe.left_mul(&sys.c_d)?.add(&yde.left_mul(&sys.d)?)?.transpose(),
            )
        }
        _ => {
            let xt = xe.transpose();
            (
                pe.add(&xt.right_mul(&sys.a)?)?,
                xt.right_mul(&sys.a_d)?,
                xt.right_mul(&sys.e)?,
                xt,
                c(&sys.c.transpose()),
                c(&sys.c_d.transpose()),
            )
        }
    };

    let lmi = BlockMatrix::symmetric(
        &[n, n, n, sys.n_w, sys.n_z, n, n],
        vec![
            (0, 0, xe.sym()?.neg()),
            (0, 1, u12),
            (0, 2, u13),
            (0, 3, u14),
            (0, 5, u16),
            (0, 6, re.scale(w)),
            (1, 1, u22),
            (1, 2, re.clone()),
            (1, 4, u25),
            (2, 2, qe.add(&re)?.neg()),
            (2, 4, u35),
            (3, 3, AffExpr::scaled_identity(g.index, sys.n_w, -1.0)),
            (3, 4, c(&sys.f.transpose())),
            (4, 4, c(&PolyMatrix::identity(sys.n_z).neg())),
            (5, 5, pe.neg()),
            (5, 6, re.scale(-w)),
            (6, 6, re.neg()),
        ],
    )?;
    check_degree(&lmi, opts)?;
    prog.add_psd_on_grid("LMI", lmi, Sign::Nsd, opts.bivariate_grid(sys)?, opts.strict_margin)?;

    let rho_grid = opts.rho_grid(sys)?;
    if let (Some(lh), Some(qc)) = (lambda_hat, &qc) {
        jump_bound(&mut prog, "jump bound Q", kernel, &q, qc.expr(), rho_grid)?;
        jump_bound(&mut prog, "jump bound R", kernel, &r, re.scale(lh), rho_grid)?;
    }
    for v in [Some(&p), Some(&q), Some(&r), qc.as_ref()].into_iter().flatten() {
        pd(&mut prog, v, rho_grid, opts.pd_margin)?;
    }
    prog.minimize_scalar(&g);
    Ok(prog)
}

/// Slack form of the constant-weight analysis condition.
pub fn build_prop1(sys: &LpvDelaySystem, kernel: &JumpKernel, h: f64, opts: &LmiOptions) -> Result<LmiProgram> {
    slack_program(sys, kernel, h, None, false, opts)
}

/// Slack form of the parameter-dependent-weight analysis condition.
pub fn build_prop2(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    lambda_hat: f64,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    slack_program(sys, kernel, h, Some(lambda_hat), false, opts)
}

/// Synthesis with constant delay weights.
pub fn build_thm3(sys: &LpvDelaySystem, kernel: &JumpKernel, h: f64, opts: &LmiOptions) -> Result<LmiProgram> {
    slack_program(sys, kernel, h, None, true, opts)
}

/// Synthesis with parameter-dependent delay weights and jump multiplier `lambda_hat`.
pub fn build_thm4(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    h: f64,
    lambda_hat: f64,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    slack_program(sys, kernel, h, Some(lambda_hat), true, opts)
}

/// Builds any of the six conditions.
pub fn build(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    condition: Condition,
    h: f64,
    lambda_hat: f64,
    opts: &LmiOptions,
) -> Result<LmiProgram> {
    use crate::analysis::{build_thm1, build_thm2};
    match condition {
        Condition::Thm1 => build_thm1(sys, kernel, h, opts),
        Condition::Thm2 => build_thm2(sys, kernel, h, lambda_hat, opts),
        Condition::Prop1 => build_prop1(sys, kernel, h, opts),
        Condition::Prop2 => build_prop2(sys, kernel, h, lambda_hat, opts),
        Condition::Thm3 => build_thm3(sys, kernel, h, opts),
        Condition::Thm4 => build_thm4(sys, kernel, h, lambda_hat, opts),
    }
}

/// Whether `condition` holds at the fixed level `gamma`.
/// Infeasibility is `Ok(false)`; numerical failures propagate.
pub fn feasible_at(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    condition: Condition,
    h: f64,
    lambda_hat: f64,
    gamma: f64,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<bool> {
    let mut prog = build(sys, kernel, condition, h, lambda_hat, opts)?;
    prog.fix_scalar("g", gamma * gamma)?;
    match crate::analysis::solve_gamma(&prog, settings) {
        Ok(_) => Ok(true),
        Err(Error::Infeasible(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Minimizes gamma for a synthesis condition. `lambda_hat` is only used by `Thm4`
/// and defaults to the kernel intensity plus a small offset.
pub fn synthesize(
    sys: &LpvDelaySystem,
    kernel: &JumpKernel,
    condition: Condition,
    h: f64,
    lambda_hat: Option<f64>,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<SynthesisCertificate> {
    let (prog, lh) = match condition {
        Condition::Thm3 => (build_thm3(sys, kernel, h, opts)?, None),
        Condition::Thm4 => {
            let lh = lambda_hat.unwrap_or_else(|| default_lambda_hat(kernel));
            (build_thm4(sys, kernel, h, lh, opts)?, Some(lh))
        }
        other => return Err(usage(format!("{other:?} is not a synthesis condition"))),
    };
    min_gamma(&prog, condition, h, lh, opts, settings)
}

/// Gain-scheduled memory state feedback `u = K(rho) x(t) + Kd(rho) x(t - tau(rho))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub k: PolyMatrix,
    pub k_d: PolyMatrix,
    /// Certified L2-gain bound of the closed loop.
    pub gamma: f64,
    /// Condition number of the slack matrix the gains were recovered from.
    pub x_condition: f64,
    pub condition: Condition,
    pub h: f64,
    pub lambda_hat: Option<f64>,
    pub options: LmiOptions,
}

impl Controller {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("controller serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c: Controller = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        if c.k.shape() != c.k_d.shape() {
            return Err(usage("K and Kd have different shapes"));
        }
        Ok(c)
    }

    pub fn n_u(&self) -> usize {
        self.k.rows()
    }
}

fn constant_coefficient(pm: &PolyMatrix, name: &str) -> Result<DMatrix<f64>> {
    if pm.degree(Var::Rho) > 0 || pm.degree(Var::Theta) > 0 {
        return Err(Error::Recovery(format!("{name} is expected to be constant")));
    }
    Ok(pm.eval_unchecked(&Default::default()))
}

/// Recovers `K = Y X^-1` and `Kd = Yd X^-1` coefficient-wise.
pub fn recover_controller(cert: &SynthesisCertificate, condition_cap: f64) -> Result<Controller> {
    let get = |name: &str| {
        cert.variables
            .get(name)
            .ok_or_else(|| Error::Recovery(format!("certificate has no variable {name}")))
    };
    let x = constant_coefficient(get("X")?, "X")?;
    let sv = x.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smin >= 1e-8 * smax) || !(cond <= condition_cap) || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Recovery(format!(
            "X is ill-conditioned: singular values in [{smin:.3e}, {smax:.3e}], condition {cond:.3e} (cap {condition_cap:.1e})"
        )));
    }
    let sym_min = (&x + x.transpose()).symmetric_eigenvalues().min();
    if sym_min <= 0.0 {
        log::warn!("X + X^T has eigenvalue {sym_min:.3e}; the (1,1) block is not strictly negative");
    }
    let x_inv = PolyMatrix::constant(
        x.try_inverse().ok_or_else(|| Error::Recovery("X is singular".into()))?,
    );
    let k = get("Y")?.matmul(&x_inv)?.pruned();
    let k_d = get("Yd")?.matmul(&x_inv)?.pruned();
    let finite = |p: &PolyMatrix| p.terms().all(|(_, m)| m.iter().all(|v| v.is_finite()));
    if !finite(&k) || !finite(&k_d) {
        return Err(Error::Recovery("recovered gains are not finite".into()));
    }
    Ok(Controller {
        k,
        k_d,
        gamma: cert.gamma,
        x_condition: cond,
        condition: cert.condition,
        h: cert.h,
        lambda_hat: cert.lambda_hat,
        options: cert.options,
    })
}

/// Closed loop `A + BK`, `Ad + BKd`, `C + DK`, `Cd + DKd` with the input channel removed.
pub fn close_loop(sys: &LpvDelaySystem, ctrl: &Controller) -> Result<LpvDelaySystem> {
    let want = (sys.n_u, sys.n);
    if ctrl.k.shape() != want || ctrl.k_d.shape() != want {
        return Err(usage(format!(
            "controller gains are {:?}, system needs {want:?}",
            ctrl.k.shape()
        )));
    }
    let mut cl = LpvDelaySystem::zeros(sys.n, sys.n_w, 0, sys.n_z, sys.param_box, sys.h);
    cl.a = sys.a.add(&sys.b.matmul(&ctrl.k)?)?.pruned();
    cl.a_d = sys.a_d.add(&sys.b.matmul(&ctrl.k_d)?)?.pruned();
    cl.c = sys.c.add(&sys.d.matmul(&ctrl.k)?)?.pruned();
    cl.c_d = sys.c_d.add(&sys.d.matmul(&ctrl.k_d)?)?.pruned();
    cl.e = sys.e.clone();
    cl.f = sys.f.clone();
    Ok(cl)
}

/// Variable names and values of a certificate, for display.
pub fn variable_summary(cert: &SynthesisCertificate) -> BTreeMap<String, (usize, usize)> {
    cert.variables.iter().map(|(k, v)| (k.clone(), v.shape())).collect()
}
