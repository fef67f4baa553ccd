use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::history::HistoryBuffer;
use super::rng::{run_rng, sample_jump_time, sample_post_jump_param};
use super::{SimConfig, Trajectory, DIVERGENCE_NORM};
use crate::error::{invalid, usage, Error, Result};
use crate::model::{DelayLaw, InitialHistory, JumpKernel, LpvDelaySystem};
use crate::polymat::{Point, PolyMatrix};
use crate::synthesis::Controller;

/// Closed-loop matrices frozen at one parameter value.
struct Frozen {
    a: DMatrix<f64>,
    a_d: DMatrix<f64>,
    e: DMatrix<f64>,
    c: DMatrix<f64>,
    c_d: DMatrix<f64>,
    f: DMatrix<f64>,
    tau: f64,
}

impl Frozen {
    fn new(sys: &LpvDelaySystem, ctrl: Option<&Controller>, delay: &DelayLaw, rho: f64) -> Result<Self> {
        let p = Point::rho(rho);
        let ev = |m: &PolyMatrix| m.eval(&p);
        let (mut a, mut a_d, mut c, mut c_d) = (ev(&sys.a)?, ev(&sys.a_d)?, ev(&sys.c)?, ev(&sys.c_d)?);
        if let Some(ctrl) = ctrl {
            let (b, d) = (ev(&sys.b)?, ev(&sys.d)?);
            let (k, kd) = (ev(&ctrl.k)?, ev(&ctrl.k_d)?);
            a += &b * &k;
            a_d += &b * &kd;
            c += &d * &k;
            c_d += &d * &kd;
        }
        let tau = delay.tau(rho)?;
        if !(0.0..=delay.h()).contains(&tau) {
            return Err(Error::Model(format!("tau({rho}) = {tau} outside [0, {}]", delay.h())));
        }
        Ok(Frozen { a, a_d, e: ev(&sys.e)?, c, c_d, f: ev(&sys.f)?, tau })
    }

    fn flow(&self, x: &DVector<f64>, xd: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.a_d * xd + &self.e * w
    }

    fn output(&self, x: &DVector<f64>, xd: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.c_d * xd + &self.f * w
    }
}

fn check_shapes(sys: &LpvDelaySystem, ctrl: Option<&Controller>, phi: &InitialHistory, cfg: &SimConfig) -> Result<()> {
    sys.check_structure()?;
    if phi.dim() != sys.n {
        return Err(invalid("history", format!("history has {} components, system has {}", phi.dim(), sys.n)));
    }
    if let Some(ctrl) = ctrl {
        if ctrl.k.shape() != (sys.n_u, sys.n) || ctrl.k_d.shape() != (sys.n_u, sys.n) {
            return Err(usage(format!(
                "controller gains are {:?}, system needs {:?}",
                ctrl.k.shape(),
                (sys.n_u, sys.n)
            )));
        }
    }
    cfg.w.check_dim(sys.n_w)
}

/// Integrates run `run` of the experiment described by `cfg`.
///
/// Fixed-step RK4 on the regular grid `k * dt`; a jump inside a step splits it so the
/// integrator lands exactly on the jump instant. Delayed states are read from the
/// history by linear interpolation, including inside the current step.
pub fn integrate(
    sys: &LpvDelaySystem,
    ctrl: Option<&Controller>,
    delay: &DelayLaw,
    phi: &InitialHistory,
    kernel: &JumpKernel,
    cfg: &SimConfig,
    run: u64,
) -> Result<Trajectory> {
    check_shapes(sys, ctrl, phi, cfg)?;
    cfg.check(delay.h())?;
    let bx = kernel.param_box();
    let mut rng = run_rng(cfg.seed, run);
    let mut rho = match cfg.rho0 {
        Some(r) if bx.contains(r) => r,
        Some(r) => return Err(invalid("rho0", format!("{r} outside the parameter box"))),
        None => bx.lo() + bx.measure() * rng.random::<f64>(),
    };
    let mut frozen = Frozen::new(sys, ctrl, delay, rho)?;
    let mut next_jump = sample_jump_time(rho, kernel, &mut rng)?;

    let steps = cfg.steps();
    let mut traj = Trajectory::with_capacity(steps + 1);
    let mut hist = HistoryBuffer::new(phi.clone(), delay.h());
    let mut t = 0.0;
    let mut x = phi.at(0.0)?;
    hist.push(t, x.clone())?;

    let delayed = |hist: &HistoryBuffer, s: f64, stage: Option<(f64, &DVector<f64>)>| hist.at_with_stage(s, stage);
    let sample = |traj: &mut Trajectory, fr: &Frozen, hist: &HistoryBuffer, t: f64, x: &DVector<f64>, rho: f64, jumped: bool| -> Result<()> {
        let w = cfg.w.eval(t, fr.e.ncols())?;
        let xd = delayed(hist, t - fr.tau, None)?;
        traj.push(t, x.clone(), rho, fr.tau, fr.output(x, &xd, &w), w, jumped);
        Ok(())
    };
    sample(&mut traj, &frozen, &hist, t, &x, rho, false)?;

    let mut jumped = false;
    let mut k = 0usize;
    while k < steps {
        let t_grid = (k + 1) as f64 * cfg.dt;
        let (target, at_jump) = if next_jump < t_grid { (next_jump, true) } else { (t_grid, false) };
        let dt = target - t;
        if dt > 0.0 {
            x = rk4_step(&frozen, &hist, cfg, t, &x, dt)?;
            t = target;
            hist.push(t, x.clone())?;
        }
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_NORM {
            traj.diverged = true;
            break;
        }
        if at_jump {
            rho = sample_post_jump_param(rho, kernel, &mut rng)?;
            frozen = Frozen::new(sys, ctrl, delay, rho)?;
            next_jump = t + sample_jump_time(rho, kernel, &mut rng)?;
            traj.jumps.push(t);
            jumped = true;
            continue;
        }
        k += 1;
        // Snap onto the grid to keep sample times exact.
        t = t_grid;
        sample(&mut traj, &frozen, &hist, t, &x, rho, jumped)?;
        jumped = false;
    }
    Ok(traj)
}

fn rk4_step(
    fr: &Frozen,
    hist: &HistoryBuffer,
    cfg: &SimConfig,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let f = |ts: f64, xs: &DVector<f64>| -> Result<DVector<f64>> {
        let stage = if ts > t { Some((ts, xs)) } else { None };
        let xd = hist.at_with_stage(ts - fr.tau, stage)?;
        Ok(fr.flow(xs, &xd, &cfg.w.eval(ts, fr.e.ncols())?))
    };
    let k1 = f(t, x)?;
    let k2 = f(t + dt / 2.0, &(x + &k1 * (dt / 2.0)))?;
    let k3 = f(t + dt / 2.0, &(x + &k2 * (dt / 2.0)))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
