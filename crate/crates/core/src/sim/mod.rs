//! Monte-Carlo simulation of the delay system with Poisson parameter jumps.
//!
//! Between jumps the state follows the frozen-parameter delay equation; at a jump only
//! `rho` (and with it the delay `tau(rho)`) changes, the state stays continuous.

mod estimate;
mod history;
mod integrate;
mod rng;

use std::io::Write;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::expr::{Env, Expr, Symbol};

pub use estimate::{empirical_l2_gain, mc_mean_square, GainEstimate, MeanSquare, DECAY_RATIO};
pub use history::HistoryBuffer;
pub use integrate::integrate;
pub use rng::{run_rng, sample_jump_time, sample_post_jump_param, MAX_REJECTIONS};

/// State norm above which a run is declared divergent and truncated.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Disturbance `w(t)`, one expression in `t` per channel. Empty means `w = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal {
    exprs: Vec<Expr>,
}

impl Signal {
    pub fn zero() -> Self {
        Signal::default()
    }

    pub fn new(exprs: Vec<Expr>) -> Result<Self> {
        if exprs.iter().any(|e| e.uses(Symbol::Rho)) {
            return Err(invalid("w", "signals may depend on t only, not r"));
        }
        Ok(Signal { exprs })
    }

    pub fn parse(texts: &[&str]) -> Result<Self> {
        Self::new(texts.iter().map(|t| t.parse()).collect::<Result<Vec<Expr>>>()?)
    }

    pub fn is_zero(&self) -> bool {
        self.exprs.is_empty()
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub(crate) fn check_dim(&self, n_w: usize) -> Result<()> {
        if !self.exprs.is_empty() && self.exprs.len() != n_w {
            return Err(invalid("w", format!("{} signal components for {n_w} disturbance channels", self.exprs.len())));
        }
        Ok(())
    }

    /// Value at time `t`; a zero signal yields `n_w` zeros.
    pub fn eval(&self, t: f64, n_w: usize) -> Result<DVector<f64>> {
        if self.exprs.is_empty() {
            return Ok(DVector::zeros(n_w));
        }
        let env = Env::time(t);
        Ok(DVector::from_iterator(
            self.exprs.len(),
            self.exprs.iter().map(|e| e.eval(&env)).collect::<Result<Vec<_>>>()?,
        ))
    }
}

/// Step size, horizon, seeding and disturbance of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub runs: usize,
    pub w: Signal,
    /// Initial parameter; drawn uniformly from the box when absent.
    pub rho0: Option<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64, runs: usize) -> Self {
        SimConfig { dt, horizon, seed, runs, w: Signal::zero(), rho0: None }
    }

    pub fn with_signal(mut self, w: Signal) -> Self {
        self.w = w;
        self
    }

    /// Checks the step against the delay bound `h`.
    pub fn check(&self, h: f64) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("must be > 0, got {}", self.horizon)));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be >= 1"));
        }
        let cap = if h > 0.0 { h / 10.0 } else { self.horizon / 1000.0 };
        if !(self.dt > 0.0 && self.dt <= cap * (1.0 + 1e-12)) {
            return Err(invalid("dt", format!("must lie in (0, {cap}], got {}", self.dt)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Sampled path of one run on the grid `k * dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Parameter at each sample (right-continuous).
    pub params: Vec<f64>,
    pub delays: Vec<f64>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// Whether a jump occurred since the previous sample.
    pub jump_flags: Vec<bool>,
    /// Exact jump instants.
    pub jumps: Vec<f64>,
    /// The state norm exceeded the divergence threshold; the path is truncated.
    pub diverged: bool,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            params: Vec::with_capacity(n),
            delays: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            jump_flags: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, t: f64, x: DVector<f64>, rho: f64, tau: f64, z: DVector<f64>, w: DVector<f64>, jumped: bool) {
        self.times.push(t);
        self.states.push(x);
        self.params.push(rho);
        self.delays.push(tau);
        self.outputs.push(z);
        self.inputs.push(w);
        self.jump_flags.push(jumped);
    }

    /// CSV with columns `t, x1..xn, rho, tau, z1..zm, jump`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.outputs.first().map_or(0, |z| z.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["rho".to_string(), "tau".to_string()]);
        header.extend((1..=m).map(|i| format!("z{i}")));
        header.push("jump".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt_num(self.times[k])];
            row.extend(self.states[k].iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(self.params[k]));
            row.push(fmt_num(self.delays[k]));
            row.extend(self.outputs[k].iter().map(|v| fmt_num(*v)));
            row.push(u8::from(self.jump_flags[k]).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Number with 9 significant digits, shortest form.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.8e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        format!("{mant}e{exp}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(-12345.678901234), "-12345.6789");
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(1.5e-9), "1.5e-9");
        assert_eq!(fmt_num(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_num(123456789.4), "123456789");
    }

    #[test]
    fn signal_rejects_parameter() {
        assert!(Signal::parse(&["H(t) - H(t - 2)"]).is_ok());
        assert!(Signal::parse(&["r"]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut t = Trajectory::default();
        t.push(0.0, DVector::from_vec(vec![1.0, 2.0]), 0.5, 0.25, DVector::from_vec(vec![3.0]), DVector::zeros(1), false);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x1,x2,rho,tau,z1,jump\n0,1,2,0.5,0.25,3,0\n");
    }
}
