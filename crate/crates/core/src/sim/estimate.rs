use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{integrate, SimConfig, Trajectory};
use crate::error::{usage, Result};
use crate::model::{DelayLaw, InitialHistory, JumpKernel, LpvDelaySystem};
use crate::synthesis::Controller;

/// Final-to-initial mean-square ratio below which the estimate counts as decayed.
pub const DECAY_RATIO: f64 = 1e-4;

/// Monte-Carlo estimate of `E ||x(t)||^2` on the sample grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSquare {
    pub times: Vec<f64>,
    /// Divergent runs contribute `+inf` after their cutoff.
    pub mean: Vec<f64>,
    pub runs: usize,
    pub diverged_runs: usize,
}

impl MeanSquare {
    pub fn initial(&self) -> f64 {
        self.mean.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }

    /// `E||x(T)||^2 / E||x(0)||^2`.
    pub fn ratio(&self) -> f64 {
        self.last() / self.initial()
    }

    pub fn decays(&self) -> bool {
        self.ratio() < DECAY_RATIO
    }

    pub fn diverged_fraction(&self) -> f64 {
        self.diverged_runs as f64 / self.runs as f64
    }
}

fn run_all<T: Send>(cfg: &SimConfig, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    // Collecting keeps run-index order, so reductions are deterministic.
    (0..cfg.runs as u64).into_par_iter().map(f).collect()
}

/// Averages `||x(t)||^2` over `cfg.runs` independent runs.
pub fn mc_mean_square(
    sys: &LpvDelaySystem,
    ctrl: Option<&Controller>,
    delay: &DelayLaw,
    phi: &InitialHistory,
    kernel: &JumpKernel,
    cfg: &SimConfig,
) -> Result<MeanSquare> {
    if cfg.runs < 30 {
        warn!("{} runs give a noisy mean-square estimate; 30 or more are recommended", cfg.runs);
    }
    let steps = cfg.steps();
    let paths = run_all(cfg, |run| {
        let tr = integrate(sys, ctrl, delay, phi, kernel, cfg, run)?;
        let mut sq: Vec<f64> = tr.states.iter().map(|x| x.norm_squared()).collect();
        sq.resize(steps + 1, if tr.diverged { f64::INFINITY } else { f64::NAN });
        Ok((sq, tr.diverged))
    })?;
    let mut mean = vec![0.0; steps + 1];
    for (sq, _) in &paths {
        for (m, v) in mean.iter_mut().zip(sq) {
            *m += v;
        }
    }
    let n = cfg.runs as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(MeanSquare {
        times: (0..=steps).map(|k| k as f64 * cfg.dt).collect(),
        mean,
        runs: cfg.runs,
        diverged_runs: paths.iter().filter(|(_, d)| *d).count(),
    })
}

/// Empirical L2 gain from zero initial history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainEstimate {
    /// `(sum of output energies / sum of input energies)^(1/2)`.
    pub ratio: f64,
    /// Standard error of the per-run gains, a scale for Monte-Carlo noise.
    pub std_error: f64,
    pub diverged_runs: usize,
}

fn trapezoid_energy(times: &[f64], signal: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = signal.collect();
    times.windows(2).zip(v.windows(2)).map(|(t, s)| (t[1] - t[0]) * (s[0] + s[1]) / 2.0).sum()
}

fn energies(tr: &Trajectory) -> (f64, f64) {
    let z = trapezoid_energy(&tr.times, tr.outputs.iter().map(|z| z.norm_squared()));
    let w = trapezoid_energy(&tr.times, tr.inputs.iter().map(|w| w.norm_squared()));
    (z, w)
}

pub fn empirical_l2_gain(
    sys: &LpvDelaySystem,
    ctrl: Option<&Controller>,
    delay: &DelayLaw,
    kernel: &JumpKernel,
    cfg: &SimConfig,
) -> Result<GainEstimate> {
    if cfg.w.is_zero() {
        return Err(usage("the empirical gain needs a nonzero disturbance"));
    }
    let phi = InitialHistory::zero(sys.n);
    let runs = run_all(cfg, |run| {
        let tr = integrate(sys, ctrl, delay, &phi, kernel, cfg, run)?;
        let (z, w) = energies(&tr);
        Ok((z, w, tr.diverged))
    })?;
    let (zs, ws) = runs.iter().fold((0.0, 0.0), |(a, b), (z, w, _)| (a + z, b + w));
    if !(ws > 0.0) {
        return Err(usage("the disturbance has zero energy on the horizon"));
    }
    let diverged_runs = runs.iter().filter(|r| r.2).count();
    let per_run: Vec<f64> = runs.iter().map(|(z, w, _)| (z / w).sqrt()).collect();
    let n = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / n;
    let var = if n > 1.0 { per_run.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(GainEstimate {
        ratio: if diverged_runs > 0 { f64::INFINITY } else { (zs / ws).sqrt() },
        std_error: (var / n).sqrt(),
        diverged_runs,
    })
}
