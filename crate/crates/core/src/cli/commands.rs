use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::{
    read_controller, AnalysisTheorem, AnalyzeArgs, Command, Description, SimulateArgs, SweepArgs, SweepVar,
    SynthesisTheorem, SynthesizeArgs,
};
use crate::analysis::{analyze, optimize_lambda_hat, AnalysisCertificate, Condition, LmiOptions};
use crate::error::{invalid, Error, Result};
use crate::model::InitialHistory;
use crate::sdp::SolverSettings;
use crate::sim::{fmt_num, integrate, mc_mean_square, SimConfig, Signal};
use crate::synthesis::{close_loop, recover_controller, synthesize, Controller};

pub(super) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Summary lines go to stdout, or to stderr when stdout carries CSV.
struct Summary {
    to_stderr: bool,
}

impl Summary {
    fn for_output(out: &Option<PathBuf>) -> Self {
        Summary { to_stderr: out.is_none() }
    }

    fn line(&self, key: &str, value: impl std::fmt::Display) {
        if self.to_stderr {
            eprintln!("{key}: {value}");
        } else {
            println!("{key}: {value}");
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_csv(out: &Option<PathBuf>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn load(path: &Path, h: Option<f64>) -> Result<Description> {
    let d = Description::load(path)?;
    match h {
        Some(h) => d.with_h(h),
        None => Ok(d),
    }
}

fn print_certificate(s: &Summary, cert: &AnalysisCertificate) {
    s.line("condition", cert.condition.number());
    s.line("gamma", fmt_num(cert.gamma));
    s.line("h", fmt_num(cert.h));
    if let Some(lh) = cert.lambda_hat {
        s.line("lambda_hat", fmt_num(lh));
    }
    s.line("training_residual", format!("{:.3e}", cert.training_residual));
    s.line("verification_residual", format!("{:.3e}", cert.verification_residual));
    s.line("solve_time_s", format!("{:.3}", cert.solve_time));
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let d = load(&a.description, a.h)?;
    let (opts, settings) = (a.lmi.options(), a.lmi.settings());
    let h = d.system.h;
    let s = Summary { to_stderr: false };
    let cert = match a.theorem {
        AnalysisTheorem::One => analyze(&d.system, &d.kernel, Condition::Thm1, h, None, &opts, &settings)?,
        AnalysisTheorem::Two => match (a.lambda_hat, a.lambda_hat_range) {
            (_, Some((lo, hi))) => {
                optimize_lambda_hat(&d.system, &d.kernel, h, lo, hi, 12, &opts, &settings)?
            }
            (lh, None) => {
                if lh.is_none() {
                    s.line(
                        "note",
                        format!(
                            "lambda_hat defaults to the kernel intensity plus {}",
                            crate::analysis::LAMBDA_HAT_OFFSET
                        ),
                    );
                }
                analyze(&d.system, &d.kernel, Condition::Thm2, h, lh, &opts, &settings)?
            }
        },
    };
    print_certificate(&s, &cert);
    if let Some(out) = &a.out {
        write_text(out, &cert.to_text())?;
        s.line("certificate", out.display());
    }
    Ok(())
}

/// Synthesized controller together with the independent closed-loop certificate.
struct Certified {
    controller: Controller,
    closed_loop: AnalysisCertificate,
}

fn synthesize_and_certify(
    d: &Description,
    condition: Condition,
    lambda_hat: Option<f64>,
    cap: f64,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<Certified> {
    let h = d.system.h;
    let cert = synthesize(&d.system, &d.kernel, condition, h, lambda_hat, opts, settings)?;
    let controller = recover_controller(&cert, cap)?;
    let cl = close_loop(&d.system, &controller)?;
    let closed_loop = analyze(&cl, &d.kernel, Condition::Thm1, h, None, opts, settings).map_err(|e| match e {
        Error::Infeasible(m) | Error::Solver(m) => {
            Error::Recovery(format!("the closed loop could not be re-certified: {m}"))
        }
        other => other,
    })?;
    info!(
        "condition {}: synthesis gamma {}, closed-loop gamma {}",
        condition.number(),
        controller.gamma,
        closed_loop.gamma
    );
    Ok(Certified { controller, closed_loop })
}

fn cmd_synthesize(a: SynthesizeArgs) -> Result<()> {
    let d = load(&a.description, a.h)?;
    crate::model::require_inputs(&d.system)?;
    let (opts, settings) = (a.lmi.options(), a.lmi.settings());
    let run = |c: Condition| synthesize_and_certify(&d, c, a.lambda_hat, a.condition_cap, &opts, &settings);
    let best = match a.theorem {
        SynthesisTheorem::Three => run(Condition::Thm3)?,
        SynthesisTheorem::Four => run(Condition::Thm4)?,
        SynthesisTheorem::Best => match (run(Condition::Thm3), run(Condition::Thm4)) {
            // Lower certified gamma wins; ties go to condition 3.
            (Ok(x), Ok(y)) => {
                if y.closed_loop.gamma < x.closed_loop.gamma {
                    y
                } else {
                    x
                }
            }
            (Ok(x), Err(e)) | (Err(e), Ok(x)) => {
                warn!("one synthesis condition failed: {e}");
                x
            }
            (Err(e), Err(_)) => return Err(e),
        },
    };
    let s = Summary { to_stderr: false };
    s.line("condition", best.controller.condition.number());
    s.line("gamma_synthesis", fmt_num(best.controller.gamma));
    s.line("gamma_closed_loop", fmt_num(best.closed_loop.gamma));
    s.line("x_condition", format!("{:.3e}", best.controller.x_condition));
    s.line("verification_residual", format!("{:.3e}", best.closed_loop.verification_residual));
    if let Some(out) = &a.out {
        write_text(out, &best.controller.to_text())?;
        s.line("controller", out.display());
    }
    if let Some(out) = &a.certificate {
        write_text(out, &best.closed_loop.to_text())?;
        s.line("certificate", out.display());
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let d = Description::load(&a.description)?;
    let controller = match (&a.controller, a.open_loop) {
        (Some(p), _) => Some(read_controller(p)?),
        (None, true) => None,
        (None, false) => d.load_controller()?,
    };
    let phi = if !a.history.is_empty() {
        let exprs = a.history.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
        let phi = InitialHistory::Exprs(exprs);
        phi.check_continuous(d.system.h)?;
        phi
    } else if let Some(phi) = &d.history {
        phi.clone()
    } else {
        warn!("no initial history given; using zero");
        InitialHistory::zero(d.system.n)
    };
    let w = Signal::parse(&a.w.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut cfg = SimConfig::new(a.dt, a.horizon, a.seed, a.runs).with_signal(w);
    cfg.rho0 = a.rho0;
    cfg.check(d.delay.h())?;
    let s = Summary::for_output(&a.out);
    s.line("loop", if controller.is_some() { "closed" } else { "open" });
    if a.runs == 1 {
        let tr = integrate(&d.system, controller.as_ref(), &d.delay, &phi, &d.kernel, &cfg, 0)?;
        write_csv(&a.out, |w| tr.write_csv(w))?;
        s.line("jumps", tr.jumps.len());
        s.line("final_norm", fmt_num(tr.states.last().map_or(f64::NAN, |x| x.norm())));
        s.line("diverged", tr.diverged);
    } else {
        let ms = mc_mean_square(&d.system, controller.as_ref(), &d.delay, &phi, &d.kernel, &cfg)?;
        write_csv(&a.out, |w| {
            writeln!(w, "t,mean_sq")?;
            for (t, m) in ms.times.iter().zip(&ms.mean) {
                writeln!(w, "{},{}", fmt_num(*t), fmt_num(*m))?;
            }
            Ok(())
        })?;
        s.line("runs", ms.runs);
        s.line("diverged_runs", ms.diverged_runs);
        s.line("mean_sq_ratio", fmt_num(ms.ratio()));
        s.line("decays", ms.decays());
    }
    Ok(())
}

/// Outcome of one condition at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepStatus {
    /// Minimal gamma and the worst constraint residual on the solve grid.
    Feasible { gamma: f64, residual: f64 },
    Infeasible,
    /// The solver stopped without a verdict.
    Failed,
}

impl SweepStatus {
    pub fn gamma(self) -> Option<f64> {
        match self {
            SweepStatus::Feasible { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepStatus::Feasible { .. } => "feasible",
            SweepStatus::Infeasible => "infeasible",
            SweepStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// One entry per requested condition, in request order.
    pub results: Vec<(u8, SweepStatus)>,
}

fn sweep_values(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || lo == hi {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

fn condition_of(k: u8) -> Result<Condition> {
    Ok(match k {
        1 => Condition::Thm1,
        2 => Condition::Thm2,
        3 => Condition::Thm3,
        4 => Condition::Thm4,
        _ => return Err(invalid("theorems", format!("unknown condition {k}; expected 1 to 4"))),
    })
}

/// Minimal gamma of each condition at each value of `vary`. Points run in parallel;
/// rows come back in sweep order.
pub fn sweep_rows(
    d: &Description,
    vary: SweepVar,
    values: &[f64],
    theorems: &[u8],
    lambda_hat_offset: f64,
    opts: &LmiOptions,
    settings: &SolverSettings,
) -> Result<Vec<SweepRow>> {
    let conditions = theorems.iter().map(|k| condition_of(*k)).collect::<Result<Vec<_>>>()?;
    if conditions.iter().any(|c| matches!(c, Condition::Thm3 | Condition::Thm4)) {
        crate::model::require_inputs(&d.system)?;
    }
    let variants = values
        .iter()
        .map(|v| match vary {
            SweepVar::H => d.with_h(*v),
            SweepVar::Lambda0 => d.with_lambda0(*v),
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Condition)> =
        (0..values.len()).flat_map(|i| conditions.iter().map(move |c| (i, *c))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(i, c)| {
            let dv = &variants[i];
            let h = dv.system.h;
            let lh = c.uses_lambda_hat().then(|| dv.kernel.lambda_bar_max() + lambda_hat_offset);
            let res = match c {
                Condition::Thm1 | Condition::Thm2 => analyze(&dv.system, &dv.kernel, c, h, lh, opts, settings),
                _ => synthesize(&dv.system, &dv.kernel, c, h, lh, opts, settings),
            };
            match res {
                Ok(cert) => Ok(SweepStatus::Feasible { gamma: cert.gamma, residual: cert.training_residual }),
                Err(Error::Infeasible(_)) => Ok(SweepStatus::Infeasible),
                Err(Error::Solver(m)) => {
                    warn!("condition {} at {}: {m}", c.number(), values[i]);
                    Ok(SweepStatus::Failed)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = outcomes.into_iter();
    Ok(values
        .iter()
        .map(|v| SweepRow {
            value: *v,
            results: theorems.iter().map(|k| (*k, it.next().expect("one outcome per job"))).collect(),
        })
        .collect())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let d = Description::load(&a.description)?;
    let values = sweep_values(a.range.0, a.range.1, a.points);
    let rows = sweep_rows(&d, a.vary, &values, &a.theorems, a.lambda_hat_offset, &a.lmi.options(), &a.lmi.settings())?;
    write_csv(&a.out, |w| {
        let mut header = vec!["value".to_string()];
        for k in &a.theorems {
            header.push(format!("gamma_thm{k}"));
            header.push(format!("status_thm{k}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for row in &rows {
            let mut cells = vec![fmt_num(row.value)];
            for (_, st) in &row.results {
                cells.push(st.gamma().map_or_else(|| "nan".to_string(), fmt_num));
                cells.push(st.label().to_string());
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?;
    let s = Summary::for_output(&a.out);
    s.line("points", rows.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid() {
        assert_eq!(sweep_values(1.0, 1.0, 10), vec![1.0]);
        assert_eq!(sweep_values(0.0, 1.0, 1), vec![0.0]);
        let v = sweep_values(1.0, 30.0, 30);
        assert_eq!(v.len(), 30);
        assert_eq!(v[29], 30.0);
        assert!((v[16] - 17.0).abs() < 1e-12);
    }

    #[test]
    fn condition_numbers() {
        assert_eq!(condition_of(4).unwrap(), Condition::Thm4);
        assert!(condition_of(5).is_err());
    }
}
