use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::program::{LmiProgram, Sign};
use crate::error::{Error, Result};
use crate::polymat::PolyMatrix;

/// Environment variable overriding the conic solver tolerance.
pub const TOL_ENV: &str = "LPVJUMP_SOLVER_TOL";

/// Solutions whose largest entry exceeds this and that fail re-verification are
/// reported as infeasible rather than as numerical failures.
pub const DIVERGENCE_SCALE: f64 = 1e6;

/// Coefficient bound of the feasibility check run when the main solve stalls.
pub const PHASE_ONE_BOUND: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Feasibility and gap tolerance handed to the interior-point solver.
    pub tol: f64,
    /// Largest accepted constraint violation when re-verifying a solution.
    pub residual_tol: f64,
    /// Density multiplier of the verification grid.
    pub verify_factor: usize,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let tol = std::env::var(TOL_ENV).ok().and_then(|s| s.parse().ok()).unwrap_or(1e-8);
        SolverSettings { tol, residual_tol: 1e-7, verify_factor: 4, max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarValue {
    Matrix(PolyMatrix),
    Scalar(f64),
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Raw decision vector.
    pub x: Vec<f64>,
    pub values: BTreeMap<String, VarValue>,
    /// Worst constraint violation on the training grids.
    pub training_residual: f64,
    /// Worst constraint violation on the refined verification grids.
    pub verification_residual: f64,
    /// Constraint attaining the verification residual.
    pub worst_constraint: String,
    /// Largest violation of the linear equalities.
    pub equality_residual: f64,
    /// `max(1, largest matrix-variable entry)`; residual tolerances are relative to it.
    pub solution_scale: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// Status string reported by the conic solver.
    pub diagnostics: String,
}

impl SolveReport {
    pub fn matrix(&self, name: &str) -> Option<&PolyMatrix> {
        match self.values.get(name) {
            Some(VarValue::Matrix(m)) => Some(m),
            _ => None,
        }
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        match self.values.get(name) {
            Some(VarValue::Scalar(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    /// PSD cone of an `n x n` matrix in scaled upper-triangular vector form.
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(m) | Cone::Nonnegative(m) => m,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }
}

/// `minimize q'x  s.t.  b - A x in K`.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub n: usize,
    pub m: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub cones: Vec<Cone>,
}

/// Scaled vectorization: upper triangle, column-major, off-diagonals times sqrt(2),
/// so that `<svec(A), svec(B)> = trace(A B)`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { m[(i, j)] * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let x = if i == j { v[k] } else { v[k] / std::f64::consts::SQRT_2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Lowers the program to standard conic form.
pub fn lower(prog: &LmiProgram) -> ConicProblem {
    let n = prog.n_decision();
    let mut triplets = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    let eqs = prog.equalities();
    for (row, eq) in eqs.iter().enumerate() {
        for &(i, a) in &eq.coeffs {
            triplets.push((row, i, a));
        }
        b.push(eq.rhs);
    }
    if !eqs.is_empty() {
        cones.push(Cone::Zero(eqs.len()));
    }

    // x_i >= lb  <=>  s = x_i - lb >= 0  with  s = b - A x.
    let bounded: Vec<_> = prog.scalar_vars().iter().filter_map(|v| v.lower.map(|lb| (v.index, lb))).collect();
    for &(i, lb) in &bounded {
        triplets.push((b.len(), i, -1.0));
        b.push(-lb);
    }
    if !bounded.is_empty() {
        cones.push(Cone::Nonnegative(bounded.len()));
    }

    // Each grid point becomes one PSD block; assemble them in parallel, then append in order.
    let blocks: Vec<(usize, Vec<f64>, Vec<(usize, usize, f64)>)> = prog
        .constraints()
        .iter()
        .flat_map(|c| c.grid.points().into_iter().map(move |p| (c, p)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, p)| {
            let (constant, parts) = c.expr.eval_parts(&p);
            let d = constant.nrows();
            let shift = DMatrix::identity(d, d) * c.margin;
            let (bmat, s) = match c.sign {
                Sign::Psd => (constant - shift, -1.0),
                Sign::Nsd => (-constant - shift, 1.0),
            };
            let mut trip = Vec::new();
            for (i, mi) in parts {
                for (r, v) in svec(&mi).into_iter().enumerate() {
                    if v != 0.0 {
                        trip.push((r, i, s * v));
                    }
                }
            }
            (d, svec(&bmat), trip)
        })
        .collect();
    for (d, bv, trip) in blocks {
        let row0 = b.len();
        triplets.extend(trip.into_iter().map(|(r, i, v)| (row0 + r, i, v)));
        b.extend(bv);
        cones.push(Cone::Psd(d));
    }

    let mut q = vec![0.0; n];
    for &(i, c) in prog.objective() {
        q[i] += c;
    }
    ConicProblem { n, m: b.len(), triplets, b, q, cones }
}

impl ConicProblem {
    /// Plain-text sparse dump: a header of cone sizes, then `row col value` triplets of `A`,
    /// followed by `b` and `q`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# conic problem: minimize q'x s.t. b - A x in K")?;
        writeln!(w, "variables {}", self.n)?;
        writeln!(w, "rows {}", self.m)?;
        let cones: Vec<String> = self
            .cones
            .iter()
            .map(|c| match c {
                Cone::Zero(m) => format!("zero:{m}"),
                Cone::Nonnegative(m) => format!("nonneg:{m}"),
                Cone::Psd(n) => format!("psd:{n}"),
            })
            .collect();
        writeln!(w, "cones {}", cones.join(" "))?;
        writeln!(w, "A {}", self.triplets.len())?;
        for (r, c, v) in &self.triplets {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        writeln!(w, "b {}", self.b.len())?;
        for v in &self.b {
            writeln!(w, "{v:e}")?;
        }
        writeln!(w, "q {}", self.q.len())?;
        for v in &self.q {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    /// Feasibility problem with a common relaxation level `s` added to every PSD block and
    /// all decision variables boxed in `[-bound, bound]`: minimize `s >= -1`. The original
    /// program has a solution in the box exactly when the optimum is `<= 0`.
    pub fn phase_one(&self, bound: f64) -> ConicProblem {
        let n = self.n + 1;
        let s_col = self.n;
        let mut triplets = self.triplets.clone();
        let mut row = 0;
        for c in &self.cones {
            if let Cone::Psd(d) = *c {
                // svec(I) is one on the diagonal entries.
                let mut k = 0;
                for j in 0..d {
                    triplets.push((row + k + j, s_col, -1.0));
                    k += j + 1;
                }
            }
            row += c.rows();
        }
        let mut b = self.b.clone();
        for i in 0..self.n {
            triplets.push((b.len(), i, 1.0));
            b.push(bound);
            triplets.push((b.len(), i, -1.0));
            b.push(bound);
        }
        triplets.push((b.len(), s_col, -1.0));
        b.push(1.0);
        let mut cones = self.cones.clone();
        cones.push(Cone::Nonnegative(2 * self.n + 1));
        let mut q = vec![0.0; n];
        q[s_col] = 1.0;
        ConicProblem { n, m: b.len(), triplets, b, q, cones }
    }

    fn solve(&self, settings: &SolverSettings) -> Result<(SolverStatus, Vec<f64>, f64, u32, f64)> {
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for &(r, c, v) in &self.triplets {
            ii.push(r);
            jj.push(c);
            vv.push(v);
        }
        let a = CscMatrix::new_from_triplets(self.m, self.n, ii, jj, vv);
        let p = CscMatrix::<f64>::zeros((self.n, self.n));
        let cones: Vec<SupportedConeT<f64>> = self
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(m) => SupportedConeT::ZeroConeT(m),
                Cone::Nonnegative(m) => SupportedConeT::NonnegativeConeT(m),
                Cone::Psd(n) => SupportedConeT::PSDTriangleConeT(n),
            })
            .collect();
        let s = DefaultSettingsBuilder::default()
            .verbose(settings.verbose)
            .max_iter(settings.max_iter)
            .tol_feas(settings.tol)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol)
            .build()
            .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &self.q, &a, &self.b, &cones, s)
            .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        Ok((sol.status, sol.x.clone(), sol.obj_val, sol.iterations, sol.solve_time))
    }
}

/// Lowers, solves and re-verifies the program.
pub fn lower_and_solve(prog: &LmiProgram, settings: &SolverSettings) -> Result<SolveReport> {
    let started = Instant::now();
    let conic = lower(prog);
    debug!(
        "lowered program: {} unknowns, {} rows, {} cones",
        conic.n,
        conic.m,
        conic.cones.len()
    );
    let (raw_status, x, obj, iterations, _) = conic.solve(settings)?;
    let diagnostics = format!("{raw_status:?}");

    let mut values = BTreeMap::new();
    for v in prog.mat_vars() {
        values.insert(v.name.clone(), VarValue::Matrix(v.value(&x)));
    }
    for v in prog.scalar_vars() {
        values.insert(v.name.clone(), VarValue::Scalar(x[v.index]));
    }

    let mut report = SolveReport {
        status: SolveStatus::NumericalFailure,
        objective: obj,
        x,
        values,
        training_residual: f64::NAN,
        verification_residual: f64::NAN,
        worst_constraint: String::new(),
        equality_residual: f64::NAN,
        solution_scale: 1.0,
        iterations,
        solve_time: 0.0,
        diagnostics,
    };

    match raw_status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            verify(prog, settings, &mut report);
            let tol = settings.residual_tol * report.solution_scale;
            let ok = report.training_residual <= tol && report.equality_residual <= tol.max(1e-6);
            report.status = if ok {
                SolveStatus::Optimal
            } else if report.solution_scale > DIVERGENCE_SCALE {
                // Weakly infeasible programs drive the iterates to infinity, where the
                // strict margins become negligible and the solver may claim success.
                report.diagnostics = format!(
                    "{} with diverging decision variables (scale {:.1e}, residual {:.1e})",
                    report.diagnostics, report.solution_scale, report.training_residual
                );
                SolveStatus::Infeasible
            } else {
                report.diagnostics = format!(
                    "{} with residual {:.1e} above tolerance (scale {:.1e}, objective {:.3e})",
                    report.diagnostics, report.training_residual, report.solution_scale, report.objective
                );
                SolveStatus::NumericalFailure
            };
            if report.status == SolveStatus::Optimal && report.verification_residual > tol {
                warn!(
                    "constraint `{}` violated between grid points (residual {:.3e})",
                    report.worst_constraint, report.verification_residual
                );
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            report.status = SolveStatus::Infeasible;
        }
        _ => {
            verify(prog, settings, &mut report);
            report.diagnostics = format!(
                "{} (scale {:.1e}, objective {:.3e})",
                report.diagnostics, report.solution_scale, report.objective
            );
            report.status = SolveStatus::NumericalFailure;
        }
    }
    if report.status == SolveStatus::NumericalFailure {
        // A stalled solve says nothing about feasibility; settle it on a bounded problem.
        let (st, y, deficit, _, _) = conic.phase_one(PHASE_ONE_BOUND).solve(settings)?;
        debug!("phase one: {st:?}, relaxation level {deficit:.3e}");
        if matches!(st, SolverStatus::Solved | SolverStatus::AlmostSolved) && deficit > settings.residual_tol {
            report.status = SolveStatus::Infeasible;
            report.diagnostics = format!(
                "{}; no solution with coefficients within +-{PHASE_ONE_BOUND:.0e} (constraints short by {deficit:.2e})",
                report.diagnostics
            );
        } else if y.len() == conic.n + 1 {
            report.diagnostics = format!("{}; bounded feasibility level {deficit:.2e}", report.diagnostics);
        }
    }
    report.solve_time = started.elapsed().as_secs_f64();
    Ok(report)
}

fn verify(prog: &LmiProgram, settings: &SolverSettings, report: &mut SolveReport) {
    let x = &report.x;
    let mut train = f64::NEG_INFINITY;
    let mut fine = f64::NEG_INFINITY;
    let mut worst = String::new();
    for c in prog.constraints() {
        let t = c.worst_violation(&c.grid, x);
        let refined = c.grid.refined(settings.verify_factor);
        let f = refined
            .points()
            .par_iter()
            .map(|p| c.violation(p, x))
            .reduce(|| f64::NEG_INFINITY, f64::max);
        train = train.max(t);
        if f > fine {
            fine = f;
            worst = c.name.clone();
        }
    }
    let eq = prog
        .equalities()
        .iter()
        .map(|e| (e.coeffs.iter().map(|(i, a)| a * x[*i]).sum::<f64>() - e.rhs).abs())
        .fold(0.0, f64::max);
    let bounds = prog
        .scalar_vars()
        .iter()
        .filter_map(|v| v.lower.map(|lb| lb - x[v.index]))
        .fold(f64::NEG_INFINITY, f64::max);
    report.training_residual = train.max(bounds);
    report.verification_residual = fine.max(bounds);
    report.worst_constraint = worst;
    report.equality_residual = eq;
    report.solution_scale = prog
        .mat_vars()
        .iter()
        .flat_map(|v| &x[v.offset..v.offset + v.n_scalars()])
        .fold(1.0, |m: f64, v| m.max(v.abs()));
}
