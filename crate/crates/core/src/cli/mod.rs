//! Command-line front end.
//!
//! Exit status: 0 success, 2 parse or validation error, 3 infeasible, 4 solver failure.

mod commands;
mod description;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::LmiOptions;
use crate::sdp::SolverSettings;

pub use commands::{sweep_rows, SweepRow, SweepStatus};
pub use description::{read_controller, Description, DescriptionFile, KernelTerm};

#[derive(Debug, Parser)]
#[command(name = "lpvjump", version, about = "Delay-dependent LPV analysis and synthesis under stochastic parameter jumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the L2-gain bound of an open-loop description.
    Analyze(AnalyzeArgs),
    /// Compute a gain-scheduled memory state feedback.
    Synthesize(SynthesizeArgs),
    /// Monte-Carlo simulation; one run writes a trajectory, several a mean-square curve.
    Simulate(SimulateArgs),
    /// Minimal gamma of several conditions along a range of h or lambda0.
    Sweep(SweepArgs),
}

/// Degrees, grids and margins of the gridded programs.
#[derive(Debug, Clone, Args)]
pub struct LmiArgs {
    /// Degree of every polynomial decision variable.
    #[arg(long, default_value_t = 1)]
    pub deg: u32,
    /// Grid points per parameter axis.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long, default_value_t = crate::sdp::DEFAULT_STRICT_MARGIN)]
    pub strict_margin: f64,
    #[arg(long, default_value_t = crate::sdp::DEFAULT_PD_MARGIN)]
    pub pd_margin: f64,
    /// Refuse programs whose matrix entries exceed this polynomial degree.
    #[arg(long, default_value_t = 4)]
    pub max_degree: u32,
}

impl LmiArgs {
    pub fn options(&self) -> LmiOptions {
        LmiOptions {
            deg_p: self.deg,
            deg_z_theta: self.deg,
            deg_z_rho: self.deg,
            deg_aux: self.deg,
            grid_rho: self.grid,
            grid_theta: self.grid,
            strict_margin: self.strict_margin,
            pd_margin: self.pd_margin,
            max_degree: self.max_degree,
        }
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisTheorem {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthesisTheorem {
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    /// Both, keeping the lower certified gamma.
    Best,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub description: PathBuf,
    #[arg(long, value_enum, default_value = "1")]
    pub theorem: AnalysisTheorem,
    /// Delay bound; defaults to the file's `h`.
    #[arg(long)]
    pub h: Option<f64>,
    /// Jump multiplier of condition 2; defaults to the kernel intensity plus 0.005.
    #[arg(long, conflicts_with = "lambda_hat_range")]
    pub lambda_hat: Option<f64>,
    /// Golden-section search of the jump multiplier over `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    pub lambda_hat_range: Option<(f64, f64)>,
    #[command(flatten)]
    pub lmi: LmiArgs,
    /// Certificate output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub description: PathBuf,
    #[arg(long, value_enum, default_value = "3")]
    pub theorem: SynthesisTheorem,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub lambda_hat: Option<f64>,
    /// Largest accepted condition number of the slack matrix.
    #[arg(long, default_value_t = crate::synthesis::DEFAULT_CONDITION_CAP)]
    pub condition_cap: f64,
    #[command(flatten)]
    pub lmi: LmiArgs,
    /// Controller output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Closed-loop certificate output path.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub description: PathBuf,
    /// Controller file; overrides the one named in the description. Without one the loop is open.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Ignore any controller named in the description.
    #[arg(long, conflicts_with = "controller")]
    pub open_loop: bool,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disturbance, one expression in `t` per channel (repeat the flag).
    #[arg(long)]
    pub w: Vec<String>,
    /// Initial parameter; drawn uniformly per run when absent.
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Initial history, one expression in `t` per state (repeat the flag).
    #[arg(long)]
    pub history: Vec<String>,
    /// CSV output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVar {
    H,
    Lambda0,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub description: PathBuf,
    #[arg(long, value_enum)]
    pub vary: SweepVar,
    /// `lo,hi`; equal ends give a single point.
    #[arg(long, value_parser = parse_range)]
    pub range: (f64, f64),
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Comma-separated condition numbers (1 to 4).
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub theorems: Vec<u8>,
    /// Jump multiplier offset over the kernel intensity for conditions 2 and 4.
    #[arg(long, default_value_t = crate::analysis::LAMBDA_HAT_OFFSET)]
    pub lambda_hat_offset: f64,
    #[command(flatten)]
    pub lmi: LmiArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("range {lo},{hi} must be finite with lo <= hi"));
    }
    Ok((lo, hi))
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0.01, 0.25"), Ok((0.01, 0.25)));
        assert!(parse_range("1,0").is_err());
        assert!(parse_range("1").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "lpvjump", "sweep", "f.toml", "--vary", "lambda0", "--range", "1,30", "--theorems", "3,4", "--grid", "15",
        ])
        .unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.theorems, vec![3, 4]);
        assert_eq!(s.lmi.options().grid_theta, 15);
        assert_eq!(s.vary, SweepVar::Lambda0);
    }

    #[test]
    fn clap_errors_exit_2() {
        assert_eq!(run(["lpvjump", "analyze"]), 2);
        assert_eq!(run(["lpvjump", "analyze", "x.toml", "--theorem", "3"]), 2);
    }

    #[test]
    fn missing_file_exits_2() {
        assert_eq!(run(["lpvjump", "analyze", "/nonexistent/desc.toml"]), 2);
    }
}
