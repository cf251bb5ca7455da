use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stopsurf::model::WindowU;

#[derive(Debug, Parser)]
#[command(name = "stopsurf", version, about = "Optimal stopping surfaces for two-dimensional jump-diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the obstacle problem and write the value field and exercise mask.
    Solve(SolveArgs),
    /// Run the hypothesis catalog on a window.
    Check(CheckArgs),
    /// Extract the stopping surface and report its continuity.
    Boundary(BoundaryArgs),
    /// Simulate paths and evaluate the solver's stopping policy.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FieldFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Psor,
    Penalty,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MonotoneArg {
    Inc,
    Dec,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RefinementArg {
    None,
    Linear,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Time levels (overrides the problem file's [grid]).
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FieldFormat,
    #[arg(long, short, default_value = "stopsurf-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub problem: PathBuf,
    /// Directory holding a solve; without it the checks that need `u` are
    /// reported as unverifiable.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// `t1,t2,x_d,x_u,y_d,y_u` (overrides the problem file's [window]).
    #[arg(long, value_parser = parse_window)]
    pub window: Option<WindowU>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    pub problem: PathBuf,
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long, value_parser = parse_window)]
    pub window: Option<WindowU>,
    /// `lo,hi`: only nodes with x in this range take part in extraction.
    #[arg(long, value_parser = parse_pair)]
    pub x_range: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value = "none")]
    pub refinement: RefinementArg,
    #[arg(long, value_enum, default_value = "none")]
    pub monotone_t: MonotoneArg,
    #[arg(long, value_enum, default_value = "none")]
    pub monotone_y: MonotoneArg,
    #[arg(long, default_value_t = 10.0)]
    pub jump_factor: f64,
    /// Directory holding a solve of the same problem on the next finer grid.
    #[arg(long)]
    pub finer: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub problem: PathBuf,
    #[arg(long)]
    pub artifacts: PathBuf,
    /// `t,x,y` starting state.
    #[arg(long, value_parser = parse_triple)]
    pub start: (f64, f64, f64),
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Simulation step; defaults to the PDE time step.
    #[arg(long)]
    pub dt_sim: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub antithetic: bool,
    /// Mirror paths that leave the box instead of absorbing them.
    #[arg(long)]
    pub reflect: bool,
    /// Comma-separated checkpoint times; defaults to start, T/4 and T/2.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<f64>>,
    /// Longstaff-Schwartz basis degree (2 or 3); 0 skips the estimate.
    #[arg(long, default_value_t = 3)]
    pub lsm_degree: usize,
    /// Also write every simulated path to paths.bin.
    #[arg(long)]
    pub write_paths: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(v)
}

pub fn parse_window(s: &str) -> Result<WindowU, String> {
    let v = numbers(s, 6)?;
    if !(v[0] < v[1] && v[2] < v[3] && v[4] < v[5]) {
        return Err("each interval needs lower < upper".into());
    }
    Ok(WindowU::new((v[0], v[1]), (v[2], v[3]), (v[4], v[5])))
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = numbers(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_triple(s: &str) -> Result<(f64, f64, f64), String> {
    let v = numbers(s, 3)?;
    Ok((v[0], v[1], v[2]))
}
