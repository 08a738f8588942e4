use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backstep_core::analysis::{
    default_window, design, design_report_for, export, fit_decay_rate, run_experiment, ConfigOverrides, DesignGoal,
    DesignRequest, NormKind, Preset,
};
use backstep_core::controller::DEFAULT_GN_CONSTANT;
use backstep_core::kernel::{kernel_table, DEFAULT_TOL};
use backstep_core::simulator::{self, run_with_setup, LinearSolverKind, NewtonBoundary, Setup, SimulationConfig};
use backstep_core::transform::{scan_admissibility, DEFAULT_ADMISSIBILITY_FLOOR};
use backstep_core::{Error, Grid, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Finite-dimensional backstepping for the 1D reaction-diffusion equation.
#[derive(Parser)]
#[command(name = "backstep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose (mu, N) for a target decay rate or the minimal number of modes.
    Design(DesignArgs),
    /// Run one simulation and export norms, fit and design report.
    Simulate(SimulateArgs),
    /// Run a named experiment preset.
    Experiment(ExperimentArgs),
    /// Sweep mu and report 1 + a_j for every mode.
    ScanAdmissibility(ScanArgs),
    /// Write the truncated kernel table as CSV.
    KernelDump(KernelArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicsArg {
    Paper,
    Plant,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlArg {
    Feedback,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum NewtonBoundaryArg {
    Lagged,
    Coupled,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Woodbury,
    Dense,
}

/// Flags shared by `simulate` and `experiment`; each one overrides the
/// config file, which overrides the base configuration.
#[derive(Args, Default)]
struct RunFlags {
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsArg>,
    #[arg(long, value_enum)]
    control: Option<ControlArg>,
    #[arg(long, value_enum)]
    newton_boundary: Option<NewtonBoundaryArg>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write state.csv with every time level.
    #[arg(long)]
    full_state: bool,
}

impl RunFlags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            nu: self.nu,
            alpha: self.alpha,
            mu: self.mu,
            modes: self.modes,
            length: self.length,
            nx: self.nx,
            nt: self.nt,
            tmax: self.tmax,
            model: self.model.map(|m| match m {
                ModelArg::Linear => simulator::Model::Linear,
                ModelArg::Nonlinear => simulator::Model::Nonlinear,
            }),
            dynamics: self.dynamics.map(|d| match d {
                DynamicsArg::Paper => simulator::Dynamics::PaperFaithful,
                DynamicsArg::Plant => simulator::Dynamics::Plant,
                DynamicsArg::Target => simulator::Dynamics::Target,
            }),
            control: self.control.map(|c| match c {
                ControlArg::Feedback => simulator::Control::Feedback,
                ControlArg::Off => simulator::Control::Off,
            }),
            u0: None,
            newton_tol: None,
            newton_max_iter: None,
            newton_boundary: self.newton_boundary.map(|b| match b {
                NewtonBoundaryArg::Lagged => NewtonBoundary::Lagged,
                NewtonBoundaryArg::Coupled => NewtonBoundary::Coupled,
            }),
            solver: self.solver.map(|s| match s {
                SolverArg::Woodbury => LinearSolverKind::Woodbury,
                SolverArg::Dense => LinearSolverKind::Dense,
            }),
        }
    }

    fn resolve(&self, base: SimulationConfig) -> Result<SimulationConfig> {
        let base = match &self.config {
            Some(path) => ConfigOverrides::load(path)?.apply(base),
            None => base,
        };
        let config = self.overrides().apply(base);
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct ExperimentArgs {
    /// exp1, exp2, exp1_uncontrolled or exp2_uncontrolled.
    preset: String,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("goal").required(true).args(["rate", "minimal"])))]
struct DesignArgs {
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    /// Target exponential decay rate gamma.
    #[arg(long)]
    rate: Option<f64>,
    /// Use the fewest modes that can stabilize the plant.
    #[arg(long)]
    minimal: bool,
    /// Grid for the admissibility check.
    #[arg(long, default_value_t = 1000)]
    nx: usize,
    /// Gagliardo-Nirenberg constant used in the smallness bound.
    #[arg(long, default_value_t = DEFAULT_GN_CONSTANT)]
    gn_constant: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long, default_value_t = 1)]
    modes: usize,
    #[arg(long, default_value_t = 1.0)]
    mu_min: f64,
    #[arg(long, default_value_t = 60.0)]
    mu_max: f64,
    #[arg(long, default_value_t = 60)]
    steps: usize,
    #[arg(long, default_value_t = 400)]
    nx: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| Error::Json { path: PathBuf::from("<stdout>"), source })?;
    write_stdout(format!("{text}\n").as_bytes())
}

// A closed pipe (e.g. `| head`) is not an error for a CLI.
fn write_stdout(bytes: &[u8]) -> Result<()> {
    match io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(io_error(Path::new("<stdout>"))(e)),
        _ => Ok(()),
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn run_config(command: &str, config: &SimulationConfig, flags: &RunFlags) -> Result<()> {
    let setup = Setup::for_config(config)?;
    let traj = run_with_setup(config, &setup, None)?;
    let report = design_report_for(config, setup.transform.as_ref())?;
    let fit = match fit_decay_rate(&traj, default_window(config.tmax), NormKind::L2) {
        Ok(f) => Some(f),
        Err(e) => {
            eprintln!("warning: {e}");
            None
        }
    };
    if let Some(out) = &flags.out {
        export(out, command, Some(config), Some(&traj), Some(&report), fit.as_ref(), flags.full_state)?;
    }
    let n = traj.len();
    print_json(&serde_json::json!({
        "steps": n - 1,
        "initial_l2": traj.l2_norms[0],
        "final_l2": traj.l2_norms[n - 1],
        "final_h1": traj.h1_norms[n - 1],
        "fit": fit,
        "gamma": report.gamma,
        "rho": report.rho,
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(args) => {
            let goal = match args.rate {
                Some(r) => DesignGoal::Rate(r),
                None => DesignGoal::Minimal,
            };
            let req = DesignRequest {
                nx: args.nx,
                gn_constant: args.gn_constant,
                ..DesignRequest::new(args.nu, args.alpha, args.length, goal)
            };
            let report = design(&req)?;
            if let Some(out) = &args.out {
                export(out, "design", None, None, Some(&report), None, false)?;
            }
            print_json(&report)
        }
        Command::Simulate(args) => {
            let config = args.run.resolve(SimulationConfig::default())?;
            run_config("simulate", &config, &args.run)
        }
        Command::Experiment(args) => {
            let preset = Preset::parse(&args.preset)?;
            let config = args.run.resolve(preset.config())?;
            if args.run.out.is_none() {
                let result = run_experiment(&config)?;
                return print_json(&serde_json::json!({
                    "preset": preset.name(),
                    "fit": result.fit,
                    "design": result.report,
                }));
            }
            run_config(&format!("experiment {}", preset.name()), &config, &args.run)
        }
        Command::ScanAdmissibility(args) => {
            let scan = scan_admissibility(
                args.nu,
                args.length,
                args.modes,
                args.mu_min,
                args.mu_max,
                args.steps,
                args.nx,
                DEFAULT_ADMISSIBILITY_FLOOR,
            )?;
            let mut text = String::from("mu,admissible");
            for j in 1..=args.modes {
                text.push_str(&format!(",one_plus_a{j}"));
            }
            text.push('\n');
            for row in &scan.rows {
                text.push_str(&format!("{:.16e},{}", row.mu, row.admissible));
                for j in 0..args.modes {
                    match row.one_plus_a.get(j) {
                        Some(v) => text.push_str(&format!(",{v:.16e}")),
                        None => text.push(','),
                    }
                }
                text.push('\n');
            }
            for c in &scan.sign_changes {
                eprintln!("1 + a_{} changes sign for mu in ({}, {})", c.mode, c.mu_low, c.mu_high);
            }
            match &args.out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(io_error(dir))?;
                    let path = dir.join("scan.csv");
                    fs::write(&path, text).map_err(io_error(&path))
                }
                None => write_stdout(text.as_bytes()),
            }
        }
        Command::KernelDump(args) => {
            let grid = Grid::new(args.length, args.nx)?;
            let kernel = kernel_table(&grid, args.mu, args.nu, args.tol)?;
            eprintln!("truncation order {}, last increment {:e}", kernel.order(), kernel.achieved_delta());
            match &args.out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(io_error(dir))?;
                    let path = dir.join("kernel.csv");
                    let file = fs::File::create(&path).map_err(io_error(&path))?;
                    kernel.write_csv(io::BufWriter::new(file)).map_err(io_error(&path))
                }
                None => {
                    let mut buf = Vec::new();
                    kernel.write_csv(&mut buf).map_err(io_error(Path::new("<stdout>")))?;
                    write_stdout(&buf)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
