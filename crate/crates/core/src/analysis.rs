//! Experiment presets, decay-rate fitting, controller design search and
//! artifact export.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{gamma_rate, min_modes_rapid, minimal_mode_setup, rapid_mode_bound, DesignReport, DEFAULT_GN_CONSTANT};
use crate::error::{Error, Result};
use crate::kernel::{kernel_table, DEFAULT_TOL};
use crate::grid::Grid;
use crate::simulator::{
    run_with_setup, Control, Dynamics, InitialCondition, LinearSolverKind, Model, NewtonBoundary, Setup, SimulationConfig,
    Trajectory,
};
use crate::spectral::eigenvalue;
use crate::transform::{TransformOptions, TransformSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    H1,
}

/// Least-squares fit of `log ‖u(t)‖` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `−slope`; negative values mean growth.
    pub rate: f64,
    /// Fitted `log ‖u‖` at the window start.
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub norm: NormKind,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// `[0.3 T, 0.9 T]`.
pub fn default_window(tmax: f64) -> (f64, f64) {
    (0.3 * tmax, 0.9 * tmax)
}

pub fn fit_decay_rate(traj: &Trajectory, window: (f64, f64), norm: NormKind) -> Result<DecayFit> {
    let (ta, tb) = window;
    if !(tb > ta) {
        return Err(Error::Fit(format!("empty window [{ta}, {tb}]")));
    }
    let values = match norm {
        NormKind::L2 => &traj.l2_norms,
        NormKind::H1 => &traj.h1_norms,
    };
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, v) in traj.times.iter().zip(values) {
        if *t >= ta && *t <= tb {
            if !(*v > 0.0) {
                return Err(Error::Fit(format!(
                    "norm {v:e} at t = {t} is not positive; the run decayed to machine zero, shrink the window"
                )));
            }
            ts.push(t - ta);
            ys.push(v.ln());
        }
    }
    let n = ts.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!("window holds {n} samples, need at least {MIN_FIT_SAMPLES}")));
    }
    let nf = n as f64;
    let tm = ts.iter().sum::<f64>() / nf;
    let ym = ys.iter().sum::<f64>() / nf;
    let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let sty: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let ss_tot: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let ss_res: f64 = ts.iter().zip(&ys).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayFit { rate: -slope, intercept, r_squared, window, norm, samples: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Exp1,
    Exp2,
    Exp1Uncontrolled,
    Exp2Uncontrolled,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Exp1, Preset::Exp2, Preset::Exp1Uncontrolled, Preset::Exp2Uncontrolled];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 => "exp2",
            Preset::Exp1Uncontrolled => "exp1_uncontrolled",
            Preset::Exp2Uncontrolled => "exp2_uncontrolled",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown preset '{name}'")))
    }

    /// Paper resolution `N_x = N_t = 1000`. Uncontrolled presets simulate the
    /// plant itself (no `μP_N` term) with a zero boundary.
    pub fn config(self) -> SimulationConfig {
        let exp1 = SimulationConfig {
            nu: 1.0,
            alpha: 12.0,
            mu: 6.0,
            modes: 1,
            length: 1.0,
            nx: 1000,
            nt: 1000,
            tmax: 1.5,
            model: Model::Linear,
            dynamics: Dynamics::PaperFaithful,
            control: Control::Feedback,
            u0: InitialCondition::Exp1,
            ..SimulationConfig::default()
        };
        let exp2 = SimulationConfig {
            alpha: 15.0,
            mu: 15.0,
            modes: 2,
            tmax: 3.0,
            model: Model::Nonlinear,
            u0: InitialCondition::Exp2,
            ..exp1.clone()
        };
        let off = |c: SimulationConfig| SimulationConfig { dynamics: Dynamics::Plant, control: Control::Off, ..c };
        match self {
            Preset::Exp1 => exp1,
            Preset::Exp2 => exp2,
            Preset::Exp1Uncontrolled => off(exp1),
            Preset::Exp2Uncontrolled => off(exp2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: SimulationConfig,
    pub trajectory: Trajectory,
    pub report: DesignReport,
    pub fit: DecayFit,
}

/// Runs a configuration and gathers the design report and L² decay fit.
pub fn run_experiment(config: &SimulationConfig) -> Result<ExperimentResult> {
    let setup = Setup::for_config(config)?;
    let trajectory = run_with_setup(config, &setup, None)?;
    let report = design_report_for(config, setup.transform.as_ref())?;
    let fit = fit_decay_rate(&trajectory, default_window(config.tmax), NormKind::L2)?;
    Ok(ExperimentResult { config: config.clone(), trajectory, report, fit })
}

pub fn run_preset(preset: Preset) -> Result<ExperimentResult> {
    run_experiment(&preset.config())
}

/// Formula report plus transform data; the transform is rebuilt when the run
/// did not need one, and a failure there only adds a note.
pub fn design_report_for(config: &SimulationConfig, set: Option<&TransformSet>) -> Result<DesignReport> {
    let report = DesignReport::from_formulas(config.nu, config.alpha, config.mu, config.modes, config.length)?;
    if config.modes == 0 {
        return Ok(report);
    }
    match set {
        Some(s) => report.with_transform(s, DEFAULT_GN_CONSTANT),
        None => match Setup::with_transform(config) {
            Ok(setup) => report.with_transform(setup.transform.as_ref().expect("transform built"), DEFAULT_GN_CONSTANT),
            Err(e) => {
                let mut r = report;
                r.notes.push(format!("transform unavailable: {e}"));
                Ok(r)
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignGoal {
    /// Rapid stabilization with `γ ≥ target`.
    Rate(f64),
    /// Fewest modes, `μ` at the midpoint of the admissible interval.
    Minimal,
}

#[derive(Debug, Clone, Copy)]
pub struct DesignRequest {
    pub nu: f64,
    pub alpha: f64,
    pub length: f64,
    pub goal: DesignGoal,
    /// Grid used for the admissibility check.
    pub nx: usize,
    pub gn_constant: f64,
}

impl DesignRequest {
    pub fn new(nu: f64, alpha: f64, length: f64, goal: DesignGoal) -> Self {
        DesignRequest { nu, alpha, length, goal, nx: 1000, gn_constant: DEFAULT_GN_CONSTANT }
    }
}

pub const DESIGN_RETRIES: usize = 5;
pub const DESIGN_PERTURBATION: f64 = 0.05;

/// Smallest `μ` on the `N = min_modes_rapid(μ)` branch with `γ ≥ target`,
/// found by alternating the closed-form `μ` for fixed `N` with the mode count.
pub fn rate_search(nu: f64, alpha: f64, length: f64, target: f64) -> Result<(f64, usize)> {
    if !target.is_finite() {
        return Err(Error::invalid(format!("target rate must be finite, got {target}")));
    }
    let l1 = eigenvalue(1, length)?;
    let floor = alpha - nu * l1;
    let mut mu = if floor >= 0.0 { floor * (1.0 + 1e-6) + 1e-6 } else { 1e-6 };
    for _ in 0..200 {
        let n = min_modes_rapid(nu, alpha, mu, length)?;
        let g = gamma_rate(nu, alpha, mu, n, length)?;
        if g.value >= target && g.mu_condition {
            return Ok((mu, n));
        }
        let needed = (target - nu * l1 + alpha) / (1.0 - 1.0 / (n as f64 + 1.0));
        mu = if needed > mu { needed * (1.0 + 1e-12) } else { mu * (1.0 + 1e-9) };
    }
    Err(Error::Infeasible(format!("no (mu, N) reaches rate {target}")))
}

/// Builds the transform for the chosen pair and checks admissibility,
/// retrying with `μ` perturbed by ±5% steps.
fn admissible_pair(
    req: &DesignRequest,
    mu0: f64,
    accept: impl Fn(f64) -> Result<Option<usize>>,
) -> Result<(f64, usize, TransformSet, Vec<String>)> {
    let grid = Grid::new(req.length, req.nx)?;
    let mut notes = Vec::new();
    let mut last_err = None;
    let mut candidates = vec![mu0];
    for k in 1..=DESIGN_RETRIES {
        let s = if k % 2 == 1 { 1.0 + DESIGN_PERTURBATION * k.div_ceil(2) as f64 } else { 1.0 - DESIGN_PERTURBATION * (k / 2) as f64 };
        candidates.push(mu0 * s);
    }
    for mu in candidates {
        let Some(modes) = accept(mu)? else {
            notes.push(format!("skipped mu = {mu}: outside the design constraints"));
            continue;
        };
        let kernel = kernel_table(&grid, mu, req.nu, DEFAULT_TOL)?;
        match TransformSet::build(&kernel, modes, TransformOptions::default()) {
            Ok(set) => return Ok((mu, modes, set, notes)),
            Err(e @ (Error::Inadmissible { .. } | Error::IllConditioned { .. })) => {
                notes.push(format!("mu = {mu}, N = {modes}: {e}"));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Infeasible("no admissible design candidate".into())))
}

pub fn design(req: &DesignRequest) -> Result<DesignReport> {
    match req.goal {
        DesignGoal::Rate(target) => {
            let (mu0, _) = rate_search(req.nu, req.alpha, req.length, target)?;
            let accept = |mu: f64| -> Result<Option<usize>> {
                let n = match min_modes_rapid(req.nu, req.alpha, mu, req.length) {
                    Ok(n) => n,
                    Err(Error::Infeasible(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let ok = gamma_rate(req.nu, req.alpha, mu, n, req.length)?.value >= target;
                Ok(ok.then_some(n))
            };
            let (mu, modes, set, notes) = admissible_pair(req, mu0, accept)?;
            let mut report = DesignReport::from_formulas(req.nu, req.alpha, mu, modes, req.length)?
                .with_transform(&set, req.gn_constant)?;
            let bound = rapid_mode_bound(req.nu, req.alpha, mu, req.length)?;
            if !(modes as f64 > bound) || report.gamma < target {
                return Err(Error::Infeasible(format!("design check failed for mu = {mu}, N = {modes}")));
            }
            report.notes.extend(notes);
            report.notes.push(format!("target rate {target} reached with gamma = {}", report.gamma));
            Ok(report)
        }
        DesignGoal::Minimal => {
            let m = minimal_mode_setup(req.nu, req.alpha, req.length)?;
            if m.plant_stable() {
                let mut report = DesignReport::from_formulas(req.nu, req.alpha, 0.0, 0, req.length)?;
                report.notes.push("plant already stable; no control needed".into());
                return Ok(report);
            }
            let (lo, hi) = m
                .mu_interval
                .ok_or_else(|| Error::Infeasible("minimal-mode interval is empty".into()))?;
            let accept = |mu: f64| -> Result<Option<usize>> { Ok((mu > lo && mu < hi).then_some(m.modes)) };
            let (mu, modes, set, notes) = admissible_pair(req, 0.5 * (lo + hi), accept)?;
            let mut report = DesignReport::from_formulas(req.nu, req.alpha, mu, modes, req.length)?
                .with_transform(&set, req.gn_constant)?;
            if !(report.rho > 0.0) {
                return Err(Error::Infeasible(format!("rho = {} is not positive", report.rho)));
            }
            report.notes.extend(notes);
            Ok(report)
        }
    }
}

/// Partial configuration: every field optional, same names as
/// [`SimulationConfig`]. Used both for config files and command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub nu: Option<f64>,
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
    pub modes: Option<usize>,
    pub length: Option<f64>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub tmax: Option<f64>,
    pub model: Option<Model>,
    pub dynamics: Option<Dynamics>,
    pub control: Option<Control>,
    pub u0: Option<InitialCondition>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub newton_boundary: Option<NewtonBoundary>,
    pub solver: Option<LinearSolverKind>,
}

impl ConfigOverrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    /// Values present in `self` replace those of `base`.
    pub fn apply(&self, base: SimulationConfig) -> SimulationConfig {
        SimulationConfig {
            nu: self.nu.unwrap_or(base.nu),
            alpha: self.alpha.unwrap_or(base.alpha),
            mu: self.mu.unwrap_or(base.mu),
            modes: self.modes.unwrap_or(base.modes),
            length: self.length.unwrap_or(base.length),
            nx: self.nx.unwrap_or(base.nx),
            nt: self.nt.unwrap_or(base.nt),
            tmax: self.tmax.unwrap_or(base.tmax),
            model: self.model.unwrap_or(base.model),
            dynamics: self.dynamics.unwrap_or(base.dynamics),
            control: self.control.unwrap_or(base.control),
            u0: self.u0.clone().unwrap_or(base.u0),
            newton_tol: self.newton_tol.unwrap_or(base.newton_tol),
            newton_max_iter: self.newton_max_iter.unwrap_or(base.newton_max_iter),
            newton_boundary: self.newton_boundary.unwrap_or(base.newton_boundary),
            solver: self.solver.unwrap_or(base.solver),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// `t,g,l2_norm,h1_norm`, one row per time level, 17 significant digits.
pub fn write_norms_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "t,g,l2_norm,h1_norm")?;
        for n in 0..traj.len() {
            let g = traj.controls.get(n).copied().unwrap_or(0.0);
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", traj.times[n], g, traj.l2_norms[n], traj.h1_norms[n])?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Columns of a norms file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormsTable {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub l2_norm: Vec<f64>,
    pub h1_norm: Vec<f64>,
}

pub fn read_norms_csv(path: &Path) -> Result<NormsTable> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("t,g,l2_norm,h1_norm") => {}
        other => return Err(Error::invalid(format!("{}: unexpected header {other:?}", path.display()))),
    }
    let mut table = NormsTable::default();
    for (k, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("{}: line {}: {e}", path.display(), k + 2)))?;
        if vals.len() != 4 {
            return Err(Error::invalid(format!("{}: line {} has {} columns", path.display(), k + 2, vals.len())));
        }
        table.t.push(vals[0]);
        table.g.push(vals[1]);
        table.l2_norm.push(vals[2]);
        table.h1_norm.push(vals[3]);
    }
    Ok(table)
}

/// `t` followed by the node values, one row per time level.
pub fn write_state_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        let nx = traj.states.first().map_or(0, Vec::len);
        write!(out, "t")?;
        for j in 1..=nx {
            write!(out, ",u{j}")?;
        }
        writeln!(out)?;
        for (t, u) in traj.times.iter().zip(&traj.states) {
            write!(out, "{t:.16e}")?;
            for v in u {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: Option<&'a SimulationConfig>,
    files: Vec<String>,
}

/// Writes the run artifacts into `out_dir` (created if missing) and returns
/// the paths written. The manifest holds run metadata only.
pub fn export(
    out_dir: &Path,
    command: &str,
    config: Option<&SimulationConfig>,
    traj: Option<&Trajectory>,
    report: Option<&DesignReport>,
    fit: Option<&DecayFit>,
    full_state: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    if let Some(traj) = traj {
        let p = out_dir.join("norms.csv");
        write_norms_csv(&p, traj)?;
        written.push(p);
        if full_state {
            let p = out_dir.join("state.csv");
            write_state_csv(&p, traj)?;
            written.push(p);
        }
    }
    if let Some(report) = report {
        let p = out_dir.join("design.json");
        write_json(&p, report)?;
        written.push(p);
    }
    if let Some(fit) = fit {
        let p = out_dir.join("fit.json");
        write_json(&p, fit)?;
        written.push(p);
    }
    let files = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest =
        Manifest { tool: "backstep", version: env!("CARGO_PKG_VERSION"), command, config, files };
    let p = out_dir.join("manifest.json");
    write_json(&p, &manifest)?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64, n: usize, tmax: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|k| tmax * k as f64 / (n - 1) as f64).collect();
        let norms: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        Trajectory { times, l2_norms: norms.clone(), h1_norms: norms, ..Trajectory::default() }
    }

    #[test]
    fn fit_exact_exponential() {
        let traj = synthetic(|t| (-2.0 * t).exp(), 200, 3.0);
        let fit = fit_decay_rate(&traj, default_window(3.0), NormKind::L2).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_perturbed_and_flat() {
        let traj = synthetic(|t| (-2.0 * t).exp() * (1.0 + 0.01 * (20.0 * t).sin()), 400, 3.0);
        let fit = fit_decay_rate(&traj, default_window(3.0), NormKind::H1).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.05);
        let flat = synthetic(|_| 0.7, 100, 1.0);
        let fit = fit_decay_rate(&flat, default_window(1.0), NormKind::L2).unwrap();
        assert!(fit.rate.abs() < 1e-14);
        assert!((0.0..=1.0).contains(&fit.r_squared));
    }

    #[test]
    fn fit_errors() {
        let zero = synthetic(|t| if t > 0.5 { 0.0 } else { 1.0 }, 100, 1.0);
        assert!(matches!(fit_decay_rate(&zero, (0.3, 0.9), NormKind::L2), Err(Error::Fit(_))));
        let short = synthetic(|t| (-t).exp(), 12, 1.0);
        assert!(matches!(fit_decay_rate(&short, (0.3, 0.9), NormKind::L2), Err(Error::Fit(_))));
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.name()).unwrap(), p);
        }
        assert!(Preset::parse("exp3").is_err());
        let c = Preset::Exp2Uncontrolled.config();
        assert_eq!((c.nx, c.nt, c.modes), (1000, 1000, 2));
        assert_eq!(c.control, Control::Off);
    }

    #[test]
    fn rate_search_meets_target() {
        for target in [0.8, 5.0, 40.0] {
            let (mu, n) = rate_search(1.0, 12.0, 1.0, target).unwrap();
            let g = gamma_rate(1.0, 12.0, mu, n, 1.0).unwrap();
            assert!(g.value >= target);
            assert!(n as f64 > rapid_mode_bound(1.0, 12.0, mu, 1.0).unwrap());
        }
    }

    #[test]
    fn overrides_apply_only_present_fields() {
        let o: ConfigOverrides = serde_json::from_str(r#"{"mu": 9.5, "dynamics": "plant", "u0": {"series": {"sine": [1.0]}}}"#).unwrap();
        let c = o.apply(SimulationConfig::default());
        assert_eq!(c.mu, 9.5);
        assert_eq!(c.dynamics, Dynamics::Plant);
        assert_eq!(c.alpha, 12.0);
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"bogus": 1}"#).is_err());
    }
}
