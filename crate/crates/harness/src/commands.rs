//! The work behind each CLI verb, as library functions.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use isapt::baseline::{baseline_from_points, solve_baseline_fixed_tau, BaselineDesign, BaselineSolution};
use isapt::eh::harvested_power_phi;
use isapt::sca::{design_from_points, solve_fixed_tau, DesignSolution, FixedTauResult};
use isapt::sensing::{radar_constants, slot_duration, steering_vector, tau_max, tau_min, feasible_tau_grid};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepPoint};
use crate::experiment::{build_instance, pulse_grid, run_points, thread_pool, HarnessError, MonteCarlo, SchemeKind};
use crate::record::{create_with_header, write_curve_csv, write_summary_csv, SweepRecord};

/// How a verb ended; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Infeasible,
    NumericalFailure,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Success => 0,
            Self::Infeasible => 3,
            Self::NumericalFailure => 4,
        }
    }
}

/// Exit code for configuration errors.
pub const CONFIG_ERROR_EXIT: u8 = 2;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn output_dir(config: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    let dir = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

/// Saves the resolved configuration next to the results. Timing lives here
/// rather than in the CSV files so those stay byte-reproducible.
fn write_run_info(dir: &Path, kind: &str, config: &ExperimentConfig, runs: &MonteCarlo) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("{kind}_config.toml"));
    let text = format!(
        "# resolved configuration of the last `{kind}` run\n# config_sha256 = {}\n# elapsed_s = {:.3}\n# threads = {}\n\n{}",
        runs.config_hash,
        runs.elapsed.as_secs_f64(),
        runs.threads,
        config.to_toml()
    );
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn outcome_of(runs: &MonteCarlo) -> Outcome {
    if runs.numerical_failures() > 0 {
        Outcome::NumericalFailure
    } else {
        Outcome::Success
    }
}

/// A finished Monte-Carlo verb: in-memory results plus the files written.
#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub runs: MonteCarlo,
    pub record: SweepRecord,
    pub files: Vec<PathBuf>,
    pub outcome: Outcome,
}

/// Seed-averaged curve over the pulse grid for every average-power budget.
pub fn run_fig2(config: &ExperimentConfig) -> Result<FigureOutput, HarnessError> {
    let runs = run_points(config, &config.fig2_points())?;
    let record = SweepRecord::from_runs("fig2", &runs);
    let dir = output_dir(config)?;
    let mut files = Vec::new();
    for point in record.points() {
        for scheme in record.schemes() {
            let curve = record.curve(&point, scheme);
            let scenario = config.at_point(&point).scenario();
            let mut extra = vec![format!("point: {point}"), format!("realizations = {}", config.run.realizations)];
            if let Some(k) = SweepRecord::curve_argmax(&curve) {
                let tau = curve[k].tau_s;
                extra.push(format!("tau_star_s = {tau:e} (argmax of mean_obj_W)"));
                extra.push(format!("duty_cycle = {}", tau / slot_duration(tau, &scenario)));
            }
            let path = dir.join(format!("fig2_{scheme}_pavg{}.csv", point.p_avg_w));
            let title = format!("isapt fig2 curve, {scheme} scheme");
            write_curve_csv(&path, &title, &record.config_hash, &extra, &curve, scheme == SchemeKind::Baseline)?;
            files.push(path);
        }
    }
    finish("fig2", config, runs, record, dir, files)
}

fn finish(
    kind: &str,
    config: &ExperimentConfig,
    runs: MonteCarlo,
    record: SweepRecord,
    dir: PathBuf,
    mut files: Vec<PathBuf>,
) -> Result<FigureOutput, HarnessError> {
    let seeds = dir.join(format!("{kind}_seeds.csv"));
    record.write_csv(&seeds)?;
    files.push(seeds);
    files.push(write_run_info(&dir, kind, config, &runs)?);
    let outcome = outcome_of(&runs);
    Ok(FigureOutput { runs, record, files, outcome })
}

fn run_summary(kind: &str, config: &ExperimentConfig, points: &[SweepPoint]) -> Result<FigureOutput, HarnessError> {
    let runs = run_points(config, points)?;
    let record = SweepRecord::from_runs(kind, &runs);
    let dir = output_dir(config)?;
    let path = dir.join(format!("{kind}.csv"));
    write_summary_csv(&path, &format!("isapt {kind} summary, each seed at its own best pulse duration"), &record)?;
    finish(kind, config, runs, record, dir, vec![path])
}

/// Accuracy trade-off: every `fig3` point, both schemes side by side.
pub fn run_fig3(config: &ExperimentConfig) -> Result<FigureOutput, HarnessError> {
    run_summary("fig3", config, &config.fig3_points())
}

/// Product of the `sweep` axes.
pub fn run_sweep(config: &ExperimentConfig) -> Result<FigureOutput, HarnessError> {
    run_summary("sweep", config, &config.sweep_points())
}

/// Single-realization design with a printable report.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub seed: u64,
    pub design: Option<DesignSolution>,
    pub baseline: Option<BaselineDesign>,
    pub report: String,
    pub files: Vec<PathBuf>,
    pub outcome: Outcome,
}

/// Runs the full grid search for one channel draw at the base point.
pub fn run_solve(config: &ExperimentConfig, seed: u64) -> Result<SolveOutput, HarnessError> {
    let point = config.base_point();
    let instance = build_instance(config, &point, seed)?;
    let hash = config.hash();
    let mut report = String::new();
    let _ = writeln!(report, "seed {seed}, {point}");
    let grid = match pulse_grid(&instance)? {
        Ok(grid) => grid,
        Err(reason) => {
            let _ = writeln!(report, "infeasible: {reason}");
            return Ok(SolveOutput { seed, design: None, baseline: None, report, files: Vec::new(), outcome: Outcome::Infeasible });
        }
    };
    let pool = thread_pool(config.run.parallel)?;
    let scheme = config.run.scheme;
    let proposed: Option<Vec<FixedTauResult>> = scheme
        .proposed()
        .then(|| pool.install(|| grid.par_iter().map(|&t| solve_fixed_tau(t, &instance)).collect::<Result<_, _>>()))
        .transpose()
        .map_err(|e| HarnessError::Model(e.to_string()))?;
    let baseline: Option<Vec<BaselineSolution>> = scheme
        .baseline()
        .then(|| pool.install(|| grid.par_iter().map(|&t| solve_baseline_fixed_tau(t, &instance)).collect::<Result<_, _>>()))
        .transpose()
        .map_err(|e| HarnessError::Model(e.to_string()))?;

    let failures = proposed.iter().flatten().filter(|p| p.status == isapt::sca::FixedTauStatus::NumericalFailure).count();
    let design = match &proposed {
        Some(points) if points.iter().any(|p| p.status.is_feasible()) => {
            Some(design_from_points(points.clone(), &instance).map_err(|e| HarnessError::Model(e.to_string()))?)
        }
        _ => None,
    };
    let base_design = match &baseline {
        Some(points) if points.iter().any(|p| p.status.is_feasible()) => {
            Some(baseline_from_points(points.clone()).map_err(|e| HarnessError::Model(e.to_string()))?)
        }
        _ => None,
    };

    let s = instance.scenario();
    let _ = writeln!(report, "pulse window [{:.6e}, {:.6e}] s, {} grid points", grid[0], tau_max(s), grid.len());
    if let Some(d) = &design {
        let _ = writeln!(report, "proposed design");
        let _ = writeln!(report, "  tau*            {:.6e} s", d.tau_star);
        let _ = writeln!(report, "  duty cycle      {:.2} %", 100.0 * d.duty_cycle);
        let _ = writeln!(report, "  amplitude A*    {:.6} sqrt(W) (peak power {:.4} W)", d.amplitude_star, d.amplitude_star.powi(2));
        let _ = writeln!(report, "  objective       {:.6} uW", d.objective * 1e6);
        let _ = writeln!(report, "  range rmse      {:.6e} m (target {} m)", d.range_rmse, s.r_hat_max);
        for (m, (p, h)) in d.received_powers.iter().zip(&d.harvested_powers).enumerate() {
            let _ = writeln!(report, "  node {m}: received {:.4} uW, harvested {:.6} uW", p * 1e6, h * 1e6);
        }
        let a = &d.audit;
        let _ = writeln!(report, "  relative slack: accuracy {:.3e}, average power {:.3e}, peak power {:.3e}, pulse window {:.3e}", a.c1, a.c2, a.c3, a.c5);
        for (m, c) in a.c4.iter().enumerate() {
            let _ = writeln!(report, "                  receiver {m} limit {c:.3e}");
        }
    } else if scheme.proposed() {
        let _ = writeln!(report, "proposed design: no feasible pulse duration");
    }
    if let Some(b) = &base_design {
        let _ = writeln!(
            report,
            "baseline: tau* {:.6e} s, objective {:.6} uW, mixing rho {:.6}",
            b.best.tau,
            b.best.objective * 1e6,
            b.best.mixing_rho
        );
    }
    if failures > 0 {
        let _ = writeln!(report, "{failures} grid points hit a numerical failure");
    }

    let dir = output_dir(config)?;
    let path = dir.join(format!("solve_seed{seed}.csv"));
    let mut extra = vec![format!("seed = {seed}"), format!("point: {point}")];
    if let Some(d) = &design {
        extra.push(format!("tau_star_s = {:e}", d.tau_star));
        extra.push(format!("duty_cycle = {}", d.duty_cycle));
    }
    let file = create_with_header(
        &path,
        "isapt single-realization grid",
        &hash,
        &extra,
        "tau_s [s], proposed_obj_W [W], baseline_obj_W [W]",
    )?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| HarnessError::Format { path: path.display().to_string(), message: e.to_string() };
    w.write_record([
        "tau_s",
        "proposed_status",
        "proposed_obj_W",
        "iterations",
        "rank_ratio",
        "baseline_status",
        "baseline_obj_W",
        "mixing_rho",
    ])
    .map_err(csv_err)?;
    for (k, tau) in grid.iter().enumerate() {
        let p = proposed.as_ref().map(|v| &v[k]);
        let b = baseline.as_ref().map(|v| &v[k]);
        w.write_record([
            format!("{tau:e}"),
            p.map_or(String::new(), |p| crate::experiment::PointStatus::from(p.status).to_string()),
            p.filter(|p| p.status.is_feasible()).map_or(String::new(), |p| format!("{:e}", p.objective)),
            p.map_or(String::new(), |p| p.iterations.to_string()),
            p.map_or(String::new(), |p| format!("{:e}", p.rank_ratio)),
            b.map_or(String::new(), |b| crate::experiment::PointStatus::from(b.status).to_string()),
            b.filter(|b| b.status.is_feasible()).map_or(String::new(), |b| format!("{:e}", b.objective)),
            b.filter(|b| b.status.is_feasible()).map_or(String::new(), |b| b.mixing_rho.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    let feasible = design.is_some() || base_design.is_some();
    let outcome = if failures > 0 {
        Outcome::NumericalFailure
    } else if feasible {
        Outcome::Success
    } else {
        Outcome::Infeasible
    };
    Ok(SolveOutput { seed, design, baseline: base_design, report, files: vec![path], outcome })
}

/// The admissible pulse window of the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub tau_min: Result<f64, String>,
    pub tau_max: f64,
    pub grid: Vec<f64>,
    pub config_hash: String,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        !self.grid.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# isapt feasibility\n# config_sha256 = {}", self.config_hash);
        match &self.tau_min {
            Ok(t) => {
                let _ = writeln!(out, "# tau_min_s = {t:e}");
            }
            Err(e) => {
                let _ = writeln!(out, "# tau_min_s = none ({e})");
            }
        }
        let _ = writeln!(out, "# tau_max_s = {:e}", self.tau_max);
        let _ = writeln!(out, "# verdict = {}", if self.is_feasible() { "feasible" } else { "infeasible" });
        let _ = writeln!(out, "# units: tau_s [s]\nk,tau_s");
        for (k, t) in self.grid.iter().enumerate() {
            let _ = writeln!(out, "{k},{t:e}");
        }
        out
    }
}

pub fn feasibility(config: &ExperimentConfig) -> Feasibility {
    let scenario = config.scenario();
    let geometry = config.geometry();
    let u = steering_vector(&geometry, scenario.alpha);
    let constants = radar_constants(&scenario, &geometry, &u);
    let p_p = config.power.p_p_w;
    Feasibility {
        tau_min: tau_min(&scenario, &geometry, &constants, p_p).map_err(|e| e.to_string()),
        tau_max: tau_max(&scenario),
        grid: feasible_tau_grid(&scenario, &geometry, &constants, p_p, config.solver.n_tau).unwrap_or_default(),
        config_hash: config.hash(),
    }
}

/// `(p_in, phi(p_in))` on `n` log-spaced inputs from `from` to the
/// harvester's peak input power.
pub fn eh_curve(config: &ExperimentConfig, from: f64, n: usize) -> Result<Vec<(f64, f64)>, HarnessError> {
    let circuit = config.circuit();
    let top = circuit.p_max;
    if !(from > 0.0 && from < top) || n < 2 {
        return Err(HarnessError::Model(format!("need 0 < from < {top} W and at least two points")));
    }
    (0..n)
        .map(|i| {
            let p = if i + 1 == n { top } else { from * (top / from).powf(i as f64 / (n - 1) as f64) };
            harvested_power_phi(p, &circuit).map(|phi| (p, phi)).map_err(|e| HarnessError::Model(e.to_string()))
        })
        .collect()
}

pub fn write_eh_curve(config: &ExperimentConfig, curve: &[(f64, f64)]) -> Result<PathBuf, HarnessError> {
    let dir = output_dir(config)?;
    let path = dir.join("eh_curve.csv");
    let mut f = create_with_header(&path, "isapt harvester curve", &config.hash(), &[], "p_in_W [W], phi_W [W]")?;
    let mut text = String::from("p_in_W,phi_W\n");
    for (p, phi) in curve {
        let _ = writeln!(text, "{p:e},{phi:e}");
    }
    f.write_all(text.as_bytes()).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_window() {
        let f = feasibility(&ExperimentConfig::table1());
        let t = f.tau_min.clone().unwrap();
        assert!((t / 1.2085e-8 - 1.0).abs() < 1e-3);
        assert_eq!(f.tau_max, 1.2e-7);
        assert_eq!(f.grid.len(), 50);
        let csv = f.to_csv();
        assert!(csv.contains("# verdict = feasible"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 51);
    }

    #[test]
    fn low_peak_power_is_infeasible() {
        let mut c = ExperimentConfig::table1();
        c.power.p_p_w = 1e-4;
        let f = feasibility(&c);
        assert!(!f.is_feasible());
        assert!(f.tau_min.is_err());
        assert!(f.to_csv().contains("# verdict = infeasible"));
    }

    #[test]
    fn eh_curve_is_increasing_and_ends_at_the_cap() {
        let c = ExperimentConfig::table1();
        let curve = eh_curve(&c, 1e-9, 50).unwrap();
        assert_eq!(curve.len(), 50);
        assert_eq!(curve[49].0, 25e-6);
        assert!(curve.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(eh_curve(&c, 0.0, 50).is_err());
        assert!(eh_curve(&c, 1e-9, 1).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::Success.exit_code(), 0);
        assert_eq!(CONFIG_ERROR_EXIT, 2);
        assert_eq!(Outcome::Infeasible.exit_code(), 3);
        assert_eq!(Outcome::NumericalFailure.exit_code(), 4);
    }
}
