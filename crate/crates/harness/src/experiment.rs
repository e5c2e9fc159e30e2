//! Monte-Carlo evaluation over sweep points and channel seeds.
//!
//! Each (point, seed) pair is one job: it draws the channels, runs the
//! proposed design and/or the baseline over the whole pulse-duration grid,
//! and keeps per-grid-point diagnostics. Jobs run on a rayon pool and are
//! collected in submission order, and every job is single-threaded, so the
//! results do not depend on the number of workers.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use isapt::baseline::{solve_baseline_fixed_tau, BaselineStatus};
use isapt::channel::ChannelSet;
use isapt::sca::{argmax_feasible_by, audit_design, solve_fixed_tau, FixedTauStatus, IsaptInstance, ScaError};
use isapt::sensing::{range_rmse, slot_duration, SensingError};
use isapt::CVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, SweepPoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot build the design problem: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("refusing to combine records from different configurations ({expected} vs {found})")]
    HashMismatch { expected: String, found: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Outcome of one grid point, for either scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Converged,
    IterationLimit,
    RankWarning,
    /// Baseline meeting the accuracy target with equality.
    Optimal,
    /// Baseline whose energy beam alone already meets the target.
    SensingSlack,
    Infeasible,
    NumericalFailure,
    /// No pulse duration satisfies the accuracy target at all.
    NoPulseWindow,
}

impl PointStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, Self::Converged | Self::IterationLimit | Self::RankWarning | Self::Optimal | Self::SensingSlack)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::IterationLimit => "iteration_limit",
            Self::RankWarning => "rank_warning",
            Self::Optimal => "optimal",
            Self::SensingSlack => "sensing_slack",
            Self::Infeasible => "infeasible",
            Self::NumericalFailure => "numerical_failure",
            Self::NoPulseWindow => "no_pulse_window",
        }
    }
}

impl fmt::Display for PointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Self::Converged,
            Self::IterationLimit,
            Self::RankWarning,
            Self::Optimal,
            Self::SensingSlack,
            Self::Infeasible,
            Self::NumericalFailure,
            Self::NoPulseWindow,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

impl From<FixedTauStatus> for PointStatus {
    fn from(s: FixedTauStatus) -> Self {
        match s {
            FixedTauStatus::Converged => Self::Converged,
            FixedTauStatus::IterationLimit => Self::IterationLimit,
            FixedTauStatus::RankWarning => Self::RankWarning,
            FixedTauStatus::Infeasible => Self::Infeasible,
            FixedTauStatus::NumericalFailure => Self::NumericalFailure,
        }
    }
}

impl From<BaselineStatus> for PointStatus {
    fn from(s: BaselineStatus) -> Self {
        match s {
            BaselineStatus::Optimal => Self::Optimal,
            BaselineStatus::SensingSlack => Self::SensingSlack,
            BaselineStatus::Infeasible => Self::Infeasible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeKind {
    Proposed,
    Baseline,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Baseline => "baseline",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "baseline" => Ok(Self::Baseline),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub tau: f64,
    pub status: PointStatus,
    /// Harvested-power objective in W; `None` unless feasible.
    pub objective: Option<f64>,
    /// SDP solves (0 for the baseline).
    pub iterations: usize,
    pub rank_ratio: f64,
    /// Largest KKT residual over the inner solves.
    pub max_kkt: f64,
    /// Worst drop of the objective between consecutive SCA iterates.
    pub ascent_drop: f64,
    pub mixing_rho: Option<f64>,
}

/// The best grid point of one seed and its constraint audit.
#[derive(Debug, Clone, PartialEq)]
pub struct BestDesign {
    pub index: usize,
    pub tau: f64,
    pub objective: f64,
    pub duty_cycle: f64,
    /// Smallest relative constraint slack.
    pub min_slack: f64,
    pub range_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    pub scheme: SchemeKind,
    pub grid: Vec<GridOutcome>,
    /// Why the grid is empty, when it is.
    pub window_error: Option<String>,
    pub best: Option<BestDesign>,
}

impl SchemeRun {
    pub fn numerical_failures(&self) -> usize {
        self.grid.iter().filter(|g| g.status == PointStatus::NumericalFailure).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub schemes: Vec<SchemeRun>,
}

impl SeedRun {
    pub fn scheme(&self, kind: SchemeKind) -> Option<&SchemeRun> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRuns {
    pub point: SweepPoint,
    pub seeds: Vec<SeedRun>,
}

/// Results of a whole Monte-Carlo run.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub config_hash: String,
    pub points: Vec<PointRuns>,
    pub elapsed: Duration,
    pub threads: usize,
}

impl MonteCarlo {
    pub fn scheme_runs(&self) -> impl Iterator<Item = (&SweepPoint, &SeedRun, &SchemeRun)> {
        self.points
            .iter()
            .flat_map(|p| p.seeds.iter().flat_map(move |s| s.schemes.iter().map(move |r| (&p.point, s, r))))
    }

    pub fn numerical_failures(&self) -> usize {
        self.scheme_runs().map(|(_, _, r)| r.numerical_failures()).sum()
    }
}

/// The design problem of one realization at one sweep point.
pub fn build_instance(config: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Result<IsaptInstance, HarnessError> {
    let c = config.at_point(point);
    let geometry = c.geometry();
    let channels = ChannelSet::generate(seed, &c.placements(), &geometry, c.nodes.k_factor);
    let receivers = c.receivers().map_err(|e| HarnessError::Model(e.to_string()))?;
    IsaptInstance::new(geometry, c.scenario(), receivers, channels, c.budget(), c.solver.n_tau, c.sca_settings())
        .map_err(|e| HarnessError::Model(e.to_string()))
}

/// The pulse-duration grid, or the reason none exists.
pub fn pulse_grid(instance: &IsaptInstance) -> Result<Result<Vec<f64>, String>, HarnessError> {
    match instance.tau_grid() {
        Ok(grid) => Ok(Ok(grid)),
        Err(ScaError::Sensing(e @ (SensingError::NoRealRoot { .. } | SensingError::EmptyPulseWindow { .. }))) => {
            Ok(Err(e.to_string()))
        }
        Err(e) => Err(HarnessError::Model(e.to_string())),
    }
}

fn best_design(
    grid: &[GridOutcome],
    pulses: &[(f64, CVector)],
    instance: &IsaptInstance,
) -> Result<Option<BestDesign>, HarnessError> {
    let Some(index) = argmax_feasible_by(grid, |g| g.objective) else {
        return Ok(None);
    };
    let g = &grid[index];
    let (amplitude, beam) = &pulses[index];
    let model = |e: ScaError| HarnessError::Model(e.to_string());
    let audit = audit_design(g.tau, *amplitude, beam, instance).map_err(model)?;
    let s = instance.scenario();
    let rmse = range_rmse(g.tau, *amplitude, beam, instance.constants(), s, instance.u())
        .map_err(|e| HarnessError::Model(e.to_string()))?;
    Ok(Some(BestDesign {
        index,
        tau: g.tau,
        objective: g.objective.expect("argmax is feasible"),
        duty_cycle: g.tau / slot_duration(g.tau, s),
        min_slack: audit.min_slack(),
        range_rmse: rmse,
    }))
}

fn run_proposed(grid: &[f64], instance: &IsaptInstance) -> Result<SchemeRun, HarnessError> {
    let mut outcomes = Vec::with_capacity(grid.len());
    let mut pulses = Vec::with_capacity(grid.len());
    for &tau in grid {
        let (outcome, pulse) = match solve_fixed_tau(tau, instance) {
            Ok(r) => (
                GridOutcome {
                    tau,
                    status: r.status.into(),
                    objective: r.status.is_feasible().then_some(r.objective),
                    iterations: r.iterations,
                    rank_ratio: r.rank_ratio,
                    max_kkt: r.max_kkt_residual,
                    ascent_drop: r.worst_ascent_drop(),
                    mixing_rho: None,
                },
                (r.amplitude, r.beam),
            ),
            // kept as a marked point so the rest of the grid survives
            Err(_) => (failed(tau), (0.0, CVector::zeros(instance.geometry().n_t))),
        };
        outcomes.push(outcome);
        pulses.push(pulse);
    }
    let best = best_design(&outcomes, &pulses, instance)?;
    Ok(SchemeRun { scheme: SchemeKind::Proposed, grid: outcomes, window_error: None, best })
}

fn run_baseline(grid: &[f64], instance: &IsaptInstance) -> Result<SchemeRun, HarnessError> {
    let mut outcomes = Vec::with_capacity(grid.len());
    let mut pulses = Vec::with_capacity(grid.len());
    for &tau in grid {
        let (outcome, pulse) = match solve_baseline_fixed_tau(tau, instance) {
            Ok(b) => (
                GridOutcome {
                    tau,
                    status: b.status.into(),
                    objective: b.status.is_feasible().then_some(b.objective),
                    iterations: 0,
                    rank_ratio: 0.0,
                    max_kkt: 0.0,
                    ascent_drop: 0.0,
                    mixing_rho: b.status.is_feasible().then_some(b.mixing_rho),
                },
                (b.amplitude, b.beam),
            ),
            Err(_) => (failed(tau), (0.0, CVector::zeros(instance.geometry().n_t))),
        };
        outcomes.push(outcome);
        pulses.push(pulse);
    }
    let best = best_design(&outcomes, &pulses, instance)?;
    Ok(SchemeRun { scheme: SchemeKind::Baseline, grid: outcomes, window_error: None, best })
}

fn failed(tau: f64) -> GridOutcome {
    GridOutcome {
        tau,
        status: PointStatus::NumericalFailure,
        objective: None,
        iterations: 0,
        rank_ratio: 0.0,
        max_kkt: 0.0,
        ascent_drop: 0.0,
        mixing_rho: None,
    }
}

/// Every selected scheme for one (point, seed) pair.
pub fn run_seed(config: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Result<SeedRun, HarnessError> {
    let instance = build_instance(config, point, seed)?;
    let scheme = config.run.scheme;
    let kinds: Vec<SchemeKind> = [(scheme.proposed(), SchemeKind::Proposed), (scheme.baseline(), SchemeKind::Baseline)]
        .into_iter()
        .filter_map(|(on, k)| on.then_some(k))
        .collect();
    let schemes = match pulse_grid(&instance)? {
        Err(reason) => kinds
            .into_iter()
            .map(|scheme| SchemeRun { scheme, grid: Vec::new(), window_error: Some(reason.clone()), best: None })
            .collect(),
        Ok(grid) => kinds
            .into_iter()
            .map(|k| match k {
                SchemeKind::Proposed => run_proposed(&grid, &instance),
                SchemeKind::Baseline => run_baseline(&grid, &instance),
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(SeedRun { seed, schemes })
}

/// A pool with `threads` workers; 0 means one per core.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Runs every seed of the configuration at every point.
pub fn run_points(config: &ExperimentConfig, points: &[SweepPoint]) -> Result<MonteCarlo, HarnessError> {
    let start = Instant::now();
    let seeds: Vec<u64> = config.seeds().collect();
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let pool = thread_pool(config.run.parallel)?;
    let threads = pool.current_num_threads();
    let results: Vec<SeedRun> =
        pool.install(|| jobs.par_iter().map(|&(p, seed)| run_seed(config, &points[p], seed)).collect::<Result<_, _>>())?;
    let mut results = results.into_iter();
    let points = points
        .iter()
        .map(|point| PointRuns { point: *point, seeds: results.by_ref().take(seeds.len()).collect() })
        .collect();
    Ok(MonteCarlo { config_hash: config.hash(), points, elapsed: start.elapsed(), threads })
}
