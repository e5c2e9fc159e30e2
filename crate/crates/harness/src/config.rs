//! Experiment configuration.
//!
//! A configuration is resolved in three layers: a named profile supplies
//! every key, an optional TOML file overrides some of them, and `--set
//! section.key=value` pairs override those. The merged document is then
//! deserialized strictly, so misspelled keys are rejected with their path.
//!
//! Only the `table1` profile exists; it reproduces the reference scenario
//! (10-antenna array at 2.4 GHz, target at -60 degrees and 18 to 20 m, three
//! harvesting nodes at 5 m).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use isapt::channel::EhNodePlacement;
use isapt::eh::{EhCircuit, EhReceiverSet};
use isapt::sca::{PowerBudget, ScaSettings};
use isapt::sensing::{dbm_to_watts, ArrayGeometry, SensingScenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("TOML syntax error: {0}")]
    Syntax(String),
    #[error("at `{key}`: {message}")]
    Schema { key: String, message: String },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("bad override `{spec}`: {reason}")]
    Override { spec: String, reason: String },
    #[error("unknown profile `{0}` (available: table1)")]
    UnknownProfile(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Table1,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table1" => Ok(Self::Table1),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }
}

/// Which designs a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Baseline,
    Both,
}

impl Scheme {
    pub fn proposed(self) -> bool {
        matches!(self, Self::Proposed | Self::Both)
    }

    pub fn baseline(self) -> bool {
        matches!(self, Self::Baseline | Self::Both)
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown scheme `{other}` (proposed, baseline or both)")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::Baseline => "baseline",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub realizations: u64,
    /// Realization `r` draws its channels with seed `base_seed + r`.
    pub base_seed: u64,
    /// Worker threads; 0 uses one per core.
    pub parallel: usize,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub n_t: usize,
    pub wavelength_m: f64,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub r_hat_max_m: f64,
    pub target_angle_deg: f64,
    pub sigma_rcs_m2: f64,
    pub bandwidth_hz: f64,
    pub sigma_n_dbm: f64,
    pub t_sen_s: f64,
    pub t_coh_s: f64,
    pub speed_of_light_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub p_avg_w: f64,
    pub p_p_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterSection {
    pub a: f64,
    pub c: f64,
    pub i_s_a: f64,
    pub r_l_ohm: f64,
    pub p_max_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesSection {
    pub distances_m: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub weights: Vec<f64>,
    pub k_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub n_tau: usize,
    /// Objective change, in microwatts, that ends the SCA loop.
    pub epsilon_sca: f64,
    pub relative_tol: f64,
    pub max_iters: usize,
    pub rank_tol: f64,
}

/// Average-power budgets of the pulse-duration curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Section {
    pub p_avg_w: Vec<f64>,
}

/// Accuracy sweep: every `r_hat_max_m` value for each `(r_min_m[i],
/// p_p_w[i])` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig3Section {
    pub r_hat_max_m: Vec<f64>,
    pub r_min_m: Vec<f64>,
    pub p_p_w: Vec<f64>,
}

/// Cartesian product of these axes for the generic `sweep` verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub p_avg_w: Vec<f64>,
    pub p_p_w: Vec<f64>,
    pub r_hat_max_m: Vec<f64>,
    pub r_min_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub output: OutputSection,
    pub array: ArraySection,
    pub sensing: SensingSection,
    pub power: PowerSection,
    pub harvester: HarvesterSection,
    pub nodes: NodesSection,
    pub solver: SolverSection,
    pub fig2: Fig2Section,
    pub fig3: Fig3Section,
    pub sweep: SweepSection,
}

/// The values one Monte-Carlo point overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub p_avg_w: f64,
    pub p_p_w: f64,
    pub r_hat_max_m: f64,
    pub r_min_m: f64,
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "p_avg_w={} p_p_w={} r_hat_max_m={} r_min_m={}",
            self.p_avg_w, self.p_p_w, self.r_hat_max_m, self.r_min_m
        )
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Table1 => Self::table1(),
        }
    }

    pub fn table1() -> Self {
        Self {
            run: RunSection { realizations: 100, base_seed: 1, parallel: 0, scheme: Scheme::Both },
            output: OutputSection { dir: "results".into() },
            array: ArraySection { n_t: 10, wavelength_m: 0.125, spacing_wavelengths: 0.5 },
            sensing: SensingSection {
                r_min_m: 18.0,
                r_max_m: 20.0,
                r_hat_max_m: 0.02,
                target_angle_deg: -60.0,
                sigma_rcs_m2: 1.0,
                bandwidth_hz: 10e6,
                sigma_n_dbm: -80.0,
                t_sen_s: 1e-3,
                t_coh_s: 1e-3,
                speed_of_light_mps: isapt::sensing::SPEED_OF_LIGHT,
            },
            power: PowerSection { p_avg_w: 0.5, p_p_w: 0.5 },
            harvester: HarvesterSection { a: 1.29, c: 1.55e3, i_s_a: 5e-6, r_l_ohm: 1e4, p_max_w: 25e-6 },
            nodes: NodesSection {
                distances_m: vec![5.0; 3],
                angles_deg: vec![45.0, 60.0, 75.0],
                weights: vec![1.0 / 3.0; 3],
                k_factor: 1.0,
            },
            solver: SolverSection { n_tau: 50, epsilon_sca: 1e-7, relative_tol: 1e-6, max_iters: 100, rank_tol: 1e-6 },
            fig2: Fig2Section { p_avg_w: vec![0.1, 0.5] },
            fig3: Fig3Section {
                r_hat_max_m: vec![0.01, 0.02, 0.04, 0.06],
                r_min_m: vec![5.0, 5.0, 18.0],
                p_p_w: vec![0.5, 1.0, 0.5],
            },
            sweep: SweepSection { p_avg_w: vec![0.5], p_p_w: vec![0.5, 1.0], r_hat_max_m: vec![0.02], r_min_m: vec![18.0] },
        }
    }

    /// Checks every range restriction, naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive and finite, got {v}")))
            }
        }
        fn positive_list(key: &str, values: &[f64]) -> Result<(), ConfigError> {
            if values.is_empty() {
                return Err(invalid(key, "must not be empty"));
            }
            values.iter().enumerate().try_for_each(|(i, v)| positive(&format!("{key}[{i}]"), *v))
        }

        if self.run.realizations == 0 {
            return Err(invalid("run.realizations", "must be at least 1"));
        }
        if self.run.base_seed.checked_add(self.run.realizations).is_none() {
            return Err(invalid("run.base_seed", "seed range overflows u64"));
        }
        if self.output.dir.is_empty() {
            return Err(invalid("output.dir", "must not be empty"));
        }
        if self.array.n_t == 0 {
            return Err(invalid("array.n_t", "must be at least 1"));
        }
        positive("array.wavelength_m", self.array.wavelength_m)?;
        positive("array.spacing_wavelengths", self.array.spacing_wavelengths)?;

        let s = &self.sensing;
        positive("sensing.r_min_m", s.r_min_m)?;
        positive("sensing.r_max_m", s.r_max_m)?;
        positive("sensing.r_hat_max_m", s.r_hat_max_m)?;
        positive("sensing.sigma_rcs_m2", s.sigma_rcs_m2)?;
        positive("sensing.bandwidth_hz", s.bandwidth_hz)?;
        positive("sensing.t_sen_s", s.t_sen_s)?;
        positive("sensing.t_coh_s", s.t_coh_s)?;
        positive("sensing.speed_of_light_mps", s.speed_of_light_mps)?;
        if !s.sigma_n_dbm.is_finite() {
            return Err(invalid("sensing.sigma_n_dbm", "must be finite"));
        }
        if !(s.target_angle_deg.is_finite() && s.target_angle_deg.abs() <= 90.0) {
            return Err(invalid("sensing.target_angle_deg", "must lie in [-90, 90]"));
        }
        if s.r_min_m >= s.r_max_m {
            return Err(invalid("sensing.r_min_m", format!("must be below sensing.r_max_m = {}", s.r_max_m)));
        }

        positive("power.p_avg_w", self.power.p_avg_w)?;
        positive("power.p_p_w", self.power.p_p_w)?;

        let h = &self.harvester;
        positive("harvester.a", h.a)?;
        positive("harvester.c", h.c)?;
        positive("harvester.i_s_a", h.i_s_a)?;
        positive("harvester.r_l_ohm", h.r_l_ohm)?;
        positive("harvester.p_max_w", h.p_max_w)?;

        let n = &self.nodes;
        positive_list("nodes.distances_m", &n.distances_m)?;
        let m = n.distances_m.len();
        for (key, len) in [("nodes.angles_deg", n.angles_deg.len()), ("nodes.weights", n.weights.len())] {
            if len != m {
                return Err(invalid(key, format!("has {len} entries for {m} nodes")));
            }
        }
        if let Some(i) = n.angles_deg.iter().position(|a| !a.is_finite()) {
            return Err(invalid(&format!("nodes.angles_deg[{i}]"), "must be finite"));
        }
        positive_list("nodes.weights", &n.weights)?;
        if n.k_factor.is_nan() || n.k_factor < 0.0 {
            return Err(invalid("nodes.k_factor", format!("must be non-negative, got {}", n.k_factor)));
        }

        let sv = &self.solver;
        if sv.n_tau == 0 {
            return Err(invalid("solver.n_tau", "must be at least 1"));
        }
        positive("solver.epsilon_sca", sv.epsilon_sca)?;
        if !(sv.relative_tol >= 0.0 && sv.relative_tol.is_finite()) {
            return Err(invalid("solver.relative_tol", "must be non-negative"));
        }
        if sv.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be at least 1"));
        }
        positive("solver.rank_tol", sv.rank_tol)?;

        positive_list("fig2.p_avg_w", &self.fig2.p_avg_w)?;
        positive_list("fig3.r_hat_max_m", &self.fig3.r_hat_max_m)?;
        positive_list("fig3.r_min_m", &self.fig3.r_min_m)?;
        positive_list("fig3.p_p_w", &self.fig3.p_p_w)?;
        if self.fig3.r_min_m.len() != self.fig3.p_p_w.len() {
            return Err(invalid("fig3.p_p_w", "must pair one-to-one with fig3.r_min_m"));
        }
        positive_list("sweep.p_avg_w", &self.sweep.p_avg_w)?;
        positive_list("sweep.p_p_w", &self.sweep.p_p_w)?;
        positive_list("sweep.r_hat_max_m", &self.sweep.r_hat_max_m)?;
        positive_list("sweep.r_min_m", &self.sweep.r_min_m)?;
        for (key, list) in [("fig3.r_min_m", &self.fig3.r_min_m), ("sweep.r_min_m", &self.sweep.r_min_m)] {
            if let Some(i) = list.iter().position(|r| *r >= s.r_max_m) {
                return Err(invalid(&format!("{key}[{i}]"), "must be below sensing.r_max_m"));
            }
        }

        // the library's own checks catch anything left
        self.geometry();
        self.scenario().validate().map_err(|e| invalid("sensing", e.to_string()))?;
        self.receivers().map_err(|e| invalid("harvester", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, leaving out the keys that cannot
    /// change the result of any single seed: output directory, thread count,
    /// scheme and the seed range itself (every row records its own seed).
    /// Runs over different seed ranges of one setup can thus be combined.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = String::new();
        canonical.run.parallel = 0;
        canonical.run.scheme = Scheme::Both;
        canonical.run.realizations = 1;
        canonical.run.base_seed = 0;
        let text = toml::to_string(&canonical).expect("configuration serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn geometry(&self) -> ArrayGeometry {
        let a = &self.array;
        ArrayGeometry { n_t: a.n_t, spacing: a.spacing_wavelengths * a.wavelength_m, wavelength: a.wavelength_m }
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.sensing.sigma_n_dbm)
    }

    pub fn scenario(&self) -> SensingScenario {
        let s = &self.sensing;
        SensingScenario {
            r_min: s.r_min_m,
            r_max: s.r_max_m,
            alpha: s.target_angle_deg.to_radians(),
            sigma_rcs: s.sigma_rcs_m2,
            bandwidth: s.bandwidth_hz,
            noise_power: self.noise_power_w(),
            t_sen: s.t_sen_s,
            t_coh: s.t_coh_s,
            r_hat_max: s.r_hat_max_m,
            speed_of_light: s.speed_of_light_mps,
        }
    }

    pub fn circuit(&self) -> EhCircuit {
        let h = &self.harvester;
        EhCircuit { a: h.a, c: h.c, i_s: h.i_s_a, r_l: h.r_l_ohm, p_max: h.p_max_w }
    }

    pub fn receivers(&self) -> Result<EhReceiverSet, isapt::eh::EhError> {
        let m = self.nodes.distances_m.len();
        EhReceiverSet::new(vec![self.circuit(); m], self.nodes.weights.clone())
    }

    pub fn placements(&self) -> Vec<EhNodePlacement> {
        let n = &self.nodes;
        n.distances_m
            .iter()
            .zip(&n.angles_deg)
            .zip(&n.weights)
            .map(|((&distance, deg), &weight)| EhNodePlacement { distance, angle: deg.to_radians(), weight })
            .collect()
    }

    pub fn budget(&self) -> PowerBudget {
        PowerBudget { p_avg: self.power.p_avg_w, p_p: self.power.p_p_w }
    }

    pub fn sca_settings(&self) -> ScaSettings {
        let s = &self.solver;
        ScaSettings { epsilon_sca: s.epsilon_sca, relative_tol: s.relative_tol, max_iters: s.max_iters, rank_tol: s.rank_tol }
    }

    /// Seeds of every realization, in order.
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let base = self.run.base_seed;
        (0..self.run.realizations).map(move |r| base + r)
    }

    /// The point this configuration describes without any sweep.
    pub fn base_point(&self) -> SweepPoint {
        SweepPoint {
            p_avg_w: self.power.p_avg_w,
            p_p_w: self.power.p_p_w,
            r_hat_max_m: self.sensing.r_hat_max_m,
            r_min_m: self.sensing.r_min_m,
        }
    }

    /// A copy with the point's four values substituted.
    pub fn at_point(&self, point: &SweepPoint) -> Self {
        let mut c = self.clone();
        c.power.p_avg_w = point.p_avg_w;
        c.power.p_p_w = point.p_p_w;
        c.sensing.r_hat_max_m = point.r_hat_max_m;
        c.sensing.r_min_m = point.r_min_m;
        c
    }

    /// One curve per average-power budget, everything else at the base.
    pub fn fig2_points(&self) -> Vec<SweepPoint> {
        self.fig2.p_avg_w.iter().map(|&p_avg_w| SweepPoint { p_avg_w, ..self.base_point() }).collect()
    }

    /// Accuracy values vary fastest.
    pub fn fig3_points(&self) -> Vec<SweepPoint> {
        let f = &self.fig3;
        let mut points = Vec::new();
        for (&r_min_m, &p_p_w) in f.r_min_m.iter().zip(&f.p_p_w) {
            for &r_hat_max_m in &f.r_hat_max_m {
                points.push(SweepPoint { p_avg_w: self.power.p_avg_w, p_p_w, r_hat_max_m, r_min_m });
            }
        }
        points
    }

    /// Product of the sweep axes; the last axis (`r_min_m`) varies fastest.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let mut points = Vec::new();
        for &p_avg_w in &s.p_avg_w {
            for &p_p_w in &s.p_p_w {
                for &r_hat_max_m in &s.r_hat_max_m {
                    for &r_min_m in &s.r_min_m {
                        points.push(SweepPoint { p_avg_w, p_p_w, r_hat_max_m, r_min_m });
                    }
                }
            }
        }
        points
    }
}

/// Reads and resolves a configuration file. `None` uses the profile alone.
pub fn load_config(path: Option<&Path>, profile: Profile, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?,
        None => String::new(),
    };
    parse_config(&text, profile, overrides)
}

/// Resolves TOML text over a profile, then applies `key.path=value`
/// overrides. Override values are parsed as TOML and fall back to a bare
/// string.
pub fn parse_config(text: &str, profile: Profile, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut merged = toml::Table::try_from(ExperimentConfig::profile(profile)).expect("profile serializes");
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    merge(&mut merged, user);
    for spec in overrides {
        apply_override(&mut merged, spec)?;
    }
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| ConfigError::Schema {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let fail = |reason: &str| ConfigError::Override { spec: spec.to_string(), reason: reason.to_string() };
    let (path, raw) = spec.split_once('=').ok_or_else(|| fail("expected key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(fail("empty key segment"));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut table = root;
    for k in parents {
        table = match table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => t,
            _ => return Err(fail(&format!("`{k}` is not a section"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}
