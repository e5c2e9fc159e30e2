//! Per-seed records, their CSV form, and the statistics derived from them.
//!
//! A [`SweepRecord`] stores one row per (point, scheme, seed, grid point).
//! Every summary statistic is recomputed from those rows, always summing in
//! row order, so a record read back from disk reproduces the in-memory means
//! bit for bit. Floats are written with Rust's shortest round-trip
//! formatting.
//!
//! Each CSV file opens with `#` lines: a title, `config_sha256 = <hex>`, and
//! the column units.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use isapt::sca::argmax_feasible_by;

use crate::config::SweepPoint;
use crate::experiment::{HarnessError, MonteCarlo, PointStatus, SchemeKind};

/// One grid point of one seed. Seeds whose pulse window is empty get a
/// single row with no grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub point: SweepPoint,
    pub scheme: SchemeKind,
    pub seed: u64,
    pub tau_index: Option<usize>,
    pub tau_s: Option<f64>,
    pub status: PointStatus,
    pub objective_w: Option<f64>,
    pub iterations: usize,
    pub rank_ratio: f64,
    pub max_kkt: f64,
    pub ascent_drop: f64,
    pub mixing_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    /// `fig2`, `fig3` or `sweep`.
    pub kind: String,
    pub config_hash: String,
    pub rows: Vec<SeedRow>,
    /// Wall-clock time of the run in s; not persisted, so CSV output stays
    /// reproducible.
    pub elapsed_s: f64,
}

/// Seed-averaged value at one pulse duration.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub tau_s: f64,
    /// Mean over feasible seeds only.
    pub mean_obj_w: Option<f64>,
    pub stderr_obj_w: Option<f64>,
    pub feasible_fraction: f64,
    pub mean_iters: f64,
    pub max_rank_ratio: f64,
    pub mean_mixing_rho: Option<f64>,
}

/// Best grid point of one seed: `(tau, objective, mixing rho)`.
pub type SeedOptimum = (f64, f64, Option<f64>);

/// Statistics of the per-seed optima at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub point: SweepPoint,
    pub scheme: SchemeKind,
    pub realizations: usize,
    pub n_feasible: usize,
    pub mean_obj_w: Option<f64>,
    pub stderr_obj_w: Option<f64>,
    pub mean_tau_star_s: Option<f64>,
    pub mean_mixing_rho: Option<f64>,
}

/// Mean and standard error, or `None` for an empty sample. A single value
/// has zero standard error.
pub fn mean_stderr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

fn mean(values: &[f64]) -> Option<f64> {
    mean_stderr(values).map(|(m, _)| m)
}

const SEED_COLUMNS: [&str; 16] = [
    "p_avg_w",
    "p_p_w",
    "r_hat_max_m",
    "r_min_m",
    "scheme",
    "seed",
    "tau_index",
    "tau_s",
    "status",
    "objective_W",
    "iterations",
    "rank_ratio",
    "max_kkt",
    "ascent_drop",
    "mixing_rho",
    "feasible",
];

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn opt_e(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Format { path: path.display().to_string(), message: e.to_string() }
}

/// Opens `path` and writes the `#` preamble.
pub fn create_with_header(path: &Path, title: &str, hash: &str, extra: &[String], units: &str) -> Result<File, HarnessError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut head = format!("# {title}\n# config_sha256 = {hash}\n");
    for line in extra {
        head.push_str(&format!("# {line}\n"));
    }
    head.push_str(&format!("# units: {units}\n"));
    f.write_all(head.as_bytes()).map_err(io_err(path))?;
    Ok(f)
}

impl SweepRecord {
    pub fn from_runs(kind: &str, runs: &MonteCarlo) -> Self {
        let mut rows = Vec::new();
        for (point, seed_run, scheme_run) in runs.scheme_runs() {
            let base = SeedRow {
                point: *point,
                scheme: scheme_run.scheme,
                seed: seed_run.seed,
                tau_index: None,
                tau_s: None,
                status: PointStatus::NoPulseWindow,
                objective_w: None,
                iterations: 0,
                rank_ratio: 0.0,
                max_kkt: 0.0,
                ascent_drop: 0.0,
                mixing_rho: None,
            };
            if scheme_run.grid.is_empty() {
                rows.push(base);
                continue;
            }
            for (k, g) in scheme_run.grid.iter().enumerate() {
                rows.push(SeedRow {
                    tau_index: Some(k),
                    tau_s: Some(g.tau),
                    status: g.status,
                    objective_w: g.objective,
                    iterations: g.iterations,
                    rank_ratio: g.rank_ratio,
                    max_kkt: g.max_kkt,
                    ascent_drop: g.ascent_drop,
                    mixing_rho: g.mixing_rho,
                    ..base.clone()
                });
            }
        }
        Self { kind: kind.to_string(), config_hash: runs.config_hash.clone(), rows, elapsed_s: runs.elapsed.as_secs_f64() }
    }

    /// Distinct sweep points in order of first appearance.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out: Vec<SweepPoint> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.point) {
                out.push(r.point);
            }
        }
        out
    }

    pub fn schemes(&self) -> Vec<SchemeKind> {
        let mut out: Vec<SchemeKind> = self.rows.iter().map(|r| r.scheme).collect();
        out.sort();
        out.dedup();
        out
    }

    fn select<'a>(&'a self, point: &'a SweepPoint, scheme: SchemeKind) -> impl Iterator<Item = &'a SeedRow> + 'a {
        self.rows.iter().filter(move |r| r.point == *point && r.scheme == scheme)
    }

    /// Rows of one point and scheme grouped by seed, seeds in order of
    /// first appearance.
    fn by_seed<'a>(&'a self, point: &'a SweepPoint, scheme: SchemeKind) -> Vec<(u64, Vec<&'a SeedRow>)> {
        let mut groups: Vec<(u64, Vec<&'a SeedRow>)> = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        for r in self.select(point, scheme) {
            let i = *index.entry(r.seed).or_insert_with(|| {
                groups.push((r.seed, Vec::new()));
                groups.len() - 1
            });
            groups[i].1.push(r);
        }
        groups
    }

    /// The seed-averaged curve over the pulse-duration grid.
    pub fn curve(&self, point: &SweepPoint, scheme: SchemeKind) -> Vec<CurveRow> {
        let n_seeds = self.by_seed(point, scheme).len();
        let mut by_tau: BTreeMap<usize, Vec<&SeedRow>> = BTreeMap::new();
        for r in self.select(point, scheme) {
            if let Some(k) = r.tau_index {
                by_tau.entry(k).or_default().push(r);
            }
        }
        by_tau
            .into_values()
            .map(|rows| {
                let objectives: Vec<f64> = rows.iter().filter_map(|r| r.objective_w).collect();
                let rhos: Vec<f64> = rows.iter().filter_map(|r| r.mixing_rho).collect();
                let iters: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
                let stats = mean_stderr(&objectives);
                CurveRow {
                    tau_s: rows[0].tau_s.expect("grid rows carry tau"),
                    mean_obj_w: stats.map(|s| s.0),
                    stderr_obj_w: stats.map(|s| s.1),
                    feasible_fraction: objectives.len() as f64 / n_seeds as f64,
                    mean_iters: mean(&iters).unwrap_or(0.0),
                    max_rank_ratio: rows.iter().map(|r| r.rank_ratio).fold(0.0, f64::max),
                    mean_mixing_rho: mean(&rhos),
                }
            })
            .collect()
    }

    /// Index of the best seed-averaged grid point; ties go to the shorter
    /// pulse.
    pub fn curve_argmax(curve: &[CurveRow]) -> Option<usize> {
        argmax_feasible_by(curve, |c| c.mean_obj_w)
    }

    /// Per-seed best grid point, `None` for seeds without a feasible one.
    pub fn seed_optima(&self, point: &SweepPoint, scheme: SchemeKind) -> Vec<(u64, Option<SeedOptimum>)> {
        self.by_seed(point, scheme)
            .into_iter()
            .map(|(seed, rows)| {
                let best = argmax_feasible_by(&rows, |r| r.objective_w)
                    .map(|i| (rows[i].tau_s.expect("feasible rows carry tau"), rows[i].objective_w.unwrap(), rows[i].mixing_rho));
                (seed, best)
            })
            .collect()
    }

    pub fn summary(&self, point: &SweepPoint, scheme: SchemeKind) -> PointSummary {
        let optima = self.seed_optima(point, scheme);
        let feasible: Vec<SeedOptimum> = optima.iter().filter_map(|(_, b)| *b).collect();
        let objectives: Vec<f64> = feasible.iter().map(|b| b.1).collect();
        let taus: Vec<f64> = feasible.iter().map(|b| b.0).collect();
        let rhos: Vec<f64> = feasible.iter().filter_map(|b| b.2).collect();
        let stats = mean_stderr(&objectives);
        PointSummary {
            point: *point,
            scheme,
            realizations: optima.len(),
            n_feasible: feasible.len(),
            mean_obj_w: stats.map(|s| s.0),
            stderr_obj_w: stats.map(|s| s.1),
            mean_tau_star_s: mean(&taus),
            mean_mixing_rho: mean(&rhos),
        }
    }

    /// Concatenates records of one kind and configuration.
    pub fn merge(records: &[SweepRecord]) -> Result<SweepRecord, HarnessError> {
        let first = records.first().ok_or_else(|| HarnessError::Format {
            path: "<merge>".into(),
            message: "nothing to merge".into(),
        })?;
        let mut out = SweepRecord { rows: Vec::new(), elapsed_s: 0.0, ..first.clone() };
        let mut seen = HashSet::new();
        for r in records {
            if r.config_hash != first.config_hash {
                return Err(HarnessError::HashMismatch { expected: first.config_hash.clone(), found: r.config_hash.clone() });
            }
            if r.kind != first.kind {
                return Err(HarnessError::Format {
                    path: "<merge>".into(),
                    message: format!("cannot merge a {} record into a {} record", r.kind, first.kind),
                });
            }
            for row in &r.rows {
                let p = &row.point;
                let key = (
                    [p.p_avg_w, p.p_p_w, p.r_hat_max_m, p.r_min_m].map(f64::to_bits),
                    row.scheme,
                    row.seed,
                    row.tau_index,
                );
                if !seen.insert(key) {
                    return Err(HarnessError::Format {
                        path: "<merge>".into(),
                        message: format!("seed {} of {} appears twice", row.seed, row.point),
                    });
                }
                out.rows.push(row.clone());
            }
            out.elapsed_s += r.elapsed_s;
        }
        Ok(out)
    }

    /// Writes every row.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let f = create_with_header(
            path,
            &format!("isapt {} per-seed record", self.kind),
            &self.config_hash,
            &[],
            "p_avg_w [W], p_p_w [W], r_hat_max_m [m], r_min_m [m], tau_s [s], objective_W [W]; \
             empty objective_W marks an infeasible or failed point",
        )?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(SEED_COLUMNS).map_err(csv_err(path))?;
        for r in &self.rows {
            w.write_record([
                r.point.p_avg_w.to_string(),
                r.point.p_p_w.to_string(),
                r.point.r_hat_max_m.to_string(),
                r.point.r_min_m.to_string(),
                r.scheme.to_string(),
                r.seed.to_string(),
                opt(r.tau_index),
                opt_e(r.tau_s),
                r.status.to_string(),
                opt_e(r.objective_w),
                r.iterations.to_string(),
                format!("{:e}", r.rank_ratio),
                format!("{:e}", r.max_kkt),
                format!("{:e}", r.ascent_drop),
                opt(r.mixing_rho),
                u8::from(r.status.is_feasible()).to_string(),
            ])
            .map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<SweepRecord, HarnessError> {
        let bad = |message: String| HarnessError::Format { path: path.display().to_string(), message };
        let file = File::open(path).map_err(io_err(path))?;
        let (mut kind, mut hash) = (None, None);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(path))?;
            let Some(comment) = line.strip_prefix('#') else { break };
            let comment = comment.trim();
            if let Some(h) = comment.strip_prefix("config_sha256 =") {
                hash = Some(h.trim().to_string());
            } else if let Some(rest) = comment.strip_prefix("isapt ") {
                kind = rest.strip_suffix(" per-seed record").map(str::to_string);
            }
        }
        let kind = kind.ok_or_else(|| bad("not a per-seed record".into()))?;
        let config_hash = hash.ok_or_else(|| bad("missing config_sha256 line".into()))?;

        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
        let header = reader.headers().map_err(csv_err(path))?.clone();
        if header.iter().ne(SEED_COLUMNS) {
            return Err(bad(format!("unexpected columns {header:?}")));
        }
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            let at = |i: usize| rec.get(i).unwrap_or("");
            let ctx = |e: String| bad(format!("row {}: {e}", line + 1));
            let f = |i: usize| at(i).parse::<f64>().map_err(|e| ctx(format!("{}: {e}", SEED_COLUMNS[i])));
            let of = |i: usize| if at(i).is_empty() { Ok(None) } else { f(i).map(Some) };
            let u = |i: usize| at(i).parse::<u64>().map_err(|e| ctx(format!("{}: {e}", SEED_COLUMNS[i])));
            rows.push(SeedRow {
                point: SweepPoint { p_avg_w: f(0)?, p_p_w: f(1)?, r_hat_max_m: f(2)?, r_min_m: f(3)? },
                scheme: at(4).parse().map_err(ctx)?,
                seed: u(5)?,
                tau_index: if at(6).is_empty() { None } else { Some(u(6)? as usize) },
                tau_s: of(7)?,
                status: at(8).parse().map_err(ctx)?,
                objective_w: of(9)?,
                iterations: u(10)? as usize,
                rank_ratio: f(11)?,
                max_kkt: f(12)?,
                ascent_drop: f(13)?,
                mixing_rho: of(14)?,
            });
        }
        Ok(SweepRecord { kind, config_hash, rows, elapsed_s: 0.0 })
    }
}

/// Writes a seed-averaged curve. Baseline curves get a `mixing_rho` column.
pub fn write_curve_csv(
    path: &Path,
    title: &str,
    hash: &str,
    extra: &[String],
    curve: &[CurveRow],
    with_rho: bool,
) -> Result<(), HarnessError> {
    let mut units = String::from(
        "tau_s [s], mean_obj_W [W], stderr_obj_W [W], feasible_fraction [1], mean_iters [1], max_rank_ratio [1]",
    );
    if with_rho {
        units.push_str(", mixing_rho [1]");
    }
    let f = create_with_header(path, title, hash, extra, &units)?;
    let mut w = csv::Writer::from_writer(f);
    let mut header = vec!["tau_s", "mean_obj_W", "stderr_obj_W", "feasible_fraction", "mean_iters", "max_rank_ratio"];
    if with_rho {
        header.push("mixing_rho");
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for c in curve {
        let mut rec = vec![
            format!("{:e}", c.tau_s),
            opt_e(c.mean_obj_w),
            opt_e(c.stderr_obj_w),
            c.feasible_fraction.to_string(),
            c.mean_iters.to_string(),
            format!("{:e}", c.max_rank_ratio),
        ];
        if with_rho {
            rec.push(opt(c.mean_mixing_rho));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one row per sweep point with both schemes side by side.
pub fn write_summary_csv(path: &Path, title: &str, record: &SweepRecord) -> Result<(), HarnessError> {
    let f = create_with_header(
        path,
        title,
        &record.config_hash,
        &["means over feasible seeds only; *_feasible counts them".into()],
        "p_avg_w [W], p_p_w [W], r_hat_max_m [m], r_min_m [m], *_mean_W [W], *_stderr_W [W], *_tau_star_s [s]",
    )?;
    let mut w = csv::Writer::from_writer(f);
    let mut header: Vec<String> =
        ["p_avg_w", "p_p_w", "r_hat_max_m", "r_min_m", "realizations"].map(String::from).to_vec();
    for s in ["proposed", "baseline"] {
        for col in ["mean_W", "stderr_W", "feasible", "tau_star_s"] {
            header.push(format!("{s}_{col}"));
        }
    }
    header.push("baseline_mixing_rho".into());
    w.write_record(&header).map_err(csv_err(path))?;
    let schemes = record.schemes();
    for point in record.points() {
        let summaries: Vec<Option<PointSummary>> = [SchemeKind::Proposed, SchemeKind::Baseline]
            .into_iter()
            .map(|k| schemes.contains(&k).then(|| record.summary(&point, k)))
            .collect();
        let realizations = summaries.iter().flatten().map(|s| s.realizations).max().unwrap_or(0);
        let mut rec = vec![
            point.p_avg_w.to_string(),
            point.p_p_w.to_string(),
            point.r_hat_max_m.to_string(),
            point.r_min_m.to_string(),
            realizations.to_string(),
        ];
        for s in &summaries {
            match s {
                Some(s) => rec.extend([
                    opt_e(s.mean_obj_w),
                    opt_e(s.stderr_obj_w),
                    s.n_feasible.to_string(),
                    opt_e(s.mean_tau_star_s),
                ]),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        rec.push(opt(summaries[1].as_ref().and_then(|s| s.mean_mixing_rho)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, k: Option<usize>, obj: Option<f64>) -> SeedRow {
        SeedRow {
            point: SweepPoint { p_avg_w: 0.5, p_p_w: 0.5, r_hat_max_m: 0.02, r_min_m: 18.0 },
            scheme: SchemeKind::Proposed,
            seed,
            tau_index: k,
            tau_s: k.map(|k| 1e-8 * (k + 1) as f64),
            status: if obj.is_some() { PointStatus::Converged } else { PointStatus::Infeasible },
            objective_w: obj,
            iterations: 3,
            rank_ratio: 1e-12,
            max_kkt: 1e-10,
            ascent_drop: 0.0,
            mixing_rho: None,
        }
    }

    fn record(rows: Vec<SeedRow>) -> SweepRecord {
        SweepRecord { kind: "fig2".into(), config_hash: "ab".repeat(32), rows, elapsed_s: 1.0 }
    }

    #[test]
    fn mean_and_stderr() {
        assert_eq!(mean_stderr(&[]), None);
        assert_eq!(mean_stderr(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn curve_counts_feasible_seeds_only() {
        let r = record(vec![
            row(1, Some(0), Some(1e-6)),
            row(1, Some(1), None),
            row(2, Some(0), Some(3e-6)),
            row(2, Some(1), Some(2e-6)),
        ]);
        let p = r.points()[0];
        let c = r.curve(&p, SchemeKind::Proposed);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].mean_obj_w, Some(2e-6));
        assert_eq!(c[0].feasible_fraction, 1.0);
        assert_eq!(c[1].mean_obj_w, Some(2e-6));
        assert_eq!(c[1].stderr_obj_w, Some(0.0));
        assert_eq!(c[1].feasible_fraction, 0.5);
        assert_eq!(SweepRecord::curve_argmax(&c), Some(0));
        let s = r.summary(&p, SchemeKind::Proposed);
        assert_eq!((s.realizations, s.n_feasible), (2, 2));
        assert_eq!(s.mean_obj_w, Some(2e-6));
        assert_eq!(s.mean_tau_star_s, Some(1e-8));
    }

    #[test]
    fn empty_window_counts_as_a_seed() {
        let r = record(vec![row(1, Some(0), Some(1e-6)), SeedRow { status: PointStatus::NoPulseWindow, ..row(2, None, None) }]);
        let p = r.points()[0];
        assert_eq!(r.curve(&p, SchemeKind::Proposed)[0].feasible_fraction, 0.5);
        let s = r.summary(&p, SchemeKind::Proposed);
        assert_eq!((s.realizations, s.n_feasible), (2, 1));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("isapt-record-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("seeds.csv");
        let mut rows = vec![row(7, Some(0), Some(0.1 + 0.2)), row(7, Some(1), None), row(8, None, None)];
        rows[0].mixing_rho = Some(1.0 / 3.0);
        rows[0].ascent_drop = -1e-300;
        let r = record(rows);
        r.write_csv(&path).unwrap();
        let back = SweepRecord::read_csv(&path).unwrap();
        assert_eq!(back.rows, r.rows);
        assert_eq!(back.config_hash, r.config_hash);
        assert_eq!(back.kind, "fig2");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn merge_checks_hash_and_duplicates() {
        let a = record(vec![row(1, Some(0), Some(1e-6))]);
        let b = record(vec![row(2, Some(0), Some(2e-6))]);
        let merged = SweepRecord::merge(&[a.clone(), b]).unwrap();
        assert_eq!(merged.rows.len(), 2);
        let mut other = a.clone();
        other.config_hash = "cd".repeat(32);
        assert!(matches!(SweepRecord::merge(&[a.clone(), other]), Err(HarnessError::HashMismatch { .. })));
        assert!(SweepRecord::merge(&[a.clone(), a]).is_err());
    }
}
