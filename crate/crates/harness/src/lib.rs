//! Experiment harness around the `isapt` design library.
//!
//! - [`config`]: layered TOML configuration with the `table1` reference
//!   profile, dotted-path overrides and a content hash.
//! - [`experiment`]: Monte-Carlo runs over sweep points and channel seeds on
//!   a rayon pool, reduced in a fixed order.
//! - [`record`]: per-seed records, CSV persistence and seed-averaged
//!   statistics.
//! - [`commands`]: the work behind each `isapt` CLI verb.
//!
//! ```no_run
//! use isapt_harness::commands::run_fig2;
//! use isapt_harness::config::{parse_config, Profile};
//!
//! let config = parse_config("[run]\nrealizations = 10", Profile::Table1, &[]).unwrap();
//! let out = run_fig2(&config).unwrap();
//! for path in &out.files {
//!     println!("{}", path.display());
//! }
//! ```

pub mod commands;
pub mod config;
pub mod experiment;
pub mod record;

pub use config::{load_config, parse_config, ExperimentConfig, Profile, Scheme, SweepPoint};
pub use experiment::{run_points, HarnessError, MonteCarlo, SchemeKind};
pub use record::SweepRecord;
