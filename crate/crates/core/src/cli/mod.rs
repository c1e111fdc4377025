//! Experiment runner behind the `phlab` binary.
//!
//! Each subcommand reads a flat config, runs one pipeline, writes CSV tables
//! into the output directory together with `report.json`, and passes iff
//! every assertion in the report passes. Sweeps over points record per-point
//! failures in their tables and keep going; single runs stop at the first
//! error.

mod commands;
pub mod config;
pub mod report;
mod selftest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{Config, ConfigError};
pub use report::{Assertion, ConfigEcho, Csv, Measurement, Relation, RunReport};

use crate::dynamics::{map_zoo, FamilySpec, MapSpec, ZooItem};
use crate::error::Error;
use crate::manifold::TorusPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Splitting,
    Bunching,
    #[value(name = "partial-derivative")]
    PartialDerivative,
    Holder,
    Ddc,
    #[value(name = "param-derivative")]
    ParamDerivative,
    #[value(name = "thmC-check")]
    ThmCCheck,
    Selftest,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Self::Splitting,
        Self::Bunching,
        Self::PartialDerivative,
        Self::Holder,
        Self::Ddc,
        Self::ParamDerivative,
        Self::ThmCCheck,
        Self::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Splitting => "splitting",
            Self::Bunching => "bunching",
            Self::PartialDerivative => "partial-derivative",
            Self::Holder => "holder",
            Self::Ddc => "ddc",
            Self::ParamDerivative => "param-derivative",
            Self::ThmCCheck => "thmC-check",
            Self::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::UnknownName {
            kind: "subcommand",
            name: s.to_string(),
        })
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compute(#[from] Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads, 0 for the rayon default.
    pub threads: usize,
    /// Overrides the config's `seed` key.
    pub seed: Option<u64>,
    /// Warnings count as a failed assertion.
    pub strict: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            threads: 0,
            seed: None,
            strict: false,
        }
    }
}

/// Runs one subcommand and writes its tables and `report.json`.
pub fn run(cmd: Subcommand, cfg: &Config, opts: &RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let seed = match opts.seed {
        Some(s) => s,
        None => cfg.u64_opt("seed")?.unwrap_or(0),
    };
    fs::create_dir_all(&opts.out_dir)?;
    let mut ctx = Ctx {
        cfg,
        seed,
        out: &opts.out_dir,
        results: Vec::new(),
        measurements: Vec::new(),
        warnings: Vec::new(),
        files: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    pool.install(|| match cmd {
        Subcommand::Splitting => commands::splitting(&mut ctx),
        Subcommand::Bunching => commands::bunching(&mut ctx),
        Subcommand::PartialDerivative => commands::partial_derivative(&mut ctx),
        Subcommand::Holder => commands::holder(&mut ctx),
        Subcommand::Ddc => commands::ddc(&mut ctx),
        Subcommand::ParamDerivative => commands::param_derivative(&mut ctx),
        Subcommand::ThmCCheck => commands::thm_c_check(&mut ctx),
        Subcommand::Selftest => selftest::run(&mut ctx),
    })?;
    if opts.strict {
        ctx.assert("warnings", ctx.warnings.len() as f64, Relation::AtMost, 0.0);
    }
    ctx.files.push("report.json".into());
    let report = RunReport {
        config: ConfigEcho {
            subcommand: cmd.name().to_string(),
            seed,
            strict: opts.strict,
            threads: opts.threads,
            entries: cfg.echo(),
        },
        results: ctx.results,
        measurements: ctx.measurements,
        warnings: ctx.warnings,
        files: ctx.files,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
    fs::write(opts.out_dir.join("report.json"), json + "\n")?;
    Ok(report)
}

/// Where the points of a sweep come from when the config names none.
#[derive(Debug, Clone, Copy)]
enum PointDefault<'a> {
    Random(usize),
    Fixed(&'a [f64]),
    Origin,
}

/// Per-run state shared by the subcommands.
struct Ctx<'a> {
    cfg: &'a Config,
    seed: u64,
    out: &'a Path,
    results: Vec<Assertion>,
    measurements: Vec<Measurement>,
    warnings: Vec<String>,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn assert(&mut self, name: &str, value: f64, relation: Relation, tolerance: f64) {
        self.results.push(Assertion::new(name, value, relation, tolerance));
    }

    fn measure(&mut self, name: &str, value: f64) {
        self.measurements.push(Measurement {
            name: name.to_string(),
            value,
        });
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// `tol.<name>` or the default.
    fn tol(&self, name: &str, default: f64) -> Result<f64, ConfigError> {
        self.cfg.positive_f64_or(&format!("tol.{name}"), default)
    }

    fn write(&mut self, name: &str, csv: &Csv) -> Result<(), CliError> {
        csv.write(self.out, name)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn zoo(&self, key: &str) -> Result<ZooItem, CliError> {
        let name = self.cfg.required_str(key)?;
        map_zoo(name, &self.cfg.params(key)).map_err(|e| match e {
            Error::InvalidParam { key: k, msg } => self.cfg.error(&format!("{key}.{k}"), msg).into(),
            Error::UnknownName { .. } => self.cfg.error(key, e.to_string()).into(),
            other => CliError::Compute(other),
        })
    }

    fn map(&self) -> Result<MapSpec, CliError> {
        self.zoo("map")?
            .into_map()
            .map_err(|e| self.cfg.error("map", e.to_string()).into())
    }

    fn family(&self) -> Result<FamilySpec, CliError> {
        self.zoo("family")?
            .into_family()
            .map_err(|e| self.cfg.error("family", e.to_string()).into())
    }

    /// `points` (explicit list) or `points.random` (count, drawn from the
    /// seed), else the default.
    fn points(&self, dim: usize, default: PointDefault) -> Result<Vec<TorusPoint>, CliError> {
        if self.cfg.contains("points") && self.cfg.contains("points.random") {
            return Err(self.cfg.error("points.random", "give either points or points.random").into());
        }
        if let Some(p) = self.cfg.points("points", dim)? {
            return Ok(p);
        }
        let count = match (self.cfg.contains("points.random"), default) {
            (true, _) => self.cfg.positive_usize_or("points.random", 1)?,
            (false, PointDefault::Random(n)) => n,
            (false, PointDefault::Fixed(c)) => return Ok(vec![TorusPoint::wrap(c)?]),
            (false, PointDefault::Origin) => return Ok(vec![TorusPoint::origin(dim)]),
        };
        Ok(random_points(self.seed, dim, count))
    }
}

/// `count` uniform points of `T^dim` drawn from a ChaCha8 stream.
pub fn random_points(seed: u64, dim: usize, count: usize) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            TorusPoint::wrap(&c).expect("uniform samples are finite")
        })
        .collect()
}

/// Parallel map over points with results in input order.
fn sweep<T, F>(points: &[TorusPoint], f: F) -> Vec<crate::Result<T>>
where
    T: Send,
    F: Fn(&TorusPoint) -> crate::Result<T> + Sync + Send,
{
    points.par_iter().map(f).collect()
}
