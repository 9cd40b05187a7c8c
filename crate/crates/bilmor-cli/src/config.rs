//! Flat key=value run configuration.
//!
//! A run is configured by a small closed set of keys. Values come from an
//! optional config file (one `key = value` per line, `#` comments, last
//! assignment wins) overlaid with `--set key=value` arguments, which win
//! over the file. Unknown keys are rejected so typos cannot silently fall
//! back to defaults.
//!
//! Path-valued keys from a config file resolve relative to the file's own
//! directory, so a generated demo directory stays self-contained; paths
//! from `--set` resolve relative to the working directory as typed.
//!
//! ```text
//! a, n, b, c           system files (Matrix Market / text vector)
//! ra, rn, rb, rc       reduced quadruple, for verify-interp
//! output               output directory, default "."
//! method               birka | tbirka, default tbirka
//! order                reduced order r
//! terms                series truncation M, default 2
//! tol                  outer fixed-point tolerance, default 1e-8
//! max_outer            outer iteration cap, default 500
//! init                 random | coordinate, default random
//! backend              direct | bicg | bicg-deflated, default direct
//! solve_tol            inner solver tolerance, default 1e-10
//! solve_max            inner iteration cap, default 2000
//! recycle_rank         deflation harvest rank, default 8
//! seed                 reduction seed, default 0
//! quad_points          quadrature points per axis, default 64
//! hinf_points          gain scan points per axis, default 64
//! scales               comma-separated perturbation scales, for sweep
//! tolerances           comma-separated solver tolerances, for first-condition
//! direction_seed       perturbation direction seed, default 1
//! f_scale              perturbation norm for hypo-check, default 1e-3
//! dim                  state dimension, for gen-demo
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bilmor::mor::{InitRule, MorConfig};
use bilmor::sylvester::SolveBackend;

use crate::io::SystemPaths;
use crate::RunError;

/// Which fixed-point iteration `reduce` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Coupled iteration on the full series.
    Birka,
    /// Truncated iteration on the leading `terms` subsystems.
    Tbirka,
}

/// One parsed run configuration; commands pull what they need and reject
/// what is missing.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub a: Option<PathBuf>,
    pub n: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub c: Option<PathBuf>,
    pub ra: Option<PathBuf>,
    pub rn: Option<PathBuf>,
    pub rb: Option<PathBuf>,
    pub rc: Option<PathBuf>,
    pub output: PathBuf,
    pub method: Method,
    pub order: Option<usize>,
    pub terms: usize,
    pub tol: f64,
    pub max_outer: usize,
    pub init: InitRule,
    pub backend: BackendChoice,
    pub solve_tol: f64,
    pub solve_max: usize,
    pub recycle_rank: usize,
    pub seed: u64,
    pub quad_points: usize,
    pub hinf_points: usize,
    pub scales: Option<Vec<f64>>,
    pub tolerances: Option<Vec<f64>>,
    pub direction_seed: u64,
    pub f_scale: f64,
    pub dim: Option<usize>,
}

/// Backend family; the tolerance and cap keys fill in the details.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Direct,
    BiCg,
    BiCgDeflated,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            a: None,
            n: None,
            b: None,
            c: None,
            ra: None,
            rn: None,
            rb: None,
            rc: None,
            output: PathBuf::from("."),
            method: Method::Tbirka,
            order: None,
            terms: 2,
            tol: 1e-8,
            max_outer: 500,
            init: InitRule::SeededRandom,
            backend: BackendChoice::Direct,
            solve_tol: 1e-10,
            solve_max: 2000,
            recycle_rank: 8,
            seed: 0,
            quad_points: 64,
            hinf_points: 64,
            scales: None,
            tolerances: None,
            direction_seed: 1,
            f_scale: 1e-3,
            dim: None,
        }
    }
}

/// Splits one `key=value` assignment; `source` names the origin for error
/// messages (a file location or "--set").
fn split_assignment(raw: &str, source: &str) -> Result<(String, String), RunError> {
    let Some((key, value)) = raw.split_once('=') else {
        return Err(RunError::Validation(format!(
            "{source}: expected key=value, got \"{raw}\""
        )));
    };
    let key = key.trim().to_string();
    let value = value.trim().to_string();
    if key.is_empty() || value.is_empty() {
        return Err(RunError::Validation(format!(
            "{source}: empty key or value in \"{raw}\""
        )));
    }
    Ok((key, value))
}

/// Reads a config file into ordered assignments.
fn file_assignments(path: &Path) -> Result<Vec<(String, String)>, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let source = format!("{}:{}", path.display(), idx + 1);
        out.push(split_assignment(line, &source)?);
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a configuration from an optional file and `--set` overrides.
    pub fn from_sources(file: Option<&Path>, sets: &[String]) -> Result<Self, RunError> {
        // Later assignments overwrite earlier ones, so the file goes in
        // first and the command line wins.
        let mut merged: BTreeMap<String, (String, bool)> = BTreeMap::new();
        if let Some(path) = file {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for (key, value) in file_assignments(path)? {
                merged.insert(key, (value, true));
            }
            let mut cfg = Self::default();
            for (key, (value, from_file)) in collect_sets(merged, sets)? {
                cfg.apply(&key, &value, if from_file { Some(&base) } else { None })?;
            }
            Ok(cfg)
        } else {
            let mut cfg = Self::default();
            for (key, (value, _)) in collect_sets(merged, sets)? {
                cfg.apply(&key, &value, None)?;
            }
            Ok(cfg)
        }
    }

    /// Applies one assignment; `base` is the directory path values resolve
    /// against when the assignment came from a config file.
    fn apply(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), RunError> {
        let path_value = || -> PathBuf {
            let p = PathBuf::from(value);
            match base {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }
        };
        match key {
            "a" => self.a = Some(path_value()),
            "n" => self.n = Some(path_value()),
            "b" => self.b = Some(path_value()),
            "c" => self.c = Some(path_value()),
            "ra" => self.ra = Some(path_value()),
            "rn" => self.rn = Some(path_value()),
            "rb" => self.rb = Some(path_value()),
            "rc" => self.rc = Some(path_value()),
            "output" => self.output = path_value(),
            "method" => {
                self.method = match value {
                    "birka" => Method::Birka,
                    "tbirka" => Method::Tbirka,
                    _ => {
                        return Err(bad_value(key, value, "birka | tbirka"));
                    }
                }
            }
            "order" => self.order = Some(parse_num(key, value)?),
            "terms" => self.terms = parse_num(key, value)?,
            "tol" => self.tol = parse_num(key, value)?,
            "max_outer" => self.max_outer = parse_num(key, value)?,
            "init" => {
                self.init = match value {
                    "random" => InitRule::SeededRandom,
                    "coordinate" => InitRule::CoordinateProjection,
                    _ => {
                        return Err(bad_value(key, value, "random | coordinate"));
                    }
                }
            }
            "backend" => {
                self.backend = match value {
                    "direct" => BackendChoice::Direct,
                    "bicg" => BackendChoice::BiCg,
                    "bicg-deflated" => BackendChoice::BiCgDeflated,
                    _ => {
                        return Err(bad_value(key, value, "direct | bicg | bicg-deflated"));
                    }
                }
            }
            "solve_tol" => self.solve_tol = parse_num(key, value)?,
            "solve_max" => self.solve_max = parse_num(key, value)?,
            "recycle_rank" => self.recycle_rank = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "quad_points" => self.quad_points = parse_num(key, value)?,
            "hinf_points" => self.hinf_points = parse_num(key, value)?,
            "scales" => self.scales = Some(parse_list(key, value)?),
            "tolerances" => self.tolerances = Some(parse_list(key, value)?),
            "direction_seed" => self.direction_seed = parse_num(key, value)?,
            "f_scale" => self.f_scale = parse_num(key, value)?,
            "dim" => self.dim = Some(parse_num(key, value)?),
            _ => {
                return Err(RunError::Validation(format!("unknown config key \"{key}\"")));
            }
        }
        Ok(())
    }

    /// The solver backend assembled from the family choice and the inner
    /// solver keys.
    pub fn solve_backend(&self) -> SolveBackend {
        match self.backend {
            BackendChoice::Direct => SolveBackend::Direct,
            BackendChoice::BiCg => SolveBackend::BiCg {
                tolerance: self.solve_tol,
                max_iterations: self.solve_max,
            },
            BackendChoice::BiCgDeflated => SolveBackend::BiCgDeflated {
                tolerance: self.solve_tol,
                max_iterations: self.solve_max,
                recycle_rank: self.recycle_rank,
            },
        }
    }

    /// The reduction settings, requiring `order` to be present.
    pub fn mor_config(&self) -> Result<MorConfig, RunError> {
        let order = self.require_order()?;
        Ok(MorConfig {
            order,
            terms: self.terms,
            tol: self.tol,
            max_outer_iterations: self.max_outer,
            init: self.init,
            backend: self.solve_backend(),
            seed: self.seed,
        })
    }

    pub fn require_order(&self) -> Result<usize, RunError> {
        self.order
            .ok_or_else(|| RunError::Validation("missing config key \"order\"".into()))
    }

    /// The full system quadruple, requiring all four path keys.
    pub fn system_paths(&self) -> Result<SystemPaths, RunError> {
        Ok(SystemPaths {
            a: require_path(&self.a, "a")?,
            n: require_path(&self.n, "n")?,
            b: require_path(&self.b, "b")?,
            c: require_path(&self.c, "c")?,
        })
    }

    /// The reduced quadruple, requiring the `r*` path keys.
    pub fn reduced_paths(&self) -> Result<SystemPaths, RunError> {
        Ok(SystemPaths {
            a: require_path(&self.ra, "ra")?,
            n: require_path(&self.rn, "rn")?,
            b: require_path(&self.rb, "rb")?,
            c: require_path(&self.rc, "rc")?,
        })
    }
}

/// Merges `--set` assignments over the file map, tagging each value with
/// whether it still comes from the file.
fn collect_sets(
    mut merged: BTreeMap<String, (String, bool)>,
    sets: &[String],
) -> Result<BTreeMap<String, (String, bool)>, RunError> {
    for raw in sets {
        let (key, value) = split_assignment(raw, "--set")?;
        merged.insert(key, (value, false));
    }
    Ok(merged)
}

fn bad_value(key: &str, value: &str, expected: &str) -> RunError {
    RunError::Validation(format!(
        "config key \"{key}\": invalid value \"{value}\", expected {expected}"
    ))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, RunError> {
    value
        .parse()
        .map_err(|_| RunError::Validation(format!("config key \"{key}\": cannot parse \"{value}\"")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, RunError> {
    value
        .split(',')
        .map(|t| parse_num(key, t.trim()))
        .collect()
}

fn require_path(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, RunError> {
    path.clone()
        .ok_or_else(|| RunError::Validation(format!("missing config key \"{key}\"")))
}
