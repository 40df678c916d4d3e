use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::sweep::{bp_scaling_sweep, kcm_sweep_on, SweepResult};
use super::{Dynamics, Statistic, SweepSpec, DEFAULT_RESAMPLES};
use crate::environment::{min_good_l, save_environment, ModelKind};
use crate::error::{Error, Result};
use crate::kcm::Scheme;
use crate::lattice::Boundary;

const KEYS: &[&str] = &[
    "model", "pi", "q_list", "window", "L", "trials", "t_max", "t_budget", "seed", "dynamics", "output_dir",
    "quenched", "boundary", "scheme", "statistic", "resamples",
];

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: SweepSpec,
    /// Sweeps to run, all on the same quenched environment.
    pub dynamics: Vec<Dynamics>,
    pub output_dir: PathBuf,
}

struct Reader<'a> {
    table: &'a Table,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn get<T>(&mut self, key: &str, conv: impl Fn(&Value) -> Option<T>, want: &str) -> Option<T> {
        let v = self.table.get(key)?;
        let out = conv(v);
        if out.is_none() {
            self.problems.push(format!("{key}: expected {want}, found {v}"));
        }
        out
    }

    fn required<T>(&mut self, key: &str, conv: impl Fn(&Value) -> Option<T>, want: &str) -> Option<T> {
        if !self.table.contains_key(key) {
            self.problems.push(format!("{key}: missing"));
            return None;
        }
        self.get(key, conv, want)
    }

    fn parsed<T: FromStr>(&mut self, key: &str, want: &str) -> Option<T> {
        self.get(key, |v| v.as_str().and_then(|s| s.parse().ok()), want)
    }
}

fn float(v: &Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

fn count(v: &Value) -> Option<usize> {
    v.as_integer().filter(|&i| i >= 0).map(|i| i as usize)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut r = Reader { table: &table, problems: Vec::new() };
        for k in table.keys().filter(|k| !KEYS.contains(&k.as_str())) {
            r.problems.push(format!("{k}: unknown key"));
        }

        let model = r.required("model", |v| v.as_str().and_then(|s| ModelKind::from_str(s).ok()), "fa12 or ne-fa1f");
        let pi = r.required("pi", float, "a number");
        let q_list = r.table.get("q_list").and_then(Value::as_array).map(|items| {
            items
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let q = float(v);
                    if q.is_none() {
                        r.problems.push(format!("q_list[{i}]: expected a number, found {v}"));
                    }
                    q
                })
                .collect::<Vec<_>>()
        });
        if q_list.is_none() {
            r.problems.push(if table.contains_key("q_list") { "q_list: expected an array".into() } else { "q_list: missing".into() });
        }
        let window = r.required("window", count, "a non-negative integer");
        let trials = r.required("trials", count, "a non-negative integer");
        let seed = r.required("seed", |v| v.as_integer().map(|i| i as u64), "an integer");
        let output_dir = r.required("output_dir", |v| v.as_str().map(PathBuf::from), "a path string");
        let dynamics = r.required(
            "dynamics",
            |v| match v {
                Value::String(s) => parse_dynamics(s).map(|d| vec![d]),
                Value::Array(a) => a.iter().map(|x| x.as_str().and_then(parse_dynamics)).collect(),
                _ => None,
            },
            "\"bp\", \"kcm\" or a list of them",
        );
        let side = r.get(
            "L",
            |v| match v {
                Value::String(s) if s == "auto" => Some(None),
                Value::Integer(i) if *i >= 1 => Some(Some(*i as usize)),
                _ => None,
            },
            "a positive integer or \"auto\"",
        );
        let t_max = r.get("t_max", float, "a number");
        let t_budget = r.get("t_budget", float, "a number");
        let quenched = r.get("quenched", Value::as_bool, "a boolean");
        let boundary: Option<Boundary> = r.parsed("boundary", "occupied, empty or free");
        let scheme: Option<Scheme> = r.parsed("scheme", "rejection or tracked");
        let statistic = r.get(
            "statistic",
            |v| match v.as_str()? {
                "median" => Some(Statistic::Median),
                "mean" | "mean-uncensored" => Some(Statistic::MeanUncensored),
                _ => None,
            },
            "median or mean",
        );
        let resamples = r.get("resamples", count, "a non-negative integer");

        let mut problems = r.problems;
        let (Some(model), Some(pi), Some(q_list), Some(window), Some(trials), Some(seed), Some(output_dir), Some(dynamics)) =
            (model, pi, q_list, window, trials, seed, output_dir, dynamics)
        else {
            return Err(Error::Config(problems));
        };
        let first = dynamics.first().copied().unwrap_or(Dynamics::Bp);
        let mut spec = SweepSpec::new(model, pi, q_list, window, trials, first).with_seed(seed);
        if let Some(t) = t_max {
            spec.t_max = t;
            spec.t_budget = t * 64.0;
        }
        if let Some(b) = t_budget {
            spec.t_budget = b;
        }
        spec.quenched = quenched.unwrap_or(true);
        spec.boundary = boundary.unwrap_or_default();
        spec.scheme = scheme.unwrap_or_default();
        spec.statistic = statistic.unwrap_or_default();
        spec.resamples = resamples.unwrap_or(DEFAULT_RESAMPLES);
        spec.side = match side.flatten() {
            Some(l) => Some(l),
            None if side.is_some() => min_good_l(pi, 0.0, 20_000, seed).ok(),
            None => None,
        };
        if dynamics.is_empty() {
            problems.push("dynamics: empty list".into());
        }
        if dynamics.contains(&Dynamics::Bp) && model != ModelKind::MixedFa {
            problems.push("dynamics: bp sweeps need model = fa12".into());
        }
        if let Err(Error::Config(p)) = spec.validate() {
            problems.extend(p);
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(RunConfig { spec, dynamics, output_dir })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn parse_dynamics(s: &str) -> Option<Dynamics> {
    match s {
        "bp" => Some(Dynamics::Bp),
        "kcm" => Some(Dynamics::Kcm),
        _ => None,
    }
}

#[derive(Clone, Debug, Serialize)]
struct Summary<'a> {
    software: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    env_digest: String,
    env_seed: u64,
    q_seeds: Vec<u64>,
    results: Vec<ResultSummary<'a>>,
}

#[derive(Clone, Debug, Serialize)]
struct ResultSummary<'a> {
    dynamics: Dynamics,
    env_digest: &'a Option<String>,
    points: &'a [super::PointSummary],
    fit: &'a Option<super::FitResult>,
    fit_error: &'a Option<String>,
}

/// Paths and results of a finished run.
#[derive(Clone, Debug)]
pub struct RunBundle {
    pub dir: PathBuf,
    pub raw_csv: PathBuf,
    pub summary_json: PathBuf,
    pub environment: PathBuf,
    pub results: Vec<SweepResult>,
}

/// Loads the config, runs every requested sweep and writes `raw.csv`,
/// `summary.json` and `environment.qkenv` into `output_dir`.
pub fn run_config(path: impl AsRef<Path>) -> Result<RunBundle> {
    let cfg = RunConfig::load(path)?;
    run(&cfg)
}

pub fn run_config_str(text: &str) -> Result<RunBundle> {
    run(&RunConfig::from_toml(text)?)
}

fn run(cfg: &RunConfig) -> Result<RunBundle> {
    let env = cfg.spec.environment(0)?;
    let mut results = Vec::new();
    for &d in &cfg.dynamics {
        let spec = SweepSpec { dynamics: d, ..cfg.spec.clone() };
        results.push(match d {
            Dynamics::Bp => bp_scaling_sweep(&spec)?,
            Dynamics::Kcm => kcm_sweep_on(&spec, &env, 0)?,
        });
    }

    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let raw_csv = dir.join("raw.csv");
    let mut csv = String::from(super::RawRow::CSV_HEADER);
    csv.push('\n');
    for row in results.iter().flat_map(|r| &r.rows) {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    fs::write(&raw_csv, csv).map_err(|e| Error::io(&raw_csv, e))?;

    let environment = dir.join("environment.qkenv");
    save_environment(&env, &environment)?;

    let summary = Summary {
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        env_digest: env.digest(),
        env_seed: cfg.spec.env_seed(0),
        q_seeds: (0..cfg.spec.q_list.len()).map(|i| cfg.spec.q_seed(i)).collect(),
        results: results
            .iter()
            .map(|r| ResultSummary {
                dynamics: r.dynamics,
                env_digest: &r.env_digest,
                points: &r.points,
                fit: &r.fit,
                fit_error: &r.fit_error,
            })
            .collect(),
    };
    let summary_json = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&summary_json, text).map_err(|e| Error::io(&summary_json, e))?;
    Ok(RunBundle { dir, raw_csv, summary_json, environment, results })
}
