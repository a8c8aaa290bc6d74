//! Flat INI-style run configuration with dotted overrides.
//!
//! Three sections: `[problem]`, `[solver]`, `[output]`. Unknown sections or
//! keys are rejected; missing required keys are reported with their full
//! key path. `--override section.key=value` rewrites entries before typing.

use std::collections::BTreeMap;

use serde::Serialize;

use dissolve::problem::ProblemConstants;
use dissolve::solver::{Algorithm, PowerSchedule, Schedules, SolverConfig, StopRule};

#[derive(Debug)]
pub struct ConfigFileError(pub String);

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigFileError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigFileError> {
    Err(ConfigFileError(msg.into()))
}

/// Raw parsed file: section -> key -> value, all strings.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !matches!(name.as_str(), "problem" | "solver" | "output") {
                    return err(format!("line {}: unknown section [{name}]", lineno + 1));
                }
                raw.sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`, got `{line}`", lineno + 1));
            };
            let Some(section) = &section else {
                return err(format!("line {}: key outside any section", lineno + 1));
            };
            raw.sections
                .get_mut(section)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(raw)
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigFileError> {
        let Some((path, value)) = spec.split_once('=') else {
            return err(format!("override `{spec}` is not of the form section.key=value"));
        };
        let Some((section, key)) = path.trim().split_once('.') else {
            return err(format!("override key `{path}` is not of the form section.key"));
        };
        if !matches!(section, "problem" | "solver" | "output") {
            return err(format!("override targets unknown section `{section}`"));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }
}

/// Typed `[problem]` section.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemSection {
    pub preset: String,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

/// Typed `[output]` section.
#[derive(Debug, Clone, Serialize)]
pub struct OutputSection {
    pub trace: Option<String>,
    pub summary: Option<String>,
    pub trace_stride: usize,
}

/// Start vector spec: a single fill value or an explicit list.
#[derive(Debug, Clone, Serialize)]
pub enum StartSpec {
    Fill(f64),
    Explicit(Vec<f64>),
}

impl StartSpec {
    pub fn materialize(&self, dim: usize, what: &str) -> Result<Vec<f64>, ConfigFileError> {
        match self {
            StartSpec::Fill(v) => Ok(vec![*v; dim]),
            StartSpec::Explicit(values) => {
                if values.len() != dim {
                    return err(format!(
                        "solver.{what} has {} components but the problem needs {dim}",
                        values.len()
                    ));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Typed `[solver]` section before the problem constants are known.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub beta_hat: f64,
    pub eta0: Option<f64>,
    pub a: f64,
    pub c1: f64,
    pub q1: f64,
    pub c2: f64,
    pub q2: f64,
    pub max_iters: usize,
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub value_oscillation_tol: f64,
    pub seed: u64,
    pub x0: StartSpec,
    pub y0: StartSpec,
}

impl SolverSection {
    /// Resolves to a full solver config; `eta0` defaults to `1 / l_g`.
    pub fn resolve(&self, constants: &ProblemConstants<f64>, force: bool) -> SolverConfig<f64> {
        SolverConfig {
            algorithm: self.algorithm,
            beta: self.beta,
            beta_hat: self.beta_hat,
            schedules: Schedules {
                step: PowerSchedule {
                    scale: self.eta0.unwrap_or(1.0 / constants.l_g),
                    exponent: self.a,
                },
                tol_newton: PowerSchedule {
                    scale: self.c1,
                    exponent: self.q1,
                },
                tol_dual: PowerSchedule {
                    scale: self.c2,
                    exponent: self.q2,
                },
            },
            max_iters: self.max_iters,
            stop: StopRule {
                feas_tol: self.feas_tol,
                stat_tol: self.stat_tol,
                value_oscillation_tol: self.value_oscillation_tol,
            },
            seed: self.seed,
            force_thresholds: force,
        }
    }
}

/// Fully typed configuration file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfigFile {
    pub problem: ProblemSection,
    pub solver: Option<SolverSection>,
    pub output: OutputSection,
}

struct SectionReader<'a> {
    name: &'a str,
    entries: BTreeMap<String, String>,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String, ConfigFileError> {
        self.take(key)
            .ok_or_else(|| ConfigFileError(format!("missing required key {}.{key}", self.name)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T, ConfigFileError> {
        value.parse::<T>().map_err(|_| {
            ConfigFileError(format!(
                "{}.{key}: cannot parse `{value}` as {}",
                self.name,
                std::any::type_name::<T>()
            ))
        })
    }

    fn optional<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, ConfigFileError> {
        match self.take(key) {
            Some(v) => self.parse(key, &v),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<(), ConfigFileError> {
        if let Some(key) = self.entries.keys().next() {
            return err(format!("unknown key {}.{key}", self.name));
        }
        Ok(())
    }
}

fn parse_start(reader: &SectionReader<'_>, key: &str, value: &str) -> Result<StartSpec, ConfigFileError> {
    if value.contains(',') {
        let values = value
            .split(',')
            .map(|v| reader.parse::<f64>(key, v.trim()))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(StartSpec::Explicit(values))
    } else {
        Ok(StartSpec::Fill(reader.parse::<f64>(key, value)?))
    }
}

impl RunConfigFile {
    pub fn from_raw(mut raw: RawConfig) -> Result<Self, ConfigFileError> {
        let problem_entries = raw
            .sections
            .remove("problem")
            .ok_or_else(|| ConfigFileError("missing required section [problem]".into()))?;
        let mut problem = SectionReader {
            name: "problem",
            entries: problem_entries,
        };
        let preset = problem.require("preset")?;
        let n: usize = {
            let v = problem.require("n")?;
            problem.parse("n", &v)?
        };
        let p: usize = {
            let v = problem.require("p")?;
            problem.parse("p", &v)?
        };
        let seed: u64 = problem.optional("seed", 0)?;
        problem.finish()?;
        let problem = ProblemSection { preset, n, p, seed };

        let solver = match raw.sections.remove("solver") {
            None => None,
            Some(entries) => {
                let mut solver = SectionReader {
                    name: "solver",
                    entries,
                };
                let algorithm_name = solver.require("algorithm")?;
                let algorithm = Algorithm::from_name(&algorithm_name).ok_or_else(|| {
                    ConfigFileError(format!(
                        "solver.algorithm: unknown algorithm `{algorithm_name}` \
                         (expected alg1_basic, alg2_modified, alg3_inexact, or exact_dh_descent)"
                    ))
                })?;
                let beta: f64 = {
                    let v = solver.require("beta")?;
                    solver.parse("beta", &v)?
                };
                let max_iters: usize = {
                    let v = solver.require("max_iters")?;
                    solver.parse("max_iters", &v)?
                };
                let beta_hat: f64 = solver.optional("beta_hat", 0.0)?;
                let eta0: Option<f64> = match solver.take("eta0") {
                    Some(v) => Some(solver.parse("eta0", &v)?),
                    None => None,
                };
                let a: f64 = solver.optional("a", 0.75)?;
                let c1: f64 = solver.optional("c1", 1.0)?;
                let q1: f64 = solver.optional("q1", 0.5)?;
                let c2: f64 = solver.optional("c2", 1.0)?;
                let q2: f64 = solver.optional("q2", 0.6)?;
                let feas_tol: f64 = solver.optional("feas_tol", 1e-5)?;
                let stat_tol: f64 = solver.optional("stat_tol", 1e-3)?;
                let value_oscillation_tol: f64 = solver.optional("value_oscillation_tol", 1e-6)?;
                let seed: u64 = solver.optional("seed", 0)?;
                let x0 = match solver.take("x0") {
                    Some(v) => parse_start(&solver, "x0", &v)?,
                    None => StartSpec::Fill(0.0),
                };
                let y0 = match solver.take("y0") {
                    Some(v) => parse_start(&solver, "y0", &v)?,
                    None => StartSpec::Fill(0.0),
                };
                solver.finish()?;
                Some(SolverSection {
                    algorithm,
                    beta,
                    beta_hat,
                    eta0,
                    a,
                    c1,
                    q1,
                    c2,
                    q2,
                    max_iters,
                    feas_tol,
                    stat_tol,
                    value_oscillation_tol,
                    seed,
                    x0,
                    y0,
                })
            }
        };

        let output = match raw.sections.remove("output") {
            None => OutputSection {
                trace: None,
                summary: None,
                trace_stride: 1,
            },
            Some(entries) => {
                let mut output = SectionReader {
                    name: "output",
                    entries,
                };
                let trace = output.take("trace");
                let summary = output.take("summary");
                let trace_stride: usize = output.optional("trace_stride", 1)?;
                output.finish()?;
                if trace_stride == 0 {
                    return err("output.trace_stride must be >= 1");
                }
                OutputSection {
                    trace,
                    summary,
                    trace_stride,
                }
            }
        };

        Ok(RunConfigFile {
            problem,
            solver,
            output,
        })
    }

    pub fn load(
        path: &str,
        overrides: &[String],
        stride_flag: Option<usize>,
    ) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigFileError(format!("cannot read config `{path}`: {e}")))?;
        let mut raw = RawConfig::parse(&text)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        let mut file = Self::from_raw(raw)?;
        if let Some(stride) = stride_flag {
            if stride == 0 {
                return err("--trace-stride must be >= 1");
            }
            file.output.trace_stride = stride;
        }
        Ok(file)
    }
}
