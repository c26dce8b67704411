//! Flat `key = value` files: run manifests and benchmark specs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use convtensor::altmin::AltMinConfig;
use convtensor::decompose::{AlsConfig, Mode};
use convtensor::ActivationSpec;

use crate::error::{usage, CliError, CliResult};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped
/// and later keys override earlier ones.
pub fn parse_kv(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_kv_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        CliError::Core(convtensor::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    parse_kv(&text)
}

pub fn render_kv(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(key, s))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(usage(format!("{key} is empty")));
    }
    Ok(items)
}

/// What the `gen` command records next to its outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub n: usize,
    pub l: usize,
    pub count: usize,
    pub seed: u64,
    pub activation: ActivationSpec,
    pub support: Option<usize>,
}

impl Manifest {
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("n".into(), self.n.to_string());
        m.insert("L".into(), self.l.to_string());
        m.insert("N".into(), self.count.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("activation".into(), self.activation.to_string());
        m.insert("third_cumulant".into(), format!("{}", self.activation.third_cumulant()));
        if let Some(s) = self.support {
            m.insert("support".into(), s.to_string());
        }
        m
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> CliResult<Self> {
        let get = |k: &str| map.get(k).ok_or_else(|| usage(format!("manifest is missing {k}")));
        Ok(Self {
            n: parse_one("n", get("n")?)?,
            l: parse_one("L", get("L")?)?,
            count: parse_one("N", get("N")?)?,
            seed: parse_one("seed", get("seed")?)?,
            activation: get("activation")?.parse()?,
            support: map.get("support").map(|s| parse_one("support", s)).transpose()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    CtJoint,
    CtDeflation,
    AltMin,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::CtJoint => "ct-joint",
            Self::CtDeflation => "ct-deflation",
            Self::AltMin => "altmin",
        }
    }

    pub fn is_ct(self) -> bool {
        !matches!(self, Self::AltMin)
    }
}

impl FromStr for Algorithm {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim() {
            "ct" | "ct-joint" => Ok(Self::CtJoint),
            "ct-deflation" => Ok(Self::CtDeflation),
            "altmin" => Ok(Self::AltMin),
            other => Err(usage(format!(
                "unknown algorithm {other:?} (expected ct-joint, ct-deflation or altmin)"
            ))),
        }
    }
}

/// A benchmark grid: every combination of `n`, `L`, `N` and algorithm is a
/// cell, run once per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub ns: Vec<usize>,
    pub ls: Vec<usize>,
    pub counts: Vec<usize>,
    pub activation: ActivationSpec,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub als: AlsConfig,
    pub altmin: AltMinConfig,
    /// Wall-clock cap per run, applied to the solver phase.
    pub budget_ms: Option<f64>,
}

pub const BENCH_KEYS: &[&str] = &[
    "n",
    "L",
    "N",
    "activation",
    "algorithms",
    "seeds",
    "max_iters",
    "tol",
    "ridge",
    "restarts",
    "deflation_passes",
    "altmin_iters",
    "altmin_step_f",
    "altmin_step_w",
    "altmin_inner",
    "budget_ms",
];

impl Default for BenchSpec {
    /// The desk-scale cell: `n = 16, L = 2, N = 10^4`, five seeds.
    fn default() -> Self {
        Self {
            ns: vec![16],
            ls: vec![2],
            counts: vec![10_000],
            activation: ActivationSpec::default(),
            algorithms: vec![Algorithm::CtJoint, Algorithm::AltMin],
            seeds: (0..5).collect(),
            als: AlsConfig::default(),
            altmin: AltMinConfig::default(),
            budget_ms: None,
        }
    }
}

impl BenchSpec {
    /// Defaults overridden by the given keys (see [`BENCH_KEYS`]); list
    /// values are comma separated.
    pub fn from_map(map: &BTreeMap<String, String>) -> CliResult<Self> {
        let mut spec = Self::default();
        for (k, v) in map {
            let k = k.as_str();
            match k {
                "n" => spec.ns = parse_list(k, v)?,
                "L" => spec.ls = parse_list(k, v)?,
                "N" => spec.counts = parse_list(k, v)?,
                "activation" => spec.activation = v.parse()?,
                "algorithms" | "algorithm" => spec.algorithms = parse_list(k, v)?,
                "seeds" | "seed" => spec.seeds = parse_list(k, v)?,
                "max_iters" => spec.als.max_iters = parse_one(k, v)?,
                "tol" => spec.als.tol_filter_change = parse_one(k, v)?,
                "ridge" => spec.als.ridge = Some(parse_one(k, v)?),
                "restarts" => spec.als.restarts = parse_one(k, v)?,
                "deflation_passes" => spec.als.deflation_passes = parse_one(k, v)?,
                "mode" => {
                    spec.als.mode = v.parse()?;
                }
                "altmin_iters" => spec.altmin.max_outer_iters = parse_one(k, v)?,
                "altmin_step_f" => spec.altmin.step_size_f = parse_one(k, v)?,
                "altmin_step_w" => spec.altmin.step_size_w = parse_one(k, v)?,
                "altmin_inner" => spec.altmin.inner_steps = parse_one(k, v)?,
                "budget_ms" => spec.budget_ms = Some(parse_one(k, v)?),
                _ => return Err(usage(format!("unknown bench key {k:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Rejects the whole grid before anything runs.
    pub fn validate(&self) -> CliResult<()> {
        if self.ns.is_empty() || self.ls.is_empty() || self.counts.is_empty() || self.seeds.is_empty() {
            return Err(usage("bench grid is empty"));
        }
        if self.algorithms.is_empty() {
            return Err(usage("no algorithms selected"));
        }
        for &n in &self.ns {
            for &l in &self.ls {
                if l < 1 || l >= n {
                    return Err(usage(format!("cell with n = {n}, L = {l} violates 1 <= L < n")));
                }
            }
        }
        if self.counts.contains(&0) {
            return Err(usage("N must be at least 1"));
        }
        if self.budget_ms.is_some_and(|b| !(b > 0.0)) {
            return Err(usage("budget_ms must be positive"));
        }
        self.als.validate()?;
        self.altmin.validate()?;
        Ok(())
    }

    pub fn als_for(&self, algorithm: Algorithm, seed: u64) -> AlsConfig {
        AlsConfig {
            seed,
            mode: if algorithm == Algorithm::CtDeflation {
                Mode::Deflation
            } else {
                Mode::Joint
            },
            max_wall_ms: self.budget_ms,
            ..self.als.clone()
        }
    }

    pub fn altmin_for(&self, seed: u64) -> AltMinConfig {
        AltMinConfig {
            seed,
            max_wall_ms: self.budget_ms,
            ..self.altmin.clone()
        }
    }
}
