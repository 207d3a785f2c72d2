use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Values of one swept parameter: an explicit list or an inclusive linear range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Single(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Single(v) => vec![*v],
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
        }
    }

    /// Parses `a,b,c` or `start:stop:count`.
    pub fn parse(flag: &str, s: &str) -> CliResult<Grid> {
        let bad = |m: String| CliError::usage(flag, m);
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("`{t}` is not a number")))
        };
        let s = s.trim();
        if s.is_empty() {
            return Err(bad("empty grid".into()));
        }
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(format!("range `{s}` must be start:stop:count")));
            }
            let count = usize::from_str(parts[2].trim()).map_err(|_| bad(format!("`{}` is not a count", parts[2])))?;
            return Ok(Grid::Range {
                start: num(parts[0])?,
                stop: num(parts[1])?,
                count,
            });
        }
        Ok(Grid::List(s.split(',').map(num).collect::<CliResult<_>>()?))
    }

    fn checked(&self, flag: &str) -> CliResult<Vec<f64>> {
        let v = self.values();
        if v.is_empty() {
            return Err(CliError::usage(flag, "empty grid"));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(CliError::usage(flag, format!("non-finite grid value {x}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Coherent,
    Tmsv,
}

impl ProbeKind {
    pub fn probe(self, ns: f64) -> qillum::Probe {
        match self {
            ProbeKind::Coherent => qillum::Probe::Coherent { ns },
            ProbeKind::Tmsv => qillum::Probe::Tmsv { ns },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Coherent => "coherent",
            ProbeKind::Tmsv => "tmsv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbeList {
    One(ProbeKind),
    Many(Vec<ProbeKind>),
}

impl ProbeList {
    pub fn kinds(&self) -> Vec<ProbeKind> {
        match self {
            ProbeList::One(p) => vec![*p],
            ProbeList::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn default_m() -> u32 {
    1
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// A parameter sweep, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub probe: ProbeList,
    pub r: Grid,
    pub kappa: Grid,
    pub nbar: Grid,
    pub ns: Grid,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub probe: ProbeKind,
    pub params: qillum::TargetParams,
    pub ns: f64,
}

impl SweepConfig {
    pub fn from_json(path: &std::path::Path) -> CliResult<Self> {
        let err = |m: String| CliError::Config {
            path: path.display().to_string(),
            message: m,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Grid points in lexicographic order over (probe, r, kappa, nbar, ns),
    /// each validated against the parameter domains.
    pub fn points(&self) -> CliResult<Vec<SweepPoint>> {
        let probes = self.probe.kinds();
        if probes.is_empty() {
            return Err(CliError::usage("--probe", "empty grid"));
        }
        if self.m == 0 {
            return Err(CliError::usage("--m", "at least one copy is required"));
        }
        if self.workers == 0 {
            return Err(CliError::usage("--workers", "must be at least 1"));
        }
        let (rs, ks, ns_, ss) = (
            self.r.checked("--r")?,
            self.kappa.checked("--kappa")?,
            self.nbar.checked("--nbar")?,
            self.ns.checked("--ns")?,
        );
        let mut out = Vec::with_capacity(probes.len() * rs.len() * ks.len() * ns_.len() * ss.len());
        for &probe in &probes {
            for &r in &rs {
                for &kappa in &ks {
                    for &nbar in &ns_ {
                        let params = qillum::TargetParams::new(r, kappa, nbar)?;
                        for &ns in &ss {
                            probe.probe(ns).validate()?;
                            out.push(SweepPoint { probe, params, ns });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
