//! Flat `key=value` study configuration.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma separated. Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use css_core::linops::MAX_SPECTRAL_NODES;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    SolitonTable,
    SpectrumScan,
    BlowupBenchmark,
    IdentitySuite,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::SolitonTable => "soliton-table",
            StudyKind::SpectrumScan => "spectrum-scan",
            StudyKind::BlowupBenchmark => "blowup-benchmark",
            StudyKind::IdentitySuite => "identity-suite",
        }
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "soliton-table" => Ok(StudyKind::SolitonTable),
            "spectrum-scan" => Ok(StudyKind::SpectrumScan),
            "blowup-benchmark" => Ok(StudyKind::BlowupBenchmark),
            "identity-suite" => Ok(StudyKind::IdentitySuite),
            other => Err(format!(
                "unknown study `{other}` (expected soliton-table, spectrum-scan, blowup-benchmark or identity-suite)"
            )),
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub m: Vec<i32>,
    /// Couplings. Cells with `g = 1` use the self-dual profile with `α = 0`.
    pub g: Vec<f64>,
    /// Frequencies for `g > 1`.
    pub alpha: Vec<f64>,
    pub n: usize,
    pub r_max: f64,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
    pub blowup_time: f64,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
}

const KEYS: [&str; 13] =
    ["study", "m", "g", "alpha", "n", "r_max", "dt", "t_end", "sample_every", "blowup_time", "out", "seed", "threads"];

fn config_err(line: usize, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn parse_one<V: FromStr>(key: &str, raw: &str, line: usize) -> CliResult<V> {
    raw.parse().map_err(|_| config_err(line, format!("cannot parse `{raw}` for `{key}`")))
}

fn parse_list<V: FromStr>(key: &str, raw: &str, line: usize) -> CliResult<Vec<V>> {
    let items: Vec<&str> = raw.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(config_err(line, format!("empty entry in list `{key}`")));
    }
    items.into_iter().map(|s| parse_one(key, s, line)).collect()
}

impl StudyConfig {
    /// Defaults for everything except the study kind.
    pub fn new(kind: StudyKind) -> Self {
        StudyConfig {
            kind,
            m: vec![1],
            g: vec![if kind == StudyKind::IdentitySuite { 1.0 } else { 1.5 }],
            alpha: vec![1.0],
            n: 1024,
            r_max: 30.0,
            dt: 1e-4,
            t_end: 1.0,
            sample_every: 100,
            blowup_time: 1.0,
            out: None,
            seed: 0,
            threads: None,
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut raw: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| config_err(lineno, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(config_err(lineno, format!("unknown key `{key}`")));
            }
            if raw.insert(key, (value, lineno)).is_some() {
                return Err(config_err(lineno, format!("key `{key}` given twice")));
            }
        }
        let (kind_raw, kind_line) = raw.get("study").copied().ok_or_else(|| CliError::Config("missing key `study`".into()))?;
        let kind: StudyKind = kind_raw.parse().map_err(|e: String| config_err(kind_line, e))?;
        let mut cfg = StudyConfig::new(kind);
        for (&key, &(value, line)) in &raw {
            match key {
                "study" => {}
                "m" => cfg.m = parse_list(key, value, line)?,
                "g" => cfg.g = parse_list(key, value, line)?,
                "alpha" => cfg.alpha = parse_list(key, value, line)?,
                "n" => cfg.n = parse_one(key, value, line)?,
                "r_max" => cfg.r_max = parse_one(key, value, line)?,
                "dt" => cfg.dt = parse_one(key, value, line)?,
                "t_end" => cfg.t_end = parse_one(key, value, line)?,
                "sample_every" => cfg.sample_every = parse_one(key, value, line)?,
                "blowup_time" => cfg.blowup_time = parse_one(key, value, line)?,
                "out" => cfg.out = Some(PathBuf::from(value)),
                "seed" => cfg.seed = parse_one(key, value, line)?,
                "threads" => cfg.threads = Some(parse_one(key, value, line)?),
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every parameter combination the study will visit.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.m.is_empty() || self.g.is_empty() || self.alpha.is_empty() {
            return bad("parameter lists must not be empty".into());
        }
        if let Some(m) = self.m.iter().find(|&&m| m < 0) {
            return bad(format!("m must be non-negative, got {m}"));
        }
        if let Some(g) = self.g.iter().find(|&&g| !(g >= 1.0 && g.is_finite())) {
            return bad(format!("g must be at least 1, got {g}"));
        }
        if self.g.iter().any(|&g| g > 1.0) {
            if let Some(a) = self.alpha.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
                return bad(format!("g > 1 needs α > 0, got {a}"));
            }
        }
        if self.kind == StudyKind::IdentitySuite && self.g.iter().any(|&g| g != 1.0) {
            return bad("identity-suite runs on self-dual profiles only (g = 1)".into());
        }
        if self.n < 64 {
            return bad(format!("n = {} is too small (need at least 64)", self.n));
        }
        if self.kind == StudyKind::SpectrumScan && self.n > MAX_SPECTRAL_NODES {
            return bad(format!("spectrum-scan needs n ≤ {MAX_SPECTRAL_NODES}, got {}", self.n));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return bad(format!("r_max must be positive, got {}", self.r_max));
        }
        if !(self.dt != 0.0 && self.dt.is_finite()) || !self.t_end.is_finite() {
            return bad("dt must be non-zero and t_end finite".into());
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if !(self.blowup_time > 0.0 && self.blowup_time.is_finite()) {
            return bad(format!("blowup_time must be positive, got {}", self.blowup_time));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical `key=value` form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut lines = vec![
            format!("study={}", self.kind),
            format!("m={}", join(self.m.iter().map(|x| x.to_string()).collect())),
            format!("g={}", join(self.g.iter().map(|x| x.to_string()).collect())),
            format!("alpha={}", join(self.alpha.iter().map(|x| x.to_string()).collect())),
            format!("n={}", self.n),
            format!("r_max={}", self.r_max),
            format!("dt={}", self.dt),
            format!("t_end={}", self.t_end),
            format!("sample_every={}", self.sample_every),
            format!("blowup_time={}", self.blowup_time),
            format!("seed={}", self.seed),
        ];
        if let Some(out) = &self.out {
            lines.push(format!("out={}", out.display()));
        }
        if let Some(t) = self.threads {
            lines.push(format!("threads={t}"));
        }
        lines.join("\n") + "\n"
    }
}
