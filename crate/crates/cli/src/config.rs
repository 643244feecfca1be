//! Flat `key = value` experiment configuration.
//!
//! Keys are dotted (`train.epochs = 200`); a `[section]` line prefixes the
//! keys that follow it. `#` starts a comment. A `preset` key (or the
//! `--preset` flag) selects the base values; every other key overrides it.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

use landau_core::benchmarks::{BenchmarkCase, BenchmarkTag};
use landau_core::kernel::{Gamma, KernelConfig};
use landau_core::nn::{Block, NetworkSpec};
use landau_core::trainer::TimeSampling;

use crate::presets;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError { line: None, key: None, message: message.into() }
    }

    fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), key: Some(key.to_string()), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: {k}: {}", self.message),
            (None, Some(k)) => write!(f, "{k}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Pinnpm,
    PinnScore,
    Sbp,
    Blob,
    Reference,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Pinnpm => "pinnpm",
            Solver::PinnScore => "pinn_score",
            Solver::Sbp => "sbp",
            Solver::Blob => "blob",
            Solver::Reference => "reference",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Solver::Pinnpm, Solver::PinnScore, Solver::Sbp, Solver::Blob, Solver::Reference]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetShape {
    pub vel: Block,
    pub time: Option<Block>,
    pub trunk: Block,
}

impl NetShape {
    pub fn spec(&self, dim: usize) -> Result<NetworkSpec, ConfigError> {
        NetworkSpec::new(dim, self.vel, self.time, self.trunk).map_err(|e| ConfigError::new(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub benchmark: BenchmarkTag,
    pub solver: Solver,
    pub seed: u64,
    pub t0: f64,
    pub t1: f64,
    pub gamma: Gamma,
    pub c_gamma: f64,
    pub reg_eps: f64,
    pub n_particles: usize,
    pub n_times: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda_score: f64,
    pub time_sampling: TimeSampling,
    pub resample_particles: bool,
    pub flow: NetShape,
    pub score: NetShape,
    pub dt: f64,
    pub stepping_particles: usize,
    pub fit_iters: usize,
    pub initial_fit_iters: usize,
    pub stepping_lr: f64,
    pub blob_bandwidth: f64,
    pub warm_start: bool,
    pub sbp_score: NetShape,
    pub snapshots: Vec<f64>,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_count: usize,
    pub kde_bandwidth: f64,
    pub kde_samples: usize,
    pub flow_checkpoint: Option<PathBuf>,
    pub score_checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.benchmark.dim()
    }

    pub fn case(&self) -> Result<BenchmarkCase, ConfigError> {
        let mut case = BenchmarkCase::new(self.benchmark);
        case.t0 = self.t0;
        case.t1 = self.t1;
        case.kernel = KernelConfig { gamma: self.gamma, c_gamma: self.c_gamma, reg_eps: self.reg_eps };
        case.validate().map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let case = self.case()?;
        let d = self.dim();
        self.flow.spec(d)?;
        self.score.spec(d)?;
        self.sbp_score.spec(d)?;
        let field = |k: &str, m: &str| Err(ConfigError { line: None, key: Some(k.into()), message: m.into() });
        if self.flow.time.is_none() {
            return field("flow.time", "the flow network needs a time embedding");
        }
        if self.score.time.is_none() {
            return field("score.time", "the score network needs a time embedding");
        }
        for &t in &self.snapshots {
            if t < case.t0 - 1e-12 || t > case.t1 + 1e-12 {
                return field("snapshots", &format!("time {t} lies outside [{}, {}]", case.t0, case.t1));
            }
        }
        if self.n_particles < 2 {
            return field("train.n_particles", "must be at least 2");
        }
        if self.n_times < 1 {
            return field("train.n_times", "must be at least 1");
        }
        if self.fit_iters < 1 {
            return field("stepping.fit_iters", "must be at least 1");
        }
        if !(self.dt > 0.0) {
            return field("stepping.dt", "must be positive");
        }
        if !(self.kde_bandwidth > 0.0) {
            return field("kde.bandwidth", "must be positive");
        }
        if !(self.grid_min < self.grid_max) || self.grid_count < 2 {
            return field("grid", "needs min < max and count >= 2");
        }
        Ok(())
    }

    /// Canonical text; parsing it reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.preset {
            kv("preset", p.clone());
        }
        kv("benchmark", self.benchmark.name().into());
        kv("solver", self.solver.name().into());
        kv("seed", self.seed.to_string());
        kv("case.t0", fmt_f(self.t0));
        kv("case.t1", fmt_f(self.t1));
        kv("kernel.gamma", fmt_f(self.gamma.exponent()));
        kv("kernel.c_gamma", fmt_f(self.c_gamma));
        kv("kernel.reg_eps", fmt_f(self.reg_eps));
        kv("train.n_particles", self.n_particles.to_string());
        kv("train.n_times", self.n_times.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.lr", fmt_f(self.lr));
        kv("train.lambda_score", fmt_f(self.lambda_score));
        kv(
            "train.time_sampling",
            match self.time_sampling {
                TimeSampling::Stratified => "stratified".into(),
                TimeSampling::Uniform => "uniform".into(),
            },
        );
        kv("train.resample_particles", self.resample_particles.to_string());
        for (name, net) in [("flow", &self.flow), ("score", &self.score), ("stepping.score", &self.sbp_score)] {
            kv(&format!("{name}.vel"), fmt_block(Some(net.vel)));
            kv(&format!("{name}.time"), fmt_block(net.time));
            kv(&format!("{name}.trunk"), fmt_block(Some(net.trunk)));
        }
        kv("stepping.dt", fmt_f(self.dt));
        kv("stepping.n_particles", self.stepping_particles.to_string());
        kv("stepping.fit_iters", self.fit_iters.to_string());
        kv("stepping.initial_fit_iters", self.initial_fit_iters.to_string());
        kv("stepping.lr", fmt_f(self.stepping_lr));
        kv("stepping.bandwidth", fmt_f(self.blob_bandwidth));
        kv("stepping.warm_start", self.warm_start.to_string());
        kv("snapshots", self.snapshots.iter().map(|t| fmt_f(*t)).collect::<Vec<_>>().join(", "));
        kv("grid.min", fmt_f(self.grid_min));
        kv("grid.max", fmt_f(self.grid_max));
        kv("grid.count", self.grid_count.to_string());
        kv("kde.bandwidth", fmt_f(self.kde_bandwidth));
        kv("kde.samples", self.kde_samples.to_string());
        if let Some(p) = &self.flow_checkpoint {
            kv("checkpoint.flow", p.display().to_string());
        }
        if let Some(p) = &self.score_checkpoint {
            kv("checkpoint.score", p.display().to_string());
        }
        s
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_block(b: Option<Block>) -> String {
    b.map_or_else(|| "none".into(), |b| format!("{}x{}", b.width, b.depth))
}

fn parse_f(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got '{v}'"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err("must be finite".into())
    }
}

fn parse_u<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected a nonnegative integer, got '{v}'"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn parse_block(v: &str) -> Result<Option<Block>, String> {
    if v == "none" {
        return Ok(None);
    }
    let (w, d) = v.split_once('x').ok_or_else(|| format!("expected WIDTHxDEPTH, got '{v}'"))?;
    Ok(Some(Block::new(parse_u(w.trim())?, parse_u(d.trim())?)))
}

fn required_block(v: &str) -> Result<Block, String> {
    parse_block(v)?.ok_or_else(|| "this block cannot be none".to_string())
}

/// Applies one `key = value` pair.
fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "benchmark" => cfg.benchmark = v.parse().map_err(|_| format!("unknown benchmark tag '{v}'"))?,
        "solver" => cfg.solver = Solver::parse(v).ok_or_else(|| format!("unknown solver '{v}'"))?,
        "seed" => cfg.seed = parse_u(v)?,
        "case.t0" => cfg.t0 = parse_f(v)?,
        "case.t1" => cfg.t1 = parse_f(v)?,
        "kernel.gamma" => cfg.gamma = Gamma::from_exponent(parse_f(v)?).map_err(|e| e.to_string())?,
        "kernel.c_gamma" => cfg.c_gamma = parse_f(v)?,
        "kernel.reg_eps" => cfg.reg_eps = parse_f(v)?,
        "train.n_particles" => cfg.n_particles = parse_u(v)?,
        "train.n_times" => cfg.n_times = parse_u(v)?,
        "train.epochs" => cfg.epochs = parse_u(v)?,
        "train.lr" => cfg.lr = parse_f(v)?,
        "train.lambda_score" => cfg.lambda_score = parse_f(v)?,
        "train.time_sampling" => {
            cfg.time_sampling = match v {
                "stratified" => TimeSampling::Stratified,
                "uniform" => TimeSampling::Uniform,
                _ => return Err(format!("expected stratified or uniform, got '{v}'")),
            }
        }
        "train.resample_particles" => cfg.resample_particles = parse_bool(v)?,
        "flow.vel" => cfg.flow.vel = required_block(v)?,
        "flow.time" => cfg.flow.time = parse_block(v)?,
        "flow.trunk" => cfg.flow.trunk = required_block(v)?,
        "score.vel" => cfg.score.vel = required_block(v)?,
        "score.time" => cfg.score.time = parse_block(v)?,
        "score.trunk" => cfg.score.trunk = required_block(v)?,
        "stepping.score.vel" => cfg.sbp_score.vel = required_block(v)?,
        "stepping.score.time" => cfg.sbp_score.time = parse_block(v)?,
        "stepping.score.trunk" => cfg.sbp_score.trunk = required_block(v)?,
        "stepping.dt" => cfg.dt = parse_f(v)?,
        "stepping.n_particles" => cfg.stepping_particles = parse_u(v)?,
        "stepping.fit_iters" => cfg.fit_iters = parse_u(v)?,
        "stepping.initial_fit_iters" => cfg.initial_fit_iters = parse_u(v)?,
        "stepping.lr" => cfg.stepping_lr = parse_f(v)?,
        "stepping.bandwidth" => cfg.blob_bandwidth = parse_f(v)?,
        "stepping.warm_start" => cfg.warm_start = parse_bool(v)?,
        "snapshots" => {
            cfg.snapshots = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|x| parse_f(x.trim())).collect::<Result<_, _>>()?
            }
        }
        "grid.min" => cfg.grid_min = parse_f(v)?,
        "grid.max" => cfg.grid_max = parse_f(v)?,
        "grid.count" => cfg.grid_count = parse_u(v)?,
        "kde.bandwidth" => cfg.kde_bandwidth = parse_f(v)?,
        "kde.samples" => cfg.kde_samples = parse_u(v)?,
        "checkpoint.flow" => cfg.flow_checkpoint = Some(PathBuf::from(v)),
        "checkpoint.score" => cfg.score_checkpoint = Some(PathBuf::from(v)),
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Parses config text. `preset_flag` wins over a `preset` key in the text.
pub fn parse(text: &str, preset_flag: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let mut pairs = Vec::new();
    let mut section = String::new();
    let mut preset_key: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::at(ln, line, "unterminated section header"))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::at(ln, line, "expected key = value"))?;
        let k = k.trim();
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        let v = v.trim().to_string();
        if key == "preset" {
            preset_key = Some((ln, v));
            continue;
        }
        if pairs.iter().any(|(_, pk, _): &(usize, String, String)| *pk == key) {
            return Err(ConfigError::at(ln, &key, "duplicate key"));
        }
        pairs.push((ln, key, v));
    }
    let preset_name = preset_flag.map(str::to_string).or_else(|| preset_key.as_ref().map(|p| p.1.clone()));
    let mut cfg = match &preset_name {
        Some(name) => presets::get(name).ok_or_else(|| match &preset_key {
            Some((ln, _)) if preset_flag.is_none() => ConfigError::at(*ln, "preset", format!("unknown preset '{name}'")),
            _ => ConfigError { line: None, key: Some("preset".into()), message: format!("unknown preset '{name}'") },
        })?,
        None => presets::base(BenchmarkTag::Bkw2D),
    };
    // a benchmark override without a preset rebases onto that benchmark's defaults
    if preset_name.is_none() {
        if let Some((ln, k, v)) = pairs.iter().find(|p| p.1 == "benchmark") {
            let tag: BenchmarkTag = v.parse().map_err(|_| ConfigError::at(*ln, k, format!("unknown benchmark tag '{v}'")))?;
            cfg = presets::base(tag);
        }
    }
    for (ln, k, v) in &pairs {
        apply(&mut cfg, k, v).map_err(|m| ConfigError::at(*ln, k, m))?;
    }
    cfg.validate()?;
    Ok(cfg)
}
