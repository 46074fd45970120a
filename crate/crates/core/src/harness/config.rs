//! Experiment configuration documents (TOML).
//!
//! Parsing never stops at the first problem: every missing key, bad type,
//! out-of-range value and unknown key is reported, each with its dotted key
//! path and, where it can be found, its line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{ConfigIssue, Error, Result};
use crate::fluid::{DiffusionMode, Execution, JumpMode};
use crate::red::RedParams;
use crate::scenario::Scenario;
use crate::surrogate::{BoxDim, ModelEvaluator, Param, ParameterBox, SurrogateKind};
use crate::tcp::TcpPhase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Des,
    Fluid,
    Moments,
    Hybrid,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Des => "des",
            Self::Fluid => "fluid",
            Self::Moments => "moments",
            Self::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Des, Self::Fluid, Self::Moments, Self::Hybrid]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub capacity: f64,
    pub prop_rtt: f64,
    pub buffer: u32,
    pub n_flows: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesBlock {
    pub initial_window: f64,
    pub initial_ssthresh: f64,
    pub initial_rto: f64,
    pub rto_min: f64,
    pub rto_k: f64,
    pub start_jitter: f64,
}

impl Default for DesBlock {
    fn default() -> Self {
        Self {
            initial_window: 1.0,
            initial_ssthresh: 64.0,
            initial_rto: 1.0,
            rto_min: 0.2,
            rto_k: 4.0,
            start_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSetting {
    Poisson,
    MeanDrift,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidBlock {
    pub n_paths: u32,
    pub diffusion: DiffusionMode,
    pub jumps: JumpSetting,
    /// Replaces the RED-driven loss intensity with a fixed rate (events/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_loss_rate: Option<f64>,
    pub bins: u32,
    pub execution: Execution,
    /// Initial `[W, Q, Q_hat]`.
    pub init: [f64; 3],
}

impl Default for FluidBlock {
    fn default() -> Self {
        Self {
            n_paths: 100,
            diffusion: DiffusionMode::SumRates,
            jumps: JumpSetting::Poisson,
            constant_loss_rate: None,
            bins: 50,
            execution: Execution::Parallel,
            init: [1.0, 0.0, 0.0],
        }
    }
}

impl FluidBlock {
    pub fn jump_mode(&self) -> JumpMode {
        match (self.jumps, self.constant_loss_rate) {
            (JumpSetting::Poisson, Some(rate)) => JumpMode::Constant(rate),
            (JumpSetting::Poisson, None) => JumpMode::Poisson,
            (JumpSetting::MeanDrift, _) => JumpMode::MeanDrift,
            (JumpSetting::Off, _) => JumpMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentsBlock {
    pub init: [f64; 3],
}

impl Default for MomentsBlock {
    fn default() -> Self {
        Self { init: [1.0, 0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridBlock {
    pub w_to: f64,
    pub init_phase: TcpPhase,
    pub init_ssthresh: f64,
    /// Initial `[W, Q, Q_hat]`.
    pub init: [f64; 3],
}

impl Default for HybridBlock {
    fn default() -> Self {
        Self {
            w_to: 4.0,
            init_phase: TcpPhase::SlowStart,
            init_ssthresh: 64.0,
            init: [1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub seed: u64,
    /// Simulated time, s.
    pub duration: f64,
    /// Integration step for the continuous models, s.
    pub dt: f64,
    pub sample_interval: f64,
    /// Start of the averaging window as a fraction of `duration`.
    pub transient_fraction: f64,
    pub link: LinkConfig,
    pub red: RedConfig,
    pub des: DesBlock,
    pub fluid: FluidBlock,
    pub moments: MomentsBlock,
    pub hybrid: HybridBlock,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            capacity: self.link.capacity,
            prop_rtt: self.link.prop_rtt,
            n_flows: self.link.n_flows,
            buffer: self.link.buffer,
            q_min: self.red.q_min,
            q_max: self.red.q_max,
            p_max: self.red.p_max,
            w_q: self.red.w_q,
        }
    }

    pub fn transient_cutoff(&self) -> f64 {
        self.transient_fraction * self.duration
    }

    /// Canonical TOML form; parsing it gives back an equal config.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidParams(format!("cannot serialize config: {e}")))
    }
}

/// 1-based line of `key` inside `[section]` (top level when `None`).
fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            current = Some(name.to_string());
            if section == Some(name) && key.is_empty() {
                return Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Collects issues while pulling typed values out of a TOML table.
pub(crate) struct Reader<'a> {
    text: &'a str,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self { text, issues: Vec::new() }
    }

    fn path(section: Option<&str>, key: &str) -> String {
        match section {
            Some(s) if key.is_empty() => s.to_string(),
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        }
    }

    pub(crate) fn issue(&mut self, section: Option<&str>, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: Self::path(section, key),
            line: line_of(self.text, section, key),
            message: message.into(),
        });
    }

    pub(crate) fn finish<T>(self, value: Option<T>) -> Result<T> {
        match value {
            Some(v) if self.issues.is_empty() => Ok(v),
            _ => Err(Error::Config(self.issues)),
        }
    }

    pub(crate) fn has_issues(&self) -> bool {
        !self.issues.is_empty()
    }

    fn unknown_keys(&mut self, t: &Table, section: Option<&str>, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.issue(section, k, format!("unknown key (expected one of: {})", allowed.join(", ")));
            }
        }
    }

    fn sub<'t>(&mut self, root: &'t Table, name: &str, required: bool) -> Option<&'t Table> {
        match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issue(None, name, "must be a table");
                None
            }
            None => {
                if required {
                    self.issues.push(ConfigIssue {
                        key: name.into(),
                        line: None,
                        message: "missing required table".into(),
                    });
                }
                None
            }
        }
    }

    fn raw<'t>(&mut self, t: Option<&'t Table>, section: Option<&str>, key: &str, required: bool) -> Option<&'t Value> {
        match t.and_then(|t| t.get(key)) {
            Some(v) => Some(v),
            None => {
                if required && (t.is_some() || section.is_none()) {
                    self.issue(section, key, "missing required key");
                }
                None
            }
        }
    }

    /// A number (integers accepted), or `default` when absent.
    fn f64(&mut self, t: Option<&Table>, section: Option<&str>, key: &str, default: Option<f64>) -> Option<f64> {
        match self.raw(t, section, key, default.is_none()) {
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.issue(section, key, "must be a number");
                None
            }
            None => default,
        }
    }

    fn int(&mut self, t: Option<&Table>, section: Option<&str>, key: &str, default: Option<u64>) -> Option<u64> {
        match self.raw(t, section, key, default.is_none()) {
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(Value::Integer(_)) => {
                self.issue(section, key, "must be a non-negative integer");
                None
            }
            Some(_) => {
                self.issue(section, key, "must be an integer");
                None
            }
            None => default,
        }
    }

    fn string(&mut self, t: Option<&Table>, section: Option<&str>, key: &str, required: bool) -> Option<String> {
        match self.raw(t, section, key, required) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.issue(section, key, "must be a string");
                None
            }
            None => None,
        }
    }

    fn triple(&mut self, t: Option<&Table>, section: Option<&str>, key: &str, default: [f64; 3]) -> [f64; 3] {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(Value::Array(a)) if a.len() == 3 => {
                let mut out = [0.0; 3];
                for (o, v) in out.iter_mut().zip(a) {
                    match v {
                        Value::Float(x) => *o = *x,
                        Value::Integer(i) => *o = *i as f64,
                        _ => {
                            self.issue(section, key, "must be an array of three numbers");
                            return default;
                        }
                    }
                }
                out
            }
            Some(_) => {
                self.issue(section, key, "must be an array of three numbers");
                default
            }
        }
    }

    fn choice<T: Copy>(
        &mut self,
        t: Option<&Table>,
        section: Option<&str>,
        key: &str,
        options: &[(&str, T)],
        default: Option<T>,
    ) -> Option<T> {
        match self.string(t, section, key, default.is_none()) {
            Some(s) => match options.iter().find(|(name, _)| *name == s) {
                Some((_, v)) => Some(*v),
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    self.issue(section, key, format!("`{s}` is not one of: {}", names.join(", ")));
                    None
                }
            },
            None => default,
        }
    }

    /// Record an issue unless `ok` holds for a present value.
    fn check<T: Copy>(&mut self, v: Option<T>, section: Option<&str>, key: &str, ok: impl Fn(T) -> bool, what: &str) {
        if let Some(x) = v {
            if !ok(x) {
                self.issue(section, key, what.to_string());
            }
        }
    }
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Config(vec![ConfigIssue {
            key: "<document>".into(),
            line,
            message: e.message().trim().to_string(),
        }])
    })
}

const TOP_KEYS: &[&str] = &[
    "model",
    "seed",
    "duration",
    "dt",
    "sample_interval",
    "transient_fraction",
    "link",
    "red",
    "des",
    "fluid",
    "moments",
    "hybrid",
    "output",
];

fn read_link(r: &mut Reader, root: &Table) -> (Option<LinkConfig>, Option<RedConfig>) {
    let link = r.sub(root, "link", true);
    let s = Some("link");
    if let Some(t) = link {
        r.unknown_keys(t, s, &["capacity", "prop_rtt", "buffer", "n_flows"]);
    }
    let capacity = r.f64(link, s, "capacity", None);
    let prop_rtt = r.f64(link, s, "prop_rtt", None);
    let buffer = r.int(link, s, "buffer", Some(50));
    let n_flows = r.int(link, s, "n_flows", Some(1));
    r.check(capacity, s, "capacity", |c| c.is_finite() && c > 0.0, "must be finite and > 0");
    r.check(prop_rtt, s, "prop_rtt", |c| c.is_finite() && c >= 0.0, "must be finite and >= 0");
    r.check(buffer, s, "buffer", |b| (1..=u32::MAX as u64).contains(&b), "must be >= 1");
    r.check(n_flows, s, "n_flows", |n| (1..=100_000).contains(&n), "must lie in [1, 100000]");

    let red = r.sub(root, "red", true);
    let s = Some("red");
    if let Some(t) = red {
        r.unknown_keys(t, s, &["q_min", "q_max", "p_max", "w_q"]);
    }
    let q_min = r.f64(red, s, "q_min", None);
    let q_max = r.f64(red, s, "q_max", None);
    let p_max = r.f64(red, s, "p_max", None);
    let w_q = match red.and_then(|t| t.get("w_q")) {
        Some(_) => r.f64(red, s, "w_q", Some(f64::NAN)),
        None => None,
    };
    r.check(q_min, s, "q_min", |q| q.is_finite() && q >= 0.0, "must be finite and >= 0");
    if let (Some(a), Some(b)) = (q_min, q_max) {
        if !(a < b) {
            r.issue(s, "q_max", format!("RED thresholds need q_min < q_max (got {a} and {b})"));
        }
    }
    r.check(p_max, s, "p_max", |p| p > 0.0 && p <= 1.0, "must lie in (0, 1]");
    r.check(w_q, s, "w_q", |w| w > 0.0 && w < 1.0, "must lie in (0, 1)");
    let link = match (capacity, prop_rtt, buffer, n_flows) {
        (Some(capacity), Some(prop_rtt), Some(buffer), Some(n_flows)) => Some(LinkConfig {
            capacity,
            prop_rtt,
            buffer: buffer.min(u32::MAX as u64) as u32,
            n_flows: n_flows.min(u32::MAX as u64) as u32,
        }),
        _ => None,
    };
    let red = match (q_min, q_max, p_max) {
        (Some(q_min), Some(q_max), Some(p_max)) => Some(RedConfig { q_min, q_max, p_max, w_q }),
        _ => None,
    };
    (link, red)
}

/// Parse and validate an experiment document; `overrides` replace (or
/// supply) the corresponding keys.
pub fn parse_config_with(text: &str, overrides: Overrides) -> Result<ExperimentConfig> {
    let root = parse_table(text)?;
    let mut r = Reader::new(text);
    r.unknown_keys(&root, None, TOP_KEYS);
    let top = Some(&root);

    let models = [
        ("des", ModelKind::Des),
        ("fluid", ModelKind::Fluid),
        ("moments", ModelKind::Moments),
        ("hybrid", ModelKind::Hybrid),
    ];
    let model = match overrides.model {
        Some(m) => {
            r.choice(top, None, "model", &models, Some(m));
            Some(m)
        }
        None => r.choice(top, None, "model", &models, None),
    };
    let seed = match overrides.seed {
        Some(s) => {
            r.int(top, None, "seed", Some(s));
            Some(s)
        }
        None => r.int(top, None, "seed", None),
    };
    let duration = r.f64(top, None, "duration", None);
    let dt = r.f64(top, None, "dt", Some(1e-3));
    let sample_interval = r.f64(top, None, "sample_interval", Some(0.1));
    let transient_fraction = r.f64(top, None, "transient_fraction", Some(0.2));
    r.check(duration, None, "duration", |d| d.is_finite() && d > 0.0, "must be finite and > 0");
    r.check(dt, None, "dt", |d| d.is_finite() && d > 0.0, "must be finite and > 0");
    if let (Some(si), Some(step)) = (sample_interval, dt) {
        if !(si.is_finite() && si >= step) {
            r.issue(None, "sample_interval", format!("must be finite and >= dt ({step})"));
        }
    }
    r.check(transient_fraction, None, "transient_fraction", |f| (0.0..1.0).contains(&f), "must lie in [0, 1)");
    if let (Some(d), Some(step)) = (duration, dt) {
        if step > d {
            r.issue(None, "dt", "must not exceed duration");
        }
    }

    let (link, red) = read_link(&mut r, &root);

    // Model blocks are optional; defaults fill anything left out.
    let des_t = r.sub(&root, "des", false);
    let s = Some("des");
    let d0 = DesBlock::default();
    if let Some(t) = des_t {
        r.unknown_keys(t, s, &["initial_window", "initial_ssthresh", "initial_rto", "rto_min", "rto_k", "start_jitter"]);
    }
    let des = DesBlock {
        initial_window: r.f64(des_t, s, "initial_window", Some(d0.initial_window)).unwrap_or(d0.initial_window),
        initial_ssthresh: r.f64(des_t, s, "initial_ssthresh", Some(d0.initial_ssthresh)).unwrap_or(d0.initial_ssthresh),
        initial_rto: r.f64(des_t, s, "initial_rto", Some(d0.initial_rto)).unwrap_or(d0.initial_rto),
        rto_min: r.f64(des_t, s, "rto_min", Some(d0.rto_min)).unwrap_or(d0.rto_min),
        rto_k: r.f64(des_t, s, "rto_k", Some(d0.rto_k)).unwrap_or(d0.rto_k),
        start_jitter: r.f64(des_t, s, "start_jitter", Some(d0.start_jitter)).unwrap_or(d0.start_jitter),
    };
    r.check(Some(des.initial_window), s, "initial_window", |x| x >= 1.0 && x.is_finite(), "must be >= 1");
    r.check(Some(des.initial_ssthresh), s, "initial_ssthresh", |x| x >= 2.0, "must be >= 2");
    r.check(Some(des.initial_rto), s, "initial_rto", |x| x > 0.0 && x.is_finite(), "must be > 0");
    r.check(Some(des.rto_min), s, "rto_min", |x| x > 0.0 && x.is_finite(), "must be > 0");
    r.check(Some(des.rto_k), s, "rto_k", |x| x > 0.0 && x.is_finite(), "must be > 0");
    r.check(Some(des.start_jitter), s, "start_jitter", |x| x >= 0.0 && x.is_finite(), "must be >= 0");

    let fl_t = r.sub(&root, "fluid", false);
    let s = Some("fluid");
    let f0 = FluidBlock::default();
    if let Some(t) = fl_t {
        r.unknown_keys(t, s, &["n_paths", "diffusion", "jumps", "constant_loss_rate", "bins", "execution", "init"]);
    }
    let n_paths = r.int(fl_t, s, "n_paths", Some(f0.n_paths as u64)).unwrap_or(1);
    r.check(Some(n_paths), s, "n_paths", |n| (1..=10_000_000).contains(&n), "must lie in [1, 10000000]");
    let bins = r.int(fl_t, s, "bins", Some(f0.bins as u64)).unwrap_or(1);
    r.check(Some(bins), s, "bins", |n| (1..=100_000).contains(&n), "must lie in [1, 100000]");
    let constant_loss_rate = match fl_t.and_then(|t| t.get("constant_loss_rate")) {
        Some(_) => r.f64(fl_t, s, "constant_loss_rate", Some(f64::NAN)),
        None => None,
    };
    r.check(constant_loss_rate, s, "constant_loss_rate", |x| x >= 0.0 && x.is_finite(), "must be finite and >= 0");
    let fluid = FluidBlock {
        n_paths: n_paths.min(u32::MAX as u64) as u32,
        diffusion: r
            .choice(
                fl_t,
                s,
                "diffusion",
                &[
                    ("sum_rates", DiffusionMode::SumRates),
                    ("as_written_clamped", DiffusionMode::AsWrittenClamped),
                    ("off", DiffusionMode::Off),
                ],
                Some(f0.diffusion),
            )
            .unwrap_or(f0.diffusion),
        jumps: r
            .choice(
                fl_t,
                s,
                "jumps",
                &[
                    ("poisson", JumpSetting::Poisson),
                    ("mean_drift", JumpSetting::MeanDrift),
                    ("off", JumpSetting::Off),
                ],
                Some(f0.jumps),
            )
            .unwrap_or(f0.jumps),
        constant_loss_rate,
        bins: bins.min(u32::MAX as u64) as u32,
        execution: r
            .choice(
                fl_t,
                s,
                "execution",
                &[("serial", Execution::Serial), ("parallel", Execution::Parallel)],
                Some(f0.execution),
            )
            .unwrap_or(f0.execution),
        init: r.triple(fl_t, s, "init", f0.init),
    };
    let init_ok = |v: [f64; 3]| v.iter().all(|x| x.is_finite()) && v[0] >= 1.0 && v[1] >= 0.0 && v[2] >= 0.0;
    r.check(Some(fluid.init), s, "init", init_ok, "needs W >= 1, Q >= 0, Q_hat >= 0");

    let mo_t = r.sub(&root, "moments", false);
    let s = Some("moments");
    if let Some(t) = mo_t {
        r.unknown_keys(t, s, &["init"]);
    }
    let moments = MomentsBlock {
        init: r.triple(mo_t, s, "init", MomentsBlock::default().init),
    };
    r.check(Some(moments.init), s, "init", init_ok, "needs W >= 1, Q >= 0, Q_hat >= 0");

    let hy_t = r.sub(&root, "hybrid", false);
    let s = Some("hybrid");
    let h0 = HybridBlock::default();
    if let Some(t) = hy_t {
        r.unknown_keys(t, s, &["w_to", "init_phase", "init_ssthresh", "init"]);
    }
    let hybrid = HybridBlock {
        w_to: r.f64(hy_t, s, "w_to", Some(h0.w_to)).unwrap_or(h0.w_to),
        init_phase: r
            .choice(
                hy_t,
                s,
                "init_phase",
                &[
                    ("slow_start", TcpPhase::SlowStart),
                    ("congestion_avoidance", TcpPhase::CongestionAvoidance),
                    ("fast_recovery", TcpPhase::FastRecovery),
                ],
                Some(h0.init_phase),
            )
            .unwrap_or(h0.init_phase),
        init_ssthresh: r.f64(hy_t, s, "init_ssthresh", Some(h0.init_ssthresh)).unwrap_or(h0.init_ssthresh),
        init: r.triple(hy_t, s, "init", h0.init),
    };
    r.check(Some(hybrid.w_to), s, "w_to", |x| x >= 2.0 && x.is_finite(), "must be >= 2");
    r.check(Some(hybrid.init), s, "init", init_ok, "needs W >= 1, Q >= 0, Q_hat >= 0");
    if hybrid.init_phase == TcpPhase::SlowStart && hybrid.init[0] > hybrid.init_ssthresh {
        r.issue(s, "init_ssthresh", "slow start needs the initial window <= init_ssthresh");
    }

    let out_t = r.sub(&root, "output", false);
    if let Some(t) = out_t {
        r.unknown_keys(t, Some("output"), &["dir"]);
    }
    let output = OutputConfig {
        dir: r.string(out_t, Some("output"), "dir", false).map(PathBuf::from),
    };

    let cfg = match (model, seed, duration, dt, sample_interval, transient_fraction, link, red) {
        (Some(model), Some(seed), Some(duration), Some(dt), Some(sample_interval), Some(transient_fraction), Some(link), Some(red)) => {
            Some(ExperimentConfig {
                model,
                seed,
                duration,
                dt,
                sample_interval,
                transient_fraction,
                link,
                red,
                des,
                fluid,
                moments,
                hybrid,
                output,
            })
        }
        _ => None,
    };
    if let Some(c) = &cfg {
        if !r.has_issues() {
            // Cross-field checks the model constructors perform.
            if let Err(e) = c.scenario().red().and_then(|red: RedParams| red.validate()) {
                r.issue(Some("red"), "", e.to_string());
            }
        }
    }
    r.finish(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, Overrides::default())
}

/// Parameter box, evaluator and fitting settings for the surrogate
/// subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub seed: u64,
    pub n_points: usize,
    pub replications: u32,
    pub kind: SurrogateKind,
    pub folds: usize,
    pub base: Scenario,
    pub dims: Vec<BoxDim>,
    pub evaluator: ModelEvaluator,
}

impl SurrogateConfig {
    pub fn param_box(&self) -> Result<ParameterBox> {
        ParameterBox::new(self.dims.clone(), self.base)
    }
}

/// Parse a surrogate document:
///
/// ```toml
/// seed = 1
/// n_points = 40
/// kind = "polynomial2"      # or "rbf_gaussian"
/// folds = 5
/// replications = 1
/// [link]                    # base scenario, as in experiment documents
/// [red]
/// [[dims]]
/// name = "p_max"
/// lower = 0.05
/// upper = 0.2
/// [evaluator]
/// kind = "moments"          # or "des" / "fluid" with their settings
/// ```
pub fn parse_surrogate_config(text: &str, seed_override: Option<u64>) -> Result<SurrogateConfig> {
    let root = parse_table(text)?;
    let mut r = Reader::new(text);
    r.unknown_keys(
        &root,
        None,
        &["seed", "n_points", "replications", "kind", "folds", "link", "red", "dims", "evaluator"],
    );
    let top = Some(&root);
    let seed = match seed_override {
        Some(s) => Some(s),
        None => r.int(top, None, "seed", None),
    };
    let n_points = r.int(top, None, "n_points", Some(40));
    r.check(n_points, None, "n_points", |n| (2..=1_000_000).contains(&n), "must lie in [2, 1000000]");
    let replications = r.int(top, None, "replications", Some(1));
    r.check(replications, None, "replications", |n| (1..=100_000).contains(&n), "must lie in [1, 100000]");
    let folds = r.int(top, None, "folds", Some(5));
    r.check(folds, None, "folds", |n| n >= 2, "must be >= 2");
    let kind = r.choice(
        top,
        None,
        "kind",
        &[
            ("polynomial2", SurrogateKind::Polynomial2),
            ("rbf_gaussian", SurrogateKind::RbfGaussian),
        ],
        Some(SurrogateKind::Polynomial2),
    );
    let (link, red) = read_link(&mut r, &root);

    let mut dims = Vec::new();
    match root.get("dims") {
        Some(Value::Array(items)) if !items.is_empty() => {
            for item in items {
                let Value::Table(t) = item else {
                    r.issue(None, "dims", "entries must be tables");
                    continue;
                };
                let s = Some("dims");
                r.unknown_keys(t, s, &["name", "lower", "upper"]);
                let name = r.string(Some(t), s, "name", true);
                let lower = r.f64(Some(t), s, "lower", None);
                let upper = r.f64(Some(t), s, "upper", None);
                let param = name.as_deref().and_then(|n| {
                    let p = Param::parse(n);
                    if p.is_none() {
                        let all: Vec<&str> = Param::ALL.iter().map(|p| p.as_str()).collect();
                        r.issue(s, "name", format!("`{n}` is not one of: {}", all.join(", ")));
                    }
                    p
                });
                if let (Some(param), Some(lower), Some(upper)) = (param, lower, upper) {
                    dims.push(BoxDim { param, lower, upper });
                }
            }
        }
        _ => r.issue(None, "dims", "missing required array of tables `[[dims]]`"),
    }

    let ev_t = r.sub(&root, "evaluator", true);
    let s = Some("evaluator");
    let evaluator = match r.string(ev_t, s, "kind", true).as_deref() {
        Some("moments") => {
            if let Some(t) = ev_t {
                r.unknown_keys(t, s, &["kind"]);
            }
            Some(ModelEvaluator::Moments)
        }
        Some("des") => {
            if let Some(t) = ev_t {
                r.unknown_keys(t, s, &["kind", "duration", "sample_interval", "transient_fraction"]);
            }
            let duration = r.f64(ev_t, s, "duration", Some(60.0));
            let sample_interval = r.f64(ev_t, s, "sample_interval", Some(0.1));
            let transient_fraction = r.f64(ev_t, s, "transient_fraction", Some(0.2));
            r.check(duration, s, "duration", |d| d > 0.0 && d.is_finite(), "must be > 0");
            r.check(sample_interval, s, "sample_interval", |d| d > 0.0 && d.is_finite(), "must be > 0");
            r.check(transient_fraction, s, "transient_fraction", |f| (0.0..1.0).contains(&f), "must lie in [0, 1)");
            match (duration, sample_interval, transient_fraction) {
                (Some(duration), Some(sample_interval), Some(transient_fraction)) => Some(ModelEvaluator::Des {
                    duration,
                    sample_interval,
                    transient_fraction,
                }),
                _ => None,
            }
        }
        Some("fluid") => {
            if let Some(t) = ev_t {
                r.unknown_keys(t, s, &["kind", "n_paths", "t_end", "dt", "sample_interval", "transient_fraction"]);
            }
            let n_paths = r.int(ev_t, s, "n_paths", Some(100));
            let t_end = r.f64(ev_t, s, "t_end", Some(60.0));
            let dt = r.f64(ev_t, s, "dt", Some(1e-3));
            let sample_interval = r.f64(ev_t, s, "sample_interval", Some(0.1));
            let transient_fraction = r.f64(ev_t, s, "transient_fraction", Some(0.2));
            r.check(n_paths, s, "n_paths", |n| (1..=10_000_000).contains(&n), "must lie in [1, 10000000]");
            r.check(t_end, s, "t_end", |d| d > 0.0 && d.is_finite(), "must be > 0");
            r.check(dt, s, "dt", |d| d > 0.0 && d.is_finite(), "must be > 0");
            r.check(transient_fraction, s, "transient_fraction", |f| (0.0..1.0).contains(&f), "must lie in [0, 1)");
            if let (Some(si), Some(step)) = (sample_interval, dt) {
                if !(si >= step) {
                    r.issue(s, "sample_interval", "must be >= dt");
                }
            }
            match (n_paths, t_end, dt, sample_interval, transient_fraction) {
                (Some(n), Some(t_end), Some(dt), Some(sample_interval), Some(transient_fraction)) => {
                    Some(ModelEvaluator::Fluid {
                        n_paths: n as u32,
                        t_end,
                        dt,
                        sample_interval,
                        transient_fraction,
                    })
                }
                _ => None,
            }
        }
        Some(other) => {
            r.issue(s, "kind", format!("`{other}` is not one of: moments, des, fluid"));
            None
        }
        None => None,
    };

    let cfg = match (seed, n_points, replications, folds, kind, link, red, evaluator) {
        (Some(seed), Some(n), Some(reps), Some(folds), Some(kind), Some(link), Some(red), Some(evaluator)) => {
            Some(SurrogateConfig {
                seed,
                n_points: n as usize,
                replications: reps as u32,
                kind,
                folds: folds as usize,
                base: Scenario {
                    capacity: link.capacity,
                    prop_rtt: link.prop_rtt,
                    n_flows: link.n_flows,
                    buffer: link.buffer,
                    q_min: red.q_min,
                    q_max: red.q_max,
                    p_max: red.p_max,
                    w_q: red.w_q,
                },
                dims,
                evaluator,
            })
        }
        _ => None,
    };
    if let Some(c) = &cfg {
        if !r.has_issues() {
            if let Err(e) = c.param_box() {
                r.issue(None, "dims", e.to_string());
            }
        }
    }
    r.finish(cfg)
}
