//! Dispatch a configured experiment to its model and write the artifacts.
//!
//! Every run directory holds `manifest.json` and `config.toml` (enough to
//! re-run bit-identically), the time series, and `summary.json`. Nothing
//! written depends on the wall clock.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, ModelKind};
use crate::des::{simulate_dumbbell, TcpSettings};
use crate::error::{Error, Result};
use crate::fluid::{simulate_paths, EnsembleConfig, FluidState};
use crate::hybrid::{simulate_hybrid, HybridConfig, HybridState};
use crate::moments::{fixed_point, integrate_sampled, MomentState};
use crate::series::TimeSeries;
use crate::tcp::RtoPolicy;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    fn ext(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub model: Option<ModelKind>,
    pub seed: u64,
    /// File in the same directory holding the full configuration.
    pub config_file: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn file(&self, name: &str) -> Option<&Path> {
        self.files.iter().map(PathBuf::as_path).find(|p| p.file_name().is_some_and(|f| f == name))
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    /// Creates the directory; fails if it cannot be created or is a file.
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    fn series(&mut self, stem: &str, s: &TimeSeries, format: OutputFormat) -> Result<()> {
        let name = format!("{stem}.{}", format.ext());
        match format {
            OutputFormat::Csv => self.text(&name, &s.to_csv_string()),
            OutputFormat::Json => self.json(&name, &series_json(s)),
        }
    }

    fn finish(self) -> RunArtifacts {
        RunArtifacts {
            dir: self.dir,
            files: self.files,
        }
    }
}

/// `{"channels": [...], "t": [...], "rows": [[...], ...]}`.
pub fn series_json(s: &TimeSeries) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = (0..s.len()).map(|i| s.row(i)).collect();
    json!({ "channels": s.names(), "t": s.times(), "rows": rows })
}

fn write_manifest(w: &mut Writer, cfg: &ExperimentConfig, command: &str, model: Option<ModelKind>) -> Result<()> {
    let manifest = Manifest {
        tool: "aqmsim".into(),
        version: VERSION.into(),
        command: command.into(),
        model,
        seed: cfg.seed,
        config_file: "config.toml".into(),
        config: cfg.clone(),
    };
    w.json("manifest.json", &manifest)?;
    w.text("config.toml", &cfg.to_toml_string()?)
}

fn moment_init(v: [f64; 3]) -> MomentState {
    MomentState::new(v[0], v[1], v[2])
}

/// Run `cfg` and write its artifacts under `out`. The directory and
/// manifest are written before any simulation starts, so a bad output path
/// fails immediately.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<RunArtifacts> {
    let mut w = Writer::open(out)?;
    write_manifest(&mut w, cfg, "sim", Some(cfg.model))?;
    let scenario = cfg.scenario();
    let cutoff = cfg.transient_cutoff();
    match cfg.model {
        ModelKind::Des => {
            let mut des = scenario.des(cfg.duration, cfg.seed, cfg.sample_interval)?;
            des.tcp = TcpSettings {
                initial_window: cfg.des.initial_window,
                initial_ssthresh: cfg.des.initial_ssthresh,
                initial_rto: cfg.des.initial_rto,
                rto: RtoPolicy {
                    k: cfg.des.rto_k,
                    rto_min: cfg.des.rto_min,
                },
                start_jitter: cfg.des.start_jitter,
            };
            let run = simulate_dumbbell(&des)?;
            w.series("series", &run.series, format)?;
            w.json(
                "summary.json",
                &json!({
                    "model": "des",
                    "totals": run.summary,
                    "conserved": run.summary.conserved(),
                    "post_transient": {
                        "from": cutoff,
                        "mean_q": run.series.time_average("q", cutoff)?,
                        "mean_q_hat": run.series.time_average("q_hat", cutoff)?,
                    },
                    "warnings": run.warnings,
                }),
            )?;
        }
        ModelKind::Fluid => {
            let mut params = scenario.fluid()?;
            params.diffusion = cfg.fluid.diffusion;
            params.jumps = cfg.fluid.jump_mode();
            params.validate()?;
            let [w0, q0, h0] = cfg.fluid.init;
            let ens = simulate_paths(
                &params,
                FluidState::new(w0, q0, h0),
                &EnsembleConfig {
                    t_end: cfg.duration,
                    dt: cfg.dt,
                    sample_interval: cfg.sample_interval,
                    n_paths: cfg.fluid.n_paths,
                    seed: cfg.seed,
                    bins: cfg.fluid.bins as usize,
                    keep_paths: false,
                    execution: cfg.fluid.execution,
                },
            )?;
            w.series("series", &ens.stats, format)?;
            match format {
                OutputFormat::Csv => {
                    w.text("w_density.csv", &ens.w_density.to_csv_string())?;
                    w.text("q_density.csv", &ens.q_density.to_csv_string())?;
                }
                OutputFormat::Json => {
                    w.json("densities.json", &json!({ "W": ens.w_density, "Q": ens.q_density }))?;
                }
            }
            let last = ens.stats.last_row().unwrap_or_default();
            w.json(
                "summary.json",
                &json!({
                    "model": "fluid",
                    "n_paths": cfg.fluid.n_paths,
                    "post_transient": {
                        "from": cutoff,
                        "mean_w": ens.stats.time_average("W_mean", cutoff)?,
                        "mean_q": ens.stats.time_average("Q_mean", cutoff)?,
                        "mean_q_hat": ens.stats.time_average("Q_hat_mean", cutoff)?,
                    },
                    "final": ens.stats.names().iter().cloned().zip(last).collect::<std::collections::BTreeMap<_, _>>(),
                    "density_integrals": { "W": ens.w_density.integral(), "Q": ens.q_density.integral() },
                }),
            )?;
        }
        ModelKind::Moments => {
            let params = scenario.fluid()?;
            let series = integrate_sampled(
                &params,
                moment_init(cfg.moments.init),
                cfg.duration,
                cfg.dt,
                cfg.sample_interval,
            )?;
            w.series("series", &series, format)?;
            let last = series.last_row().unwrap_or_else(|| cfg.moments.init.to_vec());
            let eq = fixed_point(&params, MomentState::new(last[0], last[1], last[2]));
            let eq_json = match &eq {
                Ok(e) => json!({ "found": true, "equilibrium": e }),
                Err(err) => json!({ "found": false, "reason": err.to_string() }),
            };
            w.json("equilibrium.json", &eq_json)?;
            let distance = eq.as_ref().ok().map(|e| {
                [(last[0] - e.w) / e.w, (last[1] - e.q) / e.q.max(f64::MIN_POSITIVE), (last[2] - e.q_hat) / e.q_hat.max(f64::MIN_POSITIVE)]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            });
            w.json(
                "summary.json",
                &json!({
                    "model": "moments",
                    "final": { "t": cfg.duration, "W": last[0], "Q": last[1], "Q_hat": last[2] },
                    "post_transient": {
                        "from": cutoff,
                        "mean_w": series.time_average("W", cutoff)?,
                        "mean_q": series.time_average("Q", cutoff)?,
                        "mean_q_hat": series.time_average("Q_hat", cutoff)?,
                    },
                    "final_relative_distance_to_equilibrium": distance,
                }),
            )?;
        }
        ModelKind::Hybrid => {
            let mut params = scenario.hybrid()?;
            params.w_to = cfg.hybrid.w_to;
            params.validate()?;
            let [w0, q0, h0] = cfg.hybrid.init;
            let run = simulate_hybrid(
                &params,
                HybridState::new(cfg.hybrid.init_phase, w0, q0, h0, cfg.hybrid.init_ssthresh),
                &HybridConfig {
                    t_end: cfg.duration,
                    dt: cfg.dt,
                    sample_interval: cfg.sample_interval,
                    seed: cfg.seed,
                    averaging_start: cutoff,
                },
            )?;
            match format {
                OutputFormat::Csv => w.text("series.csv", &run.to_csv_string())?,
                OutputFormat::Json => w.json("series.json", &run.rows)?,
            }
            w.json("transitions.json", &run.transitions)?;
            w.json("summary.json", &json!({ "model": "hybrid", "summary": run.summary, "final_state": run.final_state }))?;
        }
    }
    Ok(w.finish())
}

/// Solve the moment model's steady state for `cfg` and write
/// `equilibrium.json` beside the manifest.
pub fn run_equilibrium(cfg: &ExperimentConfig, out: &Path) -> Result<RunArtifacts> {
    let mut w = Writer::open(out)?;
    write_manifest(&mut w, cfg, "equilibrium", None)?;
    let params = cfg.scenario().fluid()?;
    let eq = fixed_point(&params, moment_init(cfg.moments.init))?;
    w.json("equilibrium.json", &json!({ "found": true, "equilibrium": eq }))?;
    Ok(w.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn config(model: &str, duration: f64) -> ExperimentConfig {
        parse_config(&format!(
            r#"
model = "{model}"
seed = 7
duration = {duration}
sample_interval = 0.1
[link]
capacity = 100.0
prop_rtt = 0.1
n_flows = 4
[red]
q_min = 5.0
q_max = 15.0
p_max = 0.1
[fluid]
n_paths = 8
"#
        ))
        .unwrap()
    }

    fn read(p: &Path) -> Vec<u8> {
        std::fs::read(p).unwrap()
    }

    #[test]
    fn every_model_writes_and_repeats_bytes() {
        for model in ["des", "fluid", "moments", "hybrid"] {
            let cfg = config(model, 5.0);
            let tmp = tempfile::tempdir().unwrap();
            let a = run_experiment(&cfg, &tmp.path().join("a"), OutputFormat::Csv).unwrap();
            let b = run_experiment(&cfg, &tmp.path().join("b"), OutputFormat::Csv).unwrap();
            assert_eq!(a.files.len(), b.files.len());
            for (fa, fb) in a.files.iter().zip(&b.files) {
                assert_eq!(fa.file_name(), fb.file_name());
                assert_eq!(read(fa), read(fb), "{model}: {}", fa.display());
            }
            for name in ["manifest.json", "config.toml", "series.csv", "summary.json"] {
                assert!(a.file(name).is_some(), "{model} lacks {name}");
            }
            assert_eq!(a.file("equilibrium.json").is_some(), model == "moments");
        }
    }

    #[test]
    fn manifest_config_reruns() {
        let cfg = config("moments", 2.0);
        let tmp = tempfile::tempdir().unwrap();
        let a = run_experiment(&cfg, &tmp.path().join("a"), OutputFormat::Json).unwrap();
        let text = std::fs::read_to_string(a.file("config.toml").unwrap()).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, cfg);
        let b = run_experiment(&again, &tmp.path().join("b"), OutputFormat::Json).unwrap();
        assert_eq!(read(a.file("series.json").unwrap()), read(b.file("series.json").unwrap()));
        let m: Manifest = serde_json::from_slice(&read(a.file("manifest.json").unwrap())).unwrap();
        assert_eq!(m.config, cfg);
    }

    #[test]
    fn bad_output_path_fails_before_running() {
        let tmp = tempfile::tempdir().unwrap();
        let file = tmp.path().join("occupied");
        std::fs::write(&file, "x").unwrap();
        // A long DES run would take noticeable time if it started.
        let cfg = config("des", 1e6);
        let t0 = std::time::Instant::now();
        let e = run_experiment(&cfg, &file.join("run"), OutputFormat::Csv).unwrap_err();
        assert!(matches!(e, Error::Io { .. }), "{e}");
        assert!(t0.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn equilibrium_only() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_equilibrium(&config("moments", 1.0), tmp.path()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&read(a.file("equilibrium.json").unwrap())).unwrap();
        let q = v["equilibrium"]["Q_star"].as_f64().unwrap();
        assert!(((10.0 + q).powi(2) * (q - 5.0) - 200.0).abs() < 1e-8);
    }
}
