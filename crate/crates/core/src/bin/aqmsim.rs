use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use aqmsim::harness::{
    compare_channels, detect_oscillation, parse_config_with, parse_surrogate_config, run_equilibrium,
    run_experiment, ExperimentConfig, ModelKind, OutputFormat, Overrides, DEFAULT_THRESHOLD, VERSION,
};
use aqmsim::series::TimeSeries;
use aqmsim::surrogate::{assess, evaluate_design, fit, predict, sample_plan, Dataset, SurrogateKind, SurrogateModel};
use aqmsim::{Error, Result};

#[derive(Parser)]
#[command(name = "aqmsim", version, about = "TCP Reno over a RED bottleneck: packet, fluid, moment and hybrid models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Des,
    Fluid,
    Moments,
    Hybrid,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Des => ModelKind::Des,
            Model::Fluid => ModelKind::Fluid,
            Model::Moments => ModelKind::Moments,
            Model::Hybrid => ModelKind::Hybrid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Polynomial2,
    RbfGaussian,
}

impl From<Kind> for SurrogateKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Polynomial2 => SurrogateKind::Polynomial2,
            Kind::RbfGaussian => SurrogateKind::RbfGaussian,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Configuration document (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the document's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output.dir` in the document.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one model and write its artifacts.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Overrides the document's model.
        #[arg(long, value_enum)]
        model: Option<Model>,
    },
    /// Solve the moment model's steady state.
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Build, assess and query surrogate models.
    Surrogate {
        #[command(subcommand)]
        command: SurrogateCommand,
    },
    /// Compare two time series after a transient cutoff.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Channel pairs `name_a:name_b` (or `name` for both); defaults to
        /// the shared channel names.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        /// Absolute cutoff time, s.
        #[arg(long, conflicts_with = "cutoff_fraction")]
        cutoff: Option<f64>,
        /// Cutoff as a fraction of the shorter series' end time.
        #[arg(long, default_value_t = 0.2)]
        cutoff_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Look for a dominant oscillation in one channel.
    Oscillation {
        series: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long, conflicts_with = "cutoff_fraction")]
        cutoff: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        cutoff_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several experiment documents in parallel, each into
    /// `OUT/<document stem>`.
    Batch {
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum SurrogateCommand {
    /// Latin hypercube plan over the document's parameter box.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a plan (or a fresh one) with the document's evaluator.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Plan CSV from `surrogate plan`.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a surrogate to a dataset and attach its cross-validated accuracy.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "polynomial2")]
        kind: Kind,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validated accuracy of a surrogate kind on a dataset.
    Assess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "polynomial2")]
        kind: Kind,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fitted surrogate at comma-separated points.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// One point per occurrence, coordinates comma-separated.
        #[arg(long = "point", required = true)]
        points: Vec<String>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Print to stdout, or write to `out` when given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            write_text(p, text)?;
            println!("{}", p.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(common: &Common, model: Option<ModelKind>) -> Result<(ExperimentConfig, PathBuf)> {
    let text = read_text(&common.config)?;
    let cfg = parse_config_with(&text, Overrides { model, seed: common.seed })?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| Error::InvalidParams("no output directory: pass --out or set output.dir".into()))?;
    Ok((cfg, out))
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn cutoff_for(a: &TimeSeries, b: Option<&TimeSeries>, cutoff: Option<f64>, fraction: f64) -> Result<f64> {
    if let Some(c) = cutoff {
        return Ok(c);
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParams(format!("cutoff fraction must lie in [0, 1) (got {fraction})")));
    }
    let end = |s: &TimeSeries| s.times().last().copied().unwrap_or(0.0);
    let e = b.map_or(end(a), |b| end(a).min(end(b)));
    Ok(fraction * e)
}

fn read_plan(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Surrogate(format!("plan row {}: {e}", i + 2)))
        })
        .collect()
}

fn plan_csv(names: &[String], points: &[Vec<f64>]) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn surrogate(cmd: SurrogateCommand) -> Result<()> {
    match cmd {
        SurrogateCommand::Plan { config, seed, out } => {
            let cfg = parse_surrogate_config(&read_text(&config)?, seed)?;
            let b = cfg.param_box()?;
            let points = sample_plan(&b, cfg.n_points, cfg.seed)?;
            let path = out.join("plan.csv");
            write_text(&path, &plan_csv(&b.names(), &points))?;
            println!("{}", path.display());
        }
        SurrogateCommand::Eval { config, seed, plan, out } => {
            let cfg = parse_surrogate_config(&read_text(&config)?, seed)?;
            let b = cfg.param_box()?;
            let points = match plan {
                Some(p) => read_plan(&p)?,
                None => sample_plan(&b, cfg.n_points, cfg.seed)?,
            };
            let ds = evaluate_design(&b, &points, &cfg.evaluator, cfg.replications, cfg.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let path = out.join("dataset.csv");
            ds.write(&path)?;
            println!("{}", path.display());
            println!("{}", Dataset::sidecar_path(&path).display());
            if !ds.failures.is_empty() {
                eprintln!("{} of {} points failed; see the sidecar", ds.failures.len(), points.len());
            }
        }
        SurrogateCommand::Fit { data, kind, folds, seed, out } => {
            let ds = Dataset::read(&data)?;
            let mut model = fit(&ds, kind.into())?;
            model.accuracy = Some(assess(&ds, kind.into(), folds, seed)?);
            let path = out.join("model.json");
            write_text(&path, &to_json(&model)?)?;
            println!("{}", path.display());
        }
        SurrogateCommand::Assess { data, kind, folds, seed, out } => {
            let ds = Dataset::read(&data)?;
            let report = assess(&ds, kind.into(), folds, seed)?;
            emit(out.map(|o| o.join("accuracy.json")).as_deref(), &to_json(&report)?)?;
        }
        SurrogateCommand::Predict { model, points } => {
            let m: SurrogateModel = serde_json::from_str(&read_text(&model)?)?;
            let mut rows = Vec::new();
            for p in &points {
                let x: Vec<f64> = p
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidParams(format!("point `{p}`: {e}")))?;
                if x.len() != m.input_names.len() {
                    return Err(Error::InvalidParams(format!(
                        "point `{p}` has {} coordinates; the model takes {} ({})",
                        x.len(),
                        m.input_names.len(),
                        m.input_names.join(", ")
                    )));
                }
                let pred = predict(&m, &x)?;
                if pred.extrapolated {
                    eprintln!("warning: point `{p}` lies outside the fitted box");
                }
                rows.push(serde_json::json!({ "point": x, "prediction": pred }));
            }
            print!("{}", to_json(&serde_json::json!({ "responses": m.response_names, "predictions": rows }))?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim { common, model } => {
            let (cfg, out) = load(&common, model.map(Into::into))?;
            list(&run_experiment(&cfg, &out, common.format.into())?.files);
        }
        Command::Equilibrium { common } => {
            let (cfg, out) = load(&common, None)?;
            list(&run_equilibrium(&cfg, &out)?.files);
        }
        Command::Surrogate { command } => surrogate(command)?,
        Command::Compare { a, b, channels, cutoff, cutoff_fraction, out, format } => {
            let sa = TimeSeries::read_csv(&a)?;
            let sb = TimeSeries::read_csv(&b)?;
            let pairs: Vec<(String, String)> = if channels.is_empty() {
                sa.names().iter().filter(|n| sb.names().contains(n)).map(|n| (n.clone(), n.clone())).collect()
            } else {
                channels
                    .iter()
                    .map(|c| match c.split_once(':') {
                        Some((x, y)) => (x.to_string(), y.to_string()),
                        None => (c.clone(), c.clone()),
                    })
                    .collect()
            };
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(x, y)| (x.as_str(), y.as_str())).collect();
            let cut = cutoff_for(&sa, Some(&sb), cutoff, cutoff_fraction)?;
            let report = compare_channels(&sa, &sb, cut, &refs)?;
            let text = match format {
                Format::Json => to_json(&report)?,
                Format::Csv => report.to_csv_string(),
            };
            let name = match format {
                Format::Json => "comparison.json",
                Format::Csv => "comparison.csv",
            };
            emit(out.map(|o| o.join(name)).as_deref(), &text)?;
        }
        Command::Oscillation { series, channel, cutoff, cutoff_fraction, threshold, out } => {
            let s = TimeSeries::read_csv(&series)?;
            let cut = cutoff_for(&s, None, cutoff, cutoff_fraction)?;
            let report = detect_oscillation(&s, &channel, cut, threshold)?;
            emit(out.map(|o| o.join("oscillation.json")).as_deref(), &to_json(&report)?)?;
        }
        Command::Batch { configs, seed, out, format } => {
            if configs.is_empty() {
                return Err(Error::InvalidParams("batch needs at least one config".into()));
            }
            let mut jobs = Vec::new();
            for path in &configs {
                let cfg = parse_config_with(&read_text(path)?, Overrides { model: None, seed })?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                if jobs.iter().any(|(s, _): &(String, ExperimentConfig)| *s == stem) {
                    return Err(Error::InvalidParams(format!("two batch configs share the name `{stem}`")));
                }
                jobs.push((stem, cfg));
            }
            let results: Vec<Result<Vec<PathBuf>>> = jobs
                .par_iter()
                .map(|(stem, cfg)| run_experiment(cfg, &out.join(stem), format.into()).map(|a| a.files))
                .collect();
            for r in results {
                list(&r?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aqmsim {VERSION}: error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
