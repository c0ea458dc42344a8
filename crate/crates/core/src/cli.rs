//! The `vad` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use image::RgbImage;

use crate::arena::ScoringArena;
use crate::config::{env_var_name, EngineConfig, KEYS};
use crate::detector::{Detector, DetectorKind, FittedModel, ManifestSource, TensorSource};
use crate::error::{Error, Result};
use crate::eval::{aggregate, build_setting, evaluate, write_report_csv, EvalOptions, EvalReport, SplitSpec};
use crate::maps::{render_overlay, AnomalyMap, ScoreRange};
use crate::padim::fit_padim;
use crate::patchcore::fit_patchcore;
use crate::pipeline::score_image;
use crate::profile::{profile_inference, ProfileReport};
use crate::tensorio::{load_manifest, DatasetManifest};

pub type Sink = dyn Write + Send;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "vad", version, about = "Memory-bank anomaly detection on precomputed features")]
pub struct Cli {
    /// JSON config file of flat dotted keys
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build one split file per seed for the configured setting
    Split,
    /// Fit the configured detector on a split's training ids
    Fit {
        #[arg(long, value_name = "FILE")]
        split: PathBuf,
        /// Artifact path (default: paths.model_out)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Print per-image scores as JSON lines, optionally rendering overlays
    Score {
        #[arg(long, value_name = "FILE")]
        artifact: PathBuf,
        /// Comma-separated ids (default: the split's test ids, or every test entry)
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Write one overlay PNG per id to paths.overlay_dir
        #[arg(long)]
        overlay: bool,
    },
    /// Score a split's test ids and write an evaluation report
    Eval {
        #[arg(long, value_name = "FILE")]
        split: PathBuf,
        #[arg(long, value_name = "FILE")]
        artifact: PathBuf,
        /// Report path (default: paths.report_out)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Measure footprint, latency and scoring memory of an artifact
    Profile {
        #[arg(long, value_name = "FILE")]
        artifact: PathBuf,
        /// Stream the split's test ids (default: every test entry)
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Report path (default: paths.report_out)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Aggregate evaluation reports into a mean ± std CSV
    Report {
        #[arg(required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,
        /// CSV path (default: stdout)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Text listing every config key, its default and environment variable.
pub fn keys_help() -> String {
    let mut s = String::from(
        "Configuration keys (precedence: --set > environment > --config file > default):\n",
    );
    for k in KEYS {
        s.push_str(&format!(
            "  {:<28} {}\n      default {}, env {}\n",
            k.key,
            k.help,
            (k.default)(),
            env_var_name(k.key)
        ));
    }
    s
}

/// The clap command with the key table attached to every subcommand's long help.
pub fn command() -> clap::Command {
    let help = keys_help();
    Cli::command()
        .after_long_help(help.clone())
        .mut_subcommands(|sub| sub.after_long_help(help.clone()))
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args`, resolves configuration against `env` and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, env: Vec<(String, String)>, out: &mut Sink, err: &mut Sink) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut Sink = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return EXIT_USAGE;
        }
    };
    let result = EngineConfig::load(cli.config.as_deref(), env, &cli.overrides)
        .map_err(|e| Failure::Usage(e.to_string()))
        .and_then(|cfg| dispatch(&cli.command, &cfg, out, err));
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: &Command, cfg: &EngineConfig, out: &mut Sink, err: &mut Sink) -> CmdResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match cmd {
        Command::Split => cmd_split(cfg, out),
        Command::Fit { split, out: path } => cmd_fit(cfg, split, path.as_deref(), out),
        Command::Score { artifact, ids, split, overlay } => {
            cmd_score(cfg, artifact, ids, split.as_deref(), *overlay, out, err)
        }
        Command::Eval { split, artifact, out: path } => cmd_eval(cfg, split, artifact, path.as_deref(), out),
        Command::Profile { artifact, split, out: path } => {
            cmd_profile(cfg, artifact, split.as_deref(), path.as_deref(), out)
        }
        Command::Report { reports, out: path } => cmd_report(reports, path.as_deref(), out),
    })
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn manifest(cfg: &EngineConfig) -> std::result::Result<DatasetManifest, Failure> {
    let path = cfg
        .paths
        .manifest
        .as_deref()
        .ok_or_else(|| Failure::Usage("paths.manifest is not set".into()))?;
    require_file(path, "manifest")?;
    let m = load_manifest(path)?;
    Ok(match &cfg.paths.feature_root {
        Some(root) => m.with_root(root),
        None => m,
    })
}

fn read_split(path: &Path) -> std::result::Result<SplitSpec, Failure> {
    require_file(path, "split file")?;
    Ok(SplitSpec::read(path)?)
}

fn load_model(path: &Path) -> std::result::Result<FittedModel, Failure> {
    require_file(path, "artifact")?;
    Ok(FittedModel::load(path)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(out: &mut Sink, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn split_file_name(dataset: &str, setting: &str, seed: u64) -> String {
    format!("{dataset}_{setting}_seed{seed}.json")
}

fn cmd_split(cfg: &EngineConfig, out: &mut Sink) -> CmdResult {
    let m = manifest(cfg)?;
    fs::create_dir_all(&cfg.paths.split_dir).map_err(|e| Error::io(&cfg.paths.split_dir, e))?;
    for &seed in &cfg.seeds {
        let spec = build_setting(&m, cfg.setting, seed, cfg.contamination_policy)?;
        let path = cfg
            .paths
            .split_dir
            .join(split_file_name(&m.dataset_name, cfg.setting.name(), seed));
        spec.write(&path)?;
        say(out, path.display())?;
    }
    Ok(())
}

fn cmd_fit(cfg: &EngineConfig, split: &Path, dest: Option<&Path>, out: &mut Sink) -> CmdResult {
    let m = manifest(cfg)?;
    let split = read_split(split)?;
    // labels are never consulted: fitting sees only the train id list
    let train = ManifestSource::new(&m, &split.train_ids).with_source_resolution(cfg.input_resolution);
    let model = match cfg.detector {
        DetectorKind::Padim => FittedModel::Padim(fit_padim(&train, &cfg.padim)?),
        DetectorKind::PatchCore => FittedModel::PatchCore(fit_patchcore(&train, &cfg.patchcore)?),
    };
    let path = dest.unwrap_or(&cfg.paths.model_out);
    ensure_parent(path)?;
    model.save(path)?;
    say(out, path.display())?;
    Ok(())
}

fn check_kind(cfg: &EngineConfig, model: &FittedModel) -> CmdResult {
    if model.kind() != cfg.detector {
        return Err(Failure::Usage(format!(
            "artifact holds a {} model but detector is {}",
            model.kind(),
            cfg.detector
        )));
    }
    Ok(())
}

fn default_test_ids(m: &DatasetManifest, split: Option<&Path>) -> std::result::Result<Vec<String>, Failure> {
    Ok(match split {
        Some(p) => read_split(p)?.test_ids,
        None => m
            .entries
            .iter()
            .filter(|e| e.split == crate::tensorio::Split::Test)
            .map(|e| e.id.clone())
            .collect(),
    })
}

fn cmd_score(
    cfg: &EngineConfig,
    artifact: &Path,
    ids: &[String],
    split: Option<&Path>,
    overlay: bool,
    out: &mut Sink,
    err: &mut Sink,
) -> CmdResult {
    let m = manifest(cfg)?;
    let model = load_model(artifact)?;
    check_kind(cfg, &model)?;
    let ids = if ids.is_empty() { default_test_ids(&m, split)? } else { ids.to_vec() };
    let source = ManifestSource::new(&m, &ids).with_source_resolution(cfg.input_resolution);
    let post = cfg.post_chain(model.kind());
    let mut maps: Vec<AnomalyMap> = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let tensor = source.load(i)?;
        let map = score_image(&model, &tensor, &post, &ScoringArena::new())?;
        let line = serde_json::json!({ "id": id, "score": map.image_score });
        say(out, line)?;
        if overlay {
            maps.push(map);
        }
    }
    if overlay {
        let Some(range) = ScoreRange::of_maps(&maps) else {
            return Ok(());
        };
        let dir = &cfg.paths.overlay_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, map) in ids.iter().zip(&maps) {
            let image = overlay_base(&m, id, map, err)?;
            render_overlay(map, &image, range, dir.join(format!("{id}.png")))?;
        }
    }
    Ok(())
}

/// The entry's image resized to the map, or mid-gray when it has none.
fn overlay_base(m: &DatasetManifest, id: &str, map: &AnomalyMap, err: &mut Sink) -> Result<RgbImage> {
    let (h, w) = map.values.dims();
    let entry = m.entry(id)?;
    match &entry.image_path {
        Some(rel) => {
            let path = m.root().join(rel);
            let img = image::open(&path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
                .to_rgb8();
            if (img.height() as usize, img.width() as usize) == (h, w) {
                Ok(img)
            } else {
                Ok(image::imageops::resize(&img, w as u32, h as u32, image::imageops::FilterType::Triangle))
            }
        }
        None => {
            let _ = writeln!(err, "warning: {id} has no image_path; overlay drawn on gray");
            Ok(RgbImage::from_pixel(w as u32, h as u32, image::Rgb([128, 128, 128])))
        }
    }
}

fn cmd_eval(
    cfg: &EngineConfig,
    split: &Path,
    artifact: &Path,
    dest: Option<&Path>,
    out: &mut Sink,
) -> CmdResult {
    let m = manifest(cfg)?;
    let split = read_split(split)?;
    let model = load_model(artifact)?;
    check_kind(cfg, &model)?;
    let opts = EvalOptions {
        post: cfg.post_chain(model.kind()),
        source_resolution: cfg.input_resolution,
        config_echo: cfg.echo(),
    };
    let report = evaluate(&model, &split, &m, &opts)?;
    let path = dest.unwrap_or(&cfg.paths.report_out);
    write_text(path, &report.to_json()?)?;
    for w in &report.warnings {
        say(out, format!("warning: {w}"))?;
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    say(
        out,
        format!(
            "{} {} {} seed {}: img_roc {} auc_pr {} img_f1 {}",
            report.dataset_name,
            report.detector_kind,
            report.setting,
            report.seed,
            fmt(report.img_roc),
            fmt(report.auc_pr),
            fmt(report.img_f1)
        ),
    )?;
    Ok(())
}

fn cmd_profile(
    cfg: &EngineConfig,
    artifact: &Path,
    split: Option<&Path>,
    dest: Option<&Path>,
    out: &mut Sink,
) -> CmdResult {
    let m = manifest(cfg)?;
    let model = load_model(artifact)?;
    check_kind(cfg, &model)?;
    let ids = default_test_ids(&m, split)?;
    let stream = ManifestSource::new(&m, &ids).with_source_resolution(cfg.input_resolution);
    let opts = cfg.profile_options(model.kind());
    let report: ProfileReport = profile_inference(&model, &stream, &opts).map_err(|e| match e {
        Error::InvalidConfig(msg) => Failure::Usage(msg),
        other => Failure::Runtime(other),
    })?;
    let path = dest.unwrap_or(&cfg.paths.report_out);
    write_text(path, &report.to_json()?)?;
    say(out, ProfileReport::CSV_HEADER)?;
    say(out, report.csv_row())?;
    Ok(())
}

fn cmd_report(paths: &[PathBuf], dest: Option<&Path>, out: &mut Sink) -> CmdResult {
    let reports = paths
        .iter()
        .map(|p| {
            require_file(p, "report")?;
            Ok(EvalReport::read(p)?)
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let rows = aggregate(&reports);
    match dest {
        Some(p) => {
            ensure_parent(p)?;
            let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            write_report_csv(&rows, f)?;
        }
        None => write_report_csv(&rows, out)?,
    }
    Ok(())
}
