//! Command-line surface of the `dest` binary.
//!
//! Configuration is layered: defaults, then `--config`, then flags
//! (`--preset` first). `--print-config` dumps the merged result and exits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{InteractionMode, MotionChannels, Preset, RunConfig, TemporalVariant, TransformMode};
use crate::data::{joint_speed_stats, load_dataset, load_raw, save_dataset, synthesize, SpeedProfile, SynthSpec};
use crate::error::{DestError, Result};
use crate::eval::{EvalReport, Evaluator};
use crate::gradcheck::{run_gradcheck, GradCheckOptions};
use crate::graph::SkeletonTopology;
use crate::interaction::export_attention;
use crate::model::DestModel;
use crate::train::{check_dataset, predict_dataset, train};

pub const TOPOLOGY_FILE: &str = "topology.txt";
pub const PROFILE_FILE: &str = "profile.json";
pub const LOG_FILE: &str = "log.ndjson";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";

#[derive(Debug, Parser)]
#[command(name = "dest", version, about = "Skeleton-based temporal action segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Canonical JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Edge-list skeleton file; defaults to `topology.txt` next to the
    /// manifest, then to the bundled 25-joint layout.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the merged configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a per-epoch metric log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset, or score prediction files.
    Eval(EvalArgs),
    /// Finite-difference gradient checks for every op and module.
    Gradcheck(GradcheckArgs),
    /// Per-joint speed statistics of a dataset.
    Stats,
    /// Parameter and multiply-add table of a configuration.
    Summary(SummaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthPreset {
    SpeedContrast,
    Still,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "speed-contrast")]
    pub preset: SynthPreset,
    #[arg(long, default_value_t = 20)]
    pub seq: usize,
    #[arg(long, default_value_t = 400)]
    pub frames: usize,
    #[arg(long, default_value_t = 25)]
    pub joints: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
}

/// Model overrides shared by `train` and `summary`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Training schedule preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Replace the per-joint temporal module with the joint-shared baseline.
    #[arg(long)]
    pub jwtm_baseline: bool,
    #[arg(long, value_enum)]
    pub temporal_variant: Option<TemporalVariant>,
    #[arg(long, value_enum)]
    pub transform_mode: Option<TransformMode>,
    #[arg(long, value_enum)]
    pub interaction_mode: Option<InteractionMode>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub joints: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub temporal_layers: Option<usize>,
    #[arg(long)]
    pub interaction_layers: Option<usize>,
    #[arg(long)]
    pub asb_stages: Option<usize>,
    #[arg(long)]
    pub brb_stages: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Write a checkpoint every N epochs (the final one is always written).
    #[arg(long)]
    pub save_every: Option<usize>,
    /// Frame-difference input channels.
    #[arg(long, value_enum)]
    pub motion: Option<MotionChannels>,
    #[arg(long)]
    pub stop_at_acc: Option<f64>,
    #[arg(long)]
    pub stop_at_f1_50: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Relabel inter-boundary spans by majority vote; optional peak threshold.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pub refine: Option<f64>,
    /// Write every cross-attention map under `--out`.
    #[arg(long)]
    pub export_attention: bool,
    /// Write framewise predictions, one class id per line, under `--out`.
    #[arg(long)]
    pub save_predictions: bool,
    /// Score a prediction file against `--gt` instead of running a model.
    #[arg(long, requires = "gt", conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Only run checks whose name contains this string.
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Parameter entries sampled in the end-to-end model check.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, hide = true)]
    pub inject_wrong_sign: Option<String>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Read the configuration from a checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `args` and runs the selected command, writing to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, out),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => emit(out, &e.to_string()),
        Err(e) => Err(DestError::Config(e.to_string())),
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        None => {
            if common.print_config {
                let run = run_config(common, &ModelFlags::default())?;
                return emit(out, &run.to_json_pretty());
            }
            Err(DestError::Config("no subcommand given; see --help".into()))
        }
        Some(Command::Synth(a)) => cmd_synth(common, &a, out),
        Some(Command::Train(a)) => cmd_train(common, &a, out),
        Some(Command::Eval(a)) => cmd_eval(common, &a, out),
        Some(Command::Gradcheck(a)) => cmd_gradcheck(common, &a, out),
        Some(Command::Stats) => cmd_stats(common, out),
        Some(Command::Summary(a)) => cmd_summary(common, &a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    match writeln!(out, "{}", text.trim_end()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(DestError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

/// Defaults, config file, preset, then individual flags.
pub fn run_config(common: &Common, flags: &ModelFlags) -> Result<RunConfig> {
    let mut run = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = flags.preset {
        let preset = RunConfig::with_preset(p).optim;
        run.optim.lr = preset.lr;
        run.optim.batch_size = preset.batch_size;
        run.optim.epochs = preset.epochs;
    }
    let m = &mut run.model;
    if flags.jwtm_baseline {
        m.jwtm_baseline = true;
    }
    set(&mut m.temporal_variant, flags.temporal_variant);
    set(&mut m.transform_mode, flags.transform_mode);
    set(&mut m.interaction_mode, flags.interaction_mode);
    set(&mut m.classes, flags.classes);
    set(&mut m.joints, flags.joints);
    set(&mut m.in_channels, flags.channels);
    set(&mut m.temporal_layers, flags.temporal_layers);
    set(&mut m.interaction_layers, flags.interaction_layers);
    set(&mut m.asb_stages, flags.asb_stages);
    set(&mut m.brb_stages, flags.brb_stages);
    set(&mut run.optim.seed, common.seed);
    if common.manifest.is_some() {
        run.paths.manifest = common.manifest.clone();
    }
    if common.topology.is_some() {
        run.paths.topology = common.topology.clone();
    }
    if common.out.is_some() {
        run.paths.output_dir = common.out.clone();
    }
    Ok(run)
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Explicit path, then `topology.txt` beside the manifest, then the bundled
/// 25-joint layout when `V = 25`, else a chain.
pub fn resolve_topology(explicit: Option<&Path>, manifest: Option<&Path>, joints: usize) -> Result<SkeletonTopology> {
    if let Some(p) = explicit {
        return SkeletonTopology::load(p);
    }
    if let Some(dir) = manifest.and_then(Path::parent) {
        let p = dir.join(TOPOLOGY_FILE);
        if p.is_file() {
            return SkeletonTopology::load(&p);
        }
    }
    if joints == 25 {
        return Ok(SkeletonTopology::kinect25());
    }
    log::warn!("no topology given for V = {joints}; using a chain");
    SkeletonTopology::chain(joints)
}

fn require<'a>(p: Option<&'a PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.ok_or_else(|| DestError::Config(format!("{flag} is required")))
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    preset: &'a str,
    profile: &'a SpeedProfile,
    spec: &'a SynthSpec,
}

fn cmd_synth(common: &Common, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let dir = require(common.out.as_ref(), "--out")?;
    let (name, profile) = match a.preset {
        SynthPreset::SpeedContrast => ("speed-contrast", SpeedProfile::speed_contrast(a.classes, a.joints)?),
        SynthPreset::Still => ("still", SpeedProfile::still(a.classes, a.joints)),
    };
    let spec = SynthSpec::new(a.seq, a.frames, common.seed.unwrap_or(0));
    if common.print_config {
        let rec = SynthRecord { preset: name, profile: &profile, spec: &spec };
        return emit(out, &serde_json::to_string_pretty(&rec).expect("record serializes"));
    }
    let samples = synthesize(&profile, &spec)?;
    let manifest = save_dataset(dir, &samples)?;
    let rec = SynthRecord { preset: name, profile: &profile, spec: &spec };
    let profile_path = dir.join(PROFILE_FILE);
    fs::write(&profile_path, serde_json::to_string_pretty(&rec).expect("record serializes"))
        .map_err(|e| DestError::io(&profile_path, e))?;
    let topo = if a.joints == 25 {
        SkeletonTopology::kinect25()
    } else {
        SkeletonTopology::chain(a.joints)?
    };
    let topo_path = dir.join(TOPOLOGY_FILE);
    fs::write(&topo_path, topo.to_text()).map_err(|e| DestError::io(&topo_path, e))?;
    emit(out, &format!("wrote {} sequences; manifest {}", samples.len(), manifest.display()))
}

fn cmd_train(common: &Common, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = run_config(common, &a.model)?;
    let o = &mut run.optim;
    set(&mut o.epochs, a.epochs);
    set(&mut o.lr, a.lr);
    set(&mut o.batch_size, a.batch_size);
    set(&mut o.save_every, a.save_every);
    if a.stop_at_acc.is_some() {
        o.stop_at_acc = a.stop_at_acc;
    }
    if a.stop_at_f1_50.is_some() {
        o.stop_at_f1_50 = a.stop_at_f1_50;
    }
    set(&mut run.data.motion, a.motion);
    if common.print_config {
        return emit(out, &run.to_json_pretty());
    }
    run.validate()?;
    let manifest = require(run.paths.manifest.as_ref(), "--manifest")?.clone();
    let dir = run.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("dest-run"));
    let data = load_dataset(&manifest, &run.data)?;
    // The data fixes C unless it was given explicitly.
    if let (None, Some(first)) = (a.model.channels, data.first()) {
        if first.channels() != run.model.in_channels {
            log::info!("C = {} taken from the data", first.channels());
            run.model.in_channels = first.channels();
        }
    }
    let topo = resolve_topology(run.paths.topology.as_deref(), Some(&manifest), run.model.joints)?;
    let mut model = DestModel::new(run.model.clone(), topo, run.optim.seed)?;
    fs::create_dir_all(&dir).map_err(|e| DestError::io(&dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| DestError::io(&log_path, e))?;
    let save_every = run.optim.save_every;
    let summary = train(&mut model, &run, &data, |entry, model| {
        let line = entry.to_json();
        writeln!(log, "{line}").map_err(|e| DestError::io(&log_path, e))?;
        emit(out, &line)?;
        if save_every > 0 && (entry.epoch + 1) % save_every == 0 {
            let p = dir.join(format!("checkpoint_epoch{:04}.ckpt", entry.epoch + 1));
            Checkpoint::from_model(model, &run).save(&p)?;
        }
        Ok(())
    })?;
    let path = dir.join(FINAL_CHECKPOINT);
    Checkpoint::from_model(&model, &run).save(&path)?;
    if let Some(r) = summary.stopped_early {
        log::info!("stopped early after {} epochs: {}", summary.logs.len(), r.to_json());
    }
    log::info!("final checkpoint {}", path.display());
    Ok(())
}

fn cmd_eval(common: &Common, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    if let (Some(p), Some(g)) = (&a.pred, &a.gt) {
        let report = score_files(p, g, a.refine.is_some())?;
        return emit(out, &report.to_json());
    }
    let ckpt_path = a
        .checkpoint
        .clone()
        .or_else(|| common.config.as_ref().and_then(|c| RunConfig::load(c).ok()?.paths.checkpoint))
        .ok_or_else(|| DestError::Config("--checkpoint is required".into()))?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    if common.print_config {
        return emit(out, &ckpt.config.to_json_pretty());
    }
    let manifest = common
        .manifest
        .clone()
        .or_else(|| ckpt.config.paths.manifest.clone())
        .ok_or_else(|| DestError::Config("--manifest is required".into()))?;
    let topo_path = common.topology.clone().or_else(|| ckpt.config.paths.topology.clone());
    let topo = resolve_topology(topo_path.as_deref(), Some(&manifest), ckpt.config.model.joints)?;
    let (model, run) = ckpt.into_model(topo)?;
    let data = load_dataset(&manifest, &run.data)?;
    check_dataset(&model, &data)?;
    let preds = predict_dataset(&model, &data)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("dest-eval"));
    let mut ev = Evaluator::new();
    for (s, p) in data.iter().zip(&preds) {
        let labels = match a.refine {
            Some(th) => p.refined(th),
            None => p.labels(),
        };
        ev.add(&labels, &s.labels)?;
        if a.export_attention {
            for (l, map) in p.attention.iter().enumerate() {
                export_attention(&dir, l + 1, &s.id, map)?;
            }
        }
        if a.save_predictions {
            write_labels(&dir.join(format!("{}.txt", s.id)), &labels)?;
        }
    }
    emit(out, &ev.report().to_json())
}

/// Reads one non-negative class id per line; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| DestError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| DestError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected a class id, got {:?}", l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DestError::io(dir, e))?;
    }
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| DestError::io(path, e))
}

fn score_files(pred: &Path, gt: &Path, refine: bool) -> Result<EvalReport> {
    if refine {
        return Err(DestError::Config("--refine needs model outputs, not label files".into()));
    }
    let mut ev = Evaluator::new();
    ev.add(&read_labels(pred)?, &read_labels(gt)?)?;
    Ok(ev.report())
}

fn cmd_gradcheck(common: &Common, a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let d = GradCheckOptions::default();
    let opts = GradCheckOptions {
        eps: a.eps.unwrap_or(d.eps),
        tol: a.tol.unwrap_or(d.tol),
        seed: common.seed.unwrap_or(d.seed),
        only: a.op.clone(),
        inject_wrong_sign: a.inject_wrong_sign.clone(),
        model_samples: a.samples.unwrap_or(d.model_samples),
    };
    let report = run_gradcheck(&opts)?;
    if report.results.is_empty() {
        return Err(DestError::Config(format!("no check matches {:?}", a.op.as_deref().unwrap_or(""))));
    }
    emit(out, &report.to_string())?;
    let failed: Vec<String> = report
        .failures()
        .map(|r| {
            format!(
                "{} (worst input {} element {}, rel err {:.3e})",
                r.name, r.worst.0, r.worst.1, r.max_rel_err
            )
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(DestError::Numerical(format!("gradient check failed: {}", failed.join("; "))))
    }
}

fn cmd_stats(common: &Common, out: &mut dyn Write) -> Result<()> {
    let run = run_config(common, &ModelFlags::default())?;
    let manifest = require(run.paths.manifest.as_ref(), "--manifest")?;
    let samples = load_raw(manifest)?
        .iter()
        .map(|s| s.strided(run.data.stride))
        .collect::<Result<Vec<_>>>()?;
    let stats = joint_speed_stats(&samples)?;
    let mut text = String::from("rank\tjoint\tmean_speed\tvariance\n");
    for (rank, j) in stats.ranking().into_iter().enumerate() {
        text.push_str(&format!("{}\t{j}\t{:.6}\t{:.6}\n", rank + 1, stats.mean[j], stats.variance[j]));
    }
    emit(out, &text)
}

fn cmd_summary(common: &Common, a: &SummaryArgs, out: &mut dyn Write) -> Result<()> {
    let run = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.config,
        None => run_config(common, &a.model)?,
    };
    if common.print_config {
        return emit(out, &run.to_json_pretty());
    }
    let topo_path = common.topology.clone().or_else(|| run.paths.topology.clone());
    let topo = resolve_topology(
        topo_path.as_deref(),
        run.paths.manifest.as_deref(),
        run.model.joints,
    )?;
    let model = DestModel::new(run.model.clone(), topo, run.optim.seed)?;
    emit(out, &model.summary().to_string())
}
