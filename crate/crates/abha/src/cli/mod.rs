//! `abha` command-line harness: simulate, train, track, evaluate, bench.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use abha_core::abha::{track as abha_track, track_oracle, AbhaConfig};
use abha_core::encoder::{EncoderConfig, EncoderParams};
use abha_core::kalman::MotionModel;
use abha_core::metrics::{evaluate, MetricConfig};
use abha_core::mht::{track as mht_track, MhtConfig};
use abha_core::model::{DetectionTable, TrackTable};
use abha_core::simulator::{make_task, stream, synth_stop_and_go, SceneBounds, StopAndGoParams, TaskSpec};
use abha_core::training::{train, TrainConfig, TrainingInstance};

use crate::io::{self, write_atomic};
use report::{aggregate, comparison_csv, render_table, report_csv, summary_csv, RunRecord};

/// Environment variable naming the default output directory.
pub const OUTPUT_ROOT_ENV: &str = "ABHA_OUT";

/// Sub-stream of a seed reserved for ground-truth scene generation.
pub const SCENE_STREAM: u64 = 0;

const TASK_CHOICES: [&str; 9] = ["phi", "φ", "A", "B", "C", "1", "2", "3", "4"];

#[derive(Debug, Parser)]
#[command(
    name = "abha",
    version,
    about = "Particle tracking benchmark: encoder-pruned association with Kalman filtering vs. a frame-recursive baseline",
    args_override_self = true,
    after_help = "Any flag may also be set in a flat `key = value` file passed with --config <file>; \
                  flags on the command line take precedence. Default output directory: $ABHA_OUT or `.`."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth scene and its corrupted detections for one task.
    Simulate(SimulateArgs),
    /// Train encoder parameters on labeled detection patches.
    Train(TrainArgs),
    /// Track a detection table with ABHA or the MHT baseline.
    Track(TrackArgs),
    /// Score predicted tracks against ground truth.
    Evaluate(EvaluateArgs),
    /// Simulate, track and evaluate every task × seed × method.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Abha,
    Mht,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Number of ground-truth particles.
    #[arg(long, default_value_t = 20)]
    pub particles: usize,
    /// Frames per scene.
    #[arg(long, default_value_t = 100)]
    pub frames: u32,
    /// Scene width (px).
    #[arg(long, default_value_t = 30.0)]
    pub scene_width: f64,
    /// Scene height (px).
    #[arg(long, default_value_t = 30.0)]
    pub scene_height: f64,
    /// Per-frame probability of switching between Brownian and directed motion.
    #[arg(long, default_value_t = 0.05)]
    pub switch_prob: f64,
    /// Lower bound of the directed speed (px/frame).
    #[arg(long, default_value_t = 0.5)]
    pub speed_min: f64,
    /// Upper bound of the directed speed (px/frame).
    #[arg(long, default_value_t = 2.0)]
    pub speed_max: f64,
    /// Brownian step standard deviation per axis (px).
    #[arg(long, default_value_t = 0.5)]
    pub sigma_d: f64,
}

impl SceneArgs {
    pub fn bounds(&self) -> Result<SceneBounds> {
        Ok(SceneBounds::new(self.scene_width, self.scene_height, self.frames)?)
    }

    pub fn motion(&self) -> StopAndGoParams {
        StopAndGoParams {
            switch_prob: self.switch_prob,
            speed_min: self.speed_min,
            speed_max: self.speed_max,
            sigma_d: self.sigma_d,
            ..StopAndGoParams::default()
        }
    }

    /// Ground-truth scene for `seed`.
    pub fn scene(&self, seed: u64) -> Result<TrackTable> {
        Ok(synth_stop_and_go(
            self.particles,
            &self.bounds()?,
            &self.motion(),
            &mut stream(seed, SCENE_STREAM),
        )?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrackerArgs {
    /// Frame interval of the motion model.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Process noise standard deviation.
    #[arg(long, default_value_t = 1e-3)]
    pub sigma_q: f64,
    /// Measurement noise standard deviation.
    #[arg(long, default_value_t = 1e-3)]
    pub sigma_r: f64,
    /// MHT association gate (px).
    #[arg(long, default_value_t = 10.0)]
    pub gate: f64,
    /// MHT misses tolerated before a hypothesis is removed.
    #[arg(long, default_value_t = 2)]
    pub max_misses: usize,
    /// ABHA: drop trajectories with fewer points.
    #[arg(long, default_value_t = 1)]
    pub min_track_length: usize,
}

impl TrackerArgs {
    pub fn motion(&self) -> Result<MotionModel> {
        Ok(MotionModel::constant_velocity(self.dt, self.sigma_q, self.sigma_r)?)
    }

    pub fn mht(&self) -> Result<MhtConfig> {
        Ok(MhtConfig {
            gate: self.gate,
            max_misses: self.max_misses,
            motion: self.motion()?,
        })
    }

    pub fn abha(&self, encoder: EncoderConfig) -> Result<AbhaConfig> {
        let mut cfg = AbhaConfig::new(encoder);
        cfg.motion = self.motion()?;
        cfg.min_track_length = self.min_track_length;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Point match gate (px).
    #[arg(long, default_value_t = 3.0)]
    pub d_phi: f64,
    /// GOSPA cutoff.
    #[arg(long, default_value_t = 5.0)]
    pub cutoff: f64,
    /// GOSPA order.
    #[arg(long, default_value_t = 2.0)]
    pub order: f64,
    /// Count links by exact position equality instead of through point matches.
    #[arg(long)]
    pub literal_links: bool,
}

impl MetricArgs {
    pub fn config(&self) -> MetricConfig {
        MetricConfig {
            d_phi: self.d_phi,
            c: self.cutoff,
            p: self.order,
            literal_links: self.literal_links,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Task preset.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(TASK_CHOICES))]
    pub task: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EncoderArgs {
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub key_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub value_dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    /// Output classes, clutter column included.
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Largest frame index the time embedding covers.
    #[arg(long, default_value_t = 100)]
    pub max_frames: usize,
    /// Patch width used to normalize positions (px).
    #[arg(long, default_value_t = 30.0)]
    pub x_lim: f64,
    /// Patch height used to normalize positions (px).
    #[arg(long, default_value_t = 30.0)]
    pub y_lim: f64,
}

impl EncoderArgs {
    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            key_dim: self.key_dim,
            value_dim: self.value_dim,
            ffn_dim: self.ffn_dim,
            layers: self.layers,
            heads: self.heads,
            classes: self.classes,
            max_frames: self.max_frames,
            x_lim: self.x_lim,
            y_lim: self.y_lim,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labeled detection CSVs (`t,x,y,label`); the last --val-count are held out.
    #[arg(required = true, num_args = 1..)]
    pub patches: Vec<PathBuf>,
    /// Validation patches taken from the end of the list (default: one in five).
    #[arg(long)]
    pub val_count: Option<usize>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_base: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_max: f64,
    /// Half-period of the triangular learning-rate cycle (epochs).
    #[arg(long, default_value_t = 4)]
    pub cycle_epochs: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    /// Stop once the mean validation JSC_A reaches this value.
    #[arg(long, default_value_t = 0.8)]
    pub jsc_target: f64,
    /// Seed for initialization and patch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Match ground-truth clutter freely instead of pinning it to the last class.
    #[arg(long)]
    pub no_reserve_clutter: bool,
    /// Parameter file to write (default: <out-dir>/params.bin).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training history CSV (default: next to the parameter file).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Detection CSV (`t,x,y[,label]`).
    #[arg(long)]
    pub detections: PathBuf,
    /// Encoder parameter file (ABHA).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// ABHA with the ground-truth association from the label column.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    /// Output tracks CSV (default: <out-dir>/tracks_<method>.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Ground-truth tracks CSV for a single run.
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    /// Predicted tracks CSV for a single run.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub task: String,
    #[arg(long, default_value = "-")]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with columns `task,method,seed,truth,pred`; paths relative to the manifest.
    #[arg(long, conflicts_with_all = ["truth", "pred"])]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Per-run report CSV (default: <out-dir>/report.csv); the summary goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Task presets to run.
    #[arg(long, value_delimiter = ',', default_values_t = TASK_CHOICES.iter().filter(|t| **t != "φ").map(|t| t.to_string()), value_parser = clap::builder::PossibleValuesParser::new(TASK_CHOICES))]
    pub tasks: Vec<String>,
    /// Number of seeds per task.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Abha, Method::Mht])]
    pub methods: Vec<Method>,
    /// Encoder parameters; without them ABHA runs with the ground-truth association.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn out_root(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let task = TaskSpec::preset(&a.task)?;
    let bounds = a.scene.bounds()?;
    let truth = a.scene.scene(a.seed)?;
    let (labeled, _) = make_task(&truth, &task, &bounds, a.seed)?;
    let dir = out_root(&a.out_dir);
    let stem = format!("{}_s{}", task.name, a.seed);
    let truth_path = dir.join(format!("{stem}_truth.csv"));
    let det_path = dir.join(format!("{stem}_detections.csv"));
    io::write_tracks(&truth_path, &truth)?;
    io::write_detections(&det_path, &labeled)?;
    let clutter = labeled.rows.iter().filter(|d| d.is_clutter()).count();
    let real = labeled.len() - clutter;
    println!(
        "task {} seed {}: {} ground-truth points, {} detections ({} dropped, {} clutter)",
        task.name,
        a.seed,
        truth.len(),
        labeled.len(),
        truth.len() - real,
        clutter
    );
    println!("wrote {} and {}", truth_path.display(), det_path.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let enc = a.encoder.config();
    enc.validate()?;
    let mut instances = Vec::with_capacity(a.patches.len());
    for path in &a.patches {
        let d = io::read_detections(path).with_context(|| format!("reading {}", path.display()))?;
        if !d.is_labeled() || d.is_empty() {
            bail!("{}: training needs a non-empty label column", path.display());
        }
        instances.push(TrainingInstance::from_labeled(&d)?);
    }
    let n = instances.len();
    let val_count = a.val_count.unwrap_or((n / 5).max(1));
    let (train_set, val_set) = if n == 1 {
        (instances.clone(), instances)
    } else {
        if val_count == 0 || val_count >= n {
            bail!("--val-count must lie in 1..{n}");
        }
        let val = instances.split_off(n - val_count);
        (instances, val)
    };
    let cfg = TrainConfig {
        lr_base: a.lr_base,
        lr_max: a.lr_max,
        cycle_epochs: a.cycle_epochs,
        max_epochs: a.max_epochs,
        jsc_target: a.jsc_target,
        seed: a.seed,
        reserve_clutter_column: !a.no_reserve_clutter,
        ..TrainConfig::default()
    };
    let init = EncoderParams::init(&enc, a.seed)?;
    let outcome = train(&train_set, &val_set, &enc, &cfg, init)?;
    let params_path = a.out.clone().unwrap_or_else(|| out_root(&a.out_dir).join("params.bin"));
    let history_path = a
        .history
        .clone()
        .unwrap_or_else(|| with_suffix(&params_path, "_history.csv"));
    io::save_params(&params_path, &enc, &outcome.params)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "val_jsc", "lr"])?;
    for r in &outcome.history {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.val_jsc.to_string(),
            r.lr.to_string(),
        ])?;
    }
    write_atomic(&history_path, &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    println!(
        "{} train / {} val patches, {} epochs, best validation JSC_A {:.4} ({:?})",
        train_set.len(),
        val_set.len(),
        outcome.history.len(),
        outcome.best_val_jsc,
        outcome.stop
    );
    println!("wrote {} and {}", params_path.display(), history_path.display());
    Ok(())
}

/// Runs one tracker on a detection table. ABHA uses `params` when given and
/// otherwise the ground-truth association from the label column.
pub fn run_method(
    method: Method,
    detections: &DetectionTable,
    tracker: &TrackerArgs,
    params: Option<&(EncoderConfig, EncoderParams)>,
) -> Result<(String, TrackTable)> {
    Ok(match method {
        Method::Mht => ("mht".into(), mht_track(&detections.without_labels(), &tracker.mht()?)?),
        Method::Abha => match params {
            Some((enc, p)) => (
                "abha".into(),
                abha_track(&detections.without_labels(), p, &tracker.abha(*enc)?)?,
            ),
            None => {
                if !detections.is_labeled() {
                    bail!("oracle association needs a label column");
                }
                let cfg = tracker.abha(EncoderConfig::default())?;
                ("abha-oracle".into(), track_oracle(detections, &cfg)?)
            }
        },
    })
}

pub fn cmd_track(a: &TrackArgs) -> Result<()> {
    let d = io::read_detections(&a.detections).with_context(|| format!("reading {}", a.detections.display()))?;
    let params = match (a.method, &a.params, a.oracle) {
        (Method::Abha, None, false) => bail!("--method abha requires --params (or --oracle with labeled detections)"),
        (Method::Abha, Some(p), false) => Some(io::load_params(p)?),
        _ => None,
    };
    let (name, out) = run_method(a.method, &d, &a.tracker, params.as_ref())?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| out_root(&a.out_dir).join(format!("tracks_{name}.csv")));
    io::write_tracks(&path, &out)?;
    println!(
        "{name}: {} tracks, {} points -> {}",
        out.track_count(),
        out.len(),
        path.display()
    );
    Ok(())
}

/// Drops predicted rows outside the ground truth's frame range, warning once.
fn restrict_frames(truth: &TrackTable, pred: TrackTable, label: &str) -> Result<TrackTable> {
    let last = truth.frame_count();
    let outside = pred.rows().iter().filter(|p| p.t > last).count();
    if outside == 0 {
        return Ok(pred);
    }
    eprintln!("warning: {label}: {outside} predicted points lie after ground-truth frame {last}; evaluating frames 1..={last}");
    Ok(TrackTable::new(
        pred.into_rows().into_iter().filter(|p| p.t <= last).collect(),
    )?)
}

struct ManifestRow {
    task: String,
    method: String,
    seed: u64,
    truth: PathBuf,
    pred: PathBuf,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["task", "method", "seed", "truth", "pred"] {
        bail!("{}: header must be task,method,seed,truth,pred", path.display());
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(ManifestRow {
            task: rec[0].trim().to_string(),
            method: rec[1].trim().to_string(),
            seed: rec[2]
                .trim()
                .parse()
                .with_context(|| format!("{} line {line}: bad seed", path.display()))?,
            truth: base.join(rec[3].trim()),
            pred: base.join(rec[4].trim()),
        });
    }
    Ok(rows)
}

fn write_reports(records: &[RunRecord], report_path: &Path, extra_comparison: bool) -> Result<()> {
    let summaries = aggregate(records);
    write_atomic(report_path, &report_csv(records)?)?;
    write_atomic(&with_suffix(report_path, "_summary.csv"), &summary_csv(&summaries)?)?;
    if extra_comparison {
        write_atomic(
            &report_path.with_file_name("comparison.csv"),
            &comparison_csv(&summaries)?,
        )?;
    }
    print!("{}", render_table(&summaries));
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let metrics = a.metrics.config();
    let runs = match (&a.manifest, &a.truth, &a.pred) {
        (Some(m), _, _) => read_manifest(m)?,
        (None, Some(t), Some(p)) => vec![ManifestRow {
            task: a.task.clone(),
            method: a.method.clone(),
            seed: a.seed,
            truth: t.clone(),
            pred: p.clone(),
        }],
        _ => bail!("give --truth and --pred, or --manifest"),
    };
    let mut records = Vec::with_capacity(runs.len());
    for run in runs {
        let truth = io::read_tracks(&run.truth).with_context(|| format!("reading {}", run.truth.display()))?;
        let pred = io::read_tracks(&run.pred).with_context(|| format!("reading {}", run.pred.display()))?;
        let pred = restrict_frames(&truth, pred, &run.pred.display().to_string())?;
        records.push(RunRecord {
            task: run.task,
            method: run.method,
            seed: run.seed,
            report: evaluate(&truth, &pred, &metrics)?,
        });
    }
    let path = a.out.clone().unwrap_or_else(|| out_root(&a.out_dir).join("report.csv"));
    write_reports(&records, &path, false)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// One simulated (task, seed) cell with all methods' outputs.
pub struct BenchCell {
    pub task: String,
    pub seed: u64,
    pub truth: TrackTable,
    pub detections: DetectionTable,
    pub predictions: Vec<(String, TrackTable)>,
}

pub fn bench_cells(a: &BenchArgs, params: Option<&(EncoderConfig, EncoderParams)>) -> Result<Vec<BenchCell>> {
    let bounds = a.scene.bounds()?;
    let mut jobs = Vec::new();
    for name in &a.tasks {
        let task = TaskSpec::preset(name)?;
        for seed in a.first_seed..a.first_seed + a.seeds {
            jobs.push((task.clone(), seed));
        }
    }
    let run = |task: &TaskSpec, seed: u64| -> Result<BenchCell> {
        let truth = a.scene.scene(seed)?;
        let (labeled, _) = make_task(&truth, task, &bounds, seed)?;
        let mut predictions = Vec::new();
        for &m in &a.methods {
            predictions.push(run_method(m, &labeled, &a.tracker, params)?);
        }
        Ok(BenchCell {
            task: task.name.clone(),
            seed,
            truth,
            detections: labeled,
            predictions,
        })
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let chunks: Vec<&[(TaskSpec, u64)]> = jobs.chunks(jobs.len().div_ceil(workers).max(1)).collect();
    let results: Vec<Result<Vec<BenchCell>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| s.spawn(|| chunk.iter().map(|(t, seed)| run(t, *seed)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let mut cells = Vec::with_capacity(jobs.len());
    for r in results {
        cells.extend(r?);
    }
    Ok(cells)
}

fn trajectories_csv(cells: &[BenchCell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "seed", "source", "id", "t", "x", "y"])?;
    let mut emit = |cell: &BenchCell, source: &str, x: &TrackTable| -> Result<()> {
        for p in x.rows() {
            w.write_record([
                cell.task.clone(),
                cell.seed.to_string(),
                source.to_string(),
                p.id.to_string(),
                p.t.to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ])?;
        }
        Ok(())
    };
    for cell in cells {
        emit(cell, "truth", &cell.truth)?;
        emit(cell, "detections", &TrackTable::from_detections(&cell.detections)?)?;
        for (name, pred) in &cell.predictions {
            emit(cell, name, pred)?;
        }
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let params = a.params.as_deref().map(io::load_params).transpose()?;
    let metrics = a.metrics.config();
    let cells = bench_cells(a, params.as_ref())?;
    let mut records = Vec::new();
    for cell in &cells {
        for (name, pred) in &cell.predictions {
            records.push(RunRecord {
                task: cell.task.clone(),
                method: name.clone(),
                seed: cell.seed,
                report: evaluate(&cell.truth, pred, &metrics)?,
            });
        }
    }
    records.sort_by(|x, y| (&x.method, x.seed).cmp(&(&y.method, y.seed)));
    let order = |t: &str| {
        a.tasks
            .iter()
            .position(|n| TaskSpec::preset(n).map(|s| s.name == t).unwrap_or(false))
    };
    records.sort_by_key(|r| order(&r.task));
    let dir = out_root(&a.out_dir);
    write_reports(&records, &dir.join("report.csv"), true)?;
    write_atomic(&dir.join("trajectories.csv"), &trajectories_csv(&cells)?)?;
    println!(
        "wrote report.csv, report_summary.csv, comparison.csv and trajectories.csv to {}",
        dir.display()
    );
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `args` (program name first), honoring `--config`.
pub fn parse<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args =
        config::expand_config(args).map_err(|e| clap::Error::raw(clap::error::ErrorKind::Io, format!("{e:#}\n")))?;
    Cli::try_parse_from(args)
}

pub fn main() -> ExitCode {
    let cli = match parse(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
