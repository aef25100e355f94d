//! Command-line front end: `train`, `sweep`, `render`, `eval`, `slice`, `info`,
//! `gen`.
//!
//! Every command prints a human summary and writes (or, with `--json`,
//! prints) the same information as JSON.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{merge_json, RunConfig};
use crate::error::{Error, Result};
use crate::hash_encoding::{level_layout, param_count, ParamCount, StorageMode};
use crate::model::ClipPlane;
use crate::render::{image_mse, psnr, Camera};
use crate::scene_io::dataset::FrameEntry;
use crate::scene_io::{
    gen_synthetic, load_checkpoint, load_split, save_checkpoint, write_gray_png, write_png, Checkpoint, Dataset,
    SceneSpec, Split, TransformsFile,
};
use crate::trainer::{evaluate, gate_alpha, render_options, train_loop, PrunerMode};

pub const THREADS_ENV: &str = "HOLLOWNERF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hollownerf", version, about = "Hash-grid radiance fields with saliency pruning")]
pub struct Cli {
    /// Worker threads; 1 forces fully serial execution. Defaults to
    /// $HOLLOWNERF_THREADS, then the core count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print JSON instead of the human summary.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Train once per value of one config key and tabulate the results.
    Sweep(SweepArgs),
    /// Render views from a checkpoint.
    Render(RenderArgs),
    /// Report PSNR of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Export one saliency-grid slice as a grayscale PNG.
    Slice(SliceArgs),
    /// Print parameter counts for a configuration.
    Info(InfoArgs),
    /// Write a synthetic dataset.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrunerFlag {
    None,
    L1,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GateFlag {
    None,
    Hard,
    Soft,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config file; fields it omits keep the preset's values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Starting preset.
    #[arg(long, default_value = "desk")]
    pub preset: String,

    #[arg(long, value_enum)]
    pub pruner: Option<PrunerFlag>,

    #[arg(long, value_enum)]
    pub gate: Option<GateFlag>,

    #[arg(long, value_enum)]
    pub saliency: Option<Toggle>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub steps: Option<u64>,

    /// `dotted.key=value` overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut v = RunConfig::preset(&self.preset)?.to_value();
                let file: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                merge_json(&mut v, file);
                RunConfig::from_value(v)?
            }
            None => RunConfig::preset(&self.preset)?,
        };
        let mut sets = Vec::new();
        if let Some(p) = self.pruner {
            let mode = match p {
                PrunerFlag::None => PrunerMode::None,
                PrunerFlag::L1 => PrunerMode::L1,
                PrunerFlag::Admm => PrunerMode::Admm,
            };
            sets.push(format!("pruner.mode=\"{mode}\""));
        }
        if let Some(g) = self.gate {
            let mode = match g {
                GateFlag::None => "none",
                GateFlag::Hard => "hard",
                GateFlag::Soft => "soft",
            };
            sets.push(format!("model.gate.mode=\"{mode}\""));
        }
        if let Some(s) = self.saliency {
            sets.push(format!("model.saliency.enabled={}", s == Toggle::On));
        }
        if let Some(s) = self.seed {
            sets.push(format!("train.seed={s}"));
        }
        if let Some(s) = self.steps {
            sets.push(format!("train.steps={s}"));
        }
        sets.extend(self.overrides.iter().cloned());
        let cfg = base.with_overrides(&sets)?;
        if !cfg.model.saliency.enabled && cfg.pruner.mode != PrunerMode::None {
            return Err(Error::Config(format!(
                "pruner '{}' needs the saliency grid; pass --saliency on or --pruner none",
                cfg.pruner.mode
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory with transforms_{train,test}.json.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for config, metrics log, checkpoint and report.
    #[arg(long)]
    pub out: PathBuf,

    /// Store Adam moments in the checkpoint.
    #[arg(long)]
    pub moments: bool,

    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory; each run goes to `<out>/<index>`.
    #[arg(long)]
    pub out: PathBuf,

    /// Dotted config key to vary, e.g. `pruner.lambda`.
    #[arg(long)]
    pub key: String,

    /// Comma-separated values for `--key`.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub values: Vec<String>,

    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Render the views of this dataset directory.
    #[arg(long, conflicts_with = "poses")]
    pub data: Option<PathBuf>,

    #[arg(long, default_value = "test")]
    pub split: String,

    /// Transforms-style JSON listing camera poses to render.
    #[arg(long)]
    pub poses: Option<PathBuf>,

    /// Image size for `--poses`.
    #[arg(long, default_value_t = 64)]
    pub size: u32,

    /// Only these view indices.
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<usize>,

    /// Drop samples with `a x + b y + c z + d > 0` (world space), given as
    /// `a,b,c,d`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub slice_plane: Option<Vec<f64>>,

    /// Skip samples whose saliency weight is below this.
    #[arg(long)]
    pub skip_threshold: Option<f64>,

    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "test")]
    pub split: String,

    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// 0 = x, 1 = y, 2 = z.
    #[arg(long, default_value_t = 2)]
    pub axis: usize,

    /// Node index along the axis; defaults to the middle.
    #[arg(long)]
    pub index: Option<usize>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    /// Print the parameter grid over table sizes 2^14..2^19 and saliency
    /// resolutions none, 64, 96, 128 instead of one configuration.
    #[arg(long)]
    pub table: bool,

    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Preset scene name (hollow_sphere, solid_sphere, empty, box, two_blob).
    #[arg(long, default_value = "hollow_sphere")]
    pub scene: String,

    /// JSON scene spec; overrides `--scene`.
    #[arg(long)]
    pub scene_file: Option<PathBuf>,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 64)]
    pub views: usize,

    #[arg(long, default_value_t = 8)]
    pub test_views: usize,

    #[arg(long, default_value_t = 64)]
    pub resolution: u32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        // fails only when a pool already exists (repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.json),
        Command::Sweep(a) => cmd_sweep(a, cli.json),
        Command::Render(a) => cmd_render(a, cli.json),
        Command::Eval(a) => cmd_eval(a, cli.json),
        Command::Slice(a) => cmd_slice(a, cli.json),
        Command::Info(a) => cmd_info(a, cli.json),
        Command::Gen(a) => cmd_gen(a, cli.json),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn emit(json_mode: bool, value: &serde_json::Value, human: impl FnOnce()) {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(value).expect("json"));
    } else {
        human();
    }
}

fn cmd_train(a: &TrainArgs, json_mode: bool) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let report = train_to_dir(cfg, &a.data, &a.out, a.moments, !json_mode)?;
    emit(json_mode, &report, || {
        println!("trained {} steps ({} epochs)", report["steps"], report["epoch"]);
        if let Some(p) = report["final_psnr"].as_f64() {
            println!("  test psnr   {p:.2} dB");
        }
        if let Some(s) = report["final_sparsity"].as_f64() {
            println!("  sparsity    {s:.4} (budget {})", cfg.pruner.budget);
        }
        println!("  output      {}", a.out.display());
    });
    Ok(())
}

/// Trains `cfg` on `data` and writes config, metrics log, checkpoint and
/// report into `out`. Returns the report.
fn train_to_dir(cfg: RunConfig, data: &Path, out: &Path, moments: bool, verbose: bool) -> Result<serde_json::Value> {
    let bg = cfg.render.background;
    let train = load_split(data, Split::Train, bg)?;
    let test = load_split(data, Split::Test, bg).ok();
    create_dir(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let log_path = out.join("metrics.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let run = train_loop(cfg, &train, test.as_ref(), Some(&mut log), |r| {
        if verbose {
            eprintln!(
                "step {:>7}  epoch {:>5}  train mse {:.5}  psnr {}  s {}  gamma {:.4e}",
                r.step,
                r.epoch,
                r.train_mse,
                r.psnr.map_or("-".into(), |p| format!("{p:.2}")),
                r.sparsity.map_or("-".into(), |s| format!("{s:.4}")),
                r.gamma
            );
        }
    })?;
    std::io::Write::flush(&mut log).map_err(|e| Error::io(&log_path, e))?;

    let t = run.trainer;
    let ck = Checkpoint {
        config: cfg,
        pruner: t.pruner,
        step: t.step,
        epoch: t.epoch(),
        moments: moments.then(|| t.adam.clone()),
        model: t.model,
    };
    save_checkpoint(&ck, out.join("checkpoint.hnrf"))?;
    let last = run.metrics.last();
    let report = json!({
        "steps": ck.step,
        "epoch": ck.epoch,
        "steps_per_epoch": t.steps_per_epoch,
        "final_psnr": last.and_then(|r| r.psnr),
        "final_sparsity": last.and_then(|r| r.sparsity),
        "budget": cfg.pruner.budget,
        "within_budget": last.and_then(|r| r.sparsity).map(|s| s <= cfg.pruner.budget + 0.005),
        "gamma": ck.pruner.gamma,
        "params": cfg.model.param_count()?,
    });
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn cmd_sweep(a: &SweepArgs, json_mode: bool) -> Result<()> {
    let base = a.cfg.resolve()?;
    let mut rows = Vec::new();
    for (i, value) in a.values.iter().enumerate() {
        let cfg = base.with_overrides(&[format!("{}={value}", a.key)])?;
        let dir = a.out.join(i.to_string());
        let report = train_to_dir(cfg, &a.data, &dir, false, false)?;
        if !json_mode {
            eprintln!(
                "{}={value}: psnr {}  sparsity {}",
                a.key,
                report["final_psnr"].as_f64().map_or("-".into(), |p| format!("{p:.2}")),
                report["final_sparsity"].as_f64().map_or("-".into(), |s| format!("{s:.4}")),
            );
        }
        rows.push(json!({
            "value": value,
            "dir": dir,
            "final_psnr": report["final_psnr"],
            "final_sparsity": report["final_sparsity"],
            "gamma": report["gamma"],
        }));
    }
    let table = json!({ "key": a.key, "runs": rows });
    write_json(&a.out.join("sweep.json"), &table)?;
    emit(json_mode, &table, || {
        println!("{:<16} {:>10} {:>10}", a.key, "psnr", "sparsity");
        for r in &rows {
            println!(
                "{:<16} {:>10} {:>10}",
                r["value"].as_str().unwrap_or("?"),
                r["final_psnr"].as_f64().map_or("-".into(), |p| format!("{p:.2}")),
                r["final_sparsity"].as_f64().map_or("-".into(), |s| format!("{s:.4}")),
            );
        }
    });
    Ok(())
}

fn parse_plane(v: &Option<Vec<f64>>) -> Result<Option<ClipPlane>> {
    match v {
        None => Ok(None),
        Some(p) if p.len() == 4 && p.iter().all(|x| x.is_finite()) => Ok(Some([p[0], p[1], p[2], p[3]])),
        Some(_) => Err(Error::Usage("--slice-plane needs four finite numbers a,b,c,d".into())),
    }
}

fn load_poses(path: &Path, size: u32) -> Result<Vec<Camera>> {
    #[derive(serde::Deserialize)]
    struct PoseFile {
        camera_angle_x: f64,
        frames: Vec<PoseEntry>,
    }
    #[derive(serde::Deserialize)]
    struct PoseEntry {
        transform_matrix: crate::render::Mat4,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PoseFile = serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    if file.frames.is_empty() {
        return Err(Error::Load(format!("{} lists no poses", path.display())));
    }
    file.frames
        .iter()
        .map(|f| {
            Camera::from_angle_x(size, size, file.camera_angle_x, f.transform_matrix).map_err(|e| match e {
                Error::Config(m) => Error::Load(m),
                other => other,
            })
        })
        .collect()
}

fn cmd_render(a: &RenderArgs, json_mode: bool) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let clip = parse_plane(&a.slice_plane)?;
    let bg = ck.config.render.background;
    let (cams, targets, map, near, far): (Vec<Camera>, Option<Dataset>, _, _, _) = match (&a.data, &a.poses) {
        (Some(dir), _) => {
            let ds = load_split(dir, a.split.parse()?, bg)?;
            let cams = ds.frames.iter().map(|f| f.camera).collect();
            let (map, near, far) = (ds.map, ds.near, ds.far);
            (cams, Some(ds), map, near, far)
        }
        (None, Some(p)) => (
            load_poses(p, a.size)?,
            None,
            crate::model::UnitCubeMap::default(),
            crate::scene_io::dataset::DEFAULT_NEAR,
            crate::scene_io::dataset::DEFAULT_FAR,
        ),
        (None, None) => return Err(Error::Usage("render needs --data or --poses".into())),
    };
    let indices: Vec<usize> = if a.views.is_empty() { (0..cams.len()).collect() } else { a.views.clone() };
    if let Some(bad) = indices.iter().find(|i| **i >= cams.len()) {
        return Err(Error::Usage(format!("view {bad} out of range ({} views)", cams.len())));
    }
    let mut opts = crate::model::RenderOptions {
        samples_per_ray: a.samples.unwrap_or(ck.config.render.samples_per_ray),
        near,
        far,
        background: bg,
        alpha: gate_alpha(&ck.config, ck.epoch),
        skip_threshold: a.skip_threshold.or(ck.config.render.skip_threshold),
        clip_plane: clip,
        chunk_rays: ck.config.render.chunk_rays,
    };
    if opts.samples_per_ray == 0 {
        return Err(Error::Usage("--samples must be positive".into()));
    }
    opts.background = bg;
    create_dir(&a.out)?;
    let mut views = Vec::new();
    for &i in &indices {
        let img = ck.model.render_image(&cams[i], &map, &opts)?;
        let path = a.out.join(format!("view_{i:03}.png"));
        write_png(&img, &path)?;
        let psnr_v = match &targets {
            Some(ds) => Some(psnr(image_mse(&img, &ds.frames[i].image)?)?),
            None => None,
        };
        views.push(json!({"view": i, "path": path, "psnr": psnr_v}));
    }
    let report = json!({"views": views, "slice_plane": clip});
    write_json(&a.out.join("render.json"), &report)?;
    emit(json_mode, &report, || {
        for v in &views {
            match v["psnr"].as_f64() {
                Some(p) => println!("view {:>3}  {p:.2} dB  {}", v["view"], v["path"].as_str().unwrap_or("")),
                None => println!("view {:>3}  {}", v["view"], v["path"].as_str().unwrap_or("")),
            }
        }
    });
    Ok(())
}

fn cmd_eval(a: &EvalArgs, json_mode: bool) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let bg = ck.config.render.background;
    let ds = load_split(&a.data, a.split.parse()?, bg)?;
    let mut opts = render_options(&ck.config, &ds, gate_alpha(&ck.config, ck.epoch));
    if let Some(s) = a.samples {
        opts.samples_per_ray = s;
    }
    let e = evaluate(&ck.model, &ds, &opts, None)?;
    let report = json!({
        "split": ds.split,
        "mean_psnr": e.mean_psnr,
        "mean_mse": e.mean_mse,
        "per_view": e.per_view,
    });
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    emit(json_mode, &report, || {
        println!("{} views of {}: mean psnr {:.3} dB", e.per_view.len(), ds.split, e.mean_psnr);
        for (i, p) in e.per_view.iter().enumerate() {
            println!("  view {i:>3}  {p:.3} dB");
        }
    });
    Ok(())
}

fn cmd_slice(a: &SliceArgs, json_mode: bool) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let grid = ck
        .model
        .saliency
        .as_ref()
        .ok_or_else(|| Error::Usage("checkpoint was trained without a saliency grid; nothing to slice".into()))?;
    let index = a.index.unwrap_or(grid.resolution / 2);
    let img = grid.slice_export(a.axis, index)?;
    write_gray_png(&img, &a.out)?;
    let dark = img.data.iter().filter(|v| **v < 0.1).count();
    let mean = img.data.iter().map(|v| *v as f64).sum::<f64>() / img.data.len() as f64;
    let report = json!({
        "axis": a.axis,
        "index": index,
        "resolution": grid.resolution,
        "mean_p": mean,
        "pixels_below_0_1": dark,
        "path": a.out,
    });
    let mut side = a.out.clone().into_os_string();
    side.push(".json");
    write_json(Path::new(&side), &report)?;
    emit(json_mode, &report, || {
        println!(
            "slice axis {} index {index}: {}x{} mean p {mean:.4}, {dark} pixels below 0.1 -> {}",
            a.axis,
            img.width,
            img.height,
            a.out.display()
        );
    });
    Ok(())
}

/// One cell of the parameter grid printed by `info --table`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableCell {
    pub log2_table_size: u32,
    pub saliency_resolution: Option<usize>,
    pub counts: ParamCount,
}

/// Parameter totals for table sizes 2^14..2^19 against no saliency grid and
/// resolutions 64, 96 and 128, all other settings taken from `cfg`.
pub fn parameter_table(cfg: &RunConfig) -> Result<Vec<TableCell>> {
    let mut out = Vec::new();
    for t in [None, Some(64), Some(96), Some(128)] {
        for log2 in 14..=19 {
            let mut h = cfg.model.hashgrid;
            h.log2_table_size = log2;
            out.push(TableCell {
                log2_table_size: log2,
                saliency_resolution: t,
                counts: param_count(&h, &cfg.model.decoder, t)?,
            });
        }
    }
    Ok(out)
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn cmd_info(a: &InfoArgs, json_mode: bool) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.table {
        let table = parameter_table(&cfg)?;
        let report = json!({ "table": table });
        emit(json_mode, &report, || {
            print!("{:<12}", "");
            for log2 in 14..=19 {
                print!("{:>10}", format!("2^{log2}"));
            }
            println!();
            for row in table.chunks(6) {
                let label = match row[0].saliency_resolution {
                    None => "no saliency".to_string(),
                    Some(t) => format!("T={t}"),
                };
                print!("{label:<12}");
                for c in row {
                    print!("{:>10}", millions(c.counts.total));
                }
                println!();
            }
        });
        return Ok(());
    }
    let counts = cfg.model.param_count()?;
    let layout = level_layout(&cfg.model.hashgrid)?;
    let levels: Vec<_> = layout
        .iter()
        .map(|l| {
            json!({
                "resolution": l.resolution,
                "mode": if l.mode == StorageMode::Dense { "dense" } else { "hashed" },
                "entries": l.entries,
            })
        })
        .collect();
    let report = json!({ "params": counts, "levels": levels, "config": cfg });
    emit(json_mode, &report, || {
        println!("hashgrid   {:>12}  ({} levels, table 2^{})", counts.hashgrid, layout.len(), cfg.model.hashgrid.log2_table_size);
        println!("mlp        {:>12}", counts.mlp);
        println!("saliency   {:>12}", counts.saliency);
        println!("total      {:>12}  ({})", counts.total, millions(counts.total));
        for (i, l) in layout.iter().enumerate() {
            println!(
                "  level {i:>2}  N={:<5} {:<6} {:>8} entries",
                l.resolution,
                if l.mode == StorageMode::Dense { "dense" } else { "hashed" },
                l.entries
            );
        }
    });
    Ok(())
}

/// Writes one split as PNGs plus its transforms file.
pub fn write_dataset(dir: &Path, ds: &Dataset, camera_angle_x: f64, scene_radius: Option<f64>) -> Result<()> {
    let split_dir = dir.join(ds.split.as_str());
    create_dir(&split_dir)?;
    let mut frames = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        write_png(&f.image, split_dir.join(format!("r_{i}.png")))?;
        frames.push(FrameEntry {
            file_path: format!("./{}/r_{i}", ds.split),
            transform_matrix: f.camera.pose,
        });
    }
    let file = TransformsFile {
        camera_angle_x,
        frames,
        near: Some(ds.near),
        far: Some(ds.far),
        scene_radius,
    };
    write_json(&crate::scene_io::split_path(dir, ds.split), &file)
}

fn cmd_gen(a: &GenArgs, json_mode: bool) -> Result<()> {
    let scene = match &a.scene_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SceneSpec::preset(&a.scene)?,
    };
    if a.views == 0 || a.resolution == 0 {
        return Err(Error::Usage("--views and --resolution must be positive".into()));
    }
    create_dir(&a.out)?;
    let train = gen_synthetic(&scene, Split::Train, a.views, a.resolution, a.seed)?;
    write_dataset(&a.out, &train, scene.rig.camera_angle_x, None)?;
    if a.test_views > 0 {
        let test = gen_synthetic(&scene, Split::Test, a.test_views, a.resolution, a.seed.wrapping_add(1))?;
        write_dataset(&a.out, &test, scene.rig.camera_angle_x, None)?;
    }
    write_json(&a.out.join("scene.json"), &scene)?;
    let report = json!({
        "out": a.out,
        "train_views": a.views,
        "test_views": a.test_views,
        "resolution": a.resolution,
        "seed": a.seed,
        "scene": scene,
    });
    emit(json_mode, &report, || {
        println!(
            "wrote {} train and {} test views at {}x{} to {}",
            a.views,
            a.test_views,
            a.resolution,
            a.resolution,
            a.out.display()
        );
    });
    Ok(())
}
