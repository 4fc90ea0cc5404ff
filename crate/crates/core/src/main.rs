use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use hmb_core::evaluation::{run_split_eval, sweep_params, sweep_table, Method, NoiseMode, NoiseSpec, SweepAxis};
use hmb_core::io::{export_heatmap, ingest_trajectories, load_dataset, read_motion_grids, save_dataset};
use hmb_core::pipeline::heat_map_from_motion;
use hmb_core::synth::{builtin_activity_suite, builtin_suite_with, sub_activity_suite, SynthConfig};
use hmb_core::{
    classify_asf, classify_sf, classify_sliding, heat_map_from_trajectories, load_model, majority_smooth, save_model,
    train, ActivityModel, AlignConfig, Coefficient, EvalConfig, FitMode, GridSpec, HeatParams, HmbError,
    KernelConfig, StreamInput, TrainConfig, TrainingSet,
};

#[derive(Parser)]
#[command(name = "hmb", version, about = "Heat-map based group activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn trajectories or motion grids into exported heat maps.
    BuildHm(BuildHmArgs),
    /// Train an activity model from a dataset directory.
    Train(TrainArgs),
    /// Label whole clips with a trained model.
    Classify(ClassifyArgs),
    /// Label sliding windows over long clips or motion grids.
    ClassifyStream(StreamArgs),
    /// Stratified split evaluation.
    Evaluate(EvaluateArgs),
    /// Split evaluation over a range of one parameter.
    Sweep(SweepArgs),
    /// Write a builtin synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = 10)]
    patch_size: u32,
    #[arg(long, default_value_t = 640)]
    scene_width: u32,
    #[arg(long, default_value_t = 480)]
    scene_height: u32,
}

impl GridArgs {
    fn grid(&self) -> hmb_core::Result<GridSpec> {
        GridSpec::new(self.scene_width, self.scene_height, self.patch_size)
    }
}

#[derive(Args, Clone)]
struct HeatArgs {
    /// Temporal decay per frame, or "inf".
    #[arg(long, default_value = "0.125")]
    kt: Coefficient,
    /// Spatial falloff per patch, or "inf".
    #[arg(long, default_value = "2")]
    kp: Coefficient,
}

impl HeatArgs {
    fn params(&self) -> HeatParams {
        HeatParams {
            k_t: self.kt,
            k_p: self.kp,
            ..HeatParams::default()
        }
    }
}

#[derive(Args, Clone)]
struct AlignArgs {
    /// Mean key-point radius in patches; defaults to a quarter of the smaller grid side.
    #[arg(long)]
    i_radius: Option<f64>,
    #[arg(long, default_value_t = 5)]
    n_max: usize,
    /// Landmark map family: rotation, similarity or linear.
    #[arg(long, default_value = "rotation")]
    fit: FitMode,
}

impl AlignArgs {
    fn config(&self) -> AlignConfig {
        AlignConfig {
            n_max: self.n_max,
            i_radius: self.i_radius,
            fit: self.fit,
            ..AlignConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Asf,
    Sf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Asf => Method::Asf,
            MethodArg::Sf => Method::Sf,
        }
    }
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Number of voting neighbors for adaptive fitting.
    #[arg(long, default_value_t = 1)]
    w: usize,
    /// Kernel width, or "auto" for the width stored in the model.
    #[arg(long, default_value = "auto")]
    sigma: String,
    #[arg(long, value_enum, default_value = "asf")]
    method: MethodArg,
}

impl KernelArgs {
    fn sigma(&self) -> Result<Option<f64>, Failure> {
        if self.sigma == "auto" {
            return Ok(None);
        }
        let s: f64 = self
            .sigma
            .parse()
            .map_err(|_| Failure::Usage(format!("--sigma expects a number or \"auto\", got {:?}", self.sigma)))?;
        Ok(Some(s))
    }

    fn check(&self) -> Result<(), Failure> {
        if matches!(self.method, MethodArg::Sf) && (self.w != 1 || self.sigma != "auto") {
            return Err(Failure::Usage("--w and --sigma only apply to --method asf".into()));
        }
        Ok(())
    }
}

#[derive(Args)]
struct BuildHmArgs {
    /// Trajectory CSV (clip_id,object_id,frame,x,y).
    #[arg(long, conflicts_with = "motion", required_unless_present = "motion")]
    data: Option<PathBuf>,
    /// Motion-magnitude grid file.
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Motion magnitude threshold; Otsu split of the magnitudes when absent.
    #[arg(long, requires = "motion")]
    threshold: Option<f64>,
    /// Current frame; defaults to the last frame of each clip.
    #[arg(long)]
    t_cur: Option<i64>,
    /// Output directory for `<clip>.txt` matrices and their sidecars.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    heat: HeatArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding trajectories.csv and manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    heat: HeatArgs,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trajectory CSV, or a dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Label table destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    over: Overrides,
}

/// Optional overrides of the parameters stored in a model.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    patch_size: Option<u32>,
    #[arg(long)]
    scene_width: Option<u32>,
    #[arg(long)]
    scene_height: Option<u32>,
    #[arg(long)]
    kt: Option<Coefficient>,
    #[arg(long)]
    kp: Option<Coefficient>,
}

impl Overrides {
    /// Grid and heat parameters for inputs, checked against the model.
    fn resolve(&self, model: &ActivityModel) -> Result<(GridSpec, HeatParams), Failure> {
        let g = model.grid;
        let grid = GridSpec::new(
            self.scene_width.unwrap_or(g.scene_width),
            self.scene_height.unwrap_or(g.scene_height),
            self.patch_size.unwrap_or(g.patch_size),
        )?;
        if grid != g {
            return Err(HmbError::GridMismatch.into());
        }
        let mut heat = model.params.heat;
        if let Some(k) = self.kt {
            heat.k_t = k;
        }
        if let Some(k) = self.kp {
            heat.k_p = k;
        }
        for m in model.parameter_mismatches(&heat, &model.params.align) {
            warn!("parameter mismatch, {m}");
        }
        Ok((grid, heat))
    }
}

#[derive(Args)]
struct StreamArgs {
    /// Trajectory CSV; every clip is streamed separately.
    #[arg(long, conflicts_with = "motion", required_unless_present = "motion")]
    data: Option<PathBuf>,
    /// Motion-magnitude grid file.
    #[arg(long)]
    motion: Option<PathBuf>,
    #[arg(long, requires = "motion")]
    threshold: Option<f64>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 30)]
    window: u32,
    #[arg(long, default_value_t = 15)]
    stride: u32,
    /// Majority smoothing span in windows; 1 disables it.
    #[arg(long, default_value_t = 1)]
    smooth: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    w: usize,
    #[arg(long, default_value = "auto")]
    sigma: String,
    #[command(flatten)]
    over: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseModeArg {
    Iid,
    Drift,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Dataset directory holding trajectories.csv and manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of every label used for training.
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Split seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5", conflicts_with = "seed")]
    seeds: Vec<u64>,
    /// A single split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Expected positional noise in pixels added to test clips.
    #[arg(long, default_value_t = 0.0)]
    noise_m: f64,
    #[arg(long, value_enum, default_value = "iid")]
    noise_mode: NoiseModeArg,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    heat: HeatArgs,
    #[command(flatten)]
    align: AlignArgs,
    #[command(flatten)]
    kernel: KernelArgs,
}

impl EvalArgs {
    fn seeds(&self) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => self.seeds.clone(),
        }
    }

    fn config(&self) -> Result<EvalConfig, Failure> {
        self.kernel.check()?;
        Ok(EvalConfig {
            heat: self.heat.params(),
            align: self.align.config(),
            w: self.kernel.w,
            sigma: self.kernel.sigma()?,
            noise: NoiseSpec {
                m: self.noise_m,
                seed: self.noise_seed,
                mode: match self.noise_mode {
                    NoiseModeArg::Iid => NoiseMode::Iid,
                    NoiseModeArg::Drift => NoiseMode::Drift,
                },
            },
            method: self.kernel.method.into(),
        })
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Report destination (tab separated); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as JSON next to the table.
    #[arg(long, requires = "out")]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Parameter to vary: kt, kp or m.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma separated values; "inf" is accepted for kt and kp.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<Coefficient>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Six single-phase group activities.
    Activities,
    /// Group activities plus Exchange and Return.
    Full,
    /// Approach, Stay and Separate excerpts.
    Sub,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    suite: Suite,
    /// Clips per label for the sub-activity suite.
    #[arg(long, default_value_t = 80)]
    per_label: usize,
    /// Positional jitter in pixels.
    #[arg(long)]
    jitter: Option<f64>,
    /// Dataset directory to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

enum Failure {
    Usage(String),
    Data(HmbError),
    Internal(String),
}

impl From<HmbError> for Failure {
    fn from(e: HmbError) -> Self {
        match e {
            HmbError::InvalidParameter(_) | HmbError::InvalidKernel(_) | HmbError::WindowTooLarge { .. } => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Data(e),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::BuildHm(a) => build_hm(a),
        Command::Train(a) => train_cmd(a),
        Command::Classify(a) => classify(a),
        Command::ClassifyStream(a) => classify_stream(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Internal(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Internal(e.to_string())),
    }
}

fn open_model(path: &Path) -> Result<ActivityModel, Failure> {
    if !path.exists() {
        return Err(Failure::Usage(format!("model file {} not found", path.display())));
    }
    Ok(load_model(path)?)
}

fn mkdir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Internal(format!("{}: {e}", dir.display())))
}

fn build_hm(a: BuildHmArgs) -> Result<(), Failure> {
    let grid = a.grid.grid()?;
    let params = a.heat.params();
    mkdir(&a.out)?;
    if let Some(path) = &a.motion {
        let f = File::open(path).map_err(|e| HmbError::Io {
            path: path.clone(),
            source: e,
        })?;
        let seq = read_motion_grids(BufReader::new(f), &grid, a.threshold)?;
        let t_cur = match a.t_cur {
            Some(t) => t,
            None => seq.frames.last().map(|f| f.0).ok_or(HmbError::NoRecords)?,
        };
        let mut hm = heat_map_from_motion(&seq, &params, t_cur)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("motion").to_string();
        hm.clip_id = stem.clone();
        export_heatmap(&hm, a.out.join(format!("{stem}.txt")))?;
        info!("wrote heat map {stem}");
        return Ok(());
    }
    let data = a.data.as_ref().expect("clap enforces --data or --motion");
    let clips = ingest_trajectories(data, Some(&grid))?;
    for c in &clips {
        let mut hm = heat_map_from_trajectories(&c.trajectories, &grid, &params, a.t_cur)?;
        hm.clip_id = c.clip_id.clone();
        export_heatmap(&hm, a.out.join(format!("{}.txt", c.clip_id)))?;
    }
    info!("wrote {} heat maps to {}", clips.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let grid = a.grid.grid()?;
    let params = a.heat.params();
    let ds = load_dataset(&a.data, &grid)?;
    let mut ts = TrainingSet::default();
    for c in &ds.clips {
        ts.push(c.clip.heat_map(&grid, &params)?, c.label.clone());
    }
    let cfg = TrainConfig {
        align: a.align.config(),
        ..TrainConfig::default()
    };
    let model = train(&ts, &cfg)?;
    for c in &model.clusters {
        info!("{}: {} iterations, converged {}", c.label, c.iterations, c.converged);
        if !c.skipped.is_empty() {
            warn!("{}: skipped {} clips without usable key points", c.label, c.skipped.len());
        }
    }
    save_model(&model, &a.out)?;
    Ok(())
}

fn input_clips(path: &Path, grid: &GridSpec) -> Result<Vec<hmb_core::Clip>, Failure> {
    if path.is_dir() {
        return Ok(ingest_trajectories(path.join(hmb_core::io::TRAJECTORY_FILE), Some(grid))?);
    }
    Ok(ingest_trajectories(path, Some(grid))?)
}

fn classify(a: ClassifyArgs) -> Result<(), Failure> {
    a.kernel.check()?;
    let model = open_model(&a.model)?;
    let (grid, heat) = a.over.resolve(&model)?;
    let clips = input_clips(&a.data, &grid)?;
    let kc = KernelConfig {
        w: a.kernel.w,
        sigma: a.kernel.sigma()?.unwrap_or(model.sigma),
    };
    let mut out = String::from("clip_id\tlabel\tscore\n");
    for c in &clips {
        let hm = c.heat_map(&grid, &heat)?;
        let result = match a.kernel.method {
            MethodArg::Asf => classify_asf(&hm, &model, &kc),
            MethodArg::Sf => classify_sf(&hm, &model),
        };
        match result {
            Ok(r) => out.push_str(&format!("{}\t{}\t{:.6e}\n", c.clip_id, r.label, r.score)),
            Err(e) => {
                warn!("{}: {e}", c.clip_id);
                out.push_str(&format!("{}\t-\tnan\n", c.clip_id));
            }
        }
    }
    write_output(a.out.as_deref(), &out)
}

fn classify_stream(a: StreamArgs) -> Result<(), Failure> {
    let model = open_model(&a.model)?;
    let (grid, _) = a.over.resolve(&model)?;
    let sigma = KernelArgs {
        w: a.w,
        sigma: a.sigma.clone(),
        method: MethodArg::Asf,
    }
    .sigma()?;
    let kc = KernelConfig {
        w: a.w,
        sigma: sigma.unwrap_or(model.sigma),
    };
    let mut streams = Vec::new();
    if let Some(path) = &a.motion {
        let f = File::open(path).map_err(|e| HmbError::Io {
            path: path.clone(),
            source: e,
        })?;
        let seq = read_motion_grids(BufReader::new(f), &grid, a.threshold)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("motion").to_string();
        streams.push((name, classify_sliding(StreamInput::Motion(&seq), a.window, a.stride, &model, &kc)?));
    } else {
        let data = a.data.as_ref().expect("clap enforces --data or --motion");
        for c in input_clips(data, &grid)? {
            let w = classify_sliding(StreamInput::Trajectories(&c.trajectories), a.window, a.stride, &model, &kc)?;
            streams.push((c.clip_id, w));
        }
    }
    let mut out = String::from("clip_id\tstart_frame\tend_frame\tlabel\tsmoothed\n");
    for (id, windows) in &streams {
        let labels: Vec<&str> = windows.iter().map(|w| w.label.as_str()).collect();
        let smoothed = majority_smooth(&labels, a.smooth);
        for (w, s) in windows.iter().zip(smoothed) {
            out.push_str(&format!("{id}\t{}\t{}\t{}\t{s}\n", w.start_frame, w.end_frame, w.label));
        }
    }
    write_output(a.out.as_deref(), &out)
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = a.eval.config()?;
    let ds = load_dataset(&a.eval.data, &a.eval.grid.grid()?)?;
    let ev = run_split_eval(&ds, a.eval.train_fraction, &cfg, &a.eval.seeds())?;
    let mut text = ev.average.to_tsv();
    text.push_str(&format!("TER_variance\t{:.6}\n", ev.ter_variance()));
    write_output(a.out.as_deref(), &text)?;
    if a.json {
        let out = a.out.as_ref().expect("clap enforces --out with --json");
        let json = serde_json::to_string_pretty(&ev).map_err(|e| Failure::Internal(e.to_string()))?;
        let path = out.with_extension("json");
        fs::write(&path, json).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = a.eval.config()?;
    let ds = load_dataset(&a.eval.data, &a.eval.grid.grid()?)?;
    let rows = sweep_params(&ds, a.axis, &a.values, &cfg, a.eval.train_fraction, &a.eval.seeds())?;
    write_output(a.out.as_deref(), &sweep_table(a.axis, &rows))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut cfg = SynthConfig {
        grid: a.grid.grid()?,
        ..SynthConfig::default()
    };
    if let Some(j) = a.jitter {
        cfg.jitter = j;
    }
    let ds = match a.suite {
        Suite::Activities => builtin_activity_suite(a.seed, &cfg)?,
        Suite::Full => builtin_suite_with(a.seed, &cfg)?,
        Suite::Sub => sub_activity_suite(a.seed, a.per_label, &cfg)?,
    };
    save_dataset(&a.out, &ds)?;
    info!("wrote {} clips to {}", ds.len(), a.out.display());
    Ok(())
}
