use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use melanoscope_core::classifier::{Arity, BackendKind};
use melanoscope_core::decision::{default_tp_grid, default_tr_grid};
use melanoscope_core::evaluation::{metrics, slide_confusion};
use melanoscope_core::pipeline::{self, PipelineConfig, ValidationEntry};
use melanoscope_core::synthgen::{generate_slide, SynthSpec, TruthRecord};
use melanoscope_core::tiling::PlanMode;
use melanoscope_core::{open_slide, Error, Result, SlideVerdict, Verdict};

#[derive(Parser, Debug)]
#[command(
    name = "melanoscope",
    version,
    about = "Melanoma detection and localization on whole-slide images"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Per-field overrides applied on top of the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Slide path (repeatable; replaces the configured list).
    #[arg(long = "slide", global = true)]
    slides: Vec<PathBuf>,
    /// Annotation file per slide (repeatable, same order as --slide).
    #[arg(long = "annotations", global = true)]
    annotations: Vec<PathBuf>,
    #[arg(long, global = true)]
    magnification: Option<f64>,
    #[arg(long = "t-p", global = true)]
    t_p: Option<f64>,
    #[arg(long = "t-r", global = true)]
    t_r: Option<f64>,
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// ONNX model for the neural backend.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_arity)]
    arity: Option<Arity>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long = "batch-size", global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-slide time budget in seconds (warning only).
    #[arg(long = "time-budget", global = true)]
    time_budget: Option<f64>,
    #[arg(long = "plan-mode", global = true, value_parser = parse_plan_mode)]
    plan_mode: Option<PlanMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the tissue mask of each slide at the target magnification.
    Segment,
    /// Plan annotated patches and export them as a labeled dataset.
    Extract {
        /// Balance classes with augmented copies.
        #[arg(long)]
        augment_minority: bool,
    },
    /// Classify the planned patches of existing run directories.
    Infer(RunArgs),
    /// Build localization maps from predictions.
    Map {
        #[command(flatten)]
        runs: RunArgs,
        /// Also write a thumbnail/map composite.
        #[arg(long)]
        composite: bool,
    },
    /// Compute slide verdicts from localization maps.
    Verdict(RunArgs),
    /// Grid-search thresholds on validation runs.
    Calibrate {
        /// JSON list of {"run": <dir>, "truth": "melanoma"|"benign_nevus"}.
        #[arg(long)]
        validation: PathBuf,
        /// Comma-separated t_p values (default 0.50..0.99).
        #[arg(long = "tp-grid", value_delimiter = ',')]
        tp_grid: Vec<f64>,
        /// Comma-separated t_r values (default 0.01..0.50).
        #[arg(long = "tr-grid", value_delimiter = ',')]
        tr_grid: Vec<f64>,
    },
    /// Patch-level (and optionally slide-level) metrics.
    Evaluate {
        #[command(flatten)]
        runs: RunArgs,
        /// Apply t_p before scoring; Unseen patches then only lower coverage.
        #[arg(long)]
        after_threshold: bool,
        /// Truth records for slide-level metrics (repeatable).
        #[arg(long = "truth")]
        truths: Vec<PathBuf>,
    },
    /// Generate synthetic slides.
    Synth {
        /// JSON slide spec, or a list of specs.
        #[arg(long, conflicts_with = "count")]
        spec: Option<PathBuf>,
        /// Number of random slides, alternating melanoma and benign.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 4096)]
        width: u32,
        #[arg(long, default_value_t = 4096)]
        height: u32,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Plan, infer, map and verdict in one run.
    Pipeline,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run directory (repeatable); defaults to <out>/<slide id> per slide.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
}

fn parse_backend(s: &str) -> std::result::Result<BackendKind, String> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "neural" => Ok(BackendKind::Neural),
        _ => Err(format!("unknown backend {s:?} (expected mock or neural)")),
    }
}

fn parse_arity(s: &str) -> std::result::Result<Arity, String> {
    match s {
        "binary" => Ok(Arity::Binary),
        "multiclass" => Ok(Arity::Multiclass),
        _ => Err(format!("unknown arity {s:?} (expected binary or multiclass)")),
    }
}

fn parse_plan_mode(s: &str) -> std::result::Result<PlanMode, String> {
    match s {
        "annotated" => Ok(PlanMode::Annotated),
        "tissue" => Ok(PlanMode::Tissue),
        _ => Err(format!("unknown plan mode {s:?} (expected annotated or tissue)")),
    }
}

fn build_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if !o.slides.is_empty() {
        cfg.slides = o.slides.clone();
        cfg.annotations.clear();
    }
    if !o.annotations.is_empty() {
        cfg.annotations = o.annotations.clone();
    }
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    set!(magnification, o.magnification);
    set!(t_p, o.t_p);
    set!(t_r, o.t_r);
    set!(workers, o.workers);
    set!(batch_size, o.batch_size);
    set!(seed, o.seed);
    set!(out, o.out.clone());
    set!(time_budget_secs, o.time_budget);
    if let Some(kind) = o.backend {
        cfg.backend.kind = kind;
    }
    if let Some(arity) = o.arity {
        cfg.backend.arity = arity;
    }
    if let Some(model) = &o.model {
        cfg.backend.model = Some(model.clone());
    }
    if o.plan_mode.is_some() {
        cfg.plan_mode = o.plan_mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_slides(cfg: &PipelineConfig) -> Result<()> {
    if cfg.slides.is_empty() {
        return Err(Error::Config("no slides given (use --slide or the config file)".into()));
    }
    Ok(())
}

/// Explicit run directories, or the run directory of every configured slide.
fn run_dirs(args: &RunArgs, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if !args.runs.is_empty() {
        return Ok(args.runs.clone());
    }
    require_slides(cfg)?;
    cfg.slides
        .iter()
        .map(|p| Ok(pipeline::run_dir(&cfg.out, &open_slide(p)?.id)))
        .collect()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_verdict(v: &SlideVerdict) {
    println!("{}\t{}\trho={:.4}", v.slide_id, v.verdict.as_str(), v.rho);
}

fn load_specs(path: &Path) -> Result<Vec<SynthSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let specs = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    };
    specs.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli.overrides)?;
    match cli.command {
        Command::Segment => {
            require_slides(&cfg)?;
            for slide in &cfg.slides {
                let path = pipeline::segment(slide, &cfg)?;
                println!("{}", path.display());
            }
        }
        Command::Extract { augment_minority } => {
            cfg.augment_minority |= augment_minority;
            let manifest = pipeline::extract_dataset(&cfg)?;
            println!(
                "{} patches ({} augmented) in {}",
                manifest.entries.len(),
                manifest.augmented.len(),
                cfg.out.join(pipeline::DATASET_DIR).display()
            );
        }
        Command::Infer(args) => {
            for dir in run_dirs(&args, &cfg)? {
                let probs = pipeline::infer_stage(&dir, &cfg)?;
                info!("{}: {} predictions", dir.display(), probs.len());
            }
        }
        Command::Map { runs, composite } => {
            cfg.composite |= composite;
            for dir in run_dirs(&runs, &cfg)? {
                let map = pipeline::map_stage(&dir, &cfg)?;
                println!(
                    "{}\t{}x{}",
                    dir.join(pipeline::MAP_PNG_FILE).display(),
                    map.grid_width,
                    map.grid_height
                );
            }
        }
        Command::Verdict(args) => {
            for dir in run_dirs(&args, &cfg)? {
                print_verdict(&pipeline::verdict_stage(&dir, &cfg)?);
            }
        }
        Command::Calibrate {
            validation,
            tp_grid,
            tr_grid,
        } => {
            let text = std::fs::read_to_string(&validation).map_err(|_| Error::NotFound(validation.clone()))?;
            let entries: Vec<ValidationEntry> =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", validation.display())))?;
            let tp = if tp_grid.is_empty() { default_tp_grid() } else { tp_grid };
            let tr = if tr_grid.is_empty() { default_tr_grid() } else { tr_grid };
            let cal = pipeline::calibrate_runs(&entries, &tp, &tr)?;
            let path = cfg.out.join("thresholds.json");
            write_file(&path, serde_json::to_vec_pretty(&cal)?)?;
            println!("t_p={} t_r={} ({})", cal.t_p, cal.t_r, path.display());
        }
        Command::Evaluate {
            runs,
            after_threshold,
            truths,
        } => {
            let dirs = run_dirs(&runs, &cfg)?;
            let report = pipeline::patch_metrics(&dirs, after_threshold, cfg.t_p)?;
            write_file(&cfg.out.join("metrics.json"), serde_json::to_vec_pretty(&report)?)?;
            write_file(&cfg.out.join("metrics.csv"), report.to_csv())?;
            print!("{}", report.to_csv());
            if !truths.is_empty() {
                let mut preds: Vec<Verdict> = Vec::new();
                let mut wanted: Vec<Verdict> = Vec::new();
                for t in &truths {
                    let truth = TruthRecord::load(t)?;
                    let dir = pipeline::run_dir(&cfg.out, &truth.slide_id);
                    let path = dir.join(pipeline::VERDICT_FILE);
                    let text = std::fs::read(&path).map_err(|_| Error::NotFound(path.clone()))?;
                    let v: SlideVerdict = serde_json::from_slice(&text)?;
                    preds.push(v.verdict);
                    wanted.push(truth.verdict);
                }
                let slide_report = metrics(&slide_confusion(&preds, &wanted)?)?;
                write_file(
                    &cfg.out.join("slide_metrics.json"),
                    serde_json::to_vec_pretty(&slide_report)?,
                )?;
                write_file(&cfg.out.join("slide_metrics.csv"), slide_report.to_csv())?;
                print!("{}", slide_report.to_csv());
            }
        }
        Command::Synth {
            spec,
            count,
            width,
            height,
            levels,
        } => {
            let specs = match (spec, count) {
                (Some(path), _) => load_specs(&path)?,
                (None, Some(n)) => (0..n)
                    .map(|i| {
                        let verdict = if i % 2 == 0 {
                            Verdict::Melanoma
                        } else {
                            Verdict::BenignNevus
                        };
                        SynthSpec::random(
                            &format!("synth_{i:03}"),
                            width,
                            height,
                            levels,
                            cfg.seed + i as u64,
                            verdict,
                        )
                    })
                    .collect(),
                (None, None) => return Err(Error::Config("synth needs --spec or --count".into())),
            };
            for s in &specs {
                let out = generate_slide(s, &cfg.out)?;
                println!("{}\t{}", out.slide_dir.display(), out.truth.verdict.as_str());
            }
        }
        Command::Pipeline => {
            for v in pipeline::run_pipeline(&cfg)? {
                print_verdict(&v);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MELANOSCOPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
