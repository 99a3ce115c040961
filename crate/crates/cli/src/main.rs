//! `hypermv` command line: synthesize data, split, train, evaluate, ablate
//! and inspect.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hypermv::event_io::{read_events_with_bounds, render_volume};
use hypermv::event_synth::{synth_dataset, CameraRig, EventCameraParams};
use hypermv::model::{self, EDGE_WEIGHT, VERTEX_WEIGHT};
use hypermv::numerics::ParamSet;
use hypermv::pipeline::{
    ablation_suite, evaluate, load_run, make_splits, prepare_recording, train, AblationGrid,
    Dataset, DatasetSplit, Partition, PreparedSplit, RecordingManifest, RunConfig, SplitMode,
    CHECKPOINT_FILE, MANIFEST_FILE,
};
use serde_json::json;

/// File written next to a run's checkpoint holding the split it was trained on.
const SPLIT_FILE: &str = "split.json";

#[derive(Parser)]
#[command(name = "hypermv", version, about = "Multi-view event-camera action recognition")]
struct Cli {
    /// Worker threads; 1 gives bitwise reproducible runs, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view event dataset.
    Synth {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        /// Number of subjects, seeded `first-subject..first-subject+subjects`.
        #[arg(long, default_value_t = 50)]
        subjects: u64,
        #[arg(long, default_value_t = 0)]
        first_subject: u64,
        #[arg(long, default_value_t = 3)]
        views: usize,
        /// Contrast threshold in log-intensity units.
        #[arg(long, default_value_t = 0.2)]
        theta: f64,
        #[arg(long, default_value_t = 100)]
        refractory_us: u64,
        #[arg(long, default_value_t = 32)]
        width: u32,
        #[arg(long, default_value_t = 32)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a dataset into train/val/test.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::CrossSubject)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Held-out validation views in cross-view mode.
        #[arg(long, default_value_t = 1)]
        val_views: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its run directory.
    Train {
        /// Run configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Split file; generated from the config's split settings when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1/3/5 accuracy of a trained run on one partition.
    Eval {
        /// Run directory or its checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split file; the run's own split when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        partition: Part,
    },
    /// Train every setting of an ablation grid over several seeds.
    Ablate {
        /// Base run configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid axes (JSON); the full strategy/attention/L/k grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump intermediate structures for one recording as JSON.
    Inspect {
        /// Recording directory (holding manifest.json).
        #[arg(long)]
        recording: PathBuf,
        #[arg(long, value_enum)]
        dump: Dump,
        /// Trained run directory; a freshly initialized model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run configuration for the fresh model.
        #[arg(long)]
        config: Option<PathBuf>,
        /// View fed to the single-view baseline.
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Render an EVT-CSV file into event frames.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = 9)]
        windows: usize,
        /// Stream bounds; the first and last timestamps when omitted.
        #[arg(long, requires = "t_end")]
        t_begin: Option<u64>,
        #[arg(long, requires = "t_begin")]
        t_end: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    CrossSubject,
    CrossView,
}

impl From<Mode> for SplitMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::CrossSubject => SplitMode::CrossSubject,
            Mode::CrossView => SplitMode::CrossView,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

impl From<Part> for Partition {
    fn from(p: Part) -> Self {
        match p {
            Part::Train => Partition::Train,
            Part::Val => Partition::Val,
            Part::Test => Partition::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dump {
    Hypergraph,
    Weights,
    Frames,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    let run = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    run.validate()?;
    Ok(run)
}

fn load_split(path: Option<&Path>, run: &RunConfig, data: &Path) -> Result<DatasetSplit> {
    match path {
        Some(p) => read_json(p),
        None => {
            let dataset = Dataset::open(data)?;
            let s = &run.split;
            Ok(make_splits(&dataset.manifest_list(), s.mode, s.seed, s.val_views)?)
        }
    }
}

fn run_dir(checkpoint: &Path) -> PathBuf {
    if checkpoint.file_name().is_some_and(|n| n == CHECKPOINT_FILE) {
        checkpoint.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        checkpoint.to_path_buf()
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(
    classes: usize,
    subjects: Vec<u64>,
    rig: CameraRig,
    params: EventCameraParams,
    out: &Path,
) -> Result<()> {
    let manifests = synth_dataset(classes, &subjects, &rig, &params, out)?;
    eprintln!(
        "wrote {} recordings ({} views each) to {}",
        manifests.len(),
        rig.views(),
        out.display()
    );
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, split: Option<&Path>, out: &Path) -> Result<()> {
    let run = run_config(config)?;
    let split = load_split(split, &run, data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    let outcome = train(&run, &split, data, out)?;
    for m in &outcome.metrics {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train loss {:.4}  train top1 {:.3}  val top1 {}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_top1,
            m.val_top1.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    eprintln!(
        "best epoch {} of {}; run written to {}",
        outcome.best_epoch,
        run.epochs,
        out.display()
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, data: &Path, split: Option<&Path>, part: Part) -> Result<()> {
    let dir = run_dir(checkpoint);
    let split_path = split.map_or_else(|| dir.join(SPLIT_FILE), Path::to_path_buf);
    let split: DatasetSplit = read_json(&split_path)?;
    let partition: Partition = part.into();
    let e = evaluate(&dir, data, &split, partition)?;
    print_json(&json!({
        "partition": partition,
        "samples": e.metrics.samples,
        "top1": e.metrics.top1,
        "top3": e.metrics.top3,
        "top5": e.metrics.top5,
        "mean_loss": e.mean_loss,
    }))
}

fn ablate_cmd(
    config: Option<&Path>,
    grid: Option<&Path>,
    seeds: &[u64],
    data: &Path,
    split: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let base = run_config(config)?;
    let grid: AblationGrid = match grid {
        Some(p) => read_json(p)?,
        None => AblationGrid::default(),
    };
    let split = load_split(split, &base, data)?;
    let dataset = Dataset::open(data)?;
    let prepared = PreparedSplit::load(&dataset, &split, base.windows)?;
    let settings = grid.settings(&base);
    eprintln!("{} settings x {} seeds", settings.len(), seeds.len());
    let table = ablation_suite(&base, &settings, seeds, &prepared, |s, seed, top1| {
        eprintln!("{}  seed {seed}  top1 {top1:.4}", s.label());
    })?;
    print!("{}", table.to_text());
    if let Some(p) = out {
        write_json(p, &table)?;
    }
    Ok(())
}

fn inspect_cmd(
    recording: &Path,
    dump: Dump,
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    view: usize,
) -> Result<()> {
    let manifest = RecordingManifest::load(&recording.join(MANIFEST_FILE))?;
    let root = recording.parent().unwrap_or(Path::new("."));
    let (run, cfg, params): (RunConfig, _, ParamSet) = match checkpoint {
        Some(c) => load_run(&run_dir(c))?,
        None => {
            let run = run_config(config)?;
            let classes = run.classes.unwrap_or(manifest.label + 1).max(2);
            let cfg = run.model_config(manifest.views, classes);
            let params = model::init_params(&cfg, run.seed)?;
            (run, cfg, params)
        }
    };
    let volumes = prepare_recording(&manifest, root, run.windows)?;
    if let Dump::Frames = dump {
        let views: Vec<_> = volumes
            .iter()
            .map(|v| {
                let frames: Vec<&[f64]> = (0..v.windows).map(|t| v.frame(t)).collect();
                json!({ "width": v.width, "height": v.height, "frames": frames })
            })
            .collect();
        return print_json(&json!({
            "recording_id": manifest.recording_id,
            "windows": run.windows,
            "views": views,
        }));
    }
    let inputs: Vec<_> = if cfg.variant == model::Variant::SingleViewBaseline {
        match volumes.get(view) {
            Some(v) => vec![v],
            None => bail!("recording has {} views, no view {view}", volumes.len()),
        }
    } else {
        volumes.iter().take(cfg.views).collect()
    };
    let ins = model::inspect(&cfg, &params, &inputs)?;
    let value = match dump {
        Dump::Hypergraph => json!({
            "recording_id": manifest.recording_id,
            "variant": ins.variant,
            "views": ins.views,
            "windows": ins.windows,
            "h_shape": ins.h_shape,
            "vertex_degrees": ins.vertex_degrees,
            "edge_degrees": ins.edge_degrees,
            "edges": ins.edges,
        }),
        _ => json!({
            "recording_id": manifest.recording_id,
            "variant": ins.variant,
            "omega": ins.omega,
            "vertex_weight": params.get(VERTEX_WEIGHT).map(|t| t.data().to_vec()),
            "edge_weight": params.get(EDGE_WEIGHT).map(|t| t.data().to_vec()),
            "logits": ins.logits,
        }),
    };
    print_json(&value)
}

fn convert(
    input: &Path,
    out: &Path,
    width: u32,
    height: u32,
    windows: usize,
    bounds: Option<(u64, u64)>,
) -> Result<()> {
    let stream = read_events_with_bounds(input, width, height, bounds)?;
    let volume = render_volume(&stream, windows, width, height)?;
    let frames: Vec<&[i32]> = volume.frames.iter().map(|f| f.values.as_slice()).collect();
    write_json(
        out,
        &json!({
            "width": width,
            "height": height,
            "windows": windows,
            "t_begin": stream.t_begin,
            "t_end": stream.t_end,
            "max_abs": volume.max_abs(),
            "frames": frames,
        }),
    )
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .context("starting worker pool")?;
    match cli.command {
        Command::Synth {
            classes,
            subjects,
            first_subject,
            views,
            theta,
            refractory_us,
            width,
            height,
            out,
        } => {
            let rig = CameraRig::ring(views, width, height)?;
            let params = EventCameraParams {
                threshold: theta,
                refractory_us,
                ..EventCameraParams::default()
            };
            params.validate()?;
            let seeds = (first_subject..first_subject + subjects).collect();
            synth(classes, seeds, rig, params, &out)
        }
        Command::Split {
            data,
            mode,
            seed,
            val_views,
            out,
        } => {
            let dataset = Dataset::open(&data)?;
            let split = make_splits(&dataset.manifest_list(), mode.into(), seed, val_views)?;
            eprintln!(
                "train {} / val {} / test {} samples",
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
            match out {
                Some(p) => write_json(&p, &split),
                None => print_json(&serde_json::to_value(&split)?),
            }
        }
        Command::Train {
            config,
            data,
            split,
            out,
        } => train_cmd(config.as_deref(), &data, split.as_deref(), &out),
        Command::Eval {
            checkpoint,
            data,
            split,
            partition,
        } => eval_cmd(&checkpoint, &data, split.as_deref(), partition),
        Command::Ablate {
            config,
            grid,
            seeds,
            data,
            split,
            out,
        } => ablate_cmd(
            config.as_deref(),
            grid.as_deref(),
            &seeds,
            &data,
            split.as_deref(),
            out.as_deref(),
        ),
        Command::Inspect {
            recording,
            dump,
            checkpoint,
            config,
            view,
        } => inspect_cmd(&recording, dump, checkpoint.as_deref(), config.as_deref(), view),
        Command::Convert {
            input,
            out,
            width,
            height,
            windows,
            t_begin,
            t_end,
        } => convert(&input, &out, width, height, windows, t_begin.zip(t_end)),
    }
}
