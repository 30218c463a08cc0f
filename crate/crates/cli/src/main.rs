//! `fpsampler`: synthetic data, sample databases, FP mining, augmentation,
//! training runs and evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fpsampler_core::augmentor::{augment_scene, AugmentationPlan};
use fpsampler_core::dataset::{
    generate_synthetic_dataset, load_classes, load_dataset, load_scene, save_dataset, save_scene, ClassSet,
    DatasetSpec, Scene, CLASSES_FILE,
};
use fpsampler_core::evaluator::{evaluate, score_histogram_of_fps, EvalConfig};
use fpsampler_core::fp_miner::{update_fp_database, MiningConfig};
use fpsampler_core::fsutil::atomic_write;
use fpsampler_core::harness::{compare_selected, data_paths, run_training, HarnessConfig, ModeRegistry};
use fpsampler_core::rng::stream;
use fpsampler_core::sample_db::{build_gt_database, load_database, save_database, SampleKind, DEFAULT_MIN_POINTS};
use fpsampler_core::toy_detector::ToyModelParams;
use fpsampler_core::Error;

#[derive(Parser)]
#[command(name = "fpsampler", version, about = "False-positive sampling toolkit for LiDAR 3D detection")]
struct Cli {
    /// Worker threads for scene-level parallelism (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// RNG seed; falls back to the FPSAMPLER_SEED environment variable.
    #[arg(long, env = "FPSAMPLER_SEED")]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a spec file.
    Gen {
        /// Dataset spec (key = value).
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the GT sample database of a dataset.
    #[command(name = "build-gt-db")]
    BuildGtDb {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output database directory.
        #[arg(long)]
        out: PathBuf,
        /// Objects with fewer points are left out.
        #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
        min_points: usize,
    },
    /// Run one FP mining pass with a checkpointed toy detector.
    #[command(name = "mine-fp")]
    MineFp {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Toy detector checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Output database directory.
        #[arg(long)]
        out: PathBuf,
        /// Predictions scoring below this are ignored.
        #[arg(long, default_value_t = 0.1)]
        score_threshold: f64,
        /// FP crops with fewer points are dropped.
        #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
        min_points: usize,
    },
    /// Augment one scene with GT and FP samples.
    Augment {
        /// Dataset directory holding the scene.
        #[arg(long)]
        data: PathBuf,
        /// Scene id.
        #[arg(long)]
        scene: String,
        /// GT database directory.
        #[arg(long)]
        gt_db: PathBuf,
        /// FP database directory; FP slots are skipped without it.
        #[arg(long)]
        fp_db: Option<PathBuf>,
        /// Augmentation plan (key = value).
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory in dataset layout, plus trace.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a training experiment from a harness config.
    Train {
        /// Harness config (key = value).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics, mining reports and final.ckpt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every sampling mode for each seed and tabulate the results.
    Compare {
        /// Harness config (key = value); its mode and seed are overridden.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Comma-separated subset of modes (default: all).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        /// Output directory for comparison.csv and per-run results.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Toy detector checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory for eval.csv and fp_histogram.csv.
        #[arg(long)]
        out: PathBuf,
        /// Score floor for the zero-IoU false-positive count.
        #[arg(long, default_value_t = 0.5)]
        fp_threshold: f64,
        /// Score bins in fp_histogram.csv.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Mining { .. } | Error::Infeasible(_) | Error::EmptyClass(_) => Failure::Runtime(e),
            _ => Failure::Data(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Gen { spec, seed, out } => cmd_gen(&spec, seed.seed, &out),
        Command::BuildGtDb { data, out, min_points } => cmd_build_gt_db(&data, &out, min_points),
        Command::MineFp {
            data,
            ckpt,
            out,
            score_threshold,
            min_points,
        } => cmd_mine_fp(&data, &ckpt, &out, score_threshold, min_points),
        Command::Augment {
            data,
            scene,
            gt_db,
            fp_db,
            plan,
            seed,
            out,
        } => cmd_augment(&data, &scene, &gt_db, fp_db.as_deref(), &plan, seed.seed, &out),
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Compare {
            config,
            seeds,
            modes,
            out,
        } => cmd_compare(&config, &seeds, &modes, &out),
        Command::Eval {
            data,
            ckpt,
            out,
            fp_threshold,
            bins,
        } => cmd_eval(&data, &ckpt, &out, fp_threshold, bins),
    }
}

fn cmd_gen(spec: &Path, seed: u64, out: &Path) -> CmdResult {
    let spec = DatasetSpec::load(spec)?;
    let classes = spec.class_set()?;
    let scenes = generate_synthetic_dataset(&spec, seed)?;
    save_dataset(out, &classes, &scenes)?;
    let objects: usize = scenes.iter().map(|s| s.labels.len()).sum();
    println!("wrote {} scenes ({objects} objects) to {}", scenes.len(), out.display());
    Ok(())
}

fn cmd_build_gt_db(data: &Path, out: &Path, min_points: usize) -> CmdResult {
    let (classes, scenes) = load_dataset(data)?;
    let (db, report) = build_gt_database(&scenes, &classes, min_points)?;
    save_database(&db, out)?;
    for (c, n) in report.per_class.iter().enumerate() {
        println!("{} {n}", classes.name(c));
    }
    println!("skipped {}", report.skipped);
    Ok(())
}

fn cmd_mine_fp(data: &Path, ckpt: &Path, out: &Path, score_threshold: f64, min_points: usize) -> CmdResult {
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Failure::Usage("--score-threshold must lie in [0, 1]".into()));
    }
    let (classes, scenes) = load_dataset(data)?;
    let params = ToyModelParams::load(ckpt, &classes)?;
    let config = MiningConfig {
        score_threshold,
        min_points,
    };
    let (db, report) = update_fp_database(&params, &scenes, &classes, &config, None, None)?;
    save_database(&db, out)?;
    let text = report.to_text(&classes);
    atomic_write(&out.join("mining_report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_augment(
    data: &Path,
    scene_id: &str,
    gt_db: &Path,
    fp_db: Option<&Path>,
    plan: &Path,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let classes = load_classes(&data.join(CLASSES_FILE))?;
    let scene = load_scene(data, scene_id, &classes)?;
    let gt = load_database(gt_db)?;
    let fp = fp_db.map(load_database).transpose()?;
    for db in std::iter::once(&gt).chain(fp.as_ref()) {
        if db.classes() != &classes {
            return Err(Failure::Data(Error::Config(format!(
                "database classes {:?} differ from dataset classes {:?}",
                db.classes().names(),
                classes.names()
            ))));
        }
    }
    let plan = AugmentationPlan::load(plan, &classes)?;
    let mut rng = stream(seed, &["augment", scene_id]);
    let aug = augment_scene(&scene, &gt, fp.as_ref(), &plan, &mut rng);
    let result = Scene {
        scene_id: scene.scene_id.clone(),
        cloud: aug.cloud,
        labels: aug.labels,
    };
    save_scene(out, &result, &classes)?;
    atomic_write(&out.join("trace.txt"), aug.trace.to_text(&classes).as_bytes())?;
    println!(
        "placed {} of {} slots, removed {} points",
        aug.trace.placed(SampleKind::Gt) + aug.trace.placed(SampleKind::Fp),
        aug.trace.entries.len(),
        aug.removed_points
    );
    Ok(())
}

fn load_split_pair(config: &Path) -> Result<(ClassSet, Vec<Scene>, Vec<Scene>), Failure> {
    let (train_dir, val_dir) = data_paths(config)?;
    let (classes, train) = load_dataset(&train_dir)?;
    let (val_classes, val) = load_dataset(&val_dir)?;
    if val_classes != classes {
        return Err(Failure::Data(Error::Config(format!(
            "{} and {} have different class lists",
            train_dir.display(),
            val_dir.display()
        ))));
    }
    Ok((classes, train, val))
}

fn cmd_train(config: &Path, out: &Path) -> CmdResult {
    let (classes, train, val) = load_split_pair(config)?;
    let cfg = HarnessConfig::load(config, &classes)?;
    let metrics = run_training(&train, &val, &classes, &cfg)?;
    metrics.write(out, &classes)?;
    let last = metrics.final_epoch();
    println!(
        "mode {} seed {}: {} epochs, final loss {:.6}, final fp {}, final mAP {}",
        cfg.mode,
        cfg.seed,
        metrics.epochs.len(),
        last.loss,
        last.total_fp(),
        last.mean_ap().map_or("nan".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

fn cmd_compare(config: &Path, seeds: &[u64], modes: &[String], out: &Path) -> CmdResult {
    let registry = ModeRegistry::builtin();
    let modes: Vec<String> = if modes.is_empty() {
        registry.names().iter().map(|s| s.to_string()).collect()
    } else {
        for m in modes {
            registry.get(m).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        modes.to_vec()
    };
    let (classes, train, val) = load_split_pair(config)?;
    let cfg = HarnessConfig::load(config, &classes)?;
    let cmp = compare_selected(&train, &val, &classes, &cfg, seeds, &modes)?;
    cmp.write(out, &classes)?;
    print!("{}", cmp.to_csv());
    Ok(())
}

fn cmd_eval(data: &Path, ckpt: &Path, out: &Path, fp_threshold: f64, bins: usize) -> CmdResult {
    if bins == 0 {
        return Err(Failure::Usage("--bins must be at least 1".into()));
    }
    let (classes, scenes) = load_dataset(data)?;
    let params = ToyModelParams::load(ckpt, &classes)?;
    let mut config = EvalConfig::for_classes(&classes);
    config.fp_score_threshold = fp_threshold;
    let result = evaluate(&params, &scenes, &classes, &config)?;
    atomic_write(&out.join("eval.csv"), result.to_csv(&classes).as_bytes())?;
    let hist = score_histogram_of_fps(&params, &scenes, bins)?;
    let mut text = String::from("bin_lo,bin_hi,count\n");
    for (i, n) in hist.iter().enumerate() {
        text.push_str(&format!("{},{},{n}\n", i as f64 / bins as f64, (i + 1) as f64 / bins as f64));
    }
    atomic_write(&out.join("fp_histogram.csv"), text.as_bytes())?;
    print!("{}", result.to_csv(&classes));
    Ok(())
}
