//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::PipelineConfig;
use super::dataset::scan_modelnet;
use super::experiments::{
    reconstruct2d, run_axis_stability, run_invariance_suite, AxisStabilityConfig, InvarianceConfig,
    Reconstruct2dConfig, ReferenceShape,
};
use super::extract::{extract_features, read_classes, write_extraction, CLASSES_FILE, TEST_FEATURES, TRAIN_FEATURES};
use super::report::ExperimentReport;
use super::synthetic::{write_synthetic_dataset, SyntheticSpec};
use crate::classifier::{init_mlp, read_checkpoint, train, vote_accuracy, write_checkpoint};
use crate::elm::{read_features, FeatureSet};
use crate::error::{Error, Result};
use crate::geometry::{load_off, load_xyz};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Parser)]
#[command(name = "canonshape", version, about = "Canonical point cloud descriptors and shape classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// key = value run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; replaces every seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for extraction
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List a class/{train,test}/*.off tree
    Scan { root: Option<PathBuf> },
    /// Extract features for every instance of a dataset tree
    Extract { root: Option<PathBuf> },
    /// Train the classifier on extracted features
    Train {
        /// Directory holding train.feat, test.feat and classes.txt (default: --out)
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
    },
    /// Evaluate a trained model on test features with per-instance voting
    Eval {
        #[arg(long, value_name = "DIR")]
        features: Option<PathBuf>,
        /// Checkpoint (default: <out>/model.ckpt)
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Rotation, scale, permutation and translation checks on the bundled shape
    Invariance {
        #[arg(long, default_value_t = 100)]
        rotations: usize,
    },
    /// Principal axis stability of the canonical frame against PCA
    AxisStability {
        /// OFF mesh or XYZ point file instead of the bundled shape
        #[arg(long, value_name = "PATH")]
        shape: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        draws: usize,
    },
    /// Planar contour reconstruction from ELM fits of increasing width
    Reconstruct2d {
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, value_delimiter = ',', default_value = "300,1000")]
        nodes: Vec<usize>,
        /// Also fit one node per grid point
        #[arg(long)]
        square: bool,
    },
    /// Write the seeded four-class synthetic dataset
    Synth {
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 30)]
        test_per_class: usize,
    },
}

/// Runs the CLI on `argv` (program name first). Returns 0 on success, 1 on
/// usage or configuration errors and 2 on data errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run(&cli, &config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.extraction.reseed(seed);
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

fn dataset_root(arg: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    arg.clone().or_else(|| cfg.data_dir.clone()).ok_or_else(|| {
        Error::Config(format!(
            "no dataset root given (pass one or set {})",
            super::config::DATA_DIR_ENV
        ))
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn load_set(path: &Path) -> Result<FeatureSet> {
    read_features(open(path)?)
}

fn finish(report: &ExperimentReport, out: &Path) -> Result<()> {
    let (csv, _) = report.write(out)?;
    print!("{}", report.summary());
    println!("wrote {}", csv.display());
    if !report.all_passed() {
        log::warn!("{}: some checks failed", report.name);
    }
    Ok(())
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let out = &cli.global.out;
    let seed = cli.global.seed.unwrap_or(0);
    match &cli.command {
        Command::Scan { root } => {
            let root = dataset_root(root, cfg)?;
            let manifest = scan_modelnet(&root)?;
            let path = out.join(MANIFEST_FILE);
            let mut w = create(&path)?;
            let io = |e| Error::io(&path, e);
            writeln!(w, "instance_id,path,label,split").map_err(io)?;
            for e in &manifest.entries {
                writeln!(w, "{},{},{},{}", e.instance_id, e.path.display(), e.label, e.split.name()).map_err(io)?;
            }
            w.flush().map_err(io)?;
            println!(
                "{} instances, {} classes, {} train, {} test",
                manifest.len(),
                manifest.classes.len(),
                manifest.split(super::dataset::Split::Train).count(),
                manifest.split(super::dataset::Split::Test).count()
            );
        }
        Command::Extract { root } => {
            let root = dataset_root(root, cfg)?;
            let manifest = scan_modelnet(&root)?;
            let ex = extract_features(&manifest, &cfg.extraction, cli.global.jobs as usize)?;
            write_extraction(&ex, &cfg.to_text(), out)?;
            println!(
                "{} train and {} test features, {} failures, {:.1} s",
                ex.train.len(),
                ex.test.len(),
                ex.failures.len(),
                ex.seconds
            );
        }
        Command::Train { features } => {
            let dir = features.as_deref().unwrap_or(out);
            let classes = read_classes(&dir.join(CLASSES_FILE))?;
            let set = load_set(&dir.join(TRAIN_FEATURES))?;
            let mut model = init_mlp(set.k, &cfg.hidden, classes.len(), cfg.training.seed)?;
            model.class_names = classes;
            let (model, mut report) = train(model, &set.features, &cfg.training)?;
            let test_path = dir.join(TEST_FEATURES);
            if test_path.exists() {
                let test = load_set(&test_path)?;
                if !test.is_empty() {
                    report.test_accuracy = Some(vote_accuracy(&model, &test.features)?);
                }
            }
            let path = out.join(MODEL_FILE);
            let mut w = create(&path)?;
            write_checkpoint(&model, &mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            let path = out.join(TRAIN_LOG);
            let mut w = create(&path)?;
            report.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!("final loss {:e}, {:.1} s", report.final_loss(), report.wall_time_secs);
            if let Some(a) = report.test_accuracy {
                println!("test accuracy {a:.4}");
            }
        }
        Command::Eval { features, model } => {
            let dir = features.as_deref().unwrap_or(out);
            let model_path = model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
            let model = read_checkpoint(open(&model_path)?)?;
            let test = load_set(&dir.join(TEST_FEATURES))?;
            if test.is_empty() {
                return Err(Error::Dataset("test feature file is empty".into()));
            }
            let acc = vote_accuracy(&model, &test.features)?;
            let mut report = ExperimentReport::new("eval");
            report.set("model", model_path.display());
            report.set("features", dir.join(TEST_FEATURES).display());
            report.set("instances", test.by_instance().len());
            report.columns = vec!["accuracy".into()];
            report.rows.push(vec![acc.to_string()]);
            finish(&report, out)?;
        }
        Command::Invariance { rotations } => {
            let ic = InvarianceConfig {
                rotations: *rotations,
                seed,
                ..InvarianceConfig::default()
            };
            finish(&run_invariance_suite(None, &ic)?, out)?;
        }
        Command::AxisStability { shape, draws } => {
            let reference = match shape {
                None => None,
                Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) => {
                    Some(ReferenceShape::Mesh(load_off(open(p)?)?))
                }
                Some(p) => Some(ReferenceShape::Cloud(load_xyz(open(p)?)?)),
            };
            let ac = AxisStabilityConfig {
                draws: *draws,
                seed,
                ..AxisStabilityConfig::default()
            };
            finish(&run_axis_stability(reference.as_ref(), &ac)?, out)?;
        }
        Command::Reconstruct2d { grid, nodes, square } => {
            let rc = Reconstruct2dConfig {
                grid: *grid,
                nodes: nodes.clone(),
                include_square: *square,
                seed,
                ..Reconstruct2dConfig::default()
            };
            let rec = reconstruct2d(&rc)?;
            let path = out.join("reconstruct2d_grid.csv");
            let mut w = create(&path)?;
            let io = |e| Error::io(&path, e);
            writeln!(w, "{}", rec.grid_columns.join(",")).map_err(io)?;
            for r in 0..rec.grid.nrows() {
                let row: Vec<String> = rec.grid.row(r).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", row.join(",")).map_err(io)?;
            }
            w.flush().map_err(io)?;
            finish(&rec.report, out)?;
        }
        Command::Synth {
            train_per_class,
            test_per_class,
        } => {
            let spec = SyntheticSpec {
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                seed: cli.global.seed.unwrap_or(SyntheticSpec::default().seed),
                ..SyntheticSpec::default()
            };
            let n = write_synthetic_dataset(&spec, out)?;
            println!("wrote {n} meshes under {}", out.display());
        }
    }
    Ok(())
}
