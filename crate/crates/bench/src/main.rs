use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use focal_bench::compare::compare_modes;
use focal_bench::dataset::{generate_dataset, load_dataset, preprocess_dataset};
use focal_bench::experiment::{evaluate_model, run_experiment};
use focal_bench::figures::render_report_figures;
use focal_bench::report::{read_report, write_report, EvalReport};
use focal_bench::{BenchConfig, BenchError, ExperimentConfig, Mode, Result};
use focal_core::preprocess::CleanConfig;
use focal_nn::checkpoint;

#[derive(Parser)]
#[command(name = "focal-bench", version, about = "Depth from focal stacks: synthesis, training and comparison")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Root seed for synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with any of the settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root (as written by `generate`).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    mode: Option<Mode>,
    /// Slices per focal stack.
    #[arg(long, global = true)]
    slices: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Fraction of scenes used for training.
    #[arg(long, global = true)]
    split: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic focal-stack dataset.
    Generate {
        /// Unique scenes.
        #[arg(long)]
        count: Option<usize>,
        /// Perturbed copies per scene.
        #[arg(long)]
        augment: Option<usize>,
    },
    /// Clean the depth labels of an existing dataset into a new one.
    Preprocess,
    /// Train a network and evaluate it.
    Train,
    /// Evaluate a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the shape-from-focus baseline.
    Classic,
    /// Train single and stack networks over several seeds and compare them.
    Compare,
    /// Draw heat-map figures from saved reports.
    Render {
        /// One or more report.json files; their predictions become columns.
        #[arg(long, required = true, num_args = 1..)]
        report: Vec<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<BenchConfig> {
    let mut cfg = match &c.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.mode {
        cfg.mode = v;
    }
    if let Some(v) = c.slices {
        cfg.dataset.slices = v;
    }
    if let Some(v) = c.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = c.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = c.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = c.split {
        cfg.train.split_fraction = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| BenchError::Config(format!("--{flag} is required for this command")))
}

/// Rejects a dataset whose stacks do not have the slice count given by `--slices`.
fn check_slices(c: &Common, dataset: &Path) -> Result<()> {
    if let Some(n) = c.slices {
        let found = load_dataset(dataset)?.stacks[0].len();
        if found != n {
            return Err(BenchError::Config(format!("--slices {n} but the dataset has {found} slices")));
        }
    }
    Ok(())
}

fn save_run(report: &EvalReport, out: &Path) -> Result<()> {
    write_report(report, out)?;
    render_report_figures(&[report], &out.join("figures"))?;
    println!(
        "{} mode: train MSE {:.3} MAE {:.3} | test MSE {:.3} MAE {:.3}",
        report.mode.name(),
        report.train.mse,
        report.train.mae,
        report.test.mse,
        report.test.mae
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = load_config(c)?;
    let out = required(&c.out, "out")?;
    match cli.command {
        Command::Generate { count, augment } => {
            if let Some(v) = count {
                cfg.dataset.count = v;
            }
            if let Some(v) = augment {
                cfg.dataset.augment = v;
            }
            let manifest = generate_dataset(&cfg.dataset, &cfg.lens, cfg.seed, out)?;
            println!(
                "wrote {} examples from {} scenes to {}",
                manifest.examples.len(),
                manifest.scene_count(),
                out.display()
            );
        }
        Command::Preprocess => {
            let src = required(&c.dataset, "dataset")?;
            let clean = cfg.dataset.clean.unwrap_or_else(CleanConfig::default);
            let manifest = preprocess_dataset(src, &clean, out)?;
            println!("cleaned {} examples into {}", manifest.examples.len(), out.display());
        }
        Command::Train | Command::Classic => {
            if matches!(cli.command, Command::Classic) {
                cfg.mode = Mode::Classic;
            }
            let dataset = required(&c.dataset, "dataset")?;
            check_slices(c, dataset)?;
            let outcome = run_experiment(&ExperimentConfig::from_bench(&cfg, dataset))?;
            save_run(&outcome.report, out)?;
            if let Some(model) = &outcome.model {
                checkpoint::save(model, &out.join("model.fdnn"))?;
            }
        }
        Command::Eval { model } => {
            let dataset = required(&c.dataset, "dataset")?;
            check_slices(c, dataset)?;
            if cfg.mode == Mode::Classic {
                return Err(BenchError::Config("eval needs --mode single or stack".into()));
            }
            let state = checkpoint::load(&model)?;
            let report = evaluate_model(&ExperimentConfig::from_bench(&cfg, dataset), &state)?;
            save_run(&report, out)?;
        }
        Command::Compare => {
            let dataset = match &c.dataset {
                Some(d) => {
                    check_slices(c, d)?;
                    d.clone()
                }
                None => {
                    let d = out.join("dataset");
                    generate_dataset(&cfg.dataset, &cfg.lens, cfg.seed, &d)?;
                    d
                }
            };
            let base = ExperimentConfig::from_bench(&cfg, &dataset);
            let single = ExperimentConfig { mode: Mode::Single, ..base.clone() };
            let stack = ExperimentConfig { mode: Mode::Stack, ..base };
            let seeds: Vec<u64> = (0..cfg.compare_seeds as u64).map(|i| cfg.seed + i).collect();
            let comparison = compare_modes(&single, &stack, &seeds, out)?;
            print!("{}", comparison.markdown());
        }
        Command::Render { report } => {
            let reports = report.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&EvalReport> = reports.iter().collect();
            let written = render_report_figures(&refs, out)?;
            println!("wrote {} figures to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
