use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sbfnet::data::SampleSize;
use sbfnet::harness::{self, DatasetKind, ExperimentSpec, ResultRow, RunPreset};
use sbfnet::Preset;

#[derive(Parser)]
#[command(name = "sbfnet", version, about = "Siamese basis-function network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one SBF-Net (first sample size and center count).
    Train(ExperimentArgs),
    /// Full samples x centers x repeats sweep.
    Sweep(ExperimentArgs),
    /// Baseline CNN over samples x repeats on the same splits.
    Baseline(ExperimentArgs),
    /// Summarize a report CSV.
    Report {
        /// Report file (defaults to --out).
        path: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved model on the held-out split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
}

fn comma_list<T>(s: &str) -> anyhow::Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    Ok(s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>()?)
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist-idx, image-dir or cifar10-bin.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Name for the dataset column of the report.
    #[arg(long)]
    name: Option<String>,
    /// paper or desk.
    #[arg(long)]
    preset: Option<RunPreset>,
    /// vgg16_100, small28 or small32.
    #[arg(long)]
    backbone: Option<Preset>,
    /// Comma-separated sample sizes per class, counts or percentages (`10,5%`).
    #[arg(long)]
    samples: Option<String>,
    /// Comma-separated center counts per class.
    #[arg(long)]
    centers: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep at most this many images per class from the source.
    #[arg(long)]
    max_per_class: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Kernel-training threads (0 = all CPUs).
    #[arg(long)]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_file(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => {
                let (Some(kind), Some(root)) = (self.dataset, self.data_root.clone()) else {
                    bail!("either --config or both --dataset and --data-root are required");
                };
                ExperimentSpec::new(kind, root)
            }
        };
        if let Some(v) = self.dataset {
            spec.dataset = v;
        }
        if let Some(v) = &self.data_root {
            spec.data_root = v.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    spec.$field = v.clone().into();
                }
            )*};
        }
        if let Some(v) = &self.samples {
            spec.samples = comma_list::<SampleSize>(v)?;
        }
        if let Some(v) = &self.centers {
            spec.centers = comma_list(v)?;
        }
        set!(name, preset, backbone, repeats, seed, max_per_class, out, model_out, jobs);
        spec.validate()?;
        Ok(spec)
    }
}

fn print_row(row: &ResultRow) {
    eprintln!(
        "{} {} n={} k={} repeat={} accuracy={:.4} ({:.1}s)",
        row.dataset, row.model, row.samples_per_class, row.centers, row.repeat, row.accuracy, row.seconds
    );
}

fn finish_sweep(outcome: harness::SweepOutcome) -> anyhow::Result<()> {
    print!("{}", harness::summary_table(&outcome.rows));
    for f in &outcome.failures {
        eprintln!("failed: {f}");
    }
    if !outcome.failures.is_empty() {
        bail!("{} cell(s) failed", outcome.failures.len());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let spec = args.spec()?;
            let (row, trained) = harness::cmd_train(&spec)?;
            print_row(&row);
            println!(
                "kernels: {} ({} classes x {} centers)",
                trained.net.kernels().len(),
                trained.net.class_count(),
                trained.net.centers_per_class()
            );
            print!("{}", harness::summary_table(std::slice::from_ref(&row)));
        }
        Command::Sweep(args) => finish_sweep(harness::cmd_sweep(&args.spec()?, &mut print_row)?)?,
        Command::Baseline(args) => finish_sweep(harness::cmd_baseline(&args.spec()?, &mut print_row)?)?,
        Command::Report { path, out } => {
            let Some(path) = path.or(out) else {
                bail!("report needs a path");
            };
            print!("{}", harness::render_report(&harness::read_rows(&path)?));
        }
        Command::Eval { model, experiment } => {
            let report = harness::cmd_eval(&model, &experiment.spec()?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<sbfnet::Error>()
                .map_or("error", sbfnet::Error::kind);
            let line = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
