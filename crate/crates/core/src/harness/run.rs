use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use super::report::{read_rows, Model, ReportWriter, ResultRow};
use super::{derive_seed, ExperimentSpec};
use crate::baseline::train_baseline;
use crate::data::{augment, split, subsample, AugmentationConfig, LabeledDataset, SampleSize};
use crate::ensemble::{train_sbf, EnsembleConfig, EvalReport, SbfNet, TrainedSbf};
use crate::error::{Error, Result};

const TAG_SPLIT: u64 = 1;
const TAG_SUBSAMPLE: u64 = 2;
const TAG_AUGMENT: u64 = 3;
const TAG_SBF: u64 = 4;
const TAG_BASELINE: u64 = 5;

fn sample_key(s: SampleSize) -> u64 {
    match s {
        SampleSize::Count(n) => n as u64,
        SampleSize::Percent(p) => p.to_bits(),
    }
}

/// Data of one (sample size, repeat) cell, shared by every model and center
/// count trained in it.
#[derive(Debug, Clone)]
pub struct CellData {
    pub samples: SampleSize,
    pub repeat: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub augmentation: AugmentationConfig,
    pub warnings: Vec<String>,
}

/// Splits `source` with the repeat's seed (identical across sample sizes and
/// models), subsamples the training side, and fixes the augmentation seed.
pub fn prepare_cell(source: &LabeledDataset, spec: &ExperimentSpec, samples: SampleSize, repeat: usize) -> Result<CellData> {
    let r = repeat as u64;
    let s = split(source, spec.test_fraction, derive_seed(spec.seed, &[TAG_SPLIT, r]))?;
    let train = subsample(&s.train, samples, derive_seed(spec.seed, &[TAG_SUBSAMPLE, r, sample_key(samples)]))?;
    let base = spec.ensemble_config(spec.backbone_config(image_shape(source)?)?);
    Ok(CellData {
        samples,
        repeat,
        train,
        test: s.test,
        augmentation: AugmentationConfig {
            seed: derive_seed(spec.seed, &[TAG_AUGMENT, r, sample_key(samples)]),
            ..base.augmentation
        },
        warnings: s.warnings,
    })
}

fn image_shape(ds: &LabeledDataset) -> Result<[usize; 3]> {
    let s = ds.image_shape().ok_or(Error::EmptyDataset)?;
    Ok([s[0], s[1], s[2]])
}

/// Centers actually used: `k`, lowered to the smallest class of the
/// training side.
pub fn effective_centers(cell: &CellData, k: usize) -> usize {
    let smallest = cell.train.class_counts().into_iter().min().unwrap_or(0);
    k.min(smallest).max(1)
}

pub fn run_sbf_cell(spec: &ExperimentSpec, cell: &CellData, k: usize) -> Result<(ResultRow, TrainedSbf)> {
    let start = Instant::now();
    let k = effective_centers(cell, k);
    let mut cfg: EnsembleConfig = spec.ensemble_config(spec.backbone_config(image_shape(&cell.train)?)?);
    cfg.centers_per_class = k;
    cfg.augmentation = cell.augmentation.clone();
    cfg.seed = derive_seed(
        spec.seed,
        &[TAG_SBF, cell.repeat as u64, sample_key(cell.samples), k as u64],
    );
    let trained = train_sbf(&cell.train, &cfg)?;
    let report = trained.net.evaluate(&cell.test)?;
    let row = ResultRow {
        dataset: spec.dataset_name(),
        model: Model::Sbfnet,
        samples_per_class: cell.samples,
        centers: k,
        repeat: cell.repeat,
        seed: cfg.seed,
        accuracy: report.accuracy,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((row, trained))
}

pub fn run_baseline_cell(spec: &ExperimentSpec, cell: &CellData) -> Result<ResultRow> {
    let start = Instant::now();
    let backbone = spec.backbone_config(image_shape(&cell.train)?)?;
    let pool = augment(&cell.train, &cell.augmentation)?;
    let seed = derive_seed(spec.seed, &[TAG_BASELINE, cell.repeat as u64, sample_key(cell.samples)]);
    let model = train_baseline(&pool, &backbone, &spec.baseline_config(), seed)?;
    let report = model.evaluate(&cell.test)?;
    Ok(ResultRow {
        dataset: spec.dataset_name(),
        model: Model::BaselineCnn,
        samples_per_class: cell.samples,
        centers: 0,
        repeat: cell.repeat,
        seed,
        accuracy: report.accuracy,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Single run: first sample size, first center count, repeat 0. Saves the
/// model to `spec.model_out` and appends the row to `spec.out` when set.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<(ResultRow, TrainedSbf)> {
    spec.validate()?;
    let source = spec.load_dataset()?;
    let cell = prepare_cell(&source, spec, spec.samples[0], 0)?;
    let (row, trained) = run_sbf_cell(spec, &cell, spec.centers[0])?;
    if let Some(path) = &spec.model_out {
        trained.net.save(path)?;
    }
    if let Some(path) = &spec.out {
        ReportWriter::append_to(path)?.append(&row)?;
    }
    Ok((row, trained))
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    /// Every row in the report, including cells completed by earlier runs.
    pub rows: Vec<ResultRow>,
    /// Rows produced by this invocation.
    pub new_rows: Vec<ResultRow>,
    /// Cells that failed, with their error.
    pub failures: Vec<String>,
}

fn existing_rows(out: Option<&Path>) -> Result<Vec<ResultRow>> {
    match out {
        Some(p) if p.exists() && std::fs::metadata(p)?.len() > 0 => read_rows(p),
        _ => Ok(Vec::new()),
    }
}

fn sweep(
    spec: &ExperimentSpec,
    model: Model,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<SweepOutcome> {
    spec.validate()?;
    let mut outcome = SweepOutcome {
        rows: existing_rows(spec.out.as_deref())?,
        ..SweepOutcome::default()
    };
    let done: HashSet<_> = outcome.rows.iter().map(ResultRow::cell).collect();
    let mut writer = match &spec.out {
        Some(p) => Some(ReportWriter::append_to(p)?),
        None => None,
    };
    let source = spec.load_dataset()?;
    let name = spec.dataset_name();
    let centers: Vec<usize> = match model {
        Model::Sbfnet => spec.centers.clone(),
        Model::BaselineCnn => vec![0],
    };
    for &samples in &spec.samples {
        for repeat in 0..spec.repeats {
            let cell = match prepare_cell(&source, spec, samples, repeat) {
                Ok(c) => c,
                Err(e) => {
                    outcome.failures.push(format!("samples={samples} repeat={repeat}: {e}"));
                    continue;
                }
            };
            let mut seen_k = HashSet::new();
            for &k in &centers {
                let k_eff = if model == Model::Sbfnet { effective_centers(&cell, k) } else { 0 };
                if !seen_k.insert(k_eff)
                    || done.contains(&(name.clone(), model, samples.to_string(), k_eff, repeat))
                {
                    continue;
                }
                let result = match model {
                    Model::Sbfnet => run_sbf_cell(spec, &cell, k).map(|(r, _)| r),
                    Model::BaselineCnn => run_baseline_cell(spec, &cell),
                };
                match result {
                    Ok(row) => {
                        if let Some(w) = writer.as_mut() {
                            w.append(&row)?;
                        }
                        on_row(&row);
                        outcome.rows.push(row.clone());
                        outcome.new_rows.push(row);
                    }
                    Err(e) => outcome
                        .failures
                        .push(format!("model={model} samples={samples} centers={k} repeat={repeat}: {e}")),
                }
            }
        }
    }
    Ok(outcome)
}

/// Factorial SBF-Net sweep over samples x centers x repeats; cells already
/// present in `spec.out` are skipped.
pub fn cmd_sweep(spec: &ExperimentSpec, on_row: &mut dyn FnMut(&ResultRow)) -> Result<SweepOutcome> {
    sweep(spec, Model::Sbfnet, on_row)
}

/// Baseline CNN over samples x repeats, on the same splits as the sweep.
pub fn cmd_baseline(spec: &ExperimentSpec, on_row: &mut dyn FnMut(&ResultRow)) -> Result<SweepOutcome> {
    sweep(spec, Model::BaselineCnn, on_row)
}

/// Evaluates a saved network on the repeat-0 held-out split of `spec`'s data.
pub fn cmd_eval(model_path: &Path, spec: &ExperimentSpec) -> Result<EvalReport> {
    let net = SbfNet::load(model_path)?;
    let source = spec.load_dataset()?;
    let s = split(&source, spec.test_fraction, derive_seed(spec.seed, &[TAG_SPLIT, 0]))?;
    net.evaluate(&s.test)
}
