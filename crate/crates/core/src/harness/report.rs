use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SampleSize;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "dataset,model,samples_per_class,centers,repeat,seed,accuracy,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Sbfnet,
    BaselineCnn,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Sbfnet => "sbfnet",
            Model::BaselineCnn => "baseline_cnn",
        })
    }
}

/// One trained-and-evaluated model. `centers` is 0 for the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: Model,
    pub samples_per_class: SampleSize,
    pub centers: usize,
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub seconds: f64,
}

impl ResultRow {
    /// Identity of the experimental cell this row fills.
    pub fn cell(&self) -> (String, Model, String, usize, usize) {
        (
            self.dataset.clone(),
            self.model,
            self.samples_per_class.to_string(),
            self.centers,
            self.repeat,
        )
    }
}

fn sample_order(a: &SampleSize, b: &SampleSize) -> Ordering {
    match (a, b) {
        (SampleSize::Count(x), SampleSize::Count(y)) => x.cmp(y),
        (SampleSize::Percent(x), SampleSize::Percent(y)) => x.total_cmp(y),
        (SampleSize::Count(_), SampleSize::Percent(_)) => Ordering::Less,
        (SampleSize::Percent(_), SampleSize::Count(_)) => Ordering::Greater,
    }
}

/// Reads a report CSV; malformed rows are reported with their line number.
pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Report {
        line: 0,
        message: e.to_string(),
    })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Report {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::Report {
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<ResultRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::Report {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(Error::Report {
                line,
                message: format!("accuracy {} outside [0, 1]", row.accuracy),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_rows(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = ReportWriter::create(path)?;
    for r in rows {
        w.append(r)?;
    }
    Ok(())
}

/// Appends rows to a report file, writing the header first when the file is
/// new or empty. Every row is flushed immediately so an interrupted sweep
/// can resume from the file.
pub struct ReportWriter {
    file: File,
}

impl ReportWriter {
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{CSV_HEADER}")?;
        }
        Ok(Self { file })
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{CSV_HEADER}")?;
        Ok(Self { file })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        self.file.write_all(&bytes)?;
        self.file.flush()?;
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Distinct values of `key` in first-seen order.
fn distinct<T: PartialEq + Clone>(rows: &[ResultRow], key: impl Fn(&ResultRow) -> T) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for r in rows {
        let k = key(r);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn sorted_samples(rows: &[ResultRow]) -> Vec<SampleSize> {
    let mut s = distinct(rows, |r| r.samples_per_class);
    s.sort_by(sample_order);
    s
}

/// One block per (dataset, model, centers): a row per repeat with one column
/// per sample size, then the mean row.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut groups = distinct(rows, |r| (r.dataset.clone(), r.model, r.centers));
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.to_string().cmp(&b.1.to_string())).then(a.2.cmp(&b.2)));
    for (dataset, model, centers) in groups {
        let g: Vec<ResultRow> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.model == model && r.centers == centers)
            .cloned()
            .collect();
        let samples = sorted_samples(&g);
        let mut repeats = distinct(&g, |r| r.repeat);
        repeats.sort_unstable();
        let _ = writeln!(out, "{dataset} / {model} / centers={centers}");
        let _ = write!(out, "{:<10}", "n");
        for s in &samples {
            let _ = write!(out, "{:>8}", s.to_string());
        }
        out.push('\n');
        let cell = |rep: Option<usize>, s: &SampleSize| -> Option<f64> {
            let v: Vec<f64> = g
                .iter()
                .filter(|r| r.samples_per_class == *s && rep.is_none_or(|x| r.repeat == x))
                .map(|r| r.accuracy)
                .collect();
            (!v.is_empty()).then(|| mean(&v))
        };
        for rep in repeats.iter().map(|&r| Some(r)).chain([None]) {
            let label = rep.map_or("mean".to_string(), |r| format!("repeat {r}"));
            let _ = write!(out, "{label:<10}");
            for s in &samples {
                match cell(rep, s) {
                    Some(v) => {
                        let _ = write!(out, "{v:>8.3}");
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Per-(dataset, model, samples, centers) means, then the average over
/// datasets per (model, samples) of each dataset's mean.
pub fn render_report(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(
        "note: baseline_cnn is the kernel backbone plus a dense softmax classifier, \
         standing in for the ResNet50/101 baselines\n\n",
    );
    let _ = writeln!(
        out,
        "{:<16} {:<13} {:>8} {:>8} {:>5} {:>9}",
        "dataset", "model", "samples", "centers", "runs", "accuracy"
    );
    let mut cells = distinct(rows, |r| (r.dataset.clone(), r.model, r.samples_per_class, r.centers));
    cells.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.to_string().cmp(&b.1.to_string()))
            .then(sample_order(&a.2, &b.2))
            .then(a.3.cmp(&b.3))
    });
    for (dataset, model, samples, centers) in &cells {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| {
                &r.dataset == dataset && r.model == *model && r.samples_per_class == *samples && r.centers == *centers
            })
            .map(|r| r.accuracy)
            .collect();
        let _ = writeln!(
            out,
            "{:<16} {:<13} {:>8} {:>8} {:>5} {:>9.4}",
            dataset,
            model.to_string(),
            samples.to_string(),
            centers,
            v.len(),
            mean(&v)
        );
    }

    out.push_str("\naverage over datasets\n");
    let _ = writeln!(out, "{:<13} {:>8} {:>8} {:>9}", "model", "samples", "datasets", "accuracy");
    let mut keys = distinct(rows, |r| (r.model, r.samples_per_class));
    keys.sort_by(|a, b| a.0.to_string().cmp(&b.0.to_string()).then(sample_order(&a.1, &b.1)));
    for (model, samples) in keys {
        let per_dataset: Vec<f64> = distinct(rows, |r| r.dataset.clone())
            .into_iter()
            .filter_map(|d| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.dataset == d && r.model == model && r.samples_per_class == samples)
                    .map(|r| r.accuracy)
                    .collect();
                (!v.is_empty()).then(|| mean(&v))
            })
            .collect();
        let _ = writeln!(
            out,
            "{:<13} {:>8} {:>8} {:>9.4}",
            model.to_string(),
            samples.to_string(),
            per_dataset.len(),
            mean(&per_dataset)
        );
    }
    out
}
