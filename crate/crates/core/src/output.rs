//! CSV and manifest files of a results directory.
//!
//! Every floating-point value is written with 17 significant digits so it
//! reads back bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::buffer::WeightKind;
use crate::config::render_config;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Method, SlotMetrics, SuiteResult, TrialRecord, TrialResult};

pub const RESULTS_CSV: &str = "results.csv";
pub const SLOT_METRICS_CSV: &str = "slot_metrics.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const FAILURES_CSV: &str = "failures.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const RESOLVED_CONFIG: &str = "resolved.conf";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// One row per successful trial. `wall_time_s` is written as 0 unless
/// `record_wall_time` is set, keeping the file byte-deterministic.
pub fn write_results_csv(path: &Path, suite: &SuiteResult, record_wall_time: bool) -> Result<()> {
    let task_count = suite
        .trials
        .iter()
        .filter_map(TrialRecord::result)
        .map(|r| r.per_task_accuracy.len())
        .max()
        .unwrap_or(0);
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = [
        "run_seed",
        "trial_id",
        "policy",
        "method",
        "buffer_capacity",
        "final_avg_accuracy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..task_count).map(|t| format!("acc_task_{t}")));
    header.push("wall_time_s".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in &suite.trials {
        let Some(r) = t.result() else { continue };
        let mut row = vec![
            t.run_seed.to_string(),
            t.trial_id.to_string(),
            t.policy.to_string(),
            t.method.to_string(),
            t.buffer_capacity.to_string(),
            fmt_f64(r.final_average_accuracy),
        ];
        row.extend(r.per_task_accuracy.iter().map(|&a| fmt_f64(a)));
        row.push(fmt_f64(if record_wall_time { r.wall_time } else { 0.0 }));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_slot_metrics_csv(path: &Path, suite: &SuiteResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "run_seed",
        "trial_id",
        "slot",
        "weight",
        "probability",
        "replay_count",
        "mean_replay_loss",
        "mean_grad_norm",
    ])
    .map_err(|e| csv_error(path, e))?;
    for t in &suite.trials {
        let Some(r) = t.result() else { continue };
        for m in &r.per_slot_metrics {
            w.write_record([
                t.run_seed.to_string(),
                t.trial_id.to_string(),
                m.slot.to_string(),
                fmt_f64(m.weight),
                fmt_f64(m.probability),
                m.replay_count.to_string(),
                fmt_f64(m.mean_replay_loss),
                fmt_f64(m.mean_grad_norm),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timings_csv(path: &Path, suite: &SuiteResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["run_seed", "trial_id", "wall_time_s"])
        .map_err(|e| csv_error(path, e))?;
    for t in &suite.trials {
        let Some(r) = t.result() else { continue };
        w.write_record([t.run_seed.to_string(), t.trial_id.to_string(), fmt_f64(r.wall_time)])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_failures_csv(path: &Path, suite: &SuiteResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["run_seed", "trial_id", "error"])
        .map_err(|e| csv_error(path, e))?;
    for t in suite.failures() {
        let message = t.outcome.as_ref().err().cloned().unwrap_or_default();
        w.write_record([t.run_seed.to_string(), t.trial_id.to_string(), message])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Full-precision companion of the text report: one row per buffer size
/// with mean and std (fractions, not percent) over seeds; a missing std is
/// written as `n/a`.
pub fn write_report_csv(path: &Path, suite: &SuiteResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "buffer_capacity",
        "seeds",
        "uniform_mean",
        "uniform_std",
        "best_mean",
        "best_std",
    ])
    .map_err(|e| csv_error(path, e))?;
    for a in suite.aggregates() {
        let (Ok(u), Ok(b)) = (a.uniform_summary(), a.best_summary()) else {
            continue;
        };
        let std = |s: Option<f64>| s.map_or_else(|| "n/a".to_string(), fmt_f64);
        w.write_record([
            a.buffer_capacity.to_string(),
            a.seeds.len().to_string(),
            fmt_f64(u.mean),
            std(u.std),
            fmt_f64(b.mean),
            std(b.std),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Provenance of a `run` invocation.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub resolved: ExperimentConfig,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let finished = self
            .finished_unix
            .map_or_else(|| "pending".to_string(), |t| t.to_string());
        format!(
            "# replay-lab run manifest\n\
             # rerun with: replay-lab run --config {resolved} --out <dir>\n\
             tool_version = {}\n\
             config_path = {}\n\
             output_dir = {}\n\
             parallelism = {}\n\
             started_unix = {}\n\
             finished_unix = {finished}\n\
             status = {}\n\
             \n\
             [resolved]\n{}",
            self.tool_version,
            self.config_path.display(),
            self.output_dir.display(),
            self.parallelism,
            self.started_unix,
            self.status,
            render_config(&self.resolved),
            resolved = self.output_dir.join(RESOLVED_CONFIG).display(),
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.render().as_bytes()).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, render_config(&self.resolved)).map_err(|e| Error::io(&path, e))
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

struct RowReader<'a> {
    path: &'a Path,
    record: csv::StringRecord,
    header: csv::StringRecord,
    line: usize,
}

impl RowReader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Csv {
            path: self.path.to_path_buf(),
            row: self.line,
            message: message.into(),
        }
    }

    fn field(&self, index: usize) -> Result<&str> {
        self.record
            .get(index)
            .ok_or_else(|| self.err(format!("missing column {}", index + 1)))
    }

    fn parse<T: std::str::FromStr>(&self, index: usize) -> Result<T> {
        let raw = self.field(index)?;
        raw.trim().parse().map_err(|_| {
            let name = self.header.get(index).unwrap_or("?");
            self.err(format!("invalid value `{raw}` in column `{name}`"))
        })
    }
}

fn for_each_row(
    path: &Path,
    expected: &[&str],
    mut f: impl FnMut(&RowReader) -> Result<()>,
) -> Result<csv::StringRecord> {
    let mut reader = open_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    for (i, name) in expected.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                row: 1,
                message: format!("expected column `{name}` at position {}", i + 1),
            });
        }
    }
    let mut row = RowReader {
        path,
        record: csv::StringRecord::new(),
        header: header.clone(),
        line: 1,
    };
    loop {
        let more = reader.read_record(&mut row.record).map_err(|e| {
            let line = e.position().map_or(row.line + 1, |p| p.line() as usize);
            Error::Csv {
                path: path.to_path_buf(),
                row: line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        row.line = row.record.position().map_or(row.line + 1, |p| p.line() as usize);
        if row.record.len() != header.len() {
            return Err(row.err(format!("expected {} fields, found {}", header.len(), row.record.len())));
        }
        f(&row)?;
    }
    Ok(header)
}

/// Reads `results.csv` and `slot_metrics.csv` back into a suite. Errors
/// name the file and the 1-based line number (the header is line 1).
pub fn read_results_dir(dir: &Path) -> Result<SuiteResult> {
    let results_path = dir.join(RESULTS_CSV);
    let mut records = Vec::new();
    let fixed = [
        "run_seed",
        "trial_id",
        "policy",
        "method",
        "buffer_capacity",
        "final_avg_accuracy",
    ];
    let header = for_each_row(&results_path, &fixed, |row| {
        let n = row.record.len();
        let policy = WeightKind::parse(row.field(2)?).ok_or_else(|| row.err("unknown policy"))?;
        let method = Method::parse(row.field(3)?).ok_or_else(|| row.err("unknown method"))?;
        let per_task = (6..n - 1).map(|i| row.parse(i)).collect::<Result<Vec<f64>>>()?;
        records.push(TrialRecord {
            run_seed: row.parse(0)?,
            trial_id: row.parse(1)?,
            policy,
            method,
            buffer_capacity: row.parse(4)?,
            outcome: Ok(TrialResult {
                final_average_accuracy: row.parse(5)?,
                per_task_accuracy: per_task,
                per_slot_metrics: Vec::new(),
                wall_time: row.parse(n - 1)?,
                update_count: 0,
                replay_draws: 0,
            }),
        });
        Ok(())
    })?;
    if header.get(header.len().saturating_sub(1)) != Some("wall_time_s") {
        return Err(Error::Csv {
            path: results_path,
            row: 1,
            message: "last column must be `wall_time_s`".into(),
        });
    }

    let index: BTreeMap<(u64, u32), usize> = records
        .iter()
        .enumerate()
        .map(|(i, t)| ((t.run_seed, t.trial_id), i))
        .collect();
    let slots_path = dir.join(SLOT_METRICS_CSV);
    let slot_columns = [
        "run_seed",
        "trial_id",
        "slot",
        "weight",
        "probability",
        "replay_count",
        "mean_replay_loss",
        "mean_grad_norm",
    ];
    for_each_row(&slots_path, &slot_columns, |row| {
        let key = (row.parse(0)?, row.parse(1)?);
        let &i = index
            .get(&key)
            .ok_or_else(|| row.err(format!("trial {key:?} is not in {RESULTS_CSV}")))?;
        let metrics = SlotMetrics {
            slot: row.parse(2)?,
            weight: row.parse(3)?,
            probability: row.parse(4)?,
            replay_count: row.parse(5)?,
            mean_replay_loss: row.parse(6)?,
            mean_grad_norm: row.parse(7)?,
        };
        if let Ok(r) = &mut records[i].outcome {
            r.replay_draws += metrics.replay_count;
            r.per_slot_metrics.push(metrics);
        }
        Ok(())
    })?;
    Ok(SuiteResult::from_records(records))
}
