//! Class-incremental task streams over synthetic Gaussian clusters (or a
//! user-supplied CSV dataset).

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::rng::RngStream;

const MEAN_SCALE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStreamConfig {
    pub task_count: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    pub online_batch: usize,
    pub data_seed: u64,
}

impl Default for TaskStreamConfig {
    fn default() -> Self {
        TaskStreamConfig {
            task_count: 5,
            classes_per_task: 2,
            input_dim: 32,
            samples_per_class: 500,
            test_per_class: 200,
            cluster_spread: 6.0,
            online_batch: 32,
            data_seed: 0,
        }
    }
}

impl TaskStreamConfig {
    pub fn classes(&self) -> usize {
        self.task_count * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("task_count", self.task_count),
            ("classes_per_task", self.classes_per_task),
            ("input_dim", self.input_dim),
            ("samples_per_class", self.samples_per_class),
            ("test_per_class", self.test_per_class),
            ("online_batch", self.online_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cluster_spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        Ok(())
    }
}

/// A labelled split: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub uids: Vec<u64>,
}

impl Split {
    fn from_rows(rows: Vec<(Vec<f64>, usize, u64)>, dim: usize) -> Self {
        let mut features = Array2::zeros((rows.len(), dim));
        let mut labels = Vec::with_capacity(rows.len());
        let mut uids = Vec::with_capacity(rows.len());
        for (i, (x, y, uid)) in rows.into_iter().enumerate() {
            features.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
            labels.push(y);
            uids.push(uid);
        }
        Split { features, labels, uids }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Immutable, shareable task data: per-task training order and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_count: usize,
    pub classes_per_task: usize,
    pub online_batch: usize,
    /// Training samples of each task, already in presentation order.
    pub train: Vec<Split>,
    pub test: Vec<Split>,
}

impl TaskData {
    pub fn classes(&self) -> usize {
        self.task_count * self.classes_per_task
    }

    pub fn input_dim(&self) -> usize {
        self.train[0].features.ncols()
    }

    pub fn train_len(&self) -> usize {
        self.train.iter().map(Split::len).sum()
    }

    pub fn batches_per_task(&self) -> Vec<usize> {
        self.train.iter().map(|s| s.len().div_ceil(self.online_batch)).collect()
    }

    pub fn cursor(self: &Arc<Self>) -> TaskStream {
        TaskStream {
            data: Arc::clone(self),
            task: 0,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineBatch {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub uids: Vec<u64>,
    pub task_id: usize,
}

/// A private cursor over shared [`TaskData`].
#[derive(Debug, Clone)]
pub struct TaskStream {
    data: Arc<TaskData>,
    task: usize,
    offset: usize,
}

impl TaskStream {
    pub fn data(&self) -> &Arc<TaskData> {
        &self.data
    }

    /// Next online batch; batches never straddle tasks and every training
    /// sample is emitted exactly once.
    pub fn next_batch(&mut self) -> Option<OnlineBatch> {
        while self.task < self.data.task_count && self.offset >= self.data.train[self.task].len() {
            self.task += 1;
            self.offset = 0;
        }
        if self.task >= self.data.task_count {
            return None;
        }
        let split = &self.data.train[self.task];
        let end = (self.offset + self.data.online_batch).min(split.len());
        let range = self.offset..end;
        self.offset = end;
        Some(OnlineBatch {
            samples: split.features.slice(ndarray::s![range.clone(), ..]).to_owned(),
            labels: split.labels[range.clone()].to_vec(),
            uids: split.uids[range].to_vec(),
            task_id: self.task,
        })
    }
}

impl Iterator for TaskStream {
    type Item = OnlineBatch;

    fn next(&mut self) -> Option<OnlineBatch> {
        self.next_batch()
    }
}

/// Synthetic Gaussian clusters. Class means are `3·N(0, I)`; samples are
/// `mean + spread·N(0, I)`. Training uids are `0..n_train` in generation
/// order, test uids follow.
pub fn build_stream(config: &TaskStreamConfig) -> Result<Arc<TaskData>> {
    config.validate()?;
    let mut rng = RngStream::new(config.data_seed, "data");
    let d = config.input_dim;
    let classes = config.classes();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| MEAN_SCALE * rng.next_gaussian()).collect())
        .collect();

    let mut train_rows: Vec<Vec<(Vec<f64>, usize)>> = vec![Vec::new(); config.task_count];
    let mut test_rows: Vec<Vec<(Vec<f64>, usize)>> = vec![Vec::new(); config.task_count];
    for (class, mean) in means.iter().enumerate() {
        let task = class / config.classes_per_task;
        let mut draw = || -> Vec<f64> {
            mean.iter()
                .map(|m| m + config.cluster_spread * rng.next_gaussian())
                .collect()
        };
        for _ in 0..config.samples_per_class {
            train_rows[task].push((draw(), class));
        }
        for _ in 0..config.test_per_class {
            test_rows[task].push((draw(), class));
        }
    }
    assemble(train_rows, test_rows, config, d, &mut rng)
}

fn assemble(
    train_rows: Vec<Vec<(Vec<f64>, usize)>>,
    test_rows: Vec<Vec<(Vec<f64>, usize)>>,
    config: &TaskStreamConfig,
    dim: usize,
    rng: &mut RngStream,
) -> Result<Arc<TaskData>> {
    let mut next_uid = 0u64;
    let mut tag = |rows: Vec<(Vec<f64>, usize)>| -> Vec<(Vec<f64>, usize, u64)> {
        rows.into_iter()
            .map(|(x, y)| {
                let uid = next_uid;
                next_uid += 1;
                (x, y, uid)
            })
            .collect()
    };
    let mut train: Vec<Vec<(Vec<f64>, usize, u64)>> = train_rows.into_iter().map(&mut tag).collect();
    let test: Vec<Vec<(Vec<f64>, usize, u64)>> = test_rows.into_iter().map(&mut tag).collect();
    for (t, rows) in train.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("task {t} has no training samples")));
        }
    }
    for rows in &mut train {
        rng.shuffle(rows);
    }
    Ok(Arc::new(TaskData {
        task_count: config.task_count,
        classes_per_task: config.classes_per_task,
        online_batch: config.online_batch,
        train: train.into_iter().map(|r| Split::from_rows(r, dim)).collect(),
        test: test.into_iter().map(|r| Split::from_rows(r, dim)).collect(),
    }))
}

/// Loads `label,f0,f1,...` rows. Per class, up to `test_per_class` samples
/// (never more than half of the class) are held out for testing after a
/// shuffle with the data stream. `input_dim` is taken from the file.
pub fn load_csv_stream(path: &Path, config: &TaskStreamConfig) -> Result<Arc<TaskData>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::Csv {
            path: path.into(),
            row: 1,
            message: "header must be `label,f0,f1,...`".into(),
        });
    }
    let dim = headers.len() - 1;
    let classes = config.classes();
    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, row, e))?;
        let bad = |message: String| Error::Csv {
            path: path.into(),
            row,
            message,
        };
        let label: usize = record[0]
            .parse()
            .map_err(|_| bad(format!("invalid label {:?}", &record[0])))?;
        if label >= classes {
            return Err(bad(format!("label {label} exceeds the {classes} configured classes")));
        }
        let features = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("invalid feature {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(bad(format!("expected {dim} features, found {}", features.len())));
        }
        by_class[label].push(features);
    }

    let mut rng = RngStream::new(config.data_seed, "data");
    let mut train_rows: Vec<Vec<(Vec<f64>, usize)>> = vec![Vec::new(); config.task_count];
    let mut test_rows: Vec<Vec<(Vec<f64>, usize)>> = vec![Vec::new(); config.task_count];
    for (class, mut samples) in by_class.into_iter().enumerate() {
        if samples.len() < 2 {
            return Err(Error::Csv {
                path: path.into(),
                row: 0,
                message: format!("class {class} needs at least two samples"),
            });
        }
        rng.shuffle(&mut samples);
        let held_out = config.test_per_class.min(samples.len() / 2);
        let task = class / config.classes_per_task;
        let train_part = samples.split_off(held_out);
        test_rows[task].extend(samples.into_iter().map(|x| (x, class)));
        train_rows[task].extend(train_part.into_iter().map(|x| (x, class)));
    }
    assemble(train_rows, test_rows, config, dim, &mut rng)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(row);
    Error::Csv {
        path: path.into(),
        row,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub per_task: Vec<f64>,
    pub final_average: f64,
}

/// Single-head evaluation: a test sample counts as correct when the argmax
/// over all logits equals its label.
pub fn evaluate_accuracy(params: &ModelParams, data: &TaskData) -> Result<Accuracy> {
    if params.output_dim() != data.classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} outputs, stream has {} classes",
            params.output_dim(),
            data.classes()
        )));
    }
    let per_task = data
        .test
        .iter()
        .map(|split| {
            if split.is_empty() {
                return Ok(0.0);
            }
            let logits = params.predict(split.features.view())?;
            let correct = argmax_rows(logits.view())
                .zip(&split.labels)
                .filter(|(p, y)| p == *y)
                .count();
            Ok(correct as f64 / split.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let final_average = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(Accuracy {
        per_task,
        final_average,
    })
}

/// Index of the first maximum of each row.
pub fn argmax_rows<'a>(logits: ArrayView2<'a, f64>) -> impl Iterator<Item = usize> + 'a {
    logits.into_outer_iter().map(|row| {
        row.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0
    })
}
