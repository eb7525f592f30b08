//! Trial protocol: per run seed, `trials_nonuniform` random slot-weight
//! vectors plus one uniform trial, all sharing the same data order, model
//! initialisation and reservoir update sequence.
//!
//! Stream derivation per trial:
//!
//! | stream   | seed                        | label        |
//! |----------|-----------------------------|--------------|
//! | buffer   | `run_seed`                  | `"buffer"`   |
//! | data     | `run_seed`                  | `"data"`     |
//! | init     | `run_seed`                  | `"init"`     |
//! | weights  | `run_seed·64 + trial_id`    | `"weights"`  |
//! | sampling | `run_seed·64 + trial_id`    | `"sampling"` |

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rayon::prelude::*;

use crate::buffer::{InsertOutcome, ReplayBuffer, ReplaySlot, WeightKind, WeightPolicy};
use crate::error::{Error, Result};
use crate::losses::{
    der_loss, derpp_loss, er_loss, revise_stored_logits, xder_loss, HeadLayout, LossConfig, LossOutput, XderBatch,
};
use crate::nn::{
    backward, forward, init_params, per_sample_ce_gradients, per_sample_grad_norms, row_cross_entropy, sgd_step,
};
use crate::rng::RngStream;
use crate::stats::{mean_std, MeanStd};
use crate::stream::{build_stream, evaluate_accuracy, load_csv_stream, OnlineBatch, TaskData, TaskStreamConfig};

/// Upper bound on trials per run seed; keeps `run_seed·64 + trial_id`
/// collision-free.
pub const MAX_TRIALS_PER_SEED: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Er,
    Der,
    DerPlusPlus,
    Xder,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Er => "ER",
            Method::Der => "DER",
            Method::DerPlusPlus => "DER++",
            Method::Xder => "X-DER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ER" => Some(Method::Er),
            "DER" => Some(Method::Der),
            "DER++" | "DERPP" => Some(Method::DerPlusPlus),
            "X-DER" | "XDER" => Some(Method::Xder),
            _ => None,
        }
    }

    fn stores_logits(self) -> bool {
        self != Method::Er
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything shared by the trials of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub buffer_capacity: usize,
    pub replay_batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub hidden_sizes: Vec<usize>,
    pub loss: LossConfig,
    /// `data_seed` is ignored here; each trial uses its run seed.
    pub stream: TaskStreamConfig,
    pub run_seeds: Vec<u64>,
    pub trials_nonuniform: u32,
    pub dataset_csv: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Er,
            buffer_capacity: 200,
            replay_batch: 64,
            lr: 0.01,
            momentum: 0.9,
            hidden_sizes: vec![64, 64],
            loss: LossConfig::default(),
            stream: TaskStreamConfig::default(),
            run_seeds: vec![0, 1, 2, 3, 4],
            trials_nonuniform: 50,
            dataset_csv: None,
        }
    }
}

impl ExperimentConfig {
    /// Trial id of the uniform baseline.
    pub fn uniform_trial_id(&self) -> u32 {
        self.trials_nonuniform
    }

    pub fn trial_ids(&self) -> std::ops::RangeInclusive<u32> {
        0..=self.trials_nonuniform
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials_nonuniform + 1 > MAX_TRIALS_PER_SEED {
            return Err(Error::InvalidArgument(format!(
                "trials_nonuniform must be at most {}",
                MAX_TRIALS_PER_SEED - 1
            )));
        }
        let distinct: BTreeSet<u64> = self.run_seeds.iter().copied().collect();
        if distinct.len() != self.run_seeds.len() {
            return Err(Error::InvalidArgument("run_seeds must be distinct".into()));
        }
        if self.run_seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one run seed is required".into()));
        }
        self.trial_config(self.run_seeds[0], 0).validate()
    }

    pub fn trial_config(&self, run_seed: u64, trial_id: u32) -> TrialConfig {
        let kind = if trial_id == self.uniform_trial_id() {
            WeightKind::Uniform
        } else {
            WeightKind::RandomFixed
        };
        TrialConfig {
            run_seed,
            trial_id,
            policy: WeightPolicy { kind, trial_id },
            buffer_capacity: self.buffer_capacity,
            replay_batch: self.replay_batch,
            lr: self.lr,
            momentum: self.momentum,
            method: self.method,
            loss: self.loss,
            stream: TaskStreamConfig {
                data_seed: run_seed,
                ..self.stream.clone()
            },
            hidden_sizes: self.hidden_sizes.clone(),
            dataset_csv: self.dataset_csv.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub run_seed: u64,
    pub trial_id: u32,
    pub policy: WeightPolicy,
    pub buffer_capacity: usize,
    pub replay_batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub method: Method,
    pub loss: LossConfig,
    pub stream: TaskStreamConfig,
    pub hidden_sizes: Vec<usize>,
    pub dataset_csv: Option<PathBuf>,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 {
            return Err(Error::InvalidArgument("buffer_capacity must be positive".into()));
        }
        if self.replay_batch == 0 {
            return Err(Error::InvalidArgument("replay_batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer sizes must be positive".into()));
        }
        if self.trial_id >= MAX_TRIALS_PER_SEED {
            return Err(Error::InvalidArgument(format!(
                "trial_id must be below {MAX_TRIALS_PER_SEED}"
            )));
        }
        self.loss.validate()?;
        self.stream.validate()
    }

    pub fn trial_seed(&self) -> u64 {
        trial_seed(self.run_seed, self.trial_id)
    }
}

pub fn trial_seed(run_seed: u64, trial_id: u32) -> u64 {
    run_seed
        .wrapping_mul(MAX_TRIALS_PER_SEED as u64)
        .wrapping_add(trial_id as u64)
}

/// Builds (or loads) the data a trial trains on. Depends only on the stream
/// config and its `data_seed`.
pub fn load_task_data(config: &TrialConfig) -> Result<Arc<TaskData>> {
    match &config.dataset_csv {
        Some(path) => load_csv_stream(path, &config.stream),
        None => build_stream(&config.stream),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotMetrics {
    pub slot: usize,
    pub weight: f64,
    pub probability: f64,
    /// Draws of this slot over the whole trial, across occupants.
    pub replay_count: u64,
    /// Mean cross-entropy of the current occupant when replayed; NaN if the
    /// occupant was never replayed.
    pub mean_replay_loss: f64,
    /// Mean per-sample gradient norm of the current occupant when replayed.
    pub mean_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub final_average_accuracy: f64,
    pub per_task_accuracy: Vec<f64>,
    pub per_slot_metrics: Vec<SlotMetrics>,
    pub wall_time: f64,
    pub update_count: u64,
    pub replay_draws: u64,
}

impl TrialResult {
    /// Equality of everything except wall time, with NaN equal to NaN.
    pub fn same_outcome(&self, other: &TrialResult) -> bool {
        let bits = |v: f64| v.to_bits();
        self.final_average_accuracy.to_bits() == other.final_average_accuracy.to_bits()
            && self
                .per_task_accuracy
                .iter()
                .map(|&v| bits(v))
                .eq(other.per_task_accuracy.iter().map(|&v| bits(v)))
            && self.update_count == other.update_count
            && self.replay_draws == other.replay_draws
            && self.per_slot_metrics.len() == other.per_slot_metrics.len()
            && self.per_slot_metrics.iter().zip(&other.per_slot_metrics).all(|(a, b)| {
                a.slot == b.slot
                    && a.replay_count == b.replay_count
                    && [a.weight, a.probability, a.mean_replay_loss, a.mean_grad_norm]
                        .iter()
                        .map(|&v| bits(v))
                        .eq([b.weight, b.probability, b.mean_replay_loss, b.mean_grad_norm]
                            .iter()
                            .map(|&v| bits(v)))
            })
    }

    /// Mean over occupied slots of the per-occupant mean replay loss,
    /// ignoring never-replayed occupants.
    pub fn mean_slot_loss(&self) -> Option<f64> {
        let losses: Vec<f64> = self
            .per_slot_metrics
            .iter()
            .map(|m| m.mean_replay_loss)
            .filter(|v| v.is_finite())
            .collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Observation hooks into the training loop. All methods default to no-ops.
pub trait TrialProbe {
    fn on_batch(&mut self, _step: u64, _batch: &OnlineBatch) {}
    fn on_replay(&mut self, _step: u64, _slots: &[usize]) {}
    fn on_update(&mut self, _step: u64) {}
    fn on_insert(&mut self, _step: u64, _sample_uid: u64, _label: usize, _outcome: InsertOutcome) {}
    fn on_buffer(&mut self, _step: u64, _buffer: &ReplayBuffer) {}
}

impl TrialProbe for () {}

#[derive(Debug, Clone, Default)]
struct SlotAccumulator {
    draws: u64,
    occupant_draws: u64,
    loss_sum: f64,
    grad_norm_sum: f64,
}

impl SlotAccumulator {
    fn new_occupant(&mut self) {
        self.occupant_draws = 0;
        self.loss_sum = 0.0;
        self.grad_norm_sum = 0.0;
    }

    fn mean(&self, sum: f64) -> f64 {
        if self.occupant_draws == 0 {
            f64::NAN
        } else {
            sum / self.occupant_draws as f64
        }
    }
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialResult> {
    config.validate()?;
    let data = load_task_data(config)?;
    run_trial_on(config, &data, &mut ())
}

/// One trial over pre-built task data. Each online batch gets exactly one
/// optimizer step on the combined new + replay loss.
pub fn run_trial_on(config: &TrialConfig, data: &Arc<TaskData>, probe: &mut dyn TrialProbe) -> Result<TrialResult> {
    config.validate()?;
    let started = Instant::now();
    let classes = data.classes();
    if classes != config.stream.classes() {
        return Err(Error::InvalidArgument(format!(
            "task data has {classes} classes, config expects {}",
            config.stream.classes()
        )));
    }

    let mut sizes = vec![data.input_dim()];
    sizes.extend(&config.hidden_sizes);
    sizes.push(classes);
    let mut params = init_params(&sizes, &mut RngStream::new(config.run_seed, "init"))?;

    let seed = config.trial_seed();
    let mut buffer_stream = RngStream::new(config.run_seed, "buffer");
    let mut sampling_stream = RngStream::new(seed, "sampling");
    let mut buffer = ReplayBuffer::with_policy(
        config.buffer_capacity,
        config.policy,
        &mut RngStream::new(seed, "weights"),
    )?;
    let mut slot_stats = vec![SlotAccumulator::default(); config.buffer_capacity];
    let mut update_count = 0u64;
    let mut replay_draws = 0u64;

    for (step, batch) in data.cursor().enumerate() {
        let step = step as u64;
        probe.on_batch(step, &batch);
        let n_new = batch.labels.len();

        let replay_slots = if buffer.is_empty() {
            Vec::new()
        } else {
            buffer.sample_batch(config.replay_batch, &mut sampling_stream)?
        };
        probe.on_replay(step, &replay_slots);
        replay_draws += replay_slots.len() as u64;

        let occupant = |k: usize| buffer.slot(k).expect("sampled slot is occupied");
        let replay_labels: Vec<usize> = replay_slots.iter().map(|&k| occupant(k).label).collect();
        let mut inputs = Array2::zeros((n_new + replay_slots.len(), data.input_dim()));
        inputs.slice_mut(s![..n_new, ..]).assign(&batch.samples);
        for (row, &k) in replay_slots.iter().enumerate() {
            inputs
                .row_mut(n_new + row)
                .assign(&ndarray::ArrayView1::from(&occupant(k).sample[..]));
        }

        let (logits, cache) = forward(&params, inputs.view())?;
        let new_logits = logits.slice(s![..n_new, ..]);
        let replay_logits = logits.slice(s![n_new.., ..]);
        let layout = HeadLayout::new(data.classes_per_task, data.task_count, batch.task_id)?;

        if config.method == Method::Xder {
            for (row, &k) in replay_slots.iter().enumerate() {
                let revised = revise_stored_logits(buffer.slot(k).expect("occupied"), replay_logits.row(row), layout)?;
                buffer.slot_mut(k).expect("occupied").stored_logits = Some(revised);
            }
        }
        let stored = if config.method.stores_logits() {
            let mut z = Array2::zeros(replay_logits.raw_dim());
            for (row, &k) in replay_slots.iter().enumerate() {
                let logits = buffer
                    .slot(k)
                    .and_then(|s| s.stored_logits.as_ref())
                    .ok_or_else(|| Error::InvalidArgument(format!("slot {k} lacks stored logits")))?;
                z.row_mut(row).assign(&ndarray::ArrayView1::from(&logits[..]));
            }
            z
        } else {
            Array2::zeros((0, classes))
        };

        let loss = combined_loss(
            config,
            &batch,
            new_logits,
            replay_logits,
            &replay_labels,
            stored.view(),
            layout,
        )?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }

        if !replay_slots.is_empty() {
            let mut per_row = Array2::zeros(logits.raw_dim());
            per_row
                .slice_mut(s![n_new.., ..])
                .assign(&per_sample_ce_gradients(replay_logits, &replay_labels)?);
            let norms = per_sample_grad_norms(&params, &cache, per_row.view())?;
            for (row, &k) in replay_slots.iter().enumerate() {
                let acc = &mut slot_stats[k];
                acc.draws += 1;
                acc.occupant_draws += 1;
                acc.loss_sum += row_cross_entropy(replay_logits.row(row), replay_labels[row])?;
                acc.grad_norm_sum += norms[n_new + row];
            }
        }

        let dlogits = concatenate(Axis(0), &[loss.d_new.view(), loss.d_replay.view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let grads = backward(&params, &cache, dlogits.view())?;
        sgd_step(&mut params, &grads, config.lr, config.momentum).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, step },
            other => other,
        })?;
        update_count += 1;
        probe.on_update(step);

        for (i, (&label, &uid)) in batch.labels.iter().zip(&batch.uids).enumerate() {
            let item = ReplaySlot {
                sample: batch.samples.row(i).to_vec(),
                label,
                stored_logits: config.method.stores_logits().then(|| new_logits.row(i).to_vec()),
                inserted_at: step,
                sample_uid: uid,
            };
            let outcome = buffer.reservoir_insert(item, &mut buffer_stream);
            if let InsertOutcome::Stored(k) = outcome {
                slot_stats[k].new_occupant();
            }
            probe.on_insert(step, uid, label, outcome);
        }
        probe.on_buffer(step, &buffer);
    }

    let accuracy = evaluate_accuracy(&params, data)?;
    let probabilities = if buffer.is_empty() {
        Vec::new()
    } else {
        buffer.probabilities()?
    };
    let per_slot_metrics = buffer
        .iter()
        .map(|(k, _)| {
            let acc = &slot_stats[k];
            SlotMetrics {
                slot: k,
                weight: buffer.weights()[k],
                probability: probabilities[k],
                replay_count: acc.draws,
                mean_replay_loss: acc.mean(acc.loss_sum),
                mean_grad_norm: acc.mean(acc.grad_norm_sum),
            }
        })
        .collect();

    Ok(TrialResult {
        final_average_accuracy: accuracy.final_average,
        per_task_accuracy: accuracy.per_task,
        per_slot_metrics,
        wall_time: started.elapsed().as_secs_f64(),
        update_count,
        replay_draws,
    })
}

fn combined_loss(
    config: &TrialConfig,
    batch: &OnlineBatch,
    new_logits: ndarray::ArrayView2<f64>,
    replay_logits: ndarray::ArrayView2<f64>,
    replay_labels: &[usize],
    stored: ndarray::ArrayView2<f64>,
    layout: HeadLayout,
) -> Result<LossOutput> {
    let c = &config.loss;
    match config.method {
        Method::Er => er_loss(new_logits, &batch.labels, replay_logits, replay_labels, c.lambda_replay),
        Method::Der => der_loss(new_logits, &batch.labels, replay_logits, stored, c.alpha),
        Method::DerPlusPlus => derpp_loss(
            new_logits,
            &batch.labels,
            replay_logits,
            replay_labels,
            stored,
            c.alpha,
            c.beta,
        ),
        Method::Xder => xder_loss(
            XderBatch {
                new_logits,
                new_labels: &batch.labels,
                replay_logits,
                replay_labels,
                stored_logits: stored,
            },
            c,
            layout,
        ),
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub run_seed: u64,
    pub trial_id: u32,
    pub policy: WeightKind,
    pub method: Method,
    pub buffer_capacity: usize,
    pub outcome: std::result::Result<TrialResult, String>,
}

impl TrialRecord {
    pub fn result(&self) -> Option<&TrialResult> {
        self.outcome.as_ref().ok()
    }
}

/// Uniform vs best non-uniform accuracy for one buffer size, one entry per
/// run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub buffer_capacity: usize,
    pub seeds: Vec<u64>,
    pub uniform: Vec<f64>,
    pub best_nonuniform: Vec<f64>,
    pub best_trial: Vec<u32>,
}

impl Aggregate {
    pub fn uniform_summary(&self) -> Result<MeanStd> {
        mean_std(&self.uniform)
    }

    pub fn best_summary(&self) -> Result<MeanStd> {
        mean_std(&self.best_nonuniform)
    }

    pub fn margins(&self) -> Vec<f64> {
        self.best_nonuniform
            .iter()
            .zip(&self.uniform)
            .map(|(b, u)| b - u)
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteResult {
    /// Ordered by `(run_seed, trial_id)`.
    pub trials: Vec<TrialRecord>,
}

impl SuiteResult {
    pub fn from_records(mut trials: Vec<TrialRecord>) -> Self {
        trials.sort_by_key(|t| (t.buffer_capacity, t.run_seed, t.trial_id));
        SuiteResult { trials }
    }

    pub fn failures(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.outcome.is_err())
    }

    pub fn seeds(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.trials.iter().map(|t| t.run_seed).collect();
        set.into_iter().collect()
    }

    pub fn capacities(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.trials.iter().map(|t| t.buffer_capacity).collect();
        set.into_iter().collect()
    }

    pub fn trials_for(&self, capacity: usize, seed: u64) -> impl Iterator<Item = &TrialRecord> {
        self.trials
            .iter()
            .filter(move |t| t.buffer_capacity == capacity && t.run_seed == seed)
    }

    /// `(trial_id, accuracy)` of the best successful non-uniform trial;
    /// ties go to the lowest trial id.
    pub fn best_nonuniform(&self, capacity: usize, seed: u64) -> Option<(u32, f64)> {
        self.trials_for(capacity, seed)
            .filter(|t| t.policy == WeightKind::RandomFixed)
            .filter_map(|t| t.result().map(|r| (t.trial_id, r.final_average_accuracy)))
            .fold(None, |best, (id, acc)| match best {
                Some((_, b)) if b >= acc => best,
                _ => Some((id, acc)),
            })
    }

    pub fn uniform(&self, capacity: usize, seed: u64) -> Option<f64> {
        self.trials_for(capacity, seed)
            .find(|t| t.policy == WeightKind::Uniform)
            .and_then(|t| t.result().map(|r| r.final_average_accuracy))
    }

    /// One aggregate per buffer size, over the seeds that have both a
    /// uniform and a non-uniform result.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.capacities()
            .into_iter()
            .map(|capacity| {
                let mut agg = Aggregate {
                    buffer_capacity: capacity,
                    seeds: Vec::new(),
                    uniform: Vec::new(),
                    best_nonuniform: Vec::new(),
                    best_trial: Vec::new(),
                };
                for seed in self.seeds() {
                    if let (Some(u), Some((id, b))) =
                        (self.uniform(capacity, seed), self.best_nonuniform(capacity, seed))
                    {
                        agg.seeds.push(seed);
                        agg.uniform.push(u);
                        agg.best_nonuniform.push(b);
                        agg.best_trial.push(id);
                    }
                }
                agg
            })
            .collect()
    }
}

/// Runs every trial of `config` for each run seed.
pub fn run_suite(config: &ExperimentConfig, parallelism: usize) -> Result<SuiteResult> {
    let jobs: Vec<(u64, u32)> = config
        .run_seeds
        .iter()
        .flat_map(|&seed| config.trial_ids().map(move |t| (seed, t)))
        .collect();
    run_jobs(config, &jobs, parallelism)
}

/// Runs the given `(run_seed, trial_id)` jobs in any order on a pool of
/// `parallelism` workers; results come back ordered by key. A failing trial
/// is recorded in its [`TrialRecord`] and does not stop the others.
pub fn run_jobs(config: &ExperimentConfig, jobs: &[(u64, u32)], parallelism: usize) -> Result<SuiteResult> {
    config.validate()?;
    let seeds: BTreeSet<u64> = jobs.iter().map(|j| j.0).collect();
    let data: Vec<(u64, Arc<TaskData>)> = seeds
        .into_iter()
        .map(|seed| Ok((seed, load_task_data(&config.trial_config(seed, 0))?)))
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, trial_id)| {
                let trial = config.trial_config(seed, trial_id);
                let stream = &data.iter().find(|(s, _)| *s == seed).expect("data built per seed").1;
                TrialRecord {
                    run_seed: seed,
                    trial_id,
                    policy: trial.policy.kind,
                    method: trial.method,
                    buffer_capacity: trial.buffer_capacity,
                    outcome: run_trial_on(&trial, stream, &mut ()).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(SuiteResult::from_records(records))
}
