use std::collections::BTreeSet;
use std::sync::Arc;

use replay_lab::buffer::{InsertOutcome, ReplayBuffer};
use replay_lab::experiment::{load_task_data, run_jobs, run_suite, run_trial_on, ExperimentConfig, Method, TrialProbe};
use replay_lab::stream::{OnlineBatch, TaskStreamConfig};
use replay_lab::{Error, WeightKind};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        buffer_capacity: 24,
        replay_batch: 16,
        hidden_sizes: vec![16],
        stream: TaskStreamConfig {
            task_count: 3,
            classes_per_task: 2,
            input_dim: 6,
            samples_per_class: 30,
            test_per_class: 10,
            online_batch: 10,
            ..TaskStreamConfig::default()
        },
        run_seeds: vec![3, 8],
        trials_nonuniform: 6,
        ..ExperimentConfig::default()
    }
}

#[derive(Default)]
struct Recorder {
    buffer_history: Vec<Vec<(usize, u64, usize)>>,
    batch_uids: Vec<u64>,
    updates: Vec<u64>,
    replayed: Vec<Vec<usize>>,
    inserts: Vec<(u64, InsertOutcome)>,
}

impl TrialProbe for Recorder {
    fn on_batch(&mut self, _step: u64, batch: &OnlineBatch) {
        self.batch_uids.extend(&batch.uids);
    }
    fn on_replay(&mut self, _step: u64, slots: &[usize]) {
        self.replayed.push(slots.to_vec());
    }
    fn on_update(&mut self, step: u64) {
        self.updates.push(step);
    }
    fn on_insert(&mut self, _step: u64, uid: u64, _label: usize, outcome: InsertOutcome) {
        self.inserts.push((uid, outcome));
    }
    fn on_buffer(&mut self, _step: u64, buffer: &ReplayBuffer) {
        self.buffer_history
            .push(buffer.iter().map(|(k, s)| (k, s.sample_uid, s.label)).collect());
    }
}

fn record(config: &ExperimentConfig, seed: u64, trial: u32) -> Recorder {
    let trial = config.trial_config(seed, trial);
    let data = load_task_data(&trial).unwrap();
    let mut probe = Recorder::default();
    run_trial_on(&trial, &data, &mut probe).unwrap();
    probe
}

#[test]
fn buffer_history_is_identical_across_trials_for_every_method() {
    for method in [Method::Er, Method::Der, Method::DerPlusPlus, Method::Xder] {
        let config = ExperimentConfig { method, ..small() };
        let reference = record(&config, 3, 0).buffer_history;
        assert_eq!(reference.len(), 18);
        for trial in config.trial_ids().skip(1) {
            assert_eq!(
                record(&config, 3, trial).buffer_history,
                reference,
                "{method} trial {trial}"
            );
        }
        assert_ne!(record(&config, 8, 0).buffer_history, reference);
    }
}

#[test]
fn one_update_per_online_batch() {
    let r = record(&small(), 3, 2);
    assert_eq!(r.updates, (0..18).collect::<Vec<u64>>());
    assert!(r.replayed[0].is_empty());
    assert!(r.replayed[1..].iter().all(|s| s.len() == 16));
}

#[test]
fn every_training_sample_is_consumed_once() {
    let config = small();
    let r = record(&config, 8, 1);
    let data = load_task_data(&config.trial_config(8, 1)).unwrap();
    let uids: BTreeSet<u64> = r.batch_uids.iter().copied().collect();
    assert_eq!(r.batch_uids.len(), data.train_len());
    assert_eq!(uids.len(), data.train_len());
    assert_eq!(r.inserts.len(), data.train_len());
    let inserted: Vec<u64> = r.inserts.iter().map(|(u, _)| *u).collect();
    assert_eq!(inserted, r.batch_uids);
    let test_uids: BTreeSet<u64> = data.test.iter().flat_map(|s| s.uids.iter().copied()).collect();
    assert!(uids.is_disjoint(&test_uids));
}

#[test]
fn different_weights_change_replay_but_not_the_buffer() {
    let config = small();
    let (a, b) = (record(&config, 3, 0), record(&config, 3, 1));
    assert_ne!(a.replayed, b.replayed);
    assert_eq!(a.inserts, b.inserts);
}

#[test]
fn suite_order_does_not_matter() {
    let config = small();
    let mut jobs: Vec<(u64, u32)> = config
        .run_seeds
        .iter()
        .flat_map(|&s| config.trial_ids().map(move |t| (s, t)))
        .collect();
    let forward = run_jobs(&config, &jobs, 1).unwrap();
    jobs.reverse();
    let backward = run_jobs(&config, &jobs, 3).unwrap();
    assert_eq!(forward.trials.len(), 14);
    for (a, b) in forward.trials.iter().zip(&backward.trials) {
        assert_eq!((a.run_seed, a.trial_id), (b.run_seed, b.trial_id));
        assert!(a.result().unwrap().same_outcome(b.result().unwrap()));
    }
    assert_eq!(forward.aggregates(), backward.aggregates());
}

#[test]
fn suite_counts_and_policies() {
    let config = small();
    let suite = run_suite(&config, 2).unwrap();
    assert_eq!(suite.trials.len(), 2 * 7);
    assert_eq!(suite.failures().count(), 0);
    let uniform: Vec<u32> = suite
        .trials
        .iter()
        .filter(|t| t.policy == WeightKind::Uniform)
        .map(|t| t.trial_id)
        .collect();
    assert_eq!(uniform, vec![6, 6]);
    let agg = &suite.aggregates()[0];
    assert_eq!(agg.seeds, vec![3, 8]);
    for (i, &seed) in agg.seeds.iter().enumerate() {
        let best = suite
            .trials_for(24, seed)
            .filter(|t| t.trial_id < 6)
            .map(|t| t.result().unwrap().final_average_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(agg.best_nonuniform[i], best);
    }
}

#[test]
fn diverging_training_reports_the_step() {
    let config = ExperimentConfig {
        lr: 1e12,
        momentum: 0.5,
        ..small()
    };
    let trial = config.trial_config(3, 0);
    let data = load_task_data(&trial).unwrap();
    match run_trial_on(&trial, &data, &mut ()) {
        Err(Error::NonFinite { step, .. }) => assert!(step < 18),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn failing_trials_are_recorded_not_fatal() {
    let config = ExperimentConfig {
        lr: 1e12,
        momentum: 0.5,
        ..small()
    };
    let suite = run_suite(&config, 2).unwrap();
    assert_eq!(suite.trials.len(), 14);
    assert!(suite.failures().count() > 0);
    for t in suite.failures() {
        assert!(t.outcome.as_ref().unwrap_err().contains("non-finite"));
    }
}

#[test]
fn shared_task_data_matches_private_copies() {
    let config = small();
    let trial = config.trial_config(8, 4);
    let shared = load_task_data(&trial).unwrap();
    let private = Arc::new((*load_task_data(&trial).unwrap()).clone());
    let a = run_trial_on(&trial, &shared, &mut ()).unwrap();
    let b = run_trial_on(&trial, &private, &mut ()).unwrap();
    assert!(a.same_outcome(&b));
}
