//! Statistical comparison of a finished suite: uniform vs best non-uniform
//! accuracy, slot-level rank correlations, and a high/low trial-group test.

use std::fmt::Write as _;

use crate::experiment::{Aggregate, SuiteResult, TrialRecord};
use crate::stats::{mann_whitney_u, mean_std, paired_t_test, spearman, MeanStd, TestResult};

/// A statistic, or the reason it could not be computed.
pub type Stat = std::result::Result<TestResult, String>;

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub high_threshold: Option<f64>,
    pub low_threshold: Option<f64>,
    /// Seed whose trials feed the correlation and group tests; defaults to
    /// the smallest seed.
    pub seed: Option<u64>,
    /// Trial whose slots feed the Spearman correlations; defaults to the best
    /// non-uniform trial of the analysis seed.
    pub trial: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct CapacityComparison {
    pub aggregate: Aggregate,
    pub uniform: Option<MeanStd>,
    pub best_nonuniform: Option<MeanStd>,
    pub mean_margin: Option<f64>,
    pub paired_t: Stat,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub comparisons: Vec<CapacityComparison>,
    pub seed: Option<u64>,
    pub trial: Option<u32>,
    pub spearman_loss: Stat,
    pub spearman_grad_norm: Stat,
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub high_group: Vec<u32>,
    pub low_group: Vec<u32>,
    pub high_mean_loss: Vec<f64>,
    pub low_mean_loss: Vec<f64>,
    pub mann_whitney: Stat,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn compare(aggregate: Aggregate) -> CapacityComparison {
    let margins = aggregate.margins();
    let paired_t = if aggregate.seeds.len() < 2 {
        Err(format!("needs at least 2 seeds, have {}", aggregate.seeds.len()))
    } else {
        paired_t_test(&aggregate.best_nonuniform, &aggregate.uniform).map_err(|e| e.to_string())
    };
    CapacityComparison {
        uniform: aggregate.uniform_summary().ok(),
        best_nonuniform: aggregate.best_summary().ok(),
        mean_margin: mean_std(&margins).ok().map(|m| m.mean),
        paired_t,
        aggregate,
    }
}

fn spearman_over_slots(trial: Option<&TrialRecord>, metric: impl Fn(&crate::experiment::SlotMetrics) -> f64) -> Stat {
    let trial = trial.ok_or("no analysis trial available")?;
    let result = trial.result().ok_or("analysis trial failed")?;
    let (p, v): (Vec<f64>, Vec<f64>) = result
        .per_slot_metrics
        .iter()
        .map(|m| (m.probability, metric(m)))
        .filter(|(_, v)| v.is_finite())
        .unzip();
    spearman(&p, &v).map_err(|e| e.to_string())
}

pub fn analyze_trials(suite: &SuiteResult, options: &AnalysisOptions) -> AnalysisReport {
    let comparisons: Vec<CapacityComparison> = suite.aggregates().into_iter().map(compare).collect();
    let capacity = suite.capacities().first().copied();
    let seed = options.seed.or_else(|| suite.seeds().first().copied());
    let seed_trials: Vec<&TrialRecord> = match (capacity, seed) {
        (Some(c), Some(s)) => suite.trials_for(c, s).filter(|t| t.result().is_some()).collect(),
        _ => Vec::new(),
    };

    let trial = options.trial.or_else(|| {
        let (c, s) = (capacity?, seed?);
        suite.best_nonuniform(c, s).map(|(id, _)| id)
    });
    let chosen = seed_trials.iter().copied().find(|t| Some(t.trial_id) == trial);
    let spearman_loss = spearman_over_slots(chosen, |m| m.mean_replay_loss);
    let spearman_grad_norm = spearman_over_slots(chosen, |m| m.mean_grad_norm);

    let mut accuracies: Vec<f64> = seed_trials
        .iter()
        .filter_map(|t| t.result().map(|r| r.final_average_accuracy))
        .collect();
    accuracies.sort_by(f64::total_cmp);
    let (default_high, default_low) = if accuracies.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (quantile(&accuracies, 0.75), quantile(&accuracies, 0.25))
    };
    let high_threshold = options.high_threshold.unwrap_or(default_high);
    let low_threshold = options.low_threshold.unwrap_or(default_low);

    let mut high_group = Vec::new();
    let mut low_group = Vec::new();
    let mut high_mean_loss = Vec::new();
    let mut low_mean_loss = Vec::new();
    for t in &seed_trials {
        let r = t.result().expect("filtered to successful trials");
        let Some(loss) = r.mean_slot_loss() else { continue };
        if r.final_average_accuracy > high_threshold {
            high_group.push(t.trial_id);
            high_mean_loss.push(loss);
        } else if r.final_average_accuracy < low_threshold {
            low_group.push(t.trial_id);
            low_mean_loss.push(loss);
        }
    }
    let mann_whitney = if high_group.len() < 2 || low_group.len() < 2 {
        Err(format!(
            "needs at least 2 trials per group, have high {} and low {}",
            high_group.len(),
            low_group.len()
        ))
    } else {
        mann_whitney_u(&high_mean_loss, &low_mean_loss).map_err(|e| e.to_string())
    };

    AnalysisReport {
        comparisons,
        seed,
        trial,
        spearman_loss,
        spearman_grad_norm,
        high_threshold,
        low_threshold,
        high_group,
        low_group,
        high_mean_loss,
        low_mean_loss,
        mann_whitney,
    }
}

fn pct(m: &Option<MeanStd>) -> String {
    match m {
        Some(m) => MeanStd {
            mean: m.mean * 100.0,
            std: m.std.map(|s| s * 100.0),
            n: m.n,
        }
        .to_string(),
        None => "n/a".into(),
    }
}

fn stat_line(out: &mut String, name: &str, symbol: &str, stat: &Stat) {
    let _ = match stat {
        Ok(r) => writeln!(
            out,
            "{name}: {symbol} = {:.6}, p = {:.6e} (n1 = {}, n2 = {}, {})",
            r.statistic, r.p_value, r.n1, r.n2, r.method
        ),
        Err(reason) => writeln!(out, "{name}: unavailable ({reason})"),
    };
}

impl AnalysisReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Uniform vs best non-uniform final average accuracy (%)");
        for c in &self.comparisons {
            let a = &c.aggregate;
            let _ = writeln!(out, "buffer size {} over {} seed(s)", a.buffer_capacity, a.seeds.len());
            let _ = writeln!(out, "  uniform:          {}", pct(&c.uniform));
            let _ = writeln!(out, "  best non-uniform: {}", pct(&c.best_nonuniform));
            for i in 0..a.seeds.len() {
                let _ = writeln!(
                    out,
                    "  seed {}: uniform {:.2}, best {:.2} (trial {}), margin {:+.2}",
                    a.seeds[i],
                    a.uniform[i] * 100.0,
                    a.best_nonuniform[i] * 100.0,
                    a.best_trial[i],
                    (a.best_nonuniform[i] - a.uniform[i]) * 100.0
                );
            }
            match c.mean_margin {
                Some(m) if m < 0.0 => {
                    let _ = writeln!(
                        out,
                        "  mean margin: {:+.2} points (negative: best non-uniform underperforms uniform)",
                        m * 100.0
                    );
                }
                Some(m) => {
                    let _ = writeln!(out, "  mean margin: {:+.2} points", m * 100.0);
                }
                None => {
                    let _ = writeln!(out, "  mean margin: n/a");
                }
            }
            stat_line(&mut out, "  paired t-test (best vs uniform)", "t", &c.paired_t);
        }
        let _ = writeln!(out);
        let seed = self.seed.map_or("n/a".into(), |s| s.to_string());
        let trial = self.trial.map_or("n/a".into(), |t| t.to_string());
        let _ = writeln!(out, "Slot-level correlations (seed {seed}, trial {trial})");
        stat_line(
            &mut out,
            "  Spearman probability vs mean replay loss",
            "rho",
            &self.spearman_loss,
        );
        stat_line(
            &mut out,
            "  Spearman probability vs mean grad norm",
            "rho",
            &self.spearman_grad_norm,
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Trial groups (seed {seed}): high accuracy > {:.6}, low accuracy < {:.6}",
            self.high_threshold, self.low_threshold
        );
        let group = |ids: &[u32]| {
            if ids.is_empty() {
                "empty".to_string()
            } else {
                ids.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
            }
        };
        let _ = writeln!(out, "  high group: {}", group(&self.high_group));
        let _ = writeln!(out, "  low group: {}", group(&self.low_group));
        let mean = |v: &[f64]| mean_std(v).map_or("n/a".into(), |m| format!("{:.6}", m.mean));
        let _ = writeln!(
            out,
            "  mean loss per sample: high {}, low {}",
            mean(&self.high_mean_loss),
            mean(&self.low_mean_loss)
        );
        stat_line(
            &mut out,
            "  Mann-Whitney (high vs low mean loss)",
            "U",
            &self.mann_whitney,
        );
        out
    }
}

/// Table of mean ± std final average accuracy (%) per buffer size.
pub fn render_table(suite: &SuiteResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Final average accuracy (%), mean ± std over seeds");
    let _ = writeln!(
        out,
        "{:<12} | {:<18} | {:<18}",
        "Buffer size", "Uniform", "Best non-uniform"
    );
    let _ = writeln!(out, "{}", "-".repeat(54));
    for a in suite.aggregates() {
        let _ = writeln!(
            out,
            "{:<12} | {:<18} | {:<18}",
            a.buffer_capacity,
            pct(&a.uniform_summary().ok()),
            pct(&a.best_summary().ok())
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::WeightKind;
    use crate::experiment::{Method, SlotMetrics, TrialResult};

    fn record(seed: u64, trial_id: u32, uniform: bool, acc: f64, losses: &[f64]) -> TrialRecord {
        TrialRecord {
            run_seed: seed,
            trial_id,
            policy: if uniform {
                WeightKind::Uniform
            } else {
                WeightKind::RandomFixed
            },
            method: Method::Er,
            buffer_capacity: 10,
            outcome: Ok(TrialResult {
                final_average_accuracy: acc,
                per_task_accuracy: vec![acc],
                per_slot_metrics: losses
                    .iter()
                    .enumerate()
                    .map(|(k, &l)| SlotMetrics {
                        slot: k,
                        weight: l,
                        probability: l / 100.0,
                        replay_count: 1,
                        mean_replay_loss: l,
                        mean_grad_norm: 2.0 * l,
                    })
                    .collect(),
                wall_time: 0.0,
                update_count: 0,
                replay_draws: 0,
            }),
        }
    }

    #[test]
    fn identical_accuracies_leave_both_groups_empty() {
        let suite = SuiteResult::from_records((0..5).map(|t| record(0, t, t == 4, 0.5, &[1.0, 2.0, 3.0])).collect());
        let report = analyze_trials(&suite, &AnalysisOptions::default());
        assert!(report.high_group.is_empty() && report.low_group.is_empty());
        assert!(report.mann_whitney.is_err());
        assert!(report.render().contains("high group: empty"));
    }

    #[test]
    fn monotone_probability_gives_unit_rho() {
        let suite = SuiteResult::from_records(vec![
            record(0, 0, false, 0.6, &[0.3, 0.1, 0.9, 0.5]),
            record(0, 1, true, 0.5, &[0.3, 0.1, 0.9, 0.5]),
        ]);
        let report = analyze_trials(&suite, &AnalysisOptions::default());
        assert_eq!(report.trial, Some(0));
        assert_eq!(report.spearman_loss.as_ref().unwrap().statistic, 1.0);
        assert_eq!(report.spearman_grad_norm.as_ref().unwrap().statistic, 1.0);
    }

    #[test]
    fn separated_groups_give_u_zero() {
        let suite = SuiteResult::from_records(vec![
            record(0, 0, false, 0.9, &[1.0]),
            record(0, 1, false, 0.8, &[2.0]),
            record(0, 2, false, 0.2, &[3.0]),
            record(0, 3, false, 0.1, &[4.0]),
            record(0, 4, true, 0.5, &[5.0]),
        ]);
        let options = AnalysisOptions {
            high_threshold: Some(0.7),
            low_threshold: Some(0.3),
            ..AnalysisOptions::default()
        };
        let report = analyze_trials(&suite, &options);
        let mw = report.mann_whitney.unwrap();
        assert_eq!(mw.statistic, 0.0);
        assert!((mw.p_value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_seed_has_no_t_test() {
        let suite = SuiteResult::from_records(vec![record(0, 0, false, 0.6, &[1.0]), record(0, 1, true, 0.5, &[1.0])]);
        let report = analyze_trials(&suite, &AnalysisOptions::default());
        assert!(report.comparisons[0].paired_t.is_err());
        assert!(render_table(&suite).contains("± n/a"));
    }

    #[test]
    fn quartiles_interpolate() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
    }
}
