//! Command implementations behind the `replay-lab` binary. Each returns a
//! process exit code: 0 on success, 1 on configuration or input errors, 2
//! when some trials failed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::{analyze_trials, render_table, AnalysisOptions};
use crate::config::load_config;
use crate::error::{Error, Result};
use crate::experiment::run_suite;
use crate::output::{
    read_results_dir, write_failures_csv, write_report_csv, write_results_csv, write_slot_metrics_csv,
    write_timings_csv, RunManifest, FAILURES_CSV, REPORT_CSV, RESULTS_CSV, SLOT_METRICS_CSV, TIMINGS_CSV,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

pub const ANALYSIS_TXT: &str = "analysis.txt";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub parallelism: usize,
    /// Write measured wall times into results.csv instead of 0.
    pub record_wall_time: bool,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_ERROR
}

pub fn cmd_run(options: &RunOptions) -> i32 {
    match run(options) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn run(options: &RunOptions) -> Result<i32> {
    let config = load_config(&options.config)?;
    std::fs::create_dir_all(&options.out).map_err(|e| Error::io(&options.out, e))?;
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: options.config.clone(),
        output_dir: options.out.clone(),
        parallelism: options.parallelism,
        started_unix: unix_now(),
        finished_unix: None,
        status: "running".into(),
        resolved: config.clone(),
    };
    manifest.write(&options.out)?;

    let suite = run_suite(&config, options.parallelism)?;
    write_results_csv(&options.out.join(RESULTS_CSV), &suite, options.record_wall_time)?;
    write_slot_metrics_csv(&options.out.join(SLOT_METRICS_CSV), &suite)?;
    write_timings_csv(&options.out.join(TIMINGS_CSV), &suite)?;

    let failures = suite.failures().count();
    let failures_path = options.out.join(FAILURES_CSV);
    if failures > 0 {
        write_failures_csv(&failures_path, &suite)?;
        for t in suite.failures() {
            if let Err(message) = &t.outcome {
                eprintln!("trial (seed {}, id {}) failed: {message}", t.run_seed, t.trial_id);
            }
        }
    } else if failures_path.exists() {
        std::fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
    }
    manifest.finished_unix = Some(unix_now());
    manifest.status = if failures > 0 {
        format!("partial ({failures} of {} trials failed)", suite.trials.len())
    } else {
        "complete".into()
    };
    manifest.write(&options.out)?;
    eprintln!(
        "{} trials, {failures} failed; results in {}",
        suite.trials.len(),
        options.out.display()
    );
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn cmd_analyze(dir: &Path, options: &AnalysisOptions) -> i32 {
    let result = read_results_dir(dir).and_then(|suite| {
        let text = analyze_trials(&suite, options).render();
        write_text(dir, ANALYSIS_TXT, &text)?;
        print!("{text}");
        Ok(())
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

pub fn cmd_report(dir: &Path) -> i32 {
    let result = read_results_dir(dir).and_then(|suite| {
        let text = render_table(&suite);
        write_text(dir, REPORT_TXT, &text)?;
        write_report_csv(&dir.join(REPORT_CSV), &suite)?;
        print!("{text}");
        Ok(())
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}
