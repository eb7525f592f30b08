//! Line-oriented `key = value` experiment configuration. `#` starts a
//! comment; unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Method};

pub const KEYS: &[&str] = &[
    "method",
    "buffer_capacity",
    "online_batch",
    "replay_batch",
    "lr",
    "momentum",
    "hidden_sizes",
    "task_count",
    "classes_per_task",
    "input_dim",
    "samples_per_class",
    "test_per_class",
    "cluster_spread",
    "run_seeds",
    "trials_nonuniform",
    "lambda_replay",
    "alpha",
    "beta",
    "lambda_fp",
    "eta",
    "tau",
    "margin",
    "dataset_csv",
];

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Parses config text on top of the defaults. `origin` names the source in
/// error messages; a relative `dataset_csv` resolves against its directory.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    let mut seen = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let err = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message: format!("line {line_no}: {message}"),
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if seen.contains(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        seen.push(key);
        apply(&mut config, key, value, origin).map_err(err)?;
    }
    config.validate().map_err(|e| Error::Config {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(config)
}

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn apply(c: &mut ExperimentConfig, key: &str, value: &str, origin: &Path) -> std::result::Result<(), String> {
    match key {
        "method" => {
            c.method = Method::parse(value).ok_or_else(|| format!("unknown method `{value}`"))?;
        }
        "buffer_capacity" => c.buffer_capacity = num(key, value)?,
        "online_batch" => c.stream.online_batch = num(key, value)?,
        "replay_batch" => c.replay_batch = num(key, value)?,
        "lr" => c.lr = num(key, value)?,
        "momentum" => c.momentum = num(key, value)?,
        "hidden_sizes" => c.hidden_sizes = list(key, value)?,
        "task_count" => c.stream.task_count = num(key, value)?,
        "classes_per_task" => c.stream.classes_per_task = num(key, value)?,
        "input_dim" => c.stream.input_dim = num(key, value)?,
        "samples_per_class" => c.stream.samples_per_class = num(key, value)?,
        "test_per_class" => c.stream.test_per_class = num(key, value)?,
        "cluster_spread" => c.stream.cluster_spread = num(key, value)?,
        "run_seeds" => c.run_seeds = list(key, value)?,
        "trials_nonuniform" => c.trials_nonuniform = num(key, value)?,
        "lambda_replay" => c.loss.lambda_replay = num(key, value)?,
        "alpha" => c.loss.alpha = num(key, value)?,
        "beta" => c.loss.beta = num(key, value)?,
        "lambda_fp" => c.loss.lambda_fp = num(key, value)?,
        "eta" => c.loss.eta = num(key, value)?,
        "tau" => c.loss.tau = num(key, value)?,
        "margin" => c.loss.margin = num(key, value)?,
        "dataset_csv" => {
            let path = PathBuf::from(value);
            c.dataset_csv = Some(match origin.parent() {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path,
            });
        }
        _ => unreachable!("key list checked by caller"),
    }
    Ok(())
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

/// Renders every key with its resolved value; parsing the output gives back
/// the same config.
pub fn render_config(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("method", c.method.to_string());
    line("buffer_capacity", c.buffer_capacity.to_string());
    line("online_batch", c.stream.online_batch.to_string());
    line("replay_batch", c.replay_batch.to_string());
    line("lr", format!("{:?}", c.lr));
    line("momentum", format!("{:?}", c.momentum));
    line("hidden_sizes", join(&c.hidden_sizes));
    line("task_count", c.stream.task_count.to_string());
    line("classes_per_task", c.stream.classes_per_task.to_string());
    line("input_dim", c.stream.input_dim.to_string());
    line("samples_per_class", c.stream.samples_per_class.to_string());
    line("test_per_class", c.stream.test_per_class.to_string());
    line("cluster_spread", format!("{:?}", c.stream.cluster_spread));
    line("run_seeds", join(&c.run_seeds));
    line("trials_nonuniform", c.trials_nonuniform.to_string());
    line("lambda_replay", format!("{:?}", c.loss.lambda_replay));
    line("alpha", format!("{:?}", c.loss.alpha));
    line("beta", format!("{:?}", c.loss.beta));
    line("lambda_fp", format!("{:?}", c.loss.lambda_fp));
    line("eta", format!("{:?}", c.loss.eta));
    line("tau", format!("{:?}", c.loss.tau));
    line("margin", format!("{:?}", c.loss.margin));
    if let Some(path) = &c.dataset_csv {
        line("dataset_csv", path.display().to_string());
    }
    out
}
