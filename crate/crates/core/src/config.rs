//! Flat `key = value` config files for data generation and training.
//!
//! One key per line; `#` starts a comment and blank lines are ignored.
//! Unknown keys are rejected by name, omitted keys fall back to defaults.
//! Every command echoes its fully-resolved config (all keys, canonical
//! order) into the run directory as `config.resolved`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                i + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{value}` ({e})")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|t| parse_value(key, t.trim()))
        .collect()
}

/// Parses a synthetic-data config; see [`SynthConfig`] for the semantics.
pub fn synth_config_from_str(text: &str) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    for (key, value) in parse_lines(text)? {
        match key.as_str() {
            "num_domains" => cfg.num_domains = parse_value(&key, &value)?,
            "num_classes" => cfg.num_classes = parse_value(&key, &value)?,
            "feature_dim" => cfg.feature_dim = parse_value(&key, &value)?,
            "samples_per_domain" => cfg.samples_per_domain = parse_value(&key, &value)?,
            "class_skew" => cfg.class_skew = parse_value(&key, &value)?,
            "domain_shift_scale" => cfg.domain_shift_scale = parse_value(&key, &value)?,
            "subclusters" => cfg.intra_domain_subclusters = parse_value(&key, &value)?,
            "noise_std" => cfg.noise_std = parse_value(&key, &value)?,
            "seed" => cfg.seed = parse_value(&key, &value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth_config_from_file(path: &Path) -> Result<SynthConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    synth_config_from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Canonical echo of a synthetic-data config.
pub fn resolved_synth_config(cfg: &SynthConfig) -> String {
    format!(
        "num_domains = {}\nnum_classes = {}\nfeature_dim = {}\nsamples_per_domain = {}\n\
         class_skew = {}\ndomain_shift_scale = {}\nsubclusters = {}\nnoise_std = {}\nseed = {}\n",
        cfg.num_domains,
        cfg.num_classes,
        cfg.feature_dim,
        cfg.samples_per_domain,
        cfg.class_skew,
        cfg.domain_shift_scale,
        cfg.intra_domain_subclusters,
        cfg.noise_std,
        cfg.seed
    )
}

/// Parses a training config; see [`TrainConfig`] for the semantics.
pub fn train_config_from_str(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (key, value) in parse_lines(text)? {
        match key.as_str() {
            "hidden_dims" => cfg.hidden_dims = parse_list(&key, &value)?,
            "activation" => cfg.activation = value.parse()?,
            "margin" => cfg.margin = parse_value(&key, &value)?,
            "hard_count" => cfg.hard_count = parse_value(&key, &value)?,
            "alpha" => cfg.alpha = parse_value(&key, &value)?,
            "gamma" => cfg.gamma = parse_value(&key, &value)?,
            "weights_mode" => cfg.weights_mode = value.parse()?,
            "batch_size" => cfg.batch_size = parse_value(&key, &value)?,
            "epochs" => cfg.epochs = parse_value(&key, &value)?,
            "lr" => cfg.lr = parse_value(&key, &value)?,
            "jitter_phi" => cfg.jitter_phi = parse_value(&key, &value)?,
            "jitter_aux" => cfg.jitter_aux = parse_value(&key, &value)?,
            "seeds" => cfg.seeds = parse_list(&key, &value)?,
            "init_params" => cfg.init_params = Some(PathBuf::from(value)),
            "eval_every" => cfg.eval_every = parse_value(&key, &value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config_from_file(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    train_config_from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Canonical echo of a training config.
pub fn resolved_train_config(cfg: &TrainConfig) -> String {
    let dims: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    let seeds: Vec<String> = cfg.seeds.iter().map(|s| s.to_string()).collect();
    let mut out = format!(
        "hidden_dims = {}\nactivation = {}\nmargin = {}\nhard_count = {}\nalpha = {}\n\
         gamma = {}\nweights_mode = {}\nbatch_size = {}\nepochs = {}\nlr = {}\n\
         jitter_phi = {}\njitter_aux = {}\nseeds = {}\neval_every = {}\n",
        dims.join(","),
        cfg.activation,
        cfg.margin,
        cfg.hard_count,
        cfg.alpha,
        cfg.gamma,
        cfg.weights_mode,
        cfg.batch_size,
        cfg.epochs,
        cfg.lr,
        cfg.jitter_phi,
        cfg.jitter_aux,
        seeds.join(","),
        cfg.eval_every
    );
    if let Some(path) = &cfg.init_params {
        out.push_str(&format!("init_params = {}\n", path.display()));
    }
    out
}
