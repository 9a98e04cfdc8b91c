//! The `dgadr` command-line interface: data generation, training,
//! leave-one-domain-out experiments, domain-shift analysis and the gradient
//! self-check.
//!
//! Every artifact-producing command echoes its fully-resolved configuration
//! (file values plus flag overrides) next to its outputs, and identical
//! config + seed produce byte-identical output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use ndarray::Array2;

use crate::analysis::{cross_domain_dispersion, domain_kl_matrix, pca_project, projection_csv};
use crate::config::{
    resolved_synth_config, resolved_train_config, synth_config_from_file, train_config_from_file,
};
use crate::data::{generate_synthetic, load_dataset, save_dataset, split_leave_one_out, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck::{gradient_check_suite, GRAD_TOLERANCE};
use crate::metrics::MetricsReport;
use crate::model::{forward, load_params, save_params};
use crate::trainer::{evaluate, run_loto, train_one, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dgadr",
    version,
    about = "Domain-generalization experiment toolkit: alignment loss, focal loss, leave-one-domain-out harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain dataset CSV.
    Gen {
        /// Synthetic-data config file (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path; the resolved config lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model on a dataset minus a held-out target domain.
    Train {
        /// Training config file (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Domain held out for evaluation.
        #[arg(long)]
        target_domain: usize,
        /// Run directory for params.out, history.csv and config.resolved.
        #[arg(long)]
        out: PathBuf,
        /// Train with this single seed instead of the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the alignment weight.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the full leave-one-domain-out protocol over every domain.
    Loto {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Run directory for results.csv, aggregate.csv and config.resolved.
        #[arg(long)]
        out: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the alignment weight.
        #[arg(long)]
        alpha: Option<f64>,
        /// Worker threads for the independent (target, seed) runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate saved parameters on a dataset.
    Eval {
        /// Parameter file written by `train`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Run directory for report.json, report.csv and config.resolved.
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only this domain's samples.
        #[arg(long)]
        target_domain: Option<usize>,
    },
    /// Export the domain KL matrix, dispersion value and 2-D PCA projection.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Run directory for kl.csv, pca.csv, dispersion.txt, config.resolved.
        #[arg(long)]
        out: PathBuf,
        /// Analyze model features instead of raw inputs.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Relative covariance shrinkage of the Gaussian fits.
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-domain feature matrices of a dataset, optionally mapped through a
/// model's feature extractor.
fn features_by_domain(
    dataset: &Dataset,
    model_params: Option<&Path>,
) -> Result<(Vec<Array2<f64>>, Vec<usize>, Vec<usize>, Array2<f64>)> {
    let batch = dataset.to_minibatch();
    let features = match model_params {
        Some(path) => {
            let model = load_params(path)?;
            let trace = forward(&model, &batch)?;
            trace.features().clone()
        }
        None => batch.features.clone(),
    };
    let dim = features.ncols();
    let mut groups = vec![Vec::new(); dataset.num_domains()];
    for (i, s) in dataset.samples().iter().enumerate() {
        groups[s.domain].push(features.row(i).to_vec());
    }
    let groups = groups
        .into_iter()
        .map(|rows| {
            let n = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Array2::from_shape_vec((n, dim), flat).expect("rows share the feature width")
        })
        .collect();
    Ok((groups, batch.labels, batch.domains, features))
}

fn run_gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = synth_config_from_file(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dataset = generate_synthetic(&cfg)?;
    save_dataset(&dataset, out)?;
    let echo_path = out.with_extension("config.resolved");
    write_file(&echo_path, &resolved_synth_config(&cfg))?;
    println!(
        "wrote {} samples ({} domains x {} classes, {}-d) to {}",
        dataset.len(),
        dataset.num_domains(),
        dataset.num_classes(),
        dataset.feature_dim(),
        out.display()
    );
    Ok(())
}

fn load_train_config(
    config: &Path,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<TrainConfig> {
    let mut cfg = train_config_from_file(config)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(alpha) = alpha {
        cfg.alpha = alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(
    config: &Path,
    data: &Path,
    target_domain: usize,
    out: &Path,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<()> {
    let cfg = load_train_config(config, seed, alpha)?;
    let dataset = load_dataset(data)?;
    let (source, target) = split_leave_one_out(&dataset, target_domain)?;
    ensure_dir(out)?;
    write_file(&out.join("config.resolved"), &resolved_train_config(&cfg))?;

    let seed = cfg.seeds[0];
    let (model, history) = train_one(&source, Some(&target), &cfg, seed)?;
    save_params(&model, &out.join("params.out"))?;
    write_file(&out.join("history.csv"), &history.to_csv_string())?;
    let report = evaluate(&model, &target)?;
    println!(
        "target {target_domain} seed {seed}: accuracy {:.4}, auc {:.4}, macro-F1 {:.4}",
        report.accuracy, report.ovr_auc, report.macro_f1
    );
    Ok(())
}

fn run_loto_cmd(
    config: &Path,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    alpha: Option<f64>,
    jobs: usize,
) -> Result<()> {
    let cfg = load_train_config(config, seed, alpha)?;
    let dataset = load_dataset(data)?;
    ensure_dir(out)?;
    write_file(&out.join("config.resolved"), &resolved_train_config(&cfg))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    let table = pool.install(|| run_loto(&dataset, &cfg))?;

    write_file(&out.join("results.csv"), &table.results_csv())?;
    write_file(&out.join("aggregate.csv"), &table.aggregate_csv())?;
    println!("{}", table.aggregate_csv().trim_end());
    Ok(())
}

fn run_eval(
    params: &Path,
    data: &Path,
    out: &Path,
    target_domain: Option<usize>,
) -> Result<()> {
    let model = load_params(params)?;
    let dataset = load_dataset(data)?;
    let subset = match target_domain {
        Some(t) => split_leave_one_out(&dataset, t)?.1,
        None => dataset,
    };
    let report = evaluate(&model, &subset)?;
    ensure_dir(out)?;
    let resolved = format!(
        "params = {}\ndata = {}\ntarget_domain = {}\n",
        params.display(),
        data.display(),
        target_domain.map_or("all".to_string(), |t| t.to_string())
    );
    write_file(&out.join("config.resolved"), &resolved)?;
    write_file(&out.join("report.json"), &report.to_json())?;
    write_file(
        &out.join("report.csv"),
        &format!("{}\n{}\n", MetricsReport::csv_header(), report.to_csv_row()),
    )?;
    println!(
        "accuracy {:.4}, auc {:.4}, macro-F1 {:.4}",
        report.accuracy, report.ovr_auc, report.macro_f1
    );
    Ok(())
}

fn run_analyze(data: &Path, out: &Path, params: Option<&Path>, lambda: f64) -> Result<()> {
    let dataset = load_dataset(data)?;
    let (groups, labels, domains, features) = features_by_domain(&dataset, params)?;
    ensure_dir(out)?;
    let resolved = format!(
        "data = {}\nparams = {}\nlambda = {lambda}\n",
        data.display(),
        params.map_or("none".to_string(), |p| p.display().to_string())
    );
    write_file(&out.join("config.resolved"), &resolved)?;

    let kl = domain_kl_matrix(&groups, lambda)?;
    write_file(&out.join("kl.csv"), &kl.to_csv_string())?;

    let dispersion = cross_domain_dispersion(features.view(), &labels, &domains)?;
    write_file(&out.join("dispersion.txt"), &format!("{dispersion:.6}\n"))?;

    let coords = pca_project(features.view(), 2)?;
    write_file(&out.join("pca.csv"), &projection_csv(&coords, &labels, &domains))?;

    println!(
        "mean off-diagonal KL {:.4}, dispersion {:.6}",
        kl.mean_off_diagonal(),
        dispersion
    );
    Ok(())
}

fn run_gradcheck(trials: usize, seed: u64) -> Result<()> {
    let started = Instant::now();
    let report = gradient_check_suite(trials, seed)?;
    for (name, err) in &report.per_loss {
        println!(
            "{name:<12} max rel err {err:9.3e}  (tolerance {GRAD_TOLERANCE:.0e})  {}",
            if *err < GRAD_TOLERANCE { "PASS" } else { "FAIL" }
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    if report.passed() {
        println!("gradient check: PASS ({} trials in {elapsed:.1}s)", report.trials);
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed after {} trials",
            report.trials
        )))
    }
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => run_gen(&config, &out, seed),
        Command::Train {
            config,
            data,
            target_domain,
            out,
            seed,
            alpha,
        } => run_train(&config, &data, target_domain, &out, seed, alpha),
        Command::Loto {
            config,
            data,
            out,
            seed,
            alpha,
            jobs,
        } => run_loto_cmd(&config, &data, &out, seed, alpha, jobs),
        Command::Eval {
            params,
            data,
            out,
            target_domain,
        } => run_eval(&params, &data, &out, target_domain),
        Command::Analyze {
            data,
            out,
            params,
            lambda,
        } => run_analyze(&data, &out, params.as_deref(), lambda),
        Command::Gradcheck { trials, seed } => run_gradcheck(trials, seed),
    }
}
