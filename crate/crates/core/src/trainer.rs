//! The training loop over source domains, the leave-one-domain-out
//! experiment driver, and run-history bookkeeping.
//!
//! One training run draws domain-stratified batches, builds up to three
//! forward streams (the raw batch, an optional auxiliary jitter stream and
//! the main jitter stream), concatenates them into one effective batch for
//! the combined loss, and takes plain SGD steps. Everything is seeded, so a
//! run is reproducible bit for bit.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Axis;
use rayon::prelude::*;

use crate::analysis::cross_domain_dispersion;
use crate::data::{augment_jitter, split_leave_one_out, Dataset, DomainBatchSampler, Minibatch};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, softmax_rows, weighted_ce_weights, LossConfig};
use crate::metrics::{report_from_scores, MetricsReport};
use crate::model::{backward, forward, init_model, load_params, sgd_step, Activation, Model};
use crate::rng::{
    derive_seed, seeded_rng, STREAM_JITTER_AUX, STREAM_JITTER_PHI, STREAM_MODEL_INIT,
    STREAM_SAMPLER,
};

/// Class-weighting mode for the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightsMode {
    #[default]
    Uniform,
    WeightedCe,
}

impl fmt::Display for WeightsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightsMode::Uniform => write!(f, "uniform"),
            WeightsMode::WeightedCe => write!(f, "weighted_ce"),
        }
    }
}

impl FromStr for WeightsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightsMode::Uniform),
            "weighted_ce" => Ok(WeightsMode::WeightedCe),
            other => Err(Error::Config(format!(
                "unknown weights_mode `{other}` (expected uniform or weighted_ce)"
            ))),
        }
    }
}

/// All hyperparameters of one training run. The defaults are margin 0.1,
/// hard count 5, alpha 10, batch size 128, 200 epochs, learning rate 0.001
/// with plain SGD, and three seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub margin: f64,
    pub hard_count: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub weights_mode: WeightsMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Std of the main feature-jitter stream (the augmentation stand-in);
    /// 0 disables the stream.
    pub jitter_phi: f64,
    /// Std of the optional second jitter stream; 0 (the default) disables it.
    pub jitter_aux: f64,
    pub seeds: Vec<u64>,
    /// Optional parameter file used instead of random init.
    pub init_params: Option<PathBuf>,
    /// Record history (and evaluate, when a target is supplied) every this
    /// many epochs; the final epoch is always recorded.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dims: vec![64, 32],
            activation: Activation::Tanh,
            margin: 0.1,
            hard_count: 5,
            alpha: 10.0,
            gamma: 2.0,
            weights_mode: WeightsMode::Uniform,
            batch_size: 128,
            epochs: 200,
            lr: 0.001,
            jitter_phi: 0.1,
            jitter_aux: 0.0,
            seeds: vec![0, 1, 2],
            init_params: None,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "hidden_dims must be nonempty positive counts, got {:?}",
                self.hidden_dims
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs and eval_every must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for (name, v) in [
            ("margin", self.margin),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("jitter_phi", self.jitter_phi),
            ("jitter_aux", self.jitter_aux),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be finite and positive, got {}",
                self.lr
            )));
        }
        if self.hard_count == 0 {
            return Err(Error::Config("hard_count must be at least 1".into()));
        }
        Ok(())
    }

    fn loss_config(&self, source: &Dataset) -> Result<LossConfig> {
        let weights = match self.weights_mode {
            WeightsMode::Uniform => None,
            WeightsMode::WeightedCe => Some(weighted_ce_weights(source)?),
        };
        Ok(LossConfig {
            margin: self.margin,
            hard_count: self.hard_count,
            alpha: self.alpha,
            gamma: self.gamma,
            weights,
        })
    }
}

/// One history record; losses are epoch means over the epoch's batches and
/// `align_loss` is the alpha-weighted alignment term so that
/// `focal_loss + align_loss == total_loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub focal_loss: f64,
    pub align_loss: f64,
    /// Metrics on the evaluation set, when one was supplied.
    pub metrics: Option<MetricsReport>,
    /// Cross-domain dispersion of the model's features on the source set.
    pub dispersion: f64,
}

/// Per-eval-step records of one training run; epochs strictly increase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<HistoryRecord>,
}

impl RunHistory {
    /// CSV dump; metric columns are empty when no evaluation set was given.
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("epoch,total_loss,focal_loss,align_loss,accuracy,ovr_auc,macro_f1,dispersion\n");
        for r in &self.records {
            let (acc, auc, f1) = match &r.metrics {
                Some(m) => (
                    format!("{:.6}", m.accuracy),
                    format!("{:.6}", m.ovr_auc),
                    format!("{:.6}", m.macro_f1),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{},{},{},{:.9}\n",
                r.epoch, r.total_loss, r.focal_loss, r.align_loss, acc, auc, f1, r.dispersion
            ));
        }
        out
    }
}

fn batch_diagnostic(epoch: usize, batch_idx: usize, batch: &Minibatch) -> String {
    let mut label_counts = std::collections::BTreeMap::new();
    let mut domain_counts = std::collections::BTreeMap::new();
    for &y in &batch.labels {
        *label_counts.entry(y).or_insert(0usize) += 1;
    }
    for &d in &batch.domains {
        *domain_counts.entry(d).or_insert(0usize) += 1;
    }
    let max_feat = batch
        .features
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    format!(
        "epoch {epoch} batch {batch_idx}: {} rows, labels {label_counts:?}, domains {domain_counts:?}, max |feature| {max_feat:.3e}",
        batch.labels.len()
    )
}

/// Cross-domain dispersion of a model's features on a dataset.
pub fn feature_dispersion(model: &Model, dataset: &Dataset) -> Result<f64> {
    let batch = dataset.to_minibatch();
    let trace = forward(model, &batch)?;
    cross_domain_dispersion(trace.features().view(), &batch.labels, &batch.domains)
}

/// Trains one model on a multi-domain source set.
///
/// When `eval_set` is given, history records carry its metrics. Model init
/// uses `cfg.init_params` when set, otherwise a seeded random init; batch
/// sampling and the jitter streams run on seeds derived from `seed`, so two
/// runs with the same inputs produce identical models and histories.
pub fn train_one(
    source: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, RunHistory)> {
    cfg.validate()?;
    if source.num_domains() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 source domains, got {}",
            source.num_domains()
        )));
    }

    let mut dims = vec![source.feature_dim()];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(source.num_classes());
    let mut model = match &cfg.init_params {
        Some(path) => {
            let m = load_params(path)?;
            if m.input_dim() != source.feature_dim() || m.num_classes() != source.num_classes() {
                return Err(Error::InvalidArgument(format!(
                    "initial parameters expect {}-d input and {} classes, source has {} and {}",
                    m.input_dim(),
                    m.num_classes(),
                    source.feature_dim(),
                    source.num_classes()
                )));
            }
            m
        }
        None => init_model(&dims, cfg.activation, derive_seed(seed, STREAM_MODEL_INIT))?,
    };

    let loss_cfg = cfg.loss_config(source)?;
    let mut sampler =
        DomainBatchSampler::new(source, cfg.batch_size, derive_seed(seed, STREAM_SAMPLER))?;
    let mut phi_rng = seeded_rng(derive_seed(seed, STREAM_JITTER_PHI));
    let mut aux_rng = seeded_rng(derive_seed(seed, STREAM_JITTER_AUX));
    let batches_per_epoch = source.len().div_ceil(cfg.batch_size).max(1);

    let mut history = RunHistory::default();
    for epoch in 1..=cfg.epochs {
        let mut sum_total = 0.0;
        let mut sum_focal = 0.0;
        let mut sum_align = 0.0;
        for batch_idx in 0..batches_per_epoch {
            let batch = sampler.next_batch(source);

            // forward streams per batch: raw, optional aux jitter, main jitter
            let mut feature_blocks = vec![batch.features.view()];
            let aux = (cfg.jitter_aux > 0.0)
                .then(|| augment_jitter(&batch, cfg.jitter_aux, &mut aux_rng));
            if let Some(aux) = &aux {
                feature_blocks.push(aux.features.view());
            }
            let phi = (cfg.jitter_phi > 0.0)
                .then(|| augment_jitter(&batch, cfg.jitter_phi, &mut phi_rng));
            if let Some(phi) = &phi {
                feature_blocks.push(phi.features.view());
            }
            let streams = feature_blocks.len();
            let effective = Minibatch {
                features: ndarray::concatenate(Axis(0), &feature_blocks)
                    .expect("stream blocks share width"),
                labels: batch.labels.repeat(streams),
                domains: batch.domains.repeat(streams),
            };

            let trace = forward(&model, &effective)?;
            let loss = combined_loss(&trace, &effective.labels, &effective.domains, &loss_cfg)?;
            if !loss.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {}; {}",
                    loss.value,
                    batch_diagnostic(epoch, batch_idx, &effective)
                )));
            }
            let grads = backward(&model, &trace, &loss.grad_logits, &loss.grad_features)?;
            sgd_step(&mut model, &grads, cfg.lr)?;

            sum_total += loss.value;
            sum_focal += loss.focal_value;
            sum_align += cfg.alpha * loss.align_value;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let n = batches_per_epoch as f64;
            history.records.push(HistoryRecord {
                epoch,
                total_loss: sum_total / n,
                focal_loss: sum_focal / n,
                align_loss: sum_align / n,
                metrics: eval_set.map(|ds| evaluate(&model, ds)).transpose()?,
                dispersion: feature_dispersion(&model, source)?,
            });
        }
    }
    Ok((model, history))
}

/// Evaluates a model on a dataset: raw features only (no augmentation),
/// softmax scores for the AUC, argmax predictions with ties broken toward
/// the lowest class id. Consumes no randomness.
pub fn evaluate(model: &Model, target: &Dataset) -> Result<MetricsReport> {
    if target.feature_dim() != model.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "target feature dim {} does not match model input dim {}",
            target.feature_dim(),
            model.input_dim()
        )));
    }
    let batch = target.to_minibatch();
    let trace = forward(model, &batch)?;
    let probs = softmax_rows(&trace.logits().view());
    report_from_scores(probs.view(), &batch.labels, model.num_classes())
}

/// One leave-one-domain-out cell: the run for a single (target, seed) pair.
#[derive(Debug, Clone)]
pub struct LotoCell {
    pub target_domain: usize,
    pub seed: u64,
    pub report: MetricsReport,
    /// Final-model dispersion on the source domains.
    pub source_dispersion: f64,
}

/// Mean and sample standard deviation (n-1; 0 when n = 1).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Results of a full leave-one-domain-out protocol, one cell per
/// (target domain, seed).
#[derive(Debug, Clone)]
pub struct LotoTable {
    pub cells: Vec<LotoCell>,
    pub num_domains: usize,
    pub seeds: Vec<u64>,
}

impl LotoTable {
    pub fn cell(&self, target: usize, seed: u64) -> Option<&LotoCell> {
        self.cells
            .iter()
            .find(|c| c.target_domain == target && c.seed == seed)
    }

    fn metric_values(&self, target: usize, pick: impl Fn(&LotoCell) -> f64) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.target_domain == target)
            .map(pick)
            .collect()
    }

    /// Per-target seed-mean of a metric.
    pub fn target_mean(&self, target: usize, pick: impl Fn(&LotoCell) -> f64) -> f64 {
        mean_std(&self.metric_values(target, pick)).0
    }

    /// One row per (target, seed) run.
    pub fn results_csv(&self) -> String {
        let mut out =
            String::from("target_domain,seed,accuracy,ovr_auc,macro_f1,source_dispersion\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                c.target_domain,
                c.seed,
                c.report.accuracy,
                c.report.ovr_auc,
                c.report.macro_f1,
                c.source_dispersion
            ));
        }
        out
    }

    /// Aggregate table: per target (and an `average` row over targets), the
    /// mean and standard deviation over seeds of each metric. The average
    /// row first averages each seed's metric over targets, then aggregates
    /// over seeds.
    pub fn aggregate_csv(&self) -> String {
        let metrics: [(&str, fn(&LotoCell) -> f64); 3] = [
            ("accuracy", |c| c.report.accuracy),
            ("ovr_auc", |c| c.report.ovr_auc),
            ("macro_f1", |c| c.report.macro_f1),
        ];
        let mut out = String::from("target,metric,mean,std\n");
        for target in 0..self.num_domains {
            for (name, pick) in metrics {
                let (mean, std) = mean_std(&self.metric_values(target, pick));
                out.push_str(&format!("{target},{name},{mean:.6},{std:.6}\n"));
            }
        }
        for (name, pick) in metrics {
            let per_seed: Vec<f64> = self
                .seeds
                .iter()
                .map(|&s| {
                    let vals: Vec<f64> = self
                        .cells
                        .iter()
                        .filter(|c| c.seed == s)
                        .map(pick)
                        .collect();
                    mean_std(&vals).0
                })
                .collect();
            let (mean, std) = mean_std(&per_seed);
            out.push_str(&format!("average,{name},{mean:.6},{std:.6}\n"));
        }
        out
    }
}

/// Runs the full leave-one-domain-out protocol: every domain in turn is the
/// held-out target, trained once per seed on the remaining domains.
///
/// The (target, seed) runs are independent and execute in parallel on the
/// current rayon pool; cells come back in deterministic (target, seed)
/// order regardless of scheduling.
pub fn run_loto(dataset: &Dataset, cfg: &TrainConfig) -> Result<LotoTable> {
    cfg.validate()?;
    if dataset.num_domains() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-domain-out needs at least 3 domains, got {}",
            dataset.num_domains()
        )));
    }
    let pairs: Vec<(usize, u64)> = (0..dataset.num_domains())
        .flat_map(|t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let cells: Result<Vec<LotoCell>> = pairs
        .par_iter()
        .map(|&(target_domain, seed)| {
            let (source, target) = split_leave_one_out(dataset, target_domain)?;
            let (model, history) = train_one(&source, None, cfg, seed)?;
            let report = evaluate(&model, &target)?;
            let source_dispersion = history
                .records
                .last()
                .map(|r| r.dispersion)
                .expect("training always records the final epoch");
            Ok(LotoCell {
                target_domain,
                seed,
                report,
                source_dispersion,
            })
        })
        .collect();
    Ok(LotoTable {
        cells: cells?,
        num_domains: dataset.num_domains(),
        seeds: cfg.seeds.clone(),
    })
}
