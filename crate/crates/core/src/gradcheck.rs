//! End-to-end gradient verification: analytic gradients of every loss,
//! propagated through the model by `backward`, are compared against central
//! finite differences over all model parameters.
//!
//! Checks run on tanh models only (finite differences across relu kinks are
//! meaningless), and batches whose alignment loss sits within 1e-3 of a
//! hinge kink or a top-C selection boundary are resampled, since the loss is
//! not differentiable there.

use ndarray::Array2;
use rand::Rng;

use crate::data::{generate_synthetic, Dataset, DomainBatchSampler, Minibatch, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, domalign_kink_distance, domalign_loss, focal_loss, weighted_ce_weights,
    LossConfig,
};
use crate::model::{
    backward, finite_diff_grad, forward, init_model, max_relative_error, Activation, Model,
};
use crate::rng::seeded_rng;

/// Relative-error tolerance of the suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-4;
/// Batches closer than this to a non-differentiable point are resampled.
const KINK_MARGIN: f64 = 1e-3;

/// Worst relative errors of one suite run, one entry per checked loss.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (loss name, max relative error over all trials and parameters).
    pub per_loss: Vec<(&'static str, f64)>,
    pub trials: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_loss.iter().all(|(_, err)| *err < GRAD_TOLERANCE)
    }
}

struct Trial {
    model: Model,
    dataset: Dataset,
    batch: Minibatch,
}

fn make_trial(rng: &mut impl Rng, require_align_kink_distance: Option<&LossConfig>) -> Result<Trial> {
    for _ in 0..100 {
        let dataset = generate_synthetic(&SynthConfig {
            num_domains: 3,
            num_classes: 3,
            feature_dim: 5,
            samples_per_domain: 12,
            class_skew: 1.5,
            domain_shift_scale: 0.8,
            intra_domain_subclusters: 1,
            noise_std: 1.0,
            seed: rng.random(),
        })?;
        let model = init_model(&[5, 8, 6, 3], Activation::Tanh, rng.random())?;
        let mut sampler = DomainBatchSampler::new(&dataset, 10, rng.random())?;
        let batch = sampler.next_batch(&dataset);
        if let Some(cfg) = require_align_kink_distance {
            let trace = forward(&model, &batch)?;
            let z = trace.features();
            if domalign_kink_distance(z.view(), &batch.labels, &batch.domains, cfg) < KINK_MARGIN {
                continue;
            }
            let align = domalign_loss(z.view(), &batch.labels, &batch.domains, cfg)?;
            if align.value == 0.0 {
                continue; // want at least one active hinge
            }
        }
        return Ok(Trial {
            model,
            dataset,
            batch,
        });
    }
    Err(Error::Numeric(
        "could not sample a batch away from alignment-loss kinks".into(),
    ))
}

fn check_focal(trial: &Trial, cfg: &LossConfig) -> Result<f64> {
    let trace = forward(&trial.model, &trial.batch)?;
    let out = focal_loss(trace.logits().view(), &trial.batch.labels, &trial.batch.domains, cfg)?;
    let zeros_features = Array2::zeros(trace.features().raw_dim());
    let analytic = backward(
        &trial.model,
        &trace,
        &out.grad_logits.expect("focal has logit grads"),
        &zeros_features,
    )?;
    let batch = &trial.batch;
    let numeric = finite_diff_grad(
        &trial.model,
        |m| {
            let tr = forward(m, batch).expect("forward in finite differences");
            focal_loss(tr.logits().view(), &batch.labels, &batch.domains, cfg)
                .expect("focal loss in finite differences")
                .value
        },
        FD_EPSILON,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

fn check_domalign(trial: &Trial, cfg: &LossConfig) -> Result<f64> {
    let trace = forward(&trial.model, &trial.batch)?;
    let out = domalign_loss(
        trace.features().view(),
        &trial.batch.labels,
        &trial.batch.domains,
        cfg,
    )?;
    let zeros_logits = Array2::zeros(trace.logits().raw_dim());
    let analytic = backward(
        &trial.model,
        &trace,
        &zeros_logits,
        &out.grad_features.expect("alignment has feature grads"),
    )?;
    let batch = &trial.batch;
    let numeric = finite_diff_grad(
        &trial.model,
        |m| {
            let tr = forward(m, batch).expect("forward in finite differences");
            domalign_loss(tr.features().view(), &batch.labels, &batch.domains, cfg)
                .expect("alignment loss in finite differences")
                .value
        },
        FD_EPSILON,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

fn check_combined(trial: &Trial, cfg: &LossConfig) -> Result<f64> {
    let trace = forward(&trial.model, &trial.batch)?;
    let out = combined_loss(&trace, &trial.batch.labels, &trial.batch.domains, cfg)?;
    let analytic = backward(&trial.model, &trace, &out.grad_logits, &out.grad_features)?;
    let batch = &trial.batch;
    let numeric = finite_diff_grad(
        &trial.model,
        |m| {
            let tr = forward(m, batch).expect("forward in finite differences");
            combined_loss(&tr, &batch.labels, &batch.domains, cfg)
                .expect("combined loss in finite differences")
                .value
        },
        FD_EPSILON,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// Runs `trials` random (model, batch, config) triples per loss and returns
/// the worst relative error for focal, weighted cross-entropy, alignment and
/// combined losses.
pub fn gradient_check_suite(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let mut worst_focal = 0.0f64;
    let mut worst_weighted = 0.0f64;
    let mut worst_align = 0.0f64;
    let mut worst_combined = 0.0f64;

    for _ in 0..trials {
        let focal_cfg = LossConfig {
            gamma: 2.0,
            ..LossConfig::new()
        };
        let trial = make_trial(&mut rng, None)?;
        worst_focal = worst_focal.max(check_focal(&trial, &focal_cfg)?);

        // weighted cross-entropy: focal at gamma 0 with the weight table
        let trial = make_trial(&mut rng, None)?;
        let weighted_cfg = LossConfig {
            gamma: 0.0,
            weights: Some(weighted_ce_weights(&trial.dataset)?),
            ..LossConfig::new()
        };
        worst_weighted = worst_weighted.max(check_focal(&trial, &weighted_cfg)?);

        let align_cfg = LossConfig {
            margin: 0.3,
            hard_count: 3,
            ..LossConfig::new()
        };
        let trial = make_trial(&mut rng, Some(&align_cfg))?;
        worst_align = worst_align.max(check_domalign(&trial, &align_cfg)?);

        let combined_cfg = LossConfig {
            margin: 0.3,
            hard_count: 3,
            alpha: 10.0,
            gamma: 2.0,
            weights: None,
        };
        let trial = make_trial(&mut rng, Some(&combined_cfg))?;
        worst_combined = worst_combined.max(check_combined(&trial, &combined_cfg)?);
    }

    Ok(GradCheckReport {
        per_loss: vec![
            ("focal", worst_focal),
            ("weighted_ce", worst_weighted),
            ("domalign", worst_align),
            ("combined", worst_combined),
        ],
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = gradient_check_suite(3, 12345).unwrap();
        assert!(
            report.passed(),
            "gradient check failed: {:?}",
            report.per_loss
        );
    }
}
