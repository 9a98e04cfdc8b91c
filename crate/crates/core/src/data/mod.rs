//! Multi-domain datasets: synthetic generation, CSV ingestion,
//! leave-one-domain-out splitting and domain-balanced mini-batches.

mod io;
mod sampler;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use sampler::DomainBatchSampler;
pub use synth::{generate_synthetic, SynthConfig};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One labeled feature vector with a class id and a domain id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

impl Sample {
    /// Builds a sample, rejecting non-finite feature values.
    pub fn new(features: Vec<f64>, label: usize, domain: usize) -> Result<Self> {
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample feature {pos} is not finite ({})",
                features[pos]
            )));
        }
        Ok(Sample {
            features,
            label,
            domain,
        })
    }
}

/// An immutable collection of samples plus its declared shape metadata.
///
/// Construction validates that every sample respects the declared bounds and
/// that every declared domain holds at least one sample; after that the
/// dataset is safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    num_domains: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        num_domains: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if num_classes == 0 || num_domains == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "dataset metadata counts must be at least 1".into(),
            ));
        }
        let mut domain_seen = vec![false; num_domains];
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} features, dataset declares {feature_dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
            if s.domain >= num_domains {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} domain {} out of range for {num_domains} domains",
                    s.domain
                )));
            }
            domain_seen[s.domain] = true;
        }
        if let Some(d) = domain_seen.iter().position(|seen| !seen) {
            return Err(Error::InvalidArgument(format!(
                "declared domain {d} has no samples"
            )));
        }
        Ok(Dataset {
            samples,
            num_classes,
            num_domains,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Per-(class, domain) sample counts, indexed `[class][domain]`.
    pub fn class_domain_counts(&self) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.num_domains]; self.num_classes];
        for s in &self.samples {
            counts[s.label][s.domain] += 1;
        }
        counts
    }

    /// Sample indices grouped by domain id, preserving dataset order.
    pub fn indices_by_domain(&self) -> Vec<Vec<usize>> {
        let mut by_domain = vec![Vec::new(); self.num_domains];
        for (i, s) in self.samples.iter().enumerate() {
            by_domain[s.domain].push(i);
        }
        by_domain
    }

    /// The whole dataset as one batch, preserving sample order.
    pub fn to_minibatch(&self) -> Minibatch {
        let mut features = Array2::zeros((self.len(), self.feature_dim));
        let mut labels = Vec::with_capacity(self.len());
        let mut domains = Vec::with_capacity(self.len());
        for (i, s) in self.samples.iter().enumerate() {
            for (j, v) in s.features.iter().enumerate() {
                features[[i, j]] = *v;
            }
            labels.push(s.label);
            domains.push(s.domain);
        }
        Minibatch {
            features,
            labels,
            domains,
        }
    }
}

/// A batch of samples in matrix form; all three fields share the leading
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

impl Minibatch {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, domains: Vec<usize>) -> Result<Self> {
        let m = features.nrows();
        if labels.len() != m || domains.len() != m {
            return Err(Error::InvalidArgument(format!(
                "minibatch fields disagree on batch size: {m} feature rows, {} labels, {} domains",
                labels.len(),
                domains.len()
            )));
        }
        Ok(Minibatch {
            features,
            labels,
            domains,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits a dataset into (source, target) for leave-one-domain-out.
///
/// The source keeps every sample whose domain differs from `target_domain`;
/// its domain ids are renumbered densely in ascending original order so that
/// the source dataset declares exactly `K_total - 1` domains. The target is
/// single-domain and renumbered to domain 0. Sample order is preserved in
/// both halves.
pub fn split_leave_one_out(dataset: &Dataset, target_domain: usize) -> Result<(Dataset, Dataset)> {
    if target_domain >= dataset.num_domains() {
        return Err(Error::InvalidArgument(format!(
            "target domain {target_domain} not present (dataset has {} domains)",
            dataset.num_domains()
        )));
    }
    let mut remap = vec![usize::MAX; dataset.num_domains()];
    let mut next = 0;
    for d in 0..dataset.num_domains() {
        if d != target_domain {
            remap[d] = next;
            next += 1;
        }
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    for s in dataset.samples() {
        if s.domain == target_domain {
            target.push(Sample {
                features: s.features.clone(),
                label: s.label,
                domain: 0,
            });
        } else {
            source.push(Sample {
                features: s.features.clone(),
                label: s.label,
                domain: remap[s.domain],
            });
        }
    }
    let source = Dataset::new(
        source,
        dataset.num_classes(),
        dataset.num_domains() - 1,
        dataset.feature_dim(),
    )?;
    let target = Dataset::new(target, dataset.num_classes(), 1, dataset.feature_dim())?;
    Ok((source, target))
}

/// Returns a copy of the batch with zero-mean Gaussian noise of standard
/// deviation `strength` added to the features. Labels and domains are
/// untouched. `strength = 0` returns an identical copy without consuming
/// any randomness.
pub fn augment_jitter<R: Rng>(batch: &Minibatch, strength: f64, rng: &mut R) -> Minibatch {
    let mut out = batch.clone();
    if strength == 0.0 {
        return out;
    }
    let normal = StandardNormal;
    for v in out.features.iter_mut() {
        let g: f64 = normal.sample(rng);
        *v += strength * g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use ndarray::array;

    fn toy_dataset() -> Dataset {
        let mut samples = Vec::new();
        for d in 0..3usize {
            for (i, label) in [0usize, 0, 1, 1].iter().enumerate() {
                samples.push(
                    Sample::new(vec![d as f64, i as f64], *label, d).unwrap(),
                );
            }
        }
        Dataset::new(samples, 2, 3, 2).unwrap()
    }

    #[test]
    fn sample_rejects_non_finite_features() {
        assert!(Sample::new(vec![1.0, f64::NAN], 0, 0).is_err());
        assert!(Sample::new(vec![1.0, f64::INFINITY], 0, 0).is_err());
    }

    #[test]
    fn dataset_validates_bounds_and_domain_coverage() {
        let s = vec![Sample::new(vec![0.0], 0, 0).unwrap()];
        assert!(Dataset::new(s.clone(), 1, 2, 1).is_err()); // domain 1 empty
        assert!(Dataset::new(s.clone(), 1, 1, 2).is_err()); // wrong feature_dim
        let bad_label = vec![Sample::new(vec![0.0], 3, 0).unwrap()];
        assert!(Dataset::new(bad_label, 2, 1, 1).is_err());
    }

    #[test]
    fn split_partitions_samples() {
        let ds = toy_dataset();
        let (source, target) = split_leave_one_out(&ds, 1).unwrap();
        assert_eq!(source.len() + target.len(), ds.len());
        assert_eq!(source.num_domains(), 2);
        assert_eq!(target.num_domains(), 1);
        // domains {0, 2} remap to {0, 1}; original domain is recoverable
        // from the first feature in the toy data
        for s in source.samples() {
            assert_ne!(s.features[0], 1.0);
        }
        for s in target.samples() {
            assert_eq!(s.features[0], 1.0);
            assert_eq!(s.domain, 0);
        }
    }

    #[test]
    fn split_rejects_absent_domain() {
        assert!(split_leave_one_out(&toy_dataset(), 3).is_err());
    }

    #[test]
    fn jitter_zero_strength_is_identity() {
        let batch = Minibatch::new(array![[1.0, 2.0], [3.0, 4.0]], vec![0, 1], vec![0, 0]).unwrap();
        let mut rng = seeded_rng(1);
        let out = augment_jitter(&batch, 0.0, &mut rng);
        assert_eq!(out, batch);
    }

    #[test]
    fn jitter_preserves_labels_and_domains() {
        let batch = Minibatch::new(array![[1.0, 2.0], [3.0, 4.0]], vec![0, 1], vec![2, 5]).unwrap();
        let mut rng = seeded_rng(1);
        let out = augment_jitter(&batch, 0.5, &mut rng);
        assert_eq!(out.labels, batch.labels);
        assert_eq!(out.domains, batch.domains);
        assert_ne!(out.features, batch.features);
    }

    #[test]
    fn jitter_empirical_std_matches_strength() {
        // per-coordinate sample std over 1e5 draws should land within 2%
        let n = 100_000usize;
        let batch = Minibatch::new(
            Array2::zeros((n, 1)),
            vec![0; n],
            vec![0; n],
        )
        .unwrap();
        let mut rng = seeded_rng(9);
        let strength = 0.7;
        let out = augment_jitter(&batch, strength, &mut rng);
        let col = out.features.column(0);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let std = var.sqrt();
        assert!(
            (std - strength).abs() / strength < 0.02,
            "sample std {std} vs strength {strength}"
        );
    }
}
