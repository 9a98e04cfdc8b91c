//! Domain-balanced mini-batch sampling.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Minibatch};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Draws mini-batches stratified by domain: each of the K source domains
/// contributes `floor(M/K)` samples, with the remainder assigned round-robin
/// in domain-id order. Within a domain, samples are drawn without
/// replacement until the domain's pool is exhausted, then the pool is
/// reshuffled and a new pass begins.
#[derive(Debug, Clone)]
pub struct DomainBatchSampler {
    indices_by_domain: Vec<Vec<usize>>,
    /// Shuffled per-domain index queues, consumed from the back.
    queues: Vec<Vec<usize>>,
    quotas: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl DomainBatchSampler {
    /// Errors if `batch_size` is smaller than the number of domains, since a
    /// batch must represent every source domain.
    pub fn new(source: &Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        let k = source.num_domains();
        if batch_size < k {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} cannot represent all {k} source domains"
            )));
        }
        let base = batch_size / k;
        let remainder = batch_size % k;
        let quotas = (0..k).map(|d| base + usize::from(d < remainder)).collect();
        Ok(DomainBatchSampler {
            indices_by_domain: source.indices_by_domain(),
            queues: vec![Vec::new(); k],
            quotas,
            batch_size,
            rng: seeded_rng(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Per-domain sample quotas for one batch.
    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    /// Draws the next batch from `source`, which must be the dataset the
    /// sampler was built from.
    pub fn next_batch(&mut self, source: &Dataset) -> Minibatch {
        debug_assert_eq!(source.num_domains(), self.quotas.len());
        let mut picked = Vec::with_capacity(self.batch_size);
        for d in 0..self.quotas.len() {
            for _ in 0..self.quotas[d] {
                if self.queues[d].is_empty() {
                    let mut pass = self.indices_by_domain[d].clone();
                    pass.shuffle(&mut self.rng);
                    self.queues[d] = pass;
                }
                picked.push(self.queues[d].pop().expect("domain pool is nonempty"));
            }
        }
        let dim = source.feature_dim();
        let mut features = Array2::zeros((picked.len(), dim));
        let mut labels = Vec::with_capacity(picked.len());
        let mut domains = Vec::with_capacity(picked.len());
        for (row, &idx) in picked.iter().enumerate() {
            let s = &source.samples()[idx];
            for (j, v) in s.features.iter().enumerate() {
                features[[row, j]] = *v;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Sample, SynthConfig};

    fn dataset(domains: usize, per_domain: usize) -> Dataset {
        let mut samples = Vec::new();
        for d in 0..domains {
            for i in 0..per_domain {
                samples
                    .push(Sample::new(vec![d as f64, i as f64], i % 2, d).unwrap());
            }
        }
        Dataset::new(samples, 2, domains, 2).unwrap()
    }

    fn domain_counts(batch: &Minibatch, k: usize) -> Vec<usize> {
        let mut counts = vec![0usize; k];
        for &d in &batch.domains {
            counts[d] += 1;
        }
        counts
    }

    #[test]
    fn even_split_when_divisible() {
        let ds = dataset(4, 50);
        let mut sampler = DomainBatchSampler::new(&ds, 128, 0).unwrap();
        let batch = sampler.next_batch(&ds);
        assert_eq!(domain_counts(&batch, 4), vec![32, 32, 32, 32]);
    }

    #[test]
    fn round_robin_remainder() {
        let ds = dataset(3, 20);
        let mut sampler = DomainBatchSampler::new(&ds, 8, 0).unwrap();
        let batch = sampler.next_batch(&ds);
        assert_eq!(domain_counts(&batch, 3), vec![3, 3, 2]);
    }

    #[test]
    fn rejects_batch_smaller_than_domain_count() {
        let ds = dataset(4, 5);
        assert!(DomainBatchSampler::new(&ds, 3, 0).is_err());
    }

    #[test]
    fn without_replacement_within_a_pass() {
        let ds = dataset(2, 12);
        let mut sampler = DomainBatchSampler::new(&ds, 8, 3).unwrap();
        // 3 batches x 4 per domain = exactly one pass per domain
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for _ in 0..3 {
            let batch = sampler.next_batch(&ds);
            for row in batch.features.rows() {
                seen.push(row.to_vec());
            }
        }
        let unique: std::collections::HashSet<String> =
            seen.iter().map(|r| format!("{r:?}")).collect();
        assert_eq!(unique.len(), 24, "no sample may repeat within a pass");
    }

    #[test]
    fn deterministic_batch_sequence() {
        let ds = generate_synthetic(&SynthConfig {
            samples_per_domain: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut a = DomainBatchSampler::new(&ds, 16, 9).unwrap();
        let mut b = DomainBatchSampler::new(&ds, 16, 9).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_batch(&ds), b.next_batch(&ds));
        }
    }

    #[test]
    fn allocation_is_uniform_over_many_batches() {
        // frequency-count check over 1000 batches: every sample of a domain
        // is drawn with equal frequency under without-replacement passes
        let ds = dataset(2, 10);
        let mut sampler = DomainBatchSampler::new(&ds, 4, 17).unwrap();
        let mut counts = std::collections::HashMap::<String, usize>::new();
        let batches = 1000;
        for _ in 0..batches {
            let batch = sampler.next_batch(&ds);
            for row in batch.features.rows() {
                *counts.entry(format!("{:?}", row.to_vec())).or_default() += 1;
            }
        }
        // 1000 batches x 2 per domain over 10 samples = 200 draws each
        for (_, c) in counts {
            assert_eq!(c, 200);
        }
    }
}
