//! Synthetic multi-domain dataset generation.
//!
//! Each class gets one base centroid shared by all domains. A domain applies
//! its own affine transform (plane rotations plus a translation, both scaled
//! by `domain_shift_scale`) to every point, so domains are shifted copies of
//! the same class layout. The rotation planes, per-plane directions and the
//! translation axis are shared across domains while each domain gets its own
//! signed magnitude, so the domains sample one structured family of shifts
//! (the way acquisition pipelines differ by degree) rather than unrelated
//! transforms. Within a (class, domain) cell, samples split round-robin
//! across `intra_domain_subclusters` Gaussian blobs whose offsets are shared
//! across domains, which emulates sub-population structure inside a domain
//! without breaking the zero-shift degenerate case.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Spread of the class base centroids around the origin.
const CENTROID_SCALE: f64 = 3.0;
/// Spread of subcluster offsets around a class centroid.
const SUBCLUSTER_SCALE: f64 = 1.5;
/// Per-plane rotation angle (radians) at `domain_shift_scale = 1`.
const ROTATION_ANGLE_SCALE: f64 = 0.06;
/// Translation length at `domain_shift_scale = 1`.
const TRANSLATION_SCALE: f64 = 2.0;

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_domains: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_domain: usize,
    /// Geometric imbalance ratio across classes; 1 means balanced.
    pub class_skew: f64,
    /// Magnitude of the per-domain affine transform; 0 means identical domains.
    pub domain_shift_scale: f64,
    pub intra_domain_subclusters: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_domains: 4,
            num_classes: 4,
            feature_dim: 16,
            samples_per_domain: 200,
            class_skew: 3.0,
            domain_shift_scale: 1.0,
            intra_domain_subclusters: 2,
            noise_std: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 1
            || self.num_classes < 1
            || self.samples_per_domain < 1
            || self.intra_domain_subclusters < 1
        {
            return Err(Error::InvalidArgument(
                "synthetic config counts must be at least 1".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidArgument(
                "feature_dim must be at least 2 (plane rotations are undefined below 2-D)".into(),
            ));
        }
        if !(self.class_skew.is_finite() && self.class_skew >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "class_skew must be a finite value >= 1, got {}",
                self.class_skew
            )));
        }
        if !(self.domain_shift_scale.is_finite() && self.domain_shift_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain_shift_scale must be finite and >= 0, got {}",
                self.domain_shift_scale
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Per-class sample counts following the geometric ratio `1 : 1/skew : ...`,
/// apportioned to sum exactly to `total` (largest remainder, ties to the
/// lower class id).
fn class_counts(num_classes: usize, total: usize, skew: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..num_classes).map(|c| skew.powi(-(c as i32))).collect();
    let weight_sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| total as f64 * w / weight_sum)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % num_classes]] += 1;
    }
    counts
}

/// One domain's affine transform: disjoint-plane rotations then a translation.
struct DomainTransform {
    /// Rotation angle per coordinate plane (2j, 2j+1).
    angles: Vec<f64>,
    translation: Vec<f64>,
}

impl DomainTransform {
    fn apply(&self, x: &mut [f64]) {
        for (j, theta) in self.angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            let (a, b) = (x[2 * j], x[2 * j + 1]);
            x[2 * j] = c * a - s * b;
            x[2 * j + 1] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

fn standard_normal_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generates a synthetic multi-domain dataset. Deterministic given the seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let d = config.feature_dim;
    let num_classes = config.num_classes;
    let num_domains = config.num_domains;
    let subclusters = config.intra_domain_subclusters;
    let mut rng = seeded_rng(config.seed);

    let centroids: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            standard_normal_vec(&mut rng, d)
                .into_iter()
                .map(|v| v * CENTROID_SCALE)
                .collect()
        })
        .collect();

    // Subcluster offsets are shared by all domains; a single subcluster sits
    // exactly on the class centroid.
    let offsets: Vec<Vec<Vec<f64>>> = (0..num_classes)
        .map(|_| {
            (0..subclusters)
                .map(|_| {
                    if subclusters == 1 {
                        vec![0.0; d]
                    } else {
                        standard_normal_vec(&mut rng, d)
                            .into_iter()
                            .map(|v| v * SUBCLUSTER_SCALE)
                            .collect()
                    }
                })
                .collect()
        })
        .collect();

    let unit_dist = Uniform::new_inclusive(-1.0f64, 1.0).expect("valid uniform bounds");
    // the family of shifts: shared per-plane rotation directions and a
    // shared translation axis, with a signed magnitude per domain
    let plane_dirs: Vec<f64> = (0..d / 2).map(|_| unit_dist.sample(&mut rng)).collect();
    let translation_axis = {
        let v = standard_normal_vec(&mut rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter()
            .map(|x| if norm > 0.0 { x / norm } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    let transforms: Vec<DomainTransform> = (0..num_domains)
        .map(|_| {
            let rot_magnitude: f64 = unit_dist.sample(&mut rng);
            let trans_magnitude: f64 = unit_dist.sample(&mut rng);
            let angles = plane_dirs
                .iter()
                .map(|u| config.domain_shift_scale * ROTATION_ANGLE_SCALE * rot_magnitude * u)
                .collect();
            let translation = translation_axis
                .iter()
                .map(|t| config.domain_shift_scale * TRANSLATION_SCALE * trans_magnitude * t)
                .collect();
            DomainTransform {
                angles,
                translation,
            }
        })
        .collect();

    let counts = class_counts(num_classes, config.samples_per_domain, config.class_skew);
    let mut samples = Vec::with_capacity(num_domains * config.samples_per_domain);
    for (domain, transform) in transforms.iter().enumerate() {
        for (class, &count) in counts.iter().enumerate() {
            for i in 0..count {
                let sub = i % subclusters;
                let mut x: Vec<f64> = centroids[class]
                    .iter()
                    .zip(&offsets[class][sub])
                    .map(|(c, o)| c + o)
                    .collect();
                for v in x.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v += config.noise_std * g;
                }
                transform.apply(&mut x);
                samples.push(Sample::new(x, class, domain)?);
            }
        }
    }
    Dataset::new(samples, num_classes, num_domains, d)
}
