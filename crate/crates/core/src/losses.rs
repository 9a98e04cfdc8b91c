//! Training losses: cosine-distance hard mining, the domain alignment hinge
//! loss, focal loss, the weighted cross-entropy weight table, and the
//! combined objective.
//!
//! The alignment loss operates on feature vectors `z` and produces gradients
//! w.r.t. the features only; focal loss operates on logits and produces
//! gradients w.r.t. the logits only. The combined objective sums both and
//! carries both gradient paths.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ForwardTrace;

/// Probability floor inside logarithms.
const PROB_FLOOR: f64 = 1e-12;

/// Loss hyperparameters. The defaults are margin 0.1, hard count 5,
/// alignment weight 10, focal gamma 2 and uniform class weights.
#[derive(Debug, Clone, Default)]
pub struct LossConfig {
    /// Hinge margin of the alignment loss.
    pub margin: f64,
    /// Number of hard positives / negatives mined per query.
    pub hard_count: usize,
    /// Weight of the alignment term in the combined objective.
    pub alpha: f64,
    /// Focal focusing exponent; 0 reduces focal loss to cross-entropy.
    pub gamma: f64,
    /// Optional per-(class, domain) sample weights; `None` means uniform.
    pub weights: Option<WeightTable>,
}

impl LossConfig {
    pub fn new() -> Self {
        LossConfig {
            margin: 0.1,
            hard_count: 5,
            alpha: 10.0,
            gamma: 2.0,
            weights: None,
        }
    }
}

/// Value and gradients of one loss evaluation. A missing gradient means the
/// loss does not depend on that input (identically zero gradient).
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Option<Array2<f64>>,
    pub grad_features: Option<Array2<f64>>,
}

/// Hard positives and negatives mined for one query sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiningResult {
    pub query_index: usize,
    /// Same class as the query (any domain, including the query's own),
    /// nearest first; never contains the query itself.
    pub positives: Vec<usize>,
    /// Same domain as the query, different class, nearest first.
    pub negatives: Vec<usize>,
    /// Both sets nonempty.
    pub valid: bool,
}

/// Cosine distance `1 - cos(a, b)` in `[0, 2]`.
///
/// A zero-norm vector is treated as orthogonal to everything (distance 1)
/// with a logged warning, so early-training degenerate features cannot
/// poison the loss with NaN.
pub fn cosine_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        log::warn!("cosine distance of a zero-norm vector treated as 1 (orthogonality convention)");
        return 1.0;
    }
    1.0 - dot / (norm_a * norm_b)
}

/// Selects up to `hard_count` nearest candidates by cosine distance, ties
/// broken by lower batch index. `candidates` yields indices into `features`.
fn nearest_by_cosine(
    query: usize,
    features: &ArrayView2<f64>,
    candidates: impl Iterator<Item = usize>,
    hard_count: usize,
) -> Vec<usize> {
    let q = features.row(query);
    let mut scored: Vec<(f64, usize)> = candidates
        .map(|j| (cosine_distance(q, features.row(j)), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(hard_count);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Hard positives of query `i`: the up-to-`C` nearest samples sharing the
/// query's class label, drawn from every domain including the query's own.
/// The query itself is never a candidate.
pub fn mine_hard_positives(
    query: usize,
    features: ArrayView2<f64>,
    labels: &[usize],
    hard_count: usize,
) -> Vec<usize> {
    let label = labels[query];
    let candidates = (0..labels.len()).filter(|&j| j != query && labels[j] == label);
    nearest_by_cosine(query, &features, candidates, hard_count)
}

/// Hard negatives of query `i`: the up-to-`C` nearest samples from the
/// query's own domain with a different class label.
pub fn mine_hard_negatives(
    query: usize,
    features: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
    hard_count: usize,
) -> Vec<usize> {
    let (label, domain) = (labels[query], domains[query]);
    let candidates =
        (0..labels.len()).filter(|&k| domains[k] == domain && labels[k] != label);
    nearest_by_cosine(query, &features, candidates, hard_count)
}

/// Mines both sets for one query.
pub fn mine(
    query: usize,
    features: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
    hard_count: usize,
) -> MiningResult {
    let positives = mine_hard_positives(query, features, labels, hard_count);
    let negatives = mine_hard_negatives(query, features, labels, domains, hard_count);
    let valid = !positives.is_empty() && !negatives.is_empty();
    MiningResult {
        query_index: query,
        positives,
        negatives,
        valid,
    }
}

/// Adds the gradient of `weight * (1 - cos(z_i, z_j))` w.r.t. both endpoints
/// into `grad`. Zero-norm endpoints contribute nothing (the distance is
/// constant 1 there by convention).
fn accumulate_cosine_grad(
    grad: &mut Array2<f64>,
    features: &ArrayView2<f64>,
    i: usize,
    j: usize,
    weight: f64,
) {
    let zi = features.row(i);
    let zj = features.row(j);
    let norm_i = zi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_j = zj.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_i == 0.0 || norm_j == 0.0 {
        return;
    }
    let cos = zi.iter().zip(zj.iter()).map(|(a, b)| a * b).sum::<f64>() / (norm_i * norm_j);
    for c in 0..features.ncols() {
        let ui = zi[c] / norm_i;
        let vj = zj[c] / norm_j;
        // d(1 - cos)/dz_i = -(v - cos u)/|z_i|, symmetric for z_j
        grad[[i, c]] += weight * (-(vj - cos * ui) / norm_i);
        grad[[j, c]] += weight * (-(ui - cos * vj) / norm_j);
    }
}

/// Domain alignment loss over a batch of feature vectors.
///
/// For each query with nonempty positive and negative sets, the per-query
/// term is `max(0, margin + D_p - D_n)` where `D_p`/`D_n` are the mean
/// cosine distances to the mined hard positives/negatives. The loss is the
/// mean over valid queries (0 when none are valid). Gradients flow through
/// the cosine terms into both pair endpoints; the mined index sets are
/// treated as constants and the hinge subgradient at the kink is 0.
pub fn domalign_loss(
    features: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let m = features.nrows();
    if labels.len() != m || domains.len() != m {
        return Err(Error::InvalidArgument(format!(
            "labels ({}) and domains ({}) must match the {m} feature rows",
            labels.len(),
            domains.len()
        )));
    }

    let mined: Vec<MiningResult> = (0..m)
        .map(|i| mine(i, features, labels, domains, cfg.hard_count))
        .filter(|r| r.valid)
        .collect();
    if mined.is_empty() {
        return Ok(LossOutput {
            value: 0.0,
            grad_logits: None,
            grad_features: Some(Array2::zeros(features.raw_dim())),
        });
    }

    let scale = 1.0 / mined.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(features.raw_dim());
    for r in &mined {
        let i = r.query_index;
        let d_pos = r
            .positives
            .iter()
            .map(|&j| cosine_distance(features.row(i), features.row(j)))
            .sum::<f64>()
            / r.positives.len() as f64;
        let d_neg = r
            .negatives
            .iter()
            .map(|&k| cosine_distance(features.row(i), features.row(k)))
            .sum::<f64>()
            / r.negatives.len() as f64;
        let hinge = cfg.margin + d_pos - d_neg;
        if hinge > 0.0 {
            value += scale * hinge;
            let w_pos = scale / r.positives.len() as f64;
            for &j in &r.positives {
                accumulate_cosine_grad(&mut grad, &features, i, j, w_pos);
            }
            let w_neg = -scale / r.negatives.len() as f64;
            for &k in &r.negatives {
                accumulate_cosine_grad(&mut grad, &features, i, k, w_neg);
            }
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: None,
        grad_features: Some(grad),
    })
}

/// How close the batch sits to a non-differentiable point of the alignment
/// loss: the minimum over queries of the hinge margin distance and of the
/// distance gap at the top-C selection boundary. Gradient checks resample
/// batches where this is small.
pub fn domalign_kink_distance(
    features: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
    cfg: &LossConfig,
) -> f64 {
    let m = features.nrows();
    let mut min_gap = f64::INFINITY;
    for i in 0..m {
        let r = mine(i, features, labels, domains, cfg.hard_count);
        if !r.valid {
            continue;
        }
        let dist = |j: usize| cosine_distance(features.row(i), features.row(j));
        let d_pos = r.positives.iter().map(|&j| dist(j)).sum::<f64>() / r.positives.len() as f64;
        let d_neg = r.negatives.iter().map(|&k| dist(k)).sum::<f64>() / r.negatives.len() as f64;
        min_gap = min_gap.min((cfg.margin + d_pos - d_neg).abs());

        // gap between the last selected and first unselected candidate
        for (selected, same_class) in [(&r.positives, true), (&r.negatives, false)] {
            if selected.len() < cfg.hard_count {
                continue; // every candidate selected; no boundary
            }
            let worst_selected = selected.iter().map(|&j| dist(j)).fold(0.0, f64::max);
            let best_unselected = (0..m)
                .filter(|&j| {
                    j != i
                        && !selected.contains(&j)
                        && if same_class {
                            labels[j] == labels[i]
                        } else {
                            domains[j] == domains[i] && labels[j] != labels[i]
                        }
                })
                .map(dist)
                .fold(f64::INFINITY, f64::min);
            if best_unselected.is_finite() {
                min_gap = min_gap.min(best_unselected - worst_selected);
            }
        }
    }
    min_gap
}

/// Row-wise max-shift softmax.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Focal loss `-w (1 - p_t)^gamma log(p_t)` averaged over the batch, with
/// analytic logit gradients. `w` comes from the optional weight table,
/// looked up by (label, domain), defaulting to 1. With `gamma = 0` and
/// uniform weights this is exactly mean softmax cross-entropy.
pub fn focal_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let (m, num_classes) = logits.dim();
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "focal loss needs at least 2 classes, got {num_classes}"
        )));
    }
    if labels.len() != m || domains.len() != m {
        return Err(Error::InvalidArgument(format!(
            "labels ({}) and domains ({}) must match the {m} logit rows",
            labels.len(),
            domains.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }

    let probs = softmax_rows(&logits);
    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for i in 0..m {
        let y = labels[i];
        let w = cfg
            .weights
            .as_ref()
            .and_then(|t| t.get(y, domains[i]))
            .unwrap_or(1.0);
        let p_t = probs[[i, y]];
        let log_p = p_t.max(PROB_FLOOR).ln();
        let one_minus = 1.0 - p_t;
        value += inv_m * (-w * one_minus.powf(cfg.gamma) * log_p);

        // d/dp[-w (1-p)^g log p]; the (1-p)^(g-1) log p term vanishes in the
        // p -> 1 limit, guard the 0^negative case explicitly
        let term_focus = if one_minus > 0.0 && cfg.gamma != 0.0 {
            w * cfg.gamma * one_minus.powf(cfg.gamma - 1.0) * log_p
        } else {
            0.0
        };
        let term_ce = if p_t > PROB_FLOOR {
            -w * one_minus.powf(cfg.gamma) / p_t
        } else {
            0.0
        };
        let dl_dp = term_focus + term_ce;
        for j in 0..num_classes {
            let indicator = if j == y { 1.0 } else { 0.0 };
            grad[[i, j]] = inv_m * dl_dp * p_t * (indicator - probs[[i, j]]);
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: Some(grad),
        grad_features: None,
    })
}

/// Per-(class, domain) sample weights for weighted cross-entropy; classes
/// absent from a domain carry no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    /// `weights[class][domain]`; `None` marks a class absent from a domain.
    weights: Vec<Vec<Option<f64>>>,
}

impl WeightTable {
    pub fn get(&self, class: usize, domain: usize) -> Option<f64> {
        self.weights
            .get(class)
            .and_then(|row| row.get(domain))
            .copied()
            .flatten()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn num_domains(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    /// CSV dump (`class,domain,weight`) for inspection.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("class,domain,weight\n");
        for (class, row) in self.weights.iter().enumerate() {
            for (domain, w) in row.iter().enumerate() {
                if let Some(w) = w {
                    out.push_str(&format!("{class},{domain},{w}\n"));
                }
            }
        }
        out
    }
}

/// Weighted cross-entropy sample weights.
///
/// Per domain d with m_d samples and n_yd of class y: inverse class weights
/// `omega_yd = m_d / n_yd` normalized per domain by their maximum, inverse
/// domain weights `theta_d = N / N_d` normalized by the maximum over
/// domains, and the final weight is the product of the two normalized
/// factors. Within every domain the rarest class therefore gets class
/// factor exactly 1, and all weights lie in (0, 1].
pub fn weighted_ce_weights(source: &Dataset) -> Result<WeightTable> {
    let counts = source.class_domain_counts();
    let num_classes = source.num_classes();
    let num_domains = source.num_domains();
    let domain_totals: Vec<usize> = (0..num_domains)
        .map(|d| (0..num_classes).map(|y| counts[y][d]).sum())
        .collect();
    if let Some(d) = domain_totals.iter().position(|&t| t == 0) {
        return Err(Error::InvalidArgument(format!(
            "domain {d} has no samples"
        )));
    }
    let total: usize = domain_totals.iter().sum();

    let theta: Vec<f64> = domain_totals
        .iter()
        .map(|&n_d| total as f64 / n_d as f64)
        .collect();
    let theta_max = theta.iter().copied().fold(f64::MIN, f64::max);

    let mut weights = vec![vec![None; num_domains]; num_classes];
    for d in 0..num_domains {
        let omega: Vec<Option<f64>> = (0..num_classes)
            .map(|y| {
                (counts[y][d] > 0).then(|| domain_totals[d] as f64 / counts[y][d] as f64)
            })
            .collect();
        let omega_max = omega
            .iter()
            .flatten()
            .copied()
            .fold(f64::MIN, f64::max);
        for y in 0..num_classes {
            if let Some(o) = omega[y] {
                weights[y][d] = Some((o / omega_max) * (theta[d] / theta_max));
            }
        }
    }
    Ok(WeightTable { weights })
}

/// Combined objective value and gradients.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    /// `focal + alpha * alignment`.
    pub value: f64,
    pub focal_value: f64,
    /// Unweighted alignment loss value.
    pub align_value: f64,
    pub grad_logits: Array2<f64>,
    pub grad_features: Array2<f64>,
}

impl CombinedLoss {
    /// The alignment term as it enters the objective.
    pub fn weighted_align_value(&self, alpha: f64) -> f64 {
        alpha * self.align_value
    }
}

/// Focal plus `alpha` times the alignment loss, evaluated on one forward
/// trace. The logit gradient comes from the focal term and the feature
/// gradient from the alignment term scaled by `alpha`. With `alpha = 0` the
/// alignment term is skipped entirely and the result equals focal alone.
pub fn combined_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    domains: &[usize],
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let focal = focal_loss(trace.logits().view(), labels, domains, cfg)?;
    let grad_logits = focal.grad_logits.expect("focal loss always has logit grads");
    if cfg.alpha == 0.0 {
        return Ok(CombinedLoss {
            value: focal.value,
            focal_value: focal.value,
            align_value: 0.0,
            grad_logits,
            grad_features: Array2::zeros(trace.features().raw_dim()),
        });
    }
    let align = domalign_loss(trace.features().view(), labels, domains, cfg)?;
    let mut grad_features = align
        .grad_features
        .expect("alignment loss always has feature grads");
    grad_features.mapv_inplace(|v| v * cfg.alpha);
    Ok(CombinedLoss {
        value: focal.value + cfg.alpha * align.value,
        focal_value: focal.value,
        align_value: align.value,
        grad_logits,
        grad_features,
    })
}
