//! Domain-shift analysis: pairwise Gaussian KL divergences between domains,
//! a cross-domain feature-dispersion statistic, and 2-D PCA export.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Minimum covariance floor applied when the empirical trace vanishes.
const MIN_COV_FLOOR: f64 = 1e-9;

/// Gaussian fitted to a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Array1<f64>,
    /// Shrinkage-regularized covariance (unbiased n-1 normalization plus
    /// `lambda_rel * trace / d` on the diagonal).
    pub covariance: Array2<f64>,
    pub sample_count: usize,
}

/// Fits mean and covariance with relative shrinkage `lambda_rel`.
///
/// The empirical covariance uses the unbiased (n-1) normalization. The
/// added ridge is `lambda_rel * trace(cov) / d`; when the trace is zero
/// (identical samples) the ridge is forced to 1e-9 so downstream KL stays
/// defined.
pub fn fit_gaussian(features: ArrayView2<f64>, lambda_rel: f64) -> Result<GaussianFit> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to fit a Gaussian, got {n}"
        )));
    }
    if !(lambda_rel.is_finite() && lambda_rel >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage must be finite and >= 0, got {lambda_rel}"
        )));
    }
    let mut mean = Array1::zeros(d);
    for row in features.rows() {
        mean += &row;
    }
    mean /= n as f64;

    let mut cov = Array2::zeros((d, d));
    for row in features.rows() {
        let centered = &row - &mean;
        for i in 0..d {
            for j in i..d {
                cov[[i, j]] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[[i, j]] /= denom;
            cov[[j, i]] = cov[[i, j]];
        }
    }

    let trace: f64 = (0..d).map(|i| cov[[i, i]]).sum();
    let lambda = if trace > 0.0 {
        lambda_rel * trace / d as f64
    } else {
        MIN_COV_FLOOR
    };
    for i in 0..d {
        cov[[i, i]] += lambda;
    }
    Ok(GaussianFit {
        mean,
        covariance: cov,
        sample_count: n,
    })
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Closed-form KL divergence between two Gaussians,
/// `KL(p || q) = 0.5 [tr(Sq^-1 Sp) + (mq-mp)' Sq^-1 (mq-mp) - d + ln det Sq / det Sp]`,
/// computed through Cholesky factorizations. Identical fits return exactly 0.
pub fn kl_gaussian(p: &GaussianFit, q: &GaussianFit) -> Result<f64> {
    let d = p.mean.len();
    if q.mean.len() != d {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {d} vs {}",
            q.mean.len()
        )));
    }
    if p == q {
        return Ok(0.0);
    }
    let sigma_p = to_nalgebra(&p.covariance);
    let sigma_q = to_nalgebra(&q.covariance);
    let chol_q = Cholesky::new(sigma_q).ok_or_else(|| {
        Error::Numeric("covariance of q is not positive definite".into())
    })?;
    let chol_p = Cholesky::new(sigma_p.clone()).ok_or_else(|| {
        Error::Numeric("covariance of p is not positive definite".into())
    })?;

    let trace_term = chol_q.solve(&sigma_p).trace();
    let diff = DVector::from_fn(d, |i, _| q.mean[i] - p.mean[i]);
    let quad_term = diff.dot(&chol_q.solve(&diff.clone().into()));
    let log_det_q: f64 = (0..d).map(|i| chol_q.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    let log_det_p: f64 = (0..d).map(|i| chol_p.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (trace_term + quad_term - d as f64 + log_det_q - log_det_p))
}

/// Pairwise KL divergences between domains; entry (a, b) is
/// `KL(fit(a) || fit(b))` with the diagonal forced to exact 0.
#[derive(Debug, Clone, PartialEq)]
pub struct KlMatrix {
    pub values: Array2<f64>,
    pub domain_ids: Vec<usize>,
}

impl KlMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.domain_ids.len();
        if k < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    sum += self.values[[a, b]];
                }
            }
        }
        sum / (k * (k - 1)) as f64
    }

    /// Heatmap-ready CSV with domain ids as both header row and column.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("domain");
        for id in &self.domain_ids {
            out.push_str(&format!(",{id}"));
        }
        out.push('\n');
        for (a, id) in self.domain_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for b in 0..self.domain_ids.len() {
                out.push_str(&format!(",{:.6}", self.values[[a, b]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Fits one Gaussian per domain and assembles the pairwise KL matrix.
/// `features_by_domain[d]` holds domain d's feature rows.
pub fn domain_kl_matrix(
    features_by_domain: &[Array2<f64>],
    lambda_rel: f64,
) -> Result<KlMatrix> {
    let k = features_by_domain.len();
    let fits: Vec<GaussianFit> = features_by_domain
        .iter()
        .enumerate()
        .map(|(d, feats)| {
            fit_gaussian(feats.view(), lambda_rel).map_err(|e| {
                Error::InvalidArgument(format!("domain {d} is degenerate: {e}"))
            })
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            if a != b {
                values[[a, b]] = kl_gaussian(&fits[a], &fits[b])?;
            }
        }
    }
    Ok(KlMatrix {
        values,
        domain_ids: (0..k).collect(),
    })
}

/// Mean pairwise cosine distance between per-domain class centroids on the
/// unit sphere, averaged over classes shared by at least two domains.
///
/// Low values mean same-class features from different domains point the same
/// way; a model that aligns domains drives this down.
pub fn cross_domain_dispersion(
    features: ArrayView2<f64>,
    labels: &[usize],
    domains: &[usize],
) -> Result<f64> {
    let m = features.nrows();
    if labels.len() != m || domains.len() != m {
        return Err(Error::InvalidArgument(
            "labels and domains must match the feature rows".into(),
        ));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |v| v + 1);
    let num_domains = domains.iter().copied().max().map_or(0, |v| v + 1);
    let d = features.ncols();

    let mut class_dispersions = Vec::new();
    for class in 0..num_classes {
        // mean of unit-normalized features per (class, domain), renormalized
        let mut centroids: Vec<Array1<f64>> = Vec::new();
        for domain in 0..num_domains {
            let mut sum = Array1::zeros(d);
            let mut count = 0usize;
            for i in 0..m {
                if labels[i] == class && domains[i] == domain {
                    let row = features.row(i);
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        sum += &row.mapv(|v| v / norm);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                centroids.push(sum.mapv(|v| v / norm));
            }
        }
        if centroids.len() < 2 {
            continue;
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..centroids.len() {
            for b in (a + 1)..centroids.len() {
                let cos: f64 = centroids[a]
                    .iter()
                    .zip(centroids[b].iter())
                    .map(|(x, y)| x * y)
                    .sum();
                total += 1.0 - cos;
                pairs += 1;
            }
        }
        class_dispersions.push(total / pairs as f64);
    }
    if class_dispersions.is_empty() {
        return Err(Error::InvalidArgument(
            "no class is shared by at least two domains".into(),
        ));
    }
    Ok(class_dispersions.iter().sum::<f64>() / class_dispersions.len() as f64)
}

/// Projects rows of `features` onto their top `out_dims` principal
/// components. Deterministic: each component's sign is fixed by making its
/// largest-magnitude loading positive (lowest index on ties), and components
/// beyond the data rank are zero-filled.
pub fn pca_project(features: ArrayView2<f64>, out_dims: usize) -> Result<Array2<f64>> {
    let (n, d) = features.dim();
    if n <= out_dims {
        return Err(Error::InvalidArgument(format!(
            "need more than {out_dims} samples for a {out_dims}-D projection, got {n}"
        )));
    }
    let mut mean = Array1::zeros(d);
    for row in features.rows() {
        mean += &row;
    }
    mean /= n as f64;
    let mut centered = features.to_owned();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }

    // covariance eigenvectors; eigenvalues sorted descending by hand since
    // nalgebra does not guarantee an order
    let cov_nd = centered.t().dot(&centered).mapv(|v| v / (n as f64 - 1.0).max(1.0));
    let eig = SymmetricEigen::new(to_nalgebra(&cov_nd));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let max_eig = eig.eigenvalues[order[0]].max(0.0);

    let mut out = Array2::zeros((n, out_dims));
    for k in 0..out_dims.min(d) {
        let idx = order[k];
        // rank-deficient trailing components stay zero-filled
        if eig.eigenvalues[idx] <= 1e-12 * max_eig.max(1e-300) {
            continue;
        }
        let mut component: Vec<f64> = (0..d).map(|i| eig.eigenvectors[(i, idx)]).collect();
        let lead = (0..d)
            .max_by(|&a, &b| {
                component[a]
                    .abs()
                    .total_cmp(&component[b].abs())
                    .then(b.cmp(&a))
            })
            .unwrap();
        if component[lead] < 0.0 {
            for v in component.iter_mut() {
                *v = -*v;
            }
        }
        for i in 0..n {
            out[[i, k]] = centered
                .row(i)
                .iter()
                .zip(&component)
                .map(|(x, c)| x * c)
                .sum();
        }
    }
    Ok(out)
}

/// CSV export of a 2-D projection: `x,y,label,domain` per sample.
pub fn projection_csv(
    coords: &Array2<f64>,
    labels: &[usize],
    domains: &[usize],
) -> String {
    let mut out = String::from("x,y,label,domain\n");
    for i in 0..coords.nrows() {
        out.push_str(&format!(
            "{:.6},{:.6},{},{}\n",
            coords[[i, 0]],
            coords[[i, 1]],
            labels[i],
            domains[i]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_features;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn fit_gaussian_hand_case() {
        let feats = array![[0.0, 0.0], [2.0, 0.0]];
        let fit = fit_gaussian(feats.view(), 0.0).unwrap();
        assert_eq!(fit.mean, array![1.0, 0.0]);
        // unbiased (n-1) covariance of {0, 2} in the first coordinate is 2
        assert_abs_diff_eq!(fit.covariance[[0, 0]], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.covariance[[1, 1]], 0.0, epsilon = 1e-15);

        let fit = fit_gaussian(feats.view(), 1e-3).unwrap();
        let lambda = 1e-3 * 2.0 / 2.0;
        assert_abs_diff_eq!(fit.covariance[[0, 0]], 2.0 + lambda, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.covariance[[1, 1]], lambda, epsilon = 1e-15);
    }

    #[test]
    fn fit_gaussian_identical_samples_floor() {
        let feats = array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]];
        let fit = fit_gaussian(feats.view(), 1e-3).unwrap();
        assert_abs_diff_eq!(fit.covariance[[0, 0]], 1e-9, epsilon = 1e-24);
        assert_abs_diff_eq!(fit.covariance[[1, 1]], 1e-9, epsilon = 1e-24);
        assert_eq!(fit.covariance[[0, 1]], 0.0);
    }

    #[test]
    fn fit_gaussian_translation_equivariance() {
        let mut rng = seeded_rng(2);
        let feats = random_features(&mut rng, 40, 3);
        let base = fit_gaussian(feats.view(), 1e-3).unwrap();
        let shifted = &feats + &array![[10.0, -5.0, 2.5]];
        let fit = fit_gaussian(shifted.view(), 1e-3).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(
                fit.mean[i],
                base.mean[i] + [10.0, -5.0, 2.5][i],
                epsilon = 1e-12
            );
        }
        for (a, b) in fit.covariance.iter().zip(base.covariance.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_gaussian_rejects_single_sample() {
        let feats = array![[1.0, 2.0]];
        assert!(fit_gaussian(feats.view(), 0.0).is_err());
    }

    #[test]
    fn kl_identical_fits_is_exactly_zero() {
        let mut rng = seeded_rng(3);
        let feats = random_features(&mut rng, 30, 4);
        let fit = fit_gaussian(feats.view(), 1e-3).unwrap();
        assert_eq!(kl_gaussian(&fit, &fit).unwrap(), 0.0);
    }

    fn gaussian_1d(mean: f64, var: f64) -> GaussianFit {
        GaussianFit {
            mean: array![mean],
            covariance: array![[var]],
            sample_count: 2,
        }
    }

    #[test]
    fn kl_one_dimensional_closed_forms() {
        // N(0,1) vs N(1,1): 0.5 (mu difference)^2
        let kl = kl_gaussian(&gaussian_1d(0.0, 1.0), &gaussian_1d(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(kl, 0.5, epsilon = 1e-9);
        // N(0,1) vs N(0,4): 0.5 [1/4 - 1 + ln 4]
        let kl = kl_gaussian(&gaussian_1d(0.0, 1.0), &gaussian_1d(0.0, 4.0)).unwrap();
        let expected = 0.5 * (0.25 - 1.0 + (4.0f64).ln());
        assert_abs_diff_eq!(kl, expected, epsilon = 1e-9);
        assert!((kl - 0.3181).abs() < 1e-4);
    }

    #[test]
    fn kl_rejects_dimension_mismatch() {
        let p = gaussian_1d(0.0, 1.0);
        let q = GaussianFit {
            mean: array![0.0, 0.0],
            covariance: Array2::eye(2),
            sample_count: 2,
        };
        assert!(kl_gaussian(&p, &q).is_err());
    }

    #[test]
    fn kl_nonnegative_on_random_fits() {
        let mut rng = seeded_rng(4);
        for _ in 0..20 {
            let a = fit_gaussian(random_features(&mut rng, 50, 3).view(), 1e-3).unwrap();
            let b = fit_gaussian(
                random_features(&mut rng, 50, 3).mapv(|v| 1.5 * v + 0.3).view(),
                1e-3,
            )
            .unwrap();
            let kl = kl_gaussian(&a, &b).unwrap();
            assert!(kl >= -1e-9, "kl {kl} negative beyond tolerance");
        }
    }

    #[test]
    fn kl_invariant_under_shared_affine_transform() {
        let mut rng = seeded_rng(5);
        let xa = random_features(&mut rng, 200, 3);
        let xb = random_features(&mut rng, 200, 3).mapv(|v| 0.8 * v) + 0.5;
        let base = kl_gaussian(
            &fit_gaussian(xa.view(), 0.0).unwrap(),
            &fit_gaussian(xb.view(), 0.0).unwrap(),
        )
        .unwrap();
        // invertible affine map: y = Ax + t
        let a = array![[1.2, 0.3, 0.0], [-0.2, 0.9, 0.1], [0.0, 0.4, 1.1]];
        let t = array![0.7, -1.0, 0.25];
        let ya = xa.dot(&a.t()) + &t;
        let yb = xb.dot(&a.t()) + &t;
        let transformed = kl_gaussian(
            &fit_gaussian(ya.view(), 0.0).unwrap(),
            &fit_gaussian(yb.view(), 0.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(base, transformed, epsilon = 1e-6);
    }

    #[test]
    fn kl_matrix_diagonal_zero_and_nonnegative() {
        let mut rng = seeded_rng(6);
        let groups: Vec<Array2<f64>> = (0..3)
            .map(|k| random_features(&mut rng, 60, 3).mapv(|v| v + k as f64))
            .collect();
        let m = domain_kl_matrix(&groups, 1e-3).unwrap();
        for a in 0..3 {
            assert_eq!(m.values[[a, a]], 0.0);
            for b in 0..3 {
                assert!(m.values[[a, b]] >= 0.0);
            }
        }
        assert!(m.mean_off_diagonal() > 0.1);
    }

    #[test]
    fn kl_matrix_names_degenerate_domain() {
        let groups = vec![
            random_features(&mut seeded_rng(7), 20, 2),
            Array2::zeros((1, 2)),
        ];
        let err = domain_kl_matrix(&groups, 1e-3).unwrap_err().to_string();
        assert!(err.contains("domain 1"), "{err}");
    }

    #[test]
    fn dispersion_identical_domains_is_zero() {
        // same per-class directions in both domains
        let feats = array![
            [1.0, 0.0],
            [1.0, 0.0],
            [0.0, 2.0],
            [0.0, 1.0]
        ];
        let labels = [0, 0, 1, 1];
        let domains = [0, 1, 0, 1];
        let d = cross_domain_dispersion(feats.view(), &labels, &domains).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_orthogonal_centroids_is_one() {
        let feats = array![[1.0, 0.0], [0.0, 1.0]];
        let labels = [0, 0];
        let domains = [0, 1];
        let d = cross_domain_dispersion(feats.view(), &labels, &domains).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_invariant_to_positive_scaling() {
        let mut rng = seeded_rng(8);
        let feats = random_features(&mut rng, 24, 4);
        let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let domains: Vec<usize> = (0..24).map(|i| (i / 3) % 2).collect();
        let base = cross_domain_dispersion(feats.view(), &labels, &domains).unwrap();
        let mut scaled = feats.clone();
        for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
            let c = 0.5 + (i % 5) as f64;
            row.mapv_inplace(|v| v * c);
        }
        let out = cross_domain_dispersion(scaled.view(), &labels, &domains).unwrap();
        assert_abs_diff_eq!(base, out, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_errors_without_shared_class() {
        let feats = array![[1.0, 0.0], [0.0, 1.0]];
        let labels = [0, 1];
        let domains = [0, 1];
        assert!(cross_domain_dispersion(feats.view(), &labels, &domains).is_err());
    }

    #[test]
    fn pca_on_2d_data_preserves_distances() {
        let mut rng = seeded_rng(9);
        let mut feats = random_features(&mut rng, 30, 2);
        // center explicitly
        let mean0 = feats.column(0).sum() / 30.0;
        let mean1 = feats.column(1).sum() / 30.0;
        for mut row in feats.rows_mut() {
            row[0] -= mean0;
            row[1] -= mean1;
        }
        let proj = pca_project(feats.view(), 2).unwrap();
        for i in 0..30 {
            for j in (i + 1)..30 {
                let d_in = ((feats[[i, 0]] - feats[[j, 0]]).powi(2)
                    + (feats[[i, 1]] - feats[[j, 1]]).powi(2))
                .sqrt();
                let d_out = ((proj[[i, 0]] - proj[[j, 0]]).powi(2)
                    + (proj[[i, 1]] - proj[[j, 1]]).powi(2))
                .sqrt();
                assert_abs_diff_eq!(d_in, d_out, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pca_duplicated_rows_project_identically() {
        let mut rng = seeded_rng(10);
        let feats = random_features(&mut rng, 10, 4);
        let doubled = ndarray::concatenate(ndarray::Axis(0), &[feats.view(), feats.view()]).unwrap();
        let proj = pca_project(doubled.view(), 2).unwrap();
        for i in 0..10 {
            assert_eq!(proj.row(i), proj.row(i + 10));
        }
    }

    #[test]
    fn pca_beats_random_projections_at_reconstruction() {
        // top-2 PCs maximize captured variance among 2-D linear projections
        let mut rng = seeded_rng(11);
        let base = random_features(&mut rng, 60, 5);
        // stretch two directions so the signal is anisotropic
        let feats = {
            let mut f = base.clone();
            for mut row in f.rows_mut() {
                row[0] *= 4.0;
                row[1] *= 2.5;
            }
            f
        };
        let mut centered = feats.clone();
        let n = centered.nrows() as f64;
        let mean = centered.sum_axis(ndarray::Axis(0)) / n;
        for mut row in centered.rows_mut() {
            row -= &mean;
        }
        let total_var: f64 = centered.iter().map(|v| v * v).sum();
        let proj = pca_project(feats.view(), 2).unwrap();
        let captured_pca: f64 = proj.iter().map(|v| v * v).sum();

        for trial in 0..100 {
            // random orthonormal 2-frame via Gram-Schmidt
            let mut rng = seeded_rng(1000 + trial);
            let a = random_features(&mut rng, 5, 1);
            let b = random_features(&mut rng, 5, 1);
            let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: Vec<f64> = a.iter().map(|v| v / a_norm).collect();
            let dot: f64 = b.iter().zip(&u).map(|(x, y)| x * y).sum();
            let mut w: Vec<f64> = b.iter().zip(&u).map(|(x, y)| x - dot * y).collect();
            let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in w.iter_mut() {
                *v /= w_norm;
            }
            let mut captured = 0.0;
            for row in centered.rows() {
                let cu: f64 = row.iter().zip(&u).map(|(x, y)| x * y).sum();
                let cw: f64 = row.iter().zip(&w).map(|(x, y)| x * y).sum();
                captured += cu * cu + cw * cw;
            }
            assert!(
                captured <= captured_pca + 1e-9 * total_var,
                "random projection captured {captured} > pca {captured_pca}"
            );
        }
    }

    #[test]
    fn pca_rejects_too_few_samples() {
        let feats = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(pca_project(feats.view(), 2).is_err());
    }
}
