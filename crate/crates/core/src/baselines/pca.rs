//! PCA baseline scored by the Gaussian likelihood the subspace induces:
//! retained axes keep their eigenvalue variances, everything off-subspace
//! is modeled as isotropic noise at the mean discarded eigenvalue.

use crate::autodiff::{load_tensors, save_tensors, Real};
use crate::error::{Error, Result};
use crate::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use std::path::Path;

/// Variance floor for retained axes and the residual, keeping log terms
/// finite on degenerate data.
pub const PCA_VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Training mean, length D.
    pub mean: Vec<f64>,
    /// Principal axes, row-major [k, D], orthonormal rows.
    pub axes: Vec<f64>,
    /// Per-axis variances, non-increasing.
    pub variances: Vec<f64>,
    /// Isotropic variance of the D-k discarded directions.
    pub residual_variance: f64,
}

impl PcaModel {
    pub fn new(
        mean: Vec<f64>,
        axes: Vec<f64>,
        variances: Vec<f64>,
        residual_variance: f64,
    ) -> Result<PcaModel> {
        let d = mean.len();
        let k = variances.len();
        if axes.len() != k * d {
            return Err(Error::shape(format!(
                "{} axis values for {k} axes of dim {d}",
                axes.len()
            )));
        }
        if residual_variance < PCA_VARIANCE_FLOOR {
            return Err(Error::numeric("residual variance below floor"));
        }
        for w in variances.windows(2) {
            if w[1] > w[0] {
                return Err(Error::numeric("axis variances must be non-increasing"));
            }
        }
        if variances.iter().any(|&v| v < PCA_VARIANCE_FLOOR) {
            return Err(Error::numeric("axis variance below floor"));
        }
        for i in 0..k {
            for j in i..k {
                let dot: f64 = axes[i * d..(i + 1) * d]
                    .iter()
                    .zip(&axes[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-8 {
                    return Err(Error::numeric(format!(
                        "axes {i} and {j} are not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        Ok(PcaModel {
            mean,
            axes,
            variances,
            residual_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.variances.len()
    }

    /// Fit on row-major samples [n, D] by eigendecomposition of the sample
    /// covariance (divisor n-1). Keeps the top `k` axes; the residual
    /// variance is the mean of the discarded eigenvalues.
    pub fn fit(samples: &Tensor<f64>, k: usize) -> Result<PcaModel> {
        let n = samples.rows();
        let d = samples.row_len();
        if n < 2 {
            return Err(Error::config("PCA needs at least 2 samples"));
        }
        if k == 0 || k >= d {
            return Err(Error::config(format!(
                "retained components must be in 1..{d}, got {k}"
            )));
        }

        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(samples.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut centered = Vec::with_capacity(n * d);
        for i in 0..n {
            centered.extend(samples.row(i).iter().zip(&mean).map(|(&v, &m)| v - m));
        }

        // cov = centered^T centered / (n - 1), filled by one dgemm call
        let mut cov = vec![0.0f64; d * d];
        unsafe {
            f64::gemm(
                d,
                n,
                d,
                1.0 / (n - 1) as f64,
                centered.as_ptr(),
                1,
                d as isize,
                centered.as_ptr(),
                d as isize,
                1,
                0.0,
                cov.as_mut_ptr(),
                d as isize,
                1,
            );
        }

        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut axes = Vec::with_capacity(k * d);
        let mut variances = Vec::with_capacity(k);
        for &col in order.iter().take(k) {
            axes.extend(eig.eigenvectors.column(col).iter());
            variances.push(eig.eigenvalues[col].max(PCA_VARIANCE_FLOOR));
        }
        let discarded: f64 = order[k..]
            .iter()
            .map(|&col| eig.eigenvalues[col].max(0.0))
            .sum();
        let residual = (discarded / (d - k) as f64).max(PCA_VARIANCE_FLOOR);
        PcaModel::new(mean, axes, variances, residual)
    }

    /// Negative log-likelihood of each sample under the PCA Gaussian;
    /// higher = more anomalous.
    pub fn score(&self, samples: &Tensor<f64>) -> Result<Vec<f64>> {
        let d = self.dim();
        let k = self.n_components();
        if samples.row_len() != d {
            return Err(Error::shape(format!(
                "samples have dim {}, model has {d}",
                samples.row_len()
            )));
        }
        let log_det: f64 = d as f64 * (2.0 * std::f64::consts::PI).ln()
            + self.variances.iter().map(|v| v.ln()).sum::<f64>()
            + (d - k) as f64 * self.residual_variance.ln();
        let mut out = Vec::with_capacity(samples.rows());
        let mut centered = vec![0.0; d];
        for i in 0..samples.rows() {
            for (c, (&v, &m)) in centered.iter_mut().zip(samples.row(i).iter().zip(&self.mean)) {
                *c = v - m;
            }
            let norm2: f64 = centered.iter().map(|c| c * c).sum();
            let mut on_axis = 0.0;
            let mut proj2 = 0.0;
            for (ci, &var) in self.variances.iter().enumerate() {
                let t: f64 = self.axes[ci * d..(ci + 1) * d]
                    .iter()
                    .zip(&centered)
                    .map(|(a, c)| a * c)
                    .sum();
                on_axis += t * t / var;
                proj2 += t * t;
            }
            let r2 = (norm2 - proj2).max(0.0);
            out.push(0.5 * (log_det + on_axis + r2 / self.residual_variance));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, config_hash: &[u8; 32]) -> Result<()> {
        let d = self.dim();
        let k = self.n_components();
        let entries = vec![
            ("pca.mean".to_string(), Tensor::new(vec![d], self.mean.clone())?),
            ("pca.axes".to_string(), Tensor::new(vec![k, d], self.axes.clone())?),
            (
                "pca.variances".to_string(),
                Tensor::new(vec![k], self.variances.clone())?,
            ),
            (
                "pca.residual".to_string(),
                Tensor::new(vec![1], vec![self.residual_variance])?,
            ),
        ];
        save_tensors(path, &entries, config_hash)
    }

    pub fn load(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<PcaModel> {
        let mut entries: std::collections::BTreeMap<String, Tensor<f64>> =
            load_tensors(path, expected_hash)?.into_iter().collect();
        let mut take = |name: &str| {
            entries
                .remove(name)
                .ok_or_else(|| Error::checkpoint(format!("missing tensor {name}")))
        };
        let mean = take("pca.mean")?.into_data();
        let axes = take("pca.axes")?.into_data();
        let variances = take("pca.variances")?.into_data();
        let residual = take("pca.residual")?.into_data();
        if residual.len() != 1 {
            return Err(Error::checkpoint("residual tensor must hold one value"));
        }
        PcaModel::new(mean, axes, variances, residual[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    fn random_samples(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            data.push(rng.random_range(-1.0..1.0));
        }
        // stretch a few directions so the spectrum has real structure
        for (i, v) in data.iter_mut().enumerate() {
            let col = i % d;
            *v *= 1.0 + 3.0 / (1 + col) as f64;
        }
        tensor(n, d, data)
    }

    #[test]
    fn line_data_yields_axis_along_line() {
        let pts: Vec<f64> = (0..8).flat_map(|i| [i as f64, i as f64]).collect();
        let model = PcaModel::fit(&tensor(8, 2, pts), 1).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        let dot = (model.axes[0] * inv + model.axes[1] * inv).abs();
        assert!((dot - 1.0).abs() < 1e-9, "axis {:?}", &model.axes);
        assert_eq!(model.residual_variance, PCA_VARIANCE_FLOOR);
    }

    #[test]
    fn axes_are_orthonormal_and_variances_sorted() {
        let model = PcaModel::fit(&random_samples(50, 10, 1), 4).unwrap();
        // constructor validates orthonormality within 1e-8; re-check spacing
        for w in model.variances.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_eq!(model.n_components(), 4);
        assert_eq!(model.dim(), 10);
    }

    /// Independent oracle: covariance by naive triple loop, eigenvectors by
    /// power iteration with deflation.
    fn power_iteration_axes(samples: &Tensor<f64>, n_axes: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = samples.rows();
        let d = samples.row_len();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += samples.row(i)[j] / n as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += (samples.row(i)[a] - mean[a])
                        * (samples.row(i)[b] - mean[b])
                        / (n - 1) as f64;
                }
            }
        }
        let mut axes: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..n_axes {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for _ in 0..2000 {
                let mut w = vec![0.0; d];
                for a in 0..d {
                    for b in 0..d {
                        w[a] += cov[a * d + b] * v[b];
                    }
                }
                for prev in &axes {
                    let t: f64 = w.iter().zip(prev).map(|(x, p)| x * p).sum();
                    for (x, p) in w.iter_mut().zip(prev) {
                        *x -= t * p;
                    }
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut w {
                    *x /= norm;
                }
                v = w;
            }
            let mut cv = vec![0.0; d];
            for a in 0..d {
                for b in 0..d {
                    cv[a] += cov[a * d + b] * v[b];
                }
            }
            values.push(v.iter().zip(&cv).map(|(a, b)| a * b).sum());
            axes.push(v);
        }
        (axes, values)
    }

    #[test]
    fn matches_power_iteration_oracle() {
        let samples = random_samples(50, 10, 7);
        let model = PcaModel::fit(&samples, 3).unwrap();
        let (axes, values) = power_iteration_axes(&samples, 3);
        for i in 0..3 {
            let dot: f64 = model.axes[i * 10..(i + 1) * 10]
                .iter()
                .zip(&axes[i])
                .map(|(a, b)| a * b)
                .sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-6,
                "axis {i} disagrees, |dot| = {}",
                dot.abs()
            );
            let rel = (model.variances[i] - values[i]).abs() / values[i];
            assert!(rel < 1e-6, "eigenvalue {i}: {} vs {}", model.variances[i], values[i]);
        }
    }

    #[test]
    fn score_matches_hand_computed_gaussian() {
        // points with mean 0, covariance diag(8/3, 2/3)
        let pts = vec![2.0, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let model = PcaModel::fit(&tensor(4, 2, pts), 1).unwrap();
        assert!((model.variances[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((model.residual_variance - 2.0 / 3.0).abs() < 1e-12);

        let x = tensor(1, 2, vec![1.0, 2.0]);
        let got = model.score(&x).unwrap()[0];
        let two_pi = 2.0 * std::f64::consts::PI;
        let expect = 0.5
            * (2.0 * two_pi.ln() + (8.0f64 / 3.0).ln() + (2.0f64 / 3.0).ln()
                + 1.0 / (8.0 / 3.0)
                + 4.0 / (2.0 / 3.0));
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn score_grows_away_from_mean_and_is_minimal_at_mean() {
        let model = PcaModel::fit(&random_samples(60, 6, 3), 2).unwrap();
        let dir = [0.3, -0.1, 0.5, 0.2, -0.4, 0.1];
        let mut prev = f64::NEG_INFINITY;
        for step in 0..5 {
            let mut x = model.mean.clone();
            for (xi, di) in x.iter_mut().zip(dir) {
                *xi += di * step as f64;
            }
            let s = model.score(&tensor(1, 6, x)).unwrap()[0];
            assert!(s > prev, "step {step}: {s} <= {prev}");
            prev = s;
        }
    }

    #[test]
    fn score_is_invariant_to_axis_sign_flips() {
        let samples = random_samples(40, 5, 11);
        let model = PcaModel::fit(&samples, 2).unwrap();
        let mut flipped_axes = model.axes.clone();
        for v in &mut flipped_axes[0..5] {
            *v = -*v;
        }
        let flipped = PcaModel::new(
            model.mean.clone(),
            flipped_axes,
            model.variances.clone(),
            model.residual_variance,
        )
        .unwrap();
        let x = random_samples(3, 5, 12);
        let a = model.score(&x).unwrap();
        let b = flipped.score(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn training_scores_stay_finite_on_degenerate_data() {
        // rank-1 data: every discarded direction has zero variance
        let pts: Vec<f64> = (0..6).flat_map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let model = PcaModel::fit(&tensor(6, 3, pts.clone()), 1).unwrap();
        for s in model.score(&tensor(6, 3, pts)).unwrap() {
            assert!(s.is_finite());
        }
    }

    #[test]
    fn reconstruction_error_shrinks_with_more_components() {
        let samples = random_samples(50, 8, 21);
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let model = PcaModel::fit(&samples, k).unwrap();
            let d = model.dim();
            let mut err = 0.0;
            for i in 0..samples.rows() {
                let centered: Vec<f64> = samples
                    .row(i)
                    .iter()
                    .zip(&model.mean)
                    .map(|(&v, &m)| v - m)
                    .collect();
                let mut recon = vec![0.0; d];
                for ci in 0..k {
                    let axis = &model.axes[ci * d..(ci + 1) * d];
                    let t: f64 = axis.iter().zip(&centered).map(|(a, c)| a * c).sum();
                    for (r, a) in recon.iter_mut().zip(axis) {
                        *r += t * a;
                    }
                }
                err += centered
                    .iter()
                    .zip(&recon)
                    .map(|(c, r)| (c - r) * (c - r))
                    .sum::<f64>();
            }
            assert!(err <= prev + 1e-9, "k={k}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn rejects_bad_k() {
        let samples = random_samples(10, 4, 2);
        assert!(PcaModel::fit(&samples, 0).is_err());
        assert!(PcaModel::fit(&samples, 4).is_err());
        assert!(PcaModel::fit(&samples, 9).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.clvc");
        let model = PcaModel::fit(&random_samples(30, 6, 5), 3).unwrap();
        let hash = [3u8; 32];
        model.save(&path, &hash).unwrap();
        let back = PcaModel::load(&path, Some(&hash)).unwrap();
        assert_eq!(model.mean, back.mean);
        assert_eq!(model.axes, back.axes);
        assert_eq!(model.variances, back.variances);
        assert_eq!(model.residual_variance, back.residual_variance);
    }
}
