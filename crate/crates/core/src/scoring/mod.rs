//! Anomaly scoring on latent codes and reconstruction errors.
//!
//! Every method produces a [`ScoreMatrix`] whose entries are
//! likelihood-like: higher always means "more normal". Per-class methods
//! have one column per normal class; error-based methods have a single
//! negated column. The anomaly score of a sample is the negated row
//! maximum, so one ranking convention serves every method and merge.

pub mod roc;

use crate::error::{Error, Result};
use crate::geometry::ClusterCenters;
use crate::Tensor;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
pub use roc::roc_auc;

/// Lower bound for density values, keeping them strictly positive for the
/// geometric merge even when the exponent underflows.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Variance floor for fitted diagonal Gaussians.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Diagonal ridge added when a class covariance is not positive definite.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// What the entries of a [`ScoreMatrix`] are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Strictly positive density values.
    Likelihood,
    /// Negated errors or distances (at most zero).
    NegatedError,
}

/// Per-sample, per-column normality scores. Higher = more normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    cols: usize,
    /// Column labels for per-class methods; `None` for single-column ones.
    class_ids: Option<Vec<u8>>,
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreMatrix {
    pub fn new(
        n: usize,
        cols: usize,
        values: Vec<f64>,
        class_ids: Option<Vec<u8>>,
        kind: ScoreKind,
    ) -> Result<ScoreMatrix> {
        if cols == 0 || values.len() != n * cols {
            return Err(Error::shape(format!(
                "{} values for a {n}x{cols} score matrix",
                values.len()
            )));
        }
        if let Some(ids) = &class_ids {
            if ids.len() != cols {
                return Err(Error::shape(format!(
                    "{} class ids for {cols} columns",
                    ids.len()
                )));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite score"));
        }
        if kind == ScoreKind::Likelihood && values.iter().any(|&v| v <= 0.0) {
            return Err(Error::numeric("likelihood scores must be positive"));
        }
        Ok(ScoreMatrix {
            n,
            cols,
            class_ids,
            values,
            kind,
        })
    }

    /// Single-column matrix from per-sample errors (entries are `-error`).
    pub fn from_errors(errors: &[f64]) -> Result<ScoreMatrix> {
        ScoreMatrix::new(
            errors.len(),
            1,
            errors.iter().map(|e| -e).collect(),
            None,
            ScoreKind::NegatedError,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn class_ids(&self) -> Option<&[u8]> {
        self.class_ids.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Index of the best (most normal) column per row.
    pub fn best_class_index(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    /// Anomaly score per sample: the negated row maximum, so samples that
    /// fit no class well score high.
    pub fn anomaly_scores(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| -self.row(i)[self.best_class_index(i)])
            .collect()
    }
}

/// Density of the fixed unit-variance prior component at each class center:
/// `(2 pi)^(-d/2) exp(-|z - c|^2 / 2)`, floored at [`DENSITY_FLOOR`].
pub fn latent_fixed_pdf(
    latents: &Tensor<f64>,
    centers: &ClusterCenters,
    class_ids: &[u8],
) -> Result<ScoreMatrix> {
    if class_ids.len() != centers.len() {
        return Err(Error::shape(format!(
            "{} class ids for {} centers",
            class_ids.len(),
            centers.len()
        )));
    }
    let d = centers.dim();
    if latents.row_len() != d {
        return Err(Error::shape(format!(
            "latents have dim {}, centers {d}",
            latents.row_len()
        )));
    }
    let n = latents.rows();
    let norm = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
    let mut values = Vec::with_capacity(n * class_ids.len());
    for i in 0..n {
        let z = latents.row(i);
        for ci in 0..class_ids.len() {
            let c = centers.center_for_class(ci);
            let dist2: f64 = z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            values.push((norm * (-0.5 * dist2).exp()).max(DENSITY_FLOOR));
        }
    }
    ScoreMatrix::new(n, class_ids.len(), values, Some(class_ids.to_vec()), ScoreKind::Likelihood)
}

/// Per-class diagonal Gaussian fitted to training latents.
#[derive(Debug, Clone)]
pub struct ClassGaussians {
    class_ids: Vec<u8>,
    dim: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl ClassGaussians {
    /// Fit with population means/variances per class; `class_idx[i]` is the
    /// class column of sample `i`. Variances are floored at
    /// [`VARIANCE_FLOOR`] (with a warning, since a floored fit means the
    /// latents collapsed along some axis).
    pub fn fit(
        latents: &Tensor<f64>,
        class_idx: &[usize],
        class_ids: &[u8],
    ) -> Result<ClassGaussians> {
        let n = latents.rows();
        let d = latents.row_len();
        let k = class_ids.len();
        if class_idx.len() != n {
            return Err(Error::shape(format!(
                "{} class indices for {n} latents",
                class_idx.len()
            )));
        }
        if k == 0 {
            return Err(Error::config("no classes to fit"));
        }
        let mut counts = vec![0usize; k];
        let mut means = vec![0.0; k * d];
        for (i, &ci) in class_idx.iter().enumerate() {
            if ci >= k {
                return Err(Error::config(format!("class index {ci} out of range")));
            }
            counts[ci] += 1;
            for (m, &v) in means[ci * d..(ci + 1) * d].iter_mut().zip(latents.row(i)) {
                *m += v;
            }
        }
        for (ci, &count) in counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::config(format!(
                    "class {} has no training samples",
                    class_ids[ci]
                )));
            }
            for m in &mut means[ci * d..(ci + 1) * d] {
                *m /= count as f64;
            }
        }
        let mut variances = vec![0.0; k * d];
        for (i, &ci) in class_idx.iter().enumerate() {
            for j in 0..d {
                let dv = latents.row(i)[j] - means[ci * d + j];
                variances[ci * d + j] += dv * dv;
            }
        }
        let mut floored = false;
        for (ci, &count) in counts.iter().enumerate() {
            for v in &mut variances[ci * d..(ci + 1) * d] {
                *v /= count as f64;
                if *v < VARIANCE_FLOOR {
                    *v = VARIANCE_FLOOR;
                    floored = true;
                }
            }
        }
        if floored {
            log::warn!("some fitted variances hit the {VARIANCE_FLOOR} floor; latents are degenerate along an axis");
        }
        Ok(ClassGaussians {
            class_ids: class_ids.to_vec(),
            dim: d,
            means,
            variances,
        })
    }

    pub fn class_ids(&self) -> &[u8] {
        &self.class_ids
    }

    pub fn mean(&self, ci: usize) -> &[f64] {
        &self.means[ci * self.dim..(ci + 1) * self.dim]
    }

    pub fn variance(&self, ci: usize) -> &[f64] {
        &self.variances[ci * self.dim..(ci + 1) * self.dim]
    }

    /// Density of each class Gaussian at each latent, floored at
    /// [`DENSITY_FLOOR`].
    pub fn score(&self, latents: &Tensor<f64>) -> Result<ScoreMatrix> {
        if latents.row_len() != self.dim {
            return Err(Error::shape(format!(
                "latents have dim {}, fit had {}",
                latents.row_len(),
                self.dim
            )));
        }
        let n = latents.rows();
        let k = self.class_ids.len();
        let mut values = Vec::with_capacity(n * k);
        for i in 0..n {
            let z = latents.row(i);
            for ci in 0..k {
                let mu = self.mean(ci);
                let var = self.variance(ci);
                let mut log_pdf = 0.0;
                for j in 0..self.dim {
                    let dv = z[j] - mu[j];
                    log_pdf += -0.5 * (2.0 * std::f64::consts::PI * var[j]).ln()
                        - 0.5 * dv * dv / var[j];
                }
                values.push(log_pdf.exp().max(DENSITY_FLOOR));
            }
        }
        ScoreMatrix::new(n, k, values, Some(self.class_ids.clone()), ScoreKind::Likelihood)
    }
}

/// Per-class full-covariance Mahalanobis distance model.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    class_ids: Vec<u8>,
    means: Vec<DVector<f64>>,
    precisions: Vec<DMatrix<f64>>,
}

impl MahalanobisModel {
    /// Fit per-class sample covariances (divisor n-1). Classes whose
    /// covariance is not positive definite get a [`COVARIANCE_RIDGE`]
    /// diagonal ridge, with a warning.
    pub fn fit(
        latents: &Tensor<f64>,
        class_idx: &[usize],
        class_ids: &[u8],
    ) -> Result<MahalanobisModel> {
        let n = latents.rows();
        let d = latents.row_len();
        let k = class_ids.len();
        if class_idx.len() != n {
            return Err(Error::shape(format!(
                "{} class indices for {n} latents",
                class_idx.len()
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &ci) in class_idx.iter().enumerate() {
            if ci >= k {
                return Err(Error::config(format!("class index {ci} out of range")));
            }
            by_class[ci].push(i);
        }
        let mut means = Vec::with_capacity(k);
        let mut precisions = Vec::with_capacity(k);
        for (ci, rows) in by_class.iter().enumerate() {
            if rows.len() < 2 {
                return Err(Error::config(format!(
                    "class {} has {} samples, need at least 2 for a covariance",
                    class_ids[ci],
                    rows.len()
                )));
            }
            let mut mean = DVector::zeros(d);
            for &i in rows {
                mean += DVector::from_row_slice(latents.row(i));
            }
            mean /= rows.len() as f64;
            let mut cov = DMatrix::zeros(d, d);
            for &i in rows {
                let c = DVector::from_row_slice(latents.row(i)) - &mean;
                cov += &c * c.transpose();
            }
            cov /= (rows.len() - 1) as f64;
            let chol = match Cholesky::new(cov.clone()) {
                Some(c) => c,
                None => {
                    log::warn!(
                        "class {} covariance is singular; adding ridge {COVARIANCE_RIDGE}",
                        class_ids[ci]
                    );
                    let ridged = cov + DMatrix::identity(d, d) * COVARIANCE_RIDGE;
                    Cholesky::new(ridged).ok_or_else(|| {
                        Error::numeric(format!(
                            "class {} covariance not positive definite even with ridge",
                            class_ids[ci]
                        ))
                    })?
                }
            };
            means.push(mean);
            precisions.push(chol.inverse());
        }
        Ok(MahalanobisModel {
            class_ids: class_ids.to_vec(),
            means,
            precisions,
        })
    }

    /// Negated squared Mahalanobis distance to each class.
    pub fn score(&self, latents: &Tensor<f64>) -> Result<ScoreMatrix> {
        let d = self.means[0].len();
        if latents.row_len() != d {
            return Err(Error::shape(format!(
                "latents have dim {}, fit had {d}",
                latents.row_len()
            )));
        }
        let n = latents.rows();
        let k = self.class_ids.len();
        let mut values = Vec::with_capacity(n * k);
        for i in 0..n {
            let z = DVector::from_row_slice(latents.row(i));
            for ci in 0..k {
                let c = &z - &self.means[ci];
                let dist2 = (c.transpose() * &self.precisions[ci] * &c)[(0, 0)];
                values.push(-dist2);
            }
        }
        ScoreMatrix::new(n, k, values, Some(self.class_ids.clone()), ScoreKind::NegatedError)
    }
}

/// How ensemble members' score matrices are combined entry-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMethod {
    Arithmetic,
    /// Geometric mean; only valid for [`ScoreKind::Likelihood`] matrices.
    Geometric,
    Max,
    Min,
}

impl MergeMethod {
    pub fn parse(s: &str) -> Result<MergeMethod> {
        match s {
            "arithmetic" => Ok(MergeMethod::Arithmetic),
            "geometric" => Ok(MergeMethod::Geometric),
            "max" => Ok(MergeMethod::Max),
            "min" => Ok(MergeMethod::Min),
            other => Err(Error::config(format!(
                "unknown merge method {other:?} (expected arithmetic, geometric, max, or min)"
            ))),
        }
    }
}

impl std::fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MergeMethod::Arithmetic => "arithmetic",
            MergeMethod::Geometric => "geometric",
            MergeMethod::Max => "max",
            MergeMethod::Min => "min",
        })
    }
}

/// Combine members' matrices entry-wise. All members must agree on shape,
/// kind, and column labels.
pub fn merge_ensemble(members: &[&ScoreMatrix], method: MergeMethod) -> Result<ScoreMatrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::config("nothing to merge"))?;
    for m in &members[1..] {
        if m.n != first.n || m.cols != first.cols {
            return Err(Error::shape(format!(
                "member shape {}x{} differs from {}x{}",
                m.n, m.cols, first.n, first.cols
            )));
        }
        if m.kind != first.kind {
            return Err(Error::config("members mix score kinds"));
        }
        if m.class_ids != first.class_ids {
            return Err(Error::config("members disagree on class columns"));
        }
    }
    if method == MergeMethod::Geometric && first.kind != ScoreKind::Likelihood {
        return Err(Error::config(
            "geometric merge needs positive likelihood scores",
        ));
    }
    let len = first.values.len();
    let k = members.len() as f64;
    let mut values = vec![0.0; len];
    for (e, out) in values.iter_mut().enumerate() {
        *out = match method {
            MergeMethod::Arithmetic => members.iter().map(|m| m.values[e]).sum::<f64>() / k,
            MergeMethod::Geometric => {
                (members.iter().map(|m| m.values[e].ln()).sum::<f64>() / k).exp()
            }
            MergeMethod::Max => members
                .iter()
                .map(|m| m.values[e])
                .fold(f64::NEG_INFINITY, f64::max),
            MergeMethod::Min => members
                .iter()
                .map(|m| m.values[e])
                .fold(f64::INFINITY, f64::min),
        };
        if method == MergeMethod::Geometric {
            *out = out.max(DENSITY_FLOOR);
        }
    }
    ScoreMatrix::new(first.n, first.cols, values, first.class_ids.clone(), first.kind)
}

/// One point of the ensemble-size curve: AUC statistics over subsets of
/// `k` members.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub mean_auc: f64,
    /// 2.5th percentile of subset AUCs.
    pub lo: f64,
    /// 97.5th percentile of subset AUCs.
    pub hi: f64,
    pub n_subsets: usize,
}

/// Subsets per curve point: exhaustive when there are at most this many
/// combinations, otherwise this many seeded random draws.
pub const CURVE_MAX_EXHAUSTIVE: u128 = 50;
pub const CURVE_RANDOM_DRAWS: usize = 200;

/// AUC as a function of ensemble size: for each k from 1 to the member
/// count, merge every subset of k members (or a seeded sample of subsets
/// when there are more than [`CURVE_MAX_EXHAUSTIVE`]) and summarize the
/// subset AUCs.
pub fn ensemble_auc_curve(
    members: &[&ScoreMatrix],
    is_anomaly: &[bool],
    method: MergeMethod,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if members.is_empty() {
        return Err(Error::config("no ensemble members"));
    }
    let m = members.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(m);
    for k in 1..=m {
        let subsets: Vec<Vec<usize>> = if binomial(m, k) <= CURVE_MAX_EXHAUSTIVE {
            combinations(m, k)
        } else {
            (0..CURVE_RANDOM_DRAWS)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..m).collect();
                    idx.shuffle(&mut rng);
                    idx.truncate(k);
                    idx.sort_unstable();
                    idx
                })
                .collect()
        };
        let mut aucs = Vec::with_capacity(subsets.len());
        for subset in &subsets {
            let chosen: Vec<&ScoreMatrix> = subset.iter().map(|&i| members[i]).collect();
            let merged = merge_ensemble(&chosen, method)?;
            aucs.push(roc_auc(&merged.anomaly_scores(), is_anomaly)?.auc);
        }
        aucs.sort_by(f64::total_cmp);
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        curve.push(CurvePoint {
            k,
            mean_auc: mean,
            lo: percentile(&aucs, 2.5),
            hi: percentile(&aucs, 97.5),
            n_subsets: aucs.len(),
        });
    }
    Ok(curve)
}

/// Linear-interpolation percentile of an ascending slice, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=100.0).contains(&p));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > CURVE_MAX_EXHAUSTIVE {
            return c;
        }
    }
    c
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// The `k` anomalies scored most normal and the `k` normals scored most
/// anomalous: the instructive failures for a report.
pub fn hardest_examples(
    scores: &[f64],
    is_anomaly: &[bool],
    k: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut missed: Vec<usize> = (0..scores.len()).filter(|&i| is_anomaly[i]).collect();
    missed.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    missed.truncate(k);
    let mut alarms: Vec<usize> = (0..scores.len()).filter(|&i| !is_anomaly[i]).collect();
    alarms.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    alarms.truncate(k);
    (missed, alarms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::circle_centers;

    fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn anomaly_scores_negate_row_maximum() {
        let m = ScoreMatrix::new(
            2,
            2,
            vec![0.2, 0.7, 0.1, 0.05],
            Some(vec![0, 1]),
            ScoreKind::Likelihood,
        )
        .unwrap();
        assert_eq!(m.anomaly_scores(), vec![-0.7, -0.1]);
        assert_eq!(m.best_class_index(0), 1);
        assert_eq!(m.best_class_index(1), 0);
    }

    #[test]
    fn error_matrix_scores_are_the_errors() {
        let m = ScoreMatrix::from_errors(&[0.3, 0.01]).unwrap();
        assert_eq!(m.anomaly_scores(), vec![0.3, 0.01]);
        assert_eq!(m.kind(), ScoreKind::NegatedError);
    }

    #[test]
    fn fixed_pdf_peaks_at_center() {
        let centers = circle_centers(2).unwrap();
        let z = tensor(3, 2, vec![1.0, 0.0, -1.0, 0.0, 5.0, 5.0]);
        let m = latent_fixed_pdf(&z, &centers, &[3, 8]).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((m.row(0)[0] - peak).abs() < 1e-15);
        assert!((m.row(1)[1] - peak).abs() < 1e-15);
        assert!(m.row(0)[1] < m.row(0)[0]);
        assert!(m.row(2).iter().all(|&v| v >= DENSITY_FLOOR));
        let far = tensor(1, 2, vec![1e3, 1e3]);
        let mf = latent_fixed_pdf(&far, &centers, &[3, 8]).unwrap();
        assert_eq!(mf.row(0)[0], DENSITY_FLOOR);
    }

    #[test]
    fn fitted_gaussians_recover_mean_variance_and_density() {
        // class 0 at (0, 0) with var (1, 4); class 1 at (10, 10), var 1e-12 -> floored
        let data = vec![
            -1.0, -2.0, 1.0, 2.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0,
        ];
        let latents = tensor(5, 2, data);
        let idx = [0usize, 0, 0, 1, 1];
        let g = ClassGaussians::fit(&latents, &idx, &[4, 7]).unwrap();
        assert_eq!(g.mean(0), &[0.0, 0.0]);
        let v = g.variance(0);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12 && (v[1] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.variance(1), &[VARIANCE_FLOOR, VARIANCE_FLOOR]);

        let m = g.score(&tensor(1, 2, vec![0.5, -1.0])).unwrap();
        let (v0, v1) = (2.0 / 3.0, 8.0 / 3.0);
        let expect = (2.0 * std::f64::consts::PI * v0).powf(-0.5)
            * (-0.5 * 0.25 / v0).exp()
            * (2.0 * std::f64::consts::PI * v1).powf(-0.5)
            * (-0.5 * 1.0 / v1).exp();
        assert!((m.row(0)[0] - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn fitted_gaussians_reject_empty_class() {
        let latents = tensor(2, 2, vec![0.0; 4]);
        assert!(ClassGaussians::fit(&latents, &[0, 0], &[1, 2]).is_err());
    }

    #[test]
    fn mahalanobis_matches_hand_inverse() {
        // correlated 2-D cloud with exactly computable covariance
        let pts = vec![
            1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 2.0, 0.0, -2.0, 0.0,
        ];
        let latents = tensor(6, 2, pts);
        let idx = [0usize; 6];
        let model = MahalanobisModel::fit(&latents, &idx, &[0]).unwrap();
        // mean (0,0); cov = diag(12/5, 4/5)
        let m = model.score(&tensor(1, 2, vec![3.0, 1.0])).unwrap();
        let expect = -(9.0 / (12.0 / 5.0) + 1.0 / (4.0 / 5.0));
        assert!((m.row(0)[0] - expect).abs() < 1e-9, "{} vs {expect}", m.row(0)[0]);
        assert_eq!(m.kind(), ScoreKind::NegatedError);
    }

    #[test]
    fn mahalanobis_survives_degenerate_covariance() {
        // collinear points: singular covariance, ridge takes over
        let latents = tensor(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let model = MahalanobisModel::fit(&latents, &[0; 4], &[0]).unwrap();
        let m = model.score(&tensor(1, 2, vec![0.0, 1.0])).unwrap();
        assert!(m.row(0)[0].is_finite());
        assert!(m.row(0)[0] < 0.0);
    }

    #[test]
    fn merges_compute_expected_entries() {
        let a = ScoreMatrix::new(1, 2, vec![4.0, 1.0], Some(vec![0, 1]), ScoreKind::Likelihood)
            .unwrap();
        let b = ScoreMatrix::new(1, 2, vec![1.0, 4.0], Some(vec![0, 1]), ScoreKind::Likelihood)
            .unwrap();
        let members = [&a, &b];
        let arith = merge_ensemble(&members, MergeMethod::Arithmetic).unwrap();
        assert_eq!(arith.row(0), &[2.5, 2.5]);
        let geo = merge_ensemble(&members, MergeMethod::Geometric).unwrap();
        assert!((geo.row(0)[0] - 2.0).abs() < 1e-12);
        assert!((geo.row(0)[1] - 2.0).abs() < 1e-12);
        let mx = merge_ensemble(&members, MergeMethod::Max).unwrap();
        assert_eq!(mx.row(0), &[4.0, 4.0]);
        let mn = merge_ensemble(&members, MergeMethod::Min).unwrap();
        assert_eq!(mn.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn merge_rejects_mismatches() {
        let a = ScoreMatrix::new(1, 2, vec![4.0, 1.0], Some(vec![0, 1]), ScoreKind::Likelihood)
            .unwrap();
        let b = ScoreMatrix::new(1, 2, vec![1.0, 4.0], Some(vec![0, 2]), ScoreKind::Likelihood)
            .unwrap();
        assert!(merge_ensemble(&[&a, &b], MergeMethod::Arithmetic).is_err());
        let c = ScoreMatrix::from_errors(&[0.5, 0.25]).unwrap();
        let d = ScoreMatrix::from_errors(&[0.5, 0.25]).unwrap();
        assert!(merge_ensemble(&[&c, &d], MergeMethod::Geometric).is_err());
        assert!(merge_ensemble(&[&a, &c], MergeMethod::Arithmetic).is_err());
        assert!(merge_ensemble(&[], MergeMethod::Arithmetic).is_err());
    }

    #[test]
    fn merge_method_parsing() {
        assert_eq!(MergeMethod::parse("arithmetic").unwrap(), MergeMethod::Arithmetic);
        assert_eq!(MergeMethod::parse("geometric").unwrap(), MergeMethod::Geometric);
        assert_eq!(MergeMethod::parse("max").unwrap(), MergeMethod::Max);
        assert_eq!(MergeMethod::parse("min").unwrap(), MergeMethod::Min);
        assert!(MergeMethod::parse("median").is_err());
    }

    #[test]
    fn curve_is_deterministic_and_exhaustive_for_small_ensembles() {
        // three members with different noise on the same signal
        let flags: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let mk = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = flags
                .iter()
                .map(|&f| {
                    let base = if f { 0.2 } else { 0.8 };
                    use rand::Rng;
                    (base + rng.random_range(-0.3..0.3f64)).max(1e-6)
                })
                .collect();
            ScoreMatrix::new(flags.len(), 1, values, None, ScoreKind::Likelihood).unwrap()
        };
        let (a, b, c) = (mk(1), mk(2), mk(3));
        let members = [&a, &b, &c];
        let curve = ensemble_auc_curve(&members, &flags, MergeMethod::Arithmetic, 5).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0].n_subsets, 3);
        assert_eq!(curve[1].n_subsets, 3);
        assert_eq!(curve[2].n_subsets, 1);
        for p in &curve {
            assert!(p.lo <= p.mean_auc && p.mean_auc <= p.hi);
        }
        let again = ensemble_auc_curve(&members, &flags, MergeMethod::Arithmetic, 5).unwrap();
        assert_eq!(curve, again);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert_eq!(percentile(&[7.0], 2.5), 7.0);
    }

    #[test]
    fn binomial_and_combinations_agree() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
        assert!(binomial(30, 15) > CURVE_MAX_EXHAUSTIVE);
    }

    #[test]
    fn hardest_examples_pick_worst_ranked() {
        let scores = [0.9, 0.1, 0.5, 0.8, 0.2];
        let flags = [true, true, false, false, true];
        let (missed, alarms) = hardest_examples(&scores, &flags, 2);
        assert_eq!(missed, vec![1, 4]);
        assert_eq!(alarms, vec![3, 2]);
    }
}
