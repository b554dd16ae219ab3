//! Supervised cross-view subspace (XQDA) and metric matchers (cosine,
//! Mahalanobis, KISSME).
//!
//! Difference vectors are formed between the gallery-view and probe-view
//! training rows: `x_i − y_i` for the same subject ("intra-person") and
//! `x_i − y_j`, `i ≠ j` ("extra-person"). Both difference sets are taken as
//! zero-mean, so their covariances are plain second-moment matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, cholesky, sorted_symmetric_eigen, spd_inverse, symmetrize};

pub const DEFAULT_XQDA_REG: f64 = 1e-3;

/// Extra-person pairs kept per training subject.
pub const EXTRA_PAIRS_PER_SUBJECT: usize = 20;

/// Seed of the extra-person pair subsampling.
pub const EXTRA_PAIR_SEED: u64 = 0x5eed_0f_ea;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimPolicy {
    /// Keep exactly `r` directions.
    Fixed(usize),
    /// Keep directions whose generalized eigenvalue exceeds the threshold
    /// (at least one is always kept).
    EigenvalueAbove(f64),
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy::EigenvalueAbove(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XqdaParams {
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default)]
    pub dim: DimPolicy,
}

fn default_reg() -> f64 {
    DEFAULT_XQDA_REG
}

impl Default for XqdaParams {
    fn default() -> Self {
        XqdaParams {
            reg: DEFAULT_XQDA_REG,
            dim: DimPolicy::default(),
        }
    }
}

/// Linear projection `m → r` with an optional metric in the projected space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub projection: DMatrix<f64>,
    pub metric: Option<DMatrix<f64>>,
    /// Generalized eigenvalues of the retained directions, descending.
    pub eigenvalues: Vec<f64>,
}

impl SubspaceModel {
    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub matrix: DMatrix<f64>,
}

/// Second-moment matrix `(1/N) Σ d dᵀ` of difference vectors stored as rows.
fn second_moment(diffs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = diffs.tr_mul(diffs) / diffs.nrows() as f64;
    symmetrize(&mut s);
    s
}

fn paired_views(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>) -> Result<()> {
    if d_x.shape() != d_y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "training views are {:?} and {:?}",
            d_x.shape(),
            d_y.shape()
        )));
    }
    if d_x.nrows() < 2 {
        return Err(Error::InsufficientData(
            "at least two training subjects are needed".into(),
        ));
    }
    Ok(())
}

/// Intra-person differences `x_i − y_i`, one per row.
pub fn intra_differences(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    paired_views(d_x, d_y)?;
    Ok(d_x - d_y)
}

/// Extra-person differences `x_i − y_j` (`i ≠ j`), one per row. When there
/// are more than `EXTRA_PAIRS_PER_SUBJECT · n` such pairs a fixed-seed
/// uniform subset of that size is used.
pub fn extra_differences(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    paired_views(d_x, d_y)?;
    let n = d_x.nrows();
    let total = n * (n - 1);
    let cap = EXTRA_PAIRS_PER_SUBJECT * n;
    // Pair index k enumerates (i, j≠i) row by row.
    let decode = |k: usize| {
        let i = k / (n - 1);
        let r = k % (n - 1);
        (i, if r >= i { r + 1 } else { r })
    };
    let mut picks: Vec<usize> = if total > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(EXTRA_PAIR_SEED);
        sample(&mut rng, total, cap).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();
    let m = d_x.ncols();
    Ok(DMatrix::from_fn(picks.len(), m, |r, c| {
        let (i, j) = decode(picks[r]);
        d_x[(i, c)] - d_y[(j, c)]
    }))
}

/// Generalized symmetric eigenproblem `A v = μ B v` with `B` positive
/// definite. Eigenvectors are unit-norm columns, eigenvalues descending.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = cholesky(b, "intra-person covariance")?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let (mu, u) = sorted_symmetric_eigen(&c);
    let mut v = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    for mut col in v.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    Ok((mu, v))
}

/// Cross-view quadratic discriminant subspace.
///
/// Projection columns are the leading generalized eigenvectors of
/// `Σ_E v = μ Σ_I v` (`Σ_I` regularized by `reg·I`); the metric is
/// `(WᵀΣ_IW)⁻¹ − (WᵀΣ_EW)⁻¹` in the projected space.
pub fn fit_xqda(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>, params: &XqdaParams) -> Result<SubspaceModel> {
    if !(params.reg >= 0.0 && params.reg.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "XQDA regularization must be nonnegative, got {}",
            params.reg
        )));
    }
    let intra = intra_differences(d_x, d_y)?;
    let extra = extra_differences(d_x, d_y)?;
    let sigma_i = add_diagonal(&second_moment(&intra), params.reg);
    let sigma_e = second_moment(&extra);
    let (mu, v) = generalized_eigen(&sigma_e, &sigma_i)?;

    let m = d_x.ncols();
    let r = match params.dim {
        DimPolicy::Fixed(r) => {
            if r == 0 || r > m {
                return Err(Error::InvalidParameter(format!(
                    "requested {r} XQDA dimensions, {m} available"
                )));
            }
            r
        }
        DimPolicy::EigenvalueAbove(t) => mu.iter().filter(|&&e| e > t).count().max(1),
    };
    let w = v.columns(0, r).into_owned();
    let pi = w.tr_mul(&sigma_i) * &w;
    let pe = w.tr_mul(&sigma_e) * &w;
    let mut metric = spd_inverse(&pi, "projected intra-person covariance")?
        - spd_inverse(&pe, "projected extra-person covariance")?;
    symmetrize(&mut metric);
    Ok(SubspaceModel {
        projection: w,
        metric: Some(metric),
        eigenvalues: mu[..r].to_vec(),
    })
}

/// Samples (rows) mapped into the subspace.
pub fn project(model: &SubspaceModel, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if samples.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have {} features, projection expects {}",
            samples.ncols(),
            model.input_dim()
        )));
    }
    Ok(samples * &model.projection)
}

fn psd_clip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_symmetric_eigen(m);
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0)));
    let mut out = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
    symmetrize(&mut out);
    out
}

/// KISSME metric `Σ_S⁻¹ − Σ_D⁻¹` projected onto the positive semidefinite
/// cone, from the two difference covariances.
pub fn kissme_from_covariances(sigma_s: &DMatrix<f64>, sigma_d: &DMatrix<f64>) -> Result<MetricModel> {
    if sigma_s.shape() != sigma_d.shape() || !sigma_s.is_square() {
        return Err(Error::DimensionMismatch(
            "covariances must be square and of equal size".into(),
        ));
    }
    let mut m = spd_inverse(sigma_s, "similar-pair covariance")?
        - spd_inverse(sigma_d, "dissimilar-pair covariance")?;
    symmetrize(&mut m);
    if is_diagonal(&m) {
        // Exact clipping without an eigensolver round trip.
        let mut out = m;
        for i in 0..out.nrows() {
            out[(i, i)] = out[(i, i)].max(0.0);
        }
        return Ok(MetricModel { matrix: out });
    }
    Ok(MetricModel { matrix: psd_clip(&m) })
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// KISSME from similar and dissimilar difference vectors (rows). `reg` is
/// added to both covariances; with `reg = 0` a singular covariance is an
/// error.
pub fn fit_kissme(similar: &DMatrix<f64>, dissimilar: &DMatrix<f64>, reg: f64) -> Result<MetricModel> {
    if similar.ncols() != dissimilar.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "difference sets have {} and {} dimensions",
            similar.ncols(),
            dissimilar.ncols()
        )));
    }
    if similar.nrows() == 0 || dissimilar.nrows() == 0 {
        return Err(Error::InsufficientData("empty difference set".into()));
    }
    let s = add_diagonal(&second_moment(similar), reg);
    let d = add_diagonal(&second_moment(dissimilar), reg);
    kissme_from_covariances(&s, &d)
}

/// Inverse covariance of the pooled (centered) samples, regularized by
/// `reg·I` before inversion.
pub fn fit_mahalanobis(samples: &DMatrix<f64>, reg: f64) -> Result<MetricModel> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(
            "Mahalanobis needs at least two samples".into(),
        ));
    }
    let mean = samples.row_mean();
    let centered = DMatrix::from_fn(n, samples.ncols(), |i, j| samples[(i, j)] - mean[j]);
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    symmetrize(&mut cov);
    let matrix = spd_inverse(&add_diagonal(&cov, reg), "pooled covariance")?;
    Ok(MetricModel { matrix })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Cosine,
    Mahalanobis,
    Kissme,
}

/// Cosine distance `1 − cos(a, b)`, or the quadratic form `(a−b)ᵀM(a−b)`.
pub fn metric_distance(
    kind: MetricKind,
    metric: Option<&MetricModel>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("metric input".into()));
    }
    match kind {
        MetricKind::Cosine => {
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::DegenerateCoding(
                    "cosine distance of a zero vector".into(),
                ));
            }
            Ok(1.0 - (a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
        }
        MetricKind::Mahalanobis | MetricKind::Kissme => {
            let m = metric.ok_or_else(|| {
                Error::InvalidParameter(format!("{kind:?} distance needs a metric matrix"))
            })?;
            if m.matrix.nrows() != a.len() || m.matrix.ncols() != a.len() {
                return Err(Error::DimensionMismatch(format!(
                    "metric is {:?}, vectors have length {}",
                    m.matrix.shape(),
                    a.len()
                )));
            }
            let d = a - b;
            Ok(d.dot(&(&m.matrix * &d)))
        }
    }
}

/// All pairwise distances between probe rows and gallery rows, `l_p × l_g`.
pub fn distance_matrix(
    kind: MetricKind,
    metric: Option<&MetricModel>,
    gallery: &DMatrix<f64>,
    probes: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(probes.nrows(), gallery.nrows());
    let g: Vec<DVector<f64>> = gallery.row_iter().map(|r| r.transpose()).collect();
    for j in 0..probes.nrows() {
        let p = probes.row(j).transpose();
        for (i, gi) in g.iter().enumerate() {
            out[(j, i)] = match metric_distance(kind, metric, &p, gi) {
                Ok(d) => d,
                Err(Error::DegenerateCoding(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix declared {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct SubspaceJson {
    input_dim: usize,
    dim: usize,
    projection: MatrixJson,
    metric: Option<MatrixJson>,
    eigenvalues: Vec<f64>,
}

impl SubspaceModel {
    /// JSON form: `{"input_dim", "dim", "projection": {"rows", "cols",
    /// "data"}, "metric": {...} | null, "eigenvalues"}` with row-major data.
    pub fn to_json(&self) -> Result<String> {
        let j = SubspaceJson {
            input_dim: self.input_dim(),
            dim: self.dim(),
            projection: MatrixJson::from_matrix(&self.projection),
            metric: self.metric.as_ref().map(MatrixJson::from_matrix),
            eigenvalues: self.eigenvalues.clone(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: SubspaceJson = serde_json::from_str(s)?;
        let projection = j.projection.into_matrix()?;
        if projection.shape() != (j.input_dim, j.dim) {
            return Err(Error::DimensionMismatch(
                "projection shape disagrees with declared dims".into(),
            ));
        }
        let metric = j.metric.map(MatrixJson::into_matrix).transpose()?;
        if let Some(m) = &metric {
            if m.shape() != (j.dim, j.dim) {
                return Err(Error::DimensionMismatch(
                    "metric shape disagrees with declared dim".into(),
                ));
            }
        }
        Ok(SubspaceModel {
            projection,
            metric,
            eigenvalues: j.eigenvalues,
        })
    }
}

impl MetricModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MatrixJson::from_matrix(&self.matrix))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: MatrixJson = serde_json::from_str(s)?;
        Ok(MetricModel {
            matrix: j.into_matrix()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn kissme_identical_statistics_is_zero() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = kissme_from_covariances(&s, &s).unwrap();
        assert!(m.matrix.amax() < 1e-15);
    }

    #[test]
    fn kissme_hand_built_diagonal() {
        // Σ_S = diag(1, 4), Σ_D = diag(4, 1), built from difference vectors.
        let sim = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let dis = DMatrix::from_row_slice(4, 2, &[4.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let m = fit_kissme(&sim, &dis, 0.0).unwrap();
        assert_eq!(m.matrix, DMatrix::from_row_slice(2, 2, &[0.75, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn kissme_singular_without_reg() {
        let sim = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let dis = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(fit_kissme(&sim, &dis, 0.0), Err(Error::Singular(_))));
        assert!(fit_kissme(&sim, &dis, 1e-3).is_ok());
    }

    #[test]
    fn project_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = randn(5, 3, &mut rng);
        let id = SubspaceModel {
            projection: DMatrix::identity(3, 3),
            metric: None,
            eigenvalues: vec![],
        };
        assert_eq!(project(&id, &s).unwrap(), s);
        let e1 = SubspaceModel {
            projection: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            metric: None,
            eigenvalues: vec![],
        };
        assert_eq!(project(&e1, &s).unwrap().column(0), s.column(0));
        let w = randn(3, 2, &mut rng);
        let model = SubspaceModel { projection: w.clone(), metric: None, eigenvalues: vec![] };
        let p = project(&model, &s).unwrap();
        for i in 0..5 {
            for k in 0..2 {
                let direct: f64 = (0..3).map(|c| s[(i, c)] * w[(c, k)]).sum();
                assert_relative_eq!(p[(i, k)], direct, epsilon = 1e-14);
            }
        }
        assert!(matches!(project(&model, &randn(2, 4, &mut rng)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn metric_distance_examples() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let eye = MetricModel { matrix: DMatrix::identity(3, 3) };
        for kind in [MetricKind::Cosine, MetricKind::Mahalanobis, MetricKind::Kissme] {
            assert!(metric_distance(kind, Some(&eye), &a, &a).unwrap().abs() < 1e-15);
            assert_eq!(
                metric_distance(kind, Some(&eye), &a, &b).unwrap(),
                metric_distance(kind, Some(&eye), &b, &a).unwrap()
            );
        }
        assert_relative_eq!(
            metric_distance(MetricKind::Kissme, Some(&eye), &a, &b).unwrap(),
            (&a - &b).norm_squared(),
            epsilon = 1e-14
        );
        assert!(matches!(
            metric_distance(MetricKind::Mahalanobis, None, &a, &b),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            metric_distance(MetricKind::Cosine, None, &a, &DVector::zeros(3)),
            Err(Error::DegenerateCoding(_))
        ));
    }

    #[test]
    fn metric_distance_matches_direct_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let g = randn(4, 4, &mut rng);
        let m = MetricModel { matrix: g.tr_mul(&g) };
        let a = randn(4, 1, &mut rng).column(0).into_owned();
        let b = randn(4, 1, &mut rng).column(0).into_owned();
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                direct += (a[i] - b[i]) * m.matrix[(i, j)] * (a[j] - b[j]);
            }
        }
        let got = metric_distance(MetricKind::Mahalanobis, Some(&m), &a, &b).unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn extra_pairs_subsampled_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dx = randn(30, 3, &mut rng);
        let dy = randn(30, 3, &mut rng);
        let e1 = extra_differences(&dx, &dy).unwrap();
        let e2 = extra_differences(&dx, &dy).unwrap();
        assert_eq!(e1.nrows(), 600);
        assert_eq!(e1, e2);
        let small = extra_differences(&dx.rows(0, 5).into_owned(), &dy.rows(0, 5).into_owned()).unwrap();
        assert_eq!(small.nrows(), 20);
    }

    #[test]
    fn xqda_fixed_dim_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let dx = randn(10, 3, &mut rng);
        let dy = randn(10, 3, &mut rng);
        let p = XqdaParams { reg: 1e-3, dim: DimPolicy::Fixed(4) };
        assert!(matches!(fit_xqda(&dx, &dy, &p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let dx = randn(12, 4, &mut rng);
        let dy = &dx + randn(12, 4, &mut rng) * 0.1;
        let model = fit_xqda(&dx, &dy, &XqdaParams::default()).unwrap();
        let back = SubspaceModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let m = MetricModel { matrix: randn(3, 3, &mut rng) };
        assert_eq!(MetricModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
