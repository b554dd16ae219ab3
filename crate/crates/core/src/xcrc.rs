//! Kernel cross-view collaborative representation (Kernel X-CRC).
//!
//! For a gallery sample `x` (camera B) and a probe `y` (camera A) the coder
//! finds the pair of coding vectors over the paired training sets that
//! satisfies the coupled stationarity system
//!
//! ```text
//! P_y α_y = α_x + k_y        P_y = K_y + λI,  k_y = Φ_yᵀφ(y)
//! P_x α_x = α_y + k_x        P_x = K_x + λI,  k_x = Φ_xᵀφ(x)
//! ```
//!
//! Eliminating one unknown gives closed forms through
//! `Q = I − P_y⁻¹P_x⁻¹` and `W = I − P_x⁻¹P_y⁻¹`. Everything that does not
//! depend on the test pair is folded into four `n × n` operators at fit
//! time, so coding a pair costs four matrix-vector products.
//!
//! The system is exactly the optimality condition of
//! `‖φ(y) − Φ_yα_y‖² + ‖φ(x) − Φ_xα_x‖² + (λ−1)(‖α_y‖² + ‖α_x‖²) + ‖α_y − α_x‖²`,
//! so for λ > 1 the coding pair is the unique minimizer of that objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_finite, gram, KernelSpec};
use crate::linalg::{add_diagonal, conditioned_lu, spd_inverse};
use crate::ranking::Ranking;

pub const DEFAULT_CONDITION_LIMIT: f64 = 1e-12;

/// Coding vectors whose norm is below this fraction of the norm of their
/// two additive parts are treated as degenerate.
const DEGENERATE_RELATIVE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    /// Minimum accepted reciprocal condition number of `Q` and `W`.
    #[serde(default = "default_condition_limit")]
    pub condition_limit: f64,
}

fn default_condition_limit() -> f64 {
    DEFAULT_CONDITION_LIMIT
}

impl SolverConfig {
    /// Same kernel family on both views; bandwidths are resolved per view.
    pub fn new(lambda: f64, kernel: KernelSpec) -> Self {
        SolverConfig {
            lambda,
            kernel_x: kernel,
            kernel_y: kernel,
            condition_limit: DEFAULT_CONDITION_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.condition_limit > 0.0 && self.condition_limit < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "condition_limit must lie in (0, 1), got {}",
                self.condition_limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingPair {
    pub alpha_x: DVector<f64>,
    pub alpha_y: DVector<f64>,
}

impl CodingPair {
    pub fn similarity(&self) -> Result<f64> {
        similarity(self)
    }
}

/// Cosine of the angle between the two coding vectors.
pub fn similarity(pair: &CodingPair) -> Result<f64> {
    if pair.alpha_x.len() != pair.alpha_y.len() {
        return Err(Error::DimensionMismatch(format!(
            "coding vectors have lengths {} and {}",
            pair.alpha_x.len(),
            pair.alpha_y.len()
        )));
    }
    let nx = pair.alpha_x.norm();
    let ny = pair.alpha_y.norm();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::DegenerateCoding(
            "a coding vector has zero norm".into(),
        ));
    }
    if !(nx.is_finite() && ny.is_finite()) {
        return Err(Error::NonFinite("coding vector".into()));
    }
    Ok((pair.alpha_x.dot(&pair.alpha_y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Fitted solver state. Immutable after [`TrainedSolver::fit`].
#[derive(Debug, Clone)]
pub struct TrainedSolver {
    config: SolverConfig,
    kernel_x: KernelSpec,
    kernel_y: KernelSpec,
    d_x: DMatrix<f64>,
    d_y: DMatrix<f64>,
    k_x: DMatrix<f64>,
    k_y: DMatrix<f64>,
    p_x: DMatrix<f64>,
    p_y: DMatrix<f64>,
    p_x_inv: DMatrix<f64>,
    p_y_inv: DMatrix<f64>,
    q: DMatrix<f64>,
    w: DMatrix<f64>,
    rcond_q: f64,
    rcond_w: f64,
    beta_xx: DMatrix<f64>,
    beta_xy: DMatrix<f64>,
    beta_yy: DMatrix<f64>,
    beta_yx: DMatrix<f64>,
}

impl TrainedSolver {
    /// Fits on paired training views: row `i` of `d_x` (gallery camera) and
    /// row `i` of `d_y` (probe camera) describe the same subject.
    pub fn fit(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let n = d_x.nrows();
        if n == 0 {
            return Err(Error::InsufficientData("no training pairs".into()));
        }
        if d_y.nrows() != n || d_y.ncols() != d_x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "training views are {}x{} and {}x{}",
                d_x.nrows(),
                d_x.ncols(),
                d_y.nrows(),
                d_y.ncols()
            )));
        }
        check_finite(d_x, "gallery-view training features")?;
        check_finite(d_y, "probe-view training features")?;

        let kernel_x = config.kernel_x.resolve(d_x)?;
        let kernel_y = config.kernel_y.resolve(d_y)?;
        let k_x = gram(d_x, d_x, &kernel_x)?;
        let k_y = gram(d_y, d_y, &kernel_y)?;

        let lambda = config.lambda;
        let p_x = add_diagonal(&k_x, lambda);
        let p_y = add_diagonal(&k_y, lambda);
        let p_x_inv = spd_inverse(&p_x, "P_x")?;
        let p_y_inv = spd_inverse(&p_y, "P_y")?;

        let eye = DMatrix::<f64>::identity(n, n);
        let py_px = &p_y_inv * &p_x_inv;
        let px_py = &p_x_inv * &p_y_inv;
        let q = &eye - &py_px;
        let w = &eye - &px_py;

        let q_lu = conditioned_lu(&q);
        if q_lu.rcond < config.condition_limit {
            return Err(Error::IllConditioned {
                matrix: "Q",
                rcond: q_lu.rcond,
                limit: config.condition_limit,
            });
        }
        let w_lu = conditioned_lu(&w);
        if w_lu.rcond < config.condition_limit {
            return Err(Error::IllConditioned {
                matrix: "W",
                rcond: w_lu.rcond,
                limit: config.condition_limit,
            });
        }

        let solve = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: &DMatrix<f64>| {
            lu.solve(rhs)
                .ok_or_else(|| Error::Singular("coupling matrix".into()))
        };
        let beta_xx = solve(&w_lu.lu, &p_x_inv)?;
        let beta_xy = solve(&w_lu.lu, &px_py)?;
        let beta_yy = solve(&q_lu.lu, &p_y_inv)?;
        let beta_yx = solve(&q_lu.lu, &py_px)?;

        Ok(TrainedSolver {
            config,
            kernel_x,
            kernel_y,
            d_x: d_x.clone(),
            d_y: d_y.clone(),
            k_x,
            k_y,
            p_x,
            p_y,
            p_x_inv,
            p_y_inv,
            q,
            w,
            rcond_q: q_lu.rcond,
            rcond_w: w_lu.rcond,
            beta_xx,
            beta_xy,
            beta_yy,
            beta_yx,
        })
    }

    pub fn n_train(&self) -> usize {
        self.d_x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.d_x.ncols()
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    /// Kernels with bandwidths frozen at fit time.
    pub fn kernels(&self) -> (&KernelSpec, &KernelSpec) {
        (&self.kernel_x, &self.kernel_y)
    }

    pub fn train_x(&self) -> &DMatrix<f64> {
        &self.d_x
    }

    pub fn train_y(&self) -> &DMatrix<f64> {
        &self.d_y
    }

    pub fn gram_x(&self) -> &DMatrix<f64> {
        &self.k_x
    }

    pub fn gram_y(&self) -> &DMatrix<f64> {
        &self.k_y
    }

    pub fn p_x(&self) -> &DMatrix<f64> {
        &self.p_x
    }

    pub fn p_y(&self) -> &DMatrix<f64> {
        &self.p_y
    }

    pub fn p_x_inv(&self) -> &DMatrix<f64> {
        &self.p_x_inv
    }

    pub fn p_y_inv(&self) -> &DMatrix<f64> {
        &self.p_y_inv
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Reciprocal 1-norm condition numbers of `Q` and `W`.
    pub fn rcond(&self) -> (f64, f64) {
        (self.rcond_q, self.rcond_w)
    }

    /// `W⁻¹P_x⁻¹`
    pub fn beta_xx(&self) -> &DMatrix<f64> {
        &self.beta_xx
    }

    /// `W⁻¹P_x⁻¹P_y⁻¹`
    pub fn beta_xy(&self) -> &DMatrix<f64> {
        &self.beta_xy
    }

    /// `Q⁻¹P_y⁻¹`
    pub fn beta_yy(&self) -> &DMatrix<f64> {
        &self.beta_yy
    }

    /// `Q⁻¹P_y⁻¹P_x⁻¹`
    pub fn beta_yx(&self) -> &DMatrix<f64> {
        &self.beta_yx
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{what} has dimension {len}, training features have {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Kernel vectors `Φ_xᵀφ(x_i)` for every row of `gallery`, as columns.
    pub fn kernel_vectors_x(&self, gallery: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(gallery.ncols(), "gallery sample")?;
        gram(&self.d_x, gallery, &self.kernel_x)
    }

    /// Kernel vectors `Φ_yᵀφ(y_j)` for every row of `probes`, as columns.
    pub fn kernel_vectors_y(&self, probes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(probes.ncols(), "probe sample")?;
        gram(&self.d_y, probes, &self.kernel_y)
    }

    fn kernel_pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let kx = self.kernel_vectors_x(&DMatrix::from_row_slice(1, x.len(), x.as_slice()))?;
        let ky = self.kernel_vectors_y(&DMatrix::from_row_slice(1, y.len(), y.as_slice()))?;
        Ok((kx.column(0).into_owned(), ky.column(0).into_owned()))
    }

    fn code_from_kernel_vectors(&self, kx: &DVector<f64>, ky: &DVector<f64>) -> CodingPair {
        CodingPair {
            alpha_x: &self.beta_xx * kx + &self.beta_xy * ky,
            alpha_y: &self.beta_yx * kx + &self.beta_yy * ky,
        }
    }

    /// Coding vectors of a gallery sample `x` and a probe `y`.
    pub fn code_pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<CodingPair> {
        let (kx, ky) = self.kernel_pair(x, y)?;
        Ok(self.code_from_kernel_vectors(&kx, &ky))
    }

    /// Diagnostic: the same coder with the coupling term removed, i.e.
    /// `α_x = P_x⁻¹k_x`, `α_y = P_y⁻¹k_y`.
    pub fn code_pair_uncoupled(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<CodingPair> {
        let (kx, ky) = self.kernel_pair(x, y)?;
        Ok(CodingPair {
            alpha_x: &self.p_x_inv * kx,
            alpha_y: &self.p_y_inv * ky,
        })
    }

    /// Norms of the residuals `P_yα_y − α_x − k_y` and `P_xα_x − α_y − k_x`.
    pub fn stationarity_residual(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        pair: &CodingPair,
    ) -> Result<(f64, f64)> {
        let n = self.n_train();
        if pair.alpha_x.len() != n || pair.alpha_y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "coding vectors must have length {n}"
            )));
        }
        let (kx, ky) = self.kernel_pair(x, y)?;
        let r_y = &self.p_y * &pair.alpha_y - &pair.alpha_x - ky;
        let r_x = &self.p_x * &pair.alpha_x - &pair.alpha_y - kx;
        Ok((r_y.norm(), r_x.norm()))
    }

    /// Similarities of every probe (rows of `probes`) against every gallery
    /// sample (rows of `gallery`), plus the per-probe ranking.
    ///
    /// Coding vectors split as `α_x(i, j) = U_x[:, i] + V_x[:, j]` and
    /// `α_y(i, j) = U_y[:, i] + V_y[:, j]`, with the `U` factors depending on
    /// gallery sample `i` only and the `V` factors on probe `j` only. Dot
    /// products and squared norms of all pairs then follow from four
    /// cross-product matrices, without forming any per-pair vector.
    pub fn rank_all(&self, gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<Ranking> {
        check_nonempty(gallery, probes)?;
        let kx = self.kernel_vectors_x(gallery)?;
        let ky = self.kernel_vectors_y(probes)?;

        let ux = &self.beta_xx * &kx;
        let uy = &self.beta_yx * &kx;
        let vx = &self.beta_xy * &ky;
        let vy = &self.beta_yy * &ky;

        let vx_uy = vx.tr_mul(&uy);
        let vy_ux = vy.tr_mul(&ux);
        let vx_ux = vx.tr_mul(&ux);
        let vy_uy = vy.tr_mul(&uy);

        let col_sq = |m: &DMatrix<f64>| -> Vec<f64> {
            m.column_iter().map(|c| c.norm_squared()).collect()
        };
        let col_dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Vec<f64> {
            a.column_iter().zip(b.column_iter()).map(|(p, q)| p.dot(&q)).collect()
        };
        let ux_sq = col_sq(&ux);
        let uy_sq = col_sq(&uy);
        let vx_sq = col_sq(&vx);
        let vy_sq = col_sq(&vy);
        let ux_uy = col_dot(&ux, &uy);
        let vx_vy = col_dot(&vx, &vy);

        let (lp, lg) = (probes.nrows(), gallery.nrows());
        let scores = DMatrix::from_fn(lp, lg, |j, i| {
            let dot = ux_uy[i] + vx_uy[(j, i)] + vy_ux[(j, i)] + vx_vy[j];
            let nx = ux_sq[i] + 2.0 * vx_ux[(j, i)] + vx_sq[j];
            let ny = uy_sq[i] + 2.0 * vy_uy[(j, i)] + vy_sq[j];
            cosine_or_nan(dot, nx, ux_sq[i] + vx_sq[j], ny, uy_sq[i] + vy_sq[j])
        });
        finish_ranking(scores)
    }

    /// Reference implementation of [`TrainedSolver::rank_all`]: codes every
    /// (probe, gallery) pair explicitly in a double loop.
    pub fn rank_all_naive(&self, gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<Ranking> {
        check_nonempty(gallery, probes)?;
        let kx = self.kernel_vectors_x(gallery)?;
        let ky = self.kernel_vectors_y(probes)?;
        let (lp, lg) = (probes.nrows(), gallery.nrows());
        let mut scores = DMatrix::zeros(lp, lg);
        for j in 0..lp {
            let kyj = ky.column(j).into_owned();
            let vx = &self.beta_xy * &kyj;
            let vy = &self.beta_yy * &kyj;
            for i in 0..lg {
                let kxi = kx.column(i).into_owned();
                let ux = &self.beta_xx * &kxi;
                let uy = &self.beta_yx * &kxi;
                let pair = CodingPair {
                    alpha_x: &ux + &vx,
                    alpha_y: &uy + &vy,
                };
                let nx = pair.alpha_x.norm_squared();
                let ny = pair.alpha_y.norm_squared();
                scores[(j, i)] = if is_degenerate(nx, ux.norm_squared() + vx.norm_squared())
                    || is_degenerate(ny, uy.norm_squared() + vy.norm_squared())
                {
                    f64::NAN
                } else {
                    similarity(&pair)?
                };
            }
        }
        finish_ranking(scores)
    }
}

fn check_nonempty(gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<()> {
    if gallery.nrows() == 0 || probes.nrows() == 0 {
        return Err(Error::InsufficientData(
            "ranking needs at least one gallery sample and one probe".into(),
        ));
    }
    Ok(())
}

#[inline]
fn is_degenerate(norm_sq: f64, parts_sq: f64) -> bool {
    norm_sq <= DEGENERATE_RELATIVE_NORM * DEGENERATE_RELATIVE_NORM * parts_sq
}

#[inline]
fn cosine_or_nan(dot: f64, nx: f64, parts_x: f64, ny: f64, parts_y: f64) -> f64 {
    if is_degenerate(nx, parts_x) || is_degenerate(ny, parts_y) {
        return f64::NAN;
    }
    (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
}

/// Builds the ranking and rejects probes with no usable pairing.
pub(crate) fn finish_ranking(scores: DMatrix<f64>) -> Result<Ranking> {
    let dead: Vec<usize> = (0..scores.nrows())
        .filter(|&j| scores.row(j).iter().all(|s| s.is_nan()))
        .collect();
    if !dead.is_empty() {
        return Err(Error::DegenerateCoding(format!(
            "every gallery pairing degenerates for probe indices {dead:?}"
        )));
    }
    Ok(Ranking::from_scores(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn unit(m: usize, k: usize) -> DVector<f64> {
        let mut v = DVector::zeros(m);
        v[k] = 1.0;
        v
    }

    #[test]
    fn one_by_one_fit() {
        let d = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let s = TrainedSolver::fit(&d, &d, SolverConfig::new(1.0, KernelSpec::linear())).unwrap();
        assert_eq!(s.p_x()[(0, 0)], 2.0);
        assert_eq!(s.p_y()[(0, 0)], 2.0);
        assert_relative_eq!(s.q()[(0, 0)], 0.75);
        assert_relative_eq!(s.w()[(0, 0)], 0.75);
        assert_relative_eq!(s.beta_xx()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.beta_yy()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.beta_xy()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.beta_yx()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);

        let x = unit(3, 1);
        let pair = s.code_pair(&x, &x).unwrap();
        assert_relative_eq!(pair.alpha_x[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(pair.alpha_y[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn q_times_inverse_definition_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dx = randn(12, 5, &mut rng);
        let dy = randn(12, 5, &mut rng);
        let s = TrainedSolver::fit(&dx, &dy, SolverConfig::new(0.8, KernelSpec::rbf_auto())).unwrap();
        let n = 12;
        let eye = DMatrix::<f64>::identity(n, n);
        let def = &eye - s.p_y_inv() * s.p_x_inv();
        let prod = s.q() * def.try_inverse().unwrap();
        assert!((prod - &eye).amax() < 1e-10);
    }

    #[test]
    fn symmetric_instance_gives_equal_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = randn(9, 4, &mut rng);
        let x = randn(4, 1, &mut rng).column(0).into_owned();
        let s = TrainedSolver::fit(&d, &d, SolverConfig::new(2.0, KernelSpec::rbf(1.5))).unwrap();
        let pair = s.code_pair(&x, &x).unwrap();
        assert!((&pair.alpha_x - &pair.alpha_y).amax() < 1e-10);
        assert_relative_eq!(pair.similarity().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let a = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let same = CodingPair { alpha_x: a.clone(), alpha_y: a.clone() };
        assert_relative_eq!(similarity(&same).unwrap(), 1.0, epsilon = 1e-15);
        let anti = CodingPair { alpha_x: a.clone(), alpha_y: -a.clone() };
        assert_relative_eq!(similarity(&anti).unwrap(), -1.0, epsilon = 1e-15);
        let orth = CodingPair {
            alpha_x: DVector::from_vec(vec![1.0, 0.0]),
            alpha_y: DVector::from_vec(vec![0.0, 3.0]),
        };
        assert_eq!(similarity(&orth).unwrap(), 0.0);
        let zero = CodingPair { alpha_x: DVector::zeros(3), alpha_y: a };
        assert!(matches!(similarity(&zero), Err(Error::DegenerateCoding(_))));
    }

    #[test]
    fn config_validation() {
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        for cfg in [
            SolverConfig::new(0.0, KernelSpec::linear()),
            SolverConfig { condition_limit: 1.0, ..SolverConfig::new(1.0, KernelSpec::linear()) },
        ] {
            assert!(matches!(TrainedSolver::fit(&d, &d, cfg), Err(Error::InvalidParameter(_))));
        }
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(
            TrainedSolver::fit(&bad, &d, SolverConfig::new(1.0, KernelSpec::linear())),
            Err(Error::NonFinite(_))
        ));
        let short = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            TrainedSolver::fit(&short, &d, SolverConfig::new(1.0, KernelSpec::linear())),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn singular_coupling_is_reported() {
        // Linear kernel, λ = 1 and a training direction both views ignore:
        // P_x⁻¹ = P_y⁻¹ = 1 there, so Q has an exact zero eigenvalue.
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let err = TrainedSolver::fit(&d, &d, SolverConfig::new(1.0, KernelSpec::linear())).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { matrix: "Q", .. }), "{err}");
    }

    #[test]
    fn code_pair_dimension_mismatch() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = TrainedSolver::fit(&d, &d, SolverConfig::new(2.0, KernelSpec::linear())).unwrap();
        let bad = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let ok = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(s.code_pair(&bad, &ok), Err(Error::DimensionMismatch(_))));
        assert!(matches!(s.code_pair(&ok, &bad), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn perturbed_pair_residual_grows_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dx = randn(6, 3, &mut rng);
        let dy = randn(6, 3, &mut rng);
        let x = randn(3, 1, &mut rng).column(0).into_owned();
        let y = randn(3, 1, &mut rng).column(0).into_owned();
        let s = TrainedSolver::fit(&dx, &dy, SolverConfig::new(1.5, KernelSpec::rbf_auto())).unwrap();
        let pair = s.code_pair(&x, &y).unwrap();
        let (r0y, r0x) = s.stationarity_residual(&x, &y, &pair).unwrap();
        assert!(r0y < 1e-12 && r0x < 1e-12);
        let mut prev = None;
        for eps in [1e-3, 2e-3, 4e-3] {
            let mut p = pair.clone();
            p.alpha_x[2] += eps;
            let (ry, rx) = s.stationarity_residual(&x, &y, &p).unwrap();
            // Perturbing α_x[2] moves r_y by −ε e₂ and r_x by ε P_x[:, 2].
            assert_relative_eq!(ry, eps, max_relative = 1e-8);
            assert_relative_eq!(rx, eps * s.p_x().column(2).norm(), max_relative = 1e-8);
            if let Some((py, px)) = prev {
                assert_relative_eq!(ry / py, 2.0, max_relative = 1e-8);
                assert_relative_eq!(rx / px, 2.0, max_relative = 1e-8);
            }
            prev = Some((ry, rx));
        }
    }

    #[test]
    fn residual_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dx = randn(5, 3, &mut rng);
        let dy = randn(5, 3, &mut rng);
        let x = randn(3, 1, &mut rng).column(0).into_owned();
        let y = randn(3, 1, &mut rng).column(0).into_owned();
        let lambda = 0.7;
        let s = TrainedSolver::fit(&dx, &dy, SolverConfig::new(lambda, KernelSpec::linear())).unwrap();
        let pair = CodingPair {
            alpha_x: randn(5, 1, &mut rng).column(0).into_owned(),
            alpha_y: randn(5, 1, &mut rng).column(0).into_owned(),
        };
        // Linear kernel: K = D Dᵀ and k = D x, element by element.
        let mut ry = DVector::zeros(5);
        let mut rx = DVector::zeros(5);
        for a in 0..5 {
            let mut sy = lambda * pair.alpha_y[a] - pair.alpha_x[a];
            let mut sx = lambda * pair.alpha_x[a] - pair.alpha_y[a];
            for b in 0..5 {
                let kyab: f64 = (0..3).map(|c| dy[(a, c)] * dy[(b, c)]).sum();
                let kxab: f64 = (0..3).map(|c| dx[(a, c)] * dx[(b, c)]).sum();
                sy += kyab * pair.alpha_y[b];
                sx += kxab * pair.alpha_x[b];
            }
            sy -= (0..3).map(|c| dy[(a, c)] * y[c]).sum::<f64>();
            sx -= (0..3).map(|c| dx[(a, c)] * x[c]).sum::<f64>();
            ry[a] = sy;
            rx[a] = sx;
        }
        let (gy, gx) = s.stationarity_residual(&x, &y, &pair).unwrap();
        assert_relative_eq!(gy, ry.norm(), max_relative = 1e-12);
        assert_relative_eq!(gx, rx.norm(), max_relative = 1e-12);
    }

    #[test]
    fn rank_all_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dx = randn(7, 4, &mut rng);
        let dy = randn(7, 4, &mut rng);
        let g = randn(1, 4, &mut rng);
        let p = randn(1, 4, &mut rng);
        let s = TrainedSolver::fit(&dx, &dy, SolverConfig::new(1.2, KernelSpec::rbf_auto())).unwrap();
        let r = s.rank_all(&g, &p).unwrap();
        let direct = s
            .code_pair(&g.row(0).transpose(), &p.row(0).transpose())
            .unwrap()
            .similarity()
            .unwrap();
        assert_relative_eq!(r.scores[(0, 0)], direct, epsilon = 1e-12);
        assert_eq!(r.order, vec![vec![0]]);
    }

    #[test]
    fn rank_all_degenerate_probe() {
        // Probe orthogonal to both views' training rows under the linear
        // kernel with a zero gallery: all coding vectors vanish.
        let d = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = TrainedSolver::fit(&d, &d, SolverConfig::new(2.0, KernelSpec::linear())).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 2.0]);
        let p = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let err = s.rank_all(&g, &p).unwrap_err();
        assert!(err.to_string().contains("[0]"), "{err}");
        let err = s.rank_all_naive(&g, &p).unwrap_err();
        assert!(matches!(err, Error::DegenerateCoding(_)));
    }
}
