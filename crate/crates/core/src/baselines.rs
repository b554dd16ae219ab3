//! Comparison coders: direct SRC/CRC matching, camera-specific C²RC and its
//! kernel extension.
//!
//! `crc_code` and `src_code` take a dictionary with one atom per column, as
//! in `min ‖y − Dα‖² + λ‖α‖_p`. The cross-view coders take the paired
//! training views with one sample per row, like [`crate::xcrc`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_finite, gram, KernelSpec};
use crate::linalg::{add_diagonal, cholesky, spd_inverse};
use crate::ranking::Ranking;
use crate::xcrc::{finish_ranking, CodingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lambda: f64,
    pub norm: Norm,
    #[serde(default = "default_max_iters")]
    pub l1_max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub l1_tolerance: f64,
}

fn default_max_iters() -> usize {
    20_000
}

fn default_tolerance() -> f64 {
    1e-8
}

impl BaselineConfig {
    pub fn crc(lambda: f64) -> Self {
        BaselineConfig {
            lambda,
            norm: Norm::L2,
            l1_max_iters: default_max_iters(),
            l1_tolerance: default_tolerance(),
        }
    }

    pub fn src(lambda: f64) -> Self {
        BaselineConfig {
            norm: Norm::L1,
            ..BaselineConfig::crc(lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.l1_tolerance > 0.0) || self.l1_max_iters == 0 {
            return Err(Error::InvalidParameter(
                "l1_tolerance and l1_max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

fn check_target(dict: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if dict.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary atoms have dimension {}, target has {}",
            dict.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Collaborative code `(DᵀD + λI)⁻¹Dᵀy`.
pub fn crc_code(dict: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    check_target(dict, y)?;
    let normal = add_diagonal(&dict.tr_mul(dict), lambda);
    Ok(cholesky(&normal, "DᵀD + λI")?.solve(&dict.tr_mul(y)))
}

/// Result of the ℓ1 coder.
#[derive(Debug, Clone)]
pub struct SparseCode {
    pub alpha: DVector<f64>,
    pub iterations: usize,
    /// `false` when the iteration budget ran out first.
    pub converged: bool,
    /// Objective value of every accepted iterate, starting at `α = 0`.
    pub objective_trace: Vec<f64>,
}

impl SparseCode {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts non-empty")
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Lasso {
    gram: DMatrix<f64>,
    dty: DVector<f64>,
    yty: f64,
    lambda: f64,
}

impl Lasso {
    fn objective(&self, a: &DVector<f64>) -> f64 {
        let quad = a.dot(&(&self.gram * a)) - 2.0 * a.dot(&self.dty) + self.yty;
        quad.max(0.0) + self.lambda * a.lp_norm(1)
    }

    /// `Dᵀ(y − Dα)`
    fn correlation(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.dty - &self.gram * a
    }
}

/// Largest violation of the optimality condition of
/// `‖y − Dα‖² + λ‖α‖₁`: with `g = Dᵀ(y − Dα)`, `g_i = (λ/2)·sign(α_i)` on the
/// support and `|g_i| ≤ λ/2` elsewhere.
pub fn lasso_optimality_violation(
    dict: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    alpha: &DVector<f64>,
) -> f64 {
    let g = dict.tr_mul(&(y - dict * alpha));
    subgradient_violation(&g, alpha, lambda)
}

fn subgradient_violation(g: &DVector<f64>, alpha: &DVector<f64>, lambda: f64) -> f64 {
    let half = 0.5 * lambda;
    g.iter()
        .zip(alpha.iter())
        .map(|(&gi, &ai)| {
            if ai == 0.0 {
                (gi.abs() - half).max(0.0)
            } else {
                (gi - half * ai.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Sparse code minimizing `‖y − Dα‖² + λ‖α‖₁` by accelerated proximal
/// gradient with function-value restart.
///
/// A candidate that would raise the objective is rejected and the momentum
/// reset, so accepted iterates never increase the objective. Stops once an
/// accepted step lowers the objective by a relative amount below
/// `l1_tolerance` while the subgradient condition holds within
/// `10 · l1_tolerance`.
pub fn src_code(dict: &DMatrix<f64>, y: &DVector<f64>, config: &BaselineConfig) -> Result<SparseCode> {
    config.validate()?;
    check_target(dict, y)?;
    let n = dict.ncols();
    let lasso = Lasso {
        gram: dict.tr_mul(dict),
        dty: dict.tr_mul(y),
        yty: y.norm_squared(),
        lambda: config.lambda,
    };
    let tol = config.l1_tolerance;

    let mut x = DVector::zeros(n);
    let mut f_x = lasso.objective(&x);
    let mut trace = vec![f_x];
    if n == 0 || lasso.dty.amax() <= 0.5 * config.lambda {
        // Zero is optimal: |Dᵀy|_∞ ≤ λ/2.
        return Ok(SparseCode {
            alpha: x,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }

    // Lipschitz constant of ∇‖y − Dα‖² = 2DᵀDα − 2Dᵀy.
    let spectral = crate::linalg::sorted_symmetric_eigen(&lasso.gram).0[0].max(f64::MIN_POSITIVE);
    let lipschitz = 2.0 * spectral;
    let step = 1.0 / lipschitz;
    let thresh = config.lambda * step;

    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut just_restarted = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.l1_max_iters {
        iterations += 1;
        let grad = (&lasso.gram * &z - &lasso.dty) * 2.0;
        let cand = (&z - grad * step).map(|v| soft_threshold(v, thresh));
        let f_c = lasso.objective(&cand);
        if f_c <= f_x {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &cand + (&cand - &x) * ((t - 1.0) / t_next);
            let rel = (f_x - f_c) / f_x.abs().max(f64::MIN_POSITIVE);
            x = cand;
            f_x = f_c;
            t = t_next;
            just_restarted = false;
            trace.push(f_x);
            if rel < tol
                && subgradient_violation(&lasso.correlation(&x), &x, config.lambda) <= 10.0 * tol
            {
                converged = true;
                break;
            }
        } else if just_restarted {
            // A plain proximal step from x cannot lower the objective: x is
            // stationary up to round-off.
            converged = subgradient_violation(&lasso.correlation(&x), &x, config.lambda) <= 10.0 * tol;
            break;
        } else {
            z = x.clone();
            t = 1.0;
            just_restarted = true;
        }
    }

    Ok(SparseCode {
        alpha: x,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Code over the dictionary with the configured norm.
fn code(dict: &DMatrix<f64>, y: &DVector<f64>, config: &BaselineConfig) -> Result<DVector<f64>> {
    match config.norm {
        Norm::L2 => crc_code(dict, y, config.lambda),
        Norm::L1 => Ok(src_code(dict, y, config)?.alpha),
    }
}

/// Per-subject reconstruction residuals `‖y − x_i α_i‖` of a probe coded
/// directly over the gallery (one sample per row of `gallery`).
pub fn direct_residuals(
    gallery: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &BaselineConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let dict = gallery.transpose();
    let alpha = code(&dict, y, config)?;
    Ok(residuals_from_code(&dict, y, &alpha))
}

fn residuals_from_code(dict: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>) -> Vec<f64> {
    dict.column_iter()
        .zip(alpha.iter())
        .map(|(atom, &a)| (y - atom * a).norm())
        .collect()
}

/// Gallery indices ordered by ascending residual; ties keep index order.
/// Returns `(index, residual)` pairs.
pub fn direct_rank(
    gallery: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &BaselineConfig,
) -> Result<Vec<(usize, f64)>> {
    let res = direct_residuals(gallery, y, config)?;
    let order = crate::ranking::order_descending(res.iter().map(|r| -r));
    Ok(order.into_iter().map(|i| (i, res[i])).collect())
}

/// Direct matching of every probe; scores are negated residuals.
pub fn direct_rank_all(
    gallery: &DMatrix<f64>,
    probes: &DMatrix<f64>,
    config: &BaselineConfig,
) -> Result<Ranking> {
    config.validate()?;
    if gallery.ncols() != probes.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gallery has {} features, probes have {}",
            gallery.ncols(),
            probes.ncols()
        )));
    }
    let dict = gallery.transpose();
    let crc_proj = match config.norm {
        Norm::L2 => {
            let normal = add_diagonal(&dict.tr_mul(&dict), config.lambda);
            Some(cholesky(&normal, "DᵀD + λI")?.solve(gallery))
        }
        Norm::L1 => None,
    };
    let mut scores = DMatrix::zeros(probes.nrows(), gallery.nrows());
    for j in 0..probes.nrows() {
        let y = probes.row(j).transpose();
        let alpha = match &crc_proj {
            Some(p) => p * &y,
            None => src_code(&dict, &y, config)?.alpha,
        };
        for (i, r) in residuals_from_code(&dict, &y, &alpha).into_iter().enumerate() {
            scores[(j, i)] = -r;
        }
    }
    Ok(Ranking::from_scores(scores))
}

fn check_views(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>) -> Result<()> {
    if d_x.shape() != d_y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "training views are {:?} and {:?}",
            d_x.shape(),
            d_y.shape()
        )));
    }
    if d_x.nrows() == 0 {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    check_finite(d_x, "gallery-view training features")?;
    check_finite(d_y, "probe-view training features")
}

/// Camera-specific collaborative codes: two independent CRC solves over the
/// training samples of each view (rows of `d_x`, `d_y`).
pub fn c2rc_code(
    d_x: &DMatrix<f64>,
    d_y: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<CodingPair> {
    check_views(d_x, d_y)?;
    Ok(CodingPair {
        alpha_x: crc_code(&d_x.transpose(), x, lambda)?,
        alpha_y: crc_code(&d_y.transpose(), y, lambda)?,
    })
}

/// Cosine between columns: entry `(j, i)` compares probe code `j` with
/// gallery code `i`; `NaN` where either code vanishes.
fn cosine_scores(probe_codes: &DMatrix<f64>, gallery_codes: &DMatrix<f64>) -> DMatrix<f64> {
    let pn: Vec<f64> = probe_codes.column_iter().map(|c| c.norm()).collect();
    let gn: Vec<f64> = gallery_codes.column_iter().map(|c| c.norm()).collect();
    let dots = probe_codes.tr_mul(gallery_codes);
    DMatrix::from_fn(dots.nrows(), dots.ncols(), |j, i| {
        if pn[j] == 0.0 || gn[i] == 0.0 {
            f64::NAN
        } else {
            (dots[(j, i)] / (pn[j] * gn[i])).clamp(-1.0, 1.0)
        }
    })
}

/// Fitted C²RC: the coding operators `(D Dᵀ + λI)⁻¹D` of both views.
#[derive(Debug, Clone)]
pub struct C2rc {
    proj_x: DMatrix<f64>,
    proj_y: DMatrix<f64>,
    lambda: f64,
}

impl C2rc {
    pub fn fit(d_x: &DMatrix<f64>, d_y: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        check_views(d_x, d_y)?;
        let op = |d: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let normal = add_diagonal(&(d * d.transpose()), lambda);
            Ok(cholesky(&normal, "D Dᵀ + λI")?.solve(d))
        };
        Ok(C2rc {
            proj_x: op(d_x)?,
            proj_y: op(d_y)?,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn code_pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<CodingPair> {
        let m = self.proj_x.ncols();
        if x.len() != m || y.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "samples must have dimension {m}"
            )));
        }
        Ok(CodingPair {
            alpha_x: &self.proj_x * x,
            alpha_y: &self.proj_y * y,
        })
    }

    pub fn rank_all(&self, gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<Ranking> {
        let m = self.proj_x.ncols();
        if gallery.ncols() != m || probes.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "samples must have dimension {m}"
            )));
        }
        let ax = &self.proj_x * gallery.transpose();
        let ay = &self.proj_y * probes.transpose();
        finish_ranking(cosine_scores(&ay, &ax))
    }
}

/// Fitted Kernel C²RC: `α = (K + λI)⁻¹k` independently in each view.
#[derive(Debug, Clone)]
pub struct KernelC2rc {
    d_x: DMatrix<f64>,
    d_y: DMatrix<f64>,
    kernel_x: KernelSpec,
    kernel_y: KernelSpec,
    p_x_inv: DMatrix<f64>,
    p_y_inv: DMatrix<f64>,
    lambda: f64,
}

impl KernelC2rc {
    pub fn fit(
        d_x: &DMatrix<f64>,
        d_y: &DMatrix<f64>,
        lambda: f64,
        kernel_x: KernelSpec,
        kernel_y: KernelSpec,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        check_views(d_x, d_y)?;
        let kernel_x = kernel_x.resolve(d_x)?;
        let kernel_y = kernel_y.resolve(d_y)?;
        let p_x = add_diagonal(&gram(d_x, d_x, &kernel_x)?, lambda);
        let p_y = add_diagonal(&gram(d_y, d_y, &kernel_y)?, lambda);
        Ok(KernelC2rc {
            d_x: d_x.clone(),
            d_y: d_y.clone(),
            kernel_x,
            kernel_y,
            p_x_inv: spd_inverse(&p_x, "K_x + λI")?,
            p_y_inv: spd_inverse(&p_y, "K_y + λI")?,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernels(&self) -> (&KernelSpec, &KernelSpec) {
        (&self.kernel_x, &self.kernel_y)
    }

    fn codes(&self, gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            &self.p_x_inv * gram(&self.d_x, gallery, &self.kernel_x)?,
            &self.p_y_inv * gram(&self.d_y, probes, &self.kernel_y)?,
        ))
    }

    pub fn code_pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<CodingPair> {
        let xr = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        let yr = DMatrix::from_row_slice(1, y.len(), y.as_slice());
        let (ax, ay) = self.codes(&xr, &yr)?;
        Ok(CodingPair {
            alpha_x: ax.column(0).into_owned(),
            alpha_y: ay.column(0).into_owned(),
        })
    }

    pub fn rank_all(&self, gallery: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<Ranking> {
        let (ax, ay) = self.codes(gallery, probes)?;
        finish_ranking(cosine_scores(&ay, &ax))
    }
}

/// Kernelized independent solves for one (gallery, probe) pair.
pub fn kernel_c2rc_code(state: &KernelC2rc, x: &DVector<f64>, y: &DVector<f64>) -> Result<CodingPair> {
    state.code_pair(x, y)
}
