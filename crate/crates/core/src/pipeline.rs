//! Matcher pipelines: an optional XQDA projection followed by a coder or a
//! metric, fitted on paired training views and ranking a test gallery.
//!
//! Orientation: the gallery view (`view_b`) plays the role of `X`, the
//! probe view (`view_a`) the role of `Y`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{direct_rank_all, BaselineConfig, C2rc, KernelC2rc};
use crate::data::CrossViewDataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::ranking::Ranking;
use crate::subspace::{
    distance_matrix, extra_differences, fit_kissme, fit_mahalanobis, fit_xqda, intra_differences, project,
    MetricKind, XqdaParams,
};
use crate::xcrc::{SolverConfig, TrainedSolver, DEFAULT_CONDITION_LIMIT};

/// Regularization added to the covariances of the metric matchers.
pub const DEFAULT_METRIC_REG: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KernelXcrc,
    XcrcLinear,
    KernelC2rc,
    C2rc,
    CrcDirect,
    SrcDirect,
    Cosine,
    Mahalanobis,
    Kissme,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::KernelXcrc,
        Method::XcrcLinear,
        Method::KernelC2rc,
        Method::C2rc,
        Method::CrcDirect,
        Method::SrcDirect,
        Method::Cosine,
        Method::Mahalanobis,
        Method::Kissme,
    ];

    pub fn uses_lambda(self) -> bool {
        !matches!(self, Method::Cosine | Method::Mahalanobis | Method::Kissme)
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, Method::KernelXcrc | Method::KernelC2rc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::KernelXcrc => "kernel_xcrc",
            Method::XcrcLinear => "xcrc_linear",
            Method::KernelC2rc => "kernel_c2rc",
            Method::C2rc => "c2rc",
            Method::CrcDirect => "crc_direct",
            Method::SrcDirect => "src_direct",
            Method::Cosine => "cosine",
            Method::Mahalanobis => "mahalanobis",
            Method::Kissme => "kissme",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Everything needed to fit and apply one matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Kernel shared by both views (kernel methods only).
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub subspace: Option<XqdaParams>,
    #[serde(default = "default_metric_reg")]
    pub metric_reg: f64,
    #[serde(default = "default_condition_limit")]
    pub condition_limit: f64,
    #[serde(default)]
    pub l1_max_iters: Option<usize>,
    #[serde(default)]
    pub l1_tolerance: Option<f64>,
    /// Rank with the literal per-pair double loop instead of the batched
    /// scheme (X-CRC methods only).
    #[serde(default)]
    pub naive: bool,
}

/// λ = 2 is a unit ridge on the coupled objective; λ ≤ 1 can leave the
/// linear-kernel coupling singular.
pub const DEFAULT_LAMBDA: f64 = 2.0;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_metric_reg() -> f64 {
    DEFAULT_METRIC_REG
}

fn default_condition_limit() -> f64 {
    DEFAULT_CONDITION_LIMIT
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        MethodSpec {
            method,
            lambda: default_lambda(),
            kernel: KernelSpec::default(),
            subspace: None,
            metric_reg: DEFAULT_METRIC_REG,
            condition_limit: DEFAULT_CONDITION_LIMIT,
            l1_max_iters: None,
            l1_tolerance: None,
            naive: false,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_subspace(mut self, params: XqdaParams) -> Self {
        self.subspace = Some(params);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.uses_lambda() && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.metric_reg >= 0.0 && self.metric_reg.is_finite()) {
            return Err(Error::InvalidParameter("metric_reg must be nonnegative".into()));
        }
        Ok(())
    }

    fn baseline_config(&self, base: BaselineConfig) -> BaselineConfig {
        BaselineConfig {
            l1_max_iters: self.l1_max_iters.unwrap_or(base.l1_max_iters),
            l1_tolerance: self.l1_tolerance.unwrap_or(base.l1_tolerance),
            ..base
        }
    }

    fn solver_config(&self, kernel: KernelSpec) -> SolverConfig {
        SolverConfig {
            condition_limit: self.condition_limit,
            ..SolverConfig::new(self.lambda, kernel)
        }
    }
}

/// Fits `spec` on the (aligned) training views and ranks every test probe
/// (rows of `probes`) against the test `gallery`.
pub fn fit_and_rank(
    spec: &MethodSpec,
    train: &CrossViewDataset,
    gallery: &DMatrix<f64>,
    probes: &DMatrix<f64>,
) -> Result<Ranking> {
    spec.validate()?;
    let (mut d_x, mut d_y) = (train.view_b.features.clone(), train.view_a.features.clone());
    if d_x.nrows() != d_y.nrows() {
        return Err(Error::DimensionMismatch("training views are not paired row by row".into()));
    }
    let (mut gallery, mut probes) = (gallery.clone(), probes.clone());
    if let Some(params) = &spec.subspace {
        let model = fit_xqda(&d_x, &d_y, params)?;
        d_x = project(&model, &d_x)?;
        d_y = project(&model, &d_y)?;
        gallery = project(&model, &gallery)?;
        probes = project(&model, &probes)?;
    }

    match spec.method {
        Method::KernelXcrc | Method::XcrcLinear => {
            let kernel = if spec.method == Method::XcrcLinear {
                KernelSpec::linear()
            } else {
                spec.kernel
            };
            let solver = TrainedSolver::fit(&d_x, &d_y, spec.solver_config(kernel))?;
            if spec.naive {
                solver.rank_all_naive(&gallery, &probes)
            } else {
                solver.rank_all(&gallery, &probes)
            }
        }
        Method::KernelC2rc => {
            KernelC2rc::fit(&d_x, &d_y, spec.lambda, spec.kernel, spec.kernel)?.rank_all(&gallery, &probes)
        }
        Method::C2rc => C2rc::fit(&d_x, &d_y, spec.lambda)?.rank_all(&gallery, &probes),
        Method::CrcDirect => direct_rank_all(&gallery, &probes, &spec.baseline_config(BaselineConfig::crc(spec.lambda))),
        Method::SrcDirect => direct_rank_all(&gallery, &probes, &spec.baseline_config(BaselineConfig::src(spec.lambda))),
        Method::Cosine => distances_to_ranking(distance_matrix(MetricKind::Cosine, None, &gallery, &probes)?),
        Method::Mahalanobis => {
            let pooled = stack_rows(&d_x, &d_y);
            let metric = fit_mahalanobis(&pooled, spec.metric_reg)?;
            distances_to_ranking(distance_matrix(MetricKind::Mahalanobis, Some(&metric), &gallery, &probes)?)
        }
        Method::Kissme => {
            let metric = fit_kissme(
                &intra_differences(&d_x, &d_y)?,
                &extra_differences(&d_x, &d_y)?,
                spec.metric_reg,
            )?;
            distances_to_ranking(distance_matrix(MetricKind::Kissme, Some(&metric), &gallery, &probes)?)
        }
    }
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() + b.nrows(), a.ncols(), |i, j| {
        if i < a.nrows() {
            a[(i, j)]
        } else {
            b[(i - a.nrows(), j)]
        }
    })
}

fn distances_to_ranking(d: DMatrix<f64>) -> Result<Ranking> {
    crate::xcrc::finish_ranking(-d)
}
