//! Kernel functions and Gram matrices.
//!
//! Samples are stored one per row. `gram(a, b, spec)` evaluates the kernel
//! between every row of `a` and every row of `b`, which covers both the
//! training Gram matrix (`gram(d, d, ..)`) and the kernel vectors of test
//! samples against the training set (`gram(d, x, ..)`).

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth used when the median of pairwise distances is zero.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
    Expchi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median heuristic on the training samples, frozen at fit time.
    Auto,
    #[serde(untagged)]
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::Auto
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::rbf_auto()
    }
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            bandwidth: Bandwidth::Auto,
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn rbf_auto() -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Auto,
        }
    }

    pub fn expchi2(sigma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Expchi2,
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn expchi2_auto() -> Self {
        KernelSpec {
            kind: KernelKind::Expchi2,
            bandwidth: Bandwidth::Auto,
        }
    }

    /// Replaces an `Auto` bandwidth by the median heuristic evaluated on
    /// `train`. Explicit bandwidths are validated and kept.
    pub fn resolve(&self, train: &DMatrix<f64>) -> Result<KernelSpec> {
        match (self.kind, self.bandwidth) {
            (KernelKind::Linear, _) => Ok(*self),
            (kind, Bandwidth::Auto) => {
                if kind == KernelKind::Expchi2 {
                    check_nonnegative(train)?;
                }
                Ok(KernelSpec {
                    kind,
                    bandwidth: Bandwidth::Fixed(median_bandwidth(train, kind)?),
                })
            }
            (_, Bandwidth::Fixed(sigma)) => {
                check_sigma(sigma)?;
                Ok(*self)
            }
        }
    }

    /// The explicit bandwidth, if any.
    pub fn sigma(&self) -> Option<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) => Some(s),
            Bandwidth::Auto => None,
        }
    }

    fn evaluator(&self) -> Result<Evaluator> {
        match self.kind {
            KernelKind::Linear => Ok(Evaluator::Linear),
            kind => {
                let sigma = self.sigma().ok_or_else(|| {
                    Error::InvalidParameter(
                        "kernel bandwidth is \"auto\"; resolve it against training data first"
                            .into(),
                    )
                })?;
                check_sigma(sigma)?;
                let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
                Ok(if kind == KernelKind::Rbf {
                    Evaluator::Rbf(inv_two_sigma_sq)
                } else {
                    Evaluator::Expchi2(inv_two_sigma_sq)
                })
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Evaluator {
    Linear,
    Rbf(f64),
    Expchi2(f64),
}

impl Evaluator {
    #[inline]
    fn eval(&self, a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
        match *self {
            Evaluator::Linear => a.iter().zip(b.iter()).map(|(x, y)| x * y).sum(),
            Evaluator::Rbf(scale) => (-squared_euclidean(a, b) * scale).exp(),
            Evaluator::Expchi2(scale) => (-chi_squared(a, b) * scale).exp(),
        }
    }
}

#[inline]
fn squared_euclidean(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// χ²(a, b) = Σ (a_d − b_d)² / (a_d + b_d), skipping coordinates where the
/// denominator vanishes.
#[inline]
pub fn chi_squared(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let s = x + y;
            if s == 0.0 {
                0.0
            } else {
                let d = x - y;
                d * d / s
            }
        })
        .sum()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "kernel bandwidth must be positive and finite, got {sigma}"
        )))
    }
}

pub(crate) fn check_nonnegative(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v < 0.0 {
                return Err(Error::NegativeInput {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Kernel matrix between the rows of `a` (n×m) and the rows of `b` (n'×m).
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram: left samples have {} features, right samples have {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let eval = spec.evaluator()?;
    if spec.kind == KernelKind::Expchi2 {
        check_nonnegative(a)?;
        check_nonnegative(b)?;
    }
    // Column-major storage: transposing makes every sample contiguous.
    let at = a.transpose();
    let bt = b.transpose();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        eval.eval(at.column(i), bt.column(j))
    }))
}

/// Median-heuristic bandwidth: returns σ with 2σ² equal to the median of the
/// pairwise squared Euclidean (`rbf`) or χ² (`expchi2`) distances over all
/// distinct pairs of rows.
pub fn median_bandwidth(a: &DMatrix<f64>, kind: KernelKind) -> Result<f64> {
    let n = a.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "median bandwidth needs at least 2 samples, got {n}"
        )));
    }
    let at = a.transpose();
    let dist: fn(DVectorView<f64>, DVectorView<f64>) -> f64 = match kind {
        KernelKind::Rbf => squared_euclidean,
        KernelKind::Expchi2 => {
            check_nonnegative(a)?;
            chi_squared
        }
        KernelKind::Linear => {
            return Err(Error::InvalidParameter(
                "the linear kernel has no bandwidth".into(),
            ))
        }
    };
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(dist(at.column(i), at.column(j)));
        }
    }
    let med = median(&mut d);
    if !med.is_finite() {
        return Err(Error::NonFinite("pairwise distances".into()));
    }
    if med <= 0.0 {
        return Ok(FALLBACK_BANDWIDTH);
    }
    Ok((med / 2.0).sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
