//! Activation expectations `C = <φ(h_γ) φ(h_δ)>` under a zero-mean Gaussian
//! with covariance `K`, and their derivatives with respect to `K`.
//!
//! For `φ(x) = erf(√π x / 2)` the expectation has the closed form
//! `C = (2/π) asin((π/2) K_γδ / (√(1 + π K_γγ / 2) √(1 + π K_δδ / 2)))`.
//! Any other activation goes through tensor-product Gauss–Hermite quadrature.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2, PI, SQRT_2};
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::hermite::GaussHermite;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Clamping tolerance for the arcsin argument.
pub const ASIN_CLAMP_TOL: f64 = 1e-12;
/// Symmetry tolerance of [`CovarianceMatrix::new`], relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Default quadrature order per axis.
pub const DEFAULT_QUADRATURE_POINTS: usize = 64;

pub type Activation = fn(f64) -> f64;

/// `erf(√π x / 2)`, scaled so that `φ'(0) = 1`.
pub fn erf_activation(x: f64) -> f64 {
    libm::erf(0.5 * PI.sqrt() * x)
}

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx`.
#[derive(Clone)]
pub struct HermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(n_points: usize) -> Result<Self> {
        let deg = NonZeroUsize::new(n_points)
            .ok_or_else(|| Error::InvalidArgument("quadrature needs at least one point".into()))?;
        let rule = GaussHermite::new(deg);
        let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(X, Y)]` for `(X, Y) = (l11 Z1, l21 Z1 + l22 Z2)` with standard normal `Z`.
    fn expect2(&self, l11: f64, l21: f64, l22: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for (&xi, &wi) in self.nodes.iter().zip(&self.weights) {
            let z1 = SQRT_2 * xi;
            let x = l11 * z1;
            let mut inner = 0.0;
            for (&xj, &wj) in self.nodes.iter().zip(&self.weights) {
                inner += wj * f(x, l21 * z1 + l22 * SQRT_2 * xj);
            }
            total += wi * inner;
        }
        total / PI
    }
}

impl fmt::Debug for HermiteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HermiteRule({} points)", self.nodes.len())
    }
}

/// How `C` is evaluated.
#[derive(Clone, Debug)]
pub enum KernelSpec {
    /// Closed form for `φ(x) = erf(√π x / 2)`.
    AnalyticErf,
    /// Arbitrary activation through quadrature.
    Quadrature { activation: Activation, rule: Arc<HermiteRule> },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::AnalyticErf
    }
}

impl KernelSpec {
    pub fn quadrature(activation: Activation, n_points: usize) -> Result<Self> {
        Ok(KernelSpec::Quadrature { activation, rule: Arc::new(HermiteRule::new(n_points)?) })
    }

    /// The pointwise nonlinearity this kernel describes.
    pub fn activation(&self) -> Activation {
        match self {
            KernelSpec::AnalyticErf => erf_activation,
            KernelSpec::Quadrature { activation, .. } => *activation,
        }
    }

    /// `<φ(x) φ(y)>` for `Var x = kxx`, `Var y = kyy`, `Cov(x, y) = kxy`.
    pub fn expectation(&self, kxx: f64, kyy: f64, kxy: f64) -> Result<f64> {
        match self {
            KernelSpec::AnalyticErf => {
                let u = erf_argument(kxx, kyy, kxy)?;
                Ok(FRAC_2_PI * u.asin())
            }
            KernelSpec::Quadrature { activation, rule } => {
                let (l11, l21, l22) = cholesky2(kxx, kyy, kxy)?;
                let phi = *activation;
                Ok(rule.expect2(l11, l21, l22, |x, y| phi(x) * phi(y)))
            }
        }
    }

    /// Partial derivatives `(∂/∂kxx, ∂/∂kyy, ∂/∂kxy)` of [`Self::expectation`]
    /// for two distinct nodes.
    pub fn expectation_partials(&self, kxx: f64, kyy: f64, kxy: f64) -> Result<(f64, f64, f64)> {
        match self {
            KernelSpec::AnalyticErf => {
                let u = erf_argument(kxx, kyy, kxy)?;
                let root = (1.0 - u * u).max(0.0).sqrt();
                let sx = 1.0 + FRAC_PI_2 * kxx;
                let sy = 1.0 + FRAC_PI_2 * kyy;
                let d_cross = 1.0 / (root * (sx * sy).sqrt());
                let d_xx = -0.5 * u / (root * sx);
                let d_yy = -0.5 * u / (root * sy);
                Ok((d_xx, d_yy, d_cross))
            }
            // Price's theorem: ∂/∂kxy = <φ'φ'>, ∂/∂kxx = <φ''(x) φ(y)> / 2.
            KernelSpec::Quadrature { activation, rule } => {
                let (l11, l21, l22) = cholesky2(kxx, kyy, kxy)?;
                let phi = *activation;
                let d1 = |t: f64| first_derivative(phi, t);
                let d2 = |t: f64| second_derivative(phi, t);
                let d_cross = rule.expect2(l11, l21, l22, |x, y| d1(x) * d1(y));
                let d_xx = 0.5 * rule.expect2(l11, l21, l22, |x, y| d2(x) * phi(y));
                let d_yy = 0.5 * rule.expect2(l11, l21, l22, |x, y| phi(x) * d2(y));
                Ok((d_xx, d_yy, d_cross))
            }
        }
    }

    /// `<φ(x)²>` for `Var x = k`.
    pub fn variance_term(&self, k: f64) -> Result<f64> {
        self.expectation(k, k, k)
    }

    /// `d/dk <φ(x)²>` for `Var x = k`.
    pub fn variance_term_derivative(&self, k: f64) -> Result<f64> {
        match self {
            KernelSpec::AnalyticErf => {
                let s = 1.0 + FRAC_PI_2 * k;
                let arg = 1.0 + PI * k;
                if !(arg > 0.0) || !(s > 0.0) {
                    return Err(Error::NonPsdInput(k));
                }
                Ok(1.0 / (arg.sqrt() * s))
            }
            KernelSpec::Quadrature { activation, rule } => {
                let (l11, _, _) = cholesky2(k, k, k)?;
                let phi = *activation;
                Ok(rule.expect2(l11, 0.0, 0.0, |x, _| {
                    let d1 = first_derivative(phi, x);
                    d1 * d1 + phi(x) * second_derivative(phi, x)
                }))
            }
        }
    }
}

fn erf_argument(kxx: f64, kyy: f64, kxy: f64) -> Result<f64> {
    let sx = 1.0 + FRAC_PI_2 * kxx;
    let sy = 1.0 + FRAC_PI_2 * kyy;
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::NonPsdInput(f64::NAN));
    }
    let u = FRAC_PI_2 * kxy / (sx * sy).sqrt();
    if !u.is_finite() || u.abs() > 1.0 + ASIN_CLAMP_TOL {
        return Err(Error::NonPsdInput(u));
    }
    Ok(u.clamp(-1.0, 1.0))
}

fn cholesky2(kxx: f64, kyy: f64, kxy: f64) -> Result<(f64, f64, f64)> {
    let scale = kxx.abs().max(kyy.abs()).max(1.0);
    if kxx < -ASIN_CLAMP_TOL * scale || kyy < -ASIN_CLAMP_TOL * scale {
        return Err(Error::NonPsdInput(f64::NAN));
    }
    let (kxx, kyy) = (kxx.max(0.0), kyy.max(0.0));
    let bound = (kxx * kyy).sqrt();
    if kxy.abs() > bound + ASIN_CLAMP_TOL * scale {
        return Err(Error::NonPsdInput(kxy / bound));
    }
    let l11 = kxx.sqrt();
    let l21 = if l11 > 0.0 { kxy.clamp(-bound, bound) / l11 } else { 0.0 };
    let l22 = (kyy - l21 * l21).max(0.0).sqrt();
    Ok((l11, l21, l22))
}

const ACTIVATION_FD_STEP: f64 = 1e-4;

fn first_derivative(phi: Activation, x: f64) -> f64 {
    let h = ACTIVATION_FD_STEP * x.abs().max(1.0);
    (phi(x + h) - phi(x - h)) / (2.0 * h)
}

fn second_derivative(phi: Activation, x: f64) -> f64 {
    let h = ACTIVATION_FD_STEP * x.abs().max(1.0);
    (phi(x + h) - 2.0 * phi(x) + phi(x - h)) / (h * h)
}

/// Symmetric `N x N` preactivation covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Checks squareness and symmetry (relative tolerance [`SYMMETRY_TOL`]).
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let scale = values.amax().max(1.0);
        let n = values.nrows();
        for i in 0..n {
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(values))
    }

    /// Symmetrizes `(M + Mᵀ) / 2` without checking.
    pub fn symmetrized(values: DMatrix<f64>) -> Self {
        let t = values.transpose();
        Self((values + t) * 0.5)
    }

    pub fn constant(n: usize, k: f64) -> Self {
        Self(DMatrix::from_element(n, n, k))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }

    /// Max-norm distance to another covariance of equal size.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

impl From<CovarianceMatrix> for DMatrix<f64> {
    fn from(k: CovarianceMatrix) -> Self {
        k.0
    }
}

/// `C_γδ` for one pair of nodes.
pub fn c_value(k: &CovarianceMatrix, gamma: usize, delta: usize, spec: &KernelSpec) -> Result<f64> {
    spec.expectation(k.get(gamma, gamma), k.get(delta, delta), k.get(gamma, delta))
}

/// `∂C_θφ / ∂K_γδ`, where `K_γδ` is the symmetric entry (one coordinate for
/// both `(γ, δ)` and `(δ, γ)`).
pub fn c_derivative(
    k: &CovarianceMatrix,
    theta: usize,
    phi: usize,
    gamma: usize,
    delta: usize,
    spec: &KernelSpec,
) -> Result<f64> {
    let wrt = (gamma.min(delta), gamma.max(delta));
    if theta == phi {
        if wrt == (theta, theta) {
            return spec.variance_term_derivative(k.get(theta, theta));
        }
        return Ok(0.0);
    }
    let (d_tt, d_pp, d_cross) =
        spec.expectation_partials(k.get(theta, theta), k.get(phi, phi), k.get(theta, phi))?;
    Ok(if wrt == (theta.min(phi), theta.max(phi)) {
        d_cross
    } else if wrt == (theta, theta) {
        d_tt
    } else if wrt == (phi, phi) {
        d_pp
    } else {
        0.0
    })
}

/// Elementwise `C` for a whole covariance matrix.
pub fn kernel_matrix(k: &CovarianceMatrix, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = k.n();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = spec.expectation(k.get(i, i), k.get(j, j), k.get(i, j))?;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// All nonzero first derivatives of `C` at `K`.
///
/// `cross[(θ, φ)] = ∂C_θφ/∂K_θφ` off the diagonal and `dC_θθ/dK_θθ` on it;
/// `diag_dep[(θ, φ)] = ∂C_θφ/∂K_θθ` for `θ ≠ φ` (zero diagonal).
#[derive(Clone, Debug)]
pub struct KernelJacobian {
    pub cross: DMatrix<f64>,
    pub diag_dep: DMatrix<f64>,
}

impl KernelJacobian {
    pub fn at(k: &CovarianceMatrix, spec: &KernelSpec) -> Result<Self> {
        let n = k.n();
        let mut cross = DMatrix::zeros(n, n);
        let mut diag_dep = DMatrix::zeros(n, n);
        for i in 0..n {
            cross[(i, i)] = spec.variance_term_derivative(k.get(i, i))?;
            for j in 0..i {
                let (d_ii, d_jj, d_ij) = spec.expectation_partials(k.get(i, i), k.get(j, j), k.get(i, j))?;
                cross[(i, j)] = d_ij;
                cross[(j, i)] = d_ij;
                diag_dep[(i, j)] = d_ii;
                diag_dep[(j, i)] = d_jj;
            }
        }
        Ok(Self { cross, diag_dep })
    }

    /// First-order change of `C` under a symmetric perturbation `Δ` of `K`.
    pub fn apply(&self, delta: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.cross.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.cross[(i, i)] * delta[(i, i)]
            } else {
                self.cross[(i, j)] * delta[(i, j)]
                    + self.diag_dep[(i, j)] * delta[(i, i)]
                    + self.diag_dep[(j, i)] * delta[(j, j)]
            }
        })
    }
}
