//! Layer-to-layer covariance recursion of the infinitely wide GCN,
//! `K' = σ_b² 1 1ᵀ + σ_w² A C(K) Aᵀ`, its equilibria, and the node-pair
//! feature distances used to quantify oversmoothing.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::kernel::{kernel_matrix, CovarianceMatrix, KernelSpec};

/// Default equilibrium tolerance (max norm).
pub const EQUILIBRIUM_TOL: f64 = 1e-12;
/// Default layer budget for equilibrium searches.
pub const MAX_LAYERS: usize = 4000;
/// `μ` below this counts as zero distance (oversmoothed).
pub const ZERO_DISTANCE_THRESHOLD: f64 = 1e-5;

/// Prior hyperparameters of the network.
#[derive(Clone, Debug)]
pub struct GpHyper {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    /// Readout noise standard deviation `σ_ro`.
    pub sigma_ro: f64,
    pub kernel: KernelSpec,
}

impl GpHyper {
    /// Erf kernel, readout noise 0.01.
    pub fn new(sigma_w2: f64, sigma_b2: f64) -> Self {
        Self { sigma_w2, sigma_b2, sigma_ro: 0.01, kernel: KernelSpec::AnalyticErf }
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_readout_noise(mut self, sigma_ro: f64) -> Self {
        self.sigma_ro = sigma_ro;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w2 >= 0.0) || !(self.sigma_b2 >= 0.0) || !(self.sigma_ro >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "hyperparameters must be nonnegative (σ_w² = {}, σ_b² = {}, σ_ro = {})",
                self.sigma_w2, self.sigma_b2, self.sigma_ro
            )));
        }
        Ok(())
    }
}

/// Preactivation covariance at a given layer.
#[derive(Clone, Debug)]
pub struct GpState {
    pub layer: usize,
    pub covariance: CovarianceMatrix,
}

fn check_size(a: &ShiftOperator, k: &CovarianceMatrix) -> Result<()> {
    if a.n() != k.n() {
        return Err(Error::DimensionMismatch(format!(
            "shift operator is {}x{}, covariance is {}x{}",
            a.n(),
            a.n(),
            k.n(),
            k.n()
        )));
    }
    Ok(())
}

/// The covariance map `T[K] = σ_b² 1 1ᵀ + σ_w² A C(K) Aᵀ`.
pub fn covariance_map(k: &CovarianceMatrix, a: &ShiftOperator, hyper: &GpHyper) -> Result<CovarianceMatrix> {
    check_size(a, k)?;
    let c = kernel_matrix(k, &hyper.kernel)?;
    let am = a.matrix();
    let mixed = am * c * am.transpose();
    let out = mixed.map(|v| hyper.sigma_b2 + hyper.sigma_w2 * v);
    Ok(CovarianceMatrix::symmetrized(out))
}

/// One layer of the recursion.
pub fn step(state: &GpState, a: &ShiftOperator, hyper: &GpHyper) -> Result<GpState> {
    Ok(GpState { layer: state.layer + 1, covariance: covariance_map(&state.covariance, a, hyper)? })
}

/// First-layer covariance `σ_b² + σ_w² A (X Xᵀ / d0) Aᵀ` for input features `X`.
pub fn input_covariance(features: &DMatrix<f64>, a: &ShiftOperator, hyper: &GpHyper) -> Result<GpState> {
    if features.nrows() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} nodes",
            features.nrows(),
            a.n()
        )));
    }
    if features.ncols() == 0 {
        return Err(Error::DimensionMismatch("input feature dimension is zero".into()));
    }
    let gram = features * features.transpose() / features.ncols() as f64;
    let am = a.matrix();
    let k = (am * gram * am.transpose()).map(|v| hyper.sigma_b2 + hyper.sigma_w2 * v);
    Ok(GpState { layer: 1, covariance: CovarianceMatrix::symmetrized(k) })
}

/// Result of iterating the recursion towards a fixed point.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub covariance: CovarianceMatrix,
    pub layers_used: usize,
    /// Max-norm change of the last step.
    pub residual: f64,
    pub converged: bool,
}

/// Iterates up to `max_layers` steps, stopping once the max-norm change
/// drops below `tol`. Never fails on non-convergence; see [`find_equilibrium`].
pub fn iterate_to_equilibrium(
    a: &ShiftOperator,
    hyper: &GpHyper,
    k0: &CovarianceMatrix,
    max_layers: usize,
    tol: f64,
) -> Result<Equilibrium> {
    if max_layers == 0 {
        return Err(Error::InvalidArgument("max_layers must be at least 1".into()));
    }
    check_size(a, k0)?;
    let mut k = k0.clone();
    let mut residual = f64::INFINITY;
    for layer in 1..=max_layers {
        let next = covariance_map(&k, a, hyper)?;
        residual = next.max_abs_diff(&k);
        k = next;
        if !residual.is_finite() {
            return Err(Error::NoConvergence(format!("covariance diverged at layer {layer}")));
        }
        if residual < tol {
            return Ok(Equilibrium { covariance: k, layers_used: layer, residual, converged: true });
        }
    }
    Ok(Equilibrium { covariance: k, layers_used: max_layers, residual, converged: false })
}

/// Like [`iterate_to_equilibrium`] but reports an exhausted budget as
/// [`Error::NotConverged`].
pub fn find_equilibrium(
    a: &ShiftOperator,
    hyper: &GpHyper,
    k0: &CovarianceMatrix,
    max_layers: usize,
    tol: f64,
) -> Result<(CovarianceMatrix, usize)> {
    let eq = iterate_to_equilibrium(a, hyper, k0, max_layers, tol)?;
    if !eq.converged {
        return Err(Error::NotConverged { layers: eq.layers_used, residual: eq.residual });
    }
    Ok((eq.covariance, eq.layers_used))
}

/// Largest nonnegative solution of `k = σ_b² + σ_w² <φ(h)²>_{Var h = k}`.
///
/// This is the diagonal value of the zero-distance state `k 1 1ᵀ`, using
/// that the shift operator has unit row sums.
pub fn scalar_fixed_point(sigma_w2: f64, sigma_b2: f64, kernel: &KernelSpec) -> Result<f64> {
    if !(sigma_w2 >= 0.0 && sigma_b2 >= 0.0) {
        return Err(Error::InvalidArgument("σ_w², σ_b² must be nonnegative".into()));
    }
    let f = |k: f64| -> Result<f64> { Ok(sigma_b2 + sigma_w2 * kernel.variance_term(k)? - k) };
    // C(k) <= 1 for bounded activations of magnitude <= 1; grow until the sign flips.
    let mut hi = sigma_b2 + sigma_w2 + 1.0;
    let mut guard = 0;
    while f(hi)? > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NoConvergence("scalar fixed point is unbounded".into()));
        }
    }
    let mut lo = if sigma_b2 > 0.0 {
        0.0
    } else {
        // k = 0 is always a root here; look for the largest positive one.
        let mut probe = hi;
        loop {
            probe *= 0.5;
            if probe < 1e-300 {
                return Ok(0.0);
            }
            if f(probe)? > 0.0 {
                break probe;
            }
        }
    };
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pairwise feature distances and their mean `μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    pub pairwise: DMatrix<f64>,
    pub mu: f64,
}

/// Where distances come from.
pub enum DistanceSource<'a> {
    /// Infinite width: `C` evaluated at a covariance.
    Kernel(&'a CovarianceMatrix, &'a KernelSpec),
    /// Finite width: features `N x d_l`.
    Features(&'a DMatrix<f64>),
}

impl DistanceReport {
    /// From normalized scalar products `C'_αβ`.
    pub fn from_gram(gram: &DMatrix<f64>) -> Self {
        let n = gram.nrows();
        let pairwise = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]
            }
        });
        let mut sum = 0.0;
        for j in 0..n {
            for i in 0..j {
                sum += pairwise[(i, j)];
            }
        }
        let mu = if n > 1 { sum / (2.0 * n as f64 * (n as f64 - 1.0)) } else { 0.0 };
        Self { pairwise, mu }
    }

    fn offdiag(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.pairwise.nrows();
        (0..n).flat_map(move |j| (0..j).map(move |i| self.pairwise[(i, j)]))
    }

    pub fn max_offdiag(&self) -> f64 {
        self.offdiag().fold(0.0, f64::max)
    }

    pub fn min_offdiag(&self) -> f64 {
        let m = self.offdiag().fold(f64::INFINITY, f64::min);
        if m.is_finite() {
            m
        } else {
            0.0
        }
    }

    /// Mean distance over pairs within the same community and across
    /// communities.
    pub fn community_means(&self, labels: &[i8]) -> (f64, f64) {
        let n = self.pairwise.nrows();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n {
            for i in 0..j {
                if labels[i] == labels[j] {
                    within += self.pairwise[(i, j)];
                    nw += 1;
                } else {
                    across += self.pairwise[(i, j)];
                    na += 1;
                }
            }
        }
        (within / nw.max(1) as f64, across / na.max(1) as f64)
    }

    pub fn is_zero_distance(&self) -> bool {
        self.mu < ZERO_DISTANCE_THRESHOLD
    }
}

pub fn distance_report(source: DistanceSource<'_>) -> Result<DistanceReport> {
    match source {
        DistanceSource::Kernel(k, spec) => Ok(DistanceReport::from_gram(&kernel_matrix(k, spec)?)),
        DistanceSource::Features(x) => {
            let d = x.ncols().max(1) as f64;
            Ok(DistanceReport::from_gram(&(x * x.transpose() / d)))
        }
    }
}

/// One row of a trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub layer: usize,
    pub mu: f64,
    pub min_offdiag_distance: f64,
    pub max_offdiag_distance: f64,
}

impl TrajectoryRow {
    pub fn new(layer: usize, report: &DistanceReport) -> Self {
        Self {
            layer,
            mu: report.mu,
            min_offdiag_distance: report.min_offdiag(),
            max_offdiag_distance: report.max_offdiag(),
        }
    }
}

/// GP distance summaries for layers `first.layer ..= first.layer + extra`.
pub fn gp_trajectory(
    first: &GpState,
    a: &ShiftOperator,
    hyper: &GpHyper,
    extra_layers: usize,
) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::with_capacity(extra_layers + 1);
    let mut state = first.clone();
    for i in 0..=extra_layers {
        if i > 0 {
            state = step(&state, a, hyper)?;
        }
        let report = distance_report(DistanceSource::Kernel(&state.covariance, &hyper.kernel))?;
        rows.push(TrajectoryRow::new(state.layer, &report));
    }
    Ok(rows)
}

/// CSV with columns `layer,mu,min_offdiag_distance,max_offdiag_distance`.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer", "mu", "min_offdiag_distance", "max_offdiag_distance"])?;
    for r in rows {
        out.write_record([
            r.layer.to_string(),
            r.mu.to_string(),
            r.min_offdiag_distance.to_string(),
            r.max_offdiag_distance.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
