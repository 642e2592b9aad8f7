//! Linearization of the covariance map around a fixed point, its spectrum,
//! and the search for the critical weight variance.

use std::borrow::Cow;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{
    covariance_map, distance_report, iterate_to_equilibrium, scalar_fixed_point, DistanceSource, GpHyper,
    ZERO_DISTANCE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::kernel::{CovarianceMatrix, KernelJacobian, KernelSpec};
use crate::spectrum::{
    arnoldi_spectral_radius, eigen_decomposition, eigenvalues, propagation_depth, spectral_radius_of,
    ArnoldiOptions, DENSE_LIMIT,
};

/// Fixed-point residual accepted by [`build_linearized_map`].
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const DEFAULT_BRACKET: (f64, f64) = (0.1, 20.0);
pub const DEFAULT_SIGMA_TOL: f64 = 1e-4;
/// Eigenvector bases worse conditioned than this are rejected.
pub const MAX_EIGENVECTOR_CONDITION: f64 = 1e12;

/// Row-major enumeration of the upper triangle `{(a, b): a <= b}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
        Self { n, pairs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Index of the unordered pair `{a, b}`.
    pub fn index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        a * (2 * self.n - a + 1) / 2 + (b - a)
    }

    pub fn pair(&self, idx: usize) -> (usize, usize) {
        self.pairs[idx]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pack(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.pairs.iter().map(|&(a, b)| m[(a, b)]))
    }

    pub fn unpack(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            m[(a, b)] = v[i];
            m[(b, a)] = v[i];
        }
        m
    }
}

/// Jacobian of the covariance map at a state, applied without forming it:
/// `HΔ = σ_w² A J(Δ) Aᵀ` with `J` the kernel Jacobian.
#[derive(Clone, Debug)]
pub struct TransitionOperator {
    a: DMatrix<f64>,
    jacobian: KernelJacobian,
    sigma_w2: f64,
    index: PairIndex,
}

impl TransitionOperator {
    pub fn at(a: &ShiftOperator, hyper: &GpHyper, k: &CovarianceMatrix) -> Result<Self> {
        if a.n() != k.n() {
            return Err(Error::DimensionMismatch(format!("operator {} vs covariance {}", a.n(), k.n())));
        }
        Ok(Self {
            a: a.matrix().clone(),
            jacobian: KernelJacobian::at(k, &hyper.kernel)?,
            sigma_w2: hyper.sigma_w2,
            index: PairIndex::new(a.n()),
        })
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn pair_index(&self) -> &PairIndex {
        &self.index
    }

    /// Action on a symmetric perturbation matrix.
    pub fn apply_matrix(&self, delta: &DMatrix<f64>) -> DMatrix<f64> {
        let j = self.jacobian.apply(delta);
        (&self.a * j * self.a.transpose()) * self.sigma_w2
    }

    /// Action on pair-space coordinates.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.index.pack(&self.apply_matrix(&self.index.unpack(v)))
    }

    /// Dense `M x M` matrix, one column per pair coordinate.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.index.n();
        let m = self.index.len();
        let a = &self.a;
        let w = self.sigma_w2;
        let mut h = DMatrix::zeros(m, m);
        let mut col = DMatrix::<f64>::zeros(n, n);
        for (c, &(g, d)) in self.index.pairs().iter().enumerate() {
            if g == d {
                // J(E_gg) = c0 e_g e_gᵀ + e_g vᵀ + v e_gᵀ
                let c0 = self.jacobian.cross[(g, g)];
                let v = DVector::from_fn(n, |t, _| if t == g { 0.0 } else { self.jacobian.diag_dep[(g, t)] });
                let av = a * v;
                let ag = a.column(g);
                for beta in 0..n {
                    for alpha in 0..=beta {
                        col[(alpha, beta)] = c0 * ag[alpha] * ag[beta] + ag[alpha] * av[beta] + av[alpha] * ag[beta];
                    }
                }
            } else {
                let x = self.jacobian.cross[(g, d)];
                let ag = a.column(g);
                let ad = a.column(d);
                for beta in 0..n {
                    for alpha in 0..=beta {
                        col[(alpha, beta)] = x * (ag[alpha] * ad[beta] + ad[alpha] * ag[beta]);
                    }
                }
            }
            for (r, &(alpha, beta)) in self.index.pairs().iter().enumerate() {
                h[(r, c)] = w * col[(alpha, beta)];
            }
        }
        h
    }

    /// Spectral radius: dense eigenvalues up to [`DENSE_LIMIT`], Arnoldi beyond.
    pub fn spectral_radius(&self) -> Result<f64> {
        if self.dim() <= DENSE_LIMIT {
            Ok(spectral_radius_of(&eigenvalues(&self.dense())?))
        } else {
            arnoldi_spectral_radius(|v| self.apply(v), self.dim(), &ArnoldiOptions::default())
        }
    }
}

/// `H` at a fixed point together with its spectrum.
#[derive(Clone, Debug)]
pub struct LinearizedMap {
    pub transition: DMatrix<f64>,
    pub fixed_point: CovarianceMatrix,
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors as columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<Complex64>,
    pub index: PairIndex,
}

impl LinearizedMap {
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius_of(&self.eigenvalues)
    }

    /// `ξ_i` per eigenvalue, `None` where `|λ_i|` is 0 or at least 1.
    pub fn depths(&self) -> Vec<Option<f64>> {
        self.eigenvalues.iter().map(|&l| propagation_depth(l)).collect()
    }
}

/// Linearizes the covariance map at `fixed_point`.
pub fn build_linearized_map(a: &ShiftOperator, hyper: &GpHyper, fixed_point: &CovarianceMatrix) -> Result<LinearizedMap> {
    let residual = covariance_map(fixed_point, a, hyper)?.max_abs_diff(fixed_point);
    if !(residual < FIXED_POINT_TOL) {
        return Err(Error::NotAFixedPoint(residual));
    }
    let op = TransitionOperator::at(a, hyper, fixed_point)?;
    if op.dim() > DENSE_LIMIT {
        return Err(Error::SpectrumUnavailable(op.dim()));
    }
    let transition = op.dense();
    let (eigenvalues, eigenvectors) = eigen_decomposition(&transition)?;
    Ok(LinearizedMap { transition, fixed_point: fixed_point.clone(), eigenvalues, eigenvectors, index: op.index })
}

/// The constant state `k* 1 1ᵀ`, `k*` the largest nonnegative solution of
/// `k = σ_b² + σ_w² C(k)`.
pub fn zero_distance_fixed_point(a: &ShiftOperator, hyper: &GpHyper) -> Result<CovarianceMatrix> {
    let k = scalar_fixed_point(hyper.sigma_w2, hyper.sigma_b2, &hyper.kernel)?;
    Ok(CovarianceMatrix::constant(a.n(), k))
}

/// A lone node is analysed as two copies of itself (one network, two
/// inputs); its own 1x1 map carries no distance direction.
fn transition_graph(a: &ShiftOperator) -> Cow<'_, ShiftOperator> {
    if a.n() == 1 {
        Cow::Owned(ShiftOperator::identity(2))
    } else {
        Cow::Borrowed(a)
    }
}

/// Spectral radius of `H` at the zero-distance state and whether it exceeds 1.
pub fn chaos_indicator(a: &ShiftOperator, hyper: &GpHyper) -> Result<(f64, bool)> {
    hyper.validate()?;
    let a = transition_graph(a);
    let k = zero_distance_fixed_point(&a, hyper)?;
    let rho = TransitionOperator::at(&a, hyper, &k)?.spectral_radius()?;
    Ok((rho, rho > 1.0))
}

fn check_bracket(bracket: (f64, f64), tol: f64) -> Result<()> {
    let (lo, hi) = bracket;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("bracket must satisfy 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Bisection on `σ_w²` for the point where the spectral radius at the
/// zero-distance state crosses 1.
pub fn critical_sigma(
    a: &ShiftOperator,
    sigma_b2: f64,
    kernel: &KernelSpec,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    check_bracket(bracket, tol)?;
    let rho = |w: f64| chaos_indicator(a, &GpHyper::new(w, sigma_b2).with_kernel(kernel.clone()));
    let (mut lo, mut hi) = bracket;
    let (mut rho_lo, lo_chaotic) = rho(lo)?;
    let (mut rho_hi, hi_chaotic) = rho(hi)?;
    if lo_chaotic || !hi_chaotic {
        return Err(Error::InvalidBracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (r, chaotic) = rho(mid)?;
        if r < rho_lo || r > rho_hi {
            log::warn!("spectral radius not monotone in sigma_w2 near {mid}: {rho_lo} .. {r} .. {rho_hi}");
        }
        if chaotic {
            hi = mid;
            rho_hi = r;
        } else {
            lo = mid;
            rho_lo = r;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Settings for the equilibrium probe.
#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    pub max_layers: usize,
    pub tol: f64,
    pub seed: u64,
}

impl ProbeOptions {
    /// Layer budget shrinking with the cubic cost of one layer, between
    /// 4000 and 200000 layers.
    pub fn for_size(n: usize) -> Self {
        let budget = 1e9 / (n.max(1) as f64).powi(3);
        Self { max_layers: budget.clamp(4000.0, 200_000.0) as usize, tol: 1e-12, seed: 0x5eed }
    }
}

/// Generic start: half constant, half a random correlation matrix, scaled
/// to the size of the zero-distance state.
pub fn probe_initial_state(n: usize, scale: f64, seed: u64) -> CovarianceMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::<f64>::from_fn(n, n + 2, |_, _| StandardNormal.sample(&mut rng));
    let gram: DMatrix<f64> = &x * x.transpose();
    let d = gram.diagonal().map(f64::sqrt);
    let corr = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] / (d[i] * d[j]));
    CovarianceMatrix::symmetrized(corr.map(|c| scale * (0.5 + 0.5 * c)))
}

/// Whether the prior started from a generic state keeps `μ >= 1e-5` at
/// equilibrium (or at the end of the layer budget).
pub fn probe_is_chaotic(a: &ShiftOperator, hyper: &GpHyper, opts: &ProbeOptions) -> Result<(bool, f64)> {
    hyper.validate()?;
    let a = transition_graph(a);
    let k = scalar_fixed_point(hyper.sigma_w2, hyper.sigma_b2, &hyper.kernel)?;
    let k0 = probe_initial_state(a.n(), k.max(1.0), opts.seed);
    let eq = iterate_to_equilibrium(&a, hyper, &k0, opts.max_layers, opts.tol)?;
    let mu = distance_report(DistanceSource::Kernel(&eq.covariance, &hyper.kernel))?.mu;
    Ok((mu >= ZERO_DISTANCE_THRESHOLD, mu))
}

/// Critical `σ_w²` by bisection on the equilibrium-distance test instead of
/// the spectrum.
pub fn critical_sigma_by_probe(
    a: &ShiftOperator,
    sigma_b2: f64,
    kernel: &KernelSpec,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    critical_sigma_by_probe_with(a, sigma_b2, kernel, bracket, tol, &ProbeOptions::for_size(a.n().max(2)))
}

pub fn critical_sigma_by_probe_with(
    a: &ShiftOperator,
    sigma_b2: f64,
    kernel: &KernelSpec,
    bracket: (f64, f64),
    tol: f64,
    opts: &ProbeOptions,
) -> Result<f64> {
    check_bracket(bracket, tol)?;
    let started = Instant::now();
    let probe = |w: f64| probe_is_chaotic(a, &GpHyper::new(w, sigma_b2).with_kernel(kernel.clone()), opts);
    let (mut lo, mut hi) = bracket;
    if probe(lo)?.0 || !probe(hi)?.0 {
        return Err(Error::InvalidBracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if probe(mid)?.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    log::info!("equilibrium probe on {} nodes took {:.2?}", a.n(), started.elapsed());
    Ok(0.5 * (lo + hi))
}

/// Overlaps `Δ_i` of a symmetric perturbation with the eigenmodes of `H`,
/// so that `Δ = Σ_i Δ_i V^(i)`.
pub fn decompose_perturbation(map: &LinearizedMap, delta: &DMatrix<f64>) -> Result<DVector<Complex64>> {
    let n = map.index.n();
    if delta.nrows() != n || delta.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {}x{}, map acts on {n} nodes",
            delta.nrows(),
            delta.ncols()
        )));
    }
    let v = &map.eigenvectors;
    let sv = v.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_EIGENVECTOR_CONDITION) {
        return Err(Error::DefectiveSpectrum(cond));
    }
    let rhs = map.index.pack(delta).map(|x| Complex64::new(x, 0.0));
    v.clone().lu().solve(&rhs).ok_or(Error::DefectiveSpectrum(cond))
}

/// CSV with columns `index,re,im,abs,xi`; `xi` is empty where undefined.
pub fn write_spectrum_csv<W: Write>(eigenvalues: &[Complex64], w: W) -> Result<()> {
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eigenvalues[j].norm().total_cmp(&eigenvalues[i].norm()));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "re", "im", "abs", "xi"])?;
    for (rank, &i) in order.iter().enumerate() {
        let l = eigenvalues[i];
        out.write_record([
            rank.to_string(),
            l.re.to_string(),
            l.im.to_string(),
            l.norm().to_string(),
            propagation_depth(l).map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Times both criticality searches; used by the CLI report.
#[derive(Clone, Copy, Debug)]
pub struct CriticalComparison {
    pub eigen: f64,
    pub probe: f64,
    pub eigen_seconds: f64,
    pub probe_seconds: f64,
}

pub fn compare_critical(
    a: &ShiftOperator,
    sigma_b2: f64,
    kernel: &KernelSpec,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CriticalComparison> {
    let t = Instant::now();
    let eigen = critical_sigma(a, sigma_b2, kernel, bracket, tol)?;
    let eigen_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let probe = critical_sigma_by_probe(a, sigma_b2, kernel, bracket, tol)?;
    Ok(CriticalComparison { eigen, probe, eigen_seconds, probe_seconds: t.elapsed().as_secs_f64() })
}
