//! Eigenvalue back ends: dense nonsymmetric decomposition and a
//! matrix-free restarted Arnoldi iteration for the spectral radius.

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Largest pair-space dimension solved densely.
pub const DENSE_LIMIT: usize = 5000;

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    to_faer(m).eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// Eigenvalues and right eigenvectors (columns, unit 2-norm).
pub fn eigen_decomposition(m: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = m.nrows();
    let evd = to_faer(m).eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values = (0..n).map(|i| s[i]).collect();
    let mut vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    for mut col in vectors.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= Complex64::new(norm, 0.0);
        }
    }
    Ok((values, vectors))
}

pub fn spectral_radius_of(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Settings for [`arnoldi_spectral_radius`].
#[derive(Clone, Copy, Debug)]
pub struct ArnoldiOptions {
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Relative Ritz residual at which the dominant eigenvalue is accepted.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self { krylov_dim: 60, max_restarts: 50, tol: 1e-10, seed: 0x5eed }
    }
}

/// Modulus of the dominant eigenvalue of the linear operator `op` on `R^dim`.
///
/// Explicitly restarted Arnoldi with full reorthogonalization; each restart
/// continues from the real span of the dominant Ritz vector.
pub fn arnoldi_spectral_radius(
    op: impl Fn(&DVector<f64>) -> DVector<f64>,
    dim: usize,
    opts: &ArnoldiOptions,
) -> Result<f64> {
    if dim == 0 {
        return Ok(0.0);
    }
    let m = opts.krylov_dim.clamp(1, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let mut best = 0.0;
    let mut last_residual = f64::INFINITY;

    for _ in 0..=opts.max_restarts {
        let norm = start.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let mut basis: Vec<DVector<f64>> = vec![start / norm];
        let mut hess = DMatrix::<f64>::zeros(m + 1, m);
        let mut size = m;
        for j in 0..m {
            let mut w = op(&basis[j]);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let h = v.dot(&w);
                    hess[(i, j)] += h;
                    w.axpy(-h, v, 1.0);
                }
            }
            let h = w.norm();
            hess[(j + 1, j)] = h;
            if h <= 1e-14 * hess.column(j).amax().max(1e-300) {
                size = j + 1;
                break;
            }
            if j + 1 < m {
                basis.push(w / h);
            }
        }

        let small = hess.view((0, 0), (size, size)).into_owned();
        let (values, vectors) = eigen_decomposition(&small)?;
        let (idx, theta) = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, v)| (i, *v))
            .expect("nonempty Krylov space");
        best = theta.norm();
        if size < m || size == dim {
            // invariant subspace: Ritz values are exact
            return Ok(best);
        }
        let y = vectors.column(idx);
        let residual = hess[(m, m - 1)] * y[size - 1].norm() / y.norm();
        last_residual = residual;
        if residual <= opts.tol * best.max(1e-300) {
            return Ok(best);
        }
        let mut next = DVector::<f64>::zeros(dim);
        for (i, v) in basis.iter().enumerate().take(size) {
            next.axpy(y[i].re + y[i].im, v, 1.0);
        }
        start = next;
    }
    if last_residual <= 1e-6 * best.max(1e-300) {
        log::warn!("Arnoldi stopped at relative residual {:e}", last_residual / best);
        return Ok(best);
    }
    Err(Error::NoConvergence(format!(
        "Arnoldi iteration: dominant Ritz residual {last_residual:e} after {} restarts",
        opts.max_restarts
    )))
}

/// Propagation depth `ξ = −1/ln|λ|`, defined for `0 < |λ| < 1`.
pub fn propagation_depth(lambda: Complex64) -> Option<f64> {
    let r = lambda.norm();
    if r > 0.0 && r < 1.0 {
        Some(-1.0 / r.ln())
    } else {
        None
    }
}
