//! Two-variable reduction of the covariance recursion on the complete
//! graph, where every state of the form `K_c + δ(K_a − K_c)` is preserved.

use std::io::Write;

use crate::dynamics::scalar_fixed_point;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Bisection interval for [`analytic_transition`].
pub const TRANSITION_BRACKET: (f64, f64) = (0.1, 20.0);
pub const TRANSITION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompleteGraphReduction {
    pub n: usize,
    pub g: f64,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub g_a: f64,
    pub g_c: f64,
    pub h_a: f64,
    pub h_c: f64,
}

/// `(g_a, g_c, h_a, h_c)`: weights of `C_a` and `C_c` in the new variance
/// (`g_*`) and covariance (`h_*`), summed from the explicit shift operator.
pub fn reduction_constants(n: usize, g: f64, sigma_w2: f64) -> Result<(f64, f64, f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("complete graph needs at least 2 nodes, got {n}")));
    }
    let off = g / (n as f64 - 1.0);
    let diag = 1.0 - g;
    let g_a = sigma_w2 * (diag * diag + (n as f64 - 1.0) * off * off);
    let h_a = sigma_w2 * (2.0 * diag * off + (n as f64 - 2.0) * off * off);
    Ok((g_a, sigma_w2 - g_a, h_a, sigma_w2 - h_a))
}

impl CompleteGraphReduction {
    pub fn new(n: usize, g: f64, sigma_w2: f64, sigma_b2: f64) -> Result<Self> {
        let (g_a, g_c, h_a, h_c) = reduction_constants(n, g, sigma_w2)?;
        Ok(Self { n, g, sigma_w2, sigma_b2, g_a, g_c, h_a, h_c })
    }

    /// One layer on `(K_a, K_c)`.
    pub fn reduced_step(&self, k_a: f64, k_c: f64, kernel: &KernelSpec) -> Result<(f64, f64)> {
        let c_a = kernel.variance_term(k_a)?;
        let c_c = kernel.expectation(k_a, k_a, k_c)?;
        Ok((
            self.sigma_b2 + self.g_a * c_a + self.g_c * c_c,
            self.sigma_b2 + self.h_a * c_a + self.h_c * c_c,
        ))
    }

    /// `∂c'/∂c` at the perfectly correlated state for the erf kernel.
    pub fn correlation_slope(&self) -> Result<f64> {
        let k = scalar_fixed_point(self.sigma_w2, self.sigma_b2, &KernelSpec::AnalyticErf)?;
        let two_over_pi = std::f64::consts::FRAC_2_PI;
        let x = k / (two_over_pi + k);
        // ∂C_c/∂c / K_a, finite as K_a → 0
        let dc = two_over_pi / ((1.0 - x * x).sqrt() * (two_over_pi + k));
        Ok((self.h_c - self.g_c) * dc)
    }
}

pub fn reduced_step(k_a: f64, k_c: f64, reduction: &CompleteGraphReduction, kernel: &KernelSpec) -> Result<(f64, f64)> {
    reduction.reduced_step(k_a, k_c, kernel)
}

/// Weight variance at which the zero-distance state of the complete graph
/// loses stability, by bisection of `∂c'/∂c − 1`.
pub fn analytic_transition(n: usize, g: f64, sigma_b2: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidG(g));
    }
    let slope = |w: f64| -> Result<f64> { CompleteGraphReduction::new(n, g, w, sigma_b2)?.correlation_slope() };
    let (mut lo, mut hi) = TRANSITION_BRACKET;
    let (f_lo, f_hi) = (slope(lo)? - 1.0, slope(hi)? - 1.0);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoRoot { lo, hi });
    }
    while hi - lo > TRANSITION_TOL {
        let mid = 0.5 * (lo + hi);
        if (slope(mid)? - 1.0).signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// CSV with columns `g,sigma_w2_crit`.
pub fn write_boundary_csv<W: Write>(rows: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["g", "sigma_w2_crit"])?;
    for (g, s) in rows {
        out.write_record([g.to_string(), s.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
