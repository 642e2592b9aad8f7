//! Finite-width GCN with random Gaussian weights: the Monte Carlo reference
//! for the GP description, plus a linear readout fitted on training nodes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{distance_report, DistanceSource, GpHyper, TrajectoryRow};
use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::inference::SplitLabels;

pub const DEFAULT_WIDTH: usize = 200;
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// One draw of all network parameters. Hidden weights of layer `l` are
/// `d_l x d_{l-1}` with entries of variance `σ_w² / d_{l-1}`.
#[derive(Clone, Debug)]
pub struct GcnSample {
    pub widths: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub readout_weights: DVector<f64>,
    pub readout_bias: f64,
    pub seed: u64,
    activation: fn(f64) -> f64,
    sigma_ro: f64,
}

/// Hidden features per layer (`features[l]` is `X^(l)`, `features[0]`
/// the input) and the noisy scalar output per node.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub features: Vec<DMatrix<f64>>,
    pub output: DVector<f64>,
}

fn gaussian<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

impl GcnSample {
    /// `widths = [d_0, d_1, ..., d_L]`.
    pub fn draw(widths: &[usize], hyper: &GpHyper, seed: u64) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument("widths must be nonempty and positive".into()));
        }
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd_b = hyper.sigma_b2.sqrt();
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let sd = (hyper.sigma_w2 / fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| gaussian(&mut rng, sd)));
            biases.push(DVector::from_fn(fan_out, |_, _| gaussian(&mut rng, sd_b)));
        }
        let last = *widths.last().expect("nonempty");
        let sd = (hyper.sigma_w2 / last as f64).sqrt();
        let readout_weights = DVector::from_fn(last, |_, _| gaussian(&mut rng, sd));
        let readout_bias = gaussian(&mut rng, sd_b);
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            readout_weights,
            readout_bias,
            seed,
            activation: hyper.kernel.activation(),
            sigma_ro: hyper.sigma_ro,
        })
    }

    /// Uniform hidden width `width` over `depth` layers.
    pub fn draw_uniform(d0: usize, width: usize, depth: usize, hyper: &GpHyper, seed: u64) -> Result<Self> {
        let mut widths = vec![d0];
        widths.extend(std::iter::repeat_n(width, depth));
        Self::draw(&widths, hyper, seed)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Propagates `x0` (`N x d_0`). The readout noise is drawn from a stream
    /// derived from the sample seed.
    pub fn forward(&self, a: &ShiftOperator, x0: &DMatrix<f64>) -> Result<ForwardPass> {
        if x0.nrows() != a.n() || x0.ncols() != self.widths[0] {
            return Err(Error::DimensionMismatch(format!(
                "input is {}x{}, expected {}x{}",
                x0.nrows(),
                x0.ncols(),
                a.n(),
                self.widths[0]
            )));
        }
        let am = a.matrix();
        let phi = self.activation;
        let mut features = Vec::with_capacity(self.depth() + 1);
        features.push(x0.clone());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let prev = features.last().expect("input present");
            let mut h = am * prev * w.transpose();
            for mut row in h.row_iter_mut() {
                row += b.transpose();
            }
            features.push(h.map(phi));
        }
        let last = features.last().expect("input present");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let noise = DVector::from_fn(a.n(), |_, _| gaussian(&mut rng, self.sigma_ro));
        let output = am * last * &self.readout_weights + DVector::from_element(a.n(), self.readout_bias) + noise;
        Ok(ForwardPass { features, output })
    }
}

/// Hidden features of the network [`GcnSample::draw`] would produce for the
/// same arguments, drawing one layer of weights at a time. `visit` sees
/// `(l, X^(l))` for `l = 1..=L`.
pub fn stream_hidden(
    widths: &[usize],
    hyper: &GpHyper,
    seed: u64,
    a: &ShiftOperator,
    x0: &DMatrix<f64>,
    mut visit: impl FnMut(usize, &DMatrix<f64>) -> Result<()>,
) -> Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::InvalidArgument("widths must be nonempty and positive".into()));
    }
    if x0.nrows() != a.n() || x0.ncols() != widths[0] {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{}, expected {}x{}",
            x0.nrows(),
            x0.ncols(),
            a.n(),
            widths[0]
        )));
    }
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd_b = hyper.sigma_b2.sqrt();
    let phi = hyper.kernel.activation();
    let am = a.matrix();
    let mut x = x0.clone();
    for (l, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let sd = (hyper.sigma_w2 / fan_in as f64).sqrt();
        let w = DMatrix::from_fn(fan_out, fan_in, |_, _| gaussian(&mut rng, sd));
        let b = DVector::from_fn(fan_out, |_, _| gaussian(&mut rng, sd_b));
        let mut h = am * &x * w.transpose();
        for mut row in h.row_iter_mut() {
            row += b.transpose();
        }
        x = h.map(phi);
        visit(l + 1, &x)?;
    }
    Ok(())
}

/// `μ` and pairwise-distance extremes of `X^(l)` for `l = 1..=L`.
pub fn empirical_trajectory(pass: &ForwardPass) -> Result<Vec<TrajectoryRow>> {
    pass.features
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, x)| Ok(TrajectoryRow::new(l, &distance_report(DistanceSource::Features(x))?)))
        .collect()
}

/// Linear readout `y = f·w + b` on the aggregated features `f = A X^(L)`.
#[derive(Clone, Debug)]
pub struct Readout {
    pub weights: DVector<f64>,
    pub bias: f64,
}

impl Readout {
    pub fn predict(&self, a: &ShiftOperator, hidden: &DMatrix<f64>, nodes: &[usize]) -> DVector<f64> {
        let f = a.matrix() * hidden;
        DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| f.row(i).transpose().dot(&self.weights) + self.bias))
    }

    pub fn test_mse(&self, a: &ShiftOperator, hidden: &DMatrix<f64>, split: &SplitLabels, y_test: &DVector<f64>) -> f64 {
        let pred = self.predict(a, hidden, &split.test_nodes);
        (pred - y_test).norm_squared() / y_test.len().max(1) as f64
    }
}

/// Ridge regression of the training labels on `A X^(L)` with an
/// unpenalized bias, solved in the training-node (dual) basis.
pub fn train_readout(hidden: &DMatrix<f64>, a: &ShiftOperator, split: &SplitLabels, ridge: f64) -> Result<Readout> {
    if hidden.nrows() != a.n() {
        return Err(Error::DimensionMismatch(format!("{} feature rows for {} nodes", hidden.nrows(), a.n())));
    }
    if hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("hidden features are not finite".into()));
    }
    if split.train_nodes.is_empty() || !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("need training nodes and a nonnegative ridge".into()));
    }
    let f = a.matrix() * hidden;
    let t = split.train_nodes.len();
    let mut ft = DMatrix::from_fn(t, f.ncols(), |i, j| f[(split.train_nodes[i], j)]);
    let f_mean = ft.row_mean();
    for mut row in ft.row_iter_mut() {
        row -= &f_mean;
    }
    let y_mean = split.y_train.mean();
    let yc = split.y_train.add_scalar(-y_mean);
    let gram = &ft * ft.transpose() + DMatrix::identity(t, t) * ridge;
    let ev = gram.clone().symmetric_eigenvalues();
    let cond = if ev.min() > 0.0 { ev.max() / ev.min() } else { f64::INFINITY };
    if !(cond <= 1e14) {
        return Err(Error::SingularSystem(cond));
    }
    let alpha = gram.cholesky().ok_or(Error::SingularSystem(cond))?.solve(&yc);
    let weights = ft.transpose() * alpha;
    let bias = y_mean - f_mean.transpose().dot(&weights);
    Ok(Readout { weights, bias })
}
