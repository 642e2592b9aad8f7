//! GP regression on graph nodes: posterior over unlabeled nodes from the
//! readout covariance, and test error as a function of depth.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dynamics::{input_covariance, step, GpHyper};
use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::kernel::CovarianceMatrix;

/// Largest condition number accepted for the training-block solve.
pub const MAX_CONDITION: f64 = 1e14;

/// Disjoint train/test partition of the nodes with training labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitLabels {
    pub train_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub y_train: DVector<f64>,
}

impl SplitLabels {
    pub fn new(n_nodes: usize, train_nodes: Vec<usize>, test_nodes: Vec<usize>, y_train: Vec<f64>) -> Result<Self> {
        if train_nodes.len() != y_train.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} training nodes, {} labels",
                train_nodes.len(),
                y_train.len()
            )));
        }
        let mut seen = vec![false; n_nodes];
        for &i in train_nodes.iter().chain(&test_nodes) {
            if i >= n_nodes {
                return Err(Error::InvalidArgument(format!("node {i} out of range for {n_nodes} nodes")));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("node {i} appears twice in the split")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("split does not cover every node".into()));
        }
        Ok(Self { train_nodes, test_nodes, y_train: DVector::from_vec(y_train) })
    }

    /// `per_community` random training nodes from each of the two
    /// communities; all remaining nodes are test nodes.
    pub fn balanced<R: Rng + ?Sized>(labels: &[i8], per_community: usize, rng: &mut R) -> Result<Self> {
        let mut train = Vec::with_capacity(2 * per_community);
        for side in [1i8, -1] {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == side).collect();
            if members.len() < per_community {
                return Err(Error::InvalidArgument(format!(
                    "community {side:+} has {} nodes, {per_community} requested for training",
                    members.len()
                )));
            }
            members.shuffle(rng);
            train.extend_from_slice(&members[..per_community]);
        }
        train.sort_unstable();
        let test: Vec<usize> = (0..labels.len()).filter(|i| train.binary_search(i).is_err()).collect();
        let y = train.iter().map(|&i| labels[i] as f64).collect();
        Self::new(labels.len(), train, test, y)
    }

    pub fn test_labels(&self, labels: &[i8]) -> DVector<f64> {
        DVector::from_iterator(self.test_nodes.len(), self.test_nodes.iter().map(|&i| labels[i] as f64))
    }
}

#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Posterior of the test outputs given noisy training outputs, for the
/// readout covariance `K_out`.
pub fn posterior(k_out: &CovarianceMatrix, split: &SplitLabels, sigma_ro: f64) -> Result<GpPosterior> {
    let k = k_out.as_matrix();
    let (tr, te) = (&split.train_nodes, &split.test_nodes);
    if tr.iter().chain(te).any(|&i| i >= k.nrows()) {
        return Err(Error::DimensionMismatch("split refers to nodes outside the covariance".into()));
    }
    let k_dd = DMatrix::from_fn(tr.len(), tr.len(), |i, j| k[(tr[i], tr[j])])
        + DMatrix::identity(tr.len(), tr.len()) * (sigma_ro * sigma_ro);
    let k_sd = DMatrix::from_fn(te.len(), tr.len(), |i, j| k[(te[i], tr[j])]);
    let k_ss = DMatrix::from_fn(te.len(), te.len(), |i, j| k[(te[i], te[j])]);

    let ev = k_dd.clone().symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSystem(cond));
    }
    let chol = k_dd.cholesky().ok_or(Error::SingularSystem(cond))?;
    let mean = &k_sd * chol.solve(&split.y_train);
    let covariance = &k_ss - &k_sd * chol.solve(&k_sd.transpose());
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GpPosterior { mean, covariance })
}

/// Mean squared error of the posterior mean against the test labels.
pub fn generalization_error(post: &GpPosterior, y_test: &DVector<f64>) -> Result<f64> {
    if post.mean.len() != y_test.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions, {} labels", post.mean.len(), y_test.len())));
    }
    if y_test.is_empty() {
        return Err(Error::InvalidArgument("no test nodes".into()));
    }
    Ok((&post.mean - y_test).norm_squared() / y_test.len() as f64)
}

/// Test MSE after `L` hidden layers for every `L` in `depths` (ascending,
/// each at least 1), reusing the covariance trajectory.
pub fn depth_error_profile(
    a: &ShiftOperator,
    features: &DMatrix<f64>,
    split: &SplitLabels,
    y_test: &DVector<f64>,
    hyper: &GpHyper,
    depths: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if depths.first().is_some_and(|&l| l == 0) || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("depths must be strictly ascending and at least 1".into()));
    }
    let mut state = input_covariance(features, a, hyper)?;
    let mut out = Vec::with_capacity(depths.len());
    for &depth in depths {
        while state.layer < depth {
            state = step(&state, a, hyper)?;
        }
        let readout = step(&state, a, hyper)?;
        let post = posterior(&readout.covariance, split, hyper.sigma_ro)?;
        out.push((depth, generalization_error(&post, y_test)?));
    }
    Ok(out)
}
