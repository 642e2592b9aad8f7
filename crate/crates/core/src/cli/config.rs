use std::path::{Path, PathBuf};

use serde::Deserialize;

use gcngp::error::{Error, Result};
use gcngp::kernel::{erf_activation, KernelSpec, DEFAULT_QUADRATURE_POINTS};

/// A list of values, or an inclusive arithmetic range.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let v = match self {
            Grid::Values(v) => v.clone(),
            Grid::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) {
                    return Err(Error::Config(format!("{name}: range needs step > 0 and stop >= start")));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| start + i as f64 * step).collect()
            }
        };
        if v.is_empty() {
            return Err(Error::Config(format!("{name}: grid is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("{name}: grid values must be finite")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Complete {
        n_nodes: usize,
    },
    Csbm {
        n_nodes: usize,
        avg_degree: f64,
        snr: f64,
        #[serde(default)]
        feature_strength: f64,
        #[serde(default = "one")]
        aspect: f64,
    },
    EdgeList {
        path: PathBuf,
    },
    SingleNode,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Erf,
    Tanh,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Erf,
    Quadrature {
        activation: Activation,
        #[serde(default = "default_points")]
        points: usize,
    },
}

fn default_points() -> usize {
    DEFAULT_QUADRATURE_POINTS
}

impl KernelChoice {
    pub fn spec(&self) -> Result<KernelSpec> {
        match self {
            KernelChoice::Erf => Ok(KernelSpec::AnalyticErf),
            KernelChoice::Quadrature { activation, points } => {
                let f = match activation {
                    Activation::Erf => erf_activation,
                    Activation::Tanh => f64::tanh,
                };
                KernelSpec::quadrature(f, *points)
            }
        }
    }
}

/// Input features for GP and network runs.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// i.i.d. standard normal, `input_dim` columns.
    Noise,
    /// The CSBM feature model (CSBM graphs only).
    Csbm,
}

/// Where the spectrum is taken.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum LinearizeAt {
    ZeroDistance,
    Equilibrium,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub graph: GraphSource,
    #[serde(default = "default_g")]
    pub g: Grid,
    #[serde(default = "default_sigma")]
    pub sigma_w2: Grid,
    /// Interpret `sigma_w2` as offsets from each graph's critical value.
    #[serde(default)]
    pub sigma_w2_relative: bool,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub sigma_b2: f64,
    #[serde(default = "default_sigma_ro")]
    pub sigma_ro: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelChoice,
    /// Hidden width of the finite network; no finite runs when absent.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_bracket")]
    pub bracket: (f64, f64),
    #[serde(default = "default_sigma_tol")]
    pub sigma_tol: f64,
    #[serde(default = "default_per_community")]
    pub train_per_community: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_features")]
    pub features: FeatureSource,
    #[serde(default = "default_at")]
    pub linearize_at: LinearizeAt,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_g() -> Grid {
    Grid::Values(vec![0.3])
}
fn default_sigma() -> Grid {
    Grid::Values(vec![2.0])
}
fn default_depths() -> Vec<usize> {
    vec![1, 4, 16, 64, 256, 1024]
}
fn default_sigma_ro() -> f64 {
    0.01
}
fn default_kernel() -> KernelChoice {
    KernelChoice::Erf
}
fn default_seeds() -> usize {
    1
}
fn default_layers() -> usize {
    gcngp::dynamics::MAX_LAYERS
}
fn default_tol() -> f64 {
    gcngp::dynamics::EQUILIBRIUM_TOL
}
fn default_bracket() -> (f64, f64) {
    gcngp::linear::DEFAULT_BRACKET
}
fn default_sigma_tol() -> f64 {
    gcngp::linear::DEFAULT_SIGMA_TOL
}
fn default_per_community() -> usize {
    5
}
fn default_input_dim() -> usize {
    200
}
fn default_features() -> FeatureSource {
    FeatureSource::Noise
}
fn default_at() -> LinearizeAt {
    LinearizeAt::ZeroDistance
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.g.values("g")?;
        self.sigma_w2.values("sigma_w2")?;
        if self.depths.is_empty() || self.depths.contains(&0) || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("depths must be nonempty, positive and strictly ascending".into()));
        }
        if self.n_seeds == 0 || self.layers == 0 || self.input_dim == 0 || self.width == Some(0) {
            return Err(Error::Config("n_seeds, layers, input_dim and width must be positive".into()));
        }
        if !(self.sigma_b2 >= 0.0 && self.sigma_ro >= 0.0 && self.tol > 0.0 && self.sigma_tol > 0.0) {
            return Err(Error::Config("sigma_b2, sigma_ro must be nonnegative; tolerances positive".into()));
        }
        self.kernel.spec()?;
        Ok(())
    }
}
