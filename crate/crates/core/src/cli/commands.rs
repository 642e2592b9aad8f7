use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use gcngp::complete::{analytic_transition, write_boundary_csv};
use gcngp::dynamics::{
    distance_report, gp_trajectory, input_covariance, iterate_to_equilibrium, DistanceSource, GpHyper,
    ZERO_DISTANCE_THRESHOLD,
};
use gcngp::error::{Error, Result};
use gcngp::finite::{stream_hidden, train_readout, DEFAULT_RIDGE, DEFAULT_WIDTH};
use gcngp::graph::{build_shift_operator, generate_csbm, load_edge_list, CsbmParams, Graph, ShiftOperator};
use gcngp::inference::{depth_error_profile, SplitLabels};
use gcngp::kernel::KernelSpec;
use gcngp::linear::{
    build_linearized_map, critical_sigma, critical_sigma_by_probe, write_spectrum_csv, zero_distance_fixed_point,
};

use super::config::{FeatureSource, GraphSource, LinearizeAt, SweepConfig};

/// Independent seed for `stream` under the master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// A graph (absent for the single-node case) with input features and
/// optional community labels.
struct Instance {
    graph: Option<Graph>,
    features: DMatrix<f64>,
    labels: Option<Vec<i8>>,
}

impl Instance {
    fn build(cfg: &SweepConfig, seed: u64) -> Result<Self> {
        let (graph, csbm_features) = match &cfg.graph {
            GraphSource::Complete { n_nodes } => {
                if *n_nodes < 2 {
                    return Err(Error::Config("complete graph needs at least 2 nodes".into()));
                }
                (Some(Graph::complete(*n_nodes)), None)
            }
            GraphSource::Csbm { n_nodes, avg_degree, snr, feature_strength, aspect } => {
                let inst = generate_csbm(&CsbmParams {
                    n_nodes: *n_nodes,
                    avg_degree: *avg_degree,
                    snr: *snr,
                    feature_strength: *feature_strength,
                    aspect: *aspect,
                    seed,
                })?;
                (Some(inst.graph), Some(inst.features))
            }
            GraphSource::EdgeList { path } => (Some(load_edge_list(path)?), None),
            GraphSource::SingleNode => (None, None),
        };
        let n = graph.as_ref().map_or(1, Graph::n_nodes);
        let features = match (cfg.features, csbm_features) {
            (FeatureSource::Csbm, Some(f)) => f,
            (FeatureSource::Csbm, None) => {
                return Err(Error::Config("features = \"csbm\" requires a csbm graph".into()));
            }
            (FeatureSource::Noise, _) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                DMatrix::from_fn(n, cfg.input_dim, |_, _| StandardNormal.sample(&mut rng))
            }
        };
        let labels = graph.as_ref().and_then(|g| g.communities().map(<[i8]>::to_vec));
        Ok(Self { graph, features, labels })
    }

    fn shift(&self, g: f64) -> Result<ShiftOperator> {
        match &self.graph {
            Some(graph) => build_shift_operator(graph, g),
            None => Ok(ShiftOperator::identity(1)),
        }
    }
}

fn hyper(cfg: &SweepConfig, sigma_w2: f64, kernel: &KernelSpec) -> GpHyper {
    GpHyper::new(sigma_w2, cfg.sigma_b2).with_kernel(kernel.clone()).with_readout_noise(cfg.sigma_ro)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn equilibrium_mu(inst: &Instance, a: &ShiftOperator, cfg: &SweepConfig, h: &GpHyper) -> Result<f64> {
    let k1 = input_covariance(&inst.features, a, h)?.covariance;
    let eq = iterate_to_equilibrium(a, h, &k1, cfg.layers, cfg.tol)?;
    if !eq.converged {
        log::debug!("sigma_w2 = {}: residual {:e} after {} layers", h.sigma_w2, eq.residual, eq.layers_used);
    }
    Ok(distance_report(DistanceSource::Kernel(&eq.covariance, &h.kernel))?.mu)
}

pub fn phase_diagram(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let kernel = cfg.kernel.spec()?;
    let gs = cfg.g.values("g")?;
    let sigmas = cfg.sigma_w2.values("sigma_w2")?;
    let inst = Instance::build(cfg, derive_seed(cfg.seed, 0))?;
    let cells: Vec<(f64, f64)> = gs.iter().flat_map(|&g| sigmas.iter().map(move |&w| (g, w))).collect();
    let mus: Vec<f64> = cells
        .par_iter()
        .map(|&(g, w)| equilibrium_mu(&inst, &inst.shift(g)?, cfg, &hyper(cfg, w, &kernel)))
        .collect::<Result<_>>()?;

    let mut csv = csv::Writer::from_writer(create(out, "phase_diagram.csv")?);
    csv.write_record(["g", "sigma_w2", "mu_eq", "is_oversmoothing"])?;
    for (&(g, w), mu) in cells.iter().zip(&mus) {
        csv.write_record([
            g.to_string(),
            w.to_string(),
            mu.to_string(),
            (*mu < ZERO_DISTANCE_THRESHOLD).to_string(),
        ])?;
    }
    csv.flush()?;

    if let GraphSource::Complete { n_nodes } = cfg.graph {
        let boundary: Vec<(f64, f64)> =
            gs.par_iter().map(|&g| Ok((g, analytic_transition(n_nodes, g, cfg.sigma_b2)?))).collect::<Result<_>>()?;
        write_boundary_csv(&boundary, create(out, "boundary.csv")?)?;
    }
    println!("wrote {} cells to {}", cells.len(), out.join("phase_diagram.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct CriticalRow {
    g: f64,
    sigma_w2_crit_eigen: f64,
    sigma_w2_crit_probe: f64,
    gap: f64,
}

#[derive(Serialize)]
struct CriticalReport {
    n_nodes: usize,
    sigma_b2: f64,
    bracket: (f64, f64),
    tol: f64,
    results: Vec<CriticalRow>,
}

pub fn critical(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let kernel = cfg.kernel.spec()?;
    let inst = Instance::build(cfg, derive_seed(cfg.seed, 0))?;
    let mut results = Vec::new();
    for g in cfg.g.values("g")? {
        let a = inst.shift(g)?;
        let t = Instant::now();
        let eigen = critical_sigma(&a, cfg.sigma_b2, &kernel, cfg.bracket, cfg.sigma_tol).map_err(bracket_hint)?;
        let te = t.elapsed();
        let t = Instant::now();
        let probe =
            critical_sigma_by_probe(&a, cfg.sigma_b2, &kernel, cfg.bracket, cfg.sigma_tol).map_err(bracket_hint)?;
        let tp = t.elapsed();
        println!("g = {g}: eigenvalue {eigen} ({te:.2?}), probe {probe} ({tp:.2?}), gap {:e}", (eigen - probe).abs());
        results.push(CriticalRow { g, sigma_w2_crit_eigen: eigen, sigma_w2_crit_probe: probe, gap: (eigen - probe).abs() });
    }
    let report = CriticalReport {
        n_nodes: inst.graph.as_ref().map_or(1, Graph::n_nodes),
        sigma_b2: cfg.sigma_b2,
        bracket: cfg.bracket,
        tol: cfg.sigma_tol,
        results,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join("critical.json"), text + "\n")?;
    Ok(())
}

fn bracket_hint(e: Error) -> Error {
    if let Error::InvalidBracket { lo, hi } = e {
        log::error!("the spectral radius must be below 1 at sigma_w2 = {lo} and above 1 at {hi}; widen \"bracket\"");
    }
    e
}

pub fn depth_profile(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let kernel = cfg.kernel.spec()?;
    let gs = cfg.g.values("g")?;
    if gs.len() != 1 {
        return Err(Error::Config("depth-profile takes a single g value".into()));
    }
    let g = gs[0];
    let sigmas = cfg.sigma_w2.values("sigma_w2")?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).collect();

    type Rows = (Vec<(u64, usize, f64, f64)>, Vec<(u64, usize, f64, f64)>);
    let per_seed: Vec<Rows> = seeds
        .par_iter()
        .map(|&seed| -> Result<Rows> {
            let inst = Instance::build(cfg, derive_seed(cfg.seed, seed + 1))?;
            let labels = inst
                .labels
                .clone()
                .ok_or_else(|| Error::Config("depth-profile needs community labels (csbm or annotated edge list)".into()))?;
            let a = inst.shift(g)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, seed + 1));
            rng.set_stream(2);
            let split = SplitLabels::balanced(&labels, cfg.train_per_community, &mut rng)?;
            let y = split.test_labels(&labels);
            let offset = if cfg.sigma_w2_relative {
                critical_sigma(&a, cfg.sigma_b2, &kernel, cfg.bracket, cfg.sigma_tol)?
            } else {
                0.0
            };
            let (mut gp_rows, mut net_rows) = (Vec::new(), Vec::new());
            for &s in &sigmas {
                let w = s + offset;
                let h = hyper(cfg, w, &kernel);
                for (l, mse) in depth_error_profile(&a, &inst.features, &split, &y, &h, &cfg.depths)? {
                    gp_rows.push((seed, l, w, mse));
                }
                if let Some(width) = cfg.width {
                    let depth = *cfg.depths.last().expect("validated nonempty");
                    let mut widths = vec![inst.features.ncols()];
                    widths.extend(std::iter::repeat_n(width, depth));
                    let net_seed = derive_seed(cfg.seed, 1_000_000 + seed);
                    stream_hidden(&widths, &h, net_seed, &a, &inst.features, |l, x| {
                        if cfg.depths.binary_search(&l).is_ok() {
                            let readout = train_readout(x, &a, &split, DEFAULT_RIDGE)?;
                            net_rows.push((seed, l, w, readout.test_mse(&a, x, &split, &y)));
                        }
                        Ok(())
                    })?;
                }
            }
            Ok((gp_rows, net_rows))
        })
        .collect::<Result<_>>()?;

    let write = |name: &str, rows: &mut dyn Iterator<Item = &(u64, usize, f64, f64)>| -> Result<()> {
        let mut csv = csv::Writer::from_writer(create(out, name)?);
        csv.write_record(["seed", "L", "sigma_w2", "mse"])?;
        for (seed, l, w, mse) in rows {
            csv.write_record([seed.to_string(), l.to_string(), w.to_string(), mse.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    };
    write("gp_mse.csv", &mut per_seed.iter().flat_map(|r| r.0.iter()))?;
    if cfg.width.is_some() {
        write("finite_mse.csv", &mut per_seed.iter().flat_map(|r| r.1.iter()))?;
    }
    println!("wrote depth profiles for {} seeds to {}", seeds.len(), out.display());
    Ok(())
}

pub fn validate(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let kernel = cfg.kernel.spec()?;
    let width = cfg.width.unwrap_or(DEFAULT_WIDTH);
    let depth = *cfg.depths.last().expect("validated nonempty");
    let inst = Instance::build(cfg, derive_seed(cfg.seed, 0))?;
    let gs = cfg.g.values("g")?;
    let sigmas = cfg.sigma_w2.values("sigma_w2")?;
    let mut csv = csv::Writer::from_writer(create(out, "validate.csv")?);
    csv.write_record(["g", "sigma_w2", "layer", "gp_mu", "empirical_mu", "standard_error", "z"])?;
    let mut worst: f64 = 0.0;
    for &g in &gs {
        let a = inst.shift(g)?;
        for &w in &sigmas {
            let h = hyper(cfg, w, &kernel);
            let gp = gp_trajectory(&input_covariance(&inst.features, &a, &h)?, &a, &h, depth - 1)?;
            let mut widths = vec![inst.features.ncols()];
            widths.extend(std::iter::repeat_n(width, depth));
            let samples: Vec<Vec<f64>> = (0..cfg.n_seeds as u64)
                .into_par_iter()
                .map(|s| {
                    let mut mus = Vec::with_capacity(depth);
                    stream_hidden(&widths, &h, derive_seed(cfg.seed, 1_000_000 + s), &a, &inst.features, |_, x| {
                        mus.push(distance_report(DistanceSource::Features(x))?.mu);
                        Ok(())
                    })?;
                    Ok(mus)
                })
                .collect::<Result<_>>()?;
            let n = samples.len() as f64;
            for l in 0..depth {
                let mean = samples.iter().map(|s| s[l]).sum::<f64>() / n;
                let var = if n > 1.0 { samples.iter().map(|s| (s[l] - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                let se = (var / n).sqrt();
                let z = if se > 0.0 { (mean - gp[l].mu).abs() / se } else { f64::NAN };
                if z.is_finite() {
                    worst = worst.max(z);
                }
                csv.write_record([
                    g.to_string(),
                    w.to_string(),
                    (l + 1).to_string(),
                    gp[l].mu.to_string(),
                    mean.to_string(),
                    se.to_string(),
                    z.to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    println!("largest |empirical - GP| / standard error: {worst:.3}");
    Ok(())
}

pub fn spectrum(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let kernel = cfg.kernel.spec()?;
    let g = cfg.g.values("g")?[0];
    let w = cfg.sigma_w2.values("sigma_w2")?[0];
    let inst = Instance::build(cfg, derive_seed(cfg.seed, 0))?;
    let a = inst.shift(g)?;
    let h = hyper(cfg, w, &kernel);
    let fixed = match cfg.linearize_at {
        LinearizeAt::ZeroDistance => zero_distance_fixed_point(&a, &h)?,
        LinearizeAt::Equilibrium => {
            let k1 = input_covariance(&inst.features, &a, &h)?.covariance;
            let eq = iterate_to_equilibrium(&a, &h, &k1, cfg.layers, cfg.tol)?;
            eq.covariance
        }
    };
    let map = build_linearized_map(&a, &h, &fixed)?;
    write_spectrum_csv(&map.eigenvalues, create(out, "spectrum.csv")?)?;
    println!("spectral radius {} ({} eigenvalues)", map.spectral_radius(), map.eigenvalues.len());
    Ok(())
}
