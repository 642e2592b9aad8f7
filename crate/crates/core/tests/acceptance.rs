//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use gcngp::complete::analytic_transition;
use gcngp::dynamics::{
    covariance_map, distance_report, gp_trajectory, input_covariance, iterate_to_equilibrium, DistanceSource, GpHyper,
    MAX_LAYERS, ZERO_DISTANCE_THRESHOLD,
};
use gcngp::finite::{empirical_trajectory, GcnSample};
use gcngp::graph::{build_shift_operator, generate_csbm, CsbmInstance, CsbmParams, Graph, ShiftOperator};
use gcngp::inference::{depth_error_profile, SplitLabels};
use gcngp::kernel::{c_derivative, c_value, erf_activation, CovarianceMatrix, KernelSpec};
use gcngp::linear::{
    build_linearized_map, chaos_indicator, critical_sigma, critical_sigma_by_probe, zero_distance_fixed_point,
    PairIndex, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

const COMPLETE_N: usize = 5;
const COMPLETE_GS: [f64; 5] = [0.02, 0.06, 0.10, 0.14, 0.18];
const TRAJECTORY_POINTS: [(f64, f64); 5] = [(2.0, 0.18), (3.0, 0.14), (4.0, 0.10), (5.0, 0.06), (6.0, 0.02)];

fn report(line: &str) {
    // bypasses the test harness output capture
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_connected_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|b| (rng.random_range(0..b), b)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

fn sparse_csbm(seed: u64) -> CsbmInstance {
    generate_csbm(&CsbmParams { n_nodes: 100, avg_degree: 5.0, snr: 1.0, feature_strength: 0.0, aspect: 1.0, seed })
        .unwrap()
}

/// The first connected instance. A disconnected graph has critical value
/// exactly 1 through its decoupled components.
fn connected_sparse_csbm() -> CsbmInstance {
    (0..).map(sparse_csbm).find(|inst| inst.graph.component_count() == 1).unwrap()
}

/// One-sided sign test: P(X >= k) for X ~ Bin(n, 1/2).
fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=n {
        if i > 0 {
            binom = binom * (n - i + 1) as f64 / i as f64;
        }
        if i >= k {
            p += binom;
        }
    }
    p / 2f64.powi(n as i32)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut prev = f64::NEG_INFINITY;
    let mut monotone = true;
    for &g in &COMPLETE_GS {
        let a = build_shift_operator(&Graph::complete(COMPLETE_N), g).unwrap();
        let eig = critical_sigma(&a, 0.0, &KernelSpec::AnalyticErf, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
        let ana = analytic_transition(COMPLETE_N, g, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((eig - ana).abs());
        monotone &= eig > prev;
        prev = eig;
    }
    let secs = started.elapsed().as_secs_f64();
    let msg = format!("max |eigen - analytic| = {worst:.2e}, monotone = {monotone}, {secs:.1}s");
    if worst < 1e-3 && monotone && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let eps = 1e-6;
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let graph = random_connected_graph(n, 0.3, &mut rng);
        let a = build_shift_operator(&graph, rng.random_range(0.05..0.95)).unwrap();
        let hyper = GpHyper::new(rng.random_range(0.5..4.0), rng.random_range(0.0..0.5));
        let x = gaussian_matrix(n, 8, &mut rng);
        let k1 = input_covariance(&x, &a, &hyper).unwrap().covariance;
        let eq = iterate_to_equilibrium(&a, &hyper, &k1, MAX_LAYERS, 1e-13).map_err(|e| e.to_string())?;
        let fixed = if eq.residual < 1e-9 { eq.covariance } else { zero_distance_fixed_point(&a, &hyper).unwrap() };
        let map = build_linearized_map(&a, &hyper, &fixed).map_err(|e| e.to_string())?;
        let idx = PairIndex::new(n);
        let delta = {
            let r = gaussian_matrix(n, n, &mut rng);
            (&r + r.transpose()) * 0.5
        };
        let base = covariance_map(&fixed, &a, &hyper).unwrap();
        let moved = covariance_map(&CovarianceMatrix::symmetrized(fixed.as_matrix() + &delta * eps), &a, &hyper).unwrap();
        let fd = idx.pack(&((moved.as_matrix() - base.as_matrix()) / eps));
        let lin = &map.transition * idx.pack(&delta);
        worst = worst.max((&lin - &fd).norm() / fd.norm());
    }
    let msg = format!("max relative deviation {worst:.2e} over 20 graphs");
    if worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let quad = KernelSpec::quadrature(erf_activation, 64).unwrap();
    let exact = KernelSpec::AnalyticErf;
    let (mut worst_value, mut worst_deriv): (f64, f64) = (0.0, 0.0);
    let h = 1e-6;
    for _ in 0..100 {
        let kxx = rng.random_range(0.01..2.0);
        let kyy = rng.random_range(0.01..2.0);
        let bound = (kxx * kyy as f64).sqrt().min(2.0);
        let kxy = rng.random_range(-0.95..0.95) * bound;
        let k = CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[kxx, kxy, kxy, kyy])).unwrap();
        let a = c_value(&k, 0, 1, &exact).unwrap();
        let q = c_value(&k, 0, 1, &quad).unwrap();
        worst_value = worst_value.max((a - q).abs());
        for (t, p, g, d) in [(0, 1, 0, 1), (0, 1, 0, 0), (0, 1, 1, 1), (0, 0, 0, 0)] {
            let analytic = c_derivative(&k, t, p, g, d, &exact).unwrap();
            let shifted = |s: f64| {
                let mut m = k.as_matrix().clone();
                m[(g, d)] += s;
                if g != d {
                    m[(d, g)] += s;
                }
                c_value(&CovarianceMatrix::new(m).unwrap(), t, p, &exact).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst_deriv = worst_deriv.max((analytic - fd).abs() / fd.abs().max(1e-3));
        }
    }
    let msg = format!("max |analytic - quadrature| = {worst_value:.2e}, max derivative rel. error = {worst_deriv:.2e}");
    if worst_value < 1e-8 && worst_deriv < 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Outcome {
    let gs: Vec<f64> = (1..=20).map(|i| i as f64 * 0.01).collect();
    let step = 0.25;
    let sigmas: Vec<f64> = (1..=32).map(|i| i as f64 * step).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = gaussian_matrix(COMPLETE_N, 200, &mut rng);
    let (mut wrong, mut boundary_misses) = (0, 0);
    for &g in &gs {
        let a = build_shift_operator(&Graph::complete(COMPLETE_N), g).unwrap();
        let crit = analytic_transition(COMPLETE_N, g, 0.0).map_err(|e| e.to_string())?;
        for &w in &sigmas {
            let hyper = GpHyper::new(w, 0.0);
            let k1 = input_covariance(&x0, &a, &hyper).unwrap().covariance;
            let eq = iterate_to_equilibrium(&a, &hyper, &k1, 4000, 1e-12).map_err(|e| e.to_string())?;
            let mu = distance_report(DistanceSource::Kernel(&eq.covariance, &hyper.kernel)).unwrap().mu;
            let predicted_chaotic = w > crit;
            if (mu > ZERO_DISTANCE_THRESHOLD) != predicted_chaotic {
                if (w - crit).abs() <= step {
                    boundary_misses += 1;
                } else {
                    wrong += 1;
                }
            }
        }
    }
    let msg = format!(
        "{} cells, {wrong} misclassified away from the boundary, {boundary_misses} within one cell of it",
        gs.len() * sigmas.len()
    );
    if wrong == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let (width, seeds, layers) = (200, 50, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = gaussian_matrix(COMPLETE_N, width, &mut rng);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for &(w, g) in &TRAJECTORY_POINTS {
        let a = build_shift_operator(&Graph::complete(COMPLETE_N), g).unwrap();
        let hyper = GpHyper::new(w, 0.0);
        let k1 = input_covariance(&x0, &a, &hyper).unwrap();
        let gp = gp_trajectory(&k1, &a, &hyper, layers - 1).unwrap();
        let mut samples = vec![Vec::with_capacity(seeds); layers];
        for seed in 0..seeds as u64 {
            let net = GcnSample::draw_uniform(width, width, layers, &hyper, 1000 * seed + 7).unwrap();
            let traj = empirical_trajectory(&net.forward(&a, &x0).unwrap()).unwrap();
            for (l, row) in traj.iter().enumerate() {
                samples[l].push(row.mu);
            }
        }
        for l in 0..layers {
            let m = samples[l].iter().sum::<f64>() / seeds as f64;
            let var = samples[l].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (seeds - 1) as f64;
            let se = (var / seeds as f64).sqrt();
            let z = (m - gp[l].mu).abs() / se.max(f64::MIN_POSITIVE);
            worst = worst.max(z);
            if z > 3.0 {
                failures.push(format!("({w},{g}) layer {}: z = {z:.2}", l + 1));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let msg = format!("max |empirical - GP| / SE = {worst:.2}, {secs:.0}s");
    if failures.is_empty() && secs < 600.0 {
        Ok(msg)
    } else {
        Err(format!("{msg}; {}", failures.join(", ")))
    }
}

/// First grid point (step 0.05) with `ρ > 1` and first with max equilibrium
/// distance above threshold, scanning a window around the bisected point.
fn criterion_6() -> Outcome {
    let inst = connected_sparse_csbm();
    let a = build_shift_operator(&inst.graph, 0.3).unwrap();
    let crit = critical_sigma(&a, 0.0, &KernelSpec::AnalyticErf, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
    let step = 0.05;
    let start = ((crit - 0.3) / step).floor().max(1.0) as usize;
    let grid: Vec<f64> = (start..start + 13).map(|i| i as f64 * step).collect();
    let (mut first_rho, mut first_mu) = (None, None);
    for &w in &grid {
        let hyper = GpHyper::new(w, 0.0);
        let (rho, chaotic) = chaos_indicator(&a, &hyper).map_err(|e| e.to_string())?;
        if chaotic && first_rho.is_none() {
            first_rho = Some(w);
        }
        let k1 = input_covariance(&inst.features, &a, &hyper).unwrap().covariance;
        let eq = iterate_to_equilibrium(&a, &hyper, &k1, MAX_LAYERS, 1e-12).map_err(|e| e.to_string())?;
        let max_d = distance_report(DistanceSource::Kernel(&eq.covariance, &hyper.kernel)).unwrap().max_offdiag();
        if max_d > ZERO_DISTANCE_THRESHOLD && first_mu.is_none() {
            first_mu = Some(w);
        }
        let _ = rho;
    }
    let (r, m) = match (first_rho, first_mu) {
        (Some(r), Some(m)) => (r, m),
        _ => return Err(format!("no crossing in window {:.2}..{:.2}", grid[0], grid[grid.len() - 1])),
    };
    let msg = format!("crit = {crit:.4}, rho crosses 1 at {r:.2}, distance onset at {m:.2}");
    if (r - m).abs() <= step + 1e-9 && grid[0] < m {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let seeds = 50;
    let hyper = GpHyper::new(2.0, 0.0);
    let depth = 200;
    let (mut gp_wins, mut finite_wins) = (0, 0);
    for seed in 0..seeds as u64 {
        let inst = sparse_csbm(700 + seed);
        let labels = inst.graph.communities().unwrap().to_vec();
        let a = build_shift_operator(&inst.graph, 0.3).unwrap();
        let k1 = input_covariance(&inst.features, &a, &hyper).unwrap().covariance;
        let eq = iterate_to_equilibrium(&a, &hyper, &k1, MAX_LAYERS, 1e-12).map_err(|e| e.to_string())?;
        let (within, across) =
            distance_report(DistanceSource::Kernel(&eq.covariance, &hyper.kernel)).unwrap().community_means(&labels);
        gp_wins += usize::from(across > within);

        let net = GcnSample::draw_uniform(inst.features.ncols(), 200, depth, &hyper, seed).unwrap();
        let pass = net.forward(&a, &inst.features).unwrap();
        let last = pass.features.last().unwrap();
        let (within, across) = distance_report(DistanceSource::Features(last)).unwrap().community_means(&labels);
        finite_wins += usize::from(across > within);
    }
    let (p_gp, p_fin) = (sign_test_p(gp_wins, seeds), sign_test_p(finite_wins, seeds));
    let msg = format!(
        "across > within in {gp_wins}/{seeds} GP (p = {p_gp:.1e}) and {finite_wins}/{seeds} width-200 runs (p = {p_fin:.1e})"
    );
    if p_gp < 0.01 && p_fin < 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct DepthStudy {
    crits: Vec<f64>,
    components: Vec<usize>,
    /// Per-seed MSE at the deepest layer for `crit + 1`.
    deepest_above: Vec<f64>,
    depths: Vec<usize>,
    below: Vec<f64>,
    at: Vec<f64>,
    above: Vec<f64>,
    seconds: f64,
}

fn depth_study() -> Result<DepthStudy, String> {
    let started = Instant::now();
    let depths: Vec<usize> = (0..=10).map(|i| 1usize << i).collect();
    let seeds = 50;
    let mut sums = [vec![0.0; depths.len()], vec![0.0; depths.len()], vec![0.0; depths.len()]];
    let mut crits = Vec::with_capacity(seeds);
    let mut components = Vec::with_capacity(seeds);
    let mut deepest_above = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let inst = generate_csbm(&CsbmParams {
            n_nodes: 20,
            avg_degree: 5.0,
            snr: 1.0,
            feature_strength: 4.0,
            aspect: 1.0,
            seed: 800 + seed,
        })
        .unwrap();
        let labels = inst.graph.communities().unwrap().to_vec();
        let a = build_shift_operator(&inst.graph, 0.9).unwrap();
        let crit = critical_sigma(&a, 0.0, &KernelSpec::AnalyticErf, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
        crits.push(crit);
        components.push(inst.graph.component_count());
        let split = SplitLabels::balanced(&labels, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let y = split.test_labels(&labels);
        for (slot, w) in [crit - 1.0, crit, crit + 1.0].into_iter().enumerate() {
            let hyper = GpHyper::new(w, 0.0).with_readout_noise(0.01);
            let profile = depth_error_profile(&a, &inst.features, &split, &y, &hyper, &depths).map_err(|e| e.to_string())?;
            for (i, (_, mse)) in profile.iter().enumerate() {
                sums[slot][i] += mse / seeds as f64;
            }
            if slot == 2 {
                deepest_above.push(profile.last().unwrap().1);
            }
        }
    }
    let [below, at, above] = sums;
    Ok(DepthStudy { crits, components, deepest_above, depths, below, at, above, seconds: started.elapsed().as_secs_f64() })
}

fn criterion_8(study: &DepthStudy) -> Outcome {
    let last = study.depths.len() - 1;
    let (below, at, above) = (study.below[last], study.at[last], study.above[last]);
    let argmin = (0..study.depths.len()).min_by(|&i, &j| study.above[i].total_cmp(&study.above[j])).unwrap();
    let best_depth = study.depths[argmin];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let msg = format!(
        "L=1024 MSE: crit-1 {below:.3}, crit {at:.3}, crit+1 {above:.3}; best depth at crit+1 = {best_depth}; {:.0}s; crit+1 profile [{}]",
        study.seconds,
        fmt(&study.above)
    );
    let ok = (below - 1.0).abs() <= 0.1
        && at < 0.9
        && above < 0.9
        && (4..=64).contains(&best_depth)
        && study.seconds < 1800.0;
    if ok {
        Ok(msg)
    } else {
        let mut deepest = study.deepest_above.clone();
        deepest.sort_by(f64::total_cmp);
        Err(format!(
            "{msg}; crit profile [{}]; crit-1 profile [{}]; per-seed L=1024 MSE at crit+1: median {:.3}, max {:.3}",
            fmt(&study.at),
            fmt(&study.below),
            deepest[deepest.len() / 2],
            deepest[deepest.len() - 1]
        ))
    }
}

fn criterion_9(study: &DepthStudy) -> Outcome {
    let min = study.crits.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = study.crits.iter().cloned().fold(0.0, f64::max);
    let disconnected: Vec<String> = (0..study.crits.len())
        .filter(|&i| study.components[i] > 1)
        .map(|i| format!("{:.4}", study.crits[i]))
        .collect();
    let connected_min =
        (0..study.crits.len()).filter(|&i| study.components[i] == 1).map(|i| study.crits[i]).fold(f64::INFINITY, f64::min);
    let msg = format!(
        "{} critical values in [{min:.4}, {max:.4}]; {} disconnected graphs with critical values [{}]; connected minimum {connected_min:.4}",
        study.crits.len(),
        disconnected.len(),
        disconnected.join(", ")
    );
    if min > 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_10() -> Outcome {
    let spec = KernelSpec::AnalyticErf;
    let mut graphs: Vec<(String, ShiftOperator)> = COMPLETE_GS
        .iter()
        .map(|&g| (format!("complete g={g}"), build_shift_operator(&Graph::complete(COMPLETE_N), g).unwrap()))
        .collect();
    graphs.push(("CSBM N=100".into(), build_shift_operator(&connected_sparse_csbm().graph, 0.3).unwrap()));
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (name, a) in &graphs {
        let t = Instant::now();
        let eig = critical_sigma(a, 0.0, &spec, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
        let te = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let probe = critical_sigma_by_probe(a, 0.0, &spec, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
        let tp = t.elapsed().as_secs_f64();
        worst = worst.max((eig - probe).abs());
        detail.push(format!("{name}: {eig:.4}/{probe:.4} ({te:.1}s/{tp:.1}s)"));
    }
    let msg = format!("max gap {worst:.2e}; {}", detail.join(", "));
    if worst < 1e-2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_11() -> Outcome {
    let a = ShiftOperator::identity(1);
    let spec = KernelSpec::AnalyticErf;
    let eig = critical_sigma(&a, 0.0, &spec, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
    let probe = critical_sigma_by_probe(&a, 0.0, &spec, DEFAULT_BRACKET, DEFAULT_SIGMA_TOL).map_err(|e| e.to_string())?;
    let msg = format!("eigenvalue method {eig:.6}, equilibrium probe {probe:.6}");
    if (eig - 1.0).abs() <= 1e-4 && (probe - 1.0).abs() <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

#[test]
fn acceptance_criteria() {
    let study = depth_study();
    let checks: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "complete-graph oracle equivalence", Box::new(criterion_1)),
        (2, "Jacobian vs finite differences", Box::new(criterion_2)),
        (3, "kernel quadrature and derivatives", Box::new(criterion_3)),
        (4, "complete-graph phase classification", Box::new(criterion_4)),
        (5, "finite-width agreement", Box::new(criterion_5)),
        (6, "CSBM transition", Box::new(criterion_6)),
        (7, "community signature", Box::new(criterion_7)),
        (8, "depth performance", Box::new(|| study.as_ref().map_err(Clone::clone).and_then(criterion_8))),
        (9, "critical variances above one", Box::new(|| study.as_ref().map_err(Clone::clone).and_then(criterion_9))),
        (10, "cross-method criticality", Box::new(criterion_10)),
        (11, "single-node critical point", Box::new(criterion_11)),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => report(&format!("criterion {id:>2} PASS  {name}: {msg} [{secs:.1}s]")),
            Err(msg) => {
                report(&format!("criterion {id:>2} FAIL  {name}: {msg} [{secs:.1}s]"));
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
