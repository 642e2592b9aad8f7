//! Graphs, the stochastic shift operator, and the contextual stochastic block
//! model generator.
//!
//! The shift operator is `A = I - (g / d_max) (D - Adj)`. Because the graph
//! Laplacian `D - Adj` has zero row sums, every row of `A` sums to one; the
//! zero-distance analysis in [`crate::linear`] relies on that property.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on `|row_sum - 1|` accepted for a user-supplied shift operator.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Undirected simple graph with optional two-community labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    communities: Option<Vec<i8>>,
}

impl Graph {
    /// Builds a graph from undirected edges. Duplicates (in either orientation)
    /// collapse to one edge.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::SelfLoop { node: a, line: None });
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n_nodes, edges: set, communities: None })
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        Self { n_nodes: n, edges, communities: None }
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let edges = (1..n).map(|b| (b - 1, b)).collect();
        Self { n_nodes: n, edges, communities: None }
    }

    /// Attaches `±1` community labels, one per node.
    pub fn with_communities(mut self, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} community labels for {} nodes",
                labels.len(),
                self.n_nodes
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
            return Err(Error::InvalidArgument(format!("community label {bad} is not ±1")));
        }
        self.communities = Some(labels);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn communities(&self) -> Option<&[i8]> {
        self.communities.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Number of connected components. Isolated nodes count as components.
    pub fn component_count(&self) -> usize {
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        let mut count = self.n_nodes;
        for &(a, b) in &self.edges {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                count -= 1;
            }
        }
        count
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut adj = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(a, b) in &self.edges {
            adj[(a, b)] = 1.0;
            adj[(b, a)] = 1.0;
        }
        adj
    }

    /// Writes the graph in the edge-list format read by [`load_edge_list`].
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# nodes {}", self.n_nodes)?;
        if let Some(labels) = &self.communities {
            for (node, label) in labels.iter().enumerate() {
                writeln!(w, "# community {node} {label}")?;
            }
        }
        for &(a, b) in &self.edges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }
}

/// Reads an edge list: one whitespace-separated pair per line, `#` comments,
/// plus the directives `# community <node> <±1>` and `# nodes <n>`.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text)
}

pub fn parse_edge_list(text: &str) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut labels: Vec<(usize, i8)> = Vec::new();
    let mut declared_nodes: Option<usize> = None;
    let mut max_node: Option<usize> = None;

    let parse_int = |tok: &str, line: usize| -> Result<i64> {
        tok.parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("expected an integer, found {tok:?}"),
        })
    };
    let parse_node = |tok: &str, line: usize| -> Result<usize> {
        let v = parse_int(tok, line)?;
        usize::try_from(v).map_err(|_| Error::Parse {
            line,
            message: format!("node index {v} is negative"),
        })
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let toks: Vec<&str> = comment.split_whitespace().collect();
            match toks.as_slice() {
                ["community", node, label] => {
                    let node = parse_node(node, line)?;
                    let label = match parse_int(label, line)? {
                        1 => 1,
                        -1 => -1,
                        other => {
                            return Err(Error::Parse {
                                line,
                                message: format!("community label {other} is not ±1"),
                            })
                        }
                    };
                    max_node = Some(max_node.map_or(node, |m| m.max(node)));
                    labels.push((node, label));
                }
                ["nodes", n] => declared_nodes = Some(parse_node(n, line)?),
                _ => {}
            }
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected two node indices, found {} fields", toks.len()),
            });
        }
        let a = parse_node(toks[0], line)?;
        let b = parse_node(toks[1], line)?;
        if a == b {
            return Err(Error::SelfLoop { node: a, line: Some(line) });
        }
        max_node = Some(max_node.map_or(a.max(b), |m| m.max(a).max(b)));
        edges.push((a, b));
    }

    let inferred = max_node.map_or(0, |m| m + 1);
    let n_nodes = match declared_nodes {
        Some(n) if n < inferred => {
            return Err(Error::Parse {
                line: 0,
                message: format!("declared {n} nodes but node {} is referenced", inferred - 1),
            })
        }
        Some(n) => n,
        None => inferred,
    };
    if n_nodes == 0 {
        return Err(Error::Parse { line: 0, message: "edge list is empty".into() });
    }
    let graph = Graph::new(n_nodes, edges)?;
    if labels.is_empty() {
        return Ok(graph);
    }
    if labels.len() != n_nodes {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} community lines for {n_nodes} nodes", labels.len()),
        });
    }
    let mut dense = vec![0i8; n_nodes];
    for (node, label) in labels {
        dense[node] = label;
    }
    graph.with_communities(dense)
}

/// Dense row-stochastic mixing matrix acting on node features.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftOperator {
    matrix: DMatrix<f64>,
    g: Option<f64>,
}

impl ShiftOperator {
    /// Wraps an arbitrary square matrix whose rows sum to one.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "shift operator must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}, expected 1")));
            }
        }
        Ok(Self { matrix, g: None })
    }

    /// Identity operator: `n` decoupled nodes.
    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n), g: None }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Weighting parameter, when the operator was built from a graph.
    pub fn g(&self) -> Option<f64> {
        self.g
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| (self.matrix[(i, j)] - self.matrix[(j, i)]).abs() <= tol))
    }
}

/// `A = I - (g / d_max)(D - Adj)` for `g` in (0, 1).
pub fn build_shift_operator(graph: &Graph, g: f64) -> Result<ShiftOperator> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidG(g));
    }
    if graph.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let deg = graph.degrees();
    let d_max = *deg.iter().max().expect("nonempty graph") as f64;
    let isolated = deg.iter().filter(|&&d| d == 0).count();
    if isolated > 0 {
        warn!("{isolated} isolated node(s); their rows of the shift operator are identity rows");
    }
    let n = graph.n_nodes();
    let off = g / d_max;
    let mut a = DMatrix::zeros(n, n);
    for (i, &d) in deg.iter().enumerate() {
        a[(i, i)] = 1.0 - off * d as f64;
    }
    for (i, j) in graph.edges() {
        a[(i, j)] = off;
        a[(j, i)] = off;
    }
    Ok(ShiftOperator { matrix: a, g: Some(g) })
}

/// Parameters of the two-community contextual stochastic block model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CsbmParams {
    pub n_nodes: usize,
    pub avg_degree: f64,
    pub snr: f64,
    pub feature_strength: f64,
    pub aspect: f64,
    pub seed: u64,
}

impl CsbmParams {
    /// `(p_in, p_out) = ((d ± λ√d) / N)`.
    pub fn edge_probabilities(&self) -> (f64, f64) {
        let n = self.n_nodes as f64;
        let shift = self.snr * self.avg_degree.sqrt();
        ((self.avg_degree + shift) / n, (self.avg_degree - shift) / n)
    }

    /// Input feature dimension `max(1, round(γ N))`.
    pub fn feature_dim(&self) -> usize {
        ((self.aspect * self.n_nodes as f64).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_nodes % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "CSBM needs an even, positive node count, got {}",
                self.n_nodes
            )));
        }
        if !(self.avg_degree > 0.0) || !(self.aspect > 0.0) {
            return Err(Error::InvalidArgument(
                "CSBM average degree and aspect ratio must be positive".into(),
            ));
        }
        let (p_in, p_out) = self.edge_probabilities();
        for (name, value) in [("p_in", p_in), ("p_out", p_out)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { name, value });
            }
        }
        Ok(())
    }
}

/// A sampled CSBM graph together with its node features (`N x d0`).
#[derive(Clone, Debug)]
pub struct CsbmInstance {
    pub graph: Graph,
    pub features: DMatrix<f64>,
}

/// Samples a CSBM instance. The first half of the nodes is community `+1`,
/// the second half `-1`. Features are `sqrt(μ/N) v uᵀ + Z`.
pub fn generate_csbm(params: &CsbmParams) -> Result<CsbmInstance> {
    params.validate()?;
    let n = params.n_nodes;
    let (p_in, p_out) = params.edge_probabilities();
    let labels: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if labels[a] == labels[b] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let graph = Graph::new(n, edges)?.with_communities(labels.clone())?;

    let d0 = params.feature_dim();
    let u: Vec<f64> = (0..d0).map(|_| rng.sample(StandardNormal)).collect();
    let scale = (params.feature_strength / n as f64).sqrt();
    let features = DMatrix::from_fn(n, d0, |i, j| {
        let noise: f64 = rng.sample(StandardNormal);
        scale * f64::from(labels[i]) * u[j] + noise
    });
    Ok(CsbmInstance { graph, features })
}

/// Writes a feature matrix as CSV with header `node,f0,f1,...`.
pub fn write_features_csv<W: Write>(features: &DMatrix<f64>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["node".to_string()];
    header.extend((0..features.ncols()).map(|j| format!("f{j}")));
    out.write_record(&header)?;
    for (i, row) in features.row_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row_sums_ok(a: &ShiftOperator) -> bool {
        a.matrix().row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12)
    }

    #[test]
    fn two_node_path() {
        let a = build_shift_operator(&Graph::path(2), 0.5).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn components() {
        assert_eq!(Graph::path(4).component_count(), 1);
        assert_eq!(Graph::new(5, [(0, 1), (2, 3)]).unwrap().component_count(), 3);
        assert_eq!(Graph::new(3, []).unwrap().component_count(), 3);
    }

    #[test]
    fn complete_graph_closed_form() {
        let (n, g) = (5, 0.3);
        let a = build_shift_operator(&Graph::complete(n), g).unwrap();
        let nf = n as f64;
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                let expected = g / (nf - 1.0) + delta * (1.0 - nf * g / (nf - 1.0));
                assert_abs_diff_eq!(a.matrix()[(i, j)], expected, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(a.matrix()[(0, 1)], 0.075, epsilon = 1e-15);
        assert_abs_diff_eq!(a.matrix()[(0, 0)], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn star_rejects_g_one() {
        let star = Graph::new(3, [(0, 1), (0, 2)]).unwrap();
        assert!(matches!(build_shift_operator(&star, 1.0), Err(Error::InvalidG(_))));
        assert!(matches!(build_shift_operator(&star, 0.0), Err(Error::InvalidG(_))));
        let a = build_shift_operator(&star, 0.99).unwrap();
        assert!(row_sums_ok(&a));
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn empty_graph_rejected() {
        let g = Graph::new(3, []).unwrap();
        assert!(matches!(build_shift_operator(&g, 0.5), Err(Error::EmptyGraph)));
    }

    #[test]
    fn isolated_node_gets_identity_row() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let a = build_shift_operator(&g, 0.4).unwrap();
        assert_eq!(a.matrix()[(2, 2)], 1.0);
        assert_eq!(a.matrix()[(2, 0)], 0.0);
        assert!(row_sums_ok(&a));
    }

    #[test]
    fn from_matrix_checks_rows() {
        assert!(ShiftOperator::from_matrix(DMatrix::from_element(2, 2, 0.4)).is_err());
        assert!(ShiftOperator::from_matrix(DMatrix::from_element(2, 2, 0.5)).is_ok());
    }

    #[test]
    fn edge_list_parsing() {
        let g = parse_edge_list("0 1\n1 2").unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);

        let g = parse_edge_list("0 1\n0 1\n1 0\n").unwrap();
        assert_eq!(g.n_edges(), 1);

        assert!(matches!(
            parse_edge_list("0 1\n0 0"),
            Err(Error::SelfLoop { node: 0, line: Some(2) })
        ));
        assert!(matches!(parse_edge_list("0 1\n1 x"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_edge_list("0 1 2"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn edge_list_round_trip_with_communities() {
        let inst = generate_csbm(&CsbmParams {
            n_nodes: 10,
            avg_degree: 3.0,
            snr: 1.0,
            feature_strength: 1.0,
            aspect: 1.0,
            seed: 3,
        })
        .unwrap();
        let mut buf = Vec::new();
        inst.graph.write_edge_list(&mut buf).unwrap();
        let back = parse_edge_list(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, inst.graph);
    }

    #[test]
    fn csbm_probabilities() {
        let p = CsbmParams {
            n_nodes: 100,
            avg_degree: 5.0,
            snr: 1.0,
            feature_strength: 0.0,
            aspect: 1.0,
            seed: 0,
        };
        let (p_in, p_out) = p.edge_probabilities();
        assert_abs_diff_eq!(p_in, (5.0 + 5f64.sqrt()) / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p_in, 0.07236, epsilon = 1e-5);
        assert_abs_diff_eq!(p_out, 0.02764, epsilon = 1e-5);

        let flat = CsbmParams { snr: 0.0, ..p.clone() };
        let (a, b) = flat.edge_probabilities();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a, 0.05, epsilon = 1e-15);

        let bad = CsbmParams { snr: 5.0, ..p.clone() };
        assert!(matches!(generate_csbm(&bad), Err(Error::InvalidProbability { name: "p_out", .. })));
        let odd = CsbmParams { n_nodes: 11, ..p };
        assert!(generate_csbm(&odd).is_err());
    }

    #[test]
    fn csbm_is_deterministic_and_balanced() {
        let p = CsbmParams {
            n_nodes: 40,
            avg_degree: 5.0,
            snr: 1.0,
            feature_strength: 4.0,
            aspect: 0.5,
            seed: 17,
        };
        let a = generate_csbm(&p).unwrap();
        let b = generate_csbm(&p).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.features.ncols(), 20);
        let labels = a.graph.communities().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 20);
    }

    #[test]
    fn csbm_intra_edge_frequency() {
        let base = CsbmParams {
            n_nodes: 20,
            avg_degree: 5.0,
            snr: 1.0,
            feature_strength: 0.0,
            aspect: 0.05,
            seed: 0,
        };
        let (p_in, _) = base.edge_probabilities();
        let (mut hits, mut trials) = (0usize, 0usize);
        for seed in 0..200 {
            let inst = generate_csbm(&CsbmParams { seed, ..base.clone() }).unwrap();
            let labels = inst.graph.communities().unwrap();
            for a in 0..20 {
                for b in a + 1..20 {
                    if labels[a] == labels[b] {
                        trials += 1;
                        hits += usize::from(inst.graph.has_edge(a, b));
                    }
                }
            }
        }
        let freq = hits as f64 / trials as f64;
        let se = (p_in * (1.0 - p_in) / trials as f64).sqrt();
        assert!((freq - p_in).abs() < 3.0 * se, "freq {freq} vs p_in {p_in} (se {se})");
    }

    #[test]
    fn csbm_without_signal_has_uncorrelated_features() {
        let inst = generate_csbm(&CsbmParams {
            n_nodes: 200,
            avg_degree: 5.0,
            snr: 0.0,
            feature_strength: 0.0,
            aspect: 1.0,
            seed: 5,
        })
        .unwrap();
        let labels = inst.graph.communities().unwrap();
        // projection of the features onto the community vector, per feature column
        let d0 = inst.features.ncols() as f64;
        let n = inst.features.nrows() as f64;
        let mut acc = 0.0;
        for j in 0..inst.features.ncols() {
            let proj: f64 = (0..inst.features.nrows())
                .map(|i| f64::from(labels[i]) * inst.features[(i, j)])
                .sum();
            acc += proj * proj / n;
        }
        // E[proj²/N] = 1 for pure noise
        assert!((acc / d0 - 1.0).abs() < 0.3, "{}", acc / d0);
    }

    #[test]
    fn features_csv_header() {
        let mut buf = Vec::new();
        write_features_csv(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "node,f0,f1\n0,1,2\n1,3,4.5\n");
    }
}
