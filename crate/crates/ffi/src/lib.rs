//! C interface to `gcngp`.
//!
//! Graphs and shift operators are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! a [`GcngpStatus`]; on failure [`gcngp_last_error`] describes what went
//! wrong on the calling thread. Matrices cross the boundary as row-major
//! `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gcngp::complete::analytic_transition;
use gcngp::dynamics::{find_equilibrium, GpHyper};
use gcngp::graph::{build_shift_operator, generate_csbm, load_edge_list, CsbmParams, Graph, ShiftOperator};
use gcngp::kernel::{CovarianceMatrix, KernelSpec};
use gcngp::linear::{chaos_indicator, critical_sigma, critical_sigma_by_probe};
use gcngp::Error;
use nalgebra::DMatrix;

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcngpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed input: bad graph, parameter out of range, parse failure.
    InvalidInput = 2,
    /// The computation itself failed (no convergence, singular system, ...).
    NumericalFailure = 3,
    /// An internal panic was caught at the boundary.
    Panic = 4,
}

/// Opaque undirected graph.
pub struct GcngpGraph(Graph);

/// Opaque row-stochastic shift operator.
pub struct GcngpShiftOperator(ShiftOperator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GcngpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GcngpStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("{name} is null"));
            GcngpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            if e.is_input_error() {
                GcngpStatus::InvalidInput
            } else {
                GcngpStatus::NumericalFailure
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            GcngpStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn write<T>(p: *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    p.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gcngp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Graph on `n_nodes` nodes from `n_edges` pairs stored in `edges`
/// (`2 * n_edges` entries).
///
/// # Safety
/// `edges` must point to `2 * n_edges` readable values (or may be null when
/// `n_edges` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_new(
    n_nodes: usize,
    edges: *const usize,
    n_edges: usize,
    out: *mut *mut GcngpGraph,
) -> GcngpStatus {
    guard(|| {
        let pairs: &[usize] = if n_edges == 0 {
            &[]
        } else {
            if edges.is_null() {
                return Err(Failure::Null("edges"));
            }
            std::slice::from_raw_parts(edges, 2 * n_edges)
        };
        let graph = Graph::new(n_nodes, pairs.chunks_exact(2).map(|p| (p[0], p[1])))?;
        write(out, boxed(GcngpGraph(graph)), "out")
    })
}

/// Complete graph on `n_nodes` nodes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_complete(n_nodes: usize, out: *mut *mut GcngpGraph) -> GcngpStatus {
    guard(|| {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()).into());
        }
        write(out, boxed(GcngpGraph(Graph::complete(n_nodes))), "out")
    })
}

/// Reads an edge-list file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_load_edge_list(path: *const c_char, out: *mut *mut GcngpGraph) -> GcngpStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        write(out, boxed(GcngpGraph(load_edge_list(path)?)), "out")
    })
}

/// Samples a CSBM graph with two labelled communities. Node features are
/// not returned.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_csbm(
    n_nodes: usize,
    avg_degree: f64,
    snr: f64,
    seed: u64,
    out: *mut *mut GcngpGraph,
) -> GcngpStatus {
    guard(|| {
        let params = CsbmParams { n_nodes, avg_degree, snr, feature_strength: 0.0, aspect: 1.0, seed };
        write(out, boxed(GcngpGraph(generate_csbm(&params)?.graph)), "out")
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_n_nodes(graph: *const GcngpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.n_nodes())
}

/// Number of edges, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_n_edges(graph: *const GcngpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.n_edges())
}

/// Community label (+1 or -1) of `node`; 0 when the graph is unlabelled or
/// the node is out of range.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_community(graph: *const GcngpGraph, node: usize) -> i8 {
    graph
        .as_ref()
        .and_then(|g| g.0.communities())
        .and_then(|c| c.get(node).copied())
        .unwrap_or(0)
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gcngp_graph_free(graph: *mut GcngpGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// `A = I - (g / d_max)(D - Adj)` for `graph`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_shift_operator_new(
    graph: *const GcngpGraph,
    g: f64,
    out: *mut *mut GcngpShiftOperator,
) -> GcngpStatus {
    guard(|| {
        let graph = deref(graph, "graph")?;
        let a = build_shift_operator(&graph.0, g)?;
        write(out, boxed(GcngpShiftOperator(a)), "out")
    })
}

/// The `1 x 1` operator of an isolated node.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_shift_operator_single_node(out: *mut *mut GcngpShiftOperator) -> GcngpStatus {
    guard(|| write(out, boxed(GcngpShiftOperator(ShiftOperator::identity(1))), "out"))
}

/// Operator dimension, or 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gcngp_shift_operator_n(op: *const GcngpShiftOperator) -> usize {
    op.as_ref().map_or(0, |a| a.0.n())
}

/// Copies the matrix into `buf` (row-major, `len` must equal `n * n`).
///
/// # Safety
/// `op` must be a live handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gcngp_shift_operator_copy(op: *const GcngpShiftOperator, buf: *mut f64, len: usize) -> GcngpStatus {
    guard(|| {
        let a = deref(op, "op")?;
        let n = a.0.n();
        if len != n * n {
            return Err(Error::DimensionMismatch(format!("buffer of {len} for a {n}x{n} matrix")).into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = a.0.matrix()[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `op` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gcngp_shift_operator_free(op: *mut GcngpShiftOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Spectral radius of the linearized map at the zero-distance state and
/// whether it exceeds one.
///
/// # Safety
/// `op` must be a live handle; `rho` and `chaotic` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_chaos_indicator(
    op: *const GcngpShiftOperator,
    sigma_w2: f64,
    sigma_b2: f64,
    rho: *mut f64,
    chaotic: *mut bool,
) -> GcngpStatus {
    guard(|| {
        let a = deref(op, "op")?;
        let (r, c) = chaos_indicator(&a.0, &GpHyper::new(sigma_w2, sigma_b2))?;
        write(rho, r, "rho")?;
        write(chaotic, c, "chaotic")
    })
}

/// Critical weight variance from the spectrum, bisected on `[lo, hi]`.
///
/// # Safety
/// `op` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_critical_sigma(
    op: *const GcngpShiftOperator,
    sigma_b2: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    out: *mut f64,
) -> GcngpStatus {
    guard(|| {
        let a = deref(op, "op")?;
        write(out, critical_sigma(&a.0, sigma_b2, &KernelSpec::AnalyticErf, (lo, hi), tol)?, "out")
    })
}

/// Critical weight variance from the equilibrium probe, bisected on `[lo, hi]`.
///
/// # Safety
/// `op` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_critical_sigma_by_probe(
    op: *const GcngpShiftOperator,
    sigma_b2: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    out: *mut f64,
) -> GcngpStatus {
    guard(|| {
        let a = deref(op, "op")?;
        write(out, critical_sigma_by_probe(&a.0, sigma_b2, &KernelSpec::AnalyticErf, (lo, hi), tol)?, "out")
    })
}

/// Iterates the covariance recursion from `k0` until the max-norm change
/// drops below `tol`. `k0` and `k_out` are `n * n` row-major buffers;
/// `layers` receives the number of steps taken.
///
/// # Safety
/// `op` must be a live handle; `k0` must hold `n * n` readable values and
/// `k_out` as many writable ones; `layers` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_find_equilibrium(
    op: *const GcngpShiftOperator,
    sigma_w2: f64,
    sigma_b2: f64,
    k0: *const f64,
    max_layers: usize,
    tol: f64,
    k_out: *mut f64,
    layers: *mut usize,
) -> GcngpStatus {
    guard(|| {
        let a = deref(op, "op")?;
        let n = a.0.n();
        if k0.is_null() {
            return Err(Failure::Null("k0"));
        }
        if k_out.is_null() {
            return Err(Failure::Null("k_out"));
        }
        let start = std::slice::from_raw_parts(k0, n * n);
        let start = CovarianceMatrix::new(DMatrix::from_row_slice(n, n, start))?;
        let (k, used) = find_equilibrium(&a.0, &GpHyper::new(sigma_w2, sigma_b2), &start, max_layers, tol)?;
        let out = std::slice::from_raw_parts_mut(k_out, n * n);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = k.get(i, j);
            }
        }
        write(layers, used, "layers")
    })
}

/// Closed-form transition point of the complete graph on `n_nodes` nodes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcngp_analytic_transition(n_nodes: usize, g: f64, sigma_b2: f64, out: *mut f64) -> GcngpStatus {
    guard(|| write(out, analytic_transition(n_nodes, g, sigma_b2)?, "out"))
}
