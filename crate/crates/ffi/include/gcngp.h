#ifndef GCNGP_H
#define GCNGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of an FFI call.
 */
typedef enum GcngpStatus {
  GCNGP_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  GCNGP_STATUS_NULL_POINTER = 1,
  /*
   Malformed input: bad graph, parameter out of range, parse failure.
   */
  GCNGP_STATUS_INVALID_INPUT = 2,
  /*
   The computation itself failed (no convergence, singular system, ...).
   */
  GCNGP_STATUS_NUMERICAL_FAILURE = 3,
  /*
   An internal panic was caught at the boundary.
   */
  GCNGP_STATUS_PANIC = 4,
} GcngpStatus;

/*
 Opaque undirected graph.
 */
typedef struct GcngpGraph GcngpGraph;

/*
 Opaque row-stochastic shift operator.
 */
typedef struct GcngpShiftOperator GcngpShiftOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *gcngp_last_error(void);

/*
 Graph on `n_nodes` nodes from `n_edges` pairs stored in `edges`
 (`2 * n_edges` entries).

 # Safety
 `edges` must point to `2 * n_edges` readable values (or may be null when
 `n_edges` is 0); `out` must be writable.
 */
enum GcngpStatus gcngp_graph_new(size_t n_nodes,
                                 const size_t *edges,
                                 size_t n_edges,
                                 struct GcngpGraph **out);

/*
 Complete graph on `n_nodes` nodes.

 # Safety
 `out` must be writable.
 */
enum GcngpStatus gcngp_graph_complete(size_t n_nodes, struct GcngpGraph **out);

/*
 Reads an edge-list file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GcngpStatus gcngp_graph_load_edge_list(const char *path, struct GcngpGraph **out);

/*
 Samples a CSBM graph with two labelled communities. Node features are
 not returned.

 # Safety
 `out` must be writable.
 */
enum GcngpStatus gcngp_graph_csbm(size_t n_nodes,
                                  double avg_degree,
                                  double snr,
                                  uint64_t seed,
                                  struct GcngpGraph **out);

/*
 Number of nodes, or 0 for a null handle.

 # Safety
 `graph` must be null or a live handle.
 */
size_t gcngp_graph_n_nodes(const struct GcngpGraph *graph);

/*
 Number of edges, or 0 for a null handle.

 # Safety
 `graph` must be null or a live handle.
 */
size_t gcngp_graph_n_edges(const struct GcngpGraph *graph);

/*
 Community label (+1 or -1) of `node`; 0 when the graph is unlabelled or
 the node is out of range.

 # Safety
 `graph` must be null or a live handle.
 */
int8_t gcngp_graph_community(const struct GcngpGraph *graph, size_t node);

/*
 # Safety
 `graph` must be null or a handle not yet freed.
 */
void gcngp_graph_free(struct GcngpGraph *graph);

/*
 `A = I - (g / d_max)(D - Adj)` for `graph`.

 # Safety
 `graph` must be a live handle; `out` must be writable.
 */
enum GcngpStatus gcngp_shift_operator_new(const struct GcngpGraph *graph,
                                          double g,
                                          struct GcngpShiftOperator **out);

/*
 The `1 x 1` operator of an isolated node.

 # Safety
 `out` must be writable.
 */
enum GcngpStatus gcngp_shift_operator_single_node(struct GcngpShiftOperator **out);

/*
 Operator dimension, or 0 for a null handle.

 # Safety
 `op` must be null or a live handle.
 */
size_t gcngp_shift_operator_n(const struct GcngpShiftOperator *op);

/*
 Copies the matrix into `buf` (row-major, `len` must equal `n * n`).

 # Safety
 `op` must be a live handle; `buf` must hold `len` writable values.
 */
enum GcngpStatus gcngp_shift_operator_copy(const struct GcngpShiftOperator *op,
                                           double *buf,
                                           size_t len);

/*
 # Safety
 `op` must be null or a handle not yet freed.
 */
void gcngp_shift_operator_free(struct GcngpShiftOperator *op);

/*
 Spectral radius of the linearized map at the zero-distance state and
 whether it exceeds one.

 # Safety
 `op` must be a live handle; `rho` and `chaotic` must be writable.
 */
enum GcngpStatus gcngp_chaos_indicator(const struct GcngpShiftOperator *op,
                                       double sigma_w2,
                                       double sigma_b2,
                                       double *rho,
                                       bool *chaotic);

/*
 Critical weight variance from the spectrum, bisected on `[lo, hi]`.

 # Safety
 `op` must be a live handle; `out` must be writable.
 */
enum GcngpStatus gcngp_critical_sigma(const struct GcngpShiftOperator *op,
                                      double sigma_b2,
                                      double lo,
                                      double hi,
                                      double tol,
                                      double *out);

/*
 Critical weight variance from the equilibrium probe, bisected on `[lo, hi]`.

 # Safety
 `op` must be a live handle; `out` must be writable.
 */
enum GcngpStatus gcngp_critical_sigma_by_probe(const struct GcngpShiftOperator *op,
                                               double sigma_b2,
                                               double lo,
                                               double hi,
                                               double tol,
                                               double *out);

/*
 Iterates the covariance recursion from `k0` until the max-norm change
 drops below `tol`. `k0` and `k_out` are `n * n` row-major buffers;
 `layers` receives the number of steps taken.

 # Safety
 `op` must be a live handle; `k0` must hold `n * n` readable values and
 `k_out` as many writable ones; `layers` must be writable.
 */
enum GcngpStatus gcngp_find_equilibrium(const struct GcngpShiftOperator *op,
                                        double sigma_w2,
                                        double sigma_b2,
                                        const double *k0,
                                        size_t max_layers,
                                        double tol,
                                        double *k_out,
                                        size_t *layers);

/*
 Closed-form transition point of the complete graph on `n_nodes` nodes.

 # Safety
 `out` must be writable.
 */
enum GcngpStatus gcngp_analytic_transition(size_t n_nodes, double g, double sigma_b2, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCNGP_H */
