#ifndef VORONOI_MCMC_H
#define VORONOI_MCMC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VmStatus {
  VM_STATUS_OK = 0,
  VM_STATUS_NULL_POINTER = 1,
  VM_STATUS_INVALID_ARGUMENT = 2,
  VM_STATUS_BOUNDARY_POINT = 3,
  VM_STATUS_OUTSIDE_BOX = 4,
  VM_STATUS_TOO_MANY_EVENTS = 5,
  VM_STATUS_INTERNAL = 6,
} VmStatus;

typedef enum VmAlgorithm {
  VM_ALGORITHM_HMC = 0,
  VM_ALGORITHM_LANGEVIN = 1,
  VM_ALGORITHM_PROJECTED_LANGEVIN = 2,
  VM_ALGORITHM_SVS = 3,
} VmAlgorithm;

/**
 * A single chain with its own copy of the measure and its own RNG.
 */
typedef struct VmChain VmChain;

/**
 * A Voronoi measure over a categorical toy target.
 */
typedef struct VmSpec VmSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vm_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *vm_last_error_message(void);

/**
 * Four-cell square target in `[-2, 2]^2`. `n_probs` must be 4.
 *
 * # Safety
 * `probs` must point to `n_probs` doubles and `out` to writable storage.
 */
enum VmStatus vm_toy_spec_new(const double *probs,
                              size_t n_probs,
                              double temperature,
                              struct VmSpec **out);

/**
 * `2^k` cells centered on `{-1, 1}^k` in `[-2, 2]^k`. `n_probs` must be `2^k`.
 *
 * # Safety
 * `probs` must point to `n_probs` doubles and `out` to writable storage.
 */
enum VmStatus vm_hypercube_spec_new(size_t k,
                                    const double *probs,
                                    size_t n_probs,
                                    double temperature,
                                    struct VmSpec **out);

/**
 * # Safety
 * `spec` must come from a `vm_*_spec_new` call and not be freed twice.
 */
void vm_spec_free(struct VmSpec *spec);

/**
 * Dimension of the state space.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum VmStatus vm_spec_dim(const struct VmSpec *spec, size_t *out);

/**
 * Potential energy at `x` (`+inf` outside the box) and, if `out_cell` is not
 * null, the index of the cell containing `x`.
 *
 * # Safety
 * `x` must point to `len` doubles; `out` must be writable; `out_cell` may be null.
 */
enum VmStatus vm_spec_potential(const struct VmSpec *spec,
                                const double *x,
                                size_t len,
                                double *out,
                                size_t *out_cell);

/**
 * Gradient of the potential at an interior point `x`, written to `out`.
 *
 * # Safety
 * `x` and `out` must each point to `len` doubles.
 */
enum VmStatus vm_spec_gradient(const struct VmSpec *spec, const double *x, size_t len, double *out);

/**
 * New chain on a copy of `spec`, started uniformly in the box from `seed`.
 * `disc_fraction` is only read by SVS.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum VmStatus vm_chain_new(const struct VmSpec *spec,
                           enum VmAlgorithm algorithm,
                           double step_size,
                           double disc_fraction,
                           uint64_t seed,
                           struct VmChain **out);

/**
 * Advance the chain by `n_steps`. If `out_accepted` is not null it receives
 * the number of accepted transitions.
 *
 * # Safety
 * `chain` must be a live handle; `out_accepted` may be null.
 */
enum VmStatus vm_chain_step(struct VmChain *chain, size_t n_steps, size_t *out_accepted);

/**
 * Current position, written to `out` (`len` must equal the state dimension).
 *
 * # Safety
 * `chain` must be a live handle and `out` point to `len` doubles.
 */
enum VmStatus vm_chain_position(const struct VmChain *chain, double *out, size_t len);

/**
 * Index of the cell the chain currently occupies.
 *
 * # Safety
 * `chain` must be a live handle and `out` writable.
 */
enum VmStatus vm_chain_cell(const struct VmChain *chain, size_t *out);

/**
 * # Safety
 * `chain` must come from `vm_chain_new` and not be freed twice.
 */
void vm_chain_free(struct VmChain *chain);

/**
 * Momentum after meeting a facet with normal `normal` and potential jump
 * `delta_u` (may be `+inf`). `out_refracted` receives 1 if the particle
 * passed through and 0 if it was reflected; it may be null.
 *
 * # Safety
 * `r`, `normal` and `out_r` must each point to `len` doubles.
 */
enum VmStatus vm_refract_reflect(const double *r,
                                 const double *normal,
                                 size_t len,
                                 double delta_u,
                                 double *out_r,
                                 int32_t *out_refracted);

/**
 * Jensen-Shannon divergence in nats between two tables of length `len`.
 *
 * # Safety
 * `p` and `q` must each point to `len` doubles and `out` be writable.
 */
enum VmStatus vm_js_divergence(const double *p, const double *q, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VORONOI_MCMC_H */
