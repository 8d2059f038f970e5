#ifndef RELAXDICE_H
#define RELAXDICE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RdxStatus {
  RDX_STATUS_OK = 0,
  RDX_STATUS_INVALID_ARGUMENT = 1,
  RDX_STATUS_SHAPE_MISMATCH = 2,
  RDX_STATUS_SUPPORT_VIOLATION = 3,
  RDX_STATUS_NUMERICAL = 4,
  RDX_STATUS_TRAINING_FAILURE = 5,
  RDX_STATUS_IO = 6,
  RDX_STATUS_FORMAT = 7,
  RDX_STATUS_NULL_POINTER = 8,
  RDX_STATUS_BUFFER_TOO_SMALL = 9,
  RDX_STATUS_PANIC = 10,
} RdxStatus;

typedef enum RdxVariant {
  RDX_VARIANT_RELAX_DICE = 0,
  RDX_VARIANT_RELAX_DICE_DRC = 1,
  RDX_VARIANT_DEMO_DICE_LIMIT = 2,
} RdxVariant;

typedef struct RdxDataset RdxDataset;

typedef struct RdxMdp RdxMdp;

typedef struct RdxPolicy RdxPolicy;

typedef struct RdxSolution RdxSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call into the library on this thread.
 */
const char *rdx_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rdx_version(void);

/**
 * Relaxed KL generator at `u` for relaxation level `beta > 1`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum RdxStatus rdx_f_tilde(double u, double beta, double *out);

/**
 * Closed-form inner maximizer `ω*` and value `h` for the relaxed objective.
 *
 * # Safety
 * `omega` and `h` must be valid for one write each.
 */
enum RdxStatus rdx_omega_star_relaxdice(double e,
                                        double alpha,
                                        double beta,
                                        double *omega,
                                        double *h);

/**
 * Closed-form inner maximizer and value for the density-ratio corrected
 * objective.
 *
 * # Safety
 * `omega` and `h` must be valid for one write each.
 */
enum RdxStatus rdx_omega_star_drc(double e,
                                  double log_r_hat,
                                  double alpha,
                                  double beta,
                                  double *omega,
                                  double *h);

/**
 * Closed form of the β → 0 limit.
 *
 * # Safety
 * `omega` and `h` must be valid for one write each.
 */
enum RdxStatus rdx_omega_star_demodice(double e, double alpha, double *omega, double *h);

/**
 * Builds an MDP from `transition[s][a][s']` (row-major, length
 * `ns * na * ns`) and `initial[s]`.
 *
 * # Safety
 * The arrays must hold the stated number of elements; `out` must be valid
 * for one write.
 */
enum RdxStatus rdx_mdp_new(size_t num_states,
                           size_t num_actions,
                           const double *transition,
                           const double *initial,
                           double discount,
                           struct RdxMdp **out);

/**
 * Gridworld with the goal in the far corner, uniform starts and a reward
 * attached for [`rdx_expected_return`].
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum RdxStatus rdx_mdp_gridworld(size_t width,
                                 size_t height,
                                 double slip,
                                 double discount,
                                 struct RdxMdp **out);

/**
 * Loads an MDP written by `relaxdice gen-data`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for one write.
 */
enum RdxStatus rdx_mdp_load(const char *file, struct RdxMdp **out);

/**
 * # Safety
 * `mdp` must come from this library and not be used afterwards.
 */
void rdx_mdp_free(struct RdxMdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle or null (returns 0).
 */
size_t rdx_mdp_num_states(const struct RdxMdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle or null (returns 0).
 */
size_t rdx_mdp_num_actions(const struct RdxMdp *mdp);

/**
 * Policy from row-major probabilities `probs[s][a]`.
 *
 * # Safety
 * `probs` must hold `ns * na` elements; `out` must be valid for one write.
 */
enum RdxStatus rdx_policy_new(size_t num_states,
                              size_t num_actions,
                              const double *probs,
                              struct RdxPolicy **out);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void rdx_policy_free(struct RdxPolicy *policy);

/**
 * Copies the policy's probabilities into `out` (capacity `len`).
 *
 * # Safety
 * `out` must be valid for `len` writes.
 */
enum RdxStatus rdx_policy_probs(const struct RdxPolicy *policy, double *out, size_t len);

/**
 * Discounted occupancy `d(s, a)` of `policy`, row-major, `ns * na` values.
 *
 * # Safety
 * Handles must be live; `out` must be valid for `len` writes.
 */
enum RdxStatus rdx_occupancy(const struct RdxMdp *mdp,
                             const struct RdxPolicy *policy,
                             double *out,
                             size_t len);

/**
 * Normalized discounted return. Uses the MDP's own reward when
 * `reward` is null (gridworlds only).
 *
 * # Safety
 * Handles must be live; `reward` must be null or hold `ns * na` values
 * (`reward_len`); `out` must be valid for one write.
 */
enum RdxStatus rdx_expected_return(const struct RdxMdp *mdp,
                                   const struct RdxPolicy *policy,
                                   const double *reward,
                                   size_t reward_len,
                                   double *out);

/**
 * Rolls out `policy` for `num_steps` transitions with geometric episode
 * termination.
 *
 * # Safety
 * Handles must be live; `out` must be valid for one write.
 */
enum RdxStatus rdx_sample_trajectories(const struct RdxMdp *mdp,
                                       const struct RdxPolicy *policy,
                                       size_t num_steps,
                                       uint64_t seed,
                                       struct RdxDataset **out);

/**
 * Loads a dataset written by `relaxdice gen-data`.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` must be valid for one write.
 */
enum RdxStatus rdx_dataset_load(const char *file, struct RdxDataset **out);

/**
 * # Safety
 * `data` must come from this library and not be used afterwards.
 */
void rdx_dataset_free(struct RdxDataset *data);

/**
 * # Safety
 * `data` must be a live handle or null (returns 0).
 */
size_t rdx_dataset_len(const struct RdxDataset *data);

/**
 * Estimates ratios from counts, solves the tabular problem with the exact
 * estimator and extracts a policy. `beta <= 0` selects automatic β.
 *
 * # Safety
 * Handles must be live; `out` must be valid for one write.
 */
enum RdxStatus rdx_solve_tabular(const struct RdxMdp *mdp,
                                 const struct RdxDataset *expert,
                                 const struct RdxDataset *suboptimal,
                                 enum RdxVariant variant,
                                 double alpha,
                                 double beta,
                                 struct RdxSolution **out);

/**
 * # Safety
 * `sol` must come from this library and not be used afterwards.
 */
void rdx_solution_free(struct RdxSolution *sol);

/**
 * Number of state values (the MDP's state count).
 *
 * # Safety
 * `sol` must be a live handle or null (returns 0).
 */
size_t rdx_solution_num_values(const struct RdxSolution *sol);

/**
 * # Safety
 * `sol` must be live; `out` must be valid for `len` writes.
 */
enum RdxStatus rdx_solution_values(const struct RdxSolution *sol, double *out, size_t len);

/**
 * Number of ω* entries (one per suboptimal record).
 *
 * # Safety
 * `sol` must be a live handle or null (returns 0).
 */
size_t rdx_solution_omega_len(const struct RdxSolution *sol);

/**
 * # Safety
 * `sol` must be live; `out` must be valid for `len` writes.
 */
enum RdxStatus rdx_solution_omega(const struct RdxSolution *sol, double *out, size_t len);

/**
 * β used by the solve, the final loss, and whether the solver converged.
 *
 * # Safety
 * `sol` must be live; each output pointer may be null to skip it.
 */
enum RdxStatus rdx_solution_summary(const struct RdxSolution *sol,
                                    double *beta,
                                    double *loss,
                                    bool *converged);

/**
 * Copy of the extracted policy as a new handle.
 *
 * # Safety
 * `sol` must be live; `out` must be valid for one write.
 */
enum RdxStatus rdx_solution_policy(const struct RdxSolution *sol, struct RdxPolicy **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAXDICE_H */
