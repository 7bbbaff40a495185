#ifndef RECADAM_H
#define RECADAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RecadamStatus {
  RECADAM_STATUS_OK = 0,
  RECADAM_STATUS_INVALID_ARGUMENT = 1,
  RECADAM_STATUS_DIMENSION = 2,
  RECADAM_STATUS_NUMERIC = 3,
  RECADAM_STATUS_NULL_POINTER = 4,
  RECADAM_STATUS_CONFIG = 5,
  RECADAM_STATUS_NO_DATA = 6,
  RECADAM_STATUS_IO = 7,
  RECADAM_STATUS_PANIC = 8,
} RecadamStatus;

typedef enum RecadamOptimizerKind {
  RECADAM_OPTIMIZER_KIND_ADAM = 0,
  RECADAM_OPTIMIZER_KIND_ADAMW = 1,
  RECADAM_OPTIMIZER_KIND_RECADAM = 2,
  RECADAM_OPTIMIZER_KIND_RECADAM_COUPLED = 3,
} RecadamOptimizerKind;

typedef enum RecadamScheduleKind {
  RECADAM_SCHEDULE_KIND_CONSTANT = 0,
  RECADAM_SCHEDULE_KIND_LINEAR_WARMUP_CONSTANT = 1,
  RECADAM_SCHEDULE_KIND_LINEAR_WARMUP_LINEAR_DECAY = 2,
} RecadamScheduleKind;

/*
 Optimizer configuration plus its moment state.
 */
typedef struct RecadamOptimizer RecadamOptimizer;

/*
 Quadratic recall penalty anchored at `theta*`.
 */
typedef struct RecadamPenalty RecadamPenalty;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call into this library on the same thread.
 */
const char *recadam_last_error_message(void);

/*
 Creates an optimizer for `dim` parameters. Pass `weight_decay = 0` for
 every kind except `adamw`.
 */
enum RecadamStatus recadam_optimizer_new(enum RecadamOptimizerKind kind,
                                         double alpha,
                                         double beta1,
                                         double beta2,
                                         double eps,
                                         double weight_decay,
                                         size_t dim,
                                         struct RecadamOptimizer **out);

void recadam_optimizer_free(struct RecadamOptimizer *opt);

/*
 Steps taken so far.
 */
enum RecadamStatus recadam_optimizer_step_count(const struct RecadamOptimizer *opt, uint64_t *out);

/*
 Applies one step to `theta` in place. `penalty_grad` may be null for the
 plain kinds; `lambda` is ignored by them. On failure `theta` and the
 optimizer state are left unchanged.
 */
enum RecadamStatus recadam_optimizer_step(struct RecadamOptimizer *opt,
                                          double *theta,
                                          const double *grad,
                                          const double *penalty_grad,
                                          size_t len,
                                          double eta,
                                          double lambda);

/*
 Isotropic penalty `gamma/2 * |theta - theta*|^2`.
 */
enum RecadamStatus recadam_penalty_new_isotropic(const double *theta_star,
                                                 size_t len,
                                                 double gamma,
                                                 struct RecadamPenalty **out);

/*
 Diagonal-Fisher penalty `n_obs/2 * sum F_i (theta_i - theta*_i)^2`.
 */
enum RecadamStatus recadam_penalty_new_diagonal_fisher(const double *theta_star,
                                                       const double *fisher_diag,
                                                       size_t len,
                                                       uint64_t n_obs,
                                                       struct RecadamPenalty **out);

void recadam_penalty_free(struct RecadamPenalty *pen);

enum RecadamStatus recadam_penalty_loss(const struct RecadamPenalty *pen,
                                        const double *theta,
                                        size_t len,
                                        double *out);

/*
 Writes `len` gradient values to `out`.
 */
enum RecadamStatus recadam_penalty_grad(const struct RecadamPenalty *pen,
                                        const double *theta,
                                        size_t len,
                                        double *out);

/*
 Sigmoid mixture weight `1 / (1 + exp(-k (t - t0)))` for step `t >= 1`.
 */
enum RecadamStatus recadam_lambda_at(double k, uint64_t t0, uint64_t t, double *out);

/*
 Step-size multiplier at step `t >= 1`.
 */
enum RecadamStatus recadam_schedule_multiplier(enum RecadamScheduleKind kind,
                                               uint64_t warmup_steps,
                                               uint64_t total_steps,
                                               uint64_t t,
                                               double *out);

enum RecadamStatus recadam_l2_distance(const double *a, const double *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECADAM_H */
