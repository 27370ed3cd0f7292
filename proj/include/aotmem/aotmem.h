/* C interface to the aotmem library: attention-only transformer memorization
 * constructions, encoder bounds and training sweeps.
 *
 * Every function returns an aotmem_status. On failure the message is
 * available from aotmem_last_error() on the calling thread until the next
 * call. Strings returned through char** are owned by the caller and must be
 * released with aotmem_string_free(). Handles are released with their
 * matching *_free function; passing NULL to a free function is a no-op.
 */
#ifndef AOTMEM_AOTMEM_H
#define AOTMEM_AOTMEM_H

#include <stddef.h>
#include <stdint.h>

#if defined(AOTMEM_BUILDING_LIBRARY)
#define AOTMEM_API __attribute__((visibility("default")))
#else
#define AOTMEM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aotmem_status {
  AOTMEM_OK = 0,
  AOTMEM_ERR_COMPUTATION = 1,      /* numerical or runtime failure */
  AOTMEM_ERR_INVALID_ARGUMENT = 2  /* bad input, config or file */
} aotmem_status;

typedef struct aotmem_task aotmem_task;
typedef struct aotmem_model aotmem_model;

AOTMEM_API const char* aotmem_version(void);
AOTMEM_API const char* aotmem_last_error(void);
AOTMEM_API void aotmem_string_free(char* s);

/* Tasks */
AOTMEM_API aotmem_status aotmem_task_association(int n, int s, uint64_t seed, aotmem_task** out);
AOTMEM_API aotmem_status aotmem_task_noisy_lookup(int n, int s, double p_correct, uint64_t seed,
                                                  aotmem_task** out);
AOTMEM_API aotmem_status aotmem_task_smooth(const aotmem_task* task, double delta, aotmem_task** out);
AOTMEM_API aotmem_status aotmem_task_from_json(const char* json, aotmem_task** out);
AOTMEM_API aotmem_status aotmem_task_to_json(const aotmem_task* task, char** out);
AOTMEM_API aotmem_status aotmem_task_size(const aotmem_task* task, size_t* out);
AOTMEM_API aotmem_status aotmem_task_t_epsilon(const aotmem_task* task, double eps, size_t* out);
AOTMEM_API void aotmem_task_free(aotmem_task* task);

/* Models (JSON parameter format with e, pos, heads, W_U, mlp) */
AOTMEM_API aotmem_status aotmem_model_from_json(const char* json, aotmem_model** out);
AOTMEM_API aotmem_status aotmem_model_to_json(const aotmem_model* model, char** out);
AOTMEM_API aotmem_status aotmem_model_logits(const aotmem_model* model, const int32_t* tokens, size_t len,
                                             double* logits, size_t logits_len);
AOTMEM_API void aotmem_model_free(aotmem_model* model);

AOTMEM_API aotmem_status aotmem_kl_divergence(const aotmem_model* model, const aotmem_task* task, double* out);
AOTMEM_API aotmem_status aotmem_accuracy(const aotmem_model* model, const aotmem_task* task, double* out);

/* Builds an exact memorizer. config_json keys: eps, d, d_h, skip_mode,
 * lambda_skip, rho_last, gamma_target, rank_tol, max_resample,
 * head_candidates, seed, target ("circle" | "lower_bound"), target_lambda,
 * lower_bound_ref. Writes the model and the certificate JSON. */
AOTMEM_API aotmem_status aotmem_construct(const aotmem_task* task, const char* config_json,
                                          aotmem_model** model_out, char** certificate_json);
AOTMEM_API aotmem_status aotmem_verify(const aotmem_model* model, const aotmem_task* task,
                                       double lower_bound_ref, char** certificate_json);

/* request_json keys: d, restarts, steps, lr, seed, polish_iterations,
 * theorem2, jl_seed, jl_max_tries, jl_sample (sign vectors even when N <= d). */
AOTMEM_API aotmem_status aotmem_bounds(const aotmem_task* task, const char* request_json, char** report_json);
/* request_json keys: H, d_h, d, N, S, T0. */
AOTMEM_API aotmem_status aotmem_capacity(const char* request_json, char** report_json);

/* model_config_json keys: d, d_h, H, variant, mlp_width, qk_mode (N and S
 * come from the task). train_config_json may be NULL for the defaults. */
AOTMEM_API aotmem_status aotmem_train(const aotmem_task* task, const char* model_config_json,
                                      const char* train_config_json, aotmem_model** model_out,
                                      char** result_json);

/* spec_json: {"preset": "fig1a", ...} or a full sweep spec. Rows are
 * appended to csv_path in grid order; existing rows are skipped. */
AOTMEM_API aotmem_status aotmem_sweep(const char* spec_json, const char* csv_path, char** summary_json);
/* request_json keys: x, y, form, max_accuracy, figure_id, variant, by. */
AOTMEM_API aotmem_status aotmem_fit(const char* csv_path, const char* request_json, char** fit_json);
/* spec_json keys: x, y, group_by, figure_id, bounds, fit, title, x_label,
 * y_label. */
AOTMEM_API aotmem_status aotmem_plot(const char* csv_path, const char* spec_json, char** svg);

#ifdef __cplusplus
}
#endif

#endif /* AOTMEM_AOTMEM_H */
