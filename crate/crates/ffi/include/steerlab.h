#ifndef STEERLAB_H
#define STEERLAB_H

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_ARGUMENT = 2,
  SL_STATUS_VALIDATION = 3,
  SL_STATUS_DOMAIN = 4,
  SL_STATUS_OUT_OF_RANGE = 5,
  SL_STATUS_DIVERGED = 6,
  SL_STATUS_BRACKET_EXHAUSTED = 7,
  SL_STATUS_CONFIG = 8,
  SL_STATUS_IO = 9,
  SL_STATUS_PARSE = 10,
  SL_STATUS_BUFFER_TOO_SMALL = 11,
  SL_STATUS_PANIC = 12,
} SlStatus;

/*
 Normalization used by the toy model.
 */
typedef enum SlNorm {
  SL_NORM_RMS = 0,
  SL_NORM_LAYER = 1,
} SlNorm;

/*
 Concept dataset: partition, probabilities and contexts.
 */
typedef struct SlDataset SlDataset;

/*
 Steering vector together with its index sets and log-odds profile.
 */
typedef struct SlSteering SlSteering;

/*
 Toy pre-norm transformer.
 */
typedef struct SlToyModel SlToyModel;

/*
 Unconstrained-features parameters `(W, H)`.
 */
typedef struct SlUfm SlUfm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if the last call
 succeeded. The pointer stays valid until the next `sl_*` call on the same
 thread.
 */
const char *sl_last_error(void);

/*
 Static, nul-terminated library version.
 */
const char *sl_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a pointer obtained from this library and not yet freed.
 */
void sl_string_free(char *s);

/*
 Symmetric dataset with `per_concept` contexts per concept.

 # Safety
 `out` must be a valid pointer to a handle slot.
 */
enum SlStatus sl_dataset_symmetric(size_t vocab_size,
                                   size_t group_count,
                                   size_t seq_len,
                                   double epsilon,
                                   size_t per_concept,
                                   uint64_t seed,
                                   struct SlDataset **out);

/*
 Weighted dataset; `gamma` and `omega` each hold `vocab_size` values.

 # Safety
 `gamma` and `omega` must point to `len` readable doubles; `out` must be a
 valid pointer to a handle slot.
 */
enum SlStatus sl_dataset_weighted(size_t vocab_size,
                                  size_t group_count,
                                  size_t seq_len,
                                  double epsilon,
                                  const double *gamma,
                                  const double *omega,
                                  size_t len,
                                  size_t per_concept,
                                  uint64_t seed,
                                  struct SlDataset **out);

/*
 The reference instance (V=9, G=3, T=4, eps=0.1, four contexts per concept).

 # Safety
 `out` must be a valid pointer to a handle slot.
 */
enum SlStatus sl_dataset_canonical(struct SlDataset **out);

/*
 Parses a dataset document. Documents violating the sign-separation
 assumption are rejected.

 # Safety
 `json` must be a nul-terminated string; `out` a valid handle slot.
 */
enum SlStatus sl_dataset_from_json(const char *json, struct SlDataset **out);

/*
 Serializes the dataset; release the result with [`sl_string_free`].

 # Safety
 `ds` must be a live handle; `out` a valid string slot.
 */
enum SlStatus sl_dataset_to_json(const struct SlDataset *ds, char **out);

/*
 Vocabulary size, concept count and context count.

 # Safety
 `ds` must be a live handle; the outputs valid pointers.
 */
enum SlStatus sl_dataset_shape(const struct SlDataset *ds,
                               size_t *vocab_size,
                               size_t *group_count,
                               size_t *context_count);

/*
 Concept index of context `j`.

 # Safety
 `ds` must be a live handle; `out` a valid pointer.
 */
enum SlStatus sl_dataset_concept_of_context(const struct SlDataset *ds, size_t j, size_t *out);

/*
 Next-token distribution of context `j` (`vocab_size` values).

 # Safety
 `ds` must be a live handle; `out` must hold `out_len` doubles.
 */
enum SlStatus sl_dataset_next_token(const struct SlDataset *ds,
                                    size_t j,
                                    double *out,
                                    size_t out_len);

/*
 Weighted next-token entropy, the minimal attainable cross-entropy.

 # Safety
 `ds` must be a live handle; `out` a valid pointer.
 */
enum SlStatus sl_dataset_entropy(const struct SlDataset *ds, double *out);

/*
 # Safety
 `ds` must be null or a live handle, not used afterwards.
 */
void sl_dataset_free(struct SlDataset *ds);

/*
 Closed-form minimizer `W = I`, `h_j = log p(.|c_j)`.

 # Safety
 `ds` must be a live handle; `out` a valid handle slot.
 */
enum SlStatus sl_ufm_perfect_fit(const struct SlDataset *ds, struct SlUfm **out);

/*
 Full-batch gradient descent with `d = V`. `final_loss` may be null.

 # Safety
 `ds` must be a live handle; `out` a valid handle slot; `final_loss` null
 or valid.
 */
enum SlStatus sl_ufm_train(const struct SlDataset *ds,
                           double learning_rate,
                           size_t steps,
                           double init_scale,
                           uint64_t seed,
                           struct SlUfm **out,
                           double *final_loss);

/*
 Unsteered logits `W h_j` (`vocab_size` values).

 # Safety
 `m` must be a live handle; `out` must hold `out_len` doubles.
 */
enum SlStatus sl_ufm_logits(const struct SlUfm *m, size_t j, double *out, size_t out_len);

/*
 Weighted cross-entropy of the model on the dataset.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_ufm_cross_entropy(const struct SlUfm *m, const struct SlDataset *ds, double *out);

/*
 # Safety
 `m` must be null or a live handle, not used afterwards.
 */
void sl_ufm_free(struct SlUfm *m);

/*
 Builds a steering vector toward concept `target` from `pairs` sampled
 positive/negative contexts. With `contrastive` nonzero the negatives come
 from concept `opposite`; otherwise they are any non-target contexts.

 # Safety
 Handles must be live; `out` a valid handle slot.
 */
enum SlStatus sl_steering_build(const struct SlDataset *ds,
                                const struct SlUfm *m,
                                size_t target,
                                int contrastive,
                                size_t opposite,
                                size_t pairs,
                                uint64_t seed,
                                struct SlSteering **out);

/*
 Number of positive/negative pairs and the vector width.

 # Safety
 `st` must be a live handle; outputs valid pointers.
 */
enum SlStatus sl_steering_shape(const struct SlSteering *st, size_t *pairs, size_t *dim);

/*
 The steering vector `v` (`dim` values).

 # Safety
 `st` must be a live handle; `out` must hold `out_len` doubles.
 */
enum SlStatus sl_steering_vector(const struct SlSteering *st, double *out, size_t out_len);

/*
 Per-token log-odds `M` (`vocab_size` values).

 # Safety
 `st` must be a live handle; `out` must hold `out_len` doubles.
 */
enum SlStatus sl_steering_log_odds(const struct SlSteering *st, double *out, size_t out_len);

/*
 Positive and negative context indices (`pairs` values each). Either
 output may be null to skip it.

 # Safety
 `st` must be a live handle; non-null outputs must hold `len` entries.
 */
enum SlStatus sl_steering_index_sets(const struct SlSteering *st,
                                     size_t *positive,
                                     size_t *negative,
                                     size_t len);

/*
 Steered distribution of context `j` at strength `alpha`.

 # Safety
 Handles must be live; `out` must hold `out_len` doubles.
 */
enum SlStatus sl_steered_probs(const struct SlDataset *ds,
                               const struct SlSteering *st,
                               size_t j,
                               double alpha,
                               double *out,
                               size_t out_len);

/*
 # Safety
 `st` must be null or a live handle, not used afterwards.
 */
void sl_steering_free(struct SlSteering *st);

/*
 `Δp(z|c_j, α)`.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_delta_p(const struct SlDataset *ds,
                         const struct SlSteering *st,
                         size_t j,
                         size_t z,
                         double alpha,
                         double *out);

/*
 `dΔp(z|c_j, α)/dα`.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_delta_p_derivative(const struct SlDataset *ds,
                                    const struct SlSteering *st,
                                    size_t j,
                                    size_t z,
                                    double alpha,
                                    double *out);

/*
 Expected log-odds under the steered distribution.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_expected_log_odds(const struct SlDataset *ds,
                                   const struct SlSteering *st,
                                   size_t j,
                                   double alpha,
                                   double *out);

/*
 Variance of the log-odds under the steered distribution, the derivative
 of the expected log-odds.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_expected_log_odds_derivative(const struct SlDataset *ds,
                                              const struct SlSteering *st,
                                              size_t j,
                                              double alpha,
                                              double *out);

/*
 Strength maximizing `Δp(z|c_j, ·)`, with default bisection settings.
 Writes `+inf` (`-inf`) for tokens whose curve increases (decreases) on
 the whole line.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_peak_alpha(const struct SlDataset *ds,
                            const struct SlSteering *st,
                            size_t j,
                            size_t z,
                            double *out);

/*
 Average probability increase over the tokens of `concept`.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_concept_increase(const struct SlDataset *ds,
                                  const struct SlSteering *st,
                                  size_t j,
                                  size_t concept,
                                  double alpha,
                                  double *out);

/*
 Logistic decomposition of the concept mass: offset `r`, integral `nu`,
 and the reconstruction error against the direct mass. Any output may be
 null. `points` of 0 selects the default quadrature.

 # Safety
 Handles must be live; non-null outputs valid pointers.
 */
enum SlStatus sl_tanh_decomposition(const struct SlDataset *ds,
                                    const struct SlSteering *st,
                                    size_t j,
                                    size_t concept,
                                    double alpha,
                                    size_t points,
                                    double *r,
                                    double *nu,
                                    double *reconstruction_error);

/*
 Cross-entropy change when every embedding is shifted by `α v`.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_delta_ce(const struct SlDataset *ds,
                          const struct SlUfm *m,
                          const struct SlSteering *st,
                          double alpha,
                          double *out);

/*
 Second-order coefficient of the cross-entropy change at the perfect fit.

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_ce_quadratic_coefficient(const struct SlDataset *ds,
                                          const struct SlSteering *st,
                                          double *out);

/*
 `lim Δp(z|c_j, α)` as `α → +∞` (`sign = 1`) or `-∞` (`sign = -1`).

 # Safety
 Handles must be live; `out` a valid pointer.
 */
enum SlStatus sl_delta_p_limit(const struct SlDataset *ds,
                               const struct SlSteering *st,
                               size_t j,
                               size_t z,
                               int sign,
                               double *out);

/*
 Seeded toy transformer.

 # Safety
 `out` must be a valid handle slot.
 */
enum SlStatus sl_toy_from_seed(size_t layers,
                               size_t dim,
                               size_t vocab,
                               size_t seq_len,
                               enum SlNorm norm,
                               uint64_t seed,
                               struct SlToyModel **out);

/*
 Layer count, width and vocabulary size.

 # Safety
 `m` must be a live handle; outputs valid pointers.
 */
enum SlStatus sl_toy_shape(const struct SlToyModel *m, size_t *layers, size_t *dim, size_t *vocab);

/*
 Logits for every position, row-major `n_tokens × vocab`. A `v` of null
 (with `v_len` 0) or `alpha` of 0 gives the unsteered forward pass;
 otherwise `α v` is added to the residual stream after `layer` blocks, at
 the last position only if `last_only` is nonzero.

 # Safety
 `m` must be a live handle; `tokens` must hold `n_tokens` entries, `v`
 `v_len` doubles, and `out` `out_len` doubles.
 */
enum SlStatus sl_toy_forward(const struct SlToyModel *m,
                             const size_t *tokens,
                             size_t n_tokens,
                             size_t layer,
                             const double *v,
                             size_t v_len,
                             double alpha,
                             int last_only,
                             double *out,
                             size_t out_len);

/*
 Difference of position-averaged residuals after `layer` blocks between
 two prompt sets, each given as `count` prompts of `prompt_len` tokens
 laid out back to back. Writes `dim` values.

 # Safety
 `m` must be a live handle; each prompt array must hold
 `count * prompt_len` entries and `out` `out_len` doubles.
 */
enum SlStatus sl_toy_steering_vector(const struct SlToyModel *m,
                                     size_t layer,
                                     const size_t *positive,
                                     const size_t *negative,
                                     size_t count,
                                     size_t prompt_len,
                                     double *out,
                                     size_t out_len);

/*
 Limiting logits as `α → ±∞` (`sign` of +1 or -1), `vocab` values.

 # Safety
 `m` must be a live handle; `v` must hold `v_len` doubles and `out`
 `out_len` doubles.
 */
enum SlStatus sl_toy_limit_logits(const struct SlToyModel *m,
                                  const double *v,
                                  size_t v_len,
                                  int sign,
                                  double *out,
                                  size_t out_len);

/*
 # Safety
 `m` must be null or a live handle, not used afterwards.
 */
void sl_toy_free(struct SlToyModel *m);

/*
 Loads a TOML run configuration, runs every verification check and
 writes the report as JSON. `passed` is set to 1 if all checks passed.

 # Safety
 `config_path` must be a nul-terminated string; `passed` and
 `report_json` valid pointers.
 */
enum SlStatus sl_verify_all(const char *config_path, int *passed, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEERLAB_H */
