/* C interface to the array normal library.
 *
 * Handles are opaque; free them with the matching *_free call. Fallible
 * functions return a status code; on failure, anorm_last_error() yields
 * a message valid until the next failing call on the same thread.
 */

#ifndef ANORM_H
#define ANORM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define ANORM_OK 0
#define ANORM_ERR_ARGUMENT 1
#define ANORM_ERR_CONFIG 2
#define ANORM_ERR_DATA 3
#define ANORM_ERR_NUMERIC 4

typedef struct AnormArray AnormArray;
typedef struct AnormFit AnormFit;

const char *anorm_last_error(void);

/* Dense arrays. `data` is flat in storage order (first mode fastest);
 * `data_len` must equal the product of `dims`. */
int anorm_array_new(const size_t *dims, size_t order, const double *data,
                    size_t data_len, AnormArray **out);
void anorm_array_free(AnormArray *array);
size_t anorm_array_order(const AnormArray *array);
size_t anorm_array_dim(const AnormArray *array, size_t mode);
int anorm_array_data(const AnormArray *array, double *buf, size_t buf_len);

/* Standard array normal: zero mean, identity components. */
int anorm_standard_log_density(const AnormArray *y, double *out);
int anorm_sample_standard(const size_t *dims, size_t order, uint64_t seed,
                          AnormArray **out);

/* Log density under an array normal with the given mean and per-mode
 * covariance components (row-major, concatenated mode by mode; the
 * buffer length is the sum of squared dims). */
int anorm_log_density(const AnormArray *y, const AnormArray *mean,
                      const double *comps, size_t comps_len, double *out);

/* Maximum-likelihood fit; the last mode of `ys` indexes i.i.d.
 * replicates. Pass max_iters 0 / rel_tol 0.0 for the defaults. */
int anorm_fit_mle(const AnormArray *ys, size_t max_iters, double rel_tol,
                  AnormFit **out);
void anorm_fit_free(AnormFit *fit);
int anorm_fit_converged(const AnormFit *fit);
int anorm_fit_loglik(const AnormFit *fit, double *out);
size_t anorm_fit_mode_count(const AnormFit *fit);
size_t anorm_fit_mode_dim(const AnormFit *fit, size_t mode);
int anorm_fit_component(const AnormFit *fit, size_t mode, double *buf,
                        size_t buf_len);
int anorm_fit_mean(const AnormFit *fit, double *buf, size_t buf_len);

#ifdef __cplusplus
}
#endif

#endif /* ANORM_H */
