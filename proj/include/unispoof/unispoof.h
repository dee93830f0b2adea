#ifndef UNISPOOF_H
#define UNISPOOF_H

/* C interface to the unispoof library. Every function returns a status
   code; on failure unispoof_last_error() describes the problem for the
   calling thread. Strings returned through char** are owned by the caller
   and released with unispoof_string_free. Images are row-major
   height x width x channels floats in [0, 1]. */

#include <stddef.h>

#if defined(_WIN32)
#define UNISPOOF_API __declspec(dllexport)
#else
#define UNISPOOF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  UNISPOOF_OK = 0,
  UNISPOOF_INVALID_ARGUMENT = 1,
  UNISPOOF_SHAPE = 2,
  UNISPOOF_IO = 3,
  UNISPOOF_RUNTIME = 4,
  UNISPOOF_NUMERICAL = 5,
  /* the command ran but a check it performs failed (report has ok=false) */
  UNISPOOF_CHECK_FAILED = 6,
  UNISPOOF_INTERNAL = 7
} unispoof_status;

typedef struct unispoof_model unispoof_model;

UNISPOOF_API const char* unispoof_version(void);
UNISPOOF_API const char* unispoof_status_string(int status);
/* Message of the last failure on this thread; "" after a success. */
UNISPOOF_API const char* unispoof_last_error(void);
UNISPOOF_API void unispoof_string_free(char* s);

/* Runs a pipeline command (gen-data, augment, train-frm, train-uad,
   sweep-blocks, verify, eval, gradcheck, count-params). request_json may be
   NULL. On UNISPOOF_OK and UNISPOOF_CHECK_FAILED *report_json receives the
   JSON report; otherwise it is set to NULL. */
UNISPOOF_API int unispoof_run(const char* command, const char* request_json, char** report_json);

/* Loads a recognition checkpoint or an attack-detection checkpoint (which
   also carries the recognition model). */
UNISPOOF_API int unispoof_model_load(const char* path, unispoof_model** out);
UNISPOOF_API void unispoof_model_free(unispoof_model* model);
UNISPOOF_API int unispoof_model_input_size(const unispoof_model* model, size_t* size);
UNISPOOF_API int unispoof_model_embedding_dim(const unispoof_model* model, size_t* dim);
/* RGB image of input_size x input_size; writes embedding_dim floats. */
UNISPOOF_API int unispoof_model_embed(const unispoof_model* model, const float* rgb, size_t height, size_t width,
                                      float* embedding, size_t embedding_len);
/* Bona fide probability; needs an attack-detection checkpoint. */
UNISPOOF_API int unispoof_spoof_score(const unispoof_model* model, const float* rgb, size_t height, size_t width,
                                      double* score);

/* Simulated physical spoof. out has height*width*3 floats; *branch is 0 for
   print, 1 for replay (branch may be NULL). */
UNISPOOF_API int unispoof_spsc(const float* rgb, size_t height, size_t width, unsigned long long seed, float* out,
                               int* branch);
/* Simulated digital forgery. mask (height*width floats) may be NULL for the
   default face ellipse; out_mask (height*width) may be NULL. */
UNISPOOF_API int unispoof_sdsc(const float* rgb, const float* mask, size_t height, size_t width,
                               unsigned long long seed, float* out, float* out_mask);

UNISPOOF_API int unispoof_compute_eer(const double* genuine, size_t n_genuine, const double* impostor,
                                      size_t n_impostor, double* eer, double* threshold);

#ifdef __cplusplus
}
#endif

#endif
