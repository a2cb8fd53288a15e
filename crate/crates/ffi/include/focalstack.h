#ifndef FOCALSTACK_H
#define FOCALSTACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsrStatus {
  FSR_STATUS_OK = 0,
  FSR_STATUS_NULL_ARGUMENT = 1,
  FSR_STATUS_INVALID_UTF8 = 2,
  FSR_STATUS_IO = 3,
  FSR_STATUS_CORRUPT_CONTAINER = 4,
  FSR_STATUS_VERSION_MISMATCH = 5,
  FSR_STATUS_MALFORMED_SPEC = 6,
  FSR_STATUS_INVALID_TARGETS = 7,
  FSR_STATUS_BUFFER_TOO_SMALL = 8,
  FSR_STATUS_MISSING_SLICES = 9,
  FSR_STATUS_BUILD_FAILED = 10,
  FSR_STATUS_PANIC = 11,
} FsrStatus;

/**
 * Loaded container ready for rendering.
 */
typedef struct FsrContainer FsrContainer;

typedef struct FsrInfo {
  uint32_t k;
  uint32_t width;
  uint32_t height;
  uint32_t label_count;
  uint64_t dual_count;
  uint64_t bokeh_count;
} FsrInfo;

/**
 * Byte buffer owned by the library.
 */
typedef struct FsrBuffer {
  uint8_t *data;
  uintptr_t len;
} FsrBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *fsr_last_error(void);

/**
 * Container format version understood by this library.
 */
const char *fsr_format_version(void);

/**
 * Opens the container directory at `dir`.
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum FsrStatus fsr_container_open(const char *dir, struct FsrContainer **out);

/**
 * Releases a container. Null is ignored.
 *
 * # Safety
 * `c` must come from [`fsr_container_open`] and not be used afterwards.
 */
void fsr_container_free(struct FsrContainer *c);

/**
 * # Safety
 * `c` must be a live container and `out` a valid pointer.
 */
enum FsrStatus fsr_container_info(const struct FsrContainer *c, struct FsrInfo *out);

/**
 * Copies the focus labels (row major, `width * height` values) into `out`.
 *
 * # Safety
 * `out` must point to `len` writable `u16`s.
 */
enum FsrStatus fsr_focus_labels(const struct FsrContainer *c, uint16_t *out, uintptr_t len);

/**
 * Renders the JSON target `spec` as a 16-bit PNG into a new buffer.
 *
 * # Safety
 * `c` must be a live container, `spec` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum FsrStatus fsr_render_png(const struct FsrContainer *c,
                              const char *spec,
                              struct FsrBuffer *out);

/**
 * Renders the JSON target `spec` as interleaved linear RGB floats
 * (`width * height * 3` values).
 *
 * # Safety
 * `out` must point to `len` writable floats.
 */
enum FsrStatus fsr_render_rgb(const struct FsrContainer *c,
                              const char *spec,
                              float *out,
                              uintptr_t len);

/**
 * Releases a buffer from [`fsr_render_png`]. Empty buffers are ignored.
 *
 * # Safety
 * `buf` must come from this library and not be freed twice.
 */
void fsr_buffer_free(struct FsrBuffer buf);

/**
 * Builds a container at `out_dir` from the stack in `stack_dir` with the
 * default thresholds and the builtin composite measure.
 *
 * # Safety
 * Both arguments must be valid NUL-terminated strings.
 */
enum FsrStatus fsr_build(const char *stack_dir, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOCALSTACK_H */
