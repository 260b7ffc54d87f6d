/* Build: cc estimate.c -I../include -L../../../target/release -lfovmatch_ffi -lm -lpthread -ldl */
#include <stdio.h>

#include "fovmatch.h"

static int fail(const char *what, FmStatus s) {
  const char *msg = fm_last_error_message();
  fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg ? msg : "");
  return 1;
}

int main(int argc, char **argv) {
  if (argc != 4) {
    fprintf(stderr, "usage: %s fixed.mhd moving.mhd mask.mhd\n", argv[0]);
    return 2;
  }
  FmVolume *fixed = NULL, *moving = NULL;
  FmMask *mask = NULL;
  FmStatus s;
  if ((s = fm_volume_load(argv[1], &fixed)) != FM_STATUS_OK) return fail("load fixed", s);
  if ((s = fm_volume_load(argv[2], &moving)) != FM_STATUS_OK) return fail("load moving", s);
  if ((s = fm_mask_load(argv[3], &mask)) != FM_STATUS_OK) return fail("load mask", s);

  FmParams params;
  fm_params_default(&params);
  params.metric = FM_METRIC_EDGE_ALIGNMENT;

  FmShift shift;
  s = fm_estimate_global_shift(fixed, moving, mask, &params, &shift);
  fm_volume_free(fixed);
  fm_volume_free(moving);
  fm_mask_free(mask);
  if (s != FM_STATUS_OK) return fail("estimate", s);
  printf("%g %g %g\n", shift.shift_mm[0], shift.shift_mm[1], shift.shift_mm[2]);
  return 0;
}
