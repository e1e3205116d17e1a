#include <math.h>
#include <stdio.h>
#include <string.h>

#include "otsieve.h"

#define CHECK(cond)                                                 \
  do {                                                              \
    if (!(cond)) {                                                  \
      fprintf(stderr, "check failed line %d: %s (%s)\n", __LINE__, \
              #cond, ots_last_error_message());                     \
      return 1;                                                     \
    }                                                               \
  } while (0)

int main(void) {
  /* 3 x 3 instance whose unique optimum is the anti-diagonal */
  double s[9] = {0, 1, 5, 0, 4, 1, 3, 0, 0};
  OtsCoupling *c = NULL;
  CHECK(ots_solve_assignment(s, 3, &c) == OTS_STATUS_OK);
  size_t n = 0;
  CHECK(ots_coupling_len(c, &n) == OTS_STATUS_OK && n == 3);
  size_t a[3];
  CHECK(ots_coupling_assignment(c, a, 3) == OTS_STATUS_OK);
  CHECK(a[0] == 2 && a[1] == 1 && a[2] == 0);
  double total = 0;
  CHECK(ots_coupling_total_surplus(c, &total) == OTS_STATUS_OK);
  CHECK(fabs(total - 12.0) < 1e-12);
  ots_coupling_free(c);

  CHECK(ots_solve_assignment(NULL, 3, &c) == OTS_STATUS_NULL_POINTER);
  CHECK(strlen(ots_last_error_message()) > 0);

  double j[4];
  CHECK(ots_closed_form_j(-0.4, -0.5, 0.4, j) == OTS_STATUS_OK);
  CHECK(fabs(j[0] - 0.98552314) < 1e-7);
  CHECK(ots_closed_form_j(1.5, 0.0, 0.4, j) != OTS_STATUS_OK);

  double m[12] = {0.1, 0.3, -1.0, 0.2, 0.5, -0.7, 1.2, 1.1, -0.4, 0.0, 0.9, -1.3};
  OtsMardia r;
  CHECK(ots_mardia(m, 6, 2, &r) == OTS_STATUS_OK);
  CHECK(r.skew_df == 4.0 && r.skew_p >= 0.0 && r.skew_p <= 1.0);

  printf("ok %s\n", ots_version());
  return 0;
}
