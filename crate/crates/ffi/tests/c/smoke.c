#include <math.h>
#include <stdio.h>
#include <string.h>

#include "mrcap.h"

#define CHECK(cond)                                                     \
  do {                                                                  \
    if (!(cond)) {                                                      \
      const char *err = mrcap_last_error();                             \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,    \
              err ? err : "no error");                                  \
      return 1;                                                         \
    }                                                                   \
  } while (0)

int main(void) {
  uint32_t rank = 99;
  CHECK(mrcap_partition((const uint8_t *)"foobar", 6, 4, &rank) == MRCAP_STATUS_OK);
  CHECK(rank == 0x85944171f73967e8ULL % 4);
  CHECK(mrcap_partition((const uint8_t *)"a", 1, 0, &rank) == MRCAP_STATUS_INVALID_ARGUMENT);
  CHECK(strstr(mrcap_last_error(), "num_ranks") != NULL);

  MrcapRunResult *run = NULL;
  CHECK(mrcap_run_app(MRCAP_APP_REDUCE_BY_KEY, 10000, 72, 1, 4, 256, &run) == MRCAP_STATUS_OK);
  MrcapMetrics m;
  CHECK(mrcap_run_result_metrics(run, &m) == MRCAP_STATUS_OK);
  CHECK(m.map_kv_count == 10000);
  CHECK(m.shuffle_kv_count <= 288);
  uint64_t distinct = 0, count = 0, total = 0;
  CHECK(mrcap_run_result_distinct(run, &distinct) == MRCAP_STATUS_OK);
  CHECK(distinct == 72);
  CHECK(mrcap_run_result_count(run, (const uint8_t *)"zzzzzz", 6, &count) == MRCAP_STATUS_OK);
  CHECK(count == 0);
  CHECK(mrcap_run_result_count(run, (const uint8_t *)"aaaaaa", 6, &count) == MRCAP_STATUS_OK);
  total += count;
  CHECK(total > 0);
  mrcap_run_result_free(run);

  CHECK(mrcap_run_app(MRCAP_APP_GROUP_BY_KEY, 10, 20, 1, 1, 4, &run) == MRCAP_STATUS_CONFIG);
  CHECK(run == NULL);

  MrcapTrace *trace = mrcap_trace_new(100);
  CHECK(trace != NULL);
  for (uint64_t k = 0; k < 100; k++) {
    CHECK(mrcap_trace_push(trace, k * 100, MRCAP_DOMAIN_PROCESSOR, 100.0) == MRCAP_STATUS_OK);
    CHECK(mrcap_trace_push(trace, k * 100, MRCAP_DOMAIN_DRAM, 10.0) == MRCAP_STATUS_OK);
  }
  MrcapEnergy e;
  CHECK(mrcap_trace_integrate(trace, &e) == MRCAP_STATUS_OK);
  CHECK(e.processor_j == 1000.0 && e.dram_j == 100.0 && e.runtime_ms == 10000.0);
  CHECK(fabs(e.dram_fraction - 10.0 / 110.0) < 1e-12);
  mrcap_trace_free(trace);

  CHECK(mrcap_rapl_wrap_delta(999999900ULL, 50, 1000000000ULL) == 150);
  double d = 0;
  CHECK(mrcap_sim_dilation(160.0, 120.0, &d) == MRCAP_STATUS_OK);
  CHECK(fabs(d - 160.0 / 120.0) < 1e-15);

  printf("ok %s\n", mrcap_version());
  return 0;
}
