#include <stdio.h>
#include <string.h>

#include "xrd.h"

static const char *CONFIG =
    "user_count = 8\n"
    "rng_seed = 5\n"
    "[params]\n"
    "servers = 3\n"
    "chain_length = 2\n";

int main(void) {
    uint32_t k = 0;
    if (xrd_compute_chain_length(0.2, 6000, 64, &k) != XRD_STATUS_OK || k != 33) {
        fprintf(stderr, "chain length: %u\n", k);
        return 1;
    }
    if (xrd_compute_chain_length(2.0, 6000, 64, &k) != XRD_STATUS_INVALID_ARGUMENT || xrd_last_error() == NULL) {
        fprintf(stderr, "expected invalid argument\n");
        return 1;
    }

    XrdWorld *world = NULL;
    if (xrd_world_new(CONFIG, &world) != XRD_STATUS_OK) {
        fprintf(stderr, "world: %s\n", xrd_last_error());
        return 1;
    }
    XrdRoundSummary s;
    if (xrd_world_run_round(world, &s) != XRD_STATUS_OK || s.failed_conversations != 0) {
        fprintf(stderr, "round: %s\n", xrd_last_error());
        xrd_world_free(world);
        return 1;
    }
    char *json = NULL;
    if (xrd_world_last_report_json(world, &json) != XRD_STATUS_OK || strstr(json, "\"round\"") == NULL) {
        fprintf(stderr, "report\n");
        xrd_world_free(world);
        return 1;
    }
    printf("round %llu: %llu/%llu delivered\n", (unsigned long long)s.round,
           (unsigned long long)s.delivered_conversations, (unsigned long long)s.active_conversations);
    xrd_string_free(json);
    xrd_world_free(world);
    return 0;
}
