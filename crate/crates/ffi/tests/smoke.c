#include "mfglab.h"
#include <math.h>
#include <stdio.h>
#include <string.h>

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (%s)\n", #cond, \
    mfglab_last_error_message() ? mfglab_last_error_message() : "no message"); return 1; } } while (0)

int main(void) {
    MfglabConfig *cfg = NULL;
    const char *text = "model.name = ou-common\nmodel.a = 0.5\ngrid.x_min = -8\ngrid.x_max = 8\ngrid.h = 0.1\n"
                       "time.T = 0.1\ntime.dt = 0.001\ninit.mean = 0.4\ninit.std = 1\npolicy = constant:0.2\n";
    CHECK(mfglab_config_parse("spde-solve", text, &cfg) == MFGLAB_STATUS_OK);
    char hash[65];
    CHECK(mfglab_config_hash(cfg, hash, sizeof hash) == MFGLAB_STATUS_OK && strlen(hash) == 64);
    CHECK(mfglab_config_hash(cfg, hash, 64) == MFGLAB_STATUS_BUFFER_TOO_SMALL);

    MfglabPath *path = NULL;
    CHECK(mfglab_spde_solve(cfg, 3, &path) == MFGLAB_STATUS_OK);
    size_t n_times = 0, n_nodes = 0;
    CHECK(mfglab_path_shape(path, &n_times, &n_nodes) == MFGLAB_STATUS_OK);
    CHECK(n_times == 101 && n_nodes == 161);
    double mass = 0, m1 = 0, m1_0 = 0, w = 0;
    CHECK(mfglab_path_moment(path, 0, 1, &m1_0, &w) == MFGLAB_STATUS_OK && w == 0.0);
    CHECK(mfglab_path_moment(path, 100, 0, &mass, &w) == MFGLAB_STATUS_OK);
    CHECK(mfglab_path_moment(path, 100, 1, &m1, &w) == MFGLAB_STATUS_OK);
    CHECK(fabs(mass - 1.0) < 1e-9);
    /* Linear mean: m1(T) = m1(0) + u T + a W_T. */
    CHECK(fabs(m1 - m1_0 - 0.2 * 0.1 - 0.5 * w) < 1e-9);
    CHECK(mfglab_path_moment(path, 101, 1, &m1, &w) == MFGLAB_STATUS_OUT_OF_RANGE);
    CHECK(strstr(mfglab_last_error_message(), "step 101") != NULL);
    mfglab_path_free(path);

    CHECK(mfglab_config_set(cfg, "grid.h", "-1") == MFGLAB_STATUS_INVALID_CONFIG);
    mfglab_config_free(cfg);
    printf("ok %s\n", mfglab_version());
    return 0;
}
