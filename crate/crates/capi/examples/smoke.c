/* Minimal C consumer: load a mission, simulate, read the gradient. */
#include <stdio.h>
#include <math.h>
#include "patrolgrad.h"

static const char *MISSION =
    "[mission]\n"
    "horizon = 50.0\n"
    "[[targets]]\n"
    "id = 1\nx = 0.0\ny = 0.0\nA = 0.3\nB = 1.0\nR0 = 1.0\n"
    "[[targets]]\n"
    "id = 2\nx = 1.0\ny = 0.0\nA = 0.3\nB = 1.0\nR0 = 0.0\n"
    "[[edges]]\n"
    "i = 1\nj = 2\n"
    "[[agents]]\n"
    "id = 1\nstart_node = 1\n"
    "[thresholds]\n"
    "init = 0.5\n";

int main(void) {
    PgMission *mission = NULL;
    if (pg_mission_load(MISSION, &mission) != PG_STATUS_OK) {
        fprintf(stderr, "load: %s\n", pg_last_error_message());
        return 1;
    }
    PgSimResult *sim = NULL;
    if (pg_simulate(mission, &sim) != PG_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", pg_last_error_message());
        return 1;
    }
    double cost = pg_sim_result_cost(sim);
    if (!(cost > 0.0) || isnan(cost)) return 2;

    PgGradient *grad = NULL;
    if (pg_grad_j(mission, &grad) != PG_STATUS_OK) {
        fprintf(stderr, "gradient: %s\n", pg_last_error_message());
        return 1;
    }
    double d = 0.0;
    if (pg_gradient_get(grad, 0, 0, 0, &d) != PG_STATUS_OK) return 3;
    printf("J = %.12f, dJ/dtheta_11 = %.12f, events = %zu\n", cost, d,
           pg_sim_result_event_count(sim));

    pg_gradient_free(grad);
    pg_sim_result_free(sim);
    pg_mission_free(mission);
    return 0;
}
