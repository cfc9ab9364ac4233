#include <stdio.h>
#include <string.h>
#include "bwq.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        return 2;
    }
    BwqModel *model = NULL;
    if (bwq_model_load(argv[1], &model) != BWQ_STATUS_OK) {
        fprintf(stderr, "load: %s\n", bwq_last_error());
        return 1;
    }
    BwqReport *report = NULL;
    if (bwq_simulate(model, NULL, 0, &report) != BWQ_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", bwq_last_error());
        return 1;
    }
    uint64_t cycles = 0;
    double latency = 0.0;
    bool verified = false;
    BwqEnergy energy;
    bwq_report_cycles(report, &cycles, &latency);
    bwq_report_verified(report, &verified);
    bwq_report_energy(report, &energy);
    printf("cycles %llu verified %d adc_share %.3f\n", (unsigned long long)cycles, verified,
           energy.adc / energy.total);
    BwqModel *bad = NULL;
    BwqStatus st = bwq_model_from_json("{\"version\": 1}", &bad);
    printf("bad %d %s\n", (int)st, bwq_last_error() ? "message" : "none");
    bwq_report_free(report);
    bwq_model_free(model);
    return 0;
}
