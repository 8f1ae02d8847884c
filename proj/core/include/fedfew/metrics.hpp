#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfew/data.hpp"
#include "fedfew/inference.hpp"
#include "fedfew/nn.hpp"

namespace fedfew::metrics {

struct BinaryCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    void add(bool predicted, bool actual);
};

struct ConfusionMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Standard definitions; precision/recall/f1 are 0 when their denominator
/// is 0 (matches the all-negative baseline convention).
ConfusionMetrics confusion_metrics(const BinaryCounts& counts);

/// Mann-Whitney AUROC by exact pair counting with tie correction,
/// O(n log n) via ranks.
double auroc(const std::vector<double>& scores_pos, const std::vector<double>& scores_neg);

struct EnergyRow {
    std::uint64_t sample_id = 0;
    double energy = 0.0;
    bool has_uc = false;
    std::string split;
    std::string phase;
};

struct EnergyReport {
    std::vector<EnergyRow> rows;
    double gap = 0.0;  // mean(E | has_uc) - mean(E | !has_uc)
};

struct EnergySample {
    std::uint64_t sample_id = 0;
    std::vector<double> features;
    bool has_uc = false;
    std::string split;
};

EnergyReport energy_report(const std::vector<EnergySample>& samples,
                           const nn::ParameterSet& params, const nn::ModelSpec& spec,
                           double tau, const std::string& phase);

void write_energy_csv(const std::vector<EnergyRow>& rows, const std::string& path,
                      bool append = false);

struct ProbeSample {
    std::vector<double> features;  // raw inputs; the frozen trunk runs inside
    int label = 0;                 // mutually exclusive class id
};

/// Linear classification protocol: extracts frozen trunk features once,
/// trains only a fresh linear head (one-vs-rest sigmoid BCE, Adam), and
/// returns held-out argmax accuracy. The trunk never enters the training
/// graph, so its gradient is identically zero.
double linear_probe(const nn::ParameterSet& params, const nn::ModelSpec& spec,
                    const std::vector<ProbeSample>& train,
                    const std::vector<ProbeSample>& test, int num_classes, int epochs,
                    std::uint64_t seed);

}  // namespace fedfew::metrics
