#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfew/data.hpp"
#include "fedfew/losses.hpp"
#include "fedfew/nn.hpp"

namespace fedfew::infer {

/// Dual class prototype: mean features of the positive and negative
/// labeled examples. The only trained per-class metadata that crosses the
/// privacy boundary.
struct Prototype {
    int class_id = 0;
    std::vector<double> mu_pos;
    std::vector<double> mu_neg;
    std::uint64_t n_pos = 0;
    std::uint64_t n_neg = 0;
};

enum class Metric { cosine, euclidean, emd_sinkhorn };

Metric metric_from_string(const std::string& name);
const char* metric_name(Metric m);

struct EnergyStat {
    double energy = 0.0;
    bool has_uc = false;
};

struct UcDetector {
    double threshold = 0.0;
    Metric metric = Metric::cosine;
    std::vector<Prototype> prototypes;

    std::vector<const Prototype*> for_class(int class_id) const;
};

Prototype compute_prototypes(const std::vector<std::vector<double>>& features_pos,
                             const std::vector<std::vector<double>>& features_neg,
                             int class_id);

struct ThresholdFit {
    double threshold = 0.0;
    std::uint64_t correct = 0;  // training examples classified correctly
};

/// Scans midpoints between consecutive sorted distinct energies (plus
/// +-infinity) and maximizes correct = #(has_uc and E > thr) +
/// #(!has_uc and E <= thr). Ties break toward the largest-margin midpoint,
/// then the smaller threshold.
ThresholdFit select_threshold(const std::vector<EnergyStat>& stats);

/// Boundary goes to "no UC": true iff energy > threshold.
inline bool detect_uc(double energy, double threshold) { return energy > threshold; }

/// cosine: 1 - u.v/(|u||v|); euclidean: |u-v|; emd_sinkhorn:
/// entropy-regularized transport cost between abs-normalized masses with
/// ground cost |i-j|/(d-1), epsilon 0.05, 500 iterations or marginal
/// error < 1e-9.
double distance(std::span<const double> u, std::span<const double> v, Metric metric);

/// Each prototype pair votes positive iff d(z, mu_pos) < d(z, mu_neg);
/// majority wins, all ties resolve positive.
bool match_prototypes(std::span<const double> feature,
                      std::span<const Prototype* const> prototypes, Metric metric);

/// Full C-dimensional multi-label prediction: common classes from
/// sigmoid(logits) > cc_threshold, underrepresented classes gated by the
/// energy detector and decided by prototype matching.
std::vector<int> predict_full(const std::vector<double>& x,
                              const nn::ParameterSet& params, const nn::ModelSpec& spec,
                              const data::ClassLayout& layout, const UcDetector& detector,
                              const losses::EnergyConfig& energy,
                              double cc_threshold = 0.5);

/// Text round-trip at 17 significant digits.
void save_detector(const UcDetector& detector, const std::string& path);
UcDetector load_detector(const std::string& path);

}  // namespace fedfew::infer
