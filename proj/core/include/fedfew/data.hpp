#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfew/losses.hpp"
#include "fedfew/rng.hpp"

namespace fedfew::data {

constexpr int kUnknownLabel = -1;

/// Which class ids are the underrepresented ones; everything else is common.
struct ClassLayout {
    int num_classes = 8;
    std::vector<int> uc_classes = {5, 6, 7};

    std::vector<int> cc_classes() const;
    bool is_uc(int class_id) const;
    void validate() const;
};

struct Sample {
    std::uint64_t id = 0;
    std::vector<double> features;
    std::vector<int> labels;  // per class: 0, 1, or kUnknownLabel

    bool operator==(const Sample&) const = default;
};

struct ClientDataset {
    int client_id = 0;
    std::vector<int> annotated_classes;
    std::vector<Sample> labeled;    // P_k
    std::vector<Sample> unlabeled;  // U_k

    bool operator==(const ClientDataset&) const = default;
    bool is_uc_client(const ClassLayout& layout) const;
    /// The single annotated class of a UC client.
    int uc_class(const ClassLayout& layout) const;
};

struct AugmentConfig {
    double sigma = 0.1;
    double dropout = 0.2;

    void validate() const;
};

struct SyntheticConfig {
    ClassLayout layout;
    int clients = 6;  // K
    std::size_t input_dim = 32;
    std::size_t cc_labeled = 500;    // n_k^p at common-class clients
    std::size_t cc_unlabeled = 500;  // n_k^u at common-class clients
    std::size_t uc_labeled_pos = 10;
    std::size_t uc_labeled_neg = 90;
    std::size_t uc_unlabeled = 0;
    std::size_t test_pos_per_class = 100;
    std::size_t test_neg_per_class = 100;
    double cc_prevalence = 0.45;
    // Common-class prevalence for UC clients' non-positive samples; referral
    // cohorts skew sick.
    double uc_client_cc_prevalence = 0.3;
    // Common-class co-occurrence inside UC-positive samples. Rare classes
    // present in isolation, which is what the energy detector keys on:
    // a confident all-negative logit vector has shallow energy.
    double uc_pos_cc_prevalence = 0.0;
    double uc_prevalence = 0.05;  // only used when cc_clients_contain_ucs
    // Every sample carries at least one finding (disease-cohort fixture);
    // the UC counts as the finding of a UC-positive sample.
    bool require_finding = true;
    // Optional lean of UC directions into the common-disease cone; 0 keeps
    // rare classes orthogonal to everything the classifier trains on.
    double uc_disease_alignment = 0.0;
    // Relative amplitude of UC directions in the feature sum.
    double uc_signal_scale = 1.0;
    double noise_sigma = 0.55;
    // Held-out samples come from the field: noisier than the curated
    // training pools. Negative means "same as noise_sigma".
    double test_noise_sigma = 0.7;
    double signal_scale = 2.0;
    bool cc_clients_contain_ucs = false;
    double max_uc_cc_ratio = 0.2;  // (uc pos+neg) / cc_labeled ceiling
    // Two-client pre-training imbalance study: client 0 holds healthy-only
    // samples, client 1 holds round(imbalance_ratio * cc_labeled) diseased ones.
    bool two_client_imbalance = false;
    double imbalance_ratio = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct FederatedDataset {
    std::vector<ClientDataset> clients;
    std::vector<Sample> test;  // fully labeled held-out set

    bool operator==(const FederatedDataset&) const = default;
};

/// Deterministic synthetic federation: per-class unit direction vectors,
/// features = scale * sum of present-class directions + Gaussian noise.
FederatedDataset generate_synthetic(const SyntheticConfig& cfg);

/// (C_c+1)-dim encoding with the leading "no common class" bit.
losses::EncodedLabel encode_cc_label(const Sample& sample, const std::vector<int>& cc_order);

/// Two independent augmented views: Gaussian jitter + coordinate dropout.
std::pair<std::vector<double>, std::vector<double>> make_views(const Sample& sample,
                                                               const AugmentConfig& aug,
                                                               Rng& rng);

/// One CSV per client plus test.csv under `dir`; header
/// client_id,split,feat_0..feat_{d-1},label_0..label_{C-1}, labels in
/// {-1,0,1}, floats at 17 significant digits.
void save_dataset(const FederatedDataset& ds, const std::string& dir);
FederatedDataset load_dataset(const std::string& dir);

}  // namespace fedfew::data
