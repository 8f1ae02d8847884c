#pragma once

#include <cstdint>
#include <vector>

#include "fedfew/autodiff.hpp"

namespace fedfew::losses {

/// Energy hyperparameters: temperature, regularizer weight, and the two
/// squared-hinge margins (common-class ceiling m_c, underrepresented-class
/// floor m_u).
struct EnergyConfig {
    double tau = 1.0;
    double lambda = 0.01;
    double m_c = -5.0;
    double m_u = -25.0;

    void validate() const;
};

/// (C_c+1)-length binary label; bit 0 is the "contains no common class"
/// indicator and must be 1 exactly when all other bits are 0.
struct EncodedLabel {
    std::vector<std::uint8_t> bits;

    explicit EncodedLabel(std::vector<std::uint8_t> b);
    static bool valid(const std::vector<std::uint8_t>& bits);
};

// ---- scalar forms (single example) ----

/// Partial-label BCE over the 0th + common-class dimensions, evaluated in
/// log space: sum_j y_j*softplus(-l_j) + (1-y_j)*softplus(l_j).
double bce_partial(const std::vector<double>& logits, const EncodedLabel& label);

/// Class-frequency weighted BCE. labels: per class {0,1} or negative for
/// "unknown" (skipped). Counts are clamped to >= 1 before weighting.
double weighted_bce(const std::vector<double>& logits, const std::vector<int>& labels,
                    const std::vector<std::uint64_t>& pos_counts,
                    const std::vector<std::uint64_t>& neg_counts);

/// Per-class free energy: -tau * softplus(logit / tau); always negative.
double class_energy(double logit, double tau);

/// Sum of per-class energies over the 0th + common-class dimensions.
double joint_energy(const std::vector<double>& logits, double tau);

/// lambda * max(0, E - m_c)^2 — pushes common-class energies down.
double hinge_cc(double energy, const EnergyConfig& cfg);

/// lambda * max(0, m_u - E)^2 — keeps underrepresented-client energies up.
double hinge_uc(double energy, const EnergyConfig& cfg);

/// bce_partial + hinge_cc(joint_energy(logits)).
double total_cc_loss(const std::vector<double>& logits, const EncodedLabel& label,
                     const EnergyConfig& cfg);

/// Symmetric negative cosine: 0.5*D(p1,z2) + 0.5*D(p2,z1),
/// D(p,z) = -(p.z)/(|p||z|). Rejects zero-norm vectors.
double simsiam_loss(const std::vector<double>& p1, const std::vector<double>& z1,
                    const std::vector<double>& p2, const std::vector<double>& z2);

// ---- tape builders (batched, mean over the batch) ----

/// labels01: [B, C_c+1] matrix of 0/1 rows (each row a valid EncodedLabel).
ad::NodeId bce_partial_node(ad::Tape& tape, ad::NodeId logits,
                            const ad::Tensor& labels01);

/// Per-sample joint energies as a [B,1] column.
ad::NodeId joint_energy_node(ad::Tape& tape, ad::NodeId logits, double tau);

/// Mean over the batch of bce + lambda*relu(E - m_c)^2 (hinge per sample).
ad::NodeId total_cc_loss_node(ad::Tape& tape, ad::NodeId logits,
                              const ad::Tensor& labels01, const EnergyConfig& cfg);

/// Mean over the batch of lambda*relu(m_u - E)^2; label-free.
ad::NodeId hinge_uc_loss_node(ad::Tape& tape, ad::NodeId logits, const EnergyConfig& cfg);

/// Weighted BCE with an explicit per-entry weight matrix (0 entries mask a
/// class out). labels01 must be 0/1 where weights are nonzero.
ad::NodeId weighted_bce_node(ad::Tape& tape, ad::NodeId logits, const ad::Tensor& labels01,
                             const ad::Tensor& weights);

/// Builds the per-entry weights for weighted_bce_node from labels in
/// {-1,0,1} and per-class counts.
ad::Tensor weighted_bce_weights(const std::vector<std::vector<int>>& labels,
                                const std::vector<std::uint64_t>& pos_counts,
                                const std::vector<std::uint64_t>& neg_counts);

/// Batched symmetric SimSiam loss; z nodes should be the stop-gradient
/// copies from the graph builder.
ad::NodeId simsiam_loss_node(ad::Tape& tape, ad::NodeId p1, ad::NodeId z1_detached,
                             ad::NodeId p2, ad::NodeId z2_detached);

}  // namespace fedfew::losses
