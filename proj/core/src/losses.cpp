#include "fedfew/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fedfew::losses {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void clamp_counts(std::uint64_t& pos, std::uint64_t& neg) {
    if (pos == 0) pos = 1;
    if (neg == 0) neg = 1;
}

}  // namespace

void EnergyConfig::validate() const {
    if (tau <= 0.0) throw std::invalid_argument("energy config: tau must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("energy config: lambda must be >= 0");
}

EncodedLabel::EncodedLabel(std::vector<std::uint8_t> b) : bits(std::move(b)) {
    if (!valid(bits)) {
        throw std::invalid_argument(
            "encoded label: bit 0 must be 1 exactly when all class bits are 0");
    }
}

bool EncodedLabel::valid(const std::vector<std::uint8_t>& bits) {
    if (bits.size() < 2) return false;
    bool any = false;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != 0 && bits[i] != 1) return false;
        if (i > 0 && bits[i] == 1) any = true;
    }
    return (bits[0] == 1) != any;
}

double bce_partial(const std::vector<double>& logits, const EncodedLabel& label) {
    if (logits.size() != label.bits.size()) {
        throw std::invalid_argument("bce_partial: logit/label length mismatch");
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l)
        loss += label.bits[j] ? softplus(-logits[j]) : softplus(logits[j]);
    }
    return loss;
}

double weighted_bce(const std::vector<double>& logits, const std::vector<int>& labels,
                    const std::vector<std::uint64_t>& pos_counts,
                    const std::vector<std::uint64_t>& neg_counts) {
    if (logits.size() != labels.size() || logits.size() != pos_counts.size() ||
        logits.size() != neg_counts.size()) {
        throw std::invalid_argument("weighted_bce: length mismatch");
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (labels[j] < 0) continue;  // unknown label, masked out
        std::uint64_t np = pos_counts[j], nn = neg_counts[j];
        clamp_counts(np, nn);
        double total = static_cast<double>(np + nn);
        if (labels[j] == 1) {
            loss += (static_cast<double>(nn) / total) * softplus(-logits[j]);
        } else {
            loss += (static_cast<double>(np) / total) * softplus(logits[j]);
        }
    }
    return loss;
}

double class_energy(double logit, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("class_energy: tau must be > 0");
    return -tau * softplus(logit / tau);
}

double joint_energy(const std::vector<double>& logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("joint_energy: tau must be > 0");
    double e = 0.0;
    for (double l : logits) e += class_energy(l, tau);
    return e;
}

double hinge_cc(double energy, const EnergyConfig& cfg) {
    double h = std::max(0.0, energy - cfg.m_c);
    return cfg.lambda * h * h;
}

double hinge_uc(double energy, const EnergyConfig& cfg) {
    double h = std::max(0.0, cfg.m_u - energy);
    return cfg.lambda * h * h;
}

double total_cc_loss(const std::vector<double>& logits, const EncodedLabel& label,
                     const EnergyConfig& cfg) {
    cfg.validate();
    return bce_partial(logits, label) + hinge_cc(joint_energy(logits, cfg.tau), cfg);
}

namespace {

double neg_cosine(const std::vector<double>& p, const std::vector<double>& z) {
    if (p.size() != z.size()) {
        throw std::invalid_argument("simsiam_loss: vector length mismatch");
    }
    double pp = 0.0, zz = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        pp += p[i] * p[i];
        zz += z[i] * z[i];
        pz += p[i] * z[i];
    }
    if (pp == 0.0 || zz == 0.0) {
        throw std::invalid_argument("simsiam_loss: zero-norm vector");
    }
    return -pz / (std::sqrt(pp) * std::sqrt(zz));
}

}  // namespace

double simsiam_loss(const std::vector<double>& p1, const std::vector<double>& z1,
                    const std::vector<double>& p2, const std::vector<double>& z2) {
    return 0.5 * neg_cosine(p1, z2) + 0.5 * neg_cosine(p2, z1);
}

// ---- tape builders ----

namespace {

void check_labels01(const ad::Tensor& labels01, const ad::Tensor& logits) {
    if (!labels01.same_shape(logits)) {
        throw std::invalid_argument("loss builder: labels shape " +
                                    ad::shape_to_string(labels01.shape) +
                                    " != logits shape " +
                                    ad::shape_to_string(logits.shape));
    }
}

}  // namespace

ad::NodeId bce_partial_node(ad::Tape& tape, ad::NodeId logits,
                            const ad::Tensor& labels01) {
    const ad::Tensor& lv = tape.value(logits);
    check_labels01(labels01, lv);
    for (std::size_t r = 0; r < labels01.rows(); ++r) {
        std::vector<std::uint8_t> bits(labels01.cols());
        for (std::size_t c = 0; c < labels01.cols(); ++c) {
            bits[c] = static_cast<std::uint8_t>(labels01.at(r, c));
        }
        if (!EncodedLabel::valid(bits)) {
            throw std::invalid_argument("bce_partial: invalid label encoding in row " +
                                        std::to_string(r));
        }
    }
    ad::Tensor ones_minus = labels01;
    for (double& v : ones_minus.values) v = 1.0 - v;
    ad::NodeId y = tape.input(labels01);
    ad::NodeId ym = tape.input(ones_minus);
    ad::NodeId pos_terms = tape.mul(y, tape.softplus(tape.scale(logits, -1.0)));
    ad::NodeId neg_terms = tape.mul(ym, tape.softplus(logits));
    // sum over classes per sample, mean over batch == total / B
    ad::NodeId total = tape.sum(tape.add(pos_terms, neg_terms));
    return tape.scale(total, 1.0 / static_cast<double>(labels01.rows()));
}

ad::NodeId joint_energy_node(ad::Tape& tape, ad::NodeId logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("joint_energy: tau must be > 0");
    const ad::Tensor& lv = tape.value(logits);
    ad::NodeId sp = tape.softplus(tape.scale(logits, 1.0 / tau));
    // row sums via ones column
    ad::NodeId ones = tape.input(
        ad::Tensor({lv.cols(), 1}, std::vector<double>(lv.cols(), 1.0)));
    return tape.scale(tape.matmul(sp, ones), -tau);
}

ad::NodeId total_cc_loss_node(ad::Tape& tape, ad::NodeId logits,
                              const ad::Tensor& labels01, const EnergyConfig& cfg) {
    cfg.validate();
    ad::NodeId bce = bce_partial_node(tape, logits, labels01);
    ad::NodeId energies = joint_energy_node(tape, logits, cfg.tau);
    ad::NodeId excess = tape.relu(tape.shift(energies, -cfg.m_c));
    ad::NodeId hinge = tape.scale(tape.mean(tape.square(excess)), cfg.lambda);
    return tape.add(bce, hinge);
}

ad::NodeId hinge_uc_loss_node(ad::Tape& tape, ad::NodeId logits, const EnergyConfig& cfg) {
    cfg.validate();
    ad::NodeId energies = joint_energy_node(tape, logits, cfg.tau);
    ad::NodeId deficit = tape.relu(tape.scale(tape.shift(energies, -cfg.m_u), -1.0));
    return tape.scale(tape.mean(tape.square(deficit)), cfg.lambda);
}

ad::Tensor weighted_bce_weights(const std::vector<std::vector<int>>& labels,
                                const std::vector<std::uint64_t>& pos_counts,
                                const std::vector<std::uint64_t>& neg_counts) {
    if (labels.empty()) throw std::invalid_argument("weighted_bce: empty batch");
    std::size_t classes = labels[0].size();
    if (pos_counts.size() != classes || neg_counts.size() != classes) {
        throw std::invalid_argument("weighted_bce: count length mismatch");
    }
    ad::Tensor w = ad::Tensor::zeros({labels.size(), classes});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r].size() != classes) {
            throw std::invalid_argument("weighted_bce: ragged label batch");
        }
        for (std::size_t j = 0; j < classes; ++j) {
            if (labels[r][j] < 0) continue;
            std::uint64_t np = pos_counts[j], nn = neg_counts[j];
            clamp_counts(np, nn);
            double total = static_cast<double>(np + nn);
            w.at(r, j) = labels[r][j] == 1 ? static_cast<double>(nn) / total
                                           : static_cast<double>(np) / total;
        }
    }
    return w;
}

ad::NodeId weighted_bce_node(ad::Tape& tape, ad::NodeId logits, const ad::Tensor& labels01,
                             const ad::Tensor& weights) {
    const ad::Tensor& lv = tape.value(logits);
    check_labels01(labels01, lv);
    check_labels01(weights, lv);
    ad::Tensor ones_minus = labels01;
    for (double& v : ones_minus.values) v = 1.0 - v;
    ad::NodeId y = tape.input(labels01);
    ad::NodeId ym = tape.input(ones_minus);
    ad::NodeId w = tape.input(weights);
    ad::NodeId pos_terms = tape.mul(y, tape.softplus(tape.scale(logits, -1.0)));
    ad::NodeId neg_terms = tape.mul(ym, tape.softplus(logits));
    ad::NodeId weighted = tape.mul(w, tape.add(pos_terms, neg_terms));
    return tape.scale(tape.sum(weighted), 1.0 / static_cast<double>(labels01.rows()));
}

ad::NodeId simsiam_loss_node(ad::Tape& tape, ad::NodeId p1, ad::NodeId z1_detached,
                             ad::NodeId p2, ad::NodeId z2_detached) {
    const ad::Tensor& pv = tape.value(p1);
    double batch = static_cast<double>(pv.rank() == 2 ? pv.rows() : 1);
    ad::NodeId cos12 =
        tape.sum(tape.mul(tape.l2_normalize(p1), tape.l2_normalize(z2_detached)));
    ad::NodeId cos21 =
        tape.sum(tape.mul(tape.l2_normalize(p2), tape.l2_normalize(z1_detached)));
    return tape.scale(tape.add(cos12, cos21), -0.5 / batch);
}

}  // namespace fedfew::losses
