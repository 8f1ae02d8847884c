#include "fedfew/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedfew/rng.hpp"

namespace fedfew::metrics {

void BinaryCounts::add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted && !actual) ++fp;
    else if (!predicted && actual) ++fn;
    else ++tn;
}

ConfusionMetrics confusion_metrics(const BinaryCounts& c) {
    if (c.total() == 0) throw std::invalid_argument("confusion_metrics: empty counts");
    ConfusionMetrics m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    m.precision = (c.tp + c.fp) == 0
                      ? 0.0
                      : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    m.recall = (c.tp + c.fn) == 0
                   ? 0.0
                   : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

double auroc(const std::vector<double>& scores_pos, const std::vector<double>& scores_neg) {
    if (scores_pos.empty() || scores_neg.empty()) {
        throw std::invalid_argument("auroc: both score lists must be nonempty");
    }
    struct Entry {
        double score;
        bool pos;
    };
    std::vector<Entry> all;
    all.reserve(scores_pos.size() + scores_neg.size());
    for (double s : scores_pos) all.push_back({s, true});
    for (double s : scores_neg) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Rank-sum with average ranks on ties: U = R_pos - n_pos(n_pos+1)/2.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].pos) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    double np = static_cast<double>(scores_pos.size());
    double nn = static_cast<double>(scores_neg.size());
    double u = rank_sum_pos - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

EnergyReport energy_report(const std::vector<EnergySample>& samples,
                           const nn::ParameterSet& params, const nn::ModelSpec& spec,
                           double tau, const std::string& phase) {
    if (samples.empty()) throw std::invalid_argument("energy_report: no samples");
    ad::Tensor batch = ad::Tensor::zeros({samples.size(), spec.input_dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].features.size() != spec.input_dim) {
            throw std::invalid_argument("energy_report: feature dim mismatch");
        }
        std::copy(samples[i].features.begin(), samples[i].features.end(),
                  batch.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
    }
    ad::Tensor logits = nn::classify_logits_batch(params, spec, batch);

    EnergyReport report;
    double sum_uc = 0.0, sum_no = 0.0;
    std::size_t n_uc = 0, n_no = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::vector<double> row(logits.values.begin() + static_cast<std::ptrdiff_t>(i * logits.cols()),
                                logits.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * logits.cols()));
        double e = losses::joint_energy(row, tau);
        report.rows.push_back(
            {samples[i].sample_id, e, samples[i].has_uc, samples[i].split, phase});
        if (samples[i].has_uc) {
            sum_uc += e;
            ++n_uc;
        } else {
            sum_no += e;
            ++n_no;
        }
    }
    double mean_uc = n_uc ? sum_uc / static_cast<double>(n_uc) : 0.0;
    double mean_no = n_no ? sum_no / static_cast<double>(n_no) : 0.0;
    report.gap = mean_uc - mean_no;
    return report;
}

void write_energy_csv(const std::vector<EnergyRow>& rows, const std::string& path,
                      bool append) {
    std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
    if (!os) throw std::runtime_error("energy_report: cannot write " + path);
    if (!append) os << "sample_id,energy,has_uc,split,phase\n";
    char buf[40];
    for (const EnergyRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.energy);
        os << r.sample_id << ',' << buf << ',' << (r.has_uc ? 1 : 0) << ',' << r.split
           << ',' << r.phase << "\n";
    }
}

double linear_probe(const nn::ParameterSet& params, const nn::ModelSpec& spec,
                    const std::vector<ProbeSample>& train,
                    const std::vector<ProbeSample>& test, int num_classes, int epochs,
                    std::uint64_t seed) {
    if (train.empty() || test.empty()) {
        throw std::invalid_argument("linear_probe: empty probe set");
    }
    auto featurize = [&](const std::vector<ProbeSample>& set) {
        ad::Tensor batch = ad::Tensor::zeros({set.size(), spec.input_dim});
        for (std::size_t i = 0; i < set.size(); ++i) {
            std::copy(set[i].features.begin(), set[i].features.end(),
                      batch.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
        }
        return nn::extract_features_batch(params, spec, batch);
    };
    // Frozen features: computed once outside any training graph.
    ad::Tensor train_feats = featurize(train);
    ad::Tensor test_feats = featurize(test);

    ad::Tensor targets = ad::Tensor::zeros({train.size(), static_cast<std::size_t>(num_classes)});
    for (std::size_t i = 0; i < train.size(); ++i) {
        targets.at(i, static_cast<std::size_t>(train[i].label)) = 1.0;
    }
    ad::Tensor ones_minus = targets;
    for (double& v : ones_minus.values) v = 1.0 - v;

    Rng rng(seed);
    std::size_t fd = spec.feature_dim;
    std::size_t nc = static_cast<std::size_t>(num_classes);
    ad::Tensor w = ad::Tensor::zeros({fd, nc});
    double bound = std::sqrt(6.0 / static_cast<double>(fd + nc));
    for (double& v : w.values) v = rng.uniform(-bound, bound);
    ad::Tensor b = ad::Tensor::zeros({nc});

    // Full-batch Adam on one-vs-rest sigmoid BCE.
    const double lr = 1e-2, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0);
    std::vector<double> mb(b.size(), 0.0), vb(b.size(), 0.0);
    for (int t = 1; t <= epochs; ++t) {
        ad::Tape tape;
        ad::NodeId feats = tape.input(train_feats);
        ad::NodeId wn = tape.input(w);
        ad::NodeId bn = tape.input(b);
        ad::NodeId logits = tape.add(tape.matmul(feats, wn), bn);
        ad::NodeId y = tape.input(targets);
        ad::NodeId ym = tape.input(ones_minus);
        ad::NodeId loss = tape.scale(
            tape.sum(tape.add(tape.mul(y, tape.softplus(tape.scale(logits, -1.0))),
                              tape.mul(ym, tape.softplus(logits)))),
            1.0 / static_cast<double>(train.size()));
        auto grads = tape.backward(loss);
        auto adam = [&](std::vector<double>& p, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v) {
            double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
            }
        };
        adam(w.values, grads[wn].values, mw, vw);
        adam(b.values, grads[bn].values, mb, vb);
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        double best_logit = -1e300;
        for (std::size_t c = 0; c < nc; ++c) {
            double logit = b.values[c];
            for (std::size_t f = 0; f < fd; ++f) {
                logit += test_feats.at(i, f) * w.at(f, c);
            }
            if (logit > best_logit) {
                best_logit = logit;
                best = c;
            }
        }
        if (static_cast<int>(best) == test[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace fedfew::metrics
