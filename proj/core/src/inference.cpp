#include "fedfew/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fedfew::infer {

Metric metric_from_string(const std::string& name) {
    if (name == "cosine") return Metric::cosine;
    if (name == "euclidean") return Metric::euclidean;
    if (name == "emd_sinkhorn") return Metric::emd_sinkhorn;
    throw std::invalid_argument("unknown metric '" + name +
                                "' (expected cosine, euclidean, or emd_sinkhorn)");
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::cosine: return "cosine";
        case Metric::euclidean: return "euclidean";
        case Metric::emd_sinkhorn: return "emd_sinkhorn";
    }
    return "?";
}

std::vector<const Prototype*> UcDetector::for_class(int class_id) const {
    std::vector<const Prototype*> out;
    for (const Prototype& p : prototypes) {
        if (p.class_id == class_id) out.push_back(&p);
    }
    return out;
}

Prototype compute_prototypes(const std::vector<std::vector<double>>& features_pos,
                             const std::vector<std::vector<double>>& features_neg,
                             int class_id) {
    if (features_pos.empty() || features_neg.empty()) {
        throw std::invalid_argument("compute_prototypes: class " +
                                    std::to_string(class_id) +
                                    " needs at least one positive and one negative");
    }
    auto mean_of = [](const std::vector<std::vector<double>>& rows) {
        std::vector<double> mu(rows[0].size(), 0.0);
        for (const auto& r : rows) {
            if (r.size() != mu.size()) {
                throw std::invalid_argument("compute_prototypes: ragged feature list");
            }
            for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += r[i];
        }
        for (double& v : mu) v /= static_cast<double>(rows.size());
        return mu;
    };
    Prototype p;
    p.class_id = class_id;
    p.mu_pos = mean_of(features_pos);
    p.mu_neg = mean_of(features_neg);
    p.n_pos = features_pos.size();
    p.n_neg = features_neg.size();
    return p;
}

ThresholdFit select_threshold(const std::vector<EnergyStat>& stats) {
    bool any_uc = false, any_no = false;
    for (const auto& s : stats) (s.has_uc ? any_uc : any_no) = true;
    if (!any_uc || !any_no) {
        throw std::invalid_argument(
            "select_threshold: need energies from both flag groups");
    }

    std::vector<EnergyStat> sorted = stats;
    std::sort(sorted.begin(), sorted.end(),
              [](const EnergyStat& a, const EnergyStat& b) { return a.energy < b.energy; });
    const std::size_t n = sorted.size();
    const std::uint64_t total_uc =
        static_cast<std::uint64_t>(std::count_if(sorted.begin(), sorted.end(),
                                                 [](const EnergyStat& s) { return s.has_uc; }));

    // Distinct energy values and, for each, counts at or below it.
    std::vector<double> distinct;
    std::vector<std::uint64_t> no_uc_leq, uc_leq;  // cumulative per distinct value
    std::uint64_t cum_no = 0, cum_uc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (sorted[i].has_uc ? cum_uc : cum_no)++;
        if (i + 1 == n || sorted[i + 1].energy != sorted[i].energy) {
            distinct.push_back(sorted[i].energy);
            no_uc_leq.push_back(cum_no);
            uc_leq.push_back(cum_uc);
        }
    }

    const double inf = std::numeric_limits<double>::infinity();
    struct Candidate {
        double thr;
        double margin;
    };
    std::vector<Candidate> candidates;
    candidates.push_back({-inf, inf});
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        double mid = 0.5 * (distinct[i] + distinct[i + 1]);
        candidates.push_back({mid, 0.5 * (distinct[i + 1] - distinct[i])});
    }
    candidates.push_back({inf, inf});

    ThresholdFit best;
    double best_margin = -1.0;
    bool first = true;
    for (const Candidate& cand : candidates) {
        // count(!has_uc and E <= thr) + count(has_uc and E > thr)
        std::uint64_t below_no = 0, below_uc = 0;
        // last distinct value <= thr
        auto it = std::upper_bound(distinct.begin(), distinct.end(), cand.thr);
        if (it != distinct.begin()) {
            std::size_t idx = static_cast<std::size_t>(it - distinct.begin()) - 1;
            below_no = no_uc_leq[idx];
            below_uc = uc_leq[idx];
        }
        std::uint64_t correct = below_no + (total_uc - below_uc);
        bool better = first || correct > best.correct ||
                      (correct == best.correct && cand.margin > best_margin) ||
                      (correct == best.correct && cand.margin == best_margin &&
                       cand.thr < best.threshold);
        if (better) {
            best.threshold = cand.thr;
            best.correct = correct;
            best_margin = cand.margin;
            first = false;
        }
    }
    return best;
}

namespace {

double cosine_distance(std::span<const double> u, std::span<const double> v) {
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) {
        throw std::invalid_argument("distance: cosine of zero-norm vector");
    }
    return 1.0 - uv / (std::sqrt(uu) * std::sqrt(vv));
}

double euclidean_distance(std::span<const double> u, std::span<const double> v) {
    double sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double d = u[i] - v[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

constexpr double kSinkhornEps = 0.05;
constexpr int kSinkhornMaxIter = 500;
constexpr double kSinkhornTol = 1e-9;

double sinkhorn_distance(std::span<const double> u, std::span<const double> v) {
    const std::size_t d = u.size();
    if (d < 2) throw std::invalid_argument("distance: emd needs dim >= 2");

    auto mass = [d](std::span<const double> x, const char* side) {
        std::vector<double> a(d);
        double total = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            a[i] = std::abs(x[i]);
            total += a[i];
        }
        if (total == 0.0) {
            throw std::invalid_argument(std::string("distance: emd ") + side +
                                        " vector has zero mass");
        }
        for (double& x2 : a) x2 /= total;
        return a;
    };
    std::vector<double> a = mass(u, "left"), b = mass(v, "right");
    // The ground cost is symmetric, so swapping the marginals transposes the
    // problem without changing its value; canonicalizing the order makes the
    // returned distance bitwise symmetric despite one-sided iteration.
    if (std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end())) {
        std::swap(a, b);
    }

    // Gibbs kernel over the 1-D ground cost |i-j|/(d-1).
    const double denom = static_cast<double>(d - 1);
    std::vector<double> kernel(d * d), cost(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double c = std::abs(static_cast<double>(i) - static_cast<double>(j)) / denom;
            cost[i * d + j] = c;
            kernel[i * d + j] = std::exp(-c / kSinkhornEps);
        }
    }

    auto safe_div = [](double num, double den) { return num == 0.0 ? 0.0 : num / den; };

    std::vector<double> alpha(d, 1.0), beta(d, 1.0), tmp(d);
    for (int iter = 0; iter < kSinkhornMaxIter; ++iter) {
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += kernel[i * d + j] * beta[j];
            alpha[i] = safe_div(a[i], s);
        }
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += kernel[i * d + j] * alpha[i];
            beta[j] = safe_div(b[j], s);
        }
        double err = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                row += alpha[i] * kernel[i * d + j] * beta[j];
            }
            err = std::max(err, std::abs(row - a[i]));
        }
        for (std::size_t j = 0; j < d; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                col += alpha[i] * kernel[i * d + j] * beta[j];
            }
            err = std::max(err, std::abs(col - b[j]));
        }
        if (err < kSinkhornTol) break;
    }

    double total_cost = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            total_cost += alpha[i] * kernel[i * d + j] * beta[j] * cost[i * d + j];
        }
    }
    return total_cost;
}

}  // namespace

double distance(std::span<const double> u, std::span<const double> v, Metric metric) {
    if (u.size() != v.size()) {
        throw std::invalid_argument("distance: dimension mismatch (" +
                                    std::to_string(u.size()) + " vs " +
                                    std::to_string(v.size()) + ")");
    }
    if (u.empty()) throw std::invalid_argument("distance: empty vectors");
    switch (metric) {
        case Metric::cosine: return cosine_distance(u, v);
        case Metric::euclidean: return euclidean_distance(u, v);
        case Metric::emd_sinkhorn: return sinkhorn_distance(u, v);
    }
    throw std::logic_error("distance: bad metric");
}

bool match_prototypes(std::span<const double> feature,
                      std::span<const Prototype* const> prototypes, Metric metric) {
    if (prototypes.empty()) {
        throw std::invalid_argument("match_prototypes: no prototypes for class");
    }
    std::size_t pos_votes = 0;
    for (const Prototype* p : prototypes) {
        double dp = distance(feature, p->mu_pos, metric);
        double dn = distance(feature, p->mu_neg, metric);
        if (dp <= dn) ++pos_votes;  // equidistant resolves positive
    }
    return 2 * pos_votes >= prototypes.size();  // even split resolves positive
}

std::vector<int> predict_full(const std::vector<double>& x,
                              const nn::ParameterSet& params, const nn::ModelSpec& spec,
                              const data::ClassLayout& layout, const UcDetector& detector,
                              const losses::EnergyConfig& energy, double cc_threshold) {
    auto logits = nn::classify_logits(params, spec, x);
    auto cc = layout.cc_classes();
    if (logits.size() != cc.size() + 1) {
        throw std::invalid_argument("predict_full: head emits " +
                                    std::to_string(logits.size()) + " logits, expected " +
                                    std::to_string(cc.size() + 1));
    }

    std::vector<int> prediction(layout.num_classes, 0);
    for (std::size_t i = 0; i < cc.size(); ++i) {
        // sigmoid(l) > t  <=>  l > logit(t)
        double s = 1.0 / (1.0 + std::exp(-logits[i + 1]));
        prediction[cc[i]] = s > cc_threshold ? 1 : 0;
    }

    if (detect_uc(losses::joint_energy(logits, energy.tau), detector.threshold)) {
        auto feats = nn::extract_features(params, spec, x);
        for (int c : layout.uc_classes) {
            auto protos = detector.for_class(c);
            prediction[c] = match_prototypes(feats, protos, detector.metric) ? 1 : 0;
        }
    }
    return prediction;
}

// ---- detector text persistence ----

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_vec(std::ostream& os, const char* tag, const std::vector<double>& v) {
    os << tag;
    for (double x : v) os << ' ' << fmt(x);
    os << "\n";
}

}  // namespace

void save_detector(const UcDetector& detector, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("detector: cannot write " + path);
    os << "fedfew-detector 1\n";
    os << "threshold " << fmt(detector.threshold) << "\n";
    os << "metric " << metric_name(detector.metric) << "\n";
    for (const Prototype& p : detector.prototypes) {
        os << "prototype " << p.class_id << ' ' << p.n_pos << ' ' << p.n_neg << "\n";
        write_vec(os, "mu_pos", p.mu_pos);
        write_vec(os, "mu_neg", p.mu_neg);
    }
}

UcDetector load_detector(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("detector: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "fedfew-detector 1") {
        throw std::runtime_error("detector: bad header in " + path);
    }
    UcDetector det;
    auto read_vec = [&](const char* tag) {
        if (!std::getline(is, line)) {
            throw std::runtime_error("detector: truncated file " + path);
        }
        std::istringstream ss(line);
        std::string t;
        ss >> t;
        if (t != tag) throw std::runtime_error("detector: expected " + std::string(tag));
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        return v;
    };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "threshold") {
            std::string v;
            ss >> v;
            det.threshold = std::stod(v);
        } else if (key == "metric") {
            std::string v;
            ss >> v;
            det.metric = metric_from_string(v);
        } else if (key == "prototype") {
            Prototype p;
            ss >> p.class_id >> p.n_pos >> p.n_neg;
            if (!ss) throw std::runtime_error("detector: malformed prototype line");
            p.mu_pos = read_vec("mu_pos");
            p.mu_neg = read_vec("mu_neg");
            det.prototypes.push_back(std::move(p));
        } else {
            throw std::runtime_error("detector: unknown record '" + key + "' in " + path);
        }
    }
    return det;
}

}  // namespace fedfew::infer
