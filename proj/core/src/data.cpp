#include "fedfew/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace fedfew::data {

std::vector<int> ClassLayout::cc_classes() const {
    std::vector<int> cc;
    for (int c = 0; c < num_classes; ++c) {
        if (!is_uc(c)) cc.push_back(c);
    }
    return cc;
}

bool ClassLayout::is_uc(int class_id) const {
    return std::find(uc_classes.begin(), uc_classes.end(), class_id) != uc_classes.end();
}

void ClassLayout::validate() const {
    if (num_classes < 1) throw std::invalid_argument("class layout: need >= 1 class");
    std::set<int> seen;
    for (int c : uc_classes) {
        if (c < 0 || c >= num_classes) {
            throw std::invalid_argument("class layout: uc class id " + std::to_string(c) +
                                        " out of range");
        }
        if (!seen.insert(c).second) {
            throw std::invalid_argument("class layout: duplicate uc class id");
        }
    }
    if (static_cast<int>(uc_classes.size()) >= num_classes) {
        throw std::invalid_argument("class layout: need at least one common class");
    }
}

bool ClientDataset::is_uc_client(const ClassLayout& layout) const {
    return annotated_classes.size() == 1 && layout.is_uc(annotated_classes[0]);
}

int ClientDataset::uc_class(const ClassLayout& layout) const {
    if (!is_uc_client(layout)) {
        throw std::logic_error("client " + std::to_string(client_id) +
                               " is not a UC client");
    }
    return annotated_classes[0];
}

void AugmentConfig::validate() const {
    if (sigma < 0.0) throw std::invalid_argument("augment: sigma must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("augment: dropout must be in [0,1)");
    }
}

void SyntheticConfig::validate() const {
    layout.validate();
    if (clients < 1) throw std::invalid_argument("synthetic config: need >= 1 client");
    if (input_dim < 2) throw std::invalid_argument("synthetic config: input_dim too small");
    if (!two_client_imbalance) {
        if (static_cast<int>(layout.uc_classes.size()) >= clients) {
            throw std::invalid_argument(
                "synthetic config: need |C_u| < K (one client per UC plus common clients)");
        }
        if (uc_labeled_pos < 1 || uc_labeled_neg < 1) {
            throw std::invalid_argument(
                "synthetic config: UC clients need positive and negative examples");
        }
        if (cc_labeled < 1) {
            throw std::invalid_argument("synthetic config: common clients need labeled data");
        }
        double ratio = static_cast<double>(uc_labeled_pos + uc_labeled_neg) /
                       static_cast<double>(cc_labeled);
        if (ratio > max_uc_cc_ratio) {
            throw std::invalid_argument(
                "synthetic config: UC labeled pool / CC labeled pool ratio " +
                std::to_string(ratio) + " exceeds max " + std::to_string(max_uc_cc_ratio));
        }
    } else {
        if (clients != 2) {
            throw std::invalid_argument("synthetic config: imbalance study uses exactly 2 clients");
        }
        if (imbalance_ratio <= 0.0) {
            throw std::invalid_argument("synthetic config: imbalance_ratio must be > 0");
        }
    }
    if (cc_prevalence < 0.0 || cc_prevalence > 1.0 || uc_prevalence < 0.0 ||
        uc_prevalence > 1.0) {
        throw std::invalid_argument("synthetic config: prevalences must be in [0,1]");
    }
    if (uc_client_cc_prevalence < 0.0 || uc_client_cc_prevalence > 1.0 ||
        uc_pos_cc_prevalence < 0.0 || uc_pos_cc_prevalence > 1.0) {
        throw std::invalid_argument(
            "synthetic config: client prevalences must be in [0,1]");
    }
    if (uc_signal_scale <= 0.0) {
        throw std::invalid_argument("synthetic config: uc_signal_scale must be > 0");
    }
    if (uc_disease_alignment < 0.0 || uc_disease_alignment >= 1.0) {
        throw std::invalid_argument(
            "synthetic config: uc_disease_alignment must be in [0,1)");
    }
    if (cc_prevalence == 0.0 && (test_pos_per_class > 0 || cc_labeled > 0) &&
        !two_client_imbalance && layout.cc_classes().empty()) {
        throw std::invalid_argument("synthetic config: no feasible common-class positives");
    }
    if (noise_sigma < 0.0) throw std::invalid_argument("synthetic config: noise_sigma < 0");
    if (signal_scale <= 0.0) throw std::invalid_argument("synthetic config: signal_scale <= 0");
}

namespace {

std::vector<std::vector<double>> draw_class_directions(const SyntheticConfig& cfg,
                                                       Rng& rng) {
    std::vector<std::vector<double>> dirs(cfg.layout.num_classes);
    for (auto& v : dirs) {
        v.resize(cfg.input_dim);
        double sq = 0.0;
        for (double& x : v) {
            x = rng.normal();
            sq += x * x;
        }
        double norm = std::sqrt(sq);
        for (double& x : v) x /= norm;
    }

    auto cc = cfg.layout.cc_classes();
    if (cc.empty() || cfg.layout.uc_classes.empty()) return dirs;

    // Project UC directions off the common-class span so a rare class is a
    // genuinely novel signature rather than whatever the draw happened to
    // leak onto the trained directions; the alignment knob then adds back a
    // controlled lean into the mean common-disease direction.
    std::vector<std::vector<double>> basis;
    for (int c : cc) {
        std::vector<double> b = dirs[c];
        for (const auto& e : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < b.size(); ++i) dot += b[i] * e[i];
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= dot * e[i];
        }
        double norm = 0.0;
        for (double x : b) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-9) {
            for (double& x : b) x /= norm;
            basis.push_back(std::move(b));
        }
    }
    std::vector<double> cone(cfg.input_dim, 0.0);
    for (int c : cc) {
        for (std::size_t i = 0; i < cfg.input_dim; ++i) cone[i] += dirs[c][i];
    }
    double cone_norm = 0.0;
    for (double x : cone) cone_norm += x * x;
    cone_norm = std::sqrt(cone_norm);

    double gamma = cfg.uc_disease_alignment;
    for (int c : cfg.layout.uc_classes) {
        auto& v = dirs[c];
        for (const auto& e : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * e[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * e[i];
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = (1.0 - gamma) * v[i];
            if (gamma > 0.0) v[i] += gamma * cone[i] / cone_norm;
            sq += v[i] * v[i];
        }
        double norm = std::sqrt(sq);
        if (norm < 1e-9) {
            throw std::invalid_argument(
                "synthetic config: degenerate UC direction; input_dim too small for "
                "the class count");
        }
        for (double& x : v) x /= norm;
    }
    return dirs;
}

std::vector<double> features_for(const std::vector<int>& truth,
                                 const std::vector<std::vector<double>>& dirs,
                                 const SyntheticConfig& cfg, Rng& rng, double sigma) {
    std::vector<double> x(cfg.input_dim, 0.0);
    for (std::size_t c = 0; c < truth.size(); ++c) {
        if (truth[c] == 1) {
            double amp = cfg.signal_scale;
            if (cfg.layout.is_uc(static_cast<int>(c))) amp *= cfg.uc_signal_scale;
            for (std::size_t i = 0; i < cfg.input_dim; ++i) {
                x[i] += amp * dirs[c][i];
            }
        }
    }
    for (double& v : x) v += sigma * rng.normal();
    return x;
}

// Ground-truth label vector with per-class Bernoulli prevalence; forced
// entries (by class id) override the draw. When the disease-cohort rule is
// on, draws are rejected until at least one class is positive.
std::vector<int> draw_truth(const SyntheticConfig& cfg, Rng& rng,
                            const std::vector<std::pair<int, int>>& forced,
                            bool allow_uc, double cc_prevalence_override = -1.0) {
    double cc_prev = cc_prevalence_override >= 0.0 ? cc_prevalence_override
                                                   : cfg.cc_prevalence;
    bool forced_positive = false;
    for (auto [c, v] : forced) forced_positive |= v == 1;

    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<int> truth(cfg.layout.num_classes, 0);
        for (int c = 0; c < cfg.layout.num_classes; ++c) {
            bool uc = cfg.layout.is_uc(c);
            double prev = uc ? (allow_uc ? cfg.uc_prevalence : 0.0) : cc_prev;
            truth[c] = rng.uniform01() < prev ? 1 : 0;
        }
        for (auto [c, v] : forced) truth[c] = v;
        if (!cfg.require_finding || forced_positive ||
            std::count(truth.begin(), truth.end(), 1) > 0) {
            return truth;
        }
    }
    throw std::invalid_argument(
        "synthetic config: cannot satisfy require_finding; prevalences leave no "
        "class that could be positive");
}

Sample make_sample(std::uint64_t& next_id, const std::vector<int>& truth,
                   const std::vector<int>& annotated,
                   const std::vector<std::vector<double>>& dirs,
                   const SyntheticConfig& cfg, Rng& rng, double sigma = -1.0) {
    Sample s;
    s.id = next_id++;
    s.features = features_for(truth, dirs, cfg, rng,
                              sigma < 0.0 ? cfg.noise_sigma : sigma);
    s.labels.assign(cfg.layout.num_classes, kUnknownLabel);
    for (int c : annotated) s.labels[c] = truth[c];
    return s;
}

FederatedDataset generate_two_client_imbalance(const SyntheticConfig& cfg) {
    Rng rng(cfg.seed);
    auto dirs = draw_class_directions(cfg, rng);
    auto cc = cfg.layout.cc_classes();
    std::uint64_t next_id = 0;
    FederatedDataset ds;

    // Client 0: healthy-only pool (all common classes negative).
    ClientDataset healthy;
    healthy.client_id = 0;
    healthy.annotated_classes = cc;
    for (std::size_t i = 0; i < cfg.cc_labeled; ++i) {
        std::vector<int> truth(cfg.layout.num_classes, 0);
        healthy.labeled.push_back(make_sample(next_id, truth, cc, dirs, cfg, rng));
    }
    ds.clients.push_back(std::move(healthy));

    // Client 1: diseased pool, at least one common class present per sample.
    ClientDataset diseased;
    diseased.client_id = 1;
    diseased.annotated_classes = cc;
    auto n_diseased = static_cast<std::size_t>(
        std::llround(cfg.imbalance_ratio * static_cast<double>(cfg.cc_labeled)));
    for (std::size_t i = 0; i < n_diseased; ++i) {
        std::vector<int> truth;
        do {
            truth = draw_truth(cfg, rng, {}, false);
        } while (std::count(truth.begin(), truth.end(), 1) == 0);
        diseased.labeled.push_back(make_sample(next_id, truth, cc, dirs, cfg, rng));
    }
    ds.clients.push_back(std::move(diseased));

    std::vector<int> all_classes(cfg.layout.num_classes);
    for (int c = 0; c < cfg.layout.num_classes; ++c) all_classes[c] = c;
    double test_sigma =
        cfg.test_noise_sigma < 0.0 ? cfg.noise_sigma : cfg.test_noise_sigma;
    for (int c = 0; c < cfg.layout.num_classes; ++c) {
        for (std::size_t i = 0; i < cfg.test_pos_per_class; ++i) {
            auto truth = draw_truth(cfg, rng, {{c, 1}}, false);
            ds.test.push_back(
                make_sample(next_id, truth, all_classes, dirs, cfg, rng, test_sigma));
        }
        for (std::size_t i = 0; i < cfg.test_neg_per_class; ++i) {
            auto truth = draw_truth(cfg, rng, {{c, 0}}, false);
            ds.test.push_back(
                make_sample(next_id, truth, all_classes, dirs, cfg, rng, test_sigma));
        }
    }
    return ds;
}

}  // namespace

FederatedDataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    if (cfg.two_client_imbalance) return generate_two_client_imbalance(cfg);

    Rng rng(cfg.seed);
    auto dirs = draw_class_directions(cfg, rng);
    const auto cc = cfg.layout.cc_classes();
    const auto& ucs = cfg.layout.uc_classes;
    const int n_cc_clients = cfg.clients - static_cast<int>(ucs.size());

    std::uint64_t next_id = 0;
    FederatedDataset ds;

    for (int k = 0; k < n_cc_clients; ++k) {
        ClientDataset client;
        client.client_id = k;
        client.annotated_classes = cc;
        for (std::size_t i = 0; i < cfg.cc_labeled; ++i) {
            auto truth = draw_truth(cfg, rng, {}, cfg.cc_clients_contain_ucs);
            client.labeled.push_back(make_sample(next_id, truth, cc, dirs, cfg, rng));
        }
        for (std::size_t i = 0; i < cfg.cc_unlabeled; ++i) {
            auto truth = draw_truth(cfg, rng, {}, cfg.cc_clients_contain_ucs);
            client.unlabeled.push_back(make_sample(next_id, truth, {}, dirs, cfg, rng));
        }
        ds.clients.push_back(std::move(client));
    }

    for (std::size_t u = 0; u < ucs.size(); ++u) {
        ClientDataset client;
        client.client_id = n_cc_clients + static_cast<int>(u);
        client.annotated_classes = {ucs[u]};
        for (std::size_t i = 0; i < cfg.uc_labeled_pos; ++i) {
            auto truth = draw_truth(cfg, rng, {{ucs[u], 1}}, false,
                                    cfg.uc_pos_cc_prevalence);
            client.labeled.push_back(
                make_sample(next_id, truth, client.annotated_classes, dirs, cfg, rng));
        }
        for (std::size_t i = 0; i < cfg.uc_labeled_neg; ++i) {
            auto truth = draw_truth(cfg, rng, {{ucs[u], 0}}, false,
                                    cfg.uc_client_cc_prevalence);
            client.labeled.push_back(
                make_sample(next_id, truth, client.annotated_classes, dirs, cfg, rng));
        }
        for (std::size_t i = 0; i < cfg.uc_unlabeled; ++i) {
            auto truth = draw_truth(cfg, rng, {}, false, cfg.uc_client_cc_prevalence);
            client.unlabeled.push_back(make_sample(next_id, truth, {}, dirs, cfg, rng));
        }
        ds.clients.push_back(std::move(client));
    }

    std::vector<int> all_classes(cfg.layout.num_classes);
    for (int c = 0; c < cfg.layout.num_classes; ++c) all_classes[c] = c;
    for (int c = 0; c < cfg.layout.num_classes; ++c) {
        // UC positives co-occur with common classes at their own (low) rate.
        double pos_prev = cfg.layout.is_uc(c) ? cfg.uc_pos_cc_prevalence
                                              : cfg.cc_prevalence;
        double test_sigma =
            cfg.test_noise_sigma < 0.0 ? cfg.noise_sigma : cfg.test_noise_sigma;
        for (std::size_t i = 0; i < cfg.test_pos_per_class; ++i) {
            auto truth = draw_truth(cfg, rng, {{c, 1}}, false, pos_prev);
            ds.test.push_back(
                make_sample(next_id, truth, all_classes, dirs, cfg, rng, test_sigma));
        }
        for (std::size_t i = 0; i < cfg.test_neg_per_class; ++i) {
            auto truth = draw_truth(cfg, rng, {{c, 0}}, false);
            ds.test.push_back(
                make_sample(next_id, truth, all_classes, dirs, cfg, rng, test_sigma));
        }
    }
    return ds;
}

losses::EncodedLabel encode_cc_label(const Sample& sample,
                                     const std::vector<int>& cc_order) {
    std::vector<std::uint8_t> bits(cc_order.size() + 1, 0);
    bool any = false;
    for (std::size_t i = 0; i < cc_order.size(); ++i) {
        int c = cc_order[i];
        if (c < 0 || static_cast<std::size_t>(c) >= sample.labels.size()) {
            throw std::invalid_argument("encode_cc_label: class id out of range");
        }
        if (sample.labels[c] == kUnknownLabel) {
            throw std::invalid_argument("encode_cc_label: sample " +
                                        std::to_string(sample.id) +
                                        " missing annotation for class " +
                                        std::to_string(c));
        }
        bits[i + 1] = static_cast<std::uint8_t>(sample.labels[c]);
        any |= bits[i + 1] == 1;
    }
    bits[0] = any ? 0 : 1;
    return losses::EncodedLabel(std::move(bits));
}

std::pair<std::vector<double>, std::vector<double>> make_views(const Sample& sample,
                                                               const AugmentConfig& aug,
                                                               Rng& rng) {
    aug.validate();
    auto draw_view = [&]() {
        std::vector<double> v = sample.features;
        for (double& x : v) x += aug.sigma * rng.normal();
        for (double& x : v) {
            if (rng.uniform01() < aug.dropout) x = 0.0;
        }
        return v;
    };
    auto v1 = draw_view();
    auto v2 = draw_view();
    return {std::move(v1), std::move(v2)};
}

// ---- CSV persistence ----

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_header(std::ostream& os, std::size_t dim, std::size_t classes) {
    os << "client_id,split";
    for (std::size_t i = 0; i < dim; ++i) os << ",feat_" << i;
    for (std::size_t c = 0; c < classes; ++c) os << ",label_" << c;
    os << "\n";
}

void write_rows(std::ostream& os, int client_id, const char* split,
                const std::vector<Sample>& samples) {
    for (const Sample& s : samples) {
        os << client_id << ',' << split;
        for (double f : s.features) os << ',' << format_double(f);
        for (int l : s.labels) os << ',' << l;
        os << "\n";
    }
}

struct ParsedRow {
    int client_id;
    std::string split;
    Sample sample;
};

ParsedRow parse_row(const std::string& line, std::size_t dim, std::size_t classes,
                    const std::string& where) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 2 + dim + classes) {
        throw std::runtime_error("dataset: malformed row at " + where + ": expected " +
                                 std::to_string(2 + dim + classes) + " cells, got " +
                                 std::to_string(cells.size()));
    }
    ParsedRow row;
    try {
        row.client_id = std::stoi(cells[0]);
    } catch (const std::exception&) {
        throw std::runtime_error("dataset: malformed row at " + where + ": bad client id");
    }
    row.split = cells[1];
    if (row.split != "labeled" && row.split != "unlabeled" && row.split != "test") {
        throw std::runtime_error("dataset: malformed row at " + where + ": bad split '" +
                                 row.split + "'");
    }
    row.sample.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        std::size_t used = 0;
        try {
            row.sample.features[i] = std::stod(cells[2 + i], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != cells[2 + i].size() || cells[2 + i].empty()) {
            throw std::runtime_error("dataset: malformed row at " + where +
                                     ": bad feature value '" + cells[2 + i] + "'");
        }
    }
    row.sample.labels.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        const std::string& v = cells[2 + dim + c];
        if (v == "-1") {
            row.sample.labels[c] = kUnknownLabel;
        } else if (v == "0") {
            row.sample.labels[c] = 0;
        } else if (v == "1") {
            row.sample.labels[c] = 1;
        } else {
            throw std::runtime_error("dataset: malformed row at " + where +
                                     ": label value '" + v + "' not in {-1,0,1}");
        }
    }
    return row;
}

std::pair<std::size_t, std::size_t> parse_header(const std::string& header,
                                                 const std::string& where) {
    std::vector<std::string> cells;
    std::stringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::size_t dim = 0, classes = 0;
    for (const auto& c : cells) {
        if (c.rfind("feat_", 0) == 0) ++dim;
        if (c.rfind("label_", 0) == 0) ++classes;
    }
    if (cells.size() != 2 + dim + classes || cells.empty() || cells[0] != "client_id" ||
        (cells.size() > 1 && cells[1] != "split") || dim == 0 || classes == 0) {
        throw std::runtime_error("dataset: bad header in " + where);
    }
    return {dim, classes};
}

std::vector<int> known_classes(const Sample& s) {
    std::vector<int> known;
    for (std::size_t c = 0; c < s.labels.size(); ++c) {
        if (s.labels[c] != kUnknownLabel) known.push_back(static_cast<int>(c));
    }
    return known;
}

}  // namespace

void save_dataset(const FederatedDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    std::size_t dim = 0, classes = 0;
    if (!ds.clients.empty() && !ds.clients[0].labeled.empty()) {
        dim = ds.clients[0].labeled[0].features.size();
        classes = ds.clients[0].labeled[0].labels.size();
    } else if (!ds.test.empty()) {
        dim = ds.test[0].features.size();
        classes = ds.test[0].labels.size();
    } else {
        throw std::invalid_argument("save_dataset: empty dataset");
    }

    for (const ClientDataset& client : ds.clients) {
        fs::path p = fs::path(dir) / ("client_" + std::to_string(client.client_id) + ".csv");
        std::ofstream os(p);
        if (!os) throw std::runtime_error("dataset: cannot write " + p.string());
        write_header(os, dim, classes);
        write_rows(os, client.client_id, "labeled", client.labeled);
        write_rows(os, client.client_id, "unlabeled", client.unlabeled);
    }
    fs::path p = fs::path(dir) / "test.csv";
    std::ofstream os(p);
    if (!os) throw std::runtime_error("dataset: cannot write " + p.string());
    write_header(os, dim, classes);
    write_rows(os, -1, "test", ds.test);
}

FederatedDataset load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("dataset: no such directory: " + dir);
    }
    std::vector<int> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("client_", 0) == 0 && name.size() > 11 &&
            name.substr(name.size() - 4) == ".csv") {
            ids.push_back(std::stoi(name.substr(7, name.size() - 11)));
        }
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("dataset: no client_*.csv files in " + dir);

    FederatedDataset ds;
    std::uint64_t next_id = 0;
    std::size_t dim = 0, classes = 0;

    auto read_file = [&](const fs::path& p, auto&& on_row) {
        std::ifstream is(p);
        if (!is) throw std::runtime_error("dataset: cannot open " + p.string());
        std::string line;
        if (!std::getline(is, line)) {
            throw std::runtime_error("dataset: empty file " + p.string());
        }
        auto [d, c] = parse_header(line, p.filename().string());
        if (dim == 0) {
            dim = d;
            classes = c;
        } else if (d != dim || c != classes) {
            throw std::runtime_error("dataset: inconsistent header in " +
                                     p.filename().string());
        }
        std::size_t line_no = 1;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty()) continue;
            ParsedRow row = parse_row(line, dim, classes,
                                      p.filename().string() + ":" +
                                          std::to_string(line_no));
            row.sample.id = next_id++;
            on_row(std::move(row));
        }
    };

    for (int id : ids) {
        ClientDataset client;
        client.client_id = id;
        bool first_labeled = true;
        read_file(fs::path(dir) / ("client_" + std::to_string(id) + ".csv"),
                  [&](ParsedRow row) {
                      if (row.client_id != id) {
                          throw std::runtime_error(
                              "dataset: client id mismatch inside client_" +
                              std::to_string(id) + ".csv");
                      }
                      if (row.split == "labeled") {
                          auto known = known_classes(row.sample);
                          if (first_labeled) {
                              client.annotated_classes = known;
                              first_labeled = false;
                          } else if (known != client.annotated_classes) {
                              throw std::runtime_error(
                                  "dataset: inconsistent annotation mask in client_" +
                                  std::to_string(id) + ".csv");
                          }
                          client.labeled.push_back(std::move(row.sample));
                      } else if (row.split == "unlabeled") {
                          client.unlabeled.push_back(std::move(row.sample));
                      } else {
                          throw std::runtime_error("dataset: test row inside client_" +
                                                   std::to_string(id) + ".csv");
                      }
                  });
        ds.clients.push_back(std::move(client));
    }
    read_file(fs::path(dir) / "test.csv", [&](ParsedRow row) {
        if (row.split != "test") {
            throw std::runtime_error("dataset: non-test row inside test.csv");
        }
        ds.test.push_back(std::move(row.sample));
    });
    return ds;
}

}  // namespace fedfew::data
