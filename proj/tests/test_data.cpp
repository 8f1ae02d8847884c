#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedfew/data.hpp"

using namespace fedfew;
namespace fs = std::filesystem;

namespace {

data::SyntheticConfig small_config() {
    data::SyntheticConfig cfg;
    cfg.cc_labeled = 50;
    cfg.cc_unlabeled = 30;
    cfg.uc_labeled_pos = 3;
    cfg.uc_labeled_neg = 7;
    cfg.test_pos_per_class = 5;
    cfg.test_neg_per_class = 5;
    cfg.input_dim = 8;
    cfg.seed = 404;
    return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic in the config") {
    auto cfg = small_config();
    auto a = data::generate_synthetic(cfg);
    auto b = data::generate_synthetic(cfg);
    CHECK(a == b);
    cfg.seed = 405;
    CHECK_FALSE(data::generate_synthetic(cfg) == a);
}

TEST_CASE("per-client counts match the config") {
    auto cfg = small_config();
    auto ds = data::generate_synthetic(cfg);
    REQUIRE(ds.clients.size() == 6);
    for (const auto& client : ds.clients) {
        if (client.is_uc_client(cfg.layout)) {
            CHECK(client.labeled.size() == cfg.uc_labeled_pos + cfg.uc_labeled_neg);
            CHECK(client.unlabeled.size() == cfg.uc_unlabeled);
            int c = client.uc_class(cfg.layout);
            std::size_t pos = 0;
            for (const auto& s : client.labeled) pos += s.labels[c] == 1;
            CHECK(pos == cfg.uc_labeled_pos);
        } else {
            CHECK(client.labeled.size() == cfg.cc_labeled);
            CHECK(client.unlabeled.size() == cfg.cc_unlabeled);
        }
    }
    CHECK(ds.test.size() ==
          static_cast<std::size_t>(cfg.layout.num_classes) *
              (cfg.test_pos_per_class + cfg.test_neg_per_class));
}

TEST_CASE("client topology invariants") {
    auto cfg = small_config();
    auto ds = data::generate_synthetic(cfg);

    std::multiset<int> uc_seen;
    auto cc = cfg.layout.cc_classes();
    for (const auto& client : ds.clients) {
        if (client.is_uc_client(cfg.layout)) {
            uc_seen.insert(client.annotated_classes[0]);
        } else {
            CHECK(client.annotated_classes == cc);
        }
    }
    std::multiset<int> expected(cfg.layout.uc_classes.begin(),
                                cfg.layout.uc_classes.end());
    CHECK(uc_seen == expected);  // each UC annotated at exactly one client
}

TEST_CASE("sample ids are globally disjoint") {
    auto ds = data::generate_synthetic(small_config());
    std::set<std::uint64_t> ids;
    std::size_t total = 0;
    for (const auto& client : ds.clients) {
        for (const auto& s : client.labeled) ids.insert(s.id), ++total;
        for (const auto& s : client.unlabeled) ids.insert(s.id), ++total;
    }
    for (const auto& s : ds.test) ids.insert(s.id), ++total;
    CHECK(ids.size() == total);
}

TEST_CASE("zero noise and single-class samples collapse onto the class direction") {
    auto cfg = small_config();
    cfg.noise_sigma = 0.0;
    cfg.test_noise_sigma = 0.0;
    cfg.cc_prevalence = 0.0;  // only forced labels appear
    cfg.require_finding = false;
    auto ds = data::generate_synthetic(cfg);
    // all class-c test positives are exactly scale * v_c: identical vectors
    auto pos0 = ds.test[0].features;
    for (std::size_t i = 1; i < cfg.test_pos_per_class; ++i) {
        CHECK(ds.test[i].features == pos0);
    }
    double sq = 0.0;
    for (double v : pos0) sq += v * v;
    CHECK(std::sqrt(sq) == doctest::Approx(cfg.signal_scale).epsilon(1e-12));
}

TEST_CASE("uc labeled pool must stay small next to the cc pool") {
    auto cfg = small_config();
    cfg.uc_labeled_pos = 40;
    cfg.uc_labeled_neg = 60;  // 100 labeled vs 50 at CC clients
    CHECK_THROWS_WITH_AS(data::generate_synthetic(cfg), doctest::Contains("ratio"),
                         std::invalid_argument);
}

TEST_CASE("infeasible configurations are rejected") {
    auto cfg = small_config();
    cfg.uc_labeled_pos = 0;
    CHECK_THROWS_AS(data::generate_synthetic(cfg), std::invalid_argument);

    cfg = small_config();
    cfg.clients = 3;  // |C_u|=3 needs K > 3
    CHECK_THROWS_AS(data::generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("encode_cc_label") {
    auto cfg = small_config();
    auto cc = cfg.layout.cc_classes();

    data::Sample s;
    s.labels = {0, 0, 0, 0, 0, -1, -1, -1};
    auto enc = data::encode_cc_label(s, cc);
    CHECK(enc.bits.size() == cc.size() + 1);
    CHECK(enc.bits[0] == 1);  // no common class present

    s.labels = {0, 1, 0, 0, 0, -1, -1, -1};
    enc = data::encode_cc_label(s, cc);
    CHECK(enc.bits[0] == 0);
    CHECK(enc.bits[2] == 1);

    s.labels = {0, -1, 0, 0, 0, -1, -1, -1};  // missing CC annotation
    CHECK_THROWS_WITH_AS(data::encode_cc_label(s, cc), doctest::Contains("missing"),
                         std::invalid_argument);
}

TEST_CASE("make_views") {
    data::Sample s;
    s.features = {1.0, -2.0, 3.0};
    Rng rng(12);

    SUBCASE("identity augmentation") {
        data::AugmentConfig aug{0.0, 0.0};
        auto [v1, v2] = data::make_views(s, aug, rng);
        CHECK(v1 == s.features);
        CHECK(v2 == s.features);
    }
    SUBCASE("dropout probability one is rejected") {
        data::AugmentConfig aug{0.1, 1.0};
        CHECK_THROWS_AS(data::make_views(s, aug, rng), std::invalid_argument);
    }
    SUBCASE("empirical dropout fraction approaches p") {
        data::AugmentConfig aug{0.0, 0.2};
        std::size_t zeros = 0, total = 0;
        data::Sample ones;
        ones.features.assign(10, 1.0);
        for (int i = 0; i < 1000; ++i) {  // 10^4 coordinates over both views
            auto [v1, v2] = data::make_views(ones, aug, rng);
            for (double v : v1) zeros += v == 0.0, ++total;
            for (double v : v2) zeros += v == 0.0, ++total;
        }
        double frac = static_cast<double>(zeros) / static_cast<double>(total);
        CHECK(std::abs(frac - 0.2) < 0.02);
    }
    SUBCASE("views are drawn independently") {
        data::AugmentConfig aug{0.3, 0.0};
        auto [v1, v2] = data::make_views(s, aug, rng);
        CHECK_FALSE(v1 == v2);
    }
}

TEST_CASE("dataset CSV round-trip") {
    auto cfg = small_config();
    auto ds = data::generate_synthetic(cfg);
    fs::path dir = fs::temp_directory_path() / "fedfew_dataset_roundtrip";
    fs::remove_all(dir);
    data::save_dataset(ds, dir.string());

    auto loaded = data::load_dataset(dir.string());
    CHECK(loaded == ds);

    // saving the reloaded dataset reproduces the files byte for byte
    fs::path dir2 = fs::temp_directory_path() / "fedfew_dataset_roundtrip2";
    fs::remove_all(dir2);
    data::save_dataset(loaded, dir2.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(dir2 / entry.path().filename(), std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("unknown labels map to -1 in the CSV and back") {
    auto ds = data::generate_synthetic(small_config());
    fs::path dir = fs::temp_directory_path() / "fedfew_dataset_unknowns";
    fs::remove_all(dir);
    data::save_dataset(ds, dir.string());

    std::ifstream is(dir / "client_0.csv");
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(row.find(",-1") != std::string::npos);  // client 0 has unknown UC labels

    auto loaded = data::load_dataset(dir.string());
    CHECK(loaded.clients[0].labeled[0].labels[5] == data::kUnknownLabel);
    fs::remove_all(dir);
}

TEST_CASE("malformed rows name the offending line") {
    auto ds = data::generate_synthetic(small_config());
    fs::path dir = fs::temp_directory_path() / "fedfew_dataset_malformed";
    fs::remove_all(dir);
    data::save_dataset(ds, dir.string());

    // corrupt a label on line 3 of client_1.csv
    fs::path victim = dir / "client_1.csv";
    std::ifstream is(victim);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    is.close();
    std::size_t comma = lines[2].find_last_of(',');
    lines[2] = lines[2].substr(0, comma + 1) + "2";
    std::ofstream os(victim);
    for (const auto& l : lines) os << l << "\n";
    os.close();

    CHECK_THROWS_WITH_AS(data::load_dataset(dir.string()),
                         doctest::Contains("client_1.csv:3"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("inconsistent annotation mask inside a labeled split is rejected") {
    auto ds = data::generate_synthetic(small_config());
    fs::path dir = fs::temp_directory_path() / "fedfew_dataset_mask";
    fs::remove_all(dir);
    data::save_dataset(ds, dir.string());

    fs::path victim = dir / "client_0.csv";
    std::ifstream is(victim);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    is.close();
    // make label_0 unknown in the second labeled row only
    std::vector<std::string> cells;
    std::stringstream ss(lines[2]);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells[2 + 8] = "-1";  // input_dim = 8, so label_0 sits at column 10
    lines[2] = cells[0];
    for (std::size_t i = 1; i < cells.size(); ++i) lines[2] += "," + cells[i];
    std::ofstream os(victim);
    for (const auto& l : lines) os << l << "\n";
    os.close();

    CHECK_THROWS_WITH_AS(data::load_dataset(dir.string()),
                         doctest::Contains("annotation mask"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("two-client imbalance study topology") {
    data::SyntheticConfig cfg;
    cfg.two_client_imbalance = true;
    cfg.clients = 2;
    cfg.cc_labeled = 40;
    cfg.imbalance_ratio = 0.5;
    cfg.test_pos_per_class = 3;
    cfg.test_neg_per_class = 3;
    cfg.input_dim = 8;
    auto ds = data::generate_synthetic(cfg);
    REQUIRE(ds.clients.size() == 2);
    CHECK(ds.clients[0].labeled.size() == 40);
    CHECK(ds.clients[1].labeled.size() == 20);
    // client 0 is the healthy pool: no positive common-class labels at all
    for (const auto& s : ds.clients[0].labeled) {
        for (int c : cfg.layout.cc_classes()) CHECK(s.labels[c] == 0);
    }
    // client 1 samples each carry at least one disease
    for (const auto& s : ds.clients[1].labeled) {
        int count = 0;
        for (int c : cfg.layout.cc_classes()) count += s.labels[c] == 1;
        CHECK(count >= 1);
    }
}

TEST_CASE("cc clients can optionally contain unlabeled UC positives") {
    auto cfg = small_config();
    cfg.cc_clients_contain_ucs = true;
    cfg.uc_prevalence = 0.5;
    cfg.noise_sigma = 0.0;
    cfg.cc_prevalence = 0.0;
    cfg.require_finding = false;
    auto ds = data::generate_synthetic(cfg);
    // With sigma=0 and cc prevalence 0, any nonzero CC-client sample must
    // carry a UC direction; the labels stay unknown either way.
    bool found_nonzero = false;
    for (const auto& s : ds.clients[0].labeled) {
        double sq = 0.0;
        for (double v : s.features) sq += v * v;
        if (sq > 1e-9) found_nonzero = true;
        for (int c : cfg.layout.uc_classes) CHECK(s.labels[c] == data::kUnknownLabel);
    }
    CHECK(found_nonzero);
}
