#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "fedfew/experiment.hpp"
#include "fedfew/federation.hpp"

using namespace fedfew;

namespace {

// Widths stay above ~24 so no relu layer can go completely dead for a
// sample at init (the probability is ~2^-width per layer); the cosine loss
// rejects the zero embeddings such a collapse would produce.
nn::ModelSpec micro_spec() {
    nn::ModelSpec spec;
    spec.input_dim = 6;
    spec.hidden_dims = {24};
    spec.feature_dim = 24;
    spec.head_out_dim = 4;  // 3 common classes + the no-CC bit
    spec.simsiam_proj_dim = 24;
    spec.simsiam_pred_hidden = 12;
    return spec;
}

data::SyntheticConfig micro_data_config() {
    data::SyntheticConfig cfg;
    cfg.layout.num_classes = 4;
    cfg.layout.uc_classes = {3};
    cfg.clients = 3;
    cfg.input_dim = 6;
    cfg.cc_labeled = 60;
    cfg.cc_unlabeled = 20;
    cfg.uc_labeled_pos = 2;
    cfg.uc_labeled_neg = 10;
    cfg.test_pos_per_class = 4;
    cfg.test_neg_per_class = 4;
    cfg.seed = 321;
    return cfg;
}

fed::FederationConfig micro_fed_config() {
    fed::FederationConfig cfg;
    cfg.rounds = 3;
    cfg.warmup_rounds = 1;
    cfg.local_epochs = 1;
    cfg.fssl_rounds = 2;
    cfg.batch_size = 16;
    return cfg;
}

nn::ParameterSet make_uniform_params(const nn::ModelSpec& spec, double value) {
    auto ps = nn::init_params(spec, 1);
    for (auto& seg : ps.segments) {
        for (double& v : seg.values) v = value;
    }
    return ps;
}

}  // namespace

TEST_CASE("fedavg: single client returns the input bitwise") {
    auto spec = micro_spec();
    auto ps = nn::init_params(spec, 17);
    auto out = fed::fedavg({ps}, {42.0});
    CHECK(out.bitwise_equal(ps));
}

TEST_CASE("fedavg: weighted average hand case") {
    auto spec = micro_spec();
    auto a = make_uniform_params(spec, 0.0);
    auto b = make_uniform_params(spec, 4.0);
    auto out = fed::fedavg({a, b}, {100.0, 300.0});
    for (const auto& seg : out.segments) {
        for (double v : seg.values) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
    }
}

TEST_CASE("fedavg: identical sets pass through unchanged for any valid weights") {
    auto spec = micro_spec();
    auto ps = nn::init_params(spec, 23);
    auto out = fed::fedavg({ps, ps, ps}, {1.0, 7.0, 0.25});
    CHECK(out.bitwise_equal(ps));
}

TEST_CASE("fedavg: weight zero removes a client's influence") {
    auto spec = micro_spec();
    auto a = nn::init_params(spec, 1);
    auto b = nn::init_params(spec, 2);
    auto out = fed::fedavg({a, b}, {1.0, 0.0});
    CHECK(out.bitwise_equal(a));
}

TEST_CASE("fedavg error cases") {
    auto spec = micro_spec();
    auto a = nn::init_params(spec, 1);
    auto spec2 = micro_spec();
    spec2.head_out_dim = 5;
    auto b = nn::init_params(spec2, 1);
    CHECK_THROWS_AS(fed::fedavg({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(fed::fedavg({a, b}, {1.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(fed::fedavg({a, a}, {0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(fed::fedavg({a, a}, {-1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(fed::fedavg({a, a}, {1.0}), std::invalid_argument);
}

TEST_CASE("compute_weights hand cases") {
    data::ClientDataset c1, c2, c3, u1, u2, u3;
    auto fill = [](data::ClientDataset& c, int id, std::size_t labeled,
                   std::size_t unlabeled) {
        c.client_id = id;
        c.labeled.resize(labeled);
        c.unlabeled.resize(unlabeled);
    };
    fill(c1, 0, 500, 250);
    fill(c2, 1, 500, 0);
    fill(c3, 2, 500, 0);
    fill(u1, 3, 100, 0);
    fill(u2, 4, 100, 0);
    fill(u3, 5, 100, 0);

    SUBCASE("warm-up round normalizes over common-class clients only") {
        auto w = fed::compute_weights({&c1, &c2, &c3}, fed::Stage::psl);
        for (double x : w) CHECK(x == 1.0 / 3.0);
    }
    SUBCASE("post-warm-up weights over all six clients") {
        auto w = fed::compute_weights({&c1, &c2, &c3, &u1, &u2, &u3}, fed::Stage::psl);
        CHECK(w[0] == 5.0 / 18.0);
        CHECK(w[1] == 5.0 / 18.0);
        CHECK(w[2] == 5.0 / 18.0);
        CHECK(w[3] == 1.0 / 18.0);
        CHECK(w[4] == 1.0 / 18.0);
        CHECK(w[5] == 1.0 / 18.0);
    }
    SUBCASE("stage 1 includes unlabeled data under the all_counts rule") {
        auto w = fed::compute_weights({&c1, &c2}, fed::Stage::fssl,
                                      fed::WeightRule::all_counts);
        CHECK(w[0] == 750.0 / 1250.0);
        CHECK(w[1] == 500.0 / 1250.0);
        auto w2 = fed::compute_weights({&c1, &c2}, fed::Stage::fssl,
                                       fed::WeightRule::labeled_counts);
        CHECK(w2[0] == 0.5);
    }
    SUBCASE("zero totals and empty sets are rejected") {
        data::ClientDataset empty;
        empty.client_id = 9;
        CHECK_THROWS_AS(fed::compute_weights({&empty}, fed::Stage::psl),
                        std::invalid_argument);
        CHECK_THROWS_AS(fed::compute_weights({}, fed::Stage::psl), std::invalid_argument);
    }
}

TEST_CASE("local_update: zero epochs returns the input bitwise") {
    auto ds = data::generate_synthetic(micro_data_config());
    auto spec = micro_spec();
    auto theta = nn::init_params(spec, 5);
    auto cfg = micro_fed_config();
    cfg.local_epochs = 0;
    Rng rng(1);
    auto out = fed::local_update(ds.clients[0], micro_data_config().layout, theta, spec,
                                 fed::Stage::psl, cfg, rng);
    CHECK(out.bitwise_equal(theta));
}

TEST_CASE("local_update: learning rate zero is inert") {
    auto ds = data::generate_synthetic(micro_data_config());
    auto spec = micro_spec();
    auto theta = nn::init_params(spec, 5);
    auto cfg = micro_fed_config();
    cfg.uc_learning_rate = 0.0;
    Rng rng(1);
    auto out = fed::local_update(ds.clients[2], micro_data_config().layout, theta, spec,
                                 fed::LocalObjective::uc_energy, cfg, rng);
    CHECK(out.bitwise_equal(theta));
}

TEST_CASE("local_update: empty pool is rejected") {
    data::ClientDataset empty;
    empty.client_id = 0;
    auto spec = micro_spec();
    auto theta = nn::init_params(spec, 5);
    Rng rng(1);
    CHECK_THROWS_AS(fed::local_update(empty, micro_data_config().layout, theta, spec,
                                      fed::Stage::psl, micro_fed_config(), rng),
                    std::invalid_argument);
}

namespace {

// Test-side plain-BCE trainer: same batching and Adam arithmetic written
// independently, no energy terms anywhere in the graph.
nn::ParameterSet plain_bce_oracle(const data::ClientDataset& client,
                                  const data::ClassLayout& layout,
                                  const nn::ParameterSet& theta_in,
                                  const nn::ModelSpec& spec,
                                  const fed::FederationConfig& cfg, Rng& rng) {
    auto cc = layout.cc_classes();
    nn::ParameterSet theta = theta_in;
    std::map<std::string, std::vector<double>> m, v;
    int t = 0;
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        auto order = rng.permutation(client.labeled.size());
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            std::size_t end = std::min(begin + cfg.batch_size, order.size());
            std::size_t bs = end - begin;
            ad::Tensor x = ad::Tensor::zeros({bs, spec.input_dim});
            ad::Tensor labels = ad::Tensor::zeros({bs, cc.size() + 1});
            for (std::size_t i = 0; i < bs; ++i) {
                const auto& s = client.labeled[order[begin + i]];
                std::copy(s.features.begin(), s.features.end(),
                          x.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
                auto enc = data::encode_cc_label(s, cc);
                for (std::size_t c = 0; c < enc.bits.size(); ++c) {
                    labels.at(i, c) = enc.bits[c];
                }
            }
            ad::Tape tape;
            auto g = nn::build_classifier_graph(tape, theta, spec, x);
            auto loss = losses::bce_partial_node(tape, g.logits, labels);
            auto grads = tape.backward(loss);
            ++t;
            for (std::size_t p = 0; p < g.params.names.size(); ++p) {
                const auto& grad = grads[g.params.nodes[p]].values;
                auto& seg = theta.find(g.params.names[p]);
                auto& ms = m[g.params.names[p]];
                auto& vs = v[g.params.names[p]];
                if (ms.empty()) {
                    ms.assign(grad.size(), 0.0);
                    vs.assign(grad.size(), 0.0);
                }
                double c1 = 1.0 - std::pow(cfg.adam.beta1, t);
                double c2 = 1.0 - std::pow(cfg.adam.beta2, t);
                for (std::size_t i = 0; i < grad.size(); ++i) {
                    ms[i] = cfg.adam.beta1 * ms[i] + (1.0 - cfg.adam.beta1) * grad[i];
                    vs[i] = cfg.adam.beta2 * vs[i] + (1.0 - cfg.adam.beta2) * grad[i] * grad[i];
                    seg.values[i] -= cfg.learning_rate * (ms[i] / c1) /
                                     (std::sqrt(vs[i] / c2) + cfg.adam.eps);
                }
            }
        }
    }
    return theta;
}

double dataset_cc_loss(const data::ClientDataset& client, const data::ClassLayout& layout,
                       const nn::ParameterSet& theta, const nn::ModelSpec& spec,
                       const losses::EnergyConfig& energy) {
    auto cc = layout.cc_classes();
    ad::Tensor x = ad::Tensor::zeros({client.labeled.size(), spec.input_dim});
    ad::Tensor labels = ad::Tensor::zeros({client.labeled.size(), cc.size() + 1});
    for (std::size_t i = 0; i < client.labeled.size(); ++i) {
        const auto& s = client.labeled[i];
        std::copy(s.features.begin(), s.features.end(),
                  x.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
        auto enc = data::encode_cc_label(s, cc);
        for (std::size_t c = 0; c < enc.bits.size(); ++c) labels.at(i, c) = enc.bits[c];
    }
    ad::Tape tape;
    auto g = nn::build_classifier_graph(tape, theta, spec, x);
    return tape.value(losses::total_cc_loss_node(tape, g.logits, labels, energy)).values[0];
}

}  // namespace

TEST_CASE("local_update with lambda=0 matches a plain partial-BCE trainer bitwise") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto theta = nn::init_params(spec, 5);
    auto cfg = micro_fed_config();
    cfg.energy.lambda = 0.0;
    cfg.local_epochs = 2;

    Rng rng_a(77), rng_b(77);
    auto trained = fed::local_update(ds.clients[0], dcfg.layout, theta, spec,
                                     fed::LocalObjective::cc_energy, cfg, rng_a);
    auto oracle = plain_bce_oracle(ds.clients[0], dcfg.layout, theta, spec, cfg, rng_b);
    CHECK(trained.bitwise_equal(oracle));
    CHECK_FALSE(trained.bitwise_equal(theta));
}

TEST_CASE("local_update descends on a small dataset (majority over 20 seeds)") {
    auto dcfg = micro_data_config();
    dcfg.cc_labeled = 10;
    dcfg.cc_unlabeled = 0;
    dcfg.uc_labeled_pos = 1;
    dcfg.uc_labeled_neg = 1;
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    cfg.learning_rate = 1e-4;
    cfg.local_epochs = 1;
    cfg.batch_size = 5;

    int improved = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto theta = nn::init_params(spec, derive_seed(900, seed));
        double before = dataset_cc_loss(ds.clients[0], dcfg.layout, theta, spec, cfg.energy);
        Rng rng(derive_seed(901, seed));
        auto after_params = fed::local_update(ds.clients[0], dcfg.layout, theta, spec,
                                              fed::LocalObjective::cc_energy, cfg, rng);
        double after = dataset_cc_loss(ds.clients[0], dcfg.layout, after_params, spec,
                                       cfg.energy);
        if (after <= before) ++improved;
    }
    CHECK(improved > 10);
}

TEST_CASE("run_fssl_stage with K=1 matches a non-federated trainer bitwise") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    std::vector<data::ClientDataset> solo = {ds.clients[0]};
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    const std::uint64_t seed = 404;

    auto fed_result = fed::run_fssl_stage(solo, dcfg.layout, spec, cfg, seed);

    // oracle: plain rounds of local training, no server, no aggregation
    auto theta = nn::init_params(spec, derive_seed(seed, 0, 0, 0));
    for (int t = 1; t <= cfg.fssl_rounds; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(fed::Stage::fssl),
                            static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(solo[0].client_id)));
        theta = fed::local_update(solo[0], dcfg.layout, theta, spec,
                                  fed::LocalObjective::simsiam, cfg, rng);
    }
    CHECK(fed_result.params.bitwise_equal(theta));
}

TEST_CASE("run_fssl_stage is deterministic and reports the collapse monitor") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto cfg = micro_fed_config();

    ad::Tensor monitor = ad::Tensor::zeros({8, spec.input_dim});
    for (std::size_t i = 0; i < 8; ++i) {
        std::copy(ds.test[i].features.begin(), ds.test[i].features.end(),
                  monitor.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
    }
    auto a = fed::run_fssl_stage(ds.clients, dcfg.layout, spec, cfg, 7, nullptr, &monitor);
    auto b = fed::run_fssl_stage(ds.clients, dcfg.layout, spec, cfg, 7, nullptr, &monitor);
    CHECK(a.params.bitwise_equal(b.params));
    REQUIRE_FALSE(a.rounds.empty());
    CHECK(a.rounds.back().embedding_std >= 0.0);
    CHECK(a.sync_invariant_held);
}

TEST_CASE("run_psl_stage: T_w == T makes the result independent of UC data") {
    auto dcfg = micro_data_config();
    auto ds1 = data::generate_synthetic(dcfg);
    auto ds2 = ds1;
    // mutate every UC client sample beyond recognition
    for (auto& client : ds2.clients) {
        if (!client.is_uc_client(dcfg.layout)) continue;
        for (auto& s : client.labeled) {
            for (double& v : s.features) v += 1000.0;
        }
    }
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    cfg.rounds = 2;
    cfg.warmup_rounds = 2;
    auto theta = nn::init_params(spec, 5);

    auto r1 = fed::run_psl_stage(ds1.clients, dcfg.layout, theta, spec, cfg, 99);
    auto r2 = fed::run_psl_stage(ds2.clients, dcfg.layout, theta, spec, cfg, 99);
    CHECK(r1.params.bitwise_equal(r2.params));
}

TEST_CASE("run_psl_stage: single common-class client equals centralized training") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    std::vector<data::ClientDataset> solo = {ds.clients[0]};
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    cfg.rounds = 3;
    cfg.warmup_rounds = 0;
    auto theta0 = nn::init_params(spec, 5);
    const std::uint64_t seed = 31;

    auto fed_result = fed::run_psl_stage(solo, dcfg.layout, theta0, spec, cfg, seed);

    auto theta = theta0;
    for (int t = 1; t <= cfg.rounds; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(fed::Stage::psl),
                            static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(solo[0].client_id)));
        theta = fed::local_update(solo[0], dcfg.layout, theta, spec,
                                  fed::LocalObjective::cc_energy, cfg, rng);
    }
    CHECK(fed_result.params.bitwise_equal(theta));
}

TEST_CASE("run_psl_stage: inert UC clients only mix the previous round back in") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    cfg.rounds = 2;
    cfg.warmup_rounds = 0;
    cfg.uc_learning_rate = 0.0;  // zero UC gradient steps forced
    auto theta0 = nn::init_params(spec, 5);
    const std::uint64_t seed = 13;

    auto fed_result = fed::run_psl_stage(ds.clients, dcfg.layout, theta0, spec, cfg, seed);

    // oracle: recursion theta' = fedavg([cc1', cc2', theta], weights)
    std::vector<const data::ClientDataset*> parts;
    for (const auto& c : ds.clients) parts.push_back(&c);
    auto weights = fed::compute_weights(parts, fed::Stage::psl);
    auto theta = theta0;
    for (int t = 1; t <= cfg.rounds; ++t) {
        std::vector<nn::ParameterSet> thetas;
        for (const auto& client : ds.clients) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(fed::Stage::psl),
                                static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(client.client_id)));
            bool uc = client.is_uc_client(dcfg.layout);
            thetas.push_back(fed::local_update(
                client, dcfg.layout, theta, spec,
                uc ? fed::LocalObjective::uc_energy : fed::LocalObjective::cc_energy, cfg,
                rng));
            if (uc) CHECK(thetas.back().bitwise_equal(theta));
        }
        theta = fed::fedavg(thetas, weights);
    }
    CHECK(fed_result.params.bitwise_equal(theta));
}

TEST_CASE("run_psl_stage: warm-up checkpoint, sync invariant, determinism") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto cfg = micro_fed_config();
    auto theta = nn::init_params(spec, 5);

    auto serial_cfg = cfg;
    serial_cfg.parallel_clients = false;
    auto parallel = fed::run_psl_stage(ds.clients, dcfg.layout, theta, spec, cfg, 42);
    auto serial = fed::run_psl_stage(ds.clients, dcfg.layout, theta, spec, serial_cfg, 42);
    auto again = fed::run_psl_stage(ds.clients, dcfg.layout, theta, spec, cfg, 42);

    CHECK(parallel.params.bitwise_equal(serial.params));
    CHECK(parallel.params.bitwise_equal(again.params));
    CHECK(parallel.warmup_params.bitwise_equal(serial.warmup_params));
    CHECK(parallel.sync_invariant_held);
    CHECK_FALSE(parallel.params.bitwise_equal(theta));
    CHECK(parallel.rounds.size() == static_cast<std::size_t>(cfg.rounds));
}

TEST_CASE("run_psl_stage rejects bad setups") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto cfg = micro_fed_config();

    SUBCASE("head width must be C_c+1") {
        auto wrong = micro_spec();
        wrong.head_out_dim = 7;
        auto theta = nn::init_params(wrong, 5);
        CHECK_THROWS_AS(
            fed::run_psl_stage(ds.clients, dcfg.layout, theta, wrong, cfg, 1),
            std::invalid_argument);
    }
    SUBCASE("no common-class clients") {
        std::vector<data::ClientDataset> only_uc = {ds.clients[2]};
        auto spec = micro_spec();
        auto theta = nn::init_params(spec, 5);
        CHECK_THROWS_AS(
            fed::run_psl_stage(only_uc, dcfg.layout, theta, spec, cfg, 1),
            std::invalid_argument);
    }
    SUBCASE("warm-up longer than the schedule") {
        auto bad = cfg;
        bad.warmup_rounds = bad.rounds + 1;
        auto spec = micro_spec();
        auto theta = nn::init_params(spec, 5);
        CHECK_THROWS_AS(fed::run_psl_stage(ds.clients, dcfg.layout, theta, spec, bad, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("the full-scale schedule runs to completion at desk scale") {
    auto dcfg = micro_data_config();
    dcfg.cc_labeled = 8;
    dcfg.cc_unlabeled = 0;
    dcfg.uc_labeled_pos = 1;
    dcfg.uc_labeled_neg = 4;
    dcfg.max_uc_cc_ratio = 1.0;
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    fed::FederationConfig cfg;
    cfg.rounds = 100;
    cfg.warmup_rounds = 20;
    cfg.local_epochs = 10;
    cfg.batch_size = 8;
    auto theta = nn::init_params(spec, 5);
    auto result = fed::run_psl_stage(ds.clients, dcfg.layout, theta, spec, cfg, 3);
    CHECK(result.rounds.size() == 100);
    CHECK(result.sync_invariant_held);
    for (const auto& seg : result.params.segments) {
        for (double v : seg.values) CHECK(std::isfinite(v));
    }
}

TEST_CASE("message channel: counts, closed schema, no raw feature payloads") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto cfg = micro_fed_config();

    fed::MessageChannel channel(true);
    auto fssl = fed::run_fssl_stage(ds.clients, dcfg.layout, spec, cfg, 11, &channel);
    auto psl = fed::run_psl_stage(ds.clients, dcfg.layout, fssl.params, spec, cfg, 12,
                                  &channel);
    auto meta = fed::collect_metadata(ds.clients, dcfg.layout, psl.params, spec,
                                      cfg.energy, &channel);

    auto violations = fed::audit_trace(channel.trace(), spec.input_dim, spec.feature_dim);
    for (const auto& v : violations) CAPTURE(v);
    CHECK(violations.empty());

    const auto& counts = channel.counts();
    CHECK(counts.at("params_down") == counts.at("params_up"));
    // fssl: 2 rounds x 3 clients; psl: 1 warm-up round x 2 + 2 rounds x 3
    CHECK(counts.at("params_down") == 2 * 3 + 1 * 2 + 2 * 3);
    CHECK(counts.at("prototype_meta") == 1);
    CHECK(counts.at("energy_stats") == 3);
    CHECK(counts.at("control") == 4);

    CHECK(meta.prototypes.size() == 1);
    CHECK(meta.prototypes[0].n_pos == dcfg.uc_labeled_pos);
    CHECK(meta.prototypes[0].n_neg == dcfg.uc_labeled_neg);
    CHECK(meta.stats.size() == 2 * dcfg.cc_labeled + dcfg.uc_labeled_pos +
                                   dcfg.uc_labeled_neg);

    // common-class client stats all flagged has_uc=false
    std::size_t uc_flags = 0;
    for (const auto& s : meta.stats) uc_flags += s.has_uc;
    CHECK(uc_flags == dcfg.uc_labeled_pos);
}

TEST_CASE("collect_metadata rejects a UC client without positives") {
    auto dcfg = micro_data_config();
    auto ds = data::generate_synthetic(dcfg);
    auto spec = micro_spec();
    auto theta = nn::init_params(spec, 5);
    for (auto& client : ds.clients) {
        if (!client.is_uc_client(dcfg.layout)) continue;
        int c = client.uc_class(dcfg.layout);
        for (auto& s : client.labeled) s.labels[c] = 0;
    }
    CHECK_THROWS_AS(fed::collect_metadata(ds.clients, dcfg.layout, theta, spec,
                                          losses::EnergyConfig{}),
                    std::invalid_argument);
}

TEST_CASE("audit_trace flags off-schema payloads") {
    // a prototype whose vectors have input_dim length looks like a raw sample
    fed::PrototypeMeta bad;
    bad.client_id = 2;
    bad.prototype.class_id = 3;
    bad.prototype.mu_pos.assign(6, 1.0);  // input_dim = 6, feature_dim = 8
    bad.prototype.mu_neg.assign(6, 1.0);
    bad.prototype.n_pos = bad.prototype.n_neg = 1;
    std::vector<fed::FederationMessage> trace = {bad};
    auto violations = fed::audit_trace(trace, 6, 8);
    CHECK_FALSE(violations.empty());
}
