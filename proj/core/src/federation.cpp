#include "fedfew/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>
#include <stdexcept>

using nlohmann::json;

namespace fedfew::fed {

void FederationConfig::validate() const {
    if (rounds < 0 || warmup_rounds < 0 || warmup_rounds > rounds) {
        throw std::invalid_argument("federation config: need 0 <= T_w <= T, got T_w=" +
                                    std::to_string(warmup_rounds) + ", T=" +
                                    std::to_string(rounds));
    }
    if (local_epochs < 0) throw std::invalid_argument("federation config: local_epochs < 0");
    if (fssl_rounds < 0) throw std::invalid_argument("federation config: fssl_rounds < 0");
    if (batch_size < 1) throw std::invalid_argument("federation config: batch_size < 1");
    if (learning_rate < 0.0) {
        throw std::invalid_argument("federation config: learning_rate < 0");
    }
    energy.validate();
    aug.validate();
}

// ---- channel ----

namespace {

const char* message_type(const FederationMessage& msg) {
    switch (msg.index()) {
        case 0: return "params_down";
        case 1: return "params_up";
        case 2: return "prototype_meta";
        case 3: return "energy_stats";
        case 4: return "control";
    }
    return "?";
}

}  // namespace

void MessageChannel::send(FederationMessage msg) {
    ++counts_[message_type(msg)];
    if (capture_) trace_.push_back(std::move(msg));
}

namespace {

json params_to_json(const nn::ParameterSet& ps) {
    json segments = json::array();
    for (const auto& seg : ps.segments) {
        segments.push_back(
            {{"name", seg.name}, {"shape", seg.shape}, {"values", seg.values}});
    }
    return {{"segments", segments}};
}

}  // namespace

json message_to_json(const FederationMessage& msg) {
    json j;
    j["type"] = message_type(msg);
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ParamsDown>) {
                j["round"] = m.round;
                j["params"] = params_to_json(m.params);
            } else if constexpr (std::is_same_v<T, ParamsUp>) {
                j["client_id"] = m.client_id;
                j["round"] = m.round;
                j["sample_count"] = m.sample_count;
                j["params"] = params_to_json(m.params);
            } else if constexpr (std::is_same_v<T, PrototypeMeta>) {
                j["client_id"] = m.client_id;
                j["class_id"] = m.prototype.class_id;
                j["n_pos"] = m.prototype.n_pos;
                j["n_neg"] = m.prototype.n_neg;
                j["mu_pos"] = m.prototype.mu_pos;
                j["mu_neg"] = m.prototype.mu_neg;
            } else if constexpr (std::is_same_v<T, EnergyStatsMsg>) {
                j["client_id"] = m.client_id;
                json stats = json::array();
                for (const auto& s : m.stats) {
                    stats.push_back({{"energy", s.energy}, {"has_uc", s.has_uc}});
                }
                j["stats"] = stats;
            } else if constexpr (std::is_same_v<T, Control>) {
                j["action"] = m.action;
                j["stage"] = m.stage;
            }
        },
        msg);
    return j;
}

namespace {

void expect_keys(const json& j, const std::set<std::string>& keys, const std::string& ctx,
                 std::vector<std::string>& violations) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!keys.count(it.key())) {
            violations.push_back(ctx + ": unexpected key '" + it.key() + "'");
        }
    }
    for (const auto& k : keys) {
        if (!j.contains(k)) violations.push_back(ctx + ": missing key '" + k + "'");
    }
}

void audit_params(const json& p, const std::string& ctx,
                  std::vector<std::string>& violations) {
    expect_keys(p, {"segments"}, ctx, violations);
    if (!p.contains("segments") || !p["segments"].is_array()) return;
    for (const auto& seg : p["segments"]) {
        expect_keys(seg, {"name", "shape", "values"}, ctx + ".segment", violations);
        if (!seg.contains("shape") || !seg["shape"].is_array() ||
            !seg.contains("values") || !seg["values"].is_array()) {
            violations.push_back(ctx + ": segment without shape/values arrays");
            continue;
        }
        std::size_t expected = 1;
        for (const auto& d : seg["shape"]) expected *= d.get<std::size_t>();
        if (seg["values"].size() != expected) {
            violations.push_back(ctx + ": segment value count does not match its shape");
        }
    }
}

}  // namespace

std::vector<std::string> audit_trace(const std::vector<FederationMessage>& trace,
                                     std::size_t input_dim, std::size_t feature_dim) {
    std::vector<std::string> violations;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        json j = message_to_json(trace[i]);
        std::string ctx = "message " + std::to_string(i);
        std::string type = j.value("type", "");
        if (type == "params_down") {
            expect_keys(j, {"type", "round", "params"}, ctx, violations);
            if (j.contains("params")) audit_params(j["params"], ctx, violations);
        } else if (type == "params_up") {
            expect_keys(j, {"type", "client_id", "round", "sample_count", "params"}, ctx,
                        violations);
            if (j.contains("params")) audit_params(j["params"], ctx, violations);
        } else if (type == "prototype_meta") {
            expect_keys(j, {"type", "client_id", "class_id", "n_pos", "n_neg", "mu_pos",
                            "mu_neg"},
                        ctx, violations);
            for (const char* key : {"mu_pos", "mu_neg"}) {
                if (!j.contains(key) || !j[key].is_array()) {
                    violations.push_back(ctx + ": prototype without mean vectors");
                    continue;
                }
                if (j[key].size() != feature_dim) {
                    violations.push_back(ctx + ": " + key + " has length " +
                                         std::to_string(j[key].size()) +
                                         ", expected feature_dim " +
                                         std::to_string(feature_dim));
                }
                if (feature_dim != input_dim && j[key].size() == input_dim) {
                    violations.push_back(ctx + ": " + key +
                                         " looks like a raw input feature vector");
                }
                for (const auto& v : j[key]) {
                    if (!v.is_number()) {
                        violations.push_back(ctx + ": non-numeric prototype entry");
                        break;
                    }
                }
            }
        } else if (type == "energy_stats") {
            expect_keys(j, {"type", "client_id", "stats"}, ctx, violations);
            if (j.contains("stats") && j["stats"].is_array()) {
                for (const auto& s : j["stats"]) {
                    expect_keys(s, {"energy", "has_uc"}, ctx + ".stat", violations);
                    if (s.contains("energy") &&
                        (s["energy"].is_array() || s["energy"].is_object())) {
                        violations.push_back(ctx + ": energy entry is not a scalar");
                    }
                    if (s.contains("has_uc") && !s["has_uc"].is_boolean()) {
                        violations.push_back(ctx + ": has_uc flag is not a boolean");
                    }
                }
            }
        } else if (type == "control") {
            expect_keys(j, {"type", "action", "stage"}, ctx, violations);
        } else {
            violations.push_back(ctx + ": unknown message type '" + type + "'");
        }
    }
    return violations;
}

// ---- aggregation ----

nn::ParameterSet fedavg(const std::vector<nn::ParameterSet>& param_sets,
                        const std::vector<double>& weights) {
    if (param_sets.empty()) throw std::invalid_argument("fedavg: no parameter sets");
    if (param_sets.size() != weights.size()) {
        throw std::invalid_argument("fedavg: weight count does not match set count");
    }
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) {
            throw std::invalid_argument("fedavg: weights must be finite and >= 0");
        }
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("fedavg: weights sum to zero");
    for (std::size_t k = 1; k < param_sets.size(); ++k) {
        if (!param_sets[0].combinable_with(param_sets[k])) {
            throw std::invalid_argument(
                "fedavg: parameter sets have mismatched segment names or shapes");
        }
    }

    nn::ParameterSet out = param_sets[0];
    for (std::size_t s = 0; s < out.segments.size(); ++s) {
        auto& seg = out.segments[s];
        bool identical = true;
        for (std::size_t k = 1; identical && k < param_sets.size(); ++k) {
            identical = param_sets[k].segments[s].values == seg.values;
        }
        if (identical) continue;  // average of equal values is exact
        double a0 = weights[0] / total;
        for (double& v : seg.values) v *= a0;
        for (std::size_t k = 1; k < param_sets.size(); ++k) {
            double ak = weights[k] / total;
            const auto& src = param_sets[k].segments[s].values;
            for (std::size_t i = 0; i < src.size(); ++i) seg.values[i] += ak * src[i];
        }
    }
    return out;
}

std::vector<double> compute_weights(
    const std::vector<const data::ClientDataset*>& participants, Stage stage,
    WeightRule stage1_rule) {
    if (participants.empty()) {
        throw std::invalid_argument("compute_weights: empty participant set");
    }
    std::vector<double> w(participants.size());
    double total = 0.0;
    for (std::size_t i = 0; i < participants.size(); ++i) {
        std::size_t n = participants[i]->labeled.size();
        if (stage == Stage::fssl && stage1_rule == WeightRule::all_counts) {
            n += participants[i]->unlabeled.size();
        }
        w[i] = static_cast<double>(n);
        total += w[i];
    }
    if (total <= 0.0) throw std::invalid_argument("compute_weights: zero total count");
    for (double& x : w) x /= total;
    return w;
}

// ---- local training ----

namespace {

struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    int t = 0;
    AdamConfig cfg;

    void step(nn::ParameterSet& params, const std::string& name,
              const std::vector<double>& grad, double lr) {
        auto& seg = params.find(name);
        auto& ms = m[name];
        auto& vs = v[name];
        if (ms.empty()) {
            ms.assign(grad.size(), 0.0);
            vs.assign(grad.size(), 0.0);
        }
        double c1 = 1.0 - std::pow(cfg.beta1, t);
        double c2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * grad[i];
            vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            seg.values[i] -= lr * (ms[i] / c1) / (std::sqrt(vs[i] / c2) + cfg.eps);
        }
    }
};

ad::Tensor gather_features(const std::vector<const data::Sample*>& samples,
                           std::size_t input_dim) {
    ad::Tensor x = ad::Tensor::zeros({samples.size(), input_dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->features.size() != input_dim) {
            throw std::invalid_argument("local_update: sample feature dim mismatch");
        }
        std::copy(samples[i]->features.begin(), samples[i]->features.end(),
                  x.values.begin() + static_cast<std::ptrdiff_t>(i * input_dim));
    }
    return x;
}

std::vector<const data::Sample*> select(const std::vector<const data::Sample*>& pool,
                                        const std::vector<std::size_t>& order,
                                        std::size_t begin, std::size_t end) {
    std::vector<const data::Sample*> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(pool[order[i]]);
    return out;
}

}  // namespace

nn::ParameterSet local_update(const data::ClientDataset& client,
                              const data::ClassLayout& layout,
                              const nn::ParameterSet& theta_in, const nn::ModelSpec& spec,
                              LocalObjective objective, const FederationConfig& cfg,
                              Rng& rng, double* mean_loss) {
    cfg.validate();

    std::vector<const data::Sample*> pool;
    if (objective == LocalObjective::simsiam) {
        for (const auto& s : client.labeled) pool.push_back(&s);
        for (const auto& s : client.unlabeled) pool.push_back(&s);
    } else {
        for (const auto& s : client.labeled) pool.push_back(&s);
    }
    if (pool.empty()) {
        throw std::invalid_argument("local_update: client " +
                                    std::to_string(client.client_id) +
                                    " has no data for this objective");
    }

    double lr = cfg.learning_rate;
    if (objective == LocalObjective::uc_energy) lr = cfg.uc_lr();

    // Baseline label handling: annotated entries keep their value, unknown
    // entries become negatives (or stay masked when configured off).
    auto cc_order = layout.cc_classes();
    std::vector<std::vector<int>> mlc_labels;
    std::vector<std::uint64_t> pos_counts, neg_counts;
    if (objective == LocalObjective::mlc_weighted_bce) {
        pos_counts.assign(layout.num_classes, 0);
        neg_counts.assign(layout.num_classes, 0);
        for (const auto* s : pool) {
            std::vector<int> row(layout.num_classes, cfg.mlc_unknown_as_negative ? 0 : -1);
            for (int c = 0; c < layout.num_classes; ++c) {
                if (s->labels[c] != data::kUnknownLabel) row[c] = s->labels[c];
            }
            for (int c = 0; c < layout.num_classes; ++c) {
                if (row[c] == 1) ++pos_counts[c];
                else if (row[c] == 0) ++neg_counts[c];
            }
            mlc_labels.push_back(std::move(row));
        }
    }

    nn::ParameterSet theta = theta_in;
    AdamState adam;
    adam.cfg = cfg.adam;

    double loss_sum = 0.0;
    std::size_t loss_batches = 0;

    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::vector<std::size_t> order = rng.permutation(pool.size());
        for (std::size_t begin = 0; begin < pool.size(); begin += cfg.batch_size) {
            std::size_t end = std::min(begin + cfg.batch_size, pool.size());
            auto batch = select(pool, order, begin, end);

            ad::Tape tape;
            nn::GraphParams gp;
            ad::NodeId loss_node = 0;

            if (objective == LocalObjective::simsiam) {
                // An augmented view can land on an exact zero embedding
                // (total dropout, or a dead relu layer at narrow widths),
                // which the cosine loss rejects. Redraw such batches; the
                // retry consumes the same rng stream, so runs stay
                // deterministic.
                bool built = false;
                for (int attempt = 0; attempt < 16 && !built; ++attempt) {
                    ad::Tensor v1 = ad::Tensor::zeros({batch.size(), spec.input_dim});
                    ad::Tensor v2 = ad::Tensor::zeros({batch.size(), spec.input_dim});
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        auto [a, b] = data::make_views(*batch[i], cfg.aug, rng);
                        std::copy(a.begin(), a.end(),
                                  v1.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
                        std::copy(b.begin(), b.end(),
                                  v2.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
                    }
                    tape = ad::Tape();
                    auto g = nn::build_simsiam_graph(tape, theta, spec, v1, v2);
                    try {
                        loss_node = losses::simsiam_loss_node(tape, g.p1, g.z1_detached,
                                                              g.p2, g.z2_detached);
                        gp = std::move(g.params);
                        built = true;
                    } catch (const std::invalid_argument&) {
                        if (attempt == 15) throw;
                    }
                }
            } else {
                ad::Tensor x = gather_features(batch, spec.input_dim);
                auto g = nn::build_classifier_graph(tape, theta, spec, x);
                if (objective == LocalObjective::cc_energy) {
                    ad::Tensor labels = ad::Tensor::zeros({batch.size(), cc_order.size() + 1});
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        auto enc = data::encode_cc_label(*batch[i], cc_order);
                        for (std::size_t c = 0; c < enc.bits.size(); ++c) {
                            labels.at(i, c) = enc.bits[c];
                        }
                    }
                    loss_node = losses::total_cc_loss_node(tape, g.logits, labels, cfg.energy);
                } else if (objective == LocalObjective::uc_energy) {
                    loss_node = losses::hinge_uc_loss_node(tape, g.logits, cfg.energy);
                } else {  // mlc_weighted_bce
                    ad::Tensor labels01 = ad::Tensor::zeros(
                        {batch.size(), static_cast<std::size_t>(layout.num_classes)});
                    std::vector<std::vector<int>> rows;
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        const auto& full = mlc_labels[order[begin + i]];
                        rows.push_back(full);
                        for (int c = 0; c < layout.num_classes; ++c) {
                            labels01.at(i, static_cast<std::size_t>(c)) =
                                full[c] == 1 ? 1.0 : 0.0;
                        }
                    }
                    ad::Tensor weights = losses::weighted_bce_weights(rows, pos_counts,
                                                                      neg_counts);
                    loss_node = losses::weighted_bce_node(tape, g.logits, labels01, weights);
                }
                gp = std::move(g.params);
            }

            auto grads = tape.backward(loss_node);
            ++adam.t;
            for (std::size_t p = 0; p < gp.names.size(); ++p) {
                adam.step(theta, gp.names[p], grads[gp.nodes[p]].values, lr);
            }
            loss_sum += tape.value(loss_node).values[0];
            ++loss_batches;
        }
    }
    if (mean_loss) {
        *mean_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    }
    return theta;
}

nn::ParameterSet local_update(const data::ClientDataset& client,
                              const data::ClassLayout& layout,
                              const nn::ParameterSet& theta_in, const nn::ModelSpec& spec,
                              Stage stage, const FederationConfig& cfg, Rng& rng,
                              double* mean_loss) {
    LocalObjective objective;
    if (stage == Stage::fssl) {
        objective = LocalObjective::simsiam;
    } else {
        objective = client.is_uc_client(layout) ? LocalObjective::uc_energy
                                                : LocalObjective::cc_energy;
    }
    return local_update(client, layout, theta_in, spec, objective, cfg, rng, mean_loss);
}

// ---- federated stages ----

namespace {

struct RoundOutcome {
    std::vector<nn::ParameterSet> thetas;
    std::vector<double> losses;
    bool sync_ok = true;
};

// One synchronize/train round over the given participants. Client work may
// run concurrently; results are collected in participant order so the
// aggregation below is bitwise order-independent.
RoundOutcome run_round(const std::vector<const data::ClientDataset*>& participants,
                       const data::ClassLayout& layout, const nn::ParameterSet& theta0,
                       const nn::ModelSpec& spec, LocalObjective objective,
                       const FederationConfig& cfg, std::uint64_t seed,
                       std::uint64_t stage_tag, int round) {
    RoundOutcome outcome;
    outcome.thetas.resize(participants.size());
    outcome.losses.resize(participants.size(), 0.0);
    std::vector<char> sync_ok(participants.size(), 1);

    auto work = [&](std::size_t i) {
        const data::ClientDataset& client = *participants[i];
        nn::ParameterSet theta_k = theta0;  // synchronize with the PS
        sync_ok[i] = theta_k.bitwise_equal(theta0) ? 1 : 0;
        Rng rng(derive_seed(seed, stage_tag, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(client.client_id)));
        LocalObjective obj = objective;
        if (objective == LocalObjective::cc_energy && client.is_uc_client(layout)) {
            obj = LocalObjective::uc_energy;
        }
        outcome.thetas[i] = local_update(client, layout, theta_k, spec, obj, cfg, rng,
                                         &outcome.losses[i]);
    };

    if (cfg.parallel_clients && participants.size() > 1) {
        std::vector<std::future<void>> futures;
        futures.reserve(participants.size());
        for (std::size_t i = 0; i < participants.size(); ++i) {
            futures.push_back(std::async(std::launch::async, work, i));
        }
        for (auto& f : futures) f.get();
    } else {
        for (std::size_t i = 0; i < participants.size(); ++i) work(i);
    }
    for (char ok : sync_ok) outcome.sync_ok &= ok != 0;
    return outcome;
}

void log_round(MessageChannel* channel, int round, const nn::ParameterSet& theta0,
               const std::vector<const data::ClientDataset*>& participants,
               const RoundOutcome& outcome) {
    if (!channel) return;
    for (std::size_t i = 0; i < participants.size(); ++i) {
        channel->send(ParamsDown{round, theta0});
    }
    for (std::size_t i = 0; i < participants.size(); ++i) {
        channel->send(ParamsUp{participants[i]->client_id, round, outcome.thetas[i],
                               participants[i]->labeled.size() +
                                   participants[i]->unlabeled.size()});
    }
}

double embedding_std(const nn::ParameterSet& params, const nn::ModelSpec& spec,
                     const ad::Tensor& features) {
    ad::Tensor z = nn::simsiam_project_batch(params, spec, features);
    std::size_t n = z.rows(), d = z.cols();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += z.at(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double dev = z.at(r, c) - mean;
            var += dev * dev;
        }
        total += std::sqrt(var / static_cast<double>(n - 1));
    }
    return total / static_cast<double>(d);
}

double weighted_mean(const std::vector<double>& values, const std::vector<double>& weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += weights[i] * values[i];
    return acc;
}

}  // namespace

StageResult run_fssl_stage(const std::vector<data::ClientDataset>& clients,
                           const data::ClassLayout& layout, const nn::ModelSpec& spec,
                           const FederationConfig& cfg, std::uint64_t seed,
                           MessageChannel* channel, const ad::Tensor* monitor_features) {
    cfg.validate();
    if (clients.empty()) throw std::invalid_argument("run_fssl_stage: no clients");
    for (const auto& c : clients) {
        if (c.labeled.empty() && c.unlabeled.empty()) {
            throw std::invalid_argument("run_fssl_stage: client " +
                                        std::to_string(c.client_id) + " has no samples");
        }
    }

    std::vector<const data::ClientDataset*> participants;
    for (const auto& c : clients) participants.push_back(&c);
    std::sort(participants.begin(), participants.end(),
              [](const data::ClientDataset* a, const data::ClientDataset* b) {
                  return a->client_id < b->client_id;
              });

    if (channel) channel->send(Control{"start", static_cast<int>(Stage::fssl)});
    StageResult result;
    result.params = nn::init_params(spec, derive_seed(seed, 0, 0, 0));
    auto weights = compute_weights(participants, Stage::fssl, cfg.stage1_weight_rule);

    for (int t = 1; t <= cfg.fssl_rounds; ++t) {
        auto outcome = run_round(participants, layout, result.params, spec,
                                 LocalObjective::simsiam, cfg, seed,
                                 static_cast<std::uint64_t>(Stage::fssl), t);
        result.sync_invariant_held &= outcome.sync_ok;
        log_round(channel, t, result.params, participants, outcome);
        result.params = fedavg(outcome.thetas, weights);

        RoundDiag diag;
        diag.round = t;
        diag.mean_loss = weighted_mean(outcome.losses, weights);
        diag.param_norm = result.params.l2_norm();
        if (monitor_features) {
            diag.embedding_std = embedding_std(result.params, spec, *monitor_features);
        }
        result.rounds.push_back(diag);
    }
    if (channel) channel->send(Control{"stop", static_cast<int>(Stage::fssl)});
    result.warmup_params = result.params;
    return result;
}

StageResult run_psl_stage(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout,
                          const nn::ParameterSet& theta_init, const nn::ModelSpec& spec,
                          const FederationConfig& cfg, std::uint64_t seed,
                          MessageChannel* channel) {
    cfg.validate();
    auto cc_order = layout.cc_classes();
    if (spec.head_out_dim != cc_order.size() + 1) {
        throw std::invalid_argument("run_psl_stage: head_out_dim must be C_c+1 = " +
                                    std::to_string(cc_order.size() + 1));
    }

    std::vector<const data::ClientDataset*> all, warmup;
    for (const auto& c : clients) all.push_back(&c);
    std::sort(all.begin(), all.end(),
              [](const data::ClientDataset* a, const data::ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    for (const auto* c : all) {
        if (!c->is_uc_client(layout)) warmup.push_back(c);
    }
    if (warmup.empty()) {
        throw std::invalid_argument("run_psl_stage: no common-class clients");
    }

    if (channel) channel->send(Control{"start", static_cast<int>(Stage::psl)});
    StageResult result;
    result.params = theta_init;
    result.warmup_params = theta_init;

    for (int t = 1; t <= cfg.rounds; ++t) {
        bool in_warmup = t <= cfg.warmup_rounds;
        const auto& participants = in_warmup ? warmup : all;
        auto weights = compute_weights(participants, Stage::psl);
        auto outcome = run_round(participants, layout, result.params, spec,
                                 LocalObjective::cc_energy, cfg, seed,
                                 static_cast<std::uint64_t>(Stage::psl), t);
        result.sync_invariant_held &= outcome.sync_ok;
        log_round(channel, t, result.params, participants, outcome);
        result.params = fedavg(outcome.thetas, weights);

        RoundDiag diag;
        diag.round = t;
        diag.mean_loss = weighted_mean(outcome.losses, weights);
        diag.param_norm = result.params.l2_norm();
        result.rounds.push_back(diag);
        if (t == cfg.warmup_rounds) result.warmup_params = result.params;
    }
    if (channel) channel->send(Control{"stop", static_cast<int>(Stage::psl)});
    return result;
}

StageResult run_mlc_stage(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout,
                          const nn::ParameterSet& theta_init, const nn::ModelSpec& spec,
                          const FederationConfig& cfg, std::uint64_t seed,
                          MessageChannel* channel) {
    cfg.validate();
    if (spec.head_out_dim != static_cast<std::size_t>(layout.num_classes)) {
        throw std::invalid_argument("run_mlc_stage: head_out_dim must equal C");
    }
    std::vector<const data::ClientDataset*> participants;
    for (const auto& c : clients) participants.push_back(&c);
    std::sort(participants.begin(), participants.end(),
              [](const data::ClientDataset* a, const data::ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    if (participants.empty()) throw std::invalid_argument("run_mlc_stage: no clients");

    if (channel) channel->send(Control{"start", 3});
    StageResult result;
    result.params = theta_init;
    result.warmup_params = theta_init;
    auto weights = compute_weights(participants, Stage::psl);

    for (int t = 1; t <= cfg.rounds; ++t) {
        auto outcome = run_round(participants, layout, result.params, spec,
                                 LocalObjective::mlc_weighted_bce, cfg, seed, 3, t);
        result.sync_invariant_held &= outcome.sync_ok;
        log_round(channel, t, result.params, participants, outcome);
        result.params = fedavg(outcome.thetas, weights);

        RoundDiag diag;
        diag.round = t;
        diag.mean_loss = weighted_mean(outcome.losses, weights);
        diag.param_norm = result.params.l2_norm();
        result.rounds.push_back(diag);
    }
    if (channel) channel->send(Control{"stop", 3});
    return result;
}

// ---- metadata collection ----

Metadata collect_metadata(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout, const nn::ParameterSet& params,
                          const nn::ModelSpec& spec, const losses::EnergyConfig& energy,
                          MessageChannel* channel) {
    energy.validate();
    std::vector<const data::ClientDataset*> ordered;
    for (const auto& c : clients) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const data::ClientDataset* a, const data::ClientDataset* b) {
                  return a->client_id < b->client_id;
              });

    Metadata meta;
    for (const auto* client : ordered) {
        if (client->labeled.empty()) continue;
        std::vector<const data::Sample*> pool;
        for (const auto& s : client->labeled) pool.push_back(&s);
        ad::Tensor x = gather_features(pool, spec.input_dim);
        ad::Tensor logits = nn::classify_logits_batch(params, spec, x);

        bool is_uc = client->is_uc_client(layout);
        int uc_class = is_uc ? client->uc_class(layout) : -1;

        EnergyStatsMsg msg;
        msg.client_id = client->client_id;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            std::vector<double> row(
                logits.values.begin() + static_cast<std::ptrdiff_t>(i * logits.cols()),
                logits.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * logits.cols()));
            bool has_uc = is_uc && pool[i]->labels[uc_class] == 1;
            msg.stats.push_back({losses::joint_energy(row, energy.tau), has_uc});
        }

        if (is_uc) {
            ad::Tensor feats = nn::extract_features_batch(params, spec, x);
            std::vector<std::vector<double>> pos, neg;
            for (std::size_t i = 0; i < pool.size(); ++i) {
                std::vector<double> row(
                    feats.values.begin() + static_cast<std::ptrdiff_t>(i * feats.cols()),
                    feats.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * feats.cols()));
                (pool[i]->labels[uc_class] == 1 ? pos : neg).push_back(std::move(row));
            }
            if (pos.empty()) {
                throw std::invalid_argument("collect_metadata: UC client " +
                                            std::to_string(client->client_id) +
                                            " has no positive examples");
            }
            infer::Prototype proto = infer::compute_prototypes(pos, neg, uc_class);
            if (channel) channel->send(PrototypeMeta{client->client_id, proto});
            meta.prototypes.push_back(std::move(proto));
        }

        meta.stats.insert(meta.stats.end(), msg.stats.begin(), msg.stats.end());
        if (channel) channel->send(std::move(msg));
    }
    return meta;
}

}  // namespace fedfew::fed
