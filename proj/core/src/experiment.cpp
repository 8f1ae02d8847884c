#include "fedfew/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fedfew::experiment {

nn::ModelSpec psl_model_spec(const config::ExperimentConfig& cfg) {
    nn::ModelSpec spec;
    spec.input_dim = cfg.data.input_dim;
    spec.head_out_dim = cfg.data.layout.cc_classes().size() + 1;
    return spec;
}

nn::ModelSpec mlc_model_spec(const config::ExperimentConfig& cfg) {
    nn::ModelSpec spec;
    spec.input_dim = cfg.data.input_dim;
    spec.head_out_dim = static_cast<std::size_t>(cfg.data.layout.num_classes);
    return spec;
}

nn::ParameterSet transplant_trunk(const nn::ParameterSet& pretrained,
                                  nn::ParameterSet fresh, const nn::ModelSpec& spec) {
    for (const std::string& name : nn::trunk_segment_names(spec)) {
        fresh.find(name).values = pretrained.find(name).values;
    }
    return fresh;
}

std::vector<metrics::EnergySample> labeled_energy_samples(
    const data::FederatedDataset& dataset, const data::ClassLayout& layout) {
    std::vector<metrics::EnergySample> out;
    for (const auto& client : dataset.clients) {
        bool is_uc = client.is_uc_client(layout);
        int uc_class = is_uc ? client.uc_class(layout) : -1;
        for (const auto& s : client.labeled) {
            metrics::EnergySample es;
            es.sample_id = s.id;
            es.features = s.features;
            es.has_uc = is_uc && s.labels[uc_class] == 1;
            es.split = "labeled";
            out.push_back(std::move(es));
        }
    }
    return out;
}

std::vector<const data::Sample*> TestBlocks::positives(
    const std::vector<data::Sample>& test, int class_id) const {
    std::size_t block = pos_per_class + neg_per_class;
    std::size_t begin = static_cast<std::size_t>(class_id) * block;
    std::vector<const data::Sample*> out;
    for (std::size_t i = begin; i < begin + pos_per_class && i < test.size(); ++i) {
        out.push_back(&test[i]);
    }
    return out;
}

std::vector<const data::Sample*> TestBlocks::negatives(
    const std::vector<data::Sample>& test, int class_id) const {
    std::size_t block = pos_per_class + neg_per_class;
    std::size_t begin = static_cast<std::size_t>(class_id) * block + pos_per_class;
    std::vector<const data::Sample*> out;
    for (std::size_t i = begin; i < begin + neg_per_class && i < test.size(); ++i) {
        out.push_back(&test[i]);
    }
    return out;
}

infer::UcDetector fit_detector(const data::FederatedDataset& dataset,
                               const data::ClassLayout& layout,
                               const nn::ParameterSet& params, const nn::ModelSpec& spec,
                               const losses::EnergyConfig& energy, infer::Metric metric,
                               fed::MessageChannel* channel) {
    auto meta = fed::collect_metadata(dataset.clients, layout, params, spec, energy,
                                      channel);
    infer::UcDetector detector;
    detector.metric = metric;
    detector.prototypes = std::move(meta.prototypes);
    detector.threshold = infer::select_threshold(meta.stats).threshold;
    return detector;
}

double MethodOutput::mean_cc_auroc() const {
    if (cc_auroc.empty()) throw std::logic_error("method has no CC AUROC values");
    double acc = 0.0;
    for (const auto& [c, v] : cc_auroc) acc += v;
    return acc / static_cast<double>(cc_auroc.size());
}

// ---- SeedRunner ----

SeedRunner::SeedRunner(const config::ExperimentConfig& cfg, int seed_index)
    : cfg_(cfg),
      cell_seed_(derive_seed(cfg.master_seed, 0xCE11, static_cast<std::uint64_t>(seed_index))),
      psl_spec_(psl_model_spec(cfg)),
      mlc_spec_(mlc_model_spec(cfg)) {}

const data::FederatedDataset& SeedRunner::dataset() {
    if (!dataset_) {
        data::SyntheticConfig dcfg = cfg_.data;
        dcfg.seed = derive_seed(cell_seed_, kSeedData);
        dataset_ = data::generate_synthetic(dcfg);
    }
    return *dataset_;
}

const nn::ParameterSet& SeedRunner::pretrained() {
    if (!pretrained_) {
        const auto& ds = dataset();
        auto result = fed::run_fssl_stage(ds.clients, cfg_.data.layout, psl_spec_,
                                          cfg_.federation, derive_seed(cell_seed_, kSeedFssl));
        pretrained_ = std::move(result.params);
    }
    return *pretrained_;
}

const fed::StageResult& SeedRunner::mlc_plain_result() {
    if (!mlc_plain_) {
        auto init = nn::init_params(mlc_spec_, derive_seed(cell_seed_, kSeedInit));
        mlc_plain_ = fed::run_mlc_stage(dataset().clients, cfg_.data.layout, init,
                                        mlc_spec_, cfg_.federation,
                                        derive_seed(cell_seed_, kSeedTrain, 1));
    }
    return *mlc_plain_;
}

const fed::StageResult& SeedRunner::mlc_fssl_result() {
    if (!mlc_fssl_) {
        auto init = transplant_trunk(
            pretrained(), nn::init_params(mlc_spec_, derive_seed(cell_seed_, kSeedInit)),
            mlc_spec_);
        mlc_fssl_ = fed::run_mlc_stage(dataset().clients, cfg_.data.layout, init,
                                       mlc_spec_, cfg_.federation,
                                       derive_seed(cell_seed_, kSeedTrain, 2));
    }
    return *mlc_fssl_;
}

const fed::StageResult& SeedRunner::psl_result(bool ebm) {
    auto& slot = ebm ? psl_ebm_ : psl_noebm_;
    if (!slot) {
        auto init = transplant_trunk(
            pretrained(), nn::init_params(psl_spec_, derive_seed(cell_seed_, kSeedInit)),
            psl_spec_);
        fed::FederationConfig fcfg = cfg_.federation;
        if (!ebm) fcfg.energy.lambda = 0.0;
        slot = fed::run_psl_stage(dataset().clients, cfg_.data.layout, init, psl_spec_,
                                  fcfg, derive_seed(cell_seed_, kSeedTrain, ebm ? 3 : 4));
    }
    return *slot;
}

MethodOutput SeedRunner::eval_fedfew(const fed::StageResult& stage, infer::Metric metric,
                                     config::Method method) {
    const auto& ds = dataset();
    const auto& layout = cfg_.data.layout;
    fed::FederationConfig fcfg = cfg_.federation;
    if (method == config::Method::fedfew_noebm) fcfg.energy.lambda = 0.0;

    auto detector = fit_detector(ds, layout, stage.params, psl_spec_, fcfg.energy, metric);

    MethodOutput out;
    out.method = method;
    TestBlocks blocks{cfg_.data.test_pos_per_class, cfg_.data.test_neg_per_class};

    for (int c : layout.uc_classes) {
        metrics::BinaryCounts counts;
        for (const auto* s : blocks.positives(ds.test, c)) {
            auto pred = infer::predict_full(s->features, stage.params, psl_spec_, layout,
                                            detector, fcfg.energy, cfg_.cc_threshold);
            counts.add(pred[c] == 1, true);
        }
        for (const auto* s : blocks.negatives(ds.test, c)) {
            auto pred = infer::predict_full(s->features, stage.params, psl_spec_, layout,
                                            detector, fcfg.energy, cfg_.cc_threshold);
            counts.add(pred[c] == 1, false);
        }
        out.uc_counts[c] = counts;
    }

    auto cc_order = layout.cc_classes();
    for (std::size_t i = 0; i < cc_order.size(); ++i) {
        int c = cc_order[i];
        std::vector<double> pos_scores, neg_scores;
        for (const auto* s : blocks.positives(ds.test, c)) {
            pos_scores.push_back(
                nn::classify_logits(stage.params, psl_spec_, s->features)[i + 1]);
        }
        for (const auto* s : blocks.negatives(ds.test, c)) {
            neg_scores.push_back(
                nn::classify_logits(stage.params, psl_spec_, s->features)[i + 1]);
        }
        out.cc_auroc[c] = metrics::auroc(pos_scores, neg_scores);
    }

    auto energy_pool = labeled_energy_samples(ds, layout);
    out.energy_gap_pre = metrics::energy_report(energy_pool, stage.warmup_params,
                                                psl_spec_, fcfg.energy.tau, "pre")
                             .gap;
    out.energy_gap_post =
        metrics::energy_report(energy_pool, stage.params, psl_spec_, fcfg.energy.tau,
                               "post")
            .gap;
    out.has_gap = true;
    return out;
}

MethodOutput SeedRunner::eval_mlc(const fed::StageResult& stage, config::Method method) {
    const auto& ds = dataset();
    const auto& layout = cfg_.data.layout;
    MethodOutput out;
    out.method = method;
    TestBlocks blocks{cfg_.data.test_pos_per_class, cfg_.data.test_neg_per_class};

    auto score = [&](const data::Sample& s, int class_id) {
        auto logits = nn::classify_logits(stage.params, mlc_spec_, s.features);
        return logits[static_cast<std::size_t>(class_id)];
    };

    for (int c : layout.uc_classes) {
        metrics::BinaryCounts counts;
        double cut = std::log(cfg_.cc_threshold / (1.0 - cfg_.cc_threshold));
        for (const auto* s : blocks.positives(ds.test, c)) counts.add(score(*s, c) > cut, true);
        for (const auto* s : blocks.negatives(ds.test, c)) counts.add(score(*s, c) > cut, false);
        out.uc_counts[c] = counts;
    }
    for (int c : layout.cc_classes()) {
        std::vector<double> pos_scores, neg_scores;
        for (const auto* s : blocks.positives(ds.test, c)) pos_scores.push_back(score(*s, c));
        for (const auto* s : blocks.negatives(ds.test, c)) neg_scores.push_back(score(*s, c));
        out.cc_auroc[c] = metrics::auroc(pos_scores, neg_scores);
    }
    return out;
}

MethodOutput SeedRunner::eval_nearest_neighbor(const nn::ParameterSet& params,
                                               config::Method method) {
    if (!cfg_.allow_privacy_violation) {
        throw std::runtime_error(
            "method " + std::string(config::method_name(method)) +
            " pools raw per-sample features at the server and cannot run in a "
            "federated system; pass --allow-privacy-violation to run it as a "
            "comparator");
    }
    const auto& ds = dataset();
    const auto& layout = cfg_.data.layout;
    MethodOutput out;
    out.method = method;
    TestBlocks blocks{cfg_.data.test_pos_per_class, cfg_.data.test_neg_per_class};

    for (const auto& client : ds.clients) {
        if (!client.is_uc_client(layout)) continue;
        int c = client.uc_class(layout);
        // The hypothetical local classifier: every labeled example's features
        // leave the client (hence the flag above).
        std::vector<std::pair<std::vector<double>, int>> bank;
        for (const auto& s : client.labeled) {
            bank.emplace_back(nn::extract_features(params, psl_spec_, s.features),
                              s.labels[c]);
        }
        auto classify = [&](const data::Sample& s) {
            auto f = nn::extract_features(params, psl_spec_, s.features);
            double best = 0.0;
            int label = 0;
            bool first = true;
            for (const auto& [bf, bl] : bank) {
                double d = infer::distance(f, bf, cfg_.metric);
                if (first || d < best) {
                    best = d;
                    label = bl;
                    first = false;
                }
            }
            return label == 1;
        };
        metrics::BinaryCounts counts;
        for (const auto* s : blocks.positives(ds.test, c)) counts.add(classify(*s), true);
        for (const auto* s : blocks.negatives(ds.test, c)) counts.add(classify(*s), false);
        out.uc_counts[c] = counts;
    }
    return out;
}

MethodOutput SeedRunner::run(config::Method method) {
    switch (method) {
        case config::Method::mlc_plain:
            return eval_mlc(mlc_plain_result(), method);
        case config::Method::mlc_fssl:
            return eval_mlc(mlc_fssl_result(), method);
        case config::Method::nn_fssl:
            return eval_nearest_neighbor(pretrained(), method);
        case config::Method::nn_mlc_fssl: {
            // features from the fine-tuned trunk of the MLC-with-FSSL baseline
            auto params = transplant_trunk(mlc_fssl_result().params,
                                           nn::init_params(psl_spec_, 0), psl_spec_);
            return eval_nearest_neighbor(params, method);
        }
        case config::Method::fedfew_noebm:
            return eval_fedfew(psl_result(false), cfg_.metric, method);
        case config::Method::fedfew_ebm:
            return eval_fedfew(psl_result(true), cfg_.metric, method);
    }
    throw std::logic_error("unknown method");
}

MethodOutput SeedRunner::run_fedfew_ebm_with_metric(infer::Metric metric) {
    return eval_fedfew(psl_result(true), metric, config::Method::fedfew_ebm);
}

// ---- compare ----

namespace {

std::vector<CompareRow> rows_for(const MethodOutput& out,
                                 const data::ClassLayout& layout) {
    std::vector<CompareRow> rows;
    for (int c : layout.uc_classes) {
        auto it = out.uc_counts.find(c);
        if (it == out.uc_counts.end()) continue;
        auto cm = metrics::confusion_metrics(it->second);
        CompareRow row;
        row.method = config::method_name(out.method);
        row.class_id = c;
        row.kind = "uc";
        row.accuracy = cm.accuracy;
        row.precision = cm.precision;
        row.recall = cm.recall;
        row.f1 = cm.f1;
        row.has_cm = true;
        rows.push_back(row);
    }
    for (const auto& [c, v] : out.cc_auroc) {
        CompareRow row;
        row.method = config::method_name(out.method);
        row.class_id = c;
        row.kind = "cc";
        row.auroc = v;
        row.has_auroc = true;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

CompareSummary run_compare(const config::ExperimentConfig& cfg) {
    CompareSummary summary;
    for (int s = 0; s < cfg.repeats; ++s) {
        SeedRunner runner(cfg, s);
        std::vector<CompareRow> seed_rows;
        std::vector<MethodOutput> outputs;
        for (config::Method m : cfg.methods) {
            MethodOutput out = runner.run(m);
            auto rows = rows_for(out, cfg.data.layout);
            seed_rows.insert(seed_rows.end(), rows.begin(), rows.end());
            outputs.push_back(std::move(out));
        }
        summary.per_seed_rows.push_back(std::move(seed_rows));
        summary.per_seed_raw.push_back(std::move(outputs));
    }

    // Mean over seeds, keyed by (method, class, kind); every seed emits the
    // same row set, so averaging over per_seed_rows[0]'s order is stable.
    for (const CompareRow& base : summary.per_seed_rows[0]) {
        CompareRow mean = base;
        mean.accuracy = mean.precision = mean.recall = mean.f1 = mean.auroc = 0.0;
        int found = 0;
        for (const auto& rows : summary.per_seed_rows) {
            for (const CompareRow& r : rows) {
                if (r.method == base.method && r.class_id == base.class_id &&
                    r.kind == base.kind) {
                    mean.accuracy += r.accuracy;
                    mean.precision += r.precision;
                    mean.recall += r.recall;
                    mean.f1 += r.f1;
                    mean.auroc += r.auroc;
                    ++found;
                }
            }
        }
        double n = static_cast<double>(found);
        mean.accuracy /= n;
        mean.precision /= n;
        mean.recall /= n;
        mean.f1 /= n;
        mean.auroc /= n;
        summary.mean_rows.push_back(mean);
    }
    return summary;
}

void write_compare_csv(const std::vector<CompareRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("compare: cannot write " + path);
    os << "method,class_id,class_kind,accuracy,precision,recall,f1,auroc\n";
    char buf[40];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    for (const CompareRow& r : rows) {
        os << r.method << ',' << r.class_id << ',' << r.kind << ',';
        if (r.has_cm) {
            os << fmt(r.accuracy) << ',' << fmt(r.precision) << ',' << fmt(r.recall) << ','
               << fmt(r.f1) << ',';
        } else {
            os << ",,,,";
        }
        if (r.has_auroc) os << fmt(r.auroc);
        os << "\n";
    }
}

ProbeSplit make_probe_split(const config::ExperimentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t dim = cfg.data.input_dim;
    int classes = cfg.probe_classes;

    std::vector<std::vector<double>> dirs(static_cast<std::size_t>(classes));
    for (auto& v : dirs) {
        v.resize(dim);
        double sq = 0.0;
        for (double& x : v) {
            x = rng.normal();
            sq += x * x;
        }
        double norm = std::sqrt(sq);
        for (double& x : v) x /= norm;
    }

    ProbeSplit split;
    for (int c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < cfg.probe_per_class; ++i) {
            metrics::ProbeSample s;
            s.label = c;
            s.features.resize(dim);
            for (std::size_t k = 0; k < dim; ++k) {
                s.features[k] = cfg.data.signal_scale * dirs[static_cast<std::size_t>(c)][k] +
                                cfg.data.noise_sigma * rng.normal();
            }
            (i % 2 == 0 ? split.train : split.test).push_back(std::move(s));
        }
    }
    return split;
}

}  // namespace fedfew::experiment
