// fedfew command line: batch experiment driver for the federated few-shot
// pipeline. Subcommands stage artifacts through an output directory:
//
//   gen-data      write the synthetic federation as per-client CSVs
//   pretrain      federated SimSiam pre-training -> pretrain.ckpt
//   train         stage-2 federated training -> train.ckpt (+ warm-up ckpt)
//   fit-detector  energy threshold + prototypes -> detector.txt
//   eval          held-out metrics CSV
//   energy-report pre/post energy CSV for density plots
//   compare       methods x seeds summary tables
//   probe         linear classification protocol on frozen features

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fedfew/config.hpp"
#include "fedfew/data.hpp"
#include "fedfew/experiment.hpp"
#include "fedfew/federation.hpp"
#include "fedfew/inference.hpp"
#include "fedfew/metrics.hpp"
#include "fedfew/nn.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedfew;

namespace {

enum ExitCode {
    kOk = 0,
    kUsage = 2,
    kConfig = 3,
    kPrerequisite = 4,
    kIo = 5,
    kData = 6,
    kPrivacy = 7,
};

struct CliError : std::runtime_error {
    ExitCode code;
    const char* cls;
    CliError(ExitCode c, const char* k, const std::string& msg)
        : std::runtime_error(msg), code(c), cls(k) {}
};

struct Args {
    std::string subcommand;
    std::string config_path;
    std::string method = "fedfew_ebm";
    config::Overrides overrides;
};

void usage(std::ostream& os) {
    os << "usage: fedfew <subcommand> [--config PATH] [--out DIR] [--method NAME]\n"
          "              [--metric NAME] [--seed N] [--allow-privacy-violation]\n"
          "              [--section.key=value ...]\n"
          "subcommands: gen-data pretrain train fit-detector eval energy-report\n"
          "             compare probe\n";
}

Args parse_args(int argc, char** argv) {
    if (argc < 2) throw CliError(kUsage, "usage", "missing subcommand");
    Args args;
    args.subcommand = argv[1];
    for (int i = 2; i < argc; ++i) {
        std::string arg = argv[i];
        auto value_of = [&](const std::string& flag) {
            std::size_t eq = arg.find('=');
            if (eq != std::string::npos) return arg.substr(eq + 1);
            if (i + 1 >= argc) {
                throw CliError(kUsage, "usage", flag + " needs a value");
            }
            return std::string(argv[++i]);
        };
        if (arg.rfind("--config", 0) == 0 && (arg.size() == 8 || arg[8] == '=')) {
            args.config_path = value_of("--config");
        } else if (arg.rfind("--out", 0) == 0 && (arg.size() == 5 || arg[5] == '=')) {
            args.overrides.emplace_back("experiment.output_dir", value_of("--out"));
        } else if (arg.rfind("--method", 0) == 0 && (arg.size() == 8 || arg[8] == '=')) {
            args.method = value_of("--method");
        } else if (arg.rfind("--metric", 0) == 0 && (arg.size() == 8 || arg[8] == '=')) {
            args.overrides.emplace_back("inference.metric", value_of("--metric"));
        } else if (arg.rfind("--seed", 0) == 0 && (arg.size() == 6 || arg[6] == '=')) {
            args.overrides.emplace_back("experiment.master_seed", value_of("--seed"));
        } else if (arg == "--allow-privacy-violation") {
            args.overrides.emplace_back("experiment.allow_privacy_violation", "true");
        } else if (arg.rfind("--", 0) == 0 && arg.find('=') != std::string::npos) {
            std::size_t eq = arg.find('=');
            args.overrides.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else {
            throw CliError(kUsage, "usage", "unrecognized argument '" + arg + "'");
        }
    }
    return args;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CliError(kIo, "io", "cannot hash missing file " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

struct Manifest {
    json j;

    Manifest(const std::string& subcommand, const config::ExperimentConfig& cfg) {
        j["subcommand"] = subcommand;
        j["master_seed"] = cfg.master_seed;
        j["config"] = config_to_json(cfg);
        j["artifacts"] = json::object();
    }

    void add_artifact(const std::string& name, const std::string& path) {
        char hex[24];
        std::snprintf(hex, sizeof(hex), "0x%016llx",
                      static_cast<unsigned long long>(fnv1a64_file(path)));
        j["artifacts"][name] = {{"path", path}, {"fnv1a64", hex}};
    }

    void add_rounds(const std::vector<fed::RoundDiag>& rounds) {
        json arr = json::array();
        for (const auto& r : rounds) {
            json row = {{"round", r.round},
                        {"mean_loss", r.mean_loss},
                        {"param_norm", r.param_norm}};
            if (r.embedding_std >= 0.0) row["embedding_std"] = r.embedding_std;
            arr.push_back(row);
        }
        j["rounds"] = arr;
    }

    void add_messages(const fed::MessageChannel& channel) {
        j["messages"] = channel.counts();
    }

    void write(const std::string& path) {
        std::ofstream os(path);
        if (!os) throw CliError(kIo, "io", "cannot write manifest " + path);
        os << j.dump(2) << "\n";
    }
};

fs::path out_dir(const config::ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    return cfg.output_dir;
}

std::string require_artifact(const config::ExperimentConfig& cfg, const char* file,
                             const char* producer) {
    fs::path p = fs::path(cfg.output_dir) / file;
    if (!fs::exists(p)) {
        throw CliError(kPrerequisite, "prerequisite",
                       std::string("missing ") + file + "; run '" + producer + "' first");
    }
    return p.string();
}

data::FederatedDataset load_required_dataset(const config::ExperimentConfig& cfg) {
    fs::path dir = fs::path(cfg.output_dir) / "dataset";
    if (!fs::is_directory(dir)) {
        throw CliError(kPrerequisite, "prerequisite",
                       "missing dataset directory; run 'gen-data' first");
    }
    return data::load_dataset(dir.string());
}

data::SyntheticConfig data_config(const config::ExperimentConfig& cfg) {
    data::SyntheticConfig dcfg = cfg.data;
    dcfg.seed = derive_seed(derive_seed(cfg.master_seed, 0xCE11, 0), experiment::kSeedData);
    return dcfg;
}

// ---- subcommands ----

int cmd_gen_data(const config::ExperimentConfig& cfg) {
    auto ds = data::generate_synthetic(data_config(cfg));
    fs::path dir = out_dir(cfg) / "dataset";
    data::save_dataset(ds, dir.string());
    Manifest manifest("gen-data", cfg);
    for (const auto& client : ds.clients) {
        std::string name = "client_" + std::to_string(client.client_id) + ".csv";
        manifest.add_artifact(name, (dir / name).string());
    }
    manifest.add_artifact("test.csv", (dir / "test.csv").string());
    manifest.write((out_dir(cfg) / "gen_data_manifest.json").string());
    std::cout << "wrote " << ds.clients.size() << " client files + test.csv under " << dir
              << "\n";
    return kOk;
}

int cmd_pretrain(const config::ExperimentConfig& cfg) {
    auto ds = load_required_dataset(cfg);
    auto spec = experiment::psl_model_spec(cfg);
    fed::MessageChannel channel;

    ad::Tensor monitor = ad::Tensor::zeros({std::min<std::size_t>(ds.test.size(), 256),
                                            spec.input_dim});
    for (std::size_t i = 0; i < monitor.rows(); ++i) {
        std::copy(ds.test[i].features.begin(), ds.test[i].features.end(),
                  monitor.values.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim));
    }

    std::uint64_t cell = derive_seed(cfg.master_seed, 0xCE11, 0);
    auto result = fed::run_fssl_stage(ds.clients, cfg.data.layout, spec, cfg.federation,
                                      derive_seed(cell, experiment::kSeedFssl), &channel,
                                      &monitor);
    fs::path ckpt = out_dir(cfg) / "pretrain.ckpt";
    nn::save_checkpoint(result.params, ckpt.string());

    Manifest manifest("pretrain", cfg);
    manifest.add_artifact("pretrain.ckpt", ckpt.string());
    manifest.add_rounds(result.rounds);
    manifest.add_messages(channel);
    manifest.write((out_dir(cfg) / "pretrain_manifest.json").string());
    double final_std = result.rounds.empty() ? -1.0 : result.rounds.back().embedding_std;
    std::cout << "pretrained " << cfg.federation.fssl_rounds
              << " rounds; final embedding std " << final_std << "\n";
    if (final_std >= 0.0 && final_std < 0.01) {
        std::cerr << "warning: embedding std " << final_std
                  << " is under the 0.01 collapse watermark\n";
    }
    return kOk;
}

int cmd_train(const config::ExperimentConfig& cfg, const std::string& method_name) {
    config::Method method = config::method_from_string(method_name);
    if (method == config::Method::nn_fssl || method == config::Method::nn_mlc_fssl) {
        throw CliError(kUsage, "usage",
                       "train drives classifier methods; nearest-neighbor baselines "
                       "exist only inside 'compare'");
    }
    auto ds = load_required_dataset(cfg);
    std::uint64_t cell = derive_seed(cfg.master_seed, 0xCE11, 0);
    fed::MessageChannel channel;
    fed::StageResult result;
    nn::ModelSpec spec;

    bool needs_pretrain = method != config::Method::mlc_plain;
    nn::ParameterSet pretrained;
    if (needs_pretrain) {
        pretrained = nn::load_checkpoint(require_artifact(cfg, "pretrain.ckpt", "pretrain"));
    }

    if (method == config::Method::mlc_plain || method == config::Method::mlc_fssl) {
        spec = experiment::mlc_model_spec(cfg);
        auto init = nn::init_params(spec, derive_seed(cell, experiment::kSeedInit));
        if (needs_pretrain) init = experiment::transplant_trunk(pretrained, init, spec);
        result = fed::run_mlc_stage(ds.clients, cfg.data.layout, init, spec, cfg.federation,
                                    derive_seed(cell, experiment::kSeedTrain,
                                                method == config::Method::mlc_plain ? 1 : 2),
                                    &channel);
    } else {
        spec = experiment::psl_model_spec(cfg);
        auto init = experiment::transplant_trunk(
            pretrained, nn::init_params(spec, derive_seed(cell, experiment::kSeedInit)),
            spec);
        fed::FederationConfig fcfg = cfg.federation;
        bool ebm = method == config::Method::fedfew_ebm;
        if (!ebm) fcfg.energy.lambda = 0.0;
        result = fed::run_psl_stage(ds.clients, cfg.data.layout, init, spec, fcfg,
                                    derive_seed(cell, experiment::kSeedTrain, ebm ? 3 : 4),
                                    &channel);
    }

    fs::path ckpt = out_dir(cfg) / "train.ckpt";
    fs::path warm = out_dir(cfg) / "train_warmup.ckpt";
    nn::save_checkpoint(result.params, ckpt.string());
    nn::save_checkpoint(result.warmup_params, warm.string());

    Manifest manifest("train", cfg);
    manifest.j["method"] = method_name;
    manifest.j["sync_invariant_held"] = result.sync_invariant_held;
    manifest.add_artifact("train.ckpt", ckpt.string());
    manifest.add_artifact("train_warmup.ckpt", warm.string());
    manifest.add_rounds(result.rounds);
    manifest.add_messages(channel);
    manifest.write((out_dir(cfg) / "train_manifest.json").string());
    std::cout << "trained " << method_name << " for " << cfg.federation.rounds
              << " rounds; final loss "
              << (result.rounds.empty() ? 0.0 : result.rounds.back().mean_loss) << "\n";
    return kOk;
}

nn::ParameterSet load_trained(const config::ExperimentConfig& cfg, nn::ModelSpec& spec_out,
                              bool& is_fedfew) {
    auto params = nn::load_checkpoint(require_artifact(cfg, "train.ckpt", "train"));
    auto psl = experiment::psl_model_spec(cfg);
    auto mlc = experiment::mlc_model_spec(cfg);
    std::size_t head_out = params.find("head.weight").shape.at(1);
    if (head_out == psl.head_out_dim) {
        spec_out = psl;
        is_fedfew = true;
    } else if (head_out == mlc.head_out_dim) {
        spec_out = mlc;
        is_fedfew = false;
    } else {
        throw CliError(kData, "data",
                       "train.ckpt head width " + std::to_string(head_out) +
                           " matches neither the fedfew nor the baseline head");
    }
    return params;
}

int cmd_fit_detector(const config::ExperimentConfig& cfg) {
    auto ds = load_required_dataset(cfg);
    nn::ModelSpec spec;
    bool is_fedfew = false;
    auto params = load_trained(cfg, spec, is_fedfew);
    if (!is_fedfew) {
        throw CliError(kData, "data",
                       "fit-detector needs a fedfew checkpoint (C_c+1 head); "
                       "the trained model is a baseline");
    }
    fed::MessageChannel channel;
    auto detector = experiment::fit_detector(ds, cfg.data.layout, params, spec,
                                             cfg.federation.energy, cfg.metric, &channel);
    fs::path path = out_dir(cfg) / "detector.txt";
    infer::save_detector(detector, path.string());

    Manifest manifest("fit-detector", cfg);
    if (std::isfinite(detector.threshold)) {
        manifest.j["threshold"] = detector.threshold;
    } else {
        manifest.j["threshold"] = detector.threshold > 0 ? "inf" : "-inf";
    }
    manifest.j["prototype_count"] = detector.prototypes.size();
    manifest.add_artifact("detector.txt", path.string());
    manifest.add_messages(channel);
    manifest.write((out_dir(cfg) / "fit_detector_manifest.json").string());
    std::cout << "fitted detector: threshold " << detector.threshold << ", "
              << detector.prototypes.size() << " prototypes\n";
    return kOk;
}

int cmd_eval(const config::ExperimentConfig& cfg) {
    auto ds = load_required_dataset(cfg);
    nn::ModelSpec spec;
    bool is_fedfew = false;
    auto params = load_trained(cfg, spec, is_fedfew);
    const auto& layout = cfg.data.layout;
    experiment::TestBlocks blocks{cfg.data.test_pos_per_class, cfg.data.test_neg_per_class};

    std::vector<experiment::CompareRow> rows;
    if (is_fedfew) {
        auto detector =
            infer::load_detector(require_artifact(cfg, "detector.txt", "fit-detector"));
        for (int c : layout.uc_classes) {
            metrics::BinaryCounts counts;
            for (const auto* s : blocks.positives(ds.test, c)) {
                auto pred = infer::predict_full(s->features, params, spec, layout, detector,
                                                cfg.federation.energy, cfg.cc_threshold);
                counts.add(pred[c] == 1, true);
            }
            for (const auto* s : blocks.negatives(ds.test, c)) {
                auto pred = infer::predict_full(s->features, params, spec, layout, detector,
                                                cfg.federation.energy, cfg.cc_threshold);
                counts.add(pred[c] == 1, false);
            }
            auto cm = metrics::confusion_metrics(counts);
            rows.push_back({"fedfew", c, "uc", cm.accuracy, cm.precision, cm.recall, cm.f1,
                            0.0, true, false});
        }
        auto cc_order = layout.cc_classes();
        for (std::size_t i = 0; i < cc_order.size(); ++i) {
            int c = cc_order[i];
            std::vector<double> pos, neg;
            for (const auto* s : blocks.positives(ds.test, c)) {
                pos.push_back(nn::classify_logits(params, spec, s->features)[i + 1]);
            }
            for (const auto* s : blocks.negatives(ds.test, c)) {
                neg.push_back(nn::classify_logits(params, spec, s->features)[i + 1]);
            }
            rows.push_back({"fedfew", c, "cc", 0, 0, 0, 0, metrics::auroc(pos, neg), false,
                            true});
        }
    } else {
        for (int c = 0; c < layout.num_classes; ++c) {
            std::vector<double> pos, neg;
            metrics::BinaryCounts counts;
            for (const auto* s : blocks.positives(ds.test, c)) {
                double logit = nn::classify_logits(params, spec, s->features)[
                    static_cast<std::size_t>(c)];
                pos.push_back(logit);
                counts.add(logit > 0.0, true);
            }
            for (const auto* s : blocks.negatives(ds.test, c)) {
                double logit = nn::classify_logits(params, spec, s->features)[
                    static_cast<std::size_t>(c)];
                neg.push_back(logit);
                counts.add(logit > 0.0, false);
            }
            auto cm = metrics::confusion_metrics(counts);
            rows.push_back({"mlc", c, layout.is_uc(c) ? "uc" : "cc", cm.accuracy,
                            cm.precision, cm.recall, cm.f1, metrics::auroc(pos, neg), true,
                            true});
        }
    }

    fs::path path = out_dir(cfg) / "metrics.csv";
    experiment::write_compare_csv(rows, path.string());
    Manifest manifest("eval", cfg);
    manifest.add_artifact("metrics.csv", path.string());
    manifest.write((out_dir(cfg) / "eval_manifest.json").string());
    std::cout << "wrote " << rows.size() << " metric rows to " << path << "\n";
    return kOk;
}

int cmd_energy_report(const config::ExperimentConfig& cfg) {
    auto ds = load_required_dataset(cfg);
    nn::ModelSpec spec;
    bool is_fedfew = false;
    auto params = load_trained(cfg, spec, is_fedfew);
    if (!is_fedfew) {
        throw CliError(kData, "data", "energy-report needs a fedfew checkpoint");
    }
    auto warm = nn::load_checkpoint(require_artifact(cfg, "train_warmup.ckpt", "train"));
    auto pool = experiment::labeled_energy_samples(ds, cfg.data.layout);

    auto pre = metrics::energy_report(pool, warm, spec, cfg.federation.energy.tau, "pre");
    auto post =
        metrics::energy_report(pool, params, spec, cfg.federation.energy.tau, "post");

    fs::path path = out_dir(cfg) / "energy_report.csv";
    metrics::write_energy_csv(pre.rows, path.string(), false);
    metrics::write_energy_csv(post.rows, path.string(), true);

    Manifest manifest("energy-report", cfg);
    manifest.j["gap_pre"] = pre.gap;
    manifest.j["gap_post"] = post.gap;
    manifest.add_artifact("energy_report.csv", path.string());
    manifest.write((out_dir(cfg) / "energy_report_manifest.json").string());
    std::cout << "energy gap pre " << pre.gap << " -> post " << post.gap << "\n";
    return kOk;
}

int cmd_compare(const config::ExperimentConfig& cfg) {
    for (config::Method m : cfg.methods) {
        if ((m == config::Method::nn_fssl || m == config::Method::nn_mlc_fssl) &&
            !cfg.allow_privacy_violation) {
            throw CliError(kPrivacy, "privacy",
                           std::string(config::method_name(m)) +
                               " pools raw features at the server; pass "
                               "--allow-privacy-violation to run it as a comparator");
        }
    }
    auto summary = experiment::run_compare(cfg);
    fs::path dir = out_dir(cfg);
    fs::path mean_path = dir / "compare_summary.csv";
    experiment::write_compare_csv(summary.mean_rows, mean_path.string());
    Manifest manifest("compare", cfg);
    manifest.add_artifact("compare_summary.csv", mean_path.string());
    for (std::size_t s = 0; s < summary.per_seed_rows.size(); ++s) {
        fs::path p = dir / ("compare_seed_" + std::to_string(s) + ".csv");
        experiment::write_compare_csv(summary.per_seed_rows[s], p.string());
        manifest.add_artifact(p.filename().string(), p.string());
    }
    manifest.write((dir / "compare_manifest.json").string());

    std::cout << "method x class means over " << cfg.repeats << " seeds:\n";
    for (const auto& r : summary.mean_rows) {
        if (r.has_cm) {
            std::printf("  %-14s class %d  A %.2f  P %.2f  R %.2f  F %.2f\n",
                        r.method.c_str(), r.class_id, r.accuracy, r.precision, r.recall,
                        r.f1);
        } else {
            std::printf("  %-14s class %d  AUROC %.4f\n", r.method.c_str(), r.class_id,
                        r.auroc);
        }
    }
    return kOk;
}

int cmd_probe(const config::ExperimentConfig& cfg) {
    auto spec = experiment::psl_model_spec(cfg);
    auto params = nn::load_checkpoint(require_artifact(cfg, "pretrain.ckpt", "pretrain"));
    std::uint64_t cell = derive_seed(cfg.master_seed, 0xCE11, 0);
    auto split = experiment::make_probe_split(cfg, derive_seed(cell, experiment::kSeedProbe));
    double acc = metrics::linear_probe(params, spec, split.train, split.test,
                                       cfg.probe_classes, cfg.probe_epochs,
                                       derive_seed(cell, experiment::kSeedProbe, 1));
    Manifest manifest("probe", cfg);
    manifest.j["probe_accuracy"] = acc;
    manifest.write((out_dir(cfg) / "probe_manifest.json").string());
    std::cout << "linear probe accuracy " << acc << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        Args args = parse_args(argc, argv);
        config::ExperimentConfig cfg;
        try {
            cfg = config::parse_config(args.config_path, args.overrides);
        } catch (const config::ConfigError& e) {
            throw CliError(kConfig, "config", e.what());
        }

        if (args.subcommand == "gen-data") return cmd_gen_data(cfg);
        if (args.subcommand == "pretrain") return cmd_pretrain(cfg);
        if (args.subcommand == "train") return cmd_train(cfg, args.method);
        if (args.subcommand == "fit-detector") return cmd_fit_detector(cfg);
        if (args.subcommand == "eval") return cmd_eval(cfg);
        if (args.subcommand == "energy-report") return cmd_energy_report(cfg);
        if (args.subcommand == "compare") return cmd_compare(cfg);
        if (args.subcommand == "probe") return cmd_probe(cfg);
        if (args.subcommand == "help" || args.subcommand == "--help") {
            usage(std::cout);
            return kOk;
        }
        throw CliError(kUsage, "usage", "unknown subcommand '" + args.subcommand + "'");
    } catch (const CliError& e) {
        std::cerr << "error[" << e.cls << "]: " << e.what() << "\n";
        if (e.code == kUsage) usage(std::cerr);
        return e.code;
    } catch (const nn::CheckpointError& e) {
        std::cerr << "error[data]: " << e.what() << "\n";
        return kData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error[data]: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error[io]: " << e.what() << "\n";
        return kIo;
    }
}
