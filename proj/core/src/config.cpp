#include "fedfew/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fedfew::config {

Method method_from_string(const std::string& name) {
    if (name == "mlc_plain") return Method::mlc_plain;
    if (name == "mlc_fssl") return Method::mlc_fssl;
    if (name == "nn_fssl") return Method::nn_fssl;
    if (name == "nn_mlc_fssl") return Method::nn_mlc_fssl;
    if (name == "fedfew_noebm") return Method::fedfew_noebm;
    if (name == "fedfew_ebm") return Method::fedfew_ebm;
    throw std::invalid_argument("unknown method '" + name + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::mlc_plain: return "mlc_plain";
        case Method::mlc_fssl: return "mlc_fssl";
        case Method::nn_fssl: return "nn_fssl";
        case Method::nn_mlc_fssl: return "nn_mlc_fssl";
        case Method::fedfew_noebm: return "fedfew_noebm";
        case Method::fedfew_ebm: return "fedfew_ebm";
    }
    return "?";
}

void ExperimentConfig::validate() const {
    data.validate();
    federation.validate();
    if (methods.empty()) {
        throw ConfigError("experiment.methods", "experiment.methods: must not be empty");
    }
    if (repeats < 1) throw ConfigError("experiment.repeats", "experiment.repeats: must be >= 1");
    if (cc_threshold <= 0.0 || cc_threshold >= 1.0) {
        throw ConfigError("inference.cc_threshold",
                          "inference.cc_threshold: must be in (0,1)");
    }
    if (probe_epochs < 1) throw ConfigError("experiment.probe_epochs", "must be >= 1");
    if (probe_classes < 2) throw ConfigError("experiment.probe_classes", "must be >= 2");
    if (probe_per_class < 2) throw ConfigError("experiment.probe_per_class", "must be >= 2");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Raw key/value map in file order with override application.
class KeyMap {
   public:
    void set(const std::string& key, const std::string& value) { map_[key] = value; }

    bool consume(const std::string& key, std::string& out) {
        auto it = map_.find(key);
        if (it == map_.end()) return false;
        out = it->second;
        consumed_.insert(key);
        return true;
    }

    std::vector<std::string> unconsumed() const {
        std::vector<std::string> keys;
        for (const auto& [k, v] : map_) {
            if (!consumed_.count(k)) keys.push_back(k);
        }
        return keys;
    }

   private:
    std::map<std::string, std::string> map_;
    std::set<std::string> consumed_;
};

long long parse_int(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || value.empty()) {
        throw ConfigError(key, key + ": expected an integer, got '" + value + "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || value.empty()) {
        throw ConfigError(key, key + ": expected a number, got '" + value + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key, key + ": expected true/false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Reader {
    KeyMap& keys;

    void get_int(const std::string& key, auto& field) {
        std::string v;
        if (keys.consume(key, v)) field = static_cast<std::decay_t<decltype(field)>>(parse_int(key, v));
    }
    void get_size(const std::string& key, std::size_t& field) {
        std::string v;
        if (keys.consume(key, v)) {
            long long x = parse_int(key, v);
            if (x < 0) throw ConfigError(key, key + ": must be >= 0");
            field = static_cast<std::size_t>(x);
        }
    }
    void get_double(const std::string& key, double& field) {
        std::string v;
        if (keys.consume(key, v)) field = parse_double(key, v);
    }
    void get_bool(const std::string& key, bool& field) {
        std::string v;
        if (keys.consume(key, v)) field = parse_bool(key, v);
    }
    void get_string(const std::string& key, std::string& field) {
        std::string v;
        if (keys.consume(key, v)) field = v;
    }
};

}  // namespace

ExperimentConfig parse_config(const std::string& path, const Overrides& overrides) {
    KeyMap keys;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open " + path);
        std::string line, section;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            std::size_t hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    throw std::runtime_error("config: malformed section header at " + path +
                                             ":" + std::to_string(line_no));
                }
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("config: expected key = value at " + path + ":" +
                                         std::to_string(line_no));
            }
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (section.empty()) {
                throw std::runtime_error("config: key '" + key +
                                         "' outside any [section] at " + path + ":" +
                                         std::to_string(line_no));
            }
            keys.set(section + "." + key, value);
        }
    }
    for (const auto& [k, v] : overrides) keys.set(k, v);

    ExperimentConfig cfg;
    Reader r{keys};
    std::string v;

    // [data]
    r.get_int("data.classes", cfg.data.layout.num_classes);
    if (keys.consume("data.uc_classes", v)) {
        cfg.data.layout.uc_classes.clear();
        for (const auto& item : split_list(v)) {
            cfg.data.layout.uc_classes.push_back(
                static_cast<int>(parse_int("data.uc_classes", item)));
        }
    }
    r.get_int("data.clients", cfg.data.clients);
    r.get_size("data.input_dim", cfg.data.input_dim);
    r.get_size("data.cc_labeled", cfg.data.cc_labeled);
    r.get_size("data.cc_unlabeled", cfg.data.cc_unlabeled);
    r.get_size("data.uc_labeled_pos", cfg.data.uc_labeled_pos);
    r.get_size("data.uc_labeled_neg", cfg.data.uc_labeled_neg);
    r.get_size("data.uc_unlabeled", cfg.data.uc_unlabeled);
    r.get_size("data.test_pos_per_class", cfg.data.test_pos_per_class);
    r.get_size("data.test_neg_per_class", cfg.data.test_neg_per_class);
    r.get_double("data.cc_prevalence", cfg.data.cc_prevalence);
    r.get_double("data.uc_client_cc_prevalence", cfg.data.uc_client_cc_prevalence);
    r.get_double("data.uc_pos_cc_prevalence", cfg.data.uc_pos_cc_prevalence);
    r.get_bool("data.require_finding", cfg.data.require_finding);
    r.get_double("data.uc_prevalence", cfg.data.uc_prevalence);
    r.get_double("data.uc_disease_alignment", cfg.data.uc_disease_alignment);
    r.get_double("data.uc_signal_scale", cfg.data.uc_signal_scale);
    r.get_double("data.noise_sigma", cfg.data.noise_sigma);
    r.get_double("data.test_noise_sigma", cfg.data.test_noise_sigma);
    r.get_double("data.signal_scale", cfg.data.signal_scale);
    r.get_bool("data.cc_clients_contain_ucs", cfg.data.cc_clients_contain_ucs);
    r.get_double("data.max_uc_cc_ratio", cfg.data.max_uc_cc_ratio);
    r.get_bool("data.two_client_imbalance", cfg.data.two_client_imbalance);
    r.get_double("data.imbalance_ratio", cfg.data.imbalance_ratio);
    bool aug_sigma_set = keys.consume("data.aug_sigma", v);
    if (aug_sigma_set) cfg.federation.aug.sigma = parse_double("data.aug_sigma", v);
    r.get_double("data.aug_dropout", cfg.federation.aug.dropout);

    // [federation]
    r.get_int("federation.rounds", cfg.federation.rounds);
    r.get_int("federation.warmup_rounds", cfg.federation.warmup_rounds);
    r.get_int("federation.local_epochs", cfg.federation.local_epochs);
    r.get_int("federation.fssl_rounds", cfg.federation.fssl_rounds);
    r.get_size("federation.batch_size", cfg.federation.batch_size);
    r.get_double("federation.learning_rate", cfg.federation.learning_rate);
    r.get_double("federation.uc_learning_rate", cfg.federation.uc_learning_rate);
    r.get_double("federation.adam_beta1", cfg.federation.adam.beta1);
    r.get_double("federation.adam_beta2", cfg.federation.adam.beta2);
    r.get_double("federation.adam_eps", cfg.federation.adam.eps);
    if (keys.consume("federation.aggregation_weight_rule", v)) {
        if (v == "labeled_counts") {
            cfg.federation.stage1_weight_rule = fed::WeightRule::labeled_counts;
        } else if (v == "all_counts") {
            cfg.federation.stage1_weight_rule = fed::WeightRule::all_counts;
        } else {
            throw ConfigError("federation.aggregation_weight_rule",
                              "federation.aggregation_weight_rule: expected "
                              "labeled_counts or all_counts, got '" + v + "'");
        }
    }
    r.get_bool("federation.parallel_clients", cfg.federation.parallel_clients);
    r.get_bool("federation.mlc_unknown_as_negative", cfg.federation.mlc_unknown_as_negative);

    // [energy]
    r.get_double("energy.tau", cfg.federation.energy.tau);
    r.get_double("energy.lambda", cfg.federation.energy.lambda);
    r.get_double("energy.m_c", cfg.federation.energy.m_c);
    r.get_double("energy.m_u", cfg.federation.energy.m_u);

    // [inference]
    if (keys.consume("inference.metric", v)) {
        try {
            cfg.metric = infer::metric_from_string(v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("inference.metric", std::string("inference.metric: ") + e.what());
        }
    }
    r.get_double("inference.cc_threshold", cfg.cc_threshold);

    // [experiment]
    if (keys.consume("experiment.methods", v)) {
        cfg.methods.clear();
        for (const auto& item : split_list(v)) {
            try {
                cfg.methods.push_back(method_from_string(item));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("experiment.methods",
                                  std::string("experiment.methods: ") + e.what());
            }
        }
    }
    r.get_string("experiment.output_dir", cfg.output_dir);
    if (keys.consume("experiment.master_seed", v)) {
        long long s = parse_int("experiment.master_seed", v);
        if (s < 0) throw ConfigError("experiment.master_seed", "must be >= 0");
        cfg.master_seed = static_cast<std::uint64_t>(s);
    }
    r.get_int("experiment.repeats", cfg.repeats);
    r.get_bool("experiment.allow_privacy_violation", cfg.allow_privacy_violation);
    r.get_int("experiment.probe_epochs", cfg.probe_epochs);
    r.get_size("experiment.probe_per_class", cfg.probe_per_class);
    r.get_int("experiment.probe_classes", cfg.probe_classes);

    auto leftover = keys.unconsumed();
    if (!leftover.empty()) {
        throw ConfigError(leftover[0], "config: unknown key '" + leftover[0] + "'");
    }

    // Augmentation default tracks the signal scale unless set explicitly.
    if (!aug_sigma_set) cfg.federation.aug.sigma = 0.1 * cfg.data.signal_scale;

    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("", std::string("config: ") + e.what());
    }
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["data"] = {
        {"classes", cfg.data.layout.num_classes},
        {"uc_classes", cfg.data.layout.uc_classes},
        {"clients", cfg.data.clients},
        {"input_dim", cfg.data.input_dim},
        {"cc_labeled", cfg.data.cc_labeled},
        {"cc_unlabeled", cfg.data.cc_unlabeled},
        {"uc_labeled_pos", cfg.data.uc_labeled_pos},
        {"uc_labeled_neg", cfg.data.uc_labeled_neg},
        {"uc_unlabeled", cfg.data.uc_unlabeled},
        {"test_pos_per_class", cfg.data.test_pos_per_class},
        {"test_neg_per_class", cfg.data.test_neg_per_class},
        {"cc_prevalence", cfg.data.cc_prevalence},
        {"uc_client_cc_prevalence", cfg.data.uc_client_cc_prevalence},
        {"uc_pos_cc_prevalence", cfg.data.uc_pos_cc_prevalence},
        {"require_finding", cfg.data.require_finding},
        {"uc_prevalence", cfg.data.uc_prevalence},
        {"uc_disease_alignment", cfg.data.uc_disease_alignment},
        {"uc_signal_scale", cfg.data.uc_signal_scale},
        {"noise_sigma", cfg.data.noise_sigma},
        {"test_noise_sigma", cfg.data.test_noise_sigma},
        {"signal_scale", cfg.data.signal_scale},
        {"cc_clients_contain_ucs", cfg.data.cc_clients_contain_ucs},
        {"max_uc_cc_ratio", cfg.data.max_uc_cc_ratio},
        {"two_client_imbalance", cfg.data.two_client_imbalance},
        {"imbalance_ratio", cfg.data.imbalance_ratio},
        {"aug_sigma", cfg.federation.aug.sigma},
        {"aug_dropout", cfg.federation.aug.dropout},
    };
    j["federation"] = {
        {"rounds", cfg.federation.rounds},
        {"warmup_rounds", cfg.federation.warmup_rounds},
        {"local_epochs", cfg.federation.local_epochs},
        {"fssl_rounds", cfg.federation.fssl_rounds},
        {"batch_size", cfg.federation.batch_size},
        {"learning_rate", cfg.federation.learning_rate},
        {"uc_learning_rate", cfg.federation.uc_learning_rate},
        {"adam_beta1", cfg.federation.adam.beta1},
        {"adam_beta2", cfg.federation.adam.beta2},
        {"adam_eps", cfg.federation.adam.eps},
        {"aggregation_weight_rule",
         cfg.federation.stage1_weight_rule == fed::WeightRule::all_counts ? "all_counts"
                                                                          : "labeled_counts"},
        {"parallel_clients", cfg.federation.parallel_clients},
        {"mlc_unknown_as_negative", cfg.federation.mlc_unknown_as_negative},
    };
    j["energy"] = {
        {"tau", cfg.federation.energy.tau},
        {"lambda", cfg.federation.energy.lambda},
        {"m_c", cfg.federation.energy.m_c},
        {"m_u", cfg.federation.energy.m_u},
    };
    j["inference"] = {
        {"metric", infer::metric_name(cfg.metric)},
        {"cc_threshold", cfg.cc_threshold},
    };
    std::vector<std::string> method_names;
    for (Method m : cfg.methods) method_names.emplace_back(method_name(m));
    j["experiment"] = {
        {"methods", method_names},
        {"output_dir", cfg.output_dir},
        {"master_seed", cfg.master_seed},
        {"repeats", cfg.repeats},
        {"allow_privacy_violation", cfg.allow_privacy_violation},
        {"probe_epochs", cfg.probe_epochs},
        {"probe_per_class", cfg.probe_per_class},
        {"probe_classes", cfg.probe_classes},
    };
    return j;
}

}  // namespace fedfew::config
