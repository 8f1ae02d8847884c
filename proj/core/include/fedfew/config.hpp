#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedfew/data.hpp"
#include "fedfew/federation.hpp"
#include "fedfew/inference.hpp"

#include "json.hpp"

namespace fedfew::config {

enum class Method {
    mlc_plain,
    mlc_fssl,
    nn_fssl,
    nn_mlc_fssl,
    fedfew_noebm,
    fedfew_ebm,
};

Method method_from_string(const std::string& name);
const char* method_name(Method m);

struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(std::string k, const std::string& msg)
        : std::runtime_error(msg), key(std::move(k)) {}
};

/// Everything one experiment needs; resolved from an INI-style file with
/// [data]/[federation]/[energy]/[inference]/[experiment] sections plus
/// command-line overrides.
struct ExperimentConfig {
    data::SyntheticConfig data;
    fed::FederationConfig federation;
    infer::Metric metric = infer::Metric::cosine;
    double cc_threshold = 0.5;
    std::vector<Method> methods = {Method::mlc_plain, Method::mlc_fssl,
                                   Method::fedfew_noebm, Method::fedfew_ebm};
    std::string output_dir = "out";
    std::uint64_t master_seed = 3;
    int repeats = 3;
    bool allow_privacy_violation = false;
    int probe_epochs = 200;
    std::size_t probe_per_class = 100;
    int probe_classes = 3;

    void validate() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses `path` (empty string = all defaults) and applies overrides of the
/// form "section.key" = "value" on top. Unknown keys, type mismatches, and
/// constraint violations throw ConfigError naming the key.
ExperimentConfig parse_config(const std::string& path, const Overrides& overrides = {});

/// Full resolved-config echo for run manifests.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

}  // namespace fedfew::config
