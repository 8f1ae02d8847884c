#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedfew/config.hpp"
#include "fedfew/data.hpp"
#include "fedfew/federation.hpp"
#include "fedfew/inference.hpp"
#include "fedfew/metrics.hpp"
#include "fedfew/nn.hpp"

namespace fedfew::experiment {

/// Seed tags for deriving independent streams from one master seed.
enum SeedTag : std::uint64_t {
    kSeedData = 1,
    kSeedFssl = 2,
    kSeedInit = 3,
    kSeedTrain = 4,
    kSeedProbe = 5,
};

nn::ModelSpec psl_model_spec(const config::ExperimentConfig& cfg);
nn::ModelSpec mlc_model_spec(const config::ExperimentConfig& cfg);

/// Fresh init for `spec` with the trunk segments replaced by the
/// pre-trained ones.
nn::ParameterSet transplant_trunk(const nn::ParameterSet& pretrained,
                                  nn::ParameterSet fresh, const nn::ModelSpec& spec);

/// All labeled samples across clients with their has-UC flags (UC clients
/// flag their positives; common-class clients are flagged false by
/// construction).
std::vector<metrics::EnergySample> labeled_energy_samples(
    const data::FederatedDataset& dataset, const data::ClassLayout& layout);

/// Per-class held-out blocks: the test set is laid out as
/// [class 0 positives, class 0 negatives, class 1 positives, ...].
struct TestBlocks {
    std::size_t pos_per_class = 0;
    std::size_t neg_per_class = 0;

    std::vector<const data::Sample*> positives(const std::vector<data::Sample>& test,
                                               int class_id) const;
    std::vector<const data::Sample*> negatives(const std::vector<data::Sample>& test,
                                               int class_id) const;
};

infer::UcDetector fit_detector(const data::FederatedDataset& dataset,
                               const data::ClassLayout& layout,
                               const nn::ParameterSet& params, const nn::ModelSpec& spec,
                               const losses::EnergyConfig& energy, infer::Metric metric,
                               fed::MessageChannel* channel = nullptr);

/// One method's evaluation on the held-out set for one seed.
struct MethodOutput {
    config::Method method;
    std::map<int, metrics::BinaryCounts> uc_counts;
    std::map<int, double> cc_auroc;  // empty for nearest-neighbor baselines
    double energy_gap_pre = 0.0;     // fedfew methods only
    double energy_gap_post = 0.0;
    bool has_gap = false;

    double mean_cc_auroc() const;
};

/// Runs methods for a single seed index, sharing the dataset, the FSSL
/// checkpoint, and intermediate models between methods.
class SeedRunner {
   public:
    SeedRunner(const config::ExperimentConfig& cfg, int seed_index);

    MethodOutput run(config::Method method);
    /// Re-evaluates the trained fedfew_ebm model under a different
    /// prototype-matching metric (threshold and prototypes are unchanged).
    MethodOutput run_fedfew_ebm_with_metric(infer::Metric metric);

    const data::FederatedDataset& dataset();
    std::uint64_t cell_seed() const { return cell_seed_; }

   private:
    const nn::ParameterSet& pretrained();
    const fed::StageResult& mlc_plain_result();
    const fed::StageResult& mlc_fssl_result();
    const fed::StageResult& psl_result(bool ebm);
    MethodOutput eval_fedfew(const fed::StageResult& stage, infer::Metric metric,
                             config::Method method);
    MethodOutput eval_mlc(const fed::StageResult& stage, config::Method method);
    MethodOutput eval_nearest_neighbor(const nn::ParameterSet& params,
                                       config::Method method);

    config::ExperimentConfig cfg_;
    std::uint64_t cell_seed_;
    nn::ModelSpec psl_spec_, mlc_spec_;
    std::optional<data::FederatedDataset> dataset_;
    std::optional<nn::ParameterSet> pretrained_;
    std::optional<fed::StageResult> mlc_plain_, mlc_fssl_, psl_ebm_, psl_noebm_;
};

struct CompareRow {
    std::string method;
    int class_id = 0;
    std::string kind;  // "uc" | "cc"
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    double auroc = 0.0;
    bool has_cm = false, has_auroc = false;
};

struct CompareSummary {
    std::vector<CompareRow> mean_rows;                    // over seeds
    std::vector<std::vector<CompareRow>> per_seed_rows;   // raw, one list per seed
    std::vector<std::vector<MethodOutput>> per_seed_raw;  // per seed, per method
};

CompareSummary run_compare(const config::ExperimentConfig& cfg);

void write_compare_csv(const std::vector<CompareRow>& rows, const std::string& path);

/// Mutually exclusive synthetic probe set for the linear classification
/// protocol, split half train / half test.
struct ProbeSplit {
    std::vector<metrics::ProbeSample> train, test;
};
ProbeSplit make_probe_split(const config::ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace fedfew::experiment
