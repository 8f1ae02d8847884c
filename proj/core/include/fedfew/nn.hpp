#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfew/autodiff.hpp"
#include "fedfew/tensor.hpp"

namespace fedfew::nn {

/// MLP trunk + classifier head + SimSiam projector/predictor dimensions.
struct ModelSpec {
    std::size_t input_dim = 32;
    std::size_t feature_dim = 64;
    std::vector<std::size_t> hidden_dims = {64, 64};
    std::size_t head_out_dim = 6;  // C_c + 1 for the stage-2 classifier
    std::size_t simsiam_proj_dim = 64;
    std::size_t simsiam_pred_hidden = 32;

    void validate() const;
    /// Trunk layer sizes: input, hidden..., feature.
    std::vector<std::size_t> trunk_dims() const;
};

/// Named, shaped, flat parameter segments; the unit of federation exchange.
/// Immutable by convention once built (training works on copies).
struct ParameterSet {
    struct Segment {
        std::string name;
        std::vector<std::size_t> shape;
        std::vector<double> values;
    };
    std::uint32_t version = 1;
    std::vector<Segment> segments;

    const Segment& find(const std::string& name) const;
    Segment& find(const std::string& name);
    bool has(const std::string& name) const;
    bool combinable_with(const ParameterSet& other) const;
    bool bitwise_equal(const ParameterSet& other) const;
    double l2_norm() const;
    std::size_t total_values() const;
};

/// Xavier-uniform weights, zero biases; bit-deterministic in seed.
ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Final trunk activation (pre-head) for a single input.
std::vector<double> extract_features(const ParameterSet& params, const ModelSpec& spec,
                                     const std::vector<double>& x);

/// Raw head logits (length head_out_dim); probabilities are sigmoid(logits)
/// downstream.
std::vector<double> classify_logits(const ParameterSet& params, const ModelSpec& spec,
                                    const std::vector<double>& x);

struct SimSiamOutput {
    std::vector<double> p1, z1, p2, z2;
};

SimSiamOutput simsiam_forward(const ParameterSet& params, const ModelSpec& spec,
                              const std::vector<double>& view1,
                              const std::vector<double>& view2);

// ---- tape builders (training path) ----

/// Parameter leaves for one graph; names pair each leaf with its segment.
struct GraphParams {
    std::vector<std::string> names;
    std::vector<ad::NodeId> nodes;
};

struct ClassifierGraph {
    GraphParams params;
    ad::NodeId features;  // [B, feature_dim]
    ad::NodeId logits;    // [B, head_out_dim]
};

/// Builds trunk+head on a batch [B, input_dim].
ClassifierGraph build_classifier_graph(ad::Tape& tape, const ParameterSet& params,
                                       const ModelSpec& spec, const ad::Tensor& batch);

struct SimSiamGraph {
    GraphParams params;
    ad::NodeId p1, z1, p2, z2;          // [B, proj_dim]
    ad::NodeId z1_detached, z2_detached;  // stop-gradient copies fed to the loss
};

/// Builds the two-view SimSiam graph. use_stop_gradient=false is a test
/// hook that wires the loss to the raw z branches instead.
SimSiamGraph build_simsiam_graph(ad::Tape& tape, const ParameterSet& params,
                                 const ModelSpec& spec, const ad::Tensor& view_batch1,
                                 const ad::Tensor& view_batch2,
                                 bool use_stop_gradient = true);

/// Batched feature extraction without graph bookkeeping overhead for callers.
ad::Tensor extract_features_batch(const ParameterSet& params, const ModelSpec& spec,
                                  const ad::Tensor& batch);
ad::Tensor classify_logits_batch(const ParameterSet& params, const ModelSpec& spec,
                                 const ad::Tensor& batch);
/// Projector embeddings z = proj(trunk(x)); used by the collapse monitor.
ad::Tensor simsiam_project_batch(const ParameterSet& params, const ModelSpec& spec,
                                 const ad::Tensor& batch);

/// Segment names trained per stage.
std::vector<std::string> trunk_segment_names(const ModelSpec& spec);
std::vector<std::string> classifier_segment_names(const ModelSpec& spec);
std::vector<std::string> simsiam_segment_names(const ModelSpec& spec);

// ---- checkpoint persistence ----

struct CheckpointError : std::runtime_error {
    enum class Kind { bad_magic, truncated, malformed };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg)
        : std::runtime_error(msg), kind(k) {}
};

/// Binary format: magic "FEDFEW1", u32 segment count, then per segment
/// (u32 name length, name bytes, u32 rank, u32 dims, f64 values), all
/// little-endian. Round-trips bit for bit.
void save_checkpoint(const ParameterSet& params, const std::string& path);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace fedfew::nn
