#include "fedfew/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fedfew/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace fedfew::nn {

void ModelSpec::validate() const {
    if (input_dim < 1 || feature_dim < 1 || head_out_dim < 1 || simsiam_proj_dim < 1 ||
        simsiam_pred_hidden < 1) {
        throw std::invalid_argument("model spec: all dims must be >= 1");
    }
    for (std::size_t d : hidden_dims) {
        if (d < 1) throw std::invalid_argument("model spec: hidden dims must be >= 1");
    }
}

std::vector<std::size_t> ModelSpec::trunk_dims() const {
    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(feature_dim);
    return dims;
}

const ParameterSet::Segment& ParameterSet::find(const std::string& name) const {
    for (const auto& s : segments) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("parameter set: no segment named " + name);
}

ParameterSet::Segment& ParameterSet::find(const std::string& name) {
    for (auto& s : segments) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("parameter set: no segment named " + name);
}

bool ParameterSet::has(const std::string& name) const {
    for (const auto& s : segments) {
        if (s.name == name) return true;
    }
    return false;
}

bool ParameterSet::combinable_with(const ParameterSet& other) const {
    if (segments.size() != other.segments.size()) return false;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].name != other.segments[i].name) return false;
        if (segments[i].shape != other.segments[i].shape) return false;
    }
    return true;
}

bool ParameterSet::bitwise_equal(const ParameterSet& other) const {
    if (!combinable_with(other)) return false;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& a = segments[i].values;
        const auto& b = other.segments[i].values;
        if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

double ParameterSet::l2_norm() const {
    double sq = 0.0;
    for (const auto& s : segments) {
        for (double v : s.values) sq += v * v;
    }
    return std::sqrt(sq);
}

std::size_t ParameterSet::total_values() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.values.size();
    return n;
}

namespace {

struct LayerShape {
    std::string prefix;
    std::size_t in, out;
};

std::vector<LayerShape> layer_plan(const ModelSpec& spec) {
    std::vector<LayerShape> plan;
    auto dims = spec.trunk_dims();
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        plan.push_back({"trunk." + std::to_string(i), dims[i], dims[i + 1]});
    }
    plan.push_back({"head", spec.feature_dim, spec.head_out_dim});
    plan.push_back({"proj.0", spec.feature_dim, spec.simsiam_proj_dim});
    plan.push_back({"proj.1", spec.simsiam_proj_dim, spec.simsiam_proj_dim});
    plan.push_back({"pred.0", spec.simsiam_proj_dim, spec.simsiam_pred_hidden});
    plan.push_back({"pred.1", spec.simsiam_pred_hidden, spec.simsiam_proj_dim});
    return plan;
}

}  // namespace

ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParameterSet ps;
    for (const LayerShape& layer : layer_plan(spec)) {
        ParameterSet::Segment w;
        w.name = layer.prefix + ".weight";
        w.shape = {layer.in, layer.out};
        w.values.resize(layer.in * layer.out);
        double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        ps.segments.push_back(std::move(w));

        ParameterSet::Segment b;
        b.name = layer.prefix + ".bias";
        b.shape = {layer.out};
        b.values.assign(layer.out, 0.0);
        ps.segments.push_back(std::move(b));
    }
    return ps;
}

std::vector<std::string> trunk_segment_names(const ModelSpec& spec) {
    std::vector<std::string> names;
    auto dims = spec.trunk_dims();
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        names.push_back("trunk." + std::to_string(i) + ".weight");
        names.push_back("trunk." + std::to_string(i) + ".bias");
    }
    return names;
}

std::vector<std::string> classifier_segment_names(const ModelSpec& spec) {
    auto names = trunk_segment_names(spec);
    names.push_back("head.weight");
    names.push_back("head.bias");
    return names;
}

std::vector<std::string> simsiam_segment_names(const ModelSpec& spec) {
    auto names = trunk_segment_names(spec);
    for (const char* p : {"proj.0", "proj.1", "pred.0", "pred.1"}) {
        names.push_back(std::string(p) + ".weight");
        names.push_back(std::string(p) + ".bias");
    }
    return names;
}

namespace {

// Leaf bookkeeping shared by the graph builders.
struct LeafCache {
    ad::Tape& tape;
    const ParameterSet& params;
    GraphParams out;

    ad::NodeId leaf(const std::string& name) {
        const auto& seg = params.find(name);
        ad::NodeId id = tape.input(ad::Tensor(seg.shape, seg.values));
        out.names.push_back(name);
        out.nodes.push_back(id);
        return id;
    }

    // x[B,in] -> relu(x W + b) or linear when relu=false
    ad::NodeId dense(ad::NodeId x, const std::string& prefix, bool relu) {
        ad::NodeId w = leaf(prefix + ".weight");
        ad::NodeId b = leaf(prefix + ".bias");
        ad::NodeId y = tape.add(tape.matmul(x, w), b);
        return relu ? tape.relu(y) : y;
    }

    ad::NodeId trunk(ad::NodeId x, const ModelSpec& spec) {
        auto dims = spec.trunk_dims();
        ad::NodeId h = x;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            h = dense(h, "trunk." + std::to_string(i), true);
        }
        return h;
    }
};

void check_batch(const ad::Tensor& batch, const ModelSpec& spec) {
    if (batch.rank() != 2 || batch.cols() != spec.input_dim) {
        throw std::invalid_argument("model: input batch must be [B," +
                                    std::to_string(spec.input_dim) + "], got " +
                                    ad::shape_to_string(batch.shape));
    }
}

}  // namespace

ClassifierGraph build_classifier_graph(ad::Tape& tape, const ParameterSet& params,
                                       const ModelSpec& spec, const ad::Tensor& batch) {
    check_batch(batch, spec);
    LeafCache lc{tape, params, {}};
    ad::NodeId x = tape.input(batch);
    ad::NodeId feats = lc.trunk(x, spec);
    ad::NodeId logits = lc.dense(feats, "head", false);
    return ClassifierGraph{std::move(lc.out), feats, logits};
}

SimSiamGraph build_simsiam_graph(ad::Tape& tape, const ParameterSet& params,
                                 const ModelSpec& spec, const ad::Tensor& view_batch1,
                                 const ad::Tensor& view_batch2, bool use_stop_gradient) {
    check_batch(view_batch1, spec);
    check_batch(view_batch2, spec);
    LeafCache lc{tape, params, {}};

    ad::NodeId x1 = tape.input(view_batch1);
    ad::NodeId x2 = tape.input(view_batch2);

    // Shared weights: one leaf per segment, reused by both views.
    auto dims = spec.trunk_dims();
    std::vector<std::pair<ad::NodeId, ad::NodeId>> trunk_wb;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        std::string prefix = "trunk." + std::to_string(i);
        trunk_wb.emplace_back(lc.leaf(prefix + ".weight"), lc.leaf(prefix + ".bias"));
    }
    auto pw0 = lc.leaf("proj.0.weight");
    auto pb0 = lc.leaf("proj.0.bias");
    auto pw1 = lc.leaf("proj.1.weight");
    auto pb1 = lc.leaf("proj.1.bias");
    auto qw0 = lc.leaf("pred.0.weight");
    auto qb0 = lc.leaf("pred.0.bias");
    auto qw1 = lc.leaf("pred.1.weight");
    auto qb1 = lc.leaf("pred.1.bias");

    auto run_branch = [&](ad::NodeId x) {
        ad::NodeId h = x;
        for (auto& [w, b] : trunk_wb) h = tape.relu(tape.add(tape.matmul(h, w), b));
        ad::NodeId z = tape.add(
            tape.matmul(tape.relu(tape.add(tape.matmul(h, pw0), pb0)), pw1), pb1);
        ad::NodeId p = tape.add(
            tape.matmul(tape.relu(tape.add(tape.matmul(z, qw0), qb0)), qw1), qb1);
        return std::pair{p, z};
    };

    auto [p1, z1] = run_branch(x1);
    auto [p2, z2] = run_branch(x2);

    SimSiamGraph g;
    g.params = std::move(lc.out);
    g.p1 = p1;
    g.z1 = z1;
    g.p2 = p2;
    g.z2 = z2;
    g.z1_detached = use_stop_gradient ? tape.stop_gradient(z1) : z1;
    g.z2_detached = use_stop_gradient ? tape.stop_gradient(z2) : z2;
    return g;
}

ad::Tensor extract_features_batch(const ParameterSet& params, const ModelSpec& spec,
                                  const ad::Tensor& batch) {
    ad::Tape tape;
    auto g = build_classifier_graph(tape, params, spec, batch);
    return tape.value(g.features);
}

ad::Tensor classify_logits_batch(const ParameterSet& params, const ModelSpec& spec,
                                 const ad::Tensor& batch) {
    ad::Tape tape;
    auto g = build_classifier_graph(tape, params, spec, batch);
    return tape.value(g.logits);
}

ad::Tensor simsiam_project_batch(const ParameterSet& params, const ModelSpec& spec,
                                 const ad::Tensor& batch) {
    check_batch(batch, spec);
    ad::Tape tape;
    LeafCache lc{tape, params, {}};
    ad::NodeId h = lc.trunk(tape.input(batch), spec);
    h = lc.dense(h, "proj.0", true);
    h = lc.dense(h, "proj.1", false);
    return tape.value(h);
}

std::vector<double> extract_features(const ParameterSet& params, const ModelSpec& spec,
                                     const std::vector<double>& x) {
    if (x.size() != spec.input_dim) {
        throw std::invalid_argument("extract_features: input has " +
                                    std::to_string(x.size()) + " entries, expected " +
                                    std::to_string(spec.input_dim));
    }
    return extract_features_batch(params, spec, ad::Tensor({1, x.size()}, x)).values;
}

std::vector<double> classify_logits(const ParameterSet& params, const ModelSpec& spec,
                                    const std::vector<double>& x) {
    if (x.size() != spec.input_dim) {
        throw std::invalid_argument("classify_logits: input has " +
                                    std::to_string(x.size()) + " entries, expected " +
                                    std::to_string(spec.input_dim));
    }
    return classify_logits_batch(params, spec, ad::Tensor({1, x.size()}, x)).values;
}

SimSiamOutput simsiam_forward(const ParameterSet& params, const ModelSpec& spec,
                              const std::vector<double>& view1,
                              const std::vector<double>& view2) {
    if (view1.size() != spec.input_dim || view2.size() != spec.input_dim) {
        throw std::invalid_argument("simsiam_forward: view dim mismatch, expected " +
                                    std::to_string(spec.input_dim));
    }
    ad::Tape tape;
    auto g = build_simsiam_graph(tape, params, spec, ad::Tensor({1, view1.size()}, view1),
                                 ad::Tensor({1, view2.size()}, view2));
    return SimSiamOutput{tape.value(g.p1).values, tape.value(g.z1).values,
                         tape.value(g.p2).values, tape.value(g.z2).values};
}

// ---- checkpoint IO ----

namespace {

constexpr char kMagic[] = "FEDFEW1";
constexpr std::size_t kMagicLen = 7;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) {
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "checkpoint: file ends inside a header field");
    }
    return v;
}

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, kMagicLen);
    write_u32(os, static_cast<std::uint32_t>(params.segments.size()));
    for (const auto& seg : params.segments) {
        write_u32(os, static_cast<std::uint32_t>(seg.name.size()));
        os.write(seg.name.data(), static_cast<std::streamsize>(seg.name.size()));
        write_u32(os, static_cast<std::uint32_t>(seg.shape.size()));
        for (std::size_t d : seg.shape) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(seg.values.data()),
                 static_cast<std::streamsize>(seg.values.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParameterSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

    char magic[kMagicLen] = {};
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "checkpoint: bad magic in " + path);
    }

    ParameterSet ps;
    ps.version = 1;
    std::uint32_t nseg = read_u32(is);
    for (std::uint32_t i = 0; i < nseg; ++i) {
        std::uint32_t name_len = read_u32(is);
        if (name_len > 4096) {
            throw CheckpointError(CheckpointError::Kind::malformed,
                                  "checkpoint: unreasonable segment name length");
        }
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint: file ends inside a segment name");
        }
        std::uint32_t rank = read_u32(is);
        if (rank > 8) {
            throw CheckpointError(CheckpointError::Kind::malformed,
                                  "checkpoint: segment " + name + " has rank " +
                                      std::to_string(rank));
        }
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = read_u32(is);
            count *= d;
        }
        std::vector<double> values(count);
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<std::size_t>(is.gcount()) != count * sizeof(double)) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint: file length does not match header for "
                                  "segment " + name);
        }
        ps.segments.push_back({std::move(name), std::move(shape), std::move(values)});
    }
    // Trailing bytes mean the header-implied length disagrees with the file.
    is.peek();
    if (!is.eof()) {
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "checkpoint: trailing bytes after last segment");
    }
    return ps;
}

}  // namespace fedfew::nn
