// SPDX-License-Identifier: Apache-2.0
#include "treesr/model.hpp"

#include <cmath>
#include <sstream>

#include "treesr/error.hpp"
#include "treesr/rng.hpp"

namespace treesr {

std::vector<LeafPath> enumerate_leaf_paths(int depth, int branching) {
    std::vector<LeafPath> paths;
    LeafPath cur(depth, 0);
    while (true) {
        paths.push_back(cur);
        int pos = depth - 1;
        while (pos >= 0 && ++cur[pos] == branching) cur[pos--] = 0;
        if (pos < 0) break;
    }
    return paths;
}

std::string leaf_path_name(const LeafPath& path) {
    std::string s;
    for (int d : path) s += std::to_string(d);
    return s;
}

int ModelConfig::num_predictions() const {
    int p = 1;
    for (int l = 0; l < tree_depth; ++l) p *= branching;
    return p;
}

int ModelConfig::num_nodes() const {
    int total = 0, level = 1;
    for (int l = 0; l < tree_depth; ++l) {
        level *= branching;
        total += level;
    }
    return total;
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
    };
    positive(tree_depth, "tree_depth");
    positive(branching, "branching");
    positive(residual_groups, "residual_groups");
    positive(blocks_per_group, "blocks_per_group");
    positive(channels, "channels");
    positive(reduction, "reduction");
    if (scale != 2 && scale != 3 && scale != 4 && scale != 8) {
        throw ConfigError("model.scale must be one of 2, 3, 4, 8, got " + std::to_string(scale));
    }
    if (channels % reduction != 0) {
        throw ConfigError("model.channels (" + std::to_string(channels) + ") must be divisible by model.reduction (" +
                          std::to_string(reduction) + ")");
    }
    if (std::pow(static_cast<double>(branching), tree_depth) > 1 << 16) {
        throw ConfigError("tree too large: branching^tree_depth exceeds 65536");
    }
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os << "tree_depth=" << tree_depth << ";branching=" << branching << ";residual_groups=" << residual_groups
       << ";blocks_per_group=" << blocks_per_group << ";channels=" << channels << ";scale=" << scale
       << ";reduction=" << reduction << ";deep_residual=" << (deep_residual ? 1 : 0);
    return os.str();
}

std::uint64_t ModelConfig::hash() const {
    const std::string s = canonical();
    return fnv1a(s.data(), s.size());
}

Var ParameterList::add(std::string name, Shape shape) {
    Var v = parameter(Tensor(shape));
    entries_.emplace_back(std::move(name), v);
    return v;
}

std::size_t ParameterList::count_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v->value.data.size();
    return n;
}

std::uint64_t ParameterList::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : entries_) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(v->value.data.data(), v->value.data.size() * sizeof(float), h);
    }
    return h;
}

void ParameterList::zero_grad() {
    for (auto& [name, v] : entries_) v->grad = Tensor();
}

void ParameterList::set_requires_grad(bool on) {
    for (auto& [name, v] : entries_) v->requires_grad = on;
}

void ParameterList::initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, v] : entries_) {
        const Shape s = v->shape();
        if (name.ends_with(".bias")) {
            std::fill(v->value.data.begin(), v->value.data.end(), 0.0f);
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.c) * s.h * s.w);
        for (float& x : v->value.data) x = static_cast<float>(rng.uniform(-bound, bound));
    }
}

namespace {

Conv make_conv(ParameterList& params, const std::string& name, int cin, int cout, int k) {
    Conv c;
    c.weight = params.add(name + ".weight", Shape{cout, cin, k, k});
    c.bias = params.add(name + ".bias", Shape{1, cout, 1, 1});
    return c;
}

BranchModule make_branch(ParameterList& params, const std::string& prefix, const ModelConfig& cfg) {
    BranchModule m;
    const int ch = cfg.channels;
    for (int g = 0; g < cfg.residual_groups; ++g) {
        const std::string gp = prefix + ".group" + std::to_string(g);
        ResidualGroup group;
        for (int b = 0; b < cfg.blocks_per_group; ++b) {
            const std::string bp = gp + ".block" + std::to_string(b);
            AttentionBlock blk;
            blk.body1 = make_conv(params, bp + ".conv1", ch, ch, 3);
            blk.body2 = make_conv(params, bp + ".conv2", ch, ch, 3);
            blk.squeeze = make_conv(params, bp + ".attn.squeeze", ch, ch / cfg.reduction, 1);
            blk.excite = make_conv(params, bp + ".attn.excite", ch / cfg.reduction, ch, 1);
            group.blocks.push_back(blk);
        }
        group.tail = make_conv(params, gp + ".tail", ch, ch, 3);
        m.groups.push_back(std::move(group));
    }
    return m;
}

}  // namespace

Var AttentionBlock::operator()(const Var& x) const {
    Var r = body2(relu(body1(x)));
    Var gate = sigmoid(excite(relu(squeeze(global_avg_pool(r)))));
    return add(x, scale_channels(r, gate));
}

Var ResidualGroup::operator()(const Var& x) const {
    Var h = x;
    for (const AttentionBlock& b : blocks) h = b(h);
    return add(x, tail(h));
}

Var BranchModule::operator()(const Var& x) const {
    Var h = x;
    for (const ResidualGroup& g : groups) h = g(h);
    return h;
}

Var Upsampler::operator()(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < stages.size(); ++i) h = pixel_shuffle(stages[i](h), factors[i]);
    return h;
}

DivergenceModel::DivergenceModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    const int ch = cfg_.channels;
    shallow_ = make_conv(params_, "shallow", 3, ch, 3);

    nodes_.reserve(cfg_.num_nodes());
    for (int depth = 1; depth <= cfg_.tree_depth; ++depth) {
        for (const LeafPath& prefix : enumerate_leaf_paths(depth, cfg_.branching)) {
            nodes_.push_back(make_branch(params_, "node" + leaf_path_name(prefix), cfg_));
        }
    }

    leaf_paths_ = enumerate_leaf_paths(cfg_.tree_depth, cfg_.branching);
    std::vector<int> factors = cfg_.scale == 8 ? std::vector<int>{2, 2, 2} : std::vector<int>{cfg_.scale};
    for (const LeafPath& path : leaf_paths_) {
        const std::string lp = "leaf" + leaf_path_name(path);
        LeafHead head;
        head.body = make_conv(params_, lp + ".body", ch, ch, 3);
        for (std::size_t s = 0; s < factors.size(); ++s) {
            head.upsample.stages.push_back(
                make_conv(params_, lp + ".up" + std::to_string(s), ch, ch * factors[s] * factors[s], 3));
        }
        head.upsample.factors = factors;
        head.output = make_conv(params_, lp + ".output", ch, 3, 3);
        leaves_.push_back(std::move(head));
    }
    params_.initialize(seed);
}

int DivergenceModel::node_index(const LeafPath& path, int depth) const {
    int offset = 0, level = 1;
    for (int l = 1; l < depth; ++l) {
        level *= cfg_.branching;
        offset += level;
    }
    int idx = 0;
    for (int l = 0; l < depth; ++l) idx = idx * cfg_.branching + path[l];
    return offset + idx;
}

std::vector<Var> DivergenceModel::forward(const Var& x) const {
    const Shape s = x->shape();
    if (s.c != 3) throw ShapeError("divergence forward expects 3 input channels, got " + std::to_string(s.c));
    if (s.h < kMinInputSide || s.w < kMinInputSide) {
        throw ConfigError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " is below the minimum " +
                          std::to_string(kMinInputSide) + "x" + std::to_string(kMinInputSide));
    }
    const Var shallow = shallow_(add_scalar(x, -0.5f));

    // Level-by-level evaluation; `level` holds outputs of the previous depth
    // in lexicographic prefix order.
    std::vector<Var> level{shallow};
    for (int depth = 1; depth <= cfg_.tree_depth; ++depth) {
        std::vector<Var> next;
        next.reserve(level.size() * cfg_.branching);
        int offset = 0, width = 1;
        for (int l = 1; l < depth; ++l) {
            width *= cfg_.branching;
            offset += width;
        }
        for (std::size_t parent = 0; parent < level.size(); ++parent) {
            for (int child = 0; child < cfg_.branching; ++child) {
                const int idx = offset + static_cast<int>(parent) * cfg_.branching + child;
                Var out = nodes_[idx](level[parent]);
                if (cfg_.deep_residual) out = add(out, level[parent]);
                next.push_back(std::move(out));
            }
        }
        level = std::move(next);
    }

    std::vector<Var> preds;
    preds.reserve(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
        Var h = level[i];
        if (cfg_.deep_residual) h = add(h, shallow);
        const LeafHead& head = leaves_[i];
        h = head.output(head.upsample(head.body(h)));
        preds.push_back(add_scalar(h, 0.5f));
    }
    return preds;
}

ConvergenceModel::ConvergenceModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    const int p = cfg_.num_predictions();
    int cin = 3 * p;
    for (int i = 0; i < kHiddenConvs; ++i) {
        hidden_.push_back(make_conv(params_, "fuse.conv" + std::to_string(i), cin, cfg_.channels, 3));
        cin = cfg_.channels;
    }
    logits_ = make_conv(params_, "fuse.logits", cfg_.channels, p, 1);
    params_.initialize(seed);
}

ConvergenceModel::Output ConvergenceModel::forward(std::span<const Var> predictions) const {
    const int p = cfg_.num_predictions();
    if (static_cast<int>(predictions.size()) != p) {
        throw ShapeError("convergence model expects " + std::to_string(p) + " predictions, got " +
                         std::to_string(predictions.size()));
    }
    Var h = add_scalar(concat_channels(predictions), -0.5f);
    for (std::size_t i = 0; i < hidden_.size(); ++i) h = relu(hidden_[i](h));
    Var weights = softmax_channels(logits_(h));
    Var fused = weighted_sum(predictions, weights);
    return {weights, fused};
}

DivergenceModel build_divergence_network(const ModelConfig& cfg, std::uint64_t seed) { return DivergenceModel(cfg, seed); }

ConvergenceModel build_convergence_network(const ModelConfig& cfg, std::uint64_t seed) {
    return ConvergenceModel(cfg, seed);
}

Tensor to_tensor(std::span<const Image> batch) {
    if (batch.empty()) throw ShapeError("to_tensor: empty batch");
    const int h = batch[0].height(), w = batch[0].width();
    Tensor t(Shape{static_cast<int>(batch.size()), 3, h, w});
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].height() != h || batch[n].width() != w) throw ShapeError("to_tensor: batch images differ in size");
        const auto& src = batch[n].data();
        float* dst = t.data.data() + n * src.size();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
    }
    return t;
}

Image to_image(const Tensor& t, int n) {
    if (t.shape.c != 3) throw ShapeError("to_image: tensor must have 3 channels");
    Image img(t.shape.h, t.shape.w);
    const float* src = t.data.data() + static_cast<std::size_t>(n) * 3 * t.shape.plane();
    for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = src[i];
    return img;
}

LumaPlane to_plane(const Tensor& t, int n, int c) {
    LumaPlane p(t.shape.h, t.shape.w);
    const float* src = t.data.data() + (static_cast<std::size_t>(n) * t.shape.c + c) * t.shape.plane();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = src[i];
    return p;
}

PredictionSet divergence_forward(const DivergenceModel& model, const Image& lr) {
    NoGradGuard guard;
    const std::vector<Image> batch{lr};
    const std::vector<Var> outs = model.forward(constant(to_tensor(batch)));
    PredictionSet set;
    set.leaf_paths = model.leaf_paths();
    for (const Var& o : outs) set.predictions.push_back(to_image(o->value, 0));
    return set;
}

std::pair<WeightMaps, Image> convergence_forward(const ConvergenceModel& model, const PredictionSet& preds) {
    NoGradGuard guard;
    if (static_cast<int>(preds.size()) != model.config().num_predictions()) {
        throw ShapeError("convergence model expects " + std::to_string(model.config().num_predictions()) +
                         " predictions, got " + std::to_string(preds.size()));
    }
    std::vector<Var> inputs;
    for (const Image& img : preds.predictions) {
        const std::vector<Image> one{img};
        inputs.push_back(constant(to_tensor(one)));
    }
    const auto out = model.forward(inputs);
    WeightMaps maps;
    for (int i = 0; i < out.weights->shape().c; ++i) maps.planes.push_back(to_plane(out.weights->value, 0, i));
    // Renormalize in double so the planes sum to one to double precision.
    for (std::size_t k = 0; k < maps.planes[0].size(); ++k) {
        double sum = 0.0;
        for (const LumaPlane& plane : maps.planes) sum += plane[k];
        for (LumaPlane& plane : maps.planes) plane[k] /= sum;
    }
    Image fused = fuse_predictions(preds, maps);
    return {std::move(maps), std::move(fused)};
}

Image fuse_predictions(const PredictionSet& preds, const WeightMaps& weights) {
    if (preds.size() == 0 || preds.size() != weights.size()) {
        throw ShapeError("fuse_predictions: " + std::to_string(preds.size()) + " predictions but " +
                         std::to_string(weights.size()) + " weight maps");
    }
    const Image& first = preds.predictions[0];
    Image out(first.height(), first.width());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Image& p = preds.predictions[i];
        const LumaPlane& w = weights.planes[i];
        if (!p.same_size(first) || w.height() != first.height() || w.width() != first.width()) {
            throw ShapeError("fuse_predictions: size mismatch at prediction " + std::to_string(i));
        }
        for (int c = 0; c < 3; ++c) {
            auto dst = out.plane(c);
            const auto src = p.plane(c);
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k] * w[k];
        }
    }
    return out;
}

std::size_t count_parameters(const DivergenceModel& model) { return model.parameters().count_scalars(); }
std::size_t count_parameters(const ConvergenceModel& model) { return model.parameters().count_scalars(); }

}  // namespace treesr
