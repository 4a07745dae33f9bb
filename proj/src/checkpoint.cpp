// SPDX-License-Identifier: Apache-2.0
#include "treesr/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "treesr/error.hpp"
#include "treesr/rng.hpp"

namespace treesr {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'E', 'E', 'S', 'R', 'C', 'K'};

class Writer {
public:
    template <typename T>
    void pod(const T& v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void tensor(const NamedTensor& t) {
        str(t.name);
        pod<std::int32_t>(t.tensor.shape.n);
        pod<std::int32_t>(t.tensor.shape.c);
        pod<std::int32_t>(t.tensor.shape.h);
        pod<std::int32_t>(t.tensor.shape.w);
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.tensor.data.data());
        buf_.insert(buf_.end(), p, p + t.tensor.data.size() * sizeof(float));
    }
    void tensors(const std::vector<NamedTensor>& ts) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
        for (const auto& t : ts) tensor(t);
    }
    std::vector<std::uint8_t>& bytes() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& b, std::size_t end, std::string path) : buf_(b), end_(end), path_(std::move(path)) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    NamedTensor tensor() {
        NamedTensor t;
        t.name = str();
        Shape s;
        s.n = pod<std::int32_t>();
        s.c = pod<std::int32_t>();
        s.h = pod<std::int32_t>();
        s.w = pod<std::int32_t>();
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) fail("negative tensor dimension");
        need(s.size() * sizeof(float));
        t.tensor = Tensor(s);
        std::memcpy(t.tensor.data.data(), buf_.data() + pos_, s.size() * sizeof(float));
        pos_ += s.size() * sizeof(float);
        return t;
    }
    std::vector<NamedTensor> tensors() {
        const auto n = pod<std::uint32_t>();
        std::vector<NamedTensor> out;
        for (std::uint32_t i = 0; i < n; ++i) out.push_back(tensor());
        return out;
    }
    bool done() const { return pos_ == end_; }
    [[noreturn]] void fail(const std::string& why) const { throw CheckpointError(path_ + ": " + why); }

private:
    void need(std::size_t n) const {
        if (end_ - pos_ < n) fail("truncated checkpoint");
    }
    const std::vector<std::uint8_t>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string path_;
};

}  // namespace

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ModelConfig parse_model_config(const std::string& canonical) {
    std::map<std::string, int> kv;
    std::istringstream is(canonical);
    std::string item;
    while (std::getline(is, item, ';')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw CheckpointError("malformed model config '" + canonical + "'");
        kv[item.substr(0, eq)] = std::stoi(item.substr(eq + 1));
    }
    auto get = [&](const char* k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw CheckpointError(std::string("model config lacks '") + k + "'");
        return it->second;
    };
    ModelConfig c;
    c.tree_depth = get("tree_depth");
    c.branching = get("branching");
    c.residual_groups = get("residual_groups");
    c.blocks_per_group = get("blocks_per_group");
    c.channels = get("channels");
    c.scale = get("scale");
    c.reduction = get("reduction");
    c.deep_residual = get("deep_residual") != 0;
    return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    Writer w;
    for (char c : kMagic) w.pod(c);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.kind));
    w.str(ck.model.canonical());
    w.pod<std::uint64_t>(ck.model.hash());
    w.pod<std::uint64_t>(ck.model_seed);
    w.pod<std::uint64_t>(ck.linked_hash);
    w.pod<std::uint64_t>(ck.state.step);
    w.pod<std::uint64_t>(ck.state.epoch);
    w.pod<std::uint64_t>(ck.state.train_seed);
    w.str(ck.state.rng_state);
    w.pod<std::uint64_t>(ck.state.epoch_order.size());
    for (std::uint32_t v : ck.state.epoch_order) w.pod(v);
    w.pod<std::uint64_t>(ck.state.cursor);
    w.pod<double>(ck.state.loss_sum);
    w.pod<std::uint64_t>(ck.state.loss_count);
    w.tensors(ck.parameters);
    w.tensors(ck.adam_m);
    w.tensors(ck.adam_v);
    const std::uint64_t h = fnv1a(w.bytes().data(), w.bytes().size());
    w.pod(h);
    return std::move(w.bytes());
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError(tmp.string() + ": cannot write checkpoint");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(path.string() + ": cannot open checkpoint");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();
    if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(where + ": not a checkpoint file");
    }
    Reader r(bytes, bytes.size() - 8, where);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.pod<char>();
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(where + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    std::uint64_t trailer;
    std::memcpy(&trailer, bytes.data() + bytes.size() - 8, 8);
    if (trailer != fnv1a(bytes.data(), bytes.size() - 8)) throw CheckpointError(where + ": truncated or corrupted checkpoint");

    Checkpoint ck;
    const auto kind = r.pod<std::uint32_t>();
    if (kind != 1 && kind != 2) r.fail("unknown model kind " + std::to_string(kind));
    ck.kind = static_cast<ModelKind>(kind);
    ck.model = parse_model_config(r.str());
    const auto stored_hash = r.pod<std::uint64_t>();
    if (stored_hash != ck.model.hash()) r.fail("config hash does not match stored config");
    if (expected && expected->hash() != stored_hash) {
        throw CheckpointError(where + ": model config mismatch: checkpoint hash " + hex_hash(stored_hash) +
                              ", expected hash " + hex_hash(expected->hash()));
    }
    ck.model_seed = r.pod<std::uint64_t>();
    ck.linked_hash = r.pod<std::uint64_t>();
    ck.state.step = r.pod<std::uint64_t>();
    ck.state.epoch = r.pod<std::uint64_t>();
    ck.state.train_seed = r.pod<std::uint64_t>();
    ck.state.rng_state = r.str();
    const auto order_len = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < order_len; ++i) ck.state.epoch_order.push_back(r.pod<std::uint32_t>());
    ck.state.cursor = r.pod<std::uint64_t>();
    ck.state.loss_sum = r.pod<double>();
    ck.state.loss_count = r.pod<std::uint64_t>();
    ck.parameters = r.tensors();
    ck.adam_m = r.tensors();
    ck.adam_v = r.tensors();
    if (!r.done()) r.fail("trailing bytes after payload");
    return ck;
}

std::vector<NamedTensor> snapshot(const ParameterList& params) {
    std::vector<NamedTensor> out;
    for (const auto& [name, v] : params.entries()) out.push_back({name, v->value});
    return out;
}

void restore(ParameterList& params, const std::vector<NamedTensor>& tensors) {
    const auto& entries = params.entries();
    if (entries.size() != tensors.size()) {
        throw CheckpointError("parameter count mismatch: model has " + std::to_string(entries.size()) +
                              ", checkpoint has " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& [name, v] = entries[i];
        if (tensors[i].name != name || !(tensors[i].tensor.shape == v->shape())) {
            throw CheckpointError("parameter mismatch at '" + name + "' (checkpoint has '" + tensors[i].name + "' " +
                                  tensors[i].tensor.shape.str() + ")");
        }
        v->value = tensors[i].tensor;
    }
}

DivergenceModel divergence_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::Divergence) throw CheckpointError("checkpoint does not hold a divergence model");
    DivergenceModel m(ckpt.model, ckpt.model_seed);
    restore(m.parameters(), ckpt.parameters);
    return m;
}

ConvergenceModel convergence_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::Convergence) throw CheckpointError("checkpoint does not hold a convergence model");
    ConvergenceModel m(ckpt.model, ckpt.model_seed);
    restore(m.parameters(), ckpt.parameters);
    return m;
}

}  // namespace treesr
