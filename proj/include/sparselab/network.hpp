#pragma once

// Declarative layer stacks, seeded parameter initialization with a frozen
// init snapshot, and masked forward passes.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/hash.hpp"
#include "sparselab/rng.hpp"
#include "sparselab/tensor.hpp"

namespace sparselab {

enum class LayerKind { dense, conv2d, relu, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    // dense
    std::int64_t in = -1;  // -1: infer from the previous layer
    std::int64_t out = 0;
    // conv2d
    std::int64_t in_channels = -1;  // -1: infer
    std::int64_t out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    static LayerSpec dense(std::int64_t out, std::int64_t in = -1) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in = in;
        s.out = out;
        return s;
    }
    static LayerSpec conv(std::int64_t out_channels, int kernel, int stride = 1, int padding = 0,
                          std::int64_t in_channels = -1) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.out_channels = out_channels;
        s.in_channels = in_channels;
        s.kernel = kernel;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = LayerKind::relu;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }

    bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

struct Network {
    std::vector<std::int64_t> input_shape;  // per-sample shape
    std::vector<LayerSpec> layers;          // shapes fully resolved
    std::vector<std::string> prunable_ids;  // weight tensors eligible for masking
    bool nothing_prunable = false;          // exemption rule left the set empty

    static std::string weight_id(std::size_t layer) {
        return "layer" + std::to_string(layer) + ".weight";
    }
    static std::string bias_id(std::size_t layer) {
        return "layer" + std::to_string(layer) + ".bias";
    }
};

// Resolves shapes through the stack and computes the prunable weight set.
// By default the first parameter-bearing layer and the last dense layer are
// exempt; prune_all lifts the exemption.
inline Network build_network(std::vector<std::int64_t> input_shape, std::vector<LayerSpec> specs,
                             bool prune_all = false) {
    Network net;
    net.input_shape = std::move(input_shape);
    std::vector<std::int64_t> shape = net.input_shape;

    for (std::size_t li = 0; li < specs.size(); ++li) {
        LayerSpec& s = specs[li];
        const std::string where = "layer " + std::to_string(li);
        switch (s.kind) {
            case LayerKind::dense: {
                if (shape.size() != 1)
                    throw std::invalid_argument(where + ": dense expects a flat input, got " +
                                                shape_str(shape) + " (missing flatten?)");
                if (s.in == -1) s.in = shape[0];
                if (s.in != shape[0])
                    throw std::invalid_argument(
                        where + ": dense expects fan-in " + std::to_string(s.in) + " but layer " +
                        std::to_string(li ? li - 1 : 0) + " produces " + shape_str(shape));
                if (s.out < 1) throw std::invalid_argument(where + ": dense fan-out must be >= 1");
                shape = {s.out};
                break;
            }
            case LayerKind::conv2d: {
                if (shape.size() != 3)
                    throw std::invalid_argument(where + ": conv2d expects [C,H,W] input, got " +
                                                shape_str(shape));
                if (s.in_channels == -1) s.in_channels = shape[0];
                if (s.in_channels != shape[0])
                    throw std::invalid_argument(where + ": conv2d expects " +
                                                std::to_string(s.in_channels) +
                                                " channels but input is " + shape_str(shape));
                if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.padding < 0)
                    throw std::invalid_argument(where + ": bad conv2d geometry");
                const std::int64_t H = shape[1] + 2 * s.padding - s.kernel;
                const std::int64_t W = shape[2] + 2 * s.padding - s.kernel;
                if (H < 0 || W < 0)
                    throw std::invalid_argument(where + ": kernel larger than padded input");
                if (H % s.stride != 0 || W % s.stride != 0)
                    throw std::invalid_argument(where + ": non-integral conv output for input " +
                                                shape_str(shape));
                shape = {s.out_channels, H / s.stride + 1, W / s.stride + 1};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten: {
                std::int64_t n = 1;
                for (auto d : shape) n *= d;
                shape = {n};
                break;
            }
        }
    }

    // Prunable set: weight tensors of parameter-bearing layers, minus the
    // default exemptions.
    std::vector<std::size_t> param_layers;
    std::size_t last_dense = specs.size();
    for (std::size_t li = 0; li < specs.size(); ++li) {
        if (specs[li].has_params()) param_layers.push_back(li);
        if (specs[li].kind == LayerKind::dense) last_dense = li;
    }
    if (param_layers.empty()) throw std::invalid_argument("network has no parameters");
    for (std::size_t li : param_layers) {
        if (!prune_all && (li == param_layers.front() || li == last_dense)) continue;
        net.prunable_ids.push_back(Network::weight_id(li));
    }
    if (net.prunable_ids.empty()) {
        net.nothing_prunable = true;
        std::cerr << "warning: exemption rule leaves no prunable layers "
                     "(network too shallow; use prune_all to override)\n";
    }

    net.layers = std::move(specs);
    return net;
}

struct ParamEntry {
    std::string id;
    Tensor tensor;
};

// Ordered parameter set plus a frozen copy of the values at creation.
class ParamStore {
public:
    std::vector<ParamEntry> entries;

    Tensor& at(const std::string& id) {
        for (auto& e : entries)
            if (e.id == id) return e.tensor;
        throw std::invalid_argument("param store: no parameter " + id);
    }
    const Tensor& at(const std::string& id) const {
        return const_cast<ParamStore*>(this)->at(id);
    }
    bool contains(const std::string& id) const {
        for (const auto& e : entries)
            if (e.id == id) return true;
        return false;
    }

    void freeze_snapshot() {
        snapshot_.clear();
        for (const auto& e : entries) snapshot_.push_back(e.tensor.values);
    }
    const std::vector<double>& snapshot_of(const std::string& id) const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].id == id) return snapshot_.at(i);
        throw std::invalid_argument("param store: no parameter " + id);
    }
    bool has_snapshot() const { return snapshot_.size() == entries.size(); }

    // Resets live values to the init snapshot.
    void rewind() {
        if (!has_snapshot()) throw std::logic_error("param store: no snapshot to rewind to");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            entries[i].tensor.values = snapshot_[i];
            entries[i].tensor.grad.clear();
        }
    }

    std::uint64_t snapshot_checksum() const {
        Fnv1a h;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            h.update(entries[i].id);
            h.update(snapshot_.at(i));
        }
        return h.digest();
    }
    std::uint64_t values_checksum() const {
        Fnv1a h;
        for (const auto& e : entries) {
            h.update(e.id);
            h.update(e.tensor.values);
        }
        return h.digest();
    }

    void zero_grads() {
        for (auto& e : entries) e.tensor.zero_grad();
    }

private:
    std::vector<std::vector<double>> snapshot_;
};

// Fan-in-scaled normal weights (std = sqrt(2/fan_in)), zero biases; fully
// determined by the seed.
inline ParamStore init_params(const Network& net, std::uint64_t seed) {
    ParamStore store;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& s = net.layers[li];
        if (!s.has_params()) continue;
        auto g = rng::engine(rng::derive(seed, static_cast<std::uint64_t>(li)));
        if (s.kind == LayerKind::dense) {
            Tensor w({s.in, s.out});
            const double std_dev = std::sqrt(2.0 / static_cast<double>(s.in));
            for (double& v : w.values) v = std_dev * rng::normal(g);
            store.entries.push_back({Network::weight_id(li), std::move(w)});
            store.entries.push_back({Network::bias_id(li), Tensor({s.out})});
        } else {
            Tensor w({s.out_channels, s.in_channels, s.kernel, s.kernel});
            const double fan_in = static_cast<double>(s.in_channels) * s.kernel * s.kernel;
            const double std_dev = std::sqrt(2.0 / fan_in);
            for (double& v : w.values) v = std_dev * rng::normal(g);
            store.entries.push_back({Network::weight_id(li), std::move(w)});
            store.entries.push_back({Network::bias_id(li), Tensor({s.out_channels})});
        }
    }
    store.freeze_snapshot();
    return store;
}

// Binary 0/1 tensors covering exactly the prunable parameter ids of a
// network. Generation, ranking and auditing live in mask.hpp.
struct Mask {
    std::map<std::string, Tensor> entries;

    std::int64_t popcount(const std::string& id) const {
        std::int64_t n = 0;
        for (double v : entries.at(id).values) n += v != 0.0 ? 1 : 0;
        return n;
    }
    std::int64_t total_bits() const {
        std::int64_t n = 0;
        for (const auto& [id, t] : entries) n += static_cast<std::int64_t>(t.numel());
        return n;
    }
    std::int64_t total_popcount() const {
        std::int64_t n = 0;
        for (const auto& [id, t] : entries) n += popcount(id);
        return n;
    }
    std::uint64_t checksum() const {
        Fnv1a h;
        for (const auto& [id, t] : entries) {
            h.update(id);
            for (double v : t.values) h.update(static_cast<std::uint64_t>(v != 0.0));
        }
        return h.digest();
    }
};

namespace detail {

inline const Tensor* mask_entry(const Mask* mask, const std::string& id) {
    if (!mask) return nullptr;
    auto it = mask->entries.find(id);
    return it == mask->entries.end() ? nullptr : &it->second;
}

inline void check_mask_matches(const Mask& mask, const Network& net, const ParamStore& params) {
    if (mask.entries.size() != net.prunable_ids.size())
        throw std::invalid_argument("mask covers " + std::to_string(mask.entries.size()) +
                                    " tensors but the network has " +
                                    std::to_string(net.prunable_ids.size()) + " prunable ones");
    for (const auto& id : net.prunable_ids) {
        auto it = mask.entries.find(id);
        if (it == mask.entries.end())
            throw std::invalid_argument("mask is missing prunable parameter " + id);
        if (it->second.shape != params.at(id).shape)
            throw std::invalid_argument("mask shape " + shape_str(it->second.shape) +
                                        " does not match parameter " + id + " " +
                                        shape_str(params.at(id).shape));
    }
}

}  // namespace detail

// Records the full forward pass on `g`; masked weights contribute
// value * mask_bit. `batch` must outlive the graph.
inline Graph::Id forward(const Network& net, ParamStore& params, const Mask* mask, Tensor& batch,
                         Graph& g) {
    std::vector<std::int64_t> expect = net.input_shape;
    expect.insert(expect.begin(), batch.shape.empty() ? 0 : batch.shape[0]);
    if (batch.shape != expect)
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) +
                                    " does not match network input " +
                                    shape_str(net.input_shape));
    if (mask) detail::check_mask_matches(*mask, net, params);

    Graph::Id x = g.leaf(batch);

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& s = net.layers[li];
        switch (s.kind) {
            case LayerKind::dense: {
                Graph::Id w = g.leaf(params.at(Network::weight_id(li)));
                if (const Tensor* m = detail::mask_entry(mask, Network::weight_id(li)))
                    w = g.mul_mask(w, *m);
                x = g.matmul(x, w);
                x = g.add_row_bias(x, g.leaf(params.at(Network::bias_id(li))));
                break;
            }
            case LayerKind::conv2d: {
                Graph::Id w = g.leaf(params.at(Network::weight_id(li)));
                if (const Tensor* m = detail::mask_entry(mask, Network::weight_id(li)))
                    w = g.mul_mask(w, *m);
                x = g.conv2d(x, w, s.stride, s.padding);
                x = g.add_channel_bias(x, g.leaf(params.at(Network::bias_id(li))));
                break;
            }
            case LayerKind::relu:
                x = g.relu(x);
                break;
            case LayerKind::flatten:
                x = g.flatten(x);
                break;
        }
    }
    return x;
}

// --- ParamStore file format -------------------------------------------------
// Text header, one "id dims" line per tensor, then "end", then the raw
// little-endian f64 payload in header order.

inline void save_params(const ParamStore& store, std::ostream& out) {
    out << "sparselab params v1\n";
    for (const auto& e : store.entries) {
        out << e.id;
        for (auto d : e.tensor.shape) out << ' ' << d;
        out << '\n';
    }
    out << "end\n";
    for (const auto& e : store.entries) {
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(e.tensor.values.data()),
                  static_cast<std::streamsize>(e.tensor.values.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("params: write failed");
}

inline void save_params(const ParamStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("params: cannot write " + path);
    save_params(store, out);
}

inline ParamStore load_params(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line) || line != "sparselab params v1")
        throw std::runtime_error("params: bad header in " + path);
    ParamStore store;
    while (std::getline(in, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string id;
        ls >> id;
        std::vector<std::int64_t> shape;
        std::int64_t d;
        while (ls >> d) shape.push_back(d);
        if (id.empty() || shape.empty())
            throw std::runtime_error("params: malformed header line '" + line + "' in " + path);
        store.entries.push_back({id, Tensor(shape)});
    }
    for (auto& e : store.entries) {
        in.read(reinterpret_cast<char*>(e.tensor.values.data()),
                static_cast<std::streamsize>(e.tensor.values.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(e.tensor.values.size() * sizeof(double)))
            throw std::runtime_error("params: truncated payload in " + path);
    }
    store.freeze_snapshot();
    return store;
}

inline ParamStore load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("params: cannot open " + path);
    return load_params(in, path);
}

}  // namespace sparselab
