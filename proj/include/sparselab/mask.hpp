#pragma once

// Sparsity plans and mask generation: uniform-random selection, per-layer
// magnitude ranking, complements, audits, and the on-disk formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/network.hpp"

namespace sparselab {

struct SparsityPlan {
    double global_ratio = 0.0;              // fraction of weights to REMOVE
    std::map<int, double> per_layer;        // layer index -> KEEP ratio (overrides global)

    double keep_ratio(int layer_index) const {
        if (auto it = per_layer.find(layer_index); it != per_layer.end()) return it->second;
        return 1.0 - global_ratio;
    }

    // Kept count under the floor-with-minimum-1 rule.
    std::int64_t kept_count(int layer_index, std::int64_t n) const {
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(
                   std::floor(static_cast<double>(n) * keep_ratio(layer_index))));
    }

    void validate() const {
        if (global_ratio < 0.0 || global_ratio >= 1.0)
            throw std::invalid_argument("sparsity plan: removal ratio " +
                                        std::to_string(global_ratio) + " outside [0,1)");
        for (const auto& [layer, keep] : per_layer)
            if (keep < 0.0 || keep > 1.0)
                throw std::invalid_argument("sparsity plan: keep ratio " + std::to_string(keep) +
                                            " for layer " + std::to_string(layer) +
                                            " outside [0,1]");
    }
};

namespace detail {

inline int layer_index_of(const std::string& param_id) {
    // ids look like "layer<N>.weight"
    const auto dot = param_id.find('.');
    return std::stoi(param_id.substr(5, dot - 5));
}

inline Tensor ones_like(const Tensor& t) {
    Tensor m(t.shape);
    m.values.assign(m.values.size(), 1.0);
    return m;
}

}  // namespace detail

// Kept count per prunable weight tensor under the plan's floor rule.
inline std::map<std::string, std::int64_t> plan_counts(const ParamStore& params,
                                                       const Network& net,
                                                       const SparsityPlan& plan) {
    plan.validate();
    std::map<std::string, std::int64_t> counts;
    for (const auto& id : net.prunable_ids)
        counts[id] = plan.kept_count(detail::layer_index_of(id),
                                     static_cast<std::int64_t>(params.at(id).numel()));
    return counts;
}

namespace detail {

inline std::vector<std::size_t> survivor_pool(const Tensor& w, const Mask* within,
                                              const std::string& id) {
    std::vector<std::size_t> pool;
    if (const Tensor* base = mask_entry(within, id)) {
        for (std::size_t i = 0; i < base->values.size(); ++i)
            if (base->values[i] != 0.0) pool.push_back(i);
    } else {
        pool.resize(w.numel());
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    }
    return pool;
}

inline void check_keep_fits(std::int64_t keep, std::size_t pool, const std::string& id) {
    if (keep < 1 || keep > static_cast<std::int64_t>(pool))
        throw std::invalid_argument("mask: cannot keep " + std::to_string(keep) + " of " +
                                    std::to_string(pool) + " surviving weights in " + id);
}

}  // namespace detail

// Uniform-random selection of the kept positions, restricted to the `within`
// survivors when given; fully determined by the seed.
inline Mask random_mask_counts(const ParamStore& params, const Network& net,
                               const std::map<std::string, std::int64_t>& counts,
                               std::uint64_t seed, const Mask* within = nullptr) {
    Mask mask;
    std::uint64_t layer_ordinal = 0;
    for (const auto& id : net.prunable_ids) {
        const Tensor& w = params.at(id);
        const std::int64_t keep = counts.at(id);
        auto pool = detail::survivor_pool(w, within, id);
        detail::check_keep_fits(keep, pool.size(), id);

        auto g = rng::engine(rng::derive(seed, layer_ordinal++));
        auto picks =
            rng::sample_without_replacement(pool.size(), static_cast<std::size_t>(keep), g);
        Tensor m(w.shape);
        for (std::size_t p : picks) m.values[pool[p]] = 1.0;
        mask.entries.emplace(id, std::move(m));
    }
    return mask;
}

inline Mask random_mask(const ParamStore& params, const Network& net, const SparsityPlan& plan,
                        std::uint64_t seed) {
    return random_mask_counts(params, net, plan_counts(params, net, plan), seed);
}

// Keeps the requested count of largest-|w| entries per layer; ties keep the
// lower flat index. `within` restricts ranking to surviving positions.
inline Mask magnitude_mask_counts(const ParamStore& params, const Network& net,
                                  const std::map<std::string, std::int64_t>& counts,
                                  const Mask* within = nullptr) {
    Mask mask;
    for (const auto& id : net.prunable_ids) {
        const Tensor& w = params.at(id);
        const std::int64_t keep = counts.at(id);
        auto pool = detail::survivor_pool(w, within, id);
        detail::check_keep_fits(keep, pool.size(), id);

        std::sort(pool.begin(), pool.end(), [&w](std::size_t a, std::size_t b) {
            const double av = std::fabs(w.values[a]), bv = std::fabs(w.values[b]);
            return av != bv ? av > bv : a < b;
        });
        Tensor m(w.shape);
        for (std::int64_t i = 0; i < keep; ++i) m.values[pool[static_cast<std::size_t>(i)]] = 1.0;
        mask.entries.emplace(id, std::move(m));
    }
    return mask;
}

inline Mask magnitude_mask(const ParamStore& params, const Network& net,
                           const SparsityPlan& plan) {
    return magnitude_mask_counts(params, net, plan_counts(params, net, plan));
}

inline Mask complement(const Mask& mask) {
    Mask out;
    for (const auto& [id, t] : mask.entries) {
        Tensor m(t.shape);
        for (std::size_t i = 0; i < t.values.size(); ++i)
            m.values[i] = t.values[i] != 0.0 ? 0.0 : 1.0;
        out.entries.emplace(id, std::move(m));
    }
    return out;
}

struct LayerAudit {
    std::string id;
    std::int64_t total = 0;
    std::int64_t kept = 0;
    double removal_ratio = 0.0;
};

struct SparsityAudit {
    std::vector<LayerAudit> layers;
    std::int64_t total = 0;
    std::int64_t kept = 0;
    double removal_ratio = 0.0;  // over prunable parameters only
};

inline SparsityAudit audit_sparsity(const Mask& mask) {
    SparsityAudit a;
    for (const auto& [id, t] : mask.entries) {
        LayerAudit la;
        la.id = id;
        la.total = static_cast<std::int64_t>(t.numel());
        la.kept = mask.popcount(id);
        la.removal_ratio =
            static_cast<double>(la.total - la.kept) / static_cast<double>(la.total);
        a.total += la.total;
        a.kept += la.kept;
        a.layers.push_back(std::move(la));
    }
    if (a.total > 0)
        a.removal_ratio = static_cast<double>(a.total - a.kept) / static_cast<double>(a.total);
    return a;
}

// --- layer-ratio files -------------------------------------------------------
// One "layer_index,keep_ratio" line per layer; '#' starts a comment. Layers
// absent from the file fall back to the plan's global ratio.

inline SparsityPlan load_layerwise_ratios(const std::string& path, double global_ratio = 0.0) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("layer ratios: cannot open " + path);
    SparsityPlan plan;
    plan.global_ratio = global_ratio;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);

        const auto comma = line.find(',');
        int layer = -1;
        double keep = -1.0;
        if (comma != std::string::npos) {
            try {
                std::size_t used = 0;
                layer = std::stoi(line.substr(0, comma), &used);
                keep = std::stod(line.substr(comma + 1));
            } catch (const std::exception&) {
                layer = -1;
            }
        }
        if (comma == std::string::npos || layer < 0)
            throw std::runtime_error("layer ratios: malformed line " + std::to_string(line_no) +
                                     " in " + path + ": '" + line + "'");
        if (keep < 0.0 || keep > 1.0)
            throw std::runtime_error("layer ratios: keep ratio " + std::to_string(keep) +
                                     " outside [0,1] at line " + std::to_string(line_no) +
                                     " in " + path);
        plan.per_layer[layer] = keep;
    }
    return plan;
}

inline void save_layerwise_ratios(const SparsityPlan& plan, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("layer ratios: cannot write " + path);
    out << "# layer_index,keep_ratio\n";
    char buf[64];
    for (const auto& [layer, keep] : plan.per_layer) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", layer, keep);
        out << buf;
    }
}

// --- mask files --------------------------------------------------------------
// Text header with "id shape popcount" lines, then "end", then a packed
// bitset payload (LSB-first, byte-aligned per tensor).

inline void save_mask(const Mask& mask, std::ostream& out) {
    out << "sparselab mask v1\n";
    for (const auto& [id, t] : mask.entries) {
        out << id;
        for (auto d : t.shape) out << ' ' << d;
        out << ' ' << mask.popcount(id) << '\n';
    }
    out << "end\n";
    for (const auto& [id, t] : mask.entries) {
        std::vector<unsigned char> bytes((t.numel() + 7) / 8, 0);
        for (std::size_t i = 0; i < t.values.size(); ++i)
            if (t.values[i] != 0.0) bytes[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw std::runtime_error("mask: write failed");
}

inline void save_mask(const Mask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("mask: cannot write " + path);
    save_mask(mask, out);
}

inline Mask load_mask(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line) || line != "sparselab mask v1")
        throw std::runtime_error("mask: bad header in " + path);
    std::vector<std::pair<std::string, std::pair<std::vector<std::int64_t>, std::int64_t>>> specs;
    while (std::getline(in, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string id;
        ls >> id;
        std::vector<std::int64_t> nums;
        std::int64_t d;
        while (ls >> d) nums.push_back(d);
        if (id.empty() || nums.size() < 2)
            throw std::runtime_error("mask: malformed header line '" + line + "' in " + path);
        const std::int64_t pop = nums.back();
        nums.pop_back();
        specs.push_back({id, {nums, pop}});
    }
    Mask mask;
    for (const auto& [id, sp] : specs) {
        Tensor t(sp.first);
        std::vector<unsigned char> bytes((t.numel() + 7) / 8);
        in.read(reinterpret_cast<char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
            throw std::runtime_error("mask: truncated payload in " + path);
        for (std::size_t i = 0; i < t.values.size(); ++i)
            t.values[i] = (bytes[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
        mask.entries.emplace(id, std::move(t));
        if (mask.popcount(id) != sp.second)
            throw std::runtime_error("mask: popcount mismatch for " + id + " in " + path);
    }
    return mask;
}

inline Mask load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("mask: cannot open " + path);
    return load_mask(in, path);
}

// Zeroes every masked-out entry of the covered parameters in place.
inline void apply_mask_destructively(ParamStore& params, const Mask& mask) {
    for (const auto& [id, m] : mask.entries) {
        Tensor& w = params.at(id);
        if (w.shape != m.shape)
            throw std::invalid_argument("mask shape " + shape_str(m.shape) +
                                        " does not match parameter " + id);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (m.values[i] == 0.0) w.values[i] = 0.0;
    }
}

}  // namespace sparselab
