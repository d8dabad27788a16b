#pragma once

// The strategy pipelines. Each one produces a (mask, weights) candidate from
// the same random dense initialization; `finetune` then trains only the kept
// weights under the shared schedule so candidates compare fairly.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/optim.hpp"

namespace sparselab {

struct Provenance {
    std::string strategy;       // scratch | lth | lth_iter | eb | l1 | rst | rst_iter
    std::string mask_source;    // how the mask was produced
    std::string weight_source;  // which checkpoint the kept weights come from
    int cycles = 1;
    std::uint64_t init_seed = 0;
    std::uint64_t mask_seed = 0;
    std::uint64_t train_seed = 0;

    bool is_rst_family() const { return strategy.rfind("rst", 0) == 0; }
};

struct SubnetworkCandidate {
    Mask mask;
    ParamStore weights;  // masked entries exactly 0 when the strategy removes them
    Provenance provenance;
};

struct CycleSchedule {
    int cycles = 1;

    // Kept counts per cycle compound geometrically toward the plan; the last
    // cycle lands on the plan's own count exactly.
    std::map<std::string, std::int64_t> counts_for_cycle(const ParamStore& params,
                                                         const Network& net,
                                                         const SparsityPlan& plan,
                                                         int cycle) const {
        if (cycles < 1) throw std::invalid_argument("cycle schedule: cycles must be >= 1");
        if (cycle < 1 || cycle > cycles) throw std::invalid_argument("cycle out of range");
        std::map<std::string, std::int64_t> counts;
        for (const auto& id : net.prunable_ids) {
            const auto n = static_cast<std::int64_t>(params.at(id).numel());
            const int layer = detail::layer_index_of(id);
            if (cycle == cycles) {
                counts[id] = plan.kept_count(layer, n);
                continue;
            }
            const double frac = std::pow(plan.keep_ratio(layer),
                                         static_cast<double>(cycle) / cycles);
            counts[id] = std::max<std::int64_t>(
                1, static_cast<std::int64_t>(std::floor(static_cast<double>(n) * frac)));
        }
        return counts;
    }
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;  // percent
};

inline EvalResult evaluate(const Network& net, ParamStore& params, const Mask* mask,
                           const Dataset& data, int batch_size = 256) {
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    const std::int64_t n = data.size();
    for (auto& batch : batches(data, batch_size, 0, 0, false)) {
        Graph g;
        Graph::Id logits = forward(net, params, mask, batch.inputs, g);
        const Tensor& out = g.value(logits);
        const std::int64_t b = out.shape[0], c = out.shape[1];
        for (std::int64_t i = 0; i < b; ++i) {
            const double* row = &out.values[static_cast<std::size_t>(i * c)];
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            if (best == batch.labels[static_cast<std::size_t>(i)]) ++correct;
        }
        Graph::Id loss = g.softmax_cross_entropy(logits, batch.labels);
        loss_sum += g.value(loss).values[0] * static_cast<double>(b);
    }
    return {loss_sum / static_cast<double>(n),
            100.0 * static_cast<double>(correct) / static_cast<double>(n)};
}

struct FinetuneConfig {
    SgdConfig sgd;  // schedule may carry a warm-up prefix; applied to rst* only
    int epochs = 0;
    int eval_batch_size = 256;
};

// Dense (or masked) training for a fixed number of epochs; no metrics.
inline void train_epochs(const Network& net, ParamStore& params, const FinetuneConfig& cfg,
                         const Dataset& train, std::uint64_t data_seed, int epochs,
                         const Mask* mask = nullptr) {
    cfg.sgd.validate();
    const LrSchedule sched = cfg.sgd.schedule.without_warmup();
    sched.validate();
    SgdState state;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double lr = lr_at(sched, epoch);
        for (auto& batch : batches(train, cfg.sgd.batch_size, data_seed, epoch, true)) {
            Graph g;
            Graph::Id logits = forward(net, params, mask, batch.inputs, g);
            Graph::Id loss = g.softmax_cross_entropy(logits, batch.labels);
            params.zero_grads();
            g.backward(loss);
            sgd_step(params, state, cfg.sgd, lr, mask);
        }
    }
}

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct CycleTracePoint {
    int cycle = 1;
    std::int64_t iteration = 0;
    double lambda = 0.0;
    double theta_star_norm = 0.0;
};

struct RunResult {
    std::string strategy;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    double initial_accuracy = 0.0;
    double final_accuracy = 0.0;
    std::vector<CycleTracePoint> extrusion_trace;
    double cost_epochs = 0.0;
    double wall_time_seconds = 0.0;
    std::uint64_t mask_checksum = 0;
    Provenance provenance;
};

namespace detail {

inline void check_masked_zeros(const ParamStore& params, const Mask& mask) {
    for (const auto& [id, m] : mask.entries) {
        const Tensor& w = params.at(id);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (m.values[i] == 0.0 && w.values[i] != 0.0)
                throw std::logic_error("mask violation: removed weight drifted from zero in " +
                                       id);
    }
}

}  // namespace detail

// Shared finetuning. Only kept weights train; the mask never changes. The
// warm-up prefix in the schedule is honored for rst-family candidates and
// stripped otherwise.
inline RunResult finetune(const Network& net, SubnetworkCandidate& candidate,
                          const FinetuneConfig& cfg, const Dataset& train, const Dataset& test,
                          std::uint64_t data_seed) {
    cfg.sgd.validate();
    detail::check_mask_matches(candidate.mask, net, candidate.weights);
    const std::uint64_t checksum_before = candidate.mask.checksum();

    LrSchedule sched = cfg.sgd.schedule;
    if (!candidate.provenance.is_rst_family()) sched = sched.without_warmup();
    sched.validate();
    const int total_epochs = cfg.epochs + sched.warmup_epochs;

    RunResult result;
    result.strategy = candidate.provenance.strategy;
    result.provenance = candidate.provenance;
    result.mask_checksum = checksum_before;
    result.initial_accuracy =
        evaluate(net, candidate.weights, &candidate.mask, test, cfg.eval_batch_size).accuracy;
    result.final_accuracy = result.initial_accuracy;

    SgdState state;
    SgdConfig sgd = cfg.sgd;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const double lr = lr_at(sched, epoch);
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (auto& batch : batches(train, sgd.batch_size, data_seed, epoch, true)) {
            Graph g;
            Graph::Id logits = forward(net, candidate.weights, &candidate.mask, batch.inputs, g);
            Graph::Id loss = g.softmax_cross_entropy(logits, batch.labels);
            const auto b = static_cast<std::int64_t>(batch.labels.size());
            loss_sum += g.value(loss).values[0] * static_cast<double>(b);
            seen += b;
            candidate.weights.zero_grads();
            g.backward(loss);
            sgd_step(candidate.weights, state, sgd, lr, &candidate.mask);
        }
        detail::check_masked_zeros(candidate.weights, candidate.mask);
        if (candidate.mask.checksum() != checksum_before)
            throw std::logic_error("mask violation: checksum changed during finetuning");
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.test_accuracy =
            evaluate(net, candidate.weights, &candidate.mask, test, cfg.eval_batch_size).accuracy;
        result.epochs.push_back(rec);
        result.final_accuracy = rec.test_accuracy;
    }
    return result;
}

// --- the seven pipelines -----------------------------------------------------

// Random mask at initialization; kept weights keep their init values.
inline SubnetworkCandidate strategy_scratch(const Network& net, const ParamStore& init,
                                            const SparsityPlan& plan, std::uint64_t mask_seed) {
    SubnetworkCandidate c;
    c.mask = random_mask(init, net, plan, mask_seed);
    c.weights = init;
    apply_mask_destructively(c.weights, c.mask);
    c.provenance = {"scratch", "random@init", "init", 1, 0, mask_seed, 0};
    return c;
}

// Magnitude mask from a pretrained copy; kept weights rewound to init.
inline SubnetworkCandidate strategy_lth(const Network& net, const ParamStore& init,
                                        const SparsityPlan& plan, const FinetuneConfig& pretrain,
                                        const Dataset& train, std::uint64_t pretrain_seed,
                                        int epochs_override = -1) {
    if (!init.has_snapshot()) throw std::invalid_argument("lth: init store has no snapshot");
    ParamStore dense = init;
    const int epochs = epochs_override >= 0 ? epochs_override : pretrain.epochs;
    train_epochs(net, dense, pretrain, train, pretrain_seed, epochs);

    SubnetworkCandidate c;
    c.mask = magnitude_mask(dense, net, plan);
    c.weights = init;
    c.weights.rewind();
    apply_mask_destructively(c.weights, c.mask);
    c.provenance = {"lth", "magnitude@pretrained", "init", 1, 0, 0, pretrain_seed};
    return c;
}

// Magnitude mask from an early pretraining checkpoint.
inline SubnetworkCandidate strategy_eb(const Network& net, const ParamStore& init,
                                       const SparsityPlan& plan, const FinetuneConfig& pretrain,
                                       double stop_fraction, const Dataset& train,
                                       std::uint64_t pretrain_seed) {
    if (stop_fraction <= 0.0 || stop_fraction > 1.0)
        throw std::invalid_argument("eb: stop fraction outside (0,1]");
    const int epochs =
        static_cast<int>(std::lround(stop_fraction * static_cast<double>(pretrain.epochs)));
    SubnetworkCandidate c = strategy_lth(net, init, plan, pretrain, train, pretrain_seed, epochs);
    c.provenance.strategy = "eb";
    c.provenance.mask_source = "magnitude@early";
    return c;
}

// Conventional pruning: mask and weights both from the pretrained network.
inline SubnetworkCandidate strategy_l1(const Network& net, const ParamStore& init,
                                       const SparsityPlan& plan, const FinetuneConfig& pretrain,
                                       const Dataset& train, std::uint64_t pretrain_seed) {
    ParamStore dense = init;
    train_epochs(net, dense, pretrain, train, pretrain_seed, pretrain.epochs);

    SubnetworkCandidate c;
    c.mask = magnitude_mask(dense, net, plan);
    c.weights = std::move(dense);
    apply_mask_destructively(c.weights, c.mask);
    c.provenance = {"l1", "magnitude@pretrained", "pretrained", 1, 0, 0, pretrain_seed};
    return c;
}

// Iterative magnitude pruning: train survivors (from init) for the mini
// budget, prune, repeat; kept weights rewound to init at the end.
inline SubnetworkCandidate strategy_lth_iter(const Network& net, const ParamStore& init,
                                             const SparsityPlan& plan,
                                             const CycleSchedule& cycles,
                                             const FinetuneConfig& mini_budget,
                                             const Dataset& train, std::uint64_t pretrain_seed) {
    if (!init.has_snapshot()) throw std::invalid_argument("lth_iter: init store has no snapshot");
    Mask current;
    bool have_mask = false;
    for (int cycle = 1; cycle <= cycles.cycles; ++cycle) {
        ParamStore params = init;
        params.rewind();
        if (have_mask) apply_mask_destructively(params, current);
        train_epochs(net, params, mini_budget, train, rng::derive(pretrain_seed, cycle),
                     mini_budget.epochs, have_mask ? &current : nullptr);
        current = magnitude_mask_counts(params, net,
                                        cycles.counts_for_cycle(params, net, plan, cycle),
                                        have_mask ? &current : nullptr);
        have_mask = true;
    }

    SubnetworkCandidate c;
    c.mask = std::move(current);
    c.weights = init;
    c.weights.rewind();
    apply_mask_destructively(c.weights, c.mask);
    c.provenance = {"lth_iter", "magnitude@cycles", "init", cycles.cycles, 0, 0, pretrain_seed};
    return c;
}

// Random mask at init, then extrusion: the dense network trains while the
// growing penalty pushes the masked weights toward zero; they are removed at
// the end.
inline SubnetworkCandidate strategy_rst(const Network& net, const ParamStore& init,
                                        const SparsityPlan& plan, std::uint64_t mask_seed,
                                        const LambdaSchedule& sched_template,
                                        const ExtrusionOptions& opts, const Dataset& train,
                                        std::vector<CycleTracePoint>* trace_out = nullptr) {
    SubnetworkCandidate c;
    c.mask = random_mask(init, net, plan, mask_seed);
    c.weights = init;
    LambdaSchedule sched = sched_template;
    sched.current = sched.lambda0;
    sched.step_counter = 0;
    sched.increments = 0;
    auto trace = extrusion_run(net, c.weights, c.mask, sched, train, opts);
    if (trace_out)
        for (const auto& p : trace)
            trace_out->push_back({1, p.iteration, p.lambda, p.theta_star_norm});
    apply_mask_destructively(c.weights, c.mask);
    c.provenance = {"rst", "random@init", "extruded", 1, 0, mask_seed, opts.data_seed};
    return c;
}

// Iterative variant: each cycle randomly condemns a slice of the survivors,
// runs a shortened extrusion against them, and removes them at cycle end.
// The penalty ramp restarts each cycle.
inline SubnetworkCandidate strategy_rst_iter(const Network& net, const ParamStore& init,
                                             const SparsityPlan& plan, std::uint64_t mask_seed,
                                             const CycleSchedule& cycles,
                                             const LambdaSchedule& per_cycle_sched,
                                             const ExtrusionOptions& opts, const Dataset& train,
                                             std::vector<CycleTracePoint>* trace_out = nullptr) {
    SubnetworkCandidate c;
    c.weights = init;
    Mask survivors;
    bool have_mask = false;
    std::int64_t iter_offset = 0;
    for (int cycle = 1; cycle <= cycles.cycles; ++cycle) {
        Mask next = random_mask_counts(c.weights, net,
                                       cycles.counts_for_cycle(c.weights, net, plan, cycle),
                                       rng::derive(mask_seed, cycle),
                                       have_mask ? &survivors : nullptr);
        LambdaSchedule sched = per_cycle_sched;
        sched.current = sched.lambda0;
        sched.step_counter = 0;
        sched.increments = 0;
        ExtrusionOptions cycle_opts = opts;
        cycle_opts.data_seed = rng::derive(opts.data_seed, cycle);
        cycle_opts.freeze = have_mask ? &survivors : nullptr;
        auto trace = extrusion_run(net, c.weights, next, sched, train, cycle_opts);
        if (trace_out)
            for (const auto& p : trace)
                trace_out->push_back(
                    {cycle, iter_offset + p.iteration, p.lambda, p.theta_star_norm});
        iter_offset += sched.total_iterations();
        apply_mask_destructively(c.weights, next);
        survivors = std::move(next);
        have_mask = true;
    }
    c.mask = std::move(survivors);
    c.provenance = {"rst_iter", "random@cycles", "extruded", cycles.cycles, 0, mask_seed,
                    opts.data_seed};
    return c;
}

// --- candidate files ---------------------------------------------------------
// Provenance header, then the mask section, then the params section.

inline void save_candidate(const SubnetworkCandidate& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("candidate: cannot write " + path);
    out << "sparselab candidate v1\n"
        << "strategy " << c.provenance.strategy << '\n'
        << "mask_source " << c.provenance.mask_source << '\n'
        << "weight_source " << c.provenance.weight_source << '\n'
        << "cycles " << c.provenance.cycles << '\n'
        << "init_seed " << c.provenance.init_seed << '\n'
        << "mask_seed " << c.provenance.mask_seed << '\n'
        << "train_seed " << c.provenance.train_seed << '\n'
        << "end\n";
    save_mask(c.mask, out);
    save_params(c.weights, out);
    if (!out) throw std::runtime_error("candidate: write failed for " + path);
}

inline SubnetworkCandidate load_candidate(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("candidate: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "sparselab candidate v1")
        throw std::runtime_error("candidate: bad header in " + path);
    SubnetworkCandidate c;
    while (std::getline(in, line)) {
        if (line == "end") break;
        const auto space = line.find(' ');
        if (space == std::string::npos)
            throw std::runtime_error("candidate: malformed header line '" + line + "' in " +
                                     path);
        const std::string key = line.substr(0, space);
        const std::string value = line.substr(space + 1);
        if (key == "strategy") c.provenance.strategy = value;
        else if (key == "mask_source") c.provenance.mask_source = value;
        else if (key == "weight_source") c.provenance.weight_source = value;
        else if (key == "cycles") c.provenance.cycles = std::stoi(value);
        else if (key == "init_seed") c.provenance.init_seed = std::stoull(value);
        else if (key == "mask_seed") c.provenance.mask_seed = std::stoull(value);
        else if (key == "train_seed") c.provenance.train_seed = std::stoull(value);
        else throw std::runtime_error("candidate: unknown header key '" + key + "' in " + path);
    }
    c.mask = load_mask(in, path);
    c.weights = load_params(in, path);
    return c;
}

}  // namespace sparselab
