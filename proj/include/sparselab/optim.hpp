#pragma once

// SGD with momentum/weight decay, piecewise learning-rate schedules, the
// growing L2 penalty on to-be-removed weights, and the extrusion loop that
// trains a dense network while suppressing them.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/data.hpp"
#include "sparselab/mask.hpp"
#include "sparselab/network.hpp"

namespace sparselab {

struct LrSchedule {
    std::vector<std::pair<int, double>> breakpoints;  // (start_epoch, lr), first at 0
    int warmup_epochs = 0;                            // optional prefix
    double warmup_lr = 0.0;

    void validate() const {
        if (breakpoints.empty() || breakpoints.front().first != 0)
            throw std::invalid_argument("lr schedule: first breakpoint must start at epoch 0");
        for (std::size_t i = 0; i < breakpoints.size(); ++i) {
            if (breakpoints[i].second <= 0.0)
                throw std::invalid_argument("lr schedule: learning rates must be positive");
            if (i > 0 && breakpoints[i].first <= breakpoints[i - 1].first)
                throw std::invalid_argument("lr schedule: breakpoints must strictly increase");
        }
        if (warmup_epochs < 0 || (warmup_epochs > 0 && warmup_lr <= 0.0))
            throw std::invalid_argument("lr schedule: bad warm-up");
    }

    LrSchedule without_warmup() const {
        LrSchedule s = *this;
        s.warmup_epochs = 0;
        s.warmup_lr = 0.0;
        return s;
    }
};

// Warm-up epochs take the warm-up lr; afterwards the breakpoints apply,
// shifted past the warm-up.
inline double lr_at(const LrSchedule& sched, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    if (epoch < sched.warmup_epochs) return sched.warmup_lr;
    const int e = epoch - sched.warmup_epochs;
    double lr = sched.breakpoints.front().second;
    for (const auto& [start, value] : sched.breakpoints)
        if (start <= e) lr = value;
    return lr;
}

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 0.0;
    int batch_size = 128;
    LrSchedule schedule;

    void validate() const {
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("sgd: momentum outside [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("sgd: negative weight decay");
        if (batch_size < 1) throw std::invalid_argument("sgd: batch size must be >= 1");
    }
};

// Velocity buffers, one per parameter id.
struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

// velocity = momentum*velocity + grad + weight_decay*param; param -= lr*velocity.
// Entries masked out by `freeze` are pinned at exactly 0.
inline void sgd_step(ParamStore& params, SgdState& state, const SgdConfig& config, double lr,
                     const Mask* freeze = nullptr) {
    for (auto& e : params.entries) {
        Tensor& p = e.tensor;
        if (p.grad.size() != p.values.size())
            throw std::invalid_argument("sgd_step: missing gradient for " + e.id);
        auto& v = state.velocity[e.id];
        if (v.size() != p.values.size()) v.assign(p.values.size(), 0.0);
        const Tensor* fm = detail::mask_entry(freeze, e.id);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            if (fm && fm->values[i] == 0.0) {
                v[i] = 0.0;
                p.values[i] = 0.0;
                continue;
            }
            v[i] = config.momentum * v[i] + p.grad[i] + config.weight_decay * p.values[i];
            p.values[i] -= lr * v[i];
        }
    }
}

// Adds the penalty gradient lambda*theta on entries where `keep` is 0. The
// surviving entries receive only the data-loss gradient.
inline void apply_penalty_gradient(ParamStore& params, const Mask& keep, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("penalty: lambda must be >= 0");
    for (const auto& [id, m] : keep.entries) {
        Tensor& w = params.at(id);
        if (w.shape != m.shape)
            throw std::invalid_argument("penalty: selector shape " + shape_str(m.shape) +
                                        " does not match parameter " + id + " " +
                                        shape_str(w.shape));
        w.ensure_grad();
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (m.values[i] == 0.0) w.grad[i] += lambda * w.values[i];
    }
}

// Backward of L plus the 0.5*lambda*||theta*||^2 term, theta* being the
// entries masked out by `keep`.
inline void regularized_backward(Graph& g, Graph::Id loss, ParamStore& params, const Mask& keep,
                                 double lambda) {
    g.backward(loss);
    apply_penalty_gradient(params, keep, lambda);
}

inline double theta_star_sq_norm(const ParamStore& params, const Mask& keep) {
    double acc = 0.0;
    for (const auto& [id, m] : keep.entries) {
        const Tensor& w = params.at(id);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (m.values[i] == 0.0) acc += w.values[i] * w.values[i];
    }
    return acc;
}

// Total objective value for a given data loss.
inline double regularized_loss_value(double data_loss, const ParamStore& params, const Mask& keep,
                                     double lambda) {
    return data_loss + 0.5 * lambda * theta_star_sq_norm(params, keep);
}

// Growing-penalty schedule: every v_eta-th step the coefficient rises by eta
// until it hits the bound, then stays there. The current value is derived as
// lambda0 + increments*eta (clamped) so it lands on the bound exactly.
struct LambdaSchedule {
    double lambda0 = 0.0;
    double eta = 1e-4;
    double lambda_b = 1.0;
    int v_eta = 5;       // steps between increments
    int v_s = 40000;     // stability steps after the bound
    double current = 0.0;
    std::int64_t step_counter = 0;
    std::int64_t increments = 0;

    static LambdaSchedule make(double lambda0, double eta, double lambda_b, int v_eta, int v_s) {
        LambdaSchedule s;
        s.lambda0 = lambda0;
        s.eta = eta;
        s.lambda_b = lambda_b;
        s.v_eta = v_eta;
        s.v_s = v_s;
        s.current = lambda0;
        s.validate();
        return s;
    }

    void validate() const {
        if (lambda0 < 0.0 || lambda_b < lambda0)
            throw std::invalid_argument("lambda schedule: need 0 <= lambda0 <= lambda_b");
        if (lambda_b > lambda0 && eta <= 0.0)
            throw std::invalid_argument("lambda schedule: eta must be positive to ramp");
        if (v_eta < 1) throw std::invalid_argument("lambda schedule: v_eta must be >= 1");
        if (v_s < 0) throw std::invalid_argument("lambda schedule: v_s must be >= 0");
    }

    bool at_bound() const { return current >= lambda_b; }

    // Ramp length in optimizer iterations.
    std::int64_t ramp_iterations() const {
        if (lambda_b <= lambda0) return 0;
        const auto steps = static_cast<std::int64_t>(std::ceil((lambda_b - lambda0) / eta));
        return steps * v_eta;
    }
    std::int64_t total_iterations() const { return ramp_iterations() + v_s; }
};

// One call per optimizer iteration.
inline void lambda_step(LambdaSchedule& s) {
    ++s.step_counter;
    if (s.current < s.lambda_b && s.step_counter % s.v_eta == 0) {
        ++s.increments;
        const double next = s.lambda0 + static_cast<double>(s.increments) * s.eta;
        s.current = std::min(s.lambda_b, next);
    }
}

// Paper-style cost of the transformation in equivalent epochs:
// ((lambda_b/eta)*v_eta + v_s) * batch_size / dataset_size.
inline double extra_cost(const LambdaSchedule& s, int batch_size, std::int64_t dataset_size) {
    if (dataset_size <= 0) throw std::invalid_argument("extra_cost: dataset size must be > 0");
    const double ramp = s.lambda_b > 0.0 ? (s.lambda_b / s.eta) * static_cast<double>(s.v_eta)
                                         : 0.0;
    return (ramp + static_cast<double>(s.v_s)) * static_cast<double>(batch_size) /
           static_cast<double>(dataset_size);
}

struct ExtrusionPoint {
    std::int64_t iteration = 0;
    double lambda = 0.0;
    double theta_star_norm = 0.0;
};

struct ExtrusionOptions {
    double lr = 1e-3;
    int batch_size = 64;
    double momentum = 0.9;
    std::uint64_t data_seed = 0;
    const Mask* freeze = nullptr;   // already-removed entries pinned at 0
    std::int64_t trace_stride = 0;  // 0: auto (~200 points)
};

// Trains the dense network while the growing penalty suppresses the entries
// masked out by `keep`. Returns the trace; params are updated in place and
// keep their suppressed (not yet zeroed) masked values.
inline std::vector<ExtrusionPoint> extrusion_run(const Network& net, ParamStore& params,
                                                 const Mask& keep, LambdaSchedule& sched,
                                                 const Dataset& train,
                                                 const ExtrusionOptions& opts) {
    if (train.size() < 1) throw std::invalid_argument("extrusion: empty dataset");
    sched.validate();
    detail::check_mask_matches(keep, net, params);

    const std::int64_t total = sched.total_iterations();
    std::int64_t stride = opts.trace_stride;
    if (stride <= 0) stride = std::max<std::int64_t>(1, total / 200);

    SgdConfig sgd;
    sgd.momentum = opts.momentum;
    sgd.weight_decay = 0.0;  // only the penalty acts on theta* during extrusion
    sgd.batch_size = opts.batch_size;
    sgd.schedule.breakpoints = {{0, opts.lr}};
    SgdState state;

    std::vector<ExtrusionPoint> trace;
    trace.push_back({0, sched.current, std::sqrt(theta_star_sq_norm(params, keep))});

    std::int64_t iter = 0;
    int epoch = 0;
    while (iter < total) {
        auto epoch_batches = batches(train, opts.batch_size, opts.data_seed, epoch, true);
        for (auto& batch : epoch_batches) {
            if (iter >= total) break;
            Graph g;
            Graph::Id logits = forward(net, params, nullptr, batch.inputs, g);
            Graph::Id loss = g.softmax_cross_entropy(logits, batch.labels);
            params.zero_grads();
            regularized_backward(g, loss, params, keep, sched.current);
            sgd_step(params, state, sgd, opts.lr, opts.freeze);
            lambda_step(sched);
            ++iter;
            if (iter % stride == 0 || iter == total)
                trace.push_back({iter, sched.current,
                                 std::sqrt(theta_star_sq_norm(params, keep))});
        }
        ++epoch;
    }
    return trace;
}

}  // namespace sparselab
