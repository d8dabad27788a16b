#pragma once

// Dense f64 tensors and a reverse-mode tape sufficient for small MLPs and
// CNNs. One Graph per forward pass; backward() consumes it. All loops run in
// a fixed order so forward passes are bitwise deterministic and every
// per-sample result is independent of how the batch was assembled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparselab {

struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward touches this tensor

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        values.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<std::int64_t> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
            throw std::invalid_argument("tensor: shape/value length mismatch");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= d;
        }
        return n;
    }

    std::size_t numel() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), 0.0);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
}

class Graph {
public:
    using Id = int;

    // Registers an external tensor; backward accumulates into its .grad.
    Id leaf(Tensor& t) {
        check_live();
        nodes_.push_back(Node{});
        nodes_.back().external = &t;
        return last();
    }

    const Tensor& value(Id id) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(id));
        return n.external ? *n.external : n.out;
    }

    Id matmul(Id a, Id b) {
        check_live();
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
            throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) +
                                        " and " + shape_str(tb.shape));
        const std::int64_t M = ta.shape[0], K = ta.shape[1], N = tb.shape[1];
        Tensor out({M, N});
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t k = 0; k < K; ++k) {
                const double av = ta.values[static_cast<std::size_t>(i * K + k)];
                const double* brow = &tb.values[static_cast<std::size_t>(k * N)];
                double* orow = &out.values[static_cast<std::size_t>(i * N)];
                for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        return push(std::move(out), [a, b, M, K, N](Graph& g, const Node& self) {
            const Tensor& ta = g.value(a);
            const Tensor& tb = g.value(b);
            std::vector<double>& ga = g.grad_of(a);
            std::vector<double>& gb = g.grad_of(b);
            const std::vector<double>& go = self.grad;
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t j = 0; j < N; ++j) {
                    const double gv = go[static_cast<std::size_t>(i * N + j)];
                    for (std::int64_t k = 0; k < K; ++k)
                        ga[static_cast<std::size_t>(i * K + k)] +=
                            gv * tb.values[static_cast<std::size_t>(k * N + j)];
                }
            for (std::int64_t k = 0; k < K; ++k)
                for (std::int64_t i = 0; i < M; ++i) {
                    const double av = ta.values[static_cast<std::size_t>(i * K + k)];
                    for (std::int64_t j = 0; j < N; ++j)
                        gb[static_cast<std::size_t>(k * N + j)] +=
                            av * self.grad[static_cast<std::size_t>(i * N + j)];
                }
        });
    }

    // Cross-correlation with zero padding. Input [C,H,W] or [B,C,H,W],
    // kernel [F,C,k,k]; the output size must divide exactly.
    Id conv2d(Id x, Id w, int stride, int padding) {
        check_live();
        const Tensor& tx = value(x);
        const Tensor& tw = value(w);
        if (tw.shape.size() != 4 || tw.shape[2] != tw.shape[3])
            throw std::invalid_argument("conv2d: kernel must be [F,C,k,k], got " +
                                        shape_str(tw.shape));
        const bool batched = tx.shape.size() == 4;
        if (!batched && tx.shape.size() != 3)
            throw std::invalid_argument("conv2d: input must be [C,H,W] or [B,C,H,W], got " +
                                        shape_str(tx.shape));
        const std::int64_t B = batched ? tx.shape[0] : 1;
        const std::int64_t C = tx.shape[batched ? 1 : 0];
        const std::int64_t H = tx.shape[batched ? 2 : 1];
        const std::int64_t W = tx.shape[batched ? 3 : 2];
        const std::int64_t F = tw.shape[0], k = tw.shape[2];
        if (tw.shape[1] != C)
            throw std::invalid_argument("conv2d: kernel channels " + shape_str(tw.shape) +
                                        " do not match input " + shape_str(tx.shape));
        if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
        if (k > H + 2 * padding || k > W + 2 * padding)
            throw std::invalid_argument("conv2d: kernel larger than padded input");
        if ((H + 2 * padding - k) % stride != 0 || (W + 2 * padding - k) % stride != 0)
            throw std::invalid_argument("conv2d: output size is not integral for input " +
                                        shape_str(tx.shape) + ", kernel " + shape_str(tw.shape) +
                                        ", stride " + std::to_string(stride) + ", padding " +
                                        std::to_string(padding));
        const std::int64_t Ho = (H + 2 * padding - k) / stride + 1;
        const std::int64_t Wo = (W + 2 * padding - k) / stride + 1;

        Tensor out(batched ? std::vector<std::int64_t>{B, F, Ho, Wo}
                           : std::vector<std::int64_t>{F, Ho, Wo});
        for (std::int64_t b = 0; b < B; ++b) {
            const double* xs = &tx.values[static_cast<std::size_t>(b * C * H * W)];
            double* os = &out.values[static_cast<std::size_t>(b * F * Ho * Wo)];
            for (std::int64_t f = 0; f < F; ++f)
                for (std::int64_t oy = 0; oy < Ho; ++oy)
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        double acc = 0.0;
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                const std::int64_t iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (std::int64_t kx = 0; kx < k; ++kx) {
                                    const std::int64_t ix = ox * stride - padding + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += xs[static_cast<std::size_t>((c * H + iy) * W + ix)] *
                                           tw.values[static_cast<std::size_t>(
                                               ((f * C + c) * k + ky) * k + kx)];
                                }
                            }
                        os[static_cast<std::size_t>((f * Ho + oy) * Wo + ox)] = acc;
                    }
        }
        return push(std::move(out), [x, w, stride, padding, B, C, H, W, F, k, Ho,
                                     Wo](Graph& g, const Node& self) {
            const Tensor& tx = g.value(x);
            const Tensor& tw = g.value(w);
            std::vector<double>& gx = g.grad_of(x);
            std::vector<double>& gw = g.grad_of(w);
            for (std::int64_t b = 0; b < B; ++b) {
                const double* xs = &tx.values[static_cast<std::size_t>(b * C * H * W)];
                const double* gs = &self.grad[static_cast<std::size_t>(b * F * Ho * Wo)];
                double* gxs = &gx[static_cast<std::size_t>(b * C * H * W)];
                for (std::int64_t f = 0; f < F; ++f)
                    for (std::int64_t oy = 0; oy < Ho; ++oy)
                        for (std::int64_t ox = 0; ox < Wo; ++ox) {
                            const double gv =
                                gs[static_cast<std::size_t>((f * Ho + oy) * Wo + ox)];
                            for (std::int64_t c = 0; c < C; ++c)
                                for (std::int64_t ky = 0; ky < k; ++ky) {
                                    const std::int64_t iy = oy * stride - padding + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        const std::int64_t ix = ox * stride - padding + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        const std::size_t xi =
                                            static_cast<std::size_t>((c * H + iy) * W + ix);
                                        const std::size_t wi = static_cast<std::size_t>(
                                            ((f * C + c) * k + ky) * k + kx);
                                        gxs[xi] += gv * tw.values[wi];
                                        gw[wi] += gv * xs[xi];
                                    }
                                }
                        }
            }
        });
    }

    Id relu(Id x) {
        check_live();
        Tensor out = value(x);
        for (double& v : out.values) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), [x](Graph& g, const Node& self) {
            const Tensor& tx = g.value(x);
            std::vector<double>& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (tx.values[i] > 0.0) gx[i] += self.grad[i];
        });
    }

    Id add(Id a, Id b) {
        check_live();
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb))
            throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                                        shape_str(tb.shape));
        Tensor out = ta;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += tb.values[i];
        return push(std::move(out), [a, b](Graph& g, const Node& self) {
            std::vector<double>& ga = g.grad_of(a);
            std::vector<double>& gb = g.grad_of(b);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i];
                gb[i] += self.grad[i];
            }
        });
    }

    // x: [B,N], bias: [N]
    Id add_row_bias(Id x, Id bias) {
        check_live();
        const Tensor& tx = value(x);
        const Tensor& tb = value(bias);
        if (tx.shape.size() != 2 || tb.shape.size() != 1 || tx.shape[1] != tb.shape[0])
            throw std::invalid_argument("add_row_bias: shapes " + shape_str(tx.shape) + " and " +
                                        shape_str(tb.shape));
        const std::int64_t B = tx.shape[0], N = tx.shape[1];
        Tensor out = tx;
        for (std::int64_t i = 0; i < B; ++i)
            for (std::int64_t j = 0; j < N; ++j)
                out.values[static_cast<std::size_t>(i * N + j)] +=
                    tb.values[static_cast<std::size_t>(j)];
        return push(std::move(out), [x, bias, B, N](Graph& g, const Node& self) {
            std::vector<double>& gx = g.grad_of(x);
            std::vector<double>& gb = g.grad_of(bias);
            for (std::int64_t i = 0; i < B; ++i)
                for (std::int64_t j = 0; j < N; ++j) {
                    const double gv = self.grad[static_cast<std::size_t>(i * N + j)];
                    gx[static_cast<std::size_t>(i * N + j)] += gv;
                    gb[static_cast<std::size_t>(j)] += gv;
                }
        });
    }

    // x: [B,C,H,W] or [C,H,W], bias: [C]
    Id add_channel_bias(Id x, Id bias) {
        check_live();
        const Tensor& tx = value(x);
        const Tensor& tb = value(bias);
        const bool batched = tx.shape.size() == 4;
        if ((!batched && tx.shape.size() != 3) || tb.shape.size() != 1 ||
            tx.shape[batched ? 1 : 0] != tb.shape[0])
            throw std::invalid_argument("add_channel_bias: shapes " + shape_str(tx.shape) +
                                        " and " + shape_str(tb.shape));
        const std::int64_t B = batched ? tx.shape[0] : 1;
        const std::int64_t C = tb.shape[0];
        const std::int64_t HW = static_cast<std::int64_t>(tx.numel()) / (B * C);
        Tensor out = tx;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
                const double bv = tb.values[static_cast<std::size_t>(c)];
                double* base = &out.values[static_cast<std::size_t>((b * C + c) * HW)];
                for (std::int64_t i = 0; i < HW; ++i) base[i] += bv;
            }
        return push(std::move(out), [x, bias, B, C, HW](Graph& g, const Node& self) {
            std::vector<double>& gx = g.grad_of(x);
            std::vector<double>& gb = g.grad_of(bias);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t c = 0; c < C; ++c) {
                    const double* base = &self.grad[static_cast<std::size_t>((b * C + c) * HW)];
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < HW; ++i) {
                        gx[static_cast<std::size_t>((b * C + c) * HW + i)] += base[i];
                        acc += base[i];
                    }
                    gb[static_cast<std::size_t>(c)] += acc;
                }
        });
    }

    // Elementwise multiply by a constant 0/1 mask; zeroed entries come out as
    // exact +0.0 so masking in-graph matches zeroing the weights up front.
    Id mul_mask(Id x, const Tensor& mask) {
        check_live();
        const Tensor& tx = value(x);
        if (!tx.same_shape(mask))
            throw std::invalid_argument("mul_mask: shape mismatch " + shape_str(tx.shape) +
                                        " vs " + shape_str(mask.shape));
        Tensor out = tx;
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = mask.values[i] != 0.0 ? out.values[i] : 0.0;
        Tensor m = mask;
        return push(std::move(out), [x, m = std::move(m)](Graph& g, const Node& self) {
            std::vector<double>& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (m.values[i] != 0.0) gx[i] += self.grad[i];
        });
    }

    // [B, d1, d2, ...] -> [B, d1*d2*...]
    Id flatten(Id x) {
        check_live();
        const Tensor& tx = value(x);
        if (tx.shape.size() < 2)
            throw std::invalid_argument("flatten: need at least 2 dims, got " +
                                        shape_str(tx.shape));
        const std::int64_t B = tx.shape[0];
        const std::int64_t rest = static_cast<std::int64_t>(tx.numel()) / B;
        Tensor out({B, rest}, tx.values);
        return push(std::move(out), [x](Graph& g, const Node& self) {
            std::vector<double>& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        });
    }

    Id sum(Id x) {
        check_live();
        const Tensor& tx = value(x);
        double acc = 0.0;
        for (double v : tx.values) acc += v;
        Tensor out({1}, {acc});
        return push(std::move(out), [x](Graph& g, const Node& self) {
            std::vector<double>& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[0];
        });
    }

    // Mean over the batch of -log softmax(logits)[label]; max-subtraction
    // keeps it finite for any finite logits.
    Id softmax_cross_entropy(Id logits, const std::vector<int>& labels) {
        check_live();
        const Tensor& tl = value(logits);
        if (tl.shape.size() != 2)
            throw std::invalid_argument("softmax_cross_entropy: logits must be [B,C], got " +
                                        shape_str(tl.shape));
        const std::int64_t B = tl.shape[0], C = tl.shape[1];
        if (static_cast<std::int64_t>(labels.size()) != B)
            throw std::invalid_argument("softmax_cross_entropy: batch " + std::to_string(B) +
                                        " vs " + std::to_string(labels.size()) + " labels");
        for (int y : labels)
            if (y < 0 || y >= C)
                throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                            " outside [0, " + std::to_string(C) + ")");
        std::vector<double> probs(static_cast<std::size_t>(B * C));
        double loss = 0.0;
        for (std::int64_t i = 0; i < B; ++i) {
            const double* row = &tl.values[static_cast<std::size_t>(i * C)];
            double m = row[0];
            for (std::int64_t j = 1; j < C; ++j) m = std::max(m, row[j]);
            double s = 0.0;
            for (std::int64_t j = 0; j < C; ++j) {
                const double e = std::exp(row[j] - m);
                probs[static_cast<std::size_t>(i * C + j)] = e;
                s += e;
            }
            const double logsum = std::log(s);
            for (std::int64_t j = 0; j < C; ++j)
                probs[static_cast<std::size_t>(i * C + j)] /= s;
            loss += logsum - (row[labels[static_cast<std::size_t>(i)]] - m);
        }
        loss /= static_cast<double>(B);
        Tensor out({1}, {loss});
        return push(std::move(out), [logits, labels, probs = std::move(probs), B,
                                     C](Graph& g, const Node& self) {
            std::vector<double>& gl = g.grad_of(logits);
            const double scale = self.grad[0] / static_cast<double>(B);
            for (std::int64_t i = 0; i < B; ++i)
                for (std::int64_t j = 0; j < C; ++j) {
                    const double onehot = labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
                    gl[static_cast<std::size_t>(i * C + j)] +=
                        scale * (probs[static_cast<std::size_t>(i * C + j)] - onehot);
                }
        });
    }

    // Populates .grad on every leaf tensor reachable from `loss`, visiting
    // nodes in exact reverse construction order. The graph is consumed.
    void backward(Id loss) {
        check_live();
        Node& ln = nodes_.at(static_cast<std::size_t>(loss));
        const Tensor& lt = ln.external ? *ln.external : ln.out;
        if (lt.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(lt.shape));
        for (Node& n : nodes_)
            n.grad.assign((n.external ? n.external->values : n.out.values).size(), 0.0);
        nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
        for (Id i = loss; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(*this, n);
        }
        for (Node& n : nodes_)
            if (n.external) {
                n.external->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    n.external->grad[i] += n.grad[i];
            }
        consumed_ = true;
    }

    bool consumed() const { return consumed_; }

private:
    struct Node {
        Tensor out;
        Tensor* external = nullptr;
        std::vector<double> grad;
        std::function<void(Graph&, const Node&)> back;
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;

    void check_live() const {
        if (consumed_) throw std::logic_error("graph already consumed by backward()");
    }
    Id last() const { return static_cast<Id>(nodes_.size()) - 1; }
    Id push(Tensor&& out, std::function<void(Graph&, const Node&)> back) {
        nodes_.push_back(Node{});
        nodes_.back().out = std::move(out);
        nodes_.back().back = std::move(back);
        return last();
    }
    std::vector<double>& grad_of(Id id) { return nodes_[static_cast<std::size_t>(id)].grad; }
};

}  // namespace sparselab
