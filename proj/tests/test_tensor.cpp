#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "sparselab/rng.hpp"
#include "sparselab/tensor.hpp"

using namespace sparselab;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    auto g = rng::engine(seed);
    for (double& v : t.values) v = rng::normal(g);
    return t;
}

}  // namespace

TEST(Matmul, IdentityTimesMatrix) {
    Tensor a({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Graph g;
    auto out = g.matmul(g.leaf(a), g.leaf(b));
    EXPECT_EQ(g.value(out).values, (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    Graph g;
    auto out = g.matmul(g.leaf(a), g.leaf(b));
    EXPECT_EQ(g.value(out).values, (std::vector<double>{11}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a({2, 3});
    Tensor b({2, 3});
    Graph g;
    try {
        g.matmul(g.leaf(a), g.leaf(b));
        FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor a = random_tensor({3, 4}, seed * 2 + 1);
        Tensor b = random_tensor({4, 2}, seed * 2 + 2);
        auto loss = [&]() {
            Graph g;
            return g.value(g.sum(g.matmul(g.leaf(a), g.leaf(b)))).values[0];
        };
        Graph g;
        g.backward(g.sum(g.matmul(g.leaf(a), g.leaf(b))));
        EXPECT_LT(oracles::fd_worst_rel_error(a, loss, a.grad), 1e-4) << "seed " << seed;
        EXPECT_LT(oracles::fd_worst_rel_error(b, loss, b.grad), 1e-4) << "seed " << seed;
    }
}

TEST(Conv2d, IdentityKernel) {
    Tensor x = random_tensor({1, 3, 3}, 7);
    Tensor w({1, 1, 1, 1}, {1.0});
    Graph g;
    auto out = g.conv2d(g.leaf(x), g.leaf(w), 1, 0);
    EXPECT_EQ(g.value(out).values, x.values);
    EXPECT_EQ(g.value(out).shape, x.shape);
}

TEST(Conv2d, SumKernel) {
    Tensor x({1, 2, 2}, {1, 1, 1, 1});
    Tensor w({1, 1, 2, 2}, {1, 1, 1, 1});
    Graph g;
    auto out = g.conv2d(g.leaf(x), g.leaf(w), 1, 0);
    EXPECT_EQ(g.value(out).shape, (std::vector<std::int64_t>{1, 1, 1}));
    EXPECT_EQ(g.value(out).values[0], 4.0);
}

TEST(Conv2d, NonIntegralOutputRejected) {
    Tensor x({1, 5, 5});
    Tensor w({1, 1, 2, 2});
    Graph g;
    EXPECT_THROW(g.conv2d(g.leaf(x), g.leaf(w), 2, 0), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor x = random_tensor({2, 5, 5}, seed * 2 + 100);
        Tensor w = random_tensor({3, 2, 3, 3}, seed * 2 + 101);
        auto loss = [&]() {
            Graph g;
            return g.value(g.sum(g.conv2d(g.leaf(x), g.leaf(w), 1, 0))).values[0];
        };
        Graph g;
        g.backward(g.sum(g.conv2d(g.leaf(x), g.leaf(w), 1, 0)));
        EXPECT_LT(oracles::fd_worst_rel_error(w, loss, w.grad), 1e-4) << "seed " << seed;
        EXPECT_LT(oracles::fd_worst_rel_error(x, loss, x.grad), 1e-4) << "seed " << seed;
    }
}

TEST(Conv2d, StridedPaddedAgainstFiniteDifferences) {
    Tensor x = random_tensor({1, 4, 4}, 55);
    Tensor w = random_tensor({2, 1, 3, 3}, 56);
    auto loss = [&]() {
        Graph g;
        return g.value(g.sum(g.conv2d(g.leaf(x), g.leaf(w), 2, 1))).values[0];
    };
    Graph g;
    auto out = g.conv2d(g.leaf(x), g.leaf(w), 2, 1);
    EXPECT_EQ(g.value(out).shape, (std::vector<std::int64_t>{2, 2, 2}));
    g.backward(g.sum(out));
    EXPECT_LT(oracles::fd_worst_rel_error(w, loss, w.grad), 1e-4);
}

TEST(Relu, Elementwise) {
    Tensor x({3}, {-1, 0, 2});
    Graph g;
    EXPECT_EQ(g.value(g.relu(g.leaf(x))).values, (std::vector<double>{0, 0, 2}));
}

TEST(Relu, AllPositiveUnchanged) {
    Tensor x = random_tensor({10}, 3);
    for (double& v : x.values) v = std::fabs(v) + 0.1;
    Graph g;
    EXPECT_EQ(g.value(g.relu(g.leaf(x))).values, x.values);
}

TEST(Relu, GradientIsPositiveIndicator) {
    Tensor x = random_tensor({50}, 11);
    Graph g;
    g.backward(g.sum(g.relu(g.leaf(x))));
    for (std::size_t i = 0; i < x.values.size(); ++i)
        EXPECT_EQ(x.grad[i], x.values[i] > 0.0 ? 1.0 : 0.0);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
    Tensor logits({1, 10});
    Graph g;
    auto loss = g.softmax_cross_entropy(g.leaf(logits), {3});
    EXPECT_NEAR(g.value(loss).values[0], std::log(10.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, LargeLogitsStayFinite) {
    Tensor logits({1, 2}, {1000.0, 0.0});
    Graph g;
    auto loss = g.softmax_cross_entropy(g.leaf(logits), {0});
    EXPECT_NEAR(g.value(loss).values[0], 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, NoNanForHugeFiniteLogits) {
    auto g0 = rng::engine(21);
    Tensor logits({4, 6});
    for (double& v : logits.values) v = (rng::uniform01(g0) * 2.0 - 1.0) * 1e6;
    Graph g;
    auto loss = g.softmax_cross_entropy(g.leaf(logits), {0, 1, 2, 3});
    EXPECT_TRUE(std::isfinite(g.value(loss).values[0]));
    g.backward(loss);
    for (double v : logits.grad) EXPECT_TRUE(std::isfinite(v));
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeRejected) {
    Tensor logits({1, 3});
    Graph g;
    EXPECT_THROW(g.softmax_cross_entropy(g.leaf(logits), {3}), std::invalid_argument);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor logits = random_tensor({4, 5}, 200 + seed);
        const std::vector<int> labels{0, 2, 4, 1};
        auto loss = [&]() {
            Graph g;
            return g.value(g.softmax_cross_entropy(g.leaf(logits), labels)).values[0];
        };
        Graph g;
        g.backward(g.softmax_cross_entropy(g.leaf(logits), labels));
        EXPECT_LT(oracles::fd_worst_rel_error(logits, loss, logits.grad), 1e-4)
            << "seed " << seed;
    }
}

TEST(Backward, SumGivesOnes) {
    Tensor x = random_tensor({7}, 5);
    Graph g;
    g.backward(g.sum(g.leaf(x)));
    for (double v : x.grad) EXPECT_EQ(v, 1.0);
}

TEST(Backward, AdditiveReuseDoublesGradient) {
    Tensor x = random_tensor({4}, 6);
    Graph g;
    auto leaf = g.leaf(x);
    g.backward(g.sum(g.add(leaf, leaf)));
    for (double v : x.grad) EXPECT_EQ(v, 2.0);
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x({2, 2});
    Graph g;
    EXPECT_THROW(g.backward(g.leaf(x)), std::invalid_argument);
}

TEST(Backward, GraphConsumedAfterBackward) {
    Tensor x({1}, {2.0});
    Graph g;
    g.backward(g.sum(g.leaf(x)));
    EXPECT_THROW(g.sum(g.leaf(x)), std::logic_error);
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor x = random_tensor({3, 4}, 300 + seed);
        Tensor w1 = random_tensor({4, 6}, 400 + seed);
        Tensor b1 = random_tensor({6}, 500 + seed);
        Tensor w2 = random_tensor({6, 3}, 600 + seed);
        Tensor b2 = random_tensor({3}, 700 + seed);
        const std::vector<int> labels{0, 1, 2};
        auto loss = [&]() {
            Graph g;
            auto h = g.relu(g.add_row_bias(g.matmul(g.leaf(x), g.leaf(w1)), g.leaf(b1)));
            auto logits = g.add_row_bias(g.matmul(h, g.leaf(w2)), g.leaf(b2));
            return g.value(g.softmax_cross_entropy(logits, labels)).values[0];
        };
        {
            Graph g;
            auto h = g.relu(g.add_row_bias(g.matmul(g.leaf(x), g.leaf(w1)), g.leaf(b1)));
            auto logits = g.add_row_bias(g.matmul(h, g.leaf(w2)), g.leaf(b2));
            g.backward(g.softmax_cross_entropy(logits, labels));
        }
        EXPECT_LT(oracles::fd_worst_rel_error(w1, loss, w1.grad), 1e-4) << "seed " << seed;
        EXPECT_LT(oracles::fd_worst_rel_error(b1, loss, b1.grad), 1e-4) << "seed " << seed;
        EXPECT_LT(oracles::fd_worst_rel_error(w2, loss, w2.grad), 1e-4) << "seed " << seed;
        EXPECT_LT(oracles::fd_worst_rel_error(b2, loss, b2.grad), 1e-4) << "seed " << seed;
    }
}

TEST(Forward, BitwiseDeterministic) {
    Tensor x = random_tensor({3, 4}, 1);
    Tensor w = random_tensor({4, 5}, 2);
    Graph g1, g2;
    const Tensor& o1 = g1.value(g1.matmul(g1.leaf(x), g1.leaf(w)));
    const Tensor& o2 = g2.value(g2.matmul(g2.leaf(x), g2.leaf(w)));
    ASSERT_EQ(o1.values.size(), o2.values.size());
    EXPECT_EQ(0, std::memcmp(o1.values.data(), o2.values.data(),
                             o1.values.size() * sizeof(double)));
}

TEST(Conv2d, PerSampleResultsIndependentOfBatchComposition) {
    Tensor a = random_tensor({1, 4, 4}, 31);
    Tensor b = random_tensor({1, 4, 4}, 32);
    Tensor w = random_tensor({2, 1, 3, 3}, 33);
    Tensor batch_ab({2, 1, 4, 4});
    std::copy(a.values.begin(), a.values.end(), batch_ab.values.begin());
    std::copy(b.values.begin(), b.values.end(), batch_ab.values.begin() + 16);
    Tensor batch_ba({2, 1, 4, 4});
    std::copy(b.values.begin(), b.values.end(), batch_ba.values.begin());
    std::copy(a.values.begin(), a.values.end(), batch_ba.values.begin() + 16);

    Graph g1, g2;
    const Tensor& o1 = g1.value(g1.conv2d(g1.leaf(batch_ab), g1.leaf(w), 1, 1));
    const Tensor& o2 = g2.value(g2.conv2d(g2.leaf(batch_ba), g2.leaf(w), 1, 1));
    const std::size_t half = o1.values.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        EXPECT_EQ(o1.values[i], o2.values[half + i]);
        EXPECT_EQ(o1.values[half + i], o2.values[i]);
    }
}
