#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <functional>

#include "posediff/errors.hpp"
#include "posediff/nn/graph.hpp"

using namespace posediff;
using nn::Shape;
using nn::Var;
using Mat = Eigen::MatrixXd;

namespace {

// A small op graph together with its inputs and trainable parameters.
struct OpCase {
    std::vector<std::pair<Shape, Mat>> inputs;
    nn::ParameterStore<double> params;
    std::function<Var(nn::Graph<double>&, const std::vector<Var>&, nn::ParameterStore<double>&)> op;

    Var add_input(const Shape& s, std::mt19937_64& rng) {
        std::normal_distribution<double> n;
        Mat m(s.rows(), s.channels);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
        inputs.emplace_back(s, m);
        return Var{static_cast<int>(inputs.size()) - 1};
    }
    void add_param(const std::string& name, Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 0.5) {
        std::normal_distribution<double> n(0.0, scale);
        auto& p = params.add(name, r, c);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
    }
};

// Projects the op output on a fixed direction so the loss is a scalar.
double evaluate(OpCase& c, const Mat& direction, std::vector<Mat>* input_grads) {
    nn::Graph<double> g(input_grads != nullptr);
    std::vector<Var> in;
    for (auto& [s, m] : c.inputs) in.push_back(g.input(s, m));
    const Var y = c.op(g, in, c.params);
    const double loss = (g.value(y).array() * direction.array()).sum();
    if (input_grads) {
        c.params.zero_grad();
        g.backward(y, direction);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Mat& gr = g.grad(in[i]);
            input_grads->push_back(gr.size() ? gr : Mat::Zero(c.inputs[i].second.rows(), c.inputs[i].second.cols()));
        }
    }
    return loss;
}

void check_gradients(OpCase& c, std::uint64_t seed, double tol = 1e-6) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Mat direction;
    {
        nn::Graph<double> g(false);
        std::vector<Var> in;
        for (auto& [s, m] : c.inputs) in.push_back(g.input(s, m));
        const Mat& out = g.value(c.op(g, in, c.params));
        direction.resize(out.rows(), out.cols());
        for (Eigen::Index i = 0; i < direction.size(); ++i) direction.data()[i] = n(rng);
    }
    std::vector<Mat> grads;
    evaluate(c, direction, &grads);
    const double h = 1e-6;
    auto compare = [&](double* slot, double analytic, const std::string& what) {
        const double keep = *slot;
        *slot = keep + h;
        const double up = evaluate(c, direction, nullptr);
        *slot = keep - h;
        const double down = evaluate(c, direction, nullptr);
        *slot = keep;
        const double numeric = (up - down) / (2 * h);
        EXPECT_LE(std::abs(numeric - analytic), tol * std::max(1.0, std::abs(numeric))) << what;
    };
    for (std::size_t i = 0; i < c.inputs.size(); ++i)
        for (Eigen::Index e = 0; e < c.inputs[i].second.size(); ++e)
            compare(c.inputs[i].second.data() + e, grads[i].data()[e], "input " + std::to_string(i));
    for (auto& p : c.params)
        for (Eigen::Index e = 0; e < p.value.size(); ++e) compare(p.value.data() + e, p.grad.data()[e], p.name);
}

}  // namespace

TEST(GraphGradients, Conv3x3WithBias) {
    std::mt19937_64 rng(1);
    OpCase c;
    c.add_input({2, 5, 4, 3}, rng);
    c.add_param("w", 27, 4, rng);
    c.add_param("b", 1, 4, rng);
    c.op = [](auto& g, auto& in, auto& p) { return g.conv2d(in[0], p.at("w"), &p.at("b"), 3); };
    check_gradients(c, 2);
}

TEST(GraphGradients, StridedConv) {
    std::mt19937_64 rng(3);
    OpCase c;
    c.add_input({2, 6, 6, 2}, rng);
    c.add_param("w", 18, 3, rng);
    c.op = [](auto& g, auto& in, auto& p) { return g.conv2d(in[0], p.at("w"), nullptr, 3, 2); };
    check_gradients(c, 4);
}

TEST(GraphGradients, LinearPointwise) {
    std::mt19937_64 rng(5);
    OpCase c;
    c.add_input({3, 1, 1, 4}, rng);
    c.add_param("w", 4, 5, rng);
    c.add_param("b", 1, 5, rng);
    c.op = [](auto& g, auto& in, auto& p) { return g.linear(in[0], p.at("w"), &p.at("b")); };
    check_gradients(c, 6);
}

TEST(GraphGradients, GroupNorm) {
    std::mt19937_64 rng(7);
    OpCase c;
    c.add_input({2, 3, 3, 6}, rng);
    c.add_param("gamma", 1, 6, rng);
    c.add_param("beta", 1, 6, rng);
    c.op = [](auto& g, auto& in, auto& p) { return g.group_norm(in[0], p.at("gamma"), p.at("beta"), 3); };
    check_gradients(c, 8);
}

TEST(GraphGradients, ActivationsAndElementwise) {
    std::mt19937_64 rng(9);
    OpCase c;
    c.add_input({2, 3, 2, 3}, rng);
    c.add_input({2, 3, 2, 3}, rng);
    c.add_input({2, 1, 1, 3}, rng);
    c.op = [](auto& g, auto& in, auto&) {
        // relu's kink is avoided: inputs are continuous normals, far from 0 at this h.
        return g.add_per_sample(g.add(g.silu(in[0]), g.relu(in[1])), in[2]);
    };
    check_gradients(c, 10);
}

TEST(GraphGradients, ScalePerSample) {
    std::mt19937_64 rng(13);
    OpCase c;
    c.add_input({3, 2, 3, 4}, rng);
    c.add_input({3, 1, 1, 4}, rng);
    c.op = [](auto& g, auto& in, auto&) { return g.scale_per_sample(in[0], in[1]); };
    check_gradients(c, 14);
}

TEST(GraphOps, ScalePerSampleOfZeroIsIdentity) {
    nn::Graph<double> g(false);
    const Mat x = Mat::Random(2 * 4, 3);
    const Var y = g.scale_per_sample(g.input({2, 2, 2, 3}, x), g.input({2, 1, 1, 3}, Mat::Zero(2, 3)));
    EXPECT_EQ(g.value(y), x);
}

TEST(GraphOps, ScalePerSampleRejectsMismatchedVector) {
    nn::Graph<double> g(false);
    const Var x = g.input({2, 2, 2, 3}, Mat::Zero(8, 3));
    EXPECT_THROW(g.scale_per_sample(x, g.input({1, 1, 1, 3}, Mat::Zero(1, 3))), Error);
}

TEST(GraphGradients, ConcatAndUpsample) {
    std::mt19937_64 rng(11);
    OpCase c;
    c.add_input({2, 2, 3, 2}, rng);
    c.add_input({2, 4, 6, 3}, rng);
    c.op = [](auto& g, auto& in, auto&) { return g.concat_channels(g.upsample2x(in[0]), in[1]); };
    check_gradients(c, 12);
}

TEST(GraphGradients, Attention) {
    std::mt19937_64 rng(13);
    OpCase c;
    c.add_input({2, 2, 3, 4}, rng);
    c.add_input({2, 3, 1, 4}, rng);
    c.add_input({2, 3, 1, 5}, rng);
    c.op = [](auto& g, auto& in, auto&) { return g.attention(in[0], in[1], in[2]); };
    check_gradients(c, 14);
}

TEST(GraphGradients, GraphConv) {
    std::mt19937_64 rng(15);
    OpCase c;
    c.add_input({2, 2, 2, 6}, rng);  // 3 nodes x 2 channels
    c.add_param("w", 8, 8, rng);
    Mat a(3, 3);
    a << 0.5, 0.4, 0, 0.4, 0.33, 0.4, 0, 0.4, 0.5;
    c.op = [a](auto& g, auto& in, auto& p) { return g.graph_conv(in[0], a, 3, p.at("w")); };
    check_gradients(c, 16);
}

TEST(GraphGradients, EmbeddingMean) {
    std::mt19937_64 rng(17);
    OpCase c;
    c.add_param("table", 6, 3, rng);
    c.op = [](auto& g, auto&, auto& p) {
        const std::vector<std::vector<int>> ids{{1, 4, 4}, {2}};
        return g.embedding_mean(p.at("table"), ids);
    };
    check_gradients(c, 18);
}

TEST(GraphGradients, MseBackwardSeedsScaledResidual) {
    nn::Graph<double> g(true);
    Mat x = Mat::Random(4, 2), t = Mat::Random(4, 2);
    const Var v = g.input({4, 1, 1, 2}, x);
    const double loss = g.mse_backward(v, t);
    EXPECT_NEAR(loss, (x - t).squaredNorm() / 8.0, 1e-15);
    EXPECT_LT((g.grad(v) - (x - t) * (2.0 / 8.0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GraphOps, GroupNormNormalises) {
    nn::Graph<double> g(false);
    nn::Parameter<double> gamma{"g", Mat::Ones(1, 4), Mat()}, beta{"b", Mat::Zero(1, 4), Mat()};
    const Var x = g.input({1, 4, 4, 4}, Mat::Random(16, 4) * 3.0);
    const Mat& y = g.value(g.group_norm(x, gamma, beta, 2));
    for (int grp = 0; grp < 2; ++grp) {
        const auto block = y.middleCols(2 * grp, 2);
        const double mean = block.mean();
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR((block.array() - mean).square().mean(), 1.0, 1e-4);
    }
}

TEST(GraphOps, GroupingErrors) {
    nn::Graph<double> g(false);
    nn::Parameter<double> gamma{"g", Mat::Ones(1, 5), Mat()}, beta{"b", Mat::Zero(1, 5), Mat()};
    const Var x = g.input({1, 2, 2, 5}, Mat::Zero(4, 5));
    try {
        g.group_norm(x, gamma, beta, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidGrouping);
    }
    nn::Parameter<double> w{"w", Mat::Zero(8, 8), Mat()};
    EXPECT_THROW(g.graph_conv(x, Mat::Identity(3, 3), 3, w), Error);
}

TEST(GraphOps, UpsampleRepeatsPixels) {
    nn::Graph<double> g(false);
    Mat x(4, 1);
    x << 1, 2, 3, 4;
    const Mat& y = g.value(g.upsample2x(g.input({1, 2, 2, 1}, x)));
    Eigen::VectorXd expected(16);
    expected << 1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4;
    EXPECT_EQ(y.col(0), expected);
}

TEST(GraphOps, ConvMatchesDirectSum) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n;
    const int h = 4, w = 5, cin = 2, cout = 3;
    Mat x(h * w, cin), wt(9 * cin, cout);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < wt.size(); ++i) wt.data()[i] = n(rng);
    nn::Graph<double> g(false);
    nn::Parameter<double> weight{"w", wt, Mat()};
    const Mat& y = g.value(g.conv2d(g.input({1, h, w, cin}, x), weight, nullptr, 3));
    for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox)
            for (int co = 0; co < cout; ++co) {
                double acc = 0;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            const int iy = oy + ky - 1, ix = ox + kx - 1;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x(iy * w + ix, ci) * wt((ky * 3 + kx) * cin + ci, co);
                        }
                EXPECT_NEAR(y(oy * w + ox, co), acc, 1e-12);
            }
}
