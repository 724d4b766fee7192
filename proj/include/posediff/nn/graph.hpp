#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "posediff/errors.hpp"

namespace posediff::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Activations are (batch * height * width) x channels matrices, rows ordered
/// sample-major then row then column. A plain feature vector per sample is
/// the 1 x 1 spatial case.
struct Shape {
    int batch = 0;
    int height = 1;
    int width = 1;
    int channels = 0;

    int pixels() const { return height * width; }
    int rows() const { return batch * height * width; }
    bool operator==(const Shape&) const = default;
};

template <typename Scalar>
struct Parameter {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
};

/// Named trainable tensors in registration order. References stay valid as
/// entries are appended.
template <typename Scalar>
class ParameterStore {
public:
    Parameter<Scalar>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw Error(ErrorCode::InvalidConfig, "duplicate parameter " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back({name, Matrix<Scalar>::Zero(rows, cols), Matrix<Scalar>::Zero(rows, cols)});
        return entries_.back();
    }

    Parameter<Scalar>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error(ErrorCode::InvalidConfig, "unknown parameter " + name);
        return entries_[it->second];
    }
    const Parameter<Scalar>& at(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->at(name);
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    Eigen::Index total_count() const {
        Eigen::Index n = 0;
        for (const auto& p : entries_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : entries_) p.grad.setZero(p.value.rows(), p.value.cols());
    }

private:
    std::deque<Parameter<Scalar>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
    int id = -1;
};

/// Define-by-run reverse-mode differentiation over activation matrices.
/// With `track` false no backward closures or caches are kept.
template <typename Scalar>
class Graph {
public:
    using Mat = Matrix<Scalar>;

    explicit Graph(bool track = true) : track_(track) {}

    Var input(const Shape& shape, Mat value);

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    const Shape& shape(Var v) const { return nodes_[v.id].shape; }
    /// Gradient after backward(); empty if the node received none.
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    /// k x k convolution, zero padding k / 2. Weight rows are ordered
    /// ((ky * k + kx) * in_channels + c_in), columns are output channels.
    Var conv2d(Var x, Parameter<Scalar>& weight, Parameter<Scalar>* bias, int kernel, int stride = 1);
    /// 1 x 1 convolution, i.e. a dense layer applied at every pixel.
    Var linear(Var x, Parameter<Scalar>& weight, Parameter<Scalar>* bias) { return conv2d(x, weight, bias, 1, 1); }
    Var group_norm(Var x, Parameter<Scalar>& gamma, Parameter<Scalar>& beta, int groups, Scalar eps = Scalar(1e-5));
    Var silu(Var x);
    Var relu(Var x);
    Var add(Var a, Var b);
    /// Adds a per-sample channel vector (shape batch x 1 x 1 x C) to every pixel.
    Var add_per_sample(Var x, Var v);
    /// x * (1 + v) with v a per-sample channel vector, broadcast over pixels.
    Var scale_per_sample(Var x, Var v);
    Var concat_channels(Var a, Var b);
    Var upsample2x(Var x);
    /// Scaled dot-product attention per sample; queries are the pixels of `q`,
    /// keys/values the pixels of `k`/`v`.
    Var attention(Var q, Var k, Var v);
    /// Graph convolution over `nodes` channel groups with a residual path:
    /// out = x + relu(A N W), N holding each node's flattened group features.
    Var graph_conv(Var x, const Mat& a_gcn, int nodes, Parameter<Scalar>& weight);
    /// Mean of embedding-table rows per sample (shape batch x 1 x 1 x d).
    Var embedding_mean(Parameter<Scalar>& table, std::span<const std::vector<int>> token_ids);

    /// Seeds the output gradient and runs all recorded closures in reverse.
    void backward(Var output, const Mat& output_grad);
    /// Mean squared error against `target`; seeds and runs backward if tracking.
    double mse_backward(Var prediction, const Mat& target);

private:
    struct Node {
        Shape shape;
        Mat value;
        Mat grad;
    };

    Var push(const Shape& shape, Mat value);
    Mat& grad_ref(int id);
    void record(std::function<void()> fn) {
        if (track_) ops_.push_back(std::move(fn));
    }

    bool track_;
    std::deque<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace posediff::nn
