#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "posediff/nn/graph.hpp"
#include "posediff/skeleton_graph.hpp"

namespace posediff {

/// Architecture of the noise-prediction U-Net. Every block width is
/// keypoints * base_channels * multiplier so that channels split evenly into
/// per-keypoint groups.
struct DenoiserConfig {
    int keypoints = 17;
    int grid_size = 64;
    int base_channels = 4;
    std::array<int, 3> channel_multipliers{1, 2, 4};
    /// Downsampling factors (1, 2, 4 or 8) whose blocks carry self and cross attention.
    std::vector<int> attention_factors{4, 8};
    int text_dim = 64;
    int time_embed_dim = 128;
    /// Vocabulary size of the learned text table; 0 means sentence vectors are supplied directly.
    int vocab_size = 0;
    /// false gives the plain text-conditioned U-Net without the graph block.
    bool spatial_block = true;
    /// Appends normalised x and y planes to the input heatmaps.
    bool coord_channels = false;
    /// Residual blocks apply the conditioning as scale and shift after their
    /// second norm; otherwise it is added before it.
    bool scale_shift_norm = true;

    int width(int level) const { return keypoints * base_channels * channel_multipliers[static_cast<std::size_t>(level)]; }
    int mid_resolution() const { return grid_size / 8; }
    /// Per-node feature length seen by the graph block.
    int node_features() const { return (width(2) / keypoints) * mid_resolution() * mid_resolution(); }
    bool has_attention(int factor) const;

    /// Throws InvalidConfig.
    void validate() const;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

/// Conditioning text for a batch: token ids (learned table) or sentence vectors.
template <typename Scalar>
struct TextBatch {
    std::vector<std::vector<int>> token_ids;
    nn::Matrix<Scalar> vectors;

    int batch() const { return token_ids.empty() ? static_cast<int>(vectors.rows()) : static_cast<int>(token_ids.size()); }
};

/// Raw sinusoidal timestep features: `dim / 2` sines then cosines over
/// frequencies spaced geometrically from 1 down to 1e-4.
Eigen::VectorXd timestep_embedding(int t, int dim);

template <typename Scalar>
class Denoiser {
public:
    using Mat = nn::Matrix<Scalar>;

    Denoiser(DenoiserConfig config, const SkeletonTopology& topology);

    /// Uniform fan-in initialisation; attention output projections, the second
    /// convolution of each residual block and the output convolution start at zero.
    void initialize(std::uint64_t seed);

    const DenoiserConfig& config() const { return config_; }
    nn::ParameterStore<Scalar>& parameters() { return params_; }
    const nn::ParameterStore<Scalar>& parameters() const { return params_; }
    const Mat& normalized_adjacency() const { return a_gcn_; }

    /// Records the forward pass on `g`. `x` has shape (batch, S, S, K).
    nn::Var build(nn::Graph<Scalar>& g, nn::Var x, std::span<const int> timesteps, const TextBatch<Scalar>& text);

    /// Inference-only forward. `x` is (batch * S * S) x K.
    Mat predict(const Mat& x, std::span<const int> timesteps, const TextBatch<Scalar>& text);

    /// Copies values from parameters of the same name and shape; returns how many were copied.
    template <typename Other>
    int copy_parameters_from(const nn::ParameterStore<Other>& other) {
        int copied = 0;
        for (auto& p : params_) {
            if (!other.contains(p.name)) continue;
            const auto& src = other.at(p.name);
            if (src.value.rows() != p.value.rows() || src.value.cols() != p.value.cols()) continue;
            p.value = src.value.template cast<Scalar>();
            ++copied;
        }
        return copied;
    }

private:
    enum class Init { Ones, Zeros, FanIn, Normal, ZeroWeight };

    nn::Parameter<Scalar>& param(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init);
    nn::Var run(nn::Graph<Scalar>* g, nn::Var x, std::span<const int> timesteps, const TextBatch<Scalar>* text);
    nn::Var res_block(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int cin, int cout, nn::Var cond);
    nn::Var attention_block(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int width, nn::Var context);
    nn::Var conv(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int cin, int cout, int kernel,
                 int stride, Init init = Init::FanIn);
    nn::Var norm(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int width);

    DenoiserConfig config_;
    Mat a_gcn_;
    nn::ParameterStore<Scalar> params_;
    std::unordered_map<std::string, Init> init_;
    bool registering_ = false;
};

/// Free-function form of Denoiser::predict.
template <typename Scalar>
nn::Matrix<Scalar> forward(Denoiser<Scalar>& denoiser, const nn::Matrix<Scalar>& x_t, std::span<const int> timesteps,
                           const TextBatch<Scalar>& text) {
    return denoiser.predict(x_t, timesteps, text);
}

/// Standalone spatial block on (batch, h, w, K * C_mid) features.
template <typename Scalar>
nn::Matrix<Scalar> spatial_block(const nn::Matrix<Scalar>& features, const nn::Shape& shape,
                                 const nn::Matrix<Scalar>& a_gcn, const nn::Matrix<Scalar>& weight) {
    nn::Graph<Scalar> g(false);
    nn::Parameter<Scalar> w{"spatial.w", weight, nn::Matrix<Scalar>()};
    nn::Var x = g.input(shape, features);
    return g.value(g.graph_conv(x, a_gcn, static_cast<int>(a_gcn.rows()), w));
}

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace posediff
