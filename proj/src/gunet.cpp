#include "posediff/gunet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace posediff {

bool DenoiserConfig::has_attention(int factor) const {
    return std::find(attention_factors.begin(), attention_factors.end(), factor) != attention_factors.end();
}

void DenoiserConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (keypoints < 1) fail("keypoints must be positive");
    if (grid_size < 8 || grid_size % 8 != 0) fail("grid size must be a positive multiple of 8");
    if (base_channels < 1) fail("base channels must be positive");
    for (int m : channel_multipliers)
        if (m < 1) fail("channel multipliers must be positive");
    for (int f : attention_factors)
        if (f != 1 && f != 2 && f != 4 && f != 8) fail("attention factors must be 1, 2, 4 or 8");
    if (text_dim < 1) fail("text dimension must be positive");
    if (time_embed_dim < 2) fail("time embedding dimension must be at least 2");
    if (vocab_size < 0 || vocab_size == 1) fail("vocabulary size must be 0 or at least 2");
}

nlohmann::json DenoiserConfig::to_json() const {
    return nlohmann::json{{"keypoints", keypoints},
                          {"grid_size", grid_size},
                          {"base_channels", base_channels},
                          {"channel_multipliers", channel_multipliers},
                          {"attention_factors", attention_factors},
                          {"text_dim", text_dim},
                          {"time_embed_dim", time_embed_dim},
                          {"vocab_size", vocab_size},
                          {"spatial_block", spatial_block},
                          {"coord_channels", coord_channels},
                          {"scale_shift_norm", scale_shift_norm}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    try {
        c.keypoints = j.at("keypoints").get<int>();
        c.grid_size = j.at("grid_size").get<int>();
        c.base_channels = j.at("base_channels").get<int>();
        c.channel_multipliers = j.at("channel_multipliers").get<std::array<int, 3>>();
        c.attention_factors = j.at("attention_factors").get<std::vector<int>>();
        c.text_dim = j.at("text_dim").get<int>();
        c.time_embed_dim = j.at("time_embed_dim").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.spatial_block = j.at("spatial_block").get<bool>();
        c.coord_channels = j.value("coord_channels", false);
        c.scale_shift_norm = j.value("scale_shift_norm", false);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, e.what());
    }
    c.validate();
    return c;
}

Eigen::VectorXd timestep_embedding(int t, int dim) {
    const int half = dim / 2;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = half == 1 ? 1.0 : std::pow(1e-4, static_cast<double>(i) / (half - 1));
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

template <typename Scalar>
Denoiser<Scalar>::Denoiser(DenoiserConfig config, const SkeletonTopology& topology) : config_(std::move(config)) {
    config_.validate();
    topology.validate();
    if (topology.keypoint_count() != config_.keypoints)
        throw Error(ErrorCode::InvalidConfig, "topology keypoint count differs from config");
    a_gcn_ = normalize_adjacency(adjacency(topology)).template cast<Scalar>();
    registering_ = true;
    run(nullptr, nn::Var{}, {}, nullptr);
    registering_ = false;
}

template <typename Scalar>
nn::Parameter<Scalar>& Denoiser<Scalar>::param(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                               Init init) {
    if (registering_) {
        init_[name] = init;
        return params_.add(name, rows, cols);
    }
    return params_.at(name);
}

template <typename Scalar>
void Denoiser<Scalar>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : params_) {
        switch (init_.at(p.name)) {
        case Init::Ones: p.value.setOnes(); break;
        case Init::Zeros:
        case Init::ZeroWeight: p.value.setZero(); break;
        case Init::Normal: {
            std::normal_distribution<double> dist(0.0, 1.0);
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(dist(rng));
            break;
        }
        case Init::FanIn: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(dist(rng));
            break;
        }
        }
        p.grad.setZero(p.value.rows(), p.value.cols());
    }
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::conv(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int cin, int cout,
                               int kernel, int stride, Init init) {
    auto& w = param(prefix + ".w", static_cast<Eigen::Index>(kernel) * kernel * cin, cout, init);
    auto& b = param(prefix + ".b", 1, cout, Init::Zeros);
    if (!g) return {};
    return g->conv2d(h, w, &b, kernel, stride);
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::norm(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int width) {
    auto& gamma = param(prefix + ".gamma", 1, width, Init::Ones);
    auto& beta = param(prefix + ".beta", 1, width, Init::Zeros);
    if (!g) return {};
    return g->group_norm(h, gamma, beta, config_.keypoints);
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::res_block(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int cin, int cout,
                                    nn::Var cond) {
    nn::Var a = norm(g, h, prefix + ".norm1", cin);
    if (g) a = g->silu(a);
    a = conv(g, a, prefix + ".conv1", cin, cout, 3, 1);
    auto& ew = param(prefix + ".emb.w", config_.time_embed_dim, cout, Init::FanIn);
    auto& eb = param(prefix + ".emb.b", 1, cout, Init::Zeros);
    if (config_.scale_shift_norm) {
        auto& sw = param(prefix + ".emb.scale.w", config_.time_embed_dim, cout, Init::FanIn);
        auto& sb = param(prefix + ".emb.scale.b", 1, cout, Init::Zeros);
        a = norm(g, a, prefix + ".norm2", cout);
        if (g) {
            a = g->scale_per_sample(a, g->linear(cond, sw, &sb));
            a = g->add_per_sample(a, g->linear(cond, ew, &eb));
        }
    } else {
        if (g) a = g->add_per_sample(a, g->linear(cond, ew, &eb));
        a = norm(g, a, prefix + ".norm2", cout);
    }
    if (g) a = g->silu(a);
    a = conv(g, a, prefix + ".conv2", cout, cout, 3, 1, Init::ZeroWeight);
    nn::Var skip = h;
    if (cin != cout) skip = conv(g, h, prefix + ".skip", cin, cout, 1, 1);
    if (!g) return {};
    return g->add(skip, a);
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::attention_block(nn::Graph<Scalar>* g, nn::Var h, const std::string& prefix, int width,
                                          nn::Var context) {
    const int d = config_.text_dim;
    // Self-attention over pixels.
    nn::Var n1 = norm(g, h, prefix + ".self.norm", width);
    auto& sq = param(prefix + ".self.q", width, width, Init::FanIn);
    auto& sk = param(prefix + ".self.k", width, width, Init::FanIn);
    auto& sv = param(prefix + ".self.v", width, width, Init::FanIn);
    auto& so = param(prefix + ".self.out.w", width, width, Init::ZeroWeight);
    auto& sob = param(prefix + ".self.out.b", 1, width, Init::Zeros);
    // Cross-attention against the one-token text context.
    auto& cnorm_g = param(prefix + ".cross.norm.gamma", 1, width, Init::Ones);
    auto& cnorm_b = param(prefix + ".cross.norm.beta", 1, width, Init::Zeros);
    auto& cq = param(prefix + ".cross.q", width, width, Init::FanIn);
    auto& ck = param(prefix + ".cross.k", d, width, Init::FanIn);
    auto& cv = param(prefix + ".cross.v", d, width, Init::FanIn);
    auto& co = param(prefix + ".cross.out.w", width, width, Init::ZeroWeight);
    auto& cob = param(prefix + ".cross.out.b", 1, width, Init::Zeros);
    if (!g) return {};
    nn::Var attn = g->attention(g->linear(n1, sq, nullptr), g->linear(n1, sk, nullptr), g->linear(n1, sv, nullptr));
    h = g->add(h, g->linear(attn, so, &sob));
    nn::Var n2 = g->group_norm(h, cnorm_g, cnorm_b, config_.keypoints);
    nn::Var cross = g->attention(g->linear(n2, cq, nullptr), g->linear(context, ck, nullptr),
                                 g->linear(context, cv, nullptr));
    return g->add(h, g->linear(cross, co, &cob));
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::run(nn::Graph<Scalar>* g, nn::Var x, std::span<const int> timesteps,
                              const TextBatch<Scalar>* text) {
    const DenoiserConfig& c = config_;
    const int k = c.keypoints;
    const int e = c.time_embed_dim;
    const int batch = g ? g->shape(x).batch : 0;

    // Conditioning vector: projected timestep features plus projected text.
    nn::Var context;
    if (c.vocab_size > 0) {
        auto& table = param("text.table", c.vocab_size, c.text_dim, Init::Normal);
        if (g) {
            if (text->token_ids.size() != static_cast<std::size_t>(batch))
                throw Error(ErrorCode::ShapeMismatch, "token id batch differs from input batch");
            context = g->embedding_mean(table, text->token_ids);
        }
    } else if (g) {
        if (text->vectors.rows() != batch || text->vectors.cols() != c.text_dim)
            throw Error(ErrorCode::ShapeMismatch, "text vectors do not match batch and text_dim");
        context = g->input(nn::Shape{batch, 1, 1, c.text_dim}, text->vectors);
    }
    nn::Var cond;
    if (g) {
        Mat sinus(batch, e);
        for (int n = 0; n < batch; ++n)
            sinus.row(n) = timestep_embedding(timesteps[static_cast<std::size_t>(n)], e).transpose().template cast<Scalar>();
        cond = g->input(nn::Shape{batch, 1, 1, e}, std::move(sinus));
    }
    cond = conv(g, cond, "time.fc1", e, e, 1, 1);
    if (g) cond = g->silu(cond);
    cond = conv(g, cond, "time.fc2", e, e, 1, 1);
    nn::Var text_cond = conv(g, context, "text.proj", c.text_dim, e, 1, 1);
    if (g) cond = g->silu(g->add(cond, text_cond));

    int in_channels = k;
    if (c.coord_channels) {
        in_channels += 2;
        if (g) {
            const int s = c.grid_size;
            Mat planes(static_cast<Eigen::Index>(batch) * s * s, 2);
            for (int n = 0; n < batch; ++n)
                for (int y = 0; y < s; ++y)
                    for (int x_ = 0; x_ < s; ++x_) {
                        const Eigen::Index r = (static_cast<Eigen::Index>(n) * s + y) * s + x_;
                        planes(r, 0) = static_cast<Scalar>(2.0 * x_ / (s - 1) - 1.0);
                        planes(r, 1) = static_cast<Scalar>(2.0 * y / (s - 1) - 1.0);
                    }
            x = g->concat_channels(x, g->input(nn::Shape{batch, s, s, 2}, std::move(planes)));
        }
    }
    nn::Var h = conv(g, x, "in", in_channels, c.width(0), 3, 1);
    std::array<nn::Var, 3> skips;
    int cin = c.width(0);
    for (int level = 0; level < 3; ++level) {
        const std::string prefix = "down" + std::to_string(level);
        const int w = c.width(level);
        h = res_block(g, h, prefix + ".res", cin, w, cond);
        if (c.has_attention(1 << level)) h = attention_block(g, h, prefix + ".attn", w, context);
        skips[static_cast<std::size_t>(level)] = h;
        h = conv(g, h, prefix + ".downsample", w, w, 3, 2);
        cin = w;
    }

    h = res_block(g, h, "mid.res1", cin, cin, cond);
    if (c.has_attention(8)) h = attention_block(g, h, "mid.attn", cin, context);
    h = res_block(g, h, "mid.res2", cin, cin, cond);

    if (c.spatial_block) {
        auto& w = param("spatial.w", c.node_features(), c.node_features(), Init::FanIn);
        if (g) h = g->graph_conv(h, a_gcn_, k, w);
    }

    for (int level = 2; level >= 0; --level) {
        const std::string prefix = "up" + std::to_string(level);
        const int w = c.width(level);
        if (g) h = g->upsample2x(h);
        h = conv(g, h, prefix + ".upsample", cin, cin, 3, 1);
        if (g) h = g->concat_channels(h, skips[static_cast<std::size_t>(level)]);
        h = res_block(g, h, prefix + ".res", cin + w, w, cond);
        if (c.has_attention(1 << level)) h = attention_block(g, h, prefix + ".attn", w, context);
        cin = w;
    }

    h = norm(g, h, "out.norm", cin);
    if (g) h = g->silu(h);
    return conv(g, h, "out", cin, k, 3, 1, Init::ZeroWeight);
}

template <typename Scalar>
nn::Var Denoiser<Scalar>::build(nn::Graph<Scalar>& g, nn::Var x, std::span<const int> timesteps,
                                const TextBatch<Scalar>& text) {
    const nn::Shape s = g.shape(x);
    if (s.height != config_.grid_size || s.width != config_.grid_size || s.channels != config_.keypoints)
        throw Error(ErrorCode::ShapeMismatch, "input must be batch x S x S x K");
    if (static_cast<int>(timesteps.size()) != s.batch)
        throw Error(ErrorCode::ShapeMismatch, "one timestep per sample required");
    if (text.batch() != s.batch) throw Error(ErrorCode::ShapeMismatch, "one text per sample required");
    if (!g.value(x).allFinite()) throw Error(ErrorCode::NonFiniteInput, "denoiser input is not finite");
    return run(&g, x, timesteps, &text);
}

template <typename Scalar>
typename Denoiser<Scalar>::Mat Denoiser<Scalar>::predict(const Mat& x, std::span<const int> timesteps,
                                                        const TextBatch<Scalar>& text) {
    const int pixels = config_.grid_size * config_.grid_size;
    if (x.cols() != config_.keypoints || x.rows() % pixels != 0)
        throw Error(ErrorCode::ShapeMismatch, "input must be (batch * S * S) x K");
    nn::Graph<Scalar> g(false);
    nn::Var in = g.input(nn::Shape{static_cast<int>(x.rows() / pixels), config_.grid_size, config_.grid_size,
                                   config_.keypoints},
                         x);
    return g.value(build(g, in, timesteps, text));
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace posediff
