#include "posediff/profiles.hpp"

#include "posediff/heatmap_codec.hpp"

namespace posediff {

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (batch_size < 1) fail("batch size must be positive");
    if (steps < 1) fail("step count must be positive");
    if (!(learning_rate > 0.0)) fail("learning rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("Adam betas in [0, 1)");
    if (!(adam_epsilon > 0.0)) fail("Adam epsilon must be positive");
    if (grad_clip < 0.0) fail("gradient clip must be non-negative");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("EMA decay must lie in [0, 1)");
    if (diffusion_steps < 1) fail("diffusion steps must be positive");
    if (!(sigma > 0.0)) fail("sigma must be positive");
    if (!(heatmap_scale > 0.0)) fail("heatmap scale must be positive");
    if (checkpoint_interval < 1) fail("checkpoint interval must be positive");
    if (smoothing_window < 1) fail("smoothing window must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"batch_size", batch_size},       {"steps", steps},
                          {"learning_rate", learning_rate}, {"adam_beta1", adam_beta1},
                          {"adam_beta2", adam_beta2},       {"adam_epsilon", adam_epsilon},
                          {"grad_clip", grad_clip},         {"ema_decay", ema_decay},
                          {"seed", seed},                   {"diffusion_steps", diffusion_steps},
                          {"beta_start", beta_start},       {"beta_end", beta_end},
                          {"sigma", sigma},                 {"heatmap_scale", heatmap_scale},
                          {"data_prior", data_prior},
                          {"checkpoint_interval", checkpoint_interval}, {"smoothing_window", smoothing_window}};
}

Profile desk_profile() {
    Profile p;
    p.name = "desk";
    p.denoiser.keypoints = 17;
    p.denoiser.grid_size = 32;
    p.denoiser.base_channels = 1;
    p.denoiser.channel_multipliers = {1, 2, 4};
    p.denoiser.attention_factors = {4, 8};
    p.denoiser.text_dim = 64;
    p.denoiser.time_embed_dim = 64;
    p.denoiser.coord_channels = true;
    p.train.batch_size = 4;
    p.train.steps = 20000;
    p.train.learning_rate = 1e-3;
    p.train.ema_decay = 0.999;
    p.train.diffusion_steps = 200;
    // Linear endpoints scaled by 1000 / T so that alpha_bar_T is near zero.
    p.train.beta_start = 5e-4;
    p.train.beta_end = 0.1;
    // Twice the codec default: 1 px blobs leave too little signal at mid t.
    p.train.sigma = 2.0;
    p.train.heatmap_scale = 10.0;
    p.train.data_prior = true;
    p.train.checkpoint_interval = 2000;
    return p;
}

Profile full_profile() {
    Profile p;
    p.name = "full";
    p.denoiser.grid_size = 64;
    p.denoiser.base_channels = 4;
    p.denoiser.time_embed_dim = 128;
    p.denoiser.coord_channels = true;
    p.train.learning_rate = 1e-4;
    p.train.diffusion_steps = 1000;
    p.train.sigma = default_sigma(p.denoiser.grid_size);
    p.train.heatmap_scale = 10.0;
    p.train.data_prior = true;
    p.train.ema_decay = 0.999;
    return p;
}

Profile profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "full") return full_profile();
    throw Error(ErrorCode::InvalidConfig, "unknown profile '" + name + "' (expected desk or full)");
}

}  // namespace posediff
