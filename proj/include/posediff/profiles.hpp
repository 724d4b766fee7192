#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "posediff/gunet.hpp"

namespace posediff {

struct TrainConfig {
    int batch_size = 16;
    int steps = 20000;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 1.0;
    /// Exponential moving average of weights; 0 disables. When enabled the
    /// averaged weights are what gets checkpointed.
    double ema_decay = 0.0;
    std::uint64_t seed = 0;
    int diffusion_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double sigma = 2.0;
    /// Heatmaps are multiplied by this before diffusion and divided after
    /// sampling. Sparse Gaussian maps carry little energy per pixel.
    double heatmap_scale = 1.0;
    /// Adds the noise estimate of a per-pixel Gaussian fit to the training
    /// stacks to the network output, so the network models the residual.
    bool data_prior = false;
    int checkpoint_interval = 1000;
    int smoothing_window = 100;
    /// Progress line on stderr every this many steps; 0 silences.
    int log_interval = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

struct Profile {
    std::string name;
    DenoiserConfig denoiser;
    TrainConfig train;
};

/// CPU-sized setup: S = 32, T = 200, five synthetic templates.
Profile desk_profile();
/// COCO-sized setup: S = 64, T = 1000.
Profile full_profile();
/// "desk" or "full"; throws InvalidConfig otherwise.
Profile profile_by_name(const std::string& name);

}  // namespace posediff
