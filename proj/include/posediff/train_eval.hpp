#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "posediff/checkpoint.hpp"
#include "posediff/dataset.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/heatmap_codec.hpp"
#include "posediff/profiles.hpp"
#include "posediff/text_embedding.hpp"

namespace posediff {

/// splitmix64 of (master, index): independent per-caption / per-chunk streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

struct LossEntry {
    int step = 0;
    double loss = 0.0;
    double smoothed = 0.0;  // trailing mean over the smoothing window
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::vector<LossEntry> history;
};

/// Epsilon-prediction training with Adam. Writes checkpoint.pdck (every
/// checkpoint_interval steps and at the end) and loss_history.csv into
/// `out_dir`. With `embeddings`, captions are looked up by record id instead of
/// using the learned table. Throws DivergedTraining on a non-finite loss.
TrainResult train(const TrainConfig& config, DenoiserConfig denoiser_config, const std::vector<DatasetRecord>& dataset,
                  const SkeletonTopology& topology, const std::filesystem::path& out_dir,
                  const PrecomputedEmbeddings* embeddings = nullptr);

void write_loss_history(const std::vector<LossEntry>& history, const std::filesystem::path& path);

/// Trained denoiser plus everything needed to turn captions into poses.
class PoseGenerator {
public:
    PoseGenerator(Denoiser<float> model, NoiseSchedule schedule, std::optional<Vocabulary> vocab, double sigma,
                  double visibility_threshold = kDefaultVisibilityThreshold, double heatmap_scale = 1.0,
                  std::optional<DataPrior<float>> prior = std::nullopt);

    static PoseGenerator load(const std::filesystem::path& checkpoint, const SkeletonTopology& topology);

    Denoiser<float>& model() { return model_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const std::optional<Vocabulary>& vocabulary() const { return vocab_; }
    int grid_size() const { return model_.config().grid_size; }
    double sigma() const { return sigma_; }

    /// `count` reverse-diffusion samples for one caption (learned text table).
    std::vector<HeatmapStack> sample_caption(const std::string& caption, int count, std::uint64_t seed);
    /// Same, conditioned on an external sentence vector.
    std::vector<HeatmapStack> sample_vector(const Eigen::VectorXd& text, int count, std::uint64_t seed);

    std::vector<Pose> decode(const std::vector<HeatmapStack>& stacks) const;

private:
    std::vector<HeatmapStack> sample_batch(const TextBatch<float>& prototype, int count, std::uint64_t seed);

    Denoiser<float> model_;
    NoiseSchedule schedule_;
    std::optional<Vocabulary> vocab_;
    double sigma_;
    double threshold_;
    double scale_;
    std::optional<DataPrior<float>> prior_;
};

struct CaptionMetrics {
    std::string record_id;
    std::string caption;
    double mse = 0.0;       // grid px^2
    double variance = 0.0;  // grid px^2
    int samples = 0;
    int excluded_keypoints = 0;  // decoded-invisible (sample, keypoint) pairs
    bool degenerate = false;
};

struct MetricsReport {
    double mse = 0.0;
    double variance = 0.0;
    std::vector<CaptionMetrics> per_caption;
    int degenerate_captions = 0;
    int excluded_keypoints = 0;

    nlohmann::json to_json() const;
};

/// MSE over samples and keypoints visible in both ground truth and sample;
/// population variance per keypoint and axis across the samples where the
/// keypoint decoded visible, averaged over keypoints and axes.
CaptionMetrics caption_metrics(const Pose& ground_truth, std::span<const Pose> samples);
/// Averages non-degenerate captions.
MetricsReport aggregate_metrics(std::vector<CaptionMetrics> per_caption);

/// Returns `count` poses for a record's caption, seeded.
using RecordSampler = std::function<std::vector<Pose>(const DatasetRecord& record, int count, std::uint64_t seed)>;
using CaptionSampler = std::function<std::vector<Pose>(const std::string& caption, int count, std::uint64_t seed)>;

/// Per-record seeds come from derive_seed(seed, record index).
MetricsReport evaluate_mse_var(const RecordSampler& sampler, const std::vector<DatasetRecord>& val_set,
                               int samples_per_caption, std::uint64_t seed);
MetricsReport evaluate_mse_var(PoseGenerator& generator, const std::vector<DatasetRecord>& val_set,
                               int samples_per_caption, std::uint64_t seed);

/// Mean distance over keypoints visible in the pose.
double mean_keypoint_distance(const Pose& pose, const PoseTemplate& tmpl);
/// True iff the pose is strictly closer to templates[index] than to every other template.
bool closest_to_template(const Pose& pose, const std::vector<PoseTemplate>& templates, std::size_t index);

struct TemplateAccuracy {
    std::string template_id;
    int correct = 0;
    int total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct AccuracyReport {
    std::vector<TemplateAccuracy> per_template;
    double overall = 0.0;
    nlohmann::json to_json() const;
};

/// n_samples per template, cycling through the template's caption patterns.
AccuracyReport template_accuracy(const CaptionSampler& sampler, const std::vector<PoseTemplate>& templates,
                                 int n_samples, std::uint64_t seed);
AccuracyReport template_accuracy(PoseGenerator& generator, const std::vector<PoseTemplate>& templates, int n_samples,
                                 std::uint64_t seed);

struct AblationOptions {
    double split_ratio = 0.8;
    int eval_records = 20;
    int samples_per_caption = 10;
    int template_samples = 0;  // 0 skips the template-accuracy column
    std::vector<PoseTemplate> templates;
};

/// Trains and evaluates GUNet and UNet-T2H on the same split and writes
/// comparison.json keyed by variant name into `out_dir`.
nlohmann::json run_ablation(const TrainConfig& config, const DenoiserConfig& denoiser_config,
                            const std::vector<DatasetRecord>& records, const SkeletonTopology& topology,
                            const std::filesystem::path& out_dir, const AblationOptions& options);

}  // namespace posediff
