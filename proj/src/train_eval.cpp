#include "posediff/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

namespace posediff {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

constexpr int kSampleChunk = 25;

Buffers prior_buffers(const std::optional<DataPrior<float>>& prior) {
    if (!prior) return {};
    return {{"prior.mean", prior->mean}, {"prior.variance", prior->variance}};
}

std::optional<DataPrior<float>> read_prior(const Buffers& buffers) {
    const auto mean = buffers.find("prior.mean");
    const auto variance = buffers.find("prior.variance");
    if (mean == buffers.end() && variance == buffers.end()) return std::nullopt;
    if (mean == buffers.end() || variance == buffers.end())
        throw Error(ErrorCode::CorruptFile, "checkpoint holds half of the data prior");
    return DataPrior<float>{mean->second, variance->second};
}

struct AdamState {
    std::vector<Eigen::MatrixXf> m, v;
};

void write_csv_row(std::ostream& out, const LossEntry& e) {
    out << e.step << ',' << e.loss << ',' << e.smoothed << '\n';
}

}  // namespace

void write_loss_history(const std::vector<LossEntry>& history, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    out.precision(17);
    out << "step,loss,smoothed_loss\n";
    for (const auto& e : history) write_csv_row(out, e);
}

TrainResult train(const TrainConfig& config, DenoiserConfig denoiser_config, const std::vector<DatasetRecord>& dataset,
                  const SkeletonTopology& topology, const fs::path& out_dir, const PrecomputedEmbeddings* embeddings) {
    config.validate();
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
    const int s = denoiser_config.grid_size;
    const int k = denoiser_config.keypoints;
    for (const auto& r : dataset) {
        if (r.pose.size() != k) throw Error(ErrorCode::ShapeMismatch, "record " + r.record_id + " keypoint count");
        if (!pose_within_grid(r.pose, s))
            throw Error(ErrorCode::ShapeMismatch, "record " + r.record_id + " lies outside the " + std::to_string(s) +
                                                      " grid");
    }

    std::optional<Vocabulary> vocab;
    std::vector<std::vector<int>> token_ids;
    Eigen::MatrixXf vectors;
    if (embeddings) {
        denoiser_config.vocab_size = 0;
        denoiser_config.text_dim = embeddings->dimension();
        vectors.resize(static_cast<Eigen::Index>(dataset.size()), embeddings->dimension());
        for (std::size_t i = 0; i < dataset.size(); ++i)
            vectors.row(static_cast<Eigen::Index>(i)) =
                embeddings->lookup(dataset[i].record_id).transpose().cast<float>();
    } else {
        std::vector<std::string> captions;
        for (const auto& r : dataset) captions.push_back(r.caption);
        vocab = Vocabulary::from_captions(captions);
        denoiser_config.vocab_size = vocab->size();
        for (const auto& r : dataset) token_ids.push_back(tokenize(r.caption, *vocab));
    }

    fs::create_directories(out_dir);
    const fs::path checkpoint_path = out_dir / "checkpoint.pdck";
    Denoiser<float> model(denoiser_config, topology);
    model.initialize(derive_seed(config.seed, 0));
    std::optional<Denoiser<float>> ema;
    if (config.ema_decay > 0.0) ema.emplace(model);
    const NoiseSchedule schedule = make_schedule(config.diffusion_steps, config.beta_start, config.beta_end);

    nlohmann::json metadata;
    metadata["schedule"] = {{"T", config.diffusion_steps},
                            {"beta_start", config.beta_start},
                            {"beta_end", config.beta_end}};
    metadata["sigma"] = config.sigma;
    metadata["heatmap_scale"] = config.heatmap_scale;
    std::optional<DataPrior<float>> prior;
    if (config.data_prior) {
        // Two-pass central moments of the scaled clean stacks.
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s) * s, k);
        for (const auto& r : dataset) sum += encode_pose(r.pose, s, config.sigma).columns().cast<double>();
        const Eigen::MatrixXd mean = sum / static_cast<double>(dataset.size());
        Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(mean.rows(), k);
        for (const auto& r : dataset)
            sq += (encode_pose(r.pose, s, config.sigma).columns().cast<double>() - mean).array().square().matrix();
        const double c = config.heatmap_scale;
        prior = DataPrior<float>{(c * mean).cast<float>(), (c * c * sq / static_cast<double>(dataset.size())).cast<float>()};
    }
    metadata["data_prior"] = prior.has_value();
    metadata["visibility_threshold"] = kDefaultVisibilityThreshold;
    metadata["vocabulary"] = vocab ? vocab->to_json() : nlohmann::json(nullptr);
    metadata["train"] = config.to_json();

    AdamState adam;
    for (const auto& p : model.parameters()) {
        adam.m.push_back(Eigen::MatrixXf::Zero(p.value.rows(), p.value.cols()));
        adam.v.push_back(Eigen::MatrixXf::Zero(p.value.rows(), p.value.cols()));
    }

    std::mt19937_64 rng(derive_seed(config.seed, 1));
    std::uniform_int_distribution<std::size_t> pick_record(0, dataset.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.steps());
    const int b = config.batch_size;
    const int pixels = s * s;

    TrainResult result;
    result.checkpoint = checkpoint_path;
    double window_sum = 0.0;
    bool have_checkpoint = false;
    for (int step = 1; step <= config.steps; ++step) {
        std::vector<std::size_t> picks(static_cast<std::size_t>(b));
        std::vector<int> ts(static_cast<std::size_t>(b));
        for (int n = 0; n < b; ++n) {
            picks[static_cast<std::size_t>(n)] = pick_record(rng);
            ts[static_cast<std::size_t>(n)] = pick_t(rng);
        }
        Eigen::MatrixXf eps = standard_normal<float>(static_cast<Eigen::Index>(b) * pixels, k, rng);
        Eigen::MatrixXf x_t(eps.rows(), k);
        TextBatch<float> text;
        if (embeddings) text.vectors.resize(b, vectors.cols());
        for (int n = 0; n < b; ++n) {
            const std::size_t idx = picks[static_cast<std::size_t>(n)];
            const HeatmapStack x0 = encode_pose(dataset[idx].pose, s, config.sigma);
            x_t.middleRows(static_cast<Eigen::Index>(n) * pixels, pixels) =
                q_sample(static_cast<float>(config.heatmap_scale) * x0.columns(), ts[static_cast<std::size_t>(n)],
                         eps.middleRows(static_cast<Eigen::Index>(n) * pixels, pixels), schedule)
                    .values;
            if (embeddings)
                text.vectors.row(n) = vectors.row(static_cast<Eigen::Index>(idx));
            else
                text.token_ids.push_back(token_ids[idx]);
        }

        if (prior) {
            for (int n = 0; n < b; ++n) {
                const Eigen::Index r = static_cast<Eigen::Index>(n) * pixels;
                eps.middleRows(r, pixels) -= prior_noise_estimate<float>(schedule, ts[static_cast<std::size_t>(n)],
                                                                         x_t.middleRows(r, pixels), *prior);
            }
        }

        model.parameters().zero_grad();
        nn::Graph<float> g(true);
        nn::Var in = g.input(nn::Shape{b, s, s, k}, std::move(x_t));
        nn::Var out = model.build(g, in, ts, text);
        // With the prior, eps now holds the residual target.
        const double loss = g.mse_backward(out, eps);
        auto diverged = [&](const std::string& what) {
            return Error(ErrorCode::DivergedTraining,
                         what + " at step " + std::to_string(step) +
                             (have_checkpoint ? "; last good checkpoint " + checkpoint_path.string()
                                              : "; no checkpoint written yet"));
        };
        if (!std::isfinite(loss)) throw diverged("non-finite loss");

        double grad_norm2 = 0.0;
        for (const auto& p : model.parameters()) grad_norm2 += p.grad.cast<double>().squaredNorm();
        const double grad_norm = std::sqrt(grad_norm2);
        const float clip_scale =
            config.grad_clip > 0.0 && grad_norm > config.grad_clip ? static_cast<float>(config.grad_clip / grad_norm) : 1.0f;

        const double bc1 = 1.0 - std::pow(config.adam_beta1, step);
        const double bc2 = 1.0 - std::pow(config.adam_beta2, step);
        const float lr_t = static_cast<float>(config.learning_rate * std::sqrt(bc2) / bc1);
        const auto b1 = static_cast<float>(config.adam_beta1);
        const auto b2 = static_cast<float>(config.adam_beta2);
        const auto eps_hat = static_cast<float>(config.adam_epsilon * std::sqrt(bc2));
        std::size_t i = 0;
        for (auto& p : model.parameters()) {
            const Eigen::MatrixXf grad = p.grad * clip_scale;
            adam.m[i] = b1 * adam.m[i] + (1.0f - b1) * grad;
            adam.v[i] = b2 * adam.v[i] + (1.0f - b2) * grad.cwiseAbs2();
            p.value.array() -= lr_t * adam.m[i].array() / (adam.v[i].array().sqrt() + eps_hat);
            if (!p.value.allFinite()) throw diverged("non-finite parameter " + p.name);
            ++i;
        }
        if (ema) {
            const auto d = static_cast<float>(config.ema_decay);
            auto src = model.parameters().begin();
            for (auto& p : ema->parameters()) {
                p.value = d * p.value + (1.0f - d) * src->value;
                ++src;
            }
        }

        window_sum += loss;
        if (step > config.smoothing_window)
            window_sum -= result.history[static_cast<std::size_t>(step - config.smoothing_window - 1)].loss;
        const int window = std::min(step, config.smoothing_window);
        result.history.push_back({step, loss, window_sum / window});

        if (config.log_interval > 0 && step % config.log_interval == 0)
            std::cerr << "step " << step << " loss " << loss << " smoothed " << result.history.back().smoothed << '\n';
        if (step % config.checkpoint_interval == 0 || step == config.steps) {
            metadata["steps_completed"] = step;
            save_checkpoint(checkpoint_path, ema ? *ema : model, metadata, prior_buffers(prior));
            have_checkpoint = true;
        }
    }
    write_loss_history(result.history, out_dir / "loss_history.csv");
    return result;
}

PoseGenerator::PoseGenerator(Denoiser<float> model, NoiseSchedule schedule, std::optional<Vocabulary> vocab,
                             double sigma, double visibility_threshold, double heatmap_scale,
                             std::optional<DataPrior<float>> prior)
    : model_(std::move(model)),
      schedule_(std::move(schedule)),
      vocab_(std::move(vocab)),
      sigma_(sigma),
      threshold_(visibility_threshold),
      scale_(heatmap_scale),
      prior_(std::move(prior)) {
    const Eigen::Index rows = static_cast<Eigen::Index>(model_.config().grid_size) * model_.config().grid_size;
    if (prior_ && (prior_->mean.rows() != rows || prior_->mean.cols() != model_.config().keypoints ||
                   prior_->variance.rows() != rows || prior_->variance.cols() != model_.config().keypoints))
        throw Error(ErrorCode::ShapeMismatch, "data prior does not match the denoiser grid");
}

PoseGenerator PoseGenerator::load(const fs::path& checkpoint, const SkeletonTopology& topology) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint, topology);
    const auto& meta = loaded.metadata;
    try {
        const auto& sched = meta.at("schedule");
        NoiseSchedule schedule = make_schedule(sched.at("T").get<int>(), sched.at("beta_start").get<double>(),
                                               sched.at("beta_end").get<double>());
        std::optional<Vocabulary> vocab;
        if (meta.contains("vocabulary") && !meta.at("vocabulary").is_null())
            vocab = Vocabulary::from_json(meta.at("vocabulary"));
        return PoseGenerator(std::move(loaded.model), std::move(schedule), std::move(vocab),
                             meta.at("sigma").get<double>(),
                             meta.value("visibility_threshold", kDefaultVisibilityThreshold),
                             meta.value("heatmap_scale", 1.0), read_prior(loaded.buffers));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptFile, std::string("checkpoint metadata: ") + e.what());
    }
}

std::vector<HeatmapStack> PoseGenerator::sample_batch(const TextBatch<float>& prototype, int count,
                                                      std::uint64_t seed) {
    const int s = grid_size();
    const int k = model_.config().keypoints;
    const int pixels = s * s;
    std::vector<HeatmapStack> out;
    for (int chunk = 0, done = 0; done < count; ++chunk) {
        const int n = std::min(kSampleChunk, count - done);
        TextBatch<float> text;
        if (!prototype.token_ids.empty()) {
            text.token_ids.assign(static_cast<std::size_t>(n), prototype.token_ids.front());
        } else {
            text.vectors = prototype.vectors.row(0).replicate(n, 1);
        }
        auto predict = [&](const Eigen::MatrixXf& x, int t) {
            const std::vector<int> ts(static_cast<std::size_t>(n), t);
            Eigen::MatrixXf eps = model_.predict(x, ts, text);
            if (prior_) eps += prior_noise_estimate<float>(schedule_, t, x, *prior_);
            return eps;
        };
        Eigen::MatrixXf x = sample<float>(predict, schedule_, static_cast<Eigen::Index>(n) * pixels, k,
                                          derive_seed(seed, static_cast<std::uint64_t>(chunk)), false);
        x = (x / static_cast<float>(scale_)).cwiseMax(0.0f).cwiseMin(1.0f);
        for (int i = 0; i < n; ++i) {
            HeatmapStack stack(k, s, static_cast<float>(sigma_));
            stack.columns() = x.middleRows(static_cast<Eigen::Index>(i) * pixels, pixels);
            out.push_back(std::move(stack));
        }
        done += n;
    }
    return out;
}

std::vector<HeatmapStack> PoseGenerator::sample_caption(const std::string& caption, int count, std::uint64_t seed) {
    if (!vocab_)
        throw Error(ErrorCode::MissingEmbedding, "checkpoint was trained on precomputed sentence vectors");
    TextBatch<float> text;
    text.token_ids.push_back(tokenize(caption, *vocab_));
    return sample_batch(text, count, seed);
}

std::vector<HeatmapStack> PoseGenerator::sample_vector(const Eigen::VectorXd& vector, int count, std::uint64_t seed) {
    if (vocab_) throw Error(ErrorCode::InvalidConfig, "checkpoint uses a learned text table");
    if (vector.size() != model_.config().text_dim)
        throw Error(ErrorCode::InconsistentDimension, "sentence vector dimension differs from the model's");
    TextBatch<float> text;
    text.vectors = vector.transpose().cast<float>();
    return sample_batch(text, count, seed);
}

std::vector<Pose> PoseGenerator::decode(const std::vector<HeatmapStack>& stacks) const {
    std::vector<Pose> poses;
    for (const auto& st : stacks) poses.push_back(decode_heatmaps(st, threshold_));
    return poses;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : per_caption) {
        rows.push_back({{"record_id", c.record_id},
                        {"caption", c.caption},
                        {"mse", c.mse},
                        {"variance", c.variance},
                        {"samples", c.samples},
                        {"excluded_keypoints", c.excluded_keypoints},
                        {"degenerate", c.degenerate}});
    }
    return nlohmann::json{{"mse", mse},
                          {"variance", variance},
                          {"degenerate_captions", degenerate_captions},
                          {"excluded_keypoints", excluded_keypoints},
                          {"per_caption", rows}};
}

CaptionMetrics caption_metrics(const Pose& ground_truth, std::span<const Pose> samples) {
    CaptionMetrics m;
    m.samples = static_cast<int>(samples.size());
    double sq_sum = 0.0;
    long pairs = 0;
    for (const auto& s : samples) {
        if (s.size() != ground_truth.size()) throw Error(ErrorCode::ShapeMismatch, "sample keypoint count");
        for (Eigen::Index k = 0; k < s.size(); ++k) {
            if (!s.visible(k)) {
                ++m.excluded_keypoints;
                continue;
            }
            if (!ground_truth.visible(k)) continue;
            sq_sum += (s.xy.row(k) - ground_truth.xy.row(k)).squaredNorm();
            ++pairs;
        }
    }
    double var_sum = 0.0;
    long var_terms = 0;
    for (Eigen::Index k = 0; k < ground_truth.size(); ++k) {
        for (int axis = 0; axis < 2; ++axis) {
            // Deviations from the first visible value, so identical samples give exactly 0.
            double ref = 0.0, sum = 0.0;
            int n = 0;
            for (const auto& s : samples) {
                if (!s.visible(k)) continue;
                if (n == 0) ref = s.xy(k, axis);
                sum += s.xy(k, axis) - ref;
                ++n;
            }
            if (n == 0) continue;
            const double mean = sum / n;
            double acc = 0.0;
            for (const auto& s : samples) {
                if (s.visible(k)) acc += (s.xy(k, axis) - ref - mean) * (s.xy(k, axis) - ref - mean);
            }
            var_sum += acc / n;
            ++var_terms;
        }
    }
    m.degenerate = pairs == 0 || var_terms == 0;
    m.mse = pairs ? sq_sum / static_cast<double>(pairs) : 0.0;
    m.variance = var_terms ? var_sum / static_cast<double>(var_terms) : 0.0;
    return m;
}

MetricsReport aggregate_metrics(std::vector<CaptionMetrics> per_caption) {
    MetricsReport r;
    int used = 0;
    for (const auto& c : per_caption) {
        r.excluded_keypoints += c.excluded_keypoints;
        if (c.degenerate) {
            ++r.degenerate_captions;
            continue;
        }
        r.mse += c.mse;
        r.variance += c.variance;
        ++used;
    }
    if (used) {
        r.mse /= used;
        r.variance /= used;
    }
    r.per_caption = std::move(per_caption);
    return r;
}

MetricsReport evaluate_mse_var(const RecordSampler& sampler, const std::vector<DatasetRecord>& val_set,
                               int samples_per_caption, std::uint64_t seed) {
    if (val_set.empty()) throw Error(ErrorCode::EmptyDataset, "validation set is empty");
    if (samples_per_caption < 1) throw Error(ErrorCode::InvalidConfig, "samples per caption must be positive");
    std::vector<CaptionMetrics> rows;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
        const auto& rec = val_set[i];
        const std::vector<Pose> samples = sampler(rec, samples_per_caption, derive_seed(seed, i));
        CaptionMetrics m = caption_metrics(rec.pose, samples);
        m.record_id = rec.record_id;
        m.caption = rec.caption;
        rows.push_back(std::move(m));
    }
    return aggregate_metrics(std::move(rows));
}

MetricsReport evaluate_mse_var(PoseGenerator& generator, const std::vector<DatasetRecord>& val_set,
                               int samples_per_caption, std::uint64_t seed) {
    RecordSampler sampler = [&](const DatasetRecord& rec, int count, std::uint64_t s) {
        return generator.decode(generator.sample_caption(rec.caption, count, s));
    };
    return evaluate_mse_var(sampler, val_set, samples_per_caption, seed);
}

double mean_keypoint_distance(const Pose& pose, const PoseTemplate& tmpl) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index k = 0; k < pose.size(); ++k) {
        if (!pose.visible(k)) continue;
        sum += (pose.xy.row(k) - tmpl.keypoints.row(k)).norm();
        ++n;
    }
    return n ? sum / n : std::numeric_limits<double>::infinity();
}

bool closest_to_template(const Pose& pose, const std::vector<PoseTemplate>& templates, std::size_t index) {
    const double own = mean_keypoint_distance(pose, templates[index]);
    if (!std::isfinite(own)) return false;
    for (std::size_t j = 0; j < templates.size(); ++j) {
        if (j != index && !(own < mean_keypoint_distance(pose, templates[j]))) return false;
    }
    return true;
}

nlohmann::json AccuracyReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : per_template)
        rows.push_back(
            {{"template_id", t.template_id}, {"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}});
    return nlohmann::json{{"overall", overall}, {"per_template", rows}};
}

AccuracyReport template_accuracy(const CaptionSampler& sampler, const std::vector<PoseTemplate>& templates,
                                 int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw Error(ErrorCode::InvalidConfig, "template accuracy needs at least one sample");
    AccuracyReport report;
    int correct = 0, total = 0;
    for (std::size_t ti = 0; ti < templates.size(); ++ti) {
        const auto& tmpl = templates[ti];
        TemplateAccuracy acc;
        acc.template_id = tmpl.template_id;
        const std::size_t patterns = tmpl.caption_patterns.size();
        for (std::size_t pi = 0; pi < patterns; ++pi) {
            // Samples are dealt round-robin over the caption patterns.
            const int count = n_samples / static_cast<int>(patterns) + (pi < n_samples % patterns ? 1 : 0);
            if (count == 0) continue;
            const auto poses = sampler(tmpl.caption_patterns[pi], count, derive_seed(seed, ti * 1000 + pi));
            for (const auto& p : poses) {
                acc.correct += closest_to_template(p, templates, ti) ? 1 : 0;
                ++acc.total;
            }
        }
        correct += acc.correct;
        total += acc.total;
        report.per_template.push_back(acc);
    }
    report.overall = total ? static_cast<double>(correct) / total : 0.0;
    return report;
}

AccuracyReport template_accuracy(PoseGenerator& generator, const std::vector<PoseTemplate>& templates, int n_samples,
                                 std::uint64_t seed) {
    CaptionSampler sampler = [&](const std::string& caption, int count, std::uint64_t s) {
        return generator.decode(generator.sample_caption(caption, count, s));
    };
    return template_accuracy(sampler, templates, n_samples, seed);
}

nlohmann::json run_ablation(const TrainConfig& config, const DenoiserConfig& denoiser_config,
                            const std::vector<DatasetRecord>& records, const SkeletonTopology& topology,
                            const fs::path& out_dir, const AblationOptions& options) {
    auto [train_set, val_set] = split(records, options.split_ratio, config.seed);
    if (val_set.empty()) throw Error(ErrorCode::EmptyDataset, "validation split is empty");
    if (options.eval_records > 0 && val_set.size() > static_cast<std::size_t>(options.eval_records))
        val_set.resize(static_cast<std::size_t>(options.eval_records));

    nlohmann::json report = nlohmann::json::object();
    for (const bool spatial : {true, false}) {
        const std::string name = spatial ? "GUNet" : "UNet-T2H";
        DenoiserConfig dc = denoiser_config;
        dc.spatial_block = spatial;
        const TrainResult trained = train(config, dc, train_set, topology, out_dir / name);
        PoseGenerator generator = PoseGenerator::load(trained.checkpoint, topology);
        nlohmann::json entry;
        entry["spatial_block"] = spatial;
        entry["checkpoint"] = trained.checkpoint.lexically_relative(out_dir).generic_string();
        entry["parameters"] = generator.model().parameters().total_count();
        entry["final_smoothed_loss"] = trained.history.back().smoothed;
        entry["train_records"] = train_set.size();
        entry["eval_records"] = val_set.size();
        entry["metrics"] = evaluate_mse_var(generator, val_set, options.samples_per_caption, config.seed).to_json();
        if (options.template_samples > 0 && !options.templates.empty())
            entry["template_accuracy"] =
                template_accuracy(generator, options.templates, options.template_samples, config.seed).to_json();
        report[name] = entry;
    }
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "comparison.json");
    if (!out) throw Error(ErrorCode::IoError, "cannot write comparison report");
    out << report.dump(2) << '\n';
    return report;
}

}  // namespace posediff
