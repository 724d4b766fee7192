#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "posediff/pose.hpp"

namespace posediff {

enum class RecordSource { Coco, Synthetic };

struct DatasetRecord {
    std::string record_id;
    Pose pose;  // grid units
    std::string caption;
    RecordSource source = RecordSource::Synthetic;
    std::optional<std::string> template_id;
};

struct PoseTemplate {
    std::string template_id;
    std::string name;
    Eigen::Matrix<double, Eigen::Dynamic, 2> keypoints;  // grid units, all visible
    std::vector<std::string> caption_patterns;
    double jitter_scale = 1.5;  // px

    Pose pose() const;
};

/// Minimum COCO-visible keypoints a record must have.
constexpr int kMinVisibleKeypoints = 8;

/// Five canonical poses (t_pose, standing, sitting, arms_up, walking) laid
/// out on a 32-grid and scaled to `grid_size`, jitter included.
std::vector<PoseTemplate> builtin_templates(int grid_size);

/// {"grid_size": G, "templates": [{"template_id", "name", "keypoints": [[x, y]...],
/// "captions": [...], "jitter_scale"}]}; coordinates and jitter are rescaled from G.
std::vector<PoseTemplate> templates_from_json(const nlohmann::json& j, int grid_size);
nlohmann::json templates_to_json(const std::vector<PoseTemplate>& templates, int grid_size);
std::vector<PoseTemplate> load_templates(const std::filesystem::path& path, int grid_size);

/// `count_per_template` jittered copies of every template (round-robin order),
/// clamped to the grid, each with a caption drawn from the template's patterns.
std::vector<DatasetRecord> synthesize(const std::vector<PoseTemplate>& templates, int count_per_template,
                                      std::uint64_t seed, int grid_size);

/// Aspect-preserving, centred letterbox from image pixels to the S x S grid.
struct Letterbox {
    double scale = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;

    static Letterbox fit(double image_width, double image_height, int grid_size);
    std::pair<double, double> to_grid(double x, double y) const { return {x * scale + offset_x, y * scale + offset_y}; }
    std::pair<double, double> to_image(double gx, double gy) const {
        return {(gx - offset_x) / scale, (gy - offset_y) / scale};
    }
};

/// Single-person images with at least kMinVisibleKeypoints labelled keypoints
/// (COCO visibility 1 or 2), one caption per image chosen under `seed`.
/// Throws ParseError or EmptyDataset.
std::vector<DatasetRecord> parse_coco(const nlohmann::json& keypoint_annotations, const nlohmann::json& captions,
                                      int grid_size, std::uint64_t seed = 0);
std::vector<DatasetRecord> parse_coco(const std::filesystem::path& keypoint_annotations_path,
                                      const std::filesystem::path& captions_path, int grid_size,
                                      std::uint64_t seed = 0);

/// Deterministic shuffled split; the train part holds round(ratio * n) records.
std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>> split(const std::vector<DatasetRecord>& records,
                                                                        double ratio, std::uint64_t seed);

/// JSON lines: {"record_id", "caption", "keypoints": [[x, y, v]...], "source", "template_id"?}.
nlohmann::json record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const nlohmann::json& j);
void write_manifest(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);
std::vector<DatasetRecord> read_manifest(const std::filesystem::path& path);

}  // namespace posediff
