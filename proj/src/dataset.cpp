#include "posediff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "posediff/errors.hpp"
#include "posediff/heatmap_codec.hpp"

namespace posediff {

namespace {

constexpr int kTemplateGrid = 32;

struct TemplateSpec {
    const char* id;
    std::vector<std::array<double, 2>> keypoints;
    std::vector<std::string> captions;
};

// COCO order; a frontal figure, so the person's left side is at larger x.
const std::vector<TemplateSpec>& template_specs() {
    static const std::vector<TemplateSpec> specs = {
        {"t_pose",
         {{16, 6}, {17, 5}, {15, 5}, {18, 6}, {14, 6}, {19, 10}, {13, 10}, {23, 10}, {9, 10},
          {27, 10}, {5, 10}, {18, 18}, {14, 18}, {18, 23}, {14, 23}, {18, 28}, {14, 28}},
         {"a person standing in a t pose", "t pose with arms stretched out to the sides", "someone doing a t pose"}},
        {"standing",
         {{16, 6}, {17, 5}, {15, 5}, {18, 6}, {14, 6}, {19, 10}, {13, 10}, {20, 14}, {12, 14},
          {20, 18}, {12, 18}, {18, 18}, {14, 18}, {18, 23}, {14, 23}, {18, 28}, {14, 28}},
         {"a person standing upright with arms down", "a man standing still", "someone standing straight"}},
        {"sitting",
         {{16, 9}, {17, 8}, {15, 8}, {18, 9}, {14, 9}, {19, 13}, {13, 13}, {20, 17}, {12, 17},
          {21, 20}, {11, 20}, {18, 20}, {14, 20}, {22, 21}, {10, 21}, {22, 27}, {10, 27}},
         {"a person sitting down", "a woman sitting on a chair", "someone seated with knees bent"}},
        {"arms_up",
         {{16, 8}, {17, 7}, {15, 7}, {18, 8}, {14, 8}, {19, 12}, {13, 12}, {21, 8}, {11, 8},
          {22, 4}, {10, 4}, {18, 20}, {14, 20}, {18, 24}, {14, 24}, {18, 28}, {14, 28}},
         {"a person raising both arms up", "someone with hands up in the air",
          "a man holding his arms above his head"}},
        {"walking",
         {{17, 6}, {18, 5}, {16, 5}, {19, 6}, {15, 6}, {20, 10}, {14, 10}, {22, 13}, {11, 13},
          {24, 15}, {9, 16}, {19, 18}, {15, 18}, {21, 22}, {12, 22}, {24, 27}, {9, 27}},
         {"a person walking forward", "a woman walking down the street", "someone taking a step while walking"}},
    };
    return specs;
}

std::string source_name(RecordSource s) { return s == RecordSource::Coco ? "coco" : "synthetic"; }

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

}  // namespace

Pose PoseTemplate::pose() const {
    Pose p(keypoints.rows());
    p.xy = keypoints;
    p.visible.setConstant(true);
    return p;
}

std::vector<PoseTemplate> builtin_templates(int grid_size) {
    const double scale = static_cast<double>(grid_size) / kTemplateGrid;
    std::vector<PoseTemplate> out;
    for (const auto& spec : template_specs()) {
        PoseTemplate t;
        t.template_id = spec.id;
        t.name = spec.id;
        t.keypoints.resize(static_cast<Eigen::Index>(spec.keypoints.size()), 2);
        for (std::size_t k = 0; k < spec.keypoints.size(); ++k) {
            t.keypoints(static_cast<Eigen::Index>(k), 0) = spec.keypoints[k][0] * scale;
            t.keypoints(static_cast<Eigen::Index>(k), 1) = spec.keypoints[k][1] * scale;
        }
        t.caption_patterns = spec.captions;
        t.jitter_scale = 1.5 * scale;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<PoseTemplate> templates_from_json(const nlohmann::json& j, int grid_size) {
    std::vector<PoseTemplate> out;
    try {
        const double scale = static_cast<double>(grid_size) / j.at("grid_size").get<double>();
        for (const auto& e : j.at("templates")) {
            PoseTemplate t;
            t.template_id = e.at("template_id").get<std::string>();
            t.name = e.value("name", t.template_id);
            const auto& kps = e.at("keypoints");
            t.keypoints.resize(static_cast<Eigen::Index>(kps.size()), 2);
            for (std::size_t k = 0; k < kps.size(); ++k) {
                t.keypoints(static_cast<Eigen::Index>(k), 0) = kps[k].at(0).get<double>() * scale;
                t.keypoints(static_cast<Eigen::Index>(k), 1) = kps[k].at(1).get<double>() * scale;
            }
            t.caption_patterns = e.at("captions").get<std::vector<std::string>>();
            t.jitter_scale = e.value("jitter_scale", 1.5) * scale;
            if (t.caption_patterns.empty()) throw Error(ErrorCode::ParseError, "template without captions");
            if (!pose_within_grid(t.pose(), grid_size))
                throw Error(ErrorCode::ParseError, "template " + t.template_id + " leaves the grid");
            out.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    return out;
}

nlohmann::json templates_to_json(const std::vector<PoseTemplate>& templates, int grid_size) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : templates) {
        nlohmann::json kps = nlohmann::json::array();
        for (Eigen::Index k = 0; k < t.keypoints.rows(); ++k) kps.push_back({t.keypoints(k, 0), t.keypoints(k, 1)});
        arr.push_back({{"template_id", t.template_id},
                       {"name", t.name},
                       {"keypoints", kps},
                       {"captions", t.caption_patterns},
                       {"jitter_scale", t.jitter_scale}});
    }
    return nlohmann::json{{"grid_size", grid_size}, {"templates", arr}};
}

std::vector<PoseTemplate> load_templates(const std::filesystem::path& path, int grid_size) {
    return templates_from_json(read_json_file(path), grid_size);
}

std::vector<DatasetRecord> synthesize(const std::vector<PoseTemplate>& templates, int count_per_template,
                                      std::uint64_t seed, int grid_size) {
    if (templates.empty()) throw Error(ErrorCode::EmptyDataset, "no templates given");
    if (count_per_template < 1) throw Error(ErrorCode::InvalidConfig, "count per template must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double hi = grid_size - 1.0;
    std::vector<DatasetRecord> out;
    out.reserve(templates.size() * static_cast<std::size_t>(count_per_template));
    for (int i = 0; i < count_per_template; ++i) {
        for (const auto& t : templates) {
            DatasetRecord r;
            r.record_id = "synth-" + std::to_string(out.size());
            r.source = RecordSource::Synthetic;
            r.template_id = t.template_id;
            r.pose = t.pose();
            for (Eigen::Index k = 0; k < r.pose.size(); ++k) {
                for (int a = 0; a < 2; ++a) {
                    const double jitter = t.jitter_scale * normal(rng);
                    r.pose.xy(k, a) = std::clamp(r.pose.xy(k, a) + jitter, 0.0, hi);
                }
            }
            std::uniform_int_distribution<std::size_t> pick(0, t.caption_patterns.size() - 1);
            r.caption = t.caption_patterns[pick(rng)];
            out.push_back(std::move(r));
        }
    }
    return out;
}

Letterbox Letterbox::fit(double image_width, double image_height, int grid_size) {
    Letterbox lb;
    lb.scale = grid_size / std::max(image_width, image_height);
    lb.offset_x = (grid_size - image_width * lb.scale) / 2.0;
    lb.offset_y = (grid_size - image_height * lb.scale) / 2.0;
    return lb;
}

std::vector<DatasetRecord> parse_coco(const nlohmann::json& keypoint_annotations, const nlohmann::json& captions,
                                      int grid_size, std::uint64_t seed) {
    struct ImageInfo {
        double width = 0, height = 0;
        std::vector<const nlohmann::json*> people;
        std::vector<std::string> captions;
    };
    std::map<long long, ImageInfo> images;
    try {
        for (const auto& img : keypoint_annotations.at("images")) {
            auto& info = images[img.at("id").get<long long>()];
            info.width = img.at("width").get<double>();
            info.height = img.at("height").get<double>();
        }
        for (const auto& ann : keypoint_annotations.at("annotations")) {
            if (ann.value("category_id", 1) != 1) continue;
            auto it = images.find(ann.at("image_id").get<long long>());
            if (it == images.end()) throw Error(ErrorCode::ParseError, "annotation references unknown image");
            it->second.people.push_back(&ann);
        }
        for (const auto& cap : captions.at("annotations")) {
            auto it = images.find(cap.at("image_id").get<long long>());
            if (it != images.end()) it->second.captions.push_back(cap.at("caption").get<std::string>());
        }

        std::mt19937_64 rng(seed);
        std::vector<DatasetRecord> out;
        const double hi = grid_size - 1e-6;
        for (auto& [id, info] : images) {
            if (info.people.size() != 1 || info.captions.empty()) continue;
            const auto& kps = info.people.front()->at("keypoints");
            if (kps.size() != 51) throw Error(ErrorCode::ParseError, "keypoints must hold 17 triples");
            if (!(info.width > 0 && info.height > 0)) throw Error(ErrorCode::ParseError, "image without size");
            Pose pose(17);
            const Letterbox lb = Letterbox::fit(info.width, info.height, grid_size);
            for (int k = 0; k < 17; ++k) {
                const int v = kps[static_cast<std::size_t>(3 * k + 2)].get<int>();
                if (v <= 0) continue;
                auto [gx, gy] = lb.to_grid(kps[static_cast<std::size_t>(3 * k)].get<double>(),
                                           kps[static_cast<std::size_t>(3 * k + 1)].get<double>());
                pose.xy(k, 0) = std::clamp(gx, 0.0, hi);
                pose.xy(k, 1) = std::clamp(gy, 0.0, hi);
                pose.visible(k) = true;
            }
            // Caption choice consumes the stream for every single-person image so
            // that filtering does not shift later picks.
            std::uniform_int_distribution<std::size_t> pick(0, info.captions.size() - 1);
            const std::size_t choice = pick(rng);
            if (pose.visible_count() < kMinVisibleKeypoints) continue;
            DatasetRecord r;
            r.record_id = "coco-" + std::to_string(id);
            r.pose = std::move(pose);
            r.caption = info.captions[choice];
            r.source = RecordSource::Coco;
            out.push_back(std::move(r));
        }
        if (out.empty()) throw Error(ErrorCode::EmptyDataset, "no COCO image survived filtering");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

std::vector<DatasetRecord> parse_coco(const std::filesystem::path& keypoint_annotations_path,
                                      const std::filesystem::path& captions_path, int grid_size, std::uint64_t seed) {
    return parse_coco(read_json_file(keypoint_annotations_path), read_json_file(captions_path), grid_size, seed);
}

std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>> split(const std::vector<DatasetRecord>& records,
                                                                        double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::InvalidConfig, "split ratio must lie in (0, 1)");
    if (records.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to split");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(records.size())));
    std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>> out;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_train ? out.first : out.second).push_back(records[order[i]]);
    return out;
}

nlohmann::json record_to_json(const DatasetRecord& record) {
    nlohmann::json j;
    j["record_id"] = record.record_id;
    j["caption"] = record.caption;
    j["keypoints"] = pose_to_json(record.pose).at("keypoints");
    j["source"] = source_name(record.source);
    if (record.template_id) j["template_id"] = *record.template_id;
    return j;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    try {
        r.record_id = j.at("record_id").get<std::string>();
        r.caption = j.at("caption").get<std::string>();
        r.pose = pose_from_json(nlohmann::json{{"keypoints", j.at("keypoints")}});
        const auto source = j.at("source").get<std::string>();
        if (source == "coco")
            r.source = RecordSource::Coco;
        else if (source == "synthetic")
            r.source = RecordSource::Synthetic;
        else
            throw Error(ErrorCode::ParseError, "unknown record source " + source);
        if (j.contains("template_id")) r.template_id = j.at("template_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    if (r.caption.empty()) throw Error(ErrorCode::ParseError, "record " + r.record_id + " has an empty caption");
    return r;
}

void write_manifest(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<DatasetRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<DatasetRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (out.empty()) throw Error(ErrorCode::EmptyDataset, "manifest " + path.string() + " has no records");
    return out;
}

}  // namespace posediff
