#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "posediff/checkpoint.hpp"
#include "posediff/dataset.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/errors.hpp"
#include "posediff/heatmap_codec.hpp"
#include "posediff/profiles.hpp"
#include "posediff/render.hpp"
#include "posediff/skeleton_graph.hpp"
#include "posediff/text_embedding.hpp"
#include "posediff/train_eval.hpp"

namespace fs = std::filesystem;
using namespace posediff;

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string sample_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%03d", index);
    return buf;
}

struct PrepCoco {
    std::string annotations, captions, out;
    int grid_size = 64;
    std::uint64_t seed = 0;
};

struct SynthData {
    std::string templates, out;
    int count = 400;
    int grid_size = 32;
    std::uint64_t seed = 0;
};

struct SplitCmd {
    std::string manifest, train_out, val_out;
    double ratio = 0.8;
    std::uint64_t seed = 0;
};

struct TrainCmd {
    std::string manifest, out_dir, profile = "desk", embeddings;
    std::uint64_t seed = 0;
    bool no_spatial = false;
    int steps = 0, batch_size = 0, log_interval = 0;
};

struct SampleCmd {
    std::string checkpoint, caption, out_dir;
    int count = 1, size = 256;
    std::uint64_t seed = 0;
};

struct RenderCmd {
    std::string pose, out;
    int size = 256, grid_size = 64;
};

struct EvalCmd {
    std::string checkpoint, manifest, out;
    int samples_per_caption = 10, limit = 0, template_samples = 0;
    std::uint64_t seed = 0;
};

struct ScheduleCmd {
    int steps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    std::string out;
};

struct EncodeCmd {
    std::string pose, out;
    int grid_size = 64;
    std::optional<double> sigma;
};

struct DecodeCmd {
    std::string heatmaps, out;
    double threshold = kDefaultVisibilityThreshold;
};

struct AblateCmd {
    std::string manifest, out_dir, profile = "desk";
    std::uint64_t seed = 0;
    int steps = 0, batch_size = 0, eval_records = 20, samples_per_caption = 10, template_samples = 0;
    double ratio = 0.8;
};

Profile resolve_profile(const std::string& name, int steps, int batch_size) {
    Profile p = profile_by_name(name);
    if (steps > 0) {
        p.train.steps = steps;
        p.train.checkpoint_interval = std::min(p.train.checkpoint_interval, steps);
    }
    if (batch_size > 0) p.train.batch_size = batch_size;
    return p;
}

void run_train(const TrainCmd& c) {
    Profile p = resolve_profile(c.profile, c.steps, c.batch_size);
    p.train.seed = c.seed;
    p.train.log_interval = c.log_interval;
    p.denoiser.spatial_block = !c.no_spatial;
    const auto records = read_manifest(c.manifest);
    std::optional<PrecomputedEmbeddings> embeddings;
    if (!c.embeddings.empty()) embeddings = load_precomputed(c.embeddings);
    const TrainResult r = train(p.train, p.denoiser, records, build_default_topology(), c.out_dir,
                                embeddings ? &*embeddings : nullptr);
    std::cout << r.checkpoint.string() << '\n';
}

void run_sample(const SampleCmd& c) {
    const SkeletonTopology topo = build_default_topology();
    PoseGenerator gen = PoseGenerator::load(c.checkpoint, topo);
    const auto stacks = gen.sample_caption(c.caption, c.count, c.seed);
    const auto poses = gen.decode(stacks);
    fs::create_directories(c.out_dir);
    const fs::path dir = c.out_dir;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        const std::string stem = sample_stem(static_cast<int>(i));
        write_heatmap_file(stacks[i], dir / (stem + ".pdhm"));
        write_pose_file(poses[i], dir / (stem + ".json"));
        write_png(render_pose(poses[i], topo, c.size, gen.grid_size()), dir / (stem + ".png"));
    }
}

void run_eval(const EvalCmd& c) {
    const SkeletonTopology topo = build_default_topology();
    PoseGenerator gen = PoseGenerator::load(c.checkpoint, topo);
    auto records = read_manifest(c.manifest);
    if (c.limit > 0 && records.size() > static_cast<std::size_t>(c.limit)) records.resize(static_cast<std::size_t>(c.limit));
    nlohmann::json report = evaluate_mse_var(gen, records, c.samples_per_caption, c.seed).to_json();
    if (c.template_samples > 0)
        report["template_accuracy"] =
            template_accuracy(gen, builtin_templates(gen.grid_size()), c.template_samples, c.seed).to_json();
    write_json(report, c.out);
}

void run_schedule(const ScheduleCmd& c) {
    const NoiseSchedule s = make_schedule(c.steps, c.beta_start, c.beta_end);
    if (c.out.empty())
        std::cout << schedule_csv(s);
    else
        write_schedule_csv(s, c.out);
}

void run_ablate(const AblateCmd& c) {
    Profile p = resolve_profile(c.profile, c.steps, c.batch_size);
    p.train.seed = c.seed;
    AblationOptions opts;
    opts.split_ratio = c.ratio;
    opts.eval_records = c.eval_records;
    opts.samples_per_caption = c.samples_per_caption;
    opts.template_samples = c.template_samples;
    if (c.template_samples > 0) opts.templates = builtin_templates(p.denoiser.grid_size);
    run_ablation(p.train, p.denoiser, read_manifest(c.manifest), build_default_topology(), c.out_dir, opts);
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"posediff: text-conditioned pose heatmap diffusion"};
    app.require_subcommand(1);

    PrepCoco prep;
    auto* prep_cmd = app.add_subcommand("prep-coco", "Filter COCO annotations into a dataset manifest");
    prep_cmd->add_option("--annotations", prep.annotations, "person_keypoints JSON")->required();
    prep_cmd->add_option("--captions", prep.captions, "captions JSON")->required();
    prep_cmd->add_option("--out", prep.out, "manifest path (JSON lines)")->required();
    prep_cmd->add_option("--grid-size", prep.grid_size, "heatmap grid size")->capture_default_str();
    prep_cmd->add_option("--seed", prep.seed, "caption selection seed")->capture_default_str();

    SynthData synth;
    auto* synth_cmd = app.add_subcommand("synth-data", "Generate the jittered template dataset");
    synth_cmd->add_option("--templates", synth.templates, "template JSON (built-in set when omitted)");
    synth_cmd->add_option("--count", synth.count, "records per template")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "jitter seed")->capture_default_str();
    synth_cmd->add_option("--grid-size", synth.grid_size, "heatmap grid size")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "manifest path")->required();

    SplitCmd split_args;
    auto* split_cmd = app.add_subcommand("split", "Shuffle a manifest into train and validation parts");
    split_cmd->add_option("--manifest", split_args.manifest)->required();
    split_cmd->add_option("--ratio", split_args.ratio, "train fraction")->capture_default_str();
    split_cmd->add_option("--seed", split_args.seed)->capture_default_str();
    split_cmd->add_option("--train-out", split_args.train_out)->required();
    split_cmd->add_option("--val-out", split_args.val_out)->required();

    TrainCmd tr;
    auto* train_cmd = app.add_subcommand("train", "Train a denoiser");
    train_cmd->add_option("--manifest", tr.manifest)->required();
    train_cmd->add_option("--out-dir", tr.out_dir)->required();
    train_cmd->add_option("--profile", tr.profile)->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
    train_cmd->add_option("--seed", tr.seed)->capture_default_str();
    train_cmd->add_flag("--no-spatial-block", tr.no_spatial, "train the UNet-T2H variant");
    train_cmd->add_option("--steps", tr.steps, "override the profile's step count");
    train_cmd->add_option("--batch-size", tr.batch_size, "override the profile's batch size");
    train_cmd->add_option("--embeddings", tr.embeddings, "precomputed sentence vectors keyed by record id");
    train_cmd->add_option("--log-interval", tr.log_interval, "progress line every N steps (0 = quiet)")
        ->capture_default_str();

    SampleCmd smp;
    auto* sample_cmd = app.add_subcommand("sample", "Generate poses for a caption");
    sample_cmd->add_option("--checkpoint", smp.checkpoint)->required();
    sample_cmd->add_option("--caption", smp.caption)->required();
    sample_cmd->add_option("--count", smp.count)->check(CLI::PositiveNumber)->capture_default_str();
    sample_cmd->add_option("--seed", smp.seed)->capture_default_str();
    sample_cmd->add_option("--out-dir", smp.out_dir)->required();
    sample_cmd->add_option("--size", smp.size, "render size in pixels")->capture_default_str();

    RenderCmd rnd;
    auto* render_cmd = app.add_subcommand("render", "Draw a pose JSON as an OpenPose-style PNG");
    render_cmd->add_option("--pose", rnd.pose)->required();
    render_cmd->add_option("--out", rnd.out)->required();
    render_cmd->add_option("--size", rnd.size)->capture_default_str();
    render_cmd->add_option("--grid-size", rnd.grid_size, "grid the pose coordinates live on")->capture_default_str();

    EvalCmd ev;
    auto* eval_cmd = app.add_subcommand("eval", "MSE / variance evaluation against a manifest");
    eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
    eval_cmd->add_option("--manifest", ev.manifest)->required();
    eval_cmd->add_option("--samples-per-caption", ev.samples_per_caption)
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed)->capture_default_str();
    eval_cmd->add_option("--out", ev.out)->required();
    eval_cmd->add_option("--limit", ev.limit, "evaluate only the first N records (0 = all)")->capture_default_str();
    eval_cmd->add_option("--template-samples", ev.template_samples,
                         "also report built-in template accuracy with N samples each (0 = skip)")
        ->capture_default_str();

    ScheduleCmd sch;
    auto* sched_cmd = app.add_subcommand("inspect-schedule", "Print the noise schedule as CSV");
    sched_cmd->add_option("--T", sch.steps)->capture_default_str();
    sched_cmd->add_option("--beta-start", sch.beta_start)->capture_default_str();
    sched_cmd->add_option("--beta-end", sch.beta_end)->capture_default_str();
    sched_cmd->add_option("--out", sch.out, "CSV path (stdout when omitted)");

    EncodeCmd enc;
    auto* encode_cmd = app.add_subcommand("encode", "Pose JSON to heatmap file");
    encode_cmd->add_option("--pose", enc.pose)->required();
    encode_cmd->add_option("--out", enc.out)->required();
    encode_cmd->add_option("--grid-size", enc.grid_size)->capture_default_str();
    encode_cmd->add_option("--sigma", enc.sigma, "Gaussian std in grid px (default grid/32)");

    DecodeCmd dec;
    auto* decode_cmd = app.add_subcommand("decode", "Heatmap file to pose JSON");
    decode_cmd->add_option("--heatmaps", dec.heatmaps)->required();
    decode_cmd->add_option("--out", dec.out)->required();
    decode_cmd->add_option("--threshold", dec.threshold, "visibility threshold")->capture_default_str();

    AblateCmd abl;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare GUNet against UNet-T2H");
    ablate_cmd->add_option("--manifest", abl.manifest)->required();
    ablate_cmd->add_option("--out-dir", abl.out_dir)->required();
    ablate_cmd->add_option("--profile", abl.profile)->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
    ablate_cmd->add_option("--seed", abl.seed)->capture_default_str();
    ablate_cmd->add_option("--steps", abl.steps, "override the profile's step count");
    ablate_cmd->add_option("--batch-size", abl.batch_size, "override the profile's batch size");
    ablate_cmd->add_option("--ratio", abl.ratio, "train fraction")->capture_default_str();
    ablate_cmd->add_option("--eval-records", abl.eval_records, "validation records evaluated (0 = all)")
        ->capture_default_str();
    ablate_cmd->add_option("--samples-per-caption", abl.samples_per_caption)->capture_default_str();
    ablate_cmd->add_option("--template-samples", abl.template_samples)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try {
        if (*prep_cmd) {
            write_manifest(parse_coco(fs::path(prep.annotations), fs::path(prep.captions), prep.grid_size, prep.seed),
                           prep.out);
        } else if (*synth_cmd) {
            const auto templates = synth.templates.empty() ? builtin_templates(synth.grid_size)
                                                           : load_templates(synth.templates, synth.grid_size);
            write_manifest(synthesize(templates, synth.count, synth.seed, synth.grid_size), synth.out);
        } else if (*split_cmd) {
            const auto [train_set, val_set] = split(read_manifest(split_args.manifest), split_args.ratio, split_args.seed);
            write_manifest(train_set, split_args.train_out);
            write_manifest(val_set, split_args.val_out);
        } else if (*train_cmd) {
            run_train(tr);
        } else if (*sample_cmd) {
            run_sample(smp);
        } else if (*render_cmd) {
            write_png(render_pose(read_pose_file(rnd.pose), build_default_topology(), rnd.size, rnd.grid_size), rnd.out);
        } else if (*eval_cmd) {
            run_eval(ev);
        } else if (*sched_cmd) {
            run_schedule(sch);
        } else if (*encode_cmd) {
            const double sigma = enc.sigma.value_or(default_sigma(enc.grid_size));
            write_heatmap_file(encode_pose(read_pose_file(enc.pose), enc.grid_size, sigma), enc.out);
        } else if (*decode_cmd) {
            write_pose_file(decode_heatmaps(read_heatmap_file(dec.heatmaps), dec.threshold), dec.out);
        } else if (*ablate_cmd) {
            run_ablate(abl);
        }
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "IoError: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
