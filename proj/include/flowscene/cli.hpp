#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowscene/flow.hpp"
#include "flowscene/grids.hpp"
#include "flowscene/kittiio.hpp"
#include "flowscene/lift.hpp"
#include "flowscene/metrics.hpp"
#include "flowscene/pipeline.hpp"
#include "flowscene/synthsim.hpp"
#include "flowscene/tensorio.hpp"
#include "flowscene/voxel_export.hpp"

namespace flowscene::cli {

namespace detail {

inline std::string single_line(std::string s) {
    for (char& ch : s)
        if (ch == '\n' || ch == '\r' || ch == '\t') ch = ' ';
    return s;
}

inline std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> items;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        items.push_back(a == std::string::npos ? std::string() : item.substr(a, b - a + 1));
    }
    return items;
}

inline std::vector<float> parse_float_list(const std::string& csv, const char* what) {
    std::vector<float> out;
    for (const std::string& item : split_csv(csv)) {
        try {
            size_t used = 0;
            float v = std::stof(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(what) + ": bad number '" + item + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
    return out;
}

inline std::array<int, 3> parse_dims(const std::string& csv, const char* what) {
    std::vector<std::string> items = split_csv(csv);
    if (items.size() != 3)
        throw std::invalid_argument(std::string(what) + ": expected X,Y,Z");
    std::array<int, 3> dims{};
    for (int k = 0; k < 3; ++k) {
        try {
            size_t used = 0;
            dims[k] = std::stoi(items[k], &used);
            if (used != items[k].size() || dims[k] <= 0) throw std::invalid_argument(items[k]);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(what) + ": bad dimension '" + items[k] + "'");
        }
    }
    return dims;
}

inline Vec3 parse_vec3(const std::string& csv, const char* what) {
    std::vector<float> v = parse_float_list(csv, what);
    if (v.size() != 3) throw std::invalid_argument(std::string(what) + ": expected x,y,z");
    return Vec3{v[0], v[1], v[2]};
}

inline std::vector<std::vector<float>> read_prototypes(const std::string& path) {
    fsgr::Tensor t = fsgr::read(path);
    if (t.dims.size() != 2)
        throw std::runtime_error("prototypes: expected a rank-2 tensor: " + path);
    std::vector<std::vector<float>> rows(t.dims[0], std::vector<float>(t.dims[1]));
    for (uint32_t r = 0; r < t.dims[0]; ++r)
        std::copy_n(t.data.begin() + static_cast<size_t>(r) * t.dims[1], t.dims[1],
                    rows[r].begin());
    return rows;
}

inline DepthDistribution read_depth_volume(const std::string& path,
                                           const std::vector<float>& bin_edges) {
    fsgr::Tensor t = fsgr::read(path);
    if (t.dims.size() != 3)
        throw std::runtime_error("depth volume: expected a rank-3 tensor: " + path);
    return DepthDistribution(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                             static_cast<int>(t.dims[2]), bin_edges, std::move(t.data));
}

// Collapses a feature volume to per-voxel class ids: single channel = rounded
// class value, multiple channels = argmax over channels (all-zero -> empty).
inline SemanticVoxelGrid grid_to_labels(const VoxelGrid& g) {
    const size_t n = g.spec().voxel_count();
    std::vector<uint16_t> labels(n, 0);
    if (g.channels == 1) {
        for (size_t v = 0; v < n; ++v) {
            float raw = g.data[v];
            long cls = std::lround(raw);
            if (cls < 0 || cls > 0xffff)
                throw std::runtime_error("grid labels: class value out of range: " +
                                         std::to_string(raw));
            labels[v] = static_cast<uint16_t>(cls);
        }
    } else {
        for (size_t v = 0; v < n; ++v) {
            int best = 0;
            float best_val = 0.0f;
            bool any = false;
            for (int c = 0; c < g.channels; ++c) {
                float val = g.data[c * n + v];
                if (val != 0.0f) any = true;
                if (c == 0 || val > best_val) {
                    best_val = val;
                    best = c;
                }
            }
            labels[v] = any ? static_cast<uint16_t>(best) : 0;
        }
    }
    uint16_t max_label = 0;
    for (uint16_t l : labels) max_label = std::max(max_label, l);
    return SemanticVoxelGrid(g.dims, std::max<int>(max_label + 1, g.channels > 1 ? g.channels : 1),
                             std::move(labels), std::vector<uint8_t>(n, 1));
}

}  // namespace detail

struct SynthOpts {
    std::string config;
    std::string out;
    uint32_t seed = 0;
};

inline int cmd_synth(const SynthOpts& o) {
    SceneConfig cfg = o.config.empty() ? default_scene_config() : load_scene_config(o.config);
    SyntheticScene scene = generate(cfg, o.seed);
    export_scene(scene, o.out);

    OracleVoxels gt = oracle_voxels(scene);
    std::filesystem::path base(o.out);
    write_labels(RawLabelVolume{cfg.grid.dims, gt.labels.labels}, (base / "gt.labels").string());
    write_bitmask(std::vector<uint8_t>(gt.labels.voxel_count(), 0), cfg.grid.dims,
                  (base / "gt.invalid").string());
    write_calib(cfg.camera, (base / "calib.txt").string());
    std::cout << "wrote " << cfg.frames << " frames, " << cfg.objects.size()
              << " objects, voxel ground truth to " << o.out << "\n";
    return 0;
}

struct OcclusionOpts {
    std::string fwd;
    std::string bwd;
    std::string out;
    std::string border = "zero_pad";
    float tau = 1.0f;
    float alpha = 0.01f;
    float beta = 0.5f;
    bool relative = false;
};

inline int cmd_occlusion(const OcclusionOpts& o) {
    FlowField fwd = read_flo(o.fwd);
    FlowField bwd = read_flo(o.bwd);
    ConsistencyConfig cfg;
    cfg.tau = o.tau;
    cfg.use_relative = o.relative;
    cfg.relative_alpha = o.alpha;
    cfg.relative_beta = o.beta;
    cfg.border_policy =
        o.border == "mark_occluded" ? BorderPolicy::mark_occluded : BorderPolicy::zero_pad;
    OcclusionMask mask = occlusion_mask(fwd, bwd, cfg);
    write_pgm_mask(mask, o.out);
    size_t occluded = 0;
    for (float v : mask.values) occluded += v != 0.0f;
    std::cout << "wrote mask to " << o.out << " (" << occluded << " of " << mask.values.size()
              << " pixels occluded)\n";
    return 0;
}

struct RunOpts {
    std::string scene;
    std::string config;
    std::string out;
    std::string current;
    std::string depth;
    std::vector<std::string> history;
    std::vector<std::string> flow_fwd;
    std::vector<std::string> flow_bwd;
    std::string mask_override;
    bool no_mask = false;
    bool dump = false;
};

inline int cmd_run(const RunOpts& o) {
    namespace fs = std::filesystem;
    const bool scene_mode = !o.scene.empty();
    const bool explicit_mode = !o.current.empty() || !o.history.empty() || !o.flow_fwd.empty() ||
                               !o.flow_bwd.empty() || !o.depth.empty();
    if (scene_mode && explicit_mode)
        throw std::invalid_argument("--scene conflicts with explicit tensor paths");
    if (!scene_mode && !explicit_mode)
        throw std::invalid_argument("need --scene or explicit tensor paths (--current et al.)");
    if (!o.mask_override.empty() && o.no_mask)
        throw std::invalid_argument("--mask-override conflicts with --no-mask");

    PipelineConfig cfg;
    nlohmann::json cfg_json;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw std::runtime_error("cannot open config: " + o.config);
        try {
            in >> cfg_json;
            cfg = cfg_json.get<PipelineConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("bad pipeline config " + o.config + ": " + e.what());
        }
    }

    FeatureMap current;
    std::vector<FeatureMap> history;
    std::vector<FlowPair> flows;
    DepthDistribution depth;

    if (scene_mode) {
        // The scene directory is authoritative for geometry; a config that also
        // carries it would be silently overridden, so reject that instead.
        for (const char* key : {"camera", "bin_edges", "grid", "prototypes"})
            if (cfg_json.contains(key))
                throw std::invalid_argument(std::string("config key '") + key +
                                            "' conflicts with --scene (the scene supplies it)");
        fs::path base(o.scene);
        SceneConfig scfg = load_scene_config((base / "scene.json").string());
        cfg.camera = scfg.camera;
        cfg.bin_edges = scfg.bin_edges;
        cfg.grid = scfg.grid;
        cfg.prototypes = detail::read_prototypes((base / "prototypes.fsgr").string());

        const int last = scfg.frames - 1;
        if (cfg.history_frames > last)
            throw std::invalid_argument("config needs " + std::to_string(cfg.history_frames) +
                                        " history frames, scene only has " + std::to_string(last));
        char name[64];
        std::snprintf(name, sizeof name, "frame_%02d.features.fsgr", last);
        current = read_feature_map((base / name).string());
        for (int i = 1; i <= cfg.history_frames; ++i) {
            std::snprintf(name, sizeof name, "frame_%02d.features.fsgr", last - i);
            history.push_back(read_feature_map((base / name).string()));
            FlowPair pair;
            std::snprintf(name, sizeof name, "flow_fwd_%02d.flo", i);
            pair.fwd = read_flo((base / name).string());
            std::snprintf(name, sizeof name, "flow_bwd_%02d.flo", i);
            pair.bwd = read_flo((base / name).string());
            flows.push_back(std::move(pair));
        }
        depth = detail::read_depth_volume((base / "depth.fsgr").string(), scfg.bin_edges);
    } else {
        if (o.config.empty())
            throw std::invalid_argument("explicit tensor mode needs --config for camera and grid");
        if (o.current.empty() || o.history.empty() || o.depth.empty())
            throw std::invalid_argument(
                "explicit mode needs --current, --history, --flow-fwd, --flow-bwd, --depth");
        if (o.flow_fwd.size() != o.history.size() || o.flow_bwd.size() != o.history.size())
            throw std::invalid_argument("need one --flow-fwd and one --flow-bwd per history frame");
        current = read_feature_map(o.current);
        for (size_t i = 0; i < o.history.size(); ++i) {
            history.push_back(read_feature_map(o.history[i]));
            flows.push_back(FlowPair{read_flo(o.flow_fwd[i]), read_flo(o.flow_bwd[i])});
        }
        depth = detail::read_depth_volume(o.depth, cfg.bin_edges);
    }

    OcclusionMask override_mask;
    const OcclusionMask* override_ptr = nullptr;
    if (o.no_mask) {
        override_mask = OcclusionMask(current.height, current.width);
        override_ptr = &override_mask;
    } else if (!o.mask_override.empty()) {
        override_mask = read_pgm_mask(o.mask_override);
        override_ptr = &override_mask;
    }

    PipelineResult res = flowscene::run(current, history, flows, depth, override_ptr, cfg);

    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + o.out);
    fs::path ob(o.out);
    write_voxel_grid((ob / "v_fine.fsgr").string(), res.v_fine);
    write_pgm_mask(res.mask, (ob / "mask.pgm").string());
    if (!cfg.prototypes.empty()) {
        SemanticVoxelGrid pred = readout(res.v_fine, cfg.prototypes);
        write_labels(RawLabelVolume{pred.dims, pred.labels}, (ob / "pred.labels").string());
    }
    if (o.dump) {
        write_feature_map((ob / "f_agg.fsgr").string(), res.f_agg);
        write_feature_map((ob / "f_refined.fsgr").string(), res.f_refined);
        write_voxel_grid((ob / "v_t.fsgr").string(), res.v_t);
        write_voxel_grid((ob / "v_agg.fsgr").string(), res.v_agg);
        write_voxel_grid((ob / "v_mask.fsgr").string(), res.v_mask);
    }
    std::cout << "wrote refined volume to " << o.out << "\n";
    return 0;
}

struct EvalOpts {
    std::string pred;
    std::string gt;
    std::string invalid;
    std::string learning_map;
    std::string out;
    std::string ranges = "12.8,25.6,51.2";
    std::string dims = "256,256,32";
    std::string dynamic;
    float voxel_size = 0.2f;
};

inline int cmd_eval(const EvalOpts& o) {
    std::array<int, 3> dims = detail::parse_dims(o.dims, "--dims");
    RawLabelVolume pv = read_labels(o.pred, dims);
    RawLabelVolume gv = read_labels(o.gt, dims);
    std::vector<uint8_t> invalid;
    if (!o.invalid.empty()) invalid = read_bitmask(o.invalid, dims);

    SemanticVoxelGrid pred, gt;
    if (!o.learning_map.empty()) {
        LearningMap lm = load_learning_map(o.learning_map);
        pred = remap(pv, lm);
        gt = o.invalid.empty() ? remap(gv, lm) : remap(gv, lm, invalid);
    } else {
        uint16_t max_label = 0;
        for (uint16_t l : pv.values) max_label = std::max(max_label, l);
        for (uint16_t l : gv.values) max_label = std::max(max_label, l);
        int k = std::max(2, max_label + 1);
        pred = SemanticVoxelGrid(dims, k, pv.values,
                                 std::vector<uint8_t>(pv.values.size(), 1));
        std::vector<uint8_t> valid(gv.values.size(), 1);
        for (size_t i = 0; i < invalid.size(); ++i) valid[i] = invalid[i] ? 0 : 1;
        gt = SemanticVoxelGrid(dims, k, gv.values, std::move(valid));
    }

    std::set<int> dynamic;
    if (o.dynamic.empty()) {
        dynamic = default_dynamic_classes();
    } else {
        for (float v : detail::parse_float_list(o.dynamic, "--dynamic"))
            dynamic.insert(static_cast<int>(v));
    }
    std::vector<float> ranges = detail::parse_float_list(o.ranges, "--ranges");

    nlohmann::json report = metrics_report(pred, gt, o.voxel_size, dynamic, ranges);
    std::string text = report.dump(2);
    std::cout << text << "\n";
    if (!o.out.empty()) {
        std::ofstream f(o.out);
        if (!f) throw std::runtime_error("cannot open report for write: " + o.out);
        f << text << "\n";
        if (!f) throw std::runtime_error("report write failed: " + o.out);
    }
    return 0;
}

struct ExportOpts {
    std::string grid;
    std::string labels;
    std::string palette;
    std::string out;
    std::string format = "ply";
    std::string dims;
    std::string origin = "0,0,0";
    float voxel_size = 0.2f;
};

inline int cmd_export(const ExportOpts& o) {
    if (o.grid.empty() == o.labels.empty())
        throw std::invalid_argument("need exactly one of --grid or --labels");
    Vec3 origin = detail::parse_vec3(o.origin, "--origin");

    SemanticVoxelGrid sem;
    if (!o.grid.empty()) {
        sem = detail::grid_to_labels(read_voxel_grid(o.grid, o.voxel_size, origin));
    } else {
        if (o.dims.empty()) throw std::invalid_argument("--labels needs --dims X,Y,Z");
        std::array<int, 3> dims = detail::parse_dims(o.dims, "--dims");
        RawLabelVolume v = read_labels(o.labels, dims);
        uint16_t max_label = 0;
        for (uint16_t l : v.values) max_label = std::max(max_label, l);
        sem = SemanticVoxelGrid(dims, max_label + 1, v.values,
                                std::vector<uint8_t>(v.values.size(), 1));
    }

    Palette palette = o.palette.empty() ? default_palette(sem.num_classes) : load_palette(o.palette);
    if (o.format == "ply") {
        PlyVoxels pv = ply_from_labels(sem, o.voxel_size, origin, palette);
        write_ply(pv, o.out);
        std::cout << "wrote " << pv.entries.size() << " voxel cubes to " << o.out << "\n";
    } else {
        write_pgm_slices(sem, o.out);
        std::cout << "wrote " << sem.dims[2] << " slices to " << o.out << "\n";
    }
    return 0;
}

/// Parses and executes one command. `args` excludes the program name. Returns
/// the process exit code; failures print a single "error: ..." line to stderr.
inline int run_command(const std::vector<std::string>& args) {
    CLI::App app{"flow-guided temporal aggregation and occlusion-aware voxel completion", "flowscene"};
    app.require_subcommand(1);

    SynthOpts so;
    OcclusionOpts oo;
    RunOpts ro;
    EvalOpts eo;
    ExportOpts xo;

    CLI::App* synth = app.add_subcommand(
        "synth", "Generate a synthetic scene: frames, flows, masks, depth, voxel ground truth");
    synth->add_option("--config", so.config, "Scene config JSON (default: built-in scene)");
    synth->add_option("--seed", so.seed, "RNG seed (default 0)");
    synth->add_option("--out", so.out, "Output directory")->required();

    CLI::App* occl = app.add_subcommand(
        "occlusion", "Round-trip flow consistency check producing a binary occlusion mask");
    occl->add_option("--fwd", oo.fwd, "Forward flow (.flo)")->required();
    occl->add_option("--bwd", oo.bwd, "Backward flow (.flo)")->required();
    occl->add_option("--tau", oo.tau, "Residual threshold in pixels (default 1.0)");
    occl->add_option("--border", oo.border, "Policy for samples leaving the image")
        ->check(CLI::IsMember({"zero_pad", "mark_occluded"}));
    occl->add_flag("--relative", oo.relative, "Use the motion-relative threshold");
    occl->add_option("--alpha", oo.alpha, "Relative threshold slope (default 0.01)");
    occl->add_option("--beta", oo.beta, "Relative threshold offset (default 0.5)");
    occl->add_option("--out", oo.out, "Output mask (PGM)")->required();

    CLI::App* run = app.add_subcommand(
        "run", "Aggregate history into the current frame, lift to voxels, refine by occlusion");
    run->add_option("--scene", ro.scene, "Scene directory written by synth");
    run->add_option("--config", ro.config, "Pipeline config JSON");
    run->add_option("--current", ro.current, "Current-frame features (.fsgr)");
    run->add_option("--history", ro.history, "History feature maps, nearest first (.fsgr)");
    run->add_option("--flow-fwd", ro.flow_fwd, "Forward flow per history frame (.flo)");
    run->add_option("--flow-bwd", ro.flow_bwd, "Backward flow per history frame (.flo)");
    run->add_option("--depth", ro.depth, "Depth distribution volume (.fsgr, D x H x W)");
    run->add_option("--mask-override", ro.mask_override, "Use this PGM mask instead of the consistency check");
    run->add_flag("--no-mask", ro.no_mask, "Treat every pixel as visible (all-zero mask)");
    run->add_flag("--dump-intermediates", ro.dump, "Also write aggregated/lifted intermediates");
    run->add_option("--out", ro.out, "Output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "Score predicted labels against ground truth");
    eval->add_option("--pred", eo.pred, "Predicted label volume")->required();
    eval->add_option("--gt", eo.gt, "Ground-truth label volume")->required();
    eval->add_option("--invalid", eo.invalid, "Bitmask of voxels to exclude");
    eval->add_option("--learning-map", eo.learning_map, "Raw-to-train class id map (YAML)");
    eval->add_option("--ranges", eo.ranges, "Forward-range splits in meters (default 12.8,25.6,51.2)");
    eval->add_option("--dims", eo.dims, "Volume dims X,Y,Z (default 256,256,32)");
    eval->add_option("--voxel-size", eo.voxel_size, "Voxel edge length in meters (default 0.2)");
    eval->add_option("--dynamic", eo.dynamic, "Class ids counted as dynamic (default 1..7)");
    eval->add_option("--out", eo.out, "Also write the JSON report here");

    CLI::App* exp = app.add_subcommand("export", "Convert a voxel volume to viewer-ready files");
    exp->add_option("--grid", xo.grid, "Feature volume (.fsgr, C x X x Y x Z)");
    exp->add_option("--labels", xo.labels, "Raw label volume (needs --dims)");
    exp->add_option("--dims", xo.dims, "Label volume dims X,Y,Z");
    exp->add_option("--format", xo.format, "Output format (default ply)")
        ->check(CLI::IsMember({"ply", "pgm-slices"}));
    exp->add_option("--palette", xo.palette, "Class color JSON (default: built-in palette)");
    exp->add_option("--voxel-size", xo.voxel_size, "Voxel edge length in meters (default 0.2)");
    exp->add_option("--origin", xo.origin, "Grid origin corner x,y,z (default 0,0,0)");
    exp->add_option("--out", xo.out, "Output file (ply) or directory (pgm-slices)")->required();

    try {
        std::vector<const char*> argv;
        argv.push_back("flowscene");
        for (const std::string& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << detail::single_line(e.what()) << "\n";
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(so);
        if (occl->parsed()) return cmd_occlusion(oo);
        if (run->parsed()) return cmd_run(ro);
        if (eval->parsed()) return cmd_eval(eo);
        if (exp->parsed()) return cmd_export(xo);
        std::cerr << "error: no command given\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << detail::single_line(e.what()) << "\n";
        return 1;
    }
}

inline int run_command(int argc, char** argv) {
    return run_command(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace flowscene::cli
