#include "data/dataset.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "core/error.hpp"
#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "core/rng.hpp"
#include "core/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vton::data {

void save_scene(const std::string& dir, const SyntheticScene& scene) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create scene directory " + dir + ": " + ec.message());

    npy::save(dir + "/frames.npy", scene.frames);
    npy::save(dir + "/person_masks.npy", scene.person_masks);
    npy::save(dir + "/labels.npy", scene.labels);

    Tensor poses({scene.T, kNumJoints, 2});
    for (int64_t t = 0; t < scene.T; ++t)
        for (int64_t k = 0; k < kNumJoints; ++k) {
            poses[(t * kNumJoints + k) * 2 + 0] = scene.poses[size_t(t)][size_t(k)][0];
            poses[(t * kNumJoints + k) * 2 + 1] = scene.poses[size_t(t)][size_t(k)][1];
        }
    npy::save(dir + "/poses.npy", poses);

    json legend;
    for (int r = 0; r < kNumRegions; ++r) legend[std::to_string(r)] = region_name(Region(r));
    json j = {
        {"format_version", kFormatVersion},
        {"seed", scene.seed},
        {"frames", scene.T},
        {"height", scene.H},
        {"width", scene.W},
        {"garment_color_id", scene.garment_color_id},
        {"label_legend", legend},
        {"joint_names", kJointNames},
    };
    write_json_file(dir + "/scene.json", j);
}

SyntheticScene load_scene(const std::string& dir) {
    json j = read_json_file(dir + "/scene.json");
    check_format_version(j, dir + "/scene.json");

    SyntheticScene s;
    s.seed = j.at("seed").get<uint64_t>();
    s.T = j.at("frames").get<int64_t>();
    s.H = j.at("height").get<int64_t>();
    s.W = j.at("width").get<int64_t>();
    s.garment_color_id = j.at("garment_color_id").get<int>();

    s.frames = npy::load(dir + "/frames.npy");
    s.person_masks = npy::load(dir + "/person_masks.npy");
    s.labels = npy::load(dir + "/labels.npy");
    if (s.frames.shape() != Shape{s.T, s.H, s.W, 3})
        throw IoError("frames.npy shape mismatch in " + dir);
    if (s.person_masks.shape() != Shape{s.T, s.H, s.W, 1})
        throw IoError("person_masks.npy shape mismatch in " + dir);
    if (s.labels.shape() != Shape{s.T, s.H, s.W, 1})
        throw IoError("labels.npy shape mismatch in " + dir);

    Tensor poses = npy::load(dir + "/poses.npy");
    if (poses.shape() != Shape{s.T, kNumJoints, 2})
        throw IoError("poses.npy shape mismatch in " + dir);
    s.poses.resize(size_t(s.T));
    for (int64_t t = 0; t < s.T; ++t)
        for (int64_t k = 0; k < kNumJoints; ++k) {
            s.poses[size_t(t)][size_t(k)][0] = poses[(t * kNumJoints + k) * 2 + 0];
            s.poses[size_t(t)][size_t(k)][1] = poses[(t * kNumJoints + k) * 2 + 1];
        }
    return s;
}

DatasetMeta generate_dataset(const std::string& out_dir, int64_t num_scenes, int64_t T, int64_t H,
                             int64_t W, uint64_t seed, int workers) {
    if (num_scenes < 0) throw InvalidArgument("generate_dataset: negative scene count");
    if (workers < 1) throw InvalidArgument("generate_dataset: workers must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

    DatasetMeta meta;
    meta.num_scenes = num_scenes;
    meta.T = T;
    meta.H = H;
    meta.W = W;
    meta.seed = seed;
    for (int64_t i = 0; i < num_scenes; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04lld", static_cast<long long>(i));
        meta.scene_dirs.emplace_back(name);
    }

    const auto emit_scene = [&](int64_t i) {
        const uint64_t scene_seed = Rng::hash_combine(seed, uint64_t(i));
        save_scene(out_dir + "/" + meta.scene_dirs[size_t(i)], generate_scene(scene_seed, T, H, W));
    };
    const int pool = int(std::min<int64_t>(workers, std::max<int64_t>(num_scenes, 1)));
    if (pool <= 1) {
        for (int64_t i = 0; i < num_scenes; ++i) emit_scene(i);
    } else {
        std::atomic<int64_t> next{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(pool));
        std::vector<std::thread> threads;
        for (int w = 0; w < pool; ++w)
            threads.emplace_back([&, w] {
                try {
                    for (int64_t i = next++; i < num_scenes; i = next++) emit_scene(i);
                } catch (...) {
                    errors[size_t(w)] = std::current_exception();
                }
            });
        for (auto& t : threads) t.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    json j = {
        {"format_version", kFormatVersion}, {"seed", seed},  {"num_scenes", num_scenes},
        {"frames", T},                      {"height", H},   {"width", W},
        {"scenes", meta.scene_dirs},
    };
    write_json_file(out_dir + "/manifest.json", j);
    return meta;
}

DatasetMeta load_dataset_meta(const std::string& dir) {
    json j = read_json_file(dir + "/manifest.json");
    check_format_version(j, dir + "/manifest.json");
    DatasetMeta meta;
    meta.num_scenes = j.at("num_scenes").get<int64_t>();
    meta.T = j.at("frames").get<int64_t>();
    meta.H = j.at("height").get<int64_t>();
    meta.W = j.at("width").get<int64_t>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.scene_dirs = j.at("scenes").get<std::vector<std::string>>();
    if (int64_t(meta.scene_dirs.size()) != meta.num_scenes)
        throw IoError("manifest scene list length mismatch in " + dir);
    return meta;
}

std::vector<SyntheticScene> load_dataset(const std::string& dir) {
    DatasetMeta meta = load_dataset_meta(dir);
    std::vector<SyntheticScene> scenes;
    scenes.reserve(meta.scene_dirs.size());
    for (const auto& d : meta.scene_dirs) scenes.push_back(load_scene(dir + "/" + d));
    return scenes;
}

}  // namespace vton::data
