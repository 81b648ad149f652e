#pragma once

#include <string>
#include <vector>

#include "data/synthetic.hpp"

namespace vton::data {

// On-disk layout: <root>/manifest.json + one directory per scene holding
// frames.npy, person_masks.npy, labels.npy, poses.npy and scene.json.
void save_scene(const std::string& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::string& dir);

struct DatasetMeta {
    int64_t num_scenes = 0;
    int64_t T = 0, H = 0, W = 0;
    uint64_t seed = 0;
    std::vector<std::string> scene_dirs;  // relative to the dataset root
};

// Generates num_scenes scenes (scene i seeded from hash(seed, i)) and writes
// them plus the manifest. Scene generation is independent per index, so
// extra workers change the wall time but never the bytes written.
DatasetMeta generate_dataset(const std::string& out_dir, int64_t num_scenes, int64_t T, int64_t H,
                             int64_t W, uint64_t seed, int workers = 1);
DatasetMeta load_dataset_meta(const std::string& dir);
std::vector<SyntheticScene> load_dataset(const std::string& dir);

}  // namespace vton::data
