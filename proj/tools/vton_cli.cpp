// Command-line front end for the try-on video diffusion lab. Talks to the
// library exclusively through the C API so it exercises the same surface an
// external embedder would.
//
// Exit codes: 0 success, 2 argument/configuration rejection, 3 runtime
// failure (I/O, numerics, internal).

#include <vton/vton.h>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

int exit_for(vton_status s) {
    switch (s) {
        case VTON_OK:
            return 0;
        case VTON_ERR_INVALID_ARGUMENT:
        case VTON_ERR_INVALID_STATE:
        case VTON_ERR_CONFIG:
            return 2;
        default:
            return 3;
    }
}

int fail(vton_status s) {
    std::cerr << "error (" << vton_status_name(s) << "): " << vton_last_error() << "\n";
    return exit_for(s);
}

int fail_usage(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    return 2;
}

struct ConfigHandle {
    vton_config* ptr = nullptr;
    ~ConfigHandle() { vton_config_free(ptr); }
};

struct ModelHandle {
    vton_model* ptr = nullptr;
    ~ModelHandle() { vton_model_close(ptr); }
};

struct OwnedString {
    char* ptr = nullptr;
    ~OwnedString() { vton_string_free(ptr); }
};

bool parse_scene_frame(const std::string& s, int64_t& scene, int64_t& frame) {
    const auto colon = s.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) return false;
    try {
        size_t used = 0;
        scene = std::stoll(s.substr(0, colon), &used);
        if (used != colon) return false;
        const std::string tail = s.substr(colon + 1);
        frame = std::stoll(tail, &used);
        if (used != tail.size()) return false;
    } catch (...) {
        return false;
    }
    return true;
}

void print_file(const std::string& path) {
    std::ifstream in(path);
    std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"try-on video diffusion lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(vton_version()));

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
    std::string gen_config, gen_out;
    int64_t gen_scenes = -1, gen_seed = -1;
    int gen_workers = 1;
    gen->add_option("--config", gen_config, "Run config JSON file")->required();
    gen->add_option("--out", gen_out, "Dataset output directory")->required();
    gen->add_option("--num-scenes", gen_scenes, "Override the config's scene count");
    gen->add_option("--seed", gen_seed, "Override the config's seed");
    gen->add_option("--workers", gen_workers, "Parallel scene generation")
        ->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "Run the progressive training plan");
    std::string train_config, train_data, train_out, train_phase, train_resume;
    train->add_option("--config", train_config, "Run config JSON file")->required();
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Checkpoint/log output directory")->required();
    train->add_option("--phase", train_phase, "Run only this named phase of the plan");
    train->add_option("--resume", train_resume, "Checkpoint directory to continue from");

    auto* sample = app.add_subcommand("sample", "Sample a try-on video from a checkpoint");
    std::string smp_ckpt, smp_data, smp_garment, smp_out;
    int64_t smp_person = 0, smp_frames = 0, smp_steps = 0;
    uint64_t smp_seed = 0;
    std::vector<double> smp_weights;
    sample->add_option("--ckpt", smp_ckpt, "Checkpoint directory")->required();
    sample->add_option("--data", smp_data, "Dataset directory")->required();
    sample->add_option("--person", smp_person, "Scene index providing person frames")->required();
    sample->add_option("--garment", smp_garment, "Garment source as SCENE:FRAME")->required();
    sample->add_option("--frames", smp_frames, "Number of frames to synthesize")->required();
    sample->add_option("--cfg-weights", smp_weights,
                       "Four guidance weights: unconditional, +pose, +garment, full")
        ->delimiter(',');
    sample->add_option("--steps", smp_steps, "Denoising steps (default 1000)");
    sample->add_option("--seed", smp_seed, "Sampling seed");
    sample->add_option("--out", smp_out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Score checkpoints on a shared eval set");
    std::vector<std::string> eval_ckpts;
    std::string eval_data, eval_out, eval_config;
    int eval_workers = 1;
    eval->add_option("--ckpt", eval_ckpts, "Checkpoint directory (repeatable)")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--out", eval_out, "Directory for scores.json / scores.txt")->required();
    eval->add_option("--config", eval_config, "Run config JSON (defaults to the desk preset)");
    eval->add_option("--workers", eval_workers, "Parallel feature extraction")
        ->check(CLI::PositiveNumber);

    auto* info = app.add_subcommand("info", "Print checkpoint metadata as JSON");
    std::string info_ckpt;
    info->add_option("--ckpt", info_ckpt, "Checkpoint directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (*gen) {
        ConfigHandle cfg;
        if (auto s = vton_config_load(gen_config.c_str(), &cfg.ptr); s != VTON_OK) return fail(s);
        OwnedString summary;
        if (auto s = vton_generate_data(cfg.ptr, gen_out.c_str(), gen_scenes, gen_seed,
                                        gen_workers, &summary.ptr);
            s != VTON_OK)
            return fail(s);
        std::cout << summary.ptr << "\n";
        return 0;
    }

    if (*train) {
        ConfigHandle cfg;
        if (auto s = vton_config_load(train_config.c_str(), &cfg.ptr); s != VTON_OK)
            return fail(s);
        OwnedString written;
        if (auto s = vton_train(cfg.ptr, train_data.c_str(), train_out.c_str(),
                                train_phase.empty() ? nullptr : train_phase.c_str(),
                                train_resume.empty() ? nullptr : train_resume.c_str(),
                                &written.ptr);
            s != VTON_OK)
            return fail(s);
        std::cout << "checkpoints written:\n" << written.ptr << "\n";
        return 0;
    }

    if (*sample) {
        int64_t garment_scene = 0, garment_frame = 0;
        if (!parse_scene_frame(smp_garment, garment_scene, garment_frame))
            return fail_usage("--garment expects SCENE:FRAME, got '" + smp_garment + "'");
        const double* weights = nullptr;
        double wbuf[4];
        if (!smp_weights.empty()) {
            if (smp_weights.size() != 4)
                return fail_usage("--cfg-weights expects exactly 4 comma-separated values");
            for (int i = 0; i < 4; ++i) wbuf[i] = smp_weights[size_t(i)];
            weights = wbuf;
        }
        ModelHandle m;
        if (auto s = vton_model_open(smp_ckpt.c_str(), &m.ptr); s != VTON_OK) return fail(s);
        if (auto s = vton_sample(m.ptr, smp_data.c_str(), smp_person, garment_scene,
                                 garment_frame, smp_frames, weights, smp_steps, smp_seed,
                                 smp_out.c_str());
            s != VTON_OK)
            return fail(s);
        std::cout << "wrote " << smp_out << "\n";
        return 0;
    }

    if (*eval) {
        ConfigHandle cfg;
        if (!eval_config.empty())
            if (auto s = vton_config_load(eval_config.c_str(), &cfg.ptr); s != VTON_OK)
                return fail(s);
        std::vector<const char*> ckpts;
        for (const auto& c : eval_ckpts) ckpts.push_back(c.c_str());
        const std::string json_path = eval_out + "/scores.json";
        const std::string text_path = eval_out + "/scores.txt";
        if (auto s = vton_evaluate(cfg.ptr, ckpts.data(), ckpts.size(), eval_data.c_str(),
                                   json_path.c_str(), text_path.c_str(), eval_workers);
            s != VTON_OK)
            return fail(s);
        print_file(text_path);
        return 0;
    }

    if (*info) {
        ModelHandle m;
        if (auto s = vton_model_open(info_ckpt.c_str(), &m.ptr); s != VTON_OK) return fail(s);
        OwnedString j;
        if (auto s = vton_model_info(m.ptr, &j.ptr); s != VTON_OK) return fail(s);
        std::cout << j.ptr << "\n";
        return 0;
    }

    return fail_usage("no subcommand given");
}
