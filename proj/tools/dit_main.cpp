// dit: dataset generation, codec pretraining, training, sampling and
// evaluation for the latent diffusion transformer.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dit/data.hpp"
#include "dit/errors.hpp"
#include "dit/sampler.hpp"
#include "dit/train.hpp"

namespace fs = std::filesystem;

namespace {

// defaults < config file < preset < flags; unknown keys are hard errors.
struct KvConfig {
    std::vector<std::pair<std::string, std::string>> items;

    void set(const std::string& key, const std::string& val) {
        for (auto& [k, v] : items) {
            if (k == key) {
                v = val;
                return;
            }
        }
        items.emplace_back(key, val);
    }

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : items) {
            if (k == key) return v;
        }
        throw dit::ParameterError("config: missing key '" + key + "'");
    }

    void merge_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw dit::FileError("config: cannot open " + path);
        std::set<std::string> known;
        for (const auto& [k, v] : items) known.insert(k);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw dit::ParameterError(path + ":" + std::to_string(line_no) +
                                          ": expected 'key = value'");
            }
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            if (!known.count(key)) {
                throw dit::ParameterError(path + ":" + std::to_string(line_no) +
                                          ": unknown key '" + key + "'");
            }
            set(key, trim(line.substr(eq + 1)));
        }
    }

    void write_resolved(const std::string& dir) const {
        std::error_code ec;
        fs::create_directories(dir, ec);
        const std::string path = (fs::path(dir) / "resolved-config").string();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw dit::FileError("cannot write " + path);
        for (const auto& [k, v] : items) f << k << " = " << v << "\n";
    }
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct CommonArgs {
    std::string config_path;
};

// Applies a CLI11 option's value when the user passed it.
template <typename T>
void apply_flag(const CLI::Option* opt, KvConfig& kv, const std::string& key, const T& value) {
    if (opt->count() == 0) return;
    if constexpr (std::is_same_v<T, std::string>) {
        kv.set(key, value);
    } else if constexpr (std::is_floating_point_v<T>) {
        kv.set(key, fmt_double(value));
    } else {
        kv.set(key, std::to_string(value));
    }
}

dit::TrainConfig train_config_from_kv(const KvConfig& kv) {
    std::string text;
    for (const auto& [k, v] : kv.items) {
        if (k == "manifest") continue;
        text += k + " = " + v + "\n";
    }
    return dit::train_config_from_text(text);
}

int cmd_gen_data(const KvConfig& kv) {
    const std::string out = kv.get("out");
    dit::DatasetPair ds = dit::generate_dataset(
        std::stoull(kv.get("seed")), std::stoull(kv.get("train_n")),
        std::stoull(kv.get("test_n")), std::stoull(kv.get("size")), out);
    kv.write_resolved(out);
    std::cout << (fs::path(out) / "train.manifest").string() << "\n";
    std::cout << (fs::path(out) / "test.manifest").string() << "\n";
    return 0;
}

int cmd_pretrain_codec(const KvConfig& kv) {
    dit::DatasetManifest manifest = dit::read_manifest(kv.get("manifest"));
    dit::TrainConfig cfg = train_config_from_kv(kv);
    cfg.codec = dit::CodecKind::TinyAe;
    dit::PretrainResult r = dit::pretrain_tiny_ae(
        manifest, cfg.codec_pretrain_steps, dit::Rng(cfg.seed).split("codec"),
        cfg.spatial_factor, cfg.latent_channels);
    dit::Checkpoint ckpt;
    ckpt.config_text = dit::train_config_to_text(cfg);
    for (auto& p : r.codec.parameters()) ckpt.params.emplace_back(p.first, p.second.clone());
    const std::string out = kv.get("out");
    dit::save_checkpoint(out, ckpt);
    kv.write_resolved(fs::path(out).parent_path().string());
    std::cout << "codec checkpoint: " << out << "\n";
    std::cout << "final reconstruction mse: " << fmt_double(r.final_mse) << "\n";
    return 0;
}

int cmd_train(const KvConfig& kv, const std::string& resume_path,
              const std::string& codec_ckpt_path, bool dry_run) {
    const std::string out = kv.get("out");
    dit::TrainConfig cfg = train_config_from_kv(kv);
    cfg.validate();
    kv.write_resolved(out);
    if (dry_run) return 0;

    dit::DatasetManifest manifest = dit::read_manifest(kv.get("manifest"));
    dit::Checkpoint resume;
    const dit::Checkpoint* resume_p = nullptr;
    if (!resume_path.empty()) {
        resume = dit::load_checkpoint(resume_path);
        resume_p = &resume;
    }
    dit::LatentCodec codec(cfg.spatial_factor);
    const dit::LatentCodec* codec_p = nullptr;
    if (!codec_ckpt_path.empty()) {
        dit::LoadedRun run = dit::load_run(dit::load_checkpoint(codec_ckpt_path));
        codec = run.codec;
        codec_p = &codec;
    }
    dit::TrainOutput result = dit::train(cfg, manifest, out, resume_p, codec_p);
    std::cout << "checkpoint: " << result.checkpoint_path << "\n";
    std::cout << "metrics: " << result.metrics_path << "\n";
    if (!result.log.empty()) {
        std::cout << "final loss: " << fmt_double(result.log.back().total) << "\n";
    }
    return 0;
}

int cmd_sample(const KvConfig& kv) {
    dit::LoadedRun run = dit::load_run(dit::load_checkpoint(kv.get("checkpoint")));
    dit::SamplerContext ctx = dit::make_sampler_context(run.model, run.codec, run.enc, run.sched);
    dit::Tensor source = dit::read_image(kv.get("source"));
    const dit::SampleMode mode = dit::sample_mode_from_string(kv.get("mode"));
    const std::size_t t_start = std::stoull(kv.get("t_start"));
    dit::Rng rng(std::stoull(kv.get("seed")));
    dit::Tensor out_img = mode == dit::SampleMode::Full
                              ? dit::sample_full(ctx, source, rng)
                              : dit::sample_partial(ctx, source, t_start, rng);

    // [source | output] tile with a 2px white separator
    const std::size_t S = source.extent(1), sep = 2;
    dit::Tensor tile = dit::Tensor::full({3, S, 2 * S + sep}, 1.0);
    double* g = tile.data();
    const double* a = source.data();
    const double* b = out_img.data();
    const std::size_t W = 2 * S + sep;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                g[(c * S + y) * W + x] = a[(c * S + y) * S + x];
                g[(c * S + y) * W + S + sep + x] = b[(c * S + y) * S + x];
            }
        }
    }
    const std::string out = kv.get("out");
    dit::write_image(out, tile);
    const std::string dir = fs::path(out).parent_path().string();
    kv.write_resolved(dir.empty() ? "." : dir);
    std::cout << "grid: " << out << "\n";
    return 0;
}

int cmd_eval(const KvConfig& kv) {
    dit::LoadedRun run = dit::load_run(dit::load_checkpoint(kv.get("checkpoint")));
    dit::SamplerContext ctx = dit::make_sampler_context(run.model, run.codec, run.enc, run.sched);
    dit::DatasetManifest manifest = dit::read_manifest(kv.get("manifest"));
    const std::string out = kv.get("out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw dit::FileError("eval: cannot create " + out + ": " + ec.message());
    dit::EvalReport report = dit::evaluate(
        ctx, manifest, dit::sample_mode_from_string(kv.get("mode")),
        std::stoull(kv.get("t_start")), std::stoull(kv.get("seed")),
        (fs::path(out) / "eval.csv").string(), (fs::path(out) / "grid.ppm").string());
    kv.write_resolved(out);
    std::printf("evaluated %zu samples: psnr %.2f dB, l1 %.4f, cos_src %.4f, cos_tgt %.4f\n",
                report.rows.size(), report.mean.psnr_db, report.mean.l1, report.mean.cos_src,
                report.mean.cos_tgt);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"image-conditioned latent diffusion transformer"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a paired shape dataset");
    std::uint64_t g_seed = 7;
    std::size_t g_train = 8, g_test = 2, g_size = 32;
    std::string g_out;
    auto* g_seed_o = gen->add_option("--seed", g_seed, "generator seed");
    auto* g_train_o = gen->add_option("--train-n", g_train, "number of training pairs");
    auto* g_test_o = gen->add_option("--test-n", g_test, "number of test pairs");
    auto* g_size_o = gen->add_option("--size", g_size, "image side length");
    gen->add_option("--out", g_out, "output directory")->required();

    // pretrain-codec
    auto* pre = app.add_subcommand("pretrain-codec", "pretrain the tiny autoencoder codec");
    std::string p_manifest, p_out, p_config;
    std::uint64_t p_seed = 1;
    std::size_t p_steps = 1500;
    pre->add_option("--manifest", p_manifest, "training manifest")->required();
    pre->add_option("--out", p_out, "codec checkpoint path")->required();
    auto* p_steps_o = pre->add_option("--steps", p_steps, "pretraining steps");
    auto* p_seed_o = pre->add_option("--seed", p_seed, "run seed");
    pre->add_option("--config", p_config, "config file");

    // train
    auto* tr = app.add_subcommand("train", "train the denoiser");
    std::string t_manifest, t_out, t_config, t_resume, t_codec_ckpt, t_preset, t_codec;
    std::size_t t_iters = 0, t_batch = 0, t_hidden = 0, t_depth = 0, t_heads = 0, t_T = 0;
    std::size_t t_ckpt_every = 0, t_log_every = 0;
    double t_lr = 0, t_wd = 0;
    std::uint64_t t_seed = 0;
    bool t_dry = false;
    tr->add_option("--manifest", t_manifest, "training manifest")->required();
    tr->add_option("--out", t_out, "output directory")->required();
    tr->add_option("--config", t_config, "config file");
    tr->add_option("--resume", t_resume, "checkpoint to resume from");
    tr->add_option("--codec-ckpt", t_codec_ckpt, "pretrained codec checkpoint");
    tr->add_option("--preset", t_preset, "hyperparameter preset: desk or paper");
    auto* t_iters_o = tr->add_option("--iters", t_iters, "training iterations");
    auto* t_batch_o = tr->add_option("--batch", t_batch, "batch size");
    auto* t_lr_o = tr->add_option("--lr", t_lr, "learning rate");
    auto* t_wd_o = tr->add_option("--weight-decay", t_wd, "weight decay");
    auto* t_hidden_o = tr->add_option("--hidden", t_hidden, "model width");
    auto* t_depth_o = tr->add_option("--depth", t_depth, "model depth");
    auto* t_heads_o = tr->add_option("--heads", t_heads, "attention heads");
    auto* t_T_o = tr->add_option("--schedule-steps", t_T, "diffusion steps T");
    auto* t_codec_o = tr->add_option("--codec", t_codec, "codec: identity or tiny-ae");
    auto* t_seed_o = tr->add_option("--seed", t_seed, "run seed");
    auto* t_ckpt_o = tr->add_option("--checkpoint-every", t_ckpt_every, "checkpoint interval");
    auto* t_log_o = tr->add_option("--log-every", t_log_every, "metrics logging interval");
    tr->add_flag("--dry-run", t_dry, "write resolved-config and exit");

    // sample
    auto* sa = app.add_subcommand("sample", "sample one translation");
    std::string s_ckpt, s_source, s_out, s_mode = "full", s_config;
    std::size_t s_tstart = 0;
    std::uint64_t s_seed = 1;
    bool s_tstart_given = false;
    sa->add_option("--checkpoint", s_ckpt, "trained checkpoint")->required();
    sa->add_option("--source", s_source, "source image (PPM)")->required();
    sa->add_option("--out", s_out, "output grid path")->required();
    auto* s_mode_o = sa->add_option("--mode", s_mode, "full or partial");
    auto* s_tstart_o = sa->add_option("--t-start", s_tstart, "partial-mode start timestep");
    auto* s_seed_o = sa->add_option("--seed", s_seed, "sampling seed");
    sa->add_option("--config", s_config, "config file");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate on a test manifest");
    std::string e_ckpt, e_manifest, e_out, e_mode = "full", e_config;
    std::size_t e_tstart = 0;
    std::uint64_t e_seed = 1;
    ev->add_option("--checkpoint", e_ckpt, "trained checkpoint")->required();
    ev->add_option("--manifest", e_manifest, "test manifest")->required();
    ev->add_option("--out", e_out, "output directory")->required();
    auto* e_mode_o = ev->add_option("--mode", e_mode, "full or partial");
    auto* e_tstart_o = ev->add_option("--t-start", e_tstart, "partial-mode start timestep");
    auto* e_seed_o = ev->add_option("--seed", e_seed, "evaluation seed");
    ev->add_option("--config", e_config, "config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            KvConfig kv;
            kv.set("seed", std::to_string(g_seed));
            kv.set("train_n", std::to_string(g_train));
            kv.set("test_n", std::to_string(g_test));
            kv.set("size", std::to_string(g_size));
            kv.set("out", g_out);
            apply_flag(g_seed_o, kv, "seed", g_seed);
            apply_flag(g_train_o, kv, "train_n", g_train);
            apply_flag(g_test_o, kv, "test_n", g_test);
            apply_flag(g_size_o, kv, "size", g_size);
            return cmd_gen_data(kv);
        }
        if (pre->parsed()) {
            dit::TrainConfig d;
            d.codec = dit::CodecKind::TinyAe;
            KvConfig kv;
            {
                std::istringstream is(dit::train_config_to_text(d));
                std::string line;
                while (std::getline(is, line)) {
                    const auto eq = line.find(" = ");
                    kv.set(line.substr(0, eq), line.substr(eq + 3));
                }
            }
            kv.set("manifest", p_manifest);
            kv.set("out", p_out);
            if (!p_config.empty()) kv.merge_file(p_config);
            apply_flag(p_steps_o, kv, "codec_pretrain_steps", p_steps);
            apply_flag(p_seed_o, kv, "seed", p_seed);
            kv.set("codec", "tiny-ae");
            return cmd_pretrain_codec(kv);
        }
        if (tr->parsed()) {
            dit::TrainConfig d;
            KvConfig kv;
            {
                std::istringstream is(dit::train_config_to_text(d));
                std::string line;
                while (std::getline(is, line)) {
                    const auto eq = line.find(" = ");
                    kv.set(line.substr(0, eq), line.substr(eq + 3));
                }
            }
            kv.set("manifest", t_manifest);
            kv.set("out", t_out);
            if (!t_config.empty()) kv.merge_file(t_config);
            if (!t_preset.empty()) {
                if (t_preset == "paper") {
                    // published hyperparameters: lr 1e-4, wd 1e-4, batch 64, 40k iterations
                    kv.set("lr", fmt_double(1e-4));
                    kv.set("weight_decay", fmt_double(1e-4));
                    kv.set("batch_size", "64");
                    kv.set("iterations", "40000");
                } else if (t_preset != "desk") {
                    throw dit::ParameterError("train: unknown preset '" + t_preset + "'");
                }
            }
            apply_flag(t_iters_o, kv, "iterations", t_iters);
            apply_flag(t_batch_o, kv, "batch_size", t_batch);
            apply_flag(t_lr_o, kv, "lr", t_lr);
            apply_flag(t_wd_o, kv, "weight_decay", t_wd);
            apply_flag(t_hidden_o, kv, "hidden_size", t_hidden);
            apply_flag(t_depth_o, kv, "depth", t_depth);
            apply_flag(t_heads_o, kv, "num_heads", t_heads);
            apply_flag(t_T_o, kv, "schedule_steps", t_T);
            apply_flag(t_codec_o, kv, "codec", t_codec);
            apply_flag(t_seed_o, kv, "seed", t_seed);
            apply_flag(t_ckpt_o, kv, "checkpoint_every", t_ckpt_every);
            apply_flag(t_log_o, kv, "log_every", t_log_every);
            kv.set("out", t_out);
            return cmd_train(kv, t_resume, t_codec_ckpt, t_dry);
        }
        if (sa->parsed()) {
            KvConfig kv;
            kv.set("checkpoint", s_ckpt);
            kv.set("source", s_source);
            kv.set("out", s_out);
            kv.set("mode", s_mode);
            kv.set("t_start", "0");
            kv.set("seed", std::to_string(s_seed));
            if (!s_config.empty()) kv.merge_file(s_config);
            apply_flag(s_mode_o, kv, "mode", s_mode);
            apply_flag(s_seed_o, kv, "seed", s_seed);
            if (s_tstart_o->count() > 0) {
                kv.set("t_start", std::to_string(s_tstart));
                s_tstart_given = true;
            }
            if (kv.get("mode") == "partial" && kv.get("t_start") == "0" && !s_tstart_given) {
                // default to 3T/4, resolved after the checkpoint loads
                dit::TrainConfig c = dit::train_config_from_text(
                    dit::load_checkpoint(kv.get("checkpoint")).config_text);
                kv.set("t_start", std::to_string(c.schedule_steps * 3 / 4));
            }
            return cmd_sample(kv);
        }
        if (ev->parsed()) {
            KvConfig kv;
            kv.set("checkpoint", e_ckpt);
            kv.set("manifest", e_manifest);
            kv.set("out", e_out);
            kv.set("mode", e_mode);
            kv.set("t_start", "0");
            kv.set("seed", std::to_string(e_seed));
            if (!e_config.empty()) kv.merge_file(e_config);
            apply_flag(e_mode_o, kv, "mode", e_mode);
            apply_flag(e_seed_o, kv, "seed", e_seed);
            if (e_tstart_o->count() > 0) {
                kv.set("t_start", std::to_string(e_tstart));
            } else if (kv.get("mode") == "partial" && kv.get("t_start") == "0") {
                dit::TrainConfig c = dit::train_config_from_text(
                    dit::load_checkpoint(kv.get("checkpoint")).config_text);
                kv.set("t_start", std::to_string(c.schedule_steps * 3 / 4));
            }
            return cmd_eval(kv);
        }
    } catch (const dit::ParameterError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
