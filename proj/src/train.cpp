#include "dit/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dit/errors.hpp"

namespace dit {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (iterations < 1) throw ParameterError("TrainConfig: iterations must be >= 1");
    if (batch_size < 1) throw ParameterError("TrainConfig: batch_size must be >= 1");
    if (lr <= 0) throw ParameterError("TrainConfig: lr must be positive");
    if (weight_decay < 0) throw ParameterError("TrainConfig: weight_decay must be >= 0");
    if (log_every < 1) throw ParameterError("TrainConfig: log_every must be >= 1");
    loss_weights.validate();
    derive_model_config(*this).validate();
}

DiTConfig derive_model_config(const TrainConfig& cfg) {
    if (cfg.spatial_factor == 0 || cfg.image_size % cfg.spatial_factor != 0) {
        throw ParameterError("TrainConfig: image_size " + std::to_string(cfg.image_size) +
                             " not divisible by spatial_factor " +
                             std::to_string(cfg.spatial_factor));
    }
    DiTConfig m;
    m.input_size = cfg.image_size / cfg.spatial_factor;
    m.in_channels = cfg.codec == CodecKind::IdentitySpace2Depth
                        ? 3 * cfg.spatial_factor * cfg.spatial_factor
                        : cfg.latent_channels;
    m.patch_size = cfg.patch_size;
    m.hidden_size = cfg.hidden_size;
    m.depth = cfg.depth;
    m.num_heads = cfg.num_heads;
    m.cond_dim = cfg.cond_dim;
    m.time_embed_dim = cfg.time_embed_dim;
    m.mlp_ratio = cfg.mlp_ratio;
    return m;
}

void check_latent_compat(const DiTConfig& model_cfg, const LatentCodec& codec,
                         std::size_t image_size) {
    const std::size_t side = image_size / codec.spatial_factor();
    if (model_cfg.input_size != side || model_cfg.in_channels != codec.latent_channels()) {
        throw ParameterError(
            "latent shape law: model expects [" + std::to_string(model_cfg.in_channels) + "," +
            std::to_string(model_cfg.input_size) + "," + std::to_string(model_cfg.input_size) +
            "] but codec yields [" + std::to_string(codec.latent_channels()) + "," +
            std::to_string(side) + "," + std::to_string(side) + "]");
    }
}

// ---- config text ----

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string train_config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "iterations = " << c.iterations << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "lr = " << fmt_double(c.lr) << "\n";
    os << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
    os << "lambda_eps = " << fmt_double(c.loss_weights.lambda_eps) << "\n";
    os << "lambda_rec = " << fmt_double(c.loss_weights.lambda_rec) << "\n";
    os << "lambda_lpips = " << fmt_double(c.loss_weights.lambda_lpips) << "\n";
    os << "lambda_clip = " << fmt_double(c.loss_weights.lambda_clip) << "\n";
    os << "schedule_steps = " << c.schedule_steps << "\n";
    os << "beta_start = " << fmt_double(c.beta_start) << "\n";
    os << "beta_end = " << fmt_double(c.beta_end) << "\n";
    os << "image_size = " << c.image_size << "\n";
    os << "codec = " << codec_kind_to_string(c.codec) << "\n";
    os << "spatial_factor = " << c.spatial_factor << "\n";
    os << "latent_channels = " << c.latent_channels << "\n";
    os << "codec_pretrain_steps = " << c.codec_pretrain_steps << "\n";
    os << "hidden_size = " << c.hidden_size << "\n";
    os << "depth = " << c.depth << "\n";
    os << "num_heads = " << c.num_heads << "\n";
    os << "patch_size = " << c.patch_size << "\n";
    os << "cond_dim = " << c.cond_dim << "\n";
    os << "time_embed_dim = " << c.time_embed_dim << "\n";
    os << "mlp_ratio = " << c.mlp_ratio << "\n";
    os << "seed = " << c.seed << "\n";
    os << "checkpoint_every = " << c.checkpoint_every << "\n";
    os << "log_every = " << c.log_every << "\n";
    return os.str();
}

TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) +
                             ": expected 'key = value', got '" + line + "'");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto as_u = [&] { return std::stoull(val); };
        auto as_d = [&] { return std::stod(val); };
        if (key == "iterations") c.iterations = as_u();
        else if (key == "batch_size") c.batch_size = as_u();
        else if (key == "lr") c.lr = as_d();
        else if (key == "weight_decay") c.weight_decay = as_d();
        else if (key == "lambda_eps") c.loss_weights.lambda_eps = as_d();
        else if (key == "lambda_rec") c.loss_weights.lambda_rec = as_d();
        else if (key == "lambda_lpips") c.loss_weights.lambda_lpips = as_d();
        else if (key == "lambda_clip") c.loss_weights.lambda_clip = as_d();
        else if (key == "schedule_steps") c.schedule_steps = as_u();
        else if (key == "beta_start") c.beta_start = as_d();
        else if (key == "beta_end") c.beta_end = as_d();
        else if (key == "image_size") c.image_size = as_u();
        else if (key == "codec") c.codec = codec_kind_from_string(val);
        else if (key == "spatial_factor") c.spatial_factor = as_u();
        else if (key == "latent_channels") c.latent_channels = as_u();
        else if (key == "codec_pretrain_steps") c.codec_pretrain_steps = as_u();
        else if (key == "hidden_size") c.hidden_size = as_u();
        else if (key == "depth") c.depth = as_u();
        else if (key == "num_heads") c.num_heads = as_u();
        else if (key == "patch_size") c.patch_size = as_u();
        else if (key == "cond_dim") c.cond_dim = as_u();
        else if (key == "time_embed_dim") c.time_embed_dim = as_u();
        else if (key == "mlp_ratio") c.mlp_ratio = as_u();
        else if (key == "seed") c.seed = as_u();
        else if (key == "checkpoint_every") c.checkpoint_every = as_u();
        else if (key == "log_every") c.log_every = as_u();
        else throw ParameterError("config: unknown key '" + key + "'");
    }
    return c;
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[8] = {'D', 'I', 'T', 'C', 'K', 'P', 'T', '1'};

struct Writer {
    std::ofstream f;
    explicit Writer(const std::string& path) : f(path, std::ios::binary) {
        if (!f) throw FileError("save_checkpoint: cannot open " + path);
    }
    void bytes(const void* p, std::size_t n) {
        f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f64v(const std::vector<double>& v) { bytes(v.data(), v.size() * 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    std::string buf;
    std::size_t pos = 0;
    std::string path;
    explicit Reader(const std::string& p) : path(p) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw FileError("load_checkpoint: cannot open " + p);
        std::stringstream ss;
        ss << f.rdbuf();
        buf = ss.str();
    }
    void bytes(void* out, std::size_t n) {
        if (pos + n > buf.size()) {
            throw ParseError("load_checkpoint: truncated at byte offset " + std::to_string(pos) +
                             " (wanted " + std::to_string(n) + " bytes): " + path);
        }
        std::memcpy(out, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::vector<double> f64v(std::size_t n) {
        std::vector<double> v(n);
        bytes(v.data(), n * 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w(path);
    w.bytes(kMagic, 8);
    w.u32(ckpt.format_version);
    w.str(ckpt.config_text);
    w.u64(ckpt.step);
    w.u64(ckpt.rng_key);
    w.u64(ckpt.rng_counter);
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t e : t.shape()) w.u64(e);
        w.bytes(t.data(), t.numel() * 8);
    }
    w.u32(ckpt.has_optimizer ? 1 : 0);
    if (ckpt.has_optimizer) {
        w.u64(ckpt.opt_step);
        const double hp[5] = {ckpt.opt_cfg.lr, ckpt.opt_cfg.beta1, ckpt.opt_cfg.beta2,
                              ckpt.opt_cfg.eps, ckpt.opt_cfg.weight_decay};
        w.bytes(hp, sizeof(hp));
        w.u32(static_cast<std::uint32_t>(ckpt.opt_m.size()));
        for (std::size_t i = 0; i < ckpt.opt_m.size(); ++i) {
            w.str(ckpt.opt_m[i].first);
            w.u64(ckpt.opt_m[i].second.size());
            w.f64v(ckpt.opt_m[i].second);
            w.f64v(ckpt.opt_v[i].second);
        }
    }
    if (!w.f) throw FileError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw VersionError("load_checkpoint: bad magic in " + path);
    }
    Checkpoint c;
    c.format_version = r.u32();
    if (c.format_version != 1) {
        throw VersionError("load_checkpoint: unsupported format version " +
                           std::to_string(c.format_version) + " in " + path);
    }
    c.config_text = r.str();
    c.step = r.u64();
    c.rng_key = r.u64();
    c.rng_counter = r.u64();
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape[d] = r.u64();
            numel *= shape[d];
        }
        c.params.emplace_back(name, Tensor::from_data(shape, r.f64v(numel)));
    }
    c.has_optimizer = r.u32() != 0;
    if (c.has_optimizer) {
        c.opt_step = r.u64();
        double hp[5];
        r.bytes(hp, sizeof(hp));
        c.opt_cfg = {hp[0], hp[1], hp[2], hp[3], hp[4]};
        const std::uint32_t n_opt = r.u32();
        for (std::uint32_t i = 0; i < n_opt; ++i) {
            const std::string name = r.str();
            const std::uint64_t n = r.u64();
            c.opt_m.emplace_back(name, r.f64v(n));
            c.opt_v.emplace_back(name, r.f64v(n));
        }
    }
    return c;
}

void restore_params(const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, Tensor>>& live) {
    std::map<std::string, Tensor> by_name;
    for (const auto& [name, t] : live) by_name.emplace(name, t);
    std::size_t matched = 0;
    for (const auto& [name, t] : ckpt.params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw VersionError("restore_params: unknown parameter '" + name + "' in checkpoint");
        }
        Tensor dst = it->second;
        if (dst.shape() != t.shape()) {
            throw ShapeError("restore_params: parameter '" + name + "' has shape " +
                             shape_str(t.shape()) + " in checkpoint but " +
                             shape_str(dst.shape()) + " in model");
        }
        std::memcpy(dst.data(), t.data(), t.numel() * 8);
        ++matched;
    }
    if (matched != live.size()) {
        throw VersionError("restore_params: checkpoint provides " + std::to_string(matched) +
                           " of " + std::to_string(live.size()) + " parameters");
    }
}

// ---- training loop ----

namespace {

std::string csv_row(std::uint64_t step, const LossBreakdown& p, double wall) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n",
                  static_cast<unsigned long long>(step), p.total, p.eps_mse, p.rec, p.lpips,
                  p.clip, wall);
    return buf;
}

// Config equality for resume; extending `iterations` is the one allowed edit.
void check_resume_config(const std::string& ckpt_text, const std::string& run_text) {
    std::istringstream a(ckpt_text), b(run_text);
    std::string la, lb;
    while (true) {
        const bool ga = static_cast<bool>(std::getline(a, la));
        const bool gb = static_cast<bool>(std::getline(b, lb));
        if (!ga && !gb) return;
        if (ga != gb || (la != lb && la.rfind("iterations =", 0) != 0)) {
            throw VersionError("resume: config mismatch, checkpoint has '" + la +
                               "' but run has '" + lb + "'");
        }
    }
}

}  // namespace

LoadedRun load_run(const Checkpoint& ckpt) {
    TrainConfig cfg = train_config_from_text(ckpt.config_text);
    cfg.validate();
    NoiseSchedule sched = make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    LatentCodec codec =
        cfg.codec == CodecKind::IdentitySpace2Depth
            ? LatentCodec(cfg.spatial_factor)
            : LatentCodec(cfg.spatial_factor, cfg.latent_channels, Rng(cfg.seed).split("codec"));
    DiTModel model(derive_model_config(cfg), Rng(cfg.seed).split("init"));
    auto live = model.parameters();
    for (auto& cp : codec.parameters()) live.push_back(cp);
    restore_params(ckpt, live);
    codec.freeze();
    return LoadedRun{cfg,
                     std::move(sched),
                     SemanticEncoder(cfg.cond_dim),
                     PerceptualExtractor(),
                     std::move(codec),
                     std::move(model)};
}

TrainOutput train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const std::string& out_dir, const Checkpoint* resume,
                  const LatentCodec* pretrained_codec) {
    cfg.validate();
    if (manifest.entries.empty()) throw ParameterError("train: empty manifest");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw FileError("train: cannot create " + out_dir + ": " + ec.message());

    const std::string config_text = train_config_to_text(cfg);
    if (resume) check_resume_config(resume->config_text, config_text);

    NoiseSchedule sched = make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    SemanticEncoder enc(cfg.cond_dim);
    PerceptualExtractor pe;

    LatentCodec codec = [&]() -> LatentCodec {
        if (cfg.codec == CodecKind::IdentitySpace2Depth) return LatentCodec(cfg.spatial_factor);
        if (pretrained_codec) {
            if (pretrained_codec->kind() != CodecKind::TinyAe) {
                throw ParameterError("train: supplied codec is not tiny-ae");
            }
            return *pretrained_codec;
        }
        if (resume) {
            // weights arrive from the checkpoint below
            return LatentCodec(cfg.spatial_factor, cfg.latent_channels,
                               Rng(cfg.seed).split("codec"));
        }
        return pretrain_tiny_ae(manifest, cfg.codec_pretrain_steps, Rng(cfg.seed).split("codec"),
                                cfg.spatial_factor, cfg.latent_channels)
            .codec;
    }();
    codec.freeze();

    DiTConfig mcfg = derive_model_config(cfg);
    check_latent_compat(mcfg, codec, cfg.image_size);
    DiTModel model(mcfg, Rng(cfg.seed).split("init"));

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(model.parameters(), ocfg);

    Rng run_rng = Rng(cfg.seed).split("train");
    std::uint64_t step = 0;

    auto all_params = [&] {
        auto ps = model.parameters();
        for (auto& cp : codec.parameters()) ps.push_back(cp);
        return ps;
    };

    if (resume) {
        restore_params(*resume, all_params());
        if (!resume->has_optimizer) {
            throw VersionError("resume: checkpoint has no optimizer state");
        }
        std::map<std::string, std::size_t> slot;
        for (std::size_t i = 0; i < opt.params().size(); ++i) {
            slot[opt.params()[i].first] = i;
        }
        for (std::size_t i = 0; i < resume->opt_m.size(); ++i) {
            auto it = slot.find(resume->opt_m[i].first);
            if (it == slot.end()) {
                throw VersionError("resume: optimizer state for unknown parameter '" +
                                   resume->opt_m[i].first + "'");
            }
            opt.moment1(it->second) = resume->opt_m[i].second;
            opt.moment2(it->second) = resume->opt_v[i].second;
        }
        opt.set_step_count(resume->opt_step);
        run_rng = Rng::from_state(resume->rng_key, resume->rng_counter);
        step = resume->step;
    }

    auto snapshot = [&]() {
        Checkpoint c;
        c.config_text = config_text;
        c.step = step;
        c.rng_key = run_rng.key();
        c.rng_counter = run_rng.counter();
        for (const auto& [name, t] : all_params()) {
            c.params.emplace_back(name, t.clone());
        }
        c.has_optimizer = true;
        c.opt_step = opt.step_count();
        c.opt_cfg = ocfg;
        for (std::size_t i = 0; i < opt.params().size(); ++i) {
            c.opt_m.emplace_back(opt.params()[i].first, opt.moment1(i));
            c.opt_v.emplace_back(opt.params()[i].first, opt.moment2(i));
        }
        return c;
    };

    // lazy image cache over the manifest
    std::vector<PairedSample> cache(manifest.entries.size());
    auto sample_at = [&](std::size_t i) -> const PairedSample& {
        if (!cache[i].source.defined()) cache[i] = load_sample(manifest, i);
        return cache[i];
    };

    DenoiserFn denoiser = [&](const Tensor& z_t, const std::vector<std::size_t>& t,
                              const Tensor& cond) { return model.forward(z_t, t, cond); };

    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream csv(metrics_path, std::ios::binary);
    if (!csv) throw FileError("train: cannot open " + metrics_path);
    csv << "step,loss_total,loss_eps,loss_rec,loss_lpips,loss_clip,wall_seconds\n";

    TrainOutput out;
    const auto t0 = std::chrono::steady_clock::now();
    while (step < cfg.iterations) {
        Tape tape;
        std::vector<PairedSample> batch;
        batch.reserve(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            batch.push_back(sample_at(run_rng.uniform_int(manifest.entries.size())));
        }
        TotalLossResult r =
            total_loss(batch, denoiser, codec, enc, pe, sched, cfg.loss_weights, run_rng);
        const LossWeights& lw = cfg.loss_weights;
        const double recomposed = lw.lambda_eps * r.parts.eps_mse + lw.lambda_rec * r.parts.rec +
                                  lw.lambda_lpips * r.parts.lpips + lw.lambda_clip * r.parts.clip;
        if (std::fabs(recomposed - r.parts.total) > 1e-10) {
            throw ContractError("train: loss breakdown identity violated at step " +
                                std::to_string(step + 1));
        }
        opt.zero_grad();
        tape.backward(r.total);
        opt.step();
        ++step;
        if (step % cfg.log_every == 0 || step == cfg.iterations) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            csv << csv_row(step, r.parts, wall);
            out.log.push_back(r.parts);
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
            step != cfg.iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint-%06llu.ckpt",
                          static_cast<unsigned long long>(step));
            save_checkpoint((fs::path(out_dir) / name).string(), snapshot());
        }
    }
    csv.close();
    if (!csv) throw FileError("train: write failed for " + metrics_path);

    out.checkpoint = snapshot();
    out.checkpoint_path = (fs::path(out_dir) / "checkpoint-final.ckpt").string();
    out.metrics_path = metrics_path;
    save_checkpoint(out.checkpoint_path, out.checkpoint);
    return out;
}

}  // namespace dit
