#include "dit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dit/errors.hpp"
#include "dit/rng.hpp"

namespace dit {

namespace fs = std::filesystem;

// ---- PPM I/O ----

void write_image(const std::string& path, const Tensor& img) {
    const Shape& s = img.shape();
    if (s.size() != 3 || s[0] != 3) {
        throw ShapeError("write_image: expected [3,S,S], got " + shape_str(s));
    }
    const std::size_t h = s[1], w = s[2];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FileError("write_image: cannot open " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    const double* p = img.data();
    std::vector<unsigned char> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = p[(c * h + y) * w + x];
                const double b = std::round((v + 1.0) * 127.5);
                row[x * 3 + c] = static_cast<unsigned char>(std::min(255.0, std::max(0.0, b)));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw FileError("write_image: write failed for " + path);
}

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string ppm_token(const std::string& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) {
        throw ParseError("read_image: unexpected end of header at byte offset " +
                         std::to_string(start));
    }
    return buf.substr(start, pos - start);
}

std::size_t ppm_number(const std::string& buf, std::size_t& pos) {
    const std::size_t at = pos;
    const std::string tok = ppm_token(buf, pos);
    for (char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw ParseError("read_image: expected number at byte offset " + std::to_string(at) +
                             ", got '" + tok + "'");
        }
    }
    return static_cast<std::size_t>(std::stoull(tok));
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError("read_image: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    std::size_t pos = 0;
    if (ppm_token(buf, pos) != "P6") {
        throw ParseError("read_image: not a P6 file (byte offset 0): " + path);
    }
    const std::size_t w = ppm_number(buf, pos);
    const std::size_t h = ppm_number(buf, pos);
    const std::size_t maxval = ppm_number(buf, pos);
    if (maxval != 255) {
        throw ParseError("read_image: unsupported maxval " + std::to_string(maxval) +
                         " at byte offset " + std::to_string(pos));
    }
    ++pos;  // single whitespace after maxval
    const std::size_t need = w * h * 3;
    if (buf.size() - pos < need) {
        throw ParseError("read_image: truncated pixel data at byte offset " +
                         std::to_string(buf.size()) + ", expected " +
                         std::to_string(pos + need) + " bytes: " + path);
    }
    Tensor img = Tensor::zeros({3, h, w});
    double* p = img.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const auto b = static_cast<unsigned char>(buf[pos + (y * w + x) * 3 + c]);
                p[(c * h + y) * w + x] = static_cast<double>(b) / 127.5 - 1.0;
            }
        }
    }
    return img;
}

// ---- shape geometry ----

namespace {

struct Vec2 {
    double x = 0, y = 0;
};

// kind: 3..6 = convex polygon vertex count, 0 = ellipse.
struct ShapeSpec {
    int kind = 0;
    Vec2 center;
    double a = 0, b = 0;   // semi-axes
    double rot = 0;
    std::vector<Vec2> verts;  // polygon only, CCW
};

constexpr double kLineHalfWidth = 0.3;
constexpr double kLineAA = 0.5;

double polygon_area(const std::vector<Vec2>& v) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Vec2& p = v[i];
        const Vec2& q = v[(i + 1) % v.size()];
        s += p.x * q.y - q.x * p.y;
    }
    return std::fabs(s) * 0.5;
}

// Signed distance; negative inside. Exact for polygons, first-order
// approximation for the rotated ellipse (adequate for 1px antialiasing).
double shape_sdf(const ShapeSpec& sp, double px, double py) {
    if (sp.kind == 0) {
        const double dx = px - sp.center.x, dy = py - sp.center.y;
        const double c = std::cos(sp.rot), s = std::sin(sp.rot);
        const double lx = (dx * c + dy * s) / sp.a;
        const double ly = (-dx * s + dy * c) / sp.b;
        const double f = lx * lx + ly * ly - 1.0;
        const double gx = 2.0 * lx / sp.a, gy = 2.0 * ly / sp.b;
        const double gn = std::sqrt(gx * gx + gy * gy);
        return f / std::max(gn, 1e-9);
    }
    double min_d = 1e30;
    bool outside = false;
    const std::size_t n = sp.verts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = sp.verts[i];
        const Vec2& q = sp.verts[(i + 1) % n];
        const double ex = q.x - p.x, ey = q.y - p.y;
        const double wx = px - p.x, wy = py - p.y;
        const double t = std::min(1.0, std::max(0.0, (wx * ex + wy * ey) / (ex * ex + ey * ey)));
        const double rx = wx - t * ex, ry = wy - t * ey;
        min_d = std::min(min_d, std::sqrt(rx * rx + ry * ry));
        // CCW winding: cross < 0 means the point is right of the edge, outside.
        if (ex * wy - ey * wx < 0) outside = true;
    }
    return outside ? min_d : -min_d;
}

ShapeSpec draw_shape(Rng& rng, std::size_t S) {
    ShapeSpec sp;
    const auto kind_draw = rng.uniform_int(5);  // 0 => ellipse, 1..4 => 3..6 vertices
    sp.kind = kind_draw == 0 ? 0 : static_cast<int>(kind_draw) + 2;
    const bool large = rng.uniform() < 0.5;
    // Bimodal geometric radius keeps the two area buckets unambiguous, and a
    // per-kind eccentricity band keeps kinds apart in raw-pixel distance;
    // both feed the dataset's nearest-neighbor self-test.
    const double r_lo = large ? 0.190 : 0.140;
    const double r_hi = large ? 0.205 : 0.155;
    const double Sd = static_cast<double>(S);
    const double r_geo = (r_lo + (r_hi - r_lo) * rng.uniform()) * Sd;
    // look-alike kinds (pentagon/hexagon/ellipse) get far-apart elongations
    const int aspect_slot[5] = {2, 0, 3, 1, 4};  // ellipse, tri, quad, pent, hex
    const int kind_idx = sp.kind == 0 ? 0 : sp.kind - 2;
    const double aspect = 1.0 + 0.25 * aspect_slot[kind_idx] + 0.06 * rng.uniform();
    sp.a = r_geo / std::sqrt(aspect);
    sp.b = r_geo * std::sqrt(aspect);
    sp.center.x = (0.485 + 0.03 * rng.uniform()) * Sd;
    sp.center.y = (0.485 + 0.03 * rng.uniform()) * Sd;
    // rotation bounded by the shape's symmetry so same-kind outlines stay
    // pixel-space neighbors
    const double sym = sp.kind == 0 ? M_PI : 2.0 * M_PI / sp.kind;
    sp.rot = rng.uniform() * 0.06 * sym;
    if (sp.kind != 0) {
        const int k = sp.kind;
        const double spacing = 2.0 * M_PI / k;
        const double c = std::cos(sp.rot), s = std::sin(sp.rot);
        for (int i = 0; i < k; ++i) {
            // jittered regular angles on an ellipse stay convex
            const double ang = spacing * i + (rng.uniform() - 0.5) * spacing * 0.15;
            const double ex = sp.a * std::cos(ang), ey = sp.b * std::sin(ang);
            sp.verts.push_back({sp.center.x + ex * c - ey * s, sp.center.y + ex * s + ey * c});
        }
    }
    return sp;
}

double shape_area(const ShapeSpec& sp) {
    return sp.kind == 0 ? M_PI * sp.a * sp.b : polygon_area(sp.verts);
}

void hsv_to_rgb(double h, double s, double v, double* rgb) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int i = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

// Fill color is a pure function of the geometry: hue from vertex count plus
// an area bucket (the size modes are bimodal, so the bucket is unambiguous).
void fill_color(const ShapeSpec& sp, std::size_t S, double* rgb01) {
    const int kind_idx = sp.kind == 0 ? 4 : sp.kind - 3;  // 0..4
    const double ck = sp.kind == 0
                          ? M_PI
                          : 0.5 * sp.kind * std::sin(2.0 * M_PI / sp.kind);
    const double split = ck * 0.0324 * static_cast<double>(S) * static_cast<double>(S);
    const int bucket = shape_area(sp) >= split ? 1 : 0;
    const double hue = 0.02 + 0.2 * kind_idx + 0.1 * bucket;
    hsv_to_rgb(hue, 0.85, 0.90, rgb01);
}

}  // namespace

PairedSample generate_pair(std::uint64_t seed, std::uint64_t sample_id, std::size_t S) {
    if (S < 16) throw ParameterError("generate_pair: S must be >= 16, got " + std::to_string(S));
    Rng rng = Rng(seed).split("data").split(sample_id);
    const ShapeSpec sp = draw_shape(rng, S);
    double rgb[3];
    fill_color(sp, S, rgb);

    PairedSample out;
    out.sample_id = sample_id;
    out.source = Tensor::zeros({3, S, S});
    out.target = Tensor::zeros({3, S, S});
    double* src = out.source.data();
    double* tgt = out.target.data();
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const double d = shape_sdf(sp, static_cast<double>(x) + 0.5,
                                       static_cast<double>(y) + 0.5);
            const double line = std::min(
                1.0, std::max(0.0, 0.5 + (kLineHalfWidth - std::fabs(d)) / kLineAA));
            const double fill = std::min(1.0, std::max(0.0, 0.5 - d));
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t off = (c * S + y) * S + x;
                src[off] = 1.0 - 2.0 * line;
                const double col = rgb[c] * 2.0 - 1.0;
                tgt[off] = 1.0 * (1.0 - fill) + col * fill;
            }
        }
    }
    return out;
}

// ---- manifests ----

namespace {

std::string sample_file(const std::string& split, std::uint64_t id, const char* role) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05llu_%s.ppm", split.c_str(),
                  static_cast<unsigned long long>(id), role);
    return buf;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FileError("write_manifest: cannot open " + path);
    f << "version " << m.version << "\n";
    f << "seed " << m.seed << "\n";
    f << "size " << m.image_size << "\n";
    f << "count " << m.count << "\n";
    f << "split " << m.split << "\n";
    for (const ManifestEntry& e : m.entries) {
        f << e.sample_id << "\t" << e.source_path << "\t" << e.target_path << "\n";
    }
    if (!f) throw FileError("write_manifest: write failed for " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError("read_manifest: cannot open " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    std::size_t offset = 0;
    auto expect_header = [&](const char* key) -> std::string {
        if (!std::getline(f, line)) {
            throw ParseError("read_manifest: missing '" + std::string(key) +
                             "' header at byte offset " + std::to_string(offset) + ": " + path);
        }
        const std::size_t line_off = offset;
        offset += line.size() + 1;
        const std::string prefix = std::string(key) + " ";
        if (line.rfind(prefix, 0) != 0) {
            throw ParseError("read_manifest: expected '" + std::string(key) +
                             "' at byte offset " + std::to_string(line_off) + ", got '" + line +
                             "'");
        }
        return line.substr(prefix.size());
    };
    m.version = expect_header("version");
    if (m.version != "1") {
        throw VersionError("read_manifest: unsupported version '" + m.version + "': " + path);
    }
    m.seed = std::stoull(expect_header("seed"));
    m.image_size = std::stoull(expect_header("size"));
    m.count = std::stoull(expect_header("count"));
    m.split = expect_header("split");
    while (std::getline(f, line)) {
        const std::size_t line_off = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw ParseError("read_manifest: malformed entry at byte offset " +
                             std::to_string(line_off) + ": '" + line + "'");
        }
        ManifestEntry e;
        e.sample_id = std::stoull(line.substr(0, t1));
        e.source_path = line.substr(t1 + 1, t2 - t1 - 1);
        e.target_path = line.substr(t2 + 1);
        m.entries.push_back(std::move(e));
    }
    if (m.entries.size() != m.count) {
        throw ParseError("read_manifest: count " + std::to_string(m.count) + " != " +
                         std::to_string(m.entries.size()) + " entries: " + path);
    }
    return m;
}

DatasetPair generate_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                             std::size_t S, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw FileError("generate_dataset: cannot create " + out_dir + ": " + ec.message());

    DatasetPair ds;
    auto emit = [&](DatasetManifest& m, const std::string& split, std::uint64_t id_base,
                    std::size_t n) {
        m.seed = seed;
        m.image_size = S;
        m.count = n;
        m.split = split;
        m.base_dir = out_dir;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t id = id_base + i;
            PairedSample p = generate_pair(seed, id, S);
            ManifestEntry e;
            e.sample_id = id;
            e.source_path = sample_file(split, id, "src");
            e.target_path = sample_file(split, id, "tgt");
            write_image((fs::path(out_dir) / e.source_path).string(), p.source);
            write_image((fs::path(out_dir) / e.target_path).string(), p.target);
            m.entries.push_back(std::move(e));
        }
        write_manifest(m, (fs::path(out_dir) / (split + ".manifest")).string());
    };
    emit(ds.train, "train", 0, n_train);
    emit(ds.test, "test", n_train, n_test);
    return ds;
}

PairedSample load_sample(const DatasetManifest& m, std::size_t entry_index) {
    if (entry_index >= m.entries.size()) {
        throw ParameterError("load_sample: index " + std::to_string(entry_index) + " out of " +
                             std::to_string(m.entries.size()));
    }
    const ManifestEntry& e = m.entries[entry_index];
    PairedSample p;
    p.sample_id = e.sample_id;
    p.source = read_image((fs::path(m.base_dir) / e.source_path).string());
    p.target = read_image((fs::path(m.base_dir) / e.target_path).string());
    return p;
}

}  // namespace dit
