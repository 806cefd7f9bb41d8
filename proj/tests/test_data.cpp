#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dit/data.hpp"
#include "dit/errors.hpp"
#include "test_util.hpp"

using namespace dit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dit_data_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// median color of the clearly filled pixels; AA boundary pixels are a minority
std::array<double, 3> fill_color_of(const Tensor& target) {
    const std::size_t S = target.extent(1);
    std::array<std::vector<double>, 3> vals;
    const double* p = target.data();
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            double mn = 1.0;
            for (std::size_t c = 0; c < 3; ++c) mn = std::min(mn, p[(c * S + y) * S + x]);
            if (mn < 0.5) {
                for (std::size_t c = 0; c < 3; ++c) vals[c].push_back(p[(c * S + y) * S + x]);
            }
        }
    }
    std::array<double, 3> out{0, 0, 0};
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(!vals[c].empty());
        std::sort(vals[c].begin(), vals[c].end());
        out[c] = vals[c][vals[c].size() / 2];
    }
    return out;
}

}  // namespace

TEST_CASE("ppm endpoints and quantization round trip") {
    fs::path dir = temp_dir("ppm");
    Tensor white = Tensor::full({3, 4, 4}, 1.0);
    write_image((dir / "w.ppm").string(), white);
    std::string bytes = slurp((dir / "w.ppm").string());
    const std::string header = "P6\n4 4\n255\n";
    CHECK(bytes.substr(0, header.size()) == header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) {
        CHECK(static_cast<unsigned char>(bytes[i]) == 255);
    }

    Tensor black = Tensor::full({3, 4, 4}, -1.0);
    write_image((dir / "b.ppm").string(), black);
    bytes = slurp((dir / "b.ppm").string());
    for (std::size_t i = header.size(); i < bytes.size(); ++i) {
        CHECK(static_cast<unsigned char>(bytes[i]) == 0);
    }

    Rng rng(4);
    Tensor img = dit_test::random_tensor(rng, {3, 8, 8});
    write_image((dir / "r.ppm").string(), img);
    Tensor back = read_image((dir / "r.ppm").string());
    CHECK(dit_test::max_abs_diff(img, back) <= 1.0 / 127.5);
    write_image((dir / "r2.ppm").string(), back);
    CHECK(slurp((dir / "r.ppm").string()) == slurp((dir / "r2.ppm").string()));
}

TEST_CASE("ppm parse errors carry byte offsets") {
    fs::path dir = temp_dir("ppm_bad");
    {
        std::ofstream f(dir / "trunc.ppm", std::ios::binary);
        f << "P6\n4 4\n255\nAB";  // far too few pixel bytes
    }
    CHECK_THROWS_AS(read_image((dir / "trunc.ppm").string()), ParseError);
    {
        std::ofstream f(dir / "magic.ppm", std::ios::binary);
        f << "P5\n4 4\n255\n";
    }
    CHECK_THROWS_AS(read_image((dir / "magic.ppm").string()), ParseError);
    CHECK_THROWS_AS(read_image((dir / "missing.ppm").string()), FileError);
}

TEST_CASE("generate_pair determinism and contracts") {
    PairedSample a = generate_pair(7, 3, 32);
    PairedSample b = generate_pair(7, 3, 32);
    CHECK(dit_test::bitwise_equal(a.source, b.source));
    CHECK(dit_test::bitwise_equal(a.target, b.target));
    CHECK(a.source.shape() == Shape{3, 32, 32});

    PairedSample c = generate_pair(7, 4, 32);
    CHECK_FALSE(dit_test::bitwise_equal(a.source, c.source));

    for (std::size_t i = 0; i < a.source.numel(); ++i) {
        CHECK(a.source.data()[i] >= -1.0);
        CHECK(a.source.data()[i] <= 1.0);
        CHECK(a.target.data()[i] >= -1.0);
        CHECK(a.target.data()[i] <= 1.0);
    }
    CHECK_THROWS_AS(generate_pair(7, 0, 8), ParameterError);
}

TEST_CASE("sources are mostly near-white over 1000 samples") {
    const std::size_t S = 32;
    for (std::uint64_t id = 0; id < 1000; ++id) {
        PairedSample p = generate_pair(1234, id, S);
        std::size_t near_white = 0;
        const double* d = p.source.data();
        for (std::size_t i = 0; i < S * S; ++i) {
            if (d[i] > 0.8) ++near_white;  // channel 0; the outline is gray
        }
        CHECK(static_cast<double>(near_white) / (S * S) >= 0.95);
    }
}

TEST_CASE("target fill boundary hugs the source outline") {
    const std::size_t S = 32;
    for (std::uint64_t id = 0; id < 50; ++id) {
        PairedSample p = generate_pair(99, id, S);
        const double* tgt = p.target.data();
        const double* src = p.source.data();
        auto min_ch = [&](std::size_t y, std::size_t x) {
            double mn = 1.0;
            for (std::size_t c = 0; c < 3; ++c) {
                mn = std::min(mn, tgt[(c * S + y) * S + x]);
            }
            return mn;
        };
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                if (min_ch(y, x) > 0.9) continue;  // near-white
                bool has_white_neighbor = false;
                if (y > 0 && min_ch(y - 1, x) > 0.9) has_white_neighbor = true;
                if (y + 1 < S && min_ch(y + 1, x) > 0.9) has_white_neighbor = true;
                if (x > 0 && min_ch(y, x - 1) > 0.9) has_white_neighbor = true;
                if (x + 1 < S && min_ch(y, x + 1) > 0.9) has_white_neighbor = true;
                if (!has_white_neighbor) continue;
                // fill-boundary pixel: a dark source pixel must sit within 1px
                bool outline_near = false;
                for (std::size_t dy = y == 0 ? 0 : y - 1; dy <= std::min(S - 1, y + 1); ++dy) {
                    for (std::size_t dx = x == 0 ? 0 : x - 1; dx <= std::min(S - 1, x + 1);
                         ++dx) {
                        if (src[dy * S + dx] < 0.8) outline_near = true;
                    }
                }
                CHECK(outline_near);
            }
        }
    }
}

TEST_CASE("generate_dataset writes images, manifests, disjoint ids") {
    fs::path dir = temp_dir("ds");
    DatasetPair ds = generate_dataset(21, 8, 2, 32, dir.string());
    std::size_t ppm_count = 0, manifest_count = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string ext = e.path().extension().string();
        if (ext == ".ppm") ++ppm_count;
        if (ext == ".manifest") ++manifest_count;
    }
    CHECK(ppm_count == 20);
    CHECK(manifest_count == 2);

    std::set<std::uint64_t> train_ids, test_ids;
    for (const auto& e : ds.train.entries) train_ids.insert(e.sample_id);
    for (const auto& e : ds.test.entries) test_ids.insert(e.sample_id);
    CHECK(train_ids.size() == 8);
    CHECK(test_ids.size() == 2);
    for (std::uint64_t id : test_ids) CHECK(train_ids.count(id) == 0);

    // parse -> serialize -> parse round trip
    DatasetManifest m = read_manifest((dir / "train.manifest").string());
    CHECK(m.count == 8);
    CHECK(m.split == "train");
    write_manifest(m, (dir / "copy.manifest").string());
    CHECK(slurp((dir / "train.manifest").string()) == slurp((dir / "copy.manifest").string()));

    PairedSample p = load_sample(m, 3);
    PairedSample direct = generate_pair(21, 3, 32);
    // loaded sample equals the generated one up to ppm quantization
    CHECK(dit_test::max_abs_diff(p.source, direct.source) <= 1.0 / 127.5);
    CHECK(dit_test::max_abs_diff(p.target, direct.target) <= 1.0 / 127.5);
}

TEST_CASE("manifest parse errors") {
    fs::path dir = temp_dir("manifest_bad");
    {
        std::ofstream f(dir / "bad.manifest", std::ios::binary);
        f << "version 1\nseed 7\nsize 32\ncount 1\nsplit train\nnot-a-valid-entry\n";
    }
    CHECK_THROWS_AS(read_manifest((dir / "bad.manifest").string()), ParseError);
    {
        std::ofstream f(dir / "v9.manifest", std::ios::binary);
        f << "version 9\nseed 7\nsize 32\ncount 0\nsplit train\n";
    }
    CHECK_THROWS_AS(read_manifest((dir / "v9.manifest").string()), VersionError);
    {
        std::ofstream f(dir / "short.manifest", std::ios::binary);
        f << "version 1\nseed 7\n";
    }
    CHECK_THROWS_AS(read_manifest((dir / "short.manifest").string()), ParseError);
}

TEST_CASE("nearest-neighbor source retrieval predicts the target color") {
    const std::size_t n = 64, S = 32;
    std::vector<PairedSample> pairs;
    for (std::uint64_t id = 0; id < n; ++id) pairs.push_back(generate_pair(5150, id, S));

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = 1e300;
        std::size_t best_j = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0;
            const double* a = pairs[i].source.data();
            const double* b = pairs[j].source.data();
            for (std::size_t k = 0; k < 3 * S * S; ++k) {
                const double d = a[k] - b[k];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                best_j = j;
            }
        }
        auto ci = fill_color_of(pairs[i].target);
        auto cj = fill_color_of(pairs[best_j].target);
        double dist = 0;
        for (std::size_t c = 0; c < 3; ++c) dist = std::max(dist, std::fabs(ci[c] - cj[c]));
        if (dist < 0.15) ++correct;
    }
    CHECK(static_cast<double>(correct) / n > 0.9);
}
