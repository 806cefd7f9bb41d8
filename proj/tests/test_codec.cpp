#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "dit/codec.hpp"
#include "dit/errors.hpp"
#include "test_util.hpp"

using namespace dit;
namespace fs = std::filesystem;

TEST_CASE("identity codec rearranges without loss") {
    LatentCodec codec(2);
    CHECK(codec.latent_channels() == 12);

    Rng rng(71);
    Tensor x = dit_test::random_tensor(rng, {3, 4, 4});
    Tensor z = codec.encode(x);
    CHECK(z.shape() == Shape{12, 2, 2});

    // same 48 values, permuted
    std::vector<double> a(x.data(), x.data() + 48), b(z.data(), z.data() + 48);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    CHECK(dit_test::bitwise_equal(codec.decode(z), x));
    CHECK(dit_test::bitwise_equal(codec.decode(Tensor::zeros({12, 2, 2})),
                                  Tensor::zeros({3, 4, 4})));
    CHECK_THROWS_AS(codec.encode(Tensor::zeros({3, 5, 5})), ShapeError);
    CHECK_THROWS_AS(codec.decode(Tensor::zeros({4, 2, 2})), ShapeError);
}

TEST_CASE("space-to-depth layout is the documented one") {
    LatentCodec codec(2);
    Tensor x = Tensor::zeros({3, 4, 4});
    // mark pixel (channel 1, y=2, x=3)
    x.data()[(1 * 4 + 2) * 4 + 3] = 5.0;
    Tensor z = codec.encode(x);
    // lands in channel c*f*f + dy*f + dx = 1*4 + 0*2 + 1 = 5, at (y=1, x=1)
    CHECK(z.at({5, 1, 1}) == 5.0);
}

TEST_CASE("tiny-ae roundtrip shapes and decode gradient") {
    LatentCodec codec(2, 4, Rng(5));
    CHECK(codec.latent_channels() == 4);
    CHECK_FALSE(codec.frozen());

    Rng rng(72);
    Tensor x = dit_test::random_tensor(rng, {3, 8, 8});
    Tensor z = codec.encode(x);
    CHECK(z.shape() == Shape{4, 4, 4});
    CHECK(codec.decode(z).shape() == Shape{3, 8, 8});

    // decode is differentiable at interior points
    Tensor zt = dit_test::random_tensor(rng, {4, 4, 4}, true, -0.3, 0.3);
    const double err = dit_test::grad_check(
        [&] { return mean(mul(codec.decode(zt), codec.decode(zt))); }, {zt});
    CHECK(err < 1e-4);
}

TEST_CASE("tiny-ae pretraining reduces reconstruction error and freezes") {
    fs::path dir = fs::temp_directory_path() / "dit_codec_pretrain";
    fs::remove_all(dir);
    DatasetPair ds = generate_dataset(81, 32, 8, 16, dir.string());

    // short run: loss at the end is below the first-step loss
    PretrainResult quick = pretrain_tiny_ae(ds.train, 1, Rng(3));
    PretrainResult longer = pretrain_tiny_ae(ds.train, 400, Rng(3));
    CHECK(longer.final_mse < quick.final_mse);
    CHECK(longer.codec.frozen());
    for (auto& [name, p] : longer.codec.parameters()) CHECK_FALSE(p.requires_grad());

    // frozen weights stay bitwise stable through use
    Tensor w = longer.codec.parameters()[0].second.clone();
    Tensor x = load_sample(ds.train, 0).target;
    {
        Tape tape;
        Tensor xt = x.clone();
        xt.set_requires_grad(true);
        Tensor loss = mean(mul(longer.codec.decode(longer.codec.encode(xt)), xt));
        tape.backward(loss);
    }
    CHECK(dit_test::bitwise_equal(longer.codec.parameters()[0].second, w));

    CHECK_THROWS_AS(pretrain_tiny_ae(DatasetManifest{}, 10, Rng(1)), ParameterError);
}

TEST_CASE("pretrained tiny-ae hits the reconstruction target on held-out images") {
    fs::path dir = fs::temp_directory_path() / "dit_codec_mse";
    fs::remove_all(dir);
    DatasetPair ds = generate_dataset(82, 32, 8, 32, dir.string());
    PretrainResult r = pretrain_tiny_ae(ds.train, 1500, Rng(9));
    double mse = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.test.entries.size(); ++i) {
        PairedSample p = load_sample(ds.test, i);
        for (const Tensor* img : {&p.source, &p.target}) {
            Tensor rec = r.codec.decode(r.codec.encode(*img));
            Tensor d = sub(rec, *img);
            mse += mean(mul(d, d)).value();
            ++count;
        }
    }
    mse /= static_cast<double>(count);
    CHECK(mse < 0.01);
}
