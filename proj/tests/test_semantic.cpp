#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dit/errors.hpp"
#include "dit/semantic.hpp"
#include "test_util.hpp"

using namespace dit;
using dit_test::random_tensor;

TEST_CASE("embeddings are unit norm and deterministic") {
    SemanticEncoder enc;
    Rng rng(61);
    for (int i = 0; i < 5; ++i) {
        Tensor img = random_tensor(rng, {3, 32, 32});
        Tensor e1 = enc.encode(img);
        Tensor e2 = enc.encode(img);
        CHECK(dit_test::bitwise_equal(e1, e2));
        double norm = 0;
        for (std::size_t j = 0; j < e1.numel(); ++j) norm += e1.data()[j] * e1.data()[j];
        CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-10);
        CHECK(cosine_similarity(e1, e2) == doctest::Approx(1.0));
    }
}

TEST_CASE("two constructions agree bitwise") {
    SemanticEncoder a;
    SemanticEncoder b;
    CHECK(dit_test::bitwise_equal(a.patch_proj(), b.patch_proj()));
    CHECK(dit_test::bitwise_equal(a.hidden_proj(), b.hidden_proj()));
    CHECK(dit_test::bitwise_equal(a.out_proj(), b.out_proj()));
}

TEST_CASE("encoder is scale sensitive") {
    SemanticEncoder enc;
    Rng rng(62);
    for (int i = 0; i < 100; ++i) {
        Tensor img = random_tensor(rng, {3, 32, 32});
        Tensor half = scale(img, 0.5);
        CHECK(cosine_similarity(enc.encode(img), enc.encode(half)) < 0.9999);
    }
}

TEST_CASE("encode rejects bad spatial sizes") {
    SemanticEncoder enc;  // patch size 4
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({3, 30, 30})), ShapeError);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 32, 32})), ShapeError);
}

TEST_CASE("cosine similarity endpoints") {
    Tensor a = Tensor::from_data({3}, {1, 0, 0});
    Tensor b = Tensor::from_data({3}, {0, 2, 0});
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, scale(a, -3.0)) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cosine_similarity(a, Tensor::zeros({3})), ContractError);
    CHECK_THROWS_AS(cosine_similarity(a, Tensor::zeros({4})), ShapeError);
}

TEST_CASE("weights are frozen; gradients reach the input image") {
    SemanticEncoder enc(32, 4, 64);
    Rng rng(63);
    Tensor img = random_tensor(rng, {3, 8, 8}, true);
    Tensor ref = enc.encode(random_tensor(rng, {3, 8, 8}));

    Tensor w_before = enc.patch_proj().clone();
    {
        Tape tape;
        Tensor cos = cosine_similarity_t(enc.encode(img), ref);
        tape.backward(cos);
    }
    CHECK(img.has_grad());
    CHECK_FALSE(enc.patch_proj().has_grad());
    CHECK(dit_test::bitwise_equal(enc.patch_proj(), w_before));

    // gradient w.r.t. the image matches finite differences
    img.zero_grad();
    const double err = dit_test::grad_check(
        [&] { return cosine_similarity_t(enc.encode(img), ref); }, {img}, 1e-5, 48);
    CHECK(err < 1e-4);
}
