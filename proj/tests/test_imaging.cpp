#include <cmath>
#include <limits>
#include <fstream>

#include "testing.hpp"
#include "support.hpp"
#include "unmask/error.hpp"
#include "unmask/imaging.hpp"

using namespace unmask;
using namespace unmask::imaging;
using test_support::TempDir;

TEST_CASE("image tensor rejects out-of-range values and bad channel counts") {
    CHECK_THROWS_AS(ImageTensor(2, 2, 1, 1.5f), ParameterError);
    CHECK_THROWS_AS(ImageTensor(2, 2, 2), DimensionError);
    CHECK_THROWS_AS(ImageTensor(0, 2, 3), DimensionError);
    CHECK_THROWS_AS(ImageTensor(2, 2, 1, std::vector<float>(3, 0.0f)), DimensionError);
}

TEST_CASE("segmentation map counts its mask pixels") {
    BinarySegmentationMap m(3, 3, std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 0, 0, 1});
    CHECK(m.mask_pixel_count() == 4);
    CHECK(m.inverted().mask_pixel_count() == 5);
    CHECK_THROWS_AS(BinarySegmentationMap(1, 2, std::vector<std::uint8_t>{0, 2}), ParameterError);
}

TEST_CASE("load_image resizes to the target size") {
    TempDir dir;
    save_png(test_support::random_image(512, 512, 3, 1), dir / "big.png");
    const auto img = load_image(dir / "big.png", 256);
    CHECK(img.height() == 256);
    CHECK(img.width() == 256);
    CHECK(img.channels() == 3);
}

TEST_CASE("solid white decodes to ones") {
    TempDir dir;
    save_png(ImageTensor(8, 8, 3, 1.0f), dir / "white.png");
    const auto img = load_image(dir / "white.png", 8);
    for (float v : img.data()) CHECK(v == 1.0f);
}

TEST_CASE("2x2 checker upsampled to 4x4 follows the bilinear stencil") {
    TempDir dir;
    ImageTensor checker(2, 2, 3, std::vector<float>{1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1});
    save_png(checker, dir / "checker.png");
    const auto up = load_image(dir / "checker.png", 4);

    // Half-pixel centres: output pixel j samples source coordinate j/2 - 1/4,
    // clamped to [0, 1], so the weights along one axis are
    // (1, 0), (3/4, 1/4), (1/4, 3/4), (0, 1).
    const double w[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    const double src[2][2] = {{1, 0}, {0, 1}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double expect = 0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) expect += w[y][i] * w[x][j] * src[i][j];
            for (int c = 0; c < 3; ++c) CHECK(up.at(y, x, c) == doctest::Approx(expect).epsilon(1e-6));
        }
    CHECK(up.at(0, 0) == 1.0f);
    CHECK(up.at(0, 3) == 0.0f);
    CHECK(up.at(3, 0) == 0.0f);
    CHECK(up.at(3, 3) == 1.0f);
    CHECK(up.at(1, 1) == doctest::Approx(0.625));
}

TEST_CASE("load_image errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_image(dir / "missing.png", 8), IoError);
    {
        std::ofstream out(dir / "junk.png", std::ios::binary);
        out << "not an image";
    }
    CHECK_THROWS_AS(load_image(dir / "junk.png", 8), FormatError);
}

TEST_CASE("mask png round trip") {
    TempDir dir;
    BinarySegmentationMap m(4, 5);
    m.set(1, 2, true);
    m.set(3, 4, true);
    save_mask_png(m, dir / "m.png");
    CHECK(load_mask_png(dir / "m.png") == m);
}

TEST_CASE("compose") {
    const auto img = test_support::random_image(4, 4, 3, 2);
    CHECK(compose(img, BinarySegmentationMap(4, 4, 1)) == img);
    CHECK(compose(img, BinarySegmentationMap(4, 4, 0)) == ImageTensor(4, 4, 3));

    ImageTensor small(2, 2, 1, std::vector<float>{0.2f, 0.8f, 0.4f, 0.6f});
    BinarySegmentationMap diag(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1});
    CHECK(compose(small, diag) == ImageTensor(2, 2, 1, std::vector<float>({0.2f, 0.0f, 0.0f, 0.6f})));

    CHECK_THROWS_AS(compose(img, BinarySegmentationMap(3, 4)), DimensionError);
}

TEST_CASE("compose is idempotent") {
    const auto img = test_support::random_image(6, 6, 3, 3);
    BinarySegmentationMap m(6, 6);
    for (int y = 1; y < 4; ++y) m.set(y, 2, true);
    const auto once = compose(img, m);
    CHECK(compose(once, m) == once);
}

TEST_CASE("merge_inpainted") {
    const auto ground = test_support::random_image(2, 2, 1, 4);
    const auto gen = test_support::random_image(2, 2, 1, 5);
    CHECK(merge_inpainted(ground, gen, BinarySegmentationMap(2, 2, 0)) == ground);
    CHECK(merge_inpainted(ground, gen, BinarySegmentationMap(2, 2, 1)) == gen);

    BinarySegmentationMap corner(2, 2, std::vector<std::uint8_t>{1, 0, 0, 0});
    const auto out = merge_inpainted(ground, gen, corner);
    CHECK(out.at(0, 0) == gen.at(0, 0));
    CHECK(out.at(0, 1) == ground.at(0, 1));
    CHECK(out.at(1, 0) == ground.at(1, 0));
    CHECK(out.at(1, 1) == ground.at(1, 1));

    CHECK_THROWS_AS(merge_inpainted(ground, test_support::random_image(3, 2, 1, 6), corner), DimensionError);
}

TEST_CASE("psnr examples") {
    // Constant offset of 0.1 gives MSE 0.01.
    ImageTensor a(8, 8, 1, 0.2f);
    ImageTensor b(8, 8, 1, 0.3f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));

    CHECK(psnr(ImageTensor(4, 4, 1, 0.0f), ImageTensor(4, 4, 1, 1.0f)) == doctest::Approx(0.0));
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(psnr(a, ImageTensor(4, 4, 1)), DimensionError);
}

TEST_CASE("psnr is symmetric and drops as noise grows") {
    const auto clean = test_support::random_image(32, 32, 3, 7);
    std::mt19937_64 rng(8);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    std::vector<float> unit(clean.size());
    for (auto& v : unit) v = noise(rng);

    double previous = std::numeric_limits<double>::infinity();
    for (float amp : {0.05f, 0.1f, 0.2f}) {
        std::vector<float> data(clean.size());
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::clamp(clean.data()[i] + amp * unit[i], 0.0f, 1.0f);
        ImageTensor noisy(32, 32, 3, std::move(data));
        const double p = psnr(clean, noisy);
        CHECK(p == psnr(noisy, clean));
        CHECK(p < previous);
        previous = p;
    }
}

TEST_CASE("psnr and ssim agree with brute-force oracles") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto a = test_support::random_image(32, 32, s % 2 == 0 ? 1 : 3, 100 + s);
        const auto b = test_support::random_image(32, 32, s % 2 == 0 ? 1 : 3, 200 + s);
        CHECK(std::abs(psnr(a, b) - test_support::psnr_oracle(a, b)) <= 1e-6);
        CHECK(std::abs(ssim(a, b) - test_support::ssim_oracle(a, b)) <= 1e-6);
    }
}

TEST_CASE("ssim properties") {
    const auto a = test_support::random_image(24, 24, 3, 11);
    const auto b = test_support::random_image(24, 24, 3, 12);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) < 1.0);
    CHECK_THROWS_AS(ssim(ImageTensor(8, 8, 1), ImageTensor(8, 8, 1)), DimensionError);
}

TEST_CASE("ssim of two constant images depends only on the luminance term") {
    // Zero variance everywhere: SSIM = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
    const double c1 = 0.01 * 0.01;
    const double expect = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    CHECK(ssim(ImageTensor(16, 16, 1, 0.25f), ImageTensor(16, 16, 1, 0.75f)) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("tensor bridge round trip") {
    const auto img = test_support::random_image(5, 7, 3, 13);
    const auto t = to_tensor(img);
    CHECK(t.sizes() == torch::IntArrayRef({1, 3, 5, 7}));
    CHECK(image_from_tensor(t) == img);

    BinarySegmentationMap m(5, 7);
    m.set(2, 3, true);
    CHECK(mask_from_tensor(to_tensor(m)) == m);
}
