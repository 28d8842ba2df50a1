#include <cmath>

#include "testing.hpp"
#include "support.hpp"
#include "unmask/error.hpp"
#include "unmask/inpaint.hpp"

using namespace unmask;
using namespace unmask::inpaint;

namespace {

GeneratorConfig small_generator() {
    GeneratorConfig cfg;
    cfg.input_size = 64;
    cfg.base_channels = 8;
    cfg.max_channels = 32;
    return cfg;
}

// A fixed channel mix 3 -> 2 with no nonlinearity.
class LinearTap : public FeatureExtractor {
public:
    LinearTap() : mix_(torch::tensor({{0.3, -0.2, 0.5}, {0.1, 0.7, -0.4}}, torch::kDouble)) {}
    std::vector<torch::Tensor> features(const torch::Tensor& x) const override {
        return {torch::einsum("oc,nchw->nohw", {mix_.to(x.dtype()), x})};
    }
    std::size_t tap_count() const override { return 1; }
    void to(torch::Dtype) override {}
    const torch::Tensor& mix() const { return mix_; }

private:
    torch::Tensor mix_;
};

torch::Tensor random_mask(int n, int h, int w, std::uint64_t seed) {
    torch::manual_seed(seed);
    auto m = (torch::rand({n, 1, h, w}, torch::kDouble) < 0.4).to(torch::kDouble);
    m.index_put_({torch::indexing::Slice(), 0, 0, 0}, 1.0);
    return m;
}

}  // namespace

TEST_CASE("generator keeps the spatial size") {
    torch::manual_seed(0);
    auto g = build_generator(small_generator());
    g->eval();
    const auto out = g->forward(torch::rand({2, kGeneratorInputChannels, 64, 64}) * 2 - 1);
    CHECK(out.sizes() == torch::IntArrayRef({2, 3, 64, 64}));
    CHECK(out.min().item<double>() >= 0.0);
    CHECK(out.max().item<double>() <= 1.0);
    CHECK_THROWS_AS(g->forward(torch::rand({1, 4, 64, 64})), DimensionError);
}

TEST_CASE("full-size generator maps 256 to 256") {
    GeneratorConfig cfg;
    cfg.base_channels = 8;
    cfg.max_channels = 32;
    auto g = build_generator(cfg);
    g->eval();
    torch::NoGradGuard guard;
    CHECK(g->forward(torch::zeros({1, 5, 256, 256})).sizes() == torch::IntArrayRef({1, 3, 256, 256}));
}

TEST_CASE("generate is deterministic and keeps the image shape") {
    torch::manual_seed(1);
    auto g = build_generator(small_generator());
    g->eval();
    const auto pair = test_support::make_pairs(1, 64, 2)[0];
    const auto a = generate(g, pair.masked, pair.landmarks, pair.segmap);
    const auto b = generate(g, pair.masked, pair.landmarks, pair.segmap);
    CHECK(a.height() == 64);
    CHECK(a.width() == 64);
    CHECK(a.channels() == 3);
    CHECK(a == b);
}

TEST_CASE("identity-initialised residual blocks pass their input through") {
    torch::manual_seed(2);
    DilatedResidualBlock block(8, 4, true);
    const auto x = torch::randn({1, 8, 16, 16});
    CHECK(block->branch(x).abs().max().item<double>() == 0.0);
    CHECK(torch::equal(block->forward(x), x));

    DilatedResidualBlock plain(8, 4, false);
    CHECK(plain->branch(x).abs().max().item<double>() > 0.0);
}

TEST_CASE("receptive field grows with the dilation rate") {
    int previous = 0;
    for (int rate : {1, 2, 4, 8}) {
        auto cfg = small_generator();
        cfg.dilation_rates.assign(cfg.dilated_blocks, rate);
        const int rf = receptive_field(generator_encoder_layers(cfg));
        CHECK(rf > previous);
        previous = rf;
    }
    CHECK(receptive_field({{3, 1, 1, 1}}) == 3);
    CHECK(receptive_field({{3, 2, 1, 1}, {3, 1, 2, 2}}) == 1 + 2 + 4 * 2);
}

TEST_CASE("generator config validation") {
    auto cfg = small_generator();
    cfg.dilation_rates = {2, 4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_generator();
    cfg.input_size = 60;
    CHECK_THROWS_AS(build_generator(cfg), ConfigError);
    const auto round = GeneratorConfig::from_json(small_generator().to_json());
    CHECK(round.to_json() == small_generator().to_json());
}

TEST_CASE("attention is row-stochastic and shape preserving") {
    torch::manual_seed(3);
    LongShortAttention attn(16);
    const auto x = torch::randn({2, 16, 8, 8});
    const auto w = attn->attention_weights(x);
    CHECK(w.sizes() == torch::IntArrayRef({2, 64, 64}));
    CHECK((w.sum(-1) - 1).abs().max().item<double>() <= 1e-5);
    CHECK(attn->forward(x, torch::randn({2, 16, 8, 8})).sizes() == x.sizes());
    // Gates start closed.
    CHECK(torch::equal(attn->forward(x, torch::randn({2, 16, 8, 8})), x));
}

TEST_CASE("discriminator patch geometry") {
    const DiscriminatorConfig cfg;
    CHECK(receptive_field(discriminator_layers(cfg)) == 70);
    CHECK(output_size(256, discriminator_layers(cfg)) == 30);
    torch::manual_seed(4);
    auto d = build_discriminator(cfg);
    d->eval();
    torch::NoGradGuard guard;
    CHECK(d->forward(torch::rand({1, 4, 256, 256})).sizes() == torch::IntArrayRef({1, 1, 30, 30}));

    DiscriminatorConfig bad;
    bad.layers = {64, 128, 256};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("spectral normalisation bounds the top singular value") {
    // Power iteration from a random start; the closely spaced top singular
    // values of random weights need a few hundred steps to converge.
    torch::manual_seed(5);
    auto d = build_discriminator(DiscriminatorConfig{});
    for (auto& conv : d->convs()) {
        const auto w = conv->normalized_weight(500).detach();
        const auto s = torch::linalg_svdvals(w.reshape({w.size(0), -1}).to(torch::kDouble));
        CHECK(s.max().item<double>() <= 1.0 + 1e-3);
    }
}

TEST_CASE("shifting the input by one patch stride shifts interior scores") {
    DiscriminatorConfig cfg;
    cfg.layers = {8, 16, 32, 64};
    torch::manual_seed(6);
    auto d = build_discriminator(cfg);
    d->eval();
    torch::NoGradGuard guard;
    const auto big = torch::rand({1, 4, 128, 136});
    using torch::indexing::Slice;
    const auto a = d->forward(big.index({Slice(), Slice(), Slice(), Slice(0, 128)}));
    const auto b = d->forward(big.index({Slice(), Slice(), Slice(), Slice(8, 136)}));
    // The stride product is 8. Columns 3..9 of b see no padding, nor do the
    // matching columns 4..10 of a.
    const auto lhs = b.index({Slice(), Slice(), Slice(), Slice(3, 10)});
    const auto rhs = a.index({Slice(), Slice(), Slice(), Slice(4, 11)});
    CHECK(torch::allclose(lhs, rhs, 1e-5, 1e-5));
}

TEST_CASE("discriminator forward is deterministic") {
    torch::manual_seed(7);
    DiscriminatorConfig cfg;
    cfg.layers = {8, 16, 32, 64};
    auto d = build_discriminator(cfg);
    d->eval();
    const auto img = torch::rand({1, 3, 64, 64});
    const auto lm = torch::rand({1, 1, 64, 64});
    CHECK(torch::equal(discriminate(d, img, lm), discriminate(d, img, lm)));
    CHECK_THROWS_AS(discriminate(d, img, torch::rand({1, 1, 32, 32})), DimensionError);
}

TEST_CASE("gram examples") {
    CHECK(gram(torch::ones({1, 1, 2, 2})).item<double>() == 1.0);

    auto f = torch::zeros({1, 2, 2, 2});
    f[0][0][0][0] = 1.0;
    f[0][1][1][1] = 1.0;
    const auto g = gram(f);
    CHECK(g[0][0][1].item<double>() == 0.0);
    CHECK(g[0][1][0].item<double>() == 0.0);

    torch::manual_seed(8);
    const auto r = gram(torch::randn({3, 6, 5, 5}, torch::kDouble));
    CHECK(torch::equal(r, r.transpose(1, 2)));
    CHECK(torch::linalg_eigvalsh(r).min().item<double>() >= -1e-10);
}

TEST_CASE("style loss agrees with a hand-rolled Gram oracle") {
    torch::manual_seed(9);
    const auto pred = torch::rand({1, 3, 8, 8}, torch::kDouble);
    const auto gt = torch::rand({1, 3, 8, 8}, torch::kDouble);
    const auto mask = random_mask(1, 8, 8, 10);
    const LinearTap tap;

    const auto mix = tap.mix();
    auto features = [&](const torch::Tensor& img) {
        std::vector<std::vector<double>> f(2, std::vector<double>(64, 0.0));
        for (int o = 0; o < 2; ++o)
            for (int p = 0; p < 64; ++p)
                for (int c = 0; c < 3; ++c)
                    f[o][p] += mix[o][c].item<double>() * img[0][c][p / 8][p % 8].item<double>() *
                               mask[0][0][p / 8][p % 8].item<double>();
        return f;
    };
    const auto fp = features(pred);
    const auto fg = features(gt);
    double expect = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double gp = 0, gg = 0;
            for (int p = 0; p < 64; ++p) {
                gp += fp[i][p] * fp[j][p];
                gg += fg[i][p] * fg[j][p];
            }
            expect += std::abs(gp - gg) / (2 * 64);
        }
    expect /= 4;  // 1 / N^2 with N = 2 channels
    CHECK(std::abs(style_loss(pred, gt, mask, tap).item<double>() - expect) <= 1e-9);

    CHECK(style_loss(pred, pred, mask, tap).item<double>() == 0.0);
    CHECK(style_loss(pred, gt, torch::zeros_like(mask), tap).item<double>() == 0.0);
}

TEST_CASE("pixel loss") {
    auto gt = torch::zeros({1, 1, 4, 4});
    auto mask = torch::zeros({1, 1, 4, 4});
    auto pred = gt.clone();
    for (auto [y, x] : {std::pair{0, 0}, {1, 2}, {2, 1}, {3, 3}}) {
        mask[0][0][y][x] = 1.0;
        pred[0][0][y][x] = 0.5;
    }
    CHECK(pixel_loss(pred, gt, mask).item<double>() == 0.5);
    CHECK(pixel_loss(gt, gt, mask).item<double>() == 0.0);
    CHECK(pixel_loss(gt + 2 * (pred - gt), gt, mask).item<double>() == 1.0);
    CHECK_THROWS_AS(pixel_loss(pred, gt, torch::zeros_like(mask)), DegenerateMaskError);
}

TEST_CASE("perceptual loss reduces to the mean absolute error for an identity tap") {
    torch::manual_seed(11);
    const auto a = torch::rand({2, 3, 8, 8}, torch::kDouble);
    const auto b = torch::rand({2, 3, 8, 8}, torch::kDouble);
    const IdentityExtractor id;
    CHECK(perceptual_loss(a, b, id).item<double>() == doctest::Approx((a - b).abs().mean().item<double>()).epsilon(1e-12));
    const RandomConvExtractor ex;
    CHECK(perceptual_loss(a.to(torch::kFloat), a.to(torch::kFloat), ex).item<double>() == 0.0);
}

TEST_CASE("random extractor is fixed by its seed") {
    const RandomConvExtractor a(19), b(19), c(20);
    const auto x = torch::rand({1, 3, 16, 16});
    CHECK(a.tap_count() == 5);
    CHECK(torch::equal(a.features(x).back(), b.features(x).back()));
    CHECK_FALSE(torch::equal(a.features(x).back(), c.features(x).back()));
}

TEST_CASE("total variation") {
    CHECK(tv_loss(torch::full({1, 3, 5, 5}, 0.4)).item<double>() == 0.0);
    const auto ramp = torch::tensor({0.0, 1.0, 0.0, 1.0}).reshape({1, 1, 2, 2});
    CHECK(tv_loss(ramp).item<double>() == 0.5);
    const auto checker = (torch::arange(4).reshape({4, 1}) + torch::arange(4).reshape({1, 4})).remainder(2)
                             .to(torch::kFloat)
                             .reshape({1, 1, 4, 4});
    CHECK(tv_loss(checker).item<double>() > 0.0);
    CHECK(tv_loss(checker).item<double>() == doctest::Approx(24.0 / 16.0));
}

TEST_CASE("least-squares adversarial terms") {
    const auto ones = torch::ones({1, 1, 4, 4});
    const auto zeros = torch::zeros({1, 1, 4, 4});
    const auto half = torch::full({1, 1, 4, 4}, 0.5);
    CHECK(lsgan_generator_loss(ones).item<double>() == 0.0);
    CHECK(lsgan_discriminator_loss(zeros, ones).item<double>() == 0.0);
    CHECK(lsgan_generator_loss(half).item<double>() == 0.25);
    CHECK(lsgan_discriminator_loss(half, half).item<double>() == 0.5);
}

TEST_CASE("adversarial losses through a constant discriminator") {
    DiscriminatorConfig cfg;
    cfg.layers = {8, 16, 32, 64};
    cfg.spectral_norm = false;
    auto d = build_discriminator(cfg);
    {
        torch::NoGradGuard guard;
        for (auto& p : d->parameters()) p.zero_();
        d->convs().back()->named_parameters()["bias"].fill_(0.5);
    }
    const auto pred = torch::rand({1, 3, 64, 64}, torch::requires_grad());
    const auto l = adversarial_losses(d, pred, torch::rand({1, 3, 64, 64}), torch::zeros({1, 1, 64, 64}));
    CHECK(l.generator.item<double>() == 0.25);
    CHECK(l.discriminator.item<double>() == 0.5);
}

TEST_CASE("total loss") {
    auto unit = [] { return torch::ones({}, torch::kDouble); };
    const LossParts ones{unit(), unit(), unit(), unit(), unit()};
    const auto b = total_loss(ones, LossWeights{});
    CHECK(b.total_value == 251.21);
    CHECK(b.total.item<double>() == doctest::Approx(251.21).epsilon(1e-12));

    auto zero = [] { return torch::zeros({}, torch::kDouble); };
    CHECK(total_loss({zero(), zero(), zero(), zero(), zero()}, LossWeights{}).total_value == 0.0);

    const LossParts mixed{torch::full({}, 0.7, torch::kDouble), unit(), unit(), unit(), unit()};
    CHECK(total_loss(mixed, LossWeights{0, 0, 0, 0}).total_value == 0.7);

    const LossParts bad{unit(), unit(), torch::full({}, NAN, torch::kDouble), unit(), unit()};
    CHECK_THROWS_AS(total_loss(bad, LossWeights{}), NumericError);
    const LossParts shaped{torch::ones({2}), unit(), unit(), unit(), unit()};
    CHECK_THROWS_AS(total_loss(shaped, LossWeights{}), DimensionError);
    CHECK_THROWS_AS((LossWeights{-1, 0, 0, 0}.validate()), ConfigError);
}

TEST_CASE("loss gradients match central differences") {
    torch::manual_seed(12);
    const auto gt = torch::rand({1, 3, 8, 8}, torch::kDouble);
    const auto pred = torch::rand({1, 3, 8, 8}, torch::kDouble);
    const auto mask = random_mask(1, 8, 8, 13);
    RandomConvExtractor ex;
    ex.to(torch::kDouble);
    using test_support::gradient_error;

    CHECK(gradient_error([&](const torch::Tensor& p) { return pixel_loss(p, gt, mask); }, pred) <= 1e-4);
    CHECK(gradient_error([&](const torch::Tensor& p) { return perceptual_loss(p, gt, ex); }, pred) <= 1e-4);
    CHECK(gradient_error([&](const torch::Tensor& p) { return style_loss(p, gt, mask, ex); }, pred) <= 1e-4);
    CHECK(gradient_error([&](const torch::Tensor& p) { return tv_loss(p); }, pred) <= 1e-4);

    const auto real = torch::randn({1, 1, 8, 8}, torch::kDouble);
    const auto fake = torch::randn({1, 1, 8, 8}, torch::kDouble);
    CHECK(gradient_error([&](const torch::Tensor& s) { return lsgan_generator_loss(s); }, fake) <= 1e-4);
    CHECK(gradient_error([&](const torch::Tensor& s) { return lsgan_discriminator_loss(s, real); }, fake) <= 1e-4);
    CHECK(gradient_error([&](const torch::Tensor& s) { return lsgan_discriminator_loss(fake, s); }, real) <= 1e-4);
}

TEST_CASE("losses vanish on identical inputs") {
    torch::manual_seed(14);
    const auto x = torch::rand({2, 3, 16, 16});
    const auto mask = random_mask(2, 16, 16, 15).to(torch::kFloat);
    const RandomConvExtractor ex;
    CHECK(pixel_loss(x, x, mask).item<double>() == 0.0);
    CHECK(perceptual_loss(x, x, ex).item<double>() == 0.0);
    CHECK(style_loss(x, x, mask, ex).item<double>() == 0.0);
}
