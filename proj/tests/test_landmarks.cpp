#include <cmath>
#include <random>

#include "testing.hpp"
#include "support.hpp"
#include "unmask/error.hpp"
#include "unmask/landmarks.hpp"

using namespace unmask;
using namespace unmask::landmarks;

namespace {

std::vector<Point> random_interior_points(std::size_t n, double margin, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(margin, 1.0 - margin);
    std::vector<Point> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng)};
    return pts;
}

// f(d) = omega * ln(1 + (d / eps)^p), the small-error branch.
double small_branch(const AdaptiveWingParams& prm, double y, double d) {
    return prm.omega * std::log1p(std::pow(d / prm.epsilon, prm.alpha - y));
}

}  // namespace

TEST_CASE("landmark set holds exactly 98 points in the unit square") {
    std::vector<Point> pts(98, Point{0.5, 0.5});
    CHECK_NOTHROW(LandmarkSet{pts});
    std::vector<Point> short_list(97, Point{0.5, 0.5});
    CHECK_THROWS_AS(LandmarkSet{short_list}, DimensionError);
    pts[3].x = 1.2;
    CHECK_THROWS_AS(LandmarkSet{pts}, ParameterError);
}

TEST_CASE("landmark file round trip") {
    test_support::TempDir dir;
    const LandmarkSet lms(random_interior_points(98, 0.0, 1));
    save_landmarks(lms, dir / "l.txt");
    const auto back = load_landmarks(dir / "l.txt");
    for (std::size_t i = 0; i < 98; ++i) {
        CHECK(back[i].x == doctest::Approx(lms[i].x).epsilon(1e-12));
        CHECK(back[i].y == doctest::Approx(lms[i].y).epsilon(1e-12));
    }
    CHECK_THROWS_AS(load_landmarks(dir / "missing.txt"), IoError);
}

TEST_CASE("heatmap peaks and Gaussian falloff") {
    // Pixel centre of (row 10, col 20) on a 64 grid.
    const std::vector<Point> pts{{20.5 / 64, 10.5 / 64}};
    const auto hm = render_heatmaps(pts, 64, 2.0);
    CHECK(hm.channels() == 1);
    CHECK(hm.data[0][10][20].item<double>() == 1.0);
    CHECK(hm.data[0][10][22].item<double>() == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(hm.data[0][8][20].item<double>() == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(hm.data.max().item<double>() == 1.0);
}

TEST_CASE("two landmarks render two independent channels with closed-form sums") {
    const std::vector<Point> pts{{20.5 / 64, 10.5 / 64}, {40.5 / 64, 50.5 / 64}};
    const double sigma = 1.5;
    const auto hm = render_heatmaps(pts, 64, sigma);
    CHECK(hm.channels() == 2);
    const int centres[2][2] = {{10, 20}, {50, 40}};
    for (int k = 0; k < 2; ++k) {
        double expect = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                const double d2 = (r - centres[k][0]) * (r - centres[k][0]) + (c - centres[k][1]) * (c - centres[k][1]);
                expect += std::exp(-d2 / (2 * sigma * sigma));
            }
        CHECK(std::abs(hm.data[k].sum().item<double>() - expect) <= 1e-9);
    }
}

TEST_CASE("adaptive wing loss basics") {
    const AdaptiveWingParams prm;
    const auto gt = torch::rand({2, 3, 4, 4}, torch::kDouble);
    CHECK(adaptive_wing_loss(gt, gt, prm).item<double>() == 0.0);
    CHECK(adaptive_wing_loss(torch::rand_like(gt), gt, prm).item<double>() > 0.0);
    CHECK_THROWS_AS(adaptive_wing_loss(gt, torch::zeros({2, 3}), prm), DimensionError);
    AdaptiveWingParams bad;
    bad.theta = -1;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("adaptive wing branches meet at theta") {
    const AdaptiveWingParams prm;
    for (double y : {0.0, 0.3, 1.0}) {
        const auto k = adaptive_wing_constants(prm, y);
        CHECK(std::abs(small_branch(prm, y, prm.theta) - (k.a * prm.theta - k.c)) <= 1e-9);
    }
}

TEST_CASE("adaptive wing linear branch matches an independently derived slope") {
    // A is the slope of the small branch at theta (central difference),
    // C closes the value gap there.
    const AdaptiveWingParams prm;
    const double h = 1e-6;
    const double slope = (small_branch(prm, 0.0, prm.theta + h) - small_branch(prm, 0.0, prm.theta - h)) / (2 * h);
    const double intercept = slope * prm.theta - small_branch(prm, 0.0, prm.theta);
    const auto k = adaptive_wing_constants(prm, 0.0);
    CHECK(k.a == doctest::Approx(slope).epsilon(1e-8));
    CHECK(k.c == doctest::Approx(intercept).epsilon(1e-8));

    const auto pred = torch::full({1}, 0.9, torch::kDouble);
    const auto gt = torch::zeros({1}, torch::kDouble);
    CHECK(adaptive_wing_loss(pred, gt, prm).item<double>() == doctest::Approx(slope * 0.9 - intercept).epsilon(1e-8));
}

TEST_CASE("adaptive wing loss is continuous across theta") {
    const AdaptiveWingParams prm;
    const auto gt = torch::zeros({1}, torch::kDouble);
    double previous = adaptive_wing_loss(torch::full({1}, prm.theta - 1e-3, torch::kDouble), gt, prm).item<double>();
    double worst = 0;
    // Step 5e-8 keeps smooth increments (slope ~11 here) under the tolerance.
    for (int i = 1; i <= 40000; ++i) {
        const double d = prm.theta - 1e-3 + i * 5e-8;
        const double v = adaptive_wing_loss(torch::full({1}, d, torch::kDouble), gt, prm).item<double>();
        worst = std::max(worst, std::abs(v - previous));
        previous = v;
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("adaptive wing gradient matches finite differences in both branches") {
    torch::manual_seed(3);
    const auto gt = torch::rand({1, 2, 8, 8}, torch::kDouble);
    // Offsets of +-0.2 and +-0.8 put elements on both sides of theta.
    auto offsets = torch::where(torch::rand({1, 2, 8, 8}, torch::kDouble) < 0.5, torch::full({1}, 0.2, torch::kDouble),
                                torch::full({1}, 0.8, torch::kDouble));
    offsets = offsets * torch::where(torch::rand({1, 2, 8, 8}) < 0.5, -1.0, 1.0).to(torch::kDouble);
    const auto pred = gt + offsets;
    const auto weights = weighted_loss_map(gt, 1);
    const double err = test_support::gradient_error(
        [&](const torch::Tensor& p) { return adaptive_wing_loss(p, gt, {}, weights); }, pred);
    CHECK(err <= 1e-4);
}

TEST_CASE("weighted loss map") {
    const auto gt = torch::rand({2, 8, 8}, torch::kDouble);
    CHECK(torch::equal(weighted_loss_map(gt, 3, 0.0), torch::ones_like(gt)));
    CHECK(torch::equal(weighted_loss_map(torch::zeros({2, 8, 8}), 3), torch::ones({2, 8, 8})));

    auto peak = torch::zeros({1, 9, 9}, torch::kDouble);
    peak[0][4][4] = 1.0;
    const auto w = weighted_loss_map(peak, 1, 10.0);
    // Brute-force disc dilation of the >= 0.2 set with radius 1.
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c) {
            bool hit = false;
            for (int rr = 0; rr < 9; ++rr)
                for (int cc = 0; cc < 9; ++cc)
                    if (peak[0][rr][cc].item<double>() >= 0.2 && (rr - r) * (rr - r) + (cc - c) * (cc - c) <= 1) hit = true;
            CHECK(w[0][r][c].item<double>() == (hit ? 11.0 : 1.0));
        }
    CHECK(w.sum().item<double>() == 81 + 5 * 10);
}

TEST_CASE("peak decoding uses pixel centres") {
    auto hm = torch::zeros({1, 64, 64});
    hm[0][5][7] = 1.0;
    const auto p = decode_peaks(hm);
    CHECK(p[0].x == doctest::Approx(7.5 / 64));
    CHECK(p[0].y == doctest::Approx(5.5 / 64));

    const auto flat = decode_peaks(torch::full({1, 16, 16}, 0.3));
    CHECK(flat[0].x == doctest::Approx(0.5 / 16));
    CHECK(flat[0].y == doctest::Approx(0.5 / 16));
}

TEST_CASE("render then decode stays within one heatmap pixel") {
    const int size = 64;
    const double sigma = 1.5;
    const LandmarkSet lms(random_interior_points(98, 2 * sigma / size, 5));
    const auto decoded = peak_decode(render_heatmaps(lms, size, sigma));
    for (std::size_t i = 0; i < 98; ++i) {
        CHECK(std::abs(decoded[i].x - lms[i].x) * size <= 1.0);
        CHECK(std::abs(decoded[i].y - lms[i].y) * size <= 1.0);
    }
}

TEST_CASE("landmark image is the max over channels") {
    const LandmarkSet lms(random_interior_points(98, 0.1, 6));
    const auto img = render_landmark_image(lms, 32, 1.0);
    CHECK(img.sizes() == torch::IntArrayRef({1, 1, 32, 32}));
    const auto expect = std::get<0>(render_heatmaps(lms, 32, 1.0).data.max(0)).to(torch::kFloat);
    CHECK(torch::allclose(img[0][0], expect));
}

TEST_CASE("predictor output shape and deterministic inference") {
    LandmarkPredictorConfig cfg;
    cfg.base_channels = 16;
    cfg.hourglass_depth = 2;
    torch::manual_seed(0);
    LandmarkPredictor model(cfg);
    model->eval();
    const auto x = torch::rand({1, 3, 256, 256});
    const auto outs = model->forward(x);
    CHECK(outs.size() == 2);
    CHECK(outs.back().sizes() == torch::IntArrayRef({1, 98, 64, 64}));

    const auto img = test_support::random_image(256, 256, 3, 9);
    const auto a = predict_landmarks(model, img);
    const auto b = predict_landmarks(model, img);
    CHECK(torch::equal(a.heatmaps.data, b.heatmaps.data));
    CHECK(a.landmarks == b.landmarks);
}

TEST_CASE("stacked loss supervises every stack") {
    const auto gt = torch::rand({1, 2, 4, 4});
    const std::vector<torch::Tensor> logits{torch::zeros({1, 2, 4, 4}), torch::zeros({1, 2, 4, 4})};
    const auto single = adaptive_wing_loss(torch::sigmoid(logits[0]), gt);
    CHECK(stacked_heatmap_loss(logits, gt).item<double>() == doctest::Approx(2 * single.item<double>()));
}
