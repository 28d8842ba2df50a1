#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <torch/torch.h>

#include "unmask/imaging.hpp"
#include "unmask/synthdata.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// A fresh directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("unmask_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline unmask::imaging::ImageTensor random_image(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> data(static_cast<std::size_t>(h) * w * c);
    for (auto& v : data) v = u(rng);
    return {h, w, c, std::move(data)};
}

/// Norm-wise relative error between the autograd gradient of a scalar
/// function and its central finite-difference estimate, in double precision.
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& at,
                             double step = 1e-6) {
    auto x = at.detach().to(torch::kDouble).clone().requires_grad_(true);
    auto y = f(x);
    y.backward();
    const auto analytic = x.grad().detach().clone().reshape(-1);

    auto base = at.detach().to(torch::kDouble).clone();
    auto flat = base.view(-1);
    auto numeric = torch::zeros_like(analytic);
    torch::NoGradGuard guard;
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
        const double orig = flat[i].item<double>();
        flat[i] = orig + step;
        const double plus = f(base).item<double>();
        flat[i] = orig - step;
        const double minus = f(base).item<double>();
        flat[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * step);
    }
    const double scale = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
    if (scale == 0.0) return 0.0;
    return (analytic - numeric).norm().item<double>() / scale;
}

/// Direct PSNR: mean squared error accumulated in long double.
inline double psnr_oracle(const unmask::imaging::ImageTensor& a, const unmask::imaging::ImageTensor& b,
                          double range = 1.0) {
    long double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = static_cast<long double>(a.data()[i]) - b.data()[i];
        sum += d * d;
    }
    const long double mse = sum / a.size();
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(10.0L * std::log10(static_cast<long double>(range) * range / mse));
}

/// Window-by-window SSIM: an 11x11 normalised Gaussian (sigma 1.5) is placed
/// at every fully contained position and the weighted statistics are formed
/// from centred sums.
inline double ssim_oracle(const unmask::imaging::ImageTensor& a, const unmask::imaging::ImageTensor& b,
                          double range = 1.0) {
    constexpr int k = 11;
    double win[k][k];
    double wsum = 0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    for (auto& row : win)
        for (double& v : row) v /= wsum;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double total = 0;
    for (int c = 0; c < a.channels(); ++c) {
        double acc = 0;
        int count = 0;
        for (int y = 0; y + k <= a.height(); ++y)
            for (int x = 0; x + k <= a.width(); ++x) {
                double ma = 0, mb = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        ma += win[i][j] * a.at(y + i, x + j, c);
                        mb += win[i][j] * b.at(y + i, x + j, c);
                    }
                double va = 0, vb = 0, cab = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        const double da = a.at(y + i, x + j, c) - ma;
                        const double db = b.at(y + i, x + j, c) - mb;
                        va += win[i][j] * da * da;
                        vb += win[i][j] * db * db;
                        cab += win[i][j] * da * db;
                    }
                acc += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / a.channels();
}

/// Procedural faces with a synthetic mask drawn on each; genders alternate.
inline std::vector<unmask::synth::SyntheticPair> make_pairs(int count, int size, std::uint64_t seed) {
    const auto templates = unmask::synth::default_templates();
    std::vector<unmask::synth::SyntheticPair> pairs;
    for (int i = 0; i < count; ++i) {
        const auto g = i % 2 == 0 ? unmask::Gender::male : unmask::Gender::female;
        const auto face = unmask::synth::procedural_face(size, seed + static_cast<std::uint64_t>(i), g);
        pairs.push_back(unmask::synth::apply_mask_template(face.image, face.landmarks, templates[i % templates.size()],
                                                           seed * 31 + static_cast<std::uint64_t>(i), g));
    }
    return pairs;
}

}  // namespace test_support
