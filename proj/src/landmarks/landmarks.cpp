#include "unmask/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "unmask/error.hpp"

namespace unmask::landmarks {

LandmarkSet::LandmarkSet(std::span<const Point> points) {
    if (points.size() != kNumLandmarks) {
        throw DimensionError("a landmark set needs exactly 98 points, got " +
                             std::to_string(points.size()));
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            throw ParameterError("landmark " + std::to_string(i) + " outside [0,1]^2");
        }
        points_[i] = p;
    }
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open landmark file: " + path.string());
    std::vector<Point> points;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        Point p;
        if (!(ss >> p.x >> p.y)) throw FormatError("malformed landmark line in " + path.string());
        points.push_back(p);
    }
    return LandmarkSet(points);
}

void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write landmark file: " + path.string());
    out.precision(std::numeric_limits<double>::max_digits10);
    for (const auto& p : landmarks.points()) out << p.x << ' ' << p.y << '\n';
}

HeatmapStack render_heatmaps(std::span<const Point> points, int size, double sigma) {
    if (!(sigma > 0)) throw ParameterError("heatmap sigma must be positive");
    if (size <= 0) throw DimensionError("heatmap size must be positive");
    const auto k = static_cast<std::int64_t>(points.size());
    auto out = torch::empty({k, size, size}, torch::kFloat64);
    auto acc = out.accessor<double, 3>();
    const double denom = 2.0 * sigma * sigma;
    for (std::int64_t i = 0; i < k; ++i) {
        // Pixel (r, c) has its centre at ((c + 0.5) / size, (r + 0.5) / size).
        const int cx = std::clamp(static_cast<int>(std::floor(points[i].x * size)), 0, size - 1);
        const int cy = std::clamp(static_cast<int>(std::floor(points[i].y * size)), 0, size - 1);
        for (int r = 0; r < size; ++r) {
            const double dy = r - cy;
            for (int c = 0; c < size; ++c) {
                const double dx = c - cx;
                acc[i][r][c] = std::exp(-(dx * dx + dy * dy) / denom);
            }
        }
    }
    return {out};
}

HeatmapStack render_heatmaps(const LandmarkSet& landmarks, int size, double sigma) {
    return render_heatmaps(landmarks.points(), size, sigma);
}

torch::Tensor render_landmark_image(const LandmarkSet& landmarks, int size, double sigma) {
    auto maps = render_heatmaps(landmarks, size, sigma).data;
    return std::get<0>(maps.max(0)).to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
}

void AdaptiveWingParams::validate() const {
    if (!(omega > 0 && theta > 0 && epsilon > 0 && alpha > 0)) {
        throw ParameterError("adaptive wing parameters must be strictly positive");
    }
    if (!(theta < 1.0)) throw ParameterError("adaptive wing theta must be below 1");
}

WingConstants adaptive_wing_constants(const AdaptiveWingParams& params, double gt_value) {
    params.validate();
    const double p = params.alpha - gt_value;
    const double ratio = params.theta / params.epsilon;
    const double pw = std::pow(ratio, p);
    const double a = params.omega * (1.0 / (1.0 + pw)) * p * std::pow(ratio, p - 1.0) / params.epsilon;
    const double c = params.theta * a - params.omega * std::log1p(pw);
    return {a, c};
}

torch::Tensor adaptive_wing_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                 const AdaptiveWingParams& params,
                                 const std::optional<torch::Tensor>& weight_map) {
    params.validate();
    if (!pred.sizes().equals(gt.sizes())) throw DimensionError("adaptive_wing_loss: shape mismatch");
    if (weight_map && !weight_map->sizes().equals(gt.sizes())) {
        throw DimensionError("adaptive_wing_loss: weight map shape mismatch");
    }
    const auto y = gt.detach();
    const auto delta = (y - pred).abs();
    const auto power = params.alpha - y;
    const double ratio = params.theta / params.epsilon;

    // Linear-branch constants, element-wise in y (see adaptive_wing_constants).
    const auto ratio_pow = torch::pow(ratio, power);
    const auto a = params.omega * (1.0 / (1.0 + ratio_pow)) * power *
                   torch::pow(ratio, power - 1.0) / params.epsilon;
    const auto c = params.theta * a - params.omega * torch::log1p(ratio_pow);

    const auto small = params.omega * torch::log1p(torch::pow(delta / params.epsilon, power));
    const auto large = a * delta - c;
    auto loss = torch::where(delta < params.theta, small, large);
    if (weight_map) loss = loss * weight_map->detach();
    return loss.mean();
}

torch::Tensor weighted_loss_map(const torch::Tensor& gt, int dilation_radius, double boost) {
    if (boost < 0) throw ParameterError("weighted_loss_map: boost must be non-negative");
    if (dilation_radius < 0) throw ParameterError("weighted_loss_map: radius must be non-negative");
    const auto g = gt.detach();
    const auto h = g.size(-2);
    const auto w = g.size(-1);
    auto dilated = g.clone();
    if (dilation_radius > 0) {
        const int r = dilation_radius;
        // Pad with the minimum so the border never introduces foreground.
        const double floor_value = std::min(0.0, g.min().item<double>());
        auto padded = torch::constant_pad_nd(g, {r, r, r, r}, floor_value);
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                if (dx * dx + dy * dy > r * r) continue;
                auto shifted = padded.narrow(-2, r + dy, h).narrow(-1, r + dx, w);
                dilated = torch::maximum(dilated, shifted);
            }
        }
    }
    const auto foreground = (dilated >= kForegroundThreshold).to(g.scalar_type());
    return 1.0 + boost * foreground;
}

std::vector<Point> decode_peaks(const torch::Tensor& heatmaps) {
    auto maps = heatmaps.detach().to(torch::kCPU, torch::kFloat64).contiguous();
    if (maps.dim() == 4) {
        if (maps.size(0) != 1) throw DimensionError("decode_peaks: batch dimension must be 1");
        maps = maps.squeeze(0);
    }
    if (maps.dim() != 3) throw DimensionError("decode_peaks: expected K x H x W");
    const auto k = maps.size(0);
    const auto h = maps.size(1);
    const auto w = maps.size(2);
    auto acc = maps.accessor<double, 3>();
    std::vector<Point> points;
    points.reserve(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) {
        std::int64_t best_r = 0;
        std::int64_t best_c = 0;
        double best = acc[i][0][0];
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t c = 0; c < w; ++c) {
                if (acc[i][r][c] > best) {
                    best = acc[i][r][c];
                    best_r = r;
                    best_c = c;
                }
            }
        }
        points.push_back({(best_c + 0.5) / static_cast<double>(w), (best_r + 0.5) / static_cast<double>(h)});
    }
    return points;
}

LandmarkSet peak_decode(const HeatmapStack& heatmaps) {
    return LandmarkSet(decode_peaks(heatmaps.data));
}

}  // namespace unmask::landmarks
