#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "unmask/imaging.hpp"

namespace unmask::landmarks {

inline constexpr int kNumLandmarks = 98;

/// Normalized image coordinates; (0,0) is the top-left corner of the frame,
/// (1,1) the bottom-right.
struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// Exactly 98 points in [0,1] x [0,1] (WFLW ordering: 0-32 jaw contour,
/// 33-50 brows, 51-59 nose, 60-75 eyes, 76-95 mouth, 96-97 pupils).
class LandmarkSet {
public:
    explicit LandmarkSet(std::span<const Point> points);

    const Point& operator[](std::size_t i) const { return points_[i]; }
    std::span<const Point> points() const { return points_; }
    static constexpr std::size_t size() { return kNumLandmarks; }

    bool operator==(const LandmarkSet&) const = default;

private:
    std::array<Point, kNumLandmarks> points_{};
};

/// Plain text, one "x y" pair per line, 98 lines.
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path);

/// K x H x W heatmaps, values in [0,1].
struct HeatmapStack {
    torch::Tensor data;

    int channels() const { return static_cast<int>(data.size(0)); }
    int height() const { return static_cast<int>(data.size(1)); }
    int width() const { return static_cast<int>(data.size(2)); }
};

/// Unnormalized Gaussian per point, centred on the pixel nearest the point,
/// so each channel peaks at exactly 1. Rendered in double precision.
HeatmapStack render_heatmaps(std::span<const Point> points, int size, double sigma);
HeatmapStack render_heatmaps(const LandmarkSet& landmarks, int size, double sigma);

/// Single-channel landmark image (max over the rendered heatmaps),
/// 1 x 1 x size x size float. This is the conditioning channel fed to the
/// inpainting generator and discriminator.
torch::Tensor render_landmark_image(const LandmarkSet& landmarks, int size, double sigma = 1.0);

// --- Adaptive wing loss ---------------------------------------------------------

struct AdaptiveWingParams {
    double omega = 14.0;
    double theta = 0.5;
    double epsilon = 1.0;
    double alpha = 2.1;

    void validate() const;
};

/// Linear-branch constants for a ground-truth value y: A and C make the
/// piecewise loss continuous and continuously differentiable at |delta| = theta.
struct WingConstants {
    double a;
    double c;
};
WingConstants adaptive_wing_constants(const AdaptiveWingParams& params, double gt_value);

/// Mean (optionally weighted) adaptive wing loss. Works for any dtype and
/// shape as long as pred and gt agree; weight_map must match too.
torch::Tensor adaptive_wing_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                 const AdaptiveWingParams& params = {},
                                 const std::optional<torch::Tensor>& weight_map = std::nullopt);

inline constexpr double kForegroundThreshold = 0.2;
inline constexpr double kDefaultBoost = 10.0;

/// 1 + boost * [grey-dilated gt >= 0.2], disc structuring element of the
/// given radius over the last two dimensions.
torch::Tensor weighted_loss_map(const torch::Tensor& gt, int dilation_radius = 3,
                                double boost = kDefaultBoost);

// --- Decoding ------------------------------------------------------------------

/// Per-channel argmax (first maximum in row-major order), mapped to the
/// normalized pixel centre ((col + 0.5) / W, (row + 0.5) / H).
std::vector<Point> decode_peaks(const torch::Tensor& heatmaps);

/// decode_peaks for a 98-channel stack.
LandmarkSet peak_decode(const HeatmapStack& heatmaps);

// --- Stacked hourglass predictor ------------------------------------------------

struct LandmarkPredictorConfig {
    int input_size = 256;
    int num_stacks = 2;
    int base_channels = 64;
    int heatmap_size = 64;
    int hourglass_depth = 4;
    int num_landmarks = kNumLandmarks;

    void validate() const;
    nlohmann::json to_json() const;
    static LandmarkPredictorConfig from_json(const nlohmann::json& j);
};

class LandmarkPredictorImpl : public torch::nn::Module {
public:
    explicit LandmarkPredictorImpl(const LandmarkPredictorConfig& config);

    /// Heatmap logits of every stack, each N x K x heatmap x heatmap.
    std::vector<torch::Tensor> forward(const torch::Tensor& images);

    const LandmarkPredictorConfig& config() const { return config_; }

private:
    LandmarkPredictorConfig config_;
    torch::nn::Sequential stem_{nullptr};
    std::vector<torch::nn::Sequential> stacks_;
    std::vector<torch::nn::Conv2d> heads_;
    std::vector<torch::nn::Conv2d> feature_merges_;
    std::vector<torch::nn::Conv2d> heatmap_merges_;
};
TORCH_MODULE(LandmarkPredictor);

/// Sum over stacks of the (weighted) adaptive wing loss between
/// sigmoid(logits) and gt. Every stack is supervised.
torch::Tensor stacked_heatmap_loss(const std::vector<torch::Tensor>& stack_logits,
                                   const torch::Tensor& gt, const AdaptiveWingParams& params = {},
                                   const std::optional<torch::Tensor>& weight_map = std::nullopt);

struct LandmarkPrediction {
    HeatmapStack heatmaps;
    LandmarkSet landmarks;
};

/// Inference: final stack's sigmoid heatmaps and their decoded peaks.
LandmarkPrediction predict_landmarks(const LandmarkPredictor& model, const imaging::ImageTensor& image);

}  // namespace unmask::landmarks
