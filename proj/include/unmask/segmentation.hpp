#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "unmask/imaging.hpp"

namespace unmask::segmentation {

using imaging::BinarySegmentationMap;

/// |a & b| / |a | b|; two empty masks have IoU 1.
double iou(const BinarySegmentationMap& a, const BinarySegmentationMap& b);

inline constexpr double kRegionIouThreshold = 0.5;

/// Proposal i is positive iff iou(proposal_i, ground) >= threshold.
std::vector<bool> classify_proposals(const std::vector<BinarySegmentationMap>& proposals,
                                     const BinarySegmentationMap& ground,
                                     double threshold = kRegionIouThreshold);

struct Vertex {
    double x;
    double y;
};

/// A closed polygon in pixel coordinates of an image_width x image_height frame.
struct PolygonAnnotation {
    std::vector<Vertex> vertices;
    int image_width = 0;
    int image_height = 0;

    /// >= 3 vertices, every vertex inside [0,W] x [0,H].
    void validate() const;
    /// Signed shoelace area in square pixels.
    double signed_area() const;
};

/// Even-odd rasterization: a pixel is inside when its centre is. The polygon
/// is rescaled from the annotation frame to size x size. Zero-area polygons
/// throw AnnotationError.
BinarySegmentationMap polygon_to_mask(const PolygonAnnotation& annotation, int size);

/// Same rasterization on an explicit height x width grid, vertices already in
/// that grid's pixel coordinates.
BinarySegmentationMap rasterize_polygon(const std::vector<Vertex>& vertices, int height, int width);

/// A Labelme document: image path, frame size and one polygon per shape.
struct LabelmeDocument {
    std::string image_path;
    int image_height = 0;
    int image_width = 0;
    std::vector<PolygonAnnotation> shapes;
};

LabelmeDocument parse_labelme(const nlohmann::json& doc);
LabelmeDocument load_labelme(const std::filesystem::path& path);

/// Union of all shapes of a document, rasterized at size x size.
BinarySegmentationMap labelme_mask(const LabelmeDocument& doc, int size);

/// Disc dilation: a pixel is set when some set pixel lies within Euclidean
/// distance `radius`. Radius 0 is the identity.
BinarySegmentationMap dilate_mask(const BinarySegmentationMap& mask, int radius);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7].
/// `ground` holds 0/1 values with the same shape as `prob`.
torch::Tensor segmentation_loss(const torch::Tensor& prob, const torch::Tensor& ground);

struct SegmenterConfig {
    int input_size = 256;
    int base_channels = 32;
    int depth = 4;

    void validate() const;
    nlohmann::json to_json() const;
    static SegmenterConfig from_json(const nlohmann::json& j);
};

/// U-shaped encoder-decoder producing one logit per pixel.
class SegmenterImpl : public torch::nn::Module {
public:
    explicit SegmenterImpl(const SegmenterConfig& config);

    /// N x 3 x S x S images in [0,1] -> N x 1 x S x S logits.
    torch::Tensor forward(const torch::Tensor& images);

    const SegmenterConfig& config() const { return config_; }

private:
    SegmenterConfig config_;
    std::vector<torch::nn::Sequential> down_;
    torch::nn::Sequential bottom_{nullptr};
    std::vector<torch::nn::ConvTranspose2d> up_;
    std::vector<torch::nn::Sequential> merge_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Segmenter);

inline constexpr double kDefaultMaskThreshold = 0.5;
inline constexpr int kDefaultDilationRadius = 3;

/// Per-pixel sigmoid probabilities, 1 x 1 x S x S.
torch::Tensor predict_probabilities(const Segmenter& model, const imaging::ImageTensor& image);

BinarySegmentationMap predict_mask(const Segmenter& model, const imaging::ImageTensor& image,
                                   double threshold = kDefaultMaskThreshold);

}  // namespace unmask::segmentation
