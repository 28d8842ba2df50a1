#include <algorithm>
#include <numeric>

#include "unmask/error.hpp"
#include "unmask/segmentation.hpp"

namespace unmask::segmentation {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_block(int in, int out) {
    const int groups = std::gcd(out, 8);
    return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)), nn::GroupNorm(groups, out),
                          nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                          nn::GroupNorm(groups, out), nn::ReLU());
}

int level_width(const SegmenterConfig& c, int level) {
    return c.base_channels * (1 << std::min(level, 3));
}

}  // namespace

void SegmenterConfig::validate() const {
    if (depth < 1) throw ConfigError("segmenter depth must be at least 1");
    if (base_channels < 1) throw ConfigError("segmenter base_channels must be positive");
    if (input_size < 1 || input_size % (1 << depth) != 0) {
        throw ConfigError("segmenter input_size must be divisible by 2^depth");
    }
}

nlohmann::json SegmenterConfig::to_json() const {
    return {{"input_size", input_size}, {"base_channels", base_channels}, {"depth", depth}};
}

SegmenterConfig SegmenterConfig::from_json(const nlohmann::json& j) {
    SegmenterConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.validate();
    return c;
}

SegmenterImpl::SegmenterImpl(const SegmenterConfig& config) : config_(config) {
    config_.validate();
    int in = 3;
    for (int level = 0; level < config_.depth; ++level) {
        const int width = level_width(config_, level);
        down_.push_back(register_module("down" + std::to_string(level), conv_block(in, width)));
        in = width;
    }
    const int bottom = level_width(config_, config_.depth);
    bottom_ = register_module("bottom", conv_block(in, bottom));
    in = bottom;
    for (int level = config_.depth - 1; level >= 0; --level) {
        const int width = level_width(config_, level);
        up_.push_back(register_module("up" + std::to_string(level),
                                      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, width, 2).stride(2))));
        merge_.push_back(register_module("merge" + std::to_string(level), conv_block(2 * width, width)));
        in = width;
    }
    head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
}

torch::Tensor SegmenterImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.input_size ||
        images.size(3) != config_.input_size) {
        throw DimensionError("segmenter expects N x 3 x " + std::to_string(config_.input_size) + " x " +
                             std::to_string(config_.input_size));
    }
    std::vector<torch::Tensor> skips;
    auto x = images * 2.0 - 1.0;
    for (auto& block : down_) {
        x = block->forward(x);
        skips.push_back(x);
        x = torch::max_pool2d(x, 2);
    }
    x = bottom_->forward(x);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        x = up_[i](x);
        x = merge_[i]->forward(torch::cat({skips[skips.size() - 1 - i], x}, 1));
    }
    return head_(x);
}

torch::Tensor predict_probabilities(const Segmenter& model, const imaging::ImageTensor& image) {
    const int size = model->config().input_size;
    if (image.height() != size || image.width() != size || image.channels() != 3) {
        throw DimensionError("predict_mask: image must be " + std::to_string(size) + "x" + std::to_string(size) +
                             "x3");
    }
    torch::NoGradGuard guard;
    return torch::sigmoid(model.ptr()->forward(imaging::to_tensor(image)));
}

BinarySegmentationMap predict_mask(const Segmenter& model, const imaging::ImageTensor& image, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("predict_mask: threshold must lie in (0,1)");
    return imaging::mask_from_tensor(predict_probabilities(model, image), threshold);
}

}  // namespace unmask::segmentation
