#include <numeric>

#include "unmask/error.hpp"
#include "unmask/landmarks.hpp"

namespace unmask::landmarks {

namespace nn = torch::nn;

namespace {

int group_count(int channels) { return std::gcd(channels, 8); }

// Pre-activation residual unit at constant width.
class ResidualImpl : public nn::Module {
public:
    explicit ResidualImpl(int channels)
        : norm1_(register_module("norm1", nn::GroupNorm(group_count(channels), channels))),
          conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)))),
          norm2_(register_module("norm2", nn::GroupNorm(group_count(channels), channels))),
          conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)))) {}

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = conv1_(torch::relu(norm1_(x)));
        y = conv2_(torch::relu(norm2_(y)));
        return x + y;
    }

private:
    nn::GroupNorm norm1_;
    nn::Conv2d conv1_;
    nn::GroupNorm norm2_;
    nn::Conv2d conv2_;
};
TORCH_MODULE(Residual);

class HourglassImpl : public nn::Module {
public:
    HourglassImpl(int depth, int channels)
        : skip_(register_module("skip", Residual(channels))),
          down_(register_module("down", Residual(channels))),
          up_(register_module("up", Residual(channels))) {
        if (depth > 1) {
            inner_ = register_module("inner", std::make_shared<HourglassImpl>(depth - 1, channels));
        } else {
            bottom_ = register_module("bottom", Residual(channels));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto skip = skip_(x);
        auto low = down_(torch::max_pool2d(x, 2));
        low = inner_ ? inner_->forward(low) : bottom_(low);
        low = up_(low);
        auto upsampled = torch::upsample_nearest2d(low, {x.size(2), x.size(3)});
        return skip + upsampled;
    }

private:
    Residual skip_;
    Residual down_;
    Residual up_;
    std::shared_ptr<HourglassImpl> inner_;
    Residual bottom_{nullptr};
};
TORCH_MODULE(Hourglass);

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void LandmarkPredictorConfig::validate() const {
    if (num_stacks < 1) throw ConfigError("landmark predictor needs at least one stack");
    if (base_channels < 1 || num_landmarks < 1) throw ConfigError("invalid landmark predictor widths");
    if (heatmap_size < 1 || input_size % heatmap_size != 0 ||
        !is_power_of_two(input_size / heatmap_size)) {
        throw ConfigError("heatmap_size must divide input_size by a power of two");
    }
    if (hourglass_depth < 1 || heatmap_size % (1 << hourglass_depth) != 0) {
        throw ConfigError("heatmap_size must be divisible by 2^hourglass_depth");
    }
}

nlohmann::json LandmarkPredictorConfig::to_json() const {
    return {{"input_size", input_size},         {"num_stacks", num_stacks},
            {"base_channels", base_channels},   {"heatmap_size", heatmap_size},
            {"hourglass_depth", hourglass_depth}, {"num_landmarks", num_landmarks}};
}

LandmarkPredictorConfig LandmarkPredictorConfig::from_json(const nlohmann::json& j) {
    LandmarkPredictorConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.num_stacks = j.at("num_stacks").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.heatmap_size = j.at("heatmap_size").get<int>();
    c.hourglass_depth = j.at("hourglass_depth").get<int>();
    c.num_landmarks = j.at("num_landmarks").get<int>();
    c.validate();
    return c;
}

LandmarkPredictorImpl::LandmarkPredictorImpl(const LandmarkPredictorConfig& config) : config_(config) {
    config_.validate();
    const int ch = config_.base_channels;

    nn::Sequential stem;
    stem->push_back(nn::Conv2d(nn::Conv2dOptions(3, ch, 3).padding(1)));
    for (int factor = config_.input_size / config_.heatmap_size; factor > 1; factor /= 2) {
        stem->push_back(nn::GroupNorm(group_count(ch), ch));
        stem->push_back(nn::ReLU());
        stem->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }
    stem->push_back(Residual(ch));
    stem_ = register_module("stem", stem);

    for (int s = 0; s < config_.num_stacks; ++s) {
        const auto tag = std::to_string(s);
        nn::Sequential body;
        body->push_back(Hourglass(config_.hourglass_depth, ch));
        body->push_back(Residual(ch));
        body->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 1)));
        body->push_back(nn::GroupNorm(group_count(ch), ch));
        body->push_back(nn::ReLU());
        stacks_.push_back(register_module("stack" + tag, body));

        auto head = nn::Conv2d(nn::Conv2dOptions(ch, config_.num_landmarks, 1));
        {
            // Start with a near-zero background so early training is not spent
            // pulling every pixel down from 0.5.
            torch::NoGradGuard guard;
            head->bias.fill_(-4.0);
        }
        heads_.push_back(register_module("head" + tag, head));

        if (s + 1 < config_.num_stacks) {
            feature_merges_.push_back(register_module("merge_features" + tag, nn::Conv2d(nn::Conv2dOptions(ch, ch, 1))));
            heatmap_merges_.push_back(register_module(
                "merge_heatmaps" + tag, nn::Conv2d(nn::Conv2dOptions(config_.num_landmarks, ch, 1))));
        }
    }
}

std::vector<torch::Tensor> LandmarkPredictorImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.input_size ||
        images.size(3) != config_.input_size) {
        throw DimensionError("landmark predictor expects N x 3 x " + std::to_string(config_.input_size) +
                             " x " + std::to_string(config_.input_size));
    }
    auto x = stem_->forward(images * 2.0 - 1.0);
    std::vector<torch::Tensor> outputs;
    for (std::size_t s = 0; s < stacks_.size(); ++s) {
        auto features = stacks_[s]->forward(x);
        auto logits = heads_[s](features);
        outputs.push_back(logits);
        if (s + 1 < stacks_.size()) {
            x = x + feature_merges_[s](features) + heatmap_merges_[s](torch::sigmoid(logits));
        }
    }
    return outputs;
}

torch::Tensor stacked_heatmap_loss(const std::vector<torch::Tensor>& stack_logits, const torch::Tensor& gt,
                                   const AdaptiveWingParams& params,
                                   const std::optional<torch::Tensor>& weight_map) {
    if (stack_logits.empty()) throw DimensionError("stacked_heatmap_loss: no stack outputs");
    auto total = torch::zeros({}, stack_logits.front().options());
    for (const auto& logits : stack_logits) {
        total = total + adaptive_wing_loss(torch::sigmoid(logits), gt, params, weight_map);
    }
    return total;
}

LandmarkPrediction predict_landmarks(const LandmarkPredictor& model, const imaging::ImageTensor& image) {
    const auto& cfg = model->config();
    if (image.height() != cfg.input_size || image.width() != cfg.input_size || image.channels() != 3) {
        throw DimensionError("predict_landmarks: image must be " + std::to_string(cfg.input_size) + "x" +
                             std::to_string(cfg.input_size) + "x3");
    }
    torch::NoGradGuard guard;
    auto outputs = model.ptr()->forward(imaging::to_tensor(image));
    auto heatmaps = torch::sigmoid(outputs.back()).squeeze(0).contiguous();
    HeatmapStack stack{heatmaps};
    return {stack, LandmarkSet(decode_peaks(heatmaps))};
}

}  // namespace unmask::landmarks
