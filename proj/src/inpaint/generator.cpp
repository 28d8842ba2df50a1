#include <algorithm>

#include "unmask/error.hpp"
#include "unmask/inpaint.hpp"

namespace unmask::inpaint {

namespace nn = torch::nn;

int receptive_field(const std::vector<LayerSpec>& layers) {
    long r = 1;
    long jump = 1;
    for (const auto& l : layers) {
        const long k_eff = static_cast<long>(l.dilation) * (l.kernel - 1) + 1;
        r += (k_eff - 1) * jump;
        jump *= l.stride;
    }
    return static_cast<int>(r);
}

int output_size(int input_size, const std::vector<LayerSpec>& layers) {
    int s = input_size;
    for (const auto& l : layers) {
        const int k_eff = l.dilation * (l.kernel - 1) + 1;
        s = (s + 2 * l.padding - k_eff) / l.stride + 1;
        if (s < 1) throw DimensionError("input of " + std::to_string(input_size) + " px collapses to nothing");
    }
    return s;
}

void GeneratorConfig::validate() const {
    if (down_blocks < 1) throw ConfigError("generator needs at least one downsampling block");
    if (dilated_blocks < 1) throw ConfigError("generator needs at least one dilated block");
    if (static_cast<int>(dilation_rates.size()) != dilated_blocks) {
        throw ConfigError("generator: " + std::to_string(dilation_rates.size()) + " dilation rates for " +
                          std::to_string(dilated_blocks) + " dilated blocks");
    }
    for (int r : dilation_rates)
        if (r < 1) throw ConfigError("generator dilation rates must be >= 1");
    if (base_channels < 1 || max_channels < base_channels) throw ConfigError("generator channel widths invalid");
    const int factor = 1 << down_blocks;
    if (input_size % factor != 0 || input_size / factor < 2) {
        throw ConfigError("generator input_size " + std::to_string(input_size) + " incompatible with " +
                          std::to_string(down_blocks) + " downsampling blocks");
    }
    if (!(landmark_sigma > 0)) throw ConfigError("generator landmark_sigma must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
    return {{"input_size", input_size},
            {"down_blocks", down_blocks},
            {"dilated_blocks", dilated_blocks},
            {"dilation_rates", dilation_rates},
            {"base_channels", base_channels},
            {"max_channels", max_channels},
            {"attention", attention},
            {"identity_residual_init", identity_residual_init},
            {"landmark_sigma", landmark_sigma}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.down_blocks = j.at("down_blocks").get<int>();
    c.dilated_blocks = j.at("dilated_blocks").get<int>();
    c.dilation_rates = j.at("dilation_rates").get<std::vector<int>>();
    c.base_channels = j.at("base_channels").get<int>();
    c.max_channels = j.at("max_channels").get<int>();
    c.attention = j.at("attention").get<bool>();
    c.identity_residual_init = j.value("identity_residual_init", false);
    c.landmark_sigma = j.value("landmark_sigma", 1.0);
    c.validate();
    return c;
}

std::vector<LayerSpec> generator_encoder_layers(const GeneratorConfig& config) {
    std::vector<LayerSpec> layers{{7, 1, 1, 3}};
    for (int i = 0; i < config.down_blocks; ++i) layers.push_back({4, 2, 1, 1});
    for (int d : config.dilation_rates) {
        layers.push_back({3, 1, d, d});
        layers.push_back({3, 1, 1, 1});
    }
    return layers;
}

namespace {

nn::InstanceNorm2d instance_norm(int c) {
    return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(false).track_running_stats(false));
}

}  // namespace

DilatedResidualBlockImpl::DilatedResidualBlockImpl(int channels, int dilation, bool identity_init) {
    nn::Conv2d last(nn::Conv2dOptions(channels, channels, 3).padding(1));
    body_ = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(dilation).dilation(dilation)),
                               instance_norm(channels), nn::ReLU(), last, instance_norm(channels)));
    if (identity_init) {
        torch::NoGradGuard guard;
        last->weight.zero_();
        last->bias.zero_();
    }
}

torch::Tensor DilatedResidualBlockImpl::branch(const torch::Tensor& x) {
    return body_->forward(x);
}

torch::Tensor DilatedResidualBlockImpl::forward(const torch::Tensor& x) {
    return x + branch(x);
}

LongShortAttentionImpl::LongShortAttentionImpl(int channels) {
    const int inner = std::max(1, channels / 8);
    query_ = register_module("query", nn::Conv2d(nn::Conv2dOptions(channels, inner, 1)));
    key_ = register_module("key", nn::Conv2d(nn::Conv2dOptions(channels, inner, 1)));
    value_ = register_module("value", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
    short_proj_ = register_module("short_proj", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
    gamma_long_ = register_parameter("gamma_long", torch::zeros({1}));
    gamma_short_ = register_parameter("gamma_short", torch::zeros({1}));
}

torch::Tensor LongShortAttentionImpl::attention_weights(const torch::Tensor& x) {
    const auto n = x.size(0);
    auto q = query_(x).view({n, -1, x.size(2) * x.size(3)});
    auto k = key_(x).view({n, -1, x.size(2) * x.size(3)});
    return torch::softmax(torch::bmm(q.transpose(1, 2), k), -1);
}

torch::Tensor LongShortAttentionImpl::forward(const torch::Tensor& long_features, const torch::Tensor& short_features) {
    if (long_features.sizes() != short_features.sizes()) {
        throw DimensionError("attention: long and short feature maps differ in shape");
    }
    const auto n = long_features.size(0);
    auto attn = attention_weights(long_features);
    auto v = value_(long_features).view({n, long_features.size(1), -1});
    auto attended = torch::bmm(v, attn.transpose(1, 2)).view(long_features.sizes());
    return long_features + gamma_long_ * attended + gamma_short_ * short_proj_(short_features);
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
    config_.validate();
    std::vector<int> widths{std::min(config_.base_channels, config_.max_channels)};
    for (int i = 0; i < config_.down_blocks; ++i) widths.push_back(std::min(widths.back() * 2, config_.max_channels));

    stem_ = register_module("stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(kGeneratorInputChannels, widths[0], 7).padding(3)),
                                                   instance_norm(widths[0]), nn::ReLU()));
    for (int i = 0; i < config_.down_blocks; ++i) {
        down_.push_back(register_module(
            "down" + std::to_string(i),
            nn::Sequential(nn::Conv2d(nn::Conv2dOptions(widths[i], widths[i + 1], 4).stride(2).padding(1)),
                           instance_norm(widths[i + 1]), nn::ReLU())));
    }
    const int bottleneck = widths.back();
    for (int i = 0; i < config_.dilated_blocks; ++i) {
        dilated_.push_back(register_module("dilated" + std::to_string(i),
                                           DilatedResidualBlock(bottleneck, config_.dilation_rates[i],
                                                                config_.identity_residual_init)));
    }
    if (config_.attention) attention_ = register_module("attention", LongShortAttention(bottleneck));
    for (int k = config_.down_blocks; k >= 1; --k) {
        fuse_.push_back(register_module("fuse" + std::to_string(k),
                                        nn::Conv2d(nn::Conv2dOptions(2 * widths[k], widths[k], 1))));
        up_.push_back(register_module(
            "up" + std::to_string(k),
            nn::Sequential(nn::Upsample(nn::UpsampleOptions()
                                            .scale_factor(std::vector<double>{2.0, 2.0})
                                            .mode(torch::kNearest)),
                           nn::Conv2d(nn::Conv2dOptions(widths[k], widths[k - 1], 3).padding(1)),
                           instance_norm(widths[k - 1]), nn::ReLU())));
    }
    head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(widths[0], 3, 7).padding(3)));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& input) {
    if (input.dim() != 4 || input.size(1) != kGeneratorInputChannels || input.size(2) != config_.input_size ||
        input.size(3) != config_.input_size) {
        throw DimensionError("generator expects N x 5 x " + std::to_string(config_.input_size) + " x " +
                             std::to_string(config_.input_size) + " input");
    }
    std::vector<torch::Tensor> shortcuts;
    auto x = stem_->forward(input);
    for (auto& d : down_) {
        x = d->forward(x);
        shortcuts.push_back(x);
    }
    const auto pre_dilation = x;
    for (auto& block : dilated_) x = block->forward(x);
    if (attention_) x = attention_->forward(x, pre_dilation);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        const auto& skip = shortcuts[shortcuts.size() - 1 - i];
        x = fuse_[i]->forward(torch::cat({skip, x}, 1));
        x = up_[i]->forward(x);
    }
    return (torch::tanh(head_(x)) + 1.0) * 0.5;
}

Generator build_generator(const GeneratorConfig& config) {
    return Generator(config);
}

torch::Tensor assemble_input(const torch::Tensor& ground, const torch::Tensor& landmark_image,
                             const torch::Tensor& mask) {
    if (ground.dim() != 4 || ground.size(1) != 3) throw DimensionError("assemble_input: ground must be N x 3 x S x S");
    const auto n = ground.size(0), h = ground.size(2), w = ground.size(3);
    auto check = [&](const torch::Tensor& t, const char* what) {
        if (t.dim() != 4 || t.size(0) != n || t.size(1) != 1 || t.size(2) != h || t.size(3) != w) {
            throw DimensionError(std::string("assemble_input: ") + what + " must be N x 1 x H x W matching the image");
        }
    };
    check(landmark_image, "landmark image");
    check(mask, "mask");
    auto visible = ground * (1.0 - mask) * 2.0 - 1.0;
    return torch::cat({visible, landmark_image.to(ground.dtype()), mask.to(ground.dtype())}, 1);
}

ImageTensor generate(const Generator& generator, const ImageTensor& ground, const torch::Tensor& landmark_image,
                     const BinarySegmentationMap& mask) {
    if (ground.channels() != 3) throw DimensionError("generate: ground image must have 3 channels");
    if (mask.height() != ground.height() || mask.width() != ground.width()) {
        throw DimensionError("generate: mask and image sizes differ");
    }
    torch::NoGradGuard guard;
    auto input = assemble_input(imaging::to_tensor(ground), landmark_image, imaging::to_tensor(mask));
    return imaging::image_from_tensor(generator.ptr()->forward(input));
}

ImageTensor generate(const Generator& generator, const ImageTensor& ground, const landmarks::LandmarkSet& lms,
                     const BinarySegmentationMap& mask) {
    return generate(generator, ground,
                    landmarks::render_landmark_image(lms, ground.height(), generator->config().landmark_sigma), mask);
}

}  // namespace unmask::inpaint
