#include <cmath>

#include "unmask/error.hpp"
#include "unmask/inpaint.hpp"

namespace unmask::inpaint {

namespace {

constexpr int kKernel = 4;
constexpr double kEps = 1e-12;
constexpr int kPatchSize = 70;

torch::Tensor l2_normalize(const torch::Tensor& t) {
    return t / (t.norm() + kEps);
}

}  // namespace

SpectralConv2dImpl::SpectralConv2dImpl(int in, int out, int kernel, int stride, int padding, bool normalize)
    : stride_(stride), padding_(padding), normalize_(normalize) {
    weight_ = register_parameter("weight", torch::empty({out, in, kernel, kernel}));
    torch::nn::init::kaiming_uniform_(weight_, std::sqrt(5.0));
    bias_ = register_parameter("bias", torch::zeros({out}));
    u_ = register_buffer("u", l2_normalize(torch::randn({out})));
    v_ = register_buffer("v", l2_normalize(torch::randn({in * kernel * kernel})));
}

void SpectralConv2dImpl::power_iteration(const torch::Tensor& w2d, int iterations) {
    torch::NoGradGuard guard;
    for (int i = 0; i < iterations; ++i) {
        v_.copy_(l2_normalize(torch::mv(w2d.t(), u_)));
        u_.copy_(l2_normalize(torch::mv(w2d, v_)));
    }
}

torch::Tensor SpectralConv2dImpl::normalized_weight(int iterations) {
    auto w2d = weight_.view({weight_.size(0), -1});
    if (!normalize_) return weight_;
    if (iterations > 0) power_iteration(w2d.detach(), iterations);
    // Clones keep later power iterations from invalidating this graph.
    const auto sigma = torch::dot(u_.clone(), torch::mv(w2d, v_.clone()));
    return weight_ / sigma;
}

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
    const auto w = normalized_weight(is_training() ? 1 : 0);
    return torch::conv2d(x, w, bias_, stride_, padding_);
}

void DiscriminatorConfig::validate() const {
    if (input_channels < 1) throw ConfigError("discriminator input_channels must be positive");
    if (layers.empty()) throw ConfigError("discriminator needs at least one conv width");
    for (int w : layers)
        if (w < 1) throw ConfigError("discriminator widths must be positive");
    const int rf = receptive_field(discriminator_layers(*this));
    if (rf != kPatchSize) {
        throw ConfigError("discriminator receptive field is " + std::to_string(rf) + " px, expected " +
                          std::to_string(kPatchSize));
    }
}

nlohmann::json DiscriminatorConfig::to_json() const {
    return {{"input_channels", input_channels}, {"layers", layers}, {"spectral_norm", spectral_norm}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.input_channels = j.at("input_channels").get<int>();
    c.layers = j.at("layers").get<std::vector<int>>();
    c.spectral_norm = j.at("spectral_norm").get<bool>();
    c.validate();
    return c;
}

std::vector<LayerSpec> discriminator_layers(const DiscriminatorConfig& config) {
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const int stride = i + 1 < config.layers.size() ? 2 : 1;
        specs.push_back({kKernel, stride, 1, 1});
    }
    specs.push_back({kKernel, 1, 1, 1});
    return specs;
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : config_(config) {
    config_.validate();
    const auto specs = discriminator_layers(config_);
    int in = config_.input_channels;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const int out = i < config_.layers.size() ? config_.layers[i] : 1;
        convs_.push_back(register_module(
            "conv" + std::to_string(i),
            SpectralConv2d(in, out, specs[i].kernel, specs[i].stride, specs[i].padding, config_.spectral_norm)));
        in = out;
    }
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& input) {
    if (input.dim() != 4 || input.size(1) != config_.input_channels) {
        throw DimensionError("discriminator expects N x " + std::to_string(config_.input_channels) + " x H x W input");
    }
    auto x = input * 2.0 - 1.0;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i]->forward(x);
        if (i + 1 < convs_.size()) x = torch::leaky_relu(x, 0.2);
    }
    return x;
}

Discriminator build_discriminator(const DiscriminatorConfig& config) {
    return Discriminator(config);
}

torch::Tensor discriminate(const Discriminator& discriminator, const torch::Tensor& image,
                           const torch::Tensor& landmark_image) {
    if (image.dim() != 4 || landmark_image.dim() != 4 || image.size(0) != landmark_image.size(0) ||
        image.size(2) != landmark_image.size(2) || image.size(3) != landmark_image.size(3)) {
        throw DimensionError("discriminate: image and landmark image shapes are inconsistent");
    }
    return discriminator.ptr()->forward(torch::cat({image, landmark_image.to(image.dtype())}, 1));
}

}  // namespace unmask::inpaint
