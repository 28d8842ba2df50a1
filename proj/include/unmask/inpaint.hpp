#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "unmask/imaging.hpp"
#include "unmask/landmarks.hpp"

namespace unmask::inpaint {

using imaging::BinarySegmentationMap;
using imaging::ImageTensor;

/// Image, landmark image and mask channels.
inline constexpr int kGeneratorInputChannels = 5;
/// Image and landmark image channels.
inline constexpr int kDiscriminatorInputChannels = 4;

// ---------------------------------------------------------------------------
// Receptive-field arithmetic

struct LayerSpec {
    int kernel = 1;
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

/// Standard recurrence r += (k_eff - 1) * jump, jump *= stride.
int receptive_field(const std::vector<LayerSpec>& layers);

/// Spatial output size of a conv stack on a square input.
int output_size(int input_size, const std::vector<LayerSpec>& layers);

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
    int input_size = 256;
    int down_blocks = 3;
    int dilated_blocks = 7;
    std::vector<int> dilation_rates{2, 4, 8, 2, 4, 8, 2};
    int base_channels = 64;
    int max_channels = 256;
    bool attention = true;
    /// Zero the last conv of every residual branch so each dilated block
    /// starts as the identity.
    bool identity_residual_init = false;
    /// Gaussian width of the rendered landmark channel, in pixels.
    double landmark_sigma = 1.0;

    void validate() const;
    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Layers on the encoder path up to the end of the dilated stack.
std::vector<LayerSpec> generator_encoder_layers(const GeneratorConfig& config);

class DilatedResidualBlockImpl : public torch::nn::Module {
public:
    DilatedResidualBlockImpl(int channels, int dilation, bool identity_init);
    torch::Tensor forward(const torch::Tensor& x);
    /// The residual branch alone.
    torch::Tensor branch(const torch::Tensor& x);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DilatedResidualBlock);

/// Spatial self-attention over the dilated features, gated by a learned
/// scalar, plus a second gated path that re-injects the pre-dilation
/// features. Both gates start at zero.
class LongShortAttentionImpl : public torch::nn::Module {
public:
    explicit LongShortAttentionImpl(int channels);

    torch::Tensor forward(const torch::Tensor& long_features, const torch::Tensor& short_features);
    /// N x HW x HW row-stochastic attention matrix.
    torch::Tensor attention_weights(const torch::Tensor& long_features);

    torch::Tensor long_gate() const { return gamma_long_; }
    torch::Tensor short_gate() const { return gamma_short_; }

private:
    torch::nn::Conv2d query_{nullptr}, key_{nullptr}, value_{nullptr}, short_proj_{nullptr};
    torch::Tensor gamma_long_, gamma_short_;
};
TORCH_MODULE(LongShortAttention);

class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const GeneratorConfig& config);

    /// N x 5 x S x S in [-1,1] / {0,1} -> N x 3 x S x S in [0,1].
    torch::Tensor forward(const torch::Tensor& input);

    const GeneratorConfig& config() const { return config_; }

private:
    GeneratorConfig config_;
    torch::nn::Sequential stem_{nullptr};
    std::vector<torch::nn::Sequential> down_;
    std::vector<DilatedResidualBlock> dilated_;
    LongShortAttention attention_{nullptr};
    std::vector<torch::nn::Conv2d> fuse_;
    std::vector<torch::nn::Sequential> up_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

/// Throws ConfigError on invalid configs.
Generator build_generator(const GeneratorConfig& config);

/// Concatenates [ground*(1-mask) in [-1,1]; landmark image; mask] into the
/// N x 5 x S x S generator input. ground is N x 3 x S x S in [0,1], landmark
/// and mask are N x 1 x S x S.
torch::Tensor assemble_input(const torch::Tensor& ground, const torch::Tensor& landmark_image,
                             const torch::Tensor& mask);

/// Full-frame prediction for a single image. The landmark image is 1 x 1 x S x S.
ImageTensor generate(const Generator& generator, const ImageTensor& ground, const torch::Tensor& landmark_image,
                     const BinarySegmentationMap& mask);
ImageTensor generate(const Generator& generator, const ImageTensor& ground, const landmarks::LandmarkSet& lms,
                     const BinarySegmentationMap& mask);

// ---------------------------------------------------------------------------
// Discriminator

/// Conv with spectrally normalised weight. The normalisation estimate is
/// refined by one power iteration per training-mode forward.
class SpectralConv2dImpl : public torch::nn::Module {
public:
    SpectralConv2dImpl(int in, int out, int kernel, int stride, int padding, bool normalize);

    torch::Tensor forward(const torch::Tensor& x);
    /// Runs `iterations` power iterations (updating the stored vectors) and
    /// returns the weight divided by the resulting sigma estimate.
    torch::Tensor normalized_weight(int iterations = 0);

private:
    void power_iteration(const torch::Tensor& w2d, int iterations);

    int stride_, padding_;
    bool normalize_;
    torch::Tensor weight_, bias_, u_, v_;
};
TORCH_MODULE(SpectralConv2d);

struct DiscriminatorConfig {
    int input_channels = kDiscriminatorInputChannels;
    std::vector<int> layers{64, 128, 256, 512};
    bool spectral_norm = true;

    /// Requires a 70-pixel receptive field.
    void validate() const;
    nlohmann::json to_json() const;
    static DiscriminatorConfig from_json(const nlohmann::json& j);
};

/// 4x4 convs: stride 2 for all but the last width, then stride 1, then a
/// stride-1 score conv.
std::vector<LayerSpec> discriminator_layers(const DiscriminatorConfig& config);

class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const DiscriminatorConfig& config);

    /// N x C x S x S -> N x 1 x s x s raw scores.
    torch::Tensor forward(const torch::Tensor& input);

    const DiscriminatorConfig& config() const { return config_; }
    std::vector<SpectralConv2d> convs() const { return convs_; }

private:
    DiscriminatorConfig config_;
    std::vector<SpectralConv2d> convs_;
};
TORCH_MODULE(Discriminator);

Discriminator build_discriminator(const DiscriminatorConfig& config);

/// Scores an image (N x 3 x S x S, [0,1]) with its landmark image (N x 1 x S x S).
torch::Tensor discriminate(const Discriminator& discriminator, const torch::Tensor& image,
                           const torch::Tensor& landmark_image);

// ---------------------------------------------------------------------------
// Feature extractors

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    /// Ordered taps for an N x 3 x H x W batch.
    virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
    virtual std::size_t tap_count() const = 0;
    virtual void to(torch::Dtype dtype) = 0;
};

/// Frozen strided CNN with fixed-seed weights; five ReLU taps by default.
class RandomConvExtractor : public FeatureExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 19, std::vector<int> widths = {16, 32, 64, 64, 64});

    std::vector<torch::Tensor> features(const torch::Tensor& images) const override;
    std::size_t tap_count() const override { return weights_.size(); }
    void to(torch::Dtype dtype) override;

private:
    std::vector<torch::Tensor> weights_;
};

/// A single tap returning the input unchanged.
class IdentityExtractor : public FeatureExtractor {
public:
    std::vector<torch::Tensor> features(const torch::Tensor& images) const override { return {images}; }
    std::size_t tap_count() const override { return 1; }
    void to(torch::Dtype) override {}
};

// ---------------------------------------------------------------------------
// Losses. All take N x C x H x W tensors and work in any floating dtype.

/// N x C x H x W -> N x C x C, normalised by C*H*W.
torch::Tensor gram(const torch::Tensor& features);

torch::Tensor style_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         const FeatureExtractor& extractor);

/// Full-frame l1 divided by masked-pixel count times channels, averaged
/// over the batch. An empty mask in any sample throws DegenerateMaskError.
torch::Tensor pixel_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& gt, const FeatureExtractor& extractor);

/// Forward differences without wraparound, divided by the element count.
torch::Tensor tv_loss(const torch::Tensor& image);

/// Least-squares terms on score maps.
torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_scores);
torch::Tensor lsgan_discriminator_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores);

struct AdversarialLosses {
    torch::Tensor generator;
    torch::Tensor discriminator;
};

/// The discriminator term sees a detached prediction.
AdversarialLosses adversarial_losses(const Discriminator& discriminator, const torch::Tensor& pred,
                                     const torch::Tensor& gt, const torch::Tensor& landmark_image);

struct LossWeights {
    double perceptual = 0.1;
    double style = 250.0;
    double tv = 0.1;
    double adversarial = 0.01;

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

struct LossParts {
    torch::Tensor pixel, perceptual, style, tv, adversarial;
};

struct LossBreakdown {
    torch::Tensor total;
    double pixel = 0, perceptual = 0, style = 0, tv = 0, adversarial = 0;
    /// Weighted sum of the scalar values, compensated summation.
    double total_value = 0;

    nlohmann::json to_json() const;
};

/// Throws NumericError naming the first non-finite term.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace unmask::inpaint
