#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "unmask/error.hpp"
#include "unmask/inpaint.hpp"

namespace unmask::inpaint {

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::vector<int> widths) {
    if (widths.size() < 2) throw ConfigError("feature extractor needs at least two taps");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    int in = 3;
    for (int w : widths) {
        if (w < 1) throw ConfigError("feature extractor widths must be positive");
        // He-scaled so activations keep their magnitude through the stack.
        auto weight = torch::randn({w, in, 3, 3}, gen, torch::kFloat) * std::sqrt(2.0 / (in * 9));
        weights_.push_back(weight);
        in = w;
    }
}

std::vector<torch::Tensor> RandomConvExtractor::features(const torch::Tensor& images) const {
    std::vector<torch::Tensor> taps;
    auto x = images * 2.0 - 1.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const int stride = i == 0 ? 1 : 2;
        x = torch::relu(torch::conv2d(x, weights_[i].to(x.dtype()), {}, stride, 1));
        taps.push_back(x);
    }
    return taps;
}

void RandomConvExtractor::to(torch::Dtype dtype) {
    for (auto& w : weights_) w = w.to(dtype);
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) throw DimensionError(std::string(what) + ": operand shapes differ");
}

void require_mask(const torch::Tensor& image, const torch::Tensor& mask, const char* what) {
    if (image.dim() != 4 || mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != image.size(0) ||
        mask.size(2) != image.size(2) || mask.size(3) != image.size(3)) {
        throw DimensionError(std::string(what) + ": mask must be N x 1 x H x W matching the image");
    }
}

}  // namespace

torch::Tensor gram(const torch::Tensor& features) {
    if (features.dim() != 4) throw DimensionError("gram: features must be N x C x H x W");
    const auto n = features.size(0), c = features.size(1), h = features.size(2), w = features.size(3);
    auto f = features.reshape({n, c, h * w});
    return torch::bmm(f, f.transpose(1, 2)) / static_cast<double>(c * h * w);
}

torch::Tensor style_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         const FeatureExtractor& extractor) {
    require_same_shape(pred, gt, "style_loss");
    require_mask(pred, mask, "style_loss");
    const auto fp = extractor.features(pred * mask);
    const auto fg = extractor.features(gt * mask);
    auto total = torch::zeros({}, pred.options());
    for (std::size_t i = 0; i < fp.size(); ++i) total = total + (gram(fp[i]) - gram(fg[i])).abs().mean();
    return total;
}

torch::Tensor pixel_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
    require_same_shape(pred, gt, "pixel_loss");
    require_mask(pred, mask, "pixel_loss");
    const auto counts = mask.sum({1, 2, 3});
    if ((counts <= 0).any().item<bool>()) throw DegenerateMaskError("pixel_loss: mask has no pixels");
    const auto l1 = (pred - gt).abs().sum({1, 2, 3});
    return (l1 / (counts * static_cast<double>(pred.size(1)))).mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& gt, const FeatureExtractor& extractor) {
    require_same_shape(pred, gt, "perceptual_loss");
    const auto fp = extractor.features(pred);
    const auto fg = extractor.features(gt);
    auto total = torch::zeros({}, pred.options());
    for (std::size_t i = 0; i < fp.size(); ++i) total = total + (fp[i] - fg[i]).abs().mean();
    return total;
}

torch::Tensor tv_loss(const torch::Tensor& image) {
    if (image.dim() != 4) throw DimensionError("tv_loss: image must be N x C x H x W");
    using torch::indexing::None;
    using torch::indexing::Slice;
    const auto dh = image.index({Slice(), Slice(), Slice(), Slice(1, None)}) -
                    image.index({Slice(), Slice(), Slice(), Slice(None, -1)});
    const auto dv = image.index({Slice(), Slice(), Slice(1, None), Slice()}) -
                    image.index({Slice(), Slice(), Slice(None, -1), Slice()});
    return (dh.abs().sum() + dv.abs().sum()) / static_cast<double>(image.numel());
}

torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_scores) {
    return (fake_scores - 1.0).pow(2).mean();
}

torch::Tensor lsgan_discriminator_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores) {
    return fake_scores.pow(2).mean() + (real_scores - 1.0).pow(2).mean();
}

AdversarialLosses adversarial_losses(const Discriminator& discriminator, const torch::Tensor& pred,
                                     const torch::Tensor& gt, const torch::Tensor& landmark_image) {
    require_same_shape(pred, gt, "adversarial_losses");
    const auto fake = discriminate(discriminator, pred, landmark_image);
    const auto fake_detached = discriminate(discriminator, pred.detach(), landmark_image);
    const auto real = discriminate(discriminator, gt, landmark_image);
    return {lsgan_generator_loss(fake), lsgan_discriminator_loss(fake_detached, real)};
}

void LossWeights::validate() const {
    for (double w : {perceptual, style, tv, adversarial}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    }
}

nlohmann::json LossWeights::to_json() const {
    return {{"perceptual", perceptual}, {"style", style}, {"tv", tv}, {"adversarial", adversarial}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    w.perceptual = j.at("perceptual").get<double>();
    w.style = j.at("style").get<double>();
    w.tv = j.at("tv").get<double>();
    w.adversarial = j.at("adversarial").get<double>();
    w.validate();
    return w;
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"pixel", pixel},
            {"perceptual", perceptual},
            {"style", style},
            {"tv", tv},
            {"adversarial", adversarial},
            {"total", total_value}};
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights) {
    weights.validate();
    LossBreakdown out;
    const std::pair<const char*, const torch::Tensor*> named[] = {{"pixel", &parts.pixel},
                                                                  {"perceptual", &parts.perceptual},
                                                                  {"style", &parts.style},
                                                                  {"tv", &parts.tv},
                                                                  {"adversarial", &parts.adversarial}};
    double* slots[] = {&out.pixel, &out.perceptual, &out.style, &out.tv, &out.adversarial};
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& t = *named[i].second;
        if (!t.defined() || t.numel() != 1) throw DimensionError(std::string(named[i].first) + " loss must be a scalar");
        const double v = t.item<double>();
        if (!std::isfinite(v)) throw NumericError(std::string(named[i].first) + " loss is not finite");
        *slots[i] = v;
    }

    const double terms[] = {out.pixel, weights.perceptual * out.perceptual, weights.style * out.style,
                            weights.tv * out.tv, weights.adversarial * out.adversarial};
    // Neumaier summation keeps the reported total independent of term order.
    double sum = 0.0, comp = 0.0;
    for (double t : terms) {
        const double s = sum + t;
        comp += std::abs(sum) >= std::abs(t) ? (sum - s) + t : (t - s) + sum;
        sum = s;
    }
    out.total_value = sum + comp;

    out.total = parts.pixel + weights.perceptual * parts.perceptual + weights.style * parts.style +
                weights.tv * parts.tv + weights.adversarial * parts.adversarial;
    return out;
}

}  // namespace unmask::inpaint
