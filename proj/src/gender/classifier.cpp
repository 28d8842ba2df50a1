#include <algorithm>
#include <numeric>
#include <random>

#include "unmask/error.hpp"
#include "unmask/gender.hpp"

namespace unmask::gender {

namespace nn = torch::nn;

SmallCnnBackboneImpl::SmallCnnBackboneImpl(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.empty()) throw ConfigError("small_cnn backbone needs at least one block");
    nn::Sequential body;
    int in = 3;
    for (int w : widths_) {
        if (w < 1) throw ConfigError("small_cnn widths must be positive");
        body->push_back(nn::Conv2d(nn::Conv2dOptions(in, w, 3).stride(2).padding(1)));
        body->push_back(nn::BatchNorm2d(w));
        body->push_back(nn::ReLU());
        in = w;
    }
    body_ = register_module("body", body);
}

torch::Tensor SmallCnnBackboneImpl::forward(const torch::Tensor& images) {
    auto features = body_->forward(images * 2.0 - 1.0);
    return features.mean({2, 3});
}

void GenderClassifierConfig::validate() const {
    if (input_size < 16) throw ConfigError("gender classifier input_size too small");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("gender threshold must lie in (0,1)");
    for (int w : head_layers)
        if (w < 1) throw ConfigError("gender head widths must be positive");
    if (backbone != "small_cnn") throw ConfigError("unknown gender backbone '" + backbone + "'");
}

nlohmann::json GenderClassifierConfig::to_json() const {
    return {{"input_size", input_size},           {"backbone", backbone},
            {"backbone_widths", backbone_widths}, {"freeze_backbone", freeze_backbone},
            {"head_layers", head_layers},         {"threshold", threshold}};
}

GenderClassifierConfig GenderClassifierConfig::from_json(const nlohmann::json& j) {
    GenderClassifierConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.backbone = j.at("backbone").get<std::string>();
    c.backbone_widths = j.at("backbone_widths").get<std::vector<int>>();
    c.freeze_backbone = j.value("freeze_backbone", false);
    c.head_layers = j.at("head_layers").get<std::vector<int>>();
    c.threshold = j.at("threshold").get<double>();
    c.validate();
    return c;
}

GenderClassifierImpl::GenderClassifierImpl(const GenderClassifierConfig& config) : config_(config) {
    config_.validate();
    backbone_ = register_module("backbone", std::make_shared<SmallCnnBackboneImpl>(config_.backbone_widths));
    if (config_.freeze_backbone) {
        for (auto& p : backbone_->parameters()) p.set_requires_grad(false);
    }
    nn::Sequential head;
    int in = backbone_->feature_dim();
    for (int w : config_.head_layers) {
        head->push_back(nn::Linear(in, w));
        head->push_back(nn::ReLU());
        head->push_back(nn::BatchNorm1d(w));
        in = w;
    }
    head_ = register_module("head", head);
    output_ = register_module("output", nn::Linear(in, 1));
    torch::NoGradGuard guard;
    output_->weight.zero_();
    output_->bias.zero_();
}

torch::Tensor GenderClassifierImpl::logits(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.input_size ||
        images.size(3) != config_.input_size) {
        throw DimensionError("gender classifier expects N x 3 x " + std::to_string(config_.input_size) + " x " +
                             std::to_string(config_.input_size));
    }
    auto features = backbone_->forward(images);
    if (!head_->is_empty()) features = head_->forward(features);
    return output_(features);
}

torch::Tensor GenderClassifierImpl::forward(const torch::Tensor& images) {
    return torch::sigmoid(logits(images));
}

std::vector<torch::Tensor> GenderClassifierImpl::trainable_parameters() {
    std::vector<torch::Tensor> out;
    for (auto& p : parameters())
        if (p.requires_grad()) out.push_back(p);
    return out;
}

GenderClassifier build_classifier(const GenderClassifierConfig& config) {
    GenderClassifier model(config);
    model->eval();
    return model;
}

Gender decide(double probability, double threshold) {
    return probability >= threshold ? Gender::male : Gender::female;
}

GenderDecision classify(const GenderClassifier& model, const imaging::ImageTensor& image, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("classify: threshold must lie in (0,1)");
    const int size = model->config().input_size;
    if (image.height() != size || image.width() != size || image.channels() != 3) {
        throw DimensionError("classify: image must be " + std::to_string(size) + "x" + std::to_string(size) + "x3");
    }
    torch::NoGradGuard guard;
    const double p = model.ptr()->forward(imaging::to_tensor(image)).item<double>();
    return {p, decide(p, threshold)};
}

synth::GenderScorer make_scorer(const GenderClassifier& model) {
    return [model](const imaging::ImageTensor& image) {
        const int size = model->config().input_size;
        return classify(model, imaging::resize_bilinear(image, size, size), 0.5).probability;
    };
}

namespace {

torch::Tensor stack_images(const std::vector<LabeledImage>& samples, const std::vector<std::size_t>& idx) {
    std::vector<torch::Tensor> parts;
    parts.reserve(idx.size());
    for (auto i : idx) parts.push_back(imaging::to_tensor(samples[i].image));
    return torch::cat(parts, 0);
}

torch::Tensor stack_labels(const std::vector<LabeledImage>& samples, const std::vector<std::size_t>& idx) {
    std::vector<float> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(samples[i].label == Gender::male ? 1.0f : 0.0f);
    return torch::tensor(y).unsqueeze(1);
}

std::vector<LabeledImage> load_labeled(const synth::Manifest& manifest, int size) {
    std::vector<LabeledImage> out;
    for (const auto& e : manifest.entries) {
        if (!e.gender) throw TrainingError("manifest entry " + e.masked.string() + " has no gender label");
        out.push_back({imaging::load_image(e.masked, size), *e.gender});
    }
    return out;
}

}  // namespace

double accuracy(const GenderClassifier& model, const std::vector<LabeledImage>& samples, double threshold) {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : samples) correct += classify(model, s.image, threshold).label == s.label;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

ClassifierTrainResult train_classifier(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& val,
                                       const GenderClassifierConfig& config, const ClassifierTrainOptions& options) {
    if (train.empty()) throw TrainingError("gender training set is empty");
    const bool has_male = std::any_of(train.begin(), train.end(), [](const auto& s) { return s.label == Gender::male; });
    const bool has_female =
        std::any_of(train.begin(), train.end(), [](const auto& s) { return s.label == Gender::female; });
    if (!has_male || !has_female) throw TrainingError("gender training set contains a single class");
    if (options.epochs < 1 || options.batch_size < 1 || !(options.learning_rate > 0)) {
        throw ConfigError("invalid gender training options");
    }

    torch::manual_seed(options.seed);
    auto model = GenderClassifier(config);
    torch::optim::Adam optimizer(model->trainable_parameters(), torch::optim::AdamOptions(options.learning_rate));
    std::mt19937_64 rng(options.seed);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    ClassifierTrainResult result{model, -1.0, {}, 0.0};
    bool first_batch = true;
    std::vector<torch::Tensor> best_state;

    const auto& evaluation = val.empty() ? train : val;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        model->train();
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            // Batch normalization cannot train on a single sample; fold a
            // trailing singleton into the previous batch instead.
            if (end - start == 1 && start > 0) break;
            if (order.size() - end == 1) end = order.size();
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            if (idx.size() < 2) continue;

            auto x = stack_images(train, idx);
            auto y = stack_labels(train, idx);
            optimizer.zero_grad();
            auto loss = torch::binary_cross_entropy_with_logits(model->logits(x), y);
            if (first_batch) {
                result.first_batch_loss = loss.item<double>();
                first_batch = false;
            }
            loss.backward();
            optimizer.step();
            epoch_loss += loss.item<double>() * static_cast<double>(idx.size());
            seen += idx.size();
            if (end == order.size()) break;
        }
        result.epoch_losses.push_back(seen ? epoch_loss / static_cast<double>(seen) : 0.0);

        model->eval();
        const double acc = accuracy(model, evaluation, config.threshold);
        if (acc > result.best_val_accuracy) {
            result.best_val_accuracy = acc;
            best_state.clear();
            torch::NoGradGuard guard;
            for (const auto& p : model->parameters()) best_state.push_back(p.clone());
            for (const auto& b : model->buffers()) best_state.push_back(b.clone());
        }
    }

    {
        torch::NoGradGuard guard;
        std::size_t k = 0;
        for (auto& p : model->parameters()) p.copy_(best_state[k++]);
        for (auto& b : model->buffers()) b.copy_(best_state[k++]);
    }
    model->eval();
    result.model = model;
    return result;
}

ClassifierTrainResult train_classifier(const synth::Manifest& train, const synth::Manifest& val,
                                       const GenderClassifierConfig& config, const ClassifierTrainOptions& options) {
    return train_classifier(load_labeled(train, config.input_size), load_labeled(val, config.input_size), config,
                            options);
}

}  // namespace unmask::gender
