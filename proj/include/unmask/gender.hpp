#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "unmask/common.hpp"
#include "unmask/imaging.hpp"
#include "unmask/synthdata.hpp"

namespace unmask::gender {

/// Images map to a fixed-length feature vector. A pretrained network can be
/// plugged in behind this interface; when `frozen` its parameters are
/// excluded from training.
class BackboneImpl : public torch::nn::Module {
public:
    virtual torch::Tensor forward(const torch::Tensor& images) = 0;
    virtual int feature_dim() const = 0;
};

/// Four stride-2 conv blocks (32 -> 256 channels by default) and global
/// average pooling.
class SmallCnnBackboneImpl : public BackboneImpl {
public:
    explicit SmallCnnBackboneImpl(std::vector<int> widths);
    torch::Tensor forward(const torch::Tensor& images) override;
    int feature_dim() const override { return widths_.back(); }

private:
    std::vector<int> widths_;
    torch::nn::Sequential body_{nullptr};
};

struct GenderClassifierConfig {
    int input_size = 256;
    std::string backbone = "small_cnn";
    std::vector<int> backbone_widths{32, 64, 128, 256};
    bool freeze_backbone = false;
    std::vector<int> head_layers{256, 64};
    double threshold = 0.5;

    void validate() const;
    nlohmann::json to_json() const;
    static GenderClassifierConfig from_json(const nlohmann::json& j);
};

/// Backbone -> [Linear -> ReLU -> BatchNorm] per hidden width -> Linear(1) -> sigmoid.
/// The output unit is p(male).
class GenderClassifierImpl : public torch::nn::Module {
public:
    explicit GenderClassifierImpl(const GenderClassifierConfig& config);

    /// N x 1 logits.
    torch::Tensor logits(const torch::Tensor& images);
    /// N x 1 probabilities in (0,1).
    torch::Tensor forward(const torch::Tensor& images);

    const GenderClassifierConfig& config() const { return config_; }
    torch::nn::Linear output_layer() const { return output_; }
    std::vector<torch::Tensor> trainable_parameters();

private:
    GenderClassifierConfig config_;
    std::shared_ptr<BackboneImpl> backbone_;
    torch::nn::Sequential head_{nullptr};
    torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(GenderClassifier);

/// Builds the classifier; unknown backbone ids throw ConfigError. The output
/// layer starts at zero so an untrained model answers exactly 0.5.
GenderClassifier build_classifier(const GenderClassifierConfig& config);

struct GenderDecision {
    double probability;
    Gender label;
};

/// male iff p >= threshold.
Gender decide(double probability, double threshold);

/// Inference-mode probability and label for a single image of input_size.
GenderDecision classify(const GenderClassifier& model, const imaging::ImageTensor& image,
                        double threshold = 0.5);

/// Adapts a classifier for split_by_gender; images are resized to the
/// classifier's input size first.
synth::GenderScorer make_scorer(const GenderClassifier& model);

struct LabeledImage {
    imaging::ImageTensor image;
    Gender label;
};

struct ClassifierTrainOptions {
    int epochs = 150;
    int batch_size = 256;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
};

struct ClassifierTrainResult {
    GenderClassifier model;
    double best_val_accuracy;
    std::vector<double> epoch_losses;
    double first_batch_loss;
};

/// Adam on binary cross-entropy; returns the weights of the best validation
/// epoch. A training set with a single class throws TrainingError.
ClassifierTrainResult train_classifier(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& val,
                                       const GenderClassifierConfig& config, const ClassifierTrainOptions& options);

/// Manifest variant: trains on the masked images of labeled entries.
ClassifierTrainResult train_classifier(const synth::Manifest& train, const synth::Manifest& val,
                                       const GenderClassifierConfig& config, const ClassifierTrainOptions& options);

double accuracy(const GenderClassifier& model, const std::vector<LabeledImage>& samples, double threshold = 0.5);

}  // namespace unmask::gender
