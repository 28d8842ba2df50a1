#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "unmask/common.hpp"
#include "unmask/gender.hpp"
#include "unmask/inpaint.hpp"
#include "unmask/landmarks.hpp"
#include "unmask/segmentation.hpp"
#include "unmask/synthdata.hpp"

namespace unmask::training {

// ---------------------------------------------------------------------------
// Key-value configuration files

/// `key = value` lines; `#` starts a comment. Every key must be read by the
/// consumer before `ensure_consumed`, otherwise it is reported as unknown.
class KeyValueConfig {
public:
    KeyValueConfig() = default;
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::int64_t get_int64(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    /// Comma-separated integers.
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    /// Throws ConfigError listing keys nobody asked for.
    void ensure_consumed() const;

private:
    const std::string* lookup(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::string origin_;
    mutable std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// Adversarial training

struct OptimizerConfig {
    double beta1 = 0.0;
    double beta2 = 0.9;
    double lr_generator = 1e-4;
    double lr_discriminator = 1e-5;
    int batch_size = 4;
    std::int64_t iterations = 500000;
    /// Iterations between periodic checkpoints; 0 disables them.
    std::int64_t checkpoint_interval = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static OptimizerConfig from_json(const nlohmann::json& j);
};

struct InpaintTrainingConfig {
    OptimizerConfig optimizer;
    inpaint::LossWeights weights;
    inpaint::GeneratorConfig generator;
    inpaint::DiscriminatorConfig discriminator;
    std::uint64_t extractor_seed = 19;

    void validate() const;
    nlohmann::json to_json() const;
    static InpaintTrainingConfig from_json(const nlohmann::json& j);
};

/// Reads optimizer, loss-weight and network keys (lr_generator,
/// lambda_style, image_size, base_channels, ...) into `config`.
void apply(const KeyValueConfig& kv, InpaintTrainingConfig& config);

/// Paired training tensors: clean and masked N x 3 x S x S, mask and
/// landmark image N x 1 x S x S.
struct TrainingBatch {
    torch::Tensor clean, masked, mask, landmark_image;

    std::int64_t size() const { return clean.defined() ? clean.size(0) : 0; }
};

/// Stacks pairs into a batch; pairs with an empty mask are dropped and
/// reported in `warnings`.
TrainingBatch make_batch(const std::vector<synth::SyntheticPair>& pairs, double landmark_sigma,
                         std::vector<std::string>* warnings = nullptr);

struct StepResult {
    inpaint::LossBreakdown generator;
    double discriminator = 0.0;
};

struct TrainState {
    InpaintTrainingConfig config;
    inpaint::Generator generator{nullptr};
    inpaint::Discriminator discriminator{nullptr};
    std::unique_ptr<torch::optim::Adam> generator_optimizer;
    std::unique_ptr<torch::optim::Adam> discriminator_optimizer;
    std::shared_ptr<inpaint::FeatureExtractor> extractor;
    std::int64_t iteration = 0;
    std::uint64_t seed = 0;
    std::mt19937_64 rng;
    std::optional<Gender> gender;
    std::deque<StepResult> history;

    static constexpr std::size_t kHistoryCapacity = 256;
};

/// Fresh networks and optimizers; parameters are initialised from `seed`.
TrainState make_train_state(const InpaintTrainingConfig& config, std::uint64_t seed,
                            std::optional<Gender> gender = std::nullopt);

/// One discriminator update on the LSGAN objective, then one generator
/// update on the weighted composite loss. Non-finite losses throw
/// NumericError naming the term.
StepResult train_step(TrainState& state, const TrainingBatch& batch);

struct InpaintRunOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const TrainState&, const StepResult&)> on_step;
};

struct InpaintRun {
    TrainState state;
    std::vector<synth::SyntheticPair> pairs;
    std::vector<std::string> warnings;
};

/// Loads the pairs of one gender at the generator's size.
std::vector<synth::SyntheticPair> load_pairs(const synth::Manifest& manifest, int size,
                                             std::vector<std::string>* warnings = nullptr);

/// Trains a gender-specific generator for `config.optimizer.iterations`
/// steps over seeded reshuffles of the filtered manifest.
InpaintRun train_inpainting(const synth::Manifest& manifest, Gender gender, const InpaintTrainingConfig& config,
                            std::uint64_t seed, const InpaintRunOptions& options = {});
/// Same loop over pairs already in memory.
InpaintRun train_inpainting(std::vector<synth::SyntheticPair> pairs, std::optional<Gender> gender,
                            const InpaintTrainingConfig& config, std::uint64_t seed,
                            const InpaintRunOptions& options = {});

/// Runs `steps` more iterations of the shuffled schedule on `state`.
void continue_training(TrainState& state, const std::vector<synth::SyntheticPair>& pairs, std::int64_t steps,
                       const InpaintRunOptions& options = {});

// ---------------------------------------------------------------------------
// Segmenter and landmark training

struct SegmenterTrainConfig {
    segmentation::SegmenterConfig model;
    double learning_rate = 2.5e-4;
    int batch_size = 2;
    std::int64_t iterations = 10000;

    void validate() const;
};
void apply(const KeyValueConfig& kv, SegmenterTrainConfig& config);

struct SegmenterRun {
    segmentation::Segmenter model{nullptr};
    std::vector<double> losses;
};

struct SegmentationSample {
    imaging::ImageTensor image;
    imaging::BinarySegmentationMap mask;
};

SegmenterRun train_segmenter(const std::vector<SegmentationSample>& samples, const SegmenterTrainConfig& config,
                             std::uint64_t seed);
/// Uses the masked images and segmentation maps of every entry.
SegmenterRun train_segmenter(const synth::Manifest& manifest, const SegmenterTrainConfig& config, std::uint64_t seed);

struct LandmarkTrainConfig {
    landmarks::LandmarkPredictorConfig model;
    landmarks::AdaptiveWingParams loss;
    double learning_rate = 1e-3;
    int batch_size = 4;
    std::int64_t iterations = 2000;
    /// Gaussian width of target heatmaps, in heatmap pixels.
    double heatmap_sigma = 1.0;

    void validate() const;
};
void apply(const KeyValueConfig& kv, LandmarkTrainConfig& config);

struct LandmarkSample {
    imaging::ImageTensor image;
    landmarks::LandmarkSet landmarks;
};

struct LandmarkRun {
    landmarks::LandmarkPredictor model{nullptr};
    std::vector<double> losses;
};

LandmarkRun train_landmarks(const std::vector<LandmarkSample>& samples, const LandmarkTrainConfig& config,
                            std::uint64_t seed);
/// Uses the masked images and landmark files of every entry.
LandmarkRun train_landmarks(const synth::Manifest& manifest, const LandmarkTrainConfig& config, std::uint64_t seed);

void apply(const KeyValueConfig& kv, gender::GenderClassifierConfig& model, gender::ClassifierTrainOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints

/// Single-file container: "UNMASKCK", u32 version, u64 header length, JSON
/// header, then little-endian float32 tensor data at the offsets listed in
/// the header.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    torch::Tensor tensor;
};

struct Container {
    nlohmann::json header;
    std::vector<NamedTensor> tensors;

    const torch::Tensor& at(const std::string& name) const;
};

/// Writes through a temporary file and renames it into place.
void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::vector<NamedTensor>& tensors);
/// Validates the whole file before returning; any defect throws CheckpointError.
Container read_container(const std::filesystem::path& path);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Loads the generator of an inpainting checkpoint, requiring its gender tag
/// to match `expected`.
inpaint::Generator load_generator(const std::filesystem::path& path, Gender expected);

void save_segmenter(const segmentation::Segmenter& model, const std::filesystem::path& path);
segmentation::Segmenter load_segmenter(const std::filesystem::path& path);

void save_landmark_predictor(const landmarks::LandmarkPredictor& model, const std::filesystem::path& path);
landmarks::LandmarkPredictor load_landmark_predictor(const std::filesystem::path& path);

void save_gender_classifier(const gender::GenderClassifier& model, const std::filesystem::path& path);
gender::GenderClassifier load_gender_classifier(const std::filesystem::path& path);

}  // namespace unmask::training
