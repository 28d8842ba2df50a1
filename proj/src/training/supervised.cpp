#include <algorithm>
#include <numeric>
#include <random>

#include "unmask/error.hpp"
#include "unmask/training.hpp"

namespace unmask::training {

namespace {

std::vector<std::int64_t> draw_batch(std::mt19937_64& rng, std::size_t n, std::size_t batch_size) {
    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(n, batch_size));
    return order;
}

}  // namespace

SegmenterRun train_segmenter(const std::vector<SegmentationSample>& samples, const SegmenterTrainConfig& config,
                             std::uint64_t seed) {
    config.validate();
    if (samples.empty()) throw TrainingError("segmenter training set is empty");
    const int size = config.model.input_size;
    std::vector<torch::Tensor> images, masks;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.image.height() != size || s.image.width() != size || s.mask.height() != size || s.mask.width() != size) {
            throw DimensionError("segmenter sample " + std::to_string(i) + " is not " + std::to_string(size) + " px");
        }
        images.push_back(imaging::to_tensor(s.image));
        masks.push_back(imaging::to_tensor(s.mask));
    }
    const auto all_images = torch::cat(images);
    const auto all_masks = torch::cat(masks);

    torch::manual_seed(seed);
    std::mt19937_64 rng(seed);
    SegmenterRun run{segmentation::Segmenter(config.model), {}};
    torch::optim::Adam optimizer(run.model->parameters(), torch::optim::AdamOptions(config.learning_rate));
    run.model->train();
    for (std::int64_t it = 0; it < config.iterations; ++it) {
        const auto idx = torch::tensor(draw_batch(rng, samples.size(), config.batch_size));
        optimizer.zero_grad();
        const auto prob = torch::sigmoid(run.model->forward(all_images.index_select(0, idx)));
        const auto loss = segmentation::segmentation_loss(prob, all_masks.index_select(0, idx));
        loss.backward();
        optimizer.step();
        run.losses.push_back(loss.item<double>());
    }
    run.model->eval();
    return run;
}

SegmenterRun train_segmenter(const synth::Manifest& manifest, const SegmenterTrainConfig& config, std::uint64_t seed) {
    const int size = config.model.input_size;
    std::vector<SegmentationSample> samples;
    for (const auto& e : manifest.entries) {
        if (e.segmap.empty()) throw TrainingError("manifest entry " + e.masked.string() + " has no segmentation map");
        samples.push_back({imaging::load_image(e.masked, size),
                           imaging::resize_nearest(imaging::load_mask_png(e.segmap), size, size)});
    }
    return train_segmenter(samples, config, seed);
}

LandmarkRun train_landmarks(const std::vector<LandmarkSample>& samples, const LandmarkTrainConfig& config,
                            std::uint64_t seed) {
    config.validate();
    if (samples.empty()) throw TrainingError("landmark training set is empty");
    const int size = config.model.input_size;
    std::vector<torch::Tensor> images, targets;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.image.height() != size || s.image.width() != size) {
            throw DimensionError("landmark sample " + std::to_string(i) + " is not " + std::to_string(size) + " px");
        }
        images.push_back(imaging::to_tensor(s.image));
        targets.push_back(
            landmarks::render_heatmaps(s.landmarks, config.model.heatmap_size, config.heatmap_sigma).data.to(torch::kFloat).unsqueeze(0));
    }
    const auto all_images = torch::cat(images);
    const auto all_targets = torch::cat(targets);
    const auto all_weights = landmarks::weighted_loss_map(all_targets);

    torch::manual_seed(seed);
    std::mt19937_64 rng(seed);
    LandmarkRun run{landmarks::LandmarkPredictor(config.model), {}};
    torch::optim::Adam optimizer(run.model->parameters(), torch::optim::AdamOptions(config.learning_rate));
    run.model->train();
    for (std::int64_t it = 0; it < config.iterations; ++it) {
        const auto idx = torch::tensor(draw_batch(rng, samples.size(), config.batch_size));
        optimizer.zero_grad();
        const auto logits = run.model->forward(all_images.index_select(0, idx));
        const auto loss = landmarks::stacked_heatmap_loss(logits, all_targets.index_select(0, idx), config.loss,
                                                          all_weights.index_select(0, idx));
        loss.backward();
        optimizer.step();
        run.losses.push_back(loss.item<double>());
    }
    run.model->eval();
    return run;
}

LandmarkRun train_landmarks(const synth::Manifest& manifest, const LandmarkTrainConfig& config, std::uint64_t seed) {
    const int size = config.model.input_size;
    std::vector<LandmarkSample> samples;
    for (const auto& e : manifest.entries) {
        samples.push_back({imaging::load_image(e.masked, size), landmarks::load_landmarks(e.landmarks)});
    }
    return train_landmarks(samples, config, seed);
}

}  // namespace unmask::training
