#include <algorithm>
#include <cmath>
#include <numeric>

#include "unmask/error.hpp"
#include "unmask/training.hpp"

namespace unmask::training {

TrainingBatch make_batch(const std::vector<synth::SyntheticPair>& pairs, double landmark_sigma,
                         std::vector<std::string>* warnings) {
    std::vector<torch::Tensor> clean, masked, mask, lm;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.segmap.mask_pixel_count() == 0) {
            if (warnings) warnings->push_back("pair " + std::to_string(i) + " has an empty mask; skipped");
            continue;
        }
        if (!p.clean.same_shape(p.masked) || p.segmap.height() != p.clean.height() ||
            p.segmap.width() != p.clean.width()) {
            throw DimensionError("pair " + std::to_string(i) + ": clean, masked and segmap sizes differ");
        }
        clean.push_back(imaging::to_tensor(p.clean));
        masked.push_back(imaging::to_tensor(p.masked));
        mask.push_back(imaging::to_tensor(p.segmap));
        lm.push_back(landmarks::render_landmark_image(p.landmarks, p.clean.height(), landmark_sigma));
    }
    if (clean.empty()) return {};
    return {torch::cat(clean), torch::cat(masked), torch::cat(mask), torch::cat(lm)};
}

TrainState make_train_state(const InpaintTrainingConfig& config, std::uint64_t seed, std::optional<Gender> gender) {
    config.validate();
    TrainState state;
    state.config = config;
    state.seed = seed;
    state.rng.seed(seed);
    state.gender = gender;
    torch::manual_seed(seed);
    state.generator = inpaint::build_generator(config.generator);
    state.discriminator = inpaint::build_discriminator(config.discriminator);
    const auto& o = config.optimizer;
    state.generator_optimizer = std::make_unique<torch::optim::Adam>(
        state.generator->parameters(), torch::optim::AdamOptions(o.lr_generator).betas({o.beta1, o.beta2}));
    state.discriminator_optimizer = std::make_unique<torch::optim::Adam>(
        state.discriminator->parameters(), torch::optim::AdamOptions(o.lr_discriminator).betas({o.beta1, o.beta2}));
    state.extractor = std::make_shared<inpaint::RandomConvExtractor>(config.extractor_seed);
    return state;
}

StepResult train_step(TrainState& state, const TrainingBatch& batch) {
    if (batch.size() == 0) throw TrainingError("train_step: empty batch");
    auto& G = state.generator;
    auto& D = state.discriminator;
    G->train();
    D->train();

    const auto input = inpaint::assemble_input(batch.masked, batch.landmark_image, batch.mask);
    const auto pred = G->forward(input);

    StepResult result;
    state.discriminator_optimizer->zero_grad();
    const auto loss_d = inpaint::lsgan_discriminator_loss(inpaint::discriminate(D, pred.detach(), batch.landmark_image),
                                                          inpaint::discriminate(D, batch.clean, batch.landmark_image));
    result.discriminator = loss_d.item<double>();
    if (!std::isfinite(result.discriminator)) throw NumericError("discriminator loss is not finite");
    loss_d.backward();
    state.discriminator_optimizer->step();

    state.generator_optimizer->zero_grad();
    const auto& extractor = *state.extractor;
    inpaint::LossParts parts{
        inpaint::pixel_loss(pred, batch.clean, batch.mask),
        inpaint::perceptual_loss(pred, batch.clean, extractor),
        inpaint::style_loss(pred, batch.clean, batch.mask, extractor),
        inpaint::tv_loss(pred),
        inpaint::lsgan_generator_loss(inpaint::discriminate(D, pred, batch.landmark_image)),
    };
    result.generator = inpaint::total_loss(parts, state.config.weights);
    result.generator.total.backward();
    state.generator_optimizer->step();

    ++state.iteration;
    state.history.push_back(result);
    if (state.history.size() > TrainState::kHistoryCapacity) state.history.pop_front();
    return result;
}

std::vector<synth::SyntheticPair> load_pairs(const synth::Manifest& manifest, int size,
                                             std::vector<std::string>* warnings) {
    std::vector<synth::SyntheticPair> pairs;
    for (const auto& e : manifest.entries) {
        auto segmap = imaging::resize_nearest(imaging::load_mask_png(e.segmap), size, size);
        if (segmap.mask_pixel_count() == 0) {
            if (warnings) warnings->push_back(e.masked.string() + ": empty mask, skipped");
            continue;
        }
        pairs.push_back({imaging::load_image(e.clean, size), imaging::load_image(e.masked, size), std::move(segmap),
                         landmarks::load_landmarks(e.landmarks), e.gender});
    }
    return pairs;
}

void continue_training(TrainState& state, const std::vector<synth::SyntheticPair>& pairs, std::int64_t steps,
                       const InpaintRunOptions& options) {
    const auto all = make_batch(pairs, state.config.generator.landmark_sigma);
    if (all.size() == 0) throw TrainingError("no usable training pairs");
    const auto n = static_cast<std::size_t>(all.size());
    const auto batch_size = std::min<std::size_t>(n, static_cast<std::size_t>(state.config.optimizer.batch_size));
    const auto interval = state.config.optimizer.checkpoint_interval;

    std::vector<std::int64_t> order(n);
    for (std::int64_t s = 0; s < steps; ++s) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), state.rng);
        const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin(), order.begin() + batch_size));
        const TrainingBatch batch{all.clean.index_select(0, idx), all.masked.index_select(0, idx),
                                  all.mask.index_select(0, idx), all.landmark_image.index_select(0, idx)};
        const auto result = train_step(state, batch);
        if (options.on_step) options.on_step(state, result);
        if (options.checkpoint_dir && interval > 0 && state.iteration % interval == 0) {
            save_checkpoint(state, *options.checkpoint_dir / "latest.ckpt");
        }
    }
}

InpaintRun train_inpainting(std::vector<synth::SyntheticPair> pairs, std::optional<Gender> gender,
                            const InpaintTrainingConfig& config, std::uint64_t seed, const InpaintRunOptions& options) {
    InpaintRun run{make_train_state(config, seed, gender), {}, {}};
    const int size = config.generator.input_size;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].clean.height() != size || pairs[i].clean.width() != size) {
            throw DimensionError("pair " + std::to_string(i) + " is not " + std::to_string(size) + " px square");
        }
        if (pairs[i].segmap.mask_pixel_count() == 0) {
            run.warnings.push_back("pair " + std::to_string(i) + " has an empty mask; skipped");
            continue;
        }
        run.pairs.push_back(std::move(pairs[i]));
    }
    if (run.pairs.empty()) throw TrainingError("no usable inpainting training pairs");
    if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);
    continue_training(run.state, run.pairs, config.optimizer.iterations, options);
    return run;
}

InpaintRun train_inpainting(const synth::Manifest& manifest, Gender gender, const InpaintTrainingConfig& config,
                            std::uint64_t seed, const InpaintRunOptions& options) {
    const auto filtered = manifest.filter(gender);
    if (filtered.entries.empty()) {
        throw TrainingError("manifest has no " + std::string(to_string(gender)) + " entries");
    }
    std::vector<std::string> warnings;
    auto pairs = load_pairs(filtered, config.generator.input_size, &warnings);
    auto run = train_inpainting(std::move(pairs), gender, config, seed, options);
    run.warnings.insert(run.warnings.begin(), warnings.begin(), warnings.end());
    return run;
}

}  // namespace unmask::training
