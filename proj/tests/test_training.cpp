#include <fstream>
#include <functional>

#include "testing.hpp"
#include "support.hpp"
#include "unmask/error.hpp"
#include "unmask/training.hpp"

using namespace unmask;
using namespace unmask::training;
using test_support::TempDir;

namespace {

InpaintTrainingConfig small_config() {
    InpaintTrainingConfig cfg;
    cfg.generator.input_size = 64;
    cfg.generator.base_channels = 8;
    cfg.generator.max_channels = 32;
    cfg.discriminator.layers = {8, 16, 32, 64};
    cfg.optimizer.batch_size = 2;
    cfg.optimizer.iterations = 3;
    return cfg;
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool unchanged(const torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
    const auto now = m.parameters();
    for (std::size_t i = 0; i < now.size(); ++i)
        if (!torch::equal(now[i], before[i])) return false;
    return true;
}

void flip_byte(const std::filesystem::path& p, std::size_t offset, char value) {
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(static_cast<std::streamoff>(offset));
    f.put(value);
}

}  // namespace

TEST_CASE("key-value config parsing") {
    const auto kv = KeyValueConfig::parse("# desk run\nlr_generator = 2e-4\nbatch_size=8\ndilation_rates = 1,2,4\n"
                                          "attention = false\n");
    InpaintTrainingConfig cfg;
    apply(kv, cfg);
    kv.ensure_consumed();
    CHECK(cfg.optimizer.lr_generator == 2e-4);
    CHECK(cfg.optimizer.batch_size == 8);
    CHECK(cfg.generator.dilation_rates == std::vector<int>({1, 2, 4}));
    CHECK(cfg.generator.dilated_blocks == 3);
    CHECK_FALSE(cfg.generator.attention);

    const auto typo = KeyValueConfig::parse("lr_generater = 1e-4\n");
    apply(typo, cfg);
    CHECK_THROWS_AS(typo.ensure_consumed(), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse("no separator\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse("batch_size = eight\n").get_int("batch_size", 1), ConfigError);
}

TEST_CASE("default optimizer settings") {
    const OptimizerConfig opt;
    CHECK(opt.beta1 == 0.0);
    CHECK(opt.beta2 == 0.9);
    CHECK(opt.lr_generator == 1e-4);
    CHECK(opt.lr_discriminator == 1e-5);
    CHECK(opt.batch_size == 4);
    CHECK(opt.iterations == 500000);
}

TEST_CASE("zero learning rates leave both networks unchanged") {
    auto cfg = small_config();
    cfg.optimizer.lr_generator = 0.0;
    cfg.optimizer.lr_discriminator = 0.0;
    auto state = make_train_state(cfg, 1);
    const auto batch = make_batch(test_support::make_pairs(2, 64, 1), cfg.generator.landmark_sigma);
    const auto g0 = snapshot(*state.generator);
    const auto d0 = snapshot(*state.discriminator);
    train_step(state, batch);
    train_step(state, batch);
    CHECK(unchanged(*state.generator, g0));
    CHECK(unchanged(*state.discriminator, d0));
    CHECK(state.iteration == 2);
}

TEST_CASE("each update touches only its own network") {
    const auto pairs = test_support::make_pairs(2, 64, 2);
    {
        auto cfg = small_config();
        cfg.optimizer.lr_generator = 0.0;
        auto state = make_train_state(cfg, 2);
        const auto g0 = snapshot(*state.generator);
        const auto d0 = snapshot(*state.discriminator);
        train_step(state, make_batch(pairs, 1.0));
        CHECK(unchanged(*state.generator, g0));
        CHECK_FALSE(unchanged(*state.discriminator, d0));
    }
    {
        auto cfg = small_config();
        cfg.optimizer.lr_discriminator = 0.0;
        auto state = make_train_state(cfg, 2);
        const auto g0 = snapshot(*state.generator);
        const auto d0 = snapshot(*state.discriminator);
        train_step(state, make_batch(pairs, 1.0));
        CHECK_FALSE(unchanged(*state.generator, g0));
        CHECK(unchanged(*state.discriminator, d0));
    }
}

TEST_CASE("single pair overfit lowers the pixel loss") {
    auto cfg = small_config();
    cfg.optimizer.iterations = 200;
    cfg.optimizer.batch_size = 1;
    std::vector<double> pixel;
    InpaintRunOptions opt;
    opt.on_step = [&](const TrainState&, const StepResult& r) { pixel.push_back(r.generator.pixel); };
    train_inpainting(test_support::make_pairs(1, 64, 3), std::nullopt, cfg, 3, opt);
    REQUIRE(pixel.size() == 200);
    CHECK(pixel.back() < pixel.front());
}

TEST_CASE("same seed gives the same loss trajectory") {
    const auto pairs = test_support::make_pairs(3, 64, 4);
    auto cfg = small_config();
    cfg.optimizer.iterations = 4;
    const auto a = train_inpainting(pairs, std::nullopt, cfg, 9);
    const auto b = train_inpainting(pairs, std::nullopt, cfg, 9);
    REQUIRE(a.state.history.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.state.history[i].generator.total_value == b.state.history[i].generator.total_value);
        CHECK(a.state.history[i].discriminator == b.state.history[i].discriminator);
    }
}

TEST_CASE("empty masks are dropped from batches") {
    auto pairs = test_support::make_pairs(2, 64, 5);
    pairs[1].segmap = imaging::BinarySegmentationMap(64, 64);
    std::vector<std::string> warnings;
    CHECK(make_batch(pairs, 1.0, &warnings).size() == 1);
    CHECK(warnings.size() == 1);
}

TEST_CASE("filtering to an absent gender is a training error") {
    synth::Manifest m;
    synth::ManifestEntry e;
    e.gender = Gender::male;
    m.entries.push_back(e);
    CHECK_THROWS_AS(train_inpainting(m, Gender::female, small_config(), 1), TrainingError);
}

TEST_CASE("checkpoint round trip resumes exactly") {
    TempDir dir;
    const auto pairs = test_support::make_pairs(3, 64, 6);
    auto cfg = small_config();
    auto run = train_inpainting(pairs, Gender::male, cfg, 11);
    save_checkpoint(run.state, dir / "a.ckpt");
    auto loaded = load_checkpoint(dir / "a.ckpt");

    CHECK(loaded.iteration == run.state.iteration);
    CHECK(loaded.gender == Gender::male);
    const auto live = run.state.generator->parameters();
    const auto back = loaded.generator->parameters();
    REQUIRE(live.size() == back.size());
    for (std::size_t i = 0; i < live.size(); ++i) CHECK(torch::equal(live[i], back[i]));

    continue_training(run.state, run.pairs, 1);
    continue_training(loaded, run.pairs, 1);
    CHECK(run.state.history.back().generator.total_value == loaded.history.back().generator.total_value);
    CHECK(run.state.history.back().discriminator == loaded.history.back().discriminator);
    const auto g1 = run.state.generator->parameters();
    const auto g2 = loaded.generator->parameters();
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(torch::equal(g1[i], g2[i]));
}

TEST_CASE("damaged checkpoints are rejected") {
    TempDir dir;
    auto cfg = small_config();
    auto state = make_train_state(cfg, 12, Gender::female);
    save_checkpoint(state, dir / "c.ckpt");

    const auto size = std::filesystem::file_size(dir / "c.ckpt");
    std::filesystem::copy_file(dir / "c.ckpt", dir / "short.ckpt");
    std::filesystem::resize_file(dir / "short.ckpt", size - 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
    std::filesystem::resize_file(dir / "short.ckpt", 10);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);

    std::filesystem::copy_file(dir / "c.ckpt", dir / "v.ckpt");
    flip_byte(dir / "v.ckpt", 8, 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), CheckpointError);

    CHECK_NOTHROW(load_generator(dir / "c.ckpt", Gender::female));
    CHECK_THROWS_AS(load_generator(dir / "c.ckpt", Gender::male), CheckpointError);
    CHECK_THROWS_AS(load_segmenter(dir / "c.ckpt"), CheckpointError);
}

TEST_CASE("model checkpoints round trip") {
    TempDir dir;
    torch::manual_seed(13);
    segmentation::SegmenterConfig scfg;
    scfg.input_size = 64;
    scfg.base_channels = 8;
    segmentation::Segmenter seg(scfg);
    seg->eval();
    save_segmenter(seg, dir / "s.ckpt");
    auto seg2 = load_segmenter(dir / "s.ckpt");
    const auto x = torch::rand({1, 3, 64, 64});
    CHECK(torch::equal(seg->forward(x), seg2->forward(x)));

    landmarks::LandmarkPredictorConfig lcfg;
    lcfg.input_size = 64;
    lcfg.heatmap_size = 32;
    lcfg.base_channels = 8;
    lcfg.hourglass_depth = 2;
    landmarks::LandmarkPredictor lm(lcfg);
    lm->eval();
    save_landmark_predictor(lm, dir / "l.ckpt");
    auto lm2 = load_landmark_predictor(dir / "l.ckpt");
    CHECK(torch::equal(lm->forward(x).back(), lm2->forward(x).back()));

    gender::GenderClassifierConfig gcfg;
    gcfg.input_size = 64;
    gcfg.backbone_widths = {8, 16};
    gcfg.head_layers = {8};
    auto gc = gender::build_classifier(gcfg);
    {
        torch::NoGradGuard guard;
        gc->output_layer()->weight.normal_();
    }
    save_gender_classifier(gc, dir / "g.ckpt");
    auto gc2 = load_gender_classifier(dir / "g.ckpt");
    CHECK(torch::equal(gc->forward(x), gc2->forward(x)));
}

TEST_CASE("segmenter loss descends on the overfit set") {
    std::vector<SegmentationSample> samples;
    for (const auto& p : test_support::make_pairs(16, 64, 7)) samples.push_back({p.masked, p.segmap});
    SegmenterTrainConfig cfg;
    cfg.model.input_size = 64;
    cfg.model.base_channels = 16;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 16;
    cfg.iterations = 50;
    const auto run = train_segmenter(samples, cfg, 7);
    REQUIRE(run.losses.size() == 50);
    int rises = 0;
    for (std::size_t i = 1; i < run.losses.size(); ++i)
        if (run.losses[i] >= run.losses[i - 1]) ++rises;
    CHECK(rises <= 5);
}
