#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "unmask/error.hpp"
#include "unmask/gender.hpp"
#include "unmask/pipeline.hpp"
#include "unmask/synthdata.hpp"
#include "unmask/training.hpp"

namespace fs = std::filesystem;
using namespace unmask;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    int log_every = 100;
};

training::KeyValueConfig load_config(const Globals& g) {
    return g.config.empty() ? training::KeyValueConfig{} : training::KeyValueConfig::load(g.config);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    std::string images, landmarks, labels, out;
    int procedural = 0;
    int size = 256;
};

void run_synth(const Globals& g, const SynthArgs& a) {
    auto kv = load_config(g);
    synth::GenerateOptions opt;
    opt.image_size = kv.get_int("image_size", a.size);
    kv.ensure_consumed();

    fs::path images = a.images, lms = a.landmarks, labels = a.labels;
    if (a.procedural > 0) {
        const auto corpus = fs::path(a.out) / "corpus";
        synth::write_procedural_corpus(corpus, a.procedural, opt.image_size, g.seed);
        images = corpus / "images";
        lms = corpus / "landmarks";
        if (labels.empty()) labels = corpus / "labels.csv";
    } else if (images.empty() || lms.empty()) {
        throw ParameterError("synth needs --images and --landmarks, or --procedural N");
    }
    if (!labels.empty()) opt.labels = synth::load_gender_labels(labels);

    const auto manifest = synth::generate_dataset(images, lms, synth::default_templates(), g.seed, a.out, opt);
    for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << manifest.entries.size() << " pairs written to " << (fs::path(a.out) / "manifest.jsonl").string()
              << "\n";
}

// --- training ----------------------------------------------------------------

struct TrainArgs {
    std::string manifest, val, out, gender, checkpoint_dir;
};

void run_train_gender(const Globals& g, const TrainArgs& a) {
    auto kv = load_config(g);
    gender::GenderClassifierConfig model;
    gender::ClassifierTrainOptions opt;
    training::apply(kv, model, opt);
    kv.ensure_consumed();
    opt.seed = g.seed;

    const auto train = synth::load_manifest(a.manifest);
    const auto val = a.val.empty() ? synth::Manifest{} : synth::load_manifest(a.val);
    const auto result = gender::train_classifier(train, val, model, opt);
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        if ((e + 1) % static_cast<std::size_t>(std::max(1, g.log_every / 10)) == 0 || e + 1 == result.epoch_losses.size())
            std::cerr << "epoch " << e + 1 << " loss " << result.epoch_losses[e] << "\n";
    }
    training::save_gender_classifier(result.model, a.out);
    std::cout << "best accuracy " << result.best_val_accuracy << ", saved " << a.out << "\n";
}

void run_train_seg(const Globals& g, const TrainArgs& a) {
    auto kv = load_config(g);
    training::SegmenterTrainConfig cfg;
    training::apply(kv, cfg);
    kv.ensure_consumed();
    const auto run = training::train_segmenter(synth::load_manifest(a.manifest), cfg, g.seed);
    for (std::size_t i = 0; i < run.losses.size(); ++i)
        if ((i + 1) % static_cast<std::size_t>(g.log_every) == 0) std::cerr << "iteration " << i + 1 << " loss " << run.losses[i] << "\n";
    training::save_segmenter(run.model, a.out);
    std::cout << "final loss " << (run.losses.empty() ? 0.0 : run.losses.back()) << ", saved " << a.out << "\n";
}

void run_train_landmarks(const Globals& g, const TrainArgs& a) {
    auto kv = load_config(g);
    training::LandmarkTrainConfig cfg;
    training::apply(kv, cfg);
    kv.ensure_consumed();
    const auto run = training::train_landmarks(synth::load_manifest(a.manifest), cfg, g.seed);
    for (std::size_t i = 0; i < run.losses.size(); ++i)
        if ((i + 1) % static_cast<std::size_t>(g.log_every) == 0) std::cerr << "iteration " << i + 1 << " loss " << run.losses[i] << "\n";
    training::save_landmark_predictor(run.model, a.out);
    std::cout << "final loss " << (run.losses.empty() ? 0.0 : run.losses.back()) << ", saved " << a.out << "\n";
}

void run_train_inpaint(const Globals& g, const TrainArgs& a) {
    auto kv = load_config(g);
    training::InpaintTrainingConfig cfg;
    training::apply(kv, cfg);
    kv.ensure_consumed();
    const auto gender = parse_gender(a.gender);
    if (!gender) throw ParameterError("--gender must be male or female");

    training::InpaintRunOptions opt;
    if (!a.checkpoint_dir.empty()) opt.checkpoint_dir = fs::path(a.checkpoint_dir);
    opt.on_step = [&](const training::TrainState& s, const training::StepResult& r) {
        if (s.iteration % g.log_every == 0) std::cerr << "iteration " << s.iteration << " " << r.generator.to_json().dump() << " d " << r.discriminator << "\n";
    };
    const auto run = training::train_inpainting(synth::load_manifest(a.manifest), *gender, cfg, g.seed, opt);
    for (const auto& w : run.warnings) std::cerr << "warning: " << w << "\n";
    training::save_checkpoint(run.state, a.out);
    std::cout << run.state.iteration << " iterations on " << run.pairs.size() << " pairs, saved " << a.out << "\n";
}

// --- inference ---------------------------------------------------------------

struct InferArgs {
    std::string input, bundle, out, clean;
};

void run_infer(const InferArgs& a) {
    const auto bundle = pipeline::load_bundle(a.bundle);
    std::optional<imaging::ImageTensor> clean;
    if (!a.clean.empty()) clean = imaging::load_image(a.clean);
    const auto result = pipeline::infer(bundle, imaging::load_image(a.input), clean);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    imaging::save_png(result.output, out);
    auto sidecar = out;
    sidecar.replace_extension(".json");
    write_json(result.diagnostics.to_json(), sidecar);
    std::cout << result.diagnostics.to_json().dump() << "\n";
}

struct EvalArgs {
    std::string manifest, bundle, report;
};

void run_eval(const EvalArgs& a) {
    const auto bundle = pipeline::load_bundle(a.bundle);
    const auto report = pipeline::evaluate(bundle, synth::load_manifest(a.manifest));
    const auto text = report.to_text();
    std::cout << text;
    if (!a.report.empty()) {
        const fs::path path(a.report);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream(path) << text;
        auto json_path = path;
        json_path.replace_extension(".json");
        write_json(report.to_json(), json_path);
    }
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"Masked-face reconstruction: data synthesis, training, inference and evaluation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "seed for data synthesis and training");
    app.add_option("--log-every", g.log_every, "progress interval in iterations")->check(CLI::PositiveNumber);

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "paint synthetic masks onto a face corpus");
    synth_cmd->add_option("--images", sa.images, "directory of clean face images");
    synth_cmd->add_option("--landmarks", sa.landmarks, "directory of <stem>.txt landmark files");
    synth_cmd->add_option("--labels", sa.labels, "stem,gender CSV");
    synth_cmd->add_option("--procedural", sa.procedural, "generate N procedural faces as the clean corpus");
    synth_cmd->add_option("--size", sa.size, "output image size");
    synth_cmd->add_option("--out", sa.out, "output directory")->required();

    TrainArgs ga;
    auto* gender_cmd = app.add_subcommand("train-gender", "train the gender classifier");
    gender_cmd->add_option("--manifest", ga.manifest)->required()->check(CLI::ExistingFile);
    gender_cmd->add_option("--val", ga.val, "validation manifest")->check(CLI::ExistingFile);
    gender_cmd->add_option("--out", ga.out, "checkpoint path")->required();

    TrainArgs sga;
    auto* seg_cmd = app.add_subcommand("train-seg", "train the mask segmenter");
    seg_cmd->add_option("--manifest", sga.manifest)->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--out", sga.out, "checkpoint path")->required();

    TrainArgs la;
    auto* lm_cmd = app.add_subcommand("train-landmarks", "train the landmark predictor");
    lm_cmd->add_option("--manifest", la.manifest)->required()->check(CLI::ExistingFile);
    lm_cmd->add_option("--out", la.out, "checkpoint path")->required();

    TrainArgs ia;
    auto* inpaint_cmd = app.add_subcommand("train-inpaint", "train a gender-specific inpainting generator");
    inpaint_cmd->add_option("--manifest", ia.manifest)->required()->check(CLI::ExistingFile);
    inpaint_cmd->add_option("--gender", ia.gender, "male or female")->required()->check(CLI::IsMember({"male", "female"}));
    inpaint_cmd->add_option("--out", ia.out, "checkpoint path")->required();
    inpaint_cmd->add_option("--checkpoint-dir", ia.checkpoint_dir, "periodic checkpoints (checkpoint_interval)");

    InferArgs fa;
    auto* infer_cmd = app.add_subcommand("infer", "reconstruct one masked image");
    infer_cmd->add_option("--input", fa.input)->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--bundle", fa.bundle, "directory holding bundle.json")->required()->check(CLI::ExistingDirectory);
    infer_cmd->add_option("--out", fa.out, "output PNG; diagnostics go to the .json beside it")->required();
    infer_cmd->add_option("--clean", fa.clean, "clean reference for PSNR/SSIM")->check(CLI::ExistingFile);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "per-gender PSNR/SSIM over a manifest");
    eval_cmd->add_option("--manifest", ea.manifest)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--bundle", ea.bundle)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--report", ea.report, "text report path; a .json twin is written too");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) run_synth(g, sa);
        else if (*gender_cmd) run_train_gender(g, ga);
        else if (*seg_cmd) run_train_seg(g, sga);
        else if (*lm_cmd) run_train_landmarks(g, la);
        else if (*inpaint_cmd) run_train_inpaint(g, ia);
        else if (*infer_cmd) run_infer(fa);
        else if (*eval_cmd) run_eval(ea);
    } catch (const unmask::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
