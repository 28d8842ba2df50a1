#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "unmask/error.hpp"
#include "unmask/pipeline.hpp"
#include "unmask/training.hpp"

namespace unmask::pipeline {

namespace fs = std::filesystem;

namespace {

ImageTensor fit(const ImageTensor& image, int size) {
    if (image.height() == size && image.width() == size) return image;
    return imaging::resize_bilinear(image, size, size);
}

// Non-finite metrics are written as strings; JSON has no infinity.
nlohmann::json metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DimensionError& e) {
        throw DimensionError(std::string(name) + " stage: " + e.what());
    }
}

}  // namespace

double ClassifierGate::probability_male(const ImageTensor& image) const {
    return gender::classify(model_, fit(image, model_->config().input_size)).probability;
}

LandmarkSet PredictorLandmarks::predict(const ImageTensor& image) const {
    return landmarks::predict_landmarks(model_, fit(image, model_->config().input_size)).landmarks;
}

BinarySegmentationMap SegmenterMask::predict(const ImageTensor& image) const {
    auto mask = segmentation::predict_mask(model_, fit(image, model_->config().input_size), threshold_);
    if (mask.height() != image.height() || mask.width() != image.width()) {
        mask = imaging::resize_nearest(mask, image.height(), image.width());
    }
    return mask;
}

ImageTensor GeneratorInpainter::inpaint(const ImageTensor& image, const LandmarkSet& lms,
                                        const BinarySegmentationMap& mask) const {
    return inpaint::generate(model_, image, lms, mask);
}

void PipelineBundle::validate() const {
    if (image_size < 16) throw ConfigError("bundle image_size too small");
    if (!gender || !landmarks || !mask) throw ConfigError("bundle is missing a stage");
    for (Gender g : {Gender::male, Gender::female}) {
        const auto it = inpainters.find(g);
        if (it == inpainters.end() || !it->second) {
            throw ConfigError("bundle has no " + std::string(to_string(g)) + " generator");
        }
    }
    if (dilation_radius < 0) throw ConfigError("bundle dilation_radius must be non-negative");
    if (!(gender_threshold > 0 && gender_threshold < 1)) throw ConfigError("bundle gender_threshold must lie in (0,1)");
}

PipelineBundle load_bundle(const fs::path& dir) {
    const auto manifest_path = dir / "bundle.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot read " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }

    PipelineBundle b;
    try {
        b.image_size = j.at("image_size").get<int>();
        b.dilation_radius = j.value("dilation_radius", segmentation::kDefaultDilationRadius);
        b.gender_threshold = j.value("gender_threshold", 0.5);
        const double mask_threshold = j.value("mask_threshold", segmentation::kDefaultMaskThreshold);

        b.gender = std::make_shared<ClassifierGate>(training::load_gender_classifier(dir / j.at("gender").get<std::string>()));

        auto lm = training::load_landmark_predictor(dir / j.at("landmarks").get<std::string>());
        if (lm->config().input_size != b.image_size) throw ConfigError("landmark predictor input size differs from bundle");
        b.landmarks = std::make_shared<PredictorLandmarks>(lm);

        auto seg = training::load_segmenter(dir / j.at("segmenter").get<std::string>());
        if (seg->config().input_size != b.image_size) throw ConfigError("segmenter input size differs from bundle");
        b.mask = std::make_shared<SegmenterMask>(seg, mask_threshold);

        for (Gender g : {Gender::male, Gender::female}) {
            const auto file = j.at("generators").at(std::string(to_string(g))).get<std::string>();
            auto gen = training::load_generator(dir / file, g);
            if (gen->config().input_size != b.image_size) {
                throw ConfigError(std::string(to_string(g)) + " generator input size differs from bundle");
            }
            b.inpainters[g] = std::make_shared<GeneratorInpainter>(gen);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }
    b.validate();
    return b;
}

nlohmann::json Diagnostics::to_json() const {
    nlohmann::json j{{"gender_probability", gender_probability},
                     {"gender", std::string(to_string(gender))},
                     {"mask_area_fraction", mask_area_fraction},
                     {"dilated_area_fraction", dilated_area_fraction},
                     {"no_mask_detected", no_mask_detected}};
    if (landmarks) {
        auto pts = nlohmann::json::array();
        for (const auto& p : landmarks->points()) pts.push_back({p.x, p.y});
        j["landmarks"] = pts;
    }
    if (psnr) j["psnr"] = metric(*psnr);
    if (ssim) j["ssim"] = metric(*ssim);
    return j;
}

InferenceResult infer(const PipelineBundle& bundle, const ImageTensor& image, const std::optional<ImageTensor>& clean) {
    bundle.validate();
    if (image.channels() != 3) throw DimensionError("infer: input must have 3 channels");
    const auto input = fit(image, bundle.image_size);

    Diagnostics d;
    d.gender_probability = stage("gender", [&] { return bundle.gender->probability_male(input); });
    d.gender = gender::decide(d.gender_probability, bundle.gender_threshold);
    d.landmarks = stage("landmarks", [&] { return bundle.landmarks->predict(input); });
    const auto mask = stage("segmentation", [&] { return bundle.mask->predict(input); });
    if (mask.height() != input.height() || mask.width() != input.width()) {
        throw DimensionError("segmentation stage: mask size differs from the image");
    }
    d.mask_area_fraction = mask.area_fraction();

    InferenceResult result{input, input, mask, {}};
    if (mask.mask_pixel_count() == 0) {
        d.no_mask_detected = true;
    } else {
        const auto dilated = segmentation::dilate_mask(mask, bundle.dilation_radius);
        d.dilated_area_fraction = dilated.area_fraction();
        const auto& inpainter = *bundle.inpainters.at(d.gender);
        const auto generated = stage("inpainting", [&] { return inpainter.inpaint(input, *d.landmarks, dilated); });
        result.output = stage("merge", [&] { return imaging::merge_inpainted(input, generated, dilated); });
        result.mask = dilated;
    }
    if (clean) {
        const auto reference = fit(*clean, bundle.image_size);
        d.psnr = imaging::psnr(result.output, reference);
        d.ssim = imaging::ssim(result.output, reference);
    }
    result.diagnostics = std::move(d);
    return result;
}

InferenceResult infer(const PipelineBundle& bundle, const fs::path& image_path) {
    return infer(bundle, imaging::load_image(image_path));
}

EvaluationReport evaluate(const PipelineBundle& bundle, const synth::Manifest& manifest) {
    if (manifest.entries.empty()) throw EvaluationError("cannot evaluate an empty manifest");
    EvaluationReport report;
    std::map<Gender, std::pair<double, double>> sums;
    for (const auto& e : manifest.entries) {
        const auto masked = imaging::load_image(e.masked);
        const auto clean = imaging::load_image(e.clean);
        const auto r = infer(bundle, masked, clean);
        const Gender g = e.gender.value_or(r.diagnostics.gender);
        report.records.push_back({e.masked.string(), g, *r.diagnostics.psnr, *r.diagnostics.ssim,
                                  r.diagnostics.no_mask_detected});
        auto& group = report.groups[g];
        ++group.count;
        sums[g].first += *r.diagnostics.psnr;
        sums[g].second += *r.diagnostics.ssim;
    }
    for (auto& [g, group] : report.groups) {
        group.mean_psnr = sums[g].first / static_cast<double>(group.count);
        group.mean_ssim = sums[g].second / static_cast<double>(group.count);
    }
    return report;
}

std::string EvaluationReport::to_text() const {
    auto cell = [&](Gender g, bool use_psnr) -> std::string {
        const auto it = groups.find(g);
        if (it == groups.end()) return "-";
        const double v = use_psnr ? it->second.mean_psnr : it->second.mean_ssim;
        if (std::isinf(v)) return "inf";
        char buf[32];
        std::snprintf(buf, sizeof(buf), use_psnr ? "%.2f" : "%.4f", v);
        return buf;
    };
    auto count = [&](Gender g) {
        const auto it = groups.find(g);
        return std::to_string(it == groups.end() ? 0 : it->second.count);
    };
    char line[128];
    std::ostringstream out;
    std::snprintf(line, sizeof(line), "%-8s | %10s | %10s\n", "Metric", "Male", "Female");
    out << line << "---------+------------+-----------\n";
    std::snprintf(line, sizeof(line), "%-8s | %10s | %10s\n", "PSNR", cell(Gender::male, true).c_str(),
                  cell(Gender::female, true).c_str());
    out << line;
    std::snprintf(line, sizeof(line), "%-8s | %10s | %10s\n", "SSIM", cell(Gender::male, false).c_str(),
                  cell(Gender::female, false).c_str());
    out << line;
    std::snprintf(line, sizeof(line), "%-8s | %10s | %10s\n", "Images", count(Gender::male).c_str(),
                  count(Gender::female).c_str());
    out << line;
    return out.str();
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json j;
    j["groups"] = nlohmann::json::object();
    for (const auto& [g, m] : groups) {
        j["groups"][std::string(to_string(g))] = {
            {"count", m.count}, {"psnr", metric(m.mean_psnr)}, {"ssim", metric(m.mean_ssim)}};
    }
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        j["records"].push_back({{"image", r.image},
                                {"gender", std::string(to_string(r.gender))},
                                {"psnr", metric(r.psnr)},
                                {"ssim", metric(r.ssim)},
                                {"no_mask_detected", r.no_mask_detected}});
    }
    return j;
}

}  // namespace unmask::pipeline
