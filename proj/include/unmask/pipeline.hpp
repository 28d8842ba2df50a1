#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unmask/common.hpp"
#include "unmask/gender.hpp"
#include "unmask/imaging.hpp"
#include "unmask/inpaint.hpp"
#include "unmask/landmarks.hpp"
#include "unmask/segmentation.hpp"
#include "unmask/synthdata.hpp"

namespace unmask::pipeline {

using imaging::BinarySegmentationMap;
using imaging::ImageTensor;
using landmarks::LandmarkSet;

// Stage interfaces. Every stage receives the image at the bundle's size.

class GenderGate {
public:
    virtual ~GenderGate() = default;
    /// p(male) in [0,1].
    virtual double probability_male(const ImageTensor& image) const = 0;
};

class LandmarkStage {
public:
    virtual ~LandmarkStage() = default;
    virtual LandmarkSet predict(const ImageTensor& image) const = 0;
};

class MaskStage {
public:
    virtual ~MaskStage() = default;
    virtual BinarySegmentationMap predict(const ImageTensor& image) const = 0;
};

class Inpainter {
public:
    virtual ~Inpainter() = default;
    /// Full-frame prediction; merging is done by the pipeline.
    virtual ImageTensor inpaint(const ImageTensor& image, const LandmarkSet& landmarks,
                                const BinarySegmentationMap& mask) const = 0;
};

// Adapters over the trained networks.

class ClassifierGate : public GenderGate {
public:
    explicit ClassifierGate(gender::GenderClassifier model) : model_(std::move(model)) {}
    double probability_male(const ImageTensor& image) const override;

private:
    gender::GenderClassifier model_;
};

class PredictorLandmarks : public LandmarkStage {
public:
    explicit PredictorLandmarks(landmarks::LandmarkPredictor model) : model_(std::move(model)) {}
    LandmarkSet predict(const ImageTensor& image) const override;

private:
    landmarks::LandmarkPredictor model_;
};

class SegmenterMask : public MaskStage {
public:
    SegmenterMask(segmentation::Segmenter model, double threshold) : model_(std::move(model)), threshold_(threshold) {}
    BinarySegmentationMap predict(const ImageTensor& image) const override;

private:
    segmentation::Segmenter model_;
    double threshold_;
};

class GeneratorInpainter : public Inpainter {
public:
    explicit GeneratorInpainter(inpaint::Generator model) : model_(std::move(model)) {}
    ImageTensor inpaint(const ImageTensor& image, const LandmarkSet& landmarks,
                        const BinarySegmentationMap& mask) const override;

private:
    inpaint::Generator model_;
};

struct PipelineBundle {
    int image_size = 256;
    std::shared_ptr<const GenderGate> gender;
    std::shared_ptr<const LandmarkStage> landmarks;
    std::shared_ptr<const MaskStage> mask;
    std::map<Gender, std::shared_ptr<const Inpainter>> inpainters;
    int dilation_radius = segmentation::kDefaultDilationRadius;
    double gender_threshold = 0.5;

    /// Both generators and every stage present; throws ConfigError.
    void validate() const;
};

/// Reads dir/bundle.json:
///   {"image_size", "gender", "landmarks", "segmenter",
///    "generators": {"male", "female"}, "dilation_radius",
///    "gender_threshold", "mask_threshold"}
/// with checkpoint paths relative to dir. Model input sizes must agree with
/// image_size.
PipelineBundle load_bundle(const std::filesystem::path& dir);

struct Diagnostics {
    double gender_probability = 0.0;
    Gender gender = Gender::female;
    std::optional<LandmarkSet> landmarks;
    double mask_area_fraction = 0.0;
    double dilated_area_fraction = 0.0;
    bool no_mask_detected = false;
    /// Filled when a clean reference is supplied.
    std::optional<double> psnr;
    std::optional<double> ssim;

    nlohmann::json to_json() const;
};

struct InferenceResult {
    ImageTensor input;
    ImageTensor output;
    BinarySegmentationMap mask;
    Diagnostics diagnostics;
};

/// gender -> landmarks -> mask -> dilation -> gender-matched inpainting ->
/// merge. When no mask is found the input is returned with the flag set.
/// A clean reference, if given, adds PSNR and SSIM to the diagnostics.
InferenceResult infer(const PipelineBundle& bundle, const ImageTensor& image,
                      const std::optional<ImageTensor>& clean = std::nullopt);
InferenceResult infer(const PipelineBundle& bundle, const std::filesystem::path& image_path);

struct EvaluationRecord {
    std::string image;
    Gender gender;
    double psnr;
    double ssim;
    bool no_mask_detected;
};

struct GroupMetrics {
    std::size_t count = 0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

struct EvaluationReport {
    std::vector<EvaluationRecord> records;
    std::map<Gender, GroupMetrics> groups;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// Reconstructs every masked image and scores it against its clean image.
/// Entries are grouped by their label, or by the gate's decision when
/// unlabeled. An infinite PSNR (exact reconstruction) propagates to the mean.
EvaluationReport evaluate(const PipelineBundle& bundle, const synth::Manifest& manifest);

}  // namespace unmask::pipeline
