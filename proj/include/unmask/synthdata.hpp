#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unmask/common.hpp"
#include "unmask/imaging.hpp"
#include "unmask/landmarks.hpp"
#include "unmask/segmentation.hpp"

namespace unmask::synth {

using imaging::BinarySegmentationMap;
using imaging::ImageTensor;
using landmarks::LandmarkSet;

struct Rgb {
    float r = 0.0f;
    float g = 0.0f;
    float b = 0.0f;
};

enum class FillKind {
    solid,     // primary colour everywhere
    two_tone,  // primary above the template's horizontal seam, secondary below
    stripes,   // alternating horizontal bands of primary / secondary
};

/// A synthetic face mask: a polygon through landmark anchors, painted with a
/// fill pattern. Jitter is the maximum per-vertex displacement in pixels at
/// 256x256 and scales with the image size.
struct MaskTemplate {
    std::string name;
    std::vector<int> anchor_indices;
    FillKind fill = FillKind::solid;
    Rgb primary;
    Rgb secondary;
    double stripe_period = 10.0;
    double scale = 1.0;
    double jitter = 4.0;

    void validate() const;
};

/// Surgical light-blue, cloth dark, white N95-like two-tone, patterned
/// stripes, black.
std::vector<MaskTemplate> default_templates();

struct SyntheticPair {
    ImageTensor clean;
    ImageTensor masked;
    BinarySegmentationMap segmap;
    LandmarkSet landmarks;
    std::optional<Gender> gender;
};

/// Pixel-space outline (size x size frame) of a template placed on the
/// given landmarks; vertex jitter is drawn from `seed`.
std::vector<segmentation::Vertex> template_polygon(const LandmarkSet& landmarks, const MaskTemplate& tmpl,
                                                   std::uint64_t seed, int size);

/// Paints the template onto `clean`. masked equals clean bit for bit wherever
/// segmap is 0. Throws TemplateError when the outline is degenerate.
SyntheticPair apply_mask_template(const ImageTensor& clean, const LandmarkSet& landmarks,
                                  const MaskTemplate& tmpl, std::uint64_t seed,
                                  std::optional<Gender> gender = std::nullopt);

struct ManifestEntry {
    std::filesystem::path clean;
    std::filesystem::path masked;
    std::filesystem::path segmap;
    std::filesystem::path landmarks;
    std::optional<Gender> gender;
    std::string template_name;
    std::string source;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    /// Entries whose label matches; unlabeled entries are dropped.
    Manifest filter(Gender g) const;
};

/// One JSON object per line. Paths are written relative to the manifest's
/// directory and resolved against it on load.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Per-entry seed; generation of entry i depends only on (seed, i).
std::uint64_t entry_seed(std::uint64_t seed, std::size_t index);

/// Uniform template draw for entry `index`.
std::size_t choose_template(std::uint64_t seed, std::size_t index, std::size_t template_count);

struct GenerateOptions {
    int image_size = 256;
    /// Image file stem -> label.
    std::map<std::string, Gender> labels;
};

/// "stem,gender" per line; '#' starts a comment.
std::map<std::string, Gender> load_gender_labels(const std::filesystem::path& path);

/// Builds one pair per image in image_dir (PNG/JPEG, sorted by name) whose
/// landmark file landmark_dir/<stem>.txt exists; images without one are
/// skipped with a warning. Writes out_dir/{clean,masked,segmap,landmarks}/
/// NNNN.{png,txt} and out_dir/manifest.jsonl.
Manifest generate_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& landmark_dir,
                          const std::vector<MaskTemplate>& templates, std::uint64_t seed,
                          const std::filesystem::path& out_dir, const GenerateOptions& options = {});

/// p(male) for an image.
using GenderScorer = std::function<double(const ImageTensor&)>;

/// (male, female) partition. Existing labels win; unlabeled entries are
/// scored on their masked image and routed male iff p >= threshold.
std::pair<Manifest, Manifest> split_by_gender(const Manifest& manifest, const GenderScorer& scorer,
                                              double threshold = 0.5);

// --- Procedural face corpus ------------------------------------------------------

/// A cartoon face with a consistent 98-point layout; used as a stand-in clean
/// corpus for tests and demos. Long hair for female, short hair and beard
/// shading for male.
struct ProceduralFace {
    ImageTensor image;
    LandmarkSet landmarks;
    Gender gender;
};

ProceduralFace procedural_face(int size, std::uint64_t seed, Gender gender);

/// Writes count faces as images/NNNN.png, landmarks/NNNN.txt and labels.csv
/// under dir, alternating genders.
void write_procedural_corpus(const std::filesystem::path& dir, int count, int size, std::uint64_t seed);

}  // namespace unmask::synth
