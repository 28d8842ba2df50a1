#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "random.hpp"
#include "unmask/error.hpp"
#include "unmask/synthdata.hpp"

namespace unmask::synth {

namespace fs = std::filesystem;

namespace {

bool in_unit(const Rgb& c) {
    auto ok = [](float v) { return v >= 0.0f && v <= 1.0f; };
    return ok(c.r) && ok(c.g) && ok(c.b);
}

float channel(const Rgb& c, int k) { return k == 0 ? c.r : (k == 1 ? c.g : c.b); }

std::string index_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

void MaskTemplate::validate() const {
    if (anchor_indices.size() < 4) throw TemplateError("mask template '" + name + "' needs at least 4 anchors");
    for (int idx : anchor_indices) {
        if (idx < 0 || idx >= landmarks::kNumLandmarks) {
            throw TemplateError("mask template '" + name + "' has an anchor outside 0..97");
        }
    }
    if (!in_unit(primary) || !in_unit(secondary)) {
        throw TemplateError("mask template '" + name + "' has fill values outside [0,1]");
    }
    if (!(jitter >= 0.0) || !(scale > 0.0) || !(stripe_period > 0.0)) {
        throw TemplateError("mask template '" + name + "' has invalid jitter/scale/stripe period");
    }
}

std::vector<MaskTemplate> default_templates() {
    // Anchors walk the jaw contour from one cheek to the other and close over
    // the nose bridge (WFLW indices: 0-32 contour, 16 chin, 51-54 bridge).
    return {
        {"surgical", {4, 8, 12, 16, 20, 24, 28, 53}, FillKind::solid, {0.55f, 0.76f, 0.90f}, {}, 10.0, 1.05, 4.0},
        {"cloth", {5, 9, 13, 16, 19, 23, 27, 52}, FillKind::solid, {0.16f, 0.19f, 0.27f}, {}, 10.0, 1.0, 4.0},
        {"n95", {6, 10, 13, 16, 19, 22, 26, 54}, FillKind::two_tone, {0.96f, 0.96f, 0.95f},
         {0.80f, 0.83f, 0.86f}, 10.0, 1.0, 4.0},
        {"stripes", {4, 8, 12, 16, 20, 24, 28, 52}, FillKind::stripes, {0.78f, 0.20f, 0.26f},
         {0.95f, 0.90f, 0.84f}, 10.0, 1.0, 4.0},
        {"black", {5, 8, 12, 16, 20, 24, 27, 53}, FillKind::solid, {0.05f, 0.05f, 0.06f}, {}, 10.0, 1.02, 4.0},
    };
}

std::vector<segmentation::Vertex> template_polygon(const LandmarkSet& lms, const MaskTemplate& tmpl,
                                                   std::uint64_t seed, int size) {
    tmpl.validate();
    std::vector<segmentation::Vertex> poly;
    poly.reserve(tmpl.anchor_indices.size());
    double cx = 0.0;
    double cy = 0.0;
    for (int idx : tmpl.anchor_indices) {
        poly.push_back({lms[idx].x * size, lms[idx].y * size});
        cx += poly.back().x;
        cy += poly.back().y;
    }
    cx /= static_cast<double>(poly.size());
    cy /= static_cast<double>(poly.size());

    detail::Rng rng(seed);
    const double amplitude = tmpl.jitter * size / 256.0;
    const double limit = static_cast<double>(size);
    for (auto& v : poly) {
        v.x = cx + (v.x - cx) * tmpl.scale;
        v.y = cy + (v.y - cy) * tmpl.scale;
        if (amplitude > 0.0) {
            v.x += detail::uniform(rng, -amplitude, amplitude);
            v.y += detail::uniform(rng, -amplitude, amplitude);
        }
        v.x = std::clamp(v.x, 0.0, limit);
        v.y = std::clamp(v.y, 0.0, limit);
    }
    return poly;
}

SyntheticPair apply_mask_template(const ImageTensor& clean, const LandmarkSet& lms, const MaskTemplate& tmpl,
                                  std::uint64_t seed, std::optional<Gender> gender) {
    if (clean.height() != clean.width()) throw DimensionError("apply_mask_template: image must be square");
    if (clean.channels() != 3) throw DimensionError("apply_mask_template: image must be RGB");
    const int size = clean.height();
    const auto poly = template_polygon(lms, tmpl, seed, size);

    segmentation::PolygonAnnotation annotation{poly, size, size};
    if (std::abs(annotation.signed_area()) < 1.0) {
        throw TemplateError("mask template '" + tmpl.name + "' produced a degenerate outline");
    }
    auto segmap = segmentation::rasterize_polygon(poly, size, size);
    if (segmap.mask_pixel_count() == 0) {
        throw TemplateError("mask template '" + tmpl.name + "' covers no pixel centre");
    }

    double top = size;
    double bottom = 0.0;
    for (const auto& v : poly) {
        top = std::min(top, v.y);
        bottom = std::max(bottom, v.y);
    }
    const double seam = top + 0.45 * (bottom - top);
    const double period = tmpl.stripe_period * size / 256.0;

    std::vector<float> pixels(clean.data().begin(), clean.data().end());
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (!segmap.at(y, x)) continue;
            const Rgb* colour = &tmpl.primary;
            switch (tmpl.fill) {
                case FillKind::solid:
                    break;
                case FillKind::two_tone:
                    if (y + 0.5 > seam) colour = &tmpl.secondary;
                    break;
                case FillKind::stripes:
                    if (static_cast<long>(std::floor((y + 0.5 - top) / period)) % 2 != 0) colour = &tmpl.secondary;
                    break;
            }
            const std::size_t base = (static_cast<std::size_t>(y) * size + x) * 3;
            for (int k = 0; k < 3; ++k) pixels[base + k] = channel(*colour, k);
        }
    }
    return {clean, ImageTensor(size, size, 3, std::move(pixels)), std::move(segmap), lms, gender};
}

Manifest Manifest::filter(Gender g) const {
    Manifest out;
    out.seed = seed;
    for (const auto& e : entries)
        if (e.gender == g) out.entries.push_back(e);
    return out;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto rel = [&](const fs::path& p) {
        auto r = p.lexically_relative(base);
        return (r.empty() ? p : r).generic_string();
    };
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    for (const auto& e : manifest.entries) {
        nlohmann::json rec = {{"clean", rel(e.clean)},         {"masked", rel(e.masked)},
                              {"segmap", rel(e.segmap)},       {"landmarks", rel(e.landmarks)},
                              {"template", e.template_name}, {"source", e.source},
                              {"seed", manifest.seed}};
        rec["gender"] = e.gender ? nlohmann::json(std::string(to_string(*e.gender))) : nlohmann::json(nullptr);
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("manifest write failed: " + path.string());
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    auto resolve = [&](const std::string& s) {
        fs::path p(s);
        return p.is_absolute() ? p : base / p;
    };
    Manifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto rec = nlohmann::json::parse(line);
            ManifestEntry e;
            e.clean = resolve(rec.at("clean").get<std::string>());
            e.masked = resolve(rec.at("masked").get<std::string>());
            e.segmap = resolve(rec.value("segmap", std::string{}));
            e.landmarks = resolve(rec.value("landmarks", std::string{}));
            e.template_name = rec.value("template", std::string{});
            e.source = rec.value("source", std::string{});
            if (rec.contains("gender") && rec["gender"].is_string()) {
                e.gender = parse_gender(rec["gender"].get<std::string>());
                if (!e.gender) throw FormatError("unknown gender label at line " + std::to_string(line_no));
            }
            if (rec.contains("seed")) m.seed = rec["seed"].get<std::uint64_t>();
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("malformed manifest record at line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return m;
}

std::uint64_t entry_seed(std::uint64_t seed, std::size_t index) {
    return seed ^ static_cast<std::uint64_t>(index);
}

std::size_t choose_template(std::uint64_t seed, std::size_t index, std::size_t template_count) {
    if (template_count == 0) throw TemplateError("no mask templates to choose from");
    // Separate stream from the jitter draws of the same entry.
    detail::Rng rng(entry_seed(seed, index) ^ 0x9e3779b97f4a7c15ULL);
    return std::min(template_count - 1,
                    static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(template_count)));
}

std::map<std::string, Gender> load_gender_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path.string());
    std::map<std::string, Gender> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
                   line.end());
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("label line without comma in " + path.string());
        const auto g = parse_gender(line.substr(comma + 1));
        if (!g) throw FormatError("unknown gender '" + line.substr(comma + 1) + "' in " + path.string());
        labels[line.substr(0, comma)] = *g;
    }
    return labels;
}

Manifest generate_dataset(const fs::path& image_dir, const fs::path& landmark_dir,
                          const std::vector<MaskTemplate>& templates, std::uint64_t seed, const fs::path& out_dir,
                          const GenerateOptions& options) {
    if (!fs::is_directory(image_dir)) throw DatasetError("image directory not found: " + image_dir.string());
    if (!fs::is_directory(landmark_dir)) {
        throw DatasetError("landmark directory not found: " + landmark_dir.string());
    }
    if (templates.empty()) throw TemplateError("generate_dataset needs at least one template");
    for (const auto& t : templates) t.validate();

    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());

    Manifest manifest;
    manifest.seed = seed;
    const int size = options.image_size;
    for (const auto& image_path : images) {
        const auto stem = image_path.stem().string();
        const auto lm_path = landmark_dir / (stem + ".txt");
        if (!fs::exists(lm_path)) {
            manifest.warnings.push_back("skipped " + image_path.filename().string() + ": no landmark file");
            continue;
        }
        const std::size_t index = manifest.entries.size();
        const auto clean = imaging::load_image(image_path, size);
        const auto lms = landmarks::load_landmarks(lm_path);
        const auto& tmpl = templates[choose_template(seed, index, templates.size())];

        std::optional<Gender> gender;
        if (auto it = options.labels.find(stem); it != options.labels.end()) gender = it->second;

        const auto pair = apply_mask_template(clean, lms, tmpl, entry_seed(seed, index), gender);
        const double fraction = pair.segmap.area_fraction();
        if (!(fraction > 0.0 && fraction < 0.6)) {
            throw DatasetError("mask for " + image_path.filename().string() + " covers " +
                               std::to_string(fraction * 100.0) + "% of the frame");
        }

        const auto name = index_name(index);
        ManifestEntry e{out_dir / "clean" / (name + ".png"),    out_dir / "masked" / (name + ".png"),
                        out_dir / "segmap" / (name + ".png"),   out_dir / "landmarks" / (name + ".txt"),
                        gender,                                 tmpl.name,
                        image_path.filename().string()};
        imaging::save_png(pair.clean, e.clean);
        imaging::save_png(pair.masked, e.masked);
        imaging::save_mask_png(pair.segmap, e.segmap);
        landmarks::save_landmarks(pair.landmarks, e.landmarks);
        manifest.entries.push_back(std::move(e));
    }
    if (manifest.entries.empty()) throw DatasetError("no usable images in " + image_dir.string());
    save_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

std::pair<Manifest, Manifest> split_by_gender(const Manifest& manifest, const GenderScorer& scorer,
                                              double threshold) {
    Manifest male;
    Manifest female;
    male.seed = female.seed = manifest.seed;
    for (const auto& e : manifest.entries) {
        Gender g;
        if (e.gender) {
            g = *e.gender;
        } else {
            if (!scorer) throw ParameterError("split_by_gender: unlabeled entry and no classifier");
            g = scorer(imaging::load_image(e.masked)) >= threshold ? Gender::male : Gender::female;
        }
        ManifestEntry labeled = e;
        labeled.gender = g;
        (g == Gender::male ? male : female).entries.push_back(std::move(labeled));
    }
    return {std::move(male), std::move(female)};
}

}  // namespace unmask::synth
