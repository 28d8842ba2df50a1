#include <algorithm>
#include <cmath>
#include <fstream>

#include "unmask/error.hpp"
#include "unmask/segmentation.hpp"

namespace unmask::segmentation {

namespace {

void require_same_shape(const BinarySegmentationMap& a, const BinarySegmentationMap& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw DimensionError(std::string(what) + ": mask shapes differ");
    }
}

}  // namespace

double iou(const BinarySegmentationMap& a, const BinarySegmentationMap& b) {
    require_same_shape(a, b, "iou");
    const auto da = a.data();
    const auto db = b.data();
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        inter += da[i] & db[i];
        uni += da[i] | db[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<bool> classify_proposals(const std::vector<BinarySegmentationMap>& proposals,
                                     const BinarySegmentationMap& ground, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw ParameterError("classify_proposals: threshold must lie in (0,1]");
    }
    std::vector<bool> out;
    out.reserve(proposals.size());
    for (const auto& p : proposals) out.push_back(iou(p, ground) >= threshold);
    return out;
}

void PolygonAnnotation::validate() const {
    if (vertices.size() < 3) throw AnnotationError("polygon needs at least 3 vertices");
    if (image_width <= 0 || image_height <= 0) throw AnnotationError("polygon frame size must be positive");
    for (const auto& v : vertices) {
        if (!(v.x >= 0.0 && v.x <= image_width && v.y >= 0.0 && v.y <= image_height)) {
            throw AnnotationError("polygon vertex outside the image frame");
        }
    }
}

double PolygonAnnotation::signed_area() const {
    double twice = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const auto& p = vertices[i];
        const auto& q = vertices[(i + 1) % vertices.size()];
        twice += p.x * q.y - q.x * p.y;
    }
    return 0.5 * twice;
}

BinarySegmentationMap rasterize_polygon(const std::vector<Vertex>& vertices, int height, int width) {
    BinarySegmentationMap mask(height, width);
    const std::size_t n = vertices.size();
    std::vector<double> crossings;
    for (int r = 0; r < height; ++r) {
        const double yc = r + 0.5;
        crossings.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = vertices[i];
            const auto& q = vertices[(i + 1) % n];
            if ((p.y <= yc) == (q.y <= yc)) continue;
            crossings.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            // Pixel centres c + 0.5 in [left, right).
            const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
            const int last = std::min(width - 1, static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1);
            for (int c = first; c <= last; ++c) mask.set(r, c, true);
        }
    }
    return mask;
}

BinarySegmentationMap polygon_to_mask(const PolygonAnnotation& annotation, int size) {
    annotation.validate();
    if (size <= 0) throw DimensionError("polygon_to_mask: size must be positive");
    if (std::abs(annotation.signed_area()) < 1e-9) throw AnnotationError("degenerate polygon (zero area)");
    const double sx = static_cast<double>(size) / annotation.image_width;
    const double sy = static_cast<double>(size) / annotation.image_height;
    std::vector<Vertex> scaled;
    scaled.reserve(annotation.vertices.size());
    for (const auto& v : annotation.vertices) scaled.push_back({v.x * sx, v.y * sy});
    return rasterize_polygon(scaled, size, size);
}

LabelmeDocument parse_labelme(const nlohmann::json& doc) {
    LabelmeDocument out;
    try {
        out.image_path = doc.value("imagePath", std::string{});
        out.image_height = doc.at("imageHeight").get<int>();
        out.image_width = doc.at("imageWidth").get<int>();
        for (const auto& shape : doc.at("shapes")) {
            PolygonAnnotation poly;
            poly.image_width = out.image_width;
            poly.image_height = out.image_height;
            for (const auto& pt : shape.at("points")) {
                poly.vertices.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
            }
            poly.validate();
            out.shapes.push_back(std::move(poly));
        }
    } catch (const nlohmann::json::exception& e) {
        throw AnnotationError(std::string("malformed Labelme annotation: ") + e.what());
    }
    return out;
}

LabelmeDocument load_labelme(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("annotation is not valid JSON: " + path.string());
    }
    return parse_labelme(doc);
}

BinarySegmentationMap labelme_mask(const LabelmeDocument& doc, int size) {
    BinarySegmentationMap out(size, size);
    for (const auto& shape : doc.shapes) {
        const auto m = polygon_to_mask(shape, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (m.at(y, x)) out.set(y, x, true);
    }
    return out;
}

BinarySegmentationMap dilate_mask(const BinarySegmentationMap& mask, int radius) {
    if (radius < 0) throw ParameterError("dilate_mask: radius must be non-negative");
    if (radius == 0) return mask;
    const int h = mask.height();
    const int w = mask.width();
    std::vector<std::pair<int, int>> disc;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) disc.emplace_back(dy, dx);

    BinarySegmentationMap out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            for (const auto& [dy, dx] : disc) {
                const int yy = y + dy;
                const int xx = x + dx;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w) out.set(yy, xx, true);
            }
        }
    }
    return out;
}

torch::Tensor segmentation_loss(const torch::Tensor& prob, const torch::Tensor& ground) {
    if (!prob.sizes().equals(ground.sizes())) throw DimensionError("segmentation_loss: shape mismatch");
    const auto p = prob.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp);
    const auto g = ground.detach().to(prob.scalar_type());
    return -(g * torch::log(p) + (1.0 - g) * torch::log1p(-p)).mean();
}

}  // namespace unmask::segmentation
