#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "random.hpp"
#include "unmask/error.hpp"
#include "unmask/synthdata.hpp"

namespace unmask::synth {

namespace fs = std::filesystem;
using landmarks::Point;

namespace {

constexpr double kPi = std::numbers::pi;

struct Ellipse {
    double cx, cy, rx, ry;

    // < 1 inside, in units of the normalized radius squared.
    double radius2(double x, double y) const {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        return dx * dx + dy * dy;
    }
};

struct FaceGeometry {
    Ellipse face;
    double eye_dx, eye_dy, eye_rx, eye_ry;
    double brow_dy;
    double nose_top, nose_bottom, nostril_y, nostril_dx;
    double mouth_y, mouth_rx, mouth_ry;
};

void ellipse_ring(std::array<Point, landmarks::kNumLandmarks>& pts, int first, int count, const Ellipse& e,
                  double start_angle) {
    for (int i = 0; i < count; ++i) {
        const double a = start_angle + 2.0 * kPi * i / count;
        pts[first + i] = {e.cx + e.rx * std::cos(a), e.cy + e.ry * std::sin(a)};
    }
}

// WFLW-style 98-point layout, normalized coordinates.
std::array<Point, landmarks::kNumLandmarks> layout(const FaceGeometry& g) {
    std::array<Point, landmarks::kNumLandmarks> pts{};
    const auto& f = g.face;

    // 0-32 jaw contour, temple to temple through the chin (16).
    const double lift = 0.2;
    for (int i = 0; i <= 32; ++i) {
        const double a = kPi + lift - i * (kPi + 2.0 * lift) / 32.0;
        pts[i] = {f.cx + f.rx * std::cos(a), f.cy + f.ry * std::sin(a)};
    }
    // 33-41 and 42-50 brows: upper arc of 5, lower arc of 4.
    for (int side = 0; side < 2; ++side) {
        const int base = side == 0 ? 33 : 42;
        const double sign = side == 0 ? -1.0 : 1.0;
        const double bx = f.cx + sign * g.eye_dx;
        const double by = f.cy - g.brow_dy;
        const double half = g.eye_rx * 1.3;
        for (int i = 0; i < 5; ++i) {
            const double t = -1.0 + 0.5 * i;
            pts[base + i] = {bx + sign * t * half, by - 0.012 * (1.0 - t * t)};
        }
        for (int i = 0; i < 4; ++i) {
            const double t = 0.75 - 0.5 * i;
            pts[base + 5 + i] = {bx + sign * t * half, by + 0.012 - 0.008 * (1.0 - t * t)};
        }
    }
    // 51-54 nose bridge, 55-59 lower nose.
    for (int i = 0; i < 4; ++i) pts[51 + i] = {f.cx, g.nose_top + (g.nose_bottom - g.nose_top) * i / 3.0};
    for (int i = 0; i < 5; ++i) {
        const double t = -1.0 + 0.5 * i;
        pts[55 + i] = {f.cx + t * g.nostril_dx, g.nostril_y + 0.01 * (1.0 - t * t)};
    }
    // 60-67 and 68-75 eyes, 96/97 pupils.
    const Ellipse right_eye{f.cx - g.eye_dx, f.cy - g.eye_dy, g.eye_rx, g.eye_ry};
    const Ellipse left_eye{f.cx + g.eye_dx, f.cy - g.eye_dy, g.eye_rx, g.eye_ry};
    ellipse_ring(pts, 60, 8, right_eye, kPi);
    ellipse_ring(pts, 68, 8, left_eye, kPi);
    // 76-87 outer lip, 88-95 inner lip.
    const Ellipse outer{f.cx, g.mouth_y, g.mouth_rx, g.mouth_ry};
    const Ellipse inner{f.cx, g.mouth_y, g.mouth_rx * 0.7, g.mouth_ry * 0.35};
    ellipse_ring(pts, 76, 12, outer, kPi);
    ellipse_ring(pts, 88, 8, inner, kPi);
    pts[96] = {right_eye.cx, right_eye.cy};
    pts[97] = {left_eye.cx, left_eye.cy};
    for (auto& p : pts) {
        p.x = std::clamp(p.x, 0.0, 1.0);
        p.y = std::clamp(p.y, 0.0, 1.0);
    }
    return pts;
}

struct Palette {
    std::array<double, 3> background_top, background_bottom, skin, hair, iris, lips;
};

std::array<double, 3> mix(const std::array<double, 3>& a, const std::array<double, 3>& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
    const double vx = b.x - a.x;
    const double vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx);
    const double dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

ProceduralFace procedural_face(int size, std::uint64_t seed, Gender gender) {
    if (size < 16) throw DimensionError("procedural_face: size must be at least 16");
    detail::Rng rng(seed);
    auto u = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };

    FaceGeometry g{};
    g.face = {u(0.47, 0.53), u(0.46, 0.52), u(0.24, 0.29), u(0.31, 0.36)};
    const auto& f = g.face;
    g.eye_dx = f.rx * u(0.38, 0.46);
    g.eye_dy = f.ry * u(0.12, 0.20);
    g.eye_rx = f.rx * u(0.16, 0.21);
    g.eye_ry = g.eye_rx * u(0.40, 0.55);
    g.brow_dy = g.eye_dy + f.ry * u(0.14, 0.2);
    g.nose_top = f.cy - g.eye_dy + 0.01;
    g.nose_bottom = f.cy + f.ry * u(0.12, 0.2);
    g.nostril_y = g.nose_bottom + 0.02;
    g.nostril_dx = f.rx * u(0.16, 0.22);
    g.mouth_y = f.cy + f.ry * u(0.48, 0.56);
    g.mouth_rx = f.rx * u(0.32, 0.42);
    g.mouth_ry = f.ry * u(0.07, 0.1);
    const auto pts = layout(g);

    Palette pal{};
    const double tone = u(0.0, 1.0);
    pal.skin = mix({0.96, 0.80, 0.69}, {0.55, 0.37, 0.26}, tone);
    pal.background_top = {u(0.3, 0.9), u(0.3, 0.9), u(0.3, 0.9)};
    pal.background_bottom = mix(pal.background_top, {0.2, 0.2, 0.25}, 0.5);
    pal.hair = mix({0.08, 0.06, 0.05}, {0.55, 0.40, 0.22}, u(0.0, 1.0));
    pal.iris = mix({0.25, 0.15, 0.08}, {0.25, 0.45, 0.6}, u(0.0, 1.0));
    pal.lips = mix(pal.skin, gender == Gender::female ? std::array<double, 3>{0.80, 0.25, 0.32}
                                                      : std::array<double, 3>{0.62, 0.36, 0.34},
                   0.7);

    const bool male = gender == Gender::male;
    const Ellipse hair_back = male ? Ellipse{f.cx, f.cy - f.ry * 0.35, f.rx * 1.1, f.ry * 0.8}
                                   : Ellipse{f.cx, f.cy + f.ry * 0.1, f.rx * 1.45, f.ry * 1.3};
    const double hairline = f.cy - f.ry * (male ? 0.62 : 0.55);
    const Ellipse right_eye{f.cx - g.eye_dx, f.cy - g.eye_dy, g.eye_rx, g.eye_ry};
    const Ellipse left_eye{f.cx + g.eye_dx, f.cy - g.eye_dy, g.eye_rx, g.eye_ry};
    const Ellipse outer_lip{f.cx, g.mouth_y, g.mouth_rx, g.mouth_ry};
    const double iris_r = g.eye_ry * 0.8;
    const double brow_w = male ? 0.014 : 0.008;

    std::vector<float> data(static_cast<std::size_t>(size) * size * 3);
    for (int py = 0; py < size; ++py) {
        for (int px = 0; px < size; ++px) {
            const double x = (px + 0.5) / size;
            const double y = (py + 0.5) / size;
            auto c = mix(pal.background_top, pal.background_bottom, y);

            if (hair_back.radius2(x, y) < 1.0 && (!male || y < f.cy)) c = pal.hair;
            // Neck and shoulders.
            if (std::abs(x - f.cx) < f.rx * 0.55 && y > f.cy) c = mix(pal.skin, {0, 0, 0}, 0.18);
            if (y > f.cy + f.ry * 1.25) c = mix(pal.background_bottom, {0.1, 0.1, 0.3}, 0.6);

            const double r2 = f.radius2(x, y);
            if (r2 < 1.0) {
                c = mix(pal.skin, {0, 0, 0}, 0.15 * r2);
                if (y < hairline && hair_back.radius2(x, y) < 1.0) c = pal.hair;
                if (male && y > g.nostril_y && r2 > 0.35) c = mix(c, pal.hair, 0.35);
            }
            for (int side = 0; side < 2; ++side) {
                const auto& eye = side == 0 ? right_eye : left_eye;
                if (eye.radius2(x, y) < 1.0) {
                    const double dx = x - eye.cx;
                    const double dy = y - eye.cy;
                    c = dx * dx + dy * dy < iris_r * iris_r ? pal.iris : std::array<double, 3>{0.95, 0.95, 0.93};
                }
                const int base = side == 0 ? 33 : 42;
                for (int i = 0; i < 4; ++i) {
                    if (segment_distance(x, y, pts[base + i], pts[base + i + 1]) < brow_w) c = pal.hair;
                }
            }
            if (segment_distance(x, y, pts[53], pts[57]) < 0.006) c = mix(c, {0, 0, 0}, 0.25);
            for (int i = 55; i < 59; ++i) {
                if (segment_distance(x, y, pts[i], pts[i + 1]) < 0.006) c = mix(c, {0, 0, 0}, 0.35);
            }
            if (outer_lip.radius2(x, y) < 1.0) {
                c = pal.lips;
                if (std::abs(y - g.mouth_y) < 0.006) c = mix(pal.lips, {0, 0, 0}, 0.6);
            }
            const std::size_t i = (static_cast<std::size_t>(py) * size + px) * 3;
            for (int k = 0; k < 3; ++k) data[i + k] = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
        }
    }
    return {ImageTensor(size, size, 3, std::move(data)), LandmarkSet(pts), gender};
}

void write_procedural_corpus(const fs::path& dir, int count, int size, std::uint64_t seed) {
    if (count <= 0) throw ParameterError("write_procedural_corpus: count must be positive");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "landmarks");
    std::ofstream labels(dir / "labels.csv");
    if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
    for (int i = 0; i < count; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d", i);
        const Gender g = i % 2 == 0 ? Gender::male : Gender::female;
        const auto face = procedural_face(size, entry_seed(seed, static_cast<std::size_t>(i)), g);
        imaging::save_png(face.image, dir / "images" / (std::string(name) + ".png"));
        landmarks::save_landmarks(face.landmarks, dir / "landmarks" / (std::string(name) + ".txt"));
        labels << name << ',' << to_string(g) << '\n';
    }
}

}  // namespace unmask::synth
