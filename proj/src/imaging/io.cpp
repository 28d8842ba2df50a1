#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "unmask/error.hpp"
#include "unmask/imaging.hpp"

namespace unmask::imaging {

namespace {

cv::Mat decode(const std::filesystem::path& path, int flags) {
    if (!std::filesystem::is_regular_file(path)) {
        throw IoError("image not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path.string());
    std::vector<uchar> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    cv::Mat mat;
    if (!bytes.empty()) {
        try {
            mat = cv::imdecode(bytes, flags);
        } catch (const cv::Exception&) {
            mat.release();
        }
    }
    if (mat.empty()) throw FormatError("cannot decode image: " + path.string());
    return mat;
}

void encode(const cv::Mat& mat, const std::filesystem::path& path) {
    std::vector<uchar> bytes;
    if (!cv::imencode(".png", mat, bytes)) throw IoError("PNG encoding failed: " + path.string());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
    cv::Mat bgr = decode(path, cv::IMREAD_COLOR);
    if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U);
    const int h = bgr.rows;
    const int w = bgr.cols;
    std::vector<float> data(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
            data[base + 0] = row[x][2] / 255.0f;
            data[base + 1] = row[x][1] / 255.0f;
            data[base + 2] = row[x][0] / 255.0f;
        }
    }
    return {h, w, 3, std::move(data)};
}

ImageTensor load_image(const std::filesystem::path& path, int target_size) {
    if (target_size <= 0) throw DimensionError("target_size must be positive");
    return resize_bilinear(load_image(path), target_size, target_size);
}

void save_png(const ImageTensor& image, const std::filesystem::path& path) {
    const int h = image.height();
    const int w = image.width();
    if (image.channels() == 1) {
        cv::Mat gray(h, w, CV_8UC1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) gray.at<std::uint8_t>(y, x) = to_byte(image.at(y, x));
        encode(gray, path);
        return;
    }
    cv::Mat bgr(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            row[x] = cv::Vec3b(to_byte(image.at(y, x, 2)), to_byte(image.at(y, x, 1)),
                               to_byte(image.at(y, x, 0)));
        }
    }
    encode(bgr, path);
}

void save_mask_png(const BinarySegmentationMap& mask, const std::filesystem::path& path) {
    cv::Mat gray(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) gray.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
    encode(gray, path);
}

BinarySegmentationMap load_mask_png(const std::filesystem::path& path) {
    cv::Mat gray = decode(path, cv::IMREAD_GRAYSCALE);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(gray.rows) * gray.cols);
    for (int y = 0; y < gray.rows; ++y)
        for (int x = 0; x < gray.cols; ++x)
            data[static_cast<std::size_t>(y) * gray.cols + x] = gray.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
    return {gray.rows, gray.cols, std::move(data)};
}

}  // namespace unmask::imaging
