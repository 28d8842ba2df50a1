#include "unmask/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "unmask/common.hpp"
#include "unmask/error.hpp"

namespace unmask {

std::string_view to_string(Gender g) {
    return g == Gender::male ? "male" : "female";
}

std::optional<Gender> parse_gender(std::string_view s) {
    if (s == "male") return Gender::male;
    if (s == "female") return Gender::female;
    return std::nullopt;
}

}  // namespace unmask

namespace unmask::imaging {

namespace {

void check_dims(int height, int width) {
    if (height <= 0 || width <= 0) {
        throw DimensionError("image dimensions must be positive, got " + std::to_string(height) +
                             "x" + std::to_string(width));
    }
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    check_dims(height, width);
    if (channels != 1 && channels != 3) {
        throw DimensionError("channels must be 1 or 3, got " + std::to_string(channels));
    }
    if (!(fill >= 0.0f && fill <= 1.0f)) throw ParameterError("fill value outside [0,1]");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims(height, width);
    if (channels != 1 && channels != 3) {
        throw DimensionError("channels must be 1 or 3, got " + std::to_string(channels));
    }
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
        throw DimensionError("image buffer size does not match its shape");
    }
    for (float v : data_) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("image value outside [0,1]");
    }
}

void ImageTensor::set(int y, int x, int c, float v) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("image value outside [0,1]");
    data_[index(y, x, c)] = v;
}

bool ImageTensor::same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
}

BinarySegmentationMap::BinarySegmentationMap(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
    check_dims(height, width);
    if (fill > 1) throw ParameterError("segmentation entries must be 0 or 1");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

BinarySegmentationMap::BinarySegmentationMap(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    check_dims(height, width);
    if (data_.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionError("mask buffer size does not match its shape");
    }
    if (std::any_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v > 1; })) {
        throw ParameterError("segmentation entries must be 0 or 1");
    }
}

void BinarySegmentationMap::set(int y, int x, bool on) {
    data_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0;
}

std::int64_t BinarySegmentationMap::mask_pixel_count() const {
    return std::accumulate(data_.begin(), data_.end(), std::int64_t{0});
}

double BinarySegmentationMap::area_fraction() const {
    return static_cast<double>(mask_pixel_count()) / static_cast<double>(data_.size());
}

BinarySegmentationMap BinarySegmentationMap::inverted() const {
    std::vector<std::uint8_t> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
    return {height_, width_, std::move(out)};
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
    check_dims(height, width);
    if (height == image.height() && width == image.width()) return image;

    const int channels = image.channels();
    std::vector<float> out(static_cast<std::size_t>(height) * width * channels);
    const double sy = static_cast<double>(image.height()) / height;
    const double sx = static_cast<double>(image.width()) / width;

    auto source_coord = [](int i, double scale, int limit, int& i0, int& i1, double& frac) {
        double s = (i + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, limit - 1);
        frac = s - i0;
    };

    for (int y = 0; y < height; ++y) {
        int y0, y1;
        double fy;
        source_coord(y, sy, image.height(), y0, y1, fy);
        for (int x = 0; x < width; ++x) {
            int x0, x1;
            double fx;
            source_coord(x, sx, image.width(), x0, x1, fx);
            for (int c = 0; c < channels; ++c) {
                const double top = (1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
                const double bottom = (1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
                const double v = (1 - fy) * top + fy * bottom;
                out[(static_cast<std::size_t>(y) * width + x) * channels + c] =
                    std::clamp(static_cast<float>(v), 0.0f, 1.0f);
            }
        }
    }
    return {height, width, channels, std::move(out)};
}

BinarySegmentationMap resize_nearest(const BinarySegmentationMap& mask, int height, int width) {
    check_dims(height, width);
    if (height == mask.height() && width == mask.width()) return mask;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height() - 1,
                                static_cast<int>((y + 0.5) * mask.height() / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(mask.width() - 1,
                                    static_cast<int>((x + 0.5) * mask.width() / width));
            out[static_cast<std::size_t>(y) * width + x] = mask.at(sy, sx);
        }
    }
    return {height, width, std::move(out)};
}

ImageTensor compose(const ImageTensor& image, const BinarySegmentationMap& mask) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw DimensionError("compose: image and mask sizes differ");
    }
    const int channels = image.channels();
    std::vector<float> out(image.data().begin(), image.data().end());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if (mask.at(y, x)) continue;
            for (int c = 0; c < channels; ++c) {
                out[(static_cast<std::size_t>(y) * image.width() + x) * channels + c] = 0.0f;
            }
        }
    }
    return {image.height(), image.width(), channels, std::move(out)};
}

ImageTensor merge_inpainted(const ImageTensor& ground, const ImageTensor& generated,
                            const BinarySegmentationMap& mask) {
    if (!ground.same_shape(generated) || ground.height() != mask.height() ||
        ground.width() != mask.width()) {
        throw DimensionError("merge_inpainted: ground, generated and mask shapes differ");
    }
    const int channels = ground.channels();
    std::vector<float> out(ground.data().begin(), ground.data().end());
    const auto gen = generated.data();
    for (int y = 0; y < ground.height(); ++y) {
        for (int x = 0; x < ground.width(); ++x) {
            if (!mask.at(y, x)) continue;
            const std::size_t base = (static_cast<std::size_t>(y) * ground.width() + x) * channels;
            for (int c = 0; c < channels; ++c) out[base + c] = gen[base + c];
        }
    }
    return {ground.height(), ground.width(), channels, std::move(out)};
}

double psnr(const ImageTensor& a, const ImageTensor& b, double data_range) {
    if (!a.same_shape(b)) throw DimensionError("psnr: image shapes differ");
    if (!(data_range > 0)) throw ParameterError("psnr: data_range must be positive");
    const auto da = a.data();
    const auto db = b.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(da.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kSsimWindow);
    const int half = kSsimWindow / 2;
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += k[i];
    }
    for (double& v : k) v /= total;
    return k;
}

// Separable valid-mode filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int height, int width,
                                 const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = height - n + 1;
    const int ow = width - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(height) * ow);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * width + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b, double data_range) {
    if (!a.same_shape(b)) throw DimensionError("ssim: image shapes differ");
    if (a.height() < kSsimWindow || a.width() < kSsimWindow) {
        throw DimensionError("ssim: image smaller than the 11x11 window");
    }
    if (!(data_range > 0)) throw ParameterError("ssim: data_range must be positive");

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const auto k = gaussian_kernel();
    const int h = a.height();
    const int w = a.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;

    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                pa[i] = a.at(y, x, c);
                pb[i] = b.at(y, x, c);
                aa[i] = pa[i] * pa[i];
                bb[i] = pb[i] * pb[i];
                ab[i] = pa[i] * pb[i];
            }
        }
        const auto mu_a = filter_valid(pa, h, w, k);
        const auto mu_b = filter_valid(pb, h, w, k);
        const auto e_aa = filter_valid(aa, h, w, k);
        const auto e_bb = filter_valid(bb, h, w, k);
        const auto e_ab = filter_valid(ab, h, w, k);

        double channel_sum = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
            channel_sum += num / den;
        }
        total += channel_sum / static_cast<double>(mu_a.size());
    }
    return total / a.channels();
}

torch::Tensor to_tensor(const ImageTensor& image) {
    auto hwc = torch::from_blob(const_cast<float*>(image.data().data()),
                                {image.height(), image.width(), image.channels()}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

torch::Tensor to_tensor(const BinarySegmentationMap& mask) {
    auto hw = torch::from_blob(const_cast<std::uint8_t*>(mask.data().data()),
                               {mask.height(), mask.width()}, torch::kUInt8);
    return hw.to(torch::kFloat32).unsqueeze(0).unsqueeze(0).contiguous();
}

ImageTensor image_from_tensor(const torch::Tensor& t) {
    auto x = t.detach().to(torch::kCPU, torch::kFloat32);
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw DimensionError("image_from_tensor: batch dimension must be 1");
        x = x.squeeze(0);
    }
    if (x.dim() != 3) throw DimensionError("image_from_tensor: expected C x H x W");
    x = x.clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    const auto* p = x.data_ptr<float>();
    std::vector<float> data(p, p + x.numel());
    return {static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)),
            std::move(data)};
}

BinarySegmentationMap mask_from_tensor(const torch::Tensor& t, double threshold) {
    auto x = t.detach().to(torch::kCPU, torch::kFloat64);
    while (x.dim() > 2) {
        if (x.size(0) != 1) throw DimensionError("mask_from_tensor: leading dimensions must be 1");
        x = x.squeeze(0);
    }
    if (x.dim() != 2) throw DimensionError("mask_from_tensor: expected H x W");
    x = x.contiguous();
    const auto* p = x.data_ptr<double>();
    std::vector<std::uint8_t> data(static_cast<std::size_t>(x.numel()));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = p[i] >= threshold ? 1 : 0;
    return {static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), std::move(data)};
}

}  // namespace unmask::imaging
