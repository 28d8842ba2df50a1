#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace unmask::imaging {

/// Height x width x channels image, interleaved (HWC) float storage with
/// every value in [0,1]. Channels is 1 or 3.
class ImageTensor {
public:
    ImageTensor(int height, int width, int channels, float fill = 0.0f);
    ImageTensor(int height, int width, int channels, std::vector<float> data);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }
    void set(int y, int x, int c, float v);

    std::span<const float> data() const { return data_; }

    bool same_shape(const ImageTensor& other) const;
    bool operator==(const ImageTensor& other) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_;
    int width_;
    int channels_;
    std::vector<float> data_;
};

/// H x W map with entries in {0,1}; 1 marks the mask object.
class BinarySegmentationMap {
public:
    BinarySegmentationMap(int height, int width, std::uint8_t fill = 0);
    BinarySegmentationMap(int height, int width, std::vector<std::uint8_t> data);

    int height() const { return height_; }
    int width() const { return width_; }

    std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int y, int x, bool on);

    std::span<const std::uint8_t> data() const { return data_; }

    /// N_m: number of 1-entries.
    std::int64_t mask_pixel_count() const;
    double area_fraction() const;

    /// 1 - mask.
    BinarySegmentationMap inverted() const;

    bool operator==(const BinarySegmentationMap& other) const = default;

private:
    int height_;
    int width_;
    std::vector<std::uint8_t> data_;
};

// --- I/O ------------------------------------------------------------------

/// Decodes PNG/JPEG at `path` as RGB and bilinearly resamples it to
/// target_size x target_size. Throws IoError when the file is missing and
/// FormatError when it cannot be decoded.
ImageTensor load_image(const std::filesystem::path& path, int target_size);

/// Same as load_image but keeps the native resolution.
ImageTensor load_image(const std::filesystem::path& path);

/// 8-bit PNG; values are rounded from [0,1]*255.
void save_png(const ImageTensor& image, const std::filesystem::path& path);

/// Masks are stored as single-channel PNG with 0 / 255.
void save_mask_png(const BinarySegmentationMap& mask, const std::filesystem::path& path);
BinarySegmentationMap load_mask_png(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centres and edge clamping.
ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);

/// Nearest-neighbour resampling, used for masks.
BinarySegmentationMap resize_nearest(const BinarySegmentationMap& mask, int height, int width);

// --- Composition ------------------------------------------------------------

/// out[h,w,c] = image[h,w,c] * mask[h,w]
ImageTensor compose(const ImageTensor& image, const BinarySegmentationMap& mask);

/// Generated content inside the mask, ground pixels outside. Pixels where
/// mask = 0 are copied from ground bit for bit.
ImageTensor merge_inpainted(const ImageTensor& ground, const ImageTensor& generated,
                            const BinarySegmentationMap& mask);

// --- Metrics ----------------------------------------------------------------

/// 10 log10(range^2 / MSE). Identical images give +infinity.
double psnr(const ImageTensor& a, const ImageTensor& b, double data_range = 1.0);

/// Gaussian-window SSIM (11x11, sigma 1.5, valid region), mean of the SSIM
/// map; three-channel images average the per-channel values.
double ssim(const ImageTensor& a, const ImageTensor& b, double data_range = 1.0);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// --- Tensor bridge ----------------------------------------------------------

/// 1 x C x H x W float tensor.
torch::Tensor to_tensor(const ImageTensor& image);
/// 1 x 1 x H x W float tensor holding 0/1.
torch::Tensor to_tensor(const BinarySegmentationMap& mask);

/// Accepts C x H x W or 1 x C x H x W; values are clamped into [0,1].
ImageTensor image_from_tensor(const torch::Tensor& t);
/// Accepts H x W, 1 x H x W or 1 x 1 x H x W; entries >= threshold become 1.
BinarySegmentationMap mask_from_tensor(const torch::Tensor& t, double threshold = 0.5);

}  // namespace unmask::imaging
