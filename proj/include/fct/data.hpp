#ifndef FCT_DATA_HPP
#define FCT_DATA_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "fct/losses.hpp"
#include "fct/random.hpp"

namespace fct {

/// image: (H, W, C) in [0, 1]; mask: one (1, H, W) class map.
struct SegmentationSample {
  Tensor image;
  Labels mask;
};

struct Dataset {
  int num_classes = 0;
  std::vector<std::string> stems;
  std::vector<SegmentationSample> samples;

  std::size_t size() const { return samples.size(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Stacks samples into an (N, H, W, C) batch and (N, H, W) labels.
void make_batch(const std::vector<const SegmentationSample*>& samples, Tensor& images, Labels& labels);

// -- synthetic data ----------------------------------------------------------

constexpr double kSynthNoise = 0.05;
constexpr double kSynthMinClassFraction = 0.3;

/// Grayscale images with one non-overlapping shape per present foreground
/// class (disk, ring, rectangle by class), intensity c / (K - 1), Gaussian
/// noise, values clamped to [0, 1].
Dataset synth_dataset(int n, int size, int classes, std::uint64_t seed);

// -- augmentation ------------------------------------------------------------

struct AugmentConfig {
  bool enabled = true;
  double rotation_deg_max = 360.0;
  double zoom_max = 0.2;
  double shear_max = 0.1;
  double shift_max = 0.3;
  bool hflip = true;
  bool vflip = true;

  void validate() const;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double zoom = 1.0;
  double shear = 0.0;
  /// Fractions of the image height / width.
  double shift_y = 0.0;
  double shift_x = 0.0;
  bool hflip = false;
  bool vflip = false;

  bool is_identity() const;
};

AffineParams sample_affine(const AugmentConfig& cfg, Rng& rng);
/// Rotation, zoom, shear and shift about the image centre, then flips.
/// Bilinear for the image, nearest for the mask, zero / background outside.
SegmentationSample apply_affine(const SegmentationSample& s, const AffineParams& p);
SegmentationSample augment(const SegmentationSample& s, const AugmentConfig& cfg, Rng& rng);

// -- resizing ----------------------------------------------------------------

Tensor resize_bilinear(const Tensor& image, std::int64_t h, std::int64_t w);
Labels resize_nearest(const Labels& mask, std::int64_t h, std::int64_t w);

// -- files -------------------------------------------------------------------

/// 8 or 16-bit grayscale, gray+alpha, RGB or RGBA; alpha is dropped.
/// Returns (H, W, C) with C in {1, 3}, scaled to [0, 1].
Tensor read_png_image(const std::filesystem::path& path);
/// Raw sample values of a single-channel PNG.
Labels read_png_labels(const std::filesystem::path& path);
void write_png_gray8(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& px);
void write_png_rgb8(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& px);

Tensor labels_to_tensor(const Labels& mask);
Labels tensor_to_labels(const Tensor& t, const std::string& what);

/// Reads an image from PNG or .fctt, returned as (H, W, C).
Tensor read_image(const std::filesystem::path& path);

enum class DataFormat { fctt, png };

/// images/<stem>.<ext>, masks/<stem>.<ext>, dataset.json.
void save_dataset(const Dataset& d, const std::filesystem::path& dir, DataFormat format = DataFormat::fctt);
/// Loads and validates a dataset; resize_to > 0 resizes every sample.
Dataset load_dataset(const std::filesystem::path& dir, std::int64_t resize_h = 0, std::int64_t resize_w = 0);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle; val and test sizes are rounded, train takes the rest.
SplitIndices split_indices(std::size_t n, double val_fraction, double test_fraction, std::uint64_t seed);

}  // namespace fct

#endif  // FCT_DATA_HPP
