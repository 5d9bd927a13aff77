#ifndef FCT_LOSSES_HPP
#define FCT_LOSSES_HPP

#include <cstdint>
#include <vector>

#include "fct/model.hpp"

namespace fct {

/// Integer class maps for a batch of images, (N, H, W) row-major.
struct Labels {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> data;

  Labels() = default;
  Labels(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int64_t size() const { return n * h * w; }
  std::int32_t& at(std::int64_t b, std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>((b * h + y) * w + x)]; }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>((b * h + y) * w + x)]; }
  /// Image b as a single-image batch.
  Labels image(std::int64_t b) const;
  bool operator==(const Labels& o) const = default;
};

/// Throws ValueError if any label is negative or >= classes.
void check_labels(const Labels& labels, int classes);

/// Keeps the pixel nearest to each output cell centre: (y * f + f / 2).
Labels downsample_nearest(const Labels& labels, int factor);
Labels concat_labels(const std::vector<const Labels*>& parts);

/// (N, H, W, K) indicator tensor.
Tensor one_hot(const Labels& labels, int classes, DType dtype = DType::f32);
/// Per-pixel argmax over the last axis; ties go to the lowest class.
Labels argmax_labels(const Tensor& logits);

constexpr double kDiceSmooth = 1e-6;

/// 0.5 * cross entropy + 0.5 * (1 - soft dice) for one head. Soft dice uses
/// softmax probabilities summed over the whole batch and averages over all
/// K classes.
Var segmentation_loss(const Var& logits, const Labels& target);
/// Mean of segmentation_loss over heads, with the target downsampled to
/// each head's scale.
Var combined_loss(const std::vector<ScaleOutput>& outputs, const Labels& target);

struct DiceResult {
  std::vector<double> per_class;  ///< index 0 is background
  double mean_foreground = 0.0;
};

/// Hard dice 2|P∩T| / (|P| + |T|) per class with smoothing in numerator and
/// denominator, over all pixels of the batch.
DiceResult dice_coefficient(const Labels& pred, const Labels& target, int classes);
/// Dice computed per image and then averaged over images.
DiceResult dice_per_image(const Labels& pred, const Labels& target, int classes);

struct SensSpec {
  double sensitivity = 1.0;
  double specificity = 1.0;
};

/// Label > 0 counts as positive. An empty denominator yields 1.0.
SensSpec sensitivity_specificity(const Labels& pred, const Labels& target);

}  // namespace fct

#endif  // FCT_LOSSES_HPP
