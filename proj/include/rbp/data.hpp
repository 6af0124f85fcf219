#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rbp/tensor.hpp"

namespace rbp {

struct Dataset {
  std::string name;
  std::string split;
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t classes = 0;
  std::vector<std::uint8_t> images;  // N x C x H x W
  std::vector<int> labels;
  std::vector<float> mean, stddev;  // per channel, on the [0, 1] pixel scale

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {images.data() + i * image_size(), image_size()};
  }
  void validate() const;
};

// Standard IDX files (optionally gzip-compressed) under `root`:
// {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz].
Dataset load_mnist(const std::filesystem::path& root, std::string_view split);

// CIFAR-10 binary batches (data_batch_1..5.bin, test_batch.bin) under `root`
// or `root`/cifar-10-batches-bin.
Dataset load_cifar10(const std::filesystem::path& root, std::string_view split);

// name: "mnist" | "cifar10". split: "train" | "test".
Dataset load_dataset(std::string_view name, const std::filesystem::path& root, std::string_view split);

// Class = index of the brightest of the first `classes` channels; the
// remaining channels are pure noise. Pixels uniform in [0, 255].
Dataset planted_dataset(std::size_t count, std::size_t channels, std::size_t classes, std::size_t size,
                        std::uint64_t seed, std::string split = "train");

// ---- augmentation ------------------------------------------------------------

enum class AugmentPolicy {
  none,
  cifar,     // zero-pad 4, random crop back to H x W, random flip
  imagenet,  // bilinear resize to `resize`, random `crop` x `crop`, random flip
  center,    // bilinear resize to `resize`, center `crop` x `crop`
};

std::string_view to_string(AugmentPolicy p);
AugmentPolicy augment_policy_from_string(std::string_view s);

struct AugmentSettings {
  AugmentPolicy policy = AugmentPolicy::none;
  std::size_t resize = 256;
  std::size_t crop = 224;
};

struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // C x H x W

  bool operator==(const Image&) const = default;
};

Image flip_horizontal(const Image& img);
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

// Output extent of `policy` for an input of `height` x `width`.
std::pair<std::size_t, std::size_t> augmented_extent(const AugmentSettings& s, std::size_t height, std::size_t width);

// `key` selects the random crop and flip; identical keys give identical output.
Image augment(const Image& img, const AugmentSettings& s, std::uint64_t key);

// ---- batching ------------------------------------------------------------------

// Shuffled order as a pure function of (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Consecutive slices of the epoch permutation; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

struct Batch {
  Tensor<float> inputs;  // normalized
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

// Augments (keyed by seed, epoch and item index) and normalizes the selected
// items.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentSettings& augment,
                 std::uint64_t seed, std::uint64_t epoch);

// Whole split, unshuffled and unaugmented apart from `eval` (used for center
// crops).
Batch full_batch(const Dataset& data, const AugmentSettings& eval = {});

float normalize_pixel(std::uint8_t v, float mean, float stddev);
float denormalize_pixel(float x, float mean, float stddev);  // on the [0, 255] scale

}  // namespace rbp
