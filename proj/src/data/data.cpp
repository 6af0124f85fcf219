#include "rbp/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rbp/error.hpp"
#include "rbp/hash.hpp"

namespace rbp {
namespace fs = std::filesystem;

namespace {

// Reads a whole file through zlib, which passes uncompressed files through.
std::vector<std::uint8_t> read_file(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string detail = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw DataError(path.string() + ": read failed after " + std::to_string(out.size()) + " bytes (" + detail + ")");
  }
  return out;
}

fs::path find_file(const fs::path& root, const std::string& name, const std::vector<std::string>& all_expected) {
  for (const fs::path& p : {root / name, root / (name + ".gz")})
    if (fs::is_regular_file(p)) return p;
  std::string list;
  for (const auto& e : all_expected) list += "\n  " + (root / e).string() + "[.gz]";
  throw DataError("dataset file " + name + " not found under " + root.string() + "; expected:" + list);
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const fs::path& path) {
  if (offset + 4 > b.size()) {
    throw DataError(path.string() + ": header truncated at byte offset " + std::to_string(offset) + " (file has " +
                    std::to_string(b.size()) + " bytes)");
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

void expect_length(const std::vector<std::uint8_t>& b, std::size_t expected, const fs::path& path) {
  if (b.size() != expected) {
    throw DataError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(b.size()) + (b.size() < expected ? " (truncated at byte offset " : " (trailing data at byte offset ") +
                    std::to_string(std::min(b.size(), expected)) + ")");
  }
}

void check_split(std::string_view split) {
  if (split != "train" && split != "test") throw ValidationError("unknown split '" + std::string(split) + "'");
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size() * image_size()) {
    throw DataError(name + "/" + split + ": " + std::to_string(images.size()) + " pixel bytes for " +
                    std::to_string(labels.size()) + " images of " + std::to_string(image_size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError(name + "/" + split + ": label " + std::to_string(labels[i]) + " of item " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (mean.size() != channels || stddev.size() != channels) {
    throw DataError(name + ": normalization constants need one value per channel");
  }
}

Dataset load_mnist(const fs::path& root, std::string_view split) {
  check_split(split);
  const std::string prefix = split == "train" ? "train" : "t10k";
  const std::vector<std::string> expected = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  const fs::path image_path = find_file(root, prefix + "-images-idx3-ubyte", expected);
  const fs::path label_path = find_file(root, prefix + "-labels-idx1-ubyte", expected);
  const auto ib = read_file(image_path);
  const auto lb = read_file(label_path);

  if (read_be32(ib, 0, image_path) != 0x00000803) throw DataError(image_path.string() + ": bad magic at byte offset 0");
  if (read_be32(lb, 0, label_path) != 0x00000801) throw DataError(label_path.string() + ": bad magic at byte offset 0");
  const std::size_t n = read_be32(ib, 4, image_path);
  const std::size_t h = read_be32(ib, 8, image_path), w = read_be32(ib, 12, image_path);
  const std::size_t nl = read_be32(lb, 4, label_path);
  if (n != nl) {
    throw DataError(image_path.string() + " holds " + std::to_string(n) + " images but " + label_path.string() +
                    " holds " + std::to_string(nl) + " labels");
  }
  expect_length(ib, 16 + n * h * w, image_path);
  expect_length(lb, 8 + n, label_path);

  Dataset d;
  d.name = "mnist";
  d.split = split;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.classes = 10;
  d.images.assign(ib.begin() + 16, ib.end());
  d.labels.assign(lb.begin() + 8, lb.end());
  d.mean = {0.1307f};
  d.stddev = {0.3081f};
  d.validate();
  return d;
}

Dataset load_cifar10(const fs::path& root, std::string_view split) {
  check_split(split);
  const fs::path dir = fs::is_directory(root / "cifar-10-batches-bin") ? root / "cifar-10-batches-bin" : root;
  std::vector<std::string> names;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    names.push_back("test_batch.bin");
  }
  std::vector<std::string> expected = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                                       "data_batch_5.bin", "test_batch.bin"};
  constexpr std::size_t kPixels = 3 * 32 * 32, kRecord = 1 + kPixels, kPerFile = 10000;

  Dataset d;
  d.name = "cifar10";
  d.split = split;
  d.channels = 3;
  d.height = d.width = 32;
  d.classes = 10;
  d.mean = {0.4914f, 0.4822f, 0.4465f};
  d.stddev = {0.2470f, 0.2435f, 0.2616f};
  for (const auto& name : names) {
    const fs::path path = find_file(dir, name, expected);
    const auto bytes = read_file(path);
    expect_length(bytes, kRecord * kPerFile, path);
    for (std::size_t r = 0; r < kPerFile; ++r) {
      const std::size_t off = r * kRecord;
      if (bytes[off] >= 10) {
        throw DataError(path.string() + ": label " + std::to_string(bytes[off]) + " at byte offset " +
                        std::to_string(off));
      }
      d.labels.push_back(bytes[off]);
      d.images.insert(d.images.end(), bytes.begin() + off + 1, bytes.begin() + off + kRecord);
    }
  }
  d.validate();
  return d;
}

Dataset load_dataset(std::string_view name, const fs::path& root, std::string_view split) {
  if (name == "mnist") return load_mnist(root, split);
  if (name == "cifar10") return load_cifar10(root, split);
  throw ValidationError("unknown dataset '" + std::string(name) + "' (expected mnist or cifar10)");
}

Dataset planted_dataset(std::size_t count, std::size_t channels, std::size_t classes, std::size_t size,
                        std::uint64_t seed, std::string split) {
  if (classes == 0 || classes > channels) throw ValidationError("planted dataset needs 1 <= classes <= channels");
  Dataset d;
  d.name = "planted";
  d.split = std::move(split);
  d.channels = channels;
  d.height = d.width = size;
  d.classes = classes;
  d.mean.assign(channels, 0.0f);
  d.stddev.assign(channels, 1.0f);
  std::mt19937_64 gen(mix_keys({seed, fnv1a(d.split)}));
  const std::size_t plane = size * size;
  d.images.resize(count * channels * plane);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t* img = d.images.data() + i * channels * plane;
    std::vector<std::size_t> sums(classes, 0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        img[c * plane + p] = static_cast<std::uint8_t>(gen() >> 56);
        if (c < classes) sums[c] += img[c * plane + p];
      }
    d.labels.push_back(static_cast<int>(std::max_element(sums.begin(), sums.end()) - sums.begin()));
  }
  d.validate();
  return d;
}

// ---- augmentation ---------------------------------------------------------------

std::string_view to_string(AugmentPolicy p) {
  switch (p) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::cifar: return "cifar";
    case AugmentPolicy::imagenet: return "imagenet";
    case AugmentPolicy::center: return "center";
  }
  return "unknown";
}

AugmentPolicy augment_policy_from_string(std::string_view s) {
  if (s == "none") return AugmentPolicy::none;
  if (s == "cifar") return AugmentPolicy::cifar;
  if (s == "imagenet") return AugmentPolicy::imagenet;
  if (s == "center") return AugmentPolicy::center;
  throw ValidationError("unknown augmentation policy '" + std::string(s) + "' (none, cifar, imagenet, center)");
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y) {
      auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>((c * img.height + y) * img.width);
      std::reverse(row, row + static_cast<std::ptrdiff_t>(img.width));
    }
  return out;
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (height == img.height && width == img.width) return img;
  Image out{img.channels, height, width, std::vector<std::uint8_t>(img.channels * height * width)};
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    const std::uint8_t* src = img.pixels.data() + c * img.height * img.width;
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v = (1 - wy) * ((1 - wx) * src[y0 * img.width + x0] + wx * src[y0 * img.width + x1]) +
                         wy * ((1 - wx) * src[y1 * img.width + x0] + wx * src[y1 * img.width + x1]);
        out.pixels[(c * height + y) * width + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

namespace {

Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  Image out{img.channels, h, w, std::vector<std::uint8_t>(img.channels * h * w)};
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((c * img.height + top + y) * img.width + left), w,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>((c * h + y) * w));
  return out;
}

Image pad_zero(const Image& img, std::size_t p) {
  const std::size_t h = img.height + 2 * p, w = img.width + 2 * p;
  Image out{img.channels, h, w, std::vector<std::uint8_t>(img.channels * h * w, 0)};
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((c * img.height + y) * img.width), img.width,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>((c * h + y + p) * w + p));
  return out;
}

}  // namespace

std::pair<std::size_t, std::size_t> augmented_extent(const AugmentSettings& s, std::size_t height, std::size_t width) {
  switch (s.policy) {
    case AugmentPolicy::none:
    case AugmentPolicy::cifar: return {height, width};
    case AugmentPolicy::imagenet:
    case AugmentPolicy::center:
      if (s.crop == 0 || s.crop > s.resize) {
        throw ValidationError("augmentation crop " + std::to_string(s.crop) + " must be in [1, resize=" +
                              std::to_string(s.resize) + "]");
      }
      return {s.crop, s.crop};
  }
  return {height, width};
}

Image augment(const Image& img, const AugmentSettings& s, std::uint64_t key) {
  if (img.pixels.size() != img.channels * img.height * img.width || img.pixels.empty()) {
    throw ShapeError("augment: pixel buffer does not match " + std::to_string(img.channels) + "x" +
                     std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  augmented_extent(s, img.height, img.width);
  std::mt19937_64 gen(splitmix64(key));
  // Top bit of one draw: probability exactly 1/2.
  auto coin = [&] { return (gen() >> 63) != 0; };
  auto offset = [&](std::size_t range) { return std::uniform_int_distribution<std::size_t>(0, range)(gen); };
  switch (s.policy) {
    case AugmentPolicy::none: return img;
    case AugmentPolicy::cifar: {
      const Image padded = pad_zero(img, 4);
      const std::size_t top = offset(8), left = offset(8);
      Image out = crop(padded, top, left, img.height, img.width);
      return coin() ? flip_horizontal(out) : out;
    }
    case AugmentPolicy::imagenet: {
      const Image r = resize_bilinear(img, s.resize, s.resize);
      const std::size_t top = offset(s.resize - s.crop), left = offset(s.resize - s.crop);
      Image out = crop(r, top, left, s.crop, s.crop);
      return coin() ? flip_horizontal(out) : out;
    }
    case AugmentPolicy::center: {
      const Image r = resize_bilinear(img, s.resize, s.resize);
      const std::size_t m = (s.resize - s.crop) / 2;
      return crop(r, m, m, s.crop, s.crop);
    }
  }
  return img;
}

// ---- batching ----------------------------------------------------------------------

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 gen(mix_keys({seed, 0x5348554646ULL, epoch}));
  std::shuffle(order.begin(), order.end(), gen);
  return order;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  const auto order = epoch_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

float normalize_pixel(std::uint8_t v, float mean, float stddev) {
  return (static_cast<float>(v) / 255.0f - mean) / stddev;
}

float denormalize_pixel(float x, float mean, float stddev) { return (x * stddev + mean) * 255.0f; }

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentSettings& augment_settings,
                 std::uint64_t seed, std::uint64_t epoch) {
  if (indices.empty()) throw ValidationError("make_batch: no items selected");
  const auto [h, w] = augmented_extent(augment_settings, data.height, data.width);
  const std::size_t c = data.channels, per = c * h * w;
  std::vector<float> values(indices.size() * per);
  Batch b;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= data.size()) throw ValidationError("make_batch: index " + std::to_string(i) + " out of range");
    Image img{c, data.height, data.width, std::vector<std::uint8_t>(data.image(i).begin(), data.image(i).end())};
    if (augment_settings.policy != AugmentPolicy::none) img = augment(img, augment_settings, mix_keys({seed, epoch, i}));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p)
        values[k * per + ch * h * w + p] = normalize_pixel(img.pixels[ch * h * w + p], data.mean[ch], data.stddev[ch]);
    b.labels.push_back(data.labels[i]);
  }
  b.inputs = Tensor<float>({indices.size(), c, h, w}, std::move(values));
  return b;
}

Batch full_batch(const Dataset& data, const AugmentSettings& eval) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(data, all, eval, 0, 0);
}

}  // namespace rbp
