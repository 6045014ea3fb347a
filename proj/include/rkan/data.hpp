#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rkan/checkpoint.hpp"
#include "rkan/tensor.hpp"

namespace rkan {

/// Images stored as uint8 [N, C, H, W] with one integer label each.
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::uint8_t> images;
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only, kept for re-serialization
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {images.data() + i * image_bytes(), image_bytes()};
  }

  void validate() const {
    if (images.size() != labels.size() * image_bytes())
      throw InputError("dataset image buffer does not match label count");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
        throw InputError("dataset label " + std::to_string(labels[i]) + " at index " +
                         std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
  }
};

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifar10Record = 1 + kCifarPixels;
inline constexpr std::size_t kCifar100Record = 2 + kCifarPixels;

namespace detail {
inline void check_record_stride(std::size_t total, std::size_t record, const std::string& source) {
  if (total % record != 0)
    throw FormatError(source + ": size " + std::to_string(total) + " is not a multiple of " +
                      std::to_string(record) + "; partial record at byte offset " +
                      std::to_string(total - total % record));
}
}  // namespace detail

/// Parses CIFAR-10 binary records: 1 label byte then 3072 channel-planar pixels.
inline Dataset parse_cifar10(std::span<const char> bytes, const std::string& source) {
  detail::check_record_stride(bytes.size(), kCifar10Record, source);
  Dataset ds;
  ds.num_classes = 10;
  const std::size_t n = bytes.size() / kCifar10Record;
  ds.labels.resize(n);
  ds.images.resize(n * kCifarPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifar10Record;
    const auto label = static_cast<unsigned char>(bytes[off]);
    if (label >= 10)
      throw FormatError(source + ": label " + std::to_string(label) + " at byte offset " +
                        std::to_string(off));
    ds.labels[r] = label;
    std::memcpy(ds.images.data() + r * kCifarPixels, bytes.data() + off + 1, kCifarPixels);
  }
  return ds;
}

/// Parses CIFAR-100 records: coarse label, fine label, 3072 pixels. Uses fine labels.
inline Dataset parse_cifar100(std::span<const char> bytes, const std::string& source) {
  detail::check_record_stride(bytes.size(), kCifar100Record, source);
  Dataset ds;
  ds.num_classes = 100;
  const std::size_t n = bytes.size() / kCifar100Record;
  ds.labels.resize(n);
  ds.coarse_labels.resize(n);
  ds.images.resize(n * kCifarPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifar100Record;
    const auto coarse = static_cast<unsigned char>(bytes[off]);
    const auto fine = static_cast<unsigned char>(bytes[off + 1]);
    if (fine >= 100)
      throw FormatError(source + ": fine label " + std::to_string(fine) + " at byte offset " +
                        std::to_string(off + 1));
    if (coarse >= 20)
      throw FormatError(source + ": coarse label " + std::to_string(coarse) + " at byte offset " +
                        std::to_string(off));
    ds.coarse_labels[r] = coarse;
    ds.labels[r] = fine;
    std::memcpy(ds.images.data() + r * kCifarPixels, bytes.data() + off + 2, kCifarPixels);
  }
  return ds;
}

inline void append(Dataset& into, const Dataset& from) {
  into.images.insert(into.images.end(), from.images.begin(), from.images.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
  into.coarse_labels.insert(into.coarse_labels.end(), from.coarse_labels.begin(),
                            from.coarse_labels.end());
}

inline Dataset load_cifar10_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_cifar10(bytes, path);
}

/// Loads data_batch_{1..5}.bin (train) or test_batch.bin (test) from dir.
/// A path to a single batch file is also accepted.
inline Dataset load_cifar10(const std::string& dir, const std::string& split = "train") {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(dir)) {
    Dataset ds = load_cifar10_file(dir);
    ds.split = split;
    return ds;
  }
  if (!fs::is_directory(dir)) throw InputError("cifar10 data path not found: " + dir);
  std::vector<std::string> files;
  if (split == "test") {
    files.push_back((fs::path(dir) / "test_batch.bin").string());
  } else {
    for (int i = 1; i <= 5; ++i) {
      const auto p = fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin");
      if (fs::exists(p)) files.push_back(p.string());
    }
    if (files.empty()) throw InputError("no data_batch_*.bin files in " + dir);
  }
  Dataset ds;
  ds.num_classes = 10;
  ds.split = split;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw InputError("cifar10 batch file not found: " + f);
    append(ds, load_cifar10_file(f));
  }
  return ds;
}

/// Loads train.bin or test.bin (or a single file path) in CIFAR-100 layout.
inline Dataset load_cifar100(const std::string& dir, const std::string& split = "train") {
  namespace fs = std::filesystem;
  const std::string path = fs::is_regular_file(dir)
                               ? dir
                               : (fs::path(dir) / (split == "test" ? "test.bin" : "train.bin")).string();
  if (!fs::exists(path)) throw InputError("cifar100 data file not found: " + path);
  const auto bytes = read_file_bytes(path);
  Dataset ds = parse_cifar100(bytes, path);
  ds.split = split;
  return ds;
}

/// Writes a 3x32x32 dataset back in CIFAR-10 record layout.
inline std::vector<char> serialize_cifar10(const Dataset& ds) {
  if (ds.image_bytes() != kCifarPixels)
    throw InputError("cifar10 layout requires 3x32x32 images");
  std::vector<char> out(ds.size() * kCifar10Record);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out[r * kCifar10Record] = static_cast<char>(ds.labels[r]);
    std::memcpy(out.data() + r * kCifar10Record + 1, ds.images.data() + r * kCifarPixels,
                kCifarPixels);
  }
  return out;
}

inline std::vector<char> serialize_cifar100(const Dataset& ds) {
  if (ds.image_bytes() != kCifarPixels || ds.coarse_labels.size() != ds.size())
    throw InputError("cifar100 layout requires 3x32x32 images with coarse labels");
  std::vector<char> out(ds.size() * kCifar100Record);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out[r * kCifar100Record] = static_cast<char>(ds.coarse_labels[r]);
    out[r * kCifar100Record + 1] = static_cast<char>(ds.labels[r]);
    std::memcpy(out.data() + r * kCifar100Record + 2, ds.images.data() + r * kCifarPixels,
                kCifarPixels);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Synthetic shapes

inline constexpr std::array<const char*, 4> kShapeNames{"square", "disk", "cross", "stripes"};

struct SyntheticConfig {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t size = 32;
  double noise = 0.1;
  std::uint64_t seed = 1;
  bool fixed_position = false;
};

namespace detail {
inline bool shape_covers(std::size_t label, double dy, double dx, double r) {
  const double ay = std::abs(dy), ax = std::abs(dx);
  switch (label) {
    case 0:  // square
      return ay <= r && ax <= r;
    case 1:  // disk
      return dy * dy + dx * dx <= r * r;
    case 2: {  // cross
      const double arm = std::max(1.0, r / 3.0);
      return (ay <= arm && ax <= r) || (ax <= arm && ay <= r);
    }
    default: {  // horizontal stripes inside a square
      if (ay > r || ax > r) return false;
      const long row = static_cast<long>(std::floor(dy + r));
      return (row / 2) % 2 == 0;
    }
  }
}
}  // namespace detail

/// Procedural grayscale shapes replicated to RGB. Labels cycle 0..K-1 so each
/// class appears exactly per_class times. Fully determined by the seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > kShapeNames.size())
    throw InputError("synthetic classes must be in [2, 4], got " + std::to_string(cfg.classes));
  if (cfg.noise < 0.0) throw InputError("synthetic noise must be nonnegative");
  if (cfg.size < 8) throw InputError("synthetic image size must be at least 8");
  Dataset ds;
  ds.height = ds.width = cfg.size;
  ds.num_classes = cfg.classes;
  ds.split = "synthetic";
  const std::size_t n = cfg.classes * cfg.per_class;
  const std::size_t plane = cfg.size * cfg.size;
  ds.labels.resize(n);
  ds.images.resize(n * 3 * plane);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s = static_cast<double>(cfg.size);
  std::vector<double> gray(plane);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t label = k % cfg.classes;
    ds.labels[k] = static_cast<int>(label);
    double r = s / 4.0, cy = (s - 1) / 2.0, cx = (s - 1) / 2.0, fg = 1.0;
    if (!cfg.fixed_position) {
      r = std::uniform_real_distribution<double>(s * 0.18, s * 0.34)(rng);
      cy = std::uniform_real_distribution<double>(r, s - 1 - r)(rng);
      cx = std::uniform_real_distribution<double>(r, s - 1 - r)(rng);
      fg = std::uniform_real_distribution<double>(0.6, 1.0)(rng);
    }
    for (std::size_t y = 0; y < cfg.size; ++y)
      for (std::size_t x = 0; x < cfg.size; ++x) {
        double v = detail::shape_covers(label, static_cast<double>(y) - cy,
                                        static_cast<double>(x) - cx, r)
                       ? fg
                       : 0.0;
        if (cfg.noise > 0.0) v += cfg.noise * gauss(rng);
        gray[y * cfg.size + x] = std::clamp(v, 0.0, 1.0);
      }
    std::uint8_t* dst = ds.images.data() + k * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        dst[c * plane + i] = static_cast<std::uint8_t>(std::lround(gray[i] * 255.0));
  }
  return ds;
}

// ----------------------------------------------------------------------------
// Preprocessing

/// Mirrors one CHW uint8 image left-right in place.
inline void flip_horizontal(std::span<std::uint8_t> image, std::size_t channels, std::size_t h,
                            std::size_t w) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      auto* row = image.data() + (c * h + y) * w;
      std::reverse(row, row + w);
    }
}

/// Scales to [0, 1] then standardizes each channel with statistics fitted
/// once on the training split.
class Preprocessor {
 public:
  Preprocessor() = default;

  static Preprocessor fit(const Dataset& train) {
    Preprocessor p;
    p.mean_.assign(train.channels, 0.0);
    p.std_.assign(train.channels, 1.0);
    const std::size_t plane = train.height * train.width;
    const double count = static_cast<double>(train.size() * plane);
    if (count == 0) return p;
    for (std::size_t c = 0; c < train.channels; ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto* px = train.images.data() + (i * train.channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += px[j] / 255.0;
      }
      const double mean = sum / count;
      double var = 0.0;
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto* px = train.images.data() + (i * train.channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = px[j] / 255.0 - mean;
          var += d * d;
        }
      }
      const double sd = std::sqrt(var / count);
      p.mean_[c] = mean;
      p.std_[c] = sd > 0.0 ? sd : 1.0;
    }
    return p;
  }

  /// Builds a [n, C, H, W] batch from the listed images. When rng is given,
  /// each image is mirrored with probability 0.5 (training augmentation).
  template <typename T = double>
  Tensor<T> apply(const Dataset& ds, std::span<const std::size_t> indices,
                  std::mt19937_64* flip_rng = nullptr) const {
    const std::size_t bytes = ds.image_bytes(), plane = ds.height * ds.width;
    Tensor<T> out({indices.size(), ds.channels, ds.height, ds.width});
    std::vector<std::uint8_t> scratch(bytes);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto src = ds.image(indices[b]);
      std::copy(src.begin(), src.end(), scratch.begin());
      if (flip_rng && coin(*flip_rng)) flip_horizontal(scratch, ds.channels, ds.height, ds.width);
      for (std::size_t c = 0; c < ds.channels; ++c) {
        const double m = mean_.at(c), inv = 1.0 / std_.at(c);
        for (std::size_t j = 0; j < plane; ++j)
          out[(b * ds.channels + c) * plane + j] =
              static_cast<T>((scratch[c * plane + j] / 255.0 - m) * inv);
      }
    }
    return out;
  }

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

 private:
  std::vector<double> mean_{0.0, 0.0, 0.0};
  std::vector<double> std_{1.0, 1.0, 1.0};
};

}  // namespace rkan
