#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "rkan/data.hpp"

using namespace rkan;

namespace {

std::vector<char> random_cifar10(std::size_t records, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<char> bytes(records * kCifar10Record);
  for (std::size_t r = 0; r < records; ++r) {
    bytes[r * kCifar10Record] = static_cast<char>(rng() % 10);
    for (std::size_t j = 1; j < kCifar10Record; ++j) bytes[r * kCifar10Record + j] = static_cast<char>(rng());
  }
  return bytes;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rkan_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cifar10, RecordLayout) {
  auto bytes = random_cifar10(3, 1);
  bytes[kCifar10Record] = 7;
  bytes[kCifar10Record + 1] = 42;
  const auto ds = parse_cifar10(bytes, "mem");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.labels[1], 7);
  EXPECT_EQ(ds.image(1)[0], 42);
  EXPECT_EQ(ds.images.size(), 3u * 3072u);
}

TEST(Cifar10, RoundTripReproducesBytes) {
  const auto bytes = random_cifar10(25, 2);
  EXPECT_EQ(serialize_cifar10(parse_cifar10(bytes, "mem")), bytes);
}

TEST(Cifar10, TruncationNamesTheOffset) {
  auto bytes = random_cifar10(2, 3);
  bytes.resize(bytes.size() - 100);
  try {
    parse_cifar10(bytes, "batch.bin");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
}

TEST(Cifar10, LabelOutOfRange) {
  auto bytes = random_cifar10(2, 4);
  bytes[kCifar10Record] = 10;
  EXPECT_THROW(parse_cifar10(bytes, "mem"), FormatError);
}

TEST(Cifar10, DirectoryLoadsAllTrainBatches) {
  const auto dir = scratch_dir("c10");
  for (int i = 1; i <= 2; ++i)
    write_file_bytes((dir / ("data_batch_" + std::to_string(i) + ".bin")).string(), random_cifar10(4, i));
  write_file_bytes((dir / "test_batch.bin").string(), random_cifar10(3, 9));
  EXPECT_EQ(load_cifar10(dir.string(), "train").size(), 8u);
  EXPECT_EQ(load_cifar10(dir.string(), "test").size(), 3u);
  EXPECT_THROW(load_cifar10((dir / "missing").string()), InputError);
}

TEST(Cifar100, FineAndCoarseLabels) {
  std::vector<char> bytes(2 * kCifar100Record, 0);
  bytes[0] = 3;
  bytes[1] = 77;
  bytes[kCifar100Record] = 19;
  bytes[kCifar100Record + 1] = 99;
  const auto ds = parse_cifar100(bytes, "mem");
  EXPECT_EQ(ds.labels[0], 77);
  EXPECT_EQ(ds.coarse_labels[0], 3);
  EXPECT_EQ(ds.labels[1], 99);
  EXPECT_EQ(serialize_cifar100(ds), bytes);
  bytes[1] = 100;
  EXPECT_THROW(parse_cifar100(bytes, "mem"), FormatError);
}

TEST(Synthetic, DeterministicAndBalanced) {
  SyntheticConfig sc;
  sc.classes = 3;
  sc.per_class = 100;
  sc.seed = 5;
  const auto a = generate_synthetic(sc), b = generate_synthetic(sc);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  ASSERT_EQ(a.size(), 300u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 100);
  sc.seed = 6;
  EXPECT_NE(generate_synthetic(sc).images, a.images);
}

TEST(Synthetic, NoiselessFixedTemplatesAreSeparable) {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 5;
  sc.noise = 0.0;
  sc.fixed_position = true;
  const auto ds = generate_synthetic(sc);
  // Every image of a class equals that class's template, and the templates differ.
  for (std::size_t i = 2; i < ds.size(); ++i)
    EXPECT_TRUE(std::equal(ds.image(i).begin(), ds.image(i).end(), ds.image(i % 2).begin()));
  EXPECT_FALSE(std::equal(ds.image(0).begin(), ds.image(0).end(), ds.image(1).begin()));
}

TEST(Synthetic, RejectsUnsupportedClassCount) {
  SyntheticConfig sc;
  sc.classes = 5;
  EXPECT_THROW(generate_synthetic(sc), InputError);
  sc.classes = 1;
  EXPECT_THROW(generate_synthetic(sc), InputError);
}

TEST(Preprocess, StandardizesTheTrainingSplit) {
  SyntheticConfig sc;
  sc.per_class = 20;
  const auto ds = generate_synthetic(sc);
  const auto pre = Preprocessor::fit(ds);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto x = pre.apply<double>(ds, all);
  const std::size_t plane = 32 * 32;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = x[(i * 3 + c) * plane + j];
        s += v;
        ss += v * v;
      }
    const double n = static_cast<double>(ds.size() * plane);
    EXPECT_NEAR(s / n, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(ss / n - (s / n) * (s / n)), 1.0, 1e-6);
  }
}

TEST(Preprocess, ConstantImageFormula) {
  Dataset ds;
  ds.labels = {0};
  ds.images.assign(kCifarPixels, 51);
  ds.num_classes = 10;
  Dataset fit = ds;
  fit.labels = {0, 1};
  fit.images.resize(2 * kCifarPixels, 153);
  const auto pre = Preprocessor::fit(fit);
  const std::vector<std::size_t> idx{0};
  const auto x = pre.apply<double>(ds, idx);
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_NEAR(x[c * 1024], (51 / 255.0 - pre.mean()[c]) / pre.stddev()[c], 1e-15);
}

TEST(Preprocess, FlipIsAnInvolutionAndEvalIsDeterministic) {
  SyntheticConfig sc;
  sc.per_class = 2;
  auto ds = generate_synthetic(sc);
  std::vector<std::uint8_t> img(ds.image(0).begin(), ds.image(0).end());
  const auto orig = img;
  flip_horizontal(img, 3, 32, 32);
  EXPECT_NE(img, orig);
  flip_horizontal(img, 3, 32, 32);
  EXPECT_EQ(img, orig);
  const auto pre = Preprocessor::fit(ds);
  const std::vector<std::size_t> idx{0, 1, 2};
  EXPECT_EQ(pre.apply<double>(ds, idx), pre.apply<double>(ds, idx));
}
