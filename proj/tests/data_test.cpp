#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "advsr/binary_io.hpp"
#include "advsr/errors.hpp"
#include "advsr/data.hpp"
#include "advsr/training.hpp"
#include "test_util.hpp"

using namespace advsr;
using namespace advsr::data;
using advsr::testing::random_tensor;

namespace {

int reflect101(int i, int n)
{
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Literal blur + even-index decimation with the 1-D Gaussian evaluated inline.
Tensor degrade_oracle(const Tensor& hr, int k, double sigma)
{
    const int c = static_cast<int>(hr.dim(0)), h = static_cast<int>(hr.dim(1)), w = static_cast<int>(hr.dim(2));
    const int r = k / 2;
    std::vector<double> g(static_cast<std::size_t>(k));
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += g[static_cast<std::size_t>(i)] = std::exp(-double((i - r) * (i - r)) / (2 * sigma * sigma));
    Tensor out({hr.dim(0), hr.dim(1) / 2, hr.dim(2) / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x) {
                double s = 0.0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double wgt = g[static_cast<std::size_t>(dy + r)] * g[static_cast<std::size_t>(dx + r)] / (z * z);
                        s += wgt * hr[static_cast<std::size_t>((ch * h + reflect101(2 * y + dy, h)) * w + reflect101(2 * x + dx, w))];
                    }
                out[static_cast<std::size_t>((ch * (h / 2) + y) * (w / 2) + x)] = s;
            }
    return out;
}

DataConfig small_config()
{
    DataConfig cfg;
    cfg.train_per_class = 4;
    cfg.val_per_class = 2;
    cfg.test_per_class = 2;
    return cfg;
}

}  // namespace

TEST(Render, SameSeedIsBitIdentical)
{
    for (int c = 0; c < kShapeClasses; ++c) {
        std::mt19937_64 a(99), b(99);
        EXPECT_TRUE(render_sample(c, 48, a).same_values(render_sample(c, 48, b))) << class_name(c);
    }
}

TEST(Render, PixelsInRangeAndMeanNotDegenerate)
{
    for (int c = 0; c < kShapeClasses; ++c) {
        std::mt19937_64 rng(1000 + c);
        for (int i = 0; i < 100; ++i) {
            const Tensor img = render_sample(c, 48, rng);
            ASSERT_EQ(img.shape(), (Shape{3, 48, 48}));
            double mean = 0.0;
            for (double v : img.data()) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
                mean += v;
            }
            mean /= static_cast<double>(img.numel());
            EXPECT_GT(mean, 0.05) << class_name(c);
            EXPECT_LT(mean, 0.95) << class_name(c);
        }
    }
}

TEST(Render, RejectsOutOfRangeClass)
{
    std::mt19937_64 rng(1);
    EXPECT_THROW(render_sample(-1, 48, rng), std::invalid_argument);
    EXPECT_THROW(render_sample(kShapeClasses, 48, rng), std::invalid_argument);
}

TEST(GaussianKernel, UnitKernel)
{
    const Tensor k = gaussian_kernel(1, 0.75);
    ASSERT_EQ(k.shape(), (Shape{1, 1}));
    EXPECT_EQ(k[0], 1.0);
}

TEST(GaussianKernel, SumsToOneAndIsSymmetric)
{
    for (int k : {3, 5, 9, 11}) {
        for (double sigma : {0.3, 0.75, 2.0}) {
            const Tensor g = gaussian_kernel(k, sigma);
            double s = 0.0;
            for (double v : g.data()) s += v;
            EXPECT_NEAR(s, 1.0, 1e-12);
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    const double v = g[static_cast<std::size_t>(y * k + x)];
                    EXPECT_EQ(v, g[static_cast<std::size_t>(y * k + (k - 1 - x))]);
                    EXPECT_EQ(v, g[static_cast<std::size_t>((k - 1 - y) * k + x)]);
                }
        }
    }
}

TEST(GaussianKernel, MatchesDirectFormula)
{
    const double sigma = 0.75;
    const Tensor g = gaussian_kernel(3, sigma);
    const double e1 = std::exp(-1.0 / (2 * sigma * sigma));
    const double z = 1.0 + 2.0 * e1;
    EXPECT_NEAR(g[4], 1.0 / (z * z), 1e-12);
    EXPECT_NEAR(g[1], e1 / (z * z), 1e-12);
    EXPECT_NEAR(g[0], e1 * e1 / (z * z), 1e-12);
}

TEST(GaussianKernel, RejectsEvenSizeAndBadSigma)
{
    EXPECT_THROW(gaussian_kernel(4, 1.0), std::invalid_argument);
    EXPECT_THROW(gaussian_kernel(3, 0.0), std::invalid_argument);
}

TEST(Degrade, ConstantStaysConstant)
{
    const Tensor out = degrade(Tensor({3, 48, 48}, 0.37), {});
    ASSERT_EQ(out.shape(), (Shape{3, 24, 24}));
    for (double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Degrade, UnitKernelIsPureDecimation)
{
    Tensor ramp({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i) / 16.0;
    DegradeConfig cfg;
    cfg.kernel_size = 1;
    const Tensor out = degrade(ramp, cfg);
    ASSERT_EQ(out.shape(), (Shape{1, 2, 2}));
    EXPECT_EQ(out[0], ramp[0]);
    EXPECT_EQ(out[1], ramp[2]);
    EXPECT_EQ(out[2], ramp[8]);
    EXPECT_EQ(out[3], ramp[10]);
}

TEST(Degrade, MatchesNestedLoopOracle)
{
    std::mt19937_64 rng(17);
    const Tensor hr = random_tensor({3, 48, 48}, rng, 0.0, 1.0);
    const Tensor got = degrade(hr, {});
    const Tensor want = degrade_oracle(hr, 9, 0.75);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Degrade, StaysWithinInputRange)
{
    std::mt19937_64 rng(3);
    const Tensor hr = random_tensor({3, 32, 32}, rng, 0.2, 0.7);
    const auto [lo, hi] = std::minmax_element(hr.data().begin(), hr.data().end());
    for (auto mode : {Downsample::decimate, Downsample::average}) {
        DegradeConfig cfg;
        cfg.downsample = mode;
        for (double v : degrade(hr, cfg).data()) {
            EXPECT_GE(v, *lo - 1e-15);
            EXPECT_LE(v, *hi + 1e-15);
        }
    }
}

TEST(Degrade, RejectsOddOrTooSmallImages)
{
    EXPECT_THROW(degrade(Tensor({3, 47, 48}), {}), std::invalid_argument);
    EXPECT_THROW(degrade(Tensor({3, 8, 8}), {}), std::invalid_argument);
}

TEST(Dataset, DefaultCounts)
{
    // Counts only; rendering the full default set is exercised elsewhere.
    DataConfig cfg;
    EXPECT_EQ(cfg.classes * cfg.train_per_class, 1600);
    EXPECT_EQ(cfg.classes * cfg.val_per_class, 200);
    EXPECT_EQ(cfg.classes * cfg.test_per_class, 200);
}

TEST(Dataset, BalancedAndLrIsDegradedHr)
{
    const auto ds = make_dataset(small_config(), 11);
    EXPECT_EQ(ds.train.samples.size(), 32u);
    EXPECT_EQ(ds.val.samples.size(), 16u);
    EXPECT_EQ(ds.test.samples.size(), 16u);
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        const auto counts = split->per_class_counts();
        ASSERT_EQ(counts.size(), 8u);
        EXPECT_TRUE(std::all_of(counts.begin(), counts.end(), [&](std::size_t n) { return n == counts[0]; }));
        for (const auto& s : split->samples) {
            EXPECT_TRUE(s.lr.same_values(degrade(s.hr, {})));
            for (double v : s.lr.data()) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
        }
    }
}

TEST(Dataset, SameSeedIsBitIdentical)
{
    const auto a = make_dataset(small_config(), 11);
    const auto b = make_dataset(small_config(), 11);
    EXPECT_EQ(encode_split(a.train), encode_split(b.train));
    EXPECT_EQ(encode_split(a.test), encode_split(b.test));
    const auto c = make_dataset(small_config(), 12);
    EXPECT_NE(encode_split(a.train), encode_split(c.train));
}

TEST(Dataset, NoHrImageSharedAcrossSplits)
{
    const auto ds = make_dataset(small_config(), 11);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        for (const auto& s : split->samples) {
            auto d = s.hr.data();
            seen.insert(io::sha256_hex(std::span<const char>(reinterpret_cast<const char*>(d.data()), d.size_bytes())));
            ++total;
        }
    }
    EXPECT_EQ(seen.size(), total);
}

TEST(Dataset, RejectsBadCounts)
{
    DataConfig cfg = small_config();
    cfg.val_per_class = 0;
    EXPECT_THROW(make_dataset(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.classes = 9;
    EXPECT_THROW(make_dataset(cfg, 1), std::invalid_argument);
}

TEST(DatasetFile, RoundTripAndRejection)
{
    const auto ds = make_dataset(small_config(), 5);
    const auto path = std::filesystem::temp_directory_path() / "advsr_data_test_val.advd";
    save_split(ds.val, path);
    const auto loaded = load_split(path, "val");
    ASSERT_EQ(loaded.samples.size(), ds.val.samples.size());
    EXPECT_EQ(loaded.classes, ds.val.classes);
    for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
        EXPECT_EQ(loaded.samples[i].class_id, ds.val.samples[i].class_id);
        EXPECT_TRUE(loaded.samples[i].hr.same_values(ds.val.samples[i].hr));
        EXPECT_TRUE(loaded.samples[i].lr.same_values(ds.val.samples[i].lr));
    }
    // magic, version, classes, count, height, width, then records
    const std::size_t record = 2 + 8 * (3 * 48 * 48 + 3 * 24 * 24);
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 2 + 4 * 4 + loaded.samples.size() * record);

    auto bytes = encode_split(ds.val);
    bytes[1] = 'X';
    EXPECT_THROW(decode_split(bytes, "val"), FormatError);
    auto truncated = encode_split(ds.val);
    truncated.resize(truncated.size() - 3);
    EXPECT_THROW(decode_split(truncated, "val"), FormatError);
}

TEST(Render, ClassifierLearnsHundredPerClass)
{
    DataConfig cfg;
    cfg.train_per_class = 100;
    const auto ds = make_dataset(cfg, 1);
    const auto run = train::train_classifier(train::TrainConfig::defaults(train::Mode::classifier), ds);
    EXPECT_GE(run.val_accuracy, 0.90);
}
