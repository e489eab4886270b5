#include "advsr/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string_view>

#include "advsr/binary_io.hpp"
#include "advsr/errors.hpp"

namespace advsr::data {
namespace {

constexpr std::array<const char*, kShapeClasses> kClassNames{"disk",  "square", "triangle", "cross",
                                                             "ring",  "star",   "stripes",  "checker"};

constexpr int kSupersample = 4;

// Membership test in shape-local coordinates scaled so the shape spans [-1, 1].
bool inside(int class_id, double u, double v)
{
    const double au = std::abs(u), av = std::abs(v);
    switch (class_id) {
    case 0:
        return u * u + v * v <= 1.0;
    case 1:
        return std::max(au, av) <= 0.8;
    case 2:  // apex up, y grows downwards
        return v >= -0.9 && v <= 0.7 && au <= (v + 0.9) * 0.6;
    case 3:
        return (au <= 0.2 && av <= 0.95) || (av <= 0.2 && au <= 0.95);
    case 4: {
        const double r2 = u * u + v * v;
        return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case 5: {
        const double r = std::sqrt(u * u + v * v);
        const double theta = std::atan2(v, u) + std::numbers::pi / 2.0;
        const double lobe = 0.5 + 0.5 * std::cos(5.0 * theta);
        return r <= 0.3 + 0.7 * lobe * lobe * lobe * lobe;
    }
    case 6: {
        if (std::max(au, av) > 0.85) return false;
        const double phase = (u + v) / 0.9;
        return phase - std::floor(phase) < 0.5;
    }
    case 7: {
        if (std::max(au, av) > 0.85) return false;
        const int cx = static_cast<int>(std::floor((u + 0.85) / 0.425));
        const int cy = static_cast<int>(std::floor((v + 0.85) / 0.425));
        return (cx + cy) % 2 == 0;
    }
    default:
        return false;
    }
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v)
{
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    const double m = v - c;
    for (double& ch : rgb) ch += m;
    return rgb;
}

int reflect(int i, int n)
{
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

std::uint64_t split_stream(const std::string& name)
{
    if (name == "train") return 1;
    if (name == "val") return 2;
    if (name == "test") return 3;
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    return h;
}

Tensor stack(const DatasetSplit& split, std::span<const std::size_t> indices, bool hr)
{
    if (indices.empty()) throw std::invalid_argument("cannot stack an empty batch");
    const Tensor& first = hr ? split.samples.at(indices[0]).hr : split.samples.at(indices[0]).lr;
    Shape shape{indices.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    const std::size_t per = first.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& t = hr ? split.samples.at(indices[i]).hr : split.samples.at(indices[i]).lr;
        std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

}  // namespace

const char* class_name(int class_id)
{
    if (class_id < 0 || class_id >= kShapeClasses) return "unknown";
    return kClassNames[static_cast<std::size_t>(class_id)];
}

std::vector<std::size_t> DatasetSplit::per_class_counts() const
{
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(classes, 0)), 0);
    for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.class_id));
    return counts;
}

Tensor render_sample(int class_id, int size, std::mt19937_64& rng)
{
    if (class_id < 0 || class_id >= kShapeClasses) {
        throw std::invalid_argument("render_sample: class id " + std::to_string(class_id) + " outside [0, 8)");
    }
    if (size < 8) throw std::invalid_argument("render_sample: image size must be >= 8");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s = static_cast<double>(size);
    const double cx = s / 2.0 + (unit(rng) - 0.5) * 0.5 * s;
    const double cy = s / 2.0 + (unit(rng) - 0.5) * 0.5 * s;
    const double radius = (0.30 + 0.30 * unit(rng)) * s / 2.0;
    const auto fg = hsv_to_rgb(unit(rng), 0.15 + 0.25 * unit(rng), 0.8 + 0.2 * unit(rng));
    const auto bg = hsv_to_rgb(unit(rng), 0.15 * unit(rng), 0.15 + 0.2 * unit(rng));
    constexpr double kNoise = 0.04;

    const auto n = static_cast<std::size_t>(size);
    Tensor img({3, n, n});
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample;
                    const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample;
                    hits += inside(class_id, (px - cx) / radius, (py - cy) / radius) ? 1 : 0;
                }
            }
            const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
            for (std::size_t c = 0; c < 3; ++c) {
                const double noisy_bg = bg[c] + kNoise * (2.0 * unit(rng) - 1.0);
                const double v = noisy_bg * (1.0 - cover) + fg[c] * cover;
                img[(c * n + y) * n + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return img;
}

Tensor gaussian_kernel(int k, double sigma)
{
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("gaussian_kernel: size must be odd, got " + std::to_string(k));
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    const int r = k / 2;
    std::vector<double> g(static_cast<std::size_t>(k));
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        g[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        total += g[static_cast<std::size_t>(i + r)];
    }
    for (double& v : g) v /= total;
    const auto uk = static_cast<std::size_t>(k);
    Tensor out({uk, uk});
    for (std::size_t y = 0; y < uk; ++y) {
        for (std::size_t x = 0; x < uk; ++x) out[y * uk + x] = g[y] * g[x];
    }
    return out;
}

Tensor degrade(const Tensor& hr, const DegradeConfig& cfg)
{
    if (hr.rank() != 3) throw std::invalid_argument("degrade: expected C x H x W, got " + shape_str(hr.shape()));
    const int channels = static_cast<int>(hr.dim(0));
    const int h = static_cast<int>(hr.dim(1));
    const int w = static_cast<int>(hr.dim(2));
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("degrade: spatial dims must be even, got " + shape_str(hr.shape()));
    if (h <= cfg.kernel_size || w <= cfg.kernel_size) {
        throw std::invalid_argument("degrade: image " + shape_str(hr.shape()) + " not larger than blur kernel " +
                                    std::to_string(cfg.kernel_size));
    }
    const Tensor kernel = gaussian_kernel(cfg.kernel_size, cfg.sigma);
    const int k = cfg.kernel_size;
    const int r = k / 2;

    Tensor blurred(hr.shape());
    for (int c = 0; c < channels; ++c) {
        const double* src = hr.data().data() + c * h * w;
        double* dst = blurred.data().data() + c * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = reflect(y + ky - r, h);
                    for (int kx = 0; kx < k; ++kx) {
                        s += kernel[static_cast<std::size_t>(ky * k + kx)] * src[sy * w + reflect(x + kx - r, w)];
                    }
                }
                dst[y * w + x] = s;
            }
        }
    }

    const int ho = h / 2, wo = w / 2;
    Tensor out({static_cast<std::size_t>(channels), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for (int c = 0; c < channels; ++c) {
        const double* src = blurred.data().data() + c * h * w;
        double* dst = out.data().data() + c * ho * wo;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                double v;
                if (cfg.downsample == Downsample::decimate) {
                    v = src[2 * y * w + 2 * x];
                } else {
                    v = 0.25 * (src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1] + src[(2 * y + 1) * w + 2 * x] +
                                src[(2 * y + 1) * w + 2 * x + 1]);
                }
                dst[y * wo + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

void validate(const DataConfig& cfg)
{
    if (cfg.classes < 2 || cfg.classes > kShapeClasses) {
        throw std::invalid_argument("data.classes must be in [2, 8], got " + std::to_string(cfg.classes));
    }
    if (cfg.train_per_class < 1 || cfg.val_per_class < 1 || cfg.test_per_class < 1) {
        throw std::invalid_argument("per-class sample counts must be >= 1");
    }
    if (cfg.hr_size % 4 != 0 || cfg.hr_size <= cfg.degrade.kernel_size) {
        throw std::invalid_argument("data.hr_size must be a multiple of 4 larger than the blur kernel");
    }
    if (cfg.degrade.kernel_size < 1 || cfg.degrade.kernel_size % 2 == 0) {
        throw std::invalid_argument("blur kernel size must be odd and positive");
    }
    if (!(cfg.degrade.sigma > 0.0)) throw std::invalid_argument("blur sigma must be positive");
}

DatasetSplit make_split(const DataConfig& cfg, std::uint64_t seed, const std::string& name, int per_class)
{
    validate(cfg);
    DatasetSplit split;
    split.name = name;
    split.classes = cfg.classes;
    split.seed = seed;
    const std::size_t count = static_cast<std::size_t>(per_class) * static_cast<std::size_t>(cfg.classes);
    split.samples.resize(count);
    const std::uint64_t stream = split_stream(name);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < count; ++i) {
        // Each sample owns an rng keyed by (seed, split, index).
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        Sample& s = split.samples[i];
        s.class_id = static_cast<int>(i % static_cast<std::size_t>(cfg.classes));
        s.hr = render_sample(s.class_id, cfg.hr_size, rng);
        s.lr = degrade(s.hr, cfg.degrade);
    }
    return split;
}

Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed)
{
    return Dataset{make_split(cfg, seed, "train", cfg.train_per_class), make_split(cfg, seed, "val", cfg.val_per_class),
                   make_split(cfg, seed, "test", cfg.test_per_class)};
}

Tensor stack_hr(const DatasetSplit& split, std::span<const std::size_t> indices) { return stack(split, indices, true); }
Tensor stack_lr(const DatasetSplit& split, std::span<const std::size_t> indices) { return stack(split, indices, false); }

std::vector<std::size_t> all_indices(const DatasetSplit& split)
{
    std::vector<std::size_t> idx(split.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

namespace {
constexpr char kDataMagic[4] = {'A', 'D', 'V', 'D'};
constexpr std::uint16_t kDataVersion = 1;
}  // namespace

std::vector<char> encode_split(const DatasetSplit& split)
{
    io::ByteWriter w;
    w.bytes(std::string_view(kDataMagic, 4));
    w.u16(kDataVersion);
    w.u32(static_cast<std::uint32_t>(split.classes));
    w.u32(static_cast<std::uint32_t>(split.samples.size()));
    const std::uint32_t h = split.samples.empty() ? 0 : static_cast<std::uint32_t>(split.samples[0].hr.dim(1));
    const std::uint32_t wd = split.samples.empty() ? 0 : static_cast<std::uint32_t>(split.samples[0].hr.dim(2));
    w.u32(h);
    w.u32(wd);
    for (const auto& s : split.samples) {
        if (s.hr.shape() != Shape{3, h, wd}) throw std::invalid_argument("encode_split: samples have mixed geometry");
        w.u16(static_cast<std::uint16_t>(s.class_id));
        w.f64s(s.hr.data());
        w.f64s(s.lr.data());
    }
    return w.buffer();
}

DatasetSplit decode_split(std::span<const char> bytes, const std::string& name)
{
    io::ByteReader r(bytes, "dataset file");
    if (r.bytes(4) != std::string_view(kDataMagic, 4)) r.fail("bad magic (expected ADVD)");
    const std::uint16_t version = r.u16();
    if (version != kDataVersion) r.fail("unsupported version " + std::to_string(version));
    DatasetSplit split;
    split.name = name;
    split.classes = static_cast<int>(r.u32());
    const std::uint32_t count = r.u32();
    const std::size_t h = r.u32(), w = r.u32();
    if (h % 2 != 0 || w % 2 != 0) r.fail("odd HR geometry");
    const std::size_t record = 2 + 8 * (3 * h * w + 3 * (h / 2) * (w / 2));
    if (r.remaining() != record * count) {
        r.fail("expected " + std::to_string(record * count) + " payload bytes, found " + std::to_string(r.remaining()));
    }
    split.samples.resize(count);
    for (auto& s : split.samples) {
        s.class_id = r.u16();
        if (s.class_id >= split.classes) r.fail("class id " + std::to_string(s.class_id) + " out of range");
        s.hr = Tensor({3, h, w});
        r.f64s(s.hr.data());
        s.lr = Tensor({3, h / 2, w / 2});
        r.f64s(s.lr.data());
    }
    return split;
}

void save_split(const DatasetSplit& split, const std::filesystem::path& path)
{
    io::write_file_atomic(path, encode_split(split));
}

DatasetSplit load_split(const std::filesystem::path& path, const std::string& name)
{
    try {
        return decode_split(io::read_file(path), name);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace advsr::data
