#include "advsr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace advsr::eval {
namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::vector<double> gaussian_window_1d()
{
    std::vector<double> w(kSsimWindow);
    const int half = kSsimWindow / 2;
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= total;
    return w;
}

// Separable valid-mode filtering of one plane with the SSIM window.
std::vector<double> filter_valid(const double* plane, std::size_t h, std::size_t w, const std::vector<double>& g)
{
    const std::size_t k = g.size(), ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(h * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * plane[y * w + x + i];
            rows[y * ow + x] = s;
        }
    }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    }
    return out;
}

Tensor as_batch(const Tensor& image)
{
    if (image.rank() == 4) return image;
    if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    throw std::invalid_argument("expected a C x H x W image, got " + shape_str(image.shape()));
}

Tensor clamped(Tensor t)
{
    for (double& v : t.data()) v = clamp01(v);
    return t;
}

Tensor slice_sample(const Tensor& batch, std::size_t i)
{
    const std::size_t per = batch.numel() / batch.dim(0);
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    auto d = batch.data().subspan(i * per, per);
    return Tensor(std::move(s), std::vector<double>(d.begin(), d.end()));
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string exact(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b)
{
    require_same("psnr", a, b);
    if (a.numel() == 0) throw std::invalid_argument("psnr: empty image");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = clamp01(a[i]) - clamp01(b[i]);
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.numel());
    if (mse < kPsnrMseFloor) return kPsnrCap;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b)
{
    require_same("ssim", a, b);
    if (a.rank() != 2 && a.rank() != 3) throw std::invalid_argument("ssim: expected H x W or C x H x W, got " + shape_str(a.shape()));
    const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
    if (h < static_cast<std::size_t>(kSsimWindow) || w < static_cast<std::size_t>(kSsimWindow)) {
        throw std::invalid_argument("ssim: image " + shape_str(a.shape()) + " is smaller than the 11x11 window");
    }
    const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
    const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
    const auto g = gaussian_window_1d();
    double total = 0.0;
    std::vector<double> aa(h * w), bb(h * w), ab(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* pa = a.data().data() + ch * h * w;
        const double* pb = b.data().data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, h, w, g), mu_b = filter_valid(pb, h, w, g);
        const auto s_aa = filter_valid(aa.data(), h, w, g), s_bb = filter_valid(bb.data(), h, w, g);
        const auto s_ab = filter_valid(ab.data(), h, w, g);
        double sum = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / static_cast<double>(mu_a.size());
    }
    return total / static_cast<double>(c);
}

double perceptual_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& featnet)
{
    require_same("perceptual_distance", a, b);
    const auto fa = featnet.infer(as_batch(a));
    const auto fb = featnet.infer(as_batch(b));
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        double s = 0.0;
        for (std::size_t i = 0; i < fa[l].numel(); ++i) s += std::abs(fa[l][i] - fb[l][i]);
        total += s / static_cast<double>(fa[l].numel());
    }
    return total / static_cast<double>(fa.size());
}

MetricStats summarize(std::span<const double> values)
{
    MetricStats s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> truths, int classes)
{
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                                    std::to_string(truths.size()) + " labels");
    }
    const auto c = static_cast<std::size_t>(classes);
    ConfusionMatrix m(c, std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] < 0 || truths[i] >= classes || predictions[i] < 0 || predictions[i] >= classes) {
            throw std::invalid_argument("confusion_matrix: class id out of range at position " + std::to_string(i));
        }
        ++m[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(predictions[i])];
    }
    return m;
}

AttackStats attack_from_confusion(const ConfusionMatrix& confusion, const loss::AttackSpec& spec)
{
    spec.validate();
    if (confusion.size() != static_cast<std::size_t>(spec.classes)) {
        throw std::invalid_argument("attack metrics: confusion matrix has " + std::to_string(confusion.size()) +
                                    " classes, attack spec " + std::to_string(spec.classes));
    }
    const auto s = static_cast<std::size_t>(spec.source), t = static_cast<std::size_t>(spec.target);
    AttackStats out;
    std::size_t to_target = 0, wrong = 0, nonsource_correct = 0;
    for (std::size_t truth = 0; truth < confusion.size(); ++truth) {
        for (std::size_t pred = 0; pred < confusion[truth].size(); ++pred) {
            const std::size_t n = confusion[truth][pred];
            if (truth == s) {
                out.source_count += n;
                if (pred == t) to_target += n;
                if (pred != s) wrong += n;
            } else {
                out.nonsource_count += n;
                if (pred == truth) nonsource_correct += n;
            }
        }
    }
    if (out.source_count == 0) throw std::invalid_argument("attack metrics: no source-class samples");
    if (out.nonsource_count == 0) throw std::invalid_argument("attack metrics: no non-source samples");
    out.targeted_asr = 100.0 * static_cast<double>(to_target) / static_cast<double>(out.source_count);
    out.untargeted_asr = 100.0 * static_cast<double>(wrong) / static_cast<double>(out.source_count);
    out.nsa = 100.0 * static_cast<double>(nonsource_correct) / static_cast<double>(out.nonsource_count);
    return out;
}

AttackStats attack_metrics(std::span<const int> predictions, std::span<const int> truths, const loss::AttackSpec& spec)
{
    spec.validate();
    return attack_from_confusion(confusion_matrix(predictions, truths, spec.classes), spec);
}

nlohmann::ordered_json EvalReport::to_json() const
{
    auto stats = [](const MetricStats& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.stddev}}; };
    nlohmann::ordered_json j;
    j["model"] = model_id;
    j["n"] = quality.n;
    j["psnr"] = stats(quality.psnr);
    j["ssim"] = stats(quality.ssim);
    j["pd"] = stats(quality.pd);
    j["targeted_asr"] = attack.targeted_asr;
    j["untargeted_asr"] = attack.untargeted_asr;
    j["nsa"] = attack.nsa;
    j["targeted_equals_untargeted"] = targeted_equals_untargeted();
    j["asr_denominator"] = "source-class test samples";
    j["source_count"] = attack.source_count;
    j["nonsource_count"] = attack.nonsource_count;
    j["attack"] = {{"source", spec.source}, {"target", spec.target}, {"classes", spec.classes}};
    j["psnr_cap_db"] = kPsnrCap;
    j["psnr_mse_floor"] = kPsnrMseFloor;
    j["confusion"] = confusion;
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j)
{
    EvalReport r;
    try {
        r.model_id = j.at("model").get<std::string>();
        r.quality.n = j.at("n").get<std::size_t>();
        auto stats = [&](const char* key) {
            return MetricStats{j.at(key).at("mean").get<double>(), j.at(key).at("std").get<double>()};
        };
        r.quality.psnr = stats("psnr");
        r.quality.ssim = stats("ssim");
        r.quality.pd = stats("pd");
        r.attack.targeted_asr = j.at("targeted_asr").get<double>();
        r.attack.untargeted_asr = j.at("untargeted_asr").get<double>();
        r.attack.nsa = j.at("nsa").get<double>();
        r.attack.source_count = j.at("source_count").get<std::size_t>();
        r.attack.nonsource_count = j.at("nonsource_count").get<std::size_t>();
        r.spec.source = j.at("attack").at("source").get<int>();
        r.spec.target = j.at("attack").at("target").get<int>();
        r.spec.classes = j.at("attack").at("classes").get<int>();
        r.confusion = j.at("confusion").get<ConfusionMatrix>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed evaluation report: ") + e.what());
    }
    return r;
}

std::string EvalReport::samples_csv() const
{
    std::ostringstream os;
    os << "index,class,pred,psnr,ssim,pd\n";
    for (const auto& s : samples) {
        os << s.index << ',' << s.class_id << ',' << s.pred << ',' << exact(s.psnr) << ',' << exact(s.ssim) << ','
           << exact(s.pd) << '\n';
    }
    return os.str();
}

std::vector<std::string> markdown_columns()
{
    return {"Model",   "PSNR mean", "PSNR std",         "SSIM mean",          "SSIM std", "PD mean",
            "PD std",  "Targeted-ASR (%)", "Untargeted-ASR (%)", "NSA (%)",  "T-ASR = U-ASR"};
}

std::vector<std::string> markdown_cells(const EvalReport& r)
{
    return {r.model_id,
            fixed(r.quality.psnr.mean, 2),
            fixed(r.quality.psnr.stddev, 2),
            fixed(r.quality.ssim.mean, 4),
            fixed(r.quality.ssim.stddev, 4),
            fixed(r.quality.pd.mean, 4),
            fixed(r.quality.pd.stddev, 4),
            fixed(r.attack.targeted_asr, 1),
            fixed(r.attack.untargeted_asr, 1),
            fixed(r.attack.nsa, 1),
            r.targeted_equals_untargeted() ? "yes" : "no"};
}

namespace {

std::string markdown_line(const std::vector<std::string>& cells)
{
    std::string out = "|";
    for (const auto& c : cells) out += " " + c + " |";
    return out + "\n";
}

}  // namespace

std::string markdown_table(std::span<const EvalReport> reports)
{
    const auto columns = markdown_columns();
    std::string out = markdown_line(columns);
    out += markdown_line(std::vector<std::string>(columns.size(), "---"));
    for (const auto& r : reports) out += markdown_line(markdown_cells(r));
    return out;
}

Upscaler model_upscaler(const SrModel& model)
{
    return [&model](const Tensor& lr, std::span<const std::size_t>) { return model.infer(lr); };
}

Upscaler bicubic_upscaler()
{
    return [](const Tensor& lr, std::span<const std::size_t>) {
        ad::Tape tape;
        return tape.value(ad::bicubic_upsample2x(tape, tape.input(lr)));
    };
}

EvalReport evaluate(const Upscaler& upscale, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                    const data::DatasetSplit& test, const loss::AttackSpec& spec, const std::string& model_id)
{
    spec.validate();
    if (test.samples.empty()) throw std::invalid_argument("evaluate: test split is empty");
    if (classifier.classes() != spec.classes) {
        throw std::invalid_argument("evaluate: classifier has " + std::to_string(classifier.classes()) +
                                    " classes, attack spec " + std::to_string(spec.classes));
    }
    EvalReport report;
    report.model_id = model_id;
    report.spec = spec;
    report.samples.resize(test.samples.size());
    constexpr std::size_t kChunk = 25;
    const auto idx = data::all_indices(test);
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        std::span<const std::size_t> batch(idx.data() + start, std::min(kChunk, idx.size() - start));
        const Tensor sr = clamped(upscale(data::stack_lr(test, batch), batch));
        const Tensor hr = data::stack_hr(test, batch);
        if (sr.shape() != hr.shape()) {
            throw std::invalid_argument("evaluate: upscaler produced " + shape_str(sr.shape()) + ", expected " +
                                        shape_str(hr.shape()));
        }
        const auto preds = classifier.predict(sr);
        const auto n = static_cast<std::int64_t>(batch.size());
#pragma omp parallel for schedule(static)
        for (std::int64_t k = 0; k < n; ++k) {
            const auto i = static_cast<std::size_t>(k);
            const Tensor a = slice_sample(sr, i), b = slice_sample(hr, i);
            SampleResult& out = report.samples[batch[i]];
            out.index = batch[i];
            out.class_id = test.samples[batch[i]].class_id;
            out.pred = preds[i];
            out.psnr = psnr(a, b);
            out.ssim = ssim(a, b);
            out.pd = perceptual_distance(a, b, featnet);
        }
    }
    std::vector<double> p, s, d;
    std::vector<int> preds, truths;
    for (const auto& r : report.samples) {
        p.push_back(r.psnr);
        s.push_back(r.ssim);
        d.push_back(r.pd);
        preds.push_back(r.pred);
        truths.push_back(r.class_id);
    }
    report.quality = QualityStats{summarize(p), summarize(s), summarize(d), report.samples.size()};
    report.confusion = confusion_matrix(preds, truths, spec.classes);
    report.attack = attack_from_confusion(report.confusion, spec);
    return report;
}

EvalReport evaluate(const SrModel& sr_model, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                    const data::DatasetSplit& test, const loss::AttackSpec& spec, const std::string& model_id)
{
    return evaluate(model_upscaler(sr_model), classifier, featnet, test, spec, model_id);
}

}  // namespace advsr::eval
