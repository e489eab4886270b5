#include "advsr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "advsr/binary_io.hpp"
#include "advsr/errors.hpp"
#include "advsr/weights.hpp"

namespace advsr::exp {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads one object of the config, remembering which keys were consumed so
// that anything left over can be reported.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <class T>
    void get(const std::string& key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type (" + it->dump() + ")");
        }
    }

    std::optional<Section> child(const std::string& key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return std::nullopt;
        return Section(*it, where(key));
    }

    std::optional<std::string> text(const std::string& key)
    {
        std::optional<std::string> s;
        if (j_.contains(key)) {
            std::string v;
            get(key, v);
            s = v;
        } else {
            seen_.insert(key);
        }
        return s;
    }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where(key) + ": unknown key");
        }
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& why)
{
    if (!ok) throw ConfigError(key + ": " + why);
}

train::Selection parse_selection(const std::string& key, const std::string& s)
{
    if (s == "best_val") return train::Selection::best_val;
    if (s == "final") return train::Selection::final_epoch;
    throw ConfigError(key + ": expected \"best_val\" or \"final\", got \"" + s + "\"");
}

const char* selection_name(train::Selection s) { return s == train::Selection::best_val ? "best_val" : "final"; }

data::Downsample parse_downsample(const std::string& key, const std::string& s)
{
    if (s == "decimate") return data::Downsample::decimate;
    if (s == "average") return data::Downsample::average;
    throw ConfigError(key + ": expected \"decimate\" or \"average\", got \"" + s + "\"");
}

void read_phase(Section& sr, const std::string& key, PhaseConfig& phase)
{
    auto s = sr.child(key);
    if (!s) return;
    s->get("epochs", phase.epochs);
    s->get("lr", phase.lr);
    if (auto sel = s->text("selection")) phase.selection = parse_selection(s->where("selection"), *sel);
    s->finish();
}

ordered_json phase_json(const PhaseConfig& p)
{
    return ordered_json{{"epochs", p.epochs}, {"lr", p.lr}, {"selection", selection_name(p.selection)}};
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string fmt17(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log(const CommandContext& ctx, const std::string& msg)
{
    if (ctx.log) ctx.log(msg);
}

std::string rel(const CommandContext& ctx, const fs::path& p)
{
    return p.lexically_relative(ctx.layout.root).generic_string();
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

ordered_json seeds_json(const ResolvedSeeds& s)
{
    return ordered_json{{"data", s.data}, {"classifier", s.classifier}, {"sr", s.sr}, {"featnet", s.featnet}};
}

std::string config_digest(const ExperimentConfig& cfg) { return io::sha256_hex(std::string_view(cfg.to_json().dump())); }

// Digest of everything that determines the generated data.
std::string data_digest(const ExperimentConfig& cfg)
{
    ordered_json j = cfg.to_json()["data"];
    return io::sha256_hex(std::string_view(j.dump()));
}

ordered_json manifest_base(const CommandContext& ctx, const std::string& command)
{
    ordered_json m;
    m["tool"] = "advsr";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["config"] = ctx.config.to_json();
    m["config_sha256"] = config_digest(ctx.config);
    m["seeds"] = seeds_json(resolve_seeds(ctx.config.seed));
    return m;
}

ordered_json file_entry(const CommandContext& ctx, const fs::path& p)
{
    return ordered_json{{"path", rel(ctx, p)}, {"sha256", io::sha256_file(p)}};
}

void write_manifest(const fs::path& dir, ordered_json m, double seconds)
{
    m["timings"] = ordered_json{{"wall_seconds", seconds}};
    io::write_text_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

void require_files(const std::string& what, const std::vector<fs::path>& files)
{
    std::vector<std::string> missing;
    for (const auto& f : files) {
        if (!fs::is_regular_file(f)) missing.push_back(f.string());
    }
    if (missing.empty()) return;
    std::string msg = what + " is missing its dependencies:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DependencyError(msg);
}

std::vector<fs::path> data_files(const RunLayout& layout)
{
    return {layout.split_file("train"), layout.split_file("val"), layout.split_file("test"), layout.data_dir() / "manifest.json"};
}

json read_json(const fs::path& path)
{
    const auto bytes = io::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
}

void check_data_current(const CommandContext& ctx)
{
    const auto path = ctx.layout.data_dir() / "manifest.json";
    const json m = read_json(path);
    if (m.value("data_sha256", std::string{}) != data_digest(ctx.config)) {
        throw DependencyError(path.string() + ": dataset was generated from a different data config; rerun gen-data");
    }
}

data::Dataset load_dataset(const CommandContext& ctx)
{
    check_data_current(ctx);
    data::Dataset d;
    d.train = data::load_split(ctx.layout.split_file("train"), "train");
    d.val = data::load_split(ctx.layout.split_file("val"), "val");
    d.test = data::load_split(ctx.layout.split_file("test"), "test");
    return d;
}

data::DatasetSplit load_test_split(const CommandContext& ctx)
{
    check_data_current(ctx);
    return data::load_split(ctx.layout.split_file("test"), "test");
}

ClassifierModel load_checked_classifier(const CommandContext& ctx)
{
    const auto path = ctx.layout.checkpoint(train::Mode::classifier);
    auto model = load_classifier(path);
    if (!(model.config() == ctx.config.classifier)) {
        throw ConfigError(path.string() + ": classifier architecture does not match the classifier section of the config");
    }
    model.freeze(true);
    return model;
}

SrModel load_checked_sr(const CommandContext& ctx, const fs::path& path)
{
    auto model = load_sr_model(path);
    if (!(model.config() == ctx.config.sr)) {
        const auto& c = model.config();
        throw ConfigError(path.string() + ": SR architecture (kernels " + std::to_string(c.kernels[0]) + "/" +
                          std::to_string(c.kernels[1]) + "/" + std::to_string(c.kernels[2]) + ", widths " +
                          std::to_string(c.widths[0]) + "/" + std::to_string(c.widths[1]) +
                          ") does not match sr.kernels / sr.widths in the config");
    }
    return model;
}

std::string params_digest(const ParameterList& params) { return io::sha256_hex(encode_weights(params)); }

train::EpochCallback epoch_logger(const CommandContext& ctx, const std::string& phase)
{
    return [&ctx, phase](const train::EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s epoch %d: train_loss %.6g val_mse %.6g", phase.c_str(), r.epoch, r.train_loss,
                      r.val_mse);
        std::string line = buf;
        if (r.val_advce) {
            std::snprintf(buf, sizeof buf, " val_advce %.6g", *r.val_advce);
            line += buf;
        }
        std::snprintf(buf, sizeof buf, " lr %.3g", r.lr);
        log(ctx, line + buf);
    };
}

std::string model_id_for(const std::string& name)
{
    if (name == "clean") return "Clean";
    if (name == "advsr") return "AdvSR";
    if (name == "bicubic") return "Bicubic";
    return name;
}

struct EvalTarget {
    std::optional<fs::path> checkpoint;  // empty for bicubic
    std::string model_id;
    fs::path out_dir;
};

eval::EvalReport run_eval(const CommandContext& ctx, const EvalTarget& target, const ClassifierModel& classifier,
                          const data::DatasetSplit& test)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto seeds = resolve_seeds(ctx.config.seed);
    const auto featnet = FeatureExtractor::build(seeds.featnet);

    eval::EvalReport report;
    ordered_json m = manifest_base(ctx, "eval");
    if (target.checkpoint) {
        const auto model = load_checked_sr(ctx, *target.checkpoint);
        report = eval::evaluate(model, classifier, featnet, test, ctx.config.attack, target.model_id);
        m["checkpoint"] = ordered_json{{"path", fs::absolute(*target.checkpoint).lexically_normal().generic_string()},
                                       {"sha256", io::sha256_file(*target.checkpoint)}};
    } else {
        report = eval::evaluate(eval::bicubic_upscaler(), classifier, featnet, test, ctx.config.attack, target.model_id);
        m["checkpoint"] = nullptr;
    }

    ensure_dir(target.out_dir);
    io::write_text_atomic(target.out_dir / "report.json", report.to_json().dump(2) + "\n");
    io::write_text_atomic(target.out_dir / "report.md", eval::markdown_table(std::span(&report, 1)));
    io::write_text_atomic(target.out_dir / "samples.csv", report.samples_csv());

    m["model_id"] = target.model_id;
    m["classifier"] = file_entry(ctx, ctx.layout.checkpoint(train::Mode::classifier));
    m["test_split"] = file_entry(ctx, ctx.layout.split_file("test"));
    m["outputs"] = ordered_json::array({file_entry(ctx, target.out_dir / "report.json"),
                                        file_entry(ctx, target.out_dir / "report.md"),
                                        file_entry(ctx, target.out_dir / "samples.csv")});
    write_manifest(target.out_dir, m, seconds_since(t0));

    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: PSNR %.2f dB, SSIM %.4f, T-ASR %.1f%%, U-ASR %.1f%%, NSA %.1f%%",
                  target.model_id.c_str(), report.quality.psnr.mean, report.quality.ssim.mean, report.attack.targeted_asr,
                  report.attack.untargeted_asr, report.attack.nsa);
    log(ctx, buf);
    return report;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j)
{
    ExperimentConfig c;
    Section root(j, "");

    if (auto d = root.child("data")) {
        d->get("seed", c.seed);
        d->get("classes", c.data.classes);
        d->get("train_per_class", c.data.train_per_class);
        d->get("val_per_class", c.data.val_per_class);
        d->get("test_per_class", c.data.test_per_class);
        d->get("hr_size", c.data.hr_size);
        if (auto g = d->child("degrade")) {
            g->get("kernel_size", c.data.degrade.kernel_size);
            g->get("sigma", c.data.degrade.sigma);
            if (auto ds = g->text("downsample")) c.data.degrade.downsample = parse_downsample(g->where("downsample"), *ds);
            g->finish();
        }
        d->finish();
    }
    if (auto a = root.child("attack")) {
        a->get("source", c.attack.source);
        a->get("target", c.attack.target);
        a->finish();
    }
    if (auto k = root.child("classifier")) {
        k->get("widths", c.classifier.widths);
        k->get("epochs", c.classifier_epochs);
        k->get("batch_size", c.classifier_batch);
        k->get("lr", c.classifier_lr);
        k->finish();
    }
    if (auto s = root.child("sr")) {
        s->get("kernels", c.sr.kernels);
        s->get("widths", c.sr.widths);
        s->get("batch_size", c.sr_batch);
        if (auto mode = s->text("mode")) {
            if (*mode != "sr-clean" && *mode != "sr-advsr") {
                throw ConfigError(s->where("mode") + ": expected \"sr-clean\" or \"sr-advsr\", got \"" + *mode + "\"");
            }
            c.sr_mode = train::parse_mode(*mode);
        }
        s->get("r", c.r);
        read_phase(*s, "clean", c.clean);
        read_phase(*s, "advsr", c.advsr);
        s->get("sweep_r", c.sweep_r);
        s->finish();
    }
    if (auto e = root.child("eval")) {
        std::string dir = c.run_dir.generic_string();
        e->get("run_dir", dir);
        c.run_dir = dir;
        e->finish();
    }
    root.finish();

    c.attack.classes = c.data.classes;
    c.classifier.classes = c.data.classes;
    c.classifier.input_size = c.data.hr_size;
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path)
{
    if (!fs::is_regular_file(path)) throw IoError("config file not found: " + path.string());
    json j;
    const auto bytes = io::read_file(path);
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    try {
        return from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ordered_json ExperimentConfig::to_json() const
{
    const char* ds = data.degrade.downsample == data::Downsample::decimate ? "decimate" : "average";
    ordered_json j;
    j["data"] = ordered_json{{"seed", seed},
                             {"classes", data.classes},
                             {"train_per_class", data.train_per_class},
                             {"val_per_class", data.val_per_class},
                             {"test_per_class", data.test_per_class},
                             {"hr_size", data.hr_size},
                             {"degrade",
                              {{"kernel_size", data.degrade.kernel_size}, {"sigma", data.degrade.sigma}, {"downsample", ds}}}};
    j["attack"] = ordered_json{{"source", attack.source}, {"target", attack.target}};
    j["classifier"] = ordered_json{
        {"widths", classifier.widths}, {"epochs", classifier_epochs}, {"batch_size", classifier_batch}, {"lr", classifier_lr}};
    j["sr"] = ordered_json{{"kernels", sr.kernels},
                           {"widths", sr.widths},
                           {"batch_size", sr_batch},
                           {"mode", sr_mode == train::Mode::sr_clean ? "sr-clean" : "sr-advsr"},
                           {"r", r},
                           {"clean", phase_json(clean)},
                           {"advsr", phase_json(advsr)},
                           {"sweep_r", sweep_r}};
    j["eval"] = ordered_json{{"run_dir", run_dir.generic_string()}};
    return j;
}

void ExperimentConfig::validate() const
{
    try {
        data::validate(data);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("data: ") + e.what());
    }
    require(attack.source >= 0 && attack.source < data.classes, "attack.source", "must be a class id below data.classes");
    require(attack.target >= 0 && attack.target < data.classes, "attack.target", "must be a class id below data.classes");
    require(attack.source != attack.target, "attack.target", "must differ from attack.source");
    for (int w : classifier.widths) require(w > 0, "classifier.widths", "must be positive");
    require(classifier_epochs > 0, "classifier.epochs", "must be positive");
    require(classifier_batch > 0, "classifier.batch_size", "must be positive");
    require(classifier_lr > 0.0 && std::isfinite(classifier_lr), "classifier.lr", "must be positive");
    for (int k : sr.kernels) require(k > 0 && k % 2 == 1, "sr.kernels", "must be positive odd sizes");
    for (int w : sr.widths) require(w > 0, "sr.widths", "must be positive");
    require(sr_batch > 0, "sr.batch_size", "must be positive");
    require(r >= 0.0 && std::isfinite(r), "sr.r", "must be a finite non-negative number");
    require(clean.epochs > 0, "sr.clean.epochs", "must be positive");
    require(clean.lr > 0.0 && std::isfinite(clean.lr), "sr.clean.lr", "must be positive");
    require(advsr.epochs > 0, "sr.advsr.epochs", "must be positive");
    require(advsr.lr > 0.0 && std::isfinite(advsr.lr), "sr.advsr.lr", "must be positive");
    require(!sweep_r.empty(), "sr.sweep_r", "must not be empty");
    for (double v : sweep_r) require(v >= 0.0 && std::isfinite(v), "sr.sweep_r", "entries must be finite and non-negative");
    require(!run_dir.empty(), "eval.run_dir", "must not be empty");
}

train::TrainConfig ExperimentConfig::train_config(train::Mode mode) const
{
    const auto seeds = resolve_seeds(seed);
    train::TrainConfig t = train::TrainConfig::defaults(mode);
    t.attack = attack;
    t.sr = sr;
    t.classifier = classifier;
    t.r = r;
    switch (mode) {
    case train::Mode::classifier:
        t.epochs = classifier_epochs;
        t.batch_size = classifier_batch;
        t.lr = classifier_lr;
        t.seed = seeds.classifier;
        break;
    case train::Mode::sr_clean:
        t.epochs = clean.epochs;
        t.batch_size = sr_batch;
        t.lr = clean.lr;
        t.selection = clean.selection;
        t.seed = seeds.sr;
        break;
    case train::Mode::sr_advsr:
        t.epochs = advsr.epochs;
        t.batch_size = sr_batch;
        t.lr = advsr.lr;
        t.selection = advsr.selection;
        t.seed = seeds.sr;
        break;
    }
    return t;
}

ResolvedSeeds resolve_seeds(std::uint64_t seed)
{
    return ResolvedSeeds{seed, splitmix64(seed ^ 0xc1a55ull), splitmix64(seed ^ 0x5e5eull), splitmix64(seed ^ 0xfea7ull)};
}

void apply_env_overrides(ExperimentConfig& cfg)
{
    const char* v = std::getenv("ADVSR_SEED");
    if (!v) return;
    const std::string s = v;
    std::size_t used = 0;
    unsigned long long seed = 0;
    try {
        seed = std::stoull(s, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size() || s[0] == '-') {
        throw ConfigError("ADVSR_SEED: expected a non-negative integer, got \"" + s + "\"");
    }
    cfg.seed = seed;
}

fs::path RunLayout::phase_dir(train::Mode mode) const
{
    switch (mode) {
    case train::Mode::classifier:
        return root / "classifier";
    case train::Mode::sr_clean:
        return root / "sr_clean";
    case train::Mode::sr_advsr:
        return root / "sr_advsr";
    }
    return root;
}

CommandContext make_context(const fs::path& config_path, const std::optional<fs::path>& out, Logger log)
{
    CommandContext ctx;
    ctx.config = ExperimentConfig::load(config_path);
    apply_env_overrides(ctx.config);
    ctx.config_path = config_path;
    fs::path root = out ? *out : ctx.config.run_dir;
    if (!out && root.is_relative()) root = config_path.parent_path() / root;
    ctx.layout.root = fs::absolute(root).lexically_normal();
    ctx.log = std::move(log);
    return ctx;
}

void cmd_gen_data(const CommandContext& ctx)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto seeds = resolve_seeds(ctx.config.seed);
    const auto ds = data::make_dataset(ctx.config.data, seeds.data);
    ensure_dir(ctx.layout.data_dir());

    ordered_json m = manifest_base(ctx, "gen-data");
    m["data_sha256"] = data_digest(ctx.config);
    ordered_json splits = ordered_json::array();
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        const auto path = ctx.layout.split_file(split->name);
        data::save_split(*split, path);
        auto e = file_entry(ctx, path);
        e["samples"] = split->samples.size();
        splits.push_back(e);
        log(ctx, "wrote " + path.string() + " (" + std::to_string(split->samples.size()) + " samples)");
    }
    m["splits"] = splits;
    write_manifest(ctx.layout.data_dir(), m, seconds_since(t0));
}

TrainOutcome cmd_train(const CommandContext& ctx, train::Mode phase, std::optional<double> r_override,
                       const std::optional<fs::path>& dir_override)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& L = ctx.layout;
    std::string phase_name = train::mode_name(phase);
    std::replace(phase_name.begin(), phase_name.end(), '_', '-');

    std::vector<fs::path> deps = data_files(L);
    if (phase != train::Mode::classifier) deps.push_back(L.checkpoint(train::Mode::classifier));
    if (phase == train::Mode::sr_advsr) deps.push_back(L.checkpoint(train::Mode::sr_clean));
    require_files("train --phase " + phase_name, deps);

    auto tcfg = ctx.config.train_config(phase);
    if (r_override) tcfg.r = *r_override;
    const fs::path dir = dir_override ? *dir_override : L.phase_dir(phase);
    const fs::path ckpt = dir / "weights.advw";

    const auto dataset = load_dataset(ctx);
    ordered_json m = manifest_base(ctx, "train");
    m["phase"] = phase_name;
    ordered_json inputs = ordered_json::array();
    for (const auto& split : {"train", "val", "test"}) inputs.push_back(file_entry(ctx, L.split_file(split)));

    TrainOutcome outcome;
    outcome.checkpoint = ckpt;
    std::string log_csv;
    ParameterList params;

    if (phase == train::Mode::classifier) {
        auto run = train::train_classifier(tcfg, dataset, epoch_logger(ctx, phase_name));
        params = run.model.parameters();
        log_csv = run.log.to_csv();
        m["selected_epoch"] = run.selected_epoch;
        m["initial_val_accuracy"] = run.initial_val_accuracy;
        m["val_accuracy"] = run.val_accuracy;
        char buf[120];
        std::snprintf(buf, sizeof buf, "classifier validation accuracy %.2f%% (epoch %d)", 100.0 * run.val_accuracy,
                      run.selected_epoch);
        log(ctx, buf);
    } else {
        const auto seeds = resolve_seeds(ctx.config.seed);
        const auto classifier = load_checked_classifier(ctx);
        const auto featnet = FeatureExtractor::build(seeds.featnet);
        const std::string cls_before = params_digest(classifier.parameters());
        const std::string feat_before = params_digest(featnet.parameters());
        inputs.push_back(file_entry(ctx, L.checkpoint(train::Mode::classifier)));

        std::optional<SrModel> init;
        if (phase == train::Mode::sr_advsr) {
            init = load_checked_sr(ctx, L.checkpoint(train::Mode::sr_clean));
            inputs.push_back(file_entry(ctx, L.checkpoint(train::Mode::sr_clean)));
        }
        auto run = train::finetune_sr(tcfg, dataset, classifier, featnet, init ? &*init : nullptr,
                                      epoch_logger(ctx, phase_name));
        if (params_digest(classifier.parameters()) != cls_before || params_digest(featnet.parameters()) != feat_before) {
            throw std::logic_error("frozen network changed during SR training");
        }
        params = run.model.parameters();
        log_csv = run.log.to_csv();
        m["selected_epoch"] = run.selected_epoch;
        m["frozen"] = ordered_json{{"classifier_sha256", cls_before}, {"featnet_sha256", feat_before}};
        if (run.balance) {
            const auto& b = *run.balance;
            m["balance"] = ordered_json{{"r", b.r}, {"l0_advce", b.l0_advce}, {"l0_sr", b.l0_sr}, {"lambda", b.lambda}};
            outcome.balance = b;
            log(ctx, "lambda " + fmt17(b.lambda) + " (r " + format_r(b.r) + ", L0_advce " + fmt17(b.l0_advce) + ", L0_sr " +
                         fmt17(b.l0_sr) + ")");
        }
    }

    ensure_dir(dir);
    save_weights(params, ckpt);
    io::write_text_atomic(dir / "log.csv", log_csv);
    m["train_config"] = ordered_json{{"epochs", tcfg.epochs},  {"batch_size", tcfg.batch_size},
                                     {"lr", tcfg.lr},          {"seed", tcfg.seed},
                                     {"r", tcfg.r},            {"selection", selection_name(tcfg.selection)}};
    m["inputs"] = inputs;
    m["checkpoint"] = file_entry(ctx, ckpt);
    m["log"] = file_entry(ctx, dir / "log.csv");
    write_manifest(dir, m, seconds_since(t0));
    log(ctx, "wrote " + ckpt.string());
    return outcome;
}

std::vector<eval::EvalReport> cmd_eval(const CommandContext& ctx, const std::optional<fs::path>& checkpoint,
                                       const std::optional<std::string>& name)
{
    const auto& L = ctx.layout;
    std::vector<fs::path> deps = data_files(L);
    deps.push_back(L.checkpoint(train::Mode::classifier));

    std::vector<EvalTarget> targets;
    if (checkpoint) {
        const bool bicubic = checkpoint->generic_string() == "bicubic";
        std::string n;
        if (name) {
            n = *name;
        } else if (bicubic) {
            n = "bicubic";
        } else {
            const auto parent = fs::absolute(*checkpoint).lexically_normal().parent_path();
            if (parent == L.phase_dir(train::Mode::sr_clean)) {
                n = "clean";
            } else if (parent == L.phase_dir(train::Mode::sr_advsr)) {
                n = "advsr";
            } else {
                n = parent.filename().string();
            }
        }
        if (n.empty() || n.find('/') != std::string::npos || n == "." || n == "..") {
            throw ConfigError("invalid evaluation name \"" + n + "\"");
        }
        if (!bicubic) deps.push_back(*checkpoint);
        targets.push_back({bicubic ? std::nullopt : std::optional<fs::path>(*checkpoint), model_id_for(n), L.eval_dir(n)});
    } else {
        for (auto [mode, n] : {std::pair{train::Mode::sr_clean, "clean"}, std::pair{train::Mode::sr_advsr, "advsr"}}) {
            if (fs::is_regular_file(L.checkpoint(mode))) targets.push_back({L.checkpoint(mode), model_id_for(n), L.eval_dir(n)});
        }
        if (targets.empty()) {
            deps.push_back(L.checkpoint(train::Mode::sr_clean));
            deps.push_back(L.checkpoint(train::Mode::sr_advsr));
        }
    }
    require_files("eval", deps);

    const auto classifier = load_checked_classifier(ctx);
    const auto test = load_test_split(ctx);
    std::vector<eval::EvalReport> reports;
    for (const auto& t : targets) reports.push_back(run_eval(ctx, t, classifier, test));
    if (!checkpoint) {
        io::write_text_atomic(L.root / "eval" / "table.md", eval::markdown_table(reports));
    }
    return reports;
}

SweepResult cmd_sweep_r(const CommandContext& ctx, const std::vector<double>& r_list)
{
    if (r_list.empty()) throw ConfigError("--r-list: the r list is empty");
    for (double r : r_list) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("--r-list: r must be finite and non-negative, got " + fmt17(r));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto& L = ctx.layout;
    std::vector<fs::path> deps = data_files(L);
    deps.push_back(L.checkpoint(train::Mode::classifier));
    deps.push_back(L.checkpoint(train::Mode::sr_clean));
    require_files("sweep-r", deps);

    const auto classifier = load_checked_classifier(ctx);
    const auto test = load_test_split(ctx);

    SweepResult result;
    result.clean = run_eval(ctx, {L.checkpoint(train::Mode::sr_clean), "Clean", L.eval_dir("clean")}, classifier, test);
    ordered_json rows = ordered_json::array();
    for (double r : r_list) {
        const fs::path dir = L.sweep_dir() / ("r_" + format_r(r));
        log(ctx, "sweep: r = " + format_r(r));
        auto outcome = cmd_train(ctx, train::Mode::sr_advsr, r, dir);
        auto report = run_eval(ctx, {outcome.checkpoint, "AdvSR r=" + format_r(r), dir / "eval"}, classifier, test);
        rows.push_back(ordered_json{{"r", r},
                                    {"manifest", rel(ctx, dir / "manifest.json")},
                                    {"report", file_entry(ctx, dir / "eval" / "report.json")}});
        result.rows.push_back({r, *outcome.balance, std::move(report)});
    }

    std::vector<eval::EvalReport> table{result.clean};
    for (const auto& row : result.rows) table.push_back(row.report);
    io::write_text_atomic(L.sweep_dir() / "summary.csv", sweep_csv(result));
    io::write_text_atomic(L.sweep_dir() / "summary.md", eval::markdown_table(table));

    ordered_json m = manifest_base(ctx, "sweep-r");
    m["r_list"] = r_list;
    m["clean_report"] = file_entry(ctx, L.eval_dir("clean") / "report.json");
    m["rows"] = rows;
    m["summary"] = file_entry(ctx, L.sweep_dir() / "summary.csv");
    write_manifest(L.sweep_dir(), m, seconds_since(t0));
    return result;
}

std::string cmd_report(const std::vector<fs::path>& run_dirs)
{
    if (run_dirs.empty()) throw ConfigError("report: no run directories given");

    struct Entry {
        std::string run;
        fs::path file;
        eval::EvalReport report;
        std::string sha;
        std::string config_sha;
    };
    std::vector<Entry> entries;
    std::vector<std::pair<std::string, std::set<std::string>>> run_configs;

    for (const auto& dir : run_dirs) {
        if (!fs::is_directory(dir)) throw DependencyError("report: run directory not found: " + dir.string());
        const std::string run = dir.lexically_normal().generic_string();

        std::vector<fs::path> files;
        if (fs::is_directory(dir / "eval")) {
            std::vector<fs::path> named;
            for (const auto& e : fs::directory_iterator(dir / "eval")) {
                if (e.is_directory() && fs::is_regular_file(e.path() / "report.json")) named.push_back(e.path());
            }
            std::sort(named.begin(), named.end(), [](const fs::path& a, const fs::path& b) {
                auto rank = [](const fs::path& p) {
                    const auto n = p.filename().string();
                    return n == "bicubic" ? 0 : n == "clean" ? 1 : n == "advsr" ? 2 : 3;
                };
                if (rank(a) != rank(b)) return rank(a) < rank(b);
                return a.filename() < b.filename();
            });
            for (const auto& p : named) files.push_back(p / "report.json");
        }
        if (fs::is_directory(dir / "sweep")) {
            std::vector<std::pair<double, fs::path>> sweep;
            for (const auto& e : fs::directory_iterator(dir / "sweep")) {
                const auto n = e.path().filename().string();
                if (!e.is_directory() || n.rfind("r_", 0) != 0) continue;
                if (!fs::is_regular_file(e.path() / "eval" / "report.json")) continue;
                sweep.emplace_back(std::strtod(n.c_str() + 2, nullptr), e.path() / "eval" / "report.json");
            }
            std::sort(sweep.begin(), sweep.end());
            for (const auto& [r, p] : sweep) files.push_back(p);
        }
        if (files.empty()) throw DependencyError("report: no evaluation outputs under " + dir.string() + "; run eval first");

        std::set<std::string> digests;
        for (const auto& f : files) {
            Entry e;
            e.run = run;
            e.file = f.lexically_relative(dir);
            const auto bytes = io::read_file(f);
            e.sha = io::sha256_hex(bytes);
            try {
                e.report = eval::EvalReport::from_json(json::parse(bytes.begin(), bytes.end()));
            } catch (const json::exception& ex) {
                throw FormatError(f.string() + ": " + ex.what());
            }
            const auto manifest = f.parent_path() / "manifest.json";
            if (!fs::is_regular_file(manifest)) throw DependencyError("report: missing " + manifest.string());
            e.config_sha = read_json(manifest).value("config_sha256", std::string{});
            digests.insert(e.config_sha);
            entries.push_back(std::move(e));
        }
        run_configs.emplace_back(run, digests);
    }

    auto line = [](const std::vector<std::string>& cells) {
        std::string out = "|";
        for (const auto& c : cells) out += " " + c + " |";
        return out + "\n";
    };

    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "Generated by advsr " << kToolVersion << ".\n\n";
    os << "## Runs\n\n";
    for (const auto& [run, digests] : run_configs) {
        os << "- `" << run << "`: config sha256";
        for (const auto& d : digests) os << " `" << d << "`";
        os << "\n";
    }
    os << "\n## Results\n\n";
    std::vector<std::string> header{"Run"};
    for (auto& c : eval::markdown_columns()) header.push_back(c);
    os << line(header) << line(std::vector<std::string>(header.size(), "---"));
    for (const auto& e : entries) {
        std::vector<std::string> cells{e.run};
        for (auto& c : eval::markdown_cells(e.report)) cells.push_back(c);
        os << line(cells);
    }
    os << "\nAttack success rates are computed over source-class test images only.\n";
    os << "\n## Sources\n\n";
    os << line({"Run", "Model", "File", "sha256", "config sha256"}) << line({"---", "---", "---", "---", "---"});
    for (const auto& e : entries) {
        os << line({e.run, e.report.model_id, "`" + e.file.generic_string() + "`", "`" + e.sha + "`", "`" + e.config_sha + "`"});
    }
    return os.str();
}

std::vector<double> parse_r_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw ConfigError("--r-list: empty entry in \"" + text + "\"");
        item = item.substr(b, e - b + 1);
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size()) throw ConfigError("--r-list: \"" + item + "\" is not a number");
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("--r-list: r must be finite and non-negative, got " + item);
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("--r-list: the r list is empty");
    return out;
}

std::string sweep_csv(const SweepResult& sweep)
{
    std::string out =
        "r,lambda,l0_advce,l0_sr,psnr_mean,psnr_std,ssim_mean,ssim_std,pd_mean,pd_std,targeted_asr,untargeted_asr,nsa,"
        "targeted_equals_untargeted\n";
    for (const auto& row : sweep.rows) {
        const auto& q = row.report.quality;
        const auto& a = row.report.attack;
        for (double v : {row.r, row.balance.lambda, row.balance.l0_advce, row.balance.l0_sr, q.psnr.mean, q.psnr.stddev,
                         q.ssim.mean, q.ssim.stddev, q.pd.mean, q.pd.stddev, a.targeted_asr, a.untargeted_asr, a.nsa}) {
            out += fmt17(v) + ",";
        }
        out += row.report.targeted_equals_untargeted() ? "true\n" : "false\n";
    }
    return out;
}

std::string format_r(double r)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", r);
    return buf;
}

}  // namespace advsr::exp
