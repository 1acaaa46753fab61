#include "attreid/backbone.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace attreid {

namespace fs = std::filesystem;

void BackboneConfig::validate() const {
    if (stages.empty()) throw ConfigError("backbone needs at least one stage");
    if (shared_stage_count < 1 || shared_stage_count >= stages.size())
        throw ConfigError("shared_stage_count must satisfy 1 <= S < stage count");
    if (out_channels() % 8 != 0)
        throw ConfigError("final stage channels must be divisible by 8 (ADH reduction)");
    for (const auto& s : stages)
        if (s.out_channels == 0 || s.stride == 0)
            throw ConfigError("stage channels and stride must be positive");
    if (id_count == 0) throw ConfigError("id_count must be positive");
}

std::pair<std::size_t, std::size_t> BackboneConfig::output_spatial() const {
    std::size_t h = input_height, w = input_width;
    for (const auto& s : stages) {
        // 3x3 conv, pad 1: out = floor((n + 2 - 3) / stride) + 1
        h = (h - 1) / s.stride + 1;
        w = (w - 1) / s.stride + 1;
    }
    return {h, w};
}

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

StageParams StageParams::init(std::size_t in_ch, std::size_t out_ch, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in_ch * 9));
    StageParams p;
    p.weight = Var::leaf(uniform_init({out_ch, in_ch, 3, 3}, bound, rng));
    p.bias = Var::leaf(Tensor::zeros({out_ch}));
    p.gain = Var::leaf(Tensor::full({out_ch}, 1.0));
    return p;
}

Var run_stage(const StageParams& stage, const Var& x, std::size_t stride) {
    return relu(channel_scale(conv2d(x, stage.weight, stage.bias, stride, 1), stage.gain));
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    std::size_t in_ch = config_.in_channels;
    for (const auto& s : config_.stages) {
        stages_.push_back(StageParams::init(in_ch, s.out_channels, rng));
        in_ch = s.out_channels;
    }
    const std::size_t C = config_.out_channels();
    const double bound = std::sqrt(1.0 / static_cast<double>(C));
    classifier_weight_ = Var::leaf(uniform_init({config_.id_count, C}, bound, rng));
    classifier_bias_ = Var::leaf(Tensor::zeros({config_.id_count}));
}

Var Backbone::run_stage(std::size_t idx, const Var& x) const {
    return attreid::run_stage(stages_[idx], x, config_.stages[idx].stride);
}

Var Backbone::forward_reid(const Var& image) const {
    const Tensor& v = image.value();
    if (v.rank() != 3 || v.dim(0) != config_.in_channels || v.dim(1) != config_.input_height ||
        v.dim(2) != config_.input_width)
        throw ShapeMismatch("forward_reid: image shape does not match backbone config");
    Var x = image;
    for (std::size_t i = 0; i < stages_.size(); ++i) x = run_stage(i, x);
    return x;
}

FeatureMap Backbone::forward_reid(const Tensor& image, std::string image_id) const {
    return {forward_reid(Var::constant(image)).value(), std::move(image_id)};
}

Var Backbone::classify(const Var& embedding) const {
    return linear(embedding, classifier_weight_, classifier_bias_);
}

NamedParams Backbone::named_parameters() {
    NamedParams out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string prefix = "stage" + std::to_string(i) + ".";
        out.emplace_back(prefix + "weight", stages_[i].weight);
        out.emplace_back(prefix + "bias", stages_[i].bias);
        out.emplace_back(prefix + "gain", stages_[i].gain);
    }
    out.emplace_back("classifier.weight", classifier_weight_);
    out.emplace_back("classifier.bias", classifier_bias_);
    return out;
}

NamedParams Backbone::shared_stage_parameters() {
    NamedParams out;
    for (std::size_t i = 0; i < config_.shared_stage_count; ++i) {
        const std::string prefix = "stage" + std::to_string(i) + ".";
        out.emplace_back(prefix + "weight", stages_[i].weight);
        out.emplace_back(prefix + "bias", stages_[i].bias);
        out.emplace_back(prefix + "gain", stages_[i].gain);
    }
    return out;
}

void save_checkpoint(const std::string& dir, const NamedParams& params,
                     const std::vector<std::string>& extra_manifest_lines) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write checkpoint manifest in " + dir);
    for (const auto& [name, var] : params) {
        const std::string file = name + ".atrt";
        var.value().save((fs::path(dir) / file).string());
        manifest << name << " " << file;
        for (std::size_t d : var.value().shape()) manifest << " " << d;
        manifest << "\n";
    }
    for (const auto& line : extra_manifest_lines) manifest << "# " << line << "\n";
}

void load_checkpoint(const std::string& dir, NamedParams& params) {
    const fs::path manifest_path = fs::path(dir) / "manifest.txt";
    if (!fs::exists(manifest_path))
        throw IoError("checkpoint manifest not found: " + manifest_path.string());
    std::ifstream manifest(manifest_path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string name, file;
        ss >> name >> file;
        entries.emplace_back(name, file);
    }
    for (auto& [name, var] : params) {
        auto it = std::find_if(entries.begin(), entries.end(),
                               [&](const auto& e) { return e.first == name; });
        if (it == entries.end())
            throw IoError("checkpoint is missing parameter " + name + " in " + dir);
        Tensor t = Tensor::load((fs::path(dir) / it->second).string());
        if (!t.same_shape(var.value()))
            throw ShapeMismatch("checkpoint parameter " + name + " has unexpected shape");
        var.mutable_value() = std::move(t);
    }
}

std::vector<std::string> read_checkpoint_extras(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(manifest, line))
        if (!line.empty() && line[0] == '#') out.push_back(line.substr(2));
    return out;
}

}  // namespace attreid
