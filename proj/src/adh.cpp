#include "attreid/adh.hpp"

namespace attreid {

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

ADHParams ADHParams::init(std::size_t channels, std::size_t attribute_dims,
                          std::mt19937_64& rng) {
    if (channels % 8 != 0) throw ConfigError("ADH needs channels divisible by 8");
    const std::size_t mid = channels / 4;
    ADHParams p;
    p.conv1_weight = Var::leaf(
        uniform_init({mid, channels, 3, 3}, std::sqrt(1.0 / static_cast<double>(channels * 9)), rng));
    p.conv1_bias = Var::leaf(Tensor::zeros({mid}));
    p.conv2_weight = Var::leaf(
        uniform_init({attribute_dims, mid, 1, 1}, std::sqrt(1.0 / static_cast<double>(mid)), rng));
    // Start the attention maps near delta(b) ~ 1/(2M) so the decomposed sum
    // over M maps opens close to the pairwise distance it has to match,
    // instead of M/2 times larger; the huge early correction would otherwise
    // drive preactivations into the flat tail of the activation.
    Tensor bias({attribute_dims});
    const double b0 = -std::log(2.0 * static_cast<double>(attribute_dims));
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = b0;
    p.conv2_bias = Var::leaf(bias);
    return p;
}

NamedParams ADHParams::named_parameters(const std::string& prefix) {
    return {{prefix + "conv1.weight", conv1_weight},
            {prefix + "conv1.bias", conv1_bias},
            {prefix + "conv2.weight", conv2_weight},
            {prefix + "conv2.bias", conv2_bias}};
}

Var adh_forward(const Var& feature_map, const ADHParams& params, const ActivationParams& act) {
    const Tensor& f = feature_map.value();
    if (f.rank() != 3) throw ShapeMismatch("adh_forward expects a [C,h,w] feature map");
    if (f.dim(0) % 8 != 0) throw ConfigError("adh_forward: channel count must be divisible by 8");
    Var x = relu(conv2d(feature_map, params.conv1_weight, params.conv1_bias, 1, 1));
    x = conv2d(x, params.conv2_weight, params.conv2_bias, 1, 0);
    return delta_activation(x, act);
}

Tensor adh_forward(const Tensor& feature_map, const ADHParams& params,
                   const ActivationParams& act) {
    return adh_forward(Var::constant(feature_map), params, act).value();
}

std::vector<Var> attribute_feature_maps(const Var& feature_map, const Var& attention_maps) {
    const Tensor& f = feature_map.value();
    const Tensor& a = attention_maps.value();
    if (f.rank() != 3 || a.rank() != 3 || f.dim(1) != a.dim(1) || f.dim(2) != a.dim(2))
        throw ShapeMismatch("attribute_feature_maps: spatial dims of F and A must agree");
    std::vector<Var> out;
    out.reserve(a.dim(0));
    for (std::size_t k = 0; k < a.dim(0); ++k)
        out.push_back(spatial_mul(feature_map, slice_channel(attention_maps, k)));
    return out;
}

std::vector<Tensor> attribute_feature_maps(const Tensor& feature_map,
                                           const Tensor& attention_maps) {
    std::vector<Tensor> out;
    for (auto& v : attribute_feature_maps(Var::constant(feature_map), Var::constant(attention_maps)))
        out.push_back(v.value());
    return out;
}

std::vector<Var> attribute_feature_vectors(const Var& feature_map, const Var& attention_maps,
                                           double gem_p) {
    std::vector<Var> out;
    for (auto& fk : attribute_feature_maps(feature_map, attention_maps))
        out.push_back(gem_pool(fk, gem_p));
    return out;
}

ExplainableNet::ExplainableNet(const Backbone& base, std::size_t attribute_dims,
                               std::uint64_t seed)
    : base_(&base), attribute_dims_(attribute_dims) {
    const auto& cfg = base.config();
    std::mt19937_64 rng(seed);
    std::size_t in_ch = cfg.shared_stage_count == 0
                            ? cfg.in_channels
                            : cfg.stages[cfg.shared_stage_count - 1].out_channels;
    for (std::size_t i = cfg.shared_stage_count; i < cfg.stages.size(); ++i) {
        own_stages_.push_back(StageParams::init(in_ch, cfg.stages[i].out_channels, rng));
        in_ch = cfg.stages[i].out_channels;
    }
    adh_ = ADHParams::init(cfg.out_channels(), attribute_dims, rng);
}

Var ExplainableNet::forward_trunk(const Var& image) const {
    const auto& cfg = base_->config();
    Var x = image;
    for (std::size_t i = 0; i < cfg.shared_stage_count; ++i) x = base_->run_stage(i, x);
    for (std::size_t i = 0; i < own_stages_.size(); ++i)
        x = run_stage(own_stages_[i], x, cfg.stages[cfg.shared_stage_count + i].stride);
    return x;
}

Var ExplainableNet::forward_attention(const Var& image, const ActivationParams& act) const {
    return adh_forward(forward_trunk(image), adh_, act);
}

FeatureMap ExplainableNet::forward_trunk(const Tensor& image, std::string image_id) const {
    return {forward_trunk(Var::constant(image)).value(), std::move(image_id)};
}

Tensor ExplainableNet::forward_attention(const Tensor& image, const ActivationParams& act) const {
    return forward_attention(Var::constant(image), act).value();
}

NamedParams ExplainableNet::named_parameters() {
    NamedParams out;
    const std::size_t S = base_->config().shared_stage_count;
    for (std::size_t i = 0; i < own_stages_.size(); ++i) {
        const std::string prefix = "stream2.stage" + std::to_string(S + i) + ".";
        out.emplace_back(prefix + "weight", own_stages_[i].weight);
        out.emplace_back(prefix + "bias", own_stages_[i].bias);
        out.emplace_back(prefix + "gain", own_stages_[i].gain);
    }
    for (auto& p : adh_.named_parameters()) out.push_back(std::move(p));
    return out;
}

}  // namespace attreid
