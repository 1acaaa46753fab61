#pragma once

#include "attreid/backbone.hpp"

namespace attreid {

// Attribute Decompose Head: C -> C/4 3x3 conv, ReLU, C/4 -> M 1x1 conv,
// then the delta activation. Output is one strictly positive attention map
// per binary attribute.
struct ADHParams {
    Var conv1_weight;  // [C/4, C, 3, 3]
    Var conv1_bias;    // [C/4]
    Var conv2_weight;  // [M, C/4, 1, 1]
    Var conv2_bias;    // [M]

    static ADHParams init(std::size_t channels, std::size_t attribute_dims,
                          std::mt19937_64& rng);
    NamedParams named_parameters(const std::string& prefix = "adh.");
};

Var adh_forward(const Var& feature_map, const ADHParams& params, const ActivationParams& act);
Tensor adh_forward(const Tensor& feature_map, const ADHParams& params,
                   const ActivationParams& act);

// F^k = F (x) A^k, the attention map broadcast across channels.
std::vector<Var> attribute_feature_maps(const Var& feature_map, const Var& attention_maps);
std::vector<Tensor> attribute_feature_maps(const Tensor& feature_map,
                                           const Tensor& attention_maps);

// GeM-pooled attribute-guided feature vectors f^k, one [C] vector per map.
std::vector<Var> attribute_feature_vectors(const Var& feature_map, const Var& attention_maps,
                                           double gem_p);

// Stream-2 trunk: shared low/mid stages are evaluated with Stream 1's
// weights (single-copy storage), the remaining stages and the ADH are owned
// here.
class ExplainableNet {
public:
    ExplainableNet(const Backbone& base, std::size_t attribute_dims, std::uint64_t seed);

    const Backbone& base() const { return *base_; }
    std::size_t attribute_dims() const { return attribute_dims_; }

    Var forward_trunk(const Var& image) const;  // G(x), same shape as F(x)
    Var forward_attention(const Var& image, const ActivationParams& act) const;
    FeatureMap forward_trunk(const Tensor& image, std::string image_id = {}) const;
    Tensor forward_attention(const Tensor& image, const ActivationParams& act) const;

    NamedParams named_parameters();  // unshared stages + ADH only
    ADHParams& adh() { return adh_; }

private:
    const Backbone* base_;
    std::size_t attribute_dims_;
    std::vector<StageParams> own_stages_;  // stages [S, n)
    ADHParams adh_;
};

}  // namespace attreid
