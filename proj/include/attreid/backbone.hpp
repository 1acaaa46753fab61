#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "attreid/autodiff.hpp"

namespace attreid {

struct StageSpec {
    std::size_t out_channels;
    std::size_t stride;
};

struct BackboneConfig {
    std::vector<StageSpec> stages{{16, 2}, {32, 2}, {64, 2}};
    std::size_t in_channels = 3;
    std::size_t input_height = 64;
    std::size_t input_width = 32;
    std::size_t shared_stage_count = 2;  // S: stages evaluated with Stream-1 weights
    std::size_t id_count = 16;
    std::uint64_t seed = 42;

    void validate() const;
    std::size_t out_channels() const { return stages.back().out_channels; }
    std::pair<std::size_t, std::size_t> output_spatial() const;  // (h, w)
};

// conv -> per-channel scale -> ReLU stage parameters.
struct StageParams {
    Var weight;  // [Cout,Cin,3,3]
    Var bias;    // [Cout]
    Var gain;    // [C]

    static StageParams init(std::size_t in_ch, std::size_t out_ch, std::mt19937_64& rng);
};

struct FeatureMap {
    Tensor values;  // [C,h,w]
    std::string source_image_id;
};

using NamedParams = std::vector<std::pair<std::string, Var>>;

// Stream-1 re-ID trunk plus its identity classifier head. Stream 2 reuses
// the first shared_stage_count stages of this instance (single-copy
// storage) via ExplainableNet.
class Backbone {
public:
    explicit Backbone(BackboneConfig config);

    const BackboneConfig& config() const { return config_; }

    Var forward_reid(const Var& image) const;
    FeatureMap forward_reid(const Tensor& image, std::string image_id = {}) const;

    // Classifier logits from a pooled embedding.
    Var classify(const Var& embedding) const;

    // Stage idx evaluated on x; used by ExplainableNet for shared stages.
    Var run_stage(std::size_t idx, const Var& x) const;

    NamedParams named_parameters();
    NamedParams shared_stage_parameters();  // stages [0, S)

private:
    BackboneConfig config_;
    std::vector<StageParams> stages_;
    Var classifier_weight_;  // [id_count, C]
    Var classifier_bias_;    // [id_count]
};

Var run_stage(const StageParams& stage, const Var& x, std::size_t stride);

// Checkpoint directory: manifest.txt with `name <file> <dims...>` lines,
// one ATRT tensor file per parameter.
void save_checkpoint(const std::string& dir, const NamedParams& params,
                     const std::vector<std::string>& extra_manifest_lines = {});
void load_checkpoint(const std::string& dir, NamedParams& params);
std::vector<std::string> read_checkpoint_extras(const std::string& dir);

}  // namespace attreid
