#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attreid/adh.hpp"
#include "attreid/data.hpp"
#include "attreid/losses.hpp"

namespace attreid {

enum class OptimizerKind { adam, sgd };
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-4;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;       // stream 1: images per batch (2 per identity)
    std::size_t pairs_per_batch = 8;   // stream 2: identities per batch (2 images each)
    double gem_p = 3.0;
    LossConfig loss;
    ActivationParams activation;
    std::uint64_t seed = 1;

    void validate() const;
};

// Plain SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
// step() applies the accumulated gradients and zeroes them.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, std::vector<Var> params);

    void step();
    void zero_grad();

private:
    OptimizerKind kind_;
    double lr_;
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double total = 0.0;
    double distillation = 0.0;
    double prior1 = 0.0;
    double prior2 = 0.0;
    double degenerate_fraction = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Phase 1: identity cross-entropy + batch-hard triplet on the re-ID stream.
// Telemetry CSV: `epoch,L_total`. Throws NonFiniteLoss on divergence.
void train_stream1(const Dataset& dataset, const std::vector<int>& train_ids, Backbone& backbone,
                   const TrainConfig& config, const std::string& telemetry_path,
                   const EpochCallback& on_epoch = {});

// Phase 2: distillation + attribute priors; Stream-1 weights (including the
// shared stages) are frozen for the duration of the call. Telemetry CSV:
// `epoch,L_total,L_d,L_p1,L_p2,degenerate_pair_fraction`.
void train_stream2(const Dataset& dataset, const std::vector<int>& train_ids, Backbone& backbone,
                   ExplainableNet& net, const AttributeSchema& schema, const TrainConfig& config,
                   const std::string& telemetry_path, const EpochCallback& on_epoch = {});

// Held-out pair audit used after training: the distillation ratio
// |d - sum d_k| / max(d, 1e-9) and how often the summed exclusive share
// exceeds the count-proportional baseline M_E / M.
struct PairAudit {
    double mean_distill_ratio = 0.0;
    double exclusive_win_fraction = 0.0;  // over pairs with 0 < M_E < M
    std::size_t pair_count = 0;
    std::size_t scored_pairs = 0;  // pairs entering the win fraction
};

PairAudit audit_pairs(const Dataset& dataset, const std::vector<int>& ids,
                      const Backbone& backbone, const ExplainableNet& net,
                      const AttributeSchema& schema, const TrainConfig& config,
                      std::size_t max_pairs, std::uint64_t seed);

}  // namespace attreid
