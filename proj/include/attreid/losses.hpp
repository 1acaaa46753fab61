#pragma once

#include <vector>

#include "attreid/attributes.hpp"
#include "attreid/autodiff.hpp"

namespace attreid {

struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double v = 0.5;
    double margin = 0.3;

    void validate() const {
        if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidParam("alpha/beta must be >= 0");
        if (!(v > 0.0 && v < 1.0)) throw InvalidParam("v must be in (0,1)");
    }
};

struct LossBreakdown {
    double total = 0.0;
    double distillation = 0.0;  // L_d
    double prior1 = 0.0;        // L_p1
    double prior2 = 0.0;        // L_p2
    double lambda_value = 0.0;
    bool degenerate = false;    // M_E in {0, M}: prior losses skipped
};

// |d - sum_k d_k|
Var metric_distillation(const Var& d, const std::vector<Var>& d_k);
double metric_distillation(double d, const std::vector<double>& d_k);

// lambda = 1/2 ln[(M - M_E (M_E/M)^v) / (M_E (1 - (M_E/M)^v))].
// Throws DegeneratePair for M_E == 0 or M_E == M.
double lambda_weight(std::size_t M, std::size_t exclusive_count, double v);

// Eq.-style hinge priors over exclusive/common distance shares. d_k holds
// one scalar per binary attribute; indices partition {0..M-1}.
Var prior_loss_p1(const std::vector<Var>& d_k, const std::vector<std::size_t>& exclusive_indices,
                  const std::vector<std::size_t>& common_indices, double v);
Var prior_loss_p2(const std::vector<Var>& d_k, const std::vector<std::size_t>& exclusive_indices,
                  const std::vector<std::size_t>& common_indices, double v);

// Composition: L = L_d + alpha L_p1 + beta L_p2, prior losses skipped for
// degenerate pairs (M_E == 0 or M_E == M) and for d_hat == 0.
Var total_loss(const Var& d, const std::vector<Var>& d_k, const PairwiseAttributeVector& pair,
               const LossConfig& config, LossBreakdown* breakdown = nullptr);
LossBreakdown total_loss(double d, const std::vector<double>& d_k,
                         const PairwiseAttributeVector& pair, const LossConfig& config);

// Value-level convenience wrappers used by the CLI and tests.
double prior_loss_p1_value(const std::vector<double>& d_k,
                           const std::vector<std::size_t>& exclusive_indices,
                           const std::vector<std::size_t>& common_indices, double v);
double prior_loss_p2_value(const std::vector<double>& d_k,
                           const std::vector<std::size_t>& exclusive_indices,
                           const std::vector<std::size_t>& common_indices, double v);

// Identity cross-entropy + batch-hard triplet loss over a batch of
// embeddings. logits[i] scores embedding i over identities.
Var stream1_loss(const std::vector<Var>& embeddings, const std::vector<Var>& logits,
                 const std::vector<int>& identities, double margin);

}  // namespace attreid
