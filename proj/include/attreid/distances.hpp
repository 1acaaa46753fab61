#pragma once

#include <string>
#include <vector>

#include "attreid/attributes.hpp"
#include "attreid/autodiff.hpp"

namespace attreid {

struct DistanceDecomposition {
    double d = 0.0;               // Stream-1 pairwise distance
    std::vector<double> d_k;      // per-attribute guided distances
    double d_hat = 0.0;           // sum of d_k
    std::vector<std::size_t> exclusive_indices;
    std::vector<std::size_t> common_indices;
};

// Euclidean distance between two equal-length embedding vectors.
double pairwise_distance(const Tensor& f_i, const Tensor& f_j);

// Differentiable per-attribute distances d_k = ||gem(F_i (x) A_i^k) -
// gem(F_j (x) A_j^k)||, one scalar Var per attribute map.
std::vector<Var> attribute_distance_graph(const Var& F_i, const Var& F_j, const Var& A_i,
                                          const Var& A_j, double gem_p);

// Value-level decomposition; d is filled from GeM-pooled F_i/F_j.
DistanceDecomposition attribute_distances(const Tensor& F_i, const Tensor& F_j,
                                          const Tensor& A_i, const Tensor& A_j, double gem_p);

// Per-pair explanation export: `k,attribute_name,d_k,share,exclusive`.
// Shares are d_k / d_hat, emitted as 0 with degenerate=true when d_hat == 0.
void write_decomposition_csv(const std::string& path, const AttributeSchema& schema,
                             const DistanceDecomposition& decomp);

}  // namespace attreid
