#include "attreid/distances.hpp"

#include <cmath>
#include <fstream>

#include "attreid/adh.hpp"

namespace attreid {

double pairwise_distance(const Tensor& f_i, const Tensor& f_j) {
    if (!f_i.same_shape(f_j)) throw ShapeMismatch("pairwise_distance: vector lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < f_i.size(); ++i) {
        const double d = f_i[i] - f_j[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<Var> attribute_distance_graph(const Var& F_i, const Var& F_j, const Var& A_i,
                                          const Var& A_j, double gem_p) {
    if (!A_i.value().same_shape(A_j.value()))
        throw ShapeMismatch("attribute_distance_graph: attention stacks differ in shape");
    auto f_i = attribute_feature_vectors(F_i, A_i, gem_p);
    auto f_j = attribute_feature_vectors(F_j, A_j, gem_p);
    std::vector<Var> d_k;
    d_k.reserve(f_i.size());
    for (std::size_t k = 0; k < f_i.size(); ++k)
        d_k.push_back(l2_distance(f_i[k], f_j[k]));
    return d_k;
}

DistanceDecomposition attribute_distances(const Tensor& F_i, const Tensor& F_j,
                                          const Tensor& A_i, const Tensor& A_j, double gem_p) {
    DistanceDecomposition out;
    out.d = pairwise_distance(gem_pool(Var::constant(F_i), gem_p).value(),
                              gem_pool(Var::constant(F_j), gem_p).value());
    auto d_k = attribute_distance_graph(Var::constant(F_i), Var::constant(F_j),
                                        Var::constant(A_i), Var::constant(A_j), gem_p);
    out.d_k.reserve(d_k.size());
    for (const auto& v : d_k) {
        out.d_k.push_back(v.scalar());
        out.d_hat += v.scalar();
    }
    return out;
}

void write_decomposition_csv(const std::string& path, const AttributeSchema& schema,
                             const DistanceDecomposition& decomp) {
    if (decomp.d_k.size() != schema.total_binary_dims())
        throw ShapeMismatch("decomposition size does not match schema");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write decomposition csv: " + path);
    const bool degenerate = decomp.d_hat == 0.0;
    out << "k,attribute_name,d_k,share,exclusive,degenerate\n";
    std::vector<bool> exclusive(decomp.d_k.size(), false);
    for (std::size_t k : decomp.exclusive_indices) exclusive[k] = true;
    out.precision(17);
    for (std::size_t k = 0; k < decomp.d_k.size(); ++k) {
        const double share = degenerate ? 0.0 : decomp.d_k[k] / decomp.d_hat;
        out << k << "," << schema.dim_name(k) << "," << decomp.d_k[k] << "," << share << ","
            << (exclusive[k] ? 1 : 0) << "," << (degenerate ? 1 : 0) << "\n";
    }
}

}  // namespace attreid
