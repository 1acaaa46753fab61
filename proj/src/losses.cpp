#include "attreid/losses.hpp"

#include <cmath>
#include <map>

namespace attreid {

namespace {

Var sum_of(const std::vector<Var>& xs, const std::vector<std::size_t>* idx = nullptr) {
    Var acc = Var::constant(0.0);
    if (idx) {
        for (std::size_t k : *idx) acc = add(acc, xs[k]);
    } else {
        for (const auto& x : xs) acc = add(acc, x);
    }
    return acc;
}

double share_ratio(std::size_t M, std::size_t exclusive_count, double v) {
    return std::pow(static_cast<double>(exclusive_count) / static_cast<double>(M), v);
}

}  // namespace

Var metric_distillation(const Var& d, const std::vector<Var>& d_k) {
    return abs_val(sub(d, sum_of(d_k)));
}

double metric_distillation(double d, const std::vector<double>& d_k) {
    double s = 0.0;
    for (double x : d_k) s += x;
    return std::abs(d - s);
}

double lambda_weight(std::size_t M, std::size_t exclusive_count, double v) {
    if (M == 0) throw InvalidParam("lambda_weight: M must be > 0");
    if (exclusive_count == 0 || exclusive_count >= M)
        throw DegeneratePair("lambda_weight undefined for exclusive_count = " + std::to_string(exclusive_count) +
                             " with M = " + std::to_string(M));
    const double r = share_ratio(M, exclusive_count, v);
    const double num = static_cast<double>(M) - static_cast<double>(exclusive_count) * r;
    const double den = static_cast<double>(exclusive_count) * (1.0 - r);
    return 0.5 * std::log(num / den);
}

Var prior_loss_p1(const std::vector<Var>& d_k, const std::vector<std::size_t>& exclusive_indices,
                  const std::vector<std::size_t>& common_indices, double v) {
    const std::size_t M = d_k.size();
    const std::size_t exclusive_count = exclusive_indices.size();
    if (exclusive_count == 0 || exclusive_count == M) throw DegeneratePair("prior_loss_p1: pair has no attribute split");
    Var d_hat = sum_of(d_k);
    if (d_hat.value()[0] == 0.0) return Var::constant(0.0);
    const double r = share_ratio(M, exclusive_count, v);
    Var exclusive_share = div(sum_of(d_k, &exclusive_indices), d_hat);
    Var common_share = div(sum_of(d_k, &common_indices), d_hat);
    return add(hinge(sub(Var::constant(r), exclusive_share)),
               hinge(add_const(common_share, r - 1.0)));
}

Var prior_loss_p2(const std::vector<Var>& d_k, const std::vector<std::size_t>& exclusive_indices,
                  const std::vector<std::size_t>& common_indices, double v) {
    const std::size_t M = d_k.size();
    const std::size_t exclusive_count = exclusive_indices.size();
    if (exclusive_count == 0 || exclusive_count == M) throw DegeneratePair("prior_loss_p2: pair has no attribute split");
    Var d_hat = sum_of(d_k);
    if (d_hat.value()[0] == 0.0) return Var::constant(0.0);
    const double lambda = lambda_weight(M, exclusive_count, v);
    const double r = share_ratio(M, exclusive_count, v);
    const double exclusive_bound = std::exp(-lambda) * r / static_cast<double>(exclusive_count);
    const double common_bound =
        std::exp(lambda) * (1.0 - r) / static_cast<double>(M - exclusive_count);
    Var loss = Var::constant(0.0);
    for (std::size_t k : exclusive_indices)
        loss = add(loss, hinge(sub(Var::constant(exclusive_bound), div(d_k[k], d_hat))));
    for (std::size_t k : common_indices)
        loss = add(loss, hinge(add_const(div(d_k[k], d_hat), -common_bound)));
    return loss;
}

Var total_loss(const Var& d, const std::vector<Var>& d_k, const PairwiseAttributeVector& pair,
               const LossConfig& config, LossBreakdown* breakdown) {
    config.validate();
    if (d_k.size() != pair.bits.size())
        throw ShapeMismatch("total_loss: attribute distance count does not match pair vector");
    const std::size_t M = d_k.size();
    const std::size_t exclusive_count = pair.exclusive_count;

    Var distill = metric_distillation(d, d_k);
    const bool degenerate = (exclusive_count == 0 || exclusive_count == M);
    const bool priors_wanted = (config.alpha != 0.0 || config.beta != 0.0);

    Var p1 = Var::constant(0.0), p2 = Var::constant(0.0);
    double lambda = 0.0;
    if (!degenerate && priors_wanted) {
        p1 = prior_loss_p1(d_k, pair.exclusive_indices, pair.common_indices, config.v);
        p2 = prior_loss_p2(d_k, pair.exclusive_indices, pair.common_indices, config.v);
        lambda = lambda_weight(M, exclusive_count, config.v);
    }
    Var total = add(distill, add(scale(p1, config.alpha), scale(p2, config.beta)));
    if (breakdown) {
        breakdown->total = total.scalar();
        breakdown->distillation = distill.scalar();
        breakdown->prior1 = p1.scalar();
        breakdown->prior2 = p2.scalar();
        breakdown->lambda_value = lambda;
        breakdown->degenerate = degenerate;
    }
    return total;
}

LossBreakdown total_loss(double d, const std::vector<double>& d_k,
                         const PairwiseAttributeVector& pair, const LossConfig& config) {
    std::vector<Var> dk_vars;
    dk_vars.reserve(d_k.size());
    for (double x : d_k) dk_vars.push_back(Var::constant(x));
    LossBreakdown out;
    total_loss(Var::constant(d), dk_vars, pair, config, &out);
    return out;
}

double prior_loss_p1_value(const std::vector<double>& d_k,
                           const std::vector<std::size_t>& exclusive_indices,
                           const std::vector<std::size_t>& common_indices, double v) {
    std::vector<Var> vars;
    for (double x : d_k) vars.push_back(Var::constant(x));
    return prior_loss_p1(vars, exclusive_indices, common_indices, v).scalar();
}

double prior_loss_p2_value(const std::vector<double>& d_k,
                           const std::vector<std::size_t>& exclusive_indices,
                           const std::vector<std::size_t>& common_indices, double v) {
    std::vector<Var> vars;
    for (double x : d_k) vars.push_back(Var::constant(x));
    return prior_loss_p2(vars, exclusive_indices, common_indices, v).scalar();
}

Var stream1_loss(const std::vector<Var>& embeddings, const std::vector<Var>& logits,
                 const std::vector<int>& identities, double margin) {
    const std::size_t n = embeddings.size();
    if (logits.size() != n || identities.size() != n)
        throw ShapeMismatch("stream1_loss: batch arrays disagree in length");
    std::map<int, std::size_t> counts;
    for (int id : identities) counts[id]++;
    if (counts.size() < 2) throw BatchTooSmall("stream1_loss: need >= 2 identities per batch");
    for (const auto& [id, c] : counts)
        if (c < 2)
            throw BatchTooSmall("stream1_loss: identity " + std::to_string(id) +
                                " has a single image in the batch");

    // Pairwise distances, shared between anchors.
    std::vector<std::vector<Var>> dist(n, std::vector<Var>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            dist[i][j] = l2_distance(embeddings[i], embeddings[j]);
            dist[j][i] = dist[i][j];
        }

    Var triplet = Var::constant(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        Var hardest_pos, hardest_neg;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (identities[j] == identities[i]) {
                if (!hardest_pos.defined() || dist[i][j].scalar() > hardest_pos.scalar())
                    hardest_pos = dist[i][j];
            } else {
                if (!hardest_neg.defined() || dist[i][j].scalar() < hardest_neg.scalar())
                    hardest_neg = dist[i][j];
            }
        }
        triplet = add(triplet, hinge(add_const(sub(hardest_pos, hardest_neg), margin)));
    }
    triplet = scale(triplet, 1.0 / static_cast<double>(n));

    Var ce = Var::constant(0.0);
    for (std::size_t i = 0; i < n; ++i)
        ce = add(ce, softmax_cross_entropy(logits[i], static_cast<std::size_t>(identities[i])));
    ce = scale(ce, 1.0 / static_cast<double>(n));

    return add(ce, triplet);
}

}  // namespace attreid
