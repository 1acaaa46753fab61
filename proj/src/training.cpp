#include "attreid/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "attreid/distances.hpp"

namespace attreid {

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw InvalidParam("unknown optimizer (expected adam or sgd): " + s);
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidParam("learning_rate must be >= 0");
    if (epochs == 0) throw InvalidParam("epochs must be >= 1");
    if (batch_size < 4) throw InvalidParam("batch_size must be >= 4 for triplet mining");
    if (pairs_per_batch < 2) throw InvalidParam("pairs_per_batch must be >= 2");
    if (gem_p < 1.0) throw InvalidParam("gem_p must be >= 1");
    loss.validate();
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::vector<Var> params)
    : kind_(kind), lr_(learning_rate), params_(std::move(params)) {
    if (kind_ == OptimizerKind::adam) {
        for (const auto& p : params_) {
            m_.push_back(Tensor::zeros(p.value().shape()));
            v_.push_back(Tensor::zeros(p.value().shape()));
        }
    }
}

void Optimizer::step() {
    ++t_;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].requires_grad()) continue;
        Tensor& w = params_[i].mutable_value();
        const Tensor& g = params_[i].grad();
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr_ * g[j];
        } else {
            for (std::size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
                v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
    zero_grad();
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

namespace {

std::map<int, std::vector<std::size_t>> records_by_id(const Dataset& dataset,
                                                      const std::vector<int>& ids) {
    std::map<int, std::vector<std::size_t>> out;
    std::set<int> wanted(ids.begin(), ids.end());
    for (std::size_t i = 0; i < dataset.manifest.records.size(); ++i)
        if (wanted.count(dataset.manifest.records[i].person_id))
            out[dataset.manifest.records[i].person_id].push_back(i);
    return out;
}

// Two distinct indices in [0, n), n >= 2.
std::pair<std::size_t, std::size_t> pick_two(std::mt19937_64& rng, std::size_t n) {
    const std::size_t a = rng() % n;
    const std::size_t b = (a + 1 + rng() % (n - 1)) % n;
    return {a, b};
}

struct Freeze {
    std::vector<Var> params;
    explicit Freeze(NamedParams named) {
        for (auto& [name, var] : named) {
            params.push_back(var);
            var.set_requires_grad(false);
        }
    }
    ~Freeze() {
        for (auto& p : params) p.set_requires_grad(true);
    }
};

}  // namespace

void train_stream1(const Dataset& dataset, const std::vector<int>& train_ids, Backbone& backbone,
                   const TrainConfig& config, const std::string& telemetry_path,
                   const EpochCallback& on_epoch) {
    config.validate();
    if (train_ids.size() < 2) throw TooFewIdentities("stream 1 needs >= 2 training identities");
    if (backbone.config().id_count < train_ids.size())
        throw ConfigError("backbone id_count smaller than number of training identities");

    std::vector<int> ids = train_ids;
    std::sort(ids.begin(), ids.end());
    std::map<int, std::size_t> class_index;
    for (std::size_t i = 0; i < ids.size(); ++i) class_index[ids[i]] = i;

    auto by_id = records_by_id(dataset, ids);
    std::size_t total_images = 0;
    for (auto& [id, recs] : by_id) {
        if (recs.size() < 2)
            throw BatchTooSmall("identity " + std::to_string(id) + " has fewer than 2 images");
        total_images += recs.size();
    }

    const std::size_t per_batch_ids = std::min<std::size_t>(config.batch_size / 2, ids.size());
    if (per_batch_ids < 2) throw BatchTooSmall("batch too small for two identities");
    const std::size_t batches_per_epoch =
        std::max<std::size_t>(1, total_images / (2 * per_batch_ids));

    std::mt19937_64 rng(config.seed);
    auto params = backbone.named_parameters();
    std::vector<Var> vars;
    for (auto& [n, v] : params) vars.push_back(v);
    Optimizer opt(config.optimizer, config.learning_rate, vars);

    std::ofstream telemetry;
    if (!telemetry_path.empty()) {
        telemetry.open(telemetry_path);
        if (!telemetry) throw IoError("cannot write telemetry: " + telemetry_path);
        telemetry.precision(17);
        telemetry << "epoch,L_total\n";
    }

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<int> pool = ids;
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(per_batch_ids);

            std::vector<Var> embeddings, logits;
            std::vector<int> batch_classes;
            for (int id : pool) {
                const auto& recs = by_id[id];
                auto [a, b2] = pick_two(rng, recs.size());
                for (std::size_t r : {recs[a], recs[b2]}) {
                    Var f = backbone.forward_reid(Var::constant(dataset.images[r]));
                    Var emb = gem_pool(f, config.gem_p);
                    embeddings.push_back(emb);
                    logits.push_back(backbone.classify(emb));
                    batch_classes.push_back(static_cast<int>(class_index[id]));
                }
            }
            Var loss = stream1_loss(embeddings, logits, batch_classes, config.loss.margin);
            if (!std::isfinite(loss.scalar()))
                throw NonFiniteLoss("stream 1 loss diverged at epoch " + std::to_string(epoch));
            backward(loss);
            opt.step();
            epoch_loss += loss.scalar();
        }
        epoch_loss /= static_cast<double>(batches_per_epoch);
        if (telemetry.is_open()) telemetry << epoch << "," << epoch_loss << "\n";
        if (on_epoch) on_epoch({epoch, epoch_loss, 0.0, 0.0, 0.0, 0.0});
    }
}

void train_stream2(const Dataset& dataset, const std::vector<int>& train_ids, Backbone& backbone,
                   ExplainableNet& net, const AttributeSchema& schema, const TrainConfig& config,
                   const std::string& telemetry_path, const EpochCallback& on_epoch) {
    config.validate();
    if (train_ids.size() < 2) throw TooFewIdentities("stream 2 needs >= 2 training identities");
    for (int id : train_ids)
        if (!dataset.manifest.attribute_table.count(id))
            throw MissingAttributes("identity " + std::to_string(id) + " lacks attributes");

    Freeze freeze(backbone.named_parameters());

    auto by_id = records_by_id(dataset, train_ids);
    std::map<int, AttributeVector> attr_of;
    for (int id : train_ids) attr_of[id] = encode(schema, dataset.manifest.attribute_table.at(id));

    // Stream 1 is frozen: its feature maps and embeddings are constants.
    std::map<std::size_t, Tensor> feature_of, embedding_of;
    for (auto& [id, recs] : by_id)
        for (std::size_t r : recs) {
            Tensor f = backbone.forward_reid(dataset.images[r]).values;
            embedding_of[r] = gem_pool(Var::constant(f), config.gem_p).value();
            feature_of[r] = std::move(f);
        }

    std::vector<int> ids = train_ids;
    std::sort(ids.begin(), ids.end());
    const std::size_t per_batch_ids = std::min<std::size_t>(config.pairs_per_batch, ids.size());
    std::size_t total_images = 0;
    for (auto& [id, recs] : by_id) total_images += recs.size();
    const std::size_t batches_per_epoch =
        std::max<std::size_t>(1, total_images / (2 * per_batch_ids));

    std::mt19937_64 rng(config.seed);
    auto params = net.named_parameters();
    std::vector<Var> vars;
    for (auto& [n, v] : params) vars.push_back(v);
    Optimizer opt(config.optimizer, config.learning_rate, vars);

    std::ofstream telemetry;
    if (!telemetry_path.empty()) {
        telemetry.open(telemetry_path);
        if (!telemetry) throw IoError("cannot write telemetry: " + telemetry_path);
        telemetry.precision(17);
        telemetry << "epoch,L_total,L_d,L_p1,L_p2,degenerate_pair_fraction\n";
    }

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        EpochStats stats;
        stats.epoch = epoch;
        std::size_t pair_total = 0, degenerate_total = 0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<int> pool = ids;
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(per_batch_ids);

            struct BatchImage {
                std::size_t record;
                int id;
                std::vector<Var> fk;  // attribute-guided feature vectors
            };
            std::vector<BatchImage> batch;
            for (int id : pool) {
                const auto& recs = by_id[id];
                // one image per platform when the identity has both
                std::vector<std::size_t> aerial, ground;
                for (std::size_t r : recs)
                    (dataset.manifest.records[r].platform == Platform::aerial ? aerial : ground)
                        .push_back(r);
                std::vector<std::size_t> chosen;
                if (!aerial.empty() && !ground.empty()) {
                    chosen = {aerial[rng() % aerial.size()], ground[rng() % ground.size()]};
                } else if (recs.size() >= 2) {
                    auto [a, b2] = pick_two(rng, recs.size());
                    chosen = {recs[a], recs[b2]};
                } else {
                    chosen = {recs[0]};
                }
                for (std::size_t r : chosen) {
                    Var attention = net.forward_attention(Var::constant(dataset.images[r]),
                                                          config.activation);
                    batch.push_back({r, id,
                                     attribute_feature_vectors(Var::constant(feature_of[r]),
                                                               attention, config.gem_p)});
                }
            }

            Var batch_loss = Var::constant(0.0);
            std::size_t pair_count = 0;
            for (std::size_t i = 0; i < batch.size(); ++i)
                for (std::size_t j = i + 1; j < batch.size(); ++j) {
                    const double d = pairwise_distance(embedding_of[batch[i].record],
                                                       embedding_of[batch[j].record]);
                    std::vector<Var> d_k;
                    d_k.reserve(batch[i].fk.size());
                    for (std::size_t k = 0; k < batch[i].fk.size(); ++k)
                        d_k.push_back(l2_distance(batch[i].fk[k], batch[j].fk[k]));
                    auto pair = pairwise_xor(attr_of[batch[i].id], attr_of[batch[j].id]);
                    LossBreakdown bd;
                    Var pair_loss = total_loss(Var::constant(d), d_k, pair, config.loss, &bd);
                    batch_loss = add(batch_loss, pair_loss);
                    ++pair_count;
                    stats.distillation += bd.distillation;
                    stats.prior1 += bd.prior1;
                    stats.prior2 += bd.prior2;
                    if (bd.degenerate) ++degenerate_total;
                }
            if (pair_count == 0) continue;
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(pair_count));
            if (!std::isfinite(batch_loss.scalar()))
                throw NonFiniteLoss("stream 2 loss diverged at epoch " + std::to_string(epoch));
            backward(batch_loss);
            opt.step();
            stats.total += batch_loss.scalar();
            pair_total += pair_count;
        }
        if (pair_total > 0) {
            stats.total /= static_cast<double>(batches_per_epoch);
            stats.distillation /= static_cast<double>(pair_total);
            stats.prior1 /= static_cast<double>(pair_total);
            stats.prior2 /= static_cast<double>(pair_total);
            stats.degenerate_fraction =
                static_cast<double>(degenerate_total) / static_cast<double>(pair_total);
        }
        if (telemetry.is_open())
            telemetry << epoch << "," << stats.total << "," << stats.distillation << ","
                      << stats.prior1 << "," << stats.prior2 << "," << stats.degenerate_fraction
                      << "\n";
        if (on_epoch) on_epoch(stats);
    }
}

PairAudit audit_pairs(const Dataset& dataset, const std::vector<int>& ids,
                      const Backbone& backbone, const ExplainableNet& net,
                      const AttributeSchema& schema, const TrainConfig& config,
                      std::size_t max_pairs, std::uint64_t seed) {
    auto by_id = records_by_id(dataset, ids);
    std::vector<std::size_t> aerial, ground;
    for (auto& [id, recs] : by_id)
        for (std::size_t r : recs)
            (dataset.manifest.records[r].platform == Platform::aerial ? aerial : ground)
                .push_back(r);
    if (aerial.empty() || ground.empty())
        throw TooFewIdentities("pair audit needs images on both platforms");

    std::mt19937_64 rng(seed);
    std::map<std::size_t, Tensor> feature_of, embedding_of, attention_of;
    auto materialize = [&](std::size_t r) {
        if (feature_of.count(r)) return;
        Tensor f = backbone.forward_reid(dataset.images[r]).values;
        embedding_of[r] = gem_pool(Var::constant(f), config.gem_p).value();
        attention_of[r] = net.forward_attention(dataset.images[r], config.activation);
        feature_of[r] = std::move(f);
    };

    PairAudit audit;
    for (std::size_t n = 0; n < max_pairs; ++n) {
        const std::size_t ri = aerial[rng() % aerial.size()];
        const std::size_t rj = ground[rng() % ground.size()];
        materialize(ri);
        materialize(rj);
        auto decomp = attribute_distances(feature_of[ri], feature_of[rj], attention_of[ri],
                                          attention_of[rj], config.gem_p);
        decomp.d = pairwise_distance(embedding_of[ri], embedding_of[rj]);
        audit.mean_distill_ratio +=
            std::abs(decomp.d - decomp.d_hat) / std::max(decomp.d, 1e-9);
        ++audit.pair_count;

        const int id_i = dataset.manifest.records[ri].person_id;
        const int id_j = dataset.manifest.records[rj].person_id;
        auto pair = pairwise_xor(encode(schema, dataset.manifest.attribute_table.at(id_i)),
                                 encode(schema, dataset.manifest.attribute_table.at(id_j)));
        if (pair.exclusive_count == 0 || pair.exclusive_count == pair.bits.size() ||
            decomp.d_hat == 0.0)
            continue;
        double exclusive_sum = 0.0;
        for (std::size_t k : pair.exclusive_indices) exclusive_sum += decomp.d_k[k];
        const double share = exclusive_sum / decomp.d_hat;
        const double baseline =
            static_cast<double>(pair.exclusive_count) / static_cast<double>(pair.bits.size());
        if (share > baseline) audit.exclusive_win_fraction += 1.0;
        ++audit.scored_pairs;
    }
    if (audit.pair_count > 0)
        audit.mean_distill_ratio /= static_cast<double>(audit.pair_count);
    if (audit.scored_pairs > 0)
        audit.exclusive_win_fraction /= static_cast<double>(audit.scored_pairs);
    return audit;
}

}  // namespace attreid
