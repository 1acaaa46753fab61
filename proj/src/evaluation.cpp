#include "attreid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "attreid/distances.hpp"

namespace attreid {

Direction parse_direction(const std::string& s) {
    if (s == "a2g") return Direction::aerial_to_ground;
    if (s == "g2a") return Direction::ground_to_aerial;
    if (s == "all") return Direction::all;
    throw InvalidParam("unknown direction (expected a2g, g2a or all): " + s);
}

std::string direction_name(Direction d) {
    switch (d) {
        case Direction::aerial_to_ground: return "a2g";
        case Direction::ground_to_aerial: return "g2a";
        default: return "all";
    }
}

FilteredSets direction_filter(const DatasetManifest& manifest,
                              const std::vector<std::size_t>& query,
                              const std::vector<std::size_t>& gallery, Direction direction,
                              GalleryMode mode) {
    FilteredSets out;
    if (direction == Direction::all) {
        out.query = query;
        out.gallery = gallery;
        return out;
    }
    const Platform qp = direction == Direction::aerial_to_ground ? Platform::aerial : Platform::ground;
    const Platform gp = direction == Direction::aerial_to_ground ? Platform::ground : Platform::aerial;
    for (std::size_t i : query)
        if (manifest.records[i].platform == qp) out.query.push_back(i);
    for (std::size_t i : gallery)
        if (mode == GalleryMode::all || manifest.records[i].platform == gp)
            out.gallery.push_back(i);
    return out;
}

std::vector<std::vector<double>> distance_matrix(const std::vector<Tensor>& embeddings,
                                                 const std::vector<std::size_t>& query,
                                                 const std::vector<std::size_t>& gallery,
                                                 std::size_t threads) {
    std::vector<std::vector<double>> dist(query.size(), std::vector<double>(gallery.size()));
    auto compute_rows = [&](std::size_t begin, std::size_t end) {
        for (std::size_t q = begin; q < end; ++q)
            for (std::size_t g = 0; g < gallery.size(); ++g)
                dist[q][g] = pairwise_distance(embeddings[query[q]], embeddings[gallery[g]]);
    };
    if (threads <= 1 || query.size() < 2) {
        compute_rows(0, query.size());
    } else {
        const std::size_t n = std::min(threads, query.size());
        std::vector<std::thread> pool;
        const std::size_t chunk = (query.size() + n - 1) / n;
        for (std::size_t t = 0; t < n; ++t)
            pool.emplace_back(compute_rows, t * chunk, std::min(query.size(), (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return dist;
}

double EvalReport::cmc_at(std::size_t k) const {
    if (cmc.empty() || k == 0) return 0.0;
    return cmc[std::min(k, cmc.size()) - 1];
}

EvalReport evaluate_matrix(const DatasetManifest& manifest, const std::vector<std::size_t>& query,
                           const std::vector<std::size_t>& gallery,
                           const std::vector<std::vector<double>>& dist, bool keep_rankings) {
    if (gallery.empty()) throw EmptyGallery("evaluation gallery is empty");
    if (dist.size() != query.size()) throw ShapeMismatch("distance matrix rows != query count");

    EvalReport report;
    report.gallery_count = gallery.size();
    std::vector<double> cmc_hits(gallery.size(), 0.0);
    double ap_sum = 0.0;

    for (std::size_t q = 0; q < query.size(); ++q) {
        const auto& qrec = manifest.records[query[q]];
        // candidate gallery minus same-camera same-identity entries
        std::vector<std::size_t> cand;  // positions into `gallery`
        bool has_match = false;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const auto& grec = manifest.records[gallery[g]];
            if (grec.person_id == qrec.person_id && grec.camera_id == qrec.camera_id) continue;
            cand.push_back(g);
            has_match = has_match || grec.person_id == qrec.person_id;
        }
        if (!has_match) {
            ++report.dropped_queries;
            continue;
        }
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
            if (dist[q][a] != dist[q][b]) return dist[q][a] < dist[q][b];
            return gallery[a] < gallery[b];
        });

        double ap = 0.0;
        std::size_t matches = 0;
        std::size_t first_match_rank = cand.size();
        for (std::size_t rank = 0; rank < cand.size(); ++rank) {
            const auto& grec = manifest.records[gallery[cand[rank]]];
            if (grec.person_id == qrec.person_id) {
                ++matches;
                ap += static_cast<double>(matches) / static_cast<double>(rank + 1);
                if (first_match_rank == cand.size()) first_match_rank = rank;
            }
        }
        ap /= static_cast<double>(matches);
        ap_sum += ap;
        for (std::size_t k = first_match_rank; k < cmc_hits.size(); ++k) cmc_hits[k] += 1.0;
        ++report.query_count;
        if (keep_rankings) {
            QueryRanking r;
            r.query_index = query[q];
            for (std::size_t pos : cand) {
                r.ordered.push_back(gallery[pos]);
                r.match.push_back(manifest.records[gallery[pos]].person_id == qrec.person_id);
            }
            r.average_precision = ap;
            report.rankings.push_back(std::move(r));
        }
    }
    if (report.query_count == 0) throw NoValidQueries("no query has a true match in the gallery");
    report.mAP = ap_sum / static_cast<double>(report.query_count);
    report.cmc.resize(cmc_hits.size());
    for (std::size_t k = 0; k < cmc_hits.size(); ++k)
        report.cmc[k] = cmc_hits[k] / static_cast<double>(report.query_count);
    return report;
}

EvalReport evaluate(const DatasetManifest& manifest, const std::vector<std::size_t>& query,
                    const std::vector<std::size_t>& gallery,
                    const std::vector<Tensor>& embeddings, Direction direction, GalleryMode mode,
                    std::size_t threads, bool keep_rankings) {
    FilteredSets sets = direction_filter(manifest, query, gallery, direction, mode);
    if (sets.gallery.empty()) throw EmptyGallery("gallery is empty after direction filtering");
    auto dist = distance_matrix(embeddings, sets.query, sets.gallery, threads);
    return evaluate_matrix(manifest, sets.query, sets.gallery, dist, keep_rankings);
}

std::vector<Tensor> compute_embeddings(const Backbone& backbone, const Dataset& dataset,
                                       double gem_p, std::size_t threads) {
    std::vector<Tensor> out(dataset.images.size());
    auto compute = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            out[i] = gem_pool(Var::constant(backbone.forward_reid(dataset.images[i],
                                                                  dataset.manifest.records[i].image_path)
                                                .values),
                              gem_p)
                         .value();
    };
    if (threads <= 1 || out.size() < 2) {
        compute(0, out.size());
    } else {
        const std::size_t n = std::min(threads, out.size());
        std::vector<std::thread> pool;
        const std::size_t chunk = (out.size() + n - 1) / n;
        for (std::size_t t = 0; t < n; ++t)
            pool.emplace_back(compute, t * chunk, std::min(out.size(), (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return out;
}

void write_report(const std::string& text_path, const std::string& csv_path,
                  const std::string& direction, const EvalReport& report) {
    {
        std::ofstream out(text_path);
        if (!out) throw IoError("cannot write report: " + text_path);
        out.precision(6);
        out << "direction: " << direction << "\n"
            << "queries:   " << report.query_count << " (dropped " << report.dropped_queries
            << ")\n"
            << "gallery:   " << report.gallery_count << "\n"
            << "mAP:       " << report.mAP << "\n";
        for (std::size_t k : {1, 5, 10, 20})
            out << "CMC-" << k << ":     " << report.cmc_at(k) << "\n";
    }
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write report csv: " + csv_path);
    csv.precision(17);
    csv << "direction,metric,value\n";
    csv << direction << ",mAP," << report.mAP << "\n";
    for (std::size_t k : {1, 5, 10, 20})
        csv << direction << ",cmc" << k << "," << report.cmc_at(k) << "\n";
}

void write_distance_matrix_csv(const std::string& path, const DatasetManifest& manifest,
                               const std::vector<std::size_t>& query,
                               const std::vector<std::size_t>& gallery,
                               const std::vector<std::vector<double>>& dist) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write distance matrix: " + path);
    out.precision(17);
    out << "query";
    for (std::size_t g : gallery) out << "," << manifest.records[g].image_path;
    out << "\n";
    for (std::size_t q = 0; q < query.size(); ++q) {
        out << manifest.records[query[q]].image_path;
        for (double d : dist[q]) out << "," << d;
        out << "\n";
    }
}

}  // namespace attreid
