#pragma once

#include <string>
#include <vector>

#include "attreid/backbone.hpp"
#include "attreid/data.hpp"

namespace attreid {

enum class Direction { aerial_to_ground, ground_to_aerial, all };

Direction parse_direction(const std::string& s);  // a2g | g2a | all
std::string direction_name(Direction d);

// `cross` keeps only the opposite platform in the gallery for the two
// directed protocols; `all` keeps both platforms.
enum class GalleryMode { cross, all };

struct FilteredSets {
    std::vector<std::size_t> query;
    std::vector<std::size_t> gallery;
};

FilteredSets direction_filter(const DatasetManifest& manifest,
                              const std::vector<std::size_t>& query,
                              const std::vector<std::size_t>& gallery, Direction direction,
                              GalleryMode mode = GalleryMode::cross);

struct QueryRanking {
    std::size_t query_index;                 // record index
    std::vector<std::size_t> ordered;        // gallery record indices by ascending distance
    std::vector<char> match;                 // same person_id flags, aligned with ordered
    double average_precision = 0.0;
};

struct EvalReport {
    double mAP = 0.0;
    std::vector<double> cmc;  // cmc[k-1] = CMC-k
    std::size_t query_count = 0;
    std::size_t gallery_count = 0;
    std::size_t dropped_queries = 0;  // queries without a true match in the gallery
    std::vector<QueryRanking> rankings;

    double cmc_at(std::size_t k) const;
};

// query x gallery Euclidean distance matrix; rows computed in parallel when
// threads > 1.
std::vector<std::vector<double>> distance_matrix(const std::vector<Tensor>& embeddings,
                                                 const std::vector<std::size_t>& query,
                                                 const std::vector<std::size_t>& gallery,
                                                 std::size_t threads = 1);

// Ranking evaluation over a precomputed distance matrix. Ties break by
// gallery index ascending; same-camera same-identity gallery entries are
// excluded per query.
EvalReport evaluate_matrix(const DatasetManifest& manifest, const std::vector<std::size_t>& query,
                           const std::vector<std::size_t>& gallery,
                           const std::vector<std::vector<double>>& dist,
                           bool keep_rankings = false);

// End-to-end: filter by direction, embed distances, evaluate.
EvalReport evaluate(const DatasetManifest& manifest, const std::vector<std::size_t>& query,
                    const std::vector<std::size_t>& gallery,
                    const std::vector<Tensor>& embeddings, Direction direction,
                    GalleryMode mode = GalleryMode::cross, std::size_t threads = 1,
                    bool keep_rankings = false);

// GeM-pooled Stream-1 embeddings for every record of the dataset.
std::vector<Tensor> compute_embeddings(const Backbone& backbone, const Dataset& dataset,
                                       double gem_p, std::size_t threads = 1);

void write_report(const std::string& text_path, const std::string& csv_path,
                  const std::string& direction, const EvalReport& report);
void write_distance_matrix_csv(const std::string& path, const DatasetManifest& manifest,
                               const std::vector<std::size_t>& query,
                               const std::vector<std::size_t>& gallery,
                               const std::vector<std::vector<double>>& dist);

}  // namespace attreid
