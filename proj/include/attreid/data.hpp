#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attreid/attributes.hpp"
#include "attreid/tensor.hpp"

namespace attreid {

enum class Platform { aerial, ground };

std::string platform_name(Platform p);
Platform parse_platform(const std::string& s);

struct ImageRecord {
    std::string image_path;
    int person_id = 0;  // dense index after manifest validation
    Platform platform = Platform::ground;
    int camera_id = 0;
    int frame_index = 0;
};

struct DatasetManifest {
    std::vector<ImageRecord> records;
    AttributeTable attribute_table;            // keyed by dense person_id
    std::vector<int> original_person_ids;      // dense id -> id as written in the file

    std::size_t identity_count() const { return original_person_ids.size(); }
    void validate() const;
};

// In-memory dataset: records plus their [3,H,W] pixel tensors in [0,1].
struct Dataset {
    DatasetManifest manifest;
    std::vector<Tensor> images;  // aligned with manifest.records
};

struct SyntheticSpec {
    std::size_t id_count = 20;
    std::size_t images_per_id_per_platform = 8;
    std::size_t height = 64;
    std::size_t width = 32;
    double noise_level = 0.05;
    std::size_t aerial_downscale = 2;     // average-pool factor
    double aerial_squash = 0.75;          // vertical content compression
    double aerial_brightness = -0.08;     // additive shift
    std::uint64_t seed = 7;

    void validate() const;
};

// Procedural generator: each identity draws a random attribute vector and
// every pixel is a deterministic function of (attributes, platform,
// per-image seed). Per-image seeds are a splitmix derivation of the master
// seed keyed by (platform, frame index) so that identities sharing a frame
// index see identical jitter and noise.
Dataset generate_synthetic(const SyntheticSpec& spec, const AttributeSchema& schema);

// Renders one image; exposed for the causal-construction tests.
Tensor render_person(const SyntheticSpec& spec, const AttributeSchema& schema,
                     const std::vector<std::size_t>& raw_attributes, Platform platform,
                     std::uint64_t image_seed);

// Manifest CSV: header `image_path,person_id,platform,camera_id,frame_index`.
DatasetManifest load_manifest(const std::string& manifest_path,
                              const std::string& attribute_table_path,
                              const AttributeSchema& schema);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// One person_id per line, `#` comments.
std::set<int> load_exclusion_list(const std::string& path);

struct SplitResult {
    std::vector<int> train_ids;  // dense ids
    std::vector<int> test_ids;
    std::vector<std::size_t> query;    // record indices
    std::vector<std::size_t> gallery;  // record indices
    std::vector<std::string> warnings;
};

// Identity-disjoint split. The train identity count is round(total * frac)
// over all identities including excluded ones; excluded identities join
// neither side. Within test, per identity and platform the first
// queries_per_id images become queries, the rest gallery; identities seen
// on a single platform stay gallery-only.
SplitResult split_protocol(const DatasetManifest& manifest, double train_fraction,
                           std::uint64_t seed, const std::set<int>& excluded_original_ids = {},
                           std::size_t queries_per_id = 2);

// Image IO: `.atrt` tensors or 8-bit RGB PNG, both as [3,H,W] in [0,1].
Tensor load_image(const std::string& path);
void save_image(const std::string& path, const Tensor& image);

// Directory layout: manifest.csv, attributes.csv, schema.txt, images/*.atrt
// (or .png with png_images = true).
void save_dataset(const std::string& dir, const Dataset& dataset, const AttributeSchema& schema,
                  bool png_images = false);
Dataset load_dataset(const std::string& dir, const AttributeSchema& schema);

}  // namespace attreid
