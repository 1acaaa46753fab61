#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "attreid/data.hpp"

using namespace attreid;

namespace {

SyntheticSpec tiny_spec() {
    SyntheticSpec spec;
    spec.id_count = 6;
    spec.images_per_id_per_platform = 3;
    spec.noise_level = 0.05;
    spec.seed = 11;
    return spec;
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and well formed") {
    auto schema = AttributeSchema::default_schema();
    auto spec = tiny_spec();
    Dataset a = generate_synthetic(spec, schema);
    Dataset b = generate_synthetic(spec, schema);

    CHECK(a.manifest.identity_count() == 6);
    CHECK(a.images.size() == 6 * 3 * 2);
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i] == b.images[i]);
        CHECK(a.images[i].shape() == std::vector<std::size_t>{3, 64, 32});
        for (std::size_t j = 0; j < a.images[i].size(); ++j) {
            CHECK(a.images[i][j] >= 0.0);
            CHECK(a.images[i][j] <= 1.0);
        }
    }

    // a different master seed changes the pixels
    spec.seed = 12;
    Dataset c = generate_synthetic(spec, schema);
    CHECK(!(a.images[0] == c.images[0]));

    // every identity has an attribute row and both platforms appear
    std::set<Platform> platforms;
    for (const auto& rec : a.manifest.records) {
        platforms.insert(rec.platform);
        CHECK(a.manifest.attribute_table.count(rec.person_id) == 1);
    }
    CHECK(platforms.size() == 2);
    a.manifest.validate();
}

TEST_CASE("noiseless renders depend only on attributes, platform and seed") {
    auto schema = AttributeSchema::default_schema();
    auto spec = tiny_spec();
    spec.noise_level = 0.0;

    std::vector<std::size_t> raw(schema.attribute_count(), 0);
    Tensor x = render_person(spec, schema, raw, Platform::ground, 99);
    Tensor y = render_person(spec, schema, raw, Platform::ground, 99);
    CHECK(x == y);

    Tensor z = render_person(spec, schema, raw, Platform::aerial, 99);
    CHECK(!(x == z));
}

TEST_CASE("a torso-color change only moves torso-band pixels") {
    auto schema = AttributeSchema::default_schema();
    auto spec = tiny_spec();
    spec.noise_level = 0.0;

    std::size_t upper_color_idx = 0;
    for (std::size_t i = 0; i < schema.attribute_count(); ++i)
        if (schema.attribute(i).name == "upper_color") upper_color_idx = i;

    std::vector<std::size_t> raw(schema.attribute_count(), 1);
    auto other = raw;
    other[upper_color_idx] = (raw[upper_color_idx] + 1) % 10;

    Tensor a = render_person(spec, schema, raw, Platform::ground, 5);
    Tensor b = render_person(spec, schema, other, Platform::ground, 5);

    // Differences exist and are confined to a horizontal band.
    std::size_t min_row = 64, max_row = 0, diffs = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 32; ++x)
                if (a.at(c, y, x) != b.at(c, y, x)) {
                    ++diffs;
                    min_row = std::min(min_row, y);
                    max_row = std::max(max_row, y);
                }
    CHECK(diffs > 0);
    CHECK(max_row - min_row < 40);  // a band, not the whole figure
    // head rows and feet rows untouched
    CHECK(min_row > 5);
    CHECK(max_row < 60);
}

TEST_CASE("identities with the same attributes render identically per frame") {
    auto schema = AttributeSchema::default_schema();
    auto spec = tiny_spec();
    std::vector<std::size_t> raw(schema.attribute_count(), 1);
    Tensor a = render_person(spec, schema, raw, Platform::ground, derive_seed(spec.seed, 0x2000));
    Tensor b = render_person(spec, schema, raw, Platform::ground, derive_seed(spec.seed, 0x2000));
    CHECK(a == b);
}

TEST_CASE("nearest-centroid attribute recovery works on noiseless renders") {
    auto schema = AttributeSchema::default_schema();
    SyntheticSpec spec = tiny_spec();
    spec.id_count = 12;
    spec.noise_level = 0.0;
    Dataset data = generate_synthetic(spec, schema);

    // Per-identity ground-platform mean images as centroids.
    std::map<int, Tensor> centroid;
    std::map<int, int> count;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const auto& rec = data.manifest.records[i];
        if (rec.platform != Platform::ground) continue;
        if (!centroid.count(rec.person_id))
            centroid[rec.person_id] = Tensor::zeros(data.images[i].shape());
        auto& acc = centroid[rec.person_id];
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += data.images[i][j];
        count[rec.person_id]++;
    }
    for (auto& [id, acc] : centroid)
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] /= count[id];

    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const auto& rec = data.manifest.records[i];
        if (rec.platform != Platform::ground) continue;
        double best = 1e300;
        int best_id = -1;
        for (const auto& [id, cen] : centroid) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cen.size(); ++j) {
                double diff = cen[j] - data.images[i][j];
                acc += diff * diff;
            }
            if (acc < best) {
                best = acc;
                best_id = id;
            }
        }
        total++;
        if (best_id == rec.person_id) correct++;
    }
    CHECK(total > 0);
    CHECK(static_cast<double>(correct) / total > 0.9);
}

TEST_CASE("dataset directory round-trip") {
    auto schema = AttributeSchema::default_schema();
    Dataset data = generate_synthetic(tiny_spec(), schema);
    auto dir = fresh_dir("attreid_ds_rt");

    save_dataset(dir.string(), data, schema);
    Dataset back = load_dataset(dir.string(), schema);

    REQUIRE(back.images.size() == data.images.size());
    for (std::size_t i = 0; i < data.images.size(); ++i) CHECK(back.images[i] == data.images[i]);
    CHECK(back.manifest.identity_count() == data.manifest.identity_count());
    CHECK(back.manifest.attribute_table == data.manifest.attribute_table);
    std::filesystem::remove_all(dir);
}

TEST_CASE("png round-trip stays within quantization error") {
    auto schema = AttributeSchema::default_schema();
    SyntheticSpec spec = tiny_spec();
    spec.id_count = 2;
    spec.images_per_id_per_platform = 1;
    Dataset data = generate_synthetic(spec, schema);
    auto dir = fresh_dir("attreid_png_rt");

    save_dataset(dir.string(), data, schema, /*png_images=*/true);
    Dataset back = load_dataset(dir.string(), schema);
    REQUIRE(back.images.size() == data.images.size());
    for (std::size_t i = 0; i < data.images.size(); ++i)
        for (std::size_t j = 0; j < data.images[i].size(); ++j)
            CHECK(std::abs(back.images[i][j] - data.images[i][j]) <= 0.5 / 255.0 + 1e-9);
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest loading rejects malformed and inconsistent input") {
    auto schema = AttributeSchema::default_schema();
    auto dir = fresh_dir("attreid_manifest_bad");
    auto manifest_path = (dir / "manifest.csv").string();
    auto attr_path = (dir / "attributes.csv").string();

    {
        std::ofstream attr(attr_path);
        attr << "person_id";
        for (const auto& a : schema.attributes()) attr << "," << a.name;
        attr << "\n1";
        for (std::size_t i = 0; i < schema.attribute_count(); ++i) attr << ",0";
        attr << "\n";
    }

    {
        std::ofstream m(manifest_path);
        m << "image_path,person_id,platform\n";  // missing columns
        m << "img0.atrt,1,ground\n";
    }
    CHECK_THROWS_AS(load_manifest(manifest_path, attr_path, schema), ParseError);

    {
        std::ofstream m(manifest_path);
        m << "image_path,person_id,platform,camera_id,frame_index\n";
        m << "img0.atrt,1,hovercraft,0,0\n";
    }
    CHECK_THROWS_AS(load_manifest(manifest_path, attr_path, schema), ParseError);

    // person 2 has no attribute row
    {
        std::ofstream m(manifest_path);
        m << "image_path,person_id,platform,camera_id,frame_index\n";
        m << "img0.atrt,1,ground,1,0\n";
        m << "img1.atrt,2,ground,1,0\n";
    }
    CHECK_THROWS_AS(load_manifest(manifest_path, attr_path, schema), MissingAttributes);

    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest ids are densified in ascending original order") {
    auto schema = AttributeSchema::default_schema();
    auto dir = fresh_dir("attreid_manifest_dense");
    auto manifest_path = (dir / "manifest.csv").string();
    auto attr_path = (dir / "attributes.csv").string();

    {
        std::ofstream attr(attr_path);
        attr << "person_id";
        for (const auto& a : schema.attributes()) attr << "," << a.name;
        attr << "\n";
        for (int id : {40, 7, 12}) {
            attr << id;
            for (std::size_t i = 0; i < schema.attribute_count(); ++i) attr << ",0";
            attr << "\n";
        }
    }
    {
        std::ofstream m(manifest_path);
        m << "image_path,person_id,platform,camera_id,frame_index\n";
        m << "a.atrt,40,ground,1,0\n";
        m << "b.atrt,7,aerial,0,0\n";
        m << "c.atrt,12,ground,1,1\n";
    }

    auto manifest = load_manifest(manifest_path, attr_path, schema);
    CHECK(manifest.original_person_ids == std::vector<int>{7, 12, 40});
    CHECK(manifest.records[0].person_id == 2);
    CHECK(manifest.records[1].person_id == 0);
    CHECK(manifest.records[2].person_id == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("exclusion list parsing") {
    auto dir = fresh_dir("attreid_exclusions");
    auto path = (dir / "exclude.txt").string();
    {
        std::ofstream out(path);
        out << "# two holdouts\n3\n\n17\n";
    }
    auto excluded = load_exclusion_list(path);
    CHECK(excluded == std::set<int>{3, 17});
    std::filesystem::remove_all(dir);
}

TEST_CASE("split protocol is identity-disjoint and deterministic") {
    auto schema = AttributeSchema::default_schema();
    SyntheticSpec spec = tiny_spec();
    spec.id_count = 10;
    Dataset data = generate_synthetic(spec, schema);

    auto s1 = split_protocol(data.manifest, 0.5, 77);
    auto s2 = split_protocol(data.manifest, 0.5, 77);
    auto s3 = split_protocol(data.manifest, 0.5, 78);

    CHECK(s1.train_ids == s2.train_ids);
    CHECK(s1.query == s2.query);
    CHECK(s1.gallery == s2.gallery);
    CHECK(s1.train_ids != s3.train_ids);

    std::set<int> train(s1.train_ids.begin(), s1.train_ids.end());
    for (int id : s1.test_ids) CHECK(train.count(id) == 0);
    CHECK(s1.train_ids.size() + s1.test_ids.size() == 10);

    // query and gallery are disjoint record sets covering only test ids
    std::set<std::size_t> q(s1.query.begin(), s1.query.end());
    for (auto idx : s1.gallery) CHECK(q.count(idx) == 0);
    std::set<int> test(s1.test_ids.begin(), s1.test_ids.end());
    for (auto idx : s1.query) CHECK(test.count(data.manifest.records[idx].person_id) == 1);
    for (auto idx : s1.gallery) CHECK(test.count(data.manifest.records[idx].person_id) == 1);
}

TEST_CASE("split protocol counts excluded identities toward the train quota") {
    // 397 identities, 9 excluded, fraction 0.5: round(397 * 0.5) = 199 train,
    // leaving 189 test identities.
    DatasetManifest manifest;
    auto schema = AttributeSchema::default_schema();
    std::vector<std::size_t> raw(schema.attribute_count(), 0);
    for (int id = 0; id < 397; ++id) {
        manifest.original_person_ids.push_back(id);
        manifest.attribute_table[id] = raw;
        for (int img = 0; img < 2; ++img) {
            ImageRecord rec;
            rec.image_path = "img_" + std::to_string(id) + "_" + std::to_string(img) + ".atrt";
            rec.person_id = id;
            rec.platform = img == 0 ? Platform::aerial : Platform::ground;
            rec.camera_id = img == 0 ? 0 : 1;
            rec.frame_index = img;
            manifest.records.push_back(rec);
        }
    }
    std::set<int> excluded;
    for (int id = 100; id < 109; ++id) excluded.insert(id);

    auto split = split_protocol(manifest, 0.5, 1, excluded);
    CHECK(split.train_ids.size() == 199);
    CHECK(split.test_ids.size() == 189);
    for (int id : split.train_ids) CHECK(excluded.count(id) == 0);
    for (int id : split.test_ids) CHECK(excluded.count(id) == 0);
}

TEST_CASE("single-platform test identities are kept gallery-only") {
    auto schema = AttributeSchema::default_schema();
    DatasetManifest manifest;
    std::vector<std::size_t> raw(schema.attribute_count(), 0);
    for (int id = 0; id < 4; ++id) {
        manifest.original_person_ids.push_back(id);
        manifest.attribute_table[id] = raw;
        for (int img = 0; img < 4; ++img) {
            ImageRecord rec;
            rec.image_path = "i" + std::to_string(id) + "_" + std::to_string(img) + ".atrt";
            rec.person_id = id;
            // id 3 only ever appears on the ground platform
            bool aerial = id != 3 && img < 2;
            rec.platform = aerial ? Platform::aerial : Platform::ground;
            rec.camera_id = aerial ? 0 : 1;
            rec.frame_index = img;
            manifest.records.push_back(rec);
        }
    }

    auto split = split_protocol(manifest, 0.25, 3);
    REQUIRE(split.train_ids.size() == 1);
    if (std::find(split.test_ids.begin(), split.test_ids.end(), 3) != split.test_ids.end()) {
        for (auto idx : split.query) CHECK(manifest.records[idx].person_id != 3);
        CHECK(!split.warnings.empty());
    }
}
