#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "attreid/attributes.hpp"

using namespace attreid;

TEST_CASE("default schema has 15 attributes over 88 binary dims") {
    auto schema = AttributeSchema::default_schema();
    CHECK(schema.attribute_count() == 15);
    CHECK(schema.total_binary_dims() == 88);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < schema.attribute_count(); ++i) {
        CHECK(schema.attribute(i).offset == offset);
        CHECK(schema.attribute(i).cardinality >= 2);
        offset += schema.attribute(i).cardinality;
    }
    CHECK(offset == 88);
}

TEST_CASE("one-hot encode places a single bit per attribute slice") {
    AttributeSchema schema({{"a", 2}, {"b", 3}, {"c", 4}});
    CHECK(schema.total_binary_dims() == 9);

    auto v = encode(schema, {1, 0, 3});
    std::vector<std::uint8_t> expected = {0, 1, 1, 0, 0, 0, 0, 0, 1};
    CHECK(v.bits == expected);

    auto raw = decode(schema, v);
    CHECK(raw == std::vector<std::size_t>{1, 0, 3});
}

TEST_CASE("encode rejects out-of-range categories and wrong arity") {
    AttributeSchema schema({{"a", 2}, {"b", 3}});
    CHECK_THROWS_AS(encode(schema, {0, 3}), IndexOutOfRange);
    CHECK_THROWS_AS(encode(schema, {0}), SchemaMismatch);
    CHECK_THROWS_AS(encode(schema, {0, 0, 0}), SchemaMismatch);
}

TEST_CASE("encode is injective over all categories of a small schema") {
    AttributeSchema schema({{"a", 2}, {"b", 3}, {"c", 2}});
    std::vector<AttributeVector> seen;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 2; ++c) {
                auto v = encode(schema, {a, b, c});
                for (const auto& prev : seen) CHECK(!(prev == v));
                seen.push_back(v);
            }
    CHECK(seen.size() == 12);
}

TEST_CASE("pairwise xor properties hold on random pairs") {
    auto schema = AttributeSchema::default_schema();
    std::mt19937_64 rng(123);
    auto random_raw = [&] {
        std::vector<std::size_t> raw;
        for (const auto& attr : schema.attributes())
            raw.push_back(rng() % attr.cardinality);
        return raw;
    };

    for (int trial = 0; trial < 1000; ++trial) {
        auto ra = random_raw();
        auto rb = random_raw();
        auto a = encode(schema, ra);
        auto b = encode(schema, rb);
        auto ab = pairwise_xor(a, b);
        auto ba = pairwise_xor(b, a);
        auto aa = pairwise_xor(a, a);

        // symmetry and self-annihilation
        CHECK(ab.bits == ba.bits);
        CHECK(aa.exclusive_count == 0);

        // popcount equals the partition sizes
        std::size_t ones = 0;
        for (auto bit : ab.bits) ones += bit;
        CHECK(ab.exclusive_count == ones);
        CHECK(ab.exclusive_indices.size() == ones);
        CHECK(ab.common_indices.size() == ab.bits.size() - ones);

        // each differing attribute contributes exactly two exclusive bits
        std::size_t differing = 0;
        for (std::size_t i = 0; i < ra.size(); ++i)
            if (ra[i] != rb[i]) ++differing;
        CHECK(ab.exclusive_count == 2 * differing);

        // partition covers every index exactly once
        std::vector<char> hit(ab.bits.size(), 0);
        for (auto k : ab.exclusive_indices) {
            CHECK(ab.bits[k] == 1);
            hit[k] = 1;
        }
        for (auto k : ab.common_indices) {
            CHECK(ab.bits[k] == 0);
            CHECK(hit[k] == 0);
            hit[k] = 1;
        }
        for (auto h : hit) CHECK(h == 1);
    }
}

TEST_CASE("pairwise xor requires equal lengths") {
    AttributeVector a{{0, 1, 0}};
    AttributeVector b{{0, 1}};
    CHECK_THROWS_AS(pairwise_xor(a, b), SchemaMismatch);
}

TEST_CASE("schema file round-trip") {
    auto dir = std::filesystem::temp_directory_path() / "attreid_schema_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "schema.txt").string();

    auto schema = AttributeSchema::default_schema();
    schema.save(path);
    auto loaded = AttributeSchema::load(path);
    CHECK(loaded.attribute_count() == schema.attribute_count());
    CHECK(loaded.total_binary_dims() == schema.total_binary_dims());
    for (std::size_t i = 0; i < schema.attribute_count(); ++i) {
        CHECK(loaded.attribute(i).name == schema.attribute(i).name);
        CHECK(loaded.attribute(i).cardinality == schema.attribute(i).cardinality);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("dim_name maps flat indices to attribute slices") {
    AttributeSchema schema({{"a", 2}, {"b", 3}});
    CHECK(schema.dim_name(0) == "a:0");
    CHECK(schema.dim_name(1) == "a:1");
    CHECK(schema.dim_name(2) == "b:0");
    CHECK(schema.dim_name(4) == "b:2");
    CHECK_THROWS_AS(schema.dim_name(5), IndexOutOfRange);
}

TEST_CASE("attribute table round-trip and validation") {
    AttributeSchema schema({{"a", 2}, {"b", 3}});
    AttributeTable table;
    table[4] = {1, 2};
    table[9] = {0, 0};

    auto dir = std::filesystem::temp_directory_path() / "attreid_table_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "attributes.csv").string();
    save_attribute_table(path, schema, table);
    auto loaded = load_attribute_table(path, schema);
    CHECK(loaded == table);
    std::filesystem::remove_all(dir);
}
