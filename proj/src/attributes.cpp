#include "attreid/attributes.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace attreid {

AttributeSchema::AttributeSchema(std::vector<std::pair<std::string, std::size_t>> attributes) {
    std::set<std::string> seen;
    std::size_t offset = 0;
    for (auto& [name, card] : attributes) {
        if (name.empty()) throw ConfigError("attribute name must not be empty");
        if (!seen.insert(name).second)
            throw ConfigError("duplicate attribute name: " + name);
        if (card < 1) throw ConfigError("attribute cardinality must be >= 1: " + name);
        attributes_.push_back({name, card, offset});
        offset += card;
    }
    total_dims_ = offset;
    if (total_dims_ == 0) throw ConfigError("schema has no attributes");
}

AttributeSchema AttributeSchema::default_schema() {
    // 15 attributes, cardinalities summing to 88 binary dimensions.
    return AttributeSchema({
        {"gender", 2},
        {"age_group", 4},
        {"height", 3},
        {"build", 3},
        {"hair_color", 8},
        {"hair_style", 5},
        {"upper_color", 10},
        {"upper_type", 6},
        {"lower_color", 10},
        {"lower_type", 6},
        {"shoe_color", 8},
        {"shoe_type", 5},
        {"bag_type", 6},
        {"headwear", 5},
        {"accessory", 7},
    });
}

AttributeSchema AttributeSchema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path);
    std::vector<std::pair<std::string, std::size_t>> attrs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError("schema line " + std::to_string(lineno) + ": expected name,cardinality");
        std::string name = line.substr(0, comma);
        std::size_t card = 0;
        try {
            card = std::stoul(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw ParseError("schema line " + std::to_string(lineno) + ": bad cardinality");
        }
        attrs.emplace_back(name, card);
    }
    if (attrs.empty()) throw ParseError("schema file has no attributes: " + path);
    return AttributeSchema(std::move(attrs));
}

void AttributeSchema::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open schema file for writing: " + path);
    out << "# name,cardinality\n";
    for (const auto& a : attributes_) out << a.name << "," << a.cardinality << "\n";
}

std::string AttributeSchema::dim_name(std::size_t k) const {
    for (const auto& a : attributes_)
        if (k >= a.offset && k < a.offset + a.cardinality)
            return a.name + ":" + std::to_string(k - a.offset);
    throw IndexOutOfRange("binary dimension out of range: " + std::to_string(k));
}

AttributeVector encode(const AttributeSchema& schema, const std::vector<std::size_t>& raw) {
    if (raw.size() != schema.attribute_count())
        throw SchemaMismatch("expected " + std::to_string(schema.attribute_count()) +
                             " category indices, got " + std::to_string(raw.size()));
    AttributeVector v;
    v.bits.assign(schema.total_binary_dims(), 0);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& a = schema.attribute(i);
        if (raw[i] >= a.cardinality)
            throw IndexOutOfRange("category index " + std::to_string(raw[i]) +
                                  " out of range for attribute " + a.name);
        v.bits[a.offset + raw[i]] = 1;
    }
    return v;
}

std::vector<std::size_t> decode(const AttributeSchema& schema, const AttributeVector& v) {
    if (v.size() != schema.total_binary_dims())
        throw SchemaMismatch("attribute vector length does not match schema");
    std::vector<std::size_t> raw;
    raw.reserve(schema.attribute_count());
    for (const auto& a : schema.attributes()) {
        std::size_t found = a.cardinality;
        for (std::size_t c = 0; c < a.cardinality; ++c) {
            if (v.bits[a.offset + c]) {
                if (found != a.cardinality)
                    throw SchemaMismatch("attribute " + a.name + " is not one-hot");
                found = c;
            }
        }
        if (found == a.cardinality)
            throw SchemaMismatch("attribute " + a.name + " has no set bit");
        raw.push_back(found);
    }
    return raw;
}

PairwiseAttributeVector pairwise_xor(const AttributeVector& a, const AttributeVector& b) {
    if (a.size() != b.size())
        throw SchemaMismatch("attribute vectors have different lengths");
    PairwiseAttributeVector p;
    p.bits.resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        p.bits[k] = a.bits[k] ^ b.bits[k];
        if (p.bits[k]) {
            p.exclusive_indices.push_back(k);
        } else {
            p.common_indices.push_back(k);
        }
    }
    p.exclusive_count = p.exclusive_indices.size();
    return p;
}

AttributeTable load_attribute_table(const std::string& path, const AttributeSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open attribute table: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("attribute table is empty: " + path);
    AttributeTable table;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        if (!std::getline(ss, field, ','))
            throw ParseError("attribute table line " + std::to_string(lineno) + ": missing person_id");
        int person_id = 0;
        std::vector<std::size_t> raw;
        try {
            person_id = std::stoi(field);
            while (std::getline(ss, field, ',')) raw.push_back(std::stoul(field));
        } catch (const std::exception&) {
            throw ParseError("attribute table line " + std::to_string(lineno) + ": bad integer");
        }
        if (raw.size() != schema.attribute_count())
            throw ParseError("attribute table line " + std::to_string(lineno) + ": expected " +
                             std::to_string(schema.attribute_count()) + " attributes, got " +
                             std::to_string(raw.size()));
        encode(schema, raw);  // range validation
        table[person_id] = std::move(raw);
    }
    return table;
}

void save_attribute_table(const std::string& path, const AttributeSchema& schema,
                          const AttributeTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open attribute table for writing: " + path);
    out << "person_id";
    for (const auto& a : schema.attributes()) out << "," << a.name;
    out << "\n";
    for (const auto& [id, raw] : table) {
        out << id;
        for (std::size_t v : raw) out << "," << v;
        out << "\n";
    }
}

}  // namespace attreid
