#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attreid/errors.hpp"

namespace attreid {

// Ordered soft-biometric attribute schema. Each categorical attribute with
// cardinality n expands to an n-wide one-hot slice of the binary vector.
class AttributeSchema {
public:
    struct Attribute {
        std::string name;
        std::size_t cardinality;
        std::size_t offset;  // start of this attribute's slice
    };

    AttributeSchema(std::vector<std::pair<std::string, std::size_t>> attributes);

    // The shipped default: 15 attributes whose cardinalities sum to 88.
    static AttributeSchema default_schema();

    // Line-oriented `name,cardinality` file, `#` comments.
    static AttributeSchema load(const std::string& path);
    void save(const std::string& path) const;

    std::size_t attribute_count() const { return attributes_.size(); }
    std::size_t total_binary_dims() const { return total_dims_; }
    const Attribute& attribute(std::size_t i) const { return attributes_[i]; }
    const std::vector<Attribute>& attributes() const { return attributes_; }

    // Name of the binary dimension k, e.g. "upper_color:3".
    std::string dim_name(std::size_t k) const;

private:
    std::vector<Attribute> attributes_;
    std::size_t total_dims_ = 0;
};

// One-hot expanded attribute vector of length schema.total_binary_dims().
struct AttributeVector {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }
    bool operator==(const AttributeVector&) const = default;
};

// XOR of two attribute vectors with the exclusive/common index partition.
struct PairwiseAttributeVector {
    std::vector<std::uint8_t> bits;
    std::size_t exclusive_count = 0;  // M_E
    std::vector<std::size_t> exclusive_indices;
    std::vector<std::size_t> common_indices;
};

// One-hot expansion of per-attribute category indices, in schema order.
AttributeVector encode(const AttributeSchema& schema, const std::vector<std::size_t>& raw);

// Recover category indices from a valid one-hot vector.
std::vector<std::size_t> decode(const AttributeSchema& schema, const AttributeVector& v);

PairwiseAttributeVector pairwise_xor(const AttributeVector& a, const AttributeVector& b);

// person_id -> raw category indices, loaded from a CSV with header
// `person_id,<attr1>,...,<attrN>`.
using AttributeTable = std::map<int, std::vector<std::size_t>>;

AttributeTable load_attribute_table(const std::string& path, const AttributeSchema& schema);
void save_attribute_table(const std::string& path, const AttributeSchema& schema,
                          const AttributeTable& table);

}  // namespace attreid
