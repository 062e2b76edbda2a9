#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fairsinkhorn/rng.hpp"

namespace fairsinkhorn {

// Dataset files (JSONL) and schema files both start with this header record.
inline constexpr int kDatasetFormatVersion = 1;

struct AttributeSchema {
    struct Attribute {
        std::string name;
        std::vector<std::string> levels;
    };

    std::vector<Attribute> attributes;

    // Index of an attribute by name, -1 if absent.
    int attribute_index(const std::string& name) const;
    // Index of a level within an attribute, -1 if absent.
    int level_index(int attribute, const std::string& level) const;

    // Throws ConfigError on duplicate names, duplicate levels, or an
    // attribute with fewer than two levels.
    void validate() const;

    bool operator==(const AttributeSchema&) const = default;
    bool operator==(const Attribute&) const = delete;
};

bool operator==(const AttributeSchema::Attribute& a, const AttributeSchema::Attribute& b);

// One paired record: both modality feature vectors, binary label, and one
// level index per schema attribute (parallel to schema order).
struct Sample {
    std::string id;
    Eigen::VectorXd image_features;
    Eigen::VectorXd text_features;
    int label = 0;
    std::vector<int> attribute_values;
};

struct Dataset {
    AttributeSchema schema;
    Eigen::Index image_dim = 0;
    Eigen::Index text_dim = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }

    // Full structural check: dims, finiteness, id uniqueness, level ranges.
    void validate() const;
};

// Schema file payload: attribute declarations plus the feature dims.
struct SchemaFile {
    AttributeSchema schema;
    Eigen::Index image_dim = 0;
    Eigen::Index text_dim = 0;
};

// groups[level] holds the dataset indices whose sample carries that level;
// empty levels stay present as empty lists so partitions are exhaustive.
struct GroupPartition {
    std::string attribute_name;
    int attribute = -1;
    std::vector<std::vector<std::size_t>> groups;
};

struct BatchSpec {
    std::size_t batch_size = 32;
    std::size_t group_batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const BatchSpec&) const = default;
};

SchemaFile load_schema(const std::filesystem::path& path);
// config_hash != 0 adds a provenance field to the header; readers ignore it.
void write_schema(const SchemaFile& schema, const std::filesystem::path& path,
                  std::uint64_t config_hash = 0);

// Line-delimited records, one per sample, after a {"format_version": 1}
// header line. Errors carry the offending line number.
Dataset load_dataset(const std::filesystem::path& path, const SchemaFile& schema);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path,
                   std::uint64_t config_hash = 0);

GroupPartition partition_by_attribute(const Dataset& dataset, const std::string& attribute_name);

// batch_size indices drawn uniformly without replacement; replacement only
// engages when batch_size exceeds the dataset size.
std::vector<std::size_t> sample_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng);

// size indices from one group, with replacement once size exceeds the
// group. Empty groups are an error; callers decide whether to skip.
std::vector<std::size_t> sample_group_batch(const GroupPartition& partition, int level,
                                            std::size_t size, Rng& rng);

// Row-major gather of the selected samples' feature vectors.
Eigen::MatrixXd gather_image_features(const Dataset& dataset, const std::vector<std::size_t>& indices);
Eigen::MatrixXd gather_text_features(const Dataset& dataset, const std::vector<std::size_t>& indices);

} // namespace fairsinkhorn
