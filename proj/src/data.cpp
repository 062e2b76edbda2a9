#include "fairsinkhorn/data.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/hashing.hpp"

namespace fairsinkhorn {

using ordered_json = nlohmann::ordered_json;

bool operator==(const AttributeSchema::Attribute& a, const AttributeSchema::Attribute& b) {
    return a.name == b.name && a.levels == b.levels;
}

int AttributeSchema::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

int AttributeSchema::level_index(int attribute, const std::string& level) const {
    const auto& levels = attributes.at(attribute).levels;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == level) return static_cast<int>(i);
    }
    return -1;
}

void AttributeSchema::validate() const {
    std::set<std::string> names;
    for (const auto& attr : attributes) {
        if (!names.insert(attr.name).second) {
            throw ConfigError("schema: duplicate attribute name '" + attr.name + "'");
        }
        if (attr.levels.size() < 2) {
            throw ConfigError("schema: attribute '" + attr.name + "' needs at least 2 levels");
        }
        std::set<std::string> levels;
        for (const auto& level : attr.levels) {
            if (!levels.insert(level).second) {
                throw ConfigError("schema: attribute '" + attr.name + "' repeats level '" + level + "'");
            }
        }
    }
}

void BatchSpec::validate() const {
    if (batch_size < 2) {
        throw ConfigError("batch_size must be at least 2");
    }
    if (group_batch_size < 1) {
        throw ConfigError("group_batch_size must be at least 1");
    }
}

void Dataset::validate() const {
    schema.validate();
    if (image_dim <= 0 || text_dim <= 0) {
        throw DataError("dataset dims must be positive");
    }
    std::unordered_set<std::string> ids;
    ids.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        if (!ids.insert(s.id).second) {
            throw DataError("duplicate sample id '" + s.id + "'");
        }
        if (s.image_features.size() != image_dim || s.text_features.size() != text_dim) {
            throw DataError("sample '" + s.id + "' feature dims do not match dataset dims");
        }
        if (!s.image_features.allFinite() || !s.text_features.allFinite()) {
            throw DataError("sample '" + s.id + "' has non-finite features");
        }
        if (s.label != 0 && s.label != 1) {
            throw DataError("sample '" + s.id + "' label must be 0 or 1");
        }
        if (s.attribute_values.size() != schema.attributes.size()) {
            throw DataError("sample '" + s.id + "' must carry one value per schema attribute");
        }
        for (std::size_t a = 0; a < s.attribute_values.size(); ++a) {
            const int v = s.attribute_values[a];
            if (v < 0 || v >= static_cast<int>(schema.attributes[a].levels.size())) {
                throw DataError("sample '" + s.id + "' has out-of-range level for attribute '" +
                                schema.attributes[a].name + "'");
            }
        }
    }
}

namespace {

void check_format_version(const ordered_json& record, const std::filesystem::path& path) {
    if (!record.contains("format_version") || !record["format_version"].is_number_integer() ||
        record["format_version"].get<int>() != kDatasetFormatVersion) {
        throw DataError(path.string() + ": missing or unsupported format_version header");
    }
}

Eigen::VectorXd parse_feature_array(const ordered_json& value, const std::string& field,
                                    long line_number, const std::filesystem::path& path) {
    if (!value.is_array()) {
        throw DataError(path.string() + ":" + std::to_string(line_number) + ": field '" + field +
                        "' must be an array of numbers");
    }
    Eigen::VectorXd out(value.size());
    Eigen::Index i = 0;
    for (const auto& entry : value) {
        if (!entry.is_number()) {
            throw DataError(path.string() + ":" + std::to_string(line_number) + ": field '" + field +
                            "' must be an array of numbers");
        }
        out[i++] = entry.get<double>();
    }
    return out;
}

ordered_json feature_array(const Eigen::VectorXd& v) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

} // namespace

SchemaFile load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open schema file " + path.string());
    }
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": invalid schema file: " + e.what());
    }
    check_format_version(doc, path);
    SchemaFile out;
    if (!doc.contains("image_dim") || !doc.contains("text_dim") || !doc.contains("attributes")) {
        throw DataError(path.string() + ": schema file needs image_dim, text_dim, attributes");
    }
    out.image_dim = doc["image_dim"].get<Eigen::Index>();
    out.text_dim = doc["text_dim"].get<Eigen::Index>();
    if (out.image_dim <= 0 || out.text_dim <= 0) {
        throw DataError(path.string() + ": dims must be positive");
    }
    for (const auto& attr : doc["attributes"]) {
        AttributeSchema::Attribute a;
        a.name = attr.at("name").get<std::string>();
        for (const auto& level : attr.at("levels")) {
            a.levels.push_back(level.get<std::string>());
        }
        out.schema.attributes.push_back(std::move(a));
    }
    out.schema.validate();
    return out;
}

void write_schema(const SchemaFile& schema, const std::filesystem::path& path,
                  std::uint64_t config_hash) {
    schema.schema.validate();
    ordered_json doc;
    doc["format_version"] = kDatasetFormatVersion;
    if (config_hash != 0) doc["config_hash"] = hex_hash(config_hash);
    doc["image_dim"] = schema.image_dim;
    doc["text_dim"] = schema.text_dim;
    ordered_json attrs = ordered_json::array();
    for (const auto& attr : schema.schema.attributes) {
        ordered_json a;
        a["name"] = attr.name;
        a["levels"] = attr.levels;
        attrs.push_back(std::move(a));
    }
    doc["attributes"] = std::move(attrs);
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write schema file " + path.string());
    }
    out << doc.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path, const SchemaFile& schema) {
    schema.schema.validate();
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file " + path.string());
    }

    Dataset ds;
    ds.schema = schema.schema;
    ds.image_dim = schema.image_dim;
    ds.text_dim = schema.text_dim;

    std::string line;
    long line_number = 0;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;

        ordered_json record;
        try {
            record = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": malformed record: " + e.what());
        }

        if (line_number == 1) {
            check_format_version(record, path);
            continue;
        }

        Sample s;
        try {
            s.id = record.at("id").get<std::string>();
            s.image_features = parse_feature_array(record.at("image_features"), "image_features",
                                                   line_number, path);
            s.text_features = parse_feature_array(record.at("text_features"), "text_features",
                                                  line_number, path);
            s.label = record.at("label").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": malformed record: " + e.what());
        }

        if (s.image_features.size() != ds.image_dim) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": image_features has dim " + std::to_string(s.image_features.size()) +
                            ", schema declares " + std::to_string(ds.image_dim));
        }
        if (s.text_features.size() != ds.text_dim) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": text_features has dim " + std::to_string(s.text_features.size()) +
                            ", schema declares " + std::to_string(ds.text_dim));
        }
        if (s.label != 0 && s.label != 1) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": label must be 0 or 1");
        }
        if (!seen_ids.insert(s.id).second) {
            throw DataError(path.string() + ":" + std::to_string(line_number) +
                            ": duplicate id '" + s.id + "'");
        }

        s.attribute_values.reserve(ds.schema.attributes.size());
        for (std::size_t a = 0; a < ds.schema.attributes.size(); ++a) {
            const auto& attr = ds.schema.attributes[a];
            if (!record.contains(attr.name)) {
                throw DataError(path.string() + ":" + std::to_string(line_number) +
                                ": missing attribute '" + attr.name + "'");
            }
            const std::string level = record[attr.name].get<std::string>();
            const int idx = ds.schema.level_index(static_cast<int>(a), level);
            if (idx < 0) {
                throw DataError(path.string() + ":" + std::to_string(line_number) +
                                ": unknown level '" + level + "' for attribute '" + attr.name + "'");
            }
            s.attribute_values.push_back(idx);
        }

        ds.samples.push_back(std::move(s));
    }
    if (line_number == 0) {
        throw DataError(path.string() + ": empty file, expected a format_version header line");
    }

    ds.validate();
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path,
                   std::uint64_t config_hash) {
    dataset.validate();
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write dataset file " + path.string());
    }

    ordered_json header;
    header["format_version"] = kDatasetFormatVersion;
    if (config_hash != 0) header["config_hash"] = hex_hash(config_hash);
    out << header.dump() << '\n';

    // Canonical field order: id, features, label, then schema attributes.
    for (const Sample& s : dataset.samples) {
        ordered_json record;
        record["id"] = s.id;
        record["image_features"] = feature_array(s.image_features);
        record["text_features"] = feature_array(s.text_features);
        record["label"] = s.label;
        for (std::size_t a = 0; a < dataset.schema.attributes.size(); ++a) {
            const auto& attr = dataset.schema.attributes[a];
            record[attr.name] = attr.levels.at(s.attribute_values[a]);
        }
        out << record.dump() << '\n';
    }
}

GroupPartition partition_by_attribute(const Dataset& dataset, const std::string& attribute_name) {
    const int attr = dataset.schema.attribute_index(attribute_name);
    if (attr < 0) {
        throw ConfigError("unknown attribute '" + attribute_name + "'");
    }
    GroupPartition part;
    part.attribute_name = attribute_name;
    part.attribute = attr;
    part.groups.resize(dataset.schema.attributes[attr].levels.size());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        part.groups[dataset.samples[i].attribute_values[attr]].push_back(i);
    }
    return part;
}

std::vector<std::size_t> sample_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng) {
    spec.validate();
    if (dataset.samples.empty()) {
        throw DataError("cannot sample a batch from an empty dataset");
    }
    const std::size_t n = dataset.samples.size();
    if (spec.batch_size > n) {
        return rng.sample_with_replacement(n, spec.batch_size);
    }
    return rng.sample_without_replacement(n, spec.batch_size);
}

std::vector<std::size_t> sample_group_batch(const GroupPartition& partition, int level,
                                            std::size_t size, Rng& rng) {
    if (level < 0 || level >= static_cast<int>(partition.groups.size())) {
        throw ConfigError("group level index out of range");
    }
    const auto& group = partition.groups[level];
    if (group.empty()) {
        throw DataError("group for level " + std::to_string(level) + " of attribute '" +
                        partition.attribute_name + "' is empty");
    }
    std::vector<std::size_t> draws = size > group.size()
                                         ? rng.sample_with_replacement(group.size(), size)
                                         : rng.sample_without_replacement(group.size(), size);
    for (auto& d : draws) d = group[d];
    return draws;
}

Eigen::MatrixXd gather_image_features(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), dataset.image_dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = dataset.samples.at(indices[i]).image_features;
    }
    return out;
}

Eigen::MatrixXd gather_text_features(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), dataset.text_dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = dataset.samples.at(indices[i]).text_features;
    }
    return out;
}

} // namespace fairsinkhorn
