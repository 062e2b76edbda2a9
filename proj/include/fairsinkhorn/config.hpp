#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairsinkhorn/contrastive.hpp"
#include "fairsinkhorn/data.hpp"
#include "fairsinkhorn/encoders.hpp"
#include "fairsinkhorn/synthetic.hpp"

namespace fairsinkhorn {

// Sectioned key = value text. Values may be JSON (arrays/objects) for
// structured fields; '#' and ';' start comments. The hash is FNV-1a64 over
// the raw file bytes and stamps every derived output file.
struct ParsedConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::string raw;
    std::uint64_t hash = 0;
    std::filesystem::path base_dir; // anchor for relative paths in values

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    double require_double(const std::string& section, const std::string& key) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::filesystem::path get_path(const std::string& section, const std::string& key,
                                   const std::filesystem::path& fallback) const;
    std::filesystem::path require_path(const std::string& section, const std::string& key) const;

    // Rejects unknown keys in a section so typos fail loudly.
    void ensure_known_keys(const std::string& section,
                           const std::vector<std::string>& allowed) const;
};

ParsedConfig load_config(const std::filesystem::path& path);
ParsedConfig parse_config_text(std::string text, const std::filesystem::path& base_dir = ".");

// Everything cmd_train consumes, resolved and validated. mode == "clip"
// forces lambda_fair to zero at parse time.
struct RunConfig {
    std::string mode = "clip"; // clip | fairclip
    std::filesystem::path schema_path;
    std::filesystem::path train_path;
    std::filesystem::path val_path;
    std::filesystem::path test_path;
    std::string attribute_name;
    BatchSpec batch;
    FairClipConfig fair;
    AdamConfig adam;
    EncoderKind encoder_kind = EncoderKind::linear;
    int embed_dim = 16;
    int hidden_dim = 32;
    double temperature = 0.07;
    int epochs = 10;
    int eval_every = 1;       // epochs; 0 disables periodic eval
    int checkpoint_every = 0; // epochs; 0 keeps only the final checkpoint
    std::filesystem::path out_dir = "run";
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

struct ProbeConfig {
    std::string kind = "logistic";
    double learning_rate = 0.1;
    int epochs = 500;
    double l2 = 1e-4;
    std::uint64_t seed = 0; // reserved; the full-batch logistic probe is deterministic
    double threshold = 0.5;

    void validate() const;
    bool operator==(const ProbeConfig&) const = default;
};

// Evaluation-facing paths and labels shared by probe/zeroshot/compare.
struct ReportConfig {
    std::filesystem::path checkpoint;
    std::filesystem::path out_dir = "report";
    std::string model_name = "model";
    std::filesystem::path prompts_path;  // zeroshot only
    std::filesystem::path baseline_dir;  // compare only
    std::filesystem::path treatment_dir; // compare only
};

GeneratorConfig parse_generator_config(const ParsedConfig& cfg);
std::vector<double> parse_split_fractions(const ParsedConfig& cfg); // [train, val, test]
RunConfig parse_run_config(const ParsedConfig& cfg);
ProbeConfig parse_probe_config(const ParsedConfig& cfg);
ReportConfig parse_report_config(const ParsedConfig& cfg);

// Canonical manifest text for a resolved run: parsing it back yields an
// equal RunConfig. Doubles render round-trip exact.
std::string render_run_config(const RunConfig& cfg);

} // namespace fairsinkhorn
