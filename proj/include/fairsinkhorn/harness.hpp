#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairsinkhorn/config.hpp"
#include "fairsinkhorn/metrics.hpp"

namespace fairsinkhorn {

// Command-line overrides applied after config parsing. no_timestamps
// removes wall-clock fields from logs so repeat runs are byte-identical.
struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out_dir;
    bool no_timestamps = false;
};

struct GenerateResult {
    std::filesystem::path schema_path;
    std::filesystem::path train_path;
    std::filesystem::path val_path;
    std::filesystem::path test_path;
    std::filesystem::path manifest_path;
    std::size_t train_count = 0;
    std::size_t val_count = 0;
    std::size_t test_count = 0;
};

// Generates the dataset, slices it train/val/test in generation order, and
// writes the three splits plus schema and a manifest, all stamped with the
// config hash.
GenerateResult run_generate(const ParsedConfig& cfg, const CliOverrides& overrides);

struct TrainStepRecord {
    int step = 0;
    int epoch = 0;
    double clip_loss = 0.0;
    std::map<int, double> sinkhorn_terms; // level -> weighted-out raw term
    double total = 0.0;
};

struct TrainResult {
    RunConfig config; // resolved, as written to the manifest
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    std::filesystem::path manifest_path;
    std::vector<TrainStepRecord> steps;
    double final_total = 0.0;
    double final_clip = 0.0;
    double final_fairness_sum = 0.0; // unweighted sum of final-step terms
};

// The pre-training loop: per step, sample a batch, encode both modalities,
// add the per-level transport terms (fairclip mode), backpropagate through
// both encoders and apply one optimizer step. Writes a JSONL log, periodic
// and final checkpoints, and a manifest that re-parses to the same
// RunConfig. Group batches draw from an RNG stream the plain-contrastive
// path never touches, so lambda = 0 runs are bit-identical to mode=clip.
TrainResult run_train(const ParsedConfig& cfg, const CliOverrides& overrides);

struct EvalResult {
    std::filesystem::path report_json_path;
    std::filesystem::path report_csv_path;
    EvaluationReport report;
};

// Freezes the checkpoint's encoders, fits a logistic head on normalized
// train-split image embeddings, and evaluates on the test split.
EvalResult run_probe(const ParsedConfig& cfg, const CliOverrides& overrides);

// Classifies by cosine similarity against two prompt vectors (embedding
// space, loaded from a JSON file); the positive-class softmax probability
// is the score.
EvalResult run_zeroshot(const ParsedConfig& cfg, const CliOverrides& overrides);

struct CompareRow {
    std::string metric;
    double baseline = 0.0;
    double treatment = 0.0;
    double delta = 0.0;
    bool improved = false; // direction-aware (lower dpd/deodds, higher auc)
};

struct CompareResult {
    std::filesystem::path csv_path;
    std::string attribute;
    std::vector<CompareRow> rows;
    bool es_auc_improved = false;
};

// Side-by-side deltas between two report directories' report.json files.
CompareResult run_compare(const ParsedConfig& cfg, const CliOverrides& overrides);

} // namespace fairsinkhorn
