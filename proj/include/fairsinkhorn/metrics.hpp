#pragma once

#include <map>
#include <string>
#include <vector>

namespace fairsinkhorn {

// Scored binary predictions with group membership. num_levels = 0 means
// "infer as max(group_ids) + 1"; set it explicitly when trailing levels
// may be absent from the evaluated split.
struct Predictions {
    std::vector<double> scores; // higher = more positive
    std::vector<int> labels;    // 0 or 1
    std::vector<int> group_ids; // level index per sample
    double threshold = 0.5;     // binarization cut for rate-based metrics
    int num_levels = 0;

    void validate() const;
    int resolved_num_levels() const;
};

struct EvaluationReport {
    double auc = 0.0;
    std::map<int, double> group_auc; // degenerate groups absent
    double es_auc = 0.0;
    double dpd = 0.0;
    double deodds = 0.0;
    std::string attribute_name;
    std::map<int, std::size_t> sample_counts;
    std::vector<std::string> warnings;
};

// Mann-Whitney statistic via average ranks: (concordant + 0.5 * ties) /
// (positives * negatives). Throws DataError when only one class is present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// overall / (1 + sum over groups of |overall - group|), fractional units.
double es_auc(double overall_auc, const std::map<int, double>& group_aucs);

// Per-group AUC. Groups missing a class are left out of the map; a note is
// appended to *warnings when provided.
std::map<int, double> groupwise_auc(const Predictions& preds,
                                    std::vector<std::string>* warnings = nullptr);

// Max-gap demographic parity: spread of per-group positive-prediction rates.
double dpd(const Predictions& preds);

// Max-gap equalized odds: the larger of the TPR spread and the FPR spread.
double deodds(const Predictions& preds);

EvaluationReport evaluate(const Predictions& preds, const std::string& attribute_name);

} // namespace fairsinkhorn
