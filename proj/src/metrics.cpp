#include "fairsinkhorn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairsinkhorn/error.hpp"

namespace fairsinkhorn {

void Predictions::validate() const {
    if (scores.empty()) throw DataError("predictions are empty");
    if (scores.size() != labels.size() || scores.size() != group_ids.size()) {
        throw DataError("predictions fields have mismatched lengths");
    }
    for (int label : labels) {
        if (label != 0 && label != 1) throw DataError("labels must be 0 or 1");
    }
    for (int g : group_ids) {
        if (g < 0) throw DataError("group ids must be non-negative");
    }
    if (num_levels < 0) throw DataError("num_levels must be non-negative");
    if (num_levels > 0) {
        for (int g : group_ids) {
            if (g >= num_levels) throw DataError("group id exceeds num_levels");
        }
    }
}

int Predictions::resolved_num_levels() const {
    if (num_levels > 0) return num_levels;
    return *std::max_element(group_ids.begin(), group_ids.end()) + 1;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty() || scores.size() != labels.size()) {
        throw DataError("auc needs equal-length non-empty scores and labels");
    }
    std::size_t positives = 0;
    for (int label : labels) {
        if (label != 0 && label != 1) throw DataError("labels must be 0 or 1");
        positives += static_cast<std::size_t>(label);
    }
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw DataError("auc undefined: only one class present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Average ranks within tie blocks; ranks are 1-based.
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) positive_rank_sum += avg_rank;
        }
        i = j + 1;
    }

    const double u = positive_rank_sum -
                     0.5 * static_cast<double>(positives) * static_cast<double>(positives + 1);
    return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

double es_auc(double overall_auc, const std::map<int, double>& group_aucs) {
    if (overall_auc < 0.0 || overall_auc > 1.0) throw DataError("overall auc outside [0, 1]");
    double disparity = 0.0;
    for (const auto& [level, value] : group_aucs) {
        if (value < 0.0 || value > 1.0) throw DataError("group auc outside [0, 1]");
        disparity += std::abs(overall_auc - value);
    }
    return overall_auc / (1.0 + disparity);
}

std::map<int, double> groupwise_auc(const Predictions& preds, std::vector<std::string>* warnings) {
    preds.validate();
    const int levels = preds.resolved_num_levels();
    std::map<int, double> out;
    for (int level = 0; level < levels; ++level) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t k = 0; k < preds.scores.size(); ++k) {
            if (preds.group_ids[k] == level) {
                scores.push_back(preds.scores[k]);
                labels.push_back(preds.labels[k]);
            }
        }
        const std::size_t positives =
            static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        if (labels.empty() || positives == 0 || positives == labels.size()) {
            if (warnings != nullptr) {
                warnings->push_back("group " + std::to_string(level) +
                                    " lacks both classes; AUC omitted");
            }
            continue;
        }
        out[level] = auc(scores, labels);
    }
    return out;
}

namespace {

struct GroupCounts {
    std::size_t total = 0;
    std::size_t predicted_positive = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
};

std::vector<GroupCounts> tabulate(const Predictions& preds) {
    preds.validate();
    std::vector<GroupCounts> counts(static_cast<std::size_t>(preds.resolved_num_levels()));
    for (std::size_t k = 0; k < preds.scores.size(); ++k) {
        GroupCounts& c = counts[static_cast<std::size_t>(preds.group_ids[k])];
        const bool predicted = preds.scores[k] >= preds.threshold;
        c.total += 1;
        c.predicted_positive += predicted ? 1 : 0;
        if (preds.labels[k] == 1) {
            c.positives += 1;
            c.true_positives += predicted ? 1 : 0;
        } else {
            c.negatives += 1;
            c.false_positives += predicted ? 1 : 0;
        }
    }
    return counts;
}

} // namespace

double dpd(const Predictions& preds) {
    const std::vector<GroupCounts> counts = tabulate(preds);
    double lo = 1.0, hi = 0.0;
    for (std::size_t level = 0; level < counts.size(); ++level) {
        if (counts[level].total == 0) {
            throw DataError("demographic parity undefined: group " + std::to_string(level) +
                            " is empty");
        }
        const double rate = static_cast<double>(counts[level].predicted_positive) /
                            static_cast<double>(counts[level].total);
        lo = std::min(lo, rate);
        hi = std::max(hi, rate);
    }
    return hi - lo;
}

double deodds(const Predictions& preds) {
    const std::vector<GroupCounts> counts = tabulate(preds);
    double tpr_lo = 1.0, tpr_hi = 0.0, fpr_lo = 1.0, fpr_hi = 0.0;
    for (std::size_t level = 0; level < counts.size(); ++level) {
        const GroupCounts& c = counts[level];
        if (c.positives == 0 || c.negatives == 0) {
            throw DataError("equalized odds undefined: group " + std::to_string(level) +
                            " lacks a class");
        }
        const double tpr =
            static_cast<double>(c.true_positives) / static_cast<double>(c.positives);
        const double fpr =
            static_cast<double>(c.false_positives) / static_cast<double>(c.negatives);
        tpr_lo = std::min(tpr_lo, tpr);
        tpr_hi = std::max(tpr_hi, tpr);
        fpr_lo = std::min(fpr_lo, fpr);
        fpr_hi = std::max(fpr_hi, fpr);
    }
    return std::max(tpr_hi - tpr_lo, fpr_hi - fpr_lo);
}

EvaluationReport evaluate(const Predictions& preds, const std::string& attribute_name) {
    preds.validate();
    EvaluationReport report;
    report.attribute_name = attribute_name;
    report.auc = auc(preds.scores, preds.labels);
    report.group_auc = groupwise_auc(preds, &report.warnings);
    report.es_auc = es_auc(report.auc, report.group_auc);
    report.dpd = dpd(preds);
    report.deodds = deodds(preds);
    for (std::size_t k = 0; k < preds.group_ids.size(); ++k) {
        report.sample_counts[preds.group_ids[k]] += 1;
    }
    return report;
}

} // namespace fairsinkhorn
