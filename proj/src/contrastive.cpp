#include "fairsinkhorn/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "fairsinkhorn/error.hpp"

namespace fairsinkhorn {

void EmbeddingBatch::validate() const {
    if (image_embeddings.rows() < 1) throw DataError("embedding batch must hold at least one pair");
    if (image_embeddings.rows() != text_embeddings.rows() ||
        image_embeddings.cols() != text_embeddings.cols()) {
        throw DataError("image/text embedding shapes differ within one batch");
    }
    if (!image_embeddings.allFinite() || !text_embeddings.allFinite()) {
        throw DataError("embedding batch has non-finite entries");
    }
    if (already_normalized) {
        for (Eigen::Index i = 0; i < size(); ++i) {
            if (std::abs(image_embeddings.row(i).norm() - 1.0) > 1e-6 ||
                std::abs(text_embeddings.row(i).norm() - 1.0) > 1e-6) {
                throw DataError("batch flagged normalized but row " + std::to_string(i) +
                                " is not unit length");
            }
        }
    }
}

void FairClipConfig::validate() const {
    if (lambda_fair < 0.0) throw ConfigError("lambda_fair must be non-negative");
    if (group_batch_size <= 0) throw ConfigError("group_batch_size must be positive");
    sinkhorn.validate();
}

namespace {

struct NormalizedBatch {
    Eigen::MatrixXd image;
    Eigen::MatrixXd text;
    Eigen::VectorXd image_norms;
    Eigen::VectorXd text_norms;
    bool normalized_here = false;
};

constexpr double kMinRowNorm = 1e-12;

NormalizedBatch normalize_batch(const EmbeddingBatch& batch) {
    batch.validate();
    NormalizedBatch out;
    if (batch.already_normalized) {
        out.image = batch.image_embeddings;
        out.text = batch.text_embeddings;
        return out;
    }
    out.normalized_here = true;
    out.image = batch.image_embeddings;
    out.text = batch.text_embeddings;
    out.image_norms.resize(batch.size());
    out.text_norms.resize(batch.size());
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const double ni = out.image.row(i).norm();
        const double nt = out.text.row(i).norm();
        if (ni < kMinRowNorm) {
            throw DataError("zero-norm image embedding at row " + std::to_string(i));
        }
        if (nt < kMinRowNorm) {
            throw DataError("zero-norm text embedding at row " + std::to_string(i));
        }
        out.image.row(i) /= ni;
        out.text.row(i) /= nt;
        out.image_norms[i] = ni;
        out.text_norms[i] = nt;
    }
    return out;
}

// Gradient through row-wise L2 normalization: for zhat = z / |z|,
// dL/dz = (dL/dzhat - <zhat, dL/dzhat> zhat) / |z|.
Eigen::MatrixXd backprop_normalization(const Eigen::MatrixXd& normalized,
                                       const Eigen::VectorXd& norms,
                                       const Eigen::MatrixXd& grad_normalized) {
    Eigen::MatrixXd grad(grad_normalized.rows(), grad_normalized.cols());
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
        const double radial = normalized.row(i).dot(grad_normalized.row(i));
        grad.row(i) = (grad_normalized.row(i) - radial * normalized.row(i)) / norms[i];
    }
    return grad;
}

// Log-sum-exp of one row/column with the summands added in ascending
// order. The sorted summation makes the reduction independent of entry
// order, so permuting the batch permutes per-row values bit-exactly.
double canonical_lse(std::vector<double>& buffer) {
    double mx = buffer[0];
    for (double v : buffer) mx = std::max(mx, v);
    for (double& v : buffer) v = std::exp(v - mx);
    std::sort(buffer.begin(), buffer.end());
    double sum = 0.0;
    for (double v : buffer) sum += v;
    return mx + std::log(sum);
}

double canonical_mean(std::vector<double>& buffer) {
    std::sort(buffer.begin(), buffer.end());
    double sum = 0.0;
    for (double v : buffer) sum += v;
    return sum / static_cast<double>(buffer.size());
}

} // namespace

SimilarityMatrix similarity(const EmbeddingBatch& batch, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    const NormalizedBatch nb = normalize_batch(batch);
    SimilarityMatrix m;
    m.temperature = temperature;
    m.entries = (nb.image * nb.text.transpose()) / temperature;
    return m;
}

ClipLossResult clip_loss(const SimilarityMatrix& m) {
    const Eigen::Index n = m.entries.rows();
    if (n != m.entries.cols() || n < 1) throw DataError("similarity matrix must be square");

    ClipLossResult result;
    std::vector<double> buffer(static_cast<std::size_t>(n));
    std::vector<double> row_ce(static_cast<std::size_t>(n));
    std::vector<double> col_ce(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) buffer[static_cast<std::size_t>(j)] = m.entries(i, j);
        row_ce[static_cast<std::size_t>(i)] = canonical_lse(buffer) - m.entries(i, i);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) buffer[static_cast<std::size_t>(i)] = m.entries(i, j);
        col_ce[static_cast<std::size_t>(j)] = canonical_lse(buffer) - m.entries(j, j);
    }
    result.loss = 0.5 * (canonical_mean(row_ce) + canonical_mean(col_ce));

    // Gradient: softmax within each row and column, target on the diagonal.
    const Eigen::VectorXd row_max = m.entries.rowwise().maxCoeff();
    Eigen::MatrixXd row_soft = (m.entries.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd row_sums = row_soft.rowwise().sum();
    row_soft.array().colwise() /= row_sums.array();

    const Eigen::RowVectorXd col_max = m.entries.colwise().maxCoeff();
    Eigen::MatrixXd col_soft = (m.entries.rowwise() - col_max).array().exp().matrix();
    const Eigen::RowVectorXd col_sums = col_soft.colwise().sum();
    col_soft.array().rowwise() /= col_sums.array();

    result.grad = (row_soft + col_soft -
                   2.0 * Eigen::MatrixXd::Identity(n, n)) /
                  (2.0 * static_cast<double>(n));
    return result;
}

EmpiricalDistribution diagonal_distribution(const SimilarityMatrix& m) {
    const Eigen::Index n = m.entries.rows();
    if (n != m.entries.cols() || n < 1) throw DataError("similarity matrix must be square");
    return EmpiricalDistribution::uniform(m.entries.diagonal() * m.temperature);
}

FairClipResult fairclip_loss(const EmbeddingBatch& batch,
                             const std::map<int, EmbeddingBatch>& group_batches,
                             const FairClipConfig& cfg, double temperature) {
    cfg.validate();
    const NormalizedBatch nb = normalize_batch(batch);
    const Eigen::Index n = batch.size();

    SimilarityMatrix m;
    m.temperature = temperature;
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    m.entries = (nb.image * nb.text.transpose()) / temperature;

    const ClipLossResult clip = clip_loss(m);

    FairClipResult result;
    result.clip_component = clip.loss;

    // Contrastive part of the embedding gradients (normalized coordinates).
    Eigen::MatrixXd grad_image_hat = (clip.grad * nb.text) / temperature;
    Eigen::MatrixXd grad_text_hat = (clip.grad.transpose() * nb.image) / temperature;

    double fairness_sum = 0.0;
    // Per-pair slope accumulated across levels for the main batch's
    // diagonal supports p_i = <zhat_Ii, zhat_Ti>.
    Eigen::VectorXd diag_slope = Eigen::VectorXd::Zero(n);

    for (const auto& [level, group_batch] : group_batches) {
        BatchGradients g;
        g.image = Eigen::MatrixXd::Zero(group_batch.size(), group_batch.dim());
        g.text = Eigen::MatrixXd::Zero(group_batch.size(), group_batch.dim());

        if (cfg.lambda_fair == 0.0) {
            result.fairness_terms[level] = 0.0;
            result.group[level] = std::move(g);
            continue;
        }

        const NormalizedBatch gb = normalize_batch(group_batch);
        const Eigen::VectorXd group_diag =
            (gb.image.array() * gb.text.array()).rowwise().sum().matrix();
        const EmpiricalDistribution main_dist =
            EmpiricalDistribution::uniform(m.entries.diagonal() * temperature);
        const EmpiricalDistribution group_dist = EmpiricalDistribution::uniform(group_diag);

        const double term = sinkhorn_distance(main_dist, group_dist, cfg.sinkhorn);
        result.fairness_terms[level] = term;
        fairness_sum += term;

        const SupportGradients support =
            sinkhorn_grad_support(main_dist, group_dist, cfg.sinkhorn);
        diag_slope += cfg.lambda_fair * support.source;

        // Group supports q_k = <zhat_Ik, zhat_Tk>: each slope splits onto
        // the opposite modality's normalized row.
        const Eigen::VectorXd scaled = cfg.lambda_fair * support.target;
        Eigen::MatrixXd g_image_hat = (gb.text.array().colwise() * scaled.array()).matrix();
        Eigen::MatrixXd g_text_hat = (gb.image.array().colwise() * scaled.array()).matrix();
        if (gb.normalized_here) {
            g.image = backprop_normalization(gb.image, gb.image_norms, g_image_hat);
            g.text = backprop_normalization(gb.text, gb.text_norms, g_text_hat);
        } else {
            g.image = std::move(g_image_hat);
            g.text = std::move(g_text_hat);
        }
        result.group[level] = std::move(g);
    }

    // Main-batch supports also come from diagonal pairs: p_i depends on
    // both modalities' row i.
    grad_image_hat += (nb.text.array().colwise() * diag_slope.array()).matrix();
    grad_text_hat += (nb.image.array().colwise() * diag_slope.array()).matrix();

    if (nb.normalized_here) {
        result.main.image = backprop_normalization(nb.image, nb.image_norms, grad_image_hat);
        result.main.text = backprop_normalization(nb.text, nb.text_norms, grad_text_hat);
    } else {
        result.main.image = std::move(grad_image_hat);
        result.main.text = std::move(grad_text_hat);
    }

    result.loss = clip.loss + cfg.lambda_fair * fairness_sum;
    return result;
}

} // namespace fairsinkhorn
