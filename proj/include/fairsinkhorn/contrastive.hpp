#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "fairsinkhorn/sinkhorn.hpp"

namespace fairsinkhorn {

// Paired image/text embedding rows for one batch. When already_normalized
// is set the rows are trusted to be unit length (validated to 1e-6);
// otherwise similarity() and fairclip_loss() normalize internally and
// gradients include the normalization Jacobian.
struct EmbeddingBatch {
    Eigen::MatrixXd image_embeddings; // N x d
    Eigen::MatrixXd text_embeddings;  // N x d
    bool already_normalized = false;

    Eigen::Index size() const { return image_embeddings.rows(); }
    Eigen::Index dim() const { return image_embeddings.cols(); }
    void validate() const;
};

// Temperature-scaled cosine similarities: entries(i, j) = <zhat_Ii, zhat_Tj> / temperature.
struct SimilarityMatrix {
    Eigen::MatrixXd entries; // N x N
    double temperature = 0.07;
};

struct ClipLossResult {
    double loss = 0.0;
    Eigen::MatrixXd grad; // dloss / dentries, N x N
};

struct FairClipConfig {
    double lambda_fair = 1e-7;
    std::string attribute_name;
    int group_batch_size = 32;
    SinkhornConfig sinkhorn;

    void validate() const;
    bool operator==(const FairClipConfig&) const = default;
};

struct BatchGradients {
    Eigen::MatrixXd image; // same shape as the batch's image_embeddings
    Eigen::MatrixXd text;
};

struct FairClipResult {
    double loss = 0.0;
    double clip_component = 0.0;
    std::map<int, double> fairness_terms; // level -> transport divergence
    BatchGradients main;
    std::map<int, BatchGradients> group; // level -> gradients for that group batch
};

// Builds the N x N similarity matrix. Rows are normalized here unless the
// batch is flagged as already normalized. Throws DataError naming the row
// and side when a row has (near-)zero norm.
SimilarityMatrix similarity(const EmbeddingBatch& batch, double temperature);

// Symmetric cross-entropy over the similarity matrix: the mean row-wise
// cross-entropy against the diagonal target, averaged with the column-wise
// version, plus its exact gradient. Row/column log-sum-exp reductions sum
// in sorted order so the loss is bit-identical under simultaneous row
// permutations of both modalities.
ClipLossResult clip_loss(const SimilarityMatrix& m);

// Uniform distribution over the diagonal cosine similarities. Temperature
// is undone so the support lives on raw cosine values and the fairness
// term's scale does not depend on the contrastive temperature.
EmpiricalDistribution diagonal_distribution(const SimilarityMatrix& m);

// Combined objective: clip_loss(batch) + lambda * sum over levels of the
// transport distance between the batch's diagonal distribution and each
// group batch's. Gradients cover every input embedding; the group batches
// contribute no contrastive term, only their diagonal similarities. When
// lambda_fair == 0 the transport solver is never invoked and the result is
// exactly the plain contrastive loss (fairness terms and group gradients
// all zero).
FairClipResult fairclip_loss(const EmbeddingBatch& batch,
                             const std::map<int, EmbeddingBatch>& group_batches,
                             const FairClipConfig& cfg, double temperature);

} // namespace fairsinkhorn
