#include "fairsinkhorn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fairsinkhorn/error.hpp"

namespace fairsinkhorn {

namespace {

constexpr double kImageNoiseScale = 0.05;

Eigen::MatrixXd draw_projection(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

Eigen::VectorXd draw_normals(Eigen::Index n, Rng& rng) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

} // namespace

void GeneratorConfig::validate() const {
    schema.validate();
    if (schema.attributes.empty()) throw ConfigError("generator schema needs an attribute");
    if (image_dim <= 0 || text_dim <= 0 || latent_dim <= 0) {
        throw ConfigError("generator dims must be positive");
    }
    const std::size_t levels = schema.attributes.front().levels.size();
    if (group_proportions.size() != levels || group_shift.size() != levels ||
        group_noise_scale.size() != levels) {
        throw ConfigError("group_proportions/group_shift/group_noise_scale must cover every level "
                          "of the first attribute");
    }
    double total = 0.0;
    for (double p : group_proportions) {
        if (p < 0.0) throw ConfigError("group proportions must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("group proportions must sum to 1");
    for (const Eigen::VectorXd& shift : group_shift) {
        if (shift.size() != latent_dim) throw ConfigError("group_shift entries must have latent_dim");
        if (!shift.allFinite()) throw ConfigError("group_shift has non-finite values");
    }
    for (double s : group_noise_scale) {
        if (!(s > 0.0)) throw ConfigError("group_noise_scale entries must be positive");
    }
    if (!(label_signal_strength > 0.0)) throw ConfigError("label_signal_strength must be positive");
    if (cross_modal_correlation < 0.0 || cross_modal_correlation > 1.0) {
        throw ConfigError("cross_modal_correlation must lie in [0, 1]");
    }
}

Dataset generate(const GeneratorConfig& cfg) {
    cfg.validate();

    Dataset ds;
    ds.schema = cfg.schema;
    ds.image_dim = cfg.image_dim;
    ds.text_dim = cfg.text_dim;
    ds.samples.reserve(cfg.n_samples);

    // Stream 0 owns the fixed projections, stream 1 the per-sample draws,
    // so adding samples never disturbs the projections.
    Rng projection_rng = Rng::stream(cfg.seed, 0);
    const Eigen::MatrixXd a_img = draw_projection(cfg.image_dim, cfg.latent_dim, projection_rng);
    const Eigen::MatrixXd a_txt = draw_projection(cfg.text_dim, cfg.latent_dim, projection_rng);

    Rng rng = Rng::stream(cfg.seed, 1);
    const double rho = cfg.cross_modal_correlation;

    for (std::size_t n = 0; n < cfg.n_samples; ++n) {
        Sample sample;
        char id[32];
        std::snprintf(id, sizeof id, "sample-%06zu", n);
        sample.id = id;

        // Per-sample draw order (frozen for reproducibility): group level,
        // extra attribute levels, label, latent, image noise, text noise.
        const double pick = rng.uniform();
        int group = static_cast<int>(cfg.group_proportions.size()) - 1;
        double cumulative = 0.0;
        for (std::size_t level = 0; level < cfg.group_proportions.size(); ++level) {
            cumulative += cfg.group_proportions[level];
            if (pick < cumulative) {
                group = static_cast<int>(level);
                break;
            }
        }
        sample.attribute_values.push_back(group);
        for (std::size_t attr = 1; attr < cfg.schema.attributes.size(); ++attr) {
            sample.attribute_values.push_back(static_cast<int>(
                rng.uniform_index(cfg.schema.attributes[attr].levels.size())));
        }

        sample.label = rng.uniform() < 0.5 ? 1 : 0;

        const Eigen::VectorXd latent =
            Eigen::VectorXd::Constant(cfg.latent_dim,
                                      cfg.label_signal_strength * sample.label) +
            cfg.group_shift[static_cast<std::size_t>(group)] +
            cfg.group_noise_scale[static_cast<std::size_t>(group)] *
                draw_normals(cfg.latent_dim, rng);

        sample.image_features = a_img * latent + kImageNoiseScale * draw_normals(cfg.image_dim, rng);
        sample.text_features =
            rho * (a_txt * latent) + (1.0 - rho) * draw_normals(cfg.text_dim, rng);

        ds.samples.push_back(std::move(sample));
    }

    ds.validate();
    return ds;
}

namespace {

// Cosine of each encoded image/text pair.
std::vector<double> diagonal_cosines(const Dataset& ds, const EncoderParams& image_encoder,
                                     const EncoderParams& text_encoder) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    const Eigen::MatrixXd z_img = forward(image_encoder, gather_image_features(ds, all));
    const Eigen::MatrixXd z_txt = forward(text_encoder, gather_text_features(ds, all));

    std::vector<double> cosines(ds.size());
    for (Eigen::Index i = 0; i < z_img.rows(); ++i) {
        const double ni = z_img.row(i).norm();
        const double nt = z_txt.row(i).norm();
        if (ni < 1e-12 || nt < 1e-12) {
            throw NumericError("zero-norm encoded embedding at sample " + std::to_string(i));
        }
        cosines[static_cast<std::size_t>(i)] = z_img.row(i).dot(z_txt.row(i)) / (ni * nt);
    }
    return cosines;
}

EmpiricalDistribution sorted_uniform(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    Eigen::VectorXd support(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        support[static_cast<Eigen::Index>(i)] = values[i];
    }
    return EmpiricalDistribution::uniform(std::move(support));
}

} // namespace

std::map<int, double> measure_group_gap(const Dataset& ds, const EncoderParams& image_encoder,
                                        const EncoderParams& text_encoder,
                                        const std::string& attribute_name,
                                        const SinkhornConfig& cfg) {
    if (ds.size() == 0) throw DataError("cannot measure group gaps on an empty dataset");
    cfg.validate();

    const std::vector<double> cosines = diagonal_cosines(ds, image_encoder, text_encoder);
    const EmpiricalDistribution population = sorted_uniform(cosines);

    const GroupPartition partition = partition_by_attribute(ds, attribute_name);
    SinkhornConfig gap_cfg = cfg;
    gap_cfg.debias = true;

    std::map<int, double> gaps;
    for (std::size_t level = 0; level < partition.groups.size(); ++level) {
        const std::vector<std::size_t>& members = partition.groups[level];
        if (members.empty()) {
            throw DataError("group '" +
                            ds.schema.attributes[static_cast<std::size_t>(partition.attribute)]
                                .levels[level] +
                            "' has no samples");
        }
        std::vector<double> group_cosines;
        group_cosines.reserve(members.size());
        for (std::size_t idx : members) group_cosines.push_back(cosines[idx]);
        gaps[static_cast<int>(level)] =
            sinkhorn_distance(population, sorted_uniform(std::move(group_cosines)), gap_cfg);
    }
    return gaps;
}

} // namespace fairsinkhorn
