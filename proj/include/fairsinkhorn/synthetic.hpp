#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fairsinkhorn/data.hpp"
#include "fairsinkhorn/encoders.hpp"
#include "fairsinkhorn/sinkhorn.hpp"

namespace fairsinkhorn {

// Controls for the paired-modality generator. Group structure (proportions,
// latent shift, noise scale) keys off the FIRST schema attribute's levels;
// any further attributes are drawn uniformly and carry no injected signal.
struct GeneratorConfig {
    std::size_t n_samples = 0;
    int image_dim = 16;
    int text_dim = 16;
    int latent_dim = 8;
    AttributeSchema schema;
    std::vector<double> group_proportions;    // one entry per level, sums to 1
    std::vector<Eigen::VectorXd> group_shift; // per level, length latent_dim
    std::vector<double> group_noise_scale;    // per level, positive
    double label_signal_strength = 1.0;
    double cross_modal_correlation = 1.0; // 1 = text fully driven by the latent
    std::uint64_t seed = 0;

    void validate() const;
};

// Draws, per sample: group level, any extra attribute levels, a fair-coin
// label, then latent u ~ N(label_signal_strength * label * 1 + shift[g],
// noise_scale[g]^2 * I). Modalities are linear views of the latent:
//   image = A_img u + 0.05 * noise
//   text  = rho * A_txt u + (1 - rho) * noise
// with A_img, A_txt fixed seeded projections. Fully determined by cfg.seed.
Dataset generate(const GeneratorConfig& cfg);

// Debiased transport distance between the whole dataset's image/text
// diagonal-cosine distribution and each group's, under the given encoders.
// Uses every sample (no batching); forces the debiased divergence so a
// group equal to the population measures exactly zero; supports are sorted
// so the result is bit-identical under sample reordering.
std::map<int, double> measure_group_gap(const Dataset& ds, const EncoderParams& image_encoder,
                                        const EncoderParams& text_encoder,
                                        const std::string& attribute_name,
                                        const SinkhornConfig& cfg);

} // namespace fairsinkhorn
