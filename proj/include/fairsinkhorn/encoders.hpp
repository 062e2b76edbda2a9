#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fairsinkhorn/rng.hpp"

namespace fairsinkhorn {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

enum class EncoderKind { linear, mlp1 };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

// A small trainable projection head over precomputed features.
//   linear: Y = X W + b            params = {W, b}
//   mlp1:   Y = relu(X W1 + b1) W2 + b2   params = {W1, b1, W2, b2}
// Biases are stored as 1 x width matrices so every parameter lives in the
// same flat list the optimizer walks.
struct EncoderParams {
    EncoderKind kind = EncoderKind::linear;
    int input_dim = 0;
    int hidden_dim = 0; // mlp1 only; 0 for linear
    int output_dim = 0;
    std::vector<Eigen::MatrixXd> params;

    void validate() const;

    // Seeded uniform init in +-1/sqrt(fan_in) for weights and biases,
    // drawn in parameter order, row-major within each matrix.
    static EncoderParams init(EncoderKind kind, int input_dim, int hidden_dim, int output_dim,
                              Rng& rng);
};

Eigen::MatrixXd forward(const EncoderParams& enc, const Eigen::MatrixXd& inputs);

struct BackwardResult {
    std::vector<Eigen::MatrixXd> param_grads; // parallel to EncoderParams::params
    Eigen::MatrixXd input_grads;
};

BackwardResult backward(const EncoderParams& enc, const Eigen::MatrixXd& inputs,
                        const Eigen::MatrixXd& grad_output);

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 6e-5;
    double epsilon = 1e-8;

    void validate() const;
    bool operator==(const AdamConfig&) const = default;
};

// The published configuration for this method sets both Adam betas to 0.1;
// that is unusual enough to ship as an explicit opt-in preset rather than
// the default.
AdamConfig fairclip_preset();

struct OptimizerState {
    AdamConfig config;
    std::int64_t step_count = 0;
    std::vector<Eigen::MatrixXd> first_moment;
    std::vector<Eigen::MatrixXd> second_moment;

    static OptimizerState init(const AdamConfig& config,
                               const std::vector<Eigen::MatrixXd>& params);
};

// One Adam step with decoupled weight decay. Throws NumericError on
// non-finite gradients so training halts instead of corrupting weights.
void optimizer_step(std::vector<Eigen::MatrixXd>& params,
                    const std::vector<Eigen::MatrixXd>& grads, OptimizerState& state);

struct Checkpoint {
    std::uint32_t format_version = kCheckpointFormatVersion;
    EncoderParams image_encoder;
    EncoderParams text_encoder;
    OptimizerState optimizer; // moments over image params followed by text params
    std::uint64_t config_hash = 0;
    std::array<std::uint64_t, 6> rng_state{};
    std::int32_t epoch = 0;
};

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b);

// Versioned binary file: magic "FSCP", format version, payload size, then
// an FNV-1a64 checksum over the little-endian payload. Load refuses bad
// magic, unknown versions, truncation, and checksum mismatches.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace fairsinkhorn
