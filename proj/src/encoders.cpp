#include "fairsinkhorn/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/hashing.hpp"

namespace fairsinkhorn {

std::string to_string(EncoderKind kind) {
    return kind == EncoderKind::linear ? "linear" : "mlp1";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
    if (name == "linear") return EncoderKind::linear;
    if (name == "mlp1") return EncoderKind::mlp1;
    throw ConfigError("unknown encoder kind '" + name + "' (expected linear or mlp1)");
}

void EncoderParams::validate() const {
    if (input_dim <= 0 || output_dim <= 0) throw ConfigError("encoder dims must be positive");
    const auto check = [](const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                          const char* what) {
        if (m.rows() != rows || m.cols() != cols) {
            throw ConfigError(std::string("encoder parameter ") + what + " has wrong shape");
        }
        if (!m.allFinite()) {
            throw NumericError(std::string("encoder parameter ") + what + " has non-finite values");
        }
    };
    if (kind == EncoderKind::linear) {
        if (params.size() != 2) throw ConfigError("linear encoder expects params {W, b}");
        check(params[0], input_dim, output_dim, "W");
        check(params[1], 1, output_dim, "b");
    } else {
        if (hidden_dim <= 0) throw ConfigError("mlp1 encoder needs a positive hidden_dim");
        if (params.size() != 4) throw ConfigError("mlp1 encoder expects params {W1, b1, W2, b2}");
        check(params[0], input_dim, hidden_dim, "W1");
        check(params[1], 1, hidden_dim, "b1");
        check(params[2], hidden_dim, output_dim, "W2");
        check(params[3], 1, output_dim, "b2");
    }
}

namespace {

Eigen::MatrixXd draw_uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    }
    return m;
}

} // namespace

EncoderParams EncoderParams::init(EncoderKind kind, int input_dim, int hidden_dim, int output_dim,
                                  Rng& rng) {
    EncoderParams enc;
    enc.kind = kind;
    enc.input_dim = input_dim;
    enc.hidden_dim = kind == EncoderKind::mlp1 ? hidden_dim : 0;
    enc.output_dim = output_dim;
    if (kind == EncoderKind::linear) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
        enc.params.push_back(draw_uniform(input_dim, output_dim, bound, rng));
        enc.params.push_back(draw_uniform(1, output_dim, bound, rng));
    } else {
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
        enc.params.push_back(draw_uniform(input_dim, hidden_dim, bound1, rng));
        enc.params.push_back(draw_uniform(1, hidden_dim, bound1, rng));
        enc.params.push_back(draw_uniform(hidden_dim, output_dim, bound2, rng));
        enc.params.push_back(draw_uniform(1, output_dim, bound2, rng));
    }
    enc.validate();
    return enc;
}

Eigen::MatrixXd forward(const EncoderParams& enc, const Eigen::MatrixXd& inputs) {
    enc.validate();
    if (inputs.cols() != enc.input_dim) {
        throw DataError("encoder input width " + std::to_string(inputs.cols()) +
                        " does not match input_dim " + std::to_string(enc.input_dim));
    }
    if (enc.kind == EncoderKind::linear) {
        return (inputs * enc.params[0]).rowwise() + enc.params[1].row(0);
    }
    const Eigen::MatrixXd hidden =
        ((inputs * enc.params[0]).rowwise() + enc.params[1].row(0)).cwiseMax(0.0);
    return (hidden * enc.params[2]).rowwise() + enc.params[3].row(0);
}

BackwardResult backward(const EncoderParams& enc, const Eigen::MatrixXd& inputs,
                        const Eigen::MatrixXd& grad_output) {
    enc.validate();
    if (inputs.cols() != enc.input_dim || grad_output.cols() != enc.output_dim ||
        grad_output.rows() != inputs.rows()) {
        throw DataError("backward shapes inconsistent with encoder dims");
    }

    BackwardResult out;
    if (enc.kind == EncoderKind::linear) {
        out.param_grads.push_back(inputs.transpose() * grad_output);
        out.param_grads.push_back(grad_output.colwise().sum());
        out.input_grads = grad_output * enc.params[0].transpose();
        return out;
    }

    const Eigen::MatrixXd pre = (inputs * enc.params[0]).rowwise() + enc.params[1].row(0);
    const Eigen::MatrixXd hidden = pre.cwiseMax(0.0);
    // relu passes gradient only where the pre-activation was positive.
    const Eigen::MatrixXd grad_hidden = grad_output * enc.params[2].transpose();
    const Eigen::MatrixXd grad_pre =
        ((pre.array() > 0.0).cast<double>() * grad_hidden.array()).matrix();

    out.param_grads.push_back(inputs.transpose() * grad_pre);
    out.param_grads.push_back(grad_pre.colwise().sum());
    out.param_grads.push_back(hidden.transpose() * grad_output);
    out.param_grads.push_back(grad_output.colwise().sum());
    out.input_grads = grad_pre * enc.params[0].transpose();
    return out;
}

void AdamConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

AdamConfig fairclip_preset() {
    AdamConfig cfg;
    cfg.beta1 = 0.1;
    cfg.beta2 = 0.1;
    return cfg;
}

OptimizerState OptimizerState::init(const AdamConfig& config,
                                    const std::vector<Eigen::MatrixXd>& params) {
    config.validate();
    OptimizerState state;
    state.config = config;
    for (const Eigen::MatrixXd& p : params) {
        state.first_moment.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
        state.second_moment.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    }
    return state;
}

void optimizer_step(std::vector<Eigen::MatrixXd>& params,
                    const std::vector<Eigen::MatrixXd>& grads, OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw ConfigError("optimizer_step: params/grads/state sizes differ");
    }
    for (std::size_t k = 0; k < grads.size(); ++k) {
        if (!grads[k].allFinite()) {
            throw NumericError("non-finite gradient in parameter " + std::to_string(k) +
                               "; halting before corrupting weights");
        }
    }

    const AdamConfig& cfg = state.config;
    state.step_count += 1;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Eigen::MatrixXd& m = state.first_moment[k];
        Eigen::MatrixXd& v = state.second_moment[k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[k];
        v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grads[k].array().square()).matrix();
        const Eigen::ArrayXXd m_hat = m.array() / bias1;
        const Eigen::ArrayXXd v_hat = v.array() / bias2;
        // Decoupled weight decay: the decay term bypasses the moments.
        params[k].array() -=
            cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon) +
                                 cfg.weight_decay * params[k].array());
    }
}

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'P'};

struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void matrix(const Eigen::MatrixXd& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
        }
    }
    void matrices(const std::vector<Eigen::MatrixXd>& ms) {
        u64(ms.size());
        for (const auto& m : ms) matrix(m);
    }
    void encoder(const EncoderParams& enc) {
        u32(enc.kind == EncoderKind::linear ? 0u : 1u);
        u32(static_cast<std::uint32_t>(enc.input_dim));
        u32(static_cast<std::uint32_t>(enc.hidden_dim));
        u32(static_cast<std::uint32_t>(enc.output_dim));
        matrices(enc.params);
    }
};

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw DataError("checkpoint payload truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    Eigen::MatrixXd matrix() {
        const auto rows = static_cast<Eigen::Index>(u64());
        const auto cols = static_cast<Eigen::Index>(u64());
        if (rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24)) {
            throw DataError("checkpoint matrix shape out of range");
        }
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
        }
        return m;
    }
    std::vector<Eigen::MatrixXd> matrices() {
        const std::uint64_t count = u64();
        if (count > 64) throw DataError("checkpoint parameter list out of range");
        std::vector<Eigen::MatrixXd> ms;
        ms.reserve(count);
        for (std::uint64_t k = 0; k < count; ++k) ms.push_back(matrix());
        return ms;
    }
    EncoderParams encoder() {
        EncoderParams enc;
        enc.kind = u32() == 0u ? EncoderKind::linear : EncoderKind::mlp1;
        enc.input_dim = static_cast<int>(u32());
        enc.hidden_dim = static_cast<int>(u32());
        enc.output_dim = static_cast<int>(u32());
        enc.params = matrices();
        return enc;
    }
};

bool matrices_equal(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].rows() != b[k].rows() || a[k].cols() != b[k].cols()) return false;
        if (std::memcmp(a[k].data(), b[k].data(),
                        sizeof(double) * static_cast<std::size_t>(a[k].size())) != 0) {
            return false;
        }
    }
    return true;
}

bool encoders_equal(const EncoderParams& a, const EncoderParams& b) {
    return a.kind == b.kind && a.input_dim == b.input_dim && a.hidden_dim == b.hidden_dim &&
           a.output_dim == b.output_dim && matrices_equal(a.params, b.params);
}

} // namespace

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
    return a.format_version == b.format_version && encoders_equal(a.image_encoder, b.image_encoder) &&
           encoders_equal(a.text_encoder, b.text_encoder) && a.config_hash == b.config_hash &&
           a.rng_state == b.rng_state && a.epoch == b.epoch &&
           a.optimizer.step_count == b.optimizer.step_count &&
           a.optimizer.config.learning_rate == b.optimizer.config.learning_rate &&
           a.optimizer.config.beta1 == b.optimizer.config.beta1 &&
           a.optimizer.config.beta2 == b.optimizer.config.beta2 &&
           a.optimizer.config.weight_decay == b.optimizer.config.weight_decay &&
           a.optimizer.config.epsilon == b.optimizer.config.epsilon &&
           matrices_equal(a.optimizer.first_moment, b.optimizer.first_moment) &&
           matrices_equal(a.optimizer.second_moment, b.optimizer.second_moment);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ByteWriter payload;
    payload.encoder(ckpt.image_encoder);
    payload.encoder(ckpt.text_encoder);
    payload.f64(ckpt.optimizer.config.learning_rate);
    payload.f64(ckpt.optimizer.config.beta1);
    payload.f64(ckpt.optimizer.config.beta2);
    payload.f64(ckpt.optimizer.config.weight_decay);
    payload.f64(ckpt.optimizer.config.epsilon);
    payload.i64(ckpt.optimizer.step_count);
    payload.matrices(ckpt.optimizer.first_moment);
    payload.matrices(ckpt.optimizer.second_moment);
    payload.u64(ckpt.config_hash);
    for (std::uint64_t word : ckpt.rng_state) payload.u64(word);
    payload.u32(static_cast<std::uint32_t>(ckpt.epoch));

    ByteWriter header;
    header.bytes.assign(kMagic, kMagic + 4);
    header.u32(ckpt.format_version);
    header.u64(payload.bytes.size());
    header.u64(fnv1a64(payload.bytes.data(), payload.bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint file for writing: " + path);
    out.write(reinterpret_cast<const char*>(header.bytes.data()),
              static_cast<std::streamsize>(header.bytes.size()));
    out.write(reinterpret_cast<const char*>(payload.bytes.data()),
              static_cast<std::streamsize>(payload.bytes.size()));
    if (!out) throw DataError("failed writing checkpoint file: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint file: " + path);
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

    if (raw.size() < 24 || std::memcmp(raw.data(), kMagic, 4) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    ByteReader head{raw, 4};
    const std::uint32_t version = head.u32();
    if (version != kCheckpointFormatVersion) {
        throw DataError("checkpoint format version " + std::to_string(version) +
                        " unsupported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
    }
    const std::uint64_t payload_size = head.u64();
    const std::uint64_t stored_checksum = head.u64();
    if (raw.size() != 24 + payload_size) {
        throw DataError("checkpoint payload truncated or padded: " + path);
    }
    const std::uint64_t actual = fnv1a64(raw.data() + 24, payload_size);
    if (actual != stored_checksum) {
        throw DataError("checkpoint payload checksum mismatch (corrupted file?): " + path);
    }

    std::vector<std::uint8_t> payload(raw.begin() + 24, raw.end());
    ByteReader r{payload, 0};
    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.image_encoder = r.encoder();
    ckpt.text_encoder = r.encoder();
    ckpt.optimizer.config.learning_rate = r.f64();
    ckpt.optimizer.config.beta1 = r.f64();
    ckpt.optimizer.config.beta2 = r.f64();
    ckpt.optimizer.config.weight_decay = r.f64();
    ckpt.optimizer.config.epsilon = r.f64();
    ckpt.optimizer.step_count = r.i64();
    ckpt.optimizer.first_moment = r.matrices();
    ckpt.optimizer.second_moment = r.matrices();
    ckpt.config_hash = r.u64();
    for (std::uint64_t& word : ckpt.rng_state) word = r.u64();
    ckpt.epoch = static_cast<std::int32_t>(r.u32());
    if (r.pos != payload.size()) throw DataError("checkpoint payload has trailing bytes: " + path);
    ckpt.image_encoder.validate();
    ckpt.text_encoder.validate();
    return ckpt;
}

} // namespace fairsinkhorn
