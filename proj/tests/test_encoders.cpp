#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fairsinkhorn/contrastive.hpp"
#include "fairsinkhorn/encoders.hpp"
#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/rng.hpp"
#include "helpers.hpp"

using namespace fairsinkhorn;
using fairsinkhorn::testing::random_matrix;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "fairsinkhorn_test_encoders";
    fs::create_directories(dir);
    return dir;
}

EncoderParams linear_identity(int dim) {
    EncoderParams enc;
    enc.kind = EncoderKind::linear;
    enc.input_dim = dim;
    enc.output_dim = dim;
    enc.params = {Eigen::MatrixXd::Identity(dim, dim), Eigen::MatrixXd::Zero(1, dim)};
    return enc;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Checkpoint sample_checkpoint(Rng& rng) {
    Checkpoint ckpt;
    ckpt.image_encoder = EncoderParams::init(EncoderKind::mlp1, 5, 7, 3, rng);
    ckpt.text_encoder = EncoderParams::init(EncoderKind::linear, 4, 0, 3, rng);
    std::vector<Eigen::MatrixXd> all = ckpt.image_encoder.params;
    all.insert(all.end(), ckpt.text_encoder.params.begin(), ckpt.text_encoder.params.end());
    ckpt.optimizer = OptimizerState::init(AdamConfig{}, all);
    ckpt.optimizer.step_count = 42;
    for (auto& m : ckpt.optimizer.first_moment) m.setConstant(0.25);
    for (auto& m : ckpt.optimizer.second_moment) m.setConstant(0.5);
    ckpt.config_hash = 0x123456789abcdef0ull;
    ckpt.rng_state = {1, 2, 3, 4, 5, 6};
    ckpt.epoch = 9;
    return ckpt;
}

} // namespace

TEST_CASE("encoder kind names round trip") {
    CHECK(to_string(EncoderKind::linear) == "linear");
    CHECK(to_string(EncoderKind::mlp1) == "mlp1");
    CHECK(encoder_kind_from_string("linear") == EncoderKind::linear);
    CHECK(encoder_kind_from_string("mlp1") == EncoderKind::mlp1);
    CHECK_THROWS_AS(encoder_kind_from_string("transformer"), ConfigError);
}

TEST_CASE("linear identity forward returns its input") {
    Rng rng(201);
    const auto enc = linear_identity(4);
    const Eigen::MatrixXd x = random_matrix(rng, 6, 4);
    CHECK((forward(enc, x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dead relu collapses mlp1 output to the output bias") {
    EncoderParams enc;
    enc.kind = EncoderKind::mlp1;
    enc.input_dim = 3;
    enc.hidden_dim = 4;
    enc.output_dim = 2;
    Rng rng(203);
    enc.params = {Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Constant(1, 4, -5.0),
                  random_matrix(rng, 4, 2), // any W2; relu output is zero anyway
                  (Eigen::MatrixXd(1, 2) << 1.5, -2.5).finished()};
    const Eigen::MatrixXd x = random_matrix(rng, 5, 3);
    const Eigen::MatrixXd y = forward(enc, x);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        CHECK(y(i, 0) == 1.5);
        CHECK(y(i, 1) == -2.5);
    }
}

TEST_CASE("forward matches a scalar-loop oracle") {
    Rng rng(207);
    for (int trial = 0; trial < 10; ++trial) {
        const auto enc = EncoderParams::init(EncoderKind::mlp1, 4, 6, 3, rng);
        const Eigen::MatrixXd x = random_matrix(rng, 5, 4);
        const Eigen::MatrixXd y = forward(enc, x);
        for (Eigen::Index r = 0; r < 5; ++r) {
            std::vector<double> hidden(6, 0.0);
            for (int hcol = 0; hcol < 6; ++hcol) {
                double acc = enc.params[1](0, hcol);
                for (int c = 0; c < 4; ++c) acc += x(r, c) * enc.params[0](c, hcol);
                hidden[static_cast<std::size_t>(hcol)] = acc > 0.0 ? acc : 0.0;
            }
            for (int o = 0; o < 3; ++o) {
                double acc = enc.params[3](0, o);
                for (int hcol = 0; hcol < 6; ++hcol)
                    acc += hidden[static_cast<std::size_t>(hcol)] * enc.params[2](hcol, o);
                CHECK(std::abs(y(r, o) - acc) < 1e-12);
            }
        }
    }
}

TEST_CASE("forward rejects mismatched input width") {
    Rng rng(209);
    const auto enc = EncoderParams::init(EncoderKind::linear, 4, 0, 3, rng);
    CHECK_THROWS_AS(forward(enc, random_matrix(rng, 2, 5)), DataError);
}

TEST_CASE("zero upstream gradient produces zero gradients") {
    Rng rng(211);
    const auto enc = EncoderParams::init(EncoderKind::mlp1, 3, 5, 2, rng);
    const Eigen::MatrixXd x = random_matrix(rng, 4, 3);
    const auto back = backward(enc, x, Eigen::MatrixXd::Zero(4, 2));
    for (const auto& g : back.param_grads) CHECK(g.isZero(0.0));
    CHECK(back.input_grads.isZero(0.0));
}

TEST_CASE("scalar linear gradient is input times upstream slope") {
    EncoderParams enc = linear_identity(1);
    enc.params[0](0, 0) = 0.7;
    enc.params[1](0, 0) = 0.1;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 3.0);
    const Eigen::MatrixXd g = Eigen::MatrixXd::Constant(1, 1, 2.0);
    const auto back = backward(enc, x, g);
    CHECK(back.param_grads[0](0, 0) == doctest::Approx(6.0).epsilon(1e-12)); // dW = x * g
    CHECK(back.param_grads[1](0, 0) == doctest::Approx(2.0).epsilon(1e-12)); // db = g
    CHECK(back.input_grads(0, 0) == doctest::Approx(1.4).epsilon(1e-12));    // dx = W * g
}

TEST_CASE("mlp1 backward matches central finite differences") {
    Rng rng(213);
    int instances = 0;
    while (instances < 20) {
        const auto enc = EncoderParams::init(EncoderKind::mlp1, 3, 4, 2, rng);
        const Eigen::MatrixXd x = random_matrix(rng, 5, 3);

        // relu is not differentiable at zero pre-activation; resample
        // instances whose hidden units sit near the kink.
        const Eigen::MatrixXd preact =
            (x * enc.params[0]).rowwise() + enc.params[1].row(0);
        if (preact.cwiseAbs().minCoeff() < 1e-3) continue;
        ++instances;

        const Eigen::MatrixXd g = random_matrix(rng, 5, 2);
        const auto objective = [&](const EncoderParams& e, const Eigen::MatrixXd& inputs) {
            return (forward(e, inputs).array() * g.array()).sum();
        };
        const auto back = backward(enc, x, g);
        const double h = 1e-5;
        const auto check = [&](double analytic, double fd) {
            CHECK(std::abs(analytic - fd) <= 1e-5 * std::max({std::abs(fd), std::abs(analytic), 1e-3}));
        };
        for (std::size_t k = 0; k < enc.params.size(); ++k) {
            for (Eigen::Index r = 0; r < enc.params[k].rows(); ++r) {
                for (Eigen::Index c = 0; c < enc.params[k].cols(); ++c) {
                    auto plus = enc, minus = enc;
                    plus.params[k](r, c) += h;
                    minus.params[k](r, c) -= h;
                    check(back.param_grads[k](r, c),
                          (objective(plus, x) - objective(minus, x)) / (2 * h));
                }
            }
        }
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                Eigen::MatrixXd plus = x, minus = x;
                plus(r, c) += h;
                minus(r, c) -= h;
                check(back.input_grads(r, c), (objective(enc, plus) - objective(enc, minus)) / (2 * h));
            }
        }
    }
}

TEST_CASE("init draws inside the fan-in bound, deterministically") {
    Rng rng_a(215), rng_b(215);
    const auto a = EncoderParams::init(EncoderKind::mlp1, 9, 16, 4, rng_a);
    const auto b = EncoderParams::init(EncoderKind::mlp1, 9, 16, 4, rng_b);
    REQUIRE(a.params.size() == 4);
    CHECK(a.params[0].rows() == 9);
    CHECK(a.params[2].rows() == 16);
    CHECK(a.params[0].cwiseAbs().maxCoeff() <= 1.0 / 3.0);  // 1/sqrt(9)
    CHECK(a.params[2].cwiseAbs().maxCoeff() <= 1.0 / 4.0);  // 1/sqrt(16)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.params[k] == b.params[k]);

    Rng rng_c(216);
    const auto c = EncoderParams::init(EncoderKind::mlp1, 9, 16, 4, rng_c);
    CHECK(a.params[0] != c.params[0]);
}

TEST_CASE("adam config validation and the published preset") {
    AdamConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.learning_rate == 1e-5);
    CHECK(cfg.weight_decay == 6e-5);

    const AdamConfig preset = fairclip_preset();
    CHECK(preset.beta1 == 0.1);
    CHECK(preset.beta2 == 0.1);
    CHECK(preset.learning_rate == 1e-5);
    CHECK(preset.weight_decay == 6e-5);

    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = AdamConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero gradients with zero decay leave parameters untouched") {
    Rng rng(217);
    std::vector<Eigen::MatrixXd> params = {random_matrix(rng, 3, 2), random_matrix(rng, 1, 2)};
    const auto snapshot = params;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState::init(cfg, params);
    std::vector<Eigen::MatrixXd> zeros = {Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(1, 2)};
    optimizer_step(params, zeros, state);
    CHECK(params[0] == snapshot[0]);
    CHECK(params[1] == snapshot[1]);
    CHECK(state.step_count == 1);
    CHECK(state.first_moment[0].isZero(0.0));
    CHECK(state.second_moment[0].isZero(0.0));
}

TEST_CASE("one adam step matches the hand-computed update") {
    // Fresh state, one step: m_hat = g, v_hat = g^2, so the update is
    // -lr * (g / (|g| + eps) + wd * p) applied element-wise.
    std::vector<Eigen::MatrixXd> params = {
        (Eigen::MatrixXd(1, 3) << 1.0, -2.0, 0.5).finished()};
    const std::vector<Eigen::MatrixXd> grads = {
        (Eigen::MatrixXd(1, 3) << 0.3, -0.04, 2.0).finished()};
    AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.weight_decay = 1e-2;
    auto state = OptimizerState::init(cfg, params);
    optimizer_step(params, grads, state);
    for (Eigen::Index c = 0; c < 3; ++c) {
        const double g = grads[0](0, c);
        const double p0 = c == 0 ? 1.0 : (c == 1 ? -2.0 : 0.5);
        const double expected =
            p0 - cfg.learning_rate * (g / (std::abs(g) + cfg.epsilon) + cfg.weight_decay * p0);
        CHECK(params[0](0, c) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(state.first_moment[0](0, c) == doctest::Approx((1 - cfg.beta1) * g).epsilon(1e-12));
        CHECK(state.second_moment[0](0, c) ==
              doctest::Approx((1 - cfg.beta2) * g * g).epsilon(1e-12));
    }
    CHECK(state.step_count == 1);
}

TEST_CASE("a hundred optimizer steps are bit-identical across reruns") {
    const auto run = [] {
        Rng rng(219);
        std::vector<Eigen::MatrixXd> params = {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)};
        auto state = OptimizerState::init(AdamConfig{}, params);
        for (int step = 0; step < 100; ++step) {
            std::vector<Eigen::MatrixXd> grads = {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)};
            optimizer_step(params, grads, state);
        }
        return params;
    };
    const auto a = run(), b = run();
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
}

TEST_CASE("non-finite gradients halt the optimizer") {
    Rng rng(221);
    std::vector<Eigen::MatrixXd> params = {random_matrix(rng, 2, 2)};
    auto state = OptimizerState::init(AdamConfig{}, params);
    std::vector<Eigen::MatrixXd> grads = {random_matrix(rng, 2, 2)};
    grads[0](1, 1) = std::numeric_limits<double>::quiet_NaN();
    const auto snapshot = params;
    CHECK_THROWS_AS(optimizer_step(params, grads, state), NumericError);
    CHECK(params[0] == snapshot[0]); // rejected before any mutation
    CHECK(state.step_count == 0);
}

TEST_CASE("checkpoints round trip value-exact") {
    Rng rng(223);
    const Checkpoint ckpt = sample_checkpoint(rng);
    const auto path = (temp_dir() / "model.bin").string();
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(checkpoints_equal(ckpt, loaded));
    CHECK(loaded.config_hash == ckpt.config_hash);
    CHECK(loaded.rng_state == ckpt.rng_state);
    CHECK(loaded.epoch == 9);
    CHECK(loaded.optimizer.step_count == 42);
    CHECK(loaded.image_encoder.params[0] == ckpt.image_encoder.params[0]);
}

TEST_CASE("checkpoint loading rejects tampered files") {
    const fs::path dir = temp_dir();
    Rng rng(225);
    const Checkpoint ckpt = sample_checkpoint(rng);
    const auto path = (dir / "model.bin").string();
    save_checkpoint(ckpt, path);
    const auto original = read_bytes(dir / "model.bin");
    REQUIRE(original.size() > 64);

    const auto expect_reject = [&](std::vector<std::uint8_t> bytes, const std::string& needle) {
        const auto bad = dir / "bad.bin";
        write_bytes(bad, bytes);
        try {
            load_checkpoint(bad.string());
            FAIL(("expected a DataError mentioning '" + needle + "'").c_str());
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    SUBCASE("bad magic") {
        auto bytes = original;
        bytes[0] = 'X';
        expect_reject(bytes, "magic");
    }
    SUBCASE("future format version") {
        auto bytes = original;
        bytes[4] = 0xEE; // little-endian low byte of the u32 version
        expect_reject(bytes, "version");
    }
    SUBCASE("truncation") {
        auto bytes = original;
        bytes.resize(bytes.size() - 5);
        expect_reject(bytes, "truncated");
    }
    SUBCASE("trailing bytes") {
        auto bytes = original;
        bytes.push_back(0);
        bytes.push_back(0);
        expect_reject(bytes, "truncated or padded");
    }
    SUBCASE("flipped payload byte") {
        auto bytes = original;
        bytes[bytes.size() - 3] ^= 0x40;
        expect_reject(bytes, "checksum");
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint((dir / "absent.bin").string()), DataError);
    }
}

TEST_CASE("two separable pairs train to a tiny contrastive loss") {
    // Smoke convergence: a linear dual encoder over two orthogonal pairs
    // should saturate the contrastive objective quickly at lr 1e-2.
    Rng rng(227);
    auto image_enc = EncoderParams::init(EncoderKind::linear, 2, 0, 2, rng);
    auto text_enc = EncoderParams::init(EncoderKind::linear, 2, 0, 2, rng);
    Eigen::MatrixXd image_feat(2, 2), text_feat(2, 2);
    image_feat << 1.0, 0.0, 0.0, 1.0;
    text_feat << 1.0, 0.1, 0.1, 1.0;

    AdamConfig adam;
    adam.learning_rate = 1e-2;
    std::vector<Eigen::MatrixXd> all = image_enc.params;
    all.insert(all.end(), text_enc.params.begin(), text_enc.params.end());
    auto state = OptimizerState::init(adam, all);

    FairClipConfig fair;
    fair.attribute_name = "group";
    fair.lambda_fair = 0.0;

    double loss = 0.0;
    int steps_taken = 0;
    for (int step = 0; step < 500; ++step) {
        EmbeddingBatch batch;
        batch.image_embeddings = forward(image_enc, image_feat);
        batch.text_embeddings = forward(text_enc, text_feat);
        const auto res = fairclip_loss(batch, {}, fair, 0.07);
        loss = res.loss;
        ++steps_taken;
        if (loss < 0.01) break;

        const auto img_back = backward(image_enc, image_feat, res.main.image);
        const auto txt_back = backward(text_enc, text_feat, res.main.text);
        std::vector<Eigen::MatrixXd> params = image_enc.params;
        params.insert(params.end(), text_enc.params.begin(), text_enc.params.end());
        std::vector<Eigen::MatrixXd> grads = img_back.param_grads;
        grads.insert(grads.end(), txt_back.param_grads.begin(), txt_back.param_grads.end());
        optimizer_step(params, grads, state);
        image_enc.params = {params[0], params[1]};
        text_enc.params = {params[2], params[3]};
    }
    CHECK(loss < 0.01);
    CHECK(steps_taken <= 500);
}
