#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "splitquant/training.hpp"

namespace sq = splitquant;

namespace {

sq::DenseLayer identity_layer(std::size_t d) {
    std::vector<double> w(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;
    sq::DenseLayer l;
    l.weights = sq::FeatureTensor({d, d}, std::move(w));
    l.bias = sq::FeatureTensor({d}, std::vector<double>(d, 0.0));
    return l;
}

}  // namespace

TEST_CASE("straight-through rounding") {
    REQUIRE(sq::ste_round_forward(1.4) == 1.0);
    REQUIRE(sq::ste_round_forward(1.5) == 2.0);
    REQUIRE(sq::ste_round_forward(-1.5) == -2.0);
    REQUIRE(sq::ste_round_backward(0.37) == 0.37);
}

TEST_CASE("activations and their gradients") {
    REQUIRE(sq::activate(sq::Activation::Identity, -3.0) == -3.0);
    REQUIRE(sq::activate_grad(sq::Activation::Identity, -3.0) == 1.0);

    REQUIRE(sq::activate(sq::Activation::Relu, -1.0) == 0.0);
    REQUIRE(sq::activate(sq::Activation::Relu, 2.0) == 2.0);
    REQUIRE(sq::activate_grad(sq::Activation::Relu, -1.0) == 0.0);
    REQUIRE(sq::activate_grad(sq::Activation::Relu, 2.0) == 1.0);

    // Gelu(x) = x * Phi(x): Gelu(0) = 0, Gelu(1) = Phi(1), grad(0) = 1/2.
    REQUIRE(sq::activate(sq::Activation::Gelu, 0.0) == 0.0);
    REQUIRE(sq::activate(sq::Activation::Gelu, 1.0) ==
            Catch::Approx(0.8413447460685429).epsilon(1e-12));
    REQUIRE(sq::activate_grad(sq::Activation::Gelu, 0.0) == Catch::Approx(0.5));

    // Gelu gradient against central differences on a few points.
    for (double x : {-2.0, -0.7, 0.3, 1.9}) {
        const double h = 1e-6;
        const double fd = (sq::activate(sq::Activation::Gelu, x + h) -
                           sq::activate(sq::Activation::Gelu, x - h)) / (2 * h);
        REQUIRE(sq::activate_grad(sq::Activation::Gelu, x) == Catch::Approx(fd).margin(1e-8));
    }
}

TEST_CASE("layer construction and validation") {
    sq::Rng rng(3);
    auto l = sq::make_layer(3, 5, sq::Activation::Gelu, rng);
    REQUIRE(l.in_dim() == 5);
    REQUIRE(l.out_dim() == 3);
    REQUIRE(l.activation == sq::Activation::Gelu);
    const double bound = std::sqrt(6.0 / 8.0);
    for (double w : l.weights.data()) {
        REQUIRE(w >= -bound);
        REQUIRE(w <= bound);
    }
    for (double b : l.bias.data()) REQUIRE(b == 0.0);

    sq::Rng rng2(3);
    auto l2 = sq::make_layer(3, 5, sq::Activation::Gelu, rng2);
    REQUIRE(l2.weights.data() == l.weights.data());

    sq::DenseLayer bad;
    bad.weights = sq::FeatureTensor({4}, {1, 2, 3, 4});
    bad.bias = sq::FeatureTensor({4}, {0, 0, 0, 0});
    REQUIRE_THROWS_WITH(bad.validate(), "shape mismatch");
    bad.weights = sq::FeatureTensor({2, 2}, {1, 2, 3, 4});
    REQUIRE_THROWS_WITH(bad.validate(), "shape mismatch");
    bad.bias = sq::FeatureTensor({2}, {0, 0});
    REQUIRE_NOTHROW(bad.validate());
}

TEST_CASE("dense forward matches a hand trace") {
    sq::DenseLayer l;
    l.weights = sq::FeatureTensor({2, 2}, {1, 2, 3, 4});
    l.bias = sq::FeatureTensor({2}, {0.5, -0.5});
    auto out = sq::detail::layer_forward(l, {1, 1}, 1, nullptr);
    REQUIRE(out == std::vector<double>{3.5, 6.5});

    // Batch of two rows.
    auto out2 = sq::detail::layer_forward(l, {1, 0, 0, 1}, 2, nullptr);
    REQUIRE(out2 == std::vector<double>{1.5, 2.5, 2.5, 3.5});

    REQUIRE_THROWS_WITH(sq::detail::layer_forward(l, {1, 2, 3}, 1, nullptr), "shape mismatch");
}

TEST_CASE("total loss combines task and commitment terms") {
    sq::FeatureTensor pred = sq::FeatureTensor::flat({1, 2});
    sq::FeatureTensor target = sq::FeatureTensor::flat({0, 0});
    REQUIRE(sq::total_loss(pred, target, 0.0, 0.25) == Catch::Approx(2.5));
    REQUIRE(sq::total_loss(pred, target, 0.4, 0.25) == Catch::Approx(2.6));
    REQUIRE(sq::total_loss(pred, target, 0.4, 0.0) == Catch::Approx(2.5));
    REQUIRE_THROWS_WITH(sq::total_loss(pred, sq::FeatureTensor::flat({0}), 0, 0),
                        "shape mismatch");

    // Uniform logits against a one-hot target: CE = ln 2 per sample.
    sq::FeatureTensor logits({2, 2}, {0, 0, 0, 0});
    sq::FeatureTensor onehot({2, 2}, {1, 0, 0, 1});
    REQUIRE(sq::total_loss(logits, onehot, 0.0, 0.0, sq::TaskKind::Classifier) ==
            Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("forward split through identity layers equals bare quantization") {
    sq::QuantizerConfig cfg;
    cfg.levels = 5;
    std::vector<sq::DenseLayer> enc{identity_layer(4)};
    std::vector<sq::DenseLayer> dec{identity_layer(4)};
    sq::FeatureTensor x = sq::FeatureTensor::flat({0.9, -0.4, 0.1, -1.7});

    auto [y, commit] = sq::forward_split(x, enc, dec, cfg);
    auto qo = sq::quantize(sq::FeatureTensor({1, 4}, x.data()), cfg);
    REQUIRE(y.shape() == std::vector<std::size_t>{4});
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y[i] == qo.reconstructed[i]);
    REQUIRE(commit == qo.commit_loss);

    REQUIRE_THROWS_WITH(
        sq::forward_split(sq::FeatureTensor({1, 1, 4}, x.data()), enc, dec, cfg),
        "shape mismatch");
}

TEST_CASE("training config validation") {
    sq::TrainConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.learning_rate = -1.0;
    REQUIRE_THROWS_WITH(cfg.validate(), "learning rate must be >= 0");
    cfg.learning_rate = 0.1;
    cfg.batch_size = 0;
    REQUIRE_THROWS_WITH(cfg.validate(), "batch size must be positive");
    cfg.batch_size = 8;
    cfg.epochs = 0;
    REQUIRE_THROWS_WITH(cfg.validate(), "epoch count must be positive");
    cfg.epochs = 1;
    cfg.quantizer.levels = 0;
    REQUIRE_THROWS_WITH(cfg.validate(), "level count must be >= 2");
}

TEST_CASE("synthetic data generators") {
    auto d = sq::make_mixture_data(64, 4, 9);
    REQUIRE(d.inputs.shape() == std::vector<std::size_t>{64, 4});
    REQUIRE(d.targets.data() == d.inputs.data());
    auto d2 = sq::make_mixture_data(64, 4, 9);
    REQUIRE(d2.inputs.data() == d.inputs.data());
    auto d3 = sq::make_mixture_data(64, 4, 10);
    REQUIRE(d3.inputs.data() != d.inputs.data());
    REQUIRE_THROWS_WITH(sq::make_mixture_data(0, 4, 0), "empty input");
    REQUIRE_THROWS_WITH(sq::make_mixture_data(4, 1, 0), "dim must be >= 2");

    auto arcs = sq::make_two_arcs(32, 1);
    REQUIRE(arcs.inputs.shape() == std::vector<std::size_t>{32, 2});
    REQUIRE(arcs.targets.shape() == std::vector<std::size_t>{32, 2});
    for (std::size_t s = 0; s < 32; ++s) {
        const double a = arcs.targets[s * 2];
        const double b = arcs.targets[s * 2 + 1];
        REQUIRE(a + b == 1.0);
        REQUIRE(a * b == 0.0);
    }
    REQUIRE_THROWS_WITH(sq::make_two_arcs(0, 1), "empty input");
}

TEST_CASE("training is deterministic under the seed") {
    auto data = sq::make_mixture_data(64, 4, 5);
    sq::TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 5;

    auto run = [&]() {
        sq::Rng init(42);
        std::vector<sq::DenseLayer> enc{sq::make_layer(2, 4, sq::Activation::Identity, init)};
        std::vector<sq::DenseLayer> dec{sq::make_layer(4, 2, sq::Activation::Identity, init)};
        return sq::train(data, std::move(enc), std::move(dec), cfg);
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.loss_history == r2.loss_history);
    REQUIRE(r1.task_history == r2.task_history);
    REQUIRE(r1.commit_history == r2.commit_history);
    REQUIRE(r1.enc[0].weights.data() == r2.enc[0].weights.data());
    REQUIRE(r1.dec[0].weights.data() == r2.dec[0].weights.data());
    REQUIRE(r1.loss_history.size() == 5);
}

TEST_CASE("zero learning rate with one full batch freezes the loss") {
    auto data = sq::make_mixture_data(48, 4, 3);
    sq::TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.batch_size = 48;
    cfg.epochs = 4;

    sq::Rng init(8);
    std::vector<sq::DenseLayer> enc{sq::make_layer(2, 4, sq::Activation::Identity, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(4, 2, sq::Activation::Identity, init)};
    auto r = sq::train(data, std::move(enc), std::move(dec), cfg);
    // The per-epoch shuffle reorders the summation inside the batch, so the
    // frozen loss is only reproduced up to floating-point accumulation order.
    for (double v : r.loss_history)
        REQUIRE(v == Catch::Approx(r.loss_history.front()).epsilon(1e-12));
    for (double v : r.task_history)
        REQUIRE(v == Catch::Approx(r.task_history.front()).epsilon(1e-12));
}

TEST_CASE("autoencoder training reduces the loss") {
    auto data = sq::make_mixture_data(128, 4, 1);
    sq::TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 1;

    sq::Rng init(sq::mix_seed(1, 0x696e6974ULL));
    std::vector<sq::DenseLayer> enc{sq::make_layer(2, 4, sq::Activation::Identity, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(4, 2, sq::Activation::Identity, init)};
    auto r = sq::train(data, std::move(enc), std::move(dec), cfg);
    REQUIRE(r.loss_history.back() < 0.5 * r.loss_history.front());
    REQUIRE(r.task_history.back() < r.task_history.front());
}

TEST_CASE("classifier training reduces the cross entropy") {
    auto data = sq::make_two_arcs(128, 2);
    sq::TrainConfig cfg;
    cfg.task = sq::TaskKind::Classifier;
    cfg.epochs = 25;
    cfg.seed = 2;
    cfg.quantizer.levels = 8;

    sq::Rng init(7);
    std::vector<sq::DenseLayer> enc{sq::make_layer(8, 2, sq::Activation::Gelu, init),
                                    sq::make_layer(2, 8, sq::Activation::Identity, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(8, 2, sq::Activation::Gelu, init),
                                    sq::make_layer(2, 8, sq::Activation::Identity, init)};
    auto r = sq::train(data, std::move(enc), std::move(dec), cfg);
    REQUIRE(r.task_history.back() < 0.75 * r.task_history.front());
}

TEST_CASE("diverging loss is reported with the epoch") {
    auto data = sq::make_mixture_data(32, 4, 0);
    sq::TrainConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.use_quantizer = false;
    cfg.epochs = 50;

    sq::Rng init(0);
    std::vector<sq::DenseLayer> enc{sq::make_layer(2, 4, sq::Activation::Identity, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(4, 2, sq::Activation::Identity, init)};
    REQUIRE_THROWS_MATCHES(sq::train(data, std::move(enc), std::move(dec), cfg),
                           std::runtime_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::StartsWith("loss diverged at epoch")));
}

TEST_CASE("gradient check passes for every scaling and commitment pairing") {
    for (auto scaling : {sq::ScalingMode::ClippedLinearScaling, sq::ScalingMode::TanhScaling}) {
        for (auto form : {sq::CommitmentForm::CosineForm, sq::CommitmentForm::SquaredForm}) {
            sq::TrainConfig cfg;
            cfg.quantizer.scaling = scaling;
            cfg.quantizer.commitment = form;
            cfg.seed = 12;

            sq::Rng init(12);
            std::vector<sq::DenseLayer> enc{sq::make_layer(3, 4, sq::Activation::Gelu, init)};
            std::vector<sq::DenseLayer> dec{sq::make_layer(4, 3, sq::Activation::Identity, init)};
            auto rep = sq::grad_check(std::move(enc), std::move(dec), cfg, 1e-4);
            INFO("scaling=" << static_cast<int>(scaling) << " form=" << static_cast<int>(form));
            REQUIRE(rep.max_rel_error < 1e-3);
            REQUIRE(rep.parameter_count == (12 + 3) + (12 + 4));
            REQUIRE(rep.perturbation == 1e-4);
        }
    }
}

TEST_CASE("gradient check for the classifier head") {
    sq::TrainConfig cfg;
    cfg.task = sq::TaskKind::Classifier;
    cfg.seed = 4;
    sq::Rng init(4);
    std::vector<sq::DenseLayer> enc{sq::make_layer(3, 2, sq::Activation::Gelu, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(2, 3, sq::Activation::Identity, init)};
    auto rep = sq::grad_check(std::move(enc), std::move(dec), cfg, 1e-4);
    REQUIRE(rep.max_rel_error < 1e-3);
}

TEST_CASE("gradient check validates the perturbation range") {
    sq::TrainConfig cfg;
    sq::Rng init(1);
    std::vector<sq::DenseLayer> enc{sq::make_layer(2, 2, sq::Activation::Identity, init)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(2, 2, sq::Activation::Identity, init)};
    REQUIRE_THROWS_WITH(sq::grad_check(enc, dec, cfg, 1e-7), "perturbation out of range");
    REQUIRE_THROWS_WITH(sq::grad_check(enc, dec, cfg, 0.1), "perturbation out of range");
    REQUIRE_THROWS_WITH(sq::grad_check({}, dec, cfg, 1e-4), "empty input");
}

TEST_CASE("model save/load round-trips at 32-bit precision") {
    const std::string path = "/tmp/splitquant_test_model.bin";
    sq::Rng rng(99);
    std::vector<sq::DenseLayer> enc{sq::make_layer(3, 4, sq::Activation::Gelu, rng),
                                    sq::make_layer(2, 3, sq::Activation::Identity, rng)};
    std::vector<sq::DenseLayer> dec{sq::make_layer(4, 2, sq::Activation::Relu, rng)};
    sq::save_model(path, enc, dec);

    auto [enc2, dec2] = sq::load_model(path);
    REQUIRE(enc2.size() == 2);
    REQUIRE(dec2.size() == 1);
    REQUIRE(enc2[0].activation == sq::Activation::Gelu);
    REQUIRE(enc2[1].activation == sq::Activation::Identity);
    REQUIRE(dec2[0].activation == sq::Activation::Relu);
    for (std::size_t li = 0; li < enc.size(); ++li) {
        REQUIRE(enc2[li].weights.shape() == enc[li].weights.shape());
        for (std::size_t i = 0; i < enc[li].weights.size(); ++i)
            REQUIRE(enc2[li].weights[i] ==
                    static_cast<double>(static_cast<float>(enc[li].weights[i])));
    }
    std::remove(path.c_str());
}

TEST_CASE("model loading rejects malformed files") {
    REQUIRE_THROWS_WITH(sq::load_model("/nonexistent/model.bin"),
                        "cannot open file: /nonexistent/model.bin");

    const std::string path = "/tmp/splitquant_bad_model.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os.write("\x41", 1);
    }
    REQUIRE_THROWS_WITH(sq::load_model(path), "truncated payload");

    {
        std::ofstream os(path, std::ios::binary);
        const unsigned char count65[4] = {65, 0, 0, 0};
        os.write(reinterpret_cast<const char*>(count65), 4);
    }
    REQUIRE_THROWS_WITH(sq::load_model(path), "layer count out of range");

    {
        std::ofstream os(path, std::ios::binary);
        const unsigned char one[4] = {1, 0, 0, 0};
        const unsigned char act7[4] = {7, 0, 0, 0};
        os.write(reinterpret_cast<const char*>(one), 4);
        os.write(reinterpret_cast<const char*>(act7), 4);
    }
    REQUIRE_THROWS_WITH(sq::load_model(path), "unknown activation");
    std::remove(path.c_str());
}
