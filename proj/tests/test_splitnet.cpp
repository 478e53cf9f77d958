#include <catch2/catch_amalgamated.hpp>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include "splitquant/splitnet.hpp"

namespace sq = splitquant;

namespace {

std::vector<sq::DenseLayer> tiny_decoder() {
    sq::Rng rng(77);
    std::vector<sq::DenseLayer> dec;
    dec.push_back(sq::make_layer(3, 4, sq::Activation::Identity, rng));
    return dec;
}

std::vector<sq::DenseLayer> tiny_encoder() {
    sq::Rng rng(78);
    std::vector<sq::DenseLayer> enc;
    enc.push_back(sq::make_layer(4, 5, sq::Activation::Gelu, rng));
    return enc;
}

sq::SessionConfig base_config() {
    sq::SessionConfig cfg;
    cfg.quantizer.levels = 4;
    return cfg;
}

std::vector<std::uint8_t> hello_frame(std::uint32_t levels, std::vector<std::uint32_t> shape,
                                      std::uint8_t version = sq::kWireVersion) {
    sq::HelloBody h;
    h.protocol_version = version;
    h.levels = levels;
    h.shape = std::move(shape);
    return sq::encode_frame(sq::WireFrame::hello(std::move(h)));
}

// Returns by value: callers pass freshly decoded temporary frames, and a
// reference into one would dangle once the full expression ends.
sq::ErrorBody expect_error(const sq::WireFrame& f) {
    REQUIRE(f.type == sq::FrameType::Error);
    return std::get<sq::ErrorBody>(f.body);
}

}  // namespace

TEST_CASE("session accepts hello and echoes the contract") {
    sq::ServerSession session(base_config(), tiny_decoder());
    REQUIRE_FALSE(session.hello_done());
    auto reply = sq::decode_frame(session.handle(hello_frame(4, {2, 4})));
    REQUIRE(reply.type == sq::FrameType::Hello);
    const auto& ack = std::get<sq::HelloBody>(reply.body);
    REQUIRE(ack.levels == 4);
    REQUIRE(ack.shape == std::vector<std::uint32_t>{2, 4});
    REQUIRE(session.hello_done());

    auto dup = sq::decode_frame(session.handle(hello_frame(4, {2, 4})));
    const auto& e = expect_error(dup);
    REQUIRE(e.code == sq::kErrProtocol);
    REQUIRE(e.message == "duplicate hello");
}

TEST_CASE("session rejects contract violations in hello") {
    auto run = [](std::vector<std::uint8_t> frame) {
        sq::ServerSession session(base_config(), tiny_decoder());
        return sq::decode_frame(session.handle(frame));
    };

    const auto& wrong_k = expect_error(run(hello_frame(8, {2, 4})));
    REQUIRE(wrong_k.code == sq::kErrConfig);
    REQUIRE(wrong_k.message == "level count mismatch");

    // Decoder expects 4 input features.
    const auto& wrong_dim = expect_error(run(hello_frame(4, {2, 5})));
    REQUIRE(wrong_dim.code == sq::kErrConfig);
    REQUIRE(wrong_dim.message == "shape contract mismatch");

    const auto& bad_version = expect_error(run(hello_frame(4, {2, 4}, 9)));
    REQUIRE(bad_version.code == sq::kErrVersion);

    sq::SessionConfig pinned = base_config();
    pinned.expected_shape = {1, 4};
    sq::ServerSession session(pinned, tiny_decoder());
    const auto& shape_pin = expect_error(sq::decode_frame(session.handle(hello_frame(4, {2, 4}))));
    REQUIRE(shape_pin.code == sq::kErrConfig);
}

TEST_CASE("session rejects frames before hello and malformed bytes") {
    sq::ServerSession session(base_config(), tiny_decoder());

    sq::FeaturesBody ft;
    ft.request_id = 1;
    ft.levels = 4;
    ft.shape = {1, 4};
    const std::uint32_t idx[] = {0, 1, 2, 3};
    ft.packed = sq::pack(idx, 2);
    const auto& early = expect_error(
        sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::features(ft)))));
    REQUIRE(early.code == sq::kErrProtocol);
    REQUIRE(early.message == "hello required");

    const std::uint8_t noise[] = {1, 2, 3};
    const auto& garbage = expect_error(sq::decode_frame(session.handle(noise)));
    REQUIRE(garbage.code == sq::kErrProtocol);

    auto versioned = hello_frame(4, {1, 4});
    versioned[2] = 3;
    const auto& badv = expect_error(sq::decode_frame(session.handle(versioned)));
    REQUIRE(badv.code == sq::kErrVersion);
    REQUIRE(badv.message == "unsupported version");
}

TEST_CASE("session handles features end to end and flags corruption") {
    sq::ServerSession session(base_config(), tiny_decoder());
    session.handle(hello_frame(4, {1, 4}));

    sq::FeaturesBody ft;
    ft.request_id = 9;
    ft.levels = 4;
    ft.shape = {1, 4};
    const std::uint32_t idx[] = {0, 1, 2, 3};
    ft.packed = sq::pack(idx, 2);
    auto reply = sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::features(ft))));
    REQUIRE(reply.type == sq::FrameType::Response);
    const auto& rsp = std::get<sq::ResponseBody>(reply.body);
    REQUIRE(rsp.request_id == 9);
    REQUIRE(rsp.tensor.shape() == std::vector<std::size_t>{1, 3});

    // Direct decoder run over the reconstructed lattice must agree exactly.
    sq::QuantizedBlock block;
    block.levels = 4;
    block.shape = {1, 4};
    block.indices = {0, 1, 2, 3};
    auto features = sq::reconstruct(block);
    auto dec = tiny_decoder();
    auto expect = sq::detail::layer_forward(dec[0], features.data(), 1, nullptr);
    for (std::size_t i = 0; i < expect.size(); ++i) REQUIRE(rsp.tensor[i] == expect[i]);

    // Wrong K after the handshake.
    sq::FeaturesBody wrong = ft;
    wrong.levels = 8;
    wrong.packed = sq::pack(idx, 3);
    const auto& ek = expect_error(
        sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::features(wrong)))));
    REQUIRE(ek.code == sq::kErrConfig);

    // Wrong bit width for the session K.
    sq::FeaturesBody badbw = ft;
    badbw.packed = sq::pack(idx, 3);
    const auto& ebw = expect_error(
        sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::features(badbw)))));
    REQUIRE(ebw.code == sq::kErrProtocol);
    REQUIRE(ebw.message == "bit width mismatch");

    // Indices out of the K range: 2-bit code can carry 0..3, but K=3 session
    // must reject 3.
    sq::SessionConfig k3 = base_config();
    k3.quantizer.levels = 3;
    sq::ServerSession s3(k3, tiny_decoder());
    s3.handle(hello_frame(3, {1, 4}));
    sq::FeaturesBody corrupt;
    corrupt.request_id = 1;
    corrupt.levels = 3;
    corrupt.shape = {1, 4};
    const std::uint32_t bad_idx[] = {0, 1, 2, 3};
    corrupt.packed = sq::pack(bad_idx, 2);
    const auto& ec = expect_error(
        sq::decode_frame(s3.handle(sq::encode_frame(sq::WireFrame::features(corrupt)))));
    REQUIRE(ec.code == sq::kErrCorrupt);
    REQUIRE(ec.message == "corrupt block");
}

TEST_CASE("session serves the sparse baseline path") {
    sq::ServerSession session(base_config(), tiny_decoder());
    session.handle(hello_frame(4, {2, 4}));

    sq::TopKBody body;
    body.request_id = 3;
    body.rows = 2;
    body.dims = 4;
    body.k = 1;
    body.entries = {{2, sq::float_to_half(1.5f)}, {0, sq::float_to_half(-0.5f)}};
    auto reply = sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::topk(body))));
    REQUIRE(reply.type == sq::FrameType::Response);
    const auto& rsp = std::get<sq::ResponseBody>(reply.body);
    REQUIRE(rsp.tensor.shape() == std::vector<std::size_t>{2, 3});

    sq::FeatureTensor dense({2, 4}, {0, 0, 1.5, 0, -0.5, 0, 0, 0});
    auto dec = tiny_decoder();
    auto expect = sq::detail::layer_forward(dec[0], dense.data(), 2, nullptr);
    for (std::size_t i = 0; i < expect.size(); ++i) REQUIRE(rsp.tensor[i] == expect[i]);

    sq::TopKBody bad = body;
    bad.entries[0].index = 4;
    const auto& e = expect_error(
        sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::topk(bad)))));
    REQUIRE(e.code == sq::kErrCorrupt);

    sq::TopKBody misrows = body;
    misrows.rows = 3;
    misrows.entries.push_back({0, 0});
    const auto& e2 = expect_error(
        sq::decode_frame(session.handle(sq::encode_frame(sq::WireFrame::topk(misrows)))));
    REQUIRE(e2.code == sq::kErrConfig);
}

TEST_CASE("loopback inference matches the in-process split forward exactly") {
    auto enc = tiny_encoder();
    auto dec = tiny_decoder();
    sq::SessionConfig cfg = base_config();

    sq::FeatureTensor x({2, 5}, {0.1, -0.8, 1.3, 0.4, -0.2, 0.9, 0.0, -1.1, 0.6, 0.3});
    auto [direct, commit] = sq::forward_split(x, enc, dec, cfg.quantizer);

    sq::Client client(cfg, enc, dec);
    auto [result, log] = client.infer(x);
    REQUIRE(result.same_shape(direct));
    for (std::size_t i = 0; i < result.size(); ++i) REQUIRE(result[i] == direct[i]);

    REQUIRE(log.frames_sent == 2);
    REQUIRE(log.raw_fp16_bytes == 2 * 2 * 4);
    REQUIRE(log.payload_bytes > 0);
    REQUIRE(log.achieved_ratio ==
            static_cast<double>(log.raw_fp16_bytes) / static_cast<double>(log.payload_bytes));

    // Second call reuses the session: one more frame only.
    auto [result2, log2] = client.infer(x);
    REQUIRE(log2.frames_sent == 3);
    for (std::size_t i = 0; i < result2.size(); ++i) REQUIRE(result2[i] == direct[i]);

    // Changing the batch shape mid-session violates the negotiated contract.
    sq::FeatureTensor other({1, 5}, {1, 2, 3, 4, 5});
    REQUIRE_THROWS_WITH(client.infer(other), "shape contract mismatch");
}

TEST_CASE("rank-1 inputs come back rank-1") {
    auto enc = tiny_encoder();
    auto dec = tiny_decoder();
    sq::Client client(base_config(), enc, dec);
    sq::FeatureTensor x = sq::FeatureTensor::flat({0.5, -0.5, 0.25, 1.0, -1.0});
    auto [result, log] = client.infer(x);
    REQUIRE(result.shape() == std::vector<std::size_t>{3});
}

TEST_CASE("wire tap sees the handshake then the features frame") {
    auto enc = tiny_encoder();
    auto dec = tiny_decoder();
    sq::Client client(base_config(), enc, dec);
    std::vector<std::vector<std::uint8_t>> frames;
    client.set_wire_tap([&](const std::vector<std::uint8_t>& f) { frames.push_back(f); });
    client.infer(sq::FeatureTensor::flat({1, 2, 3, 4, 5}));
    REQUIRE(frames.size() == 2);
    REQUIRE(frames[0][3] == static_cast<std::uint8_t>(sq::FrameType::Hello));
    REQUIRE(frames[1][3] == static_cast<std::uint8_t>(sq::FrameType::Features));
    for (const auto& f : frames) {
        REQUIRE(f[0] == sq::kWireMagic0);
        REQUIRE(f[1] == sq::kWireMagic1);
    }
}

TEST_CASE("client constructor transport checks") {
    sq::SessionConfig cfg = base_config();
    REQUIRE_THROWS_WITH(sq::Client(cfg, tiny_encoder()), "loopback client needs a decoder");
    cfg.transport = sq::TransportKind::Tcp;
    REQUIRE_THROWS_WITH(sq::Client(cfg, tiny_encoder(), tiny_decoder()),
                        "decoder is only used by loopback clients");
}

TEST_CASE("tcp inference is byte-identical to loopback") {
    auto enc = tiny_encoder();
    auto dec = tiny_decoder();

    sq::SessionConfig server_cfg = base_config();
    sq::Server server(server_cfg, dec);
    server.start();
    REQUIRE(server.port() != 0);

    sq::FeatureTensor x({2, 5}, {0.3, -0.4, 0.8, -1.2, 0.05, 1.7, -0.6, 0.2, 0.9, -0.1});

    sq::SessionConfig loop_cfg = base_config();
    auto [loop_result, loop_log] = sq::client_infer(x, enc, loop_cfg, dec);

    sq::SessionConfig tcp_cfg = base_config();
    tcp_cfg.transport = sq::TransportKind::Tcp;
    tcp_cfg.port = server.port();
    auto [tcp_result, tcp_log] = sq::client_infer(x, enc, tcp_cfg);

    REQUIRE(tcp_result.same_shape(loop_result));
    for (std::size_t i = 0; i < tcp_result.size(); ++i)
        REQUIRE(tcp_result[i] == loop_result[i]);
    REQUIRE(tcp_log.frames_sent == loop_log.frames_sent);
    REQUIRE(tcp_log.payload_bytes == loop_log.payload_bytes);
    REQUIRE(tcp_log.achieved_ratio == loop_log.achieved_ratio);

    // A second independent client gets its own session on the same server.
    auto [again, log2] = sq::client_infer(x, enc, tcp_cfg);
    for (std::size_t i = 0; i < again.size(); ++i) REQUIRE(again[i] == loop_result[i]);

    server.stop();
}

TEST_CASE("tcp client performs repeated calls on one connection") {
    auto enc = tiny_encoder();
    auto dec = tiny_decoder();
    sq::Server server(base_config(), dec);
    server.start();

    sq::SessionConfig cfg = base_config();
    cfg.transport = sq::TransportKind::Tcp;
    cfg.port = server.port();
    sq::Client client(cfg, enc);

    sq::FeatureTensor x({1, 5}, {0.2, 0.4, -0.6, 0.8, -1.0});
    auto [r1, l1] = client.infer(x);
    auto [r2, l2] = client.infer(x);
    REQUIRE(l1.frames_sent == 2);
    REQUIRE(l2.frames_sent == 3);
    for (std::size_t i = 0; i < r1.size(); ++i) REQUIRE(r1[i] == r2[i]);

    server.stop();
    REQUIRE(server.handled() >= 3);
}

TEST_CASE("server reports config mismatches through error frames") {
    auto enc = tiny_encoder();
    sq::Server server(base_config(), tiny_decoder());
    server.start();

    sq::SessionConfig cfg = base_config();
    cfg.transport = sq::TransportKind::Tcp;
    cfg.port = server.port();
    cfg.quantizer.levels = 8;  // server expects 4

    sq::Client client(cfg, enc);
    try {
        client.infer(sq::FeatureTensor::flat({1, 2, 3, 4, 5}));
        FAIL("expected ServerReportedError");
    } catch (const sq::ServerReportedError& e) {
        REQUIRE(e.code() == sq::kErrConfig);
        REQUIRE(e.message() == "level count mismatch");
        REQUIRE(std::string(e.what()) == "server error 3: level count mismatch");
    }
    server.stop();
}

TEST_CASE("server stops after the configured number of replies") {
    auto enc = tiny_encoder();
    sq::Server server(base_config(), tiny_decoder());
    server.set_max_requests(3);
    server.start();

    sq::SessionConfig cfg = base_config();
    cfg.transport = sq::TransportKind::Tcp;
    cfg.port = server.port();
    sq::Client client(cfg, enc);
    sq::FeatureTensor x = sq::FeatureTensor::flat({1, 2, 3, 4, 5});
    client.infer(x);  // hello + features = replies 1 and 2
    client.infer(x);  // reply 3, server drains afterwards

    server.wait();
    REQUIRE(server.handled() == 3);
}

TEST_CASE("client surfaces transport failures") {
    sq::SessionConfig cfg = base_config();
    cfg.transport = sq::TransportKind::Tcp;

    // Nothing listens on this port (bind-then-close to find a free one).
    {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        REQUIRE(fd >= 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
        socklen_t len = sizeof(addr);
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
        cfg.port = ntohs(addr.sin_port);
        ::close(fd);
    }
    sq::Client refused(cfg, tiny_encoder());
    REQUIRE_THROWS_AS(refused.infer(sq::FeatureTensor::flat({1, 2, 3, 4, 5})),
                      sq::TransportError);

    // A listener that accepts nothing: the handshake reply never arrives.
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    REQUIRE(::listen(fd, 4) == 0);
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    cfg.port = ntohs(addr.sin_port);
    cfg.timeout_ms = 200;
    sq::Client silent(cfg, tiny_encoder());
    REQUIRE_THROWS_AS(silent.infer(sq::FeatureTensor::flat({1, 2, 3, 4, 5})),
                      sq::TimeoutError);
    ::close(fd);
}

TEST_CASE("benchmark produces sane rows and deterministic csv") {
    sq::Rng rng(2042);
    std::vector<double> xs(8 * 64);
    for (double& v : xs) v = rng.normal();
    sq::FeatureTensor x({8, 64}, std::move(xs));

    std::vector<sq::BenchmarkMethod> methods(3);
    methods[0].kind = sq::BenchmarkMethod::Kind::Discrete;
    methods[0].bits = 2;
    methods[1].kind = sq::BenchmarkMethod::Kind::Discrete;
    methods[1].bits = 16;
    methods[2].kind = sq::BenchmarkMethod::Kind::TopK;
    methods[2].k = 8;
    methods[2].epsilon = 0.1;

    auto rows = sq::benchmark(methods, x, 3, 7);
    REQUIRE(rows.size() == 3);
    REQUIRE(rows[0].method == "discrete_b2");
    REQUIRE(rows[1].method == "passthrough");
    REQUIRE(rows[2].method == "topk_k8_e0.10");

    REQUIRE(rows[0].nominal_ratio == 8.0);
    REQUIRE(rows[1].nominal_ratio == 1.0);
    REQUIRE(rows[2].nominal_ratio == 8.0);

    // Headers cost something, so the achieved ratio trails the nominal one.
    // For 8x64 at 2 bits: 1024 raw fp16 bytes vs 22 (hello) + 158 (features
    // frame: 30 header/meta + 128 packed payload) = 180 bytes on the wire.
    REQUIRE(rows[0].achieved_ratio < rows[0].nominal_ratio);
    REQUIRE(rows[0].achieved_ratio == Catch::Approx(1024.0 / 180.0));
    REQUIRE(rows[1].achieved_ratio < 1.0);
    REQUIRE(rows[1].mse < 1e-5);
    REQUIRE(rows[0].mse > rows[1].mse);

    auto csv1 = sq::benchmark_csv(sq::benchmark(methods, x, 3, 7), false);
    auto csv2 = sq::benchmark_csv(sq::benchmark(methods, x, 3, 7), false);
    REQUIRE(csv1 == csv2);
    REQUIRE(csv1.rfind("method,nominal_ratio,achieved_ratio,mse\n", 0) == 0);

    auto with_timing = sq::benchmark_csv(rows, true);
    REQUIRE(with_timing.rfind("method,nominal_ratio,achieved_ratio,mse,millis\n", 0) == 0);

    REQUIRE_THROWS_WITH(sq::benchmark({}, x, 3, 7), "empty input");
    REQUIRE_THROWS_WITH(sq::benchmark(methods, x, 0, 7), "trial count must be positive");
    std::vector<sq::BenchmarkMethod> badk(1);
    badk[0].kind = sq::BenchmarkMethod::Kind::TopK;
    badk[0].k = 65;
    REQUIRE_THROWS_WITH(sq::benchmark(badk, x, 1, 7), "invalid k");
}

TEST_CASE("transfer log rendering") {
    sq::TransferLog log;
    log.frames_sent = 2;
    log.payload_bytes = 100;
    log.raw_fp16_bytes = 800;
    log.update_ratio();
    REQUIRE(sq::transfer_log_lines(log) ==
            "frames_sent=2\npayload_bytes=100\nraw_fp16_bytes=800\nachieved_ratio=8.000000\n");
}
