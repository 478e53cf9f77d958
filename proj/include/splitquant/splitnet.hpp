#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "splitquant/baseline.hpp"
#include "splitquant/codec.hpp"
#include "splitquant/quantizer.hpp"
#include "splitquant/training.hpp"

namespace splitquant {

class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

class TimeoutError : public TransportError {
public:
    explicit TimeoutError(const std::string& what) : TransportError(what) {}
};

/// The server answered with an Error frame instead of a Response.
class ServerReportedError : public std::runtime_error {
public:
    ServerReportedError(std::uint32_t code, const std::string& message)
        : std::runtime_error("server error " + std::to_string(code) + ": " + message),
          code_(code),
          message_(message) {}

    std::uint32_t code() const { return code_; }
    const std::string& message() const { return message_; }

private:
    std::uint32_t code_;
    std::string message_;
};

enum class TransportKind { Loopback, Tcp };

struct SessionConfig {
    QuantizerConfig quantizer;                  // quantizer.levels is the session K
    std::vector<std::uint32_t> expected_shape;  // empty accepts the first Hello's shape
    TransportKind transport = TransportKind::Loopback;
    std::string address = "127.0.0.1";
    std::uint16_t port = 0;
    int timeout_ms = 5000;

    int levels() const { return quantizer.levels; }
};

/// Byte accounting for client-to-server traffic against the FP16 baseline.
struct TransferLog {
    std::uint64_t frames_sent = 0;
    std::uint64_t payload_bytes = 0;   // every byte written toward the server
    std::uint64_t raw_fp16_bytes = 0;  // 2 bytes per feature element
    double achieved_ratio = 0.0;

    void update_ratio() {
        achieved_ratio = payload_bytes == 0
                             ? 0.0
                             : static_cast<double>(raw_fp16_bytes) /
                                   static_cast<double>(payload_bytes);
    }
};

// ---------------------------------------------------------------------------
// Server-side session logic, shared verbatim by the loopback and TCP paths
// ---------------------------------------------------------------------------

class ServerSession {
public:
    ServerSession(SessionConfig cfg, std::vector<DenseLayer> dec)
        : cfg_(std::move(cfg)), dec_(std::move(dec)) {
        for (const DenseLayer& l : dec_) l.validate();
    }

    /// Consumes one request frame, produces exactly one reply frame.
    std::vector<std::uint8_t> handle(std::span<const std::uint8_t> request) {
        WireFrame frame;
        try {
            frame = decode_frame(request);
        } catch (const CodecError& e) {
            const bool version = std::string(e.what()) == "unsupported version";
            return error_reply(version ? kErrVersion : kErrProtocol, e.what());
        }
        try {
            switch (frame.type) {
                case FrameType::Hello: return on_hello(std::get<HelloBody>(frame.body));
                case FrameType::Features: return on_features(std::get<FeaturesBody>(frame.body));
                case FrameType::TopK: return on_topk(std::get<TopKBody>(frame.body));
                default: return error_reply(kErrProtocol, "unknown frame type");
            }
        } catch (const std::exception& e) {
            return error_reply(kErrProtocol, e.what());
        }
    }

    bool hello_done() const { return hello_done_; }

private:
    std::vector<std::uint8_t> error_reply(std::uint32_t code, const std::string& msg) {
        return encode_frame(WireFrame::error({code, msg}));
    }

    std::vector<std::uint8_t> on_hello(const HelloBody& h) {
        if (hello_done_) return error_reply(kErrProtocol, "duplicate hello");
        if (h.protocol_version != kWireVersion)
            return error_reply(kErrVersion, "unsupported version");
        if (h.levels != static_cast<std::uint32_t>(cfg_.levels()))
            return error_reply(kErrConfig, "level count mismatch");
        if (!cfg_.expected_shape.empty() && h.shape != cfg_.expected_shape)
            return error_reply(kErrConfig, "shape contract mismatch");
        if (h.shape.size() > 2) return error_reply(kErrConfig, "shape contract mismatch");
        const std::uint32_t feature_dim = h.shape.back();
        if (!dec_.empty() && feature_dim != dec_.front().in_dim())
            return error_reply(kErrConfig, "shape contract mismatch");
        shape_ = h.shape;
        hello_done_ = true;
        HelloBody ack;
        ack.protocol_version = kWireVersion;
        ack.levels = h.levels;
        ack.shape = h.shape;
        return encode_frame(WireFrame::hello(std::move(ack)));
    }

    std::vector<std::uint8_t> on_features(const FeaturesBody& ft) {
        if (!hello_done_) return error_reply(kErrProtocol, "hello required");
        if (ft.levels != static_cast<std::uint32_t>(cfg_.levels()))
            return error_reply(kErrConfig, "level count mismatch");
        if (ft.shape != shape_) return error_reply(kErrConfig, "shape contract mismatch");
        if (ft.packed.bit_width != bits_for_levels(ft.levels))
            return error_reply(kErrProtocol, "bit width mismatch");
        std::size_t n = 1;
        for (std::uint32_t d : ft.shape) n *= d;
        if (ft.packed.count != n) return error_reply(kErrProtocol, "length mismatch");

        std::vector<std::uint32_t> indices = unpack(ft.packed);
        for (std::uint32_t idx : indices)
            if (idx >= ft.levels) return error_reply(kErrCorrupt, "corrupt block");

        QuantizedBlock block;
        block.levels = static_cast<int>(ft.levels);
        block.shape.assign(ft.shape.begin(), ft.shape.end());
        block.indices = std::move(indices);
        FeatureTensor features = reconstruct(block);
        return run_decoder(ft.request_id, features);
    }

    std::vector<std::uint8_t> on_topk(const TopKBody& t) {
        if (!hello_done_) return error_reply(kErrProtocol, "hello required");
        const std::uint32_t feature_dim = shape_.back();
        const std::uint32_t rows = shape_.size() == 2 ? shape_[0] : 1;
        if (t.dims != feature_dim || t.rows != rows)
            return error_reply(kErrConfig, "shape contract mismatch");
        std::vector<double> dense(static_cast<std::size_t>(t.rows) * t.dims, 0.0);
        for (std::uint32_t r = 0; r < t.rows; ++r)
            for (std::uint32_t j = 0; j < t.k; ++j) {
                const TopKEntry& e = t.entries[static_cast<std::size_t>(r) * t.k + j];
                if (e.index >= t.dims) return error_reply(kErrCorrupt, "corrupt block");
                dense[static_cast<std::size_t>(r) * t.dims + e.index] =
                    static_cast<double>(half_to_float(e.value_half));
            }
        std::vector<std::size_t> shape(shape_.begin(), shape_.end());
        FeatureTensor features(std::move(shape), std::move(dense));
        return run_decoder(t.request_id, features);
    }

    std::vector<std::uint8_t> run_decoder(std::uint32_t request_id, const FeatureTensor& in) {
        const std::size_t batch = in.shape().size() == 2 ? in.shape()[0] : 1;
        std::vector<double> h = in.data();
        std::size_t d = in.shape().back();
        for (const DenseLayer& l : dec_) {
            h = detail::layer_forward(l, h, batch, nullptr);
            d = l.out_dim();
        }
        ResponseBody rsp;
        rsp.request_id = request_id;
        std::vector<std::size_t> out_shape = in.shape().size() == 2
                                                 ? std::vector<std::size_t>{batch, d}
                                                 : std::vector<std::size_t>{d};
        rsp.tensor = FeatureTensor(std::move(out_shape), std::move(h));
        return encode_frame(WireFrame::response(std::move(rsp)));
    }

    SessionConfig cfg_;
    std::vector<DenseLayer> dec_;
    bool hello_done_ = false;
    std::vector<std::uint32_t> shape_;
};

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

namespace detail {

class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const std::vector<std::uint8_t>& frame) = 0;
    virtual std::vector<std::uint8_t> recv_frame() = 0;
};

class LoopbackChannel : public Channel {
public:
    explicit LoopbackChannel(std::unique_ptr<ServerSession> session)
        : session_(std::move(session)) {}

    void send(const std::vector<std::uint8_t>& frame) override {
        reply_ = session_->handle(frame);
        has_reply_ = true;
    }

    std::vector<std::uint8_t> recv_frame() override {
        if (!has_reply_) throw TransportError("no request in flight");
        has_reply_ = false;
        return std::move(reply_);
    }

private:
    std::unique_ptr<ServerSession> session_;
    std::vector<std::uint8_t> reply_;
    bool has_reply_ = false;
};

inline void send_all(int fd, const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        const ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(r);
    }
}

class TcpChannel : public Channel {
public:
    TcpChannel(const std::string& address, std::uint16_t port, int timeout_ms) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportError(std::string("socket failed: ") + std::strerror(errno));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            fd_ = -1;
            throw TransportError("bad address: " + address);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            const int err = errno;
            ::close(fd_);
            fd_ = -1;
            throw TransportError(std::string("connect failed: ") + std::strerror(err));
        }
        timeval tv{};
        tv.tv_sec = timeout_ms / 1000;
        tv.tv_usec = (timeout_ms % 1000) * 1000;
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }

    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    void send(const std::vector<std::uint8_t>& frame) override {
        send_all(fd_, frame.data(), frame.size());
    }

    std::vector<std::uint8_t> recv_frame() override {
        std::vector<std::uint8_t> frame(kFrameHeaderBytes);
        read_exact(frame.data(), kFrameHeaderBytes);
        const std::uint32_t body_len = static_cast<std::uint32_t>(frame[4]) |
                                       static_cast<std::uint32_t>(frame[5]) << 8 |
                                       static_cast<std::uint32_t>(frame[6]) << 16 |
                                       static_cast<std::uint32_t>(frame[7]) << 24;
        if (body_len > kMaxFrameBody) throw TransportError("oversized frame");
        frame.resize(kFrameHeaderBytes + body_len);
        read_exact(frame.data() + kFrameHeaderBytes, body_len);
        return frame;
    }

private:
    void read_exact(std::uint8_t* buf, std::size_t n) {
        std::size_t got = 0;
        while (got < n) {
            const ssize_t r = ::recv(fd_, buf + got, n - got, 0);
            if (r > 0) {
                got += static_cast<std::size_t>(r);
                continue;
            }
            if (r == 0) throw TransportError("connection closed");
            if (errno == EAGAIN || errno == EWOULDBLOCK) throw TimeoutError("receive timed out");
            if (errno == EINTR) continue;
            throw TransportError(std::string("recv failed: ") + std::strerror(errno));
        }
    }

    int fd_ = -1;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

/// One split-inference endpoint: runs the encoder, quantizes, ships packed
/// indices, and hands back the server's decoder output. Stop-and-wait; one
/// session shape negotiated at the first call. Not shareable across threads.
class Client {
public:
    /// TCP client; connects lazily on the first infer call.
    Client(SessionConfig cfg, std::vector<DenseLayer> enc)
        : cfg_(std::move(cfg)), enc_(std::move(enc)) {
        if (cfg_.transport != TransportKind::Tcp)
            throw std::invalid_argument("loopback client needs a decoder");
    }

    /// Loopback client; the decoder runs in-process behind the same session
    /// logic the TCP server uses.
    Client(SessionConfig cfg, std::vector<DenseLayer> enc, std::vector<DenseLayer> dec)
        : cfg_(std::move(cfg)), enc_(std::move(enc)) {
        if (cfg_.transport != TransportKind::Loopback)
            throw std::invalid_argument("decoder is only used by loopback clients");
        channel_ = std::make_unique<detail::LoopbackChannel>(
            std::make_unique<ServerSession>(cfg_, std::move(dec)));
    }

    /// Observes every frame sent toward the server (testing hook).
    void set_wire_tap(std::function<void(const std::vector<std::uint8_t>&)> tap) {
        tap_ = std::move(tap);
    }

    std::pair<FeatureTensor, TransferLog> infer(const FeatureTensor& x) {
        cfg_.quantizer.validate();
        if (x.shape().size() > 2) throw std::invalid_argument("shape mismatch");
        const bool flat = x.shape().size() == 1;
        const std::size_t batch = flat ? 1 : x.shape()[0];
        std::vector<double> h = x.data();
        std::size_t d = x.shape().back();
        for (const DenseLayer& l : enc_) {
            h = detail::layer_forward(l, h, batch, nullptr);
            d = l.out_dim();
        }
        QuantizeOutput qo = quantize(FeatureTensor({batch, d}, std::move(h)), cfg_.quantizer);

        std::vector<std::uint32_t> shape32;
        if (flat)
            shape32 = {static_cast<std::uint32_t>(d)};
        else
            shape32 = {static_cast<std::uint32_t>(batch), static_cast<std::uint32_t>(d)};

        ensure_channel();
        ensure_hello(shape32);

        FeaturesBody ft;
        ft.request_id = next_request_id_++;
        ft.levels = static_cast<std::uint32_t>(cfg_.levels());
        ft.shape = shape32;
        ft.packed = pack(qo.block.indices, bits_for_levels(ft.levels));
        send_frame(encode_frame(WireFrame::features(std::move(ft))));
        log_.raw_fp16_bytes += 2 * qo.block.indices.size();
        log_.update_ratio();

        WireFrame reply = receive_reply();
        if (reply.type == FrameType::Error) {
            const auto& e = std::get<ErrorBody>(reply.body);
            throw ServerReportedError(e.code, e.message);
        }
        if (reply.type != FrameType::Response) throw TransportError("unexpected reply frame");
        auto& rsp = std::get<ResponseBody>(reply.body);
        if (rsp.request_id != next_request_id_ - 1)
            throw TransportError("response id mismatch");
        if (rsp.is_scalar) throw TransportError("unexpected scalar response");
        FeatureTensor out = std::move(rsp.tensor);
        if (flat && out.shape().size() == 2 && out.shape()[0] == 1)
            out = FeatureTensor({out.shape()[1]}, std::vector<double>(out.data()));
        return {std::move(out), log_};
    }

    const TransferLog& log() const { return log_; }

private:
    void ensure_channel() {
        if (channel_) return;
        channel_ = std::make_unique<detail::TcpChannel>(cfg_.address, cfg_.port, cfg_.timeout_ms);
    }

    void ensure_hello(const std::vector<std::uint32_t>& shape) {
        if (hello_done_) {
            if (shape != session_shape_) throw std::invalid_argument("shape contract mismatch");
            return;
        }
        if (!cfg_.expected_shape.empty() && shape != cfg_.expected_shape)
            throw std::invalid_argument("shape contract mismatch");
        HelloBody h;
        h.protocol_version = kWireVersion;
        h.levels = static_cast<std::uint32_t>(cfg_.levels());
        h.shape = shape;
        send_frame(encode_frame(WireFrame::hello(std::move(h))));
        WireFrame reply = receive_reply();
        if (reply.type == FrameType::Error) {
            const auto& e = std::get<ErrorBody>(reply.body);
            throw ServerReportedError(e.code, e.message);
        }
        if (reply.type != FrameType::Hello) throw TransportError("unexpected reply frame");
        session_shape_ = shape;
        hello_done_ = true;
    }

    void send_frame(const std::vector<std::uint8_t>& frame) {
        if (tap_) tap_(frame);
        channel_->send(frame);
        ++log_.frames_sent;
        log_.payload_bytes += frame.size();
    }

    WireFrame receive_reply() {
        std::vector<std::uint8_t> raw = channel_->recv_frame();
        try {
            return decode_frame(raw);
        } catch (const CodecError& e) {
            throw TransportError(std::string("bad reply frame: ") + e.what());
        }
    }

    SessionConfig cfg_;
    std::vector<DenseLayer> enc_;
    std::unique_ptr<detail::Channel> channel_;
    std::function<void(const std::vector<std::uint8_t>&)> tap_;
    TransferLog log_;
    bool hello_done_ = false;
    std::vector<std::uint32_t> session_shape_;
    std::uint32_t next_request_id_ = 1;
};

/// One-shot convenience wrapper: fresh session, single request, byte log for
/// exactly that exchange (handshake included).
inline std::pair<FeatureTensor, TransferLog> client_infer(const FeatureTensor& x,
                                                          const std::vector<DenseLayer>& enc,
                                                          const SessionConfig& cfg,
                                                          const std::vector<DenseLayer>& dec = {}) {
    if (cfg.transport == TransportKind::Loopback) {
        Client c(cfg, enc, dec);
        return c.infer(x);
    }
    Client c(cfg, enc);
    return c.infer(x);
}

// ---------------------------------------------------------------------------
// TCP server
// ---------------------------------------------------------------------------

/// Thread-per-connection TCP server running one ServerSession per peer.
/// stop() (or reaching max_requests) closes the listener and drains workers.
class Server {
public:
    Server(SessionConfig cfg, std::vector<DenseLayer> dec)
        : cfg_(std::move(cfg)), dec_(std::move(dec)) {
        for (const DenseLayer& l : dec_) l.validate();
    }

    ~Server() { stop(); }

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// 0 keeps serving until stop(); otherwise the listener shuts down after
    /// this many successful replies.
    void set_max_requests(std::size_t n) { max_requests_ = n; }

    void start() {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0)
            throw TransportError(std::string("socket failed: ") + std::strerror(errno));
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(cfg_.port);
        if (::inet_pton(AF_INET, cfg_.address.c_str(), &addr.sin_addr) != 1) {
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw TransportError("bad address: " + cfg_.address);
        }
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            const int err = errno;
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw TransportError(std::string("bind failed: ") + std::strerror(err));
        }
        if (::listen(listen_fd_, 16) != 0) {
            const int err = errno;
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw TransportError(std::string("listen failed: ") + std::strerror(err));
        }
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
        stopping_.store(false);
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        bool expected = false;
        if (stopping_.compare_exchange_strong(expected, true)) close_listener();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            workers.swap(workers_);
        }
        for (std::thread& t : workers)
            if (t.joinable()) t.join();
    }

    /// Blocks until the accept loop exits (stop() or max_requests reached).
    void wait() {
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            workers.swap(workers_);
        }
        for (std::thread& t : workers)
            if (t.joinable()) t.join();
    }

    std::uint16_t port() const { return port_; }
    std::size_t handled() const { return handled_.load(); }

private:
    void close_listener() {
        std::lock_guard<std::mutex> lock(listener_mutex_);
        if (listen_fd_ >= 0) {
            ::shutdown(listen_fd_, SHUT_RDWR);
            ::close(listen_fd_);
            listen_fd_ = -1;
        }
    }

    void accept_loop() {
        while (!stopping_.load()) {
            const int conn = ::accept(listen_fd_, nullptr, nullptr);
            if (conn < 0) {
                if (errno == EINTR) continue;
                break;  // listener closed
            }
            timeval tv{};
            tv.tv_sec = 0;
            tv.tv_usec = 200 * 1000;  // short slices so stop() is responsive
            ::setsockopt(conn, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
            std::lock_guard<std::mutex> lock(mutex_);
            workers_.emplace_back([this, conn] { serve_connection(conn); });
        }
        close_listener();
    }

    bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
        std::size_t got = 0;
        while (got < n) {
            if (stopping_.load()) return false;
            const ssize_t r = ::recv(fd, buf + got, n - got, 0);
            if (r > 0) {
                got += static_cast<std::size_t>(r);
                continue;
            }
            if (r == 0) return false;
            if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
            return false;
        }
        return true;
    }

    void serve_connection(int conn) {
        ServerSession session(cfg_, dec_);
        while (!stopping_.load()) {
            std::vector<std::uint8_t> frame(kFrameHeaderBytes);
            if (!read_exact(conn, frame.data(), kFrameHeaderBytes)) break;
            const std::uint32_t body_len = static_cast<std::uint32_t>(frame[4]) |
                                           static_cast<std::uint32_t>(frame[5]) << 8 |
                                           static_cast<std::uint32_t>(frame[6]) << 16 |
                                           static_cast<std::uint32_t>(frame[7]) << 24;
            if (body_len > kMaxFrameBody) {
                try {
                    auto err = encode_frame(WireFrame::error({kErrProtocol, "length mismatch"}));
                    detail::send_all(conn, err.data(), err.size());
                } catch (const TransportError&) {
                }
                break;
            }
            frame.resize(kFrameHeaderBytes + body_len);
            if (body_len > 0 && !read_exact(conn, frame.data() + kFrameHeaderBytes, body_len))
                break;
            std::vector<std::uint8_t> reply = session.handle(frame);
            try {
                detail::send_all(conn, reply.data(), reply.size());
            } catch (const TransportError&) {
                break;
            }
            const std::size_t done = ++handled_;
            if (max_requests_ != 0 && done >= max_requests_) {
                bool expected = false;
                if (stopping_.compare_exchange_strong(expected, true)) close_listener();
                break;
            }
        }
        ::close(conn);
    }

    SessionConfig cfg_;
    std::vector<DenseLayer> dec_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::size_t max_requests_ = 0;
    std::atomic<std::size_t> handled_{0};
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex mutex_;
    std::mutex listener_mutex_;
    std::vector<std::thread> workers_;
};

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct BenchmarkMethod {
    enum class Kind { Discrete, TopK } kind = Kind::Discrete;
    int bits = 2;         // Discrete: 1..8 packed, 16 = FP16 passthrough control
    std::size_t k = 0;    // TopK: entries kept per row
    double epsilon = 0.0; // TopK: non-top-k sampling chance

    std::string label() const {
        if (kind == Kind::Discrete)
            return bits == 16 ? "passthrough" : "discrete_b" + std::to_string(bits);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "topk_k%zu_e%.2f", k, epsilon);
        return buf;
    }
};

struct BenchmarkRow {
    std::string method;
    double nominal_ratio = 0.0;
    double achieved_ratio = 0.0;
    double mse = 0.0;
    double millis = 0.0;
};

namespace detail {

inline std::size_t hello_frame_bytes(const std::vector<std::uint32_t>& shape,
                                     std::uint32_t levels) {
    HelloBody h;
    h.levels = levels;
    h.shape = shape;
    return encode_frame(WireFrame::hello(std::move(h))).size();
}

}  // namespace detail

/// Compares transmission methods on one feature tensor: nominal and achieved
/// wire ratios (handshake and headers included), reconstruction MSE against
/// the original features, and mean wall time per trial.
inline std::vector<BenchmarkRow> benchmark(const std::vector<BenchmarkMethod>& methods,
                                           const FeatureTensor& x, std::size_t trials,
                                           std::uint64_t seed) {
    if (methods.empty()) throw std::invalid_argument("empty input");
    if (trials == 0) throw std::invalid_argument("trial count must be positive");
    const std::size_t n = x.size();
    const std::size_t rows = x.shape().size() == 2 ? x.shape()[0] : 1;
    const std::size_t dims = x.shape().back();
    std::vector<std::uint32_t> shape32;
    for (std::size_t d : x.shape()) shape32.push_back(static_cast<std::uint32_t>(d));
    const std::size_t raw_fp16 = 2 * n;

    std::vector<BenchmarkRow> out;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const BenchmarkMethod& m = methods[mi];
        BenchmarkRow row;
        row.method = m.label();
        double mse_acc = 0.0;
        std::size_t sent_bytes = 0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t trial = 0; trial < trials; ++trial) {
            Rng rng(mix_seed(seed, mi, trial));
            if (m.kind == BenchmarkMethod::Kind::Discrete) {
                if (m.bits == 16) {
                    row.nominal_ratio = 1.0;
                    // Metadata cost mirrors a Features frame carrying raw FP16.
                    sent_bytes = detail::hello_frame_bytes(shape32, 1u << 8) +
                                 kFrameHeaderBytes + 14 + shape32.size() * 4 + raw_fp16;
                    double acc = 0.0;
                    for (double v : x.data()) {
                        const double r =
                            static_cast<double>(half_to_float(float_to_half(static_cast<float>(v))));
                        acc += (r - v) * (r - v);
                    }
                    mse_acc += acc / static_cast<double>(n);
                } else {
                    QuantizerConfig qcfg;
                    qcfg.levels = 1 << m.bits;
                    qcfg.scaling = ScalingMode::ClippedLinearScaling;
                    row.nominal_ratio =
                        compression_rate(CompressionMethod::Discrete,
                                         static_cast<std::size_t>(m.bits), dims);
                    QuantizeOutput qo = quantize(x, qcfg);
                    FeaturesBody ft;
                    ft.request_id = 1;
                    ft.levels = static_cast<std::uint32_t>(qcfg.levels);
                    ft.shape = shape32;
                    ft.packed = pack(qo.block.indices, m.bits);
                    sent_bytes = detail::hello_frame_bytes(shape32, ft.levels) +
                                 encode_frame(WireFrame::features(std::move(ft))).size();
                    // Map the lattice back through the inverse affine scale.
                    const double a = detail::linear_scale_slope(x);
                    const double b = detail::linear_scale_offset(x, a);
                    double acc = 0.0;
                    const auto& xd = x.data();
                    const auto& cd = qo.reconstructed.data();
                    for (std::size_t i = 0; i < n; ++i) {
                        const double xhat = a == 0.0 ? xd[i] : (cd[i] - b) / a;
                        acc += (xhat - xd[i]) * (xhat - xd[i]);
                    }
                    mse_acc += acc / static_cast<double>(n);
                }
            } else {
                if (m.k == 0 || m.k > dims) throw std::invalid_argument("invalid k");
                if (dims > 65535)
                    throw std::invalid_argument("dims too large for top-k wire format");
                row.nominal_ratio = compression_rate(CompressionMethod::TopK, m.k, dims);
                TopKBody body;
                body.request_id = 1;
                body.rows = static_cast<std::uint32_t>(rows);
                body.dims = static_cast<std::uint32_t>(dims);
                body.k = static_cast<std::uint32_t>(m.k);
                double acc = 0.0;
                const auto& xd = x.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    std::span<const double> rowspan(xd.data() + r * dims, dims);
                    SparseFeatures sf = topk_sparsify(rowspan, m.k, m.epsilon, rng);
                    std::vector<double> dense(dims, 0.0);
                    for (std::size_t j = 0; j < sf.indices.size(); ++j) {
                        const std::uint16_t hbits =
                            float_to_half(static_cast<float>(sf.values[j]));
                        dense[sf.indices[j]] = static_cast<double>(half_to_float(hbits));
                        body.entries.push_back(
                            {static_cast<std::uint16_t>(sf.indices[j]), hbits});
                    }
                    for (std::size_t i = 0; i < dims; ++i)
                        acc += (dense[i] - rowspan[i]) * (dense[i] - rowspan[i]);
                }
                sent_bytes = detail::hello_frame_bytes(shape32, 4) +
                             encode_frame(WireFrame::topk(std::move(body))).size();
                mse_acc += acc / static_cast<double>(n);
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        row.achieved_ratio = measured_ratio(raw_fp16, sent_bytes);
        row.mse = mse_acc / static_cast<double>(trials);
        row.millis = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                     static_cast<double>(trials);
        out.push_back(std::move(row));
    }
    return out;
}

/// CSV rendering with fixed six-decimal formatting. Timing is off by default
/// so that repeated runs with one seed emit identical bytes.
inline std::string benchmark_csv(const std::vector<BenchmarkRow>& rows, bool include_timing) {
    std::string csv = include_timing ? "method,nominal_ratio,achieved_ratio,mse,millis\n"
                                     : "method,nominal_ratio,achieved_ratio,mse\n";
    char buf[160];
    for (const BenchmarkRow& r : rows) {
        if (include_timing)
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.3f\n", r.method.c_str(),
                          r.nominal_ratio, r.achieved_ratio, r.mse, r.millis);
        else
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", r.method.c_str(),
                          r.nominal_ratio, r.achieved_ratio, r.mse);
        csv += buf;
    }
    return csv;
}

/// key=value rendering of a transfer log for CLI output.
inline std::string transfer_log_lines(const TransferLog& log) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "frames_sent=%llu\npayload_bytes=%llu\nraw_fp16_bytes=%llu\n"
                  "achieved_ratio=%.6f\n",
                  static_cast<unsigned long long>(log.frames_sent),
                  static_cast<unsigned long long>(log.payload_bytes),
                  static_cast<unsigned long long>(log.raw_fp16_bytes), log.achieved_ratio);
    return buf;
}

}  // namespace splitquant
