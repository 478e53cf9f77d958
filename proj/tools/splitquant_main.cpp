#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splitquant/splitquant.hpp"

namespace sq = splitquant;

namespace {

std::string f6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

sq::ScalingMode parse_scaling(const std::string& s) {
    if (s == "linear") return sq::ScalingMode::ClippedLinearScaling;
    if (s == "tanh") return sq::ScalingMode::TanhScaling;
    throw std::invalid_argument("unknown scaling: " + s);
}

sq::CommitmentForm parse_commitment(const std::string& s) {
    if (s == "cosine") return sq::CommitmentForm::CosineForm;
    if (s == "squared") return sq::CommitmentForm::SquaredForm;
    throw std::invalid_argument("unknown commitment: " + s);
}

sq::TaskKind parse_task(const std::string& s) {
    if (s == "autoencoder") return sq::TaskKind::Autoencoder;
    if (s == "classifier") return sq::TaskKind::Classifier;
    throw std::invalid_argument("unknown task: " + s);
}

// CSV escape hatch for small tensors: one line per row, comma-separated,
// six decimals on write.
sq::FeatureTensor read_csv_tensor(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t pos = 0;
            const double v = std::stod(cell, &pos);
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error("ragged csv rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("empty input");
    if (rows.size() == 1) return sq::FeatureTensor::flat(std::move(rows.front()));
    std::vector<double> data;
    data.reserve(rows.size() * rows.front().size());
    for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
    return sq::FeatureTensor({rows.size(), rows.front().size()}, std::move(data));
}

void write_csv_tensor(const std::string& path, const sq::FeatureTensor& t) {
    if (t.shape().size() > 2) throw std::runtime_error("csv supports rank 1 or 2");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open file: " + path);
    const std::size_t cols = t.shape().back();
    const std::size_t rows = t.size() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) os << ',';
            os << f6(t[r * cols + c]);
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

sq::FeatureTensor load_tensor(const std::string& path, bool csv) {
    return csv ? read_csv_tensor(path) : sq::load_tensor_file(path);
}

void store_tensor(const std::string& path, const sq::FeatureTensor& t, bool csv) {
    if (csv)
        write_csv_tensor(path, t);
    else
        sq::save_tensor_file(path, t);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open file: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct QuantizeArgs {
    std::string input, out;
    int k = 4;
    std::string scaling = "linear";
    std::string commitment = "cosine";
    bool csv = false;
};

void run_quantize(const QuantizeArgs& a) {
    sq::QuantizerConfig cfg;
    cfg.levels = a.k;
    cfg.scaling = parse_scaling(a.scaling);
    cfg.commitment = parse_commitment(a.commitment);
    sq::FeatureTensor t = load_tensor(a.input, a.csv);
    sq::QuantizeOutput q = sq::quantize(t, cfg);

    sq::FeaturesBody body;
    body.request_id = 0;
    body.levels = static_cast<std::uint32_t>(cfg.levels);
    for (std::size_t d : t.shape()) body.shape.push_back(static_cast<std::uint32_t>(d));
    const int bits = sq::bits_for_levels(body.levels);
    body.packed = sq::pack(q.block.indices, bits);
    auto frame = sq::encode_frame(sq::WireFrame::features(std::move(body)));
    write_file_bytes(a.out, frame);

    std::cout << "levels=" << cfg.levels << "\n"
              << "bit_width=" << bits << "\n"
              << "count=" << q.block.indices.size() << "\n"
              << "frame_bytes=" << frame.size() << "\n"
              << "commit_loss=" << f6(q.commit_loss) << "\n";
}

struct ReconstructArgs {
    std::string input, out;
    bool csv = false;
};

void run_reconstruct(const ReconstructArgs& a) {
    sq::WireFrame frame = sq::decode_frame(read_file_bytes(a.input));
    if (frame.type != sq::FrameType::Features)
        throw std::runtime_error("not a features frame: " + a.input);
    const auto& body = std::get<sq::FeaturesBody>(frame.body);
    sq::QuantizedBlock block;
    block.levels = static_cast<int>(body.levels);
    block.shape.assign(body.shape.begin(), body.shape.end());
    block.indices = sq::unpack(body.packed);
    sq::FeatureTensor t = sq::reconstruct(block);
    store_tensor(a.out, t, a.csv);
    std::cout << "levels=" << block.levels << "\n"
              << "count=" << t.size() << "\n"
              << "shape=" << shape_str(t.shape()) << "\n";
}

struct EntropyArgs {
    std::string input;
    std::size_t grid = sq::kDefaultGridPoints;
    bool csv = false;
    bool per_dim = false;
};

void run_entropy(const EntropyArgs& a) {
    sq::FeatureTensor t = load_tensor(a.input, a.csv);
    if (a.per_dim) {
        auto reports = sq::recommend_bits_per_dim(t, a.grid);
        for (std::size_t d = 0; d < reports.size(); ++d)
            std::cout << "dim=" << d << " entropy_bits=" << f6(reports[d].entropy_bits)
                      << " recommended_bits=" << reports[d].recommended_bits << "\n";
        return;
    }
    sq::EntropyReport rep = sq::recommend_bits(t.data(), a.grid);
    std::cout << "samples=" << rep.sample_count << "\n"
              << "bandwidth=" << f6(rep.bandwidth) << "\n"
              << "entropy_bits=" << f6(rep.entropy_bits) << "\n"
              << "recommended_bits=" << rep.recommended_bits << "\n";
}

struct PackArgs {
    std::string input, out;
    int bits = 0;
    bool csv = false;
};

void run_pack(const PackArgs& a) {
    sq::FeatureTensor t = load_tensor(a.input, a.csv);
    std::vector<std::uint32_t> indices;
    indices.reserve(t.size());
    for (double v : t.data()) {
        if (v < 0.0 || v != std::floor(v) || v > 255.0)
            throw std::runtime_error("pack input must hold integer indices in [0, 255]");
        indices.push_back(static_cast<std::uint32_t>(v));
    }
    sq::PackedIndices p = sq::pack(indices, a.bits);
    write_file_bytes(a.out, p.bytes);
    std::cout << "count=" << p.count << "\n"
              << "bit_width=" << p.bit_width << "\n"
              << "bytes=" << p.bytes.size() << "\n";
}

struct UnpackArgs {
    std::string input, out;
    int bits = 0;
    std::size_t count = 0;
    bool csv = false;
};

void run_unpack(const UnpackArgs& a) {
    sq::PackedIndices p;
    p.bit_width = a.bits;
    p.count = a.count;
    p.bytes = read_file_bytes(a.input);
    std::vector<std::uint32_t> indices = sq::unpack(p);
    std::vector<double> vals(indices.begin(), indices.end());
    store_tensor(a.out, sq::FeatureTensor::flat(std::move(vals)), a.csv);
    std::cout << "count=" << a.count << "\n";
}

struct FrameArgs {
    std::string dump, info;
};

void dump_hex(const std::vector<std::uint8_t>& bytes) {
    char buf[16];
    for (std::size_t off = 0; off < bytes.size(); off += 16) {
        std::snprintf(buf, sizeof(buf), "%08zx:", off);
        std::cout << buf;
        for (std::size_t i = off; i < std::min(off + 16, bytes.size()); ++i) {
            std::snprintf(buf, sizeof(buf), " %02x", bytes[i]);
            std::cout << buf;
        }
        std::cout << "\n";
    }
    std::cout << "length=" << bytes.size() << "\n";
}

void print_frame_info(const std::vector<std::uint8_t>& bytes) {
    sq::WireFrame frame = sq::decode_frame(bytes);
    switch (frame.type) {
        case sq::FrameType::Hello: {
            const auto& b = std::get<sq::HelloBody>(frame.body);
            std::cout << "type=hello\nversion=" << static_cast<int>(b.protocol_version)
                      << "\nlevels=" << b.levels << "\nshape=";
            for (std::size_t i = 0; i < b.shape.size(); ++i)
                std::cout << (i ? "x" : "") << b.shape[i];
            std::cout << "\n";
            break;
        }
        case sq::FrameType::Features: {
            const auto& b = std::get<sq::FeaturesBody>(frame.body);
            std::cout << "type=features\nrequest_id=" << b.request_id << "\nlevels=" << b.levels
                      << "\nshape=";
            for (std::size_t i = 0; i < b.shape.size(); ++i)
                std::cout << (i ? "x" : "") << b.shape[i];
            std::cout << "\nbit_width=" << b.packed.bit_width << "\ncount=" << b.packed.count
                      << "\npayload_bytes=" << b.packed.bytes.size() << "\n";
            break;
        }
        case sq::FrameType::Response: {
            const auto& b = std::get<sq::ResponseBody>(frame.body);
            std::cout << "type=response\nrequest_id=" << b.request_id << "\n";
            if (b.is_scalar)
                std::cout << "scalar=" << f6(b.scalar) << "\n";
            else
                std::cout << "shape=" << shape_str(b.tensor.shape()) << "\n";
            break;
        }
        case sq::FrameType::Error: {
            const auto& b = std::get<sq::ErrorBody>(frame.body);
            std::cout << "type=error\ncode=" << b.code << "\nmessage=" << b.message << "\n";
            break;
        }
        case sq::FrameType::TopK: {
            const auto& b = std::get<sq::TopKBody>(frame.body);
            std::cout << "type=topk\nrequest_id=" << b.request_id << "\nrows=" << b.rows
                      << "\ndims=" << b.dims << "\nk=" << b.k << "\n";
            break;
        }
    }
}

void run_frame(const FrameArgs& a) {
    if (a.dump.empty() && a.info.empty())
        throw std::runtime_error("frame: pass --dump FILE or --info FILE");
    if (!a.dump.empty()) dump_hex(read_file_bytes(a.dump));
    if (!a.info.empty()) print_frame_info(read_file_bytes(a.info));
}

struct TrainArgs {
    std::string task = "autoencoder";
    std::size_t samples = 256;
    std::size_t dims = 4;
    std::size_t bottleneck = 2;
    int k = 4;
    std::size_t epochs = 50;
    std::size_t batch = 16;
    double lr = 0.1;
    double alpha = 0.25;
    std::uint64_t seed = 0;
    std::string scaling = "linear";
    std::string commitment = "cosine";
    bool no_quantizer = false;
    std::string out;
};

void run_train(const TrainArgs& a) {
    sq::TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.alpha = a.alpha;
    cfg.seed = a.seed;
    cfg.task = parse_task(a.task);
    cfg.use_quantizer = !a.no_quantizer;
    cfg.quantizer.levels = a.k;
    cfg.quantizer.scaling = parse_scaling(a.scaling);
    cfg.quantizer.commitment = parse_commitment(a.commitment);

    sq::TrainData data;
    std::vector<sq::DenseLayer> enc, dec;
    sq::Rng init(sq::mix_seed(a.seed, 0x696e6974ULL));
    if (cfg.task == sq::TaskKind::Autoencoder) {
        data = sq::make_mixture_data(a.samples, a.dims, a.seed);
        enc.push_back(sq::make_layer(a.bottleneck, a.dims, sq::Activation::Identity, init));
        dec.push_back(sq::make_layer(a.dims, a.bottleneck, sq::Activation::Identity, init));
    } else {
        data = sq::make_two_arcs(a.samples, a.seed);
        enc.push_back(sq::make_layer(8, 2, sq::Activation::Gelu, init));
        enc.push_back(sq::make_layer(a.bottleneck, 8, sq::Activation::Identity, init));
        dec.push_back(sq::make_layer(8, a.bottleneck, sq::Activation::Gelu, init));
        dec.push_back(sq::make_layer(2, 8, sq::Activation::Identity, init));
    }

    sq::TrainResult r = sq::train(data, std::move(enc), std::move(dec), cfg);
    std::cout << "epoch,total,task,commit\n";
    for (std::size_t e = 0; e < r.loss_history.size(); ++e)
        std::cout << e << "," << f6(r.loss_history[e]) << "," << f6(r.task_history[e]) << ","
                  << f6(r.commit_history[e]) << "\n";
    if (!a.out.empty()) {
        sq::save_model(a.out, r.enc, r.dec);
        std::cerr << "model saved: " << a.out << "\n";
    }
}

struct GradCheckArgs {
    int k = 4;
    std::string scaling = "linear";
    std::string commitment = "cosine";
    std::string task = "autoencoder";
    double alpha = 0.25;
    double perturbation = 1e-4;
    std::uint64_t seed = 0;
};

void run_gradcheck(const GradCheckArgs& a) {
    sq::TrainConfig cfg;
    cfg.alpha = a.alpha;
    cfg.seed = a.seed;
    cfg.task = parse_task(a.task);
    cfg.quantizer.levels = a.k;
    cfg.quantizer.scaling = parse_scaling(a.scaling);
    cfg.quantizer.commitment = parse_commitment(a.commitment);

    sq::Rng init(sq::mix_seed(a.seed, 0x696e6974ULL));
    std::vector<sq::DenseLayer> enc, dec;
    if (cfg.task == sq::TaskKind::Autoencoder) {
        enc.push_back(sq::make_layer(3, 4, sq::Activation::Gelu, init));
        dec.push_back(sq::make_layer(4, 3, sq::Activation::Identity, init));
    } else {
        enc.push_back(sq::make_layer(3, 2, sq::Activation::Gelu, init));
        dec.push_back(sq::make_layer(2, 3, sq::Activation::Identity, init));
    }
    sq::GradCheckReport rep = sq::grad_check(std::move(enc), std::move(dec), cfg, a.perturbation);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9e", rep.max_rel_error);
    std::cout << "max_rel_error=" << buf << "\n"
              << "parameter_count=" << rep.parameter_count << "\n"
              << "perturbation=" << f6(rep.perturbation) << "\n";
}

struct ServeArgs {
    std::string address = "127.0.0.1";
    std::uint16_t port = 0;
    int k = 4;
    std::string model;
    std::size_t in_dim = 3, out_dim = 4;
    std::uint64_t seed = 0;
    std::size_t max_requests = 0;
};

void run_serve(const ServeArgs& a) {
    std::vector<sq::DenseLayer> dec;
    if (!a.model.empty()) {
        auto [enc_part, dec_part] = sq::load_model(a.model);
        dec = std::move(dec_part);
    } else {
        sq::Rng rng(sq::mix_seed(a.seed, 0xdecdecULL));
        dec.push_back(sq::make_layer(a.out_dim, a.in_dim, sq::Activation::Identity, rng));
    }
    sq::SessionConfig cfg;
    cfg.quantizer.levels = a.k;
    cfg.transport = sq::TransportKind::Tcp;
    cfg.address = a.address;
    cfg.port = a.port;
    sq::Server server(cfg, std::move(dec));
    server.set_max_requests(a.max_requests);
    server.start();
    std::cout << "port=" << server.port() << std::endl;
    server.wait();
    std::cerr << "handled=" << server.handled() << "\n";
}

struct InferArgs {
    std::string input, model, out;
    std::string address = "127.0.0.1";
    std::uint16_t port = 0;
    int k = 4;
    std::string scaling = "linear";
    int timeout_ms = 5000;
    bool loopback = false;
    bool csv = false;
};

void run_infer(const InferArgs& a) {
    sq::FeatureTensor x = load_tensor(a.input, a.csv);
    auto [enc, dec] = sq::load_model(a.model);
    sq::SessionConfig cfg;
    cfg.quantizer.levels = a.k;
    cfg.quantizer.scaling = parse_scaling(a.scaling);
    cfg.timeout_ms = a.timeout_ms;
    cfg.address = a.address;
    cfg.port = a.port;
    cfg.transport = a.loopback ? sq::TransportKind::Loopback : sq::TransportKind::Tcp;

    auto [result, log] = a.loopback ? sq::client_infer(x, enc, cfg, dec)
                                    : sq::client_infer(x, enc, cfg);
    if (!a.out.empty()) store_tensor(a.out, result, a.csv);
    std::cout << "shape=" << shape_str(result.shape()) << "\n" << sq::transfer_log_lines(log);
}

struct BenchmarkArgs {
    std::string input;
    std::size_t rows = 32, dims = 64;
    std::string methods = "discrete:2,discrete:4,passthrough";
    std::size_t trials = 3;
    std::uint64_t seed = 0;
    bool timing = false;
    bool csv = false;
};

std::vector<sq::BenchmarkMethod> parse_methods(const std::string& list) {
    std::vector<sq::BenchmarkMethod> methods;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        sq::BenchmarkMethod m;
        if (item == "passthrough") {
            m.kind = sq::BenchmarkMethod::Kind::Discrete;
            m.bits = 16;
        } else if (item.rfind("discrete:", 0) == 0) {
            m.kind = sq::BenchmarkMethod::Kind::Discrete;
            m.bits = std::stoi(item.substr(9));
        } else if (item.rfind("topk:", 0) == 0) {
            m.kind = sq::BenchmarkMethod::Kind::TopK;
            std::string rest = item.substr(5);
            const std::size_t colon = rest.find(':');
            if (colon == std::string::npos) {
                m.k = static_cast<std::size_t>(std::stoul(rest));
            } else {
                m.k = static_cast<std::size_t>(std::stoul(rest.substr(0, colon)));
                m.epsilon = std::stod(rest.substr(colon + 1));
            }
        } else {
            throw std::runtime_error("unknown method: " + item);
        }
        methods.push_back(m);
    }
    if (methods.empty()) throw std::runtime_error("empty method list");
    return methods;
}

void run_benchmark(const BenchmarkArgs& a) {
    sq::FeatureTensor x;
    if (!a.input.empty()) {
        x = load_tensor(a.input, a.csv);
    } else {
        sq::Rng rng(sq::mix_seed(a.seed, 0xbe6368ULL));
        std::vector<double> xv(a.rows * a.dims);
        for (double& v : xv) v = rng.normal();
        x = sq::FeatureTensor({a.rows, a.dims}, std::move(xv));
    }
    auto rows = sq::benchmark(parse_methods(a.methods), x, a.trials, a.seed);
    std::cout << sq::benchmark_csv(rows, a.timing);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feature compression toolkit for split inference"};
    app.require_subcommand(1);

    QuantizeArgs qa;
    auto* q = app.add_subcommand("quantize", "Quantize a tensor file into a features frame");
    q->add_option("--input", qa.input, "Input tensor file")->required();
    q->add_option("--out", qa.out, "Output frame file")->required();
    q->add_option("--k", qa.k, "Level count K (2..256)");
    q->add_option("--scaling", qa.scaling, "Scaling: linear|tanh");
    q->add_option("--commitment", qa.commitment, "Commitment form: cosine|squared");
    q->add_flag("--csv", qa.csv, "Read the tensor as CSV text");
    q->callback([&] { run_quantize(qa); });

    ReconstructArgs ra;
    auto* r = app.add_subcommand("reconstruct", "Rebuild the lattice tensor from a features frame");
    r->add_option("--input", ra.input, "Input frame file")->required();
    r->add_option("--out", ra.out, "Output tensor file")->required();
    r->add_flag("--csv", ra.csv, "Write the tensor as CSV text");
    r->callback([&] { run_reconstruct(ra); });

    EntropyArgs ea;
    auto* e = app.add_subcommand("entropy", "Estimate entropy and recommend a bit width");
    e->add_option("--input", ea.input, "Input tensor file")->required();
    e->add_option("--grid", ea.grid, "KDE grid points (>= 64)");
    e->add_flag("--per-dim", ea.per_dim, "Report per final-axis dimension");
    e->add_flag("--csv", ea.csv, "Read the tensor as CSV text");
    e->callback([&] { run_entropy(ea); });

    PackArgs pa;
    auto* p = app.add_subcommand("pack", "Pack integer indices at a fixed bit width");
    p->add_option("--input", pa.input, "Tensor file holding integer indices")->required();
    p->add_option("--bits", pa.bits, "Bit width (1..8)")->required();
    p->add_option("--out", pa.out, "Output packed byte file")->required();
    p->add_flag("--csv", pa.csv, "Read the tensor as CSV text");
    p->callback([&] { run_pack(pa); });

    UnpackArgs ua;
    auto* u = app.add_subcommand("unpack", "Unpack fixed-width indices back to a tensor");
    u->add_option("--input", ua.input, "Packed byte file")->required();
    u->add_option("--bits", ua.bits, "Bit width (1..8)")->required();
    u->add_option("--count", ua.count, "Number of packed values")->required();
    u->add_option("--out", ua.out, "Output tensor file")->required();
    u->add_flag("--csv", ua.csv, "Write the tensor as CSV text");
    u->callback([&] { run_unpack(ua); });

    FrameArgs fa;
    auto* f = app.add_subcommand("frame", "Inspect wire frames");
    f->add_option("--dump", fa.dump, "Hex-dump a frame file");
    f->add_option("--info", fa.info, "Decode a frame file and print its fields");
    f->callback([&] { run_frame(fa); });

    TrainArgs ta;
    auto* t = app.add_subcommand("train", "Train the toy split pipeline; loss history as CSV");
    t->add_option("--task", ta.task, "Task: autoencoder|classifier");
    t->add_option("--samples", ta.samples, "Training set size");
    t->add_option("--dims", ta.dims, "Input dimension (autoencoder)");
    t->add_option("--bottleneck", ta.bottleneck, "Split width");
    t->add_option("--k", ta.k, "Level count K");
    t->add_option("--epochs", ta.epochs, "Epoch count");
    t->add_option("--batch", ta.batch, "Batch size");
    t->add_option("--lr", ta.lr, "Learning rate");
    t->add_option("--alpha", ta.alpha, "Commitment weight");
    t->add_option("--seed", ta.seed, "Random seed");
    t->add_option("--scaling", ta.scaling, "Scaling: linear|tanh");
    t->add_option("--commitment", ta.commitment, "Commitment form: cosine|squared");
    t->add_flag("--no-quantizer", ta.no_quantizer, "Bypass the quantizer (control run)");
    t->add_option("--out", ta.out, "Save the trained model here");
    t->callback([&] { run_train(ta); });

    GradCheckArgs ga;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the surrogate gradients");
    g->add_option("--k", ga.k, "Level count K");
    g->add_option("--scaling", ga.scaling, "Scaling: linear|tanh");
    g->add_option("--commitment", ga.commitment, "Commitment form: cosine|squared");
    g->add_option("--task", ga.task, "Task: autoencoder|classifier");
    g->add_option("--alpha", ga.alpha, "Commitment weight");
    g->add_option("--perturbation", ga.perturbation, "Central difference step (1e-6..1e-2)");
    g->add_option("--seed", ga.seed, "Random seed");
    g->callback([&] { run_gradcheck(ga); });

    ServeArgs sa;
    auto* s = app.add_subcommand("serve", "Run the TCP decoder server");
    s->add_option("--address", sa.address, "Bind address (numeric IPv4)");
    s->add_option("--port", sa.port, "Bind port (0 = ephemeral, printed on stdout)");
    s->add_option("--k", sa.k, "Level count K");
    s->add_option("--model", sa.model, "Model file; its decoder half is served");
    s->add_option("--in-dim", sa.in_dim, "Random decoder input width (no --model)");
    s->add_option("--out-dim", sa.out_dim, "Random decoder output width (no --model)");
    s->add_option("--seed", sa.seed, "Random decoder seed (no --model)");
    s->add_option("--max-requests", sa.max_requests, "Stop after answering this many frames");
    s->callback([&] { run_serve(sa); });

    InferArgs ia;
    auto* i = app.add_subcommand("infer", "Run one split inference call");
    i->add_option("--input", ia.input, "Input tensor file")->required();
    i->add_option("--model", ia.model, "Model file (encoder half runs locally)")->required();
    i->add_option("--out", ia.out, "Write the result tensor here");
    i->add_option("--address", ia.address, "Server address");
    i->add_option("--port", ia.port, "Server port");
    i->add_option("--k", ia.k, "Level count K");
    i->add_option("--scaling", ia.scaling, "Scaling: linear|tanh");
    i->add_option("--timeout-ms", ia.timeout_ms, "Receive timeout");
    i->add_flag("--loopback", ia.loopback, "Serve the model's decoder in-process");
    i->add_flag("--csv", ia.csv, "CSV tensor input/output");
    i->callback([&] { run_infer(ia); });

    BenchmarkArgs ba;
    auto* b = app.add_subcommand("benchmark", "Compare transmission methods; CSV on stdout");
    b->add_option("--input", ba.input, "Feature tensor file (default: generated)");
    b->add_option("--rows", ba.rows, "Generated tensor rows");
    b->add_option("--dims", ba.dims, "Generated tensor columns");
    b->add_option("--methods", ba.methods,
                  "Comma list: discrete:B, topk:K[:EPS], passthrough");
    b->add_option("--trials", ba.trials, "Trials per method");
    b->add_option("--seed", ba.seed, "Random seed");
    b->add_flag("--timing", ba.timing, "Add a wall-time column (breaks byte-identical output)");
    b->add_flag("--csv", ba.csv, "Read --input as CSV text");
    b->callback([&] { run_benchmark(ba); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& help) {
        return app.exit(help);
    } catch (const CLI::CallForAllHelp& help) {
        return app.exit(help);
    } catch (const CLI::ParseError& err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
