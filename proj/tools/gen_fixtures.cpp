// Regenerates the binary fixtures under tests/fixtures/.  The outputs are
// committed; rerun this only when the formats or the sample recipes change.
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "splitquant/splitquant.hpp"

namespace sq = splitquant;

namespace {

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
    std::printf("wrote %s (%zu bytes)\n", path.c_str(), bytes.size());
}

}  // namespace

int main(int argc, char** argv) {
    const std::string dir = argc > 1 ? argv[1] : "tests/fixtures";

    // 8192 normal samples whose differential entropy sits just under 2 bits,
    // so the recommended width is exactly 2.  Seed and sigma are load-bearing
    // for the tests that read this file.
    {
        const double sigma = std::pow(2.0, 1.82 - sq::normal_entropy_bits());
        sq::Rng rng(31);
        std::vector<double> samples(8192);
        for (double& v : samples) v = rng.normal(0.0, sigma);
        sq::save_tensor_file(dir + "/entropy_batch.bin",
                             sq::FeatureTensor::flat(std::move(samples)));
        std::printf("wrote %s/entropy_batch.bin (sigma=%.7f)\n", dir.c_str(), sigma);
    }

    // Three-point ramp used by the quantize/reconstruct round-trip goldens.
    sq::save_tensor_file(dir + "/t3.bin", sq::FeatureTensor::flat({0.0, 5.0, 10.0}));
    std::printf("wrote %s/t3.bin\n", dir.c_str());

    // Fixed 2x4 input for the split-inference goldens.
    sq::save_tensor_file(dir + "/infer_input.bin",
                         sq::FeatureTensor({2, 4}, {0.5, -1.25, 2.0, 0.0,
                                                    -0.75, 1.5, -2.0, 0.25}));
    std::printf("wrote %s/infer_input.bin\n", dir.c_str());

    // Small deterministic model: encoder 4 -> 3, decoder 3 -> 4, identity
    // activations.  Served and loaded by the CLI tests.
    {
        sq::Rng rng(sq::mix_seed(7, 0x6d6f64656cULL));
        std::vector<sq::DenseLayer> enc, dec;
        enc.push_back(sq::make_layer(3, 4, sq::Activation::Identity, rng));
        dec.push_back(sq::make_layer(4, 3, sq::Activation::Identity, rng));
        sq::save_model(dir + "/golden.model", enc, dec);
        std::printf("wrote %s/golden.model\n", dir.c_str());
    }

    // Canned wire frames for decoder tests.
    {
        sq::QuantizerConfig qcfg;
        qcfg.levels = 3;
        sq::FeatureTensor t = sq::FeatureTensor::flat({0.0, 5.0, 10.0});
        sq::QuantizeOutput q = sq::quantize(t, qcfg);
        sq::FeaturesBody body;
        body.request_id = 0;
        body.levels = 3;
        body.shape = {3};
        body.packed = sq::pack(q.block.indices, sq::bits_for_levels(3));
        write_bytes(dir + "/golden_features.frame",
                    sq::encode_frame(sq::WireFrame::features(std::move(body))));

        sq::ErrorBody err;
        err.code = sq::kErrCorrupt;
        err.message = "corrupt block";
        write_bytes(dir + "/golden_error.frame",
                    sq::encode_frame(sq::WireFrame::error(std::move(err))));
    }

    return 0;
}
