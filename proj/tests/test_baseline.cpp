#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "splitquant/baseline.hpp"

namespace sq = splitquant;

TEST_CASE("top-k keeps the largest magnitudes sorted by index") {
    sq::Rng rng(1);
    const std::vector<double> x{0.1, -5.0, 0.3, 4.0, -0.2, 2.5};
    auto s = sq::topk_sparsify(x, 3, 0.0, rng);
    REQUIRE(s.dims == 6);
    REQUIRE(s.indices == std::vector<std::uint32_t>{1, 3, 5});
    REQUIRE(s.values == std::vector<double>{-5.0, 4.0, 2.5});
}

TEST_CASE("top-k magnitude ties break toward the lower index") {
    sq::Rng rng(2);
    const std::vector<double> x{1.0, -1.0, 1.0, -1.0};
    auto s = sq::topk_sparsify(x, 2, 0.0, rng);
    REQUIRE(s.indices == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("top-k argument validation") {
    sq::Rng rng(3);
    const std::vector<double> x{1.0, 2.0};
    REQUIRE_THROWS_WITH(sq::topk_sparsify(std::vector<double>{}, 1, 0.0, rng), "empty input");
    REQUIRE_THROWS_WITH(sq::topk_sparsify(x, 0, 0.0, rng), "invalid k");
    REQUIRE_THROWS_WITH(sq::topk_sparsify(x, 3, 0.0, rng), "invalid k");
    REQUIRE_THROWS_WITH(sq::topk_sparsify(x, 1, -0.1, rng), "epsilon out of range");
    REQUIRE_THROWS_WITH(sq::topk_sparsify(x, 1, 1.5, rng), "epsilon out of range");
    REQUIRE_NOTHROW(sq::topk_sparsify(x, 1, 1.0, rng));
    REQUIRE_NOTHROW(sq::topk_sparsify(x, 2, 0.5, rng));
}

TEST_CASE("epsilon replacement never duplicates indices") {
    sq::Rng rng(7);
    std::vector<double> x(32);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i) - 16.0;
    for (int rep = 0; rep < 500; ++rep) {
        auto s = sq::topk_sparsify(x, 8, 0.7, rng);
        REQUIRE(s.k() == 8);
        std::set<std::uint32_t> uniq(s.indices.begin(), s.indices.end());
        REQUIRE(uniq.size() == 8);
        REQUIRE(std::is_sorted(s.indices.begin(), s.indices.end()));
        for (std::size_t i = 0; i < s.indices.size(); ++i)
            REQUIRE(s.values[i] == x[s.indices[i]]);
    }
}

TEST_CASE("epsilon one with k equal dims keeps the full set") {
    // The outside pool is empty, so replacement can never fire.
    sq::Rng rng(9);
    const std::vector<double> x{3.0, -1.0, 2.0};
    auto s = sq::topk_sparsify(x, 3, 1.0, rng);
    REQUIRE(s.indices == std::vector<std::uint32_t>{0, 1, 2});
    REQUIRE(s.values == std::vector<double>{3.0, -1.0, 2.0});
}

TEST_CASE("densify inverts sparsify on the kept entries") {
    sq::Rng rng(11);
    const std::vector<double> x{0.0, 7.0, 0.0, -3.0, 1.0};
    auto s = sq::topk_sparsify(x, 2, 0.0, rng);
    auto d = sq::densify(s);
    REQUIRE(d.data() == std::vector<double>{0.0, 7.0, 0.0, -3.0, 0.0});
    REQUIRE(d.shape() == std::vector<std::size_t>{5});
}

TEST_CASE("densify validation") {
    sq::SparseFeatures s;
    REQUIRE_THROWS_WITH(sq::densify(s), "empty input");
    s.dims = 4;
    s.indices = {0, 1};
    s.values = {1.0};
    REQUIRE_THROWS_WITH(sq::densify(s), "length mismatch");
    s.values = {1.0, 2.0};
    s.indices = {0, 4};
    REQUIRE_THROWS_WITH(sq::densify(s), "index out of range");
}

TEST_CASE("tensor overload flattens any rank") {
    sq::Rng rng(13);
    sq::FeatureTensor t({2, 3}, {9, 0, 0, 0, -8, 0});
    auto s = sq::topk_sparsify(t, 2, 0.0, rng);
    REQUIRE(s.dims == 6);
    REQUIRE(s.indices == std::vector<std::uint32_t>{0, 4});
}

TEST_CASE("top-k wire cost formula") {
    REQUIRE(sq::topk_wire_bits(8, 64) == 8 * (16 + 6));
    REQUIRE(sq::topk_wire_bits(1, 1) == 16);
    REQUIRE(sq::topk_wire_bits(3, 9) == 3 * (16 + 4));
    REQUIRE(sq::topk_wire_bits(2, 2) == 2 * (16 + 1));
    REQUIRE_THROWS_WITH(sq::topk_wire_bits(0, 4), "invalid k");
    REQUIRE_THROWS_WITH(sq::topk_wire_bits(5, 4), "invalid k");
}

TEST_CASE("replacement frequency tracks epsilon", "[heavy]") {
    // With dims >> k the pool never runs dry, so each slot is replaced with
    // probability epsilon exactly.
    sq::Rng rng(404);
    const std::size_t dims = 64, k = 8, trials = 1000;
    const double eps = 0.1;
    std::vector<double> x(dims);
    for (std::size_t i = 0; i < dims; ++i) x[i] = static_cast<double>(dims - i);

    std::size_t replaced = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        auto s = sq::topk_sparsify(x, k, eps, rng);
        for (auto idx : s.indices)
            if (idx >= k) ++replaced;
    }
    const double frac = static_cast<double>(replaced) / static_cast<double>(trials * k);
    const double se = std::sqrt(eps * (1 - eps) / static_cast<double>(trials * k));
    REQUIRE(std::fabs(frac - eps) < 3.0 * se + 1e-12);
}
