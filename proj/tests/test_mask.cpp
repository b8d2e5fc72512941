#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "emae/errors.hpp"
#include "emae/mask.hpp"
#include "emae/rng.hpp"

using namespace emae;

namespace {

// Literal transcription of the sort-and-slice mask generation: draw uniforms,
// argsort, slice the index list, and build each mask by setting a prefix
// window to zero and gathering it back through the inverse permutation. Kept
// deliberately naive and separate from the production path.
struct OraclePartition {
    std::vector<std::vector<int>> parts;
    std::vector<std::vector<uint8_t>> masks;
};

OraclePartition oracle_partition(int n, int k, uint64_t seed) {
    CounterRng rng(seed);
    std::vector<double> t(n);
    for (double& v : t) v = rng.next_unit();

    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return t[a] < t[b]; });

    // position of each element in the sorted order (argsort of argsort)
    std::vector<int> ids_tensor(n);
    std::iota(ids_tensor.begin(), ids_tensor.end(), 0);
    std::stable_sort(ids_tensor.begin(), ids_tensor.end(),
                     [&](int a, int b) { return ids[a] < ids[b]; });

    OraclePartition out;
    const int c = n / k;
    for (int i = 1; i <= k; ++i) {
        std::vector<int> ids_i(ids.begin() + (i - 1) * c, ids.begin() + i * c);
        std::vector<uint8_t> m_sorted(n, 1);
        for (int j = (i - 1) * c; j < i * c; ++j) m_sorted[j] = 0;
        std::vector<uint8_t> m_i(n);
        for (int p = 0; p < n; ++p) m_i[p] = m_sorted[ids_tensor[p]];
        out.parts.push_back(std::move(ids_i));
        out.masks.push_back(std::move(m_i));
    }
    return out;
}

void check_partition_invariants(const MaskPartition& part) {
    const int n = part.n_patches, k = part.k_parts, c = n / k;
    std::set<int> seen;
    for (int i = 0; i < k; ++i) {
        CHECK(static_cast<int>(part.parts[i].size()) == c);
        for (int p : part.parts[i]) {
            CHECK(p >= 0);
            CHECK(p < n);
            CHECK(seen.insert(p).second);  // disjoint
        }
        int ones = 0;
        for (int p = 0; p < n; ++p) {
            bool in_part = std::find(part.parts[i].begin(), part.parts[i].end(), p) !=
                           part.parts[i].end();
            CHECK(part.masks[i][p] == (in_part ? 0 : 1));
            ones += part.masks[i][p];
        }
        CHECK(ones == n - c);
    }
    CHECK(static_cast<int>(seen.size()) == n);  // complete
}

}  // namespace

TEST_CASE("partition matches config and invariants at default scale") {
    MaskPartition part = generate_partition(196, 4, 17);
    CHECK(part.part_size() == 49);
    for (int i = 0; i < 4; ++i) {
        int ones = 0;
        for (uint8_t m : part.masks[i]) ones += m;
        CHECK(ones == 147);
    }
    check_partition_invariants(part);
}

TEST_CASE("n equal to k gives singleton parts") {
    MaskPartition part = generate_partition(4, 4, 0);
    for (const auto& p : part.parts) CHECK(p.size() == 1);
    check_partition_invariants(part);
}

TEST_CASE("partition agrees with sort-and-slice oracle") {
    MaskPartition part = generate_partition(8, 2, 7);
    OraclePartition oracle = oracle_partition(8, 2, 7);
    CHECK(part.parts == oracle.parts);
    CHECK(part.masks == oracle.masks);
    check_partition_invariants(part);
}

TEST_CASE("oracle equivalence over many random configurations") {
    CounterRng cfg_rng(2024);
    const int ks[] = {2, 4, 7, 8, 14, 16};
    for (int trial = 0; trial < 300; ++trial) {
        int k = ks[cfg_rng.next_below(6)];
        int mult = 1 + static_cast<int>(cfg_rng.next_below(256 / k));
        int n = k * mult;
        uint64_t seed = cfg_rng.next_u64();
        MaskPartition part = generate_partition(n, k, seed);
        OraclePartition oracle = oracle_partition(n, k, seed);
        REQUIRE(part.parts == oracle.parts);
        REQUIRE(part.masks == oracle.masks);
    }
}

TEST_CASE("same seed is bit-identical, different seed differs") {
    MaskPartition a = generate_partition(64, 4, 5);
    MaskPartition b = generate_partition(64, 4, 5);
    CHECK(a.rand_values == b.rand_values);
    CHECK(a.parts == b.parts);
    MaskPartition c = generate_partition(64, 4, 6);
    CHECK(a.parts != c.parts);
}

TEST_CASE("invalid configurations are rejected") {
    CHECK_THROWS_AS(generate_partition(8, 1, 0), ConfigError);
    CHECK_THROWS_AS(generate_partition(8, 3, 0), ConfigError);
    CHECK_THROWS_AS(generate_partition(0, 2, 0), ConfigError);
}

TEST_CASE("mask ratio is (k-1)/k") {
    CHECK(mask_ratio(generate_partition(16, 4, 0)) == 0.75);
    CHECK(mask_ratio(generate_partition(14, 7, 0)) == doctest::Approx(6.0 / 7.0).epsilon(1e-15));
    CHECK(mask_ratio(generate_partition(14, 14, 0)) == doctest::Approx(13.0 / 14.0).epsilon(1e-15));
    CHECK(mask_ratio(generate_partition(16, 2, 0)) == 0.5);
}

TEST_CASE("overlap counts and symmetry") {
    MaskPartition part = generate_partition(196, 4, 3);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            if (i == j) continue;
            OverlapSet s = overlap(part, i, j);
            CHECK(s.count() == 98);  // n - 2n/k
            CHECK(s.positions == overlap(part, j, i).positions);
        }
    }
    // ratio relative to one part's predicted positions
    double ratio = 98.0 / (196 - 49);
    CHECK(ratio == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("complementary halves have empty overlap") {
    MaskPartition part = generate_partition(16, 2, 11);
    CHECK(overlap(part, 0, 1).count() == 0);
}

TEST_CASE("overlap equals brute-force set intersection") {
    MaskPartition part = generate_partition(12, 3, 99);
    OverlapSet s = overlap(part, 0, 2);
    CHECK(s.count() == 4);
    std::set<int> masked0, masked2, inter;
    for (int p = 0; p < 12; ++p) {
        if (part.masks[0][p]) masked0.insert(p);
        if (part.masks[2][p]) masked2.insert(p);
    }
    for (int p : masked0) {
        if (masked2.count(p)) inter.insert(p);
    }
    std::vector<int> idx = s.indices();
    std::set<int> got(idx.begin(), idx.end());
    CHECK(got == inter);
}

TEST_CASE("overlap rejects equal part indices") {
    MaskPartition part = generate_partition(8, 2, 0);
    CHECK_THROWS_AS(overlap(part, 1, 1), ConfigError);
    CHECK_THROWS_AS(overlap(part, 0, 2), ConfigError);
}

TEST_CASE("single random draw at ratio 0.75") {
    auto draws = generate_ablation_masks(MaskStrategy::single_random(0.75), 4, 5);
    REQUIRE(draws.size() == 1);
    CHECK(draws[0].visible.size() == 1);
    int masked = 0;
    for (uint8_t m : draws[0].mask) masked += m;
    CHECK(masked == 3);
}

TEST_CASE("complementary draws partition the patch set") {
    auto draws = generate_ablation_masks(MaskStrategy::complementary(0.25), 196, 1);
    REQUIRE(draws.size() == 2);
    CHECK(draws[0].visible.size() == 49);
    CHECK(draws[1].visible.size() == 147);
    std::set<int> all;
    for (const auto& d : draws) all.insert(d.visible.begin(), d.visible.end());
    CHECK(all.size() == 196);
    for (int p = 0; p < 196; ++p) {
        CHECK((draws[0].mask[p] ^ draws[1].mask[p]) == 1);
    }
}

TEST_CASE("pure random repeated draws may overlap and may not cover") {
    auto draws = generate_ablation_masks(MaskStrategy::pure_random(4, 0.75), 196, 7);
    REQUIRE(draws.size() == 4);
    std::vector<std::vector<int>> vis;
    for (const auto& d : draws) {
        CHECK(d.visible.size() == 49);
        vis.push_back(d.visible);
    }
    CoverageStats stats = coverage_stats(vis, 196);
    CHECK(stats.coverage <= 1.0);
    int total = 0;
    for (int c : stats.visit_counts) total += c;
    CHECK(total == 4 * 49);
}

TEST_CASE("non-integer mask count rejected") {
    CHECK_THROWS_AS(generate_ablation_masks(MaskStrategy::single_random(0.8), 194, 0),
                    ConfigError);
}

TEST_CASE("parallel draws cover every patch exactly once") {
    auto draws = partition_draws(generate_partition(32, 4, 9));
    std::vector<std::vector<int>> vis;
    for (const auto& d : draws) vis.push_back(d.visible);
    CoverageStats stats = coverage_stats(vis, 32);
    CHECK(stats.coverage == 1.0);
    for (int c : stats.visit_counts) CHECK(c == 1);
}

TEST_CASE("pure random coverage approaches the independent-draw expectation") {
    // Monte-Carlo estimate over seeds; expectation 1 - 0.75^4.
    const int n_seeds = 2000;
    double acc = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
        auto draws = generate_ablation_masks(MaskStrategy::pure_random(4, 0.75), 196, 1000 + s);
        std::vector<std::vector<int>> vis;
        for (const auto& d : draws) vis.push_back(d.visible);
        acc += coverage_stats(vis, 196).coverage;
    }
    double mean = acc / n_seeds;
    CHECK(mean == doctest::Approx(1.0 - 0.31640625).epsilon(0.02));
}

TEST_CASE("per-patch part assignment is uniform") {
    // Light version of the acceptance chi-square: 8000 seeds, n=16, k=4.
    const int n = 16, k = 4, n_seeds = 8000;
    std::vector<std::vector<int>> counts(n, std::vector<int>(k, 0));
    for (int s = 0; s < n_seeds; ++s) {
        MaskPartition part = generate_partition(n, k, s);
        for (int i = 0; i < k; ++i) {
            for (int p : part.parts[i]) ++counts[p][i];
        }
    }
    const double expected = static_cast<double>(n_seeds) / k;
    for (int p = 0; p < n; ++p) {
        double chi2 = 0.0;
        for (int i = 0; i < k; ++i) {
            double d = counts[p][i] - expected;
            chi2 += d * d / expected;
        }
        CHECK(chi2 < 16.266);  // chi-square 0.999 quantile, 3 dof
    }
}

TEST_CASE("strategy parsing round-trips") {
    CHECK(MaskStrategy::parse("parallel", 4, 0).kind == MaskStrategy::Kind::Parallel);
    CHECK(MaskStrategy::parse("single-random", 1, 0.75).ratio == 0.75);
    CHECK(MaskStrategy::parse("pure-random", 4, 0.75).times == 4);
    CHECK(MaskStrategy::parse("complementary", 2, 0.25).kind ==
          MaskStrategy::Kind::Complementary);
    CHECK_THROWS_AS(MaskStrategy::parse("blockwise", 1, 0.5), ConfigError);
}
