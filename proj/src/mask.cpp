#include "emae/mask.hpp"

#include <algorithm>
#include <numeric>

#include "emae/errors.hpp"
#include "emae/rng.hpp"

namespace emae {

int OverlapSet::count() const {
    int c = 0;
    for (uint8_t v : positions) c += v;
    return c;
}

std::vector<int> OverlapSet::indices() const {
    std::vector<int> out;
    for (int p = 0; p < static_cast<int>(positions.size()); ++p) {
        if (positions[p]) out.push_back(p);
    }
    return out;
}

MaskStrategy MaskStrategy::parallel(int k) { return {Kind::Parallel, k, 0.0}; }

MaskStrategy MaskStrategy::single_random(double mask_ratio) {
    return {Kind::SingleRandom, 1, mask_ratio};
}

MaskStrategy MaskStrategy::pure_random(int times, double mask_ratio) {
    return {Kind::PureRandomRepeated, times, mask_ratio};
}

MaskStrategy MaskStrategy::complementary(double first_visible_fraction) {
    return {Kind::Complementary, 2, first_visible_fraction};
}

MaskStrategy MaskStrategy::parse(const std::string& name, int times, double ratio) {
    if (name == "parallel") return parallel(times);
    if (name == "single-random") return single_random(ratio);
    if (name == "pure-random") return pure_random(times, ratio);
    if (name == "complementary") return complementary(ratio);
    throw ConfigError("unknown mask strategy '" + name +
                      "' (expected parallel, single-random, pure-random, complementary)");
}

std::string MaskStrategy::name() const {
    switch (kind) {
        case Kind::Parallel: return "parallel";
        case Kind::SingleRandom: return "single-random";
        case Kind::PureRandomRepeated: return "pure-random";
        case Kind::Complementary: return "complementary";
    }
    return "?";
}

namespace {

// Argsort ascending by value, ties broken by original index so the result is
// deterministic even on degenerate inputs.
std::vector<int> argsort_stable(const std::vector<double>& values) {
    std::vector<int> ids(values.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](int a, int b) { return values[a] < values[b]; });
    return ids;
}

// Count of patches that must land in the visible set for a given mask ratio.
int visible_count(int n_patches, double ratio_masked) {
    double exact = static_cast<double>(n_patches) * ratio_masked;
    double rounded = std::round(exact);
    if (std::abs(exact - rounded) > 1e-9) {
        throw ConfigError("mask ratio " + std::to_string(ratio_masked) +
                          " times n_patches " + std::to_string(n_patches) +
                          " is not an integer");
    }
    int masked = static_cast<int>(rounded);
    if (masked <= 0 || masked >= n_patches) {
        throw ConfigError("mask ratio " + std::to_string(ratio_masked) +
                          " leaves no visible or no masked patches for n=" +
                          std::to_string(n_patches));
    }
    return n_patches - masked;
}

MaskDraw draw_from_prefix(const std::vector<int>& sorted_ids, int n_visible, int n_patches) {
    MaskDraw d;
    d.visible.assign(sorted_ids.begin(), sorted_ids.begin() + n_visible);
    d.mask.assign(n_patches, 1);
    for (int p : d.visible) d.mask[p] = 0;
    return d;
}

}  // namespace

MaskPartition generate_partition(int n_patches, int k_parts, uint64_t seed) {
    if (k_parts < 2) {
        throw ConfigError("k_parts must be >= 2, got " + std::to_string(k_parts));
    }
    if (n_patches <= 0 || n_patches % k_parts != 0) {
        throw ConfigError("n_patches " + std::to_string(n_patches) +
                          " is not divisible by k_parts " + std::to_string(k_parts));
    }

    MaskPartition part;
    part.n_patches = n_patches;
    part.k_parts = k_parts;

    CounterRng rng(seed);
    part.rand_values.resize(n_patches);
    for (double& v : part.rand_values) v = rng.next_unit();

    part.sorted_ids = argsort_stable(part.rand_values);

    const int c = n_patches / k_parts;
    part.parts.resize(k_parts);
    part.masks.assign(k_parts, std::vector<uint8_t>(n_patches, 1));
    for (int i = 0; i < k_parts; ++i) {
        part.parts[i].assign(part.sorted_ids.begin() + i * c,
                             part.sorted_ids.begin() + (i + 1) * c);
        for (int p : part.parts[i]) part.masks[i][p] = 0;
    }
    return part;
}

double mask_ratio(const MaskPartition& partition) {
    return static_cast<double>(partition.k_parts - 1) / partition.k_parts;
}

OverlapSet overlap(const MaskPartition& partition, int i, int j) {
    const int k = partition.k_parts;
    if (i < 0 || i >= k || j < 0 || j >= k) {
        throw ConfigError("overlap part index out of range: i=" + std::to_string(i) +
                          " j=" + std::to_string(j) + " k=" + std::to_string(k));
    }
    if (i == j) {
        throw ConfigError("overlap requires two distinct parts, got i=j=" + std::to_string(i));
    }
    OverlapSet s;
    s.part_i = i;
    s.part_j = j;
    s.positions = mask_intersection(partition.masks[i], partition.masks[j]);
    return s;
}

std::vector<uint8_t> mask_intersection(const std::vector<uint8_t>& a,
                                       const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("mask_intersection length mismatch: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    }
    std::vector<uint8_t> out(a.size());
    for (size_t p = 0; p < a.size(); ++p) out[p] = a[p] & b[p];
    return out;
}

std::vector<MaskDraw> generate_ablation_masks(const MaskStrategy& kind,
                                              int n_patches, uint64_t seed) {
    if (n_patches <= 0) {
        throw ConfigError("n_patches must be positive, got " + std::to_string(n_patches));
    }
    std::vector<MaskDraw> draws;
    switch (kind.kind) {
        case MaskStrategy::Kind::Parallel:
            return partition_draws(generate_partition(n_patches, kind.times, seed));
        case MaskStrategy::Kind::SingleRandom: {
            int vis = visible_count(n_patches, kind.ratio);
            CounterRng rng(seed);
            std::vector<double> t(n_patches);
            for (double& v : t) v = rng.next_unit();
            draws.push_back(draw_from_prefix(argsort_stable(t), vis, n_patches));
            break;
        }
        case MaskStrategy::Kind::PureRandomRepeated: {
            if (kind.times < 1) {
                throw ConfigError("pure-random needs times >= 1, got " +
                                  std::to_string(kind.times));
            }
            int vis = visible_count(n_patches, kind.ratio);
            for (int d = 0; d < kind.times; ++d) {
                CounterRng rng(CounterRng::derive(seed, static_cast<uint64_t>(d)));
                std::vector<double> t(n_patches);
                for (double& v : t) v = rng.next_unit();
                draws.push_back(draw_from_prefix(argsort_stable(t), vis, n_patches));
            }
            break;
        }
        case MaskStrategy::Kind::Complementary: {
            // First draw keeps `ratio` of the patches visible, second draw is
            // its exact complement.
            int first_vis = visible_count(n_patches, 1.0 - kind.ratio);
            CounterRng rng(seed);
            std::vector<double> t(n_patches);
            for (double& v : t) v = rng.next_unit();
            std::vector<int> ids = argsort_stable(t);
            draws.push_back(draw_from_prefix(ids, first_vis, n_patches));
            MaskDraw second;
            second.visible.assign(ids.begin() + first_vis, ids.end());
            second.mask.assign(n_patches, 1);
            for (int p : second.visible) second.mask[p] = 0;
            draws.push_back(std::move(second));
            break;
        }
    }
    return draws;
}

std::vector<MaskDraw> partition_draws(const MaskPartition& partition) {
    std::vector<MaskDraw> draws(partition.k_parts);
    for (int i = 0; i < partition.k_parts; ++i) {
        draws[i].visible = partition.parts[i];
        draws[i].mask = partition.masks[i];
    }
    return draws;
}

CoverageStats coverage_stats(const std::vector<std::vector<int>>& draws, int n_patches) {
    CoverageStats stats;
    stats.visit_counts.assign(n_patches, 0);
    for (const auto& draw : draws) {
        for (int p : draw) {
            if (p < 0 || p >= n_patches) {
                throw ConfigError("coverage_stats index " + std::to_string(p) +
                                  " out of range for n=" + std::to_string(n_patches));
            }
            ++stats.visit_counts[p];
        }
    }
    int covered = 0;
    for (int c : stats.visit_counts) covered += (c > 0);
    stats.coverage = n_patches > 0 ? static_cast<double>(covered) / n_patches : 0.0;
    return stats;
}

}  // namespace emae
