#ifndef EMAE_MASK_HPP
#define EMAE_MASK_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace emae {

// One draw of the parallel mask strategy: a seeded uniform vector is argsorted
// and the sorted index list is sliced into k equal disjoint visible parts.
// masks[i][p] == 1 means patch p is masked (hidden) for part i.
struct MaskPartition {
    int n_patches = 0;
    int k_parts = 0;
    std::vector<double> rand_values;            // length n_patches, in [0,1)
    std::vector<int> sorted_ids;                // permutation of 0..n-1
    std::vector<std::vector<int>> parts;        // k slices of n/k indices
    std::vector<std::vector<uint8_t>> masks;    // k binary vectors of length n

    int part_size() const { return n_patches / k_parts; }
};

// Positions masked in both part i and part j; the positions both parts
// predict, where consistency between predictions is enforced.
struct OverlapSet {
    int part_i = 0;
    int part_j = 0;
    std::vector<uint8_t> positions;  // binary, length n_patches

    int count() const;
    std::vector<int> indices() const;
};

struct MaskStrategy {
    enum class Kind { Parallel, SingleRandom, PureRandomRepeated, Complementary };

    Kind kind = Kind::Parallel;
    int times = 1;        // PureRandomRepeated: draw count; Parallel: k
    double ratio = 0.75;  // SingleRandom/PureRandomRepeated: mask ratio;
                          // Complementary: visible fraction of the first draw

    static MaskStrategy parallel(int k = 4);
    static MaskStrategy single_random(double mask_ratio);
    static MaskStrategy pure_random(int times, double mask_ratio);
    static MaskStrategy complementary(double first_visible_fraction);

    // Accepts "parallel", "single-random", "pure-random", "complementary".
    // For "parallel" the times argument carries k.
    static MaskStrategy parse(const std::string& name, int times, double ratio);
    std::string name() const;
};

// One mask draw usable by the trainer regardless of strategy.
struct MaskDraw {
    std::vector<int> visible;      // visible patch indices
    std::vector<uint8_t> mask;     // length n, 1 = masked
};

MaskPartition generate_partition(int n_patches, int k_parts, uint64_t seed);

// Per-part mask ratio, (k-1)/k.
double mask_ratio(const MaskPartition& partition);

OverlapSet overlap(const MaskPartition& partition, int i, int j);

// Elementwise AND of two arbitrary mask vectors; equals overlap() on a
// partition's masks but also serves the ablation strategies.
std::vector<uint8_t> mask_intersection(const std::vector<uint8_t>& a,
                                       const std::vector<uint8_t>& b);

std::vector<MaskDraw> generate_ablation_masks(const MaskStrategy& kind,
                                              int n_patches, uint64_t seed);

// A partition viewed as k MaskDraws (visible = parts[i], mask = masks[i]).
std::vector<MaskDraw> partition_draws(const MaskPartition& partition);

struct CoverageStats {
    double coverage = 0.0;          // |union of visible sets| / n
    std::vector<int> visit_counts;  // per-patch visible count across draws
};

CoverageStats coverage_stats(const std::vector<std::vector<int>>& draws, int n_patches);

}  // namespace emae

#endif  // EMAE_MASK_HPP
