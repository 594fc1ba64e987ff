#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beamsel/beamformer.hpp"
#include "beamsel/linalg.hpp"

namespace beamsel {

// One size-n_rs subset of the receive antennas. `id` is the lexicographic
// rank of the combination among C(n_r, n_rs).
struct SubarrayConfig {
  std::vector<int> indices;  // strictly increasing
  std::uint64_t id = 0;

  bool operator==(const SubarrayConfig& other) const {
    return indices == other.indices;
  }
};

// C(n, k) in checked arithmetic; throws CombinatorialOverflow past 2^63-1.
std::uint64_t binomial_checked(int n, int k);

// Lexicographic rank of a strictly increasing index set.
std::uint64_t combination_rank(const std::vector<int>& indices, int n);

// Inverse of combination_rank.
std::vector<int> combination_unrank(std::uint64_t rank, int n, int k);

// Streams all C(n_r, n_rs) combinations in lexicographic order without
// materializing them.
class SubarrayEnumerator {
 public:
  SubarrayEnumerator(int n_r, int n_rs);
  std::uint64_t total() const { return total_; }
  // Next configuration, or nullopt when exhausted.
  std::optional<SubarrayConfig> next();

 private:
  int n_r_;
  int n_rs_;
  std::uint64_t total_;
  std::uint64_t emitted_ = 0;
  std::vector<int> current_;
};

// Materialized enumeration; refuses more than 2^31 configurations.
std::vector<SubarrayConfig> enumerate_subarrays(int n_r, int n_rs);

struct SelectionObjective {
  enum class Kind { Unconstrained, Hybrid };
  Kind kind = Kind::Unconstrained;
  MoSettings mo;

  static SelectionObjective unconstrained() { return {}; }
  static SelectionObjective hybrid(const MoSettings& settings) {
    return {Kind::Hybrid, settings};
  }
};

struct BlockBest {
  std::uint64_t block = 0;
  std::uint64_t id = 0;
  double rate = 0.0;
};

struct SelectionResult {
  SubarrayConfig best;
  double rate = 0.0;
  std::uint64_t evaluated = 0;
  std::uint64_t skipped = 0;  // rank-deficient subarrays excluded
  std::vector<BlockBest> per_block_best;
};

CMat select_rows(const CMat& h, const std::vector<int>& indices);

// Exhaustive best-subarray search processed in blocks of `block_size`
// configurations, keeping only the running argmax between blocks. Ties break
// toward the smaller id. Identical to a direct argmax over all
// configurations. Set allow_large to scan past 2^31 configurations.
SelectionResult select_best_subarray(const CMat& h, const SystemDims& dims,
                                     const SelectionObjective& obj,
                                     std::uint64_t block_size,
                                     bool allow_large = false);

// Deduplicated best configs in first-seen order; defines the classifier's
// class labels.
std::vector<SubarrayConfig> observed_class_set(
    const std::vector<SelectionResult>& results);

enum class SelectionScheme { Random, Magnitude, Greedy };

// Baseline selection schemes: uniform-random subarray, per-row L1-mass
// ranking, and greedy growth by the unconstrained objective.
SubarrayConfig baseline_select(const CMat& h, const SystemDims& dims,
                               SelectionScheme scheme, std::uint64_t seed = 0);

// CSV row: scheme, n_r, n_rs, best_id, indices (semicolon-joined), rate_bits.
std::string selection_csv_row(const std::string& scheme, const SystemDims& dims,
                              const SubarrayConfig& config, double rate_bits);

}  // namespace beamsel
