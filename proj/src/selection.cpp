#include "beamsel/selection.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>

#include "beamsel/errors.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

namespace {

constexpr std::uint64_t kEnumerationCap = 1ULL << 31;

double objective_rate(const CMat& h_sub, const SystemDims& dims,
                      const SelectionObjective& obj) {
  if (obj.kind == SelectionObjective::Kind::Unconstrained)
    return rate_with_unconstrained(h_sub, dims);
  const auto bf = design_hybrid(h_sub, dims, obj.mo);
  return spectral_efficiency(h_sub, bf, dims);
}

}  // namespace

std::uint64_t binomial_checked(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 c = 1;
  for (int i = 1; i <= k; ++i) {
    c = c * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
    if (c > static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max()))
      throw CombinatorialOverflow("C(n, k) exceeds 2^63 - 1");
  }
  return static_cast<std::uint64_t>(c);
}

std::uint64_t combination_rank(const std::vector<int>& indices, int n) {
  const int k = static_cast<int>(indices.size());
  std::uint64_t rank = 0;
  int prev = -1;
  for (int i = 0; i < k; ++i) {
    for (int v = prev + 1; v < indices[i]; ++v)
      rank += binomial_checked(n - 1 - v, k - 1 - i);
    prev = indices[i];
  }
  return rank;
}

std::vector<int> combination_unrank(std::uint64_t rank, int n, int k) {
  std::vector<int> indices;
  indices.reserve(static_cast<std::size_t>(k));
  int v = 0;
  for (int i = 0; i < k; ++i) {
    for (;; ++v) {
      const std::uint64_t below = binomial_checked(n - 1 - v, k - 1 - i);
      if (rank < below) break;
      rank -= below;
    }
    indices.push_back(v++);
  }
  return indices;
}

SubarrayEnumerator::SubarrayEnumerator(int n_r, int n_rs)
    : n_r_(n_r), n_rs_(n_rs), total_(0) {
  if (n_rs <= 0 || n_rs > n_r)
    throw ConfigError("need 0 < n_rs <= n_r for enumeration");
  total_ = binomial_checked(n_r, n_rs);
}

std::optional<SubarrayConfig> SubarrayEnumerator::next() {
  if (emitted_ >= total_) return std::nullopt;
  if (emitted_ == 0) {
    current_.resize(static_cast<std::size_t>(n_rs_));
    std::iota(current_.begin(), current_.end(), 0);
  } else {
    // Lexicographic successor: bump the rightmost index with headroom.
    int i = n_rs_ - 1;
    while (current_[static_cast<std::size_t>(i)] == n_r_ - n_rs_ + i) --i;
    ++current_[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n_rs_; ++j)
      current_[static_cast<std::size_t>(j)] =
          current_[static_cast<std::size_t>(j - 1)] + 1;
  }
  return SubarrayConfig{current_, emitted_++};
}

std::vector<SubarrayConfig> enumerate_subarrays(int n_r, int n_rs) {
  SubarrayEnumerator en(n_r, n_rs);
  if (en.total() > kEnumerationCap)
    throw CombinatorialOverflow(
        "too many configurations to materialize; use blocked streaming");
  std::vector<SubarrayConfig> out;
  out.reserve(static_cast<std::size_t>(en.total()));
  while (auto cfg = en.next()) out.push_back(std::move(*cfg));
  return out;
}

CMat select_rows(const CMat& h, const std::vector<int>& indices) {
  CMat sub(static_cast<Eigen::Index>(indices.size()), h.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= h.rows())
      throw ShapeMismatch("row index out of range");
    sub.row(static_cast<Eigen::Index>(i)) = h.row(indices[i]);
  }
  return sub;
}

SelectionResult select_best_subarray(const CMat& h, const SystemDims& dims,
                                     const SelectionObjective& obj,
                                     std::uint64_t block_size,
                                     bool allow_large) {
  dims.validate();
  if (block_size < 1) throw ConfigError("block_size must be >= 1");
  if (h.rows() != dims.n_r || h.cols() != dims.n_t)
    throw ShapeMismatch("channel must be n_r x n_t");

  SubarrayEnumerator en(dims.n_r, dims.n_rs);
  if (!allow_large && en.total() > kEnumerationCap)
    throw CombinatorialOverflow(
        "search space beyond 2^31 configurations; pass allow_large to scan");

  SelectionResult result;
  bool have_best = false;
  double best_rate = -std::numeric_limits<double>::infinity();
  std::uint64_t block_index = 0;
  for (;;) {
    // One block of configurations; discarded before the next block starts.
    std::vector<SubarrayConfig> block;
    block.reserve(static_cast<std::size_t>(
        std::min<std::uint64_t>(block_size, en.total())));
    for (std::uint64_t i = 0; i < block_size; ++i) {
      auto cfg = en.next();
      if (!cfg) break;
      block.push_back(std::move(*cfg));
    }
    if (block.empty()) break;

    bool have_block_best = false;
    BlockBest block_best{block_index, 0, -std::numeric_limits<double>::infinity()};
    for (const auto& cfg : block) {
      ++result.evaluated;
      double rate;
      try {
        rate = objective_rate(select_rows(h, cfg.indices), dims, obj);
      } catch (const RankDeficient&) {
        ++result.skipped;
        continue;
      }
      if (!have_block_best || rate > block_best.rate) {
        block_best = {block_index, cfg.id, rate};
        have_block_best = true;
      }
      // Ascending scan, so strict improvement keeps the smaller id on ties.
      if (!have_best || rate > best_rate) {
        best_rate = rate;
        result.best = cfg;
        have_best = true;
      }
    }
    if (have_block_best) result.per_block_best.push_back(block_best);
    ++block_index;
  }

  if (!have_best)
    throw NoFeasibleSubarray("every subarray was rank-deficient for n_s");
  result.rate = best_rate;
  return result;
}

std::vector<SubarrayConfig> observed_class_set(
    const std::vector<SelectionResult>& results) {
  if (results.empty()) throw ConfigError("observed_class_set needs results");
  std::vector<SubarrayConfig> classes;
  for (const auto& r : results) {
    if (std::find(classes.begin(), classes.end(), r.best) == classes.end())
      classes.push_back(r.best);
  }
  return classes;
}

SubarrayConfig baseline_select(const CMat& h, const SystemDims& dims,
                               SelectionScheme scheme, std::uint64_t seed) {
  dims.validate();
  if (h.rows() != dims.n_r || h.cols() != dims.n_t)
    throw ShapeMismatch("channel must be n_r x n_t");

  switch (scheme) {
    case SelectionScheme::Random: {
      Rng rng(seed);
      const std::uint64_t total = binomial_checked(dims.n_r, dims.n_rs);
      const std::uint64_t id = rng.integer(total);
      return {combination_unrank(id, dims.n_r, dims.n_rs), id};
    }
    case SelectionScheme::Magnitude: {
      // Rank rows by their L1 mass across columns; stable sort keeps the
      // smaller row index on ties.
      std::vector<int> order(static_cast<std::size_t>(dims.n_r));
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> score(static_cast<std::size_t>(dims.n_r));
      for (int i = 0; i < dims.n_r; ++i)
        score[static_cast<std::size_t>(i)] = h.row(i).cwiseAbs().sum();
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return score[static_cast<std::size_t>(a)] >
               score[static_cast<std::size_t>(b)];
      });
      std::vector<int> indices(order.begin(), order.begin() + dims.n_rs);
      std::sort(indices.begin(), indices.end());
      return {indices, combination_rank(indices, dims.n_r)};
    }
    case SelectionScheme::Greedy: {
      std::vector<int> selected;
      std::vector<bool> used(static_cast<std::size_t>(dims.n_r), false);
      for (int step = 0; step < dims.n_rs; ++step) {
        int best_cand = -1;
        double best_rate = -std::numeric_limits<double>::infinity();
        for (int cand = 0; cand < dims.n_r; ++cand) {
          if (used[static_cast<std::size_t>(cand)]) continue;
          std::vector<int> trial = selected;
          trial.insert(std::upper_bound(trial.begin(), trial.end(), cand),
                       cand);
          SystemDims trial_dims = dims;
          trial_dims.n_rs = static_cast<int>(trial.size());
          trial_dims.n_s = std::min(dims.n_s, trial_dims.n_rs);
          trial_dims.n_rf_r =
              std::clamp(dims.n_rf_r, trial_dims.n_s, trial_dims.n_rs);
          double rate;
          try {
            rate = rate_with_unconstrained(select_rows(h, trial), trial_dims);
          } catch (const RankDeficient&) {
            continue;
          }
          if (rate > best_rate) {
            best_rate = rate;
            best_cand = cand;
          }
        }
        if (best_cand < 0)
          throw NoFeasibleSubarray("greedy step found no feasible antenna");
        used[static_cast<std::size_t>(best_cand)] = true;
        selected.insert(
            std::upper_bound(selected.begin(), selected.end(), best_cand),
            best_cand);
      }
      return {selected, combination_rank(selected, dims.n_r)};
    }
  }
  throw ConfigError("unknown selection scheme");
}

std::string selection_csv_row(const std::string& scheme, const SystemDims& dims,
                              const SubarrayConfig& config, double rate_bits) {
  std::string indices;
  for (std::size_t i = 0; i < config.indices.size(); ++i) {
    if (i) indices += ';';
    indices += std::to_string(config.indices[i]);
  }
  char rate[64];
  std::snprintf(rate, sizeof(rate), "%.9g", rate_bits);
  return scheme + "," + std::to_string(dims.n_r) + "," +
         std::to_string(dims.n_rs) + "," + std::to_string(config.id) + "," +
         indices + "," + rate;
}

}  // namespace beamsel
