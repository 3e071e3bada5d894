#ifndef DLSN_SBLSH_HPP
#define DLSN_SBLSH_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "dlsn/tensor.hpp"

namespace dlsn {

/// b x c matrix with orthonormal rows, generated from a seed.
struct OrthoBasis {
  Matrix rows;
  std::uint64_t seed = 0;

  Eigen::Index buckets() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

/// Draws a b x c standard-normal matrix row by row from Xoshiro256(seed) and
/// orthonormalizes it with modified Gram-Schmidt. A row whose residual norm
/// falls below 1e-12 is redrawn from the same stream (at most 100 times).
OrthoBasis orthonormal_basis(Eigen::Index buckets, Eigen::Index dim, std::uint64_t seed);

/// Bucket of each column of q (c x n): argmax of basis.rows * q_i, lowest
/// index on ties.
std::vector<int> assign_buckets(const Matrix& q, const OrthoBasis& basis);

/// One hashing round after sorting and chunking. Slots are positions in the
/// sorted sequence; slot values are feature indices, or kPad for padding.
struct HashRound {
  static constexpr int kPad = -1;

  int bucket_size = 0;
  std::vector<int> bucket_ids;           // per feature
  std::vector<int> order;                // sorted position -> feature index (the permutation xi as a list)
  std::vector<int> position;             // feature index -> sorted position (xi)
  std::vector<int> slots;                // order followed by padding, length chunk_count * bucket_size
  std::vector<std::uint8_t> pad_mask;    // per slot, 1 for padding

  int feature_count() const { return int(bucket_ids.size()); }
  int chunk_count() const { return bucket_size == 0 ? 0 : int(slots.size()) / bucket_size; }
  int padding() const { return int(slots.size()) - feature_count(); }

  /// Feature indices (or kPad) of chunk k.
  std::vector<int> chunk(int k) const;

  /// Chunk indices (k-1, k, k+1), clamped at both ends without wraparound.
  std::array<int, 3> window_chunks(int k) const;

  /// Slots of chunks (k-1, k, k+1) concatenated, length 3 * bucket_size.
  std::vector<int> context_window(int k) const;
};

struct HashPlan {
  std::vector<HashRound> rounds;

  int round_count() const { return int(rounds.size()); }
  int feature_count() const { return rounds.empty() ? 0 : rounds.front().feature_count(); }
};

/// Stable sort by bucket id, pad to a multiple of bucket_size, slice.
HashRound plan_chunks(const std::vector<int>& bucket_ids, int bucket_size);

/// One round per basis, hashing the columns of q.
HashPlan build_plan(const Matrix& q, const std::vector<OrthoBasis>& bases, int bucket_size);

/// Fresh basis per round with seeds derive_seed(master, block, round).
std::vector<OrthoBasis> make_bases(Eigen::Index buckets, Eigen::Index dim, int rounds, std::uint64_t master_seed,
                                   std::uint64_t block);

}  // namespace dlsn

#endif  // DLSN_SBLSH_HPP
