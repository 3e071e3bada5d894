#include "dlsn/sblsh.hpp"

#include <algorithm>
#include <numeric>

#include "dlsn/random.hpp"

namespace dlsn {

OrthoBasis orthonormal_basis(Eigen::Index buckets, Eigen::Index dim, std::uint64_t seed) {
  require(buckets >= 1, "orthonormal_basis: need at least one bucket");
  require(buckets <= dim, "orthonormal_basis: bucket count " + std::to_string(buckets) +
                              " exceeds feature dimension " + std::to_string(dim));
  Xoshiro256 rng(seed);
  OrthoBasis basis{Matrix(buckets, dim), seed};
  for (Eigen::Index r = 0; r < buckets; ++r) {
    int attempts = 0;
    for (;;) {
      Eigen::RowVectorXd v(dim);
      for (Eigen::Index j = 0; j < dim; ++j) v(j) = rng.normal();
      for (Eigen::Index p = 0; p < r; ++p) v -= v.dot(basis.rows.row(p)) * basis.rows.row(p);
      const double norm = v.norm();
      if (norm >= 1e-12) {
        basis.rows.row(r) = v / norm;
        break;
      }
      if (++attempts > 100) throw std::runtime_error("orthonormal_basis: could not draw an independent row");
    }
  }
  return basis;
}

std::vector<int> assign_buckets(const Matrix& q, const OrthoBasis& basis) {
  require(q.rows() == basis.dim(), "assign_buckets: feature dimension " + std::to_string(q.rows()) +
                                       " does not match basis dimension " + std::to_string(basis.dim()));
  const Matrix projected = basis.rows * q;
  std::vector<int> ids(std::size_t(q.cols()));
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < projected.rows(); ++r)
      if (projected(r, i) > projected(best, i)) best = r;
    ids[std::size_t(i)] = int(best);
  }
  return ids;
}

std::vector<int> HashRound::chunk(int k) const {
  require(k >= 0 && k < chunk_count(), "HashRound::chunk: index out of range");
  return {slots.begin() + std::ptrdiff_t(k) * bucket_size, slots.begin() + std::ptrdiff_t(k + 1) * bucket_size};
}

std::array<int, 3> HashRound::window_chunks(int k) const {
  return {std::max(k - 1, 0), k, std::min(k + 1, chunk_count() - 1)};
}

std::vector<int> HashRound::context_window(int k) const {
  std::vector<int> window;
  window.reserve(3 * std::size_t(bucket_size));
  for (int c : window_chunks(k)) {
    const auto part = chunk(c);
    window.insert(window.end(), part.begin(), part.end());
  }
  return window;
}

HashRound plan_chunks(const std::vector<int>& bucket_ids, int bucket_size) {
  require(bucket_size >= 1, "plan_chunks: bucket size must be >= 1");
  require(!bucket_ids.empty(), "plan_chunks: no features");
  HashRound round;
  round.bucket_size = bucket_size;
  round.bucket_ids = bucket_ids;
  const int n = int(bucket_ids.size());
  round.order.resize(std::size_t(n));
  std::iota(round.order.begin(), round.order.end(), 0);
  std::stable_sort(round.order.begin(), round.order.end(),
                   [&](int a, int b) { return bucket_ids[std::size_t(a)] < bucket_ids[std::size_t(b)]; });
  round.position.resize(std::size_t(n));
  for (int p = 0; p < n; ++p) round.position[std::size_t(round.order[std::size_t(p)])] = p;

  const int padded = (n + bucket_size - 1) / bucket_size * bucket_size;
  round.slots = round.order;
  round.slots.resize(std::size_t(padded), HashRound::kPad);
  round.pad_mask.assign(std::size_t(padded), 0);
  std::fill(round.pad_mask.begin() + n, round.pad_mask.end(), std::uint8_t(1));
  return round;
}

HashPlan build_plan(const Matrix& q, const std::vector<OrthoBasis>& bases, int bucket_size) {
  require(!bases.empty(), "build_plan: need at least one hashing round");
  HashPlan plan;
  plan.rounds.reserve(bases.size());
  for (const auto& basis : bases) plan.rounds.push_back(plan_chunks(assign_buckets(q, basis), bucket_size));
  return plan;
}

std::vector<OrthoBasis> make_bases(Eigen::Index buckets, Eigen::Index dim, int rounds, std::uint64_t master_seed,
                                   std::uint64_t block) {
  require(rounds >= 1, "make_bases: rounds must be >= 1");
  std::vector<OrthoBasis> bases;
  bases.reserve(std::size_t(rounds));
  for (int r = 0; r < rounds; ++r)
    bases.push_back(orthonormal_basis(buckets, dim, derive_seed(master_seed, block, std::uint64_t(r))));
  return bases;
}

}  // namespace dlsn
