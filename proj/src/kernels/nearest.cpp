#include <algorithm>
#include <limits>

#include "stainalign/error.hpp"
#include "stainalign/kernels.hpp"

namespace stainalign::kernels {

namespace {

// Eight independent partial sums so the loop vectorises without relying on
// -ffast-math reassociation. dim need not be a multiple of 8.
inline float squared_distance(const float* a, const float* b, int dim) {
  float lanes[8] = {};
  int k = 0;
  for (; k + 8 <= dim; k += 8) {
    for (int l = 0; l < 8; ++l) {
      const float d = a[k + l] - b[k + l];
      lanes[l] += d * d;
    }
  }
  float acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
              ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; k < dim; ++k) {
    const float d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

inline void offer(NearestTwo& nt, int index, float d2) {
  if (nt.best < 0 || d2 < nt.best_d2) {
    nt.second = nt.best;
    nt.second_d2 = nt.best_d2;
    nt.best = index;
    nt.best_d2 = d2;
  } else if (nt.second < 0 || d2 < nt.second_d2) {
    nt.second = index;
    nt.second_d2 = d2;
  }
}

void check(std::span<const float> queries, std::span<const float> refs, int dim) {
  if (dim <= 0 || queries.size() % dim != 0 || refs.size() % dim != 0) {
    throw Error(ErrorCode::invalid_argument, "descriptor arrays are not a multiple of dim");
  }
}

}  // namespace

std::vector<NearestTwo> nearest_two(std::span<const float> queries, std::span<const float> refs,
                                    int dim) {
  check(queries, refs, dim);
  const auto nq = static_cast<std::ptrdiff_t>(queries.size() / dim);
  const auto nr = static_cast<int>(refs.size() / dim);
  std::vector<NearestTwo> result(static_cast<std::size_t>(nq));

  // Blocks of references stay resident in cache while a block of queries
  // streams past them.
  constexpr std::ptrdiff_t kQueryBlock = 64;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t q0 = 0; q0 < nq; q0 += kQueryBlock) {
    const std::ptrdiff_t q1 = std::min(nq, q0 + kQueryBlock);
    for (std::ptrdiff_t q = q0; q < q1; ++q) {
      const float* a = queries.data() + q * dim;
      NearestTwo nt;
      for (int r = 0; r < nr; ++r) {
        offer(nt, r, squared_distance(a, refs.data() + static_cast<std::size_t>(r) * dim, dim));
      }
      result[static_cast<std::size_t>(q)] = nt;
    }
  }
  return result;
}

namespace serial {

std::vector<NearestTwo> nearest_two(std::span<const float> queries, std::span<const float> refs,
                                    int dim) {
  check(queries, refs, dim);
  const std::size_t nq = queries.size() / dim;
  const std::size_t nr = refs.size() / dim;
  std::vector<NearestTwo> result(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    NearestTwo nt;
    for (std::size_t r = 0; r < nr; ++r) {
      double acc = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double d = static_cast<double>(queries[q * dim + k]) - refs[r * dim + k];
        acc += d * d;
      }
      offer(nt, static_cast<int>(r), static_cast<float>(acc));
    }
    result[q] = nt;
  }
  return result;
}

}  // namespace serial

}  // namespace stainalign::kernels
