#pragma once

// Independent Monte-Carlo model of the elimination protocol, used as an
// oracle against the real implementation. Deliberately shares no code with
// the tournament module beyond the ceil-division shape of balanced splits:
// per round, the true author lands in a random balanced subset and survives
// a multi-member subset with probability p (singleton subsets are byes).

#include <cstdint>
#include <random>
#include <vector>

namespace mcsim {

struct RoundSurvival {
  std::vector<double> per_round;  // fraction surviving >= round 1, 2, ...
  double final_accuracy = 0.0;
};

inline RoundSurvival simulate(std::size_t pool, std::size_t subset_size, double p,
                              std::size_t n_queries, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::size_t> chain{pool};
  while (chain.back() > 1)
    chain.push_back((chain.back() + subset_size - 1) / subset_size);
  const std::size_t rounds = chain.size() - 1;

  std::vector<std::size_t> survived(rounds + 1, 0);
  for (std::size_t q = 0; q < n_queries; ++q) {
    std::size_t reached = 0;
    for (std::size_t r = 0; r < rounds; ++r) {
      const std::size_t m = chain[r];
      const std::size_t groups = chain[r + 1];
      const std::size_t base = m / groups;
      const std::size_t extra = m % groups;
      // Author's position is uniform; the first `extra` groups are one larger.
      const std::size_t pos = static_cast<std::size_t>(
          std::uniform_int_distribution<std::uint64_t>(0, m - 1)(rng));
      const std::size_t my_size = pos < extra * (base + 1) ? base + 1 : base;
      const bool survives = my_size <= 1 || unit(rng) < p;
      if (!survives) break;
      reached = r + 1;
    }
    for (std::size_t r = 1; r <= reached; ++r) ++survived[r];
  }

  RoundSurvival out;
  for (std::size_t r = 1; r <= rounds; ++r)
    out.per_round.push_back(static_cast<double>(survived[r]) / static_cast<double>(n_queries));
  out.final_accuracy = out.per_round.empty() ? 1.0 : out.per_round.back();
  return out;
}

}  // namespace mcsim
