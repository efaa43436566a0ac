#pragma once

// Confusion-matrix bookkeeping, accuracy, and Matthews correlation.
// Indeterminate answers always count as wrong: FN on positive (same-author /
// in-distribution) cases, FP on negative ones.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "codattr/corpus.hpp"
#include "codattr/verdicts.hpp"

namespace codattr {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;

  std::uint64_t total() const { return tp + fn + tn + fp; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& rhs) {
    tp += rhs.tp;
    fn += rhs.fn;
    tn += rhs.tn;
    fp += rhs.fp;
    return *this;
  }
};

inline void record_verification(ConfusionMatrix& m, PairExpected expected, const Verdict& v) {
  if (expected == PairExpected::Same) {
    if (v.value == VerificationAnswer::Same) {
      ++m.tp;
    } else {
      ++m.fn;
    }
  } else {
    if (v.value == VerificationAnswer::Different) {
      ++m.tn;
    } else {
      ++m.fp;
    }
  }
}

inline void record_attribution(ConfusionMatrix& m, const AttributionCase& c,
                               const AttributionVerdict& v) {
  if (c.expected.has_value()) {
    // In-distribution: only naming the right author counts.
    if (v.kind == AttributionKind::Chosen && v.author == *c.expected) {
      ++m.tp;
    } else {
      ++m.fn;
    }
  } else {
    // Out-of-distribution: only "none" counts.
    if (v.kind == AttributionKind::NoneOfThem) {
      ++m.tn;
    } else {
      ++m.fp;
    }
  }
}

inline std::optional<double> accuracy(const ConfusionMatrix& m) {
  if (m.total() == 0) return std::nullopt;
  return static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
}

// (tp*tn - fp*fn) / sqrt((tp+fp)(tp+fn)(tn+fp)(tn+fn)); 0 when any factor
// of the denominator vanishes.
inline double mcc(const ConfusionMatrix& m) {
  const double tp = static_cast<double>(m.tp);
  const double fn = static_cast<double>(m.fn);
  const double tn = static_cast<double>(m.tn);
  const double fp = static_cast<double>(m.fp);
  const double f1 = tp + fp;
  const double f2 = tp + fn;
  const double f3 = tn + fp;
  const double f4 = tn + fn;
  if (f1 == 0 || f2 == 0 || f3 == 0 || f4 == 0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(f1 * f2 * f3 * f4);
}

// Report rounding: accuracy to one decimal of a percent, MCC to two decimals.
inline std::string format_accuracy_pct(double accuracy_fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", accuracy_fraction * 100.0);
  return buf;
}

inline std::string format_mcc(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

// Fraction of queries that survived at least `round` eliminations. Round 0
// is the full pool, so the result is non-increasing in the round index and
// the last round equals Top-1 accuracy.
inline double round_accuracy(const std::vector<std::size_t>& survival_rounds, std::size_t round) {
  if (survival_rounds.empty()) throw std::invalid_argument("round_accuracy: no results");
  std::size_t surviving = 0;
  for (std::size_t r : survival_rounds)
    if (r >= round) ++surviving;
  return static_cast<double>(surviving) / static_cast<double>(survival_rounds.size());
}

}  // namespace codattr
