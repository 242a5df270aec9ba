#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmtpp/events.hpp"

namespace mmtpp {

class Vocabulary;
struct TemplateOptions;

enum class CompressionMode : std::uint8_t { None, Adaptive, RandomDrop };

inline constexpr double kDefaultDelta = 0.2;

struct CompressionPolicy {
  CompressionMode mode = CompressionMode::None;
  double delta = kDefaultDelta;  // adaptive threshold on |tau_i - tau_{i-1}|
  double drop_prob = 0.0;        // random-drop probability for events 2..N
  std::uint64_t seed = 0;

  static CompressionPolicy none() { return {}; }
  static CompressionPolicy adaptive(double delta) {
    return {CompressionMode::Adaptive, delta, 0.0, 0};
  }
  static CompressionPolicy random_drop(double p, std::uint64_t seed) {
    return {CompressionMode::RandomDrop, kDefaultDelta, p, seed};
  }

  void validate() const;  // throws InvalidArgument
  std::string label() const;
};

enum class EventAction : std::uint8_t {
  Full,     // whole event template
  Similar,  // collapsed to a single <|similar_event|> token
  Dropped,  // removed from the stream entirely
};

struct CompressionMask {
  std::vector<EventAction> actions;

  std::size_t size() const noexcept { return actions.size(); }
  bool keep_full(std::size_t i) const { return actions.at(i) == EventAction::Full; }
  std::size_t count(EventAction a) const;
};

// Event i (i >= 2) collapses iff |tau_i - tau_{i-1}| < delta, comparing raw
// intervals only. Event 1 is always full.
CompressionMask adaptive_mask(const IntervalSeries& series, double delta);

// Drops each event after the first independently with probability p.
CompressionMask random_drop_mask(std::size_t n_events, double drop_prob,
                                 std::uint64_t seed);

// Per-sequence salt used wherever a corpus-level policy builds masks.
inline std::uint64_t sequence_salt(std::size_t index) noexcept {
  return 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
}

// Mask for one sequence. `salt` decorrelates random drops across sequences
// that share the policy seed.
CompressionMask make_mask(const EventSequence& seq,
                          const CompressionPolicy& policy,
                          std::uint64_t salt = 0);

// 1 - (compressed tokens / uncompressed tokens), given per-event full costs.
double compression_ratio(const CompressionMask& mask,
                         std::span<const std::size_t> full_costs);

// Type-7 quantile (linear interpolation between order statistics) of
// already-sorted data.
double quantile_sorted(std::span<const double> sorted, double p);

struct QuantileRow {
  double percentile;
  double value;
};

inline constexpr std::array<double, 9> kDiffPercentiles = {
    0.05, 0.10, 0.20, 0.25, 0.50, 0.75, 0.90, 0.95, 1.00};

std::vector<QuantileRow> quantile_table(std::vector<double> values,
                                        std::span<const double> percentiles =
                                            kDiffPercentiles);

// Quantiles of |tau_i - tau_{i-1}| pooled over all given sequences.
std::vector<QuantileRow> interval_diff_quantiles(
    std::span<const EventSequence> seqs);
std::vector<QuantileRow> interval_diff_quantiles(const IntervalSeries& series);

struct WindowStats {
  double mean_events = 0.0;
  std::size_t max_events = 0;
  double compression_ratio = 0.0;  // token-level, over whole sequences
};

struct CompressionReport {
  std::size_t budget = 0;
  WindowStats uncompressed;
  WindowStats compressed;
};

// How many trailing events fit in `budget` tokens with and without the policy.
CompressionReport compression_report(std::span<const EventSequence> seqs,
                                     const CompressionPolicy& policy,
                                     const Vocabulary& vocab,
                                     std::size_t budget,
                                     const TemplateOptions& options);

}  // namespace mmtpp
