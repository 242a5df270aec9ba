#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmtpp/events.hpp"

namespace mmtpp {

// Bursty comment-stream corpus. Adjacent-interval differences are drawn by
// inverse CDF from a fixed quantile table; each sequence alternates between
// a burst regime (lower half of the table) and a calm regime (upper half),
// with its own long-run burst share drawn from Beta(a, a) (consecutive
// sequences take share and 1 - share).
struct DanmakuConfig {
  std::size_t n_sequences = 200;
  std::size_t events_per_sequence = 1500;
  int type_count = 8;
  double burst_share_shape = 0.5;  // a in Beta(a, a); small = U-shaped
  double mean_regime_run = 25.0;   // events per regime when the share is 1/2
  double level = 1.0;              // interval scale the walk reverts to
  std::uint64_t seed = 0;
};

// (percentile, value) anchors of the |tau_i - tau_{i-1}| distribution the
// generator samples from. Interpolation is linear in log(value).
struct QuantileAnchor {
  double percentile;
  double value;
};
const std::vector<QuantileAnchor>& danmaku_diff_anchors();
double danmaku_diff_inverse_cdf(double u);

std::vector<EventSequence> danmaku_corpus(const DanmakuConfig& config);

// Fully deterministic sequences: intervals cycle through `intervals`, types
// cycle 0, 1, ..., type_count - 1, and the text is a fixed label per type.
// Each sequence starts at a different phase of both cycles.
struct GrammarConfig {
  std::size_t n_sequences = 40;
  std::size_t events_per_sequence = 24;
  int type_count = 4;
  std::vector<double> intervals = {0.5, 1.5};
  bool with_text = true;
};

std::vector<EventSequence> grammar_corpus(const GrammarConfig& config);

}  // namespace mmtpp
