#include "mmtpp/compression.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mmtpp/templating.hpp"

namespace mmtpp {

void CompressionPolicy::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw Error(ErrorCode::InvalidArgument, "delta must be a finite value >= 0");
  }
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "drop_prob must lie in [0, 1]");
  }
}

std::string CompressionPolicy::label() const {
  std::ostringstream os;
  switch (mode) {
    case CompressionMode::None: os << "none"; break;
    case CompressionMode::Adaptive: os << "adaptive(delta=" << delta << ")"; break;
    case CompressionMode::RandomDrop:
      os << "random_drop(p=" << drop_prob << ",seed=" << seed << ")";
      break;
  }
  return os.str();
}

std::size_t CompressionMask::count(EventAction a) const {
  return static_cast<std::size_t>(std::count(actions.begin(), actions.end(), a));
}

CompressionMask adaptive_mask(const IntervalSeries& series, double delta) {
  CompressionMask mask;
  mask.actions.assign(series.intervals.size(), EventAction::Full);
  for (std::size_t i = 1; i < series.intervals.size(); ++i) {
    if (std::abs(series.intervals[i] - series.intervals[i - 1]) < delta) {
      mask.actions[i] = EventAction::Similar;
    }
  }
  return mask;
}

CompressionMask random_drop_mask(std::size_t n_events, double drop_prob,
                                 std::uint64_t seed) {
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "drop_prob must lie in [0, 1]");
  }
  CompressionMask mask;
  mask.actions.assign(n_events, EventAction::Full);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 1; i < n_events; ++i) {
    // 53-bit uniform in [0, 1); p = 1 drops everything, p = 0 nothing.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < drop_prob) mask.actions[i] = EventAction::Dropped;
  }
  return mask;
}

CompressionMask make_mask(const EventSequence& seq,
                          const CompressionPolicy& policy, std::uint64_t salt) {
  policy.validate();
  switch (policy.mode) {
    case CompressionMode::Adaptive:
      return adaptive_mask(intervals(seq), policy.delta);
    case CompressionMode::RandomDrop:
      return random_drop_mask(seq.size(), policy.drop_prob, policy.seed ^ salt);
    case CompressionMode::None:
      break;
  }
  CompressionMask mask;
  mask.actions.assign(seq.size(), EventAction::Full);
  return mask;
}

double compression_ratio(const CompressionMask& mask,
                         std::span<const std::size_t> full_costs) {
  if (full_costs.size() != mask.size()) {
    throw Error(ErrorCode::LengthMismatch, "cost vector does not match mask");
  }
  double full = 0.0;
  double kept = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    full += static_cast<double>(full_costs[i]);
    switch (mask.actions[i]) {
      case EventAction::Full: kept += static_cast<double>(full_costs[i]); break;
      case EventAction::Similar: kept += 1.0; break;
      case EventAction::Dropped: break;
    }
  }
  return full > 0.0 ? 1.0 - kept / full : 0.0;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) {
    throw Error(ErrorCode::EmptySeries, "quantile of an empty series");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "percentile must lie in [0, 1]");
  }
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<QuantileRow> quantile_table(std::vector<double> values,
                                        std::span<const double> percentiles) {
  if (values.empty()) {
    throw Error(ErrorCode::EmptySeries, "no values to summarise");
  }
  std::sort(values.begin(), values.end());
  std::vector<QuantileRow> rows;
  rows.reserve(percentiles.size());
  for (double p : percentiles) rows.push_back({p, quantile_sorted(values, p)});
  return rows;
}

std::vector<QuantileRow> interval_diff_quantiles(const IntervalSeries& series) {
  return quantile_table(series.adjacent_diffs);
}

std::vector<QuantileRow> interval_diff_quantiles(
    std::span<const EventSequence> seqs) {
  std::vector<double> pooled;
  for (const EventSequence& seq : seqs) {
    const IntervalSeries s = intervals(seq);
    pooled.insert(pooled.end(), s.adjacent_diffs.begin(), s.adjacent_diffs.end());
  }
  return quantile_table(std::move(pooled));
}

CompressionReport compression_report(std::span<const EventSequence> seqs,
                                     const CompressionPolicy& policy,
                                     const Vocabulary& vocab, std::size_t budget,
                                     const TemplateOptions& options) {
  CompressionReport report;
  report.budget = budget;
  if (seqs.empty()) return report;

  double sum_plain = 0.0;
  double sum_comp = 0.0;
  double tokens_full = 0.0;
  double tokens_comp = 0.0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const EventSequence& seq = seqs[s];
    require_valid(seq);
    const CompressionMask plain = make_mask(seq, CompressionPolicy::none());
    const CompressionMask comp =
        make_mask(seq, policy, sequence_salt(s));

    const auto w_plain = encode_window(seq, vocab, plain, budget, options);
    const auto w_comp = encode_window(seq, vocab, comp, budget, options);
    sum_plain += static_cast<double>(w_plain.events_in_window);
    sum_comp += static_cast<double>(w_comp.events_in_window);
    report.uncompressed.max_events =
        std::max(report.uncompressed.max_events, w_plain.events_in_window);
    report.compressed.max_events =
        std::max(report.compressed.max_events, w_comp.events_in_window);

    std::vector<std::size_t> costs;
    costs.reserve(seq.size());
    for (const Event& ev : seq.events) costs.push_back(event_token_cost(ev));
    double full = 0.0;
    for (std::size_t c : costs) full += static_cast<double>(c);
    tokens_full += full;
    tokens_comp += full * (1.0 - compression_ratio(comp, costs));
  }
  const auto n = static_cast<double>(seqs.size());
  report.uncompressed.mean_events = sum_plain / n;
  report.compressed.mean_events = sum_comp / n;
  report.uncompressed.compression_ratio = 0.0;
  report.compressed.compression_ratio =
      tokens_full > 0.0 ? 1.0 - tokens_comp / tokens_full : 0.0;
  return report;
}

}  // namespace mmtpp
