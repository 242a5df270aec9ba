#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmtpp/compression.hpp"
#include "mmtpp/templating.hpp"
#include "mmtpp/toylm.hpp"

namespace mmtpp {

struct RmseReport {
  double rmse = 0.0;
  std::size_t n_used = 0;
  std::size_t n_failed = 0;  // non-finite predictions, excluded from the mean
};

// Root mean squared error over decoded intervals. Non-finite predictions
// count as failed decodes. Throws LengthMismatch / EmptyAfterExclusion.
RmseReport rmse(std::span<const double> predicted, std::span<const double> truth);

// Fraction of exact matches. Throws LengthMismatch, or InvalidArgument when empty.
double acc(std::span<const int> predicted, std::span<const int> truth);

struct NllSum {
  double nll = 0.0;
  std::size_t tokens = 0;

  void add(const NllSum& o) {
    nll += o.nll;
    tokens += o.tokens;
  }
  double mean() const;
  double ppl() const;  // exp(mean)
};

struct PplOptions {
  std::size_t stride = 0;  // 0 = context_len / 2
  bool double_precision = false;
  unsigned threads = 0;    // 0 = hardware concurrency
};

// Sliding-window NLL of one stream. Window k covers ids[k*stride, k*stride +
// context_len); each target position is scored once, by the first window
// that predicts it. With stride == context_len the windows are independent
// segments and the first token of every segment is not scored.
NllSum stream_nll(const ModelParams& params, std::span<const TokenId> ids,
                  const PplOptions& options = {}, const ImageFeatures* features = nullptr);

// Pooled over streams, reduced in stream order.
NllSum corpus_nll(const ModelParams& params, std::span<const TokenStream> streams,
                  const PplOptions& options = {});

inline double ppl(const ModelParams& params, std::span<const TokenStream> streams,
                  const PplOptions& options = {}) {
  return corpus_nll(params, streams, options).ppl();
}

struct LengthTaggedStream {
  TokenStream stream;
  std::size_t length = 0;  // events in the underlying sequence
};

struct LengthBin {
  double lo = 0.0;
  double hi = 0.0;  // half-open [lo, hi)
  std::size_t streams = 0;
  NllSum sum;

  bool empty() const { return sum.tokens == 0; }
  double ppl() const;  // throws EmptyBin
};

inline const std::vector<double> kDefaultLengthEdges = {
    0, 100, 200, 400, 800, 1600, std::numeric_limits<double>::infinity()};

std::vector<LengthBin> ppl_by_length(const ModelParams& params,
                                     std::span<const LengthTaggedStream> streams,
                                     std::span<const double> edges = kDefaultLengthEdges,
                                     const PplOptions& options = {});

struct PairedDelta {
  double lo = 0.0;
  double hi = 0.0;
  std::optional<double> compressed;
  std::optional<double> uncompressed;
  std::optional<double> delta;  // compressed - uncompressed, when both present
};

// Bins must share edges (same underlying sequences).
std::vector<PairedDelta> paired_delta(std::span<const LengthBin> compressed,
                                      std::span<const LengthBin> uncompressed);

struct CompareOptions {
  std::size_t budget = 1024;
  std::size_t max_train_windows = 0;  // 0 = all; otherwise a seeded subset
  bool stage2 = false;                // fine-tune and score RMSE / ACC
  std::size_t max_eval_pairs = 200;   // per task, taken in order
  double decode_temperature = 0.0;
  std::vector<double> length_edges = kDefaultLengthEdges;
  PplOptions ppl;
};

struct PolicyResult {
  std::string label;
  CompressionPolicy policy;
  std::uint64_t seed = 0;
  std::size_t train_windows = 0;
  double final_train_loss = 0.0;
  double ppl = 0.0;
  std::optional<double> rmse;
  std::optional<double> acc;
  std::size_t n_failed_decodes = 0;
  std::vector<LengthBin> bins;
};

// Trains one toy LM per policy from the same config and seed, then scores
// held-out sequences encoded under that policy.
std::vector<PolicyResult> compare_policies(std::span<const EventSequence> train,
                                           std::span<const EventSequence> test,
                                           std::span<const CompressionPolicy> policies,
                                           const ToyLMConfig& config,
                                           const CompareOptions& options = {});

// Columns: policy,seed,train_windows,train_loss,ppl,rmse,acc,n_failed_decodes
void write_compare_csv(std::ostream& os, std::span<const PolicyResult> results);
// Columns: policy,seed,bin_lo,bin_hi,streams,tokens,ppl (empty when absent)
void write_length_csv(std::ostream& os, std::span<const PolicyResult> results);

struct PlotSeries {
  std::string label;
  std::vector<LengthBin> bins;
};

// PPL against length bin as an SVG line chart; absent bins leave gaps.
void write_ppl_svg(const std::filesystem::path& path, std::span<const PlotSeries> series);

}  // namespace mmtpp
