#include "mmtpp/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace mmtpp {
namespace {

unsigned resolve_threads(unsigned requested, std::size_t jobs) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::clamp<std::size_t>(n, 1, std::max<std::size_t>(jobs, 1)));
}

// Runs f(i) for i in [0, n) over a small pool; callers store results by index.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  const unsigned t = resolve_threads(threads, n);
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned k = 0; k < t; ++k) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  }
}

struct WindowSpec {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t first_scored = 0;  // index into the window's per-token vector
};

std::vector<WindowSpec> plan_windows(std::size_t n, std::size_t context, std::size_t stride) {
  std::vector<WindowSpec> out;
  std::size_t scored_until = 1;  // next target position still unscored
  for (std::size_t begin = 0; begin + 1 < n; begin += stride) {
    const std::size_t end = std::min(begin + context, n);
    const std::size_t first_target = std::max(scored_until, begin + 1);
    if (first_target < end) {
      out.push_back({begin, end, first_target - begin - 1});
      scored_until = end;
    }
    if (end == n) break;
  }
  return out;
}

ImageFeatures slice_features(const ImageFeatures& all, std::span<const TokenId> ids,
                             std::size_t begin, std::size_t end, TokenId pad) {
  const auto before = static_cast<std::size_t>(
      std::count(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(begin), pad));
  const auto inside = static_cast<std::size_t>(
      std::count(ids.begin() + static_cast<std::ptrdiff_t>(begin),
                 ids.begin() + static_cast<std::ptrdiff_t>(end), pad));
  if (before + inside > all.size()) {
    throw Error(ErrorCode::FeatureCountMismatch, "fewer image features than image_pad tokens");
  }
  return ImageFeatures(all.begin() + static_cast<std::ptrdiff_t>(before),
                       all.begin() + static_cast<std::ptrdiff_t>(before + inside));
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt::format("{:.6g}", *v) : std::string();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

RmseReport rmse(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                fmt::format("{} predictions for {} targets", predicted.size(), truth.size()));
  }
  RmseReport r;
  double se = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!std::isfinite(predicted[i])) {
      ++r.n_failed;
      continue;
    }
    const double d = predicted[i] - truth[i];
    se += d * d;
    ++r.n_used;
  }
  if (r.n_used == 0) {
    throw Error(ErrorCode::EmptyAfterExclusion,
                fmt::format("no usable predictions ({} failed decodes)", r.n_failed));
  }
  r.rmse = std::sqrt(se / static_cast<double>(r.n_used));
  return r;
}

double acc(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                fmt::format("{} predictions for {} targets", predicted.size(), truth.size()));
  }
  if (truth.empty()) throw Error(ErrorCode::InvalidArgument, "accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double NllSum::mean() const {
  if (tokens == 0) throw Error(ErrorCode::EmptyBin, "no scored tokens");
  return nll / static_cast<double>(tokens);
}

double NllSum::ppl() const { return std::exp(mean()); }

NllSum stream_nll(const ModelParams& params, std::span<const TokenId> ids,
                  const PplOptions& options, const ImageFeatures* features) {
  const auto context = static_cast<std::size_t>(params.config.context_len);
  const std::size_t stride = options.stride ? options.stride : std::max<std::size_t>(1, context / 2);
  if (stride > context) throw Error(ErrorCode::InvalidArgument, "stride exceeds context length");
  const auto windows = plan_windows(ids.size(), context, stride);
  std::vector<NllSum> parts(windows.size());
  parallel_for(windows.size(), options.threads, [&](std::size_t k) {
    const WindowSpec& w = windows[k];
    const auto slice = ids.subspan(w.begin, w.end - w.begin);
    std::optional<ImageFeatures> feats;
    if (features) feats = slice_features(*features, ids, w.begin, w.end, params.config.image_pad_token);
    const NllResult r = forward_nll(params, slice, feats ? &*feats : nullptr, {},
                                    options.double_precision);
    NllSum s;
    for (std::size_t i = w.first_scored; i < r.per_token.size(); ++i) s.nll += r.per_token[i];
    s.tokens = r.per_token.size() - w.first_scored;
    parts[k] = s;
  });
  NllSum total;
  for (const auto& p : parts) total.add(p);
  return total;
}

NllSum corpus_nll(const ModelParams& params, std::span<const TokenStream> streams,
                  const PplOptions& options) {
  NllSum total;
  for (const auto& s : streams) total.add(stream_nll(params, s.ids, options));
  return total;
}

double LengthBin::ppl() const {
  if (empty()) {
    throw Error(ErrorCode::EmptyBin, fmt::format("length bin [{}, {}) has no tokens", lo, hi));
  }
  return sum.ppl();
}

namespace {

std::vector<LengthBin> empty_bins(std::span<const double> edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw Error(ErrorCode::InvalidArgument, "bin edges must be strictly increasing, at least two");
  }
  std::vector<LengthBin> bins(edges.size() - 1);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lo = edges[b];
    bins[b].hi = edges[b + 1];
  }
  return bins;
}

// Streams whose length falls outside every bin are skipped.
void add_to_bin(std::vector<LengthBin>& bins, std::span<const double> edges, std::size_t length,
                const NllSum& sum) {
  const auto it = std::upper_bound(edges.begin(), edges.end(), static_cast<double>(length));
  if (it == edges.begin() || it == edges.end()) return;
  LengthBin& bin = bins[static_cast<std::size_t>(it - edges.begin()) - 1];
  bin.sum.add(sum);
  ++bin.streams;
}

}  // namespace

std::vector<LengthBin> ppl_by_length(const ModelParams& params,
                                     std::span<const LengthTaggedStream> streams,
                                     std::span<const double> edges, const PplOptions& options) {
  auto bins = empty_bins(edges);
  for (const auto& s : streams) {
    add_to_bin(bins, edges, s.length, stream_nll(params, s.stream.ids, options));
  }
  return bins;
}

std::vector<PairedDelta> paired_delta(std::span<const LengthBin> compressed,
                                      std::span<const LengthBin> uncompressed) {
  if (compressed.size() != uncompressed.size()) {
    throw Error(ErrorCode::LengthMismatch, "bin tables differ in size");
  }
  std::vector<PairedDelta> out;
  for (std::size_t b = 0; b < compressed.size(); ++b) {
    if (compressed[b].lo != uncompressed[b].lo || compressed[b].hi != uncompressed[b].hi) {
      throw Error(ErrorCode::InvalidArgument, "bin tables use different edges");
    }
    PairedDelta d{compressed[b].lo, compressed[b].hi, {}, {}, {}};
    if (!compressed[b].empty()) d.compressed = compressed[b].ppl();
    if (!uncompressed[b].empty()) d.uncompressed = uncompressed[b].ppl();
    if (d.compressed && d.uncompressed) d.delta = *d.compressed - *d.uncompressed;
    out.push_back(d);
  }
  return out;
}

std::vector<PolicyResult> compare_policies(std::span<const EventSequence> train,
                                           std::span<const EventSequence> test,
                                           std::span<const CompressionPolicy> policies,
                                           const ToyLMConfig& config,
                                           const CompareOptions& options) {
  if (train.empty() || test.empty() || policies.empty()) {
    throw Error(ErrorCode::InvalidArgument, "compare_policies needs train, test and policies");
  }
  int type_count = 1;
  for (const auto& s : train) type_count = std::max(type_count, s.type_count);
  for (const auto& s : test) type_count = std::max(type_count, s.type_count);
  const Vocabulary vocab(type_count);
  ToyLMConfig cfg = config;
  cfg.vocab_size = static_cast<int>(vocab.size());
  if (cfg.image_pad_token < 0) cfg.image_pad_token = vocab.special(Special::ImagePad);
  cfg.validate();

  std::vector<PolicyResult> results;
  for (const auto& policy : policies) {
    policy.validate();
    PolicyResult res;
    res.policy = policy;
    res.label = policy.label();
    res.seed = cfg.seed;

    auto corpus = build_stage1_corpus(train, vocab, policy, options.budget);
    if (options.max_train_windows && corpus.size() > options.max_train_windows) {
      // The subset depends only on the seed, not on the policy.
      std::mt19937_64 pick(cfg.seed ^ 0xA0761D6478BD642FULL);
      std::shuffle(corpus.begin(), corpus.end(), pick);
      corpus.resize(options.max_train_windows);
    }
    res.train_windows = corpus.size();
    TrainResult trained = train_stage1(cfg, corpus);
    res.final_train_loss = trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back();

    // Held-out sequences, encoded whole under the policy.
    res.bins = empty_bins(options.length_edges);
    NllSum total;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const CompressionMask mask = make_mask(test[i], policy, sequence_salt(i));
      const TokenStream stream = encode_window(test[i], vocab, mask, kNoBudget).stream;
      const NllSum sum = stream_nll(trained.params, stream.ids, options.ppl);
      total.add(sum);
      add_to_bin(res.bins, options.length_edges, test[i].size(), sum);
    }
    res.ppl = total.ppl();

    if (options.stage2) {
      std::vector<PromptResponsePair> pairs;
      for (TaskKind task : {TaskKind::Time, TaskKind::Type}) {
        auto p = build_stage2_pairs(train, vocab, policy, options.budget, task);
        pairs.insert(pairs.end(), p.begin(), p.end());
      }
      const ModelParams tuned = train_stage2(trained.params, pairs).params;
      GenerateOptions gen;
      gen.temperature = options.decode_temperature;
      gen.seed = cfg.seed;

      auto eval_pairs = [&](TaskKind task) {
        auto p = build_stage2_pairs(test, vocab, policy, options.budget, task);
        if (options.max_eval_pairs && p.size() > options.max_eval_pairs) {
          p.resize(options.max_eval_pairs);
        }
        return p;
      };
      std::vector<double> pred_t, true_t;
      for (const auto& p : eval_pairs(TaskKind::Time)) {
        const auto out = generate(tuned, p.prompt, TaskKind::Time, vocab, gen);
        const auto d = decode_time_response(out.ids, vocab);
        pred_t.push_back(d && d->finite ? static_cast<double>(d->value)
                                        : std::numeric_limits<double>::quiet_NaN());
        true_t.push_back(static_cast<double>(decode_time_response(p.response.ids, vocab)->value));
      }
      std::vector<int> pred_y, true_y;
      for (const auto& p : eval_pairs(TaskKind::Type)) {
        const auto out = generate(tuned, p.prompt, TaskKind::Type, vocab, gen);
        pred_y.push_back(decode_type_response(out.ids, vocab).value_or(-1));
        true_y.push_back(*decode_type_response(p.response.ids, vocab));
      }
      if (!pred_t.empty()) {
        try {
          const RmseReport r = rmse(pred_t, true_t);
          res.rmse = r.rmse;
          res.n_failed_decodes = r.n_failed;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyAfterExclusion) throw;
          res.n_failed_decodes = pred_t.size();
        }
      }
      if (!pred_y.empty()) res.acc = acc(pred_y, true_y);
    }
    results.push_back(std::move(res));
  }
  return results;
}

void write_compare_csv(std::ostream& os, std::span<const PolicyResult> results) {
  os << "policy,seed,train_windows,train_loss,ppl,rmse,acc,n_failed_decodes\n";
  for (const auto& r : results) {
    fmt::print(os, "{},{},{},{:.6g},{:.6g},{},{},{}\n", csv_field(r.label), r.seed, r.train_windows,
               r.final_train_loss, r.ppl, fmt_opt(r.rmse), fmt_opt(r.acc), r.n_failed_decodes);
  }
}

void write_length_csv(std::ostream& os, std::span<const PolicyResult> results) {
  os << "policy,seed,bin_lo,bin_hi,streams,tokens,ppl\n";
  for (const auto& r : results) {
    for (const auto& b : r.bins) {
      fmt::print(os, "{},{},{},{},{},{},{}\n", csv_field(r.label), r.seed, b.lo, b.hi, b.streams,
                 b.sum.tokens, b.empty() ? std::string() : fmt::format("{:.6g}", b.ppl()));
    }
  }
}

void write_ppl_svg(const std::filesystem::path& path, std::span<const PlotSeries> series) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 20, B = 50;
  std::size_t n_bins = 0;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& s : series) {
    n_bins = std::max(n_bins, s.bins.size());
    for (const auto& b : s.bins) {
      if (b.empty()) continue;
      ymin = std::min(ymin, b.ppl());
      ymax = std::max(ymax, b.ppl());
    }
  }
  if (!std::isfinite(ymin)) ymin = 1.0, ymax = 2.0;
  if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto x_of = [&](std::size_t i) {
    return L + (n_bins > 1 ? (W - L - R) * static_cast<double>(i) / static_cast<double>(n_bins - 1)
                           : (W - L - R) / 2);
  };
  auto y_of = [&](double v) { return T + (H - T - B) * (ymax - v) / (ymax - ymin); };

  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  fmt::print(out,
             "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
             "font-family=\"sans-serif\" font-size=\"11\">\n"
             "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
             "<line x1=\"{2}\" y1=\"{3}\" x2=\"{2}\" y2=\"{4}\" stroke=\"black\"/>\n"
             "<line x1=\"{2}\" y1=\"{4}\" x2=\"{5}\" y2=\"{4}\" stroke=\"black\"/>\n"
             "<text x=\"{6}\" y=\"{7}\" text-anchor=\"middle\">sequence length (events)</text>\n"
             "<text x=\"14\" y=\"{8}\" transform=\"rotate(-90 14 {8})\" "
             "text-anchor=\"middle\">PPL</text>\n",
             W, H, L, T, H - B, W - R, (L + W - R) / 2, H - 10, (T + H - B) / 2);
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    fmt::print(out, "<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 4,
               y_of(v) + 4, v);
  }
  if (!series.empty()) {
    for (std::size_t i = 0; i < n_bins && i < series.front().bins.size(); ++i) {
      const auto& b = series.front().bins[i];
      const std::string hi = std::isfinite(b.hi) ? fmt::format("{}", b.hi) : "inf";
      fmt::print(out, "<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">[{}, {})</text>\n",
                 x_of(i), H - B + 16, b.lo, hi);
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    std::string path_d;
    bool pen_down = false;
    for (std::size_t i = 0; i < series[s].bins.size(); ++i) {
      const auto& b = series[s].bins[i];
      if (b.empty()) {
        pen_down = false;
        continue;
      }
      path_d += fmt::format("{}{:.1f},{:.1f} ", pen_down ? "L" : "M", x_of(i), y_of(b.ppl()));
      pen_down = true;
      fmt::print(out, "<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", x_of(i),
                 y_of(b.ppl()), color);
    }
    if (!path_d.empty()) {
      fmt::print(out, "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", path_d,
                 color);
    }
    fmt::print(out, "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", W - R - 150,
               T + 14 * (s + 1), color, series[s].label);
  }
  out << "</svg>\n";
}

}  // namespace mmtpp
