#include "mmtpp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include <fmt/format.h>

namespace mmtpp {
namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double beta_draw(std::mt19937_64& rng, double a) {
  std::gamma_distribution<double> g(a, 1.0);
  const double x = g(rng);
  const double y = g(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

// Short comments, a few per type.
constexpr std::array<const char*, 24> kPhrases = {
    "哈哈哈哈", "233333", "前方高能", "泪目", "awsl", "好听",
    "来了来了", "名场面", "笑死", "太强了", "hhh", "卧槽",
    "打卡", "第一", "2333", "好耶", "经典", "绝了",
    "？？？", "666", "妙啊", "爷青回", "oh no", "nice"};

constexpr double kMinInterval = 1e-4;

}  // namespace

const std::vector<QuantileAnchor>& danmaku_diff_anchors() {
  // The 1.00 anchor is capped well below a real corpus maximum so that a
  // single draw cannot stall a sequence for minutes.
  static const std::vector<QuantileAnchor> anchors = {
      {0.00, 0.0003}, {0.05, 0.007}, {0.10, 0.017}, {0.20, 0.045},
      {0.25, 0.063},  {0.50, 0.214}, {0.75, 0.590}, {0.90, 1.330},
      {0.95, 2.115},  {1.00, 12.0}};
  return anchors;
}

double danmaku_diff_inverse_cdf(double u) {
  const auto& a = danmaku_diff_anchors();
  u = std::clamp(u, 0.0, 1.0);
  std::size_t k = 1;
  while (k + 1 < a.size() && a[k].percentile < u) ++k;
  const auto& lo = a[k - 1];
  const auto& hi = a[k];
  const double w = (u - lo.percentile) / (hi.percentile - lo.percentile);
  return std::exp(std::log(lo.value) + w * (std::log(hi.value) - std::log(lo.value)));
}

std::vector<EventSequence> danmaku_corpus(const DanmakuConfig& config) {
  if (config.type_count < 1 || config.burst_share_shape <= 0.0 ||
      config.mean_regime_run < 1.0 || config.level <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "invalid danmaku corpus config");
  }
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66DULL);
  const double switch_rate = 1.0 / config.mean_regime_run;
  const int per_type = static_cast<int>(kPhrases.size()) / std::min<int>(config.type_count, 8);

  std::vector<EventSequence> out;
  out.reserve(config.n_sequences);
  double share = 0.5;
  for (std::size_t s = 0; s < config.n_sequences; ++s) {
    // Antithetic pairs keep the pooled burst share at 1/2, which is what
    // makes the pooled differences follow the anchor table.
    share = s % 2 == 0 ? beta_draw(rng, config.burst_share_shape) : 1.0 - share;
    const double leave_burst = 2.0 * switch_rate * (1.0 - share);
    const double leave_calm = 2.0 * switch_rate * share;

    EventSequence seq;
    seq.type_count = config.type_count;
    seq.time_unit = "s";
    seq.events.reserve(config.events_per_sequence);

    bool burst = uniform01(rng) < share;
    double tau = 0.5 * config.level;
    double t = 0.0;
    // Marks are independent of timing: a per-sequence type mix, then a
    // phrase drawn uniformly from the type's pool.
    std::vector<double> mix(static_cast<std::size_t>(config.type_count));
    for (double& w : mix) w = std::gamma_distribution<double>(1.0, 1.0)(rng);
    std::discrete_distribution<int> type_dist(mix.begin(), mix.end());
    for (std::size_t i = 0; i < config.events_per_sequence; ++i) {
      if (i > 0) {
        const double u = uniform01(rng);
        const double d = danmaku_diff_inverse_cdf(burst ? 0.5 * u : 0.5 + 0.5 * u);
        // Reverts towards `level`; a step that would reach zero goes up instead.
        const bool down = uniform01(rng) < tau / (tau + config.level);
        tau = (down && tau - d >= kMinInterval) ? tau - d : tau + d;
        t += tau;
      } else {
        t = tau;
      }
      const int type = type_dist(rng);
      const int slot = static_cast<int>(rng() % static_cast<std::uint64_t>(per_type));
      const char* text = kPhrases[static_cast<std::size_t>(((type % 8) * per_type + slot) %
                                               static_cast<int>(kPhrases.size()))];
      seq.events.push_back({t, type, text, std::nullopt});

      const double flip = uniform01(rng);
      if (burst ? flip < leave_burst : flip < leave_calm) burst = !burst;
    }
    seq.horizon = t + config.level;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<EventSequence> grammar_corpus(const GrammarConfig& config) {
  if (config.type_count < 1 || config.intervals.empty() ||
      std::any_of(config.intervals.begin(), config.intervals.end(),
                  [](double x) { return !(x > 0.0) || !std::isfinite(x); })) {
    throw Error(ErrorCode::InvalidArgument, "invalid grammar corpus config");
  }
  const std::size_t m = config.intervals.size();
  const auto e = static_cast<std::size_t>(config.type_count);
  std::vector<EventSequence> out;
  out.reserve(config.n_sequences);
  for (std::size_t s = 0; s < config.n_sequences; ++s) {
    EventSequence seq;
    seq.type_count = config.type_count;
    seq.time_unit = "s";
    double t = 0.0;
    for (std::size_t i = 0; i < config.events_per_sequence; ++i) {
      t += config.intervals[(s + i) % m];
      const int type = static_cast<int>((s / m + i) % e);
      seq.events.push_back(
          {t, type, config.with_text ? fmt::format("e{}", type) : std::string(), std::nullopt});
    }
    seq.horizon = t + config.intervals[(s + config.events_per_sequence) % m];
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace mmtpp
