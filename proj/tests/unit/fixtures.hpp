#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "mmtpp/events.hpp"
#include "mmtpp/timecodec.hpp"

namespace mmtpp::testing {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(MMTPP_TEST_DATA_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline double interval_from_bytes(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                                  std::uint8_t d) {
  return static_cast<double>(bytes_to_float(ByteQuad{a, b, c, d}));
}

// The four-event taxi sequence rendered in the sample-sequence golden file.
inline EventSequence golden_taxi_sequence() {
  EventSequence seq;
  seq.type_count = 6;
  seq.time_unit = "hours";
  const double t2 = interval_from_bytes(62, 162, 34, 34);
  const double t3 = t2 + interval_from_bytes(62, 196, 68, 68);
  const double t4 = t3 + interval_from_bytes(63, 17, 16, 161);
  seq.events = {
      {0.0, 0, "Picked up at Tribeca (40.711086, -74.016106), 1 passengers.",
       "patch_0.png"},
      {t2, 3,
       "Dropped off from Tribeca (40.711086, -74.016106) to Times Square "
       "(40.757698, -73.982124), 1 passengers, 2.87 miles trip.",
       "patch_1.png"},
      {t3, 4,
       "Picked up at Upper West Side (40.799252, -73.970146), 1 passengers.",
       "patch_2.png"},
      {t4, 1,
       "Dropped off from Upper West Side (40.799252, -73.970146) to Tribeca "
       "(40.714455, -74.014008), 1 passengers, 4.37 miles trip.",
       "patch_3.png"},
  };
  seq.horizon = t4 + 1.0;
  return seq;
}

// Random text mixing ASCII with 2-, 3- and 4-byte UTF-8 code points.
inline std::string random_utf8(std::mt19937_64& rng, std::size_t max_chars) {
  static const char* kPieces[] = {"a", "Z", " ", "7", ",", "é", "ß", "中",
                                  "文", "€", "😀", "🚕", "\n", "<", "|"};
  std::uniform_int_distribution<std::size_t> len(0, max_chars);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPieces) - 1);
  std::string out;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) out += kPieces[pick(rng)];
  return out;
}

inline EventSequence random_sequence(std::mt19937_64& rng, std::size_t max_events,
                                     int type_count = 4) {
  std::uniform_int_distribution<std::size_t> count(0, max_events);
  std::uniform_int_distribution<int> type(0, type_count - 1);
  std::exponential_distribution<double> gap(1.0);
  std::bernoulli_distribution has_image(0.5);
  EventSequence seq;
  seq.type_count = type_count;
  seq.time_unit = "s";
  double t = 0.0;
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    t += gap(rng) + 1e-6;
    Event ev{t, type(rng), random_utf8(rng, 6), std::nullopt};
    if (has_image(rng)) ev.image = "img_" + std::to_string(i) + ".png";
    seq.events.push_back(std::move(ev));
  }
  seq.horizon = t + 1.0;
  return seq;
}

}  // namespace mmtpp::testing
