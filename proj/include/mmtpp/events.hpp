#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtpp/error.hpp"

namespace mmtpp {

// One timestamped multimodal point.
struct Event {
  double time = 0.0;
  int type_id = 0;
  std::string text;
  std::optional<std::string> image;  // path or opaque handle to a raster patch

  bool operator==(const Event&) const = default;
};

// Events ordered in time over the observation window (0, horizon].
//
// Times are strictly increasing. The first event may sit at the origin
// itself (t_1 = 0), which is how sequences anchored at their first
// observation are written out.
struct EventSequence {
  std::vector<Event> events;
  double horizon = 1.0;
  int type_count = 1;
  std::string time_unit;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }
  bool operator==(const EventSequence&) const = default;
};

// Inter-event intervals with the virtual origin t_0 = 0.
struct IntervalSeries {
  std::vector<double> intervals;       // tau_i = t_i - t_{i-1}
  std::vector<double> adjacent_diffs;  // |tau_{i+1} - tau_i|
};

struct ValidationIssue {
  ErrorCode code;
  std::size_t index;  // 1-based event index, 0 for sequence-level problems
  std::string message;
};

// Returns the first invariant violation, or nullopt when the sequence is valid.
std::optional<ValidationIssue> validate_sequence(const EventSequence& seq);

// Throws mmtpp::Error on the first violation.
void require_valid(const EventSequence& seq);

IntervalSeries intervals(const EventSequence& seq);

nlohmann::json sequence_to_json(const EventSequence& seq);
EventSequence sequence_from_json(const nlohmann::json& j);

std::vector<EventSequence> load_jsonl(const std::filesystem::path& path);
void save_jsonl(std::span<const EventSequence> seqs,
                const std::filesystem::path& path);

}  // namespace mmtpp
