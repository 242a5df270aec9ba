#include "mmtpp/events.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mmtpp {

using nlohmann::json;

std::optional<ValidationIssue> validate_sequence(const EventSequence& seq) {
  if (!(seq.horizon > 0.0) || !std::isfinite(seq.horizon)) {
    return ValidationIssue{ErrorCode::NonFiniteTime, 0,
                           "horizon must be positive and finite"};
  }
  if (seq.type_count < 1) {
    return ValidationIssue{ErrorCode::TypeOutOfRange, 0,
                           "type_count must be at least 1"};
  }
  double prev = 0.0;
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const Event& ev = seq.events[i];
    const std::size_t pos = i + 1;
    if (!std::isfinite(ev.time)) {
      return ValidationIssue{ErrorCode::NonFiniteTime, pos,
                             "event time is not finite"};
    }
    if (ev.time < 0.0) {
      return ValidationIssue{ErrorCode::NonMonotoneTime, pos,
                             "event time precedes the origin"};
    }
    if (i > 0 && !(ev.time > prev)) {
      return ValidationIssue{ErrorCode::NonMonotoneTime, pos,
                             "event time does not strictly increase"};
    }
    if (ev.time > seq.horizon) {
      return ValidationIssue{ErrorCode::BeyondHorizon, pos,
                             "event time exceeds the horizon"};
    }
    if (ev.type_id < 0 || ev.type_id >= seq.type_count) {
      return ValidationIssue{ErrorCode::TypeOutOfRange, pos,
                             "type id outside [0, type_count)"};
    }
    prev = ev.time;
  }
  return std::nullopt;
}

void require_valid(const EventSequence& seq) {
  if (auto issue = validate_sequence(seq)) {
    std::ostringstream msg;
    msg << to_string(issue->code) << " at event " << issue->index << ": "
        << issue->message;
    throw Error(issue->code, msg.str(), issue->index);
  }
}

IntervalSeries intervals(const EventSequence& seq) {
  IntervalSeries out;
  out.intervals.reserve(seq.events.size());
  double prev = 0.0;
  for (const Event& ev : seq.events) {
    out.intervals.push_back(ev.time - prev);
    prev = ev.time;
  }
  if (out.intervals.size() > 1) {
    out.adjacent_diffs.reserve(out.intervals.size() - 1);
    for (std::size_t i = 1; i < out.intervals.size(); ++i) {
      out.adjacent_diffs.push_back(
          std::abs(out.intervals[i] - out.intervals[i - 1]));
    }
  }
  return out;
}

json sequence_to_json(const EventSequence& seq) {
  json events = json::array();
  for (const Event& ev : seq.events) {
    json e;
    e["time"] = ev.time;
    e["type"] = ev.type_id;
    e["text"] = ev.text;
    e["image"] = ev.image ? json(*ev.image) : json(nullptr);
    events.push_back(std::move(e));
  }
  json j;
  j["horizon"] = seq.horizon;
  j["type_count"] = seq.type_count;
  j["time_unit"] = seq.time_unit;
  j["events"] = std::move(events);
  return j;
}

namespace {

const json& require_field(const json& obj, const char* name,
                          const char* context) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw Error(ErrorCode::SchemaError,
                std::string("missing field '") + name + "' in " + context);
  }
  return *it;
}

}  // namespace

EventSequence sequence_from_json(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::SchemaError, "sequence record is not an object");
  }
  EventSequence seq;
  try {
    seq.horizon = require_field(j, "horizon", "sequence").get<double>();
    seq.type_count = require_field(j, "type_count", "sequence").get<int>();
    if (auto it = j.find("time_unit"); it != j.end()) {
      seq.time_unit = it->get<std::string>();
    }
    const json& events = require_field(j, "events", "sequence");
    if (!events.is_array()) {
      throw Error(ErrorCode::SchemaError, "field 'events' is not an array");
    }
    seq.events.reserve(events.size());
    for (const json& e : events) {
      Event ev;
      ev.time = require_field(e, "time", "event").get<double>();
      ev.type_id = require_field(e, "type", "event").get<int>();
      if (auto it = e.find("text"); it != e.end() && !it->is_null()) {
        ev.text = it->get<std::string>();
      }
      if (auto it = e.find("image"); it != e.end() && !it->is_null()) {
        ev.image = it->get<std::string>();
      }
      seq.events.push_back(std::move(ev));
    }
  } catch (const json::type_error& ex) {
    throw Error(ErrorCode::SchemaError, ex.what());
  }
  return seq;
}

std::vector<EventSequence> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  std::vector<EventSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(lineno) + ": " + ex.what(), lineno);
    }
    try {
      out.push_back(sequence_from_json(j));
    } catch (const Error& ex) {
      throw Error(ex.code(),
                  "line " + std::to_string(lineno) + ": " + ex.what(), lineno);
    }
  }
  return out;
}

void save_jsonl(std::span<const EventSequence> seqs,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  for (const EventSequence& seq : seqs) {
    out << sequence_to_json(seq).dump() << '\n';
  }
}

}  // namespace mmtpp
