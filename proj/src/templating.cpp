#include "mmtpp/templating.hpp"

#include <fstream>
#include <sstream>

namespace mmtpp {

namespace {

constexpr std::size_t kEventOverhead = 13;  // markers + 4 time bytes + type
constexpr std::size_t kImageCost = 3;

void push_text(TokenStream& ts, std::string_view text, const Vocabulary& vocab,
               Provenance p) {
  for (unsigned char c : text) ts.push(vocab.text_byte(c), p);
}

bool ends_line(const Vocabulary& vocab, TokenId id) {
  const TokenInfo& info = vocab.info(id);
  if (info.category != TokenCategory::Special) return false;
  switch (static_cast<Special>(info.value)) {
    case Special::StartOfEvent:
    case Special::EndOfEvent:
    case Special::TimeEnd:
    case Special::TypeEnd:
    case Special::TextEnd:
    case Special::VisionEnd:
    case Special::SimilarEvent:
    case Special::TimePrediction:
    case Special::TypePrediction:
    case Special::Question:
      return true;
    default:
      return false;
  }
}

std::size_t action_cost(const Event& ev, EventAction a) {
  switch (a) {
    case EventAction::Full: return event_token_cost(ev);
    case EventAction::Similar: return 1;
    case EventAction::Dropped: return 0;
  }
  return 0;
}

// prev_time[j]: time of the closest earlier event that is not dropped.
std::vector<double> previous_times(const EventSequence& seq,
                                   const CompressionMask& mask) {
  std::vector<double> prev(seq.size(), 0.0);
  double last = 0.0;
  for (std::size_t j = 0; j < seq.size(); ++j) {
    prev[j] = last;
    if (mask.actions[j] != EventAction::Dropped) last = seq.events[j].time;
  }
  return prev;
}

// Emits events [first, end) with `first` forced to a full block.
void emit_range(TokenStream& out, const EventSequence& seq,
                const Vocabulary& vocab, const CompressionMask& mask,
                const std::vector<double>& prev, std::size_t first,
                std::size_t end) {
  for (std::size_t j = first; j < end; ++j) {
    const EventAction a = j == first ? EventAction::Full : mask.actions[j];
    if (a == EventAction::Dropped) continue;
    if (a == EventAction::Similar) {
      out.push(vocab.special(Special::SimilarEvent), Provenance::Structural);
      continue;
    }
    out.append(encode_event(seq.events[j], prev[j], vocab));
  }
}

struct WindowPlan {
  std::size_t first = 0;
  std::size_t events = 0;
};

// Oldest start index k < end such that sys + full(k) + suffix cost fits.
WindowPlan plan_window(const EventSequence& seq, const CompressionMask& mask,
                       std::size_t end, std::size_t budget,
                       std::size_t sys_cost) {
  if (end == 0) return {0, 0};
  if (sys_cost > budget) {
    throw Error(ErrorCode::BudgetTooSmall,
                "system block alone exceeds the token budget");
  }
  const std::size_t room = budget - sys_cost;
  std::size_t suffix = 0;  // cost of events (k, end)
  std::optional<std::size_t> best;
  for (std::size_t k = end; k-- > 0;) {
    if (mask.actions[k] != EventAction::Dropped) {
      const std::size_t full = event_token_cost(seq.events[k]);
      if (suffix <= room && full <= room - suffix) best = k;
    }
    suffix += action_cost(seq.events[k], mask.actions[k]);
    if (suffix > room) break;
  }
  if (!best) {
    throw Error(ErrorCode::BudgetTooSmall,
                "token budget " + std::to_string(budget) +
                    " cannot hold a single event");
  }
  WindowPlan plan{*best, 0};
  for (std::size_t j = *best; j < end; ++j) {
    if (mask.actions[j] != EventAction::Dropped) ++plan.events;
  }
  return plan;
}

EncodedWindow encode_prefix_window(const EventSequence& seq,
                                   const Vocabulary& vocab,
                                   const CompressionMask& mask,
                                   const std::vector<double>& prev,
                                   std::size_t end, std::size_t budget,
                                   const TokenStream& sys) {
  const WindowPlan plan = plan_window(seq, mask, end, budget, sys.size());
  EncodedWindow out;
  out.stream = sys;
  emit_range(out.stream, seq, vocab, mask, prev, plan.first, end);
  out.first_event = plan.first;
  out.events_in_window = plan.events;
  return out;
}

}  // namespace

void TokenStream::append(const TokenStream& other) {
  ids.insert(ids.end(), other.ids.begin(), other.ids.end());
  provenance.insert(provenance.end(), other.provenance.begin(),
                    other.provenance.end());
}

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Time: return "time";
    case TaskKind::Type: return "type";
    case TaskKind::Text: return "text";
  }
  return "time";
}

TaskKind task_kind_from_string(std::string_view s) {
  if (s == "time") return TaskKind::Time;
  if (s == "type") return TaskKind::Type;
  if (s == "text") return TaskKind::Text;
  throw Error(ErrorCode::InvalidArgument,
              "unknown task '" + std::string(s) + "'");
}

bool is_valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong forms, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

std::size_t event_token_cost(const Event& ev) {
  return kEventOverhead + ev.text.size() + (ev.image ? kImageCost : 0);
}

TokenStream encode_event(const Event& ev, double prev_time,
                         const Vocabulary& vocab) {
  if (ev.type_id < 0 || ev.type_id >= vocab.type_count()) {
    throw Error(ErrorCode::UnknownType,
                "event type " + std::to_string(ev.type_id) +
                    " has no token in the vocabulary");
  }
  if (!is_valid_utf8(ev.text)) {
    throw Error(ErrorCode::TextEncodingError, "event text is not valid UTF-8");
  }
  const ByteQuad bytes = encode_time(ev.time - prev_time);

  TokenStream ts;
  ts.ids.reserve(event_token_cost(ev));
  ts.provenance.reserve(event_token_cost(ev));
  ts.push(vocab.special(Special::StartOfEvent), Provenance::Structural);
  ts.push(vocab.special(Special::TimeStart), Provenance::Structural);
  for (std::uint8_t b : bytes) ts.push(vocab.time_byte(b), Provenance::Time);
  ts.push(vocab.special(Special::TimeEnd), Provenance::Structural);
  ts.push(vocab.special(Special::TypeStart), Provenance::Structural);
  ts.push(vocab.type_token(ev.type_id), Provenance::Type);
  ts.push(vocab.special(Special::TypeEnd), Provenance::Structural);
  ts.push(vocab.special(Special::TextStart), Provenance::Structural);
  push_text(ts, ev.text, vocab, Provenance::Text);
  ts.push(vocab.special(Special::TextEnd), Provenance::Structural);
  if (ev.image) {
    ts.push(vocab.special(Special::VisionStart), Provenance::Structural);
    ts.push(vocab.special(Special::ImagePad), Provenance::Vision);
    ts.push(vocab.special(Special::VisionEnd), Provenance::Structural);
  }
  ts.push(vocab.special(Special::EndOfEvent), Provenance::Structural);
  return ts;
}

TokenStream encode_system_block(const TemplateOptions& options,
                                const Vocabulary& vocab) {
  TokenStream ts;
  if (!options.system_prompt) return ts;
  ts.push(vocab.special(Special::ImStart), Provenance::System);
  push_text(ts, "system\n" + *options.system_prompt + "\n", vocab,
            Provenance::System);
  ts.push(vocab.special(Special::ImEnd), Provenance::System);
  push_text(ts, "\n" + options.header + "\n", vocab, Provenance::System);
  return ts;
}

EncodedWindow encode_window(const EventSequence& seq, const Vocabulary& vocab,
                            const CompressionMask& mask, std::size_t budget,
                            const TemplateOptions& options) {
  if (mask.size() != seq.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "compression mask does not match the sequence length");
  }
  const TokenStream sys = encode_system_block(options, vocab);
  return encode_prefix_window(seq, vocab, mask, previous_times(seq, mask),
                              seq.size(), budget, sys);
}

TokenStream encode_sequence(const EventSequence& seq, const Vocabulary& vocab,
                            const CompressionPolicy* policy, std::size_t budget,
                            const TemplateOptions& options) {
  require_valid(seq);
  const CompressionMask mask =
      policy ? make_mask(seq, *policy) : make_mask(seq, CompressionPolicy::none());
  return encode_window(seq, vocab, mask, budget, options).stream;
}

ParsedStream parse_stream(std::span<const TokenId> ids, const Vocabulary& vocab) {
  ParsedStream out;
  std::size_t pos = 0;
  const std::size_t n = ids.size();

  auto fail = [&](std::string_view expected) -> void {
    std::string found = pos < n && vocab.contains(ids[pos])
                            ? vocab.token_string(ids[pos])
                            : std::string(pos < n ? "<invalid id>" : "end of stream");
    throw Error(ErrorCode::GrammarError,
                "expected " + std::string(expected) + " at position " +
                    std::to_string(pos) + ", found " + found,
                pos);
  };
  auto category = [&](std::size_t p) -> std::optional<TokenInfo> {
    if (p >= n || !vocab.contains(ids[p])) return std::nullopt;
    return vocab.info(ids[p]);
  };
  auto is_special = [&](std::size_t p, Special s) {
    return p < n && vocab.is(ids[p], s);
  };
  auto expect = [&](Special s) {
    if (!is_special(pos, s)) fail(special_literal(s));
    ++pos;
  };
  auto read_text = [&]() {
    std::string text;
    while (auto info = category(pos)) {
      if (info->category != TokenCategory::TextByte) break;
      text.push_back(static_cast<char>(info->value));
      ++pos;
    }
    return text;
  };

  if (is_special(pos, Special::ImStart)) {
    ++pos;
    out.system_text = read_text();
    expect(Special::ImEnd);
  }
  out.header_text = read_text();

  while (pos < n) {
    if (is_special(pos, Special::SimilarEvent)) {
      out.items.emplace_back(SimilarEventMarker{});
      ++pos;
      continue;
    }
    if (is_special(pos, Special::TimePrediction) ||
        is_special(pos, Special::TypePrediction) ||
        is_special(pos, Special::Question)) {
      out.task = static_cast<Special>(vocab.info(ids[pos]).value);
      ++pos;
      if (pos != n) fail("end of stream after task token");
      break;
    }
    expect(Special::StartOfEvent);
    ParsedEvent ev;
    expect(Special::TimeStart);
    for (std::size_t k = 0; k < 4; ++k) {
      auto info = category(pos);
      if (!info || info->category != TokenCategory::TimeByte) fail("time byte token");
      ev.time_bytes[k] = static_cast<std::uint8_t>(info->value);
      ++pos;
    }
    ev.interval = bytes_to_float(ev.time_bytes);
    expect(Special::TimeEnd);
    expect(Special::TypeStart);
    {
      auto info = category(pos);
      if (!info || info->category != TokenCategory::Type) fail("type token");
      ev.type_id = info->value;
      ++pos;
    }
    expect(Special::TypeEnd);
    expect(Special::TextStart);
    ev.text = read_text();
    expect(Special::TextEnd);
    if (is_special(pos, Special::VisionStart)) {
      ++pos;
      expect(Special::ImagePad);
      expect(Special::VisionEnd);
      ev.has_image = true;
    }
    expect(Special::EndOfEvent);
    out.items.emplace_back(std::move(ev));
  }
  return out;
}

bool is_balanced(std::span<const TokenId> ids, const Vocabulary& vocab) {
  auto closer_of = [](Special s) -> std::optional<Special> {
    switch (s) {
      case Special::StartOfEvent: return Special::EndOfEvent;
      case Special::TimeStart: return Special::TimeEnd;
      case Special::TypeStart: return Special::TypeEnd;
      case Special::TextStart: return Special::TextEnd;
      case Special::VisionStart: return Special::VisionEnd;
      case Special::ImStart: return Special::ImEnd;
      default: return std::nullopt;
    }
  };
  auto is_closer = [](Special s) {
    return s == Special::EndOfEvent || s == Special::TimeEnd ||
           s == Special::TypeEnd || s == Special::TextEnd ||
           s == Special::VisionEnd || s == Special::ImEnd;
  };
  std::vector<Special> stack;
  for (TokenId id : ids) {
    if (!vocab.contains(id)) return false;
    const TokenInfo& info = vocab.info(id);
    if (info.category != TokenCategory::Special) continue;
    const auto s = static_cast<Special>(info.value);
    if (auto close = closer_of(s)) {
      stack.push_back(*close);
    } else if (is_closer(s)) {
      if (stack.empty() || stack.back() != s) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

std::vector<TokenStream> build_stage1_corpus(std::span<const EventSequence> seqs,
                                             const Vocabulary& vocab,
                                             const CompressionPolicy& policy,
                                             std::size_t budget,
                                             const TemplateOptions& options) {
  policy.validate();
  const TokenStream sys = encode_system_block(options, vocab);
  if (sys.size() > budget) {
    throw Error(ErrorCode::BudgetTooSmall,
                "system block alone exceeds the token budget");
  }
  const std::size_t room = budget - sys.size();
  std::vector<TokenStream> corpus;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const EventSequence& seq = seqs[s];
    require_valid(seq);
    const CompressionMask mask = make_mask(seq, policy, sequence_salt(s));
    const auto prev = previous_times(seq, mask);
    std::size_t j = 0;
    while (j < seq.size()) {
      if (mask.actions[j] == EventAction::Dropped) {
        ++j;
        continue;
      }
      const std::size_t first = j;
      std::size_t used = event_token_cost(seq.events[first]);
      if (used > room) {
        throw Error(ErrorCode::BudgetTooSmall,
                    "token budget " + std::to_string(budget) +
                        " cannot hold a single event");
      }
      ++j;
      while (j < seq.size()) {
        const std::size_t c = action_cost(seq.events[j], mask.actions[j]);
        if (used + c > room) break;
        used += c;
        ++j;
      }
      TokenStream ts = sys;
      emit_range(ts, seq, vocab, mask, prev, first, j);
      corpus.push_back(std::move(ts));
    }
  }
  return corpus;
}

TokenId task_token(TaskKind task, const Vocabulary& vocab) {
  switch (task) {
    case TaskKind::Time: return vocab.special(Special::TimePrediction);
    case TaskKind::Type: return vocab.special(Special::TypePrediction);
    case TaskKind::Text: return vocab.special(Special::Question);
  }
  return vocab.special(Special::TimePrediction);
}

TokenStream response_tokens(const Event& target, double prev_time, TaskKind task,
                            const Vocabulary& vocab) {
  TokenStream ts;
  switch (task) {
    case TaskKind::Time:
      for (std::uint8_t b : encode_time(target.time - prev_time)) {
        ts.push(vocab.time_byte(b), Provenance::Time);
      }
      break;
    case TaskKind::Type:
      ts.push(vocab.type_token(target.type_id), Provenance::Type);
      break;
    case TaskKind::Text:
      if (!is_valid_utf8(target.text)) {
        throw Error(ErrorCode::TextEncodingError, "target text is not valid UTF-8");
      }
      push_text(ts, target.text, vocab, Provenance::Text);
      ts.push(vocab.special(Special::TextEnd), Provenance::Structural);
      break;
  }
  return ts;
}

std::vector<PromptResponsePair> build_stage2_pairs(
    std::span<const EventSequence> seqs, const Vocabulary& vocab,
    const CompressionPolicy& policy, std::size_t budget, TaskKind task,
    const Stage2Options& options) {
  policy.validate();
  if (options.split_stride == 0 || options.min_history == 0) {
    throw Error(ErrorCode::InvalidArgument,
                "split_stride and min_history must be positive");
  }
  const TokenStream sys = encode_system_block(options.templ, vocab);
  const TokenId task_id = task_token(task, vocab);
  std::vector<PromptResponsePair> pairs;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const EventSequence& seq = seqs[s];
    require_valid(seq);
    if (seq.size() < 2) {
      throw Error(ErrorCode::TooShortSequence,
                  "sequence " + std::to_string(s) +
                      " needs at least 2 events for prompt-response pairs",
                  s + 1);
    }
    const CompressionMask mask = make_mask(seq, policy, sequence_salt(s));
    const auto prev = previous_times(seq, mask);
    for (std::size_t i = options.min_history; i < seq.size();
         i += options.split_stride) {
      // History ends at event i (1-based), which must be present.
      if (mask.actions[i - 1] == EventAction::Dropped) continue;
      const Event& target = seq.events[i];
      TokenStream response =
          response_tokens(target, seq.events[i - 1].time, task, vocab);
      const std::size_t reserve = 1 + response.size();
      if (reserve > budget) {
        throw Error(ErrorCode::BudgetTooSmall,
                    "token budget cannot hold the response");
      }
      EncodedWindow win =
          encode_prefix_window(seq, vocab, mask, prev, i, budget - reserve, sys);
      PromptResponsePair pair;
      pair.prompt = std::move(win.stream);
      pair.prompt.push(task_id, Provenance::Task);
      pair.response = std::move(response);
      pair.task = task;
      pair.sequence_index = s;
      pair.split_index = i;
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

std::optional<DecodedTime> decode_time_response(std::span<const TokenId> ids,
                                                const Vocabulary& vocab) {
  ByteQuad bytes{};
  std::size_t k = 0;
  for (TokenId id : ids) {
    if (!vocab.contains(id)) return std::nullopt;
    const TokenInfo& info = vocab.info(id);
    if (info.category != TokenCategory::TimeByte) return std::nullopt;
    if (k == 4) return std::nullopt;
    bytes[k++] = static_cast<std::uint8_t>(info.value);
  }
  if (k != 4) return std::nullopt;
  return decode_time(bytes);
}

std::optional<int> decode_type_response(std::span<const TokenId> ids,
                                        const Vocabulary& vocab) {
  if (ids.size() != 1 || !vocab.contains(ids[0])) return std::nullopt;
  const TokenInfo& info = vocab.info(ids[0]);
  if (info.category != TokenCategory::Type) return std::nullopt;
  return info.value;
}

std::optional<std::string> decode_text_response(std::span<const TokenId> ids,
                                                const Vocabulary& vocab) {
  std::string text;
  for (TokenId id : ids) {
    if (!vocab.contains(id)) return std::nullopt;
    const TokenInfo& info = vocab.info(id);
    if (info.category == TokenCategory::TextByte) {
      text.push_back(static_cast<char>(info.value));
    } else if (info.category == TokenCategory::Special &&
               static_cast<Special>(info.value) == Special::TextEnd) {
      return text;
    } else {
      return std::nullopt;
    }
  }
  return text;
}

std::string render(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const TokenInfo& info = vocab.info(id);
    if (info.category == TokenCategory::TextByte) {
      out.push_back(static_cast<char>(info.value));
      continue;
    }
    out += vocab.token_string(id);
    if (ends_line(vocab, id)) out.push_back('\n');
  }
  return out;
}

std::vector<TokenId> tokenize_rendered(std::string_view text,
                                       const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "<|") == 0) {
      const std::size_t close = text.find("|>", i + 2);
      if (close != std::string_view::npos) {
        const auto literal = text.substr(i, close + 2 - i);
        if (auto id = vocab.find(literal)) {
          ids.push_back(*id);
          i = close + 2;
          if (ends_line(vocab, *id) && i < text.size() && text[i] == '\n') ++i;
          continue;
        }
      }
    }
    ids.push_back(vocab.text_byte(static_cast<unsigned char>(text[i])));
    ++i;
  }
  return ids;
}

std::string to_token_text(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    out += vocab.token_string(ids[k]);
    out.push_back(ends_line(vocab, ids[k]) || k + 1 == ids.size() ? '\n' : ' ');
  }
  return out;
}

std::vector<TokenId> from_token_text(std::string_view text,
                                     const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\n' || c == '\t' || c == '\r';
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    const auto literal = text.substr(i, j - i);
    auto id = vocab.find(literal);
    if (!id) {
      throw Error(ErrorCode::ParseError,
                  "unknown token '" + std::string(literal) + "'", ids.size());
    }
    ids.push_back(*id);
    i = j;
  }
  return ids;
}

void write_ids(const std::filesystem::path& path, std::span<const TokenId> ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (TokenId id : ids) {
    const auto v = static_cast<std::uint32_t>(id);
    const char bytes[4] = {static_cast<char>(v & 0xFF),
                           static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF),
                           static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes, 4);
  }
}

std::vector<TokenId> read_ids(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (raw.size() % 4 != 0) {
    throw Error(ErrorCode::ParseError,
                "id file length is not a multiple of 4 bytes");
  }
  std::vector<TokenId> ids(raw.size() / 4);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data() + 4 * k);
    const std::uint32_t v = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                            (std::uint32_t{p[2]} << 16) |
                            (std::uint32_t{p[3]} << 24);
    ids[k] = static_cast<TokenId>(v);
  }
  return ids;
}

}  // namespace mmtpp
