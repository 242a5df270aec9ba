#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmtpp/compression.hpp"
#include "mmtpp/events.hpp"
#include "mmtpp/timecodec.hpp"
#include "mmtpp/vocab.hpp"

namespace mmtpp {

enum class Provenance : std::uint8_t {
  Structural,
  Time,
  Type,
  Text,
  Vision,
  Task,
  System,
};

struct TokenStream {
  std::vector<TokenId> ids;
  std::vector<Provenance> provenance;  // parallel to ids

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  void push(TokenId id, Provenance p) {
    ids.push_back(id);
    provenance.push_back(p);
  }
  void append(const TokenStream& other);
  bool operator==(const TokenStream&) const = default;
};

enum class TaskKind : std::uint8_t { Time, Type, Text };

std::string_view to_string(TaskKind k);
TaskKind task_kind_from_string(std::string_view s);  // throws InvalidArgument

struct PromptResponsePair {
  TokenStream prompt;
  TokenStream response;
  TaskKind task = TaskKind::Time;
  std::size_t sequence_index = 0;
  std::size_t split_index = 0;  // 1-based index of the last history event
};

// System-prompt block rendered as
//   <|im_start|>system\n{system_prompt}\n<|im_end|>\n{header}\n
// The block is omitted when system_prompt is unset.
struct TemplateOptions {
  std::optional<std::string> system_prompt;
  std::string header = "Event Sequence:";
};

inline constexpr std::size_t kNoBudget = std::numeric_limits<std::size_t>::max();

// Token count of one full event block.
std::size_t event_token_cost(const Event& ev);

TokenStream encode_event(const Event& ev, double prev_time,
                         const Vocabulary& vocab);

TokenStream encode_system_block(const TemplateOptions& options,
                                const Vocabulary& vocab);

struct EncodedWindow {
  TokenStream stream;
  std::size_t first_event = 0;     // 0-based index of the oldest event kept
  std::size_t events_in_window = 0;  // full + similar events represented
};

// Encodes the newest events of `seq` (optionally compressed) that fit in
// `budget` tokens together with the system block. Whole events only; the
// oldest event in the window is always written in full. Intervals are taken
// relative to the previous event that was not dropped.
EncodedWindow encode_window(const EventSequence& seq, const Vocabulary& vocab,
                            const CompressionMask& mask, std::size_t budget,
                            const TemplateOptions& options = {});

TokenStream encode_sequence(const EventSequence& seq, const Vocabulary& vocab,
                            const CompressionPolicy* policy = nullptr,
                            std::size_t budget = kNoBudget,
                            const TemplateOptions& options = {});

struct ParsedEvent {
  float interval = 0.0f;
  ByteQuad time_bytes{};
  int type_id = 0;
  std::string text;
  bool has_image = false;
};

struct SimilarEventMarker {
  bool operator==(const SimilarEventMarker&) const = default;
};

using StreamItem = std::variant<ParsedEvent, SimilarEventMarker>;

struct ParsedStream {
  std::optional<std::string> system_text;  // text inside im_start/im_end
  std::string header_text;                 // text between im_end and events
  std::vector<StreamItem> items;
  std::optional<Special> task;             // trailing task token, if any
};

// Inverse of the event grammar. Throws GrammarError naming the expected
// token and its 0-based position.
ParsedStream parse_stream(std::span<const TokenId> ids, const Vocabulary& vocab);
inline ParsedStream parse_stream(const TokenStream& ts, const Vocabulary& vocab) {
  return parse_stream(ts.ids, vocab);
}

// Push-down check that every start token is closed by its matching end token.
bool is_balanced(std::span<const TokenId> ids, const Vocabulary& vocab);

// Stage 1: consecutive windows of each sequence, each fitting in `budget`.
std::vector<TokenStream> build_stage1_corpus(
    std::span<const EventSequence> seqs, const Vocabulary& vocab,
    const CompressionPolicy& policy, std::size_t budget,
    const TemplateOptions& options = {});

struct Stage2Options {
  TemplateOptions templ;
  std::size_t split_stride = 1;
  std::size_t min_history = 1;
};

// Stage 2: for each split point i, the prompt is the history of events
// 1..i plus the task token and the response is the target for event i+1.
std::vector<PromptResponsePair> build_stage2_pairs(
    std::span<const EventSequence> seqs, const Vocabulary& vocab,
    const CompressionPolicy& policy, std::size_t budget, TaskKind task,
    const Stage2Options& options = {});

TokenStream response_tokens(const Event& target, double prev_time,
                            TaskKind task, const Vocabulary& vocab);
TokenId task_token(TaskKind task, const Vocabulary& vocab);

// Decoders for generated responses; nullopt when the tokens do not form a
// valid answer for the task.
std::optional<DecodedTime> decode_time_response(std::span<const TokenId> ids,
                                                const Vocabulary& vocab);
std::optional<int> decode_type_response(std::span<const TokenId> ids,
                                        const Vocabulary& vocab);
std::optional<std::string> decode_text_response(std::span<const TokenId> ids,
                                                const Vocabulary& vocab);

// Human-readable rendering: specials written literally, text bytes raw, and
// a line break after line-ending tokens (end of each template field, event
// markers, task tokens).
std::string render(std::span<const TokenId> ids, const Vocabulary& vocab);

// Inverse of render() for text that contains no literal special-token
// spellings inside event text.
std::vector<TokenId> tokenize_rendered(std::string_view text,
                                       const Vocabulary& vocab);

// Whitespace-separated literal tokens; lossless in both directions.
std::string to_token_text(std::span<const TokenId> ids, const Vocabulary& vocab);
std::vector<TokenId> from_token_text(std::string_view text,
                                     const Vocabulary& vocab);

// Little-endian 32-bit id arrays.
void write_ids(const std::filesystem::path& path, std::span<const TokenId> ids);
std::vector<TokenId> read_ids(const std::filesystem::path& path);

bool is_valid_utf8(std::string_view s) noexcept;

}  // namespace mmtpp
