#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mmtpp {

using TokenId = std::int32_t;

enum class Special : std::uint8_t {
  StartOfEvent,
  EndOfEvent,
  TimeStart,
  TimeEnd,
  TypeStart,
  TypeEnd,
  TextStart,
  TextEnd,
  VisionStart,
  VisionEnd,
  ImagePad,
  SimilarEvent,
  ImStart,
  ImEnd,
  TimePrediction,
  TypePrediction,
  Question,
};

inline constexpr int kSpecialCount = 17;

std::string_view special_name(Special s);  // e.g. "start_of_event"

enum class TokenCategory : std::uint8_t { TextByte, TimeByte, Type, Special };

struct TokenInfo {
  TokenCategory category;
  int value;  // byte value, type id, or the Special enumerator
};

// Unified token space: 256 byte-level text tokens, 256 time-byte tokens,
// the structural/task specials, and one token per event type.
//
// Literal spellings: text bytes are `<0xHH>`, time bytes `<|byte_N|>`,
// types `<|type_K|>`, specials `<|name|>`. The default layout assigns ids
// in that order (text, time, specials, types) so that adding event types
// never moves an existing id.
class Vocabulary {
 public:
  explicit Vocabulary(int type_count);

  // Accepts any bijective assignment, as long as every required token is
  // present and every token string is recognised.
  static Vocabulary from_json(const nlohmann::json& j);
  static Vocabulary load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return strings_.size(); }
  int type_count() const noexcept { return type_count_; }

  TokenId text_byte(std::uint8_t b) const { return text_ids_[b]; }
  TokenId time_byte(std::uint8_t b) const { return time_ids_[b]; }
  TokenId special(Special s) const {
    return special_ids_[static_cast<std::size_t>(s)];
  }
  TokenId type_token(int type_id) const;  // throws UnknownType

  const TokenInfo& info(TokenId id) const;  // throws InvalidArgument
  bool contains(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < strings_.size();
  }
  bool is(TokenId id, Special s) const noexcept {
    return contains(id) && id == special(s);
  }
  const std::string& token_string(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;

  bool operator==(const Vocabulary& other) const {
    return strings_ == other.strings_;
  }

 private:
  Vocabulary() = default;
  void index();

  int type_count_ = 0;
  std::vector<std::string> strings_;
  std::vector<TokenInfo> infos_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::vector<TokenId> text_ids_;
  std::vector<TokenId> time_ids_;
  std::vector<TokenId> special_ids_;
  std::vector<TokenId> type_ids_;
};

std::string text_byte_literal(std::uint8_t b);
std::string time_byte_literal(std::uint8_t b);
std::string type_literal(int type_id);
std::string special_literal(Special s);

// Parses a literal token spelling into its category and value.
std::optional<TokenInfo> parse_token_literal(std::string_view token);

}  // namespace mmtpp
