#include "mmtpp/vocab.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include "mmtpp/error.hpp"

namespace mmtpp {

namespace {

constexpr std::array<std::string_view, kSpecialCount> kSpecialNames = {
    "start_of_event", "end_of_event",    "time_start",      "time_end",
    "type_start",     "type_end",        "text_start",      "text_end",
    "vision_start",   "vision_end",      "image_pad",       "similar_event",
    "im_start",       "im_end",          "time_prediction", "type_prediction",
    "question",
};

std::optional<int> parse_int(std::string_view s, int base = 10) {
  if (s.empty()) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, base);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

std::string_view special_name(Special s) {
  return kSpecialNames[static_cast<std::size_t>(s)];
}

std::string text_byte_literal(std::uint8_t b) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out = "<0x";
  out += kHex[b >> 4];
  out += kHex[b & 0xF];
  out += '>';
  return out;
}

std::string time_byte_literal(std::uint8_t b) {
  return "<|byte_" + std::to_string(b) + "|>";
}

std::string type_literal(int type_id) {
  return "<|type_" + std::to_string(type_id) + "|>";
}

std::string special_literal(Special s) {
  return "<|" + std::string(special_name(s)) + "|>";
}

std::optional<TokenInfo> parse_token_literal(std::string_view token) {
  if (token.size() == 6 && token.starts_with("<0x") && token.ends_with(">")) {
    auto v = parse_int(token.substr(3, 2), 16);
    if (v && token[3] != '-' && token[3] != '+') {
      return TokenInfo{TokenCategory::TextByte, *v};
    }
    return std::nullopt;
  }
  if (!token.starts_with("<|") || !token.ends_with("|>") || token.size() < 5) {
    return std::nullopt;
  }
  std::string_view name = token.substr(2, token.size() - 4);
  if (name.starts_with("byte_")) {
    auto v = parse_int(name.substr(5));
    if (v && *v >= 0 && *v <= 255 && std::to_string(*v) == name.substr(5)) {
      return TokenInfo{TokenCategory::TimeByte, *v};
    }
    return std::nullopt;
  }
  if (name.starts_with("type_") && name != "type_start" &&
      name != "type_end" && name != "type_prediction") {
    auto v = parse_int(name.substr(5));
    if (v && *v >= 0 && std::to_string(*v) == name.substr(5)) {
      return TokenInfo{TokenCategory::Type, *v};
    }
    return std::nullopt;
  }
  for (int i = 0; i < kSpecialCount; ++i) {
    if (kSpecialNames[i] == name) return TokenInfo{TokenCategory::Special, i};
  }
  return std::nullopt;
}

Vocabulary::Vocabulary(int type_count) : type_count_(type_count) {
  if (type_count < 1) {
    throw Error(ErrorCode::InvalidArgument, "type_count must be at least 1");
  }
  strings_.reserve(512 + kSpecialCount + type_count);
  for (int b = 0; b < 256; ++b) strings_.push_back(text_byte_literal(b));
  for (int b = 0; b < 256; ++b) strings_.push_back(time_byte_literal(b));
  for (int s = 0; s < kSpecialCount; ++s) {
    strings_.push_back(special_literal(static_cast<Special>(s)));
  }
  for (int k = 0; k < type_count; ++k) strings_.push_back(type_literal(k));
  index();
}

void Vocabulary::index() {
  infos_.clear();
  lookup_.clear();
  text_ids_.assign(256, -1);
  time_ids_.assign(256, -1);
  special_ids_.assign(kSpecialCount, -1);
  int max_type = -1;
  for (std::size_t id = 0; id < strings_.size(); ++id) {
    auto info = parse_token_literal(strings_[id]);
    if (!info) {
      throw Error(ErrorCode::SchemaError,
                  "unrecognised token '" + strings_[id] + "'");
    }
    if (!lookup_.emplace(strings_[id], static_cast<TokenId>(id)).second) {
      throw Error(ErrorCode::SchemaError,
                  "duplicate token '" + strings_[id] + "'");
    }
    infos_.push_back(*info);
    if (info->category == TokenCategory::Type) {
      max_type = std::max(max_type, info->value);
    }
  }
  type_count_ = max_type + 1;
  type_ids_.assign(static_cast<std::size_t>(type_count_), -1);
  for (std::size_t id = 0; id < infos_.size(); ++id) {
    const TokenInfo& info = infos_[id];
    const auto tid = static_cast<TokenId>(id);
    switch (info.category) {
      case TokenCategory::TextByte: text_ids_[info.value] = tid; break;
      case TokenCategory::TimeByte: time_ids_[info.value] = tid; break;
      case TokenCategory::Special: special_ids_[info.value] = tid; break;
      case TokenCategory::Type: type_ids_[info.value] = tid; break;
    }
  }
  auto require_all = [](const std::vector<TokenId>& ids, const char* what) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) {
        throw Error(ErrorCode::SchemaError, std::string("vocabulary lacks ") +
                                                what + " " + std::to_string(i));
      }
    }
  };
  require_all(text_ids_, "text byte");
  require_all(time_ids_, "time byte");
  require_all(special_ids_, "special token");
  require_all(type_ids_, "type token");
  if (type_count_ < 1) {
    throw Error(ErrorCode::SchemaError, "vocabulary has no type tokens");
  }
}

TokenId Vocabulary::type_token(int type_id) const {
  if (type_id < 0 || type_id >= type_count_) {
    throw Error(ErrorCode::UnknownType,
                "type " + std::to_string(type_id) + " not in vocabulary");
  }
  return type_ids_[static_cast<std::size_t>(type_id)];
}

const TokenInfo& Vocabulary::info(TokenId id) const {
  if (!contains(id)) {
    throw Error(ErrorCode::InvalidArgument,
                "token id " + std::to_string(id) + " out of range");
  }
  return infos_[static_cast<std::size_t>(id)];
}

const std::string& Vocabulary::token_string(TokenId id) const {
  if (!contains(id)) {
    throw Error(ErrorCode::InvalidArgument,
                "token id " + std::to_string(id) + " out of range");
  }
  return strings_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t id = 0; id < strings_.size(); ++id) {
    j[strings_[id]] = id;
  }
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::SchemaError, "vocabulary JSON must be an object");
  }
  Vocabulary v;
  v.strings_.assign(j.size(), std::string());
  std::vector<bool> seen(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) {
      throw Error(ErrorCode::SchemaError, "id for '" + it.key() +
                                              "' is not an integer");
    }
    const auto id = it.value().get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= j.size() || seen[id]) {
      throw Error(ErrorCode::SchemaError,
                  "ids must form a bijection onto [0, n); bad id for '" +
                      it.key() + "'");
    }
    seen[id] = true;
    v.strings_[id] = it.key();
  }
  v.index();
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorCode::ParseError, ex.what());
  }
  return from_json(j);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  // Written in id order so the file diffs cleanly.
  nlohmann::ordered_json j;
  for (std::size_t id = 0; id < strings_.size(); ++id) j[strings_[id]] = id;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace mmtpp
