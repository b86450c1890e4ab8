#include "cgforge/symbolizer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "cgforge/error.hpp"
#include "cgforge/rng.hpp"
#include "cgforge/x86.hpp"

namespace cgforge {

namespace {

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '@' ||
         c == '$' || c == '?';
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

std::optional<unsigned long long> hex_value(std::string_view s) {
  unsigned long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool is_quoted(std::string_view tok) {
  return tok.size() >= 2 && (tok.front() == '"' || tok.front() == '\'') &&
         tok.back() == tok.front();
}

// IDA names string literals 'a' + capitalised contents: aHelloWorld, aS, a1.
bool is_ida_string_name(std::string_view tok) {
  if (tok.size() < 2 || tok[0] != 'a') return false;
  const auto c = static_cast<unsigned char>(tok[1]);
  if (!std::isupper(c) && !std::isdigit(c)) return false;
  return std::all_of(tok.begin() + 1, tok.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_';
  });
}

std::string with_suffix(const std::string& base, unsigned long long value,
                        const SymbolizationPolicy& policy) {
  return base + std::to_string(value % policy.modulus);
}

const std::set<std::string>& loose_bases() {
  static const std::set<std::string> bases = [] {
    std::set<std::string> b{"fun", "str"};
    for (const auto& nc : default_name_classes()) b.insert(nc.loose_base);
    return b;
  }();
  return bases;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '"' || c == '\'') {
      std::size_t j = text.find(c, i + 1);
      j = (j == std::string_view::npos) ? text.size() : j + 1;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (ident_char(c)) {
      std::size_t j = i;
      while (j < text.size() && ident_char(text[j])) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

void SymbolizationPolicy::validate() const {
  if (modulus < 1) throw Error("symbolization modulus must be >= 1");
}

std::string SymbolizationPolicy::name() const {
  return mode == SymbolizationMode::kStrict ? "strict" : "loose";
}

SymbolizationPolicy parse_policy(std::string_view mode, unsigned modulus) {
  SymbolizationPolicy p;
  if (mode == "strict") {
    p.mode = SymbolizationMode::kStrict;
  } else if (mode == "loose") {
    p.mode = SymbolizationMode::kLoose;
  } else {
    throw Error("unknown symbolization policy '" + std::string(mode) + "'");
  }
  p.modulus = modulus;
  p.validate();
  return p;
}

const std::vector<NameClass>& default_name_classes() {
  // Longer prefixes first so xmmword_ wins over word_.
  static const std::vector<NameClass> classes = {
      {"xmmword_", "word", "xmmword"}, {"ymmword_", "word", "ymmword"},
      {"zmmword_", "word", "zmmword"}, {"qword_", "word", "qword"},
      {"dword_", "word", "dword"},     {"fword_", "word", "fword"},
      {"oword_", "word", "oword"},     {"word_", "word", "word"},
      {"struct_", "struct", "struct"}, {"byte_", "byte", "byte"},
      {"loc_", "loc", "loc"},          {"arg_", "arg", "arg"},
      {"sub_", "fun", "fun"},          {"var_", "var", "var"},
      {"unk_", "unk", "unk"},          {"off_", "offset", "offset"},
      {"flt_", "flt", "flt"},          {"dbl_", "dbl", "dbl"},
  };
  return classes;
}

std::string symbolize_token(std::string_view tok, const SymbolizationPolicy& policy) {
  const bool loose = policy.mode == SymbolizationMode::kLoose;
  if (is_quoted(tok)) {
    return loose ? "str" + std::to_string(tok.size() - 2) : "str";
  }
  for (const auto& nc : default_name_classes()) {
    if (tok.size() > nc.prefix.size() && tok.substr(0, nc.prefix.size()) == nc.prefix) {
      if (!loose) return nc.strict_base;
      if (auto v = hex_value(tok.substr(nc.prefix.size()))) return with_suffix(nc.loose_base, *v, policy);
      return nc.strict_base;
    }
  }
  if (is_ida_string_name(tok)) {
    return loose ? "str" + std::to_string(tok.size() - 1) : "str";
  }
  if (x86::parse_number(tok)) return "num";
  return std::string(tok);
}

std::string symbolize_call_target(std::string_view tok, const SymbolizationPolicy& policy) {
  const bool loose = policy.mode == SymbolizationMode::kLoose;
  if (tok.substr(0, 3) == "fun" && (tok.size() == 3 || all_digits(tok.substr(3)))) {
    return loose ? std::string(tok) : "fun";
  }
  std::optional<unsigned long long> value = x86::parse_number(tok);
  if (!value) {
    for (std::string_view prefix : {"sub_", "j_sub_", "nullsub_", "loc_"}) {
      if (tok.size() > prefix.size() && tok.substr(0, prefix.size()) == prefix) {
        value = hex_value(tok.substr(prefix.size()));
        break;
      }
    }
  }
  if (!loose || !value) return "fun";
  return with_suffix("fun", *value, policy);
}

std::vector<std::string> symbolize_instruction(std::span<const std::string> tokens,
                                               const SymbolizationPolicy& policy) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  std::size_t m = 0;
  while (m < tokens.size() && x86::is_prefix(tokens[m])) ++m;
  bool direct_call = false;
  if (m < tokens.size() && x86::is_call(tokens[m]) && m + 1 < tokens.size()) {
    direct_call = std::none_of(tokens.begin() + static_cast<std::ptrdiff_t>(m + 1), tokens.end(),
                               [](const std::string& t) {
                                 return t == "[" || x86::canonical_register(t).has_value();
                               });
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (direct_call && i + 1 == tokens.size()) {
      out.push_back(symbolize_call_target(tokens[i], policy));
    } else {
      out.push_back(symbolize_token(tokens[i], policy));
    }
  }
  return out;
}

Slice symbolize_slice(const Slice& s, const SymbolizationPolicy& policy) {
  policy.validate();
  Slice out = s;
  out.tokens.clear();
  if (s.token_offsets.size() != s.kept_addrs.size() || s.token_offsets.empty()) {
    out.tokens = symbolize_instruction(s.tokens, policy);
    return out;
  }
  for (std::size_t k = 0; k < s.token_offsets.size(); ++k) {
    const std::size_t begin = s.token_offsets[k];
    const std::size_t end = k + 1 < s.token_offsets.size() ? s.token_offsets[k + 1] : s.tokens.size();
    auto sym = symbolize_instruction(
        std::span<const std::string>(s.tokens).subspan(begin, end - begin), policy);
    out.token_offsets[k] = out.tokens.size();
    out.tokens.insert(out.tokens.end(), sym.begin(), sym.end());
  }
  return out;
}

std::string coarsen(std::string_view tok) {
  std::size_t end = tok.size();
  while (end > 0 && std::isdigit(static_cast<unsigned char>(tok[end - 1]))) --end;
  // Loose symbols always carry a suffix; bare "dword" is the size keyword.
  if (end == tok.size()) return std::string(tok);
  const std::string base(tok.substr(0, end));
  if (!loose_bases().contains(base)) return std::string(tok);
  for (const auto& nc : default_name_classes()) {
    if (nc.loose_base == base) return nc.strict_base;
  }
  return base;  // fun, str
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(SymbolizationPolicy policy, std::vector<std::string> tokens)
    : policy_(policy), tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[kPad] != kPadToken || tokens_[kUnk] != kUnkToken)
    throw Error("vocabulary must start with the PAD and UNK tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second)
      throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

bool Vocabulary::contains(std::string_view tok) const {
  return index_.find(std::string(tok)) != index_.end();
}

std::int32_t Vocabulary::index_of(std::string_view tok) const {
  auto it = index_.find(std::string(tok));
  return it == index_.end() ? kUnk : it->second;
}

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a(policy_.name());
  h = fnv1a(std::to_string(policy_.modulus), h);
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j = {{"version", 1},
                      {"policy", policy_.name()},
                      {"N", policy_.modulus},
                      {"hash", hash()},
                      {"tokens", tokens_}};
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  if (j.at("version").get<int>() != 1) throw Error("unsupported vocabulary version");
  auto policy = parse_policy(j.at("policy").get<std::string>(), j.at("N").get<unsigned>());
  Vocabulary v(policy, j.at("tokens").get<std::vector<std::string>>());
  if (j.contains("hash") && j["hash"].get<std::string>() != v.hash())
    throw MismatchError("vocabulary hash does not match its contents");
  return v;
}

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus,
                            const SymbolizationPolicy& policy) {
  policy.validate();
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::set<std::string> seen;
  for (const auto& seq : corpus) seen.insert(seq.begin(), seq.end());
  seen.erase(Vocabulary::kPadToken);
  seen.erase(Vocabulary::kUnkToken);
  std::vector<std::string> tokens{Vocabulary::kPadToken, Vocabulary::kUnkToken};
  tokens.insert(tokens.end(), seen.begin(), seen.end());
  return Vocabulary(policy, std::move(tokens));
}

}  // namespace cgforge
