// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/serialize.hpp"

namespace shrink {

/// Splits UTF-8 text into code points, each returned as its byte sequence.
inline std::vector<std::string> utf8_chars(const std::string &text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xf0)
      len = 4;
    else if (c >= 0xe0)
      len = 3;
    else if (c >= 0xc0)
      len = 2;
    if (i + len > text.size())
      throw DataError("malformed UTF-8 in \"" + text + "\"");
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

/// Character vocabulary. Index 0 is the CTC blank and never appears in
/// transcripts.
class Vocabulary {
public:
  static constexpr const char *blank_symbol = "<blank>";

  Vocabulary() : symbols_{blank_symbol} {}

  /// `chars` are the non-blank symbols in index order 1..n.
  explicit Vocabulary(const std::vector<std::string> &chars) : symbols_{blank_symbol} {
    for (const auto &c : chars)
      add(c);
  }

  static Vocabulary from_alphabet(const std::string &utf8) { return Vocabulary(utf8_chars(utf8)); }

  /// Sorted set of characters seen in the transcripts.
  static Vocabulary from_transcripts(const std::vector<std::string> &texts) {
    std::vector<std::string> chars;
    for (const auto &t : texts)
      for (auto &c : utf8_chars(t))
        chars.push_back(std::move(c));
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    return Vocabulary(chars);
  }

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string> &symbols() const { return symbols_; }
  const std::string &symbol(std::size_t id) const { return symbols_.at(id); }
  bool contains(const std::string &c) const { return index_.count(c) != 0; }

  std::vector<int> tokenize(const std::string &text) const {
    std::vector<int> ids;
    for (const auto &c : utf8_chars(text)) {
      const auto it = index_.find(c);
      if (it == index_.end())
        throw DataError("character '" + c + "' in \"" + text + "\" is not in the vocabulary");
      ids.push_back(it->second);
    }
    return ids;
  }

  std::string detokenize(const std::vector<int> &ids) const {
    std::string out;
    for (const int id : ids) {
      if (id <= 0 || static_cast<std::size_t>(id) >= symbols_.size())
        throw DataError("token id " + std::to_string(id) + " cannot be detokenized");
      out += symbols_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  /// One symbol per line; the first line is the blank marker.
  std::string serialize() const {
    std::string out;
    for (const auto &s : symbols_)
      out += s + "\n";
    return out;
  }

  static Vocabulary parse(const std::string &text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != blank_symbol)
      throw FormatError("vocabulary must start with a " + std::string(blank_symbol) + " line");
    std::vector<std::string> chars;
    while (std::getline(is, line)) {
      if (utf8_chars(line).size() != 1)
        throw FormatError("vocabulary line \"" + line + "\" is not a single character");
      chars.push_back(line);
    }
    return Vocabulary(chars);
  }

  void save(const std::filesystem::path &path) const { io::atomic_write(path, serialize()); }
  static Vocabulary load(const std::filesystem::path &path) { return parse(io::read_file(path)); }

  bool operator==(const Vocabulary &other) const { return symbols_ == other.symbols_; }

private:
  void add(const std::string &c) {
    if (utf8_chars(c).size() != 1)
      throw ConfigError("vocabulary symbol \"" + c + "\" is not a single character");
    if (index_.count(c))
      throw ConfigError("duplicate vocabulary symbol '" + c + "'");
    index_[c] = static_cast<int>(symbols_.size());
    symbols_.push_back(c);
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

} // namespace shrink
