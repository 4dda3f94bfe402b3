#pragma once

// Internal helpers for strict JSON reading: unknown keys are rejected and
// every error names the field path or the line/column of a syntax error.

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "latopt/errors.hpp"

namespace latopt::detail {

using json = nlohmann::json;

json parse_json(std::string_view text, std::string_view what);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path);

  [[nodiscard]] const std::string& path() const noexcept { return path_; }
  [[nodiscard]] std::string field_path(std::string_view key) const;
  [[nodiscard]] bool has(std::string_view key) const;

  const json& node(std::string_view key);
  /// Present and not null, or std::nullopt.
  const json* optional_node(std::string_view key);

  template <class T>
  T get(std::string_view key) {
    return convert<T>(node(key), field_path(key));
  }

  template <class T>
  T get_or(std::string_view key, T fallback) {
    const json* n = optional_node(key);
    return n ? convert<T>(*n, field_path(key)) : fallback;
  }

  template <class T>
  std::optional<T> get_optional(std::string_view key) {
    const json* n = optional_node(key);
    if (!n) return std::nullopt;
    return convert<T>(*n, field_path(key));
  }

  /// Throws ParseError if the object holds keys that were never read.
  void finish() const;

  template <class T>
  static T convert(const json& n, const std::string& where) {
    try {
      return n.get<T>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace latopt::detail
