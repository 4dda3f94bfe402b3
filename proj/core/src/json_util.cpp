#include "json_util.hpp"

#include <fstream>
#include <sstream>

namespace latopt::detail {

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::ostringstream os;
    os << what << ": line " << line << ", column " << column << ": " << e.what();
    throw ParseError(os.str());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ObjectReader::ObjectReader(const json& node, std::string path) : obj_(node), path_(std::move(path)) {
  if (!obj_.is_object()) throw ParseError((path_.empty() ? std::string("<root>") : path_) + ": expected an object");
}

std::string ObjectReader::field_path(std::string_view key) const {
  return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
}

bool ObjectReader::has(std::string_view key) const { return obj_.contains(key); }

const json& ObjectReader::node(std::string_view key) {
  seen_.emplace(key);
  const auto it = obj_.find(key);
  if (it == obj_.end()) throw ParseError(field_path(key) + ": missing required field");
  return *it;
}

const json* ObjectReader::optional_node(std::string_view key) {
  seen_.emplace(key);
  const auto it = obj_.find(key);
  if (it == obj_.end() || it->is_null()) return nullptr;
  return &*it;
}

void ObjectReader::finish() const {
  for (const auto& [key, value] : obj_.items()) {
    if (!seen_.contains(key)) throw ParseError(field_path(key) + ": unknown field");
  }
}

}  // namespace latopt::detail
