#include "latopt/parity.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "json_util.hpp"

namespace latopt {

namespace {

using detail::json;

std::uint32_t checksum_from_json(const json& n, const std::string& where) {
  if (n.is_number_unsigned()) {
    const auto v = n.get<std::uint64_t>();
    if (v <= 0xFFFFFFFFu) return static_cast<std::uint32_t>(v);
  } else if (n.is_string()) {
    std::string s = n.get<std::string>();
    if (s.starts_with("0x") || s.starts_with("0X")) s = s.substr(2);
    if (!s.empty() && s.size() <= 8 && s.find_first_not_of("0123456789abcdefABCDEF") == std::string::npos) {
      return static_cast<std::uint32_t>(std::stoul(s, nullptr, 16));
    }
  }
  throw ParseError(where + ": expected a CRC32 as an integer or up to 8 hex digits");
}

std::vector<float> floats_from_le(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

std::string floats_to_le(const std::vector<double>& values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (const double v : values) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  }
  return out;
}

}  // namespace

ParityFixture parity_fixture_from_json(std::string_view text, const std::filesystem::path& base_dir) {
  const json root = detail::parse_json(text, "parity fixture");
  detail::ObjectReader r(root, "");
  ParityFixture f;
  const json& z = r.node("z");
  if (!z.is_array() || z.empty()) throw ParseError("z: expected a non-empty array");
  if (z.front().is_array()) {
    f.latents = detail::ObjectReader::convert<std::vector<std::vector<double>>>(z, "z");
  } else {
    f.latents.push_back(detail::ObjectReader::convert<std::vector<double>>(z, "z"));
  }
  f.expected_checksum = checksum_from_json(r.node("expected_logits_checksum"), "expected_logits_checksum");
  f.blob_path = r.get<std::string>("expected_logits_blob_path");
  if (f.blob_path.is_relative() && !base_dir.empty()) f.blob_path = base_dir / f.blob_path;
  r.finish();
  return f;
}

ParityFixture load_parity_fixture(const std::filesystem::path& path) {
  return parity_fixture_from_json(detail::read_text_file(path), path.parent_path());
}

std::string to_json(const ParityFixture& fixture, const std::filesystem::path& json_dir) {
  std::filesystem::path blob = fixture.blob_path;
  if (!json_dir.empty()) {
    const auto rel = blob.lexically_relative(json_dir);
    if (!rel.empty() && *rel.begin() != "..") blob = rel;
  }
  json j;
  j["z"] = fixture.latents;
  j["expected_logits_checksum"] = fmt::format("{:08x}", fixture.expected_checksum);
  j["expected_logits_blob_path"] = blob.generic_string();
  return j.dump(1) + "\n";
}

ParityReport check_parity(const DecoderGraph& graph, const ParityFixture& fixture) {
  std::string blob;
  try {
    blob = detail::read_text_file(fixture.blob_path);
  } catch (const ParseError& e) {
    throw WeightFileError(WeightErrorCode::io, e.what());
  }
  if (crc32_bytes(blob) != fixture.expected_checksum) {
    throw WeightFileError(WeightErrorCode::checksum,
                          fmt::format("parity blob {}: checksum {:08x}, fixture expects {:08x}",
                                      fixture.blob_path.string(), crc32_bytes(blob), fixture.expected_checksum));
  }
  const std::size_t per = element_count(graph.output_shape());
  if (blob.size() != 4 * per * fixture.latents.size()) {
    throw ConfigError(fmt::format("parity blob {} holds {} bytes; {} latents of output {} need {}",
                                  fixture.blob_path.string(), blob.size(), fixture.latents.size(),
                                  shape_string(graph.output_shape()), 4 * per * fixture.latents.size()));
  }
  const std::vector<float> expected = floats_from_le(blob);
  ParityReport report;
  for (std::size_t k = 0; k < fixture.latents.size(); ++k) {
    const std::vector<double> y = decode(graph, fixture.latents[k]);
    for (std::size_t i = 0; i < per; ++i) {
      report.max_abs_error = std::max(report.max_abs_error, std::abs(y[i] - static_cast<double>(expected[k * per + i])));
    }
    report.values += per;
    ++report.latents;
  }
  return report;
}

ParityFixture write_parity_fixture(const DecoderGraph& graph, const std::vector<std::vector<double>>& latents,
                                   const std::filesystem::path& json_path, const std::filesystem::path& blob_path) {
  std::vector<double> all;
  for (const auto& z : latents) {
    const std::vector<double> y = decode(graph, z);
    all.insert(all.end(), y.begin(), y.end());
  }
  const std::string blob = floats_to_le(all);
  detail::write_text_file(blob_path, blob);
  ParityFixture f{latents, crc32_bytes(blob), blob_path};
  detail::write_text_file(json_path, to_json(f, json_path.parent_path()));
  return f;
}

}  // namespace latopt
