#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "latopt/decoder.hpp"

namespace latopt {

/// Cross-implementation decode check written by the training side:
///   {"z": [...] or [[...], ...],
///    "expected_logits_checksum": <CRC32 of the blob, integer or 8 hex digits>,
///    "expected_logits_blob_path": "<file>"}
/// The blob holds the decoder outputs of every latent in order as float32
/// little-endian values. A relative blob path resolves against the fixture's
/// directory.
struct ParityFixture {
  std::vector<std::vector<double>> latents;
  std::uint32_t expected_checksum = 0;
  std::filesystem::path blob_path;
};

ParityFixture parity_fixture_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
ParityFixture load_parity_fixture(const std::filesystem::path& path);

/// Fixture JSON with `blob_path` written relative to `json_dir` when it lies below it.
std::string to_json(const ParityFixture& fixture, const std::filesystem::path& json_dir = {});

struct ParityReport {
  std::size_t latents = 0;
  std::size_t values = 0;
  double max_abs_error = 0.0;
};

/// Decodes every latent and compares against the fixture blob. Throws
/// WeightFileError(checksum) if the blob does not match its checksum and
/// ConfigError if its size does not fit the graph output.
ParityReport check_parity(const DecoderGraph& graph, const ParityFixture& fixture);

/// Writes the blob of `graph`'s outputs for `latents` to `blob_path` and the
/// fixture JSON to `json_path`.
ParityFixture write_parity_fixture(const DecoderGraph& graph, const std::vector<std::vector<double>>& latents,
                                   const std::filesystem::path& json_path, const std::filesystem::path& blob_path);

}  // namespace latopt
