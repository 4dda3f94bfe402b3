#include <doctest.h>

#include <fstream>

#include "latopt/errors.hpp"
#include "latopt/image_io.hpp"
#include "latopt/parity.hpp"
#include "test_support.hpp"

using namespace latopt;
namespace fs = std::filesystem;

namespace {

DecoderGraph toy_decoder() {
  CounterRng rng(77);
  DecoderGraph g(4, {1, 3, 5});
  g.add_tensor(testing::random_tensor("w", {15, 4}, rng));
  g.add_tensor(testing::random_tensor("b", {15}, rng));
  g.add_node({.op = OpKind::dense, .weight = "w", .bias = "b"});
  g.add_node({.op = OpKind::reshape, .dims = {1, 3, 5}});
  g.add_node({.op = OpKind::tanh});
  g.validate();
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("PGM header, orientation and rounding") {
  const DensityField x(3, 2, {0.0, 0.5, 1.0, 0.2, 0.998, 0.001});
  const std::string pgm = encode_pgm(x);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(pgm.substr(0, header.size()) == header);
  const std::vector<int> want{0, 128, 255, 51, 254, 0};
  for (std::size_t i = 0; i < 6; ++i) CHECK(static_cast<unsigned char>(pgm[header.size() + i]) == want[i]);
}

TEST_CASE("PGM round-trips within one grey level") {
  CounterRng rng(4);
  const auto x = testing::random_field(7, 5, rng);
  testing::TempDir dir("pgm");
  write_pgm(x, dir.path() / "x.pgm");
  const auto back = read_pgm(dir.path() / "x.pgm");
  CHECK(back.nelx == 7);
  CHECK(back.nely == 5);
  for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(std::abs(back.values[i] - x.values[i]) <= 0.5 / 255 + 1e-12);
  const auto ascii = decode_pgm("P2\n# comment\n2 1\n4\n0 4\n");
  CHECK(ascii.values == std::vector<double>{0.0, 1.0});
  CHECK_THROWS(decode_pgm("P6\n1 1\n255\nx"));
  CHECK_THROWS(decode_pgm("P5\n2 2\n255\nab"));
}

TEST_CASE("parity fixture written by the checker validates") {
  const DecoderGraph g = toy_decoder();
  testing::TempDir dir("parity");
  CounterRng rng(5);
  std::vector<std::vector<double>> zs;
  for (int i = 0; i < 3; ++i) zs.push_back(testing::random_vector(4, rng));
  const auto written = write_parity_fixture(g, zs, dir.path() / "fixture.json", dir.path() / "logits.bin");
  CHECK(fs::file_size(dir.path() / "logits.bin") == 3u * 15u * 4u);
  CHECK(written.expected_checksum == crc32_bytes(slurp(dir.path() / "logits.bin")));
  const auto f = load_parity_fixture(dir.path() / "fixture.json");
  CHECK(f.latents == zs);
  CHECK(f.expected_checksum == written.expected_checksum);
  const auto report = check_parity(g, f);
  CHECK(report.latents == 3);
  CHECK(report.values == 45);
  CHECK(report.max_abs_error < 1e-6);
  CHECK(slurp(dir.path() / "fixture.json").find("\"logits.bin\"") != std::string::npos);
}

TEST_CASE("parity fixtures from the training side parse") {
  testing::TempDir dir("parity_in");
  const auto one = parity_fixture_from_json(
      R"({"z": [0.5, -1, 2, 0], "expected_logits_checksum": "0x00C0FFEE", "expected_logits_blob_path": "a.bin"})",
      dir.path());
  CHECK(one.latents.size() == 1);
  CHECK(one.latents[0] == std::vector<double>{0.5, -1, 2, 0});
  CHECK(one.expected_checksum == 0x00C0FFEEu);
  CHECK(one.blob_path == dir.path() / "a.bin");
  const auto many = parity_fixture_from_json(
      R"({"z": [[1, 2], [3, 4]], "expected_logits_checksum": 12648430, "expected_logits_blob_path": "/x/b.bin"})");
  CHECK(many.latents.size() == 2);
  CHECK(many.expected_checksum == 12648430u);
  CHECK(many.blob_path == fs::path("/x/b.bin"));
  CHECK_THROWS_AS(parity_fixture_from_json(R"({"z": [1], "expected_logits_checksum": "xyz",
      "expected_logits_blob_path": "b"})"),
                  ParseError);
}

TEST_CASE("parity detects tampered blobs and wrong decoders") {
  const DecoderGraph g = toy_decoder();
  testing::TempDir dir("parity_bad");
  const std::vector<std::vector<double>> zs{{1, 0, 0, 0}, {0, 1, 0, 0}};
  auto f = write_parity_fixture(g, zs, dir.path() / "f.json", dir.path() / "l.bin");

  std::string blob = slurp(dir.path() / "l.bin");
  blob[5] = static_cast<char>(blob[5] ^ 0x10);
  std::ofstream(dir.path() / "l.bin", std::ios::binary | std::ios::trunc) << blob;
  try {
    (void)check_parity(g, f);
    FAIL("tampered blob accepted");
  } catch (const WeightFileError& e) {
    CHECK(e.code() == WeightErrorCode::checksum);
  }

  f.expected_checksum = crc32_bytes(blob);
  CHECK(check_parity(g, f).max_abs_error > 0.0);

  f.latents.pop_back();
  CHECK_THROWS_AS(check_parity(g, f), ConfigError);

  f.blob_path = dir.path() / "missing.bin";
  try {
    (void)check_parity(g, f);
    FAIL("missing blob accepted");
  } catch (const WeightFileError& e) {
    CHECK(e.code() == WeightErrorCode::io);
  }
}
