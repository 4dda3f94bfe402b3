#include "latopt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "json_util.hpp"
#include "latopt/errors.hpp"

namespace latopt {

std::string encode_pgm(const DensityField& x) {
  std::string out = "P5\n" + std::to_string(x.nelx) + " " + std::to_string(x.nely) + "\n255\n";
  out.reserve(out.size() + x.size());
  for (double v : x.values) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * c))));
  }
  return out;
}

void write_pgm(const DensityField& x, const std::filesystem::path& path) {
  detail::write_text_file(path, encode_pgm(x));
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(const std::string& s) : s_(s) {}

  int header_int() {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("pgm: expected an integer at byte " + std::to_string(start));
    return std::stoi(s_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (pos_ < s_.size()) {
      if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t pos_ = 0;
  const std::string& s_;
};

}  // namespace

DensityField decode_pgm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
    throw ParseError("pgm: missing P5/P2 magic");
  }
  const bool binary = bytes[1] == '5';
  PgmReader r(bytes);
  r.pos_ = 2;
  const int w = r.header_int();
  const int h = r.header_int();
  const int maxval = r.header_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw ParseError("pgm: unsupported header");
  DensityField out(w, h);
  if (binary) {
    ++r.pos_;  // single whitespace after maxval
    if (bytes.size() < r.pos_ + out.size()) throw ParseError("pgm: truncated pixel data");
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.values[i] = static_cast<unsigned char>(bytes[r.pos_ + i]) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = r.header_int() / static_cast<double>(maxval);
  }
  return out;
}

DensityField read_pgm(const std::filesystem::path& path) { return decode_pgm(detail::read_text_file(path)); }

}  // namespace latopt
