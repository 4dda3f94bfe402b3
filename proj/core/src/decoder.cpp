#include "latopt/decoder.hpp"

#include <zlib.h>

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json_util.hpp"
#include "latopt/rng.hpp"

namespace latopt {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 8> kOpNames{{
    {OpKind::dense, "dense"},
    {OpKind::conv2d, "conv2d"},
    {OpKind::upsample_bilinear2x, "upsample_bilinear2x"},
    {OpKind::leaky_relu, "leaky_relu"},
    {OpKind::tanh, "tanh"},
    {OpKind::sigmoid, "sigmoid"},
    {OpKind::add, "add"},
    {OpKind::reshape, "reshape"},
}};

std::string node_label(const std::vector<DecoderNode>& nodes, int i) {
  if (i < 0) return "input";
  return "node " + std::to_string(i) + " (" + std::string(to_string(nodes[i].op)) + ")";
}

[[noreturn]] void shape_error(const std::string& what) { throw WeightFileError(WeightErrorCode::shape, what); }

}  // namespace

std::string_view to_string(OpKind op) noexcept {
  for (const auto& [k, name] : kOpNames) {
    if (k == op) return name;
  }
  return "?";
}

OpKind op_from_string(std::string_view s) {
  for (const auto& [k, name] : kOpNames) {
    if (name == s) return k;
  }
  throw WeightFileError(WeightErrorCode::manifest, "unknown op '" + std::string(s) + "'");
}

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// ---------------------------------------------------------------------------
// Graph

namespace {

// U = G g G^T with G = [1 0 0; 1/2 1/2 1/2; 1/2 -1/2 1/2; 0 0 1]
std::vector<double> winograd_transform(const std::vector<double>& k, int oc, int ic) {
  const std::size_t block = static_cast<std::size_t>(oc) * ic;
  std::vector<double> u(16 * block);
  for (std::size_t oi = 0; oi < block; ++oi) {
    const double* g = k.data() + 9 * oi;
    double gg[4][3];
    for (int j = 0; j < 3; ++j) {
      gg[0][j] = g[j];
      gg[1][j] = 0.5 * (g[j] + g[3 + j] + g[6 + j]);
      gg[2][j] = 0.5 * (g[j] - g[3 + j] + g[6 + j]);
      gg[3][j] = g[6 + j];
    }
    for (int i = 0; i < 4; ++i) {
      const double r[4] = {gg[i][0], 0.5 * (gg[i][0] + gg[i][1] + gg[i][2]), 0.5 * (gg[i][0] - gg[i][1] + gg[i][2]),
                           gg[i][2]};
      for (int j = 0; j < 4; ++j) u[static_cast<std::size_t>(4 * i + j) * block + oi] = r[j];
    }
  }
  return u;
}

}  // namespace

void DecoderGraph::add_tensor(NamedTensor t) {
  if (t.name.empty()) throw WeightFileError(WeightErrorCode::manifest, "tensor with empty name");
  if (tensor_index(t.name) >= 0) throw WeightFileError(WeightErrorCode::manifest, "duplicate tensor '" + t.name + "'");
  if (t.data.size() != element_count(t.shape)) {
    shape_error("tensor '" + t.name + "' holds " + std::to_string(t.data.size()) + " values for shape " +
                shape_string(t.shape));
  }
  compute_.emplace_back(t.data.begin(), t.data.end());
  winograd_.push_back(t.shape.size() == 4 && t.shape[2] == 3 && t.shape[3] == 3
                          ? winograd_transform(compute_.back(), t.shape[0], t.shape[1])
                          : std::vector<double>{});
  tensors_.push_back(std::move(t));
  shapes_.clear();
}

const NamedTensor* DecoderGraph::find_tensor(std::string_view name) const noexcept {
  const int i = tensor_index(name);
  return i < 0 ? nullptr : &tensors_[static_cast<std::size_t>(i)];
}

int DecoderGraph::tensor_index(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t DecoderGraph::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

void DecoderGraph::validate() {
  if (latent_dim_ < 1) shape_error("latent dimension must be >= 1");
  if (nodes_.empty()) shape_error("graph has no nodes");
  std::vector<Shape> shapes;
  Shape cur{latent_dim_};
  auto tensor = [&](int i, const std::string& name, bool required) -> const NamedTensor* {
    if (name.empty()) {
      if (required) shape_error(node_label(nodes_, i) + " needs a weight tensor");
      return nullptr;
    }
    const NamedTensor* t = find_tensor(name);
    if (!t) shape_error(node_label(nodes_, i) + " references missing tensor '" + name + "'");
    return t;
  };
  auto mismatch = [&](int i, const std::string& expected) {
    shape_error(node_label(nodes_, i) + " expects input " + expected + " but " + node_label(nodes_, i - 1) +
                " produces " + shape_string(cur));
  };

  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    const DecoderNode& n = nodes_[static_cast<std::size_t>(i)];
    Shape out;
    switch (n.op) {
      case OpKind::dense: {
        const NamedTensor* w = tensor(i, n.weight, true);
        if (w->shape.size() != 2) shape_error(node_label(nodes_, i) + ": dense weight must be [out, in]");
        if (static_cast<std::size_t>(w->shape[1]) != element_count(cur)) {
          mismatch(i, "of " + std::to_string(w->shape[1]) + " values");
        }
        if (const NamedTensor* b = tensor(i, n.bias, false); b && b->shape != Shape{w->shape[0]}) {
          shape_error(node_label(nodes_, i) + ": bias shape " + shape_string(b->shape) + " does not match weight " +
                      shape_string(w->shape));
        }
        out = {w->shape[0]};
        break;
      }
      case OpKind::conv2d: {
        const NamedTensor* w = tensor(i, n.weight, true);
        if (w->shape.size() != 4) shape_error(node_label(nodes_, i) + ": conv2d kernel must be [oc, ic, kh, kw]");
        if (cur.size() != 3 || cur[0] != w->shape[1]) {
          mismatch(i, "[" + std::to_string(w->shape[1]) + ",H,W]");
        }
        if (n.stride < 1) shape_error(node_label(nodes_, i) + ": stride must be >= 1");
        if (std::any_of(n.padding.begin(), n.padding.end(), [](int p) { return p < 0; })) {
          shape_error(node_label(nodes_, i) + ": negative padding");
        }
        const int oh = (cur[1] + n.padding[0] + n.padding[1] - w->shape[2]) / n.stride + 1;
        const int ow = (cur[2] + n.padding[2] + n.padding[3] - w->shape[3]) / n.stride + 1;
        if (cur[1] + n.padding[0] + n.padding[1] < w->shape[2] || cur[2] + n.padding[2] + n.padding[3] < w->shape[3]) {
          mismatch(i, "at least the kernel size " + shape_string({w->shape[2], w->shape[3]}));
        }
        if (const NamedTensor* b = tensor(i, n.bias, false); b && b->shape != Shape{w->shape[0]}) {
          shape_error(node_label(nodes_, i) + ": bias shape " + shape_string(b->shape) + " does not match kernel " +
                      shape_string(w->shape));
        }
        out = {w->shape[0], oh, ow};
        break;
      }
      case OpKind::upsample_bilinear2x:
        if (cur.size() != 3) mismatch(i, "[C,H,W]");
        out = {cur[0], 2 * cur[1], 2 * cur[2]};
        break;
      case OpKind::leaky_relu:
      case OpKind::tanh:
      case OpKind::sigmoid:
        out = cur;
        break;
      case OpKind::add: {
        if (n.skip_from < -1 || n.skip_from >= i) {
          shape_error(node_label(nodes_, i) + ": skip_from " + std::to_string(n.skip_from) +
                      " must reference an earlier node");
        }
        const Shape& skip = n.skip_from < 0 ? Shape{latent_dim_} : shapes[static_cast<std::size_t>(n.skip_from)];
        if (skip != cur) {
          shape_error(node_label(nodes_, i) + " adds " + node_label(nodes_, n.skip_from) + " with shape " +
                      shape_string(skip) + " to " + node_label(nodes_, i - 1) + " with shape " + shape_string(cur));
        }
        out = cur;
        break;
      }
      case OpKind::reshape:
        if (n.dims.empty() || std::any_of(n.dims.begin(), n.dims.end(), [](int d) { return d < 1; }) ||
            element_count(n.dims) != element_count(cur)) {
          mismatch(i, "with " + std::to_string(element_count(n.dims)) + " values for reshape to " +
                          shape_string(n.dims));
        }
        out = n.dims;
        break;
    }
    shapes.push_back(out);
    cur = std::move(out);
  }
  if (cur != output_shape_) {
    shape_error("declared output shape " + shape_string(output_shape_) + " but " +
                node_label(nodes_, static_cast<int>(nodes_.size()) - 1) + " produces " + shape_string(cur));
  }
  shapes_ = std::move(shapes);
}

// ---------------------------------------------------------------------------
// LTW1 container

namespace {

using detail::json;

constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8 + 8;

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::string_view s, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::string_view blob) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < blob.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(blob.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(blob.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

struct Packed {
  std::string manifest;
  std::string blob;
};

Packed pack(const DecoderGraph& g) {
  Packed p;
  json tensors = json::array();
  for (const auto& t : g.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", p.blob.size()}});
    for (float f : t.data) put_le(p.blob, std::bit_cast<std::uint32_t>(f));
  }
  json nodes = json::array();
  for (const auto& n : g.nodes()) {
    json j = {{"op", to_string(n.op)}};
    switch (n.op) {
      case OpKind::dense:
        j["weight"] = n.weight;
        if (!n.bias.empty()) j["bias"] = n.bias;
        break;
      case OpKind::conv2d:
        j["weight"] = n.weight;
        if (!n.bias.empty()) j["bias"] = n.bias;
        j["stride"] = n.stride;
        j["padding"] = n.padding;
        break;
      case OpKind::leaky_relu:
        j["alpha"] = n.alpha;
        break;
      case OpKind::add:
        j["skip_from"] = n.skip_from;
        break;
      case OpKind::reshape:
        j["dims"] = n.dims;
        break;
      default:
        break;
    }
    nodes.push_back(std::move(j));
  }
  const json manifest = {{"format", "LTW1"},
                         {"input", {{"latent_dim", g.latent_dim()}}},
                         {"output", {{"shape", g.output_shape()}}},
                         {"tensors", std::move(tensors)},
                         {"nodes", std::move(nodes)}};
  p.manifest = manifest.dump();
  return p;
}

DecoderNode parse_node(const json& j, const std::string& path) {
  detail::ObjectReader r(j, path);
  DecoderNode n;
  n.op = op_from_string(r.get<std::string>("op"));
  switch (n.op) {
    case OpKind::dense:
      n.weight = r.get<std::string>("weight");
      n.bias = r.get_or<std::string>("bias", "");
      break;
    case OpKind::conv2d: {
      n.weight = r.get<std::string>("weight");
      n.bias = r.get_or<std::string>("bias", "");
      n.stride = r.get_or<int>("stride", 1);
      const json* pad = r.optional_node("padding");
      if (pad && pad->is_number_integer()) {
        n.padding.fill(pad->get<int>());
      } else if (pad) {
        n.padding = detail::ObjectReader::convert<std::array<int, 4>>(*pad, r.field_path("padding"));
      }
      break;
    }
    case OpKind::leaky_relu:
      n.alpha = r.get_or<double>("alpha", 0.2);
      break;
    case OpKind::add:
      n.skip_from = r.get<int>("skip_from");
      break;
    case OpKind::reshape:
      n.dims = r.get<Shape>("dims");
      break;
    default:
      break;
  }
  r.finish();
  return n;
}

}  // namespace

std::string serialize_weights(const DecoderGraph& graph) {
  const Packed p = pack(graph);
  std::string out = "LTW1";
  put_le<std::uint32_t>(out, kWeightFileVersion);
  put_le<std::uint32_t>(out, crc32_of(p.blob));
  put_le<std::uint64_t>(out, p.manifest.size());
  put_le<std::uint64_t>(out, p.blob.size());
  out += p.manifest;
  out += p.blob;
  return out;
}

std::uint32_t weights_checksum(const DecoderGraph& graph) { return crc32_of(pack(graph).blob); }

std::uint32_t crc32_bytes(std::string_view bytes) { return crc32_of(bytes); }

DecoderGraph parse_weights(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "LTW1") {
    throw WeightFileError(WeightErrorCode::bad_magic, "weight file: bad magic (expected LTW1)");
  }
  if (bytes.size() < kHeaderBytes) {
    throw WeightFileError(WeightErrorCode::checksum, "weight file: truncated header");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kWeightFileVersion) {
    throw WeightFileError(WeightErrorCode::bad_version, "weight file: unsupported version " + std::to_string(version));
  }
  const auto crc = get_le<std::uint32_t>(bytes, 8);
  const auto manifest_bytes = get_le<std::uint64_t>(bytes, 12);
  const auto blob_bytes = get_le<std::uint64_t>(bytes, 20);
  const std::size_t available = bytes.size() - kHeaderBytes;
  if (manifest_bytes > available || blob_bytes != available - manifest_bytes) {
    throw WeightFileError(WeightErrorCode::checksum,
                          "weight file: size mismatch (header declares " +
                              std::to_string(manifest_bytes + blob_bytes) + " payload bytes, file has " +
                              std::to_string(available) + ")");
  }
  const std::string_view manifest_text = bytes.substr(kHeaderBytes, manifest_bytes);
  const std::string_view blob = bytes.substr(kHeaderBytes + manifest_bytes);
  if (crc32_of(blob) != crc) throw WeightFileError(WeightErrorCode::checksum, "weight file: blob checksum mismatch");

  DecoderGraph g;
  try {
    const json manifest = detail::parse_json(manifest_text, "weight manifest");
    detail::ObjectReader root(manifest, "manifest");
    if (root.get<std::string>("format") != "LTW1") throw ParseError("manifest.format must be \"LTW1\"");
    detail::ObjectReader input(root.node("input"), "manifest.input");
    const int latent_dim = input.get<int>("latent_dim");
    input.finish();
    detail::ObjectReader output(root.node("output"), "manifest.output");
    Shape out_shape = output.get<Shape>("shape");
    output.finish();
    g = DecoderGraph(latent_dim, std::move(out_shape));

    const json& tensors = root.node("tensors");
    if (!tensors.is_array()) throw ParseError("manifest.tensors must be an array");
    std::size_t used = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const std::string path = "manifest.tensors[" + std::to_string(i) + "]";
      detail::ObjectReader t(tensors[i], path);
      NamedTensor nt;
      nt.name = t.get<std::string>("name");
      nt.shape = t.get<Shape>("shape");
      const auto offset = t.get<std::uint64_t>("offset");
      t.finish();
      if (std::any_of(nt.shape.begin(), nt.shape.end(), [](int d) { return d < 1; })) {
        throw ParseError(path + ".shape has a non-positive dimension");
      }
      const std::size_t count = element_count(nt.shape);
      if (offset % 4 != 0 || offset > blob.size() || count > (blob.size() - offset) / 4) {
        throw ParseError(path + " (" + nt.name + ") lies outside the blob");
      }
      nt.data.resize(count);
      for (std::size_t k = 0; k < count; ++k) {
        nt.data[k] = std::bit_cast<float>(get_le<std::uint32_t>(blob, offset + 4 * k));
      }
      used += count;
      g.add_tensor(std::move(nt));
    }
    if (used * 4 != blob.size()) {
      throw ParseError("manifest tensors cover " + std::to_string(used * 4) + " bytes of a " +
                       std::to_string(blob.size()) + "-byte blob");
    }
    const json& nodes = root.node("nodes");
    if (!nodes.is_array()) throw ParseError("manifest.nodes must be an array");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      g.add_node(parse_node(nodes[i], "manifest.nodes[" + std::to_string(i) + "]"));
    }
    root.finish();
  } catch (const ParseError& e) {
    throw WeightFileError(WeightErrorCode::manifest, std::string("weight file: ") + e.what());
  }
  g.validate();
  return g;
}

DecoderGraph load_weights(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_text_file(path);
  } catch (const std::exception& e) {
    throw WeightFileError(WeightErrorCode::io, e.what());
  }
  return parse_weights(bytes);
}

void save_weights(const DecoderGraph& graph, const std::filesystem::path& path) {
  detail::write_text_file(path, serialize_weights(graph));
}

// ---------------------------------------------------------------------------
// Interpreter

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void run_dense(const DecoderGraph& g, const DecoderNode& n, const std::vector<double>& in, std::vector<double>& out) {
  const NamedTensor& wt = *g.find_tensor(n.weight);
  const int rows = wt.shape[0];
  const int cols = wt.shape[1];
  Eigen::Map<const RowMatrix> w(g.compute_tensor(g.tensor_index(n.weight)).data(), rows, cols);
  Eigen::Map<const Eigen::VectorXd> x(in.data(), cols);
  out.assign(static_cast<std::size_t>(rows), 0.0);
  Eigen::Map<Eigen::VectorXd> y(out.data(), rows);
  y.noalias() = w * x;
  if (!n.bias.empty()) y += Eigen::Map<const Eigen::VectorXd>(g.compute_tensor(g.tensor_index(n.bias)).data(), rows);
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Winograd F(2x2,3x3): 2x2 output tiles from 4x4 input tiles,
// 16 GEMMs of [oc, ic] x [ic, tiles] per tile block.
void run_conv_winograd(const DecoderGraph& g, const DecoderNode& n, const Shape& in_shape, const Shape& out_shape,
                       const std::vector<double>& in, std::vector<double>& out) {
  const int wi = g.tensor_index(n.weight);
  const NamedTensor& kt = g.tensors()[static_cast<std::size_t>(wi)];
  const int oc = kt.shape[0], ic = kt.shape[1];
  const int h = in_shape[1], w = in_shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  const int pt = n.padding[0], pl = n.padding[2];
  const int tx = (ow + 1) / 2, ty = (oh + 1) / 2;
  const int tiles = tx * ty;
  const int block = std::clamp(16384 / std::max(ic, oc), 32, tiles);
  const auto u = g.winograd_kernel(wi);
  const std::size_t ublock = static_cast<std::size_t>(oc) * ic;

  out.assign(static_cast<std::size_t>(oc) * oh * ow, 0.0);
  // planes padded by a cache line so the 16 strided stores do not alias
  std::vector<double> v(16 * (static_cast<std::size_t>(ic) * block + 8));
  std::vector<double> m(16 * (static_cast<std::size_t>(oc) * block + 8));
  const std::span<const double> bias =
      n.bias.empty() ? std::span<const double>{} : g.compute_tensor(g.tensor_index(n.bias));

  for (int t0 = 0; t0 < tiles; t0 += block) {
    const int nb = std::min(block, tiles - t0);
    const std::size_t vs = static_cast<std::size_t>(ic) * nb + 8;
    const std::size_t ms = static_cast<std::size_t>(oc) * nb + 8;
    for (int c = 0; c < ic; ++c) {
      const double* src = in.data() + static_cast<std::size_t>(c) * h * w;
      for (int t = 0; t < nb; ++t) {
        const int y0 = 2 * ((t0 + t) / tx) - pt;
        const int x0 = 2 * ((t0 + t) % tx) - pl;
        double d[4][4];
        if (y0 >= 0 && x0 >= 0 && y0 + 4 <= h && x0 + 4 <= w) {
          for (int i = 0; i < 4; ++i) {
            const double* row = src + static_cast<std::size_t>(y0 + i) * w + x0;
            for (int j = 0; j < 4; ++j) d[i][j] = row[j];
          }
        } else {
          for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
              const int yy = y0 + i, xx = x0 + j;
              d[i][j] = (yy >= 0 && yy < h && xx >= 0 && xx < w) ? src[static_cast<std::size_t>(yy) * w + xx] : 0.0;
            }
          }
        }
        // B^T d B
        double e[4][4];
        for (int j = 0; j < 4; ++j) {
          e[0][j] = d[0][j] - d[2][j];
          e[1][j] = d[1][j] + d[2][j];
          e[2][j] = d[2][j] - d[1][j];
          e[3][j] = d[1][j] - d[3][j];
        }
        double* dst = v.data() + static_cast<std::size_t>(c) * nb + t;
        for (int i = 0; i < 4; ++i) {
          dst[(4 * i + 0) * vs] = e[i][0] - e[i][2];
          dst[(4 * i + 1) * vs] = e[i][1] + e[i][2];
          dst[(4 * i + 2) * vs] = e[i][2] - e[i][1];
          dst[(4 * i + 3) * vs] = e[i][1] - e[i][3];
        }
      }
    }
    for (int xi = 0; xi < 16; ++xi) {
      Eigen::Map<const RowMatrix> uk(u.data() + xi * ublock, oc, ic);
      Eigen::Map<const RowMatrix> vk(v.data() + xi * vs, ic, nb);
      Eigen::Map<RowMatrix> mk(m.data() + xi * ms, oc, nb);
      mk.noalias() = uk * vk;
    }
    for (int o = 0; o < oc; ++o) {
      double* dst = out.data() + static_cast<std::size_t>(o) * oh * ow;
      const double b = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
      for (int t = 0; t < nb; ++t) {
        const double* src = m.data() + static_cast<std::size_t>(o) * nb + t;
        double a[4][2];
        // A^T m A with A^T = [1 1 1 0; 0 1 -1 -1]
        for (int i = 0; i < 4; ++i) {
          const double m0 = src[(4 * i) * ms], m1 = src[(4 * i + 1) * ms];
          const double m2 = src[(4 * i + 2) * ms], m3 = src[(4 * i + 3) * ms];
          a[i][0] = m0 + m1 + m2;
          a[i][1] = m1 - m2 - m3;
        }
        const int r = 2 * ((t0 + t) / tx), q = 2 * ((t0 + t) % tx);
        for (int j = 0; j < 2; ++j) {
          if (q + j >= ow) continue;
          dst[static_cast<std::size_t>(r) * ow + q + j] = a[0][j] + a[1][j] + a[2][j] + b;
          if (r + 1 < oh) dst[static_cast<std::size_t>(r + 1) * ow + q + j] = a[1][j] - a[2][j] - a[3][j] + b;
        }
      }
    }
  }
}

void run_conv(const DecoderGraph& g, const DecoderNode& n, const Shape& in_shape, const Shape& out_shape,
              const std::vector<double>& in, std::vector<double>& out) {
  const NamedTensor& kt = *g.find_tensor(n.weight);
  const int oc = kt.shape[0], ic = kt.shape[1], kh = kt.shape[2], kw = kt.shape[3];
  if (kh == 3 && kw == 3 && n.stride == 1 && oc >= 8 && ic >= 8) {
    run_conv_winograd(g, n, in_shape, out_shape, in, out);
    return;
  }
  const int h = in_shape[1], w = in_shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  const int s = n.stride, pt = n.padding[0], pl = n.padding[2];
  const int patch = ic * kh * kw;
  const int pixels = oh * ow;
  // pixel block sized so the im2col block stays in L2
  const int block = std::clamp(131072 / patch, 64, pixels);

  Eigen::Map<const RowMatrix> k(g.compute_tensor(g.tensor_index(n.weight)).data(), oc, patch);
  out.assign(static_cast<std::size_t>(oc) * pixels, 0.0);
  Eigen::Map<RowMatrix> y(out.data(), oc, pixels);
  RowMatrix col(patch, block);

  for (int p0 = 0; p0 < pixels; p0 += block) {
    const int nb = std::min(block, pixels - p0);
    for (int c = 0; c < ic; ++c) {
      const double* src = in.data() + static_cast<std::size_t>(c) * h * w;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          double* dst = col.row((c * kh + u) * kw + v).data();
          // walk the block one output row segment at a time
          for (int p = p0; p < p0 + nb;) {
            const int r = p / ow;
            const int q0 = p % ow;
            const int q1 = std::min(ow, q0 + (p0 + nb - p));
            double* d = dst + (p - p0);
            const int iy = s * r + u - pt;
            if (iy < 0 || iy >= h) {
              std::fill(d, d + (q1 - q0), 0.0);
            } else {
              const double* srow = src + static_cast<std::size_t>(iy) * w;
              // columns with ix = s q + v - pl inside [0, w)
              const int lo = std::clamp(ceil_div(pl - v, s), q0, q1);
              const int hi = std::clamp(floor_div(w - 1 + pl - v, s) + 1, lo, q1);
              std::fill(d, d + (lo - q0), 0.0);
              if (s == 1) {
                std::copy(srow + lo + v - pl, srow + hi + v - pl, d + (lo - q0));
              } else {
                for (int q = lo; q < hi; ++q) d[q - q0] = srow[s * q + v - pl];
              }
              std::fill(d + (hi - q0), d + (q1 - q0), 0.0);
            }
            p += q1 - q0;
          }
        }
      }
    }
    y.middleCols(p0, nb).noalias() = k * col.leftCols(nb);
  }
  if (!n.bias.empty()) {
    const auto b = g.compute_tensor(g.tensor_index(n.bias));
    for (int o = 0; o < oc; ++o) y.row(o).array() += b[static_cast<std::size_t>(o)];
  }
}

void run_upsample(const Shape& in_shape, const std::vector<double>& in, std::vector<double>& out) {
  const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const int oh = 2 * h, ow = 2 * w;
  out.assign(static_cast<std::size_t>(c) * oh * ow, 0.0);
  auto source = [](int o, int size, int& i0, int& i1, double& t) {
    const double pos = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    i0 = std::min(static_cast<int>(pos), size - 1);
    i1 = std::min(i0 + 1, size - 1);
    t = pos - i0;
  };
  std::vector<int> x0(static_cast<std::size_t>(ow)), x1(static_cast<std::size_t>(ow));
  std::vector<double> tx(static_cast<std::size_t>(ow));
  for (int q = 0; q < ow; ++q) source(q, w, x0[q], x1[q], tx[q]);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = in.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      int y0 = 0, y1 = 0;
      double ty = 0.0;
      source(r, h, y0, y1, ty);
      const double* a = src + static_cast<std::size_t>(y0) * w;
      const double* b = src + static_cast<std::size_t>(y1) * w;
      for (int q = 0; q < ow; ++q) {
        const double top = a[x0[q]] + tx[q] * (a[x1[q]] - a[x0[q]]);
        const double bot = b[x0[q]] + tx[q] * (b[x1[q]] - b[x0[q]]);
        dst[static_cast<std::size_t>(r) * ow + q] = top + ty * (bot - top);
      }
    }
  }
}

}  // namespace

std::vector<double> decode(const DecoderGraph& graph, std::span<const double> z) {
  if (!graph.validated()) throw std::logic_error("decode: graph was not validated");
  if (z.size() != static_cast<std::size_t>(graph.latent_dim())) {
    throw std::invalid_argument("decode: latent has " + std::to_string(z.size()) + " entries, graph expects " +
                                std::to_string(graph.latent_dim()));
  }
  const auto& nodes = graph.nodes();
  const auto& shapes = graph.node_shapes();
  std::vector<char> keep(nodes.size(), 0);
  for (const auto& n : nodes) {
    if (n.op == OpKind::add && n.skip_from >= 0) keep[static_cast<std::size_t>(n.skip_from)] = 1;
  }
  std::vector<std::vector<double>> saved(nodes.size());
  const std::vector<double> input(z.begin(), z.end());
  std::vector<double> cur = input;
  Shape cur_shape{graph.latent_dim()};
  std::vector<double> next;

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const DecoderNode& n = nodes[i];
    switch (n.op) {
      case OpKind::dense:
        run_dense(graph, n, cur, next);
        cur.swap(next);
        break;
      case OpKind::conv2d:
        run_conv(graph, n, cur_shape, shapes[i], cur, next);
        cur.swap(next);
        break;
      case OpKind::upsample_bilinear2x:
        run_upsample(cur_shape, cur, next);
        cur.swap(next);
        break;
      case OpKind::leaky_relu:
        for (double& v : cur) v = v >= 0.0 ? v : n.alpha * v;
        break;
      case OpKind::tanh:
        for (double& v : cur) v = std::tanh(v);
        break;
      case OpKind::sigmoid:
        for (double& v : cur) v = stable_sigmoid(v);
        break;
      case OpKind::add: {
        const auto& other = n.skip_from < 0 ? input : saved[static_cast<std::size_t>(n.skip_from)];
        for (std::size_t k = 0; k < cur.size(); ++k) cur[k] += other[k];
        break;
      }
      case OpKind::reshape:
        break;
    }
    cur_shape = shapes[i];
    for (std::size_t k = 0; k < cur.size(); ++k) {
      if (!std::isfinite(cur[k])) {
        throw DecodeError(static_cast<int>(i), "decode: non-finite value at node " + std::to_string(i) + " (" +
                                                   std::string(to_string(n.op)) + "), element " +
                                                   std::to_string(k));
      }
    }
    if (keep[i]) saved[i] = cur;
  }
  return cur;
}

DensityField decode_logits(const DecoderGraph& graph, std::span<const double> z) {
  const Shape& s = graph.output_shape();
  if (s.size() != 3 || s[0] != 1) {
    throw std::invalid_argument("decoder output " + shape_string(s) + " is not a single-channel image");
  }
  return DensityField(s[2], s[1], decode(graph, z));
}

DensityField decode_to_design(const DecoderGraph& graph, std::span<const double> z, const DesignProblem& problem,
                              const ConeFilter& filter, bool tanh_pre) {
  std::vector<double> zin(z.begin(), z.end());
  if (tanh_pre) {
    for (double& v : zin) v = std::tanh(v);
  }
  const DensityField logits = decode_logits(graph, zin);
  if (logits.nelx != problem.nelx || logits.nely != problem.nely) {
    throw std::invalid_argument("decoder output " + shape_string(graph.output_shape()) + " does not match problem '" +
                                problem.id + "' mesh " + std::to_string(problem.nely) + "x" +
                                std::to_string(problem.nelx));
  }
  const auto active = problem.active_elements();
  DensityField x = filter.apply(constrained_sigmoid(logits, problem.volume_fraction, active).field);
  apply_mask(x, active);
  return x;
}

// ---------------------------------------------------------------------------
// Reference topologies

namespace {

class GraphBuilder {
 public:
  GraphBuilder(int latent_dim, Shape out, std::uint64_t seed) : g_(latent_dim, std::move(out)), rng_(seed, 0xDEC) {}

  void dense(int in, int out) {
    const std::string name = "dense" + std::to_string(count_++);
    g_.add_tensor({name + ".weight", {out, in}, random(static_cast<std::size_t>(out) * in, in)});
    g_.add_tensor({name + ".bias", {out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f)});
    g_.add_node({.op = OpKind::dense, .weight = name + ".weight", .bias = name + ".bias"});
  }

  void conv(int in, int out, int k, std::array<int, 4> pad) {
    const std::string name = "conv" + std::to_string(count_++);
    g_.add_tensor({name + ".weight", {out, in, k, k}, random(static_cast<std::size_t>(out) * in * k * k, in * k * k)});
    g_.add_tensor({name + ".bias", {out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f)});
    g_.add_node({.op = OpKind::conv2d, .weight = name + ".weight", .bias = name + ".bias", .padding = pad});
  }

  void op(OpKind k) { g_.add_node({.op = k}); }
  void lrelu() { g_.add_node({.op = OpKind::leaky_relu, .alpha = 0.2}); }
  void add(int from) { g_.add_node({.op = OpKind::add, .skip_from = from}); }
  void reshape(Shape dims) { g_.add_node({.op = OpKind::reshape, .dims = std::move(dims)}); }
  [[nodiscard]] int last() const { return static_cast<int>(g_.nodes().size()) - 1; }

  DecoderGraph finish() {
    g_.validate();
    return std::move(g_);
  }

 private:
  std::vector<float> random(std::size_t n, int fan_in) {
    const double a = std::sqrt(3.0 / fan_in);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng_.uniform(-a, a));
    return v;
  }

  DecoderGraph g_;
  CounterRng rng_;
  int count_ = 0;
};

}  // namespace

DecoderGraph reference_lbae_decoder(int latent_dim, std::uint64_t seed) {
  GraphBuilder b(latent_dim, {1, 64, 64}, seed);
  b.dense(latent_dim, 128 * 8 * 8);
  b.reshape({128, 8, 8});
  int channels = 128;
  for (int filters : {128, 64, 32}) {
    b.op(OpKind::upsample_bilinear2x);
    b.conv(channels, filters, 3, {1, 1, 1, 1});
    b.lrelu();
    const int skip = b.last();
    b.conv(filters, filters, 3, {1, 1, 1, 1});
    b.lrelu();
    b.add(skip);
    channels = filters;
  }
  b.conv(channels, 1, 3, {1, 1, 1, 1});
  return b.finish();
}

DecoderGraph reference_vae_decoder(int latent_dim, std::uint64_t seed) {
  GraphBuilder b(latent_dim, {1, 64, 64}, seed);
  b.dense(latent_dim, 512);
  b.lrelu();
  b.dense(512, 2048);
  b.lrelu();
  b.reshape({128, 4, 4});
  int channels = 128;
  for (int filters : {128, 128, 64, 64}) {
    b.op(OpKind::upsample_bilinear2x);
    b.conv(channels, filters, 4, {1, 2, 1, 2});
    b.lrelu();
    channels = filters;
  }
  b.conv(channels, 1, 3, {1, 1, 1, 1});
  return b.finish();
}

}  // namespace latopt
