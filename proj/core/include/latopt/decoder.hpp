#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latopt/density_field.hpp"
#include "latopt/errors.hpp"
#include "latopt/field_ops.hpp"
#include "latopt/problem.hpp"

namespace latopt {

enum class OpKind { dense, conv2d, upsample_bilinear2x, leaky_relu, tanh, sigmoid, add, reshape };

std::string_view to_string(OpKind op) noexcept;
OpKind op_from_string(std::string_view s);

using Shape = std::vector<int>;

std::size_t element_count(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;  // row-major
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// One interpreter step. Node i reads the output of node i - 1 (the latent
/// vector for i = 0).
///
///   dense     y[o] = b[o] + sum_i W[o, i] x[i]; W is [out, in], x flattened
///   conv2d    y[o, r, c] = b[o] + sum_{i, u, v} K[o, i, u, v] x[i, s r + u - pt, s c + v - pl]
///             (cross-correlation, zero padding {top, bottom, left, right})
///   upsample_bilinear2x  align_corners = false: source coordinate
///             t = (r + 0.5) / 2 - 0.5 clamped below at 0, blended between
///             floor(t) and min(floor(t) + 1, H - 1)
///   leaky_relu  y = x if x >= 0 else alpha x
///   add       y = x + output(skip_from); skip_from = -1 is the latent input
///   reshape   same data, new dims
struct DecoderNode {
  OpKind op = OpKind::dense;
  std::string weight;  // tensor names for dense / conv2d
  std::string bias;    // optional
  int stride = 1;
  std::array<int, 4> padding{0, 0, 0, 0};
  double alpha = 0.2;
  int skip_from = -1;
  Shape dims;
  friend bool operator==(const DecoderNode&, const DecoderNode&) = default;
};

/// Decoder as an ordered op list plus named float32 tensors. `validate`
/// chain-checks every shape; a graph returned by `load_weights` or
/// `validated` is immutable and may be shared by concurrent `decode` calls.
class DecoderGraph {
 public:
  DecoderGraph() = default;
  DecoderGraph(int latent_dim, Shape output_shape) : latent_dim_(latent_dim), output_shape_(std::move(output_shape)) {}

  void add_tensor(NamedTensor t);
  void add_node(DecoderNode n) { nodes_.push_back(std::move(n)); }

  /// Computes node output shapes; throws WeightFileError(shape) naming the
  /// offending node and its producer.
  void validate();

  [[nodiscard]] int latent_dim() const noexcept { return latent_dim_; }
  [[nodiscard]] const Shape& output_shape() const noexcept { return output_shape_; }
  [[nodiscard]] const std::vector<DecoderNode>& nodes() const noexcept { return nodes_; }
  [[nodiscard]] const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }
  [[nodiscard]] const NamedTensor* find_tensor(std::string_view name) const noexcept;
  /// Output shape of each node; empty until validated.
  [[nodiscard]] const std::vector<Shape>& node_shapes() const noexcept { return shapes_; }
  [[nodiscard]] bool validated() const noexcept { return !shapes_.empty() || nodes_.empty(); }
  [[nodiscard]] std::size_t parameter_count() const noexcept;

  /// Double copy of tensor `index` used by the interpreter.
  [[nodiscard]] std::span<const double> compute_tensor(int index) const noexcept { return compute_[index]; }
  /// Winograd F(2x2,3x3) transform of a [oc, ic, 3, 3] tensor as 16
  /// row-major [oc, ic] blocks; empty for other shapes.
  [[nodiscard]] std::span<const double> winograd_kernel(int index) const noexcept { return winograd_[index]; }
  [[nodiscard]] int tensor_index(std::string_view name) const noexcept;

  friend bool operator==(const DecoderGraph& a, const DecoderGraph& b) {
    return a.latent_dim_ == b.latent_dim_ && a.output_shape_ == b.output_shape_ && a.nodes_ == b.nodes_ &&
           a.tensors_ == b.tensors_;
  }

 private:
  int latent_dim_ = 0;
  Shape output_shape_;
  std::vector<NamedTensor> tensors_;
  std::vector<std::vector<double>> compute_;
  std::vector<std::vector<double>> winograd_;
  std::vector<DecoderNode> nodes_;
  std::vector<Shape> shapes_;
};

/// LTW1 container:
///   "LTW1" | u32 version (1) | u32 CRC32 of blob | u64 manifest bytes |
///   u64 blob bytes | manifest (UTF-8 JSON) | blob (float32 LE, row-major)
/// Integers are little-endian. Tensor offsets in the manifest are byte
/// offsets into the blob.
inline constexpr std::uint32_t kWeightFileVersion = 1;

std::string serialize_weights(const DecoderGraph& graph);
DecoderGraph parse_weights(std::string_view bytes);
DecoderGraph load_weights(const std::filesystem::path& path);
void save_weights(const DecoderGraph& graph, const std::filesystem::path& path);
/// CRC32 of the serialized blob; identifies a weight set in run keys.
std::uint32_t weights_checksum(const DecoderGraph& graph);
/// zlib CRC32.
std::uint32_t crc32_bytes(std::string_view bytes);

/// Output of the last node, flattened. Throws std::invalid_argument on a
/// latent size mismatch and DecodeError on non-finite intermediates.
std::vector<double> decode(const DecoderGraph& graph, std::span<const double> z);

/// decode() for graphs with output [1, nely, nelx].
DensityField decode_logits(const DecoderGraph& graph, std::span<const double> z);

/// Latent vector to physical design: optional tanh on z, decode, constrained
/// sigmoid at the problem's volume fraction, mask, cone filter, mask.
DensityField decode_to_design(const DecoderGraph& graph, std::span<const double> z, const DesignProblem& problem,
                              const ConeFilter& filter, bool tanh_pre = false);

/// Stand-in LBAE decoder: dense latent -> 128x8x8, then three residual
/// stages [upsample, conv3x3, leaky_relu, conv3x3, leaky_relu, add] with
/// 128, 64, 32 filters and a final 3x3 conv to one logit channel. Weights
/// are randomly initialised from `seed`.
DecoderGraph reference_lbae_decoder(int latent_dim = 256, std::uint64_t seed = 0);

/// Stand-in VAE decoder: dense latent -> 512 -> 2048, reshape 128x4x4,
/// four [upsample, conv4x4, leaky_relu] stages with 128, 128, 64, 64 filters
/// and a final 3x3 conv to one channel.
DecoderGraph reference_vae_decoder(int latent_dim = 64, std::uint64_t seed = 0);

}  // namespace latopt
