#pragma once

// Nested-loop evaluation of a decoder graph straight from its float32
// tensors. No im2col, no matrix library.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "latopt/decoder.hpp"

namespace oracle {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;
};

inline const latopt::NamedTensor& tensor(const latopt::DecoderGraph& g, const std::string& name) {
  const auto* t = g.find_tensor(name);
  if (!t) throw std::runtime_error("oracle: missing tensor " + name);
  return *t;
}

inline Tensor dense(const latopt::DecoderGraph& g, const latopt::DecoderNode& n, const Tensor& x) {
  const auto& w = tensor(g, n.weight);
  const int out = w.shape[0], in = w.shape[1];
  Tensor y{{out}, std::vector<double>(static_cast<std::size_t>(out))};
  for (int o = 0; o < out; ++o) {
    double s = n.bias.empty() ? 0.0 : tensor(g, n.bias).data[static_cast<std::size_t>(o)];
    for (int i = 0; i < in; ++i) s += double(w.data[static_cast<std::size_t>(o * in + i)]) * x.v[static_cast<std::size_t>(i)];
    y.v[static_cast<std::size_t>(o)] = s;
  }
  return y;
}

inline Tensor conv(const latopt::DecoderGraph& g, const latopt::DecoderNode& n, const Tensor& x) {
  const auto& k = tensor(g, n.weight);
  const int co = k.shape[0], ci = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int h = x.shape[1], w = x.shape[2];
  const int pt = n.padding[0], pb = n.padding[1], pl = n.padding[2], pr = n.padding[3];
  const int ho = (h + pt + pb - kh) / n.stride + 1;
  const int wo = (w + pl + pr - kw) / n.stride + 1;
  Tensor y{{co, ho, wo}, std::vector<double>(static_cast<std::size_t>(co * ho * wo))};
  for (int o = 0; o < co; ++o) {
    const double b = n.bias.empty() ? 0.0 : tensor(g, n.bias).data[static_cast<std::size_t>(o)];
    for (int r = 0; r < ho; ++r) {
      for (int c = 0; c < wo; ++c) {
        double s = b;
        for (int i = 0; i < ci; ++i) {
          for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
              const int rr = n.stride * r + u - pt;
              const int cc = n.stride * c + v - pl;
              if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
              s += double(k.data[static_cast<std::size_t>(((o * ci + i) * kh + u) * kw + v)]) *
                   x.v[static_cast<std::size_t>((i * h + rr) * w + cc)];
            }
          }
        }
        y.v[static_cast<std::size_t>((o * ho + r) * wo + c)] = s;
      }
    }
  }
  return y;
}

// align_corners = false, source index clamped to the image.
inline Tensor upsample(const Tensor& x) {
  const int ch = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor y{{ch, 2 * h, 2 * w}, std::vector<double>(static_cast<std::size_t>(ch * 4 * h * w))};
  const auto src = [](int dst, int size, int& i0, int& i1, double& frac) {
    const double t = std::max(0.0, (dst + 0.5) / 2.0 - 0.5);
    i0 = std::min(static_cast<int>(std::floor(t)), size - 1);
    i1 = std::min(i0 + 1, size - 1);
    frac = t - i0;
  };
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < 2 * h; ++r) {
      int r0, r1;
      double fr;
      src(r, h, r0, r1, fr);
      for (int q = 0; q < 2 * w; ++q) {
        int q0, q1;
        double fq;
        src(q, w, q0, q1, fq);
        const auto at = [&](int rr, int qq) { return x.v[static_cast<std::size_t>((c * h + rr) * w + qq)]; };
        const double top = (1 - fq) * at(r0, q0) + fq * at(r0, q1);
        const double bottom = (1 - fq) * at(r1, q0) + fq * at(r1, q1);
        y.v[static_cast<std::size_t>((c * 2 * h + r) * 2 * w + q)] = (1 - fr) * top + fr * bottom;
      }
    }
  }
  return y;
}

inline std::vector<double> decode(const latopt::DecoderGraph& g, std::span<const double> z) {
  Tensor input{{static_cast<int>(z.size())}, std::vector<double>(z.begin(), z.end())};
  std::vector<Tensor> outputs;
  Tensor cur = input;
  for (const auto& n : g.nodes()) {
    Tensor next = cur;
    switch (n.op) {
      case latopt::OpKind::dense: next = dense(g, n, cur); break;
      case latopt::OpKind::conv2d: next = conv(g, n, cur); break;
      case latopt::OpKind::upsample_bilinear2x: next = upsample(cur); break;
      case latopt::OpKind::leaky_relu:
        for (double& v : next.v) v = v >= 0 ? v : n.alpha * v;
        break;
      case latopt::OpKind::tanh:
        for (double& v : next.v) v = std::tanh(v);
        break;
      case latopt::OpKind::sigmoid:
        for (double& v : next.v) v = 1.0 / (1.0 + std::exp(-v));
        break;
      case latopt::OpKind::add: {
        const Tensor& other = n.skip_from < 0 ? input : outputs[static_cast<std::size_t>(n.skip_from)];
        for (std::size_t i = 0; i < next.v.size(); ++i) next.v[i] += other.v[i];
        break;
      }
      case latopt::OpKind::reshape: next.shape = n.dims; break;
    }
    outputs.push_back(next);
    cur = std::move(next);
  }
  return cur.v;
}

}  // namespace oracle
