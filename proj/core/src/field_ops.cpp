#include "latopt/field_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace latopt {

double DensityField::mean() const noexcept {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

ConeFilter::ConeFilter(int nelx, int nely, double radius) : nelx_(nelx), nely_(nely), radius_(radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("cone filter radius must be positive");
  if (nelx < 1 || nely < 1) throw std::invalid_argument("cone filter needs a non-empty grid");
  reach_ = static_cast<int>(std::ceil(radius)) - 1;
  for (int dy = -reach_; dy <= reach_; ++dy) {
    for (int dx = -reach_; dx <= reach_; ++dx) {
      const double w = radius - std::sqrt(static_cast<double>(dx * dx + dy * dy));
      if (w > 0.0) {
        offset_dx_.push_back(dx);
        offset_dy_.push_back(dy);
        offset_w_.push_back(w);
      }
    }
  }
  row_sum_.assign(static_cast<std::size_t>(nelx) * nely, 0.0);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < offset_w_.size(); ++k) {
        const int nx = x + offset_dx_[k];
        const int ny = y + offset_dy_[k];
        if (nx >= 0 && ny >= 0 && nx < nelx && ny < nely) s += offset_w_[k];
      }
      row_sum_[static_cast<std::size_t>(y) * nelx + x] = s;
    }
  }
}

DensityField ConeFilter::apply(const DensityField& in) const {
  if (in.nelx != nelx_ || in.nely != nely_) throw std::invalid_argument("cone filter: field size mismatch");
  DensityField out(nelx_, nely_);
  for (int y = 0; y < nely_; ++y) {
    for (int x = 0; x < nelx_; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < offset_w_.size(); ++k) {
        const int nx = x + offset_dx_[k];
        const int ny = y + offset_dy_[k];
        if (nx >= 0 && ny >= 0 && nx < nelx_ && ny < nely_) s += offset_w_[k] * in.at(nx, ny);
      }
      const auto i = static_cast<std::size_t>(y) * nelx_ + x;
      out.values[i] = s / row_sum_[i];
    }
  }
  return out;
}

std::vector<double> ConeFilter::apply_transpose(std::span<const double> g) const {
  if (g.size() != row_sum_.size()) throw std::invalid_argument("cone filter: gradient size mismatch");
  std::vector<double> scaled(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = g[i] / row_sum_[i];
  // the weights are symmetric, so the transpose is the same stencil sum
  std::vector<double> out(g.size(), 0.0);
  for (int y = 0; y < nely_; ++y) {
    for (int x = 0; x < nelx_; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < offset_w_.size(); ++k) {
        const int nx = x + offset_dx_[k];
        const int ny = y + offset_dy_[k];
        if (nx >= 0 && ny >= 0 && nx < nelx_ && ny < nely_) {
          s += offset_w_[k] * scaled[static_cast<std::size_t>(ny) * nelx_ + nx];
        }
      }
      out[static_cast<std::size_t>(y) * nelx_ + x] = s;
    }
  }
  return out;
}

double stable_sigmoid(double t) noexcept {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

namespace {

bool is_active(std::span<const std::uint8_t> active, std::size_t i) { return active.empty() || active[i] != 0; }

void check_mask(const DensityField& x, std::span<const std::uint8_t> active) {
  if (!active.empty() && active.size() != x.size()) throw std::invalid_argument("mask size does not match field");
}

}  // namespace

double active_mean(const DensityField& x, std::span<const std::uint8_t> active) {
  check_mask(x, active);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!is_active(active, i)) continue;
    s += x.values[i];
    ++n;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

void apply_mask(DensityField& x, std::span<const std::uint8_t> active) {
  check_mask(x, active);
  if (active.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!active[i]) x.values[i] = 0.0;
  }
}

SigmoidProjection constrained_sigmoid(const DensityField& logits, double target_volume,
                                      std::span<const std::uint8_t> active, double tolerance) {
  check_mask(logits, active);
  if (!(target_volume > 0.0 && target_volume < 1.0)) {
    throw std::invalid_argument("constrained_sigmoid: target volume must lie in (0, 1)");
  }
  constexpr double kLo = -40.0;
  constexpr double kHi = 40.0;
  constexpr int kMaxIterations = 100;

  double lo_logit = INFINITY;
  double hi_logit = -INFINITY;
  std::size_t n_active = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!is_active(active, i)) continue;
    const double v = logits.values[i];
    if (!std::isfinite(v)) throw std::invalid_argument("constrained_sigmoid: non-finite logit at " + std::to_string(i));
    lo_logit = std::min(lo_logit, v);
    hi_logit = std::max(hi_logit, v);
    ++n_active;
  }
  if (n_active == 0) throw std::invalid_argument("constrained_sigmoid: no unmasked elements");

  SigmoidProjection out;
  out.field = DensityField(logits.nelx, logits.nely);
  auto fill = [&](double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!is_active(active, i)) {
        out.field.values[i] = 0.0;
        continue;
      }
      const double v = stable_sigmoid(logits.values[i] + b);
      out.field.values[i] = v;
      s += v;
    }
    return s / static_cast<double>(n_active);
  };

  if (lo_logit == hi_logit) {
    out.offset = std::log(target_volume / (1.0 - target_volume)) - lo_logit;
    fill(out.offset);
    return out;
  }

  if (fill(kLo) > target_volume + tolerance || fill(kHi) < target_volume - tolerance) {
    throw std::domain_error("constrained_sigmoid: target volume " + std::to_string(target_volume) +
                            " unreachable with offset in [-40, 40]");
  }
  double lo = kLo;
  double hi = kHi;
  double b = 0.0;
  for (int it = 1; it <= kMaxIterations; ++it) {
    b = 0.5 * (lo + hi);
    const double m = fill(b);
    out.iterations = it;
    if (std::abs(m - target_volume) <= tolerance) break;
    if (m < target_volume) {
      lo = b;
    } else {
      hi = b;
    }
  }
  out.offset = b;
  return out;
}

DensityField threshold_preserving_volume(const DensityField& x, double target_volume,
                                         std::span<const std::uint8_t> active) {
  check_mask(x, active);
  std::vector<int> order;
  order.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (is_active(active, i)) order.push_back(static_cast<int>(i));
  }
  const auto k = static_cast<std::size_t>(
      std::clamp<long>(std::lround(target_volume * static_cast<double>(order.size())), 0L,
                       static_cast<long>(order.size())));
  // strict total order: larger density first, then lower index
  auto denser = [&](int a, int b) {
    const double va = x.values[static_cast<std::size_t>(a)];
    const double vb = x.values[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  };
  if (k < order.size()) std::nth_element(order.begin(), order.begin() + static_cast<long>(k), order.end(), denser);
  DensityField out(x.nelx, x.nely, 0.0);
  for (std::size_t i = 0; i < k; ++i) out.values[static_cast<std::size_t>(order[i])] = 1.0;
  return out;
}

}  // namespace latopt
