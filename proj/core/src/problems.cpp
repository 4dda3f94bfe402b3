#include "latopt/problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "latopt/errors.hpp"
#include "latopt/rng.hpp"

namespace latopt {

using detail::json;
using detail::ObjectReader;

std::string_view to_string(Physics p) noexcept { return p == Physics::structural ? "structural" : "thermal"; }

Physics physics_from_string(std::string_view s) {
  if (s == "structural") return Physics::structural;
  if (s == "thermal") return Physics::thermal;
  throw ParseError("unknown physics '" + std::string(s) + "'");
}

std::string_view to_string(SetKind k) noexcept {
  return k == SetKind::in_distribution ? "in_distribution" : "out_of_distribution";
}

std::vector<std::uint8_t> DesignProblem::active_elements() const {
  std::vector<std::uint8_t> active(static_cast<std::size_t>(element_count()), 1);
  if (mask) {
    for (int e = 0; e < element_count(); ++e) active[e] = masked(e) ? 0 : 1;
  }
  return active;
}

int DesignProblem::active_count() const {
  if (!mask) return element_count();
  int n = 0;
  for (int e = 0; e < element_count(); ++e) n += masked(e) ? 0 : 1;
  return n;
}

namespace {

[[noreturn]] void fail(const DesignProblem& p, const std::string& what) {
  throw ProblemError("problem '" + p.id + "': " + what);
}

}  // namespace

void validate(const DesignProblem& p, bool require_load) {
  if (p.id.empty()) throw ProblemError("problem with empty id");
  if (p.nelx < 1 || p.nely < 1) fail(p, "mesh must have at least one element per axis");
  if (!(p.volume_fraction >= 0.05 && p.volume_fraction <= 0.95)) {
    fail(p, "volume_fraction " + std::to_string(p.volume_fraction) + " outside [0.05, 0.95]");
  }
  const int ndof = p.dof_count();
  const int dpn = p.dofs_per_node();

  if (p.fixed_dofs.empty()) fail(p, "no fixed dofs");
  std::set<int> fixed;
  for (const int d : p.fixed_dofs) {
    if (d < 0 || d >= ndof) fail(p, "fixed dof " + std::to_string(d) + " out of range");
    if (!fixed.insert(d).second) fail(p, "fixed dof " + std::to_string(d) + " listed twice");
  }

  bool any_load = false;
  for (const auto& l : p.loads) {
    if (l.node < 0 || l.node >= p.node_count()) fail(p, "load node " + std::to_string(l.node) + " out of range");
    if (l.dof < 0 || l.dof >= dpn) fail(p, "load dof index " + std::to_string(l.dof) + " invalid for physics");
    if (!std::isfinite(l.magnitude)) fail(p, "non-finite load magnitude");
    const int g = l.node * dpn + l.dof;
    if (fixed.contains(g)) fail(p, "load applied on fixed dof " + std::to_string(g));
    any_load = any_load || l.magnitude != 0.0;
  }
  if (p.source) {
    if (p.physics != Physics::thermal) fail(p, "volumetric source is only supported for thermal problems");
    if (!std::isfinite(*p.source)) fail(p, "non-finite source");
    any_load = any_load || *p.source != 0.0;
  }
  if (require_load && !any_load) fail(p, "no nonzero load or source");

  if (p.mask) {
    const auto& m = *p.mask;
    if (m.w < 1 || m.h < 1 || m.x0 < 0 || m.y0 < 0 || m.x0 + m.w > p.nelx || m.y0 + m.h > p.nely) {
      fail(p, "mask rectangle outside the domain");
    }
    if (p.active_count() == 0) fail(p, "mask covers the whole domain");
  }
}

const DesignProblem* ProblemSet::find(std::string_view id) const noexcept {
  for (const auto& p : problems) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

void validate(const ProblemSet& set) {
  std::set<std::string> ids;
  for (const auto& p : set.problems) {
    validate(p);
    if (!ids.insert(p.id).second) throw ProblemError("set '" + set.name + "': duplicate problem id '" + p.id + "'");
  }
}

// ---------------------------------------------------------------------------
// generation helpers

namespace {

constexpr int kMaxTries = 100;

// A node can carry a load or support only if it touches a design element.
bool node_touches_active(const DesignProblem& p, int ix, int iy) {
  for (int ex = ix - 1; ex <= ix; ++ex) {
    for (int ey = iy - 1; ey <= iy; ++ey) {
      if (ex < 0 || ey < 0 || ex >= p.nelx || ey >= p.nely) continue;
      if (!p.masked(ey * p.nelx + ex)) return true;
    }
  }
  return false;
}

std::vector<std::pair<int, int>> boundary_nodes(int nelx, int nely) {
  std::vector<std::pair<int, int>> out;
  for (int ix = 0; ix <= nelx; ++ix) {
    for (int iy = 0; iy <= nely; ++iy) {
      if (ix == 0 || iy == 0 || ix == nelx || iy == nely) out.emplace_back(ix, iy);
    }
  }
  return out;
}

void fix_node(DesignProblem& p, int node) {
  for (int d = 0; d < p.dofs_per_node(); ++d) p.fixed_dofs.push_back(node * p.dofs_per_node() + d);
}

void finalize_fixed(DesignProblem& p) {
  std::sort(p.fixed_dofs.begin(), p.fixed_dofs.end());
  p.fixed_dofs.erase(std::unique(p.fixed_dofs.begin(), p.fixed_dofs.end()), p.fixed_dofs.end());
}

std::string numbered(std::string_view prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return std::string(prefix) + "_" + buf;
}

DesignProblem draw_in_distribution(CounterRng& rng, int index) {
  DesignProblem p;
  p.id = numbered("in", index);
  p.physics = Physics::structural;
  p.nelx = 64;
  p.nely = 64;

  const int n_loads = 1 + rng.poisson(1.0);
  const int n_supports = 2 + rng.poisson(1.0);

  if (rng.bernoulli(0.25)) {
    const int side = static_cast<int>(rng.integer(16, 32));
    const int edge = static_cast<int>(rng.below(4));
    MaskRect m{0, 0, side, side};
    switch (edge) {
      case 0:  // top
        m.x0 = static_cast<int>(rng.integer(0, p.nelx - side));
        m.y0 = 0;
        break;
      case 1:  // right
        m.x0 = p.nelx - side;
        m.y0 = static_cast<int>(rng.integer(0, p.nely - side));
        break;
      case 2:  // bottom
        m.x0 = static_cast<int>(rng.integer(0, p.nelx - side));
        m.y0 = p.nely - side;
        break;
      default:  // left
        m.x0 = 0;
        m.y0 = static_cast<int>(rng.integer(0, p.nely - side));
        break;
    }
    p.mask = m;
  }
  p.volume_fraction = rng.uniform(0.12, 0.5);

  std::vector<std::pair<int, int>> candidates;
  for (const auto& [ix, iy] : boundary_nodes(p.nelx, p.nely)) {
    if (node_touches_active(p, ix, iy)) candidates.emplace_back(ix, iy);
  }
  std::set<int> support_nodes;
  while (static_cast<int>(support_nodes.size()) < n_supports && support_nodes.size() < candidates.size()) {
    const auto& [ix, iy] = candidates[rng.below(candidates.size())];
    support_nodes.insert(p.node(ix, iy));
  }
  for (const int n : support_nodes) fix_node(p, n);
  finalize_fixed(p);

  std::set<int> load_nodes;
  int guard = 0;
  while (static_cast<int>(load_nodes.size()) < n_loads && ++guard < 10000) {
    const int ix = static_cast<int>(rng.integer(0, p.nelx));
    const int iy = static_cast<int>(rng.integer(0, p.nely));
    const int n = p.node(ix, iy);
    if (support_nodes.contains(n) || load_nodes.contains(n) || !node_touches_active(p, ix, iy)) continue;
    load_nodes.insert(n);
    const int dof = static_cast<int>(rng.below(2));
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    p.loads.push_back({n, dof, sign});
  }
  return p;
}

// Bresenham node path between two grid nodes, inclusive.
std::vector<std::pair<int, int>> node_line(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> out;
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    out.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

// Spreads a total force evenly over the given nodes along one dof.
void distribute(DesignProblem& p, const std::vector<int>& nodes, int dof, double total) {
  std::vector<int> unique_nodes;
  std::set<int> seen;
  for (const int n : nodes) {
    if (seen.insert(n).second) unique_nodes.push_back(n);
  }
  const double each = total / static_cast<double>(unique_nodes.size());
  for (const int n : unique_nodes) p.loads.push_back({n, dof, each});
}

const std::vector<std::string> kOodClasses = {
    "l_bracket", "staircase", "cantilever", "mbb_beam", "bridge", "pinned_beam", "column", "multi_cantilever",
};

DesignProblem draw_ood(CounterRng& rng, int cls, int index) {
  DesignProblem p;
  p.id = numbered(kOodClasses[cls], index);
  p.physics = Physics::structural;
  p.nelx = 64;
  p.nely = 64;
  const int n = p.nelx;
  const int m = p.nely;
  p.volume_fraction = rng.uniform(0.2, 0.5);

  switch (cls) {
    case 0: {  // L-bracket: vertical arm on the left, horizontal arm at the bottom
      const int t = static_cast<int>(rng.integer(n * 3 / 10, n / 2));
      p.mask = MaskRect{t, 0, n - t, m - t};
      for (int ix = 0; ix <= t; ++ix) fix_node(p, p.node(ix, 0));
      const int iy = static_cast<int>(rng.integer(m - t, m));
      p.loads.push_back({p.node(n, iy), 1, -1.0});
      break;
    }
    case 1: {  // staircase: Z-shaped distributed load, clamped bottom edge
      const int a = static_cast<int>(rng.integer(n / 8, n / 4));
      const int b = n - a;
      const int y1 = static_cast<int>(rng.integer(m / 8, m / 4));
      const int y2 = static_cast<int>(rng.integer(m / 2, 3 * m / 4));
      std::vector<int> path;
      for (int ix = a; ix <= b; ++ix) path.push_back(p.node(ix, y1));
      for (const auto& [ix, iy] : node_line(b, y1, a, y2)) path.push_back(p.node(ix, iy));
      for (int ix = a; ix <= b; ++ix) path.push_back(p.node(ix, y2));
      distribute(p, path, 1, -1.0);
      for (int ix = 0; ix <= n; ++ix) fix_node(p, p.node(ix, m));
      break;
    }
    case 2: {  // cantilever with a distributed tip load
      const int extent = static_cast<int>(rng.integer(2, m / 4));
      const int start = static_cast<int>(rng.integer(0, m - extent));
      std::vector<int> tip;
      for (int iy = start; iy <= start + extent; ++iy) tip.push_back(p.node(n, iy));
      distribute(p, tip, 1, -1.0);
      for (int iy = 0; iy <= m; ++iy) fix_node(p, p.node(0, iy));
      break;
    }
    case 3: {  // MBB half-beam with a distributed load near the symmetry line
      const int width = static_cast<int>(rng.integer(1, n / 8));
      std::vector<int> top;
      for (int ix = 0; ix <= width; ++ix) top.push_back(p.node(ix, 0));
      distribute(p, top, 1, -1.0);
      for (int iy = 0; iy <= m; ++iy) p.fixed_dofs.push_back(2 * p.node(0, iy));
      const int roller = static_cast<int>(rng.integer(1, n / 16));
      for (int ix = n - roller; ix <= n; ++ix) p.fixed_dofs.push_back(2 * p.node(ix, m) + 1);
      break;
    }
    case 4: {  // bridge: distributed top load, pinned bottom corners
      const int margin = static_cast<int>(rng.integer(0, n / 8));
      std::vector<int> top;
      for (int ix = margin; ix <= n - margin; ++ix) top.push_back(p.node(ix, 0));
      distribute(p, top, 1, -1.0);
      const int extent = static_cast<int>(rng.integer(1, n / 8));
      for (int ix = 0; ix <= extent; ++ix) {
        fix_node(p, p.node(ix, m));
        fix_node(p, p.node(n - ix, m));
      }
      break;
    }
    case 5: {  // pinned-pinned beam, load near midspan on the bottom edge
      const int width = static_cast<int>(rng.integer(1, n / 16));
      const int centre = static_cast<int>(rng.integer(n / 4, 3 * n / 4));
      std::vector<int> mid;
      for (int ix = centre - width; ix <= centre + width; ++ix) mid.push_back(p.node(ix, m));
      distribute(p, mid, 1, -1.0);
      fix_node(p, p.node(0, m));
      fix_node(p, p.node(n, m));
      break;
    }
    case 6: {  // column under distributed compression
      const int half = static_cast<int>(rng.integer(n / 16, n / 4));
      std::vector<int> top;
      for (int ix = n / 2 - half; ix <= n / 2 + half; ++ix) top.push_back(p.node(ix, 0));
      distribute(p, top, 1, -1.0);
      for (int ix = 0; ix <= n; ++ix) fix_node(p, p.node(ix, m));
      break;
    }
    default: {  // cantilever with several point loads on the bottom edge
      const int k = static_cast<int>(rng.integer(2, 4));
      std::set<int> xs;
      while (static_cast<int>(xs.size()) < k) xs.insert(static_cast<int>(rng.integer(n / 4, n)));
      for (const int ix : xs) p.loads.push_back({p.node(ix, m), 1, -1.0 / k});
      for (int iy = 0; iy <= m; ++iy) fix_node(p, p.node(0, iy));
      break;
    }
  }
  finalize_fixed(p);
  return p;
}

template <class Draw>
DesignProblem draw_valid(const CounterRng& base, int index, Draw&& draw) {
  std::string last_error;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(index)).split(static_cast<std::uint64_t>(attempt));
    DesignProblem p = draw(rng);
    try {
      validate(p);
      return p;
    } catch (const ProblemError& e) {
      last_error = e.what();
    }
  }
  throw ProblemError("problem " + std::to_string(index) + ": no valid draw after " + std::to_string(kMaxTries) +
                     " tries (last: " + last_error + ")");
}

}  // namespace

ProblemSet generate_in_distribution(int count, std::uint64_t rng_seed) {
  if (count < 1) throw ProblemError("count must be >= 1");
  ProblemSet set;
  set.name = "in_distribution_s" + std::to_string(rng_seed);
  set.kind = SetKind::in_distribution;
  set.seed = rng_seed;
  const CounterRng base(rng_seed, 0x1D);
  set.problems.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    set.problems.push_back(draw_valid(base, i, [i](CounterRng& rng) { return draw_in_distribution(rng, i); }));
  }
  return set;
}

ProblemSet generate_out_of_distribution(int count, std::uint64_t rng_seed) {
  if (count < 1) throw ProblemError("count must be >= 1");
  ProblemSet set;
  set.name = "out_of_distribution_s" + std::to_string(rng_seed);
  set.kind = SetKind::out_of_distribution;
  set.seed = rng_seed;
  const CounterRng base(rng_seed, 0x00D);

  // Classes are assigned round-robin over a seeded permutation so that every
  // class appears once per block of kOodClasses.size() problems.
  std::vector<int> order(kOodClasses.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng shuffle = base.split(~std::uint64_t{0});
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

  for (int i = 0; i < count; ++i) {
    const int cls = order[static_cast<std::size_t>(i) % order.size()];
    set.problems.push_back(draw_valid(base, i, [cls, i](CounterRng& rng) { return draw_ood(rng, cls, i); }));
  }
  return set;
}

const std::vector<std::string>& ood_classes() { return kOodClasses; }

std::string ood_class_of(const DesignProblem& problem) {
  const auto pos = problem.id.rfind('_');
  if (pos == std::string::npos) return {};
  const std::string prefix = problem.id.substr(0, pos);
  return std::find(kOodClasses.begin(), kOodClasses.end(), prefix) != kOodClasses.end() ? prefix : std::string{};
}

std::vector<int> centered_edge_sink(int nely, double fraction) {
  const int nodes_on_edge = nely + 1;
  const int count = std::clamp(static_cast<int>(std::ceil(fraction * nodes_on_edge - 1e-12)), 1, nodes_on_edge);
  const int start = (nodes_on_edge - count) / 2;
  std::vector<int> out;
  // left edge: ix = 0, so the node index is iy
  for (int iy = start; iy < start + count; ++iy) out.push_back(iy);
  return out;
}

DesignProblem thermal_benchmark_problem(int nel, double volume_fraction, double source) {
  DesignProblem p;
  p.id = "thermal_sink_edge";
  p.physics = Physics::thermal;
  p.nelx = nel;
  p.nely = nel;
  p.fixed_dofs = centered_edge_sink(nel, 0.2);
  p.source = source;
  p.volume_fraction = volume_fraction;
  validate(p);
  return p;
}

DesignProblem mbb_half_beam(int nelx, int nely, double volume_fraction) {
  DesignProblem p;
  p.id = "mbb_half_beam";
  p.nelx = nelx;
  p.nely = nely;
  p.volume_fraction = volume_fraction;
  p.loads.push_back({p.node(0, 0), 1, -1.0});
  for (int iy = 0; iy <= nely; ++iy) p.fixed_dofs.push_back(2 * p.node(0, iy));
  p.fixed_dofs.push_back(2 * p.node(nelx, nely) + 1);
  finalize_fixed(p);
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json problem_to_json(const DesignProblem& p) {
  json j;
  j["id"] = p.id;
  j["physics"] = std::string(to_string(p.physics));
  j["nelx"] = p.nelx;
  j["nely"] = p.nely;
  json loads = json::array();
  for (const auto& l : p.loads) loads.push_back(json::array({l.node, l.dof, l.magnitude}));
  j["loads"] = std::move(loads);
  j["fixed_dofs"] = p.fixed_dofs;
  if (p.mask) {
    j["mask"] = {{"x0", p.mask->x0}, {"y0", p.mask->y0}, {"w", p.mask->w}, {"h", p.mask->h}};
  } else {
    j["mask"] = nullptr;
  }
  j["volume_fraction"] = p.volume_fraction;
  j["source"] = p.source ? json(*p.source) : json(nullptr);
  return j;
}

DesignProblem problem_from_json(const json& node, const std::string& path) {
  ObjectReader r(node, path);
  DesignProblem p;
  p.id = r.get<std::string>("id");
  p.physics = physics_from_string(r.get<std::string>("physics"));
  p.nelx = r.get<int>("nelx");
  p.nely = r.get<int>("nely");
  const json& loads = r.node("loads");
  if (!loads.is_array()) throw ParseError(r.field_path("loads") + ": expected an array");
  for (std::size_t i = 0; i < loads.size(); ++i) {
    const std::string where = r.field_path("loads") + "[" + std::to_string(i) + "]";
    const json& l = loads[i];
    if (!l.is_array() || l.size() != 3) throw ParseError(where + ": expected [node, dof, magnitude]");
    p.loads.push_back({ObjectReader::convert<int>(l[0], where + "[0]"), ObjectReader::convert<int>(l[1], where + "[1]"),
                       ObjectReader::convert<double>(l[2], where + "[2]")});
  }
  p.fixed_dofs = r.get<std::vector<int>>("fixed_dofs");
  if (const json* m = r.optional_node("mask")) {
    ObjectReader mr(*m, r.field_path("mask"));
    p.mask = MaskRect{mr.get<int>("x0"), mr.get<int>("y0"), mr.get<int>("w"), mr.get<int>("h")};
    mr.finish();
  }
  p.volume_fraction = r.get<double>("volume_fraction");
  p.source = r.get_optional<double>("source");
  r.finish();
  return p;
}

}  // namespace

std::string to_json(const ProblemSet& set) {
  json j;
  j["name"] = set.name;
  j["kind"] = std::string(to_string(set.kind));
  j["seed"] = set.seed;
  json arr = json::array();
  for (const auto& p : set.problems) arr.push_back(problem_to_json(p));
  j["problems"] = std::move(arr);
  return j.dump(2) + "\n";
}

ProblemSet problem_set_from_json(std::string_view text) {
  const json root = detail::parse_json(text, "problem set");
  ObjectReader r(root, "");
  ProblemSet set;
  set.name = r.get<std::string>("name");
  const auto kind = r.get<std::string>("kind");
  if (kind == "in_distribution") {
    set.kind = SetKind::in_distribution;
  } else if (kind == "out_of_distribution") {
    set.kind = SetKind::out_of_distribution;
  } else {
    throw ParseError("kind: unknown value '" + kind + "'");
  }
  set.seed = r.get<std::uint64_t>("seed");
  const json& problems = r.node("problems");
  if (!problems.is_array()) throw ParseError("problems: expected an array");
  for (std::size_t i = 0; i < problems.size(); ++i) {
    set.problems.push_back(problem_from_json(problems[i], "problems[" + std::to_string(i) + "]"));
  }
  r.finish();
  validate(set);
  return set;
}

ProblemSet load_problem_file(const std::filesystem::path& path) {
  try {
    return problem_set_from_json(detail::read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_problem_file(const ProblemSet& set, const std::filesystem::path& path) {
  validate(set);
  detail::write_text_file(path, to_json(set));
}

}  // namespace latopt
