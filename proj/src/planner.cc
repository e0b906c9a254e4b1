#include "urbannav/planner.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "urbannav/error.h"

namespace urbannav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher lower envelope of parabolas.
void Transform1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[0]] == kInf) {
      v[0] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      v[k] = q;
      z[k] = -kInf;
      z[k + 1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (f[v[0]] == kInf) {
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> SquaredDistanceTransform(const std::vector<unsigned char>& sources, int width,
                                             int height) {
  std::vector<double> grid(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sources[i] ? 0.0 : kInf;
  const int n = std::max(width, height);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = grid[y * width + x];
    Transform1d(f.data(), d.data(), height, v, z);
    for (int y = 0; y < height; ++y) grid[y * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) f[x] = grid[y * width + x];
    Transform1d(f.data(), d.data(), width, v, z);
    for (int x = 0; x < width; ++x) grid[y * width + x] = d[x];
  }
  return grid;
}

OccupancyGrid::OccupancyGrid(const Scene& scene, double resolution) : resolution_(resolution) {
  const Eigen::AlignedBox2d bounds = scene.Bounds();
  origin_ = bounds.min() - Point2(1.0, 1.0);
  const Point2 size = bounds.sizes() + Point2(2.0, 2.0);
  width_ = static_cast<int>(std::ceil(size.x() / resolution)) + 1;
  height_ = static_cast<int>(std::ceil(size.y() / resolution)) + 1;
  occupied_.assign(static_cast<std::size_t>(width_) * height_, 0);
  const double half_diag = 0.5 * resolution * std::sqrt(2.0);
  for (int cy = 0; cy < height_; ++cy) {
    for (int cx = 0; cx < width_; ++cx) {
      const Point2 c = CellCenter(cx, cy);
      bool occ = !scene.InWalkable(c);
      for (const auto& circle : scene.circles) {
        occ = occ || (c - circle.center).norm() <= circle.radius + half_diag;
      }
      for (const auto& box : scene.boxes) {
        occ = occ || (c.cwiseMax(box.min).cwiseMin(box.max) - c).norm() <= half_diag;
      }
      occupied_[Index(cx, cy)] = occ ? 1 : 0;
    }
  }
  const auto d2 = SquaredDistanceTransform(occupied_, width_, height_);
  clearance_.resize(d2.size());
  for (std::size_t i = 0; i < d2.size(); ++i) {
    clearance_[i] = occupied_[i] ? 0.0 : std::max(0.0, std::sqrt(d2[i]) * resolution - half_diag);
  }
}

Point2 OccupancyGrid::CellCenter(int cx, int cy) const {
  return origin_ + resolution_ * Point2(cx + 0.5, cy + 0.5);
}

Eigen::Vector2i OccupancyGrid::CellOf(const Point2& p) const {
  const Point2 rel = (p - origin_) / resolution_;
  return {static_cast<int>(std::floor(rel.x())), static_cast<int>(std::floor(rel.y()))};
}

double OccupancyGrid::ClearanceAt(const Point2& p) const {
  const auto c = CellOf(p);
  if (!InBounds(c.x(), c.y())) return 0.0;
  return Clearance(c.x(), c.y());
}

namespace {

struct PlannerState {
  const OccupancyGrid& grid;
  const PlannerConfig& config;
  bool Free(int cx, int cy) const {
    return grid.InBounds(cx, cy) && grid.Clearance(cx, cy) >= config.inflation;
  }
  double Penalty(int cx, int cy) const {
    if (config.clearance_weight <= 0.0) return 1.0;
    const double deficit = std::max(0.0, 1.0 - grid.Clearance(cx, cy) / config.preferred_clearance);
    return 1.0 + config.clearance_weight * deficit * deficit;
  }
};

Eigen::Vector2i NearestFree(const PlannerState& ps, const Point2& p) {
  const auto start = ps.grid.CellOf(p);
  if (ps.Free(start.x(), start.y())) return start;
  const int radius = static_cast<int>(std::ceil(1.0 / ps.grid.resolution()));
  Eigen::Vector2i best(-1, -1);
  double best_d = kInf;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int cx = start.x() + dx;
      const int cy = start.y() + dy;
      if (!ps.Free(cx, cy)) continue;
      const double d = (ps.grid.CellCenter(cx, cy) - p).norm();
      if (d < best_d) {
        best_d = d;
        best = {cx, cy};
      }
    }
  }
  if (best_d == kInf) throw InfeasibleScene("no free cell near endpoint");
  return best;
}

bool LineFree(const OccupancyGrid& grid, const Point2& a, const Point2& b, double min_clearance) {
  const double len = (b - a).norm();
  const int samples = std::max(1, static_cast<int>(std::ceil(len / (0.5 * grid.resolution()))));
  for (int i = 0; i <= samples; ++i) {
    const Point2 p = a + (b - a) * (static_cast<double>(i) / samples);
    if (grid.ClearanceAt(p) < min_clearance) return false;
  }
  return true;
}

}  // namespace

Polyline PlanPath(const Scene& scene, const PlannerConfig& config) {
  const OccupancyGrid grid(scene, config.resolution);
  const PlannerState ps{grid, config};
  const Eigen::Vector2i start = NearestFree(ps, scene.spawn.position());
  const Eigen::Vector2i goal = NearestFree(ps, scene.goal);

  const int w = grid.width();
  const std::size_t cells = static_cast<std::size_t>(w) * grid.height();
  std::vector<double> g(cells, kInf);
  std::vector<int> parent(cells, -1);
  std::vector<unsigned char> closed(cells, 0);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const Point2 goal_c = grid.CellCenter(goal.x(), goal.y());
  auto heuristic = [&](int cx, int cy) { return (grid.CellCenter(cx, cy) - goal_c).norm(); };
  const int s_idx = start.y() * w + start.x();
  const int g_idx = goal.y() * w + goal.x();
  g[s_idx] = 0.0;
  open.emplace(heuristic(start.x(), start.y()), s_idx);
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!open.empty()) {
    const int idx = open.top().second;
    open.pop();
    if (closed[idx]) continue;
    closed[idx] = 1;
    if (idx == g_idx) break;
    const int cx = idx % w;
    const int cy = idx / w;
    for (int k = 0; k < 8; ++k) {
      const int nx = cx + kDx[k];
      const int ny = cy + kDy[k];
      if (!ps.Free(nx, ny)) continue;
      if (k >= 4 && (!ps.Free(cx + kDx[k], cy) || !ps.Free(cx, cy + kDy[k]))) continue;
      const int n_idx = ny * w + nx;
      if (closed[n_idx]) continue;
      const double step = (k >= 4 ? std::sqrt(2.0) : 1.0) * grid.resolution();
      const double cand = g[idx] + step * ps.Penalty(nx, ny);
      if (cand < g[n_idx]) {
        g[n_idx] = cand;
        parent[n_idx] = idx;
        open.emplace(cand + heuristic(nx, ny), n_idx);
      }
    }
  }
  if (!closed[g_idx]) throw InfeasibleScene("no grid path from spawn to goal");

  std::vector<Point2> nodes;
  std::vector<double> node_clearance;
  for (int idx = g_idx; idx != -1; idx = parent[idx]) {
    nodes.push_back(grid.CellCenter(idx % w, idx / w));
    node_clearance.push_back(grid.Clearance(idx % w, idx / w));
  }
  std::reverse(nodes.begin(), nodes.end());
  std::reverse(node_clearance.begin(), node_clearance.end());
  nodes.front() = scene.spawn.position();
  nodes.back() = scene.goal;
  if (nodes.size() == 1) nodes.push_back(scene.goal);

  if (!config.shortcut) return Polyline(std::move(nodes), true);

  std::vector<Point2> out{nodes.front()};
  std::size_t i = 0;
  const bool preserve = config.clearance_weight > 0.0;
  while (i + 1 < nodes.size()) {
    std::vector<double> running_min(nodes.size(), kInf);
    double m = kInf;
    for (std::size_t j = i; j < nodes.size(); ++j) {
      m = std::min(m, node_clearance[j]);
      running_min[j] = m;
    }
    std::size_t next = i + 1;
    for (std::size_t j = nodes.size() - 1; j > i + 1; --j) {
      // Endpoints sit off the grid centers; judge them against inflation only.
      const double need =
          preserve ? std::max(config.inflation, running_min[j] - grid.resolution())
                   : config.inflation;
      if (LineFree(grid, nodes[i], nodes[j], need)) {
        next = j;
        break;
      }
    }
    out.push_back(nodes[next]);
    i = next;
  }
  return Polyline(std::move(out), true);
}

double ShortestPathLength(const Scene& scene, double agent_radius) {
  PlannerConfig cfg;
  cfg.inflation = agent_radius;
  cfg.clearance_weight = 0.0;
  return PlanPath(scene, cfg).length();
}

}  // namespace urbannav
