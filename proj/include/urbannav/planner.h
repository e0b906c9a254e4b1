#pragma once

#include <vector>

#include "urbannav/geom.h"
#include "urbannav/scene.h"

namespace urbannav {

struct PlannerConfig {
  double resolution = 0.25;
  double inflation = 0.45;
  // Cost multiplier 1 + weight * max(0, 1 - clearance / preferred)^2 keeps
  // plans away from walls when there is room.
  double preferred_clearance = 3.0;
  double clearance_weight = 4.0;
  bool shortcut = true;
};

/// Occupancy grid of the walkable area minus static obstacles, with an
/// exact Euclidean clearance field.
class OccupancyGrid {
 public:
  OccupancyGrid(const Scene& scene, double resolution);

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }

  bool InBounds(int cx, int cy) const { return cx >= 0 && cy >= 0 && cx < width_ && cy < height_; }
  Point2 CellCenter(int cx, int cy) const;
  /// Cell containing `p` (may be out of bounds).
  Eigen::Vector2i CellOf(const Point2& p) const;
  bool Occupied(int cx, int cy) const { return occupied_[Index(cx, cy)] != 0; }
  /// Distance from the cell center to the nearest occupied cell center.
  double Clearance(int cx, int cy) const { return clearance_[Index(cx, cy)]; }
  /// Clearance at the cell containing `p`; zero outside the grid.
  double ClearanceAt(const Point2& p) const;

 private:
  int Index(int cx, int cy) const { return cy * width_ + cx; }

  Point2 origin_;
  double resolution_;
  int width_ = 0;
  int height_ = 0;
  std::vector<unsigned char> occupied_;
  std::vector<double> clearance_;
};

/// A* from spawn to goal on the inflated grid, then shortcut smoothing
/// that never reduces the path's minimum clearance. Throws InfeasibleScene
/// when no path exists.
Polyline PlanPath(const Scene& scene, const PlannerConfig& config = {});

/// Geometric shortest collision-free path length (agent-radius inflation,
/// no clearance preference). Used as the SPL reference.
double ShortestPathLength(const Scene& scene, double agent_radius = 0.3);

/// Exact squared Euclidean distance transform on a grid (row-major, `inf`
/// for free cells, 0 for sources). Returns squared distances in cells.
std::vector<double> SquaredDistanceTransform(const std::vector<unsigned char>& sources, int width,
                                             int height);

}  // namespace urbannav
