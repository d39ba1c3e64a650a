#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "proprio/geometry.hpp"

namespace proprio::model {

using geometry::Vec3;

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// Exact nearest-neighbor index over a 3D point set. Median splits on the
/// widest axis, bucket leaves; queries return the same minimum distance the
/// O(n^2) scan would (identical arithmetic per pair).
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : pts_(points) {
    if (points.empty()) throw std::invalid_argument("KdTree3: empty point set");
    index_.resize(points.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(2 * points.size() / kLeafSize + 2);
    build(0, points.size());
  }

  struct Hit {
    std::size_t index;
    double dist2;
  };

  Hit nearest(const Vec3& q) const {
    Hit best{0, std::numeric_limits<double>::infinity()};
    search(0, q, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    int axis = -1;       // -1 for leaf
    double split = 0.0;
    std::size_t begin = 0, end = 0;  // leaf range into index_
    std::size_t left = 0, right = 0;
  };

  static double coord(const Vec3& p, int axis) {
    return axis == 0 ? p.x : axis == 1 ? p.y : p.z;
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = pts_[index_[i]];
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    int axis = 0;
    double span = hi.x - lo.x;
    if (hi.y - lo.y > span) { axis = 1; span = hi.y - lo.y; }
    if (hi.z - lo.z > span) axis = 2;

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       return coord(pts_[a], axis) < coord(pts_[b], axis);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = coord(pts_[index_[mid]], axis);
    std::size_t l = build(begin, mid);
    std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(std::size_t id, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        double d = dist2(q, pts_[index_[i]]);
        if (d < best.dist2) best = {index_[i], d};
      }
      return;
    }
    const double delta = coord(q, n.axis) - n.split;
    const std::size_t near = delta < 0.0 ? n.left : n.right;
    const std::size_t far = delta < 0.0 ? n.right : n.left;
    search(near, q, best);
    if (delta * delta < best.dist2) search(far, q, best);
  }

  std::vector<Vec3> pts_;  // owned copy; trees are cached across epochs
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
};

}  // namespace proprio::model
