// SPDX-License-Identifier: Apache-2.0
#include "log3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "log3d/parallel.hpp"

namespace log3d {

PointSample sample_points(const TriangleMesh& mesh, std::size_t k, std::uint64_t seed) {
  mesh.validate();
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    total += 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("cannot sample a mesh with zero surface area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointSample out;
  out.points.reserve(k);
  out.triangle.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    // Skip zero-area faces that share a cumulative value with their predecessor.
    while (it != cumulative.begin() && *(it - 1) == *it) --it;
    const auto t = static_cast<std::uint32_t>(it - cumulative.begin());
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const auto& tri = mesh.triangles[t];
    out.points.push_back((1.0 - r1) * mesh.vertices[tri[0]] + r1 * (1.0 - r2) * mesh.vertices[tri[1]] +
                         r1 * r2 * mesh.vertices[tri[2]]);
    out.triangle.push_back(t);
  }
  return out;
}

PointIndex::PointIndex(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw std::invalid_argument("point index needs at least one point");
  std::vector<std::uint32_t> ids(points_.size());
  std::iota(ids.begin(), ids.end(), 0u);
  nodes_.reserve(points_.size());
  root_ = build(ids.data(), ids.data() + ids.size(), 0);
}

std::int32_t PointIndex::build(std::uint32_t* begin, std::uint32_t* end, int depth) {
  if (begin == end) return -1;
  const int axis = depth % 3;
  std::uint32_t* mid = begin + (end - begin) / 2;
  std::nth_element(begin, mid, end, [&](std::uint32_t a, std::uint32_t b) {
    const double pa = points_[a][axis], pb = points_[b][axis];
    return pa < pb || (pa == pb && a < b);
  });
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({*mid, -1, -1, static_cast<std::uint8_t>(axis)});
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid + 1, end, depth + 1);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

double PointIndex::nearest_squared(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  // Explicit stack of (node, squared lower bound of the far-side split).
  std::pair<std::int32_t, double> stack[128];
  int top = 0;
  stack[top++] = {root_, 0.0};
  while (top > 0) {
    const auto [ni, bound] = stack[--top];
    if (ni < 0 || bound > best) continue;
    const Node& node = nodes_[static_cast<std::size_t>(ni)];
    const Vec3& q = points_[node.point];
    best = std::min(best, (p - q).squaredNorm());
    const double diff = p[node.axis] - q[node.axis];
    const std::int32_t near = diff < 0 ? node.left : node.right;
    const std::int32_t far = diff < 0 ? node.right : node.left;
    // The far side is only visited when the splitting plane is within reach;
    // a plane exactly at the current best distance is still visited.
    stack[top++] = {far, diff * diff};
    stack[top++] = {near, 0.0};
  }
  return best;
}

std::vector<double> nearest_distances(const std::vector<Vec3>& from, const PointIndex& to) {
  std::vector<double> out(from.size());
  parallel_for_chunks(from.size(), 1024, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = std::sqrt(to.nearest_squared(from[i]));
  });
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double fraction_below(const std::vector<double>& v, double t) {
  const auto hits = std::count_if(v.begin(), v.end(), [t](double d) { return d < t; });
  return static_cast<double>(hits) / static_cast<double>(v.size());
}

}  // namespace

double chamfer(const PointSample& a, const PointSample& b) {
  if (a.points.empty() || b.points.empty()) throw std::invalid_argument("chamfer needs non-empty samples");
  const PointIndex ia(a.points), ib(b.points);
  return 0.5 * (mean(nearest_distances(a.points, ib)) + mean(nearest_distances(b.points, ia)));
}

double fscore(const PointSample& a, const PointSample& b, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("F-score threshold must be positive");
  if (a.points.empty() || b.points.empty()) throw std::invalid_argument("F-score needs non-empty samples");
  const PointIndex ia(a.points), ib(b.points);
  const double precision = fraction_below(nearest_distances(a.points, ib), t);
  const double recall = fraction_below(nearest_distances(b.points, ia), t);
  if (precision + recall == 0.0) return 0.0;
  return 200.0 * precision * recall / (precision + recall);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["cd"] = cd;
  j["f1_001"] = f1_001;
  j["f1_01"] = f1_01;
  j["K"] = k;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

EvalReport evaluate(const TriangleMesh& a, const TriangleMesh& b, std::size_t k, std::uint64_t seed) {
  const PointSample sa = sample_points(a, k, seed);
  const PointSample sb = sample_points(b, k, seed);
  const PointIndex ia(sa.points), ib(sb.points);
  const auto da = nearest_distances(sa.points, ib);
  const auto db = nearest_distances(sb.points, ia);

  auto f = [&](double t) {
    const double p = fraction_below(da, t), r = fraction_below(db, t);
    return p + r == 0.0 ? 0.0 : 200.0 * p * r / (p + r);
  };
  EvalReport rep;
  rep.cd = 0.5 * (mean(da) + mean(db));
  rep.f1_001 = f(0.001);
  rep.f1_01 = f(0.01);
  rep.k = k;
  rep.seed = seed;
  return rep;
}

}  // namespace log3d
