// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "log3d/metrics.hpp"
#include "log3d/udf_field.hpp"
#include "json.hpp"

using namespace log3d;

namespace {

PointSample random_cloud(std::size_t n, std::uint64_t seed, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  PointSample s;
  for (std::size_t i = 0; i < n; ++i) s.points.emplace_back(u(rng), u(rng), u(rng));
  s.triangle.assign(n, 0);
  return s;
}

PointSample cloud(std::vector<Vec3> pts) {
  PointSample s;
  s.triangle.assign(pts.size(), 0);
  s.points = std::move(pts);
  return s;
}

double brute_chamfer(const PointSample& a, const PointSample& b) {
  auto one_way = [](const PointSample& from, const PointSample& to) {
    double sum = 0.0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to.points) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / from.points.size();
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

}  // namespace

TEST(PointIndex, MatchesBruteForceExactly) {
  const auto pts = random_cloud(500, 1).points;
  const PointIndex index(pts);
  const auto queries = random_cloud(300, 2, 1.5).points;
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, (q - p).squaredNorm());
    ASSERT_EQ(index.nearest_squared(q), best);
  }
}

TEST(Chamfer, IdentityAndBruteForce) {
  const auto a = random_cloud(200, 3), b = random_cloud(200, 4);
  EXPECT_EQ(chamfer(a, a), 0.0);
  EXPECT_NEAR(chamfer(a, b), brute_chamfer(a, b), 1e-12);
  EXPECT_NEAR(chamfer(a, b), chamfer(b, a), 1e-12);
}

TEST(Chamfer, ClosedForms) {
  EXPECT_DOUBLE_EQ(chamfer(cloud({Vec3(0, 0, 0)}), cloud({Vec3(3, 4, 0)})), 5.0);
  // A = {0, 2} on a line, B = {0}: A->B mean 1, B->A 0.
  EXPECT_DOUBLE_EQ(chamfer(cloud({Vec3(0, 0, 0), Vec3(2, 0, 0)}), cloud({Vec3(0, 0, 0)})), 0.5);
}

TEST(Chamfer, RigidMotionInvariance) {
  auto a = random_cloud(200, 5), b = random_cloud(200, 6);
  const double before = chamfer(a, b);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 t(0.3, -2.0, 1.1);
  for (auto* s : {&a, &b})
    for (auto& p : s->points) p = r * p + t;
  EXPECT_NEAR(chamfer(a, b), before, 1e-12);
}

TEST(FScore, IdentityHalfMatchAndMonotonicity) {
  const auto a = random_cloud(200, 7);
  EXPECT_EQ(fscore(a, a, 1e-3), 100.0);
  const auto p = cloud({Vec3(0, 0, 0), Vec3(10, 0, 0)});
  const auto q = cloud({Vec3(0, 0, 0), Vec3(0, 10, 0)});
  EXPECT_DOUBLE_EQ(fscore(p, q, 0.5), 50.0);
  EXPECT_EQ(fscore(cloud({Vec3(0, 0, 0)}), cloud({Vec3(1, 0, 0)}), 0.5), 0.0);
  const auto b = random_cloud(200, 8);
  double last = -1.0;
  for (double t : {0.01, 0.05, 0.1, 0.2, 0.4, 1.0}) {
    const double f = fscore(a, b, t);
    EXPECT_GE(f, last);
    last = f;
  }
  EXPECT_THROW(fscore(a, b, 0.0), std::invalid_argument);
}

TEST(Sampling, PointsLieOnTheirTriangles) {
  const auto mesh = fx::torus(0.35, 0.12, 16, 12);
  const auto s = sample_points(mesh, 5000, 9);
  ASSERT_EQ(s.size(), 5000u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& t = mesh.triangles[s.triangle[i]];
    ASSERT_LT(point_triangle_distance(s.points[i], mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]),
              1e-12);
  }
}

TEST(Sampling, AreaWeighted) {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(5, 0, 0), Vec3(8, 0, 0), Vec3(5, 1, 0)};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};  // areas 0.5 and 1.5
  const auto s = sample_points(m, 100000, 10);
  std::size_t big = 0;
  for (auto t : s.triangle) big += t == 1;
  EXPECT_NEAR(static_cast<double>(big) / (s.size() - big), 3.0, 3.0 * 0.02);
}

TEST(Sampling, SeededAndDeterministic) {
  const auto mesh = fx::icosphere(2, 0.5);
  const auto a = sample_points(mesh, 1000, 1), b = sample_points(mesh, 1000, 1), c = sample_points(mesh, 1000, 2);
  EXPECT_EQ(a.points, b.points);
  EXPECT_NE(a.points, c.points);
}

TEST(Evaluate, IdenticalMeshesAndJson) {
  const auto mesh = fx::icosphere(2, 0.5);
  const auto r = evaluate(mesh, mesh, 2000, 4);
  EXPECT_EQ(r.cd, 0.0);
  EXPECT_EQ(r.f1_001, 100.0);
  EXPECT_EQ(r.f1_01, 100.0);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("K").get<std::size_t>(), 2000u);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 4u);
  EXPECT_TRUE(j.contains("cd") && j.contains("f1_001") && j.contains("f1_01"));
}
