// SPDX-License-Identifier: Apache-2.0
#include "log3d/udf_field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <queue>

#include "log3d/binary_io.hpp"
#include "log3d/parallel.hpp"

namespace log3d {
namespace {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double degenerate_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  return std::min({point_segment_distance(p, a, b), point_segment_distance(p, b, c),
                   point_segment_distance(p, c, a)});
}

constexpr std::uint32_t kNoTriangle = std::numeric_limits<std::uint32_t>::max();

}  // namespace

// Voronoi-region classification of the closest feature (vertex, edge, face).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  if (ab.cross(ac).squaredNorm() == 0.0) return degenerate_distance(p, a, b, c);

  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return ap.norm();

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return bp.norm();

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return cp.norm();

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }

  const double sum = va + vb + vc;
  if (!(sum > 0.0)) return degenerate_distance(p, a, b, c);
  const double v = vb / sum;
  const double w = vc / sum;
  return (p - (a + ab * v + ac * w)).norm();
}

TriangleBvh::TriangleBvh(TriangleMesh mesh, std::uint32_t leaf_size)
    : mesh_(std::move(mesh)), leaf_size_(std::max<std::uint32_t>(1, leaf_size)) {
  if (mesh_.triangles.empty()) throw VolumeError("cannot build a BVH over an empty mesh");
  mesh_.validate();
  const auto n = static_cast<std::uint32_t>(mesh_.triangles.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  std::vector<Vec3> centroids(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    const auto& tri = mesh_.triangles[t];
    centroids[t] = (mesh_.vertices[tri[0]] + mesh_.vertices[tri[1]] + mesh_.vertices[tri[2]]) / 3.0;
  }
  nodes_.reserve(2 * (n / leaf_size_ + 1));
  build(0, n, centroids);
}

Aabb TriangleBvh::triangle_box(std::uint32_t t) const {
  Aabb box;
  for (auto v : mesh_.triangles[t]) box.grow(mesh_.vertices[v]);
  return box;
}

std::uint32_t TriangleBvh::build(std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Aabb box, cbox;
  for (std::uint32_t i = first; i < first + count; ++i) {
    box.grow(triangle_box(order_[i]));
    cbox.grow(centroids[order_[i]]);
  }
  nodes_[index].box = box;

  if (count <= leaf_size_) {
    nodes_[index].first = first;
    nodes_[index].count = count;
    return index;
  }

  int axis = 0;
  (cbox.hi - cbox.lo).maxCoeff(&axis);
  const std::uint32_t half = count / 2;
  auto begin = order_.begin() + first;
  std::nth_element(begin, begin + half, begin + count, [&](std::uint32_t a, std::uint32_t b) {
    const double ca = centroids[a][axis], cb = centroids[b][axis];
    return ca < cb || (ca == cb && a < b);
  });
  const std::uint32_t left = build(first, half, centroids);
  const std::uint32_t right = build(first + half, count - half, centroids);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

TriangleBvh::Hit TriangleBvh::nearest_within(const Vec3& p, double radius) const {
  Hit best;
  best.distance = radius;
  // Boxes slightly farther than the current best are still visited so that
  // rounding in the box bound can never hide an equal-distance triangle.
  auto prune = [&](double box_d2) {
    const double b = best.distance;
    return box_d2 > b * b * (1.0 + 1e-9) + 1e-300;
  };

  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  open.emplace(nodes_[0].box.squared_distance(p), 0u);
  while (!open.empty()) {
    const auto [d2, ni] = open.top();
    open.pop();
    if (std::isfinite(best.distance) && prune(d2)) break;
    const Node& node = nodes_[ni];
    if (node.is_leaf()) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const std::uint32_t t = order_[i];
        const auto& tri = mesh_.triangles[t];
        const double d = point_triangle_distance(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                                 mesh_.vertices[tri[2]]);
        if (d < best.distance || (d == best.distance && t < best.triangle)) {
          best.distance = d;
          best.triangle = t;
        }
      }
    } else {
      for (auto child : {node.left, node.right}) {
        const double cd2 = nodes_[child].box.squared_distance(p);
        if (!std::isfinite(best.distance) || !prune(cd2)) open.emplace(cd2, child);
      }
    }
  }
  if (best.triangle == kNoTriangle) best.distance = std::numeric_limits<double>::infinity();
  return best;
}

TriangleBvh::Hit TriangleBvh::nearest(const Vec3& p) const {
  return nearest_within(p, std::numeric_limits<double>::infinity());
}

TriangleBvh build_bvh(const TriangleMesh& mesh) { return TriangleBvh(mesh); }

double query_udf(const TriangleBvh& bvh, const Vec3& p) { return bvh.nearest(p).distance; }

double brute_force_udf(const TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles)
    best = std::min(best, point_triangle_distance(p, mesh.vertices[t[0]], mesh.vertices[t[1]],
                                                  mesh.vertices[t[2]]));
  return best;
}

SparseUdfVolume::SparseUdfVolume(std::uint32_t resolution, std::vector<Entry> entries)
    : n_(resolution), entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.coord[0] >= n_ || e.coord[1] >= n_ || e.coord[2] >= n_)
      throw VolumeError("voxel coordinate outside the grid");
    if (!(e.value >= 0.0 && e.value <= 1.0)) throw VolumeError("normalized value outside [0,1]");
    if (i > 0 && !(entries_[i - 1].coord < e.coord))
      throw VolumeError("volume entries must be sorted and unique");
  }
}

std::optional<double> SparseUdfVolume::find(const VoxelCoord& c) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), c,
                                   [](const Entry& e, const VoxelCoord& k) { return e.coord < k; });
  if (it == entries_.end() || it->coord != c) return std::nullopt;
  return it->value;
}

bool valid_resolution(std::uint32_t n) { return n >= 16 && n <= 2048 && std::has_single_bit(n); }

SparseUdfVolume voxelize_sparse(const TriangleMesh& mesh, std::uint32_t n) {
  if (!valid_resolution(n))
    throw VolumeError("resolution must be a power of two in [16, 2048], got " + std::to_string(n));
  const TriangleBvh bvh(mesh);
  const double tau = 4.0 / n;
  const double clip = 5.0 / n;
  const double dilation = tau + 0.5 * std::sqrt(3.0) / n;

  auto index_range = [&](double lo, double hi) {
    const double a = std::ceil((lo - dilation) * n - 0.5);
    const double b = std::floor((hi + dilation) * n - 0.5);
    const auto first = static_cast<std::int64_t>(std::max(a, 0.0));
    const auto last = static_cast<std::int64_t>(std::min(b, static_cast<double>(n) - 1.0));
    return std::pair<std::int64_t, std::int64_t>{first, last};
  };

  // Candidate voxels as linear keys (i*N + j)*N + k, which sort lexicographically.
  std::vector<std::uint64_t> candidates;
  const std::uint64_t nn = n;
  auto for_each_candidate = [&](auto&& visit) {
    for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
      Aabb box;
      for (auto v : mesh.triangles[t]) box.grow(mesh.vertices[v]);
      const auto [i0, i1] = index_range(box.lo.x(), box.hi.x());
      const auto [j0, j1] = index_range(box.lo.y(), box.hi.y());
      const auto [k0, k1] = index_range(box.lo.z(), box.hi.z());
      for (auto i = i0; i <= i1; ++i)
        for (auto j = j0; j <= j1; ++j)
          for (auto k = k0; k <= k1; ++k) visit((static_cast<std::uint64_t>(i) * nn + j) * nn + k);
    }
  };
  if (n <= 512) {
    std::vector<std::uint64_t> bits((nn * nn * nn + 63) / 64, 0);
    for_each_candidate([&](std::uint64_t key) { bits[key >> 6] |= std::uint64_t{1} << (key & 63); });
    for (std::size_t w = 0; w < bits.size(); ++w)
      for (std::uint64_t word = bits[w]; word; word &= word - 1)
        candidates.push_back(w * 64 + static_cast<std::uint64_t>(std::countr_zero(word)));
  } else {
    for_each_candidate([&](std::uint64_t key) { candidates.push_back(key); });
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  }

  constexpr std::size_t kChunk = 4096;
  std::vector<std::vector<SparseUdfVolume::Entry>> parts(chunk_count(candidates.size(), kChunk));
  parallel_for_chunks(candidates.size(), kChunk, [&](std::size_t begin, std::size_t end) {
    auto& out = parts[begin / kChunk];
    for (std::size_t c = begin; c < end; ++c) {
      const std::uint64_t key = candidates[c];
      const VoxelCoord coord{static_cast<std::uint32_t>(key / (nn * nn)),
                             static_cast<std::uint32_t>((key / nn) % nn),
                             static_cast<std::uint32_t>(key % nn)};
      const double u = bvh.nearest_within(voxel_center(coord, n), tau).distance;
      if (u < tau) out.push_back({coord, std::min(u, clip) / clip});
    }
  });

  std::vector<SparseUdfVolume::Entry> entries;
  for (auto& p : parts) entries.insert(entries.end(), p.begin(), p.end());
  if (entries.empty()) throw VolumeError("near-surface band is empty (mesh outside the grid?)");
  return SparseUdfVolume(n, std::move(entries));
}

double denormalize(double v, const SparseUdfVolume& vol) { return vol.denormalize(v); }

namespace {
constexpr std::uint32_t kUdfvVersion = 1;
}  // namespace

float narrow_value(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  return f;
}

std::string encode_udfv(const SparseUdfVolume& vol) {
  BinaryWriter w;
  w.magic("UDFV");
  w.u32(kUdfvVersion);
  w.u32(vol.resolution());
  w.u64(vol.size());
  w.f64(vol.norm_min());
  w.f64(vol.norm_max());
  for (const auto& e : vol.entries()) {
    w.u32(e.coord[0]);
    w.u32(e.coord[1]);
    w.u32(e.coord[2]);
    w.f32(narrow_value(e.value));
  }
  return w.buffer();
}

void write_udfv(const SparseUdfVolume& vol, const std::filesystem::path& path) {
  write_file(path, encode_udfv(vol));
}

SparseUdfVolume decode_udfv(std::string data) {
  BinaryReader r(std::move(data));
  r.expect_magic("UDFV");
  if (const auto v = r.u32(); v != kUdfvVersion)
    throw IoError("unsupported UDFV version " + std::to_string(v));
  const std::uint32_t n = r.u32();
  if (!valid_resolution(n)) throw IoError("UDFV resolution " + std::to_string(n) + " is invalid");
  const std::uint64_t count = r.u64();
  const double lo = r.f64();
  const double hi = r.f64();
  if (lo != 0.0 || hi != 5.0 / n) throw IoError("UDFV normalization range does not match [0, 5/N]");
  if (count > r.remaining() / 16) throw IoError("UDFV record count exceeds file size");
  std::vector<SparseUdfVolume::Entry> entries(count);
  for (auto& e : entries) {
    e.coord = {r.u32(), r.u32(), r.u32()};
    e.value = r.f32();
  }
  if (!r.at_end()) throw IoError("trailing bytes after UDFV records");
  try {
    return SparseUdfVolume(n, std::move(entries));
  } catch (const VolumeError& e) {
    throw IoError(std::string("invalid UDFV contents: ") + e.what());
  }
}

SparseUdfVolume read_udfv(const std::filesystem::path& path) { return decode_udfv(read_file(path)); }

}  // namespace log3d
