#include "quadplan/contact.hpp"

#include <cmath>
#include <unordered_map>

namespace quadplan {

const char* contactModeName(ContactMode m) {
  switch (m) {
    case ContactMode::Breakage: return "breakage";
    case ContactMode::Sliding: return "sliding";
    default: return "static";
  }
}

FrictionBasis FrictionBasis::standard() {
  FrictionBasis b;
  b.directions.col(0) = Vec3(1, 0, 0);
  b.directions.col(1) = Vec3(-1, 0, 0);
  b.directions.col(2) = Vec3(0, 0, 1);
  b.directions.col(3) = Vec3(0, 0, -1);
  return b;
}

Vec3 SolePatch::position(const SkinMesh& mesh, const VecX& u) const {
  Vec3 p = Vec3::Zero();
  for (size_t i = 0; i < vertices.size(); ++i)
    p += weights[i] * mesh.worldPosition(u, vertices[i]);
  return p;
}

std::vector<int> detectGroundContacts(const SkinMesh& mesh,
                                      const std::vector<Vec3>& skinWorldPositions,
                                      double tolerance) {
  std::vector<int> out;
  for (int v : mesh.contactCandidates)
    if (skinWorldPositions[v].y() <= tolerance) out.push_back(v);
  return out;
}

std::vector<SolePatch> groupSolePatches(const SkinMesh& mesh, int leg,
                                        const std::vector<int>& soleVertexIds) {
  std::vector<SolePatch> patches;
  auto finishWeights = [&](SolePatch& p) {
    p.weights.resize(p.vertices.size());
    double total = 0.0;
    for (size_t i = 0; i < p.vertices.size(); ++i) {
      p.weights[i] = mesh.vertexMass[p.vertices[i]];
      total += p.weights[i];
    }
    p.weights /= total;
  };

  if (soleVertexIds.size() <= 5) {
    for (int v : soleVertexIds) {
      SolePatch p;
      p.leg = leg;
      p.vertices = {v};
      finishWeights(p);
      patches.push_back(std::move(p));
    }
    return patches;
  }

  Vec3 centroid = Vec3::Zero();
  for (int v : soleVertexIds) centroid += mesh.restVertices[v];
  centroid /= static_cast<double>(soleVertexIds.size());
  double meanRadius = 0.0;
  for (int v : soleVertexIds) {
    const Vec3 d = mesh.restVertices[v] - centroid;
    meanRadius += std::hypot(d.x(), d.z());
  }
  meanRadius /= static_cast<double>(soleVertexIds.size());

  patches.assign(5, SolePatch{});
  for (auto& p : patches) p.leg = leg;
  for (int v : soleVertexIds) {
    const Vec3 d = mesh.restVertices[v] - centroid;
    const double r = std::hypot(d.x(), d.z());
    int slot;
    if (r <= 0.5 * meanRadius) slot = 4;  // center patch
    else slot = (d.x() >= 0.0 ? 0 : 2) + (d.z() >= 0.0 ? 0 : 1);
    patches[slot].vertices.push_back(v);
  }
  // a deterministic fallback keeps every patch nonempty: an empty quadrant or
  // center steals the nearest vertex of the fullest patch
  for (size_t slot = 0; slot < patches.size(); ++slot) {
    if (!patches[slot].vertices.empty()) continue;
    size_t donor = 0;
    for (size_t j = 1; j < patches.size(); ++j)
      if (patches[j].vertices.size() > patches[donor].vertices.size()) donor = j;
    patches[slot].vertices.push_back(patches[donor].vertices.back());
    patches[donor].vertices.pop_back();
  }
  for (auto& p : patches) finishWeights(p);
  return patches;
}

namespace {

struct CellKey {
  long long x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};
struct CellHash {
  size_t operator()(const CellKey& k) const {
    return static_cast<size_t>(k.x * 73856093LL ^ k.y * 19349663LL ^ k.z * 83492791LL);
  }
};

struct WorldTriangle {
  Vec3 a, b, c;
  Vec3 normal;
  int linkId = -1;             // >= 0: bracing triangle
  std::array<int, 3> skinVerts{-1, -1, -1};  // >= 0: skin surface triangle
};

CellKey cellOf(const Vec3& p, double h) {
  return CellKey{static_cast<long long>(std::floor(p.x() / h)),
                 static_cast<long long>(std::floor(p.y() / h)),
                 static_cast<long long>(std::floor(p.z() / h))};
}

}  // namespace

PenaltyResult penaltyForces(const Scene& scene, const KinematicsCache& cache,
                            const VecX& u, const VecX& udot, double stiffness,
                            double damping, double envelope) {
  const SkinMesh& mesh = scene.skin;
  const int nv = mesh.numVertices();
  PenaltyResult out;
  out.skinForces = VecX::Zero(3 * nv);
  std::vector<char> onSurface(nv, 0);
  for (const auto& f : mesh.surfaceTriangles)
    for (int v : f) onSurface[v] = 1;

  std::vector<WorldTriangle> tris;
  double maxEdge = 0.0;
  for (int k = 0; k < scene.skeleton.numLinks(); ++k) {
    for (const auto& local : scene.skeleton.links[k].bracingTriangles) {
      WorldTriangle t;
      t.a = cache.worldPoint(k, local[0]);
      t.b = cache.worldPoint(k, local[1]);
      t.c = cache.worldPoint(k, local[2]);
      t.linkId = k;
      tris.push_back(t);
    }
  }
  for (const auto& f : mesh.surfaceTriangles) {
    WorldTriangle t;
    t.a = mesh.worldPosition(u, f[0]);
    t.b = mesh.worldPosition(u, f[1]);
    t.c = mesh.worldPosition(u, f[2]);
    t.skinVerts = {f[0], f[1], f[2]};
    tris.push_back(t);
  }
  if (tris.empty()) return out;
  for (auto& t : tris) {
    const Vec3 n = (t.b - t.a).cross(t.c - t.a);
    const double len = n.norm();
    if (len < 1e-14) {
      t.normal = Vec3::UnitY();
      continue;
    }
    t.normal = n / len;
    maxEdge = std::max({maxEdge, (t.b - t.a).norm(), (t.c - t.b).norm(),
                        (t.a - t.c).norm()});
  }
  const double h = std::max(1e-6, maxEdge);
  const double maxDepth = envelope;

  std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
  for (size_t i = 0; i < tris.size(); ++i) {
    Vec3 lo = tris[i].a.cwiseMin(tris[i].b).cwiseMin(tris[i].c) -
              Vec3::Constant(envelope);
    Vec3 hi = tris[i].a.cwiseMax(tris[i].b).cwiseMax(tris[i].c) +
              Vec3::Constant(envelope);
    const CellKey klo = cellOf(lo, h), khi = cellOf(hi, h);
    for (long long x = klo.x; x <= khi.x; ++x)
      for (long long y = klo.y; y <= khi.y; ++y)
        for (long long z = klo.z; z <= khi.z; ++z)
          grid[CellKey{x, y, z}].push_back(static_cast<int>(i));
  }

  for (int v = 0; v < nv; ++v) {
    if (!onSurface[v]) continue;
    const Vec3 p = mesh.worldPosition(u, v);
    const Vec3 vel = udot.size() ? Vec3(udot.segment<3>(3 * v)) : Vec3::Zero();
    auto it = grid.find(cellOf(p, h));
    if (it == grid.end()) continue;
    for (int ti : it->second) {
      const WorldTriangle& t = tris[ti];
      if (t.skinVerts[0] == v || t.skinVerts[1] == v || t.skinVerts[2] == v) continue;
      const double d = (p - t.a).dot(t.normal);
      if (d >= 0.0 || d < -maxDepth) continue;
      // barycentric containment of the projected point
      const Vec3 proj = p - d * t.normal;
      const Vec3 v0 = t.b - t.a, v1 = t.c - t.a, v2 = proj - t.a;
      const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
      const double d20 = v2.dot(v0), d21 = v2.dot(v1);
      const double denom = d00 * d11 - d01 * d01;
      if (std::abs(denom) < 1e-18) continue;
      const double bv = (d11 * d20 - d01 * d21) / denom;
      const double bw = (d00 * d21 - d01 * d20) / denom;
      const double bu = 1.0 - bv - bw;
      if (bu < -1e-9 || bv < -1e-9 || bw < -1e-9) continue;

      const double depth = -d;
      Vec3 otherVel = Vec3::Zero();
      if (t.linkId >= 0) {
        const Vec3 localHit =
            cache.linkRotation(t.linkId).transpose() * (proj - cache.linkOrigin(t.linkId));
        otherVel = cache.pointVelocity(t.linkId, localHit);
      } else if (udot.size()) {
        otherVel = bu * Vec3(udot.segment<3>(3 * t.skinVerts[0])) +
                   bv * Vec3(udot.segment<3>(3 * t.skinVerts[1])) +
                   bw * Vec3(udot.segment<3>(3 * t.skinVerts[2]));
      }
      const double approach = (vel - otherVel).dot(t.normal);
      double mag = stiffness * depth;
      if (approach < 0.0) mag -= damping * approach;
      const Vec3 force = mag * t.normal;
      out.skinForces.segment<3>(3 * v) += force;
      ++out.activeContacts;
      if (t.linkId >= 0) {
        PointForce pf;
        pf.linkId = t.linkId;
        pf.localPoint =
            cache.linkRotation(t.linkId).transpose() * (proj - cache.linkOrigin(t.linkId));
        pf.worldForce = -force;
        out.linkReactions.push_back(pf);
      } else {
        out.skinForces.segment<3>(3 * t.skinVerts[0]) -= bu * force;
        out.skinForces.segment<3>(3 * t.skinVerts[1]) -= bv * force;
        out.skinForces.segment<3>(3 * t.skinVerts[2]) -= bw * force;
      }
    }
  }
  return out;
}

}  // namespace quadplan
