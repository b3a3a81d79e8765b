#pragma once

#include "quadplan/multibody.hpp"
#include "quadplan/scene.hpp"

namespace quadplan {

enum class ContactMode { Breakage, Sliding, Static };

const char* contactModeName(ContactMode m);

// Four tangent directions spanning the ground plane (+x, -x, +z, -z).
struct FrictionBasis {
  Vec3 normal = Vec3(0, 1, 0);
  Mat34 directions;

  static FrictionBasis standard();
};

struct SolePatch {
  int leg = -1;
  std::vector<int> vertices;
  VecX weights;  // lumped-mass fractions, sum to 1

  Vec3 position(const SkinMesh& mesh, const VecX& u) const;
};

// Per-patch contact record; Fpar components follow FrictionBasis order.
// For sliding, activeDirs marks the directions carrying force (their
// velocity rows are equalities; the rest keep Fpar = 0).
struct PatchContact {
  int patch = -1;
  ContactMode mode = ContactMode::Static;
  double Fperp = 0.0;
  Vec4 Fpar = Vec4::Zero();
  double lambdaPar = 0.0;
  std::array<bool, 4> activeDirs{false, false, false, false};
};

struct ContactState {
  std::vector<PatchContact> contacts;  // one per active patch
};

// Contact candidates (scene sole region) whose world y is at or below the
// tolerance. Lowering a vertex never removes it from the result.
std::vector<int> detectGroundContacts(const SkinMesh& mesh,
                                      const std::vector<Vec3>& skinWorldPositions,
                                      double tolerance);

// Static partition of one foot's sole vertices into min(5, |sole|) patches:
// 4 quadrants around the sole centroid plus a center patch (rest positions).
std::vector<SolePatch> groupSolePatches(const SkinMesh& mesh, int leg,
                                        const std::vector<int>& soleVertexIds);

struct PenaltyResult {
  VecX skinForces;  // 3V
  std::vector<PointForce> linkReactions;
  int activeContacts = 0;
};

// Explicit penalty forces for skin self-collision and skin-bracing
// collision (vertex-triangle, spatial-hash broad phase, discrete). Only
// surface vertices collide; penetrations deeper than the envelope are
// beyond what a penalty can resolve and are ignored.
PenaltyResult penaltyForces(const Scene& scene, const KinematicsCache& cache,
                            const VecX& u, const VecX& udot, double stiffness,
                            double damping, double envelope = 0.004);

}  // namespace quadplan
