#pragma once

#include "quadplan/scene.hpp"

namespace quadplan {
namespace fixtures {

// Silicone-rubber skin material from the reference robot (E = 0.09 GPa,
// nu = 0.46); density is a scene input, a typical silicone value is used.
MaterialParams rubber();
MaterialParams softRubber(double youngs = 2e4, double nu = 0.3, double density = 1000);

Mat3 boxInertia(double mass, const Vec3& fullExtents);

// One regular tetrahedron of the given edge scale, centered near the origin.
SkinMesh singleTet(double scale = 0.1);

// Axis-aligned box grid, Kuhn-triangulated (6 tets per cell).
SkinMesh boxMesh(const Eigen::Vector3i& cells, const Vec3& corner, const Vec3& size);

SkeletonModel singleFreeLink(double mass = 1.0,
                             const Vec3& fullExtents = Vec3(0.1, 0.1, 0.1));

// Planar double pendulum: root link locked, two links swinging about z.
// Joint origins hang each link below its parent.
struct PendulumParams {
  double l1 = 0.4, l2 = 0.3;    // joint-to-joint lengths
  double lc1 = 0.2, lc2 = 0.15;  // joint-to-COM distances
  double m1 = 1.2, m2 = 0.7;
  double i1 = 0.02, i2 = 0.01;  // z inertia about COM
};
SkeletonModel doublePendulum(const PendulumParams& p = {});

// Branching chain with irregular geometry; all axes free (for Jacobian and
// mass-matrix property tests).
SkeletonModel chain(int numJoints);

// A free-floating box link with a glued soft box skin (the "single-tet +
// single-link coupled body" desk fixture generalized to a small box skin).
Scene coupledBody(bool singleTetSkin = true);

// A box link resting on the ground through a glued skin pad whose bottom
// face provides the contact candidates; one end effector spans the pad.
Scene blockOnGround();

enum class Gait { Stand, Walk, Trot };

// Four-legged desk robot ((2+1)-link legs, ~300-vertex skin) plus a gait
// trajectory. U_m = 1.96 N*m on every actuated axis.
Scene microQuad(Gait gait, int frames = 0);

// Writes scene/mesh/trajectory files for a fixture into dir with the given
// base name; returns the scene-file path.
std::string writeFixture(const Scene& scene, const std::string& dir,
                         const std::string& name);

}  // namespace fixtures
}  // namespace quadplan
