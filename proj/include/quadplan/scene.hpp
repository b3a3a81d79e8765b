#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "quadplan/errors.hpp"
#include "quadplan/types.hpp"

namespace quadplan {

struct LinkModel {
  std::string name;
  double mass = 0.0;
  Mat3 inertiaBody = Mat3::Zero();  // about the COM, link frame
  Vec3 comOffset = Vec3::Zero();    // COM in link frame
  std::vector<Vec3> attachmentPoints;
  std::vector<std::array<Vec3, 3>> bracingTriangles;  // link frame, for penalty collisions
  int parentJoint = -1;                               // -1 for the root
  std::vector<int> childJoints;
};

struct JointModel {
  std::string name;
  int parentLink = -1;
  int childLink = -1;
  Vec3 originInParent = Vec3::Zero();
  // Per Euler axis (x,y,z): actuated axes carry a torque variable bounded by
  // motorLimit; non-actuated axes are locked unless freeAxis overrides.
  std::array<bool, 3> actuated{false, false, false};
  std::array<bool, 3> freeAxis{false, false, false};
  std::array<double, 3> motorLimit{0.0, 0.0, 0.0};
};

struct EndEffector {
  std::string name;
  int link = -1;
  Vec3 contactMarker = Vec3::Zero();  // link frame
  Vec3 soleUp = Vec3(0, 1, 0);        // link-frame direction facing world up when flat
  std::vector<int> soleVertexIds;     // skin vertices forming the sole
};

// Kinematic tree of rigid links. q layout: [root translation (3); root Euler
// XYZ (3); joint Euler XYZ (3 per joint, in joint order)].
struct SkeletonModel {
  std::vector<LinkModel> links;
  std::vector<JointModel> joints;  // topologically ordered, parent before child
  std::vector<EndEffector> endEffectors;
  int rootLink = 0;
  std::array<bool, 6> rootFree{true, true, true, true, true, true};

  int numLinks() const { return static_cast<int>(links.size()); }
  int numJoints() const { return static_cast<int>(joints.size()); }
  int nq() const { return 6 + 3 * numJoints(); }
  int jointDof(int joint, int axis) const { return 6 + 3 * joint + axis; }
  double totalMass() const;
  int linkIndex(const std::string& name) const;  // -1 if absent

  bool dofIsFree(int dof) const;
  std::vector<int> freeDofs() const;
  // q indices of actuated axes, in ascending order, with their torque limits.
  std::vector<int> actuatedDofs() const;
  std::vector<double> actuatedLimits() const;
  std::string dofName(int dof) const;
};

struct GeneralizedState {
  VecX q;
  VecX qdot;

  static GeneralizedState rest(const SkeletonModel& model);
};

struct GlueBinding {
  int vertexId = -1;
  int linkId = -1;
  // Attachment point r in link frame; NaN means "derive from the rest pose".
  Vec3 localCoord = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
};

// Tetrahedral skin mesh with precomputed rest-shape data.
// For tet t with vertices (v0..v3), the deformation gradient is
//   F(u) = I + [u1-u0, u2-u0, u3-u0] * perTetDFdU[t],
// so perTetDFdU (the inverse rest-shape matrix) realizes the constant
// third-order tensor dF/du of linear shape functions.
struct SkinMesh {
  std::vector<Vec3> restVertices;
  std::vector<std::array<int, 4>> tets;
  std::vector<std::array<int, 3>> surfaceTriangles;  // outward oriented, derived from tets
  std::vector<GlueBinding> glueBindings;
  std::vector<int> contactCandidates;  // sole-region surface vertices
  std::vector<Mat3> perTetDFdU;
  std::vector<double> tetVolume;
  std::vector<double> stiffnessScale;  // per-tet Young's modulus scale, default 1
  VecX vertexMass;                     // lumped

  int numVertices() const { return static_cast<int>(restVertices.size()); }
  int numTets() const { return static_cast<int>(tets.size()); }
  int numGlue() const { return static_cast<int>(glueBindings.size()); }
  Vec3 worldPosition(const VecX& u, int v) const {
    return restVertices[v] + u.segment<3>(3 * v);
  }
};

struct MaterialParams {
  double youngsModulus = 0.0;  // Pa
  double poissonRatio = 0.0;
  double lameMu = 0.0;      // Pa
  double lameLambda = 0.0;  // Pa
  double rayleighMass = 0.1;        // 1/s
  double rayleighStiffness = 0.002;  // s
  double density = 0.0;  // kg/m^3

  static double muFrom(double e, double nu) { return e / (2.0 * (1.0 + nu)); }
  static double lambdaFrom(double e, double nu) {
    return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  }
};

struct TrajectorySpec {
  std::vector<Vec3> comTrajectory;               // per frame
  std::vector<std::vector<Vec3>> eeTrajectories;  // [frame][leg]
  std::vector<std::vector<int>> footfall;         // [frame][leg], 0/1
  bool periodic = false;
  int frameCount = 0;
  double dt = 0.005;

  int numLegs() const {
    return eeTrajectories.empty() ? 0 : static_cast<int>(eeTrajectories[0].size());
  }
};

// Every tunable named in the module design decisions, overridable from the
// scene [solver] section, a --config file, and CLI flags (in that order).
struct SolverConfig {
  double dt = 0.005;
  Vec3 gravity = Vec3(0, -9.81, 0);
  double rigidRayleighMass = 0.1;  // D_r = a * M_r(rest)

  double mu = 0.8;
  double contactTolerance = 1e-3;
  double penaltyStiffness = 1e4;
  double penaltyDamping = 10.0;
  double penaltyEnvelope = 0.004;  // max penetration depth considered (m)

  double glueResidualTol = 1e-5;
  int glueProjectionRounds = 3;
  int inversionRetries = 4;

  // Spacetime weights (alpha_t, alpha_s, alpha_c, alpha_e, alpha_f, alpha_o)
  double alphaT = 1e-2;
  double alphaS = 0.5;
  double alphaC = 1.0;
  double alphaE = 1.0;
  double alphaF = 1.0;
  double alphaO = 10.0;
  int eoWindow = 3;  // frames around touchdown/liftoff where E_O is active

  // Frame-by-frame weights (alpha_S, alpha_F, alpha_O, alpha_tau, alpha_C)
  double frameAlphaS = 1.0;
  double frameAlphaF = 10.0;
  double frameAlphaO = 2.0;
  double frameAlphaTau = 0.5;
  double frameAlphaC = 10.0;

  int sqpMaxIterations = 50;
  double sqpStepTol = 1e-8;
  double eqTol = 1e-4;
  double ineqTol = 1e-6;
  double copBuffer = 1e-7;

  int qpccMaxFlips = 10;
  int maxOuterIterations = 5;
  double convergenceTol = 1e-2;
  double alphaFRamp = 1.1;
  int flightBudget = 50;

  int threads = 1;

  // Applies "key value"; throws ParseError on unknown keys.
  void set(const std::string& key, const std::string& value);
};

struct Scene {
  SkeletonModel skeleton;
  SkinMesh skin;
  MaterialParams material;
  TrajectorySpec trajectory;
  SolverConfig config;
};

// Loads, validates, and finalizes a scene (derived quantities included).
Scene loadScene(const std::string& sceneFile, const std::string& trajFile);

// Piecewise loaders, used by loadScene and by tests.
SkinMesh loadMeshFile(const std::string& path);
TrajectorySpec loadTrajectoryFile(const std::string& path);
void applyConfigFile(SolverConfig& config, const std::string& path);

// Validates all type invariants and computes derived quantities (Lamé
// consistency, per-tet dF/du and volumes, lumped masses, surface triangles,
// default glue local coordinates). Throws ValidationError / ReferenceError.
void finalizeScene(Scene& scene);

// Orders joints topologically from the root, wires parent/child indices, and
// checks that the joint graph is a rooted tree.
void finalizeSkeleton(SkeletonModel& skeleton);

// Serialization (17 significant digits; reload reproduces identical numbers).
void saveSceneFile(const Scene& scene, const std::string& sceneFile,
                   const std::string& meshFileName);
void saveMeshFile(const SkinMesh& mesh, const std::string& path);
void saveTrajectoryFile(const TrajectorySpec& spec, const std::string& path);

// Reports frames where no foot is in contact for longer than the flight
// budget and legs whose pattern toggles within fewer than 2 frames.
std::vector<std::string> validateFootfall(const TrajectorySpec& spec,
                                          const SkeletonModel& skeleton,
                                          int flightBudget);

std::string formatG17(double v);

}  // namespace quadplan
