#pragma once

#include "quadplan/contact.hpp"
#include "quadplan/coupling.hpp"
#include "quadplan/qp_solver.hpp"

namespace quadplan {

struct FrameWeights {
  double alphaS = 1.0;
  double alphaF = 10.0;
  double alphaO = 2.0;
  double alphaTau = 0.5;
  double alphaC = 10.0;
};

struct QpccSolution {
  VecX tau;              // per actuated axis
  ContactState contact;  // modes and magnitudes per active patch
  VecX dq;               // full position increments (transport included)
  VecX du;
  VecX lambda;  // glue coupling forces, N
  std::vector<Vec3> patchVelocities;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool copDropped = false;
  std::vector<double> objectiveTrace;
  double maxComplementarity = 0.0;
};

// One frame of the full-dynamics optimization: condensed operators over the
// torque/contact force basis plus the affine maps and quadratic objective
// needed by the QPCC mode-flipping loop.
class FrameProblem {
 public:
  struct Inputs {
    const Scene* scene = nullptr;
    const FemModel* fem = nullptr;
    const MatX* Dr = nullptr;
    CoupledState state;
    VecX targetNextQ;
    VecX prevTau;
    VecX prevDq;                    // previous frame's realized position change
    std::vector<int> supportLegs;   // footfall bits c^i_j
    std::vector<int> eoLegs;        // E_O activation per leg
    VecX extraSkinForces;           // penalty forces (3V) or empty
    std::vector<PointForce> extraRigidForces;
    FrameWeights weights;
    double dt = 0.005;
    bool fixedTau = false;  // replay mode: torques are not variables
    VecX fixedTauValue;
    bool useFullKkt = false;  // reference path for the equivalence oracle
  };

  static FrameProblem build(const Inputs& in);

  int numTauVars() const { return numTau_; }
  int numPatches() const { return static_cast<int>(activePatches_.size()); }
  int varCount() const { return numTau_ + 6 * numPatches(); }
  int tauVar(int a) const { return a; }
  int fperpVar(int p) const { return numTau_ + 6 * p; }
  int fparVar(int p, int d) const { return numTau_ + 6 * p + 1 + d; }
  int lamparVar(int p) const { return numTau_ + 6 * p + 5; }

  const std::vector<SolePatch>& activePatches() const { return activePatches_; }
  const Inputs& inputs() const { return in_; }
  double forceScale() const { return forceScale_; }

  // E_G value (and gradient) at raw variables (tau in N*m, forces in N).
  double objective(const VecX& vars, VecX* grad = nullptr) const;

  // Affine state maps at raw variables.
  VecX dqOf(const VecX& vars) const;      // full position change
  VecX duOf(const VecX& vars) const;      // full skin change
  VecX lambdaOf(const VecX& vars) const;  // glue forces
  Vec3 patchVelocity(int p, const VecX& vars) const;

  // internals used by the QPCC driver
  struct Quadratic {
    MatX h;  // in scaled variables
    VecX g;
    double c = 0.0;
  };
  const Quadratic& quadratic() const { return quad_; }
  VecX scaleVars(const VecX& raw) const;
  VecX unscaleVars(const VecX& scaled) const;
  MatX patchVelRows(int p) const;  // 3 x varCount, scaled vars, velocity units
  Vec3 patchVelConst(int p) const;
  struct InequalityRows {
    MatX normals;  // varCount x m (columns)
    VecX offsets;  // row value = normals^T x + offsets >= 0
    std::vector<std::string> family;
  };
  InequalityRows torqueBox() const;
  InequalityRows copRows() const;  // empty when no support polygon exists
  double mu() const { return in_.scene->config.mu; }

 private:
  Inputs in_;
  int numTau_ = 0;
  double forceScale_ = 1.0;
  std::vector<SolePatch> activePatches_;
  CondensedOperators ops_;
  MatX basisOfVar_;  // basis coords per scaled variable column
  VecX dqConst_;     // includes transport
  VecX duConst_;
  MatX dqVar_;  // nq x varCount (scaled vars)
  std::vector<MatX> patchVelRows_;
  std::vector<Vec3> patchVelConst_;
  std::vector<Vec3> copVertices_;  // detected support vertices (world)
  Quadratic quad_;
  std::vector<double> tauLimits_;
  friend QpccSolution solveQPCC(const FrameProblem&);
  friend struct FrameQpAccess;
};

// Labels for the flip loop; sliding carries its active direction set.
struct PatchLabel {
  ContactMode mode = ContactMode::Static;
  std::array<bool, 4> activeDirs{false, false, false, false};
  bool operator==(const PatchLabel& o) const {
    return mode == o.mode && activeDirs == o.activeDirs;
  }
};

struct InitialQpResult {
  VecX tau;
  MatX gamma;  // 3 x P constraint forces at the fixed contacts
  bool copDropped = false;
  double objective = 0.0;
};

InitialQpResult solveInitialQP(const FrameProblem& problem);

std::vector<PatchLabel> classifyContacts(const MatX& gamma, double mu);

struct ModeQpResult {
  bool feasible = false;
  bool copDropped = false;
  double objective = 0.0;
  VecX vars;  // raw variables
};

ModeQpResult solveModeQP(const FrameProblem& problem,
                         const std::vector<PatchLabel>& labels);

QpccSolution solveQPCC(const FrameProblem& problem);

// Complementarity residual of a solved frame (max over patches and rows).
double complementarityResidual(const FrameProblem& problem, const QpccSolution& sol);

}  // namespace quadplan
