#pragma once

#include <Eigen/SparseLU>

#include "quadplan/fem.hpp"
#include "quadplan/multibody.hpp"

namespace quadplan {

// Linearized glue constraint C(q,u) = R(q) r + t - (rest + u) per binding.
// gradU is the implicit -selection of the bound vertices (one vertex per
// row-block, coefficient -1), so only the vertex list is stored.
struct CouplingJacobians {
  MatX gradQ;           // 3G x nq
  std::vector<int> glueVertices;
  VecX constraintValue;  // 3G
};

CouplingJacobians glueConstraint(const SkeletonModel& skeleton, const SkinMesh& mesh,
                                 const KinematicsCache& cache, const VecX& u);

// One generalized-force column per basis direction, in physical units; the
// dt^2 scaling into b_r/b_d happens inside condense().
struct ForceBasis {
  MatX rigidCols;    // nq x m
  MatX elasticCols;  // 3V x m

  int count() const { return static_cast<int>(rigidCols.cols()); }
  static ForceBasis empty(int nq, int nv) {
    ForceBasis b;
    b.rigidCols = MatX::Zero(nq, 0);
    b.elasticCols = MatX::Zero(3 * nv, 0);
    return b;
  }
};

// Full block KKT of Eq.-(2) form over the free rigid DOFs (oracle and
// reference path; production uses the condensed operators).
struct CoupledKkt {
  SpMat matrix;
  VecX rhs;
  std::vector<int> freeDofs;
  int nq = 0;
  int nV = 0;
  int nG = 0;
};

CoupledKkt assembleCoupledKKT(const SkeletonModel& skeleton,
                              const RigidSystemMatrices& rigid,
                              const ElasticSystemMatrices& elastic,
                              const CouplingJacobians& cj);

struct CoupledSolution {
  VecX dq;      // nq (locked entries zero); the dynamic increment w_q
  VecX du;      // 3V
  VecX lambda;  // 3G, physical force units (N) on the skin glue vertices
};

CoupledSolution solveCoupledKKT(const CoupledKkt& kkt, double dt);

// Affine maps x -> (dq, du, lambda) realizing the condensation of the KKT
// over a force basis: dq(x) = dq0 + dqCols*x, etc. Factorizations are done
// once at construction and reused for every map application.
class CondensedOperators {
 public:
  VecX dq0, du0, lambda0;
  MatX dqCols, duCols, lambdaCols;
  double dt = 0.0;

  VecX dq(const VecX& x) const { return dq0 + dqCols * x; }
  VecX du(const VecX& x) const { return du0 + duCols * x; }
  VecX lambda(const VecX& x) const { return lambda0 + lambdaCols * x; }
};

CondensedOperators condense(const SkeletonModel& skeleton,
                            const RigidSystemMatrices& rigid,
                            const ElasticSystemMatrices& elastic,
                            const CouplingJacobians& cj, const ForceBasis& basis,
                            double dt);

// Same operators computed through full-KKT solves per basis column; used by
// the condensation-equivalence oracle and gradcheck.
CondensedOperators condenseViaFullKkt(const SkeletonModel& skeleton,
                                      const RigidSystemMatrices& rigid,
                                      const ElasticSystemMatrices& elastic,
                                      const CouplingJacobians& cj,
                                      const ForceBasis& basis, double dt);

struct CoupledState {
  GeneralizedState rigid;
  SkinState skin;
};

struct AppliedForces {
  VecX torques;  // per actuated axis
  Vec3 gravity = Vec3::Zero();
  std::vector<PointForce> rigidPointForces;
  std::vector<LinkTorque> rigidLinkTorques;
  VecX skinForces;  // 3V, contact + penalty on skin vertices (may be size 0)
};

struct StepResult {
  CoupledState state;
  VecX lambda;  // N, per glue vertex
  double glueResidual = 0.0;
  int projectionRounds = 0;
  int dtHalvings = 0;
};

// Advances the two-way coupled system one frame, with post-step glue
// projection and inversion-triggered dt halving per the design decisions.
StepResult stepCoupled(const Scene& scene, const FemModel& fem, const MatX& Dr,
                       const CoupledState& state, const AppliedForces& forces,
                       double dt);

// Post-step glue stabilization: when the nonlinear residual exceeds the
// tolerance, glue vertices are reprojected onto R r + t and their velocities
// reset to the attachment-point velocities. Returns the final residual.
double projectGlue(const Scene& scene, CoupledState& state);

}  // namespace quadplan
