#pragma once

#include "quadplan/scene.hpp"

namespace quadplan {

// Semi-implicit time-discretized rigid system, Ar = Mr + dt*Dr + dt^2*C and
// br = dt^2*(gr - Dr*qdot - C*qdot). The linear solve yields the dynamic
// increment w = dt^2 * qddot; the full position change adds the dt*qdot
// transport term.
struct RigidSystemMatrices {
  MatX Ar;
  VecX br;
  MatX Mr;
  VecX fr;  // velocity-dependent (Coriolis/centrifugal) generalized force
  MatX Dr;
};

// Everything position/velocity dependent evaluated once per state: link
// poses, COM positions/velocities, per-DOF world axes, Jacobians and their
// time derivatives.
class KinematicsCache {
 public:
  KinematicsCache(const SkeletonModel& model, const VecX& q, const VecX& qdot);

  const SkeletonModel& model() const { return *model_; }
  const VecX& q() const { return q_; }
  const VecX& qdot() const { return qdot_; }

  const Mat3& linkRotation(int link) const { return linkR_[link]; }
  const Vec3& linkOrigin(int link) const { return linkT_[link]; }
  const Vec3& linkCom(int link) const { return linkCom_[link]; }
  const Vec3& linkOmega(int link) const { return linkOmega_[link]; }
  const Vec3& linkComVelocity(int link) const { return linkVcom_[link]; }

  Vec3 worldPoint(int link, const Vec3& local) const {
    return linkR_[link] * local + linkT_[link];
  }
  Vec3 pointVelocity(int link, const Vec3& local) const {
    return linkOmega_[link].cross(linkR_[link] * local) + linkVt_[link];
  }

  const MatX& linkJv(int link) const { return Jv_[link]; }
  const MatX& linkJw(int link) const { return Jw_[link]; }
  const MatX& linkJvDot(int link) const { return Jvdot_[link]; }
  const MatX& linkJwDot(int link) const { return Jwdot_[link]; }

  // 3 x nq Jacobian of a world point rigidly attached to a link.
  MatX pointJacobian(int link, const Vec3& worldPoint) const;

  Mat3 worldInertia(int link) const;

  // Direction of DOF axis a in world coordinates (revolute axes only).
  const Vec3& axisDirection(int dof) const { return axisW_[dof]; }

 private:
  const SkeletonModel* model_;
  VecX q_, qdot_;
  std::vector<Mat3> linkR_;
  std::vector<Vec3> linkT_, linkCom_, linkOmega_, linkVt_, linkVcom_;
  std::vector<Vec3> axisW_, axisWdot_, axisP_, axisPdot_;
  std::vector<bool> axisRevolute_;
  std::vector<std::vector<int>> chainDofs_;  // per link, ancestors' dofs
  std::vector<MatX> Jv_, Jw_, Jvdot_, Jwdot_;
};

// Throws NonFiniteInput on non-finite q.
KinematicsCache forwardKinematics(const SkeletonModel& model, const GeneralizedState& state);

MatX rigidMassMatrix(const SkeletonModel& model, const KinematicsCache& cache);

struct CoriolisResult {
  MatX C;  // velocity-factored: fr = C * qdot
  VecX fr;
};
CoriolisResult coriolisAndForces(const SkeletonModel& model, const KinematicsCache& cache);

struct PointForce {
  int linkId = -1;
  Vec3 localPoint = Vec3::Zero();
  Vec3 worldForce = Vec3::Zero();
};
struct LinkTorque {
  int linkId = -1;
  Vec3 worldTorque = Vec3::Zero();
};

// Generalized force of gravity, motor torques (one entry per actuated axis,
// applied as an equal-and-opposite world torque pair across the joint), and
// world-frame point forces / link torques.
VecX generalizedExternalForce(const SkeletonModel& model, const KinematicsCache& cache,
                              const Vec3& gravity, const VecX& torques,
                              const std::vector<PointForce>& pointForces = {},
                              const std::vector<LinkTorque>& linkTorques = {});

// Generalized-force column of a unit motor torque on the given actuated
// axis (equal-and-opposite world torque pair across the joint).
VecX motorTorqueColumn(const SkeletonModel& model, const KinematicsCache& cache,
                       int actuatedIndex);

// Dr = a * Mr(rest pose), frozen per the damping design decision.
MatX rigidDampingMatrix(const SkeletonModel& model, double rayleighMass);

RigidSystemMatrices assembleRigidStep(const SkeletonModel& model,
                                      const KinematicsCache& cache, const VecX& gr,
                                      const MatX& Dr, double dt);

double kineticEnergy(const SkeletonModel& model, const KinematicsCache& cache);

// Solves A w = b on the listed DOFs; the remaining entries of w are zero.
VecX solveReduced(const MatX& a, const VecX& b, const std::vector<int>& freeDofs);

// One rigid-only step: solve Ar w = br on the free DOFs, then
// q += dt*qdot + w and qdot = (dt*qdot + w)/dt.
GeneralizedState stepRigid(const SkeletonModel& model, const GeneralizedState& state,
                           const VecX& gr, const MatX& Dr, double dt);

// Warns (returns true) if any joint pitch angle is near the Euler singularity.
bool nearGimbalLock(const SkeletonModel& model, const VecX& q, double margin = 0.1);

}  // namespace quadplan
