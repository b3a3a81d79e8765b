#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "quadplan/fixtures.hpp"
#include "quadplan/multibody.hpp"

using namespace quadplan;

namespace {

VecX randomState(const SkeletonModel& model, std::mt19937& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  VecX q(model.nq());
  for (int i = 0; i < q.size(); ++i) q[i] = dist(rng);
  return q;
}

// Independent brute-force FK for the oracle: multiply the rotation chain
// joint by joint, nothing shared with KinematicsCache.
Vec3 bruteForcePoint(const SkeletonModel& m, const VecX& q, int link, const Vec3& local) {
  // collect chain root..link
  std::vector<int> joints;
  int l = link;
  while (m.links[l].parentJoint >= 0) {
    joints.push_back(m.links[l].parentJoint);
    l = m.joints[m.links[l].parentJoint].parentLink;
  }
  std::reverse(joints.begin(), joints.end());
  Mat3 r = eulerXYZ(q[3], q[4], q[5]);
  Vec3 t = q.head<3>() - r * m.links[m.rootLink].comOffset;
  for (int j : joints) {
    const int d = 6 + 3 * j;
    const Vec3 o = r * m.joints[j].originInParent + t;
    r = r * eulerXYZ(q[d], q[d + 1], q[d + 2]);
    t = o;
  }
  return r * local + t;
}

double potentialEnergy(const SkeletonModel& m, const KinematicsCache& c, const Vec3& g) {
  double v = 0.0;
  for (int k = 0; k < m.numLinks(); ++k) v -= m.links[k].mass * g.dot(c.linkCom(k));
  return v;
}

}  // namespace

TEST(ForwardKinematics, RestPoseIsIdentity) {
  SkeletonModel model = fixtures::chain(4);
  GeneralizedState s = GeneralizedState::rest(model);
  KinematicsCache cache(model, s.q, s.qdot);
  for (int k = 0; k < model.numLinks(); ++k) {
    EXPECT_LT((cache.linkRotation(k) - Mat3::Identity()).norm(), 1e-14);
    const Vec3 oracle = bruteForcePoint(model, s.q, k, model.links[k].comOffset);
    EXPECT_LT((cache.linkCom(k) - oracle).norm(), 1e-14);
  }
  EXPECT_LT(cache.linkCom(model.rootLink).norm(), 1e-14);
}

TEST(ForwardKinematics, RootYawRotatesWholeBody) {
  SkeletonModel model = fixtures::chain(3);
  GeneralizedState s = GeneralizedState::rest(model);
  // intrinsic XYZ: pure yaw about the world up axis is the z angle with x=y=0;
  // the spec's "90 deg about world up-axis" uses the y angle in our y-up frame
  s.q[4] = M_PI / 2;
  KinematicsCache cache(model, s.q, s.qdot);
  const Mat3 expected = rotY(M_PI / 2);
  for (int k = 0; k < model.numLinks(); ++k)
    EXPECT_LT((cache.linkRotation(k) - expected).norm(), 1e-12);
}

TEST(ForwardKinematics, MatchesBruteForceChainOracle) {
  SkeletonModel model = fixtures::chain(5);
  std::mt19937 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    VecX q = randomState(model, rng, 1.0);
    KinematicsCache cache(model, q, VecX::Zero(model.nq()));
    for (int k = 0; k < model.numLinks(); ++k) {
      for (const Vec3& p : model.links[k].attachmentPoints) {
        const Vec3 mine = cache.worldPoint(k, p);
        const Vec3 oracle = bruteForcePoint(model, q, k, p);
        EXPECT_LT((mine - oracle).norm(), 1e-12) << "link " << k;
      }
    }
  }
}

TEST(ForwardKinematics, RotationsStayOrthonormal) {
  SkeletonModel model = fixtures::chain(5);
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    VecX q = randomState(model, rng, 2.0);
    KinematicsCache cache(model, q, VecX::Zero(model.nq()));
    for (int k = 0; k < model.numLinks(); ++k) {
      const Mat3& r = cache.linkRotation(k);
      EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_NEAR(r.determinant(), 1.0, 1e-10);
    }
  }
}

TEST(ForwardKinematics, NonFiniteInputRejected) {
  SkeletonModel model = fixtures::chain(2);
  VecX q = VecX::Zero(model.nq());
  q[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(KinematicsCache(model, q, VecX::Zero(model.nq())), NonFiniteInput);
}

TEST(Jacobians, RootTranslationBlockIsIdentity) {
  SkeletonModel model = fixtures::chain(4);
  std::mt19937 rng(11);
  VecX q = randomState(model, rng, 0.8);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  for (int k = 0; k < model.numLinks(); ++k)
    EXPECT_LT((cache.linkJv(k).leftCols<3>() - Mat3::Identity()).norm(), 1e-14);
}

TEST(Jacobians, MatchFiniteDifferencesAt20RandomStates) {
  SkeletonModel model = fixtures::chain(5);
  std::mt19937 rng(19);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    VecX q = randomState(model, rng, 1.2);
    KinematicsCache cache(model, q, VecX::Zero(model.nq()));
    for (int k = 0; k < model.numLinks(); ++k) {
      auto com = [&](const VecX& qq) -> VecX {
        KinematicsCache c(model, qq, VecX::Zero(model.nq()));
        return c.linkCom(k);
      };
      const MatX jFd = oracles::fdJacobian(com, q, h);
      EXPECT_LT((jFd - cache.linkJv(k)).cwiseAbs().maxCoeff(), 1e-6) << "link " << k;
    }
  }
}

TEST(Jacobians, OffChainColumnsAreZero) {
  // joint 5's axes are not on the chain to link 1 in the branching chain
  SkeletonModel model = fixtures::chain(6);
  std::mt19937 rng(23);
  VecX q = randomState(model, rng, 1.0);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  // link 1 is the child of joint 0; only root + joint 0 columns may be nonzero
  for (int d = 9; d < model.nq(); ++d) {
    EXPECT_EQ(cache.linkJw(1).col(d).norm(), 0.0);
    EXPECT_EQ(cache.linkJv(1).col(d).norm(), 0.0);
  }
}

TEST(MassMatrix, SingleFreeLinkTranslationBlock) {
  SkeletonModel model = fixtures::singleFreeLink(2.5);
  GeneralizedState s = GeneralizedState::rest(model);
  KinematicsCache cache(model, s.q, s.qdot);
  const MatX m = rigidMassMatrix(model, cache);
  EXPECT_LT((m.topLeftCorner<3, 3>() - 2.5 * Mat3::Identity()).norm(), 1e-12);
}

TEST(MassMatrix, SymmetricAndEnergyConsistent) {
  SkeletonModel model = fixtures::chain(5);
  std::mt19937 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    VecX q = randomState(model, rng, 1.0);
    VecX qd = randomState(model, rng, 2.0);
    KinematicsCache cache(model, q, qd);
    const MatX m = rigidMassMatrix(model, cache);
    EXPECT_LT((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-12 * m.norm());
    const double tQuad = 0.5 * qd.dot(m * qd);
    const double tLink = kineticEnergy(model, cache);
    EXPECT_NEAR(tQuad, tLink, 1e-10 * std::max(1.0, tLink));
    EXPECT_GE(tQuad, 0.0);
  }
}

TEST(Coriolis, ZeroVelocityGivesZeroForce) {
  SkeletonModel model = fixtures::chain(4);
  std::mt19937 rng(37);
  VecX q = randomState(model, rng, 1.0);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  const auto cor = coriolisAndForces(model, cache);
  EXPECT_LT(cor.fr.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Coriolis, MatchesDoublePendulumClosedForm) {
  fixtures::PendulumParams p;
  SkeletonModel model = fixtures::doublePendulum(p);
  const int d1 = model.jointDof(0, 2);
  const int d2 = model.jointDof(1, 2);
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  for (int trial = 0; trial < 8; ++trial) {
    VecX q = VecX::Zero(model.nq());
    VecX qd = VecX::Zero(model.nq());
    q[d1] = dist(rng);
    q[d2] = dist(rng);
    qd[d1] = dist(rng);
    qd[d2] = dist(rng);
    KinematicsCache cache(model, q, qd);
    const auto cor = coriolisAndForces(model, cache);
    const Vec2 oracle = oracles::doublePendulumCoriolis(p, q[d2], qd[d1], qd[d2]);
    const double scale = std::max(1e-9, oracle.norm());
    EXPECT_NEAR(cor.fr[d1], oracle[0], 1e-8 * scale);
    EXPECT_NEAR(cor.fr[d2], oracle[1], 1e-8 * scale);
  }
}

TEST(Coriolis, LagrangianIdentityHoldsByFiniteDifferences) {
  // fr must equal d/dt(dT/dqdot) - dT/dq at qddot = 0.
  SkeletonModel model = fixtures::chain(3);
  std::mt19937 rng(43);
  VecX q = randomState(model, rng, 0.9);
  VecX qd = randomState(model, rng, 1.1);
  KinematicsCache cache(model, q, qd);
  const auto cor = coriolisAndForces(model, cache);

  // dT/dq by finite differences
  auto kinetic = [&](const VecX& qq) {
    KinematicsCache c(model, qq, qd);
    return kineticEnergy(model, c);
  };
  const VecX dTdq = oracles::fdGradient(kinetic, q, 1e-6);
  // d/dt(M qdot) at qddot=0: finite difference along the flow q + t*qdot
  auto momentum = [&](double t) -> VecX {
    KinematicsCache c(model, q + t * qd, qd);
    return rigidMassMatrix(model, c) * qd;
  };
  const double h = 1e-6;
  const VecX dMom = (momentum(h) - momentum(-h)) / (2.0 * h);
  const VecX oracle = dMom - dTdq;
  EXPECT_LT((cor.fr - oracle).cwiseAbs().maxCoeff(),
            1e-4 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
}

TEST(Coriolis, UndampedSwingEnergyDriftBounded) {
  fixtures::PendulumParams p;
  SkeletonModel model = fixtures::doublePendulum(p);
  const Vec3 g(0, -9.81, 0);
  GeneralizedState s = GeneralizedState::rest(model);
  s.q[model.jointDof(0, 2)] = 0.9;
  s.q[model.jointDof(1, 2)] = -0.4;
  const MatX dr = MatX::Zero(model.nq(), model.nq());
  KinematicsCache c0(model, s.q, s.qdot);
  const double e0 = kineticEnergy(model, c0) + potentialEnergy(model, c0, g);
  const double dt = 1e-4;
  for (int i = 0; i < 100; ++i) {
    KinematicsCache cache(model, s.q, s.qdot);
    const VecX gr = generalizedExternalForce(model, cache, g, VecX::Zero(0));
    s = stepRigid(model, s, gr, dr, dt);
  }
  KinematicsCache c1(model, s.q, s.qdot);
  const double e1 = kineticEnergy(model, c1) + potentialEnergy(model, c1, g);
  EXPECT_NEAR(e1, e0, 1e-3 * std::abs(e0));
}

TEST(GeneralizedForce, GravityResultantAtRest) {
  SkeletonModel model = fixtures::chain(4);
  GeneralizedState s = GeneralizedState::rest(model);
  KinematicsCache cache(model, s.q, s.qdot);
  const Vec3 g(0, -9.81, 0);
  const VecX gr = generalizedExternalForce(model, cache, g, VecX::Zero(0));
  EXPECT_NEAR(gr[1], -9.81 * model.totalMass(), 1e-10);
  EXPECT_NEAR(gr[0], 0.0, 1e-12);
  EXPECT_NEAR(gr[2], 0.0, 1e-12);
}

TEST(GeneralizedForce, GravityIsMinusPotentialGradient) {
  SkeletonModel model = fixtures::chain(4);
  std::mt19937 rng(47);
  VecX q = randomState(model, rng, 1.0);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  const Vec3 g(0, -9.81, 0);
  const VecX gr = generalizedExternalForce(model, cache, g, VecX::Zero(0));
  auto pot = [&](const VecX& qq) {
    KinematicsCache c(model, qq, VecX::Zero(model.nq()));
    return potentialEnergy(model, c, g);
  };
  const VecX grad = oracles::fdGradient(pot, q, 1e-6);
  EXPECT_LT((gr + grad).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, grad.norm()));
}

TEST(GeneralizedForce, UnitTorqueMatchesJacobianColumn) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand);
  const SkeletonModel& model = scene.skeleton;
  std::mt19937 rng(53);
  VecX q = randomState(model, rng, 0.4);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  const auto actuated = model.actuatedDofs();
  VecX torques = VecX::Zero(actuated.size());
  torques[0] = 1.0;  // hipFL z axis
  const VecX gr = generalizedExternalForce(model, cache, Vec3::Zero(), torques);

  // oracle: world torque pair mapped through link angular Jacobians
  const int dof = actuated[0];
  const int joint = (dof - 6) / 3;
  const Vec3 axis = cache.axisDirection(dof);
  const VecX oracle = (cache.linkJw(model.joints[joint].childLink) -
                       cache.linkJw(model.joints[joint].parentLink))
                          .transpose() *
                      axis;
  EXPECT_LT((gr - oracle).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(gr[dof], 1.0, 1e-12);
}

TEST(GeneralizedForce, ZeroInputsGiveZero) {
  SkeletonModel model = fixtures::chain(3);
  GeneralizedState s = GeneralizedState::rest(model);
  KinematicsCache cache(model, s.q, s.qdot);
  const VecX gr = generalizedExternalForce(model, cache, Vec3::Zero(), VecX::Zero(0));
  EXPECT_EQ(gr.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GeneralizedForce, TorqueDimensionMismatchRejected) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand);
  GeneralizedState s = GeneralizedState::rest(scene.skeleton);
  KinematicsCache cache(scene.skeleton, s.q, s.qdot);
  EXPECT_THROW(
      generalizedExternalForce(scene.skeleton, cache, Vec3::Zero(), VecX::Zero(3)),
      DimensionMismatch);
}

TEST(RigidStep, ReducesToMassMatrixWithoutDampingAndVelocity) {
  SkeletonModel model = fixtures::chain(3);
  GeneralizedState s = GeneralizedState::rest(model);
  KinematicsCache cache(model, s.q, s.qdot);
  const MatX dr = MatX::Zero(model.nq(), model.nq());
  const auto sys = assembleRigidStep(model, cache, VecX::Zero(model.nq()), dr, 0.01);
  EXPECT_LT((sys.Ar - sys.Mr).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(RigidStep, FreeFallOneStepMatchesHandIntegration) {
  SkeletonModel model = fixtures::singleFreeLink(1.7);
  GeneralizedState s = GeneralizedState::rest(model);
  s.qdot[1] = -0.3;  // already falling
  const Vec3 g(0, -9.81, 0);
  const double dt = 0.005;
  KinematicsCache cache(model, s.q, s.qdot);
  const VecX gr = generalizedExternalForce(model, cache, g, VecX::Zero(0));
  GeneralizedState next =
      stepRigid(model, s, gr, MatX::Zero(model.nq(), model.nq()), dt);
  // hand-stepped: dq = dt*qdot + dt^2*(-g e_y), new velocity dq/dt
  EXPECT_NEAR(next.q[1] - s.q[1], dt * s.qdot[1] - 9.81 * dt * dt, 1e-14);
  EXPECT_NEAR(next.qdot[1], s.qdot[1] - 9.81 * dt, 1e-12);
  EXPECT_NEAR(next.q[0], 0.0, 1e-15);
}

TEST(RigidStep, RhsScalesQuadraticallyInDtAtZeroVelocity) {
  SkeletonModel model = fixtures::chain(3);
  std::mt19937 rng(61);
  VecX q = randomState(model, rng, 0.7);
  KinematicsCache cache(model, q, VecX::Zero(model.nq()));
  const Vec3 g(0, -9.81, 0);
  const VecX gr = generalizedExternalForce(model, cache, g, VecX::Zero(0));
  const MatX dr = rigidDampingMatrix(model, 0.1);
  const auto s1 = assembleRigidStep(model, cache, gr, dr, 0.004);
  const auto s2 = assembleRigidStep(model, cache, gr, dr, 0.008);
  EXPECT_LT((s2.br - 4.0 * s1.br).cwiseAbs().maxCoeff(), 1e-12 * s1.br.norm());
}

TEST(RigidStep, GimbalLockWarningFires) {
  SkeletonModel model = fixtures::chain(2);
  VecX q = VecX::Zero(model.nq());
  EXPECT_FALSE(nearGimbalLock(model, q));
  q[7] = M_PI / 2 - 0.01;  // first joint pitch
  EXPECT_TRUE(nearGimbalLock(model, q));
}
