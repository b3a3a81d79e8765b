#include "quadplan/multibody.hpp"

#include <cmath>

#include "quadplan/errors.hpp"
#include "quadplan/log.hpp"

namespace quadplan {

KinematicsCache::KinematicsCache(const SkeletonModel& model, const VecX& q,
                                 const VecX& qdot)
    : model_(&model), q_(q), qdot_(qdot) {
  const int nq = model.nq();
  if (q.size() != nq || qdot.size() != nq)
    throw DimensionMismatch("state size " + std::to_string(q.size()) +
                            " does not match nq=" + std::to_string(nq));
  if (!q.allFinite() || !qdot.allFinite())
    throw NonFiniteInput("non-finite generalized state");

  const int numLinks = model.numLinks();
  linkR_.resize(numLinks);
  linkT_.resize(numLinks);
  linkCom_.resize(numLinks);
  linkOmega_.resize(numLinks);
  linkVt_.resize(numLinks);
  linkVcom_.resize(numLinks);
  axisW_.assign(nq, Vec3::Zero());
  axisWdot_.assign(nq, Vec3::Zero());
  axisP_.assign(nq, Vec3::Zero());
  axisPdot_.assign(nq, Vec3::Zero());
  axisRevolute_.assign(nq, true);
  chainDofs_.resize(numLinks);

  // Root: q[0..2] is the root COM, q[3..5] its intrinsic XYZ Euler angles.
  const int root = model.rootLink;
  const Vec3 c = q.head<3>();
  const Vec3 cdot = qdot.head<3>();
  const Mat3 rx = rotX(q[3]);
  const Mat3 rxy = rx * rotY(q[4]);
  const Mat3 rootR = rxy * rotZ(q[5]);

  for (int a = 0; a < 3; ++a) {
    axisRevolute_[a] = false;
    axisW_[a] = Vec3::Unit(a);
  }
  axisW_[3] = Vec3::UnitX();
  axisW_[4] = rx * Vec3::UnitY();
  axisW_[5] = rxy * Vec3::UnitZ();
  axisWdot_[3].setZero();
  axisWdot_[4] = (qdot[3] * axisW_[3]).cross(axisW_[4]);
  axisWdot_[5] = (qdot[3] * axisW_[3] + qdot[4] * axisW_[4]).cross(axisW_[5]);
  for (int a = 3; a < 6; ++a) {
    axisP_[a] = c;
    axisPdot_[a] = cdot;
  }

  const Vec3 rootOmega = qdot[3] * axisW_[3] + qdot[4] * axisW_[4] + qdot[5] * axisW_[5];
  linkR_[root] = rootR;
  linkOmega_[root] = rootOmega;
  linkCom_[root] = c;
  linkVcom_[root] = cdot;
  const Vec3 comArm = rootR * model.links[root].comOffset;
  linkT_[root] = c - comArm;
  linkVt_[root] = cdot - rootOmega.cross(comArm);
  chainDofs_[root] = {0, 1, 2, 3, 4, 5};

  // Joints are topologically ordered, so parents are always ready.
  for (int j = 0; j < model.numJoints(); ++j) {
    const JointModel& joint = model.joints[j];
    const int p = joint.parentLink;
    const int child = joint.childLink;
    const int d0 = model.jointDof(j, 0);

    const Vec3 arm = linkR_[p] * joint.originInParent;
    const Vec3 o = arm + linkT_[p];
    const Vec3 odot = linkOmega_[p].cross(arm) + linkVt_[p];

    const Mat3 jrx = rotX(q[d0]);
    const Mat3 jrxy = jrx * rotY(q[d0 + 1]);
    const Vec3 wx = linkR_[p] * Vec3::UnitX();
    const Vec3 wy = linkR_[p] * (jrx * Vec3::UnitY());
    const Vec3 wz = linkR_[p] * (jrxy * Vec3::UnitZ());
    const Vec3 omega1 = linkOmega_[p] + qdot[d0] * wx;
    const Vec3 omega2 = omega1 + qdot[d0 + 1] * wy;

    axisW_[d0] = wx;
    axisW_[d0 + 1] = wy;
    axisW_[d0 + 2] = wz;
    axisWdot_[d0] = linkOmega_[p].cross(wx);
    axisWdot_[d0 + 1] = omega1.cross(wy);
    axisWdot_[d0 + 2] = omega2.cross(wz);
    for (int a = 0; a < 3; ++a) {
      axisP_[d0 + a] = o;
      axisPdot_[d0 + a] = odot;
    }

    linkR_[child] = linkR_[p] * (jrxy * rotZ(q[d0 + 2]));
    linkOmega_[child] = omega2 + qdot[d0 + 2] * wz;
    linkT_[child] = o;
    linkVt_[child] = odot;
    const Vec3 childArm = linkR_[child] * model.links[child].comOffset;
    linkCom_[child] = o + childArm;
    linkVcom_[child] = odot + linkOmega_[child].cross(childArm);

    chainDofs_[child] = chainDofs_[p];
    chainDofs_[child].push_back(d0);
    chainDofs_[child].push_back(d0 + 1);
    chainDofs_[child].push_back(d0 + 2);
  }

  // Link Jacobians and their time derivatives.
  Jv_.assign(numLinks, MatX::Zero(3, nq));
  Jw_.assign(numLinks, MatX::Zero(3, nq));
  Jvdot_.assign(numLinks, MatX::Zero(3, nq));
  Jwdot_.assign(numLinks, MatX::Zero(3, nq));
  for (int k = 0; k < numLinks; ++k) {
    for (int d : chainDofs_[k]) {
      if (!axisRevolute_[d]) {
        Jv_[k].col(d) = axisW_[d];
        continue;
      }
      Jv_[k].col(d) = axisW_[d].cross(linkCom_[k] - axisP_[d]);
      Jw_[k].col(d) = axisW_[d];
      Jvdot_[k].col(d) = axisWdot_[d].cross(linkCom_[k] - axisP_[d]) +
                         axisW_[d].cross(linkVcom_[k] - axisPdot_[d]);
      Jwdot_[k].col(d) = axisWdot_[d];
    }
  }
}

MatX KinematicsCache::pointJacobian(int link, const Vec3& worldPoint) const {
  MatX j = MatX::Zero(3, model_->nq());
  for (int d : chainDofs_[link]) {
    if (!axisRevolute_[d])
      j.col(d) = axisW_[d];
    else
      j.col(d) = axisW_[d].cross(worldPoint - axisP_[d]);
  }
  return j;
}

Mat3 KinematicsCache::worldInertia(int link) const {
  const Mat3& r = linkR_[link];
  return r * model_->links[link].inertiaBody * r.transpose();
}

KinematicsCache forwardKinematics(const SkeletonModel& model, const GeneralizedState& state) {
  return KinematicsCache(model, state.q, state.qdot);
}

MatX rigidMassMatrix(const SkeletonModel& model, const KinematicsCache& cache) {
  const int nq = model.nq();
  MatX m = MatX::Zero(nq, nq);
  for (int k = 0; k < model.numLinks(); ++k) {
    const MatX& jv = cache.linkJv(k);
    const MatX& jw = cache.linkJw(k);
    m.noalias() += model.links[k].mass * jv.transpose() * jv;
    m.noalias() += jw.transpose() * cache.worldInertia(k) * jw;
  }
  return m;
}

CoriolisResult coriolisAndForces(const SkeletonModel& model, const KinematicsCache& cache) {
  const int nq = model.nq();
  CoriolisResult out;
  out.C = MatX::Zero(nq, nq);
  for (int k = 0; k < model.numLinks(); ++k) {
    const MatX& jv = cache.linkJv(k);
    const MatX& jw = cache.linkJw(k);
    const Mat3 iw = cache.worldInertia(k);
    out.C.noalias() += model.links[k].mass * jv.transpose() * cache.linkJvDot(k);
    out.C.noalias() +=
        jw.transpose() * (iw * cache.linkJwDot(k) + skew(cache.linkOmega(k)) * iw * jw);
  }
  out.fr = out.C * cache.qdot();
  return out;
}

VecX generalizedExternalForce(const SkeletonModel& model, const KinematicsCache& cache,
                              const Vec3& gravity, const VecX& torques,
                              const std::vector<PointForce>& pointForces,
                              const std::vector<LinkTorque>& linkTorques) {
  const int nq = model.nq();
  const auto actuated = model.actuatedDofs();
  if (torques.size() != static_cast<int>(actuated.size()))
    throw DimensionMismatch("expected " + std::to_string(actuated.size()) +
                            " torques, got " + std::to_string(torques.size()));

  VecX gr = VecX::Zero(nq);
  for (int k = 0; k < model.numLinks(); ++k)
    gr.noalias() += cache.linkJv(k).transpose() * (model.links[k].mass * gravity);

  // Motor torque about axis a acts as +tau*w_a on the child and -tau*w_a on
  // the parent; the net generalized force touches only the joint's own axes.
  for (size_t i = 0; i < actuated.size(); ++i) {
    if (torques[i] == 0.0) continue;
    const int dof = actuated[i];
    const int joint = (dof - 6) / 3;
    const int base = model.jointDof(joint, 0);
    const Vec3& wa = cache.axisDirection(dof);
    for (int b = 0; b < 3; ++b)
      gr[base + b] += torques[i] * wa.dot(cache.axisDirection(base + b));
  }

  for (const auto& pf : pointForces) {
    const Vec3 world = cache.worldPoint(pf.linkId, pf.localPoint);
    gr.noalias() += cache.pointJacobian(pf.linkId, world).transpose() * pf.worldForce;
  }
  for (const auto& lt : linkTorques)
    gr.noalias() += cache.linkJw(lt.linkId).transpose() * lt.worldTorque;
  return gr;
}

VecX motorTorqueColumn(const SkeletonModel& model, const KinematicsCache& cache,
                       int actuatedIndex) {
  const auto actuated = model.actuatedDofs();
  VecX col = VecX::Zero(model.nq());
  const int dof = actuated.at(actuatedIndex);
  const int joint = (dof - 6) / 3;
  const int base = model.jointDof(joint, 0);
  const Vec3& wa = cache.axisDirection(dof);
  for (int b = 0; b < 3; ++b)
    col[base + b] = wa.dot(cache.axisDirection(base + b));
  return col;
}

MatX rigidDampingMatrix(const SkeletonModel& model, double rayleighMass) {
  GeneralizedState rest = GeneralizedState::rest(model);
  KinematicsCache cache(model, rest.q, rest.qdot);
  return rayleighMass * rigidMassMatrix(model, cache);
}

RigidSystemMatrices assembleRigidStep(const SkeletonModel& model,
                                      const KinematicsCache& cache, const VecX& gr,
                                      const MatX& Dr, double dt) {
  RigidSystemMatrices s;
  s.Mr = rigidMassMatrix(model, cache);
  CoriolisResult cor = coriolisAndForces(model, cache);
  s.fr = std::move(cor.fr);
  s.Dr = Dr;
  s.Ar = s.Mr + dt * Dr + (dt * dt) * cor.C;
  s.br = (dt * dt) * (gr - Dr * cache.qdot() - s.fr);
  return s;
}

double kineticEnergy(const SkeletonModel& model, const KinematicsCache& cache) {
  double t = 0.0;
  for (int k = 0; k < model.numLinks(); ++k) {
    const Vec3& v = cache.linkComVelocity(k);
    const Vec3& w = cache.linkOmega(k);
    t += 0.5 * model.links[k].mass * v.squaredNorm();
    t += 0.5 * w.dot(cache.worldInertia(k) * w);
  }
  return t;
}

VecX solveReduced(const MatX& a, const VecX& b, const std::vector<int>& freeDofs) {
  const int m = static_cast<int>(freeDofs.size());
  MatX af(m, m);
  VecX bf(m);
  for (int i = 0; i < m; ++i) {
    bf[i] = b[freeDofs[i]];
    for (int j = 0; j < m; ++j) af(i, j) = a(freeDofs[i], freeDofs[j]);
  }
  Eigen::PartialPivLU<MatX> lu(af);
  const VecX wf = lu.solve(bf);
  if (!wf.allFinite()) throw SingularSystem("reduced rigid system is singular");
  VecX w = VecX::Zero(b.size());
  for (int i = 0; i < m; ++i) w[freeDofs[i]] = wf[i];
  return w;
}

GeneralizedState stepRigid(const SkeletonModel& model, const GeneralizedState& state,
                           const VecX& gr, const MatX& Dr, double dt) {
  KinematicsCache cache(model, state.q, state.qdot);
  const RigidSystemMatrices sys = assembleRigidStep(model, cache, gr, Dr, dt);
  const VecX w = solveReduced(sys.Ar, sys.br, model.freeDofs());
  GeneralizedState next;
  const VecX dq = dt * state.qdot + w;
  next.q = state.q + dq;
  next.qdot = dq / dt;
  return next;
}

bool nearGimbalLock(const SkeletonModel& model, const VecX& q, double margin) {
  bool near = false;
  for (int d = 4; d < model.nq(); d += 3) {
    // pitch components sit at root dof 4 and every joint's middle axis
    const double pitch = q[d];
    if (std::abs(std::abs(std::remainder(pitch, M_PI)) - M_PI / 2) < margin) {
      QP_WARN("Euler pitch " << model.dofName(d) << " = " << pitch
                             << " rad is near the +/-pi/2 singularity");
      near = true;
    }
  }
  return near;
}

}  // namespace quadplan
