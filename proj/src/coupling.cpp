#include "quadplan/coupling.hpp"

#include <Eigen/SparseLU>

#include "quadplan/log.hpp"

namespace quadplan {

CouplingJacobians glueConstraint(const SkeletonModel& skeleton, const SkinMesh& mesh,
                                 const KinematicsCache& cache, const VecX& u) {
  const int g = mesh.numGlue();
  CouplingJacobians cj;
  cj.gradQ = MatX::Zero(3 * g, skeleton.nq());
  cj.constraintValue.resize(3 * g);
  cj.glueVertices.resize(g);
  for (int i = 0; i < g; ++i) {
    const GlueBinding& b = mesh.glueBindings[i];
    cj.glueVertices[i] = b.vertexId;
    const Vec3 target = cache.worldPoint(b.linkId, b.localCoord);
    cj.constraintValue.segment<3>(3 * i) = target - mesh.worldPosition(u, b.vertexId);
    cj.gradQ.middleRows<3>(3 * i) = cache.pointJacobian(b.linkId, target);
  }
  return cj;
}

CoupledKkt assembleCoupledKKT(const SkeletonModel& skeleton,
                              const RigidSystemMatrices& rigid,
                              const ElasticSystemMatrices& elastic,
                              const CouplingJacobians& cj) {
  CoupledKkt kkt;
  kkt.freeDofs = skeleton.freeDofs();
  kkt.nq = skeleton.nq();
  kkt.nV = static_cast<int>(elastic.bd.size()) / 3;
  kkt.nG = static_cast<int>(cj.glueVertices.size());
  const int nf = static_cast<int>(kkt.freeDofs.size());
  const int n = nf + 3 * kkt.nV + 3 * kkt.nG;
  std::vector<Triplet> trips;

  for (int i = 0; i < nf; ++i)
    for (int j = 0; j < nf; ++j) {
      const double v = rigid.Ar(kkt.freeDofs[i], kkt.freeDofs[j]);
      if (v != 0.0) trips.emplace_back(i, j, v);
    }
  const int uOff = nf;
  for (int col = 0; col < elastic.Ad.outerSize(); ++col)
    for (SpMat::InnerIterator it(elastic.Ad, col); it; ++it)
      trips.emplace_back(uOff + it.row(), uOff + it.col(), it.value());
  const int lOff = nf + 3 * kkt.nV;
  for (int r = 0; r < 3 * kkt.nG; ++r) {
    for (int i = 0; i < nf; ++i) {
      const double v = cj.gradQ(r, kkt.freeDofs[i]);
      if (v != 0.0) {
        trips.emplace_back(lOff + r, i, v);
        trips.emplace_back(i, lOff + r, v);
      }
    }
  }
  for (int i = 0; i < kkt.nG; ++i)
    for (int c = 0; c < 3; ++c) {
      const int r = lOff + 3 * i + c;
      const int ucol = uOff + 3 * cj.glueVertices[i] + c;
      trips.emplace_back(r, ucol, -1.0);
      trips.emplace_back(ucol, r, -1.0);
    }

  kkt.matrix.resize(n, n);
  kkt.matrix.setFromTriplets(trips.begin(), trips.end());
  kkt.matrix.makeCompressed();
  kkt.rhs.resize(n);
  for (int i = 0; i < nf; ++i) kkt.rhs[i] = rigid.br[kkt.freeDofs[i]];
  kkt.rhs.segment(uOff, 3 * kkt.nV) = elastic.bd;
  kkt.rhs.segment(lOff, 3 * kkt.nG).setZero();
  return kkt;
}

CoupledSolution solveCoupledKKT(const CoupledKkt& kkt, double dt) {
  Eigen::SparseLU<SpMat> lu(kkt.matrix);
  if (lu.info() != Eigen::Success)
    throw SingularSystem("coupled KKT factorization failed (redundant glue bindings?)");
  const VecX x = lu.solve(kkt.rhs);
  if (!x.allFinite()) throw SingularSystem("coupled KKT solve returned non-finite values");
  CoupledSolution sol;
  const int nf = static_cast<int>(kkt.freeDofs.size());
  sol.dq = VecX::Zero(kkt.nq);
  for (int i = 0; i < nf; ++i) sol.dq[kkt.freeDofs[i]] = x[i];
  sol.du = x.segment(nf, 3 * kkt.nV);
  sol.lambda = x.tail(3 * kkt.nG) / (dt * dt);
  return sol;
}

namespace {

// Factorization state shared by the constant term and every basis column.
struct CondenseWork {
  CondenseWork(const SkeletonModel& skeleton, const RigidSystemMatrices& rigid,
               const ElasticSystemMatrices& elastic, const CouplingJacobians& cj);

  std::vector<int> freeDofs;
  Eigen::PartialPivLU<MatX> luAr;
  Eigen::SimplicialLDLT<SpMat> ldltAd;
  MatX gqFree;  // 3G x nf
  MatX xr;      // nf x 3G  = Ar^-1 Gq^T
  MatX yd;      // 3V x 3G  = Ad^-1 Gu^T
  Eigen::FullPivLU<MatX> luAc;
  int nG = 0;

  VecX reduce(const VecX& full) const {
    VecX out(freeDofs.size());
    for (size_t i = 0; i < freeDofs.size(); ++i) out[i] = full[freeDofs[i]];
    return out;
  }
  VecX expand(const VecX& reduced, int nq) const {
    VecX out = VecX::Zero(nq);
    for (size_t i = 0; i < freeDofs.size(); ++i) out[freeDofs[i]] = reduced[i];
    return out;
  }
};

CondenseWork::CondenseWork(const SkeletonModel& skeleton,
                           const RigidSystemMatrices& rigid,
                           const ElasticSystemMatrices& elastic,
                           const CouplingJacobians& cj) {
  CondenseWork& w = *this;
  w.freeDofs = skeleton.freeDofs();
  const int nf = static_cast<int>(w.freeDofs.size());
  MatX arf(nf, nf);
  for (int i = 0; i < nf; ++i)
    for (int j = 0; j < nf; ++j) arf(i, j) = rigid.Ar(w.freeDofs[i], w.freeDofs[j]);
  w.luAr.compute(arf);
  w.ldltAd.compute(elastic.Ad);
  if (w.ldltAd.info() != Eigen::Success)
    throw SingularSystem("elastic system factorization failed");

  w.nG = static_cast<int>(cj.glueVertices.size());
  const int rows = 3 * w.nG;
  w.gqFree.resize(rows, nf);
  for (int i = 0; i < nf; ++i) w.gqFree.col(i) = cj.gradQ.col(w.freeDofs[i]);
  w.xr = w.luAr.solve(w.gqFree.transpose());

  const int n3v = static_cast<int>(elastic.bd.size());
  MatX guT = MatX::Zero(n3v, rows);  // Gu^T with Gu = -selection
  for (int g = 0; g < w.nG; ++g)
    for (int c = 0; c < 3; ++c) guT(3 * cj.glueVertices[g] + c, 3 * g + c) = -1.0;
  w.yd = w.ldltAd.solve(guT);

  if (w.nG > 0) {
    MatX ac = w.gqFree * w.xr;  // Gq Ar^-1 Gq^T
    for (int g = 0; g < w.nG; ++g)
      for (int c = 0; c < 3; ++c)
        ac.row(3 * g + c) -= w.yd.row(3 * cj.glueVertices[g] + c);  // + Gu Ad^-1 Gu^T
    w.luAc.compute(ac);
    if (w.luAc.rank() < rows)
      throw SingularSystem("glue Schur complement is rank deficient (" +
                           std::to_string(w.luAc.rank()) + "/" + std::to_string(rows) +
                           "); redundant glue bindings?");
  }
}

void condenseOne(const CondenseWork& w, const CouplingJacobians& cj, const VecX& brFull,
                 const VecX& bd, double dt, int nq, VecX* dq, VecX* du, VecX* lambda) {
  const VecX yr = w.luAr.solve(w.reduce(brFull));
  const VecX ydb = w.ldltAd.solve(bd);
  VecX lam = VecX::Zero(3 * w.nG);
  if (w.nG > 0) {
    VecX rhs = w.gqFree * yr;
    for (int g = 0; g < w.nG; ++g)
      rhs.segment<3>(3 * g) -= ydb.segment<3>(3 * cj.glueVertices[g]);
    lam = w.luAc.solve(rhs);
  }
  const VecX wq = yr - w.xr * lam;
  VecX wu = ydb - w.yd * lam;
  *dq = w.expand(wq, nq);
  *du = std::move(wu);
  *lambda = lam / (dt * dt);
}

}  // namespace

CondensedOperators condense(const SkeletonModel& skeleton,
                            const RigidSystemMatrices& rigid,
                            const ElasticSystemMatrices& elastic,
                            const CouplingJacobians& cj, const ForceBasis& basis,
                            double dt) {
  const CondenseWork work(skeleton, rigid, elastic, cj);
  const int nq = skeleton.nq();
  const int m = basis.count();
  CondensedOperators ops;
  ops.dt = dt;
  condenseOne(work, cj, rigid.br, elastic.bd, dt, nq, &ops.dq0, &ops.du0, &ops.lambda0);
  ops.dqCols.resize(nq, m);
  ops.duCols.resize(elastic.bd.size(), m);
  ops.lambdaCols.resize(3 * work.nG, m);
  const double dt2 = dt * dt;
  for (int c = 0; c < m; ++c) {
    VecX dq, du, lam;
    condenseOne(work, cj, dt2 * basis.rigidCols.col(c), dt2 * basis.elasticCols.col(c),
                dt, nq, &dq, &du, &lam);
    ops.dqCols.col(c) = dq;
    ops.duCols.col(c) = du;
    ops.lambdaCols.col(c) = lam;
  }
  return ops;
}

CondensedOperators condenseViaFullKkt(const SkeletonModel& skeleton,
                                      const RigidSystemMatrices& rigid,
                                      const ElasticSystemMatrices& elastic,
                                      const CouplingJacobians& cj,
                                      const ForceBasis& basis, double dt) {
  CoupledKkt kkt = assembleCoupledKKT(skeleton, rigid, elastic, cj);
  Eigen::SparseLU<SpMat> lu(kkt.matrix);
  if (lu.info() != Eigen::Success)
    throw SingularSystem("coupled KKT factorization failed");
  const int nf = static_cast<int>(kkt.freeDofs.size());
  const int nq = skeleton.nq();
  const double dt2 = dt * dt;

  auto solveOne = [&](const VecX& brFull, const VecX& bd, VecX* dq, VecX* du,
                      VecX* lambda) {
    VecX rhs = VecX::Zero(kkt.rhs.size());
    for (int i = 0; i < nf; ++i) rhs[i] = brFull[kkt.freeDofs[i]];
    rhs.segment(nf, 3 * kkt.nV) = bd;
    const VecX x = lu.solve(rhs);
    *dq = VecX::Zero(nq);
    for (int i = 0; i < nf; ++i) (*dq)[kkt.freeDofs[i]] = x[i];
    *du = x.segment(nf, 3 * kkt.nV);
    *lambda = x.tail(3 * kkt.nG) / dt2;
  };

  CondensedOperators ops;
  ops.dt = dt;
  solveOne(rigid.br, elastic.bd, &ops.dq0, &ops.du0, &ops.lambda0);
  const int m = basis.count();
  ops.dqCols.resize(nq, m);
  ops.duCols.resize(elastic.bd.size(), m);
  ops.lambdaCols.resize(3 * kkt.nG, m);
  for (int c = 0; c < m; ++c) {
    VecX dq, du, lam;
    solveOne(dt2 * basis.rigidCols.col(c), dt2 * basis.elasticCols.col(c), &dq, &du,
             &lam);
    ops.dqCols.col(c) = dq;
    ops.duCols.col(c) = du;
    ops.lambdaCols.col(c) = lam;
  }
  return ops;
}

namespace {

StepResult stepCoupledImpl(const Scene& scene, const FemModel& fem, const MatX& Dr,
                           const CoupledState& state, const AppliedForces& forces,
                           double dt, int depth) {
  const SkeletonModel& skeleton = scene.skeleton;
  KinematicsCache cache(skeleton, state.rigid.q, state.rigid.qdot);
  const VecX gr = generalizedExternalForce(skeleton, cache, forces.gravity,
                                           forces.torques, forces.rigidPointForces,
                                           forces.rigidLinkTorques);
  VecX gd = fem.gravityForce(forces.gravity);
  if (forces.skinForces.size() > 0) gd += forces.skinForces;

  StepResult out;
  try {
    const RigidSystemMatrices rigid = assembleRigidStep(skeleton, cache, gr, Dr, dt);
    const ElasticSystemMatrices elastic = fem.assembleElasticStep(state.skin, gd, dt);
    const CouplingJacobians cj =
        glueConstraint(skeleton, scene.skin, cache, state.skin.u);
    const ForceBasis empty = ForceBasis::empty(skeleton.nq(), scene.skin.numVertices());
    const CondensedOperators ops = condense(skeleton, rigid, elastic, cj, empty, dt);

    CoupledState next;
    const VecX dq = dt * state.rigid.qdot + ops.dq0;
    next.rigid.q = state.rigid.q + dq;
    next.rigid.qdot = dq / dt;
    const VecX du = dt * state.skin.udot + ops.du0;
    next.skin.u = state.skin.u + du;
    next.skin.udot = du / dt;
    out.lambda = ops.lambda0;

    fem.internalForces(next.skin.u);  // reject the step if the new state is inverted
    out.state = std::move(next);
  } catch (const InvertedElement& e) {
    if (depth >= scene.config.inversionRetries) throw;
    QP_WARN("element inversion in tet " << e.tetId << ", halving dt to " << dt / 2);
    StepResult first = stepCoupledImpl(scene, fem, Dr, state, forces, dt / 2, depth + 1);
    StepResult second =
        stepCoupledImpl(scene, fem, Dr, first.state, forces, dt / 2, depth + 1);
    second.dtHalvings = std::max(first.dtHalvings, second.dtHalvings) + 1;
    return second;
  }

  out.glueResidual = projectGlue(scene, out.state);
  return out;
}

}  // namespace

StepResult stepCoupled(const Scene& scene, const FemModel& fem, const MatX& Dr,
                       const CoupledState& state, const AppliedForces& forces,
                       double dt) {
  if (!(dt > 0.0)) throw DimensionMismatch("dt must be positive");
  return stepCoupledImpl(scene, fem, Dr, state, forces, dt, 0);
}

double projectGlue(const Scene& scene, CoupledState& state) {
  KinematicsCache cache(scene.skeleton, state.rigid.q, state.rigid.qdot);
  auto residual = [&]() {
    double r = 0.0;
    for (const auto& b : scene.skin.glueBindings) {
      const Vec3 target = cache.worldPoint(b.linkId, b.localCoord);
      const Vec3 gap = target - scene.skin.worldPosition(state.skin.u, b.vertexId);
      r = std::max(r, gap.cwiseAbs().maxCoeff());
    }
    return r;
  };
  double res = residual();
  for (int round = 0;
       res > scene.config.glueResidualTol && round < scene.config.glueProjectionRounds;
       ++round) {
    for (const auto& b : scene.skin.glueBindings) {
      const Vec3 target = cache.worldPoint(b.linkId, b.localCoord);
      state.skin.u.segment<3>(3 * b.vertexId) =
          target - scene.skin.restVertices[b.vertexId];
      state.skin.udot.segment<3>(3 * b.vertexId) =
          cache.pointVelocity(b.linkId, b.localCoord);
    }
    res = residual();
  }
  if (res > scene.config.glueResidualTol)
    throw ConstraintDivergence("glue residual " + std::to_string(res) +
                               " above tolerance after projection rounds");
  return res;
}

}  // namespace quadplan
