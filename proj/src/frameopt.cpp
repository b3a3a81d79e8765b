#include "quadplan/frameopt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "quadplan/log.hpp"

namespace quadplan {

namespace {

constexpr double kRegFactor = 1e-9;

// Andrew's monotone chain over (x, z); returns hull points counterclockwise.
std::vector<Vec2> convexHullXZ(const std::vector<Vec3>& pts) {
  std::vector<Vec2> p;
  p.reserve(pts.size());
  for (const auto& v : pts) p.emplace_back(v.x(), v.z());
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  p.erase(std::unique(p.begin(), p.end(),
                      [](const Vec2& a, const Vec2& b) {
                        return (a - b).cwiseAbs().maxCoeff() < 1e-12;
                      }),
          p.end());
  const int n = static_cast<int>(p.size());
  if (n < 3) return {};
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) return {};
  double area = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    area += a.x() * b.y() - b.x() * a.y();
  }
  if (std::abs(area) < 1e-10) return {};
  return hull;
}

}  // namespace

FrameProblem FrameProblem::build(const Inputs& in) {
  FrameProblem fp;
  fp.in_ = in;
  const Scene& scene = *in.scene;
  const SkeletonModel& skeleton = scene.skeleton;
  const SkinMesh& mesh = scene.skin;
  const FemModel& fem = *in.fem;
  const double dt = in.dt;

  KinematicsCache cache(skeleton, in.state.rigid.q, in.state.rigid.qdot);
  const auto actuated = skeleton.actuatedDofs();
  fp.numTau_ = in.fixedTau ? 0 : static_cast<int>(actuated.size());
  fp.tauLimits_ = skeleton.actuatedLimits();
  fp.forceScale_ = std::max(
      1.0, (skeleton.totalMass() + fem.totalMass()) * scene.config.gravity.norm());

  VecX appliedTau = VecX::Zero(actuated.size());
  if (in.fixedTau) appliedTau = in.fixedTauValue;
  const VecX gr = generalizedExternalForce(skeleton, cache, scene.config.gravity,
                                           appliedTau, in.extraRigidForces);
  VecX gd = fem.gravityForce(scene.config.gravity);
  if (in.extraSkinForces.size() > 0) gd += in.extraSkinForces;

  const RigidSystemMatrices rigid = assembleRigidStep(skeleton, cache, gr, *in.Dr, dt);
  const ElasticSystemMatrices elastic = fem.assembleElasticStep(in.state.skin, gd, dt);
  const CouplingJacobians cj = glueConstraint(skeleton, mesh, cache, in.state.skin.u);

  // active patches: sole partitions with at least one member on the ground
  std::vector<Vec3> world(mesh.numVertices());
  for (int v = 0; v < mesh.numVertices(); ++v)
    world[v] = mesh.worldPosition(in.state.skin.u, v);
  const auto detected = detectGroundContacts(mesh, world, scene.config.contactTolerance);
  std::vector<char> hit(mesh.numVertices(), 0);
  for (int v : detected) hit[v] = 1;
  for (size_t leg = 0; leg < skeleton.endEffectors.size(); ++leg) {
    const auto patches = groupSolePatches(mesh, static_cast<int>(leg),
                                          skeleton.endEffectors[leg].soleVertexIds);
    for (const auto& p : patches) {
      bool active = false;
      for (int v : p.vertices) active = active || hit[v];
      if (active) fp.activePatches_.push_back(p);
    }
  }
  for (int v : detected) fp.copVertices_.push_back(world[v]);

  // force basis: actuated torque columns, then 5 columns per active patch
  const int numP = fp.numPatches();
  const int basisCount = fp.numTau_ + 5 * numP;
  const FrictionBasis friction = FrictionBasis::standard();
  ForceBasis basis;
  basis.rigidCols = MatX::Zero(skeleton.nq(), basisCount);
  basis.elasticCols = MatX::Zero(3 * mesh.numVertices(), basisCount);
  for (int a = 0; a < fp.numTau_; ++a)
    basis.rigidCols.col(a) = motorTorqueColumn(skeleton, cache, a);
  for (int p = 0; p < numP; ++p) {
    const SolePatch& patch = fp.activePatches_[p];
    for (int c = 0; c < 5; ++c) {
      const Vec3 dir = c == 0 ? friction.normal : Vec3(friction.directions.col(c - 1));
      for (size_t i = 0; i < patch.vertices.size(); ++i)
        basis.elasticCols.col(fp.numTau_ + 5 * p + c)
            .segment<3>(3 * patch.vertices[i]) = patch.weights[i] * dir;
    }
  }
  fp.ops_ = in.useFullKkt ? condenseViaFullKkt(skeleton, rigid, elastic, cj, basis, dt)
                          : condense(skeleton, rigid, elastic, cj, basis, dt);

  // scaled variable -> basis coordinate map (lambda_par has no dynamics column)
  const int nx = fp.varCount();
  fp.basisOfVar_ = MatX::Zero(basisCount, nx);
  for (int a = 0; a < fp.numTau_; ++a) fp.basisOfVar_(a, a) = 1.0;
  for (int p = 0; p < numP; ++p) {
    fp.basisOfVar_(fp.numTau_ + 5 * p, fp.fperpVar(p)) = fp.forceScale_;
    for (int d = 0; d < 4; ++d)
      fp.basisOfVar_(fp.numTau_ + 5 * p + 1 + d, fp.fparVar(p, d)) = fp.forceScale_;
  }

  fp.dqConst_ = dt * in.state.rigid.qdot + fp.ops_.dq0;
  fp.duConst_ = dt * in.state.skin.udot + fp.ops_.du0;
  fp.dqVar_ = fp.ops_.dqCols * fp.basisOfVar_;
  const MatX duVar = fp.ops_.duCols * fp.basisOfVar_;

  fp.patchVelRows_.resize(numP);
  fp.patchVelConst_.resize(numP);
  for (int p = 0; p < numP; ++p) {
    const SolePatch& patch = fp.activePatches_[p];
    MatX rows = MatX::Zero(3, nx);
    Vec3 cst = Vec3::Zero();
    for (size_t i = 0; i < patch.vertices.size(); ++i) {
      rows += patch.weights[i] * duVar.middleRows<3>(3 * patch.vertices[i]);
      cst += patch.weights[i] * Vec3(fp.duConst_.segment<3>(3 * patch.vertices[i]));
    }
    fp.patchVelRows_[p] = rows / dt;
    fp.patchVelConst_[p] = cst / dt;
  }

  // quadratic objective in scaled variables
  fp.quad_.h = MatX::Zero(nx, nx);
  fp.quad_.g = VecX::Zero(nx);
  fp.quad_.c = 0.0;
  auto addTerm = [&](double alpha, const MatX& rows, const VecX& r0) {
    if (alpha == 0.0) return;
    fp.quad_.h.noalias() += 2.0 * alpha * rows.transpose() * rows;
    fp.quad_.g.noalias() += 2.0 * alpha * rows.transpose() * r0;
    fp.quad_.c += alpha * r0.squaredNorm();
  };
  const FrameWeights& w = in.weights;
  addTerm(w.alphaS, fp.dqVar_, fp.dqConst_ - in.prevDq);
  addTerm(w.alphaF, fp.dqVar_, in.state.rigid.q + fp.dqConst_ - in.targetNextQ);
  if (!in.fixedTau && fp.numTau_ > 0) {
    MatX tauRows = MatX::Zero(fp.numTau_, nx);
    for (int a = 0; a < fp.numTau_; ++a) tauRows(a, a) = 1.0;
    addTerm(w.alphaTau, tauRows, -in.prevTau);
  }
  for (size_t leg = 0; leg < skeleton.endEffectors.size(); ++leg) {
    const EndEffector& ee = skeleton.endEffectors[leg];
    const Vec3 marker = cache.worldPoint(ee.link, ee.contactMarker);
    const MatX jp = cache.pointJacobian(ee.link, marker);
    if (leg < in.supportLegs.size() && in.supportLegs[leg])
      addTerm(w.alphaC, jp * fp.dqVar_, jp * fp.dqConst_);
    if (leg < in.eoLegs.size() && in.eoLegs[leg]) {
      const Vec3 psi0 =
          (cache.linkRotation(ee.link) * ee.soleUp.normalized()).normalized();
      const MatX dpsi = -skew(psi0) * cache.linkJw(ee.link);
      addTerm(w.alphaO, dpsi * fp.dqVar_, psi0 + dpsi * fp.dqConst_ - Vec3(0, 1, 0));
    }
  }
  return fp;
}

VecX FrameProblem::scaleVars(const VecX& raw) const {
  VecX x = raw;
  for (int p = 0; p < numPatches(); ++p) {
    x[fperpVar(p)] /= forceScale_;
    for (int d = 0; d < 4; ++d) x[fparVar(p, d)] /= forceScale_;
  }
  return x;
}

VecX FrameProblem::unscaleVars(const VecX& scaled) const {
  VecX raw = scaled;
  for (int p = 0; p < numPatches(); ++p) {
    raw[fperpVar(p)] *= forceScale_;
    for (int d = 0; d < 4; ++d) raw[fparVar(p, d)] *= forceScale_;
  }
  return raw;
}

double FrameProblem::objective(const VecX& vars, VecX* grad) const {
  const VecX x = scaleVars(vars);
  const double value = 0.5 * x.dot(quad_.h * x) + quad_.g.dot(x) + quad_.c;
  if (grad) *grad = scaleVars(VecX(quad_.h * x + quad_.g));
  return value;
}

VecX FrameProblem::dqOf(const VecX& vars) const {
  return dqConst_ + dqVar_ * scaleVars(vars);
}

VecX FrameProblem::duOf(const VecX& vars) const {
  return duConst_ + ops_.duCols * (basisOfVar_ * scaleVars(vars));
}

VecX FrameProblem::lambdaOf(const VecX& vars) const {
  return ops_.lambda0 + ops_.lambdaCols * (basisOfVar_ * scaleVars(vars));
}

Vec3 FrameProblem::patchVelocity(int p, const VecX& vars) const {
  return patchVelConst_[p] + Vec3(patchVelRows_[p] * scaleVars(vars));
}

MatX FrameProblem::patchVelRows(int p) const { return patchVelRows_[p]; }
Vec3 FrameProblem::patchVelConst(int p) const { return patchVelConst_[p]; }

FrameProblem::InequalityRows FrameProblem::torqueBox() const {
  InequalityRows rows;
  const int nx = varCount();
  rows.normals = MatX::Zero(nx, 2 * numTau_);
  rows.offsets = VecX::Zero(2 * numTau_);
  for (int a = 0; a < numTau_; ++a) {
    rows.normals(a, 2 * a) = -1.0;  // U - tau >= 0
    rows.offsets[2 * a] = tauLimits_[a];
    rows.normals(a, 2 * a + 1) = 1.0;  // tau + U >= 0
    rows.offsets[2 * a + 1] = tauLimits_[a];
    rows.family.push_back("torque");
    rows.family.push_back("torque");
  }
  return rows;
}

FrameProblem::InequalityRows FrameProblem::copRows() const {
  InequalityRows rows;
  const int nx = varCount();
  const auto hull = convexHullXZ(copVertices_);
  rows.normals = MatX::Zero(nx, 0);
  rows.offsets = VecX::Zero(0);
  if (hull.empty()) return rows;

  VecX mx = VecX::Zero(nx), mz = VecX::Zero(nx), fy = VecX::Zero(nx);
  const FrictionBasis friction = FrictionBasis::standard();
  for (int p = 0; p < numPatches(); ++p) {
    const Vec3 pos = activePatches_[p].position(in_.scene->skin, in_.state.skin.u);
    for (int c = 0; c < 5; ++c) {
      const Vec3 dir = c == 0 ? friction.normal : Vec3(friction.directions.col(c - 1));
      const Vec3 moment = pos.cross(dir);
      const int var = c == 0 ? fperpVar(p) : fparVar(p, c - 1);
      mx[var] += forceScale_ * moment.x();
      mz[var] += forceScale_ * moment.z();
      fy[var] += forceScale_ * dir.y();
    }
  }
  const int ne = static_cast<int>(hull.size());
  rows.normals = MatX::Zero(nx, ne);
  rows.offsets = VecX::Zero(ne);
  const double buffer = in_.scene->config.copBuffer;
  for (int e = 0; e < ne; ++e) {
    const Vec2& h1 = hull[e];
    const Vec2& h2 = hull[(e + 1) % ne];
    Vec2 n(h2.y() - h1.y(), -(h2.x() - h1.x()));  // outward for CCW hull in (x,z)
    n.normalize();
    // n.(cop - h1) <= -buffer, multiplied through by Fy > 0:
    // n_x*Mz - n_z*Mx - (n.h1)*Fy + buffer <= 0; flip sign for ci >= 0 form
    rows.normals.col(e) = -(n.x() * mz - n.y() * mx - n.dot(h1) * fy);
    rows.offsets[e] = -buffer;
    rows.family.push_back("cop");
  }
  return rows;
}

namespace {

struct QpRows {
  MatX ce;
  VecX ce0;
  MatX ci;
  VecX ci0;
  std::vector<std::string> family;
};

QpRows emptyRows(int nx) {
  QpRows rows;
  rows.ce = MatX::Zero(nx, 0);
  rows.ce0 = VecX::Zero(0);
  rows.ci = MatX::Zero(nx, 0);
  rows.ci0 = VecX::Zero(0);
  return rows;
}

void appendIneq(QpRows* rows, const FrameProblem::InequalityRows& add) {
  const int old = static_cast<int>(rows->ci.cols());
  const int more = static_cast<int>(add.normals.cols());
  if (more == 0) return;
  MatX ci(add.normals.rows(), old + more);
  if (old > 0) ci.leftCols(old) = rows->ci;
  ci.rightCols(more) = add.normals;
  VecX ci0(old + more);
  if (old > 0) ci0.head(old) = rows->ci0;
  ci0.tail(more) = add.offsets;
  rows->ci = std::move(ci);
  rows->ci0 = std::move(ci0);
  for (const auto& f : add.family) rows->family.push_back(f);
}

void appendEquality(QpRows* rows, const VecX& normal, double offset) {
  const int old = static_cast<int>(rows->ce.cols());
  MatX ce(normal.size(), old + 1);
  if (old > 0) ce.leftCols(old) = rows->ce;
  ce.col(old) = normal;
  VecX ce0(old + 1);
  if (old > 0) ce0.head(old) = rows->ce0;
  ce0[old] = offset;
  rows->ce = std::move(ce);
  rows->ce0 = std::move(ce0);
}

void appendIneqRow(QpRows* rows, const VecX& normal, double offset,
                   const std::string& family) {
  FrameProblem::InequalityRows one;
  one.normals = normal;
  one.offsets = VecX::Constant(1, offset);
  one.family = {family};
  appendIneq(rows, one);
}

}  // namespace

InitialQpResult solveInitialQP(const FrameProblem& problem) {
  const int numTau = problem.numTauVars();
  const int numP = problem.numPatches();
  const int nx = problem.varCount();
  if (numTau + 3 * numP == 0) {
    InitialQpResult trivial;
    trivial.tau = VecX::Zero(0);
    trivial.gamma = MatX::Zero(3, 0);
    trivial.objective = problem.quadratic().c;
    return trivial;
  }

  // gamma is represented through the variable space: gamma_x rides the +x
  // tangent column, gamma_y the normal column, gamma_z the +z column; the
  // linear response makes negative coefficients legitimate.
  const int ny = numTau + 3 * numP;
  MatX toX = MatX::Zero(nx, ny);
  for (int a = 0; a < numTau; ++a) toX(a, a) = 1.0;
  for (int p = 0; p < numP; ++p) {
    toX(problem.fparVar(p, 0), numTau + 3 * p + 0) = 1.0;
    toX(problem.fperpVar(p), numTau + 3 * p + 1) = 1.0;
    toX(problem.fparVar(p, 2), numTau + 3 * p + 2) = 1.0;
  }

  const auto& quad = problem.quadratic();
  const MatX h = toX.transpose() * quad.h * toX;
  const VecX g = toX.transpose() * quad.g;

  QpRows rows = emptyRows(ny);
  for (int p = 0; p < numP; ++p) {
    const MatX vel = problem.patchVelRows(p) * toX;
    const Vec3 cst = problem.patchVelConst(p);
    for (int c = 0; c < 3; ++c) appendEquality(&rows, vel.row(c).transpose(), cst[c]);
  }
  const auto box = problem.torqueBox();
  FrameProblem::InequalityRows boxY;
  boxY.normals = toX.transpose() * box.normals;
  boxY.offsets = box.offsets;
  boxY.family = box.family;
  appendIneq(&rows, boxY);

  const double reg = kRegFactor * std::max(1.0, h.diagonal().maxCoeff());
  const MatX hreg = h + reg * MatX::Identity(ny, ny);
  auto attempt = [&](bool withCop) -> std::pair<bool, QpResult> {
    QpRows r = rows;
    if (withCop) {
      const auto cop = problem.copRows();
      FrameProblem::InequalityRows copY;
      copY.normals = toX.transpose() * cop.normals;
      copY.offsets = cop.offsets;
      copY.family = cop.family;
      appendIneq(&r, copY);
    }
    try {
      QpResult qp = solveQp(hreg, g, r.ce, r.ce0, r.ci, r.ci0);
      return {qp.feasible, qp};
    } catch (const QPInfeasible&) {
      return {false, QpResult{}};
    }
  };

  InitialQpResult out;
  auto [ok, qp] = attempt(true);
  if (!ok) {
    auto [ok2, qp2] = attempt(false);
    if (!ok2) throw QPInfeasible("initial all-fixed QP infeasible", "contact");
    QP_WARN("COP constraint infeasible in the initial QP; dropped with a warning");
    out.copDropped = true;
    qp = qp2;
  }
  out.objective = qp.objective + quad.c;
  out.tau = VecX(qp.x.head(numTau));
  out.gamma = MatX::Zero(3, numP);
  for (int p = 0; p < numP; ++p)
    for (int c = 0; c < 3; ++c)
      out.gamma(c, p) = qp.x[numTau + 3 * p + c] * problem.forceScale();
  return out;
}

std::vector<PatchLabel> classifyContacts(const MatX& gamma, double mu) {
  std::vector<PatchLabel> labels(gamma.cols());
  for (int p = 0; p < gamma.cols(); ++p) {
    const double gPerp = gamma(1, p);
    const Vec2 gPar(gamma(0, p), gamma(2, p));
    PatchLabel& l = labels[p];
    if (gPerp <= 0.0) {
      l.mode = ContactMode::Breakage;
      continue;
    }
    if (mu * gPerp > gPar.norm()) {
      l.mode = ContactMode::Static;
      continue;
    }
    l.mode = ContactMode::Sliding;
    const double tol = 1e-9 * std::max(1.0, gPar.cwiseAbs().maxCoeff());
    l.activeDirs = {gPar.x() > tol, -gPar.x() > tol, gPar.y() > tol, -gPar.y() > tol};
  }
  return labels;
}

ModeQpResult solveModeQP(const FrameProblem& problem,
                         const std::vector<PatchLabel>& labels) {
  const int nx = problem.varCount();
  if (nx == 0) {
    ModeQpResult trivial;
    trivial.feasible = true;
    trivial.vars = VecX::Zero(0);
    trivial.objective = problem.quadratic().c;
    return trivial;
  }
  const double fs = problem.forceScale();
  const FrictionBasis friction = FrictionBasis::standard();
  const double mu = problem.mu();

  QpRows rows = emptyRows(nx);
  appendIneq(&rows, problem.torqueBox());
  bool anySupport = false;
  for (const auto& l : labels) anySupport = anySupport || l.mode != ContactMode::Breakage;

  auto unit = [&](int var) {
    VecX v = VecX::Zero(nx);
    v[var] = 1.0;
    return v;
  };

  for (int p = 0; p < problem.numPatches(); ++p) {
    const PatchLabel& l = labels[p];
    const MatX vel = problem.patchVelRows(p);
    const Vec3 cst = problem.patchVelConst(p);
    if (l.mode == ContactMode::Breakage) {
      appendEquality(&rows, unit(problem.fperpVar(p)), 0.0);
      for (int d = 0; d < 4; ++d)
        appendEquality(&rows, unit(problem.fparVar(p, d)), 0.0);
      appendEquality(&rows, unit(problem.lamparVar(p)), 0.0);
      continue;
    }
    appendEquality(&rows, vel.row(1).transpose(), cst.y());
    appendIneqRow(&rows, unit(problem.fperpVar(p)), 0.0, "contact");
    VecX cone = VecX::Zero(nx);
    cone[problem.fperpVar(p)] = mu * fs;
    for (int d = 0; d < 4; ++d) cone[problem.fparVar(p, d)] = -fs;

    if (l.mode == ContactMode::Static) {
      appendEquality(&rows, vel.row(0).transpose(), cst.x());
      appendEquality(&rows, vel.row(2).transpose(), cst.z());
      appendEquality(&rows, unit(problem.lamparVar(p)), 0.0);
      for (int d = 0; d < 4; ++d)
        appendIneqRow(&rows, unit(problem.fparVar(p, d)), 0.0, "contact");
      appendIneqRow(&rows, cone, 0.0, "cone");
    } else {  // Sliding with active direction set
      for (int d = 0; d < 4; ++d) {
        const Vec3 dir = friction.directions.col(d);
        VecX row = (dir.transpose() * vel).transpose();
        row[problem.lamparVar(p)] += 1.0;
        const double off = dir.dot(cst);
        if (l.activeDirs[d]) {
          appendEquality(&rows, row, off);
          appendIneqRow(&rows, unit(problem.fparVar(p, d)), 0.0, "contact");
        } else {
          appendEquality(&rows, unit(problem.fparVar(p, d)), 0.0);
          appendIneqRow(&rows, row, off, "contact");
        }
      }
      appendEquality(&rows, cone, 0.0);
      appendIneqRow(&rows, unit(problem.lamparVar(p)), 0.0, "contact");
    }
  }

  const auto& quad = problem.quadratic();
  const double reg = kRegFactor * std::max(1.0, quad.h.diagonal().maxCoeff());
  const MatX hreg = quad.h + reg * MatX::Identity(nx, nx);
  auto attempt = [&](bool withCop) -> std::pair<bool, QpResult> {
    QpRows r = rows;
    if (withCop) appendIneq(&r, problem.copRows());
    try {
      QpResult qp = solveQp(hreg, quad.g, r.ce, r.ce0, r.ci, r.ci0);
      if (!qp.feasible) QP_DEBUG("mode QP dual-unbounded (primal infeasible)");
      return {qp.feasible, qp};
    } catch (const QPInfeasible& e) {
      QP_DEBUG("mode QP threw: " << e.what());
      return {false, QpResult{}};
    }
  };
  if (std::getenv("QUADPLAN_QP_DUMP")) {
    QpRows r = rows;
    appendIneq(&r, problem.copRows());
    std::ofstream os(std::getenv("QUADPLAN_QP_DUMP"));
    auto dump = [&](const MatX& m, const char* name) {
      os << name << " " << m.rows() << " " << m.cols() << "\n" << m << "\n";
    };
    dump(hreg, "G");
    dump(quad.g, "a");
    dump(r.ce, "CE");
    dump(r.ce0, "ce0");
    dump(r.ci, "CI");
    dump(r.ci0, "ci0");
  }

  ModeQpResult res;
  auto [ok, qp] = attempt(anySupport);
  if (!ok) {
    auto [ok2, qp2] = attempt(false);
    if (ok2) {
      QP_WARN("COP constraint infeasible in mode QP; dropped with a warning");
      res.copDropped = true;
      ok = true;
      qp = qp2;
    }
  }
  res.feasible = ok;
  if (ok) {
    res.vars = problem.unscaleVars(qp.x);
    // equality-pinned variables are exact by definition; remove solve roundoff
    for (int p = 0; p < problem.numPatches(); ++p) {
      const PatchLabel& l = labels[p];
      if (l.mode == ContactMode::Breakage) {
        res.vars[problem.fperpVar(p)] = 0.0;
        for (int d = 0; d < 4; ++d) res.vars[problem.fparVar(p, d)] = 0.0;
        res.vars[problem.lamparVar(p)] = 0.0;
      } else if (l.mode == ContactMode::Static) {
        res.vars[problem.lamparVar(p)] = 0.0;
        for (int d = 0; d < 4; ++d)
          res.vars[problem.fparVar(p, d)] =
              std::max(0.0, res.vars[problem.fparVar(p, d)]);
        res.vars[problem.fperpVar(p)] = std::max(0.0, res.vars[problem.fperpVar(p)]);
      } else {
        for (int d = 0; d < 4; ++d)
          if (!l.activeDirs[d]) res.vars[problem.fparVar(p, d)] = 0.0;
          else res.vars[problem.fparVar(p, d)] =
              std::max(0.0, res.vars[problem.fparVar(p, d)]);
        res.vars[problem.fperpVar(p)] = std::max(0.0, res.vars[problem.fperpVar(p)]);
        res.vars[problem.lamparVar(p)] = std::max(0.0, res.vars[problem.lamparVar(p)]);
      }
    }
    res.objective = problem.objective(res.vars);
  }
  return res;
}

namespace {

std::vector<PatchLabel> classifyFromSolution(const FrameProblem& problem,
                                             const std::vector<PatchLabel>& labels,
                                             const VecX& vars) {
  const double fTol = 1e-8 * problem.forceScale();
  const double vTol = 1e-8;
  const double mu = problem.mu();
  const FrictionBasis friction = FrictionBasis::standard();
  std::vector<PatchLabel> next = labels;
  for (int p = 0; p < problem.numPatches(); ++p) {
    const Vec3 v = problem.patchVelocity(p, vars);
    const double fperp = vars[problem.fperpVar(p)];
    Vec4 fpar;
    for (int d = 0; d < 4; ++d) fpar[d] = vars[problem.fparVar(p, d)];
    const double lampar = vars[problem.lamparVar(p)];
    PatchLabel& l = next[p];
    switch (labels[p].mode) {
      case ContactMode::Breakage:
        if (v.y() < -vTol) {
          l.mode = ContactMode::Static;
          l.activeDirs = {false, false, false, false};
        }
        break;
      case ContactMode::Static: {
        if (fperp <= fTol) {
          l.mode = ContactMode::Breakage;
          l.activeDirs = {false, false, false, false};
          break;
        }
        if (mu * fperp - fpar.sum() <= fTol) {
          const Vec2 tangent(fpar[0] - fpar[1], fpar[2] - fpar[3]);
          const double tol = 1e-9 * std::max(1.0, tangent.cwiseAbs().maxCoeff());
          l.activeDirs = {tangent.x() > tol, -tangent.x() > tol, tangent.y() > tol,
                          -tangent.y() > tol};
          if (l.activeDirs[0] || l.activeDirs[1] || l.activeDirs[2] ||
              l.activeDirs[3])
            l.mode = ContactMode::Sliding;
        }
        break;
      }
      case ContactMode::Sliding: {
        if (fperp <= fTol) {
          l.mode = ContactMode::Breakage;
          l.activeDirs = {false, false, false, false};
          break;
        }
        if (lampar <= vTol) {
          l.mode = ContactMode::Static;
          l.activeDirs = {false, false, false, false};
          break;
        }
        for (int d = 0; d < 4; ++d)
          l.activeDirs[d] = friction.directions.col(d).dot(v) + lampar < vTol;
        break;
      }
    }
  }
  return next;
}

}  // namespace

QpccSolution solveQPCC(const FrameProblem& problem) {
  const auto& in = problem.inputs();
  double bestObjective = 0.0;
  VecX bestVars;
  std::vector<PatchLabel> bestLabels;
  bool haveBest = false;

  const InitialQpResult init = solveInitialQP(problem);
  std::vector<PatchLabel> labels = classifyContacts(init.gamma, problem.mu());
  bool copDroppedAny = init.copDropped;

  std::vector<std::vector<PatchLabel>> history;
  bool converged = false;
  std::vector<double> trace;
  int flips = 0;
  const int maxFlips = in.scene->config.qpccMaxFlips;

  for (; flips < maxFlips; ++flips) {
    ModeQpResult mode = solveModeQP(problem, labels);
    if (!mode.feasible) {
      bool recovered = false;
      for (const auto fallback : {ContactMode::Static, ContactMode::Breakage}) {
        std::vector<PatchLabel> alt(problem.numPatches());
        for (auto& l : alt) l.mode = fallback;
        if (alt == labels) continue;
        ModeQpResult second = solveModeQP(problem, alt);
        if (second.feasible) {
          labels = alt;
          mode = second;
          recovered = true;
          break;
        }
      }
      if (!recovered) {
        if (haveBest) break;
        throw NoFeasibleLabeling("no feasible contact labeling found");
      }
    }
    copDroppedAny = copDroppedAny || mode.copDropped;
    trace.push_back(mode.objective);
    if (!haveBest || mode.objective < bestObjective - 1e-12) {
      bestObjective = mode.objective;
      bestVars = mode.vars;
      bestLabels = labels;
      haveBest = true;
    }
    const auto next = classifyFromSolution(problem, labels, mode.vars);
    if (next == labels) {
      converged = true;
      ++flips;
      break;
    }
    bool cycled = false;
    for (const auto& h : history)
      if (h == next) cycled = true;
    if (cycled) {
      QP_DEBUG("QPCC labels cycled; freezing the best labeling seen");
      ++flips;
      break;
    }
    history.push_back(labels);
    if (history.size() > 3) history.erase(history.begin());
    labels = next;
  }

  if (!haveBest) throw NoFeasibleLabeling("QPCC produced no feasible labeling");

  // snap torques onto active bounds, then extract the state maps
  VecX vars = bestVars;
  const auto limits = in.scene->skeleton.actuatedLimits();
  for (int a = 0; a < problem.numTauVars(); ++a)
    if (std::abs(std::abs(vars[a]) - limits[a]) < 1e-9)
      vars[a] = vars[a] > 0 ? limits[a] : -limits[a];

  QpccSolution out;
  out.objective = problem.objective(vars);
  out.tau = in.fixedTau ? in.fixedTauValue : VecX(vars.head(problem.numTauVars()));
  out.dq = problem.dqOf(vars);
  out.du = problem.duOf(vars);
  out.lambda = problem.lambdaOf(vars);
  out.iterations = flips;
  out.converged = converged;
  out.copDropped = copDroppedAny;
  out.objectiveTrace = std::move(trace);
  for (int p = 0; p < problem.numPatches(); ++p) {
    PatchContact pc;
    pc.patch = p;
    pc.mode = bestLabels[p].mode;
    pc.activeDirs = bestLabels[p].activeDirs;
    pc.Fperp = vars[problem.fperpVar(p)];
    for (int d = 0; d < 4; ++d) pc.Fpar[d] = vars[problem.fparVar(p, d)];
    pc.lambdaPar = vars[problem.lamparVar(p)];
    out.contact.contacts.push_back(pc);
    out.patchVelocities.push_back(problem.patchVelocity(p, vars));
  }
  out.maxComplementarity = complementarityResidual(problem, out);
  return out;
}

double complementarityResidual(const FrameProblem& problem, const QpccSolution& sol) {
  double worst = 0.0;
  const double mu = problem.mu();
  const FrictionBasis friction = FrictionBasis::standard();
  for (size_t p = 0; p < sol.contact.contacts.size(); ++p) {
    const PatchContact& c = sol.contact.contacts[p];
    const Vec3& v = sol.patchVelocities[p];
    worst = std::max(worst, std::abs(c.Fperp * v.y()));
    for (int d = 0; d < 4; ++d)
      worst = std::max(worst, std::abs(c.Fpar[d] * (friction.directions.col(d).dot(v) +
                                                    c.lambdaPar)));
    worst = std::max(worst, std::abs(c.lambdaPar * (mu * c.Fperp - c.Fpar.sum())));
  }
  return worst;
}

}  // namespace quadplan
