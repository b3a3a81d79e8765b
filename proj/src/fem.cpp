#include "quadplan/fem.hpp"

#include <cmath>

#include "quadplan/errors.hpp"

namespace quadplan {

namespace {

Mat3 edgeMatrix(const SkinMesh& mesh, const VecX& u, int tetId) {
  const auto& t = mesh.tets[tetId];
  Mat3 du;
  for (int k = 0; k < 3; ++k)
    du.col(k) = u.segment<3>(3 * t[k + 1]) - u.segment<3>(3 * t[0]);
  return du;
}

void checkInversion(const Mat3& f, int tetId) {
  if (!(f.determinant() > 0.0))
    throw InvertedElement("inverted element (det F = " +
                              std::to_string(f.determinant()) + ") in tet " +
                              std::to_string(tetId),
                          tetId);
}

// dP(F; dF) for the Neo-Hookean model.
Mat3 pk1Differential(const Mat3& f, const Mat3& fInvT, double logI3, const Mat3& df,
                     double mu, double lambda) {
  const Mat3 finvDf = fInvT.transpose() * df;
  return mu * df + (mu - 0.5 * lambda * logI3) * fInvT * df.transpose() * fInvT +
         lambda * finvDf.trace() * fInvT;
}

}  // namespace

Mat3 deformationGradient(const SkinMesh& mesh, const VecX& u, int tetId) {
  return Mat3::Identity() + edgeMatrix(mesh, u, tetId) * mesh.perTetDFdU[tetId];
}

double strainEnergyDensity(const Mat3& f, double mu, double lambda, int tetId) {
  checkInversion(f, tetId);
  const double i1 = (f.transpose() * f).trace();
  const double logI3 = 2.0 * std::log(f.determinant());
  return 0.5 * mu * (i1 - logI3 - 3.0) + 0.125 * lambda * logI3 * logI3;
}

Mat3 pk1Stress(const Mat3& f, double mu, double lambda, int tetId) {
  checkInversion(f, tetId);
  const double logI3 = 2.0 * std::log(f.determinant());
  const Mat3 fInvT = f.inverse().transpose();
  return mu * f - mu * fInvT + 0.5 * lambda * logI3 * fInvT;
}

FemModel::FemModel(const SkinMesh& mesh, const MaterialParams& material)
    : mesh_(&mesh), material_(&material) {
  const int n = 3 * mesh.numVertices();
  massDiag_.resize(n);
  for (int v = 0; v < mesh.numVertices(); ++v)
    massDiag_.segment<3>(3 * v).setConstant(mesh.vertexMass[v]);
  restStiffness_ = tangentStiffness(VecX::Zero(n));
  damping_ = material.rayleighStiffness * restStiffness_;
  SpMat massM(n, n);
  massM.reserve(Eigen::VectorXi::Constant(n, 1));
  for (int i = 0; i < n; ++i) massM.insert(i, i) = massDiag_[i];
  massM.makeCompressed();
  damping_ += material.rayleighMass * massM;
}

InternalForceResult FemModel::internalForces(const VecX& u) const {
  const SkinMesh& mesh = *mesh_;
  InternalForceResult out;
  out.fd = VecX::Zero(3 * mesh.numVertices());
  out.energy = 0.0;
  for (int t = 0; t < mesh.numTets(); ++t) {
    const Mat3 f = Mat3::Identity() + edgeMatrix(mesh, u, t) * mesh.perTetDFdU[t];
    const double mu = tetMu(t);
    const double lambda = tetLambda(t);
    out.energy += mesh.tetVolume[t] * strainEnergyDensity(f, mu, lambda, t);
    const Mat3 p = pk1Stress(f, mu, lambda, t);
    // grad E per tet: columns of vol * P * Bm^T are the gradients at v1..v3
    const Mat3 h = mesh.tetVolume[t] * p * mesh.perTetDFdU[t].transpose();
    const auto& tet = mesh.tets[t];
    Vec3 g0 = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      out.fd.segment<3>(3 * tet[k + 1]) -= h.col(k);
      g0 += h.col(k);
    }
    out.fd.segment<3>(3 * tet[0]) += g0;
  }
  return out;
}

SpMat FemModel::tangentStiffness(const VecX& u) const {
  const SkinMesh& mesh = *mesh_;
  std::vector<Triplet> triplets;
  triplets.reserve(mesh.numTets() * 144);
  for (int t = 0; t < mesh.numTets(); ++t) {
    const Mat3& bm = mesh.perTetDFdU[t];
    const Mat3 f = Mat3::Identity() + edgeMatrix(mesh, u, t) * bm;
    checkInversion(f, t);
    const double mu = tetMu(t);
    const double lambda = tetLambda(t);
    const double logI3 = 2.0 * std::log(f.determinant());
    const Mat3 fInvT = f.inverse().transpose();
    const auto& tet = mesh.tets[t];
    const double vol = mesh.tetVolume[t];

    Eigen::Matrix<double, 12, 12> k;
    for (int l = 0; l < 4; ++l) {
      for (int e = 0; e < 3; ++e) {
        Mat3 dDu = Mat3::Zero();
        if (l == 0)
          dDu.row(e) = Vec3::Constant(-1.0).transpose();
        else
          dDu(e, l - 1) = 1.0;
        const Mat3 df = dDu * bm;
        const Mat3 dh = vol * pk1Differential(f, fInvT, logI3, df, mu, lambda) *
                        bm.transpose();
        Vec3 d0 = Vec3::Zero();
        for (int m = 0; m < 3; ++m) {
          k.block<3, 1>(3 * (m + 1), 3 * l + e) = dh.col(m);
          d0 += dh.col(m);
        }
        k.block<3, 1>(0, 3 * l + e) = -d0;
      }
    }
    for (int a = 0; a < 12; ++a)
      for (int b = 0; b < 12; ++b)
        triplets.emplace_back(3 * tet[a / 3] + a % 3, 3 * tet[b / 3] + b % 3, k(a, b));
  }
  SpMat ks(3 * mesh.numVertices(), 3 * mesh.numVertices());
  ks.setFromTriplets(triplets.begin(), triplets.end());
  ks.makeCompressed();
  return ks;
}

ElasticSystemMatrices FemModel::assembleElasticStep(const SkinState& state, const VecX& gd,
                                                    double dt) const {
  if (!(dt > 0.0)) throw DimensionMismatch("dt must be positive");
  ElasticSystemMatrices s;
  s.massDiag = massDiag_;
  s.K = tangentStiffness(state.u);
  s.Dd = damping_;
  s.Ad = (dt * dt) * s.K + dt * s.Dd;
  const InternalForceResult fi = internalForces(state.u);
  s.bd = (dt * dt) * (gd + fi.fd - s.Dd * state.udot);
  // add the diagonal mass
  SpMat massM(s.Ad.rows(), s.Ad.cols());
  massM.reserve(Eigen::VectorXi::Constant(static_cast<int>(s.Ad.rows()), 1));
  for (int i = 0; i < s.Ad.rows(); ++i) massM.insert(i, i) = massDiag_[i];
  massM.makeCompressed();
  s.Ad += massM;
  s.Ad.makeCompressed();
  return s;
}

VecX FemModel::gravityForce(const Vec3& gravity) const {
  VecX g(massDiag_.size());
  for (int v = 0; v < mesh_->numVertices(); ++v)
    g.segment<3>(3 * v) = mesh_->vertexMass[v] * gravity;
  return g;
}

}  // namespace quadplan
