#pragma once

#include "quadplan/scene.hpp"

namespace quadplan {

struct SkinState {
  VecX u;
  VecX udot;

  static SkinState rest(const SkinMesh& mesh) {
    SkinState s;
    s.u = VecX::Zero(3 * mesh.numVertices());
    s.udot = VecX::Zero(3 * mesh.numVertices());
    return s;
  }
};

// Implicit-Euler elastic system: Ad = Md + dt*Dd + dt^2*K(u),
// bd = dt^2*(gd + fd(u) - Dd*udot) with fd the restoring force (-grad E).
// As with the rigid side, the solve yields dt^2 * uddot; the state update
// adds the dt*udot transport term.
struct ElasticSystemMatrices {
  SpMat Ad;
  VecX bd;
  VecX massDiag;
  SpMat K;
  SpMat Dd;
};

struct InternalForceResult {
  VecX fd;        // restoring force, fd = -grad(energy)
  double energy;  // J
};

Mat3 deformationGradient(const SkinMesh& mesh, const VecX& u, int tetId);

// Neo-Hookean energy density; throws InvertedElement when det F <= 0.
double strainEnergyDensity(const Mat3& f, double mu, double lambda, int tetId = -1);
Mat3 pk1Stress(const Mat3& f, double mu, double lambda, int tetId = -1);

// Precomputes the mass, rest stiffness and Rayleigh damping of a skin mesh.
class FemModel {
 public:
  FemModel(const SkinMesh& mesh, const MaterialParams& material);

  const SkinMesh& mesh() const { return *mesh_; }
  const MaterialParams& material() const { return *material_; }
  const VecX& massDiag() const { return massDiag_; }
  const SpMat& restStiffness() const { return restStiffness_; }
  const SpMat& damping() const { return damping_; }
  double tetMu(int t) const { return material_->lameMu * mesh_->stiffnessScale[t]; }
  double tetLambda(int t) const { return material_->lameLambda * mesh_->stiffnessScale[t]; }

  InternalForceResult internalForces(const VecX& u) const;

  // Energy Hessian (positive semi-definite at rest); equals -d(fd)/du.
  SpMat tangentStiffness(const VecX& u) const;

  ElasticSystemMatrices assembleElasticStep(const SkinState& state, const VecX& gd,
                                            double dt) const;

  // Per-vertex gravity load.
  VecX gravityForce(const Vec3& gravity) const;

  double totalMass() const { return massDiag_.sum() / 3.0; }

 private:
  const SkinMesh* mesh_;
  const MaterialParams* material_;
  VecX massDiag_;  // 3V, repeated per coordinate
  SpMat restStiffness_;
  SpMat damping_;
};

}  // namespace quadplan
