#include "quadplan/fixtures.hpp"

#include <cmath>

#include "quadplan/fem.hpp"
#include "quadplan/multibody.hpp"

namespace quadplan {
namespace fixtures {

MaterialParams rubber() {
  MaterialParams m;
  m.youngsModulus = 0.09e9;
  m.poissonRatio = 0.46;
  m.density = 1070.0;
  m.rayleighMass = 0.1;
  m.rayleighStiffness = 0.002;
  return m;
}

MaterialParams softRubber(double youngs, double nu, double density) {
  MaterialParams m;
  m.youngsModulus = youngs;
  m.poissonRatio = nu;
  m.density = density;
  m.rayleighMass = 0.1;
  m.rayleighStiffness = 0.002;
  return m;
}

Mat3 boxInertia(double mass, const Vec3& e) {
  Mat3 i = Mat3::Zero();
  i(0, 0) = mass / 12.0 * (e.y() * e.y() + e.z() * e.z());
  i(1, 1) = mass / 12.0 * (e.x() * e.x() + e.z() * e.z());
  i(2, 2) = mass / 12.0 * (e.x() * e.x() + e.y() * e.y());
  return i;
}

SkinMesh singleTet(double scale) {
  SkinMesh mesh;
  mesh.restVertices = {Vec3(0, 0, 0), Vec3(scale, 0, 0), Vec3(0, scale, 0),
                       Vec3(0, 0, scale)};
  mesh.tets = {{0, 1, 2, 3}};
  mesh.stiffnessScale = {1.0};
  return mesh;
}

SkinMesh boxMesh(const Eigen::Vector3i& cells, const Vec3& corner, const Vec3& size) {
  SkinMesh mesh;
  const int ny = cells.y() + 1, nz = cells.z() + 1;
  auto vid = [&](int i, int j, int k) { return (i * ny + j) * nz + k; };
  for (int i = 0; i <= cells.x(); ++i)
    for (int j = 0; j <= cells.y(); ++j)
      for (int k = 0; k <= cells.z(); ++k)
        mesh.restVertices.push_back(corner + Vec3(size.x() * i / cells.x(),
                                                  size.y() * j / cells.y(),
                                                  size.z() * k / cells.z()));
  // Kuhn split: 6 tets per cell around the main diagonal, conforming across cells.
  static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                  {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int i = 0; i < cells.x(); ++i)
    for (int j = 0; j < cells.y(); ++j)
      for (int k = 0; k < cells.z(); ++k)
        for (const auto& p : perms) {
          int a[3] = {i, j, k};
          std::array<int, 4> tet{};
          tet[0] = vid(a[0], a[1], a[2]);
          for (int s = 0; s < 3; ++s) {
            a[p[s]] += 1;
            tet[s + 1] = vid(a[0], a[1], a[2]);
          }
          Mat3 dm;
          for (int c = 0; c < 3; ++c)
            dm.col(c) = mesh.restVertices[tet[c + 1]] - mesh.restVertices[tet[0]];
          if (dm.determinant() < 0) std::swap(tet[2], tet[3]);
          mesh.tets.push_back(tet);
        }
  mesh.stiffnessScale.assign(mesh.tets.size(), 1.0);
  return mesh;
}

SkeletonModel singleFreeLink(double mass, const Vec3& fullExtents) {
  SkeletonModel s;
  LinkModel link;
  link.name = "body";
  link.mass = mass;
  link.inertiaBody = boxInertia(mass, fullExtents);
  link.comOffset = Vec3::Zero();
  s.links.push_back(link);
  s.rootLink = 0;
  return s;
}

SkeletonModel doublePendulum(const PendulumParams& p) {
  SkeletonModel s;
  LinkModel base;
  base.name = "base";
  base.mass = 1.0;
  base.inertiaBody = Mat3::Identity() * 1e-3;
  s.links.push_back(base);

  LinkModel l1;
  l1.name = "link1";
  l1.mass = p.m1;
  l1.inertiaBody = Mat3::Identity() * 1e-8;
  l1.inertiaBody(2, 2) = p.i1;
  l1.comOffset = Vec3(0, -p.lc1, 0);
  s.links.push_back(l1);

  LinkModel l2 = l1;
  l2.name = "link2";
  l2.mass = p.m2;
  l2.inertiaBody(2, 2) = p.i2;
  l2.comOffset = Vec3(0, -p.lc2, 0);
  s.links.push_back(l2);

  JointModel j1;
  j1.name = "shoulder";
  j1.parentLink = 0;
  j1.childLink = 1;
  j1.originInParent = Vec3::Zero();
  j1.freeAxis = {false, false, true};
  s.joints.push_back(j1);

  JointModel j2;
  j2.name = "elbow";
  j2.parentLink = 1;
  j2.childLink = 2;
  j2.originInParent = Vec3(0, -p.l1, 0);
  j2.freeAxis = {false, false, true};
  s.joints.push_back(j2);

  s.rootLink = 0;
  s.rootFree = {false, false, false, false, false, false};
  finalizeSkeleton(s);
  return s;
}

SkeletonModel chain(int numJoints) {
  SkeletonModel s;
  LinkModel root;
  root.name = "root";
  root.mass = 1.5;
  root.inertiaBody = boxInertia(root.mass, Vec3(0.2, 0.1, 0.15));
  root.comOffset = Vec3(0.01, -0.02, 0.03);
  root.attachmentPoints = {Vec3(0.05, 0.02, -0.03), Vec3(-0.04, 0.01, 0.06)};
  s.links.push_back(root);
  s.rootLink = 0;

  for (int j = 0; j < numJoints; ++j) {
    LinkModel link;
    link.name = "link" + std::to_string(j + 1);
    link.mass = 0.4 + 0.13 * j;
    link.inertiaBody = boxInertia(link.mass, Vec3(0.05 + 0.01 * j, 0.12, 0.06));
    link.comOffset = Vec3(0.01 * (j % 3), -0.05 - 0.01 * j, 0.008 * (j % 2));
    link.attachmentPoints = {Vec3(0.02, -0.03, 0.01)};
    s.links.push_back(link);

    JointModel joint;
    joint.name = "j" + std::to_string(j + 1);
    joint.parentLink = j / 2;  // branching tree
    joint.childLink = j + 1;
    joint.originInParent = Vec3(0.03 * ((j % 3) - 1), -0.11, 0.04 * (j % 2));
    joint.freeAxis = {true, true, true};
    s.joints.push_back(joint);
  }
  finalizeSkeleton(s);
  return s;
}

Scene coupledBody(bool singleTetSkin) {
  Scene scene;
  scene.skeleton = singleFreeLink(1.0, Vec3(0.1, 0.1, 0.1));
  if (singleTetSkin) {
    scene.skin = singleTet(0.08);
    for (auto& v : scene.skin.restVertices) v += Vec3(-0.02, -0.13, -0.02);
  } else {
    scene.skin = boxMesh(Eigen::Vector3i(2, 2, 2), Vec3(-0.04, -0.16, -0.04),
                         Vec3(0.08, 0.06, 0.08));
  }
  if (singleTetSkin) {
    GlueBinding g;
    g.vertexId = 0;
    g.linkId = 0;
    scene.skin.glueBindings.push_back(g);
  } else {
    // four top corners of the 3x3x3 grid: (i*3 + j)*3 + k with j = 2
    for (int v : {6, 8, 24, 26}) {
      GlueBinding g;
      g.vertexId = v;
      g.linkId = 0;
      scene.skin.glueBindings.push_back(g);
    }
  }
  scene.material = softRubber();
  finalizeScene(scene);
  return scene;
}

Scene blockOnGround() {
  Scene scene;
  scene.skeleton = singleFreeLink(0.8, Vec3(0.1, 0.06, 0.1));
  // Authored at q = 0 (link COM at the origin): the pad spans y in
  // [-0.05, -0.03]; resting on the ground means root height q_y = 0.05.
  scene.skin = boxMesh(Eigen::Vector3i(2, 1, 2), Vec3(-0.06, -0.05, -0.06),
                       Vec3(0.12, 0.02, 0.12));
  const int ny = 2, nz = 3;
  auto vid = [&](int i, int j, int k) { return (i * ny + j) * nz + k; };
  EndEffector ee;
  ee.name = "pad";
  ee.link = 0;
  ee.contactMarker = Vec3(0, -0.05, 0);
  ee.soleUp = Vec3(0, 1, 0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) {
      const int bottom = vid(i, 0, k);
      const int top = vid(i, 1, k);
      ee.soleVertexIds.push_back(bottom);
      scene.skin.contactCandidates.push_back(bottom);
      GlueBinding g;
      g.vertexId = top;
      g.linkId = 0;
      scene.skin.glueBindings.push_back(g);
    }
  scene.skeleton.endEffectors.push_back(ee);
  scene.material = softRubber(5e4, 0.3, 1000);
  finalizeScene(scene);
  return scene;
}

namespace {

void appendBox(SkinMesh& into, const SkinMesh& piece) {
  const int off = into.numVertices();
  into.restVertices.insert(into.restVertices.end(), piece.restVertices.begin(),
                           piece.restVertices.end());
  for (auto t : piece.tets) {
    for (auto& v : t) v += off;
    into.tets.push_back(t);
  }
  into.stiffnessScale.insert(into.stiffnessScale.end(), piece.stiffnessScale.begin(),
                             piece.stiffnessScale.end());
}

}  // namespace

Scene microQuad(Gait gait, int frames) {
  Scene scene;
  SkeletonModel& s = scene.skeleton;

  const double torsoMass = 1.0;
  const Vec3 torsoExt(0.24, 0.06, 0.16);
  const double upperLen = 0.07, lowerLen = 0.07;
  const double hipY = -0.03;
  const double bootH = 0.02, bootW = 0.04;
  const double soleDrop = 0.016;  // sole below the foot point
  // operating torso height: soles touch y = 0 there
  const double restHeight = -hipY + upperLen + lowerLen + soleDrop;  // 0.186

  LinkModel torso;
  torso.name = "torso";
  torso.mass = torsoMass;
  torso.inertiaBody = boxInertia(torsoMass, torsoExt);
  s.links.push_back(torso);
  s.rootLink = 0;

  const char* legName[4] = {"FL", "FR", "HL", "HR"};
  const double legX[4] = {0.09, 0.09, -0.09, -0.09};
  const double legZ[4] = {0.06, -0.06, 0.06, -0.06};

  for (int leg = 0; leg < 4; ++leg) {
    LinkModel upper;
    upper.name = std::string("upper") + legName[leg];
    upper.mass = 0.06;
    upper.inertiaBody = boxInertia(upper.mass, Vec3(0.02, upperLen, 0.02));
    upper.comOffset = Vec3(0, -upperLen / 2, 0);
    s.links.push_back(upper);

    LinkModel lower = upper;
    lower.name = std::string("lower") + legName[leg];
    lower.mass = 0.05;
    lower.inertiaBody = boxInertia(lower.mass, Vec3(0.02, lowerLen, 0.02));
    lower.comOffset = Vec3(0, -lowerLen / 2, 0);
    s.links.push_back(lower);

    JointModel hip;
    hip.name = std::string("hip") + legName[leg];
    hip.parentLink = 0;
    hip.childLink = 1 + 2 * leg;
    hip.originInParent = Vec3(legX[leg], hipY, legZ[leg]);
    hip.actuated = {false, false, true};
    hip.motorLimit = {0, 0, 1.96};
    s.joints.push_back(hip);

    JointModel knee;
    knee.name = std::string("knee") + legName[leg];
    knee.parentLink = 1 + 2 * leg;
    knee.childLink = 2 + 2 * leg;
    knee.originInParent = Vec3(0, -upperLen, 0);
    knee.actuated = {false, false, true};
    knee.motorLimit = {0, 0, 1.96};
    s.joints.push_back(knee);
  }

  // Skin pieces, authored at q = 0 (torso COM at the origin): four boots
  // around the feet and a blanket on the torso top.
  SkinMesh skin;
  const Eigen::Vector3i bootCells(2, 2, 2);
  const int bootVerts = 27;
  const double footY = hipY - upperLen - lowerLen;  // -0.17
  for (int leg = 0; leg < 4; ++leg) {
    SkinMesh boot =
        boxMesh(bootCells, Vec3(legX[leg] - bootW / 2, footY - soleDrop, legZ[leg] - bootW / 2),
                Vec3(bootW, bootH, bootW));
    appendBox(skin, boot);
  }
  const Eigen::Vector3i blanketCells(8, 2, 6);
  SkinMesh blanket =
      boxMesh(blanketCells, Vec3(-0.13, 0.03, -0.09), Vec3(0.26, 0.02, 0.18));
  appendBox(skin, blanket);
  scene.skin = std::move(skin);

  auto bootVid = [&](int leg, int i, int j, int k) {
    return leg * bootVerts + (i * 3 + j) * 3 + k;
  };
  for (int leg = 0; leg < 4; ++leg) {
    EndEffector ee;
    ee.name = std::string("foot") + legName[leg];
    ee.link = 2 + 2 * leg;
    ee.contactMarker = Vec3(0, -lowerLen - soleDrop, 0);
    ee.soleUp = Vec3(0, 1, 0);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) {
        const int sole = bootVid(leg, i, 0, k);
        const int top = bootVid(leg, i, 2, k);
        ee.soleVertexIds.push_back(sole);
        scene.skin.contactCandidates.push_back(sole);
        GlueBinding g;
        g.vertexId = top;
        g.linkId = 2 + 2 * leg;
        scene.skin.glueBindings.push_back(g);
      }
    s.endEffectors.push_back(ee);
  }
  const int blanketBase = 4 * bootVerts;
  const int bny = blanketCells.y() + 1, bnz = blanketCells.z() + 1;
  for (int i = 0; i <= blanketCells.x(); i += 2)
    for (int k = 0; k <= blanketCells.z(); k += 2) {
      GlueBinding g;
      g.vertexId = blanketBase + (i * bny + 0) * bnz + k;
      g.linkId = 0;
      scene.skin.glueBindings.push_back(g);
    }

  scene.material = rubber();
  scene.config.dt = 0.005;
  finalizeScene(scene);

  // Whole-robot COM at the operating rest state (root lifted to restHeight).
  GeneralizedState op = GeneralizedState::rest(s);
  op.q[1] = restHeight;
  KinematicsCache cache(s, op.q, op.qdot);
  double mTot = 0.0;
  Vec3 com = Vec3::Zero();
  for (int k = 0; k < s.numLinks(); ++k) {
    com += s.links[k].mass * cache.linkCom(k);
    mTot += s.links[k].mass;
  }
  for (int v = 0; v < scene.skin.numVertices(); ++v) {
    const Vec3 x = scene.skin.restVertices[v] + Vec3(0, restHeight, 0);
    com += scene.skin.vertexMass[v] * x;
    mTot += scene.skin.vertexMass[v];
  }
  com /= mTot;

  // ---- gait trajectory ----
  TrajectorySpec traj;
  traj.dt = scene.config.dt;
  traj.periodic = false;

  if (gait == Gait::Stand) {
    traj.frameCount = frames > 0 ? frames : 40;
    for (int i = 0; i < traj.frameCount; ++i) {
      traj.comTrajectory.push_back(com);
      std::vector<Vec3> ee(4);
      std::vector<int> c(4, 1);
      for (int leg = 0; leg < 4; ++leg) ee[leg] = Vec3(legX[leg], 0.0, legZ[leg]);
      traj.eeTrajectories.push_back(ee);
      traj.footfall.push_back(c);
    }
  } else if (gait == Gait::Walk) {
    // crawl: one leg swings at a time with all-stance gaps between swings
    const int swing = 10, gap = 4, lead = 6;
    const double stride = 0.03, stepHeight = 0.012;
    const int order[4] = {0, 3, 1, 2};  // FL, HR, FR, HL
    const int cycle = lead + 4 * (swing + gap);
    traj.frameCount = frames > 0 ? frames : cycle;
    std::vector<double> footX(4);
    for (int leg = 0; leg < 4; ++leg) footX[leg] = legX[leg];
    const double comSpeed = stride / (4.0 * (swing + gap));
    for (int i = 0; i < traj.frameCount; ++i) {
      std::vector<Vec3> ee(4);
      std::vector<int> c(4, 1);
      const int t = i - lead;
      const double comX = t >= 0 ? comSpeed * t : 0.0;
      for (int leg = 0; leg < 4; ++leg) ee[leg] = Vec3(footX[leg], 0.0, legZ[leg]);
      if (t >= 0) {
        const int phase = t % (4 * (swing + gap));
        const int slot = phase / (swing + gap);
        const int ph = phase % (swing + gap);
        const int leg = order[slot];
        if (ph < swing) {
          const double sfrac = (ph + 1.0) / swing;
          c[leg] = 0;
          ee[leg] = Vec3(footX[leg] + stride * sfrac,
                         stepHeight * std::sin(M_PI * sfrac), legZ[leg]);
          if (ph == swing - 1) {
            footX[leg] += stride;
            ee[leg] = Vec3(footX[leg], 0.0, legZ[leg]);
          }
        }
      }
      traj.comTrajectory.push_back(com + Vec3(comX, 0, 0));
      traj.eeTrajectories.push_back(ee);
      traj.footfall.push_back(c);
    }
  } else {  // Trot: diagonal pairs alternate with no all-stance gap
    const int half = 12, lead = 6;
    const double stride = 0.05, stepHeight = 0.015;
    const int cycle = lead + 4 * half;
    traj.frameCount = frames > 0 ? frames : cycle;
    std::vector<double> footX(4);
    for (int leg = 0; leg < 4; ++leg) footX[leg] = legX[leg];
    const double comSpeed = stride / (2.0 * half);
    for (int i = 0; i < traj.frameCount; ++i) {
      std::vector<Vec3> ee(4);
      std::vector<int> c(4, 1);
      const int t = i - lead;
      const double comX = t >= 0 ? comSpeed * t : 0.0;
      for (int leg = 0; leg < 4; ++leg) ee[leg] = Vec3(footX[leg], 0.0, legZ[leg]);
      if (t >= 0) {
        const int pair = (t / half) % 2;  // 0: FL+HR swing, 1: FR+HL swing
        const int ph = t % half;
        for (int leg = 0; leg < 4; ++leg) {
          const bool diag = (leg == 0 || leg == 3);
          if ((pair == 0) != diag) continue;
          const double sfrac = (ph + 1.0) / half;
          c[leg] = 0;
          ee[leg] = Vec3(footX[leg] + stride * sfrac,
                         stepHeight * std::sin(M_PI * sfrac), legZ[leg]);
          if (ph == half - 1) {
            footX[leg] += stride;
            ee[leg] = Vec3(footX[leg], 0.0, legZ[leg]);
          }
        }
      }
      traj.comTrajectory.push_back(com + Vec3(comX, 0, 0));
      traj.eeTrajectories.push_back(ee);
      traj.footfall.push_back(c);
    }
  }
  scene.trajectory = traj;
  return scene;
}

std::string writeFixture(const Scene& scene, const std::string& dir,
                         const std::string& name) {
  const std::string scenePath = dir + "/" + name + ".scene";
  saveSceneFile(scene, scenePath, name + ".mesh");
  saveMeshFile(scene.skin, dir + "/" + name + ".mesh");
  saveTrajectoryFile(scene.trajectory, dir + "/" + name + ".traj");
  return scenePath;
}

}  // namespace fixtures
}  // namespace quadplan
