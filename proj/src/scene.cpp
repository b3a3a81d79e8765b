#include "quadplan/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "quadplan/log.hpp"

namespace quadplan {

namespace {

struct Line {
  std::string file;
  int number = 0;
  std::vector<std::string> tokens;

  std::string where() const { return file + ":" + std::to_string(number); }
};

std::vector<Line> readTokenizedLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::vector<Line> out;
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::istringstream is(raw);
    Line line{path, number, {}};
    std::string tok;
    while (is >> tok) line.tokens.push_back(tok);
    if (!line.tokens.empty()) out.push_back(std::move(line));
  }
  return out;
}

double parseDouble(const Line& line, size_t idx) {
  if (idx >= line.tokens.size())
    throw ParseError(line.where() + ": missing value (expected " +
                     std::to_string(idx + 1) + " fields)");
  const std::string& s = line.tokens[idx];
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw ParseError(line.where() + ": bad number '" + s + "'");
  return v;
}

int parseInt(const Line& line, size_t idx) {
  if (idx >= line.tokens.size())
    throw ParseError(line.where() + ": missing integer");
  const std::string& s = line.tokens[idx];
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size())
    throw ParseError(line.where() + ": bad integer '" + s + "'");
  return static_cast<int>(v);
}

Vec3 parseVec3(const Line& line, size_t idx) {
  return Vec3(parseDouble(line, idx), parseDouble(line, idx + 1),
              parseDouble(line, idx + 2));
}

bool isSection(const Line& line) {
  const std::string& t = line.tokens[0];
  return line.tokens.size() == 1 && t.size() >= 2 && t.front() == '[' && t.back() == ']';
}

std::string dirOf(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

}  // namespace

double SkeletonModel::totalMass() const {
  double m = 0.0;
  for (const auto& l : links) m += l.mass;
  return m;
}

int SkeletonModel::linkIndex(const std::string& name) const {
  for (int i = 0; i < numLinks(); ++i)
    if (links[i].name == name) return i;
  return -1;
}

bool SkeletonModel::dofIsFree(int dof) const {
  if (dof < 6) return rootFree[dof];
  const int j = (dof - 6) / 3;
  const int axis = (dof - 6) % 3;
  return joints[j].actuated[axis] || joints[j].freeAxis[axis];
}

std::vector<int> SkeletonModel::freeDofs() const {
  std::vector<int> out;
  for (int d = 0; d < nq(); ++d)
    if (dofIsFree(d)) out.push_back(d);
  return out;
}

std::vector<int> SkeletonModel::actuatedDofs() const {
  std::vector<int> out;
  for (int j = 0; j < numJoints(); ++j)
    for (int a = 0; a < 3; ++a)
      if (joints[j].actuated[a]) out.push_back(jointDof(j, a));
  return out;
}

std::vector<double> SkeletonModel::actuatedLimits() const {
  std::vector<double> out;
  for (int j = 0; j < numJoints(); ++j)
    for (int a = 0; a < 3; ++a)
      if (joints[j].actuated[a]) out.push_back(joints[j].motorLimit[a]);
  return out;
}

std::string SkeletonModel::dofName(int dof) const {
  static const char* rootNames[6] = {"root.tx", "root.ty", "root.tz",
                                     "root.rx", "root.ry", "root.rz"};
  if (dof < 6) return rootNames[dof];
  const int j = (dof - 6) / 3;
  const char axis = "xyz"[(dof - 6) % 3];
  return joints[j].name + ".r" + axis;
}

GeneralizedState GeneralizedState::rest(const SkeletonModel& model) {
  GeneralizedState s;
  s.q = VecX::Zero(model.nq());
  s.qdot = VecX::Zero(model.nq());
  return s;
}

std::string formatG17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void SolverConfig::set(const std::string& key, const std::string& value) {
  auto num = [&]() -> double {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str()) throw ParseError("bad numeric value for " + key);
    return v;
  };
  if (key == "dt") dt = num();
  else if (key == "gravity") {
    std::istringstream is(value);
    if (!(is >> gravity.x() >> gravity.y() >> gravity.z()))
      throw ParseError("gravity expects three numbers");
  } else if (key == "rigid_rayleigh_mass") rigidRayleighMass = num();
  else if (key == "mu") mu = num();
  else if (key == "contact_tolerance") contactTolerance = num();
  else if (key == "penalty_stiffness") penaltyStiffness = num();
  else if (key == "penalty_damping") penaltyDamping = num();
  else if (key == "penalty_envelope") penaltyEnvelope = num();
  else if (key == "glue_residual_tol") glueResidualTol = num();
  else if (key == "glue_projection_rounds") glueProjectionRounds = static_cast<int>(num());
  else if (key == "inversion_retries") inversionRetries = static_cast<int>(num());
  else if (key == "alpha_t") alphaT = num();
  else if (key == "alpha_s") alphaS = num();
  else if (key == "alpha_c") alphaC = num();
  else if (key == "alpha_e") alphaE = num();
  else if (key == "alpha_f") alphaF = num();
  else if (key == "alpha_o") alphaO = num();
  else if (key == "eo_window") eoWindow = static_cast<int>(num());
  else if (key == "frame_alpha_s") frameAlphaS = num();
  else if (key == "frame_alpha_f") frameAlphaF = num();
  else if (key == "frame_alpha_o") frameAlphaO = num();
  else if (key == "frame_alpha_tau") frameAlphaTau = num();
  else if (key == "frame_alpha_c") frameAlphaC = num();
  else if (key == "sqp_max_iterations") sqpMaxIterations = static_cast<int>(num());
  else if (key == "sqp_step_tol") sqpStepTol = num();
  else if (key == "eq_tol") eqTol = num();
  else if (key == "ineq_tol") ineqTol = num();
  else if (key == "cop_buffer") copBuffer = num();
  else if (key == "qpcc_max_flips") qpccMaxFlips = static_cast<int>(num());
  else if (key == "max_outer_iterations") maxOuterIterations = static_cast<int>(num());
  else if (key == "convergence_tol") convergenceTol = num();
  else if (key == "alpha_f_ramp") alphaFRamp = num();
  else if (key == "flight_budget") flightBudget = static_cast<int>(num());
  else if (key == "threads") threads = static_cast<int>(num());
  else throw ParseError("unknown solver config key: " + key);
}

SkinMesh loadMeshFile(const std::string& path) {
  const auto lines = readTokenizedLines(path);
  size_t cursor = 0;
  auto next = [&]() -> const Line& {
    if (cursor >= lines.size()) throw ParseError(path + ": unexpected end of mesh file");
    return lines[cursor++];
  };

  SkinMesh mesh;
  const Line& vcount = next();
  const int nv = parseInt(vcount, 0);
  if (nv <= 0) throw ParseError(vcount.where() + ": vertex count must be positive");
  mesh.restVertices.reserve(nv);
  for (int i = 0; i < nv; ++i) {
    const Line& l = next();
    if (l.tokens.size() != 3) throw ParseError(l.where() + ": expected 'x y z'");
    mesh.restVertices.push_back(parseVec3(l, 0));
  }
  const Line& tcount = next();
  const int nt = parseInt(tcount, 0);
  if (nt <= 0) throw ParseError(tcount.where() + ": tet count must be positive");
  mesh.tets.reserve(nt);
  for (int i = 0; i < nt; ++i) {
    const Line& l = next();
    if (l.tokens.size() != 4) throw ParseError(l.where() + ": expected 4 vertex ids");
    std::array<int, 4> t{};
    for (int k = 0; k < 4; ++k) {
      t[k] = parseInt(l, k);
      if (t[k] < 0 || t[k] >= nv)
        throw ReferenceError(l.where() + ": tet vertex id " + std::to_string(t[k]) +
                             " out of range [0," + std::to_string(nv) + ")");
    }
    mesh.tets.push_back(t);
  }
  mesh.stiffnessScale.assign(nt, 1.0);
  return mesh;
}

TrajectorySpec loadTrajectoryFile(const std::string& path) {
  const auto lines = readTokenizedLines(path);
  TrajectorySpec spec;
  int legs = -1;
  size_t cursor = 0;
  // header
  while (cursor < lines.size()) {
    const Line& l = lines[cursor];
    const std::string& key = l.tokens[0];
    if (key == "frames") spec.frameCount = parseInt(l, 1);
    else if (key == "dt") spec.dt = parseDouble(l, 1);
    else if (key == "legs") legs = parseInt(l, 1);
    else if (key == "periodic") spec.periodic = parseInt(l, 1) != 0;
    else break;
    ++cursor;
  }
  if (spec.frameCount <= 0) throw ParseError(path + ": missing 'frames' header");
  if (legs < 0) throw ParseError(path + ": missing 'legs' header");
  if (spec.dt <= 0) throw ParseError(path + ": dt must be positive");

  const size_t fieldsPerRow = 1 + 3 + 3 * static_cast<size_t>(legs) + static_cast<size_t>(legs);
  spec.comTrajectory.resize(spec.frameCount);
  spec.eeTrajectories.assign(spec.frameCount, std::vector<Vec3>(legs));
  spec.footfall.assign(spec.frameCount, std::vector<int>(legs, 0));
  for (int i = 0; i < spec.frameCount; ++i) {
    if (cursor >= lines.size())
      throw ParseError(path + ": expected " + std::to_string(spec.frameCount) +
                       " frame rows, found " + std::to_string(i));
    const Line& l = lines[cursor++];
    if (l.tokens.size() != fieldsPerRow)
      throw ParseError(l.where() + ": expected " + std::to_string(fieldsPerRow) +
                       " fields per frame row");
    const int idx = parseInt(l, 0);
    if (idx != i) throw ParseError(l.where() + ": frame rows must be 0..N-1 in order");
    spec.comTrajectory[i] = parseVec3(l, 1);
    for (int j = 0; j < legs; ++j)
      spec.eeTrajectories[i][j] = parseVec3(l, 4 + 3 * static_cast<size_t>(j));
    for (int j = 0; j < legs; ++j) {
      const int c = parseInt(l, 4 + 3 * static_cast<size_t>(legs) + j);
      if (c != 0 && c != 1)
        throw ValidationError(l.where() + ": footfall values must be 0 or 1");
      spec.footfall[i][j] = c;
    }
  }
  return spec;
}

void applyConfigFile(SolverConfig& config, const std::string& path) {
  for (const Line& l : readTokenizedLines(path)) {
    if (isSection(l)) continue;  // a bare [solver] header is tolerated
    std::string value;
    for (size_t i = 1; i < l.tokens.size(); ++i) {
      if (i > 1) value += ' ';
      value += l.tokens[i];
    }
    try {
      config.set(l.tokens[0], value);
    } catch (const ParseError& e) {
      throw ParseError(l.where() + ": " + e.what());
    }
  }
}

namespace {

// Rest-pose (q = 0) world transform of every link: all rotations identity.
std::vector<Vec3> restLinkOrigins(const SkeletonModel& model) {
  std::vector<Vec3> origin(model.numLinks(), Vec3::Zero());
  origin[model.rootLink] = -model.links[model.rootLink].comOffset;
  for (const auto& j : model.joints)
    origin[j.childLink] = origin[j.parentLink] + j.originInParent;
  return origin;
}

void orderJointsFromRoot(SkeletonModel& model, const std::string& context) {
  const int numLinks = model.numLinks();
  std::vector<int> parentCount(numLinks, 0);
  for (const auto& j : model.joints) {
    if (j.parentLink < 0 || j.parentLink >= numLinks || j.childLink < 0 ||
        j.childLink >= numLinks)
      throw ReferenceError(context + ": joint '" + j.name + "' references unknown link");
    parentCount[j.childLink]++;
  }
  for (int l = 0; l < numLinks; ++l) {
    if (l == model.rootLink && parentCount[l] != 0)
      throw ValidationError(context + ": root link has a parent joint");
    if (l != model.rootLink && parentCount[l] != 1)
      throw ValidationError(context + ": link '" + model.links[l].name +
                            "' must be the child of exactly one joint (tree)");
  }
  // BFS from the root; also detects unreachable links / cycles.
  std::vector<JointModel> ordered;
  std::vector<bool> visited(numLinks, false);
  visited[model.rootLink] = true;
  std::vector<int> frontier{model.rootLink};
  while (!frontier.empty()) {
    std::vector<int> nextFrontier;
    for (int link : frontier) {
      for (const auto& j : model.joints) {
        if (j.parentLink != link) continue;
        if (visited[j.childLink])
          throw ValidationError(context + ": joint graph contains a cycle at '" +
                                j.name + "'");
        visited[j.childLink] = true;
        ordered.push_back(j);
        nextFrontier.push_back(j.childLink);
      }
    }
    frontier = std::move(nextFrontier);
  }
  for (int l = 0; l < numLinks; ++l)
    if (!visited[l])
      throw ValidationError(context + ": link '" + model.links[l].name +
                            "' is not connected to the root");
  model.joints = std::move(ordered);
  for (auto& link : model.links) {
    link.parentJoint = -1;
    link.childJoints.clear();
  }
  for (int j = 0; j < model.numJoints(); ++j) {
    model.links[model.joints[j].childLink].parentJoint = j;
    model.links[model.joints[j].parentLink].childJoints.push_back(j);
  }
}

}  // namespace

void finalizeSkeleton(SkeletonModel& skeleton) {
  if (skeleton.links.empty()) throw ValidationError("skeleton has no links");
  orderJointsFromRoot(skeleton, "skeleton");
}

void finalizeScene(Scene& scene) {
  SkeletonModel& skel = scene.skeleton;
  SkinMesh& mesh = scene.skin;
  MaterialParams& mat = scene.material;

  if (skel.links.empty()) throw ValidationError("scene has no links");
  orderJointsFromRoot(skel, "skeleton");

  for (const auto& l : skel.links) {
    if (!(l.mass > 0.0))
      throw ValidationError("link '" + l.name + "': mass must be > 0");
    if ((l.inertiaBody - l.inertiaBody.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ValidationError("link '" + l.name + "': inertia tensor not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(l.inertiaBody);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw ValidationError("link '" + l.name + "': inertia tensor not positive definite");
  }

  if (!(mat.youngsModulus > 0.0))
    throw ValidationError("material: youngs_modulus must be > 0");
  if (!(mat.poissonRatio > 0.0 && mat.poissonRatio < 0.5))
    throw ValidationError("material: poisson_ratio must lie in (0, 0.5)");
  if (!(mat.density > 0.0)) throw ValidationError("material: density must be > 0");
  const double mu = MaterialParams::muFrom(mat.youngsModulus, mat.poissonRatio);
  const double lambda = MaterialParams::lambdaFrom(mat.youngsModulus, mat.poissonRatio);
  if (mat.lameMu != 0.0 && std::abs(mat.lameMu - mu) > 1e-12 * std::abs(mu))
    throw ValidationError("material: lame_mu inconsistent with E, nu");
  if (mat.lameLambda != 0.0 && std::abs(mat.lameLambda - lambda) > 1e-12 * std::abs(lambda))
    throw ValidationError("material: lame_lambda inconsistent with E, nu");
  mat.lameMu = mu;
  mat.lameLambda = lambda;

  // Per-tet rest-shape data and lumped masses.
  const int nv = mesh.numVertices();
  const int nt = mesh.numTets();
  if (nv == 0 || nt == 0) throw ValidationError("skin mesh is empty");
  if (static_cast<int>(mesh.stiffnessScale.size()) != nt)
    mesh.stiffnessScale.assign(nt, 1.0);
  mesh.perTetDFdU.resize(nt);
  mesh.tetVolume.resize(nt);
  mesh.vertexMass = VecX::Zero(nv);
  for (int t = 0; t < nt; ++t) {
    const auto& tet = mesh.tets[t];
    Mat3 dm;
    dm.col(0) = mesh.restVertices[tet[1]] - mesh.restVertices[tet[0]];
    dm.col(1) = mesh.restVertices[tet[2]] - mesh.restVertices[tet[0]];
    dm.col(2) = mesh.restVertices[tet[3]] - mesh.restVertices[tet[0]];
    const double vol = dm.determinant() / 6.0;
    if (!(vol > 0.0))
      throw ValidationError("tet " + std::to_string(t) +
                            " has non-positive rest volume (orientation)");
    mesh.tetVolume[t] = vol;
    mesh.perTetDFdU[t] = dm.inverse();
    const double quarter = mat.density * vol / 4.0;
    for (int k = 0; k < 4; ++k) mesh.vertexMass[tet[k]] += quarter;
  }

  // Boundary faces of the tet mesh, oriented outward.
  std::map<std::array<int, 3>, std::pair<int, std::array<int, 3>>> faces;
  auto addFace = [&](int a, int b, int c) {
    std::array<int, 3> key{a, b, c};
    std::sort(key.begin(), key.end());
    auto it = faces.find(key);
    if (it == faces.end())
      faces[key] = {1, {a, b, c}};
    else
      it->second.first++;
  };
  for (const auto& t : mesh.tets) {
    addFace(t[0], t[2], t[1]);
    addFace(t[0], t[1], t[3]);
    addFace(t[0], t[3], t[2]);
    addFace(t[1], t[2], t[3]);
  }
  mesh.surfaceTriangles.clear();
  for (const auto& [key, val] : faces)
    if (val.first == 1) mesh.surfaceTriangles.push_back(val.second);

  std::set<int> surfaceVerts;
  for (const auto& f : mesh.surfaceTriangles)
    surfaceVerts.insert(f.begin(), f.end());
  for (int v : mesh.contactCandidates) {
    if (v < 0 || v >= nv)
      throw ReferenceError("contact candidate vertex id " + std::to_string(v) +
                           " out of range");
    if (!surfaceVerts.count(v))
      throw ValidationError("contact candidate " + std::to_string(v) +
                            " is not a surface vertex");
  }

  // Glue bindings: fill default local coordinates from the rest pose and
  // reject duplicates (they make the condensation Schur complement singular).
  const auto origins = restLinkOrigins(skel);
  std::set<int> glueVerts;
  std::set<std::pair<int, std::array<long long, 3>>> glueTargets;
  for (auto& g : mesh.glueBindings) {
    if (g.vertexId < 0 || g.vertexId >= nv)
      throw ReferenceError("glue vertex id " + std::to_string(g.vertexId) +
                           " out of range [0," + std::to_string(nv) + ")");
    if (g.linkId < 0 || g.linkId >= skel.numLinks())
      throw ReferenceError("glue binding references unknown link");
    if (!glueVerts.insert(g.vertexId).second)
      throw ValidationError("glue vertex " + std::to_string(g.vertexId) +
                            " bound more than once");
    if (!g.localCoord.allFinite())
      g.localCoord = mesh.restVertices[g.vertexId] - origins[g.linkId];
    std::array<long long, 3> quant;
    for (int k = 0; k < 3; ++k)
      quant[k] = static_cast<long long>(std::llround(g.localCoord[k] * 1e12));
    if (!glueTargets.insert({g.linkId, quant}).second)
      throw ValidationError("redundant glue binding (identical target) on link '" +
                            skel.links[g.linkId].name + "' at vertex " +
                            std::to_string(g.vertexId));
  }

  for (const auto& ee : skel.endEffectors) {
    if (ee.link < 0 || ee.link >= skel.numLinks())
      throw ReferenceError("end effector '" + ee.name + "' references unknown link");
    for (int v : ee.soleVertexIds)
      if (v < 0 || v >= nv)
        throw ReferenceError("end effector '" + ee.name + "': sole vertex id " +
                             std::to_string(v) + " out of range");
  }

  // Trajectory consistency.
  const TrajectorySpec& traj = scene.trajectory;
  if (traj.frameCount > 0) {
    if (traj.numLegs() != static_cast<int>(skel.endEffectors.size()))
      throw ValidationError("trajectory has " + std::to_string(traj.numLegs()) +
                            " legs but scene declares " +
                            std::to_string(skel.endEffectors.size()) +
                            " end effectors");
    if (traj.periodic && traj.footfall.front() != traj.footfall.back())
      throw ValidationError("periodic trajectory: footfall at first and last frame differ");
  }
}

Scene loadScene(const std::string& sceneFile, const std::string& trajFile) {
  Scene scene;
  const auto lines = readTokenizedLines(sceneFile);
  std::string section;
  std::map<std::string, int> linkIndexByName;
  struct PendingJoint {
    JointModel j;
    std::string parent, child;
    Line line;
  };
  std::vector<PendingJoint> pendingJoints;
  std::string rootName;
  std::string meshFile;

  auto needLink = [&](const std::string& name, const Line& l) -> int {
    auto it = linkIndexByName.find(name);
    if (it == linkIndexByName.end())
      throw ReferenceError(l.where() + ": unknown link '" + name + "'");
    return it->second;
  };

  for (const Line& l : lines) {
    if (isSection(l)) {
      section = l.tokens[0].substr(1, l.tokens[0].size() - 2);
      continue;
    }
    const std::string& kw = l.tokens[0];
    if (section == "links") {
      if (kw == "link") {
        LinkModel link;
        link.name = l.tokens.size() > 1 ? l.tokens[1] : "";
        size_t i = 2;
        while (i < l.tokens.size()) {
          const std::string& field = l.tokens[i];
          if (field == "mass") {
            link.mass = parseDouble(l, i + 1);
            i += 2;
          } else if (field == "com") {
            link.comOffset = parseVec3(l, i + 1);
            i += 4;
          } else if (field == "inertia") {
            const double xx = parseDouble(l, i + 1), yy = parseDouble(l, i + 2),
                         zz = parseDouble(l, i + 3), xy = parseDouble(l, i + 4),
                         xz = parseDouble(l, i + 5), yz = parseDouble(l, i + 6);
            link.inertiaBody << xx, xy, xz, xy, yy, yz, xz, yz, zz;
            i += 7;
          } else {
            throw ParseError(l.where() + ": unknown link field '" + field + "'");
          }
        }
        if (linkIndexByName.count(link.name))
          throw ValidationError(l.where() + ": duplicate link '" + link.name + "'");
        linkIndexByName[link.name] = scene.skeleton.numLinks();
        scene.skeleton.links.push_back(link);
      } else if (kw == "attach") {
        const int idx = needLink(l.tokens.size() > 1 ? l.tokens[1] : "", l);
        scene.skeleton.links[idx].attachmentPoints.push_back(parseVec3(l, 2));
      } else if (kw == "bracing") {
        const int idx = needLink(l.tokens.size() > 1 ? l.tokens[1] : "", l);
        std::array<Vec3, 3> tri{parseVec3(l, 2), parseVec3(l, 5), parseVec3(l, 8)};
        scene.skeleton.links[idx].bracingTriangles.push_back(tri);
      } else if (kw == "root") {
        rootName = l.tokens.size() > 1 ? l.tokens[1] : "";
        if (l.tokens.size() > 2) {
          if (l.tokens[2] != "free" || l.tokens.size() != 9)
            throw ParseError(l.where() + ": expected 'root <name> [free <6 flags>]'");
          for (int k = 0; k < 6; ++k)
            scene.skeleton.rootFree[k] = parseInt(l, 3 + k) != 0;
        }
      } else {
        throw ParseError(l.where() + ": unknown keyword '" + kw + "' in [links]");
      }
    } else if (section == "joints") {
      if (kw != "joint") throw ParseError(l.where() + ": expected 'joint ...'");
      PendingJoint pj{JointModel{}, "", "", l};
      pj.j.name = l.tokens.size() > 1 ? l.tokens[1] : "";
      pj.parent = l.tokens.size() > 2 ? l.tokens[2] : "";
      pj.child = l.tokens.size() > 3 ? l.tokens[3] : "";
      size_t i = 4;
      while (i < l.tokens.size()) {
        const std::string& field = l.tokens[i];
        if (field == "origin") {
          pj.j.originInParent = parseVec3(l, i + 1);
          i += 4;
        } else if (field == "actuated") {
          for (int k = 0; k < 3; ++k) pj.j.actuated[k] = parseInt(l, i + 1 + k) != 0;
          i += 4;
        } else if (field == "limit") {
          for (int k = 0; k < 3; ++k) pj.j.motorLimit[k] = parseDouble(l, i + 1 + k);
          i += 4;
        } else if (field == "free") {
          for (int k = 0; k < 3; ++k) pj.j.freeAxis[k] = parseInt(l, i + 1 + k) != 0;
          i += 4;
        } else {
          throw ParseError(l.where() + ": unknown joint field '" + field + "'");
        }
      }
      pendingJoints.push_back(std::move(pj));
    } else if (section == "material") {
      if (l.tokens.size() != 2) throw ParseError(l.where() + ": expected 'key value'");
      const double v = parseDouble(l, 1);
      if (kw == "youngs_modulus") scene.material.youngsModulus = v;
      else if (kw == "poisson_ratio") scene.material.poissonRatio = v;
      else if (kw == "density") scene.material.density = v;
      else if (kw == "rayleigh_mass") scene.material.rayleighMass = v;
      else if (kw == "rayleigh_stiffness") scene.material.rayleighStiffness = v;
      else if (kw == "lame_mu") scene.material.lameMu = v;
      else if (kw == "lame_lambda") scene.material.lameLambda = v;
      else throw ParseError(l.where() + ": unknown material key '" + kw + "'");
    } else if (section == "skin") {
      if (kw == "mesh") {
        if (l.tokens.size() != 2) throw ParseError(l.where() + ": expected 'mesh <path>'");
        meshFile = l.tokens[1];
      } else if (kw == "contact_candidates") {
        for (size_t i = 1; i < l.tokens.size(); ++i)
          scene.skin.contactCandidates.push_back(parseInt(l, i));
      } else if (kw == "stiffness_scale") {
        // stored raw here; range-checked in finalizeScene once the mesh is known
        const int tet = parseInt(l, 1);
        const double s = parseDouble(l, 2);
        if (tet < 0) throw ReferenceError(l.where() + ": negative tet id");
        if (static_cast<size_t>(tet) >= scene.skin.stiffnessScale.size())
          scene.skin.stiffnessScale.resize(tet + 1, 1.0);
        scene.skin.stiffnessScale[tet] = s;
      } else {
        throw ParseError(l.where() + ": unknown keyword '" + kw + "' in [skin]");
      }
    } else if (section == "glue") {
      if (kw != "glue") throw ParseError(l.where() + ": expected 'glue ...'");
      GlueBinding g;
      g.vertexId = parseInt(l, 1);
      g.linkId = needLink(l.tokens.size() > 2 ? l.tokens[2] : "", l);
      if (l.tokens.size() == 6) g.localCoord = parseVec3(l, 3);
      else if (l.tokens.size() != 3)
        throw ParseError(l.where() + ": expected 'glue <vertex> <link> [x y z]'");
      scene.skin.glueBindings.push_back(g);
    } else if (section == "end_effectors") {
      if (kw != "ee") throw ParseError(l.where() + ": expected 'ee ...'");
      EndEffector ee;
      ee.name = l.tokens.size() > 1 ? l.tokens[1] : "";
      ee.link = needLink(l.tokens.size() > 2 ? l.tokens[2] : "", l);
      size_t i = 3;
      while (i < l.tokens.size()) {
        const std::string& field = l.tokens[i];
        if (field == "marker") {
          ee.contactMarker = parseVec3(l, i + 1);
          i += 4;
        } else if (field == "sole_up") {
          ee.soleUp = parseVec3(l, i + 1);
          i += 4;
        } else if (field == "sole") {
          for (++i; i < l.tokens.size(); ++i)
            ee.soleVertexIds.push_back(parseInt(l, i));
        } else {
          throw ParseError(l.where() + ": unknown end-effector field '" + field + "'");
        }
      }
      scene.skeleton.endEffectors.push_back(std::move(ee));
    } else if (section == "solver") {
      std::string value;
      for (size_t i = 1; i < l.tokens.size(); ++i) {
        if (i > 1) value += ' ';
        value += l.tokens[i];
      }
      try {
        scene.config.set(kw, value);
      } catch (const ParseError& e) {
        throw ParseError(l.where() + ": " + e.what());
      }
    } else {
      throw ParseError(l.where() + ": content outside any known section");
    }
  }

  if (rootName.empty()) throw ValidationError(sceneFile + ": no 'root' declared in [links]");
  auto rootIt = linkIndexByName.find(rootName);
  if (rootIt == linkIndexByName.end())
    throw ReferenceError(sceneFile + ": root link '" + rootName + "' not defined");
  scene.skeleton.rootLink = rootIt->second;

  for (const auto& pj : pendingJoints) {
    JointModel j = pj.j;
    j.parentLink = needLink(pj.parent, pj.line);
    j.childLink = needLink(pj.child, pj.line);
    scene.skeleton.joints.push_back(j);
  }

  if (meshFile.empty()) throw ParseError(sceneFile + ": [skin] must name a mesh file");
  const std::string meshPath =
      meshFile.front() == '/' ? meshFile : dirOf(sceneFile) + "/" + meshFile;
  SkinMesh loaded = loadMeshFile(meshPath);
  loaded.glueBindings = std::move(scene.skin.glueBindings);
  loaded.contactCandidates = std::move(scene.skin.contactCandidates);
  if (scene.skin.stiffnessScale.size() > loaded.tets.size())
    throw ReferenceError(sceneFile + ": stiffness_scale names a tet beyond mesh size");
  for (size_t t = 0; t < scene.skin.stiffnessScale.size(); ++t)
    loaded.stiffnessScale[t] = scene.skin.stiffnessScale[t];
  scene.skin = std::move(loaded);

  scene.trajectory = loadTrajectoryFile(trajFile);
  finalizeScene(scene);
  return scene;
}

std::vector<std::string> validateFootfall(const TrajectorySpec& spec,
                                          const SkeletonModel& skeleton,
                                          int flightBudget) {
  std::vector<std::string> warnings;
  const int n = spec.frameCount;
  const int legs = spec.numLegs();
  if (static_cast<int>(skeleton.endEffectors.size()) != legs)
    warnings.push_back("trajectory legs do not match scene end effectors");

  for (int j = 0; j < legs; ++j) {
    int run = 1;
    bool warned = false;
    for (int i = 1; i <= n && !warned; ++i) {
      if (i < n && spec.footfall[i][j] == spec.footfall[i - 1][j]) {
        ++run;
        continue;
      }
      const int runStart = i - run;
      if (run < 2 && i < n) {
        warnings.push_back("leg " + std::to_string(j) + " (" +
                           (j < static_cast<int>(skeleton.endEffectors.size())
                                ? skeleton.endEffectors[j].name
                                : "?") +
                           ") chatters: contact run of 1 frame at frame " +
                           std::to_string(runStart));
        warned = true;
      }
      run = 1;
    }
  }

  int flightStart = -1;
  for (int i = 0; i <= n; ++i) {
    bool grounded = false;
    if (i < n)
      for (int j = 0; j < legs; ++j) grounded = grounded || spec.footfall[i][j] == 1;
    if (i < n && !grounded) {
      if (flightStart < 0) flightStart = i;
      continue;
    }
    if (flightStart >= 0) {
      const int len = i - flightStart;
      if (len > flightBudget)
        warnings.push_back("flight phase of " + std::to_string(len) +
                           " frames starting at frame " + std::to_string(flightStart) +
                           " exceeds budget " + std::to_string(flightBudget));
      flightStart = -1;
    }
  }
  return warnings;
}

namespace {

void writeVec3(std::ostream& os, const Vec3& v) {
  os << formatG17(v.x()) << ' ' << formatG17(v.y()) << ' ' << formatG17(v.z());
}

}  // namespace

void saveMeshFile(const SkinMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot write " + path);
  os << mesh.numVertices() << "\n";
  for (const auto& v : mesh.restVertices) {
    writeVec3(os, v);
    os << "\n";
  }
  os << mesh.numTets() << "\n";
  for (const auto& t : mesh.tets)
    os << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << "\n";
}

void saveTrajectoryFile(const TrajectorySpec& spec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot write " + path);
  os << "frames " << spec.frameCount << "\n";
  os << "dt " << formatG17(spec.dt) << "\n";
  os << "legs " << spec.numLegs() << "\n";
  os << "periodic " << (spec.periodic ? 1 : 0) << "\n";
  for (int i = 0; i < spec.frameCount; ++i) {
    os << i << ' ';
    writeVec3(os, spec.comTrajectory[i]);
    for (int j = 0; j < spec.numLegs(); ++j) {
      os << ' ';
      writeVec3(os, spec.eeTrajectories[i][j]);
    }
    for (int j = 0; j < spec.numLegs(); ++j) os << ' ' << spec.footfall[i][j];
    os << "\n";
  }
}

void saveSceneFile(const Scene& scene, const std::string& sceneFile,
                   const std::string& meshFileName) {
  std::ofstream os(sceneFile);
  if (!os) throw ParseError("cannot write " + sceneFile);
  const SkeletonModel& skel = scene.skeleton;

  os << "[links]\n";
  for (const auto& l : skel.links) {
    os << "link " << l.name << " mass " << formatG17(l.mass) << " com ";
    writeVec3(os, l.comOffset);
    os << " inertia " << formatG17(l.inertiaBody(0, 0)) << ' '
       << formatG17(l.inertiaBody(1, 1)) << ' ' << formatG17(l.inertiaBody(2, 2)) << ' '
       << formatG17(l.inertiaBody(0, 1)) << ' ' << formatG17(l.inertiaBody(0, 2)) << ' '
       << formatG17(l.inertiaBody(1, 2)) << "\n";
  }
  for (const auto& l : skel.links) {
    for (const auto& p : l.attachmentPoints) {
      os << "attach " << l.name << ' ';
      writeVec3(os, p);
      os << "\n";
    }
    for (const auto& tri : l.bracingTriangles) {
      os << "bracing " << l.name;
      for (const auto& p : tri) {
        os << ' ';
        writeVec3(os, p);
      }
      os << "\n";
    }
  }
  os << "root " << skel.links[skel.rootLink].name << " free";
  for (int k = 0; k < 6; ++k) os << ' ' << (skel.rootFree[k] ? 1 : 0);
  os << "\n";

  os << "\n[joints]\n";
  for (const auto& j : skel.joints) {
    os << "joint " << j.name << ' ' << skel.links[j.parentLink].name << ' '
       << skel.links[j.childLink].name << " origin ";
    writeVec3(os, j.originInParent);
    os << " actuated";
    for (int k = 0; k < 3; ++k) os << ' ' << (j.actuated[k] ? 1 : 0);
    os << " limit";
    for (int k = 0; k < 3; ++k) os << ' ' << formatG17(j.motorLimit[k]);
    os << " free";
    for (int k = 0; k < 3; ++k) os << ' ' << (j.freeAxis[k] ? 1 : 0);
    os << "\n";
  }

  const MaterialParams& m = scene.material;
  os << "\n[material]\n";
  os << "youngs_modulus " << formatG17(m.youngsModulus) << "\n";
  os << "poisson_ratio " << formatG17(m.poissonRatio) << "\n";
  os << "density " << formatG17(m.density) << "\n";
  os << "rayleigh_mass " << formatG17(m.rayleighMass) << "\n";
  os << "rayleigh_stiffness " << formatG17(m.rayleighStiffness) << "\n";

  os << "\n[skin]\n";
  os << "mesh " << meshFileName << "\n";
  if (!scene.skin.contactCandidates.empty()) {
    os << "contact_candidates";
    for (int v : scene.skin.contactCandidates) os << ' ' << v;
    os << "\n";
  }
  for (int t = 0; t < scene.skin.numTets(); ++t)
    if (scene.skin.stiffnessScale[t] != 1.0)
      os << "stiffness_scale " << t << ' ' << formatG17(scene.skin.stiffnessScale[t])
         << "\n";

  os << "\n[glue]\n";
  for (const auto& g : scene.skin.glueBindings) {
    os << "glue " << g.vertexId << ' ' << skel.links[g.linkId].name << ' ';
    writeVec3(os, g.localCoord);
    os << "\n";
  }

  os << "\n[end_effectors]\n";
  for (const auto& ee : skel.endEffectors) {
    os << "ee " << ee.name << ' ' << skel.links[ee.link].name << " marker ";
    writeVec3(os, ee.contactMarker);
    os << " sole_up ";
    writeVec3(os, ee.soleUp);
    os << " sole";
    for (int v : ee.soleVertexIds) os << ' ' << v;
    os << "\n";
  }

  const SolverConfig& c = scene.config;
  os << "\n[solver]\n";
  os << "dt " << formatG17(c.dt) << "\n";
  os << "gravity " << formatG17(c.gravity.x()) << ' ' << formatG17(c.gravity.y()) << ' '
     << formatG17(c.gravity.z()) << "\n";
  os << "rigid_rayleigh_mass " << formatG17(c.rigidRayleighMass) << "\n";
  os << "mu " << formatG17(c.mu) << "\n";
  os << "contact_tolerance " << formatG17(c.contactTolerance) << "\n";
  os << "penalty_stiffness " << formatG17(c.penaltyStiffness) << "\n";
  os << "penalty_damping " << formatG17(c.penaltyDamping) << "\n";
  os << "penalty_envelope " << formatG17(c.penaltyEnvelope) << "\n";
}

}  // namespace quadplan
