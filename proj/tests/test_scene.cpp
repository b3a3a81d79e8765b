#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "quadplan/fixtures.hpp"
#include "quadplan/scene.hpp"

using namespace quadplan;
namespace fs = std::filesystem;

namespace {

fs::path tempDir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "quadplan_scene_tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TrajectorySpec emptyTrajectory(int frames, int legs) {
  TrajectorySpec t;
  t.frameCount = frames;
  t.comTrajectory.assign(frames, Vec3::Zero());
  t.eeTrajectories.assign(frames, std::vector<Vec3>(legs, Vec3::Zero()));
  t.footfall.assign(frames, std::vector<int>(legs, 1));
  return t;
}

}  // namespace

TEST(Scene, LameConversionMatchesHandValues) {
  // E = 0.09 GPa, nu = 0.46
  const double mu = MaterialParams::muFrom(0.09e9, 0.46);
  const double lambda = MaterialParams::lambdaFrom(0.09e9, 0.46);
  EXPECT_NEAR(mu, 3.082e7, 1e4);
  EXPECT_NEAR(lambda, 3.544e8, 1e5);
  // exact formulas
  EXPECT_NEAR(mu, 0.09e9 / (2.0 * 1.46), 1e-6);
  EXPECT_NEAR(lambda, 0.09e9 * 0.46 / (1.46 * 0.08), 1e-3);
}

TEST(Scene, SingleTetLumpedMasses) {
  Scene scene = fixtures::coupledBody(true);
  ASSERT_EQ(scene.skin.numTets(), 1);
  ASSERT_EQ(scene.skin.numVertices(), 4);
  const double vol = scene.skin.tetVolume[0];
  for (int v = 0; v < 4; ++v)
    EXPECT_NEAR(scene.skin.vertexMass[v], scene.material.density * vol / 4.0, 1e-15);
}

TEST(Scene, LumpedMassesSumToDensityTimesVolume) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand);
  double vol = 0.0;
  for (double v : scene.skin.tetVolume) vol += v;
  const double total = scene.skin.vertexMass.sum();
  EXPECT_NEAR(total, scene.material.density * vol, 1e-10 * scene.material.density * vol);
}

TEST(Scene, LameConsistencyEnforcedOnLoad) {
  Scene scene = fixtures::coupledBody(true);
  const double mu = scene.material.lameMu;
  EXPECT_NEAR(mu,
              MaterialParams::muFrom(scene.material.youngsModulus,
                                     scene.material.poissonRatio),
              1e-12 * mu);
  scene.material.lameMu = mu * 1.01;  // now inconsistent
  EXPECT_THROW(finalizeScene(scene), ValidationError);
}

TEST(Scene, DanglingGlueReferenceRejected) {
  Scene scene = fixtures::coupledBody(true);
  GlueBinding g;
  g.vertexId = 99;  // beyond mesh size
  g.linkId = 0;
  scene.skin.glueBindings.push_back(g);
  EXPECT_THROW(finalizeScene(scene), ReferenceError);
}

TEST(Scene, RedundantGlueBindingRejected) {
  Scene scene = fixtures::coupledBody(true);
  GlueBinding g;
  g.vertexId = 1;
  g.linkId = 0;
  g.localCoord = scene.skin.glueBindings[0].localCoord;  // identical target
  scene.skin.glueBindings.push_back(g);
  EXPECT_THROW(finalizeScene(scene), ValidationError);
}

TEST(Scene, InvalidBodiesRejected) {
  Scene scene = fixtures::coupledBody(true);
  scene.skeleton.links[0].mass = 0.0;
  EXPECT_THROW(finalizeScene(scene), ValidationError);

  scene = fixtures::coupledBody(true);
  scene.skeleton.links[0].inertiaBody = -Mat3::Identity();
  EXPECT_THROW(finalizeScene(scene), ValidationError);

  scene = fixtures::coupledBody(true);
  scene.material.poissonRatio = 0.5;
  EXPECT_THROW(finalizeScene(scene), ValidationError);

  scene = fixtures::coupledBody(true);
  std::swap(scene.skin.tets[0][0], scene.skin.tets[0][1]);  // inverted rest tet
  EXPECT_THROW(finalizeScene(scene), ValidationError);
}

TEST(Scene, GeneralizedStateLengthInvariant) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand);
  GeneralizedState s = GeneralizedState::rest(scene.skeleton);
  EXPECT_EQ(s.q.size(), 6 + 3 * scene.skeleton.numJoints());
  EXPECT_EQ(s.qdot.size(), s.q.size());
}

TEST(Scene, RoundTripIsBitExact) {
  for (int which = 0; which < 2; ++which) {
    Scene scene = which == 0 ? fixtures::blockOnGround()
                             : fixtures::microQuad(fixtures::Gait::Walk);
    if (which == 0) scene.trajectory = emptyTrajectory(3, 1);
    const std::string name = which == 0 ? "block" : "microquad";
    const std::string sceneFile =
        fixtures::writeFixture(scene, tempDir().string(), name);
    Scene loaded = loadScene(sceneFile, (tempDir() / (name + ".traj")).string());

    ASSERT_EQ(loaded.skin.numVertices(), scene.skin.numVertices());
    for (int v = 0; v < scene.skin.numVertices(); ++v)
      EXPECT_EQ(loaded.skin.restVertices[v], scene.skin.restVertices[v]);
    ASSERT_EQ(loaded.skeleton.numJoints(), scene.skeleton.numJoints());
    for (int j = 0; j < scene.skeleton.numJoints(); ++j)
      EXPECT_EQ(loaded.skeleton.joints[j].originInParent,
                scene.skeleton.joints[j].originInParent);
    ASSERT_EQ(loaded.trajectory.frameCount, scene.trajectory.frameCount);
    for (int i = 0; i < scene.trajectory.frameCount; ++i)
      EXPECT_EQ(loaded.trajectory.comTrajectory[i], scene.trajectory.comTrajectory[i]);

    // writing the reloaded scene reproduces the files byte for byte
    fs::path second = tempDir() / "second";
    fs::create_directories(second);
    fixtures::writeFixture(loaded, second.string(), name);
    EXPECT_EQ(slurp(tempDir() / (name + ".scene")), slurp(second / (name + ".scene")));
    EXPECT_EQ(slurp(tempDir() / (name + ".mesh")), slurp(second / (name + ".mesh")));
    EXPECT_EQ(slurp(tempDir() / (name + ".traj")), slurp(second / (name + ".traj")));
  }
}

TEST(Scene, MissingFilesRaiseParseError) {
  EXPECT_THROW(loadScene("/nonexistent/scene", "/nonexistent/traj"), ParseError);
}

TEST(Scene, StiffnessScaleBeyondMeshRejected) {
  Scene scene = fixtures::coupledBody(true);
  scene.trajectory = emptyTrajectory(2, 0);
  const std::string sceneFile = fixtures::writeFixture(scene, tempDir().string(), "st");
  // append an out-of-range stiffness_scale line into [skin]
  std::string text = slurp(tempDir() / "st.scene");
  const auto pos = text.find("[glue]");
  text.insert(pos, "stiffness_scale 50 0.15\n\n");
  std::ofstream(tempDir() / "st.scene") << text;
  EXPECT_THROW(loadScene((tempDir() / "st.scene").string(),
                         (tempDir() / "st.traj").string()),
               ReferenceError);
}

TEST(Scene, UnknownSolverKeyRejected) {
  SolverConfig c;
  EXPECT_THROW(c.set("no_such_key", "1"), ParseError);
  c.set("mu", "0.9");
  EXPECT_DOUBLE_EQ(c.mu, 0.9);
  c.set("gravity", "0 -1 0");
  EXPECT_DOUBLE_EQ(c.gravity.y(), -1.0);
}

TEST(Footfall, AllOnesPatternHasNoWarnings) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand, 60);
  const auto warnings =
      validateFootfall(scene.trajectory, scene.skeleton, scene.config.flightBudget);
  EXPECT_TRUE(warnings.empty());
}

TEST(Footfall, ChatterDetected) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand, 20);
  for (int i = 0; i < 20; ++i) scene.trajectory.footfall[i][2] = i % 2;
  const auto warnings =
      validateFootfall(scene.trajectory, scene.skeleton, scene.config.flightBudget);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings[0].find("leg 2"), std::string::npos);
  EXPECT_NE(warnings[0].find("chatter"), std::string::npos);
}

TEST(Footfall, FlightBudgetExceeded) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand, 200);
  for (auto& frame : scene.trajectory.footfall)
    for (auto& c : frame) c = 0;
  const auto warnings = validateFootfall(scene.trajectory, scene.skeleton, 50);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("flight"), std::string::npos);
}

TEST(Footfall, PeriodicMismatchRejectedAtLoad) {
  Scene scene = fixtures::microQuad(fixtures::Gait::Stand, 10);
  scene.trajectory.periodic = true;
  scene.trajectory.footfall.back()[0] = 0;
  EXPECT_THROW(finalizeScene(scene), ValidationError);
}
