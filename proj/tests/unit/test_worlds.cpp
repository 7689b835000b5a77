#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "curio/errors.hpp"
#include "curio/render/renderer.hpp"
#include "curio/worlds/dataset.hpp"

using namespace curio;
using namespace curio::worlds;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("curio_worlds_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(WorldSpec, BuiltinsMatchTheSceneCodeTable) {
  const WorldSpec c = circles(), s = spheres(), v = varied();
  EXPECT_EQ(c.dof, 2u);
  EXPECT_EQ(c.min_objects, 1u);
  EXPECT_EQ(c.max_objects, 1u);
  EXPECT_EQ(s.dof, 6u);
  EXPECT_EQ(s.min_objects, 3u);
  EXPECT_EQ(s.max_objects, 3u);
  EXPECT_EQ(v.dof, 7u);
  EXPECT_EQ(v.min_objects, 2u);
  EXPECT_EQ(v.max_objects, 5u);
  for (const WorldSpec& w : {c, s, v}) {
    EXPECT_EQ(w.dof, w.computed_dof());
    EXPECT_NO_THROW(w.validate());
  }
}

TEST(WorldSpec, FieldRoundTrip) {
  for (const WorldSpec& w : {circles(32), spheres(64), varied(128)}) {
    EXPECT_EQ(from_fields(to_fields(w)), w);
  }
  auto f = to_fields(spheres());
  f["radius"] = "0.25";
  f["background"] = "0.1,0.2,0.3";
  const WorldSpec custom = from_fields(f);
  EXPECT_EQ(custom.radius, 0.25);
  EXPECT_EQ(custom.background[2], 0.3);
}

TEST(WorldSpec, RejectsBadFields) {
  EXPECT_THROW(by_name("chairs"), InvalidConfig);
  auto f = to_fields(circles());
  f["dof"] = "3";
  EXPECT_THROW(from_fields(f), InvalidConfig);
  f = to_fields(circles());
  f["nonsense"] = "1";
  EXPECT_THROW(from_fields(f), InvalidConfig);
  f = to_fields(circles());
  f["radius"] = "abc";
  EXPECT_THROW(from_fields(f), InvalidConfig);
}

TEST(Sampling, CirclesHaveOnePositionedObject) {
  std::mt19937_64 rng(1);
  const WorldSpec w = circles();
  for (int i = 0; i < 100; ++i) {
    const SceneCode s = sample_scene(w, rng);
    ASSERT_EQ(s.objects.size(), 1u);
    EXPECT_EQ(s.objects[0].center[2], 0.0);
    EXPECT_GE(s.objects[0].center[0], -2.0);
    EXPECT_LE(s.objects[0].center[0], 2.0);
  }
}

TEST(Sampling, VariedCountIsUniform) {
  std::mt19937_64 rng(2);
  const WorldSpec w = varied();
  std::array<double, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[sample_scene(w, rng).objects.size() - 2] += 1;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - draws / 4.0) * (c - draws / 4.0) / (draws / 4.0);
  // Critical value of chi-squared with 3 degrees of freedom at p = 0.01.
  EXPECT_LT(chi2, 11.345);
}

TEST(Sampling, AcceptedScenesDoNotIntersect) {
  std::mt19937_64 rng(3);
  for (const WorldSpec& w : {spheres(), varied()}) {
    for (int t = 0; t < 300; ++t) {
      const SceneCode s = sample_scene(w, rng);
      for (std::size_t i = 0; i < s.objects.size(); ++i) {
        for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
          double d2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double d = s.objects[i].center[a] - s.objects[j].center[a];
            d2 += d * d;
          }
          EXPECT_GT(std::sqrt(d2), 2.0 * w.radius);
        }
      }
    }
  }
}

TEST(Sampling, OverDenseSpecIsExhausted) {
  WorldSpec w = spheres();
  w.position = {{{-0.1, 0.1}, {-0.1, 0.1}, {0.0, 0.0}}};
  std::mt19937_64 rng(4);
  EXPECT_THROW(sample_scene(w, rng), RejectionExhausted);
}

TEST(Sampling, LightStaysOnTheBand) {
  WorldSpec w = varied();
  w.groups.insert(Group::light);
  w.dof = w.computed_dof();
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const SceneCode s = sample_scene(w, rng);
    EXPECT_GE(s.light.elevation, w.elevation.lo - 1e-12);
    EXPECT_LE(s.light.elevation, w.elevation.hi + 1e-12);
  }
}

TEST(Dataset, SplitProportions) {
  EXPECT_EQ(make_split(2000), (Split{1000, 500, 500}));
  EXPECT_EQ(make_split(200), (Split{100, 50, 50}));
  EXPECT_EQ(make_split(3), (Split{1, 1, 1}));
  EXPECT_THROW(make_split(2), InvalidConfig);
}

TEST(Dataset, DeterministicAcrossWorkerCounts) {
  const WorldSpec w = varied(32);
  const Dataset a = generate_dataset(w, 12, 77, 1);
  const Dataset b = generate_dataset(w, 12, 77, 3);
  EXPECT_EQ(a.labels(), b.labels());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.images[i].data, b.images[i].data);
  const Dataset c = generate_dataset(w, 12, 78, 1);
  EXPECT_NE(a.labels(), c.labels());
}

TEST(Dataset, ImagesReproduceFromLabels) {
  const WorldSpec w = spheres(32);
  const Dataset d = generate_dataset(w, 8, 5);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(render::render_scene(d.label(i), w, w.camera).data, d.images[i].data);
  }
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = scratch("roundtrip");
  const Dataset d = generate_dataset(varied(32), 10, 9);
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.world, d.world);
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(back.seed, d.seed);
  EXPECT_EQ(back.labels(), d.labels());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.images[i].data, d.images[i].data);
  EXPECT_TRUE(fs::exists(dir / "preview" / "0009.png"));
  fs::remove_all(dir);
}

TEST(Dataset, TruncatedLabelsNameTheRecord) {
  const fs::path dir = scratch("truncated");
  save_dataset(generate_dataset(circles(32), 6, 1), dir, false);
  std::ifstream in(dir / "labels.jsonl");
  std::string l0, l1, l2;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  in.close();
  std::ofstream(dir / "labels.jsonl") << l0 << "\n" << l1 << "\n" << l2.substr(0, 10);
  try {
    load_dataset(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.record(), 2);
  }
  fs::remove_all(dir);
}

TEST(Dataset, HiddenLabelsRaiseCapabilityError) {
  const fs::path dir = scratch("hidden");
  save_dataset(generate_dataset(circles(32), 4, 1), dir, false);
  const Dataset d = load_dataset(dir, false);
  EXPECT_FALSE(d.labels_visible());
  EXPECT_THROW(d.labels(), CapabilityError);
  Dataset e = load_dataset(dir);
  EXPECT_NO_THROW(e.labels());
  e.hide_labels();
  EXPECT_THROW(e.label(0), CapabilityError);
  fs::remove_all(dir);
}

TEST(SceneJson, RoundTripAndErrors) {
  SceneCode s;
  s.objects.resize(2);
  s.objects[0].center = {0.1, 0.2, 0.30000000000000004};
  s.objects[1].rgb = {0.5, 0.25, 1.0 / 3.0};
  s.objects[1].confidence = 0.125;
  s.light = {1.0 / 7.0, 0.9};
  EXPECT_EQ(scene_from_json(scene_to_json(s)), s);
  EXPECT_THROW(scene_from_json("{\"centers\": [[1,2]"), InvalidConfig);
  EXPECT_THROW(scene_from_json("{\"centers\": [[1,2]], \"colors\": []}"), InvalidConfig);
  EXPECT_TRUE(scene_from_json("{\"centers\": []}").objects.empty());
}
